//! Immutable summaries of finished runs and their text/CSV exports.

use std::fmt::Write as _;

use super::train::TrainConfig;
use crate::losses::LossWeights;
use crate::toydet::Metrics;

/// Outcome of training one model.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    /// `T` for a head model, `X>Y` for a hop distilling `Y` from `X`.
    pub name: String,
    pub hidden: Vec<usize>,
    pub epoch_losses: Vec<f64>,
    pub metrics: Metrics,
}

/// One executed teacher-assistant path.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub path: String,
    pub tau: f64,
    pub weights: LossWeights,
    pub nms_threshold: f64,
    pub tcfg: TrainConfig,
    pub head: StageRecord,
    /// One entry per hop: `path length - 1`.
    pub stages: Vec<StageRecord>,
    pub wall_time_secs: f64,
}

/// Column header of [`csv_rows`].
pub const CSV_HEADER: &str = "stage,epoch,loss,mean_iou,mean_ap";

/// One row per epoch; the metric columns are filled on the final epoch of
/// the stage and left empty otherwise.
pub fn csv_rows(stage: &StageRecord) -> String {
    let mut s = String::new();
    let last = stage.epoch_losses.len().saturating_sub(1);
    for (e, loss) in stage.epoch_losses.iter().enumerate() {
        if e == last {
            writeln!(
                s,
                "{},{},{:.9},{:.9},{:.9}",
                stage.name, e, loss, stage.metrics.mean_iou, stage.metrics.mean_ap
            )
        } else {
            writeln!(s, "{},{},{:.9},,", stage.name, e, loss)
        }
        .expect("write to string");
    }
    s
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn write_stage(s: &mut String, role: &str, stage: &StageRecord) {
    let m = &stage.metrics;
    let _ = writeln!(s, "[{role}]");
    let _ = writeln!(s, "name = {}", stage.name);
    let _ = writeln!(s, "hidden = {}", join(&stage.hidden));
    let _ = writeln!(
        s,
        "final_loss = {:?}",
        stage.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    let _ = writeln!(s, "mean_iou = {:?}", m.mean_iou);
    let _ = writeln!(s, "mean_ap = {:?}", m.mean_ap);
    for (t, ap) in &m.ap_at {
        let _ = writeln!(s, "ap{:02} = {:?}", (t * 100.0).round() as u32, ap);
    }
}

impl RunRecord {
    /// The student at the end of the path.
    pub fn final_stage(&self) -> &StageRecord {
        self.stages.last().unwrap_or(&self.head)
    }

    /// Every stage, head first.
    pub fn all_stages(&self) -> impl Iterator<Item = &StageRecord> {
        std::iter::once(&self.head).chain(&self.stages)
    }

    /// Key-value text: run settings, then one section per stage.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "path = {}", self.path);
        let _ = writeln!(s, "tau = {:?}", self.tau);
        let _ = writeln!(s, "lambda_regression = {:?}", self.weights.regression);
        let _ = writeln!(s, "lambda_dfl = {:?}", self.weights.dfl);
        let _ = writeln!(s, "lambda_ld = {:?}", self.weights.ld);
        let _ = writeln!(s, "nms_threshold = {:?}", self.nms_threshold);
        let _ = writeln!(s, "epochs = {}", self.tcfg.epochs);
        let _ = writeln!(s, "lr = {:?}", self.tcfg.lr);
        let _ = writeln!(s, "batch_size = {}", self.tcfg.batch_size);
        let _ = writeln!(s, "stages = {}", self.stages.len());
        let _ = writeln!(s, "wall_time_secs = {:.3}", self.wall_time_secs);
        write_stage(&mut s, "head", &self.head);
        for (i, st) in self.stages.iter().enumerate() {
            write_stage(&mut s, &format!("stage{}", i + 1), st);
        }
        s
    }

    /// CSV with [`CSV_HEADER`], all stages in order.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for st in self.all_stages() {
            s.push_str(&csv_rows(st));
        }
        s
    }
}
