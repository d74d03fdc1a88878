//! Experiment pipelines behind the subcommands. Every function is a pure
//! function of its config: datasets, initializations and shuffles all derive
//! from `cfg.seed`.

use std::fmt::Write as _;

use locdistill::distill::{
    enumerate_ta_paths, run_ta_sequence, Experiment, RunRecord, StageRecord, TrainedModel,
};
use locdistill::seed::{derive_seed, labels};
use locdistill::toydet::{
    apply_nms, evaluate_metrics, generate_dataset, ground_truths, raw_detections, Metrics,
    ModelParams, SceneConfig, SceneSample,
};

use crate::config::{ExperimentConfig, Role};
use crate::error::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

pub struct Datasets {
    pub train: Vec<SceneSample>,
    pub eval: Vec<SceneSample>,
}

pub fn datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let d = &cfg.data;
    Ok(Datasets {
        train: generate_dataset(
            d.train_count,
            d.sigma,
            derive_seed(cfg.seed, labels::TRAIN_DATA, 0),
        )?,
        eval: generate_dataset(
            d.eval_count,
            d.sigma,
            derive_seed(cfg.seed, labels::EVAL_DATA, 0),
        )?,
    })
}

fn experiment<'a>(
    cfg: &ExperimentConfig,
    data: &'a Datasets,
    tcfg: &'a locdistill::distill::TrainConfig,
    dcfg: &'a locdistill::DistillConfig,
) -> Experiment<'a> {
    Experiment {
        train: &data.train,
        eval: &data.eval,
        tcfg,
        dcfg,
        nms_threshold: cfg.nms_threshold,
    }
}

/// Teacher, plain student and distilled student trained on one seed.
pub struct Comparison {
    pub teacher: (TrainedModel, StageRecord),
    pub baseline: (TrainedModel, StageRecord),
    pub distilled: (TrainedModel, StageRecord),
}

pub fn ld_comparison(cfg: &ExperimentConfig) -> Result<Comparison> {
    let data = datasets(cfg)?;
    let (tcfg, dcfg) = (cfg.train_config(), cfg.distill_config());
    let exp = experiment(cfg, &data, &tcfg, &dcfg);
    let student = cfg.model(Role::Student);
    let teacher = exp.train_plain(&cfg.model(Role::Teacher), "T")?;
    let baseline = exp.train_plain(&student, "S")?;
    let distilled = exp.distill(&teacher.0.params, &student, "T>S")?;
    Ok(Comparison {
        teacher,
        baseline,
        distilled,
    })
}

/// The student config trained plainly, then once more against itself.
pub struct SelfLdReport {
    pub plain: (TrainedModel, StageRecord),
    pub self_ld: (TrainedModel, StageRecord),
}

pub fn self_ld(cfg: &ExperimentConfig) -> Result<SelfLdReport> {
    let data = datasets(cfg)?;
    let (tcfg, dcfg) = (cfg.train_config(), cfg.distill_config());
    let exp = experiment(cfg, &data, &tcfg, &dcfg);
    let student = cfg.model(Role::Student);
    let plain = exp.train_plain(&student, "S")?;
    let self_ld = exp.distill(&plain.0.params, &student, "S>S")?;
    Ok(SelfLdReport { plain, self_ld })
}

/// One run per teacher-assistant path; the teacher is trained once and
/// shared by all paths.
pub fn ta_sweep(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let data = datasets(cfg)?;
    let (tcfg, dcfg) = (cfg.train_config(), cfg.distill_config());
    let exp = experiment(cfg, &data, &tcfg, &dcfg);
    let paths = enumerate_ta_paths(
        &cfg.model(Role::Teacher),
        &cfg.assistants(),
        &cfg.model(Role::Student),
    )?;
    let (head, head_record) = exp.train_plain(paths[0].teacher(), "T")?;
    paths
        .iter()
        .map(|p| Ok(run_ta_sequence(p, &exp, Some((&head, &head_record)))?.0))
        .collect()
}

pub const TA_SUMMARY_HEADER: &str = "path,stages,mean_iou,mean_ap,ap50,ap75";

pub fn ta_summary_csv(records: &[RunRecord]) -> String {
    let mut s = format!("{TA_SUMMARY_HEADER}\n");
    for r in records {
        let m = &r.final_stage().metrics;
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.path,
            r.stages.len(),
            m.mean_iou,
            m.mean_ap,
            m.ap(0.5),
            m.ap(0.75)
        );
    }
    s
}

/// Metric averages used in sweep tables.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricSummary {
    pub mean_iou: f64,
    pub mean_ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

impl MetricSummary {
    fn add(&mut self, m: &Metrics, weight: f64) {
        self.mean_iou += weight * m.mean_iou;
        self.mean_ap += weight * m.mean_ap;
        self.ap50 += weight * m.ap(0.5);
        self.ap75 += weight * m.ap(0.75);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TempSweepRow {
    pub tau: f64,
    pub ld: MetricSummary,
    pub baseline: MetricSummary,
}

/// For every root seed in `seed .. seed + sweep.seeds`: one teacher, one
/// plain student, and one distilled student per temperature. Rows hold
/// seed averages.
pub fn temp_sweep(cfg: &ExperimentConfig) -> Result<Vec<TempSweepRow>> {
    let temps = &cfg.sweep.temperatures;
    let mut rows: Vec<TempSweepRow> = temps
        .iter()
        .map(|&tau| TempSweepRow {
            tau,
            ld: MetricSummary::default(),
            baseline: MetricSummary::default(),
        })
        .collect();
    let w = 1.0 / cfg.sweep.seeds as f64;
    for k in 0..cfg.sweep.seeds {
        let run = cfg.with_seed(cfg.seed + k);
        let data = datasets(&run)?;
        let tcfg = run.train_config();
        let base_dcfg = run.distill_config();
        let exp = experiment(&run, &data, &tcfg, &base_dcfg);
        let student = run.model(Role::Student);
        let (teacher, _) = exp.train_plain(&run.model(Role::Teacher), "T")?;
        let (_, baseline) = exp.train_plain(&student, "S")?;
        for row in rows.iter_mut() {
            let mut dcfg = base_dcfg.clone();
            dcfg.tau = row.tau;
            let exp = experiment(&run, &data, &tcfg, &dcfg);
            let (_, distilled) = exp.distill(&teacher.params, &student, "T>S")?;
            row.ld.add(&distilled.metrics, w);
            row.baseline.add(&baseline.metrics, w);
        }
    }
    Ok(rows)
}

pub const TEMP_SWEEP_HEADER: &str =
    "tau,ld_mean_iou,ld_mean_ap,ld_ap50,ld_ap75,baseline_mean_iou,baseline_mean_ap,baseline_ap50,baseline_ap75";

pub fn temp_sweep_csv(rows: &[TempSweepRow]) -> String {
    let mut s = format!("{TEMP_SWEEP_HEADER}\n");
    for r in rows {
        let (a, b) = (&r.ld, &r.baseline);
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.tau, a.mean_iou, a.mean_ap, a.ap50, a.ap75, b.mean_iou, b.mean_ap, b.ap50, b.ap75
        );
    }
    s
}

/// Redundant-box behaviour of one model at one NMS threshold on scenes
/// observed from several nearby sampling points.
#[derive(Debug, Clone, PartialEq)]
pub struct NmsDemoRow {
    pub model: String,
    pub nms_threshold: f64,
    pub kept: usize,
    pub boxes_per_object: f64,
    pub metrics: Metrics,
}

pub fn nms_demo(cfg: &ExperimentConfig) -> Result<Vec<NmsDemoRow>> {
    let cmp = ld_comparison(cfg)?;
    let views = SceneConfig::default().generate_views(
        cfg.sweep.demo_objects,
        cfg.sweep.demo_views,
        cfg.data.sigma,
        derive_seed(cfg.seed, labels::DEMO_DATA, 0),
    )?;
    let gts = ground_truths(&views);
    let mut rows = Vec::new();
    for (name, params) in [
        ("baseline", &cmp.baseline.0.params),
        ("distilled", &cmp.distilled.0.params),
    ] {
        let raw = raw_detections(params, &views)?;
        for &thr in &cfg.sweep.demo_thresholds {
            let kept = apply_nms(&raw, thr)?;
            rows.push(NmsDemoRow {
                model: name.to_string(),
                nms_threshold: thr,
                kept: kept.len(),
                boxes_per_object: kept.len() as f64 / gts.len() as f64,
                metrics: evaluate_metrics(&kept, &gts)?,
            });
        }
    }
    Ok(rows)
}

pub const NMS_DEMO_HEADER: &str = "model,nms_thr,kept,boxes_per_object,mean_iou,mean_ap,ap50,ap75";

pub fn nms_demo_csv(rows: &[NmsDemoRow]) -> String {
    let mut s = format!("{NMS_DEMO_HEADER}\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.model,
            r.nms_threshold,
            r.kept,
            r.boxes_per_object,
            m.mean_iou,
            m.mean_ap,
            m.ap(0.5),
            m.ap(0.75)
        );
    }
    s
}

pub const METRICS_HEADER: &str =
    "model,mean_iou,mean_ap,ap50,ap55,ap60,ap65,ap70,ap75,ap80,ap85,ap90,ap95";

pub fn metrics_row(name: &str, m: &Metrics) -> String {
    let mut s = format!("{name},{:.6},{:.6}", m.mean_iou, m.mean_ap);
    for (_, ap) in &m.ap_at {
        let _ = write!(s, ",{ap:.6}");
    }
    s.push('\n');
    s
}

/// Evaluates stored parameters on the config's evaluation split.
pub fn evaluate_params(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Metrics> {
    let data = datasets(cfg)?;
    Ok(locdistill::toydet::evaluate_model(
        params,
        &data.eval,
        cfg.nms_threshold,
    )?)
}
