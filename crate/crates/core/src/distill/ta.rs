//! Teacher-assistant paths and sequential multi-hop distillation.

use std::time::Instant;

use super::record::{RunRecord, StageRecord};
use super::train::{train_from, train_model, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::losses::DistillConfig;
use crate::toydet::{evaluate_model, ModelConfig, ModelParams, SceneSample};

/// A distillation chain `T -> A_i1 -> ... -> A_ik -> S` with strictly
/// decreasing capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct TAPath {
    /// `("T", cfg)`, then `("A<i>", cfg)` with 1-based assistant indices,
    /// then `("S", cfg)`.
    pub steps: Vec<(String, ModelConfig)>,
}

impl TAPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn teacher(&self) -> &ModelConfig {
        &self.steps[0].1
    }

    pub fn student(&self) -> &ModelConfig {
        &self.steps[self.steps.len() - 1].1
    }

    /// `T>A1>S` style label.
    pub fn label(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.0.as_str())
            .collect::<Vec<_>>()
            .join(">")
    }

    /// Hops are `len - 1`.
    pub fn stage_count(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.len() < 2 {
            return Err(Error::config("a path needs a teacher and a student"));
        }
        for w in self.steps.windows(2) {
            if w[1].1.capacity() >= w[0].1.capacity() {
                return Err(Error::config(format!(
                    "capacity must strictly decrease along the path: {} ({}) then {} ({})",
                    w[0].0,
                    w[0].1.capacity(),
                    w[1].0,
                    w[1].1.capacity()
                )));
            }
        }
        Ok(())
    }
}

/// All `2^m` paths through subsets of `assistants` (given in decreasing
/// capacity), ordered by subset size, then lexicographically by assistant
/// index.
pub fn enumerate_ta_paths(
    teacher: &ModelConfig,
    assistants: &[ModelConfig],
    student: &ModelConfig,
) -> Result<Vec<TAPath>> {
    let mut ladder = vec![teacher];
    ladder.extend(assistants);
    ladder.push(student);
    for w in ladder.windows(2) {
        if w[1].capacity() >= w[0].capacity() {
            return Err(Error::config(
                "teacher, assistants and student must be in strictly decreasing capacity order",
            ));
        }
    }
    let m = assistants.len();
    if m >= usize::BITS as usize - 1 {
        return Err(Error::config("too many assistants"));
    }
    let mut subsets: Vec<Vec<usize>> = (0..1usize << m)
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(subsets
        .into_iter()
        .map(|subset| {
            let mut steps = vec![("T".to_string(), teacher.clone())];
            steps.extend(
                subset
                    .iter()
                    .map(|&i| (format!("A{}", i + 1), assistants[i].clone())),
            );
            steps.push(("S".to_string(), student.clone()));
            TAPath { steps }
        })
        .collect())
}

/// Data and settings shared by every stage of an experiment.
#[derive(Debug, Clone, Copy)]
pub struct Experiment<'a> {
    pub train: &'a [SceneSample],
    pub eval: &'a [SceneSample],
    pub tcfg: &'a TrainConfig,
    pub dcfg: &'a DistillConfig,
    pub nms_threshold: f64,
}

impl Experiment<'_> {
    /// Trains `cfg` without a teacher and evaluates it.
    pub fn train_plain(
        &self,
        cfg: &ModelConfig,
        name: &str,
    ) -> Result<(TrainedModel, StageRecord)> {
        let model = train_model(
            cfg,
            self.tcfg,
            self.train,
            None,
            &self.dcfg.without_teacher(),
        )?;
        let record = self.stage_record(name, cfg, &model)?;
        Ok((model, record))
    }

    /// Distills `cfg` from `teacher` and evaluates it. With `warm_start`
    /// and matching shapes the student starts from the teacher's weights.
    pub fn distill(
        &self,
        teacher: &ModelParams,
        cfg: &ModelConfig,
        name: &str,
    ) -> Result<(TrainedModel, StageRecord)> {
        let init = if self.tcfg.warm_start && teacher.config.same_shape(cfg) {
            ModelParams {
                config: cfg.clone(),
                layers: teacher.layers.clone(),
            }
        } else {
            ModelParams::init(cfg)?
        };
        let model = train_from(init, self.tcfg, self.train, Some(teacher), self.dcfg)?;
        let record = self.stage_record(name, cfg, &model)?;
        Ok((model, record))
    }

    pub fn stage_record(
        &self,
        name: &str,
        cfg: &ModelConfig,
        model: &TrainedModel,
    ) -> Result<StageRecord> {
        Ok(StageRecord {
            name: name.to_string(),
            hidden: cfg.hidden.clone(),
            epoch_losses: model.epoch_losses.clone(),
            metrics: evaluate_model(&model.params, self.eval, self.nms_threshold)?,
        })
    }
}

/// Trains the head of `path` (or reuses `head`), then distills every
/// successor from its immediate predecessor, evaluating after each hop.
pub fn run_ta_sequence(
    path: &TAPath,
    exp: &Experiment<'_>,
    head: Option<(&TrainedModel, &StageRecord)>,
) -> Result<(RunRecord, TrainedModel)> {
    path.validate()?;
    exp.tcfg.validate()?;
    exp.dcfg.validate()?;
    let started = Instant::now();
    let (mut current, head_record) = match head {
        Some((m, r)) => {
            if m.params.config != *path.teacher() {
                return Err(Error::config(
                    "pretrained head does not match the path's teacher",
                ));
            }
            (m.clone(), r.clone())
        }
        None => exp.train_plain(path.teacher(), &path.steps[0].0)?,
    };
    let mut stages = Vec::with_capacity(path.stage_count());
    for w in path.steps.windows(2) {
        let name = format!("{}>{}", w[0].0, w[1].0);
        let (model, record) = exp.distill(&current.params, &w[1].1, &name)?;
        stages.push(record);
        current = model;
    }
    let record = RunRecord {
        path: path.label(),
        tau: exp.dcfg.tau,
        weights: exp.dcfg.weights,
        nms_threshold: exp.nms_threshold,
        tcfg: exp.tcfg.clone(),
        head: head_record,
        stages,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((record, current))
}
