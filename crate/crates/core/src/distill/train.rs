//! Mini-batch SGD on the detector objective, optionally against a frozen
//! teacher.

use rand::seq::SliceRandom;

use crate::autodiff::{Tape, Var};
use crate::distributions::{decode_bbox, BoxDistribution};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::losses::{
    cross_entropy, decode_corners, expected_offset, kd_class_loss, tbr_loss, total_loss, BoxTarget,
    DistillConfig,
};
use crate::seed;
use crate::toydet::{ModelConfig, ModelParams, SceneSample};

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// The learning rate is multiplied by `decay_factor` at the start of
    /// every epoch listed in `decay_epochs` (0-based).
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
    pub batch_size: usize,
    /// Seed of the per-epoch shuffles.
    pub seed: u64,
    /// Start each distillation hop from the predecessor's weights when the
    /// shapes allow it.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.05,
            decay_factor: 0.1,
            decay_epochs: vec![24],
            batch_size: 32,
            seed: 0,
            warm_start: false,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted and freezes the weights.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if !(self.decay_factor > 0.0) || !self.decay_factor.is_finite() {
            return Err(Error::config("decay_factor must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|e| **e <= epoch).count();
        self.lr * self.decay_factor.powi(decays as i32)
    }
}

/// Weights after training plus the mean objective of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub epoch_losses: Vec<f64>,
}

/// Plain-number teacher outputs for one sample.
#[derive(Debug, Clone)]
pub struct TeacherOutput {
    pub boxes: BoxDistribution,
    pub class_logits: Vec<f64>,
    pub decoded: BBox,
}

/// Evaluates `teacher` once on every sample. Nothing here touches a tape, so
/// the teacher cannot receive updates.
pub fn teacher_outputs(teacher: &ModelParams, data: &[SceneSample]) -> Result<Vec<TeacherOutput>> {
    data.iter()
        .map(|s| {
            let out = teacher.forward(&s.features)?;
            let decoded = decode_bbox(&out.boxes, s.anchor)?;
            Ok(TeacherOutput {
                boxes: out.boxes,
                class_logits: out.class_logits,
                decoded,
            })
        })
        .collect()
}

/// Records the full per-sample objective: the box objective, the
/// classification term (cross-entropy, or KD when enabled) and the optional
/// teacher-bounded regression term.
fn sample_objective(
    tape: &mut Tape,
    params: &ModelParams,
    leaves: &crate::toydet::TapeParams,
    sample: &SceneSample,
    teacher: Option<&TeacherOutput>,
    dcfg: &DistillConfig,
) -> Result<Var> {
    let support = params.support()?;
    let (edges, class_logits) = params.forward_tape(tape, leaves, &sample.features)?;
    let target = BoxTarget {
        anchor: sample.anchor,
        gt: sample.gt_box,
    };
    let box_loss = total_loss(
        tape,
        &edges,
        &support,
        &target,
        teacher.map(|t| &t.boxes),
        dcfg,
    )?;
    let mut total = box_loss.total;

    let class_term = match teacher {
        Some(t) if dcfg.class_kd => {
            let mut label = vec![0.0; params.config.n_classes];
            label[sample.gt_class] = 1.0;
            kd_class_loss(
                tape,
                class_logits,
                &t.class_logits,
                &label,
                dcfg.tau,
                dcfg.kd_ce_weight,
                dcfg.kd_kl_weight,
                dcfg.kl,
            )?
        }
        _ => cross_entropy(tape, class_logits, sample.gt_class)?,
    };
    total = tape.add(total, class_term);

    if let (Some(t), true) = (teacher, dcfg.tbr_lambda > 0.0) {
        let offsets = edges.map(|e| expected_offset(tape, e, &support));
        let corners = decode_corners(tape, sample.anchor, offsets);
        let tbr = tbr_loss(
            tape,
            corners,
            &t.decoded,
            &sample.gt_box,
            dcfg.tbr_epsilon,
            dcfg.tbr_lambda,
            dcfg.tbr_gate,
        )?;
        total = tape.add(total, tbr);
    }
    Ok(total)
}

fn check_teacher(
    student: &ModelConfig,
    teacher: Option<&ModelParams>,
    dcfg: &DistillConfig,
) -> Result<()> {
    dcfg.validate()?;
    match teacher {
        Some(t) => {
            if t.support()? != student.support()? {
                return Err(Error::config(
                    "teacher and student use different edge supports",
                ));
            }
            if t.config.n_classes != student.n_classes || t.config.input_dim != student.input_dim {
                return Err(Error::config(
                    "teacher and student disagree on inputs or classes",
                ));
            }
            Ok(())
        }
        None if dcfg.uses_teacher() => Err(Error::config(
            "distillation terms are enabled but no teacher was given",
        )),
        None => Ok(()),
    }
}

/// Mean objective over `data` at fixed weights.
pub fn mean_objective(
    params: &ModelParams,
    data: &[SceneSample],
    teacher: Option<&ModelParams>,
    dcfg: &DistillConfig,
) -> Result<f64> {
    check_teacher(&params.config, teacher, dcfg)?;
    if data.is_empty() {
        return Err(Error::domain("objective over an empty dataset"));
    }
    let cached = teacher.map(|t| teacher_outputs(t, data)).transpose()?;
    let mut sum = 0.0;
    for (i, s) in data.iter().enumerate() {
        let mut tape = Tape::new();
        let leaves = params.record(&mut tape);
        let t = cached.as_ref().map(|c| &c[i]);
        let v = sample_objective(&mut tape, params, &leaves, s, t, dcfg)?;
        sum += tape.scalar(v);
    }
    Ok(sum / data.len() as f64)
}

/// Trains a freshly initialized model.
pub fn train_model(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &[SceneSample],
    teacher: Option<&ModelParams>,
    dcfg: &DistillConfig,
) -> Result<TrainedModel> {
    train_from(ModelParams::init(cfg)?, tcfg, data, teacher, dcfg)
}

/// Trains starting from `init`. The teacher, if any, is only read.
pub fn train_from(
    init: ModelParams,
    tcfg: &TrainConfig,
    data: &[SceneSample],
    teacher: Option<&ModelParams>,
    dcfg: &DistillConfig,
) -> Result<TrainedModel> {
    tcfg.validate()?;
    check_teacher(&init.config, teacher, dcfg)?;
    if data.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let cached = if dcfg.uses_teacher() {
        teacher.map(|t| teacher_outputs(t, data)).transpose()?
    } else {
        None
    };

    let mut params = init;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(tcfg.epochs);
    for epoch in 0..tcfg.epochs {
        let lr = tcfg.lr_at(epoch);
        let mut rng = seed::rng_for(tcfg.seed, seed::labels::SHUFFLE, epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let mut tape = Tape::new();
            let leaves = params.record(&mut tape);
            let mut acc: Option<Var> = None;
            for &i in batch {
                let t = cached.as_ref().map(|c| &c[i]);
                let v = sample_objective(&mut tape, &params, &leaves, &data[i], t, dcfg)?;
                acc = Some(match acc {
                    None => v,
                    Some(a) => tape.add(a, v),
                });
            }
            let sum = acc.expect("non-empty batch");
            let batch_sum = tape.scalar(sum);
            if !batch_sum.is_finite() {
                return Err(Error::numeric(
                    format!("epoch {epoch}"),
                    format!("training loss is {batch_sum}"),
                ));
            }
            epoch_sum += batch_sum;
            let root = tape.scale(sum, 1.0 / batch.len() as f64);
            let grads = tape
                .backward(root)
                .map_err(|e| Error::numeric(format!("epoch {epoch}"), e.to_string()))?;
            let grads = params.gradients(&grads, &leaves);
            params.sgd_step(&grads, lr)?;
        }
        if !params.is_finite() {
            return Err(Error::numeric(
                format!("epoch {epoch}"),
                "weights became non-finite",
            ));
        }
        epoch_losses.push(epoch_sum / data.len() as f64);
    }
    Ok(TrainedModel {
        params,
        epoch_losses,
    })
}

/// Trains `student_cfg` with the localization terms active against a frozen
/// `teacher`.
pub fn distill_student(
    teacher: &ModelParams,
    student_cfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &[SceneSample],
    dcfg: &DistillConfig,
) -> Result<TrainedModel> {
    train_model(student_cfg, tcfg, data, Some(teacher), dcfg)
}

/// Result of one self-distillation round.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfDistillation {
    pub teacher: TrainedModel,
    pub student: TrainedModel,
    /// Always 1: the model distills itself exactly once.
    pub rounds: usize,
}

/// Trains `cfg` normally, freezes it, then trains a fresh model of the same
/// config against it. One round only.
pub fn self_distill(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &[SceneSample],
    dcfg: &DistillConfig,
) -> Result<SelfDistillation> {
    let teacher = train_model(cfg, tcfg, data, None, &dcfg.without_teacher())?;
    let student = distill_student(&teacher.params, cfg, tcfg, data, dcfg)?;
    Ok(SelfDistillation {
        teacher,
        student,
        rounds: 1,
    })
}
