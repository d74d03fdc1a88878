//! Training objectives recorded on a [`Tape`].
//!
//! Teacher quantities always enter as plain numbers (tape constants), so no
//! gradient can reach a teacher. Student quantities are tape variables.

use crate::autodiff::{Tape, Var};
use crate::distributions::{
    project_target, softmax_slice, BoxDistribution, EdgeSupport, TargetProjection, KL_EPSILON,
};
use crate::error::{Error, Result};
use crate::geometry::{giou, AnchorPoint, BBox, EdgeOffsets};

/// Weights of the regression, DFL and LD terms of the box objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub regression: f64,
    pub dfl: f64,
    pub ld: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            regression: 2.0,
            dfl: 0.25,
            ld: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("regression", self.regression),
            ("dfl", self.dfl),
            ("ld", self.ld),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!(
                    "loss weight {name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Which distribution serves as the reference in the KL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlDirection {
    /// `KL(p_T || p_S)`.
    #[default]
    TeacherReference,
    /// `KL(p_S || p_T)`.
    StudentReference,
}

/// Activation rule of the teacher-bounded regression term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TbrGate {
    /// Active when `err_s > err_t + eps`: the student is worse than the
    /// teacher by more than the margin.
    #[default]
    StudentInferior,
    /// Active when `err_s + eps <= err_t`.
    StudentSuperior,
}

impl TbrGate {
    pub fn is_active(self, student_err: f64, teacher_err: f64, epsilon: f64) -> bool {
        match self {
            TbrGate::StudentInferior => student_err > teacher_err + epsilon,
            TbrGate::StudentSuperior => student_err + epsilon <= teacher_err,
        }
    }
}

/// Options shared by every KL-based distillation term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KlOptions {
    pub direction: KlDirection,
    /// Multiply the KL term by `tau^2`.
    pub tau_squared: bool,
}

/// Distillation hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub tau: f64,
    pub weights: LossWeights,
    pub kl: KlOptions,
    /// Margin of the teacher-bounded regression baseline.
    pub tbr_epsilon: f64,
    /// Weight of the teacher-bounded regression term; 0 disables it.
    pub tbr_lambda: f64,
    pub tbr_gate: TbrGate,
    /// Also distill the classification branch.
    pub class_kd: bool,
    pub kd_ce_weight: f64,
    pub kd_kl_weight: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            tau: 10.0,
            weights: LossWeights::default(),
            kl: KlOptions::default(),
            tbr_epsilon: 0.1,
            tbr_lambda: 0.0,
            tbr_gate: TbrGate::default(),
            class_kd: false,
            kd_ce_weight: 1.0,
            kd_kl_weight: 1.0,
        }
    }
}

impl DistillConfig {
    /// The same configuration with the LD term switched off.
    pub fn without_ld(&self) -> Self {
        let mut c = self.clone();
        c.weights.ld = 0.0;
        c
    }

    /// The same configuration with every teacher-dependent term switched
    /// off: plain supervised training.
    pub fn without_teacher(&self) -> Self {
        let mut c = self.without_ld();
        c.tbr_lambda = 0.0;
        c.class_kd = false;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!(
                "temperature must be > 0, got {}",
                self.tau
            )));
        }
        self.weights.validate()?;
        for (name, v) in [
            ("tbr_epsilon", self.tbr_epsilon),
            ("tbr_lambda", self.tbr_lambda),
            ("kd_ce_weight", self.kd_ce_weight),
            ("kd_kl_weight", self.kd_kl_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether a teacher is consulted at all.
    pub fn uses_teacher(&self) -> bool {
        self.weights.ld > 0.0 || self.tbr_lambda > 0.0 || self.class_kd
    }
}

/// Temperature KL between student logits on the tape and fixed teacher
/// logits. Log-probabilities are floored at `ln(KL_EPSILON)` on the
/// reference-free side, matching [`crate::distributions::kl_divergence`].
pub fn distill_kl(
    tape: &mut Tape,
    student: Var,
    teacher: &[f64],
    tau: f64,
    opts: KlOptions,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::domain(format!("temperature must be > 0, got {tau}")));
    }
    let n = tape.value(student).len();
    if teacher.len() != n {
        return Err(Error::domain(format!(
            "student has {n} logits but teacher has {}",
            teacher.len()
        )));
    }
    let p_t = softmax_slice(teacher, tau)?;
    let log_p_s = tape.log_softmax(student, tau);

    let kl = match opts.direction {
        KlDirection::TeacherReference => {
            let floor = tape.scalar_constant(KL_EPSILON.ln());
            let log_q = tape.max2(log_p_s, floor);
            let entropy_part: f64 = p_t.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum();
            let weights = tape.constant(p_t);
            let cross = tape.dot(weights, log_q);
            let neg = tape.neg(cross);
            tape.shift(neg, entropy_part)
        }
        KlDirection::StudentReference => {
            let log_t: Vec<f64> = p_t.iter().map(|p| p.max(KL_EPSILON).ln()).collect();
            let log_t = tape.constant(log_t);
            let p_s = tape.exp(log_p_s);
            let diff = tape.sub(log_p_s, log_t);
            tape.dot(p_s, diff)
        }
    };
    Ok(if opts.tau_squared {
        tape.scale(kl, tau * tau)
    } else {
        kl
    })
}

/// LD for one edge: temperature KL between student and teacher edge
/// distributions.
pub fn ld_edge_loss(
    tape: &mut Tape,
    student: Var,
    teacher: &[f64],
    tau: f64,
    opts: KlOptions,
) -> Result<Var> {
    distill_kl(tape, student, teacher, tau, opts)
}

/// LD for a whole box: the sum of the four edge terms.
pub fn ld_loss(
    tape: &mut Tape,
    student: &[Var; 4],
    student_support: &EdgeSupport,
    teacher: &BoxDistribution,
    tau: f64,
    opts: KlOptions,
) -> Result<Var> {
    if student_support != teacher.support() {
        return Err(Error::domain(
            "student and teacher use different edge supports",
        ));
    }
    let mut total: Option<Var> = None;
    for (s, t) in student.iter().zip(teacher.edges()) {
        if tape.value(*s).len() != student_support.len() {
            return Err(Error::domain(
                "student edge length does not match its support",
            ));
        }
        let term = ld_edge_loss(tape, *s, t.as_slice(), tau, opts)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    Ok(total.expect("four edges"))
}

/// Distribution focal loss: cross-entropy against the two bins that bracket
/// the (clamped) target, weighted by linear interpolation.
pub fn dfl_loss(
    tape: &mut Tape,
    logits: Var,
    target: f64,
    support: &EdgeSupport,
) -> Result<(Var, TargetProjection)> {
    if tape.value(logits).len() != support.len() {
        return Err(Error::domain("edge logits do not match the support"));
    }
    let proj = project_target(target, support)?;
    let log_p = tape.log_softmax(logits, 1.0);
    let left = tape.index(log_p, proj.index);
    let right = tape.index(log_p, proj.index + 1);
    let wl = tape.scale(left, proj.w_left);
    let wr = tape.scale(right, proj.w_right);
    let s = tape.add(wl, wr);
    Ok((tape.neg(s), proj))
}

/// Expected offset of one edge at temperature 1, on the tape.
pub fn expected_offset(tape: &mut Tape, logits: Var, support: &EdgeSupport) -> Var {
    let p = tape.softmax(logits, 1.0);
    let e = tape.constant(support.positions().to_vec());
    tape.dot(p, e)
}

/// Corners `[x1, y1, x2, y2]` of the box placed around `anchor` by offsets
/// `[t, b, l, r]`.
pub fn decode_corners(tape: &mut Tape, anchor: AnchorPoint, offsets: [Var; 4]) -> [Var; 4] {
    let [t, b, l, r] = offsets;
    let neg_l = tape.neg(l);
    let neg_t = tape.neg(t);
    [
        tape.shift(neg_l, anchor.x),
        tape.shift(neg_t, anchor.y),
        tape.shift(r, anchor.x),
        tape.shift(b, anchor.y),
    ]
}

/// `1 - GIoU(pred, gt)` with `pred` given as tape corners.
pub fn giou_regression_loss(tape: &mut Tape, pred: [Var; 4], gt: &BBox) -> Result<Var> {
    gt.validate()?;
    if gt.area() <= 0.0 {
        return Err(Error::domain("ground-truth box must have positive area"));
    }
    let [px1, py1, px2, py2] = pred;
    let g = |tape: &mut Tape, v: f64| tape.scalar_constant(v);
    let (gx1, gy1, gx2, gy2) = (
        g(tape, gt.x1),
        g(tape, gt.y1),
        g(tape, gt.x2),
        g(tape, gt.y2),
    );
    let zero = g(tape, 0.0);

    let ix1 = tape.max2(px1, gx1);
    let iy1 = tape.max2(py1, gy1);
    let ix2 = tape.min2(px2, gx2);
    let iy2 = tape.min2(py2, gy2);
    let iw = tape.sub(ix2, ix1);
    let iw = tape.max2(iw, zero);
    let ih = tape.sub(iy2, iy1);
    let ih = tape.max2(ih, zero);
    let inter = tape.mul(iw, ih);

    let pw = tape.sub(px2, px1);
    let ph = tape.sub(py2, py1);
    let pred_area = tape.mul(pw, ph);
    let sum_area = tape.shift(pred_area, gt.area());
    let union = tape.sub(sum_area, inter);

    let ex1 = tape.min2(px1, gx1);
    let ey1 = tape.min2(py1, gy1);
    let ex2 = tape.max2(px2, gx2);
    let ey2 = tape.max2(py2, gy2);
    let ew = tape.sub(ex2, ex1);
    let eh = tape.sub(ey2, ey1);
    let enclose = tape.mul(ew, eh);

    let iou = tape.div(inter, union);
    let gap = tape.sub(enclose, union);
    let penalty = tape.div(gap, enclose);
    let giou = tape.sub(iou, penalty);
    let neg = tape.neg(giou);
    Ok(tape.shift(neg, 1.0))
}

/// `1 - GIoU` on plain boxes.
pub fn giou_loss_value(pred: &BBox, gt: &BBox) -> Result<f64> {
    Ok(1.0 - giou(pred, gt)?)
}

/// Euclidean distance between the corner vectors of two boxes.
pub fn corner_distance(a: &BBox, b: &BBox) -> f64 {
    a.corners()
        .iter()
        .zip(b.corners())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Teacher-bounded regression: `lambda * (1 - GIoU(b_s, b_gt))` when the
/// gate is active, otherwise exactly 0.
pub fn tbr_loss(
    tape: &mut Tape,
    student: [Var; 4],
    teacher: &BBox,
    gt: &BBox,
    epsilon: f64,
    lambda: f64,
    gate: TbrGate,
) -> Result<Var> {
    if !(epsilon >= 0.0) {
        return Err(Error::domain(format!(
            "TBR margin must be >= 0, got {epsilon}"
        )));
    }
    let corners: Vec<f64> = student.iter().map(|v| tape.scalar(*v)).collect();
    let student_box = BBox::new(corners[0], corners[1], corners[2], corners[3])?;
    let student_err = corner_distance(&student_box, gt);
    let teacher_err = corner_distance(teacher, gt);
    if gate.is_active(student_err, teacher_err, epsilon) {
        let reg = giou_regression_loss(tape, student, gt)?;
        Ok(tape.scale(reg, lambda))
    } else {
        Ok(tape.scalar_constant(0.0))
    }
}

/// `-log softmax(z)[class]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, class: usize) -> Result<Var> {
    let n = tape.value(logits).len();
    if class >= n {
        return Err(Error::domain(format!(
            "class {class} out of range for {n} logits"
        )));
    }
    let log_p = tape.log_softmax(logits, 1.0);
    let picked = tape.index(log_p, class);
    Ok(tape.neg(picked))
}

/// Index of the hot entry of a one-hot label.
pub fn one_hot_index(label: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, v) in label.iter().enumerate() {
        if *v == 1.0 {
            if hot.is_some() {
                return Err(Error::domain("label has more than one hot entry"));
            }
            hot = Some(i);
        } else if *v != 0.0 {
            return Err(Error::domain(format!("label entry {i} is {v}, not 0 or 1")));
        }
    }
    hot.ok_or_else(|| Error::domain("label has no hot entry"))
}

/// Classification KD: `ce_weight * CE(softmax(z_S), g) + kl_weight *
/// KL(teacher, student)` at temperature `tau`.
#[allow(clippy::too_many_arguments)]
pub fn kd_class_loss(
    tape: &mut Tape,
    student: Var,
    teacher: &[f64],
    label: &[f64],
    tau: f64,
    ce_weight: f64,
    kl_weight: f64,
    opts: KlOptions,
) -> Result<Var> {
    let n = tape.value(student).len();
    if label.len() != n {
        return Err(Error::domain(format!(
            "label has {} entries, logits {n}",
            label.len()
        )));
    }
    let class = one_hot_index(label)?;
    let ce = cross_entropy(tape, student, class)?;
    let kl = distill_kl(tape, student, teacher, tau, opts)?;
    let a = tape.scale(ce, ce_weight);
    let b = tape.scale(kl, kl_weight);
    Ok(tape.add(a, b))
}

/// Regression target for one positive location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxTarget {
    pub anchor: AnchorPoint,
    pub gt: BBox,
}

/// The individual terms of the box objective.
#[derive(Debug, Clone, Copy)]
pub struct BoxLoss {
    pub total: Var,
    pub regression: Var,
    pub dfl: Var,
    pub ld: Option<Var>,
    /// Edges whose target lay outside the support.
    pub clamped_targets: usize,
}

/// `w_reg * (1 - GIoU) + w_dfl * sum_edges DFL + w_ld * LD` for one
/// positive location. The LD term is skipped entirely when its weight is 0.
pub fn total_loss(
    tape: &mut Tape,
    student: &[Var; 4],
    support: &EdgeSupport,
    target: &BoxTarget,
    teacher: Option<&BoxDistribution>,
    cfg: &DistillConfig,
) -> Result<BoxLoss> {
    let w = cfg.weights;
    if w.ld > 0.0 && teacher.is_none() {
        return Err(Error::config(
            "LD weight is positive but no teacher outputs were given",
        ));
    }

    let offsets = [
        expected_offset(tape, student[0], support),
        expected_offset(tape, student[1], support),
        expected_offset(tape, student[2], support),
        expected_offset(tape, student[3], support),
    ];
    let corners = decode_corners(tape, target.anchor, offsets);
    let regression = giou_regression_loss(tape, corners, &target.gt)?;

    let gt_offsets = EdgeOffsets::between(target.anchor, &target.gt).to_array();
    let mut clamped_targets = 0;
    let mut dfl: Option<Var> = None;
    for (z, y) in student.iter().zip(gt_offsets) {
        let (term, proj) = dfl_loss(tape, *z, y, support)?;
        clamped_targets += usize::from(proj.clamped);
        dfl = Some(match dfl {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let dfl = dfl.expect("four edges");

    let reg_w = tape.scale(regression, w.regression);
    let dfl_w = tape.scale(dfl, w.dfl);
    let mut total = tape.add(reg_w, dfl_w);

    let mut ld = None;
    if w.ld > 0.0 {
        let teacher = teacher.expect("checked above");
        let term = ld_loss(tape, student, support, teacher, cfg.tau, cfg.kl)?;
        let weighted = tape.scale(term, w.ld);
        total = tape.add(total, weighted);
        ld = Some(term);
    }

    Ok(BoxLoss {
        total,
        regression,
        dfl,
        ld,
        clamped_targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{kl_divergence, softmax_with_temperature, EdgeLogits};

    fn scalar_of(f: impl FnOnce(&mut Tape) -> Result<Var>) -> f64 {
        let mut t = Tape::new();
        let v = f(&mut t).unwrap();
        t.scalar(v)
    }

    #[test]
    fn weights_default_to_two_quarter_quarter() {
        let w = LossWeights::default();
        assert_eq!((w.regression, w.dfl, w.ld), (2.0, 0.25, 0.25));
        assert_eq!(DistillConfig::default().tau, 10.0);
    }

    #[test]
    fn config_validation_names_the_field() {
        let c = DistillConfig {
            tau: -1.0,
            ..DistillConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("temperature")));
        let mut c = DistillConfig::default();
        c.weights.ld = -0.5;
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("ld")));
    }

    #[test]
    fn ld_edge_loss_examples() {
        let z = [0.3, -0.2, 1.5];
        let v = scalar_of(|t| {
            let s = t.constant(z.to_vec());
            ld_edge_loss(t, s, &z, 10.0, KlOptions::default())
        });
        assert!(v.abs() < 1e-15);

        let v = scalar_of(|t| {
            let s = t.constant(vec![0.0, 10.0]);
            ld_edge_loss(t, s, &[10.0, 0.0], 10.0, KlOptions::default())
        });
        let p_t = softmax_with_temperature(&EdgeLogits::new(vec![1.0, 0.0]).unwrap(), 1.0).unwrap();
        let p_s = softmax_with_temperature(&EdgeLogits::new(vec![0.0, 1.0]).unwrap(), 1.0).unwrap();
        let want = kl_divergence(&p_t, &p_s).unwrap();
        assert!((v - want).abs() < 1e-14);

        let mut t = Tape::new();
        let s = t.constant(vec![0.0, 1.0]);
        assert!(ld_edge_loss(&mut t, s, &[0.0, 1.0], 0.0, KlOptions::default()).is_err());
        assert!(ld_edge_loss(&mut t, s, &[0.0], 1.0, KlOptions::default()).is_err());
    }

    #[test]
    fn kl_direction_switch() {
        let (zs, zt) = (vec![0.1, 0.9, -0.4], vec![1.2, -0.3, 0.2]);
        let student_ref = scalar_of(|t| {
            let s = t.constant(zs.clone());
            let opts = KlOptions {
                direction: KlDirection::StudentReference,
                tau_squared: false,
            };
            distill_kl(t, s, &zt, 2.0, opts)
        });
        let p_s = softmax_slice(&zs, 2.0).unwrap();
        let p_t = softmax_slice(&zt, 2.0).unwrap();
        let want = crate::distributions::kl_divergence_slice(&p_s, &p_t).unwrap();
        assert!((student_ref - want).abs() < 1e-14);

        let squared = scalar_of(|t| {
            let s = t.constant(zs.clone());
            let opts = KlOptions {
                direction: KlDirection::TeacherReference,
                tau_squared: true,
            };
            distill_kl(t, s, &zt, 2.0, opts)
        });
        let plain = crate::distributions::kl_divergence_slice(&p_t, &p_s).unwrap();
        assert!((squared - 4.0 * plain).abs() < 1e-13);
    }

    #[test]
    fn dfl_examples() {
        let s = EdgeSupport::default();
        // Near-Dirac at the on-grid target.
        let v = scalar_of(|t| {
            let mut z = vec![-50.0; 17];
            z[4] = 50.0;
            let z = t.constant(z);
            Ok(dfl_loss(t, z, 4.0, &s)?.0)
        });
        assert!(v < 1e-12);

        // Half-way target with equal mass on the two bracketing bins.
        let v = scalar_of(|t| {
            let mut z = vec![-1e4; 17];
            z[4] = 0.0;
            z[5] = 0.0;
            let z = t.constant(z);
            Ok(dfl_loss(t, z, 4.5, &s)?.0)
        });
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn giou_loss_examples() {
        let gt = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let corners = |t: &mut Tape, b: [f64; 4]| b.map(|c| t.scalar_constant(c));
        let v = scalar_of(|t| {
            let p = corners(t, [0.0, 0.0, 1.0, 1.0]);
            giou_regression_loss(t, p, &gt)
        });
        assert!(v.abs() < 1e-15);
        let v = scalar_of(|t| {
            let p = corners(t, [2.0, 0.0, 3.0, 1.0]);
            giou_regression_loss(t, p, &gt)
        });
        assert!((v - 4.0 / 3.0).abs() < 1e-15);
        let plain = giou_loss_value(&BBox::new(2.0, 0.0, 3.0, 1.0).unwrap(), &gt).unwrap();
        assert!((plain - 4.0 / 3.0).abs() < 1e-15);

        let degenerate = BBox::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let mut t = Tape::new();
        let p = corners(&mut t, [0.0, 0.0, 1.0, 1.0]);
        assert!(giou_regression_loss(&mut t, p, &degenerate).is_err());
    }

    #[test]
    fn tbr_examples() {
        let g = TbrGate::StudentInferior;
        assert!(g.is_active(0.5, 0.3, 0.1));
        assert!(!g.is_active(0.3, 0.5, 0.1));
        assert!(!g.is_active(0.35, 0.3, 0.1));
        assert!(TbrGate::StudentSuperior.is_active(0.3, 0.5, 0.1));

        let gt = BBox::new(0.0, 0.0, 4.0, 4.0).unwrap();
        let teacher = BBox::new(0.0, 0.0, 4.0, 4.3).unwrap();
        let run = |student: [f64; 4], eps: f64| {
            scalar_of(|t| {
                let s = student.map(|c| t.scalar_constant(c));
                tbr_loss(t, s, &teacher, &gt, eps, 2.0, TbrGate::StudentInferior)
            })
        };
        // Student error 0.5 vs teacher 0.3 with margin 0.1: active.
        let active = run([0.0, 0.0, 4.0, 4.5], 0.1);
        let want = 2.0 * giou_loss_value(&BBox::new(0.0, 0.0, 4.0, 4.5).unwrap(), &gt).unwrap();
        assert!((active - want).abs() < 1e-15);
        // Student error 0.35: within the margin.
        assert_eq!(run([0.0, 0.0, 4.0, 4.35], 0.1), 0.0);

        let mut t = Tape::new();
        let s = [0.0, 0.0, 4.0, 4.5].map(|c| t.scalar_constant(c));
        assert!(tbr_loss(&mut t, s, &teacher, &gt, -0.1, 1.0, g).is_err());
    }

    #[test]
    fn kd_class_examples() {
        // Both peaked at the label: CE only.
        let z = vec![8.0, -8.0, -8.0];
        let v = scalar_of(|t| {
            let s = t.constant(z.clone());
            kd_class_loss(
                t,
                s,
                &z,
                &[1.0, 0.0, 0.0],
                4.0,
                0.7,
                1.0,
                KlOptions::default(),
            )
        });
        let ce = -softmax_slice(&z, 1.0).unwrap()[0].ln();
        assert!((v - 0.7 * ce).abs() < 1e-12);

        // Uniform student, near-Dirac teacher, KL only.
        let v = scalar_of(|t| {
            let s = t.constant(vec![0.0, 0.0]);
            kd_class_loss(
                t,
                s,
                &[1e3, -1e3],
                &[0.0, 1.0],
                1.0,
                0.0,
                1.0,
                KlOptions::default(),
            )
        });
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

        let mut t = Tape::new();
        let s = t.constant(vec![0.0, 0.0]);
        for bad in [[1.0, 1.0], [0.0, 0.0], [0.5, 0.5]] {
            assert!(kd_class_loss(
                &mut t,
                s,
                &[0.0, 0.0],
                &bad,
                1.0,
                1.0,
                1.0,
                KlOptions::default()
            )
            .is_err());
        }
    }

    #[test]
    fn total_loss_requires_teacher_when_ld_is_on() {
        let s = EdgeSupport::default();
        let mut t = Tape::new();
        let edges = [0, 1, 2, 3].map(|_| t.constant(vec![0.0; 17]));
        let target = BoxTarget {
            anchor: AnchorPoint::new(10.0, 10.0).unwrap(),
            gt: BBox::new(5.0, 6.0, 14.0, 13.0).unwrap(),
        };
        let err = total_loss(&mut t, &edges, &s, &target, None, &DistillConfig::default());
        assert!(matches!(err, Err(Error::Config(_))));
        let plain = total_loss(
            &mut t,
            &edges,
            &s,
            &target,
            None,
            &DistillConfig::default().without_ld(),
        );
        assert!(plain.unwrap().ld.is_none());
    }
}
