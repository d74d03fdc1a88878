//! Self-checks shared by the test suites: seeded random loss instances for
//! gradient certification, and an exhaustive NMS oracle.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{finite_difference_check, GradCheckReport, Tape, Var};
use crate::distributions::{BoxDistribution, EdgeSupport};
use crate::error::Result;
use crate::geometry::{AnchorPoint, BBox};
use crate::losses::{
    dfl_loss, giou_regression_loss, kd_class_loss, ld_loss, total_loss, BoxTarget, DistillConfig,
    KlDirection, KlOptions,
};
use crate::seed::rng_for;

/// Losses covered by [`certify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Ld,
    Dfl,
    GiouRegression,
    ClassKd,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Ld,
        LossKind::Dfl,
        LossKind::GiouRegression,
        LossKind::ClassKd,
        LossKind::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ld => "ld",
            LossKind::Dfl => "dfl",
            LossKind::GiouRegression => "giou",
            LossKind::ClassKd => "kd",
            LossKind::Total => "total",
        }
    }
}

/// Worst gradient-check result over a batch of random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub kind: LossKind,
    pub instances: usize,
    pub worst_instance: usize,
    pub worst: GradCheckReport,
}

fn normals<R: Rng>(rng: &mut R, n: usize, sd: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sd).expect("positive sd");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn kl_options<R: Rng>(rng: &mut R) -> KlOptions {
    KlOptions {
        direction: if rng.random_bool(0.5) {
            KlDirection::TeacherReference
        } else {
            KlDirection::StudentReference
        },
        tau_squared: rng.random_bool(0.5),
    }
}

fn split4(tape: &mut Tape, x: Var, n: usize) -> [Var; 4] {
    [
        tape.slice(x, 0, n),
        tape.slice(x, n, n),
        tape.slice(x, 2 * n, n),
        tape.slice(x, 3 * n, n),
    ]
}

/// Box around `anchor` whose offsets lie strictly inside the support, away
/// from bin positions.
fn target_box<R: Rng>(rng: &mut R, anchor: AnchorPoint, support: &EdgeSupport) -> Result<BBox> {
    let (lo, hi) = (support.e_min() + 0.3, support.e_max() - 0.3);
    let mut off = || rng.random_range(lo..hi);
    let (t, b, l, r) = (off(), off(), off(), off());
    BBox::new(anchor.x - l, anchor.y - t, anchor.x + r, anchor.y + b)
}

fn check_one(kind: LossKind, seed: u64, index: u64, h: f64) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed, kind.name(), index);
    let support = EdgeSupport::new(0.0, 16.0, 17)?;
    let n = support.len();
    match kind {
        LossKind::Ld => {
            let x = normals(&mut rng, 4 * n, 2.0);
            let teacher =
                BoxDistribution::from_flat(support.clone(), &normals(&mut rng, 4 * n, 2.0))?;
            let tau = rng.random_range(1.0..20.0);
            let opts = kl_options(&mut rng);
            finite_difference_check(
                |tape, v| {
                    let s = split4(tape, v, n);
                    ld_loss(tape, &s, &support, &teacher, tau, opts)
                },
                &x,
                h,
            )
        }
        LossKind::Dfl => {
            let x = normals(&mut rng, n, 2.0);
            let y = rng.random_range(0.05..15.95);
            finite_difference_check(|tape, v| Ok(dfl_loss(tape, v, y, &support)?.0), &x, h)
        }
        LossKind::GiouRegression => {
            let anchor = AnchorPoint::new(32.0, 32.0)?;
            let gt = target_box(&mut rng, anchor, &support)?;
            let pred = target_box(&mut rng, anchor, &support)?;
            finite_difference_check(
                |tape, v| {
                    let c = [
                        tape.index(v, 0),
                        tape.index(v, 1),
                        tape.index(v, 2),
                        tape.index(v, 3),
                    ];
                    giou_regression_loss(tape, c, &gt)
                },
                &pred.corners(),
                h,
            )
        }
        LossKind::ClassKd => {
            let classes = rng.random_range(2..=10);
            let x = normals(&mut rng, classes, 2.0);
            let teacher = normals(&mut rng, classes, 2.0);
            let mut label = vec![0.0; classes];
            label[rng.random_range(0..classes)] = 1.0;
            let tau = rng.random_range(1.0..20.0);
            let (ce_w, kl_w) = (rng.random_range(0.0..2.0), rng.random_range(0.1..2.0));
            let opts = kl_options(&mut rng);
            finite_difference_check(
                |tape, v| kd_class_loss(tape, v, &teacher, &label, tau, ce_w, kl_w, opts),
                &x,
                h,
            )
        }
        LossKind::Total => {
            let x = normals(&mut rng, 4 * n, 2.0);
            let teacher =
                BoxDistribution::from_flat(support.clone(), &normals(&mut rng, 4 * n, 2.0))?;
            let anchor =
                AnchorPoint::new(rng.random_range(16.0..48.0), rng.random_range(16.0..48.0))?;
            let target = BoxTarget {
                anchor,
                gt: target_box(&mut rng, anchor, &support)?,
            };
            let cfg = DistillConfig {
                tau: rng.random_range(1.0..20.0),
                kl: kl_options(&mut rng),
                ..DistillConfig::default()
            };
            finite_difference_check(
                |tape, v| {
                    let s = split4(tape, v, n);
                    Ok(total_loss(tape, &s, &support, &target, Some(&teacher), &cfg)?.total)
                },
                &x,
                h,
            )
        }
    }
}

/// Gradient-checks `count` seeded random instances of `kind` with step `h`
/// and returns the worst one.
pub fn certify(kind: LossKind, count: usize, seed: u64, h: f64) -> Result<Certification> {
    let mut worst: Option<(usize, GradCheckReport)> = None;
    for i in 0..count {
        let r = check_one(kind, seed, i as u64, h)?;
        if worst
            .as_ref()
            .is_none_or(|(_, w)| r.max_rel_error > w.max_rel_error)
        {
            worst = Some((i, r));
        }
    }
    let (worst_instance, worst) =
        worst.ok_or_else(|| crate::Error::domain("certify needs at least one instance"))?;
    Ok(Certification {
        kind,
        instances: count,
        worst_instance,
        worst,
    })
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Kept set of greedy NMS found by exhaustive search.
///
/// A set `K` is the greedy result iff every box is in `K` exactly when no
/// higher-ranked member of `K` with the same class overlaps it by more than
/// the threshold. Every subset is tested against that characterisation; the
/// unique survivor is returned sorted by index. At most 16 boxes.
pub fn nms_oracle(boxes: &[BBox], threshold: f64) -> Vec<usize> {
    let n = boxes.len();
    assert!(n <= 16, "exhaustive oracle is limited to 16 boxes");
    let outranks = |j: usize, i: usize| {
        boxes[j].score > boxes[i].score || (boxes[j].score == boxes[i].score && j < i)
    };
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let consistent = (0..n).all(|i| {
            let blocked = (0..n).any(|j| {
                mask & (1 << j) != 0
                    && outranks(j, i)
                    && boxes[j].class_id == boxes[i].class_id
                    && overlap(&boxes[j], &boxes[i]) > threshold
            });
            (mask & (1 << i) != 0) == !blocked
        });
        if consistent {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "greedy kept set is unique");
    (0..n).filter(|i| found[0] & (1 << i) != 0).collect()
}

/// Seeded random boxes for NMS checks: up to `max_boxes` boxes in a small
/// canvas so overlaps are common, with two classes and repeated scores.
pub fn random_nms_case(seed: u64, index: u64, max_boxes: usize) -> Result<(Vec<BBox>, f64)> {
    let mut rng = rng_for(seed, "nms-case", index);
    let n = rng.random_range(0..=max_boxes);
    let mut boxes = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = rng.random_range(0.0..20.0);
        let y1 = rng.random_range(0.0..20.0);
        let w = rng.random_range(1.0..12.0);
        let h = rng.random_range(1.0..12.0);
        let score = f64::from(rng.random_range(0..6u8)) / 5.0;
        let class = rng.random_range(0..2);
        boxes.push(BBox::new(x1, y1, x1 + w, y1 + h)?.with_score(score, class)?);
    }
    let threshold = rng.random_range(0.0..1.0);
    Ok((boxes, threshold))
}
