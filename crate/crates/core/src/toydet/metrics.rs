//! Detection inference and evaluation: mean best-match IoU and
//! COCO-style average precision over IoU thresholds 0.50:0.05:0.95.

use std::collections::BTreeMap;

use super::data::SceneSample;
use super::model::ModelParams;
use crate::distributions::{argmax, decode_bbox, softmax_slice};
use crate::error::{Error, Result};
use crate::geometry::{iou, nms, BBox};

/// The ten AP thresholds `0.50, 0.55, ..., 0.95`.
pub fn ap_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// A box attached to the scene it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub scene_id: usize,
    pub bbox: BBox,
}

/// Quality of a set of detections against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub mean_iou: f64,
    /// `(threshold, AP)` in increasing threshold order.
    pub ap_at: Vec<(f64, f64)>,
    pub mean_ap: f64,
}

impl Metrics {
    /// AP at the threshold closest to `t`.
    pub fn ap(&self, t: f64) -> f64 {
        self.ap_at
            .iter()
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
            .map_or(0.0, |p| p.1)
    }

    /// Mean AP over thresholds `>= 0.75`.
    pub fn strict_ap(&self) -> f64 {
        let strict: Vec<f64> = self
            .ap_at
            .iter()
            .filter(|(t, _)| *t >= 0.75 - 1e-9)
            .map(|p| p.1)
            .collect();
        strict.iter().sum::<f64>() / strict.len().max(1) as f64
    }
}

/// Ground truth of a sample set, one box per distinct scene.
pub fn ground_truths(samples: &[SceneSample]) -> Vec<Detection> {
    let mut seen = BTreeMap::new();
    for s in samples {
        seen.entry(s.scene_id).or_insert(Detection {
            scene_id: s.scene_id,
            bbox: s.gt_box,
        });
    }
    seen.into_values().collect()
}

/// One raw prediction per sample: expectation-decoded box, score = max class
/// probability, class = its argmax.
pub fn raw_detections(params: &ModelParams, samples: &[SceneSample]) -> Result<Vec<Detection>> {
    samples
        .iter()
        .map(|s| {
            let out = params.forward(&s.features)?;
            let probs = softmax_slice(&out.class_logits, 1.0)?;
            let class = argmax(&probs);
            let bbox =
                decode_bbox(&out.boxes, s.anchor)?.with_score(probs[class].min(1.0), class)?;
            Ok(Detection {
                scene_id: s.scene_id,
                bbox,
            })
        })
        .collect()
}

/// Raw detections followed by per-scene greedy NMS. Survivors are listed by
/// scene id, then by descending score.
pub fn predict_detections(
    params: &ModelParams,
    samples: &[SceneSample],
    nms_threshold: f64,
) -> Result<Vec<Detection>> {
    let raw = raw_detections(params, samples)?;
    apply_nms(&raw, nms_threshold)
}

/// Per-scene greedy NMS over already decoded detections.
pub fn apply_nms(detections: &[Detection], nms_threshold: f64) -> Result<Vec<Detection>> {
    let mut by_scene: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        by_scene.entry(d.scene_id).or_default().push(*d);
    }
    let mut kept = Vec::new();
    for group in by_scene.values() {
        let boxes: Vec<BBox> = group.iter().map(|d| d.bbox).collect();
        for i in nms(&boxes, nms_threshold)? {
            kept.push(group[i]);
        }
    }
    Ok(kept)
}

/// Mean IoU of the best-overlapping prediction (any class) for each ground
/// truth, plus AP per threshold averaged over the classes present in the
/// ground truth.
pub fn evaluate_metrics(predictions: &[Detection], ground_truths: &[Detection]) -> Result<Metrics> {
    if ground_truths.is_empty() {
        return Err(Error::domain(
            "cannot evaluate against an empty ground-truth set",
        ));
    }
    let mut by_scene: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in predictions.iter().enumerate() {
        by_scene.entry(p.scene_id).or_default().push(i);
    }

    let mut iou_sum = 0.0;
    for g in ground_truths {
        let mut best: f64 = 0.0;
        for &i in by_scene.get(&g.scene_id).map_or(&[][..], Vec::as_slice) {
            best = best.max(iou(&predictions[i].bbox, &g.bbox)?);
        }
        iou_sum += best;
    }
    let mean_iou = iou_sum / ground_truths.len() as f64;

    let mut classes: Vec<usize> = ground_truths.iter().map(|g| g.bbox.class_id).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut ap_at = Vec::with_capacity(10);
    for t in ap_thresholds() {
        let mut total = 0.0;
        for &c in &classes {
            total += class_ap(predictions, ground_truths, c, t)?;
        }
        ap_at.push((t, total / classes.len() as f64));
    }
    let mean_ap = ap_at.iter().map(|p| p.1).sum::<f64>() / ap_at.len() as f64;
    Ok(Metrics {
        mean_iou,
        ap_at,
        mean_ap,
    })
}

/// Detections scored against the ground truth of `samples`.
pub fn evaluate_model(
    params: &ModelParams,
    samples: &[SceneSample],
    nms_threshold: f64,
) -> Result<Metrics> {
    let preds = predict_detections(params, samples, nms_threshold)?;
    evaluate_metrics(&preds, &ground_truths(samples))
}

/// AP of one class at one IoU threshold: greedy matching in descending score
/// order (ties by input order), each prediction claiming the unmatched
/// ground truth of its scene with the highest IoU `>= t`, then 101-point
/// interpolated precision.
fn class_ap(predictions: &[Detection], gts: &[Detection], class: usize, t: f64) -> Result<f64> {
    let gt_idx: Vec<usize> = (0..gts.len())
        .filter(|&i| gts[i].bbox.class_id == class)
        .collect();
    let n_gt = gt_idx.len();
    let mut order: Vec<usize> = (0..predictions.len())
        .filter(|&i| predictions[i].bbox.class_id == class)
        .collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .bbox
            .score
            .total_cmp(&predictions[a].bbox.score)
            .then(a.cmp(&b))
    });

    let mut matched = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (k, &pi) in order.iter().enumerate() {
        let p = &predictions[pi];
        let mut best: Option<(usize, f64)> = None;
        for &gi in &gt_idx {
            if matched[gi] || gts[gi].scene_id != p.scene_id {
                continue;
            }
            let o = iou(&p.bbox, &gts[gi].bbox)?;
            if o >= t && best.is_none_or(|(_, b)| o > b) {
                best = Some((gi, o));
            }
        }
        if let Some((gi, _)) = best {
            matched[gi] = true;
            tp += 1;
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    Ok(interpolated_ap(&curve))
}

/// 101-point interpolated AP from `(recall, precision)` pairs in rank order.
pub fn interpolated_ap(curve: &[(f64, f64)]) -> f64 {
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        if let Some(pos) = curve.iter().position(|p| p.0 >= r - 1e-12) {
            total += envelope[pos];
        }
    }
    total / 101.0
}
