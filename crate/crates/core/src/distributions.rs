//! Discrete general distributions over a box edge.
//!
//! The regression range `[e_min, e_max]` is split into `n` uniformly spaced
//! positions. A detector predicts `n` logits per edge; the softmax of those
//! logits is a free-form distribution whose expectation is the edge offset.

use crate::error::{Error, Result};
use crate::geometry::{decode_box, AnchorPoint, BBox, EdgeOffsets};

/// Floor applied to the reference-side probability inside `log` in
/// [`kl_divergence`].
pub const KL_EPSILON: f64 = 1e-12;

/// Tolerance on `sum(p) == 1` for [`EdgeDistribution`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Uniformly spaced edge positions `e_min = e_0 < ... < e_{n-1} = e_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSupport {
    e_min: f64,
    e_max: f64,
    positions: Vec<f64>,
}

impl EdgeSupport {
    /// Builds the support; endpoints are exact.
    pub fn new(e_min: f64, e_max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(format!(
                "support needs n >= 2 positions, got {n}"
            )));
        }
        if !e_min.is_finite() || !e_max.is_finite() || e_min >= e_max {
            return Err(Error::domain(format!(
                "support range must satisfy e_min < e_max, got [{e_min}, {e_max}]"
            )));
        }
        let step = (e_max - e_min) / (n - 1) as f64;
        let mut positions: Vec<f64> = (0..n).map(|i| e_min + i as f64 * step).collect();
        positions[n - 1] = e_max;
        Ok(EdgeSupport {
            e_min,
            e_max,
            positions,
        })
    }

    pub fn e_min(&self) -> f64 {
        self.e_min
    }

    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Spacing between neighbouring positions.
    pub fn step(&self) -> f64 {
        (self.e_max - self.e_min) / (self.len() - 1) as f64
    }

    /// Clamps `y` into the support range. The flag reports whether clamping
    /// changed the value.
    pub fn clamp(&self, y: f64) -> (f64, bool) {
        let c = y.clamp(self.e_min, self.e_max);
        (c, c != y)
    }
}

impl Default for EdgeSupport {
    /// `[0, 16]` with 17 positions (unit spacing).
    fn default() -> Self {
        EdgeSupport::new(0.0, 16.0, 17).expect("default support is valid")
    }
}

/// Shorthand for [`EdgeSupport::new`].
pub fn make_support(e_min: f64, e_max: f64, n: usize) -> Result<EdgeSupport> {
    EdgeSupport::new(e_min, e_max, n)
}

/// Raw, unconstrained scores for the positions of one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLogits(Vec<f64>);

impl EdgeLogits {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("logit {i} is not finite ({})", z[i])));
        }
        Ok(EdgeLogits(z))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A normalized probability vector over the positions of one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDistribution(Vec<f64>);

impl EdgeDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::domain("empty distribution"));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain(
                "probabilities must be finite and non-negative",
            ));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::domain(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(EdgeDistribution(p))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("empty distribution"));
        }
        Ok(EdgeDistribution(vec![1.0 / n as f64; n]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Logits for the four edges of one box, in `[t, b, l, r]` order, sharing
/// one support.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDistribution {
    support: EdgeSupport,
    edges: [EdgeLogits; 4],
}

impl BoxDistribution {
    pub fn new(support: EdgeSupport, edges: [EdgeLogits; 4]) -> Result<Self> {
        for (k, e) in edges.iter().enumerate() {
            if e.len() != support.len() {
                return Err(Error::domain(format!(
                    "edge {k} has {} logits but the support has {} positions",
                    e.len(),
                    support.len()
                )));
            }
        }
        Ok(BoxDistribution { support, edges })
    }

    /// Splits a flat `4 * n` logit vector into edges.
    pub fn from_flat(support: EdgeSupport, flat: &[f64]) -> Result<Self> {
        let n = support.len();
        if flat.len() != 4 * n {
            return Err(Error::domain(format!(
                "expected {} localization logits, got {}",
                4 * n,
                flat.len()
            )));
        }
        let edge = |k: usize| EdgeLogits::new(flat[k * n..(k + 1) * n].to_vec());
        let edges = [edge(0)?, edge(1)?, edge(2)?, edge(3)?];
        BoxDistribution::new(support, edges)
    }

    pub fn support(&self) -> &EdgeSupport {
        &self.support
    }

    pub fn edges(&self) -> &[EdgeLogits; 4] {
        &self.edges
    }

    /// The probability matrix `[p_t, p_b, p_l, p_r]` at temperature `tau`.
    pub fn probabilities(&self, tau: f64) -> Result<[EdgeDistribution; 4]> {
        let p = |k: usize| softmax_with_temperature(&self.edges[k], tau);
        Ok([p(0)?, p(1)?, p(2)?, p(3)?])
    }

    /// Expected `{t, b, l, r}` offsets at temperature 1.
    pub fn expected_offsets(&self) -> Result<EdgeOffsets> {
        let probs = self.probabilities(1.0)?;
        let mut out = [0.0; 4];
        for (o, p) in out.iter_mut().zip(probs.iter()) {
            *o = expect(&self.support, p)?;
        }
        Ok(EdgeOffsets::from_array(out))
    }
}

/// `softmax(z / tau)` over a raw slice, using max subtraction.
pub fn softmax_slice(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!("temperature must be > 0, got {tau}")));
    }
    if z.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::domain(format!("logit {i} is not finite ({})", z[i])));
    }
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = z.iter().map(|v| ((v - m) / tau).exp()).collect();
    let s: f64 = p.iter().sum();
    for v in &mut p {
        *v /= s;
    }
    Ok(p)
}

/// Temperature softmax. Large `tau` flattens toward uniform; small `tau`
/// sharpens toward the argmax.
pub fn softmax_with_temperature(z: &EdgeLogits, tau: f64) -> Result<EdgeDistribution> {
    softmax_slice(z.as_slice(), tau).map(EdgeDistribution)
}

/// Expected position `sum_i e_i p_i`, kept inside `[e_min, e_max]`.
pub fn expect(support: &EdgeSupport, p: &EdgeDistribution) -> Result<f64> {
    if support.len() != p.len() {
        return Err(Error::domain(format!(
            "support has {} positions but the distribution has {}",
            support.len(),
            p.len()
        )));
    }
    let v: f64 = support
        .positions()
        .iter()
        .zip(p.as_slice())
        .map(|(e, q)| e * q)
        .sum();
    Ok(v.clamp(support.e_min(), support.e_max()))
}

/// Decodes a box from per-edge logits around `anchor` (softmax at `tau = 1`,
/// expectation per edge, then `{t, b, l, r}` placement).
pub fn decode_bbox(bd: &BoxDistribution, anchor: AnchorPoint) -> Result<BBox> {
    decode_box(anchor, bd.expected_offsets()?)
}

/// `KL(p || q) = sum_i p_i ln(p_i / max(q_i, KL_EPSILON))`, with `0 ln 0 = 0`.
pub fn kl_divergence(p: &EdgeDistribution, q: &EdgeDistribution) -> Result<f64> {
    kl_divergence_slice(p.as_slice(), q.as_slice())
}

pub fn kl_divergence_slice(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::domain(format!(
            "KL between distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(KL_EPSILON).ln()))
        .sum();
    Ok(kl.max(0.0))
}

/// Two-bin linear interpolation of a target offset onto the support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetProjection {
    /// Left bin (0-based); the right bin is `index + 1`.
    pub index: usize,
    pub w_left: f64,
    pub w_right: f64,
    /// The target lay outside the support and was clamped.
    pub clamped: bool,
}

impl TargetProjection {
    /// The clamped target reconstructed from the two bracketing positions.
    pub fn reconstruct(&self, support: &EdgeSupport) -> f64 {
        let e = support.positions();
        self.w_left * e[self.index] + self.w_right * e[self.index + 1]
    }
}

/// Finds `i` with `e_i <= y <= e_{i+1}` and the interpolation weights
/// `w_left = (e_{i+1} - y) / step`, `w_right = (y - e_i) / step`.
pub fn project_target(y: f64, support: &EdgeSupport) -> Result<TargetProjection> {
    if y.is_nan() {
        return Err(Error::domain("target offset is NaN"));
    }
    let (y, clamped) = support.clamp(y);
    let e = support.positions();
    let last = support.len() - 2;
    let step = support.step();
    let mut i = (((y - support.e_min()) / step).floor().max(0.0) as usize).min(last);
    // Guard against floor() landing one bin low from rounding.
    while i < last && e[i + 1] <= y {
        i += 1;
    }
    while i > 0 && e[i] > y {
        i -= 1;
    }
    let w_right = ((y - e[i]) / (e[i + 1] - e[i])).clamp(0.0, 1.0);
    Ok(TargetProjection {
        index: i,
        w_left: 1.0 - w_right,
        w_right,
        clamped,
    })
}
