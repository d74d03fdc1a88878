//! Synthetic single-object scenes with controllable edge ambiguity.
//!
//! Each scene holds one object observed from one sampling point (anchor).
//! The feature vector carries noisy copies of the four `{t, b, l, r}`
//! offsets, a noisy one-hot class code, and pure-noise distractor channels.
//! Every class has designated ambiguous edges whose offset channel receives
//! noise of scale `sigma`; the remaining edges receive `sigma / 10`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geometry::{decode_box, AnchorPoint, BBox, EdgeOffsets};
use crate::seed;

/// Offset channels hold `(offset - OFFSET_CENTER) / OFFSET_SCALE`.
pub const OFFSET_CENTER: f64 = 8.0;
pub const OFFSET_SCALE: f64 = 4.0;

/// Ambiguous edges (`[t, b, l, r]`) per class, cycling for classes beyond
/// the table.
const AMBIGUOUS_EDGES: [[bool; 4]; 3] = [
    [false, true, false, false],
    [false, false, false, true],
    [true, false, true, false],
];

/// One positive location: features, sampling point and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// Samples sharing a scene id are views of the same image and take part
    /// in the same NMS round.
    pub scene_id: usize,
    pub features: Vec<f64>,
    pub anchor: AnchorPoint,
    pub gt_box: BBox,
    pub gt_class: usize,
    /// Noise scale applied to each edge channel, `[t, b, l, r]`.
    pub ambiguity: [f64; 4],
}

impl SceneSample {
    pub fn gt_offsets(&self) -> EdgeOffsets {
        EdgeOffsets::between(self.anchor, &self.gt_box)
    }

    /// The offsets as read back from the (possibly noisy) feature channels.
    pub fn observed_offsets(&self) -> EdgeOffsets {
        let f = &self.features;
        EdgeOffsets::from_array([0, 1, 2, 3].map(|k| f[k] * OFFSET_SCALE + OFFSET_CENTER))
    }
}

/// Parameters of the scene generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_classes: usize,
    pub distractors: usize,
    /// Anchors are drawn from `[margin, canvas - margin]` on both axes.
    pub canvas: f64,
    pub margin: f64,
    /// Ground-truth offsets are drawn uniformly from this range.
    pub offset_min: f64,
    pub offset_max: f64,
    /// Noise on the one-hot class channels.
    pub class_noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_classes: 3,
            distractors: 8,
            canvas: 64.0,
            margin: 16.0,
            offset_min: 1.0,
            offset_max: 15.0,
            class_noise: 0.35,
        }
    }
}

impl SceneConfig {
    pub fn feature_dim(&self) -> usize {
        4 + self.n_classes + self.distractors
    }

    pub fn ambiguous_edges(class: usize) -> [bool; 4] {
        AMBIGUOUS_EDGES[class % AMBIGUOUS_EDGES.len()]
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("scenes need at least 2 classes"));
        }
        if !(self.offset_min >= 0.0 && self.offset_min < self.offset_max) {
            return Err(Error::config("offset range must satisfy 0 <= min < max"));
        }
        if !(self.class_noise >= 0.0) || !(self.margin >= 0.0) || self.canvas <= 2.0 * self.margin {
            return Err(Error::config("invalid canvas, margin or class noise"));
        }
        Ok(())
    }

    /// `count` independent scenes with ambiguity `sigma`.
    pub fn generate(&self, count: usize, sigma: f64, seed: u64) -> Result<Vec<SceneSample>> {
        self.validate()?;
        check_count_sigma(count, sigma)?;
        let mut rng = seed::rng_for(seed, "scenes", 0);
        (0..count)
            .map(|id| {
                let class = rng.random_range(0..self.n_classes);
                let anchor = AnchorPoint::new(
                    rng.random_range(self.margin..=self.canvas - self.margin),
                    rng.random_range(self.margin..=self.canvas - self.margin),
                )?;
                let offsets = [0; 4].map(|_| rng.random_range(self.offset_min..=self.offset_max));
                self.observe(
                    &mut rng,
                    id,
                    anchor,
                    EdgeOffsets::from_array(offsets),
                    class,
                    sigma,
                )
            })
            .collect()
    }

    /// `objects` scenes, each observed from `views` jittered sampling points
    /// near the object centre. Views of one object share a scene id.
    pub fn generate_views(
        &self,
        objects: usize,
        views: usize,
        sigma: f64,
        seed: u64,
    ) -> Result<Vec<SceneSample>> {
        self.validate()?;
        check_count_sigma(objects * views, sigma)?;
        let mut rng = seed::rng_for(seed, "views", 0);
        let jitter = 2.0;
        let lo = self.offset_min + jitter;
        let hi = (self.offset_max - jitter)
            .max(lo + 1.0)
            .min(10.0_f64.max(lo + 1.0));
        let mut out = Vec::with_capacity(objects * views);
        for scene in 0..objects {
            let class = rng.random_range(0..self.n_classes);
            let centre = AnchorPoint::new(
                rng.random_range(self.margin..=self.canvas - self.margin),
                rng.random_range(self.margin..=self.canvas - self.margin),
            )?;
            let half = [0; 4].map(|_| rng.random_range(lo..=hi));
            let gt = decode_box(centre, EdgeOffsets::from_array(half))?;
            for _ in 0..views {
                let anchor = AnchorPoint::new(
                    centre.x + rng.random_range(-jitter..=jitter),
                    centre.y + rng.random_range(-jitter..=jitter),
                )?;
                let offsets = EdgeOffsets::between(anchor, &gt);
                out.push(self.observe(&mut rng, scene, anchor, offsets, class, sigma)?);
            }
        }
        Ok(out)
    }

    fn observe(
        &self,
        rng: &mut ChaCha8Rng,
        scene_id: usize,
        anchor: AnchorPoint,
        offsets: EdgeOffsets,
        class: usize,
        sigma: f64,
    ) -> Result<SceneSample> {
        let ambiguous = Self::ambiguous_edges(class);
        let ambiguity = ambiguous.map(|a| if a { sigma } else { sigma / 10.0 });
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

        let mut features = Vec::with_capacity(self.feature_dim());
        for (y, s) in offsets.to_array().iter().zip(ambiguity) {
            let noisy = y + s * std_normal.sample(rng);
            features.push((noisy - OFFSET_CENTER) / OFFSET_SCALE);
        }
        for c in 0..self.n_classes {
            let hot = if c == class { 1.0 } else { 0.0 };
            features.push(hot + self.class_noise * std_normal.sample(rng));
        }
        for _ in 0..self.distractors {
            features.push(std_normal.sample(rng));
        }
        let gt_box = decode_box(anchor, offsets)?.with_score(1.0, class)?;
        Ok(SceneSample {
            scene_id,
            features,
            anchor,
            gt_box,
            gt_class: class,
            ambiguity,
        })
    }
}

fn check_count_sigma(count: usize, sigma: f64) -> Result<()> {
    if count == 0 {
        return Err(Error::domain("dataset must contain at least one sample"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!(
            "ambiguity sigma must be >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// `count` scenes from the default generator.
pub fn generate_dataset(count: usize, sigma: f64, seed: u64) -> Result<Vec<SceneSample>> {
    SceneConfig::default().generate(count, sigma, seed)
}

const DATASET_HEADER: &str = "# locdistill scenes v1";

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v:?}").expect("write to string");
    }
    s
}

fn split_floats(field: &str, line: usize, what: &str) -> Result<Vec<f64>> {
    field
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(line, format!("bad {what} value {v:?}: {e}")))
        })
        .collect()
}

/// Writes one sample per line:
/// `scene_id \t features \t anchor_x,anchor_y \t x1,y1,x2,y2 \t class \t s_t,s_b,s_l,s_r`.
/// Numbers use the shortest representation that round-trips exactly.
pub fn write_dataset<W: Write>(mut out: W, samples: &[SceneSample]) -> Result<()> {
    writeln!(out, "{DATASET_HEADER}")?;
    writeln!(out, "# scene_id\tfeatures\tanchor\tgt_box\tclass\tsigma")?;
    for s in samples {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.scene_id,
            join(&s.features),
            join(&[s.anchor.x, s.anchor.y]),
            join(&s.gt_box.corners()),
            s.gt_class,
            join(&s.ambiguity),
        )?;
    }
    Ok(())
}

/// Reads the format produced by [`write_dataset`]. Lines starting with `#`
/// and blank lines are skipped.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<SceneSample>> {
    let mut samples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                line_no,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        }
        let scene_id = fields[0]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("bad scene id: {e}")))?;
        let features = split_floats(fields[1], line_no, "feature")?;
        let anchor = split_floats(fields[2], line_no, "anchor")?;
        let corners = split_floats(fields[3], line_no, "box")?;
        let gt_class: usize = fields[4]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("bad class: {e}")))?;
        let sigma = split_floats(fields[5], line_no, "sigma")?;
        if anchor.len() != 2 || corners.len() != 4 || sigma.len() != 4 {
            return Err(Error::parse(
                line_no,
                "anchor needs 2 values, box and sigma 4",
            ));
        }
        let wrap = |e: Error| Error::parse(line_no, e.to_string());
        let gt_box = BBox::new(corners[0], corners[1], corners[2], corners[3])
            .and_then(|b| b.with_score(1.0, gt_class))
            .map_err(wrap)?;
        samples.push(SceneSample {
            scene_id,
            features,
            anchor: AnchorPoint::new(anchor[0], anchor[1]).map_err(wrap)?,
            gt_box,
            gt_class,
            ambiguity: [sigma[0], sigma[1], sigma[2], sigma[3]],
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_dataset(50, 1.5, 3).unwrap();
        let b = generate_dataset(50, 1.5, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_dataset(50, 1.5, 4).unwrap());
    }

    #[test]
    fn zero_sigma_features_hold_exact_offsets() {
        for s in generate_dataset(200, 0.0, 11).unwrap() {
            let gt = s.gt_offsets().to_array();
            let seen = s.observed_offsets().to_array();
            for (g, o) in gt.iter().zip(seen) {
                assert!((g - o).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn count_and_class_histogram() {
        let data = generate_dataset(1000, 2.0, 5).unwrap();
        assert_eq!(data.len(), 1000);
        let hist = |d: &[SceneSample]| {
            let mut h = [0usize; 3];
            d.iter().for_each(|s| h[s.gt_class] += 1);
            h
        };
        let h = hist(&data);
        assert!(h.iter().all(|c| *c > 250), "{h:?}");
        assert_eq!(h, hist(&generate_dataset(1000, 2.0, 5).unwrap()));
    }

    #[test]
    fn ambiguous_edges_get_full_sigma() {
        for s in generate_dataset(30, 2.0, 1).unwrap() {
            let amb = SceneConfig::ambiguous_edges(s.gt_class);
            for (a, sigma) in amb.iter().zip(s.ambiguity) {
                assert_eq!(sigma, if *a { 2.0 } else { 0.2 });
            }
            assert_eq!(s.features.len(), SceneConfig::default().feature_dim());
        }
    }

    #[test]
    fn invalid_requests_are_rejected() {
        assert!(generate_dataset(0, 1.0, 0).is_err());
        assert!(generate_dataset(10, -1.0, 0).is_err());
    }

    #[test]
    fn views_share_scene_and_ground_truth() {
        let views = SceneConfig::default().generate_views(4, 5, 1.0, 9).unwrap();
        assert_eq!(views.len(), 20);
        for chunk in views.chunks(5) {
            assert!(chunk.iter().all(|v| v.scene_id == chunk[0].scene_id));
            assert!(chunk.iter().all(|v| v.gt_box == chunk[0].gt_box));
            for v in chunk {
                assert!(v
                    .gt_offsets()
                    .to_array()
                    .iter()
                    .all(|o| (0.0..=16.0).contains(o)));
            }
        }
    }

    #[test]
    fn text_format_round_trips_exactly() {
        let data = generate_dataset(25, 0.7, 2).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let text = "# header\n0\t1,2\t3,4\t0,0,1,1\t0\t1,1,1,1\n1\tx\t3,4\t0,0,1,1\t0\t1,1,1,1\n";
        match read_dataset(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
