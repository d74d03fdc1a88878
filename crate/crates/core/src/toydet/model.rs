//! A small multilayer perceptron with a localization head (`4 * n_bins`
//! edge logits) and a classification head (`n_classes` logits).

use rand_distr::{Distribution, Normal};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::autodiff::{Tape, Var};
use crate::distributions::{BoxDistribution, EdgeSupport};
use crate::error::{Error, Result};
use crate::seed;

/// Architecture of one detector. Models of a capacity ladder differ only in
/// `hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Widths of the hidden ReLU layers, input side first.
    pub hidden: Vec<usize>,
    pub n_bins: usize,
    pub e_min: f64,
    pub e_max: f64,
    pub n_classes: usize,
    /// Seed of the weight initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 15,
            hidden: vec![16],
            n_bins: 17,
            e_min: 0.0,
            e_max: 16.0,
            n_classes: 3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_hidden(&self, hidden: Vec<usize>) -> Self {
        ModelConfig {
            hidden,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ModelConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be >= 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be >= 1"));
        }
        if self.n_classes < 1 {
            return Err(Error::config("n_classes must be >= 1"));
        }
        self.support().map(|_| ())
    }

    pub fn support(&self) -> Result<EdgeSupport> {
        EdgeSupport::new(self.e_min, self.e_max, self.n_bins)
            .map_err(|e| Error::config(format!("edge support: {e}")))
    }

    pub fn output_dim(&self) -> usize {
        4 * self.n_bins + self.n_classes
    }

    /// Total hidden width, the ordering key of a capacity ladder.
    pub fn capacity(&self) -> usize {
        self.hidden.iter().sum()
    }

    /// `(rows, cols)` of every affine layer, input side first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim());
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    /// Whether two configs describe interchangeable parameter tensors.
    pub fn same_shape(&self, other: &ModelConfig) -> bool {
        self.layer_shapes() == other.layer_shapes()
    }
}

/// One affine layer, `y = W x + b` with `W` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Gradients with the same layout as [`ModelParams::layers`].
pub type LayerGrads = Vec<(Vec<f64>, Vec<f64>)>;

/// Weights of one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<Layer>,
}

/// Tape leaves of one [`ModelParams`], `(weight, bias)` per layer.
#[derive(Debug, Clone)]
pub struct TapeParams {
    leaves: Vec<(Var, Var)>,
}

impl TapeParams {
    pub fn leaves(&self) -> &[(Var, Var)] {
        &self.leaves
    }
}

/// Raw outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub boxes: BoxDistribution,
    pub class_logits: Vec<f64>,
}

impl ModelParams {
    /// All weights and biases zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| Layer::zeros(r, c))
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            layers,
        })
    }

    /// He-normal weights drawn from `config.seed`, zero biases.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = seed::rng_for(config.seed, seed::labels::MODEL_INIT, 0);
        for layer in &mut params.layers {
            let std = (2.0 / layer.cols as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut layer.weight {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn support(&self) -> Result<EdgeSupport> {
        self.config.support()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.config.input_dim {
            return Err(Error::domain(format!(
                "model expects {} features, got {}",
                self.config.input_dim,
                features.len()
            )));
        }
        Ok(())
    }

    /// Flat output `[loc logits (4 * n_bins) | class logits]` without a tape.
    pub fn forward_flat(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let last = self.layers.len() - 1;
        let mut h = features.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i < last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn forward(&self, features: &[f64]) -> Result<ModelOutput> {
        let flat = self.forward_flat(features)?;
        let loc = 4 * self.config.n_bins;
        Ok(ModelOutput {
            boxes: BoxDistribution::from_flat(self.support()?, &flat[..loc])?,
            class_logits: flat[loc..].to_vec(),
        })
    }

    /// Registers the weights as differentiable leaves.
    pub fn record(&self, tape: &mut Tape) -> TapeParams {
        let leaves = self
            .layers
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect();
        TapeParams { leaves }
    }

    /// Forward pass on a tape. Returns the four edge logit vectors and the
    /// class logits.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        leaves: &TapeParams,
        features: &[f64],
    ) -> Result<([Var; 4], Var)> {
        self.check_input(features)?;
        let last = self.layers.len() - 1;
        let mut h = tape.constant(features.to_vec());
        for (i, (layer, (w, b))) in self.layers.iter().zip(&leaves.leaves).enumerate() {
            h = tape.affine(*w, h, *b, layer.rows, layer.cols);
            if i < last {
                h = tape.relu(h);
            }
        }
        let n = self.config.n_bins;
        let edges = [0, 1, 2, 3].map(|k| tape.slice(h, k * n, n));
        let class = tape.slice(h, 4 * n, self.config.n_classes);
        Ok((edges, class))
    }

    /// Collects the adjoints of `leaves`, zeros for unreached layers.
    pub fn gradients(&self, grads: &crate::autodiff::Gradients, leaves: &TapeParams) -> LayerGrads {
        self.layers
            .iter()
            .zip(&leaves.leaves)
            .map(|(l, (w, b))| {
                (
                    grads.get_or_zeros(*w, l.weight.len()),
                    grads.get_or_zeros(*b, l.bias.len()),
                )
            })
            .collect()
    }

    /// `theta <- theta - lr * g`.
    pub fn sgd_step(&mut self, grads: &LayerGrads, lr: f64) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::domain("gradient layer count mismatch"));
        }
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads) {
            if gw.len() != layer.weight.len() || gb.len() != layer.bias.len() {
                return Err(Error::domain("gradient shape mismatch"));
            }
            for (w, g) in layer.weight.iter_mut().zip(gw) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// FNV-1a over the bit patterns of every weight and bias.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for l in &self.layers {
            for v in l.weight.iter().chain(&l.bias) {
                for byte in v.to_bits().to_le_bytes() {
                    h = (h ^ u64::from(byte)).wrapping_mul(0x0000_0100_0000_01B3);
                }
            }
        }
        h
    }

    /// Writes the flat text format: config keys, then one line per tensor,
    /// `layerK.weight rows cols v...` and `layerK.bias rows v...`.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        writeln!(out, "{PARAMS_HEADER}")?;
        let hidden: Vec<String> = c.hidden.iter().map(usize::to_string).collect();
        writeln!(out, "input_dim {}", c.input_dim)?;
        let hidden = if hidden.is_empty() {
            "-".to_string()
        } else {
            hidden.join(",")
        };
        writeln!(out, "hidden {hidden}")?;
        writeln!(out, "n_bins {}", c.n_bins)?;
        writeln!(out, "e_min {:?}", c.e_min)?;
        writeln!(out, "e_max {:?}", c.e_max)?;
        writeln!(out, "n_classes {}", c.n_classes)?;
        writeln!(out, "seed {}", c.seed)?;
        for (k, l) in self.layers.iter().enumerate() {
            writeln!(
                out,
                "layer{k}.weight {} {}{}",
                l.rows,
                l.cols,
                values(&l.weight)
            )?;
            writeln!(out, "layer{k}.bias {}{}", l.rows, values(&l.bias))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("write to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parses the format written by [`ModelParams::write_text`].
    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut config = ModelConfig {
            hidden: Vec::new(),
            ..ModelConfig::default()
        };
        let mut tensors: Vec<(usize, Vec<usize>, Vec<f64>, usize)> = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().expect("non-empty line");
            let rest: Vec<&str> = parts.collect();
            let one = || -> Result<&str> {
                match rest.as_slice() {
                    [v] => Ok(v),
                    _ => Err(Error::parse(
                        line_no,
                        format!("{key} takes exactly one value"),
                    )),
                }
            };
            let int = |s: &str| -> Result<usize> {
                s.parse()
                    .map_err(|e| Error::parse(line_no, format!("{key}: {e}")))
            };
            let real = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|e| Error::parse(line_no, format!("{key}: {e}")))
            };
            match key {
                "input_dim" => config.input_dim = int(one()?)?,
                "hidden" => {
                    let v = one()?;
                    config.hidden = if v == "-" {
                        Vec::new()
                    } else {
                        v.split(',').map(int).collect::<Result<_>>()?
                    };
                }
                "n_bins" => config.n_bins = int(one()?)?,
                "e_min" => config.e_min = real(one()?)?,
                "e_max" => config.e_max = real(one()?)?,
                "n_classes" => config.n_classes = int(one()?)?,
                "seed" => {
                    config.seed = one()?
                        .parse()
                        .map_err(|e| Error::parse(line_no, format!("seed: {e}")))?
                }
                _ => {
                    let (layer, kind) = parse_tensor_key(key)
                        .ok_or_else(|| Error::parse(line_no, format!("unknown key {key:?}")))?;
                    let dims = if kind == 0 { 2 } else { 1 };
                    if rest.len() < dims {
                        return Err(Error::parse(line_no, format!("{key} is missing its shape")));
                    }
                    let shape = rest[..dims]
                        .iter()
                        .map(|s| int(s))
                        .collect::<Result<Vec<_>>>()?;
                    let vals = rest[dims..]
                        .iter()
                        .map(|s| real(s))
                        .collect::<Result<Vec<_>>>()?;
                    if vals.len() != shape.iter().product::<usize>() {
                        return Err(Error::parse(
                            line_no,
                            format!("{key} has the wrong value count"),
                        ));
                    }
                    if vals.iter().any(|v| !v.is_finite()) {
                        return Err(Error::parse(
                            line_no,
                            format!("{key} has a non-finite value"),
                        ));
                    }
                    tensors.push((layer * 2 + kind, shape, vals, line_no));
                }
            }
        }
        let mut params = ModelParams::zeros(&config)?;
        let mut seen = vec![false; params.layers.len() * 2];
        for (slot, shape, vals, line_no) in tensors {
            let layer = params
                .layers
                .get_mut(slot / 2)
                .ok_or_else(|| Error::parse(line_no, "layer index beyond the configured depth"))?;
            let expected = if slot % 2 == 0 {
                vec![layer.rows, layer.cols]
            } else {
                vec![layer.rows]
            };
            if shape != expected {
                return Err(Error::parse(
                    line_no,
                    format!("shape {shape:?}, expected {expected:?}"),
                ));
            }
            if slot % 2 == 0 {
                layer.weight = vals;
            } else {
                layer.bias = vals;
            }
            seen[slot] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let kind = if missing % 2 == 0 { "weight" } else { "bias" };
            return Err(Error::parse(
                0,
                format!("layer{}.{kind} is missing", missing / 2),
            ));
        }
        Ok(params)
    }
}

const PARAMS_HEADER: &str = "# locdistill params v1";

fn values(v: &[f64]) -> String {
    let mut s = String::new();
    for x in v {
        write!(s, " {x:?}").expect("write to string");
    }
    s
}

/// `layerK.weight` -> `(K, 0)`, `layerK.bias` -> `(K, 1)`.
fn parse_tensor_key(key: &str) -> Option<(usize, usize)> {
    let rest = key.strip_prefix("layer")?;
    let (idx, kind) = rest.split_once('.')?;
    let kind = match kind {
        "weight" => 0,
        "bias" => 1,
        _ => return None,
    };
    Some((idx.parse().ok()?, kind))
}
