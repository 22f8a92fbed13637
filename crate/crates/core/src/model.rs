//! The EagerNet model: a stack of Leaky-ReLU hidden layers with one affine
//! output head per layer, plus confidence-gated early-exit inference and
//! the versioned `EAGR` model file.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelMode, Normalization};
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, argmax, leaky_relu, sigmoid, softmax, DenseLayer, Matrix};

/// Which value of a hidden layer its head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadTap {
    #[default]
    PostActivation,
    PreActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_width: usize,
    pub depth: usize,
    pub width: usize,
    pub mode: LabelMode,
    /// Number of classes; 2 for binary models.
    pub classes: usize,
    #[serde(default = "default_alpha")]
    pub leaky_alpha: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub head_tap: HeadTap,
}

fn default_alpha() -> f64 {
    nn::LEAKY_ALPHA
}

fn default_dropout() -> f64 {
    nn::DROPOUT_RATE
}

impl ModelConfig {
    pub fn new(input_width: usize, depth: usize, width: usize, mode: LabelMode, classes: usize) -> Self {
        Self {
            input_width,
            depth,
            width,
            mode,
            classes,
            leaky_alpha: nn::LEAKY_ALPHA,
            dropout: nn::DROPOUT_RATE,
            head_tap: HeadTap::PostActivation,
        }
    }

    /// 1 for binary (single sigmoid unit), C for multiclass (softmax).
    pub fn head_width(&self) -> usize {
        match self.mode {
            LabelMode::Binary => 1,
            LabelMode::Multiclass => self.classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.input_width == 0 {
            return Err(Error::Config(format!(
                "depth {}, width {} and input width {} must all be >= 1",
                self.depth, self.width, self.input_width
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.mode == LabelMode::Binary && self.classes != 2 {
            return Err(Error::Config("binary models have exactly 2 classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !self.leaky_alpha.is_finite() {
            return Err(Error::Config("leaky alpha must be finite".into()));
        }
        Ok(())
    }

    /// Smallest meaningful confidence: 0.5 for binary, 1/C for multiclass.
    pub fn confidence_floor(&self) -> f64 {
        match self.mode {
            LabelMode::Binary => 0.5,
            LabelMode::Multiclass => 1.0 / self.classes as f64,
        }
    }
}

/// Identifies a layer for seeding its initializer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSlot {
    Hidden(usize),
    Head(usize),
}

/// Each layer draws from its own ChaCha stream, so a network's layer `k`
/// initializes identically regardless of what other layers exist.
pub fn layer_rng(seed: u64, slot: LayerSlot) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match slot {
        LayerSlot::Hidden(k) => k as u64,
        LayerSlot::Head(k) => (1 << 32) | k as u64,
    });
    rng
}

/// A predicted class with its confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub class: usize,
    pub confidence: f64,
}

/// Sigmoid confidence `max(p, 1 - p)` of a single logit; class 1 iff `p > 0.5`.
pub fn confidence_binary(logit: f64) -> Decision {
    // sigmoid(|z|) == max(p, 1 - p) without the cancellation in 1 - p
    Decision {
        class: usize::from(logit > 0.0),
        confidence: sigmoid(logit.abs()),
    }
}

/// Max softmax probability; ties go to the lowest class index.
pub fn confidence_multiclass(logits: &[f64]) -> Decision {
    let p = softmax(logits);
    let class = argmax(logits);
    Decision {
        class,
        confidence: p[class],
    }
}

pub fn decide(mode: LabelMode, logits: &[f64]) -> Decision {
    match mode {
        LabelMode::Binary => confidence_binary(logits[0]),
        LabelMode::Multiclass => confidence_multiclass(logits),
    }
}

/// Result of one early-exit forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EagerPrediction {
    pub class: usize,
    pub confidence: f64,
    /// 1-based index of the answering head.
    pub exit_layer: usize,
    /// Raw head logits for heads `1..=exit_layer`.
    pub head_outputs: Vec<Vec<f64>>,
    /// Hidden-layer affine maps actually evaluated.
    pub hidden_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EagerNet {
    pub config: ModelConfig,
    pub hidden: Vec<DenseLayer>,
    pub heads: Vec<DenseLayer>,
    pub normalization: Normalization,
    pub class_names: Vec<String>,
}

impl EagerNet {
    /// He-uniform initialization, seeded per layer via [`layer_rng`].
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let hidden = (0..config.depth)
            .map(|k| {
                let fan_in = if k == 0 { config.input_width } else { config.width };
                DenseLayer::he_uniform(fan_in, config.width, &mut layer_rng(seed, LayerSlot::Hidden(k)))
            })
            .collect();
        let heads = (0..config.depth)
            .map(|k| {
                DenseLayer::he_uniform(
                    config.width,
                    config.head_width(),
                    &mut layer_rng(seed, LayerSlot::Head(k)),
                )
            })
            .collect();
        let class_names = match config.mode {
            LabelMode::Binary => vec!["benign".to_string(), "attack".to_string()],
            LabelMode::Multiclass => (0..config.classes).map(|c| format!("class{c}")).collect(),
        };
        Ok(Self {
            normalization: Normalization::identity(config.input_width),
            config,
            hidden,
            heads,
            class_names,
        })
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    pub fn param_count(&self) -> usize {
        self.hidden.iter().chain(&self.heads).map(DenseLayer::param_count).sum()
    }

    pub fn check_structure(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        if self.hidden.len() != c.depth || self.heads.len() != c.depth {
            return Err(shape_err("head count must equal hidden layer count"));
        }
        for (k, (h, o)) in self.hidden.iter().zip(&self.heads).enumerate() {
            let fan_in = if k == 0 { c.input_width } else { c.width };
            if h.in_dim() != fan_in || h.out_dim() != c.width {
                return Err(shape_err(format!("hidden layer {k} has the wrong shape")));
            }
            if o.in_dim() != c.width || o.out_dim() != c.head_width() {
                return Err(shape_err(format!("head {k} has the wrong shape")));
            }
        }
        if self.normalization.width() != c.input_width || self.normalization.stdev.len() != c.input_width {
            return Err(shape_err("normalization width differs from input width"));
        }
        if self.class_names.len() != c.classes {
            return Err(shape_err("class name count differs from class count"));
        }
        Ok(())
    }

    fn activate(&self, z: &mut [f64]) {
        let a = self.config.leaky_alpha;
        for v in z {
            *v = leaky_relu(*v, a);
        }
    }

    /// Evaluation-mode forward through every layer; returns all head logits.
    pub fn forward_full(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        if x.cols() != self.config.input_width {
            return Err(shape_err(format!(
                "input width {} does not match model input width {}",
                x.cols(),
                self.config.input_width
            )));
        }
        let mut outputs = Vec::with_capacity(self.depth());
        let mut current = x.clone();
        for (layer, head) in self.hidden.iter().zip(&self.heads) {
            let z = layer.forward(&current)?;
            let mut h = z.clone();
            self.activate(h.as_mut_slice());
            let tapped = match self.config.head_tap {
                HeadTap::PostActivation => &h,
                HeadTap::PreActivation => &z,
            };
            outputs.push(head.forward(tapped)?);
            current = h;
        }
        Ok(outputs)
    }

    /// Valid threshold range for this model.
    pub fn check_threshold(&self, threshold: f64) -> Result<()> {
        let lo = self.config.confidence_floor();
        if !(threshold >= lo && threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold {threshold} outside [{lo}, 1]"
            )));
        }
        Ok(())
    }

    /// Early-exit inference on one normalized sample: evaluate hidden layer
    /// `k` and head `k` in turn, stopping at the first head whose confidence
    /// reaches `threshold`. A threshold of 1.0 is the ceiling and always runs
    /// to the last layer; the last head answers regardless of confidence.
    pub fn forward_eager(&self, x: &[f64], threshold: f64) -> Result<EagerPrediction> {
        self.check_threshold(threshold)?;
        if x.len() != self.config.input_width {
            return Err(shape_err(format!(
                "sample width {} does not match model input width {}",
                x.len(),
                self.config.input_width
            )));
        }
        let depth = self.depth();
        let mut current = x.to_vec();
        let mut z = vec![0.0; self.config.width];
        let mut head_outputs = Vec::new();
        // Counted separately from `k` so the cost accounting is observable.
        let mut evaluations = 0;
        #[allow(clippy::explicit_counter_loop)]
        for (k, (layer, head)) in self.hidden.iter().zip(&self.heads).enumerate() {
            layer.forward_row(&current, &mut z);
            evaluations += 1;
            let pre = (self.config.head_tap == HeadTap::PreActivation).then(|| z.clone());
            self.activate(&mut z);
            let mut logits = vec![0.0; head.out_dim()];
            head.forward_row(pre.as_deref().unwrap_or(&z), &mut logits);
            let d = decide(self.config.mode, &logits);
            head_outputs.push(logits);
            let last = k + 1 == depth;
            if last || (threshold < 1.0 && d.confidence >= threshold) {
                return Ok(EagerPrediction {
                    class: d.class,
                    confidence: d.confidence,
                    exit_layer: k + 1,
                    head_outputs,
                    hidden_evaluations: evaluations,
                });
            }
            std::mem::swap(&mut current, &mut z);
            z.resize(self.config.width, 0.0);
        }
        unreachable!("depth >= 1 is validated at construction")
    }

    /// Class predicted by every head for every row, `[head][row]`.
    pub fn predict_all_heads(&self, x: &Matrix) -> Result<Vec<Vec<usize>>> {
        Ok(self
            .forward_full(x)?
            .iter()
            .map(|out| out.iter_rows().map(|r| decide(self.config.mode, r).class).collect())
            .collect())
    }

    /// Scale raw features with the stored normalization.
    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        let mut v = raw.to_vec();
        self.normalization.apply_row(&mut v);
        v
    }

    pub fn parameters(&self) -> impl Iterator<Item = &DenseLayer> {
        self.hidden.iter().chain(&self.heads)
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.hidden.iter_mut().chain(self.heads.iter_mut())
    }
}

pub const MAGIC: &[u8; 4] = b"EAGR";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    config: ModelConfig,
    class_names: Vec<String>,
    /// Number of f64 values in the blob.
    values: usize,
}

impl EagerNet {
    /// `EAGR` | version u16 LE | header length u32 LE | JSON header | f64 LE blob.
    ///
    /// The blob holds each hidden layer (weights row-major, then bias), then
    /// each head the same way, then normalization means and stdevs.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_structure()?;
        let mut blob: Vec<f64> = Vec::with_capacity(self.param_count() + 2 * self.config.input_width);
        for layer in self.parameters() {
            blob.extend_from_slice(layer.weights.as_slice());
            blob.extend_from_slice(&layer.bias);
        }
        blob.extend_from_slice(&self.normalization.mean);
        blob.extend_from_slice(&self.normalization.stdev);
        let header = serde_json::to_vec(&FileHeader {
            config: self.config.clone(),
            class_names: self.class_names.clone(),
            values: blob.len(),
        })?;
        let mut out = Vec::with_capacity(10 + header.len() + 8 * blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |offset: usize, reason: &str| Error::Corrupt {
            offset,
            reason: reason.to_string(),
        };
        if bytes.len() < 4 {
            return Err(corrupt(bytes.len(), "truncated before magic"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt(0, "bad magic, not an EAGR model file"));
        }
        if bytes.len() < 6 {
            return Err(corrupt(bytes.len(), "truncated before version"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        if bytes.len() < 10 {
            return Err(corrupt(bytes.len(), "truncated before header length"));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let header_end = 10usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt(bytes.len(), "truncated inside header"))?;
        let header: FileHeader = serde_json::from_slice(&bytes[10..header_end])
            .map_err(|e| corrupt(10 + e.column().saturating_sub(1), &format!("bad header: {e}")))?;
        header
            .config
            .validate()
            .map_err(|e| corrupt(10, &format!("bad header config: {e}")))?;

        let blob_bytes = &bytes[header_end..];
        let expected = header
            .values
            .checked_mul(8)
            .ok_or_else(|| corrupt(header_end, "parameter count overflows"))?;
        if blob_bytes.len() < expected {
            return Err(corrupt(
                header_end + blob_bytes.len() - blob_bytes.len() % 8,
                &format!("truncated parameter blob: {} of {} values", blob_bytes.len() / 8, header.values),
            ));
        }
        if blob_bytes.len() > expected {
            return Err(corrupt(header_end + expected, "trailing bytes after parameter blob"));
        }
        let mut values = blob_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));

        let c = &header.config;
        let mut take_layer = |fan_in: usize, fan_out: usize| -> Option<DenseLayer> {
            let w: Vec<f64> = values.by_ref().take(fan_in * fan_out).collect();
            let b: Vec<f64> = values.by_ref().take(fan_out).collect();
            (w.len() == fan_in * fan_out && b.len() == fan_out).then(|| DenseLayer {
                weights: Matrix::from_vec(fan_out, fan_in, w).expect("length checked"),
                bias: b,
            })
        };
        let layout_err = || corrupt(header_end, "parameter blob does not match declared layout");
        let mut hidden = Vec::with_capacity(c.depth);
        for k in 0..c.depth {
            let fan_in = if k == 0 { c.input_width } else { c.width };
            hidden.push(take_layer(fan_in, c.width).ok_or_else(layout_err)?);
        }
        let mut heads = Vec::with_capacity(c.depth);
        for _ in 0..c.depth {
            heads.push(take_layer(c.width, c.head_width()).ok_or_else(layout_err)?);
        }
        let mean: Vec<f64> = values.by_ref().take(c.input_width).collect();
        let stdev: Vec<f64> = values.by_ref().take(c.input_width).collect();
        if stdev.len() != c.input_width || values.next().is_some() {
            return Err(layout_err());
        }
        let model = EagerNet {
            config: header.config,
            hidden,
            heads,
            normalization: Normalization { mean, stdev },
            class_names: header.class_names,
        };
        model
            .check_structure()
            .map_err(|e| corrupt(10, &format!("inconsistent model: {e}")))?;
        Ok(model)
    }
}
