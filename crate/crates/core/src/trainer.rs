//! Multi-head training: per-head BCE / categorical CE, the uniform,
//! increasing and decreasing loss-weight schedules, the combined backward
//! pass (full or one-step ablation), and the seeded minibatch loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassSet, LabelMode, Labels, Normalization, Subset};
use crate::error::{shape_err, Error, Result};
use crate::model::{decide, EagerNet, HeadTap, ModelConfig};
use crate::nn::{
    self, dropout_mask, hadamard, leaky_relu, leaky_relu_grad, log_softmax, sigmoid, softmax,
    AdamConfig, AdamState, DenseGrad, Matrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    #[default]
    Uniform,
    Increasing,
    Decreasing,
}

/// Non-negative per-head loss weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights(Vec<f64>);

/// Exact weights as `(numerator, denominator)` pairs, head 0 first.
pub fn loss_weight_fractions(depth: usize, scheme: WeightScheme) -> Result<Vec<(u64, u64)>> {
    if depth == 0 {
        return Err(Error::InvalidArgument("loss weights need at least one layer".into()));
    }
    let n = depth as u64;
    let triangle = n * (n + 1) / 2;
    Ok((0..n)
        .map(|i| match scheme {
            WeightScheme::Uniform => (1, n),
            WeightScheme::Increasing => (i + 1, triangle),
            WeightScheme::Decreasing => (n - i, triangle),
        })
        .collect())
}

pub fn loss_weights(depth: usize, scheme: WeightScheme) -> Result<LossWeights> {
    Ok(LossWeights(
        loss_weight_fractions(depth, scheme)?
            .into_iter()
            .map(|(a, b)| a as f64 / b as f64)
            .collect(),
    ))
}

impl LossWeights {
    /// Arbitrary weights, e.g. `[0, …, 0, 1]` to train only the last head.
    pub fn custom(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "loss weights must be a non-empty list of finite non-negative values".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("loss weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    /// All weight on the last of `depth` heads.
    pub fn last_only(depth: usize) -> Self {
        let mut w = vec![0.0; depth];
        w[depth - 1] = 1.0;
        Self(w)
    }

    /// Unit weight on head `k` only.
    pub fn single(depth: usize, k: usize) -> Self {
        let mut w = vec![0.0; depth];
        w[k] = 1.0;
        Self(w)
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

/// Mean binary cross-entropy over sigmoid logits and its gradient with
/// respect to the logits. Uses `max(x,0) - x*y + ln(1 + e^-|x|)`.
pub fn bce_loss(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != targets.len() {
        return Err(shape_err(format!(
            "{} logits for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Empty("bce over an empty batch".into()));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.iter().zip(targets) {
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        grad.push((sigmoid(x) - y) / n);
    }
    Ok((loss / n, grad))
}

/// Mean categorical cross-entropy over softmax logits (`batch × C`) against
/// one-hot targets, with its gradient.
pub fn cce_loss(logits: &Matrix, onehot: &Matrix) -> Result<(f64, Matrix)> {
    if logits.rows() != onehot.rows() || logits.cols() != onehot.cols() {
        return Err(shape_err(format!(
            "logits {}x{} vs targets {}x{}",
            logits.rows(),
            logits.cols(),
            onehot.rows(),
            onehot.cols()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::Empty("cce over an empty batch".into()));
    }
    let n = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let y = onehot.row(r);
        let hot = one_hot_index(y).ok_or_else(|| {
            Error::InvalidArgument(format!("target row {r} is not one-hot: {y:?}"))
        })?;
        let z = logits.row(r);
        loss -= log_softmax(z)[hot];
        for (g, (p, t)) in grad.row_mut(r).iter_mut().zip(softmax(z).iter().zip(y)) {
            *g = (p - t) / n;
        }
    }
    Ok((loss / n, grad))
}

fn one_hot_index(row: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (i, &v) in row.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}

/// Loss and logit gradient of one head's output batch.
pub fn head_loss(logits: &Matrix, targets: &Labels) -> Result<(f64, Matrix)> {
    match targets {
        Labels::Binary(y) => {
            if logits.cols() != 1 {
                return Err(shape_err("binary head must have width 1"));
            }
            let (loss, g) = bce_loss(logits.as_slice(), y)?;
            Ok((loss, Matrix::from_vec(g.len(), 1, g)?))
        }
        Labels::OneHot(y) => cce_loss(logits, y),
    }
}

/// Encoded targets for the given rows of a subset.
pub fn targets_for(subset: &Subset, rows: &[usize], mode: LabelMode, classes: usize) -> Labels {
    match mode {
        LabelMode::Binary => Labels::Binary(
            rows.iter()
                .map(|&i| if subset.attack[i] { 1.0 } else { 0.0 })
                .collect(),
        ),
        LabelMode::Multiclass => {
            let mut m = Matrix::zeros(rows.len(), classes);
            for (r, &i) in rows.iter().enumerate() {
                m.set(r, subset.family[i], 1.0);
            }
            Labels::OneHot(m)
        }
    }
}

/// Activations recorded during a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    /// Input to hidden layer `k` (the dropped-out output of layer `k-1`).
    pub inputs: Vec<Matrix>,
    pub pre: Vec<Matrix>,
    /// Inverted-dropout multipliers per hidden layer, `None` when dropout is off.
    pub masks: Vec<Option<Matrix>>,
    pub head_inputs: Vec<Matrix>,
    pub head_outputs: Vec<Matrix>,
}

/// Forward pass that keeps everything backprop needs. With `dropout_rng`
/// set, each hidden activation is dropped out (one mask per layer, drawn in
/// layer order) before feeding both the next layer and the head.
pub fn forward_with_tape<R: Rng + ?Sized>(
    model: &EagerNet,
    x: &Matrix,
    mut dropout_rng: Option<&mut R>,
) -> Result<ForwardTape> {
    let cfg = &model.config;
    if x.cols() != cfg.input_width {
        return Err(shape_err(format!(
            "input width {} does not match model input width {}",
            x.cols(),
            cfg.input_width
        )));
    }
    let depth = model.depth();
    let mut tape = ForwardTape {
        inputs: Vec::with_capacity(depth),
        pre: Vec::with_capacity(depth),
        masks: Vec::with_capacity(depth),
        head_inputs: Vec::with_capacity(depth),
        head_outputs: Vec::with_capacity(depth),
    };
    let mut current = x.clone();
    for (layer, head) in model.hidden.iter().zip(&model.heads) {
        let z = layer.forward(&current)?;
        let h = z.map(|v| leaky_relu(v, cfg.leaky_alpha));
        let mask = match dropout_rng.as_deref_mut() {
            Some(rng) if cfg.dropout > 0.0 => Some(dropout_mask(z.rows(), z.cols(), cfg.dropout, rng)),
            _ => None,
        };
        let apply = |m: &Matrix| match &mask {
            Some(mask) => hadamard(m, mask),
            None => m.clone(),
        };
        let out = apply(&h);
        let head_in = match cfg.head_tap {
            HeadTap::PostActivation => out.clone(),
            HeadTap::PreActivation => apply(&z),
        };
        tape.head_outputs.push(head.forward(&head_in)?);
        tape.head_inputs.push(head_in);
        tape.inputs.push(std::mem::replace(&mut current, out));
        tape.pre.push(z);
        tape.masks.push(mask);
    }
    Ok(tape)
}

/// Gradients for every hidden layer and head.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<DenseGrad>,
    pub heads: Vec<DenseGrad>,
}

impl Gradients {
    pub fn zeros(model: &EagerNet) -> Self {
        Self {
            hidden: model.hidden.iter().map(DenseGrad::zeros_like).collect(),
            heads: model.heads.iter().map(DenseGrad::zeros_like).collect(),
        }
    }

    /// Flattened in the same order as the model file blob.
    pub fn flatten(&self) -> Vec<f64> {
        self.hidden
            .iter()
            .chain(&self.heads)
            .flat_map(|g| g.weights.as_slice().iter().chain(&g.bias).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// How far intermediate head losses travel back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BackpropMode {
    /// Every head's loss reaches the input.
    #[default]
    Full,
    /// Intermediate heads update only themselves and the hidden layer they
    /// sit on; only the last head's loss reaches the input.
    OneStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardResult {
    /// `Σ w_k · loss_k`.
    pub total_loss: f64,
    pub head_losses: Vec<f64>,
    pub grads: Gradients,
}

fn mul_mask(g: &Matrix, mask: &Option<Matrix>) -> Matrix {
    match mask {
        Some(m) => hadamard(g, m),
        None => g.clone(),
    }
}

fn times_leaky_grad(g: &Matrix, z: &Matrix, alpha: f64) -> Matrix {
    let mut out = g.clone();
    for (o, &zv) in out.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *o *= leaky_relu_grad(zv, alpha);
    }
    out
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    for (o, v) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o += v;
    }
    out
}

/// Backward pass of the weighted multi-head loss. Heads with zero weight
/// contribute nothing and are skipped entirely.
pub fn combined_backward(
    model: &EagerNet,
    tape: &ForwardTape,
    targets: &Labels,
    weights: &LossWeights,
    mode: BackpropMode,
) -> Result<BackwardResult> {
    let depth = model.depth();
    if weights.len() != depth {
        return Err(shape_err(format!(
            "{} loss weights for {depth} heads",
            weights.len()
        )));
    }
    let alpha = model.config.leaky_alpha;
    let tap = model.config.head_tap;
    let mut grads = Gradients::zeros(model);
    let mut head_losses = Vec::with_capacity(depth);
    let mut head_logit_grads = Vec::with_capacity(depth);
    for out in &tape.head_outputs {
        let (l, g) = head_loss(out, targets)?;
        head_losses.push(l);
        head_logit_grads.push(g);
    }
    let total_loss = head_losses
        .iter()
        .zip(weights.as_slice())
        .map(|(l, w)| w * l)
        .sum();

    // gradient w.r.t. the (dropped-out) output of hidden layer k, arriving from layer k+1
    let mut from_above: Option<Matrix> = None;
    for k in (0..depth).rev() {
        let w = weights.as_slice()[k];
        let head_dx = if w != 0.0 {
            let g = head_logit_grads[k].map(|v| v * w);
            model.heads[k].backward_params(&tape.head_inputs[k], &g, &mut grads.heads[k]);
            Some(model.heads[k].backward_input(&g))
        } else {
            None
        };
        let local_is_trunk = mode == BackpropMode::Full || k + 1 == depth;

        // (trunk, local) gradients w.r.t. the pre-activation z_k
        let to_pre = |g_out: &Matrix| {
            times_leaky_grad(&mul_mask(g_out, &tape.masks[k]), &tape.pre[k], alpha)
        };
        let (trunk, local) = match tap {
            HeadTap::PostActivation => {
                if local_is_trunk {
                    let g = match (from_above.take(), head_dx) {
                        (Some(a), Some(h)) => Some(add(&a, &h)),
                        (a, h) => a.or(h),
                    };
                    (g.as_ref().map(to_pre), None)
                } else {
                    (from_above.take().as_ref().map(to_pre), head_dx.as_ref().map(to_pre))
                }
            }
            HeadTap::PreActivation => {
                let head_z = head_dx.map(|h| mul_mask(&h, &tape.masks[k]));
                let above = from_above.take().as_ref().map(to_pre);
                if local_is_trunk {
                    let g = match (above, head_z) {
                        (Some(a), Some(h)) => Some(add(&a, &h)),
                        (a, h) => a.or(h),
                    };
                    (g, None)
                } else {
                    (above, head_z)
                }
            }
        };

        let param_grad = match (&trunk, &local) {
            (Some(t), Some(l)) => Some(add(t, l)),
            (Some(t), None) => Some(t.clone()),
            (None, Some(l)) => Some(l.clone()),
            (None, None) => None,
        };
        if let Some(g) = &param_grad {
            model.hidden[k].backward_params(&tape.inputs[k], g, &mut grads.hidden[k]);
        }
        if k > 0 {
            from_above = trunk.map(|t| model.hidden[k].backward_input(&t));
        }
    }
    Ok(BackwardResult {
        total_loss,
        head_losses,
        grads,
    })
}

/// Evaluation-mode weighted loss (no dropout), for finite-difference checks
/// and validation monitoring.
pub fn combined_loss(model: &EagerNet, x: &Matrix, targets: &Labels, weights: &LossWeights) -> Result<f64> {
    let outs = model.forward_full(x)?;
    let mut total = 0.0;
    for (out, w) in outs.iter().zip(weights.as_slice()) {
        total += w * head_loss(out, targets)?.0;
    }
    Ok(total)
}

fn default_epochs() -> usize {
    800
}

fn default_batch() -> usize {
    128
}

fn default_lr() -> f64 {
    0.001
}

/// Training run configuration; mirrors the `train.toml` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: LabelMode,
    #[serde(default)]
    pub weight_scheme: WeightScheme,
    /// Overrides `weight_scheme` when set.
    #[serde(default)]
    pub custom_weights: Option<Vec<f64>>,
    pub depth: usize,
    pub width: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub backprop_mode: BackpropMode,
    /// Stop after this many epochs without a new best validation loss.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_alpha")]
    pub leaky_alpha: f64,
    #[serde(default)]
    pub head_tap: HeadTap,
}

fn default_dropout() -> f64 {
    nn::DROPOUT_RATE
}

fn default_alpha() -> f64 {
    nn::LEAKY_ALPHA
}

impl TrainConfig {
    pub fn new(variant: LabelMode, depth: usize, width: usize) -> Self {
        Self {
            variant,
            weight_scheme: WeightScheme::Uniform,
            custom_weights: None,
            depth,
            width,
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            lr: default_lr(),
            backprop_mode: BackpropMode::Full,
            patience: None,
            dropout: nn::DROPOUT_RATE,
            leaky_alpha: nn::LEAKY_ALPHA,
            head_tap: HeadTap::PostActivation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.depth == 0 || self.width == 0 {
            return Err(Error::Config("depth and width must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.loss_weights()?;
        Ok(())
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        match &self.custom_weights {
            Some(w) => {
                if w.len() != self.depth {
                    return Err(Error::Config(format!(
                        "{} custom weights for depth {}",
                        w.len(),
                        self.depth
                    )));
                }
                LossWeights::custom(w.clone()).map_err(|e| Error::Config(e.to_string()))
            }
            None => loss_weights(self.depth, self.weight_scheme),
        }
    }

    pub fn model_config(&self, input_width: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            input_width,
            depth: self.depth,
            width: self.width,
            mode: self.variant,
            classes: match self.variant {
                LabelMode::Binary => 2,
                LabelMode::Multiclass => classes,
            },
            leaky_alpha: self.leaky_alpha,
            dropout: self.dropout,
            head_tap: self.head_tap,
        }
    }
}

/// Seeded generators shared by every trainer built from the same seed:
/// minibatch order and dropout masks each get their own stream.
pub fn training_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
    shuffle.set_stream(1 << 40);
    let mut dropout = ChaCha8Rng::seed_from_u64(seed);
    dropout.set_stream((1 << 40) | 1);
    (shuffle, dropout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub head_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    /// `epoch,train_loss,val_loss,head_0,…,head_{L-1}`.
    pub fn to_csv(&self) -> String {
        let depth = self.epochs.first().map_or(0, |e| e.head_accuracy.len());
        let mut s = String::from("epoch,train_loss,val_loss");
        for k in 0..depth {
            s.push_str(&format!(",head_{k}"));
        }
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}", e.epoch, e.train_loss, e.val_loss));
            for a in &e.head_accuracy {
                s.push_str(&format!(",{a}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Per-head accuracy of `model` on a subset.
pub fn head_accuracies(model: &EagerNet, subset: &Subset) -> Result<Vec<f64>> {
    let truth = subset.targets(model.config.mode);
    let preds = model.predict_all_heads(&subset.features)?;
    Ok(preds
        .iter()
        .map(|p| {
            let hits = p.iter().zip(&truth).filter(|(a, b)| a == b).count();
            hits as f64 / truth.len().max(1) as f64
        })
        .collect())
}

/// Stateful minibatch trainer. [`train`] drives it to completion; tests can
/// step it epoch by epoch.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: EagerNet,
    weights: LossWeights,
    adam: AdamState,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, input_width: usize, classes: &ClassSet) -> Result<Self> {
        config.validate()?;
        let mut model = EagerNet::init(config.model_config(input_width, classes.len()), config.seed)?;
        if config.variant == LabelMode::Multiclass {
            model.class_names = classes.names().to_vec();
        }
        let shapes: Vec<usize> = model
            .parameters()
            .flat_map(|l| [l.weights.as_slice().len(), l.bias.len()])
            .collect();
        let adam = AdamState::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            &shapes,
        );
        let (shuffle_rng, dropout_rng) = training_rngs(config.seed);
        Ok(Self {
            weights: config.loss_weights()?,
            config,
            model,
            adam,
            shuffle_rng,
            dropout_rng,
            epoch: 0,
        })
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    fn apply(&mut self, grads: &Gradients) -> Result<()> {
        let mut params: Vec<&mut [f64]> = Vec::new();
        for layer in self.model.parameters_mut() {
            params.push(layer.weights.as_mut_slice());
            params.push(layer.bias.as_mut_slice());
        }
        let grad_refs: Vec<&[f64]> = grads
            .hidden
            .iter()
            .chain(&grads.heads)
            .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
            .collect();
        self.adam.step(&mut params, &grad_refs)
    }

    /// One pass over `train` in seeded shuffled minibatches; returns the
    /// sample-weighted mean combined loss.
    pub fn run_epoch(&mut self, train: &Subset) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Empty("training subset is empty".into()));
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let classes = self.model.config.classes;
        let mode = self.config.variant;
        let mut loss_sum = 0.0;
        for (b, rows) in order.chunks(self.config.batch_size).enumerate() {
            let x = train.features.select_rows(rows);
            let y = targets_for(train, rows, mode, classes);
            let tape = forward_with_tape(&self.model, &x, Some(&mut self.dropout_rng))?;
            let res = combined_backward(&self.model, &tape, &y, &self.weights, self.config.backprop_mode)?;
            if !res.total_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {} batch {b}",
                    self.epoch
                )));
            }
            self.apply(&res.grads).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {} batch {b}: {m}", self.epoch)),
                other => other,
            })?;
            loss_sum += res.total_loss * rows.len() as f64;
        }
        Ok(loss_sum / train.len() as f64)
    }

    pub fn validation_loss(&self, val: &Subset) -> Result<f64> {
        let all: Vec<usize> = (0..val.len()).collect();
        let y = targets_for(val, &all, self.config.variant, self.model.config.classes);
        combined_loss(&self.model, &val.features, &y, &self.weights)
    }
}

/// Train to completion, keeping the parameters with the lowest validation
/// combined loss.
pub fn train(
    config: TrainConfig,
    train_set: &Subset,
    val_set: &Subset,
    classes: &ClassSet,
    normalization: &Normalization,
) -> Result<(EagerNet, History)> {
    train_observed(config, train_set, val_set, classes, normalization, |_, _| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    config: TrainConfig,
    train_set: &Subset,
    val_set: &Subset,
    classes: &ClassSet,
    normalization: &Normalization,
    mut observe: impl FnMut(&EpochRecord, &EagerNet),
) -> Result<(EagerNet, History)> {
    if val_set.is_empty() {
        return Err(Error::Empty("validation subset is empty".into()));
    }
    let mut trainer = Trainer::new(config, train_set.features.cols(), classes)?;
    trainer.model.normalization = normalization.clone();
    let mut history = History::default();
    let mut best: Option<(f64, EagerNet)> = None;
    let mut since_best = 0;
    for epoch in 1..=trainer.config.epochs {
        let train_loss = trainer.run_epoch(train_set)?;
        let val_loss = trainer.validation_loss(val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            head_accuracy: head_accuracies(&trainer.model, val_set)?,
        };
        observe(&record, &trainer.model);
        history.epochs.push(record);
        if best.as_ref().map_or(true, |(l, _)| val_loss < *l) {
            best = Some((val_loss, trainer.model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if trainer.config.patience.is_some_and(|p| since_best >= p) {
                history.stopped_early = true;
                break;
            }
        }
    }
    let (_, model) = best.expect("at least one epoch ran");
    Ok((model, history))
}

/// Class predicted by the last head for each row.
pub fn last_head_predictions(model: &EagerNet, x: &Matrix) -> Result<Vec<usize>> {
    let outs = model.forward_full(x)?;
    let last = outs.last().expect("depth >= 1");
    Ok(last.iter_rows().map(|r| decide(model.config.mode, r).class).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabeledRow;

    #[test]
    fn weight_schedules_for_three_layers() {
        let u = loss_weights(3, WeightScheme::Uniform).unwrap();
        assert_eq!(u.as_slice(), &[1.0 / 3.0; 3]);
        assert_eq!(
            loss_weight_fractions(3, WeightScheme::Increasing).unwrap(),
            vec![(1, 6), (2, 6), (3, 6)]
        );
        assert_eq!(
            loss_weight_fractions(3, WeightScheme::Decreasing).unwrap(),
            vec![(3, 6), (2, 6), (1, 6)]
        );
        assert!(loss_weights(0, WeightScheme::Uniform).is_err());
    }

    #[test]
    fn custom_weights_validated() {
        assert!(LossWeights::custom(vec![0.5, 0.5]).is_ok());
        assert!(LossWeights::custom(vec![0.5, 0.6]).is_err());
        assert!(LossWeights::custom(vec![-0.5, 1.5]).is_err());
        assert_eq!(LossWeights::last_only(3).as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn bce_examples() {
        let (l, _) = bce_loss(&[0.0], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let logit = (0.9f64 / 0.1).ln();
        let (l, _) = bce_loss(&[logit, -logit], &[1.0, 0.0]).unwrap();
        assert!((l + 0.9f64.ln()).abs() < 1e-12);
        assert!((l - 0.105_360_515_657_826_3).abs() < 1e-12);
        let (l, _) = bce_loss(&[800.0], &[1.0]).unwrap();
        assert!(l.abs() < 1e-300);
    }

    #[test]
    fn cce_examples() {
        let logits = Matrix::from_rows(&[[0.7; 4]]).unwrap();
        let y = Matrix::from_rows(&[[0.0, 0.0, 1.0, 0.0]]).unwrap();
        let (l, _) = cce_loss(&logits, &y).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        let logits = Matrix::from_rows(&[[2.0, 0.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let (l, _) = cce_loss(&logits, &y).unwrap();
        let e2 = 2f64.exp();
        assert!((l + (e2 / (e2 + 2.0)).ln()).abs() < 1e-15);
        assert!((l - 0.2395).abs() < 1e-4);
        let bad = Matrix::from_rows(&[[0.5, 0.5, 0.0]]).unwrap();
        assert!(matches!(cce_loss(&logits, &bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn loss_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let y: Vec<f64> = (0..7).map(|i| (i % 2) as f64).collect();
        let (_, g) = bce_loss(&x, &y).unwrap();
        for i in 0..x.len() {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (bce_loss(&up, &y).unwrap().0 - bce_loss(&dn, &y).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() / fd.abs().max(1e-3) < 1e-6, "bce {i}: {fd} vs {}", g[i]);
        }
        let z = Matrix::from_vec(3, 4, (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let mut t = Matrix::zeros(3, 4);
        for r in 0..3 {
            t.set(r, (r * 3) % 4, 1.0);
        }
        let (_, g) = cce_loss(&z, &t).unwrap();
        for i in 0..12 {
            let (mut up, mut dn) = (z.clone(), z.clone());
            up.as_mut_slice()[i] += h;
            dn.as_mut_slice()[i] -= h;
            let fd = (cce_loss(&up, &t).unwrap().0 - cce_loss(&dn, &t).unwrap().0) / (2.0 * h);
            let an = g.as_slice()[i];
            assert!((fd - an).abs() / fd.abs().max(1e-3) < 1e-6, "cce {i}: {fd} vs {an}");
        }
    }

    fn toy(mode: LabelMode, classes: usize) -> (EagerNet, Matrix, Labels) {
        let model = EagerNet::init(ModelConfig::new(3, 3, 5, mode, classes), 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Matrix::from_vec(6, 3, (0..18).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let labels = match mode {
            LabelMode::Binary => Labels::Binary((0..6).map(|i| (i % 2) as f64).collect()),
            LabelMode::Multiclass => {
                let mut m = Matrix::zeros(6, classes);
                for r in 0..6 {
                    m.set(r, r % classes, 1.0);
                }
                Labels::OneHot(m)
            }
        };
        (model, x, labels)
    }

    fn grads(model: &EagerNet, x: &Matrix, y: &Labels, w: &LossWeights, mode: BackpropMode) -> Gradients {
        let tape = forward_with_tape::<ChaCha8Rng>(model, x, None).unwrap();
        combined_backward(model, &tape, y, w, mode).unwrap().grads
    }

    #[test]
    fn combined_gradient_is_weighted_sum_of_head_gradients() {
        for (mode, c) in [(LabelMode::Binary, 2), (LabelMode::Multiclass, 3)] {
            let (model, x, y) = toy(mode, c);
            let w = loss_weights(3, WeightScheme::Increasing).unwrap();
            let total = grads(&model, &x, &y, &w, BackpropMode::Full).flatten();
            let mut summed = vec![0.0; total.len()];
            for j in 0..3 {
                let gj = grads(&model, &x, &y, &LossWeights::single(3, j), BackpropMode::Full).flatten();
                for (s, g) in summed.iter_mut().zip(gj) {
                    *s += w.as_slice()[j] * g;
                }
            }
            for (a, b) in total.iter().zip(&summed) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn last_layer_sees_only_last_head() {
        let (model, x, y) = toy(LabelMode::Binary, 2);
        let g = grads(&model, &x, &y, &LossWeights::single(3, 0), BackpropMode::Full);
        assert!(g.hidden[2].weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.hidden[1].weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.hidden[0].weights.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn one_step_limits_intermediate_losses() {
        let (model, x, y) = toy(LabelMode::Multiclass, 3);
        // head 1 alone: one-step reaches hidden layer 1 but not hidden layer 0
        let g = grads(&model, &x, &y, &LossWeights::single(3, 1), BackpropMode::OneStep);
        let full = grads(&model, &x, &y, &LossWeights::single(3, 1), BackpropMode::Full);
        assert!(g.hidden[0].weights.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(g.hidden[1], full.hidden[1]);
        assert_eq!(g.heads[1], full.heads[1]);
        // the last head still reaches the input
        let g = grads(&model, &x, &y, &LossWeights::last_only(3), BackpropMode::OneStep);
        let full = grads(&model, &x, &y, &LossWeights::last_only(3), BackpropMode::Full);
        assert_eq!(g, full);
    }

    #[test]
    fn rejects_wrong_weight_count() {
        let (model, x, y) = toy(LabelMode::Binary, 2);
        let tape = forward_with_tape::<ChaCha8Rng>(&model, &x, None).unwrap();
        assert!(combined_backward(&model, &tape, &y, &LossWeights::last_only(2), BackpropMode::Full).is_err());
    }

    fn blob_subset(n: usize, seed: u64) -> Subset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for i in 0..n {
            let attack = i % 2 == 1;
            let c = if attack { 2.0 } else { -2.0 };
            rows.push(LabeledRow {
                features: (0..4).map(|_| c + rng.gen_range(-1.0..1.0)).collect(),
                attack,
                family: if attack { "x".into() } else { "benign".into() },
            });
        }
        Subset {
            features: Matrix::from_rows(&rows.iter().map(|r| r.features.clone()).collect::<Vec<_>>()).unwrap(),
            attack: rows.iter().map(|r| r.attack).collect(),
            family: rows.iter().map(|r| r.attack as usize).collect(),
        }
    }

    #[test]
    fn separable_blobs_are_learned_deterministically() {
        let train_set = blob_subset(400, 1);
        let val = blob_subset(200, 2);
        let classes = ClassSet::from_families(["benign", "x"]);
        let mut cfg = TrainConfig::new(LabelMode::Binary, 3, 16);
        cfg.epochs = 100;
        cfg.batch_size = 32;
        cfg.seed = 4;
        let norm = Normalization::identity(4);
        let (model, hist) = train(cfg.clone(), &train_set, &val, &classes, &norm).unwrap();
        let acc = head_accuracies(&model, &val).unwrap();
        assert!(acc.iter().all(|&a| a >= 0.99), "{acc:?}");
        assert!(hist.epochs[49].train_loss < hist.epochs[0].train_loss);
        let (_, again) = train(cfg.clone(), &train_set, &val, &classes, &norm).unwrap();
        assert_eq!(hist, again);

        cfg.epochs = 0;
        assert!(matches!(
            train(cfg, &train_set, &val, &classes, &norm),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn history_csv_layout() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                head_accuracy: vec![0.5, 1.0],
            }],
            best_epoch: 1,
            stopped_early: false,
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,val_loss,head_0,head_1\n1,0.5,0.25,0.5,1\n");
    }
}
