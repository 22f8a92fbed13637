//! Conventional fully-connected network (single output at the top), used
//! as the reference point for EagerNet comparisons.
//!
//! Initialization and random streams line up with [`crate::trainer`]: the
//! hidden stack draws from the same per-layer seeds as an EagerNet of the
//! same shape, and the output layer uses the seed of EagerNet's last head.

use rand::seq::SliceRandom;

use crate::dataset::{ClassSet, LabelMode, Subset};
use crate::error::{shape_err, Error, Result};
use crate::model::{decide, layer_rng, LayerSlot};
use crate::nn::{
    dropout_mask, hadamard, leaky_relu, leaky_relu_grad, AdamConfig, AdamState, DenseGrad,
    DenseLayer, Matrix,
};
use crate::trainer::{head_loss, targets_for, training_rngs, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PlainFcnn {
    pub hidden: Vec<DenseLayer>,
    pub output: DenseLayer,
    pub mode: LabelMode,
    pub leaky_alpha: f64,
    pub dropout: f64,
}

impl PlainFcnn {
    pub fn init(config: &TrainConfig, input_width: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let out_width = match config.variant {
            LabelMode::Binary => 1,
            LabelMode::Multiclass => classes,
        };
        let hidden = (0..config.depth)
            .map(|k| {
                let fan_in = if k == 0 { input_width } else { config.width };
                DenseLayer::he_uniform(fan_in, config.width, &mut layer_rng(config.seed, LayerSlot::Hidden(k)))
            })
            .collect();
        let output = DenseLayer::he_uniform(
            config.width,
            out_width,
            &mut layer_rng(config.seed, LayerSlot::Head(config.depth - 1)),
        );
        Ok(Self {
            hidden,
            output,
            mode: config.variant,
            leaky_alpha: config.leaky_alpha,
            dropout: config.dropout,
        })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut a = x.clone();
        for layer in &self.hidden {
            a = layer.forward(&a)?.map(|v| leaky_relu(v, self.leaky_alpha));
        }
        self.output.forward(&a)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self
            .forward(x)?
            .iter_rows()
            .map(|r| decide(self.mode, r).class)
            .collect())
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for l in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            v.push(l.weights.as_mut_slice());
            v.push(l.bias.as_mut_slice());
        }
        v
    }
}

/// Train with the same minibatch order, dropout stream and Adam settings as
/// [`crate::trainer::Trainer`]. `observe` runs after every epoch.
pub fn train_plain(
    config: &TrainConfig,
    train: &Subset,
    classes: &ClassSet,
    mut observe: impl FnMut(usize, &PlainFcnn),
) -> Result<PlainFcnn> {
    if train.is_empty() {
        return Err(Error::Empty("training subset is empty".into()));
    }
    let mut net = PlainFcnn::init(config, train.features.cols(), classes.len())?;
    let shapes: Vec<usize> = net.tensors_mut().iter().map(|t| t.len()).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &shapes,
    );
    let (mut shuffle_rng, mut dropout_rng) = training_rngs(config.seed);
    let n_classes = match config.variant {
        LabelMode::Binary => 2,
        LabelMode::Multiclass => classes.len(),
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);
        for rows in order.chunks(config.batch_size) {
            let x = train.features.select_rows(rows);
            let y = targets_for(train, rows, config.variant, n_classes);

            let mut inputs = Vec::with_capacity(net.hidden.len());
            let mut pres = Vec::with_capacity(net.hidden.len());
            let mut masks = Vec::with_capacity(net.hidden.len());
            let mut a = x;
            for layer in &net.hidden {
                let z = layer.forward(&a)?;
                let h = z.map(|v| leaky_relu(v, net.leaky_alpha));
                let mask = (net.dropout > 0.0)
                    .then(|| dropout_mask(z.rows(), z.cols(), net.dropout, &mut dropout_rng));
                let out = match &mask {
                    Some(m) => hadamard(&h, m),
                    None => h,
                };
                inputs.push(std::mem::replace(&mut a, out));
                pres.push(z);
                masks.push(mask);
            }
            let logits = net.output.forward(&a)?;
            let (loss, g_logits) = head_loss(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("baseline loss at epoch {epoch}")));
            }
            let mut out_grad = DenseGrad::zeros_like(&net.output);
            net.output.backward_params(&a, &g_logits, &mut out_grad);
            let mut g = net.output.backward_input(&g_logits);
            let mut hidden_grads: Vec<DenseGrad> = net.hidden.iter().map(DenseGrad::zeros_like).collect();
            for k in (0..net.hidden.len()).rev() {
                if let Some(m) = &masks[k] {
                    g = hadamard(&g, m);
                }
                for (gv, &zv) in g.as_mut_slice().iter_mut().zip(pres[k].as_slice()) {
                    *gv *= leaky_relu_grad(zv, net.leaky_alpha);
                }
                net.hidden[k].backward_params(&inputs[k], &g, &mut hidden_grads[k]);
                if k > 0 {
                    g = net.hidden[k].backward_input(&g);
                }
            }
            let grads: Vec<&[f64]> = hidden_grads
                .iter()
                .chain(std::iter::once(&out_grad))
                .flat_map(|d| [d.weights.as_slice(), d.bias.as_slice()])
                .collect();
            let mut params = net.tensors_mut();
            if params.len() != grads.len() {
                return Err(shape_err("baseline parameter/gradient count mismatch"));
            }
            adam.step(&mut params, &grads)?;
        }
        observe(epoch, &net);
    }
    Ok(net)
}
