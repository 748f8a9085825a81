//! Dense ReLU networks with per-weight pruning masks.
//!
//! Minibatches are row-major: a batch of `B` examples with `d` features is a
//! `B x d` matrix, and a layer with weights `[fan_out x fan_in]` maps it to
//! `B x fan_out` via `z = x W^T + b`. Hidden layers apply optional batch
//! normalization and then ReLU; the last layer emits raw logits.

use std::fmt::Debug;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Floating point element type of a network. Training runs in `f32`, gradient
/// checks in `f64`.
pub trait Scalar:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Default + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for batch normalization.
    Train,
    /// Running statistics for batch normalization.
    Eval,
}

/// Derives an independent per-stream seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// He initialization: i.i.d. `N(0, 2 / fan_in)` entries.
pub fn he_init<T: Scalar>(fan_out: usize, fan_in: usize, seed: u64) -> Result<Array2<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidShape(format!(
            "he_init needs non-zero dimensions, got [{fan_out} x {fan_in}]"
        )));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Array2::from_shape_simple_fn((fan_out, fan_in), || {
        T::from_f64_lossy(normal.sample(&mut rng))
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub scale: Array1<T>,
    pub shift: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(units: usize) -> Self {
        Self {
            scale: Array1::ones(units),
            shift: Array1::zeros(units),
            running_mean: Array1::zeros(units),
            running_var: Array1::ones(units),
        }
    }

    pub fn units(&self) -> usize {
        self.scale.len()
    }
}

/// Result of a batch-normalization forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct BnOutput<T> {
    /// Standardized pre-activations before scale and shift.
    pub normalized: Array2<T>,
    pub output: Array2<T>,
    pub inv_std: Array1<T>,
    /// Population mean and variance of the batch; `None` in eval mode.
    pub batch_stats: Option<(Array1<T>, Array1<T>)>,
}

pub fn bn_forward<T: Scalar>(z: ArrayView2<T>, bn: &BatchNorm<T>, mode: Mode) -> Result<BnOutput<T>> {
    if z.ncols() != bn.units() {
        return Err(Error::InvalidShape(format!(
            "batch norm over {} units applied to {} columns",
            bn.units(),
            z.ncols()
        )));
    }
    let eps = T::from_f64_lossy(BN_EPSILON);
    let (mean, var, batch_stats) = match mode {
        Mode::Train => {
            let rows = z.nrows();
            if rows < 2 {
                return Err(Error::DegenerateBatch(rows));
            }
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let var = z.var_axis(Axis(0), T::zero());
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone(), None),
    };
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let normalized = (&z - &mean) * &inv_std;
    let output = &normalized * &bn.scale + &bn.shift;
    Ok(BnOutput {
        normalized,
        output,
        inv_std,
        batch_stats,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `[fan_out x fan_in]`
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub bn: Option<BatchNorm<T>>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>) -> Self {
        Self {
            weights,
            bias,
            bn: None,
        }
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.bn = Some(BatchNorm::new(self.fan_out()));
        self
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

/// Per-layer record of a forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace<T> {
    /// `z = x W^T + b` before normalization.
    pub pre_activation: Array2<T>,
    pub bn: Option<BnOutput<T>>,
    /// Post-ReLU hidden representation; `None` for the output layer.
    pub hidden: Option<Array2<T>>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub input: Array2<T>,
    pub layers: Vec<LayerTrace<T>>,
    pub mode: Mode,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn logits(&self) -> &Array2<T> {
        &self.layers.last().expect("at least one layer").pre_activation
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    pub fn hidden_representations(&self) -> impl Iterator<Item = &Array2<T>> {
        self.layers.iter().filter_map(|l| l.hidden.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnGrad<T> {
    pub scale: Array1<T>,
    pub shift: Array1<T>,
}

/// Loss gradients, laid out like the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
    pub bn: Vec<Option<BnGrad<T>>>,
    /// Mean cross-entropy of the batch the gradients came from.
    pub loss: T,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            bn: net
                .layers
                .iter()
                .map(|l| {
                    l.bn.as_ref().map(|bn| BnGrad {
                        scale: Array1::zeros(bn.units()),
                        shift: Array1::zeros(bn.units()),
                    })
                })
                .collect(),
            loss: T::zero(),
        }
    }

    /// `self += factor * other`, loss included.
    pub fn add_scaled(&mut self, other: &Self, factor: T) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(factor, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(factor, b);
        }
        for (a, b) in self.bn.iter_mut().zip(&other.bn) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.scale.scaled_add(factor, &b.scale);
                a.shift.scaled_add(factor, &b.shift);
            }
        }
        self.loss = self.loss + factor * other.loss;
    }

    /// Flat views in the same order as [`Network::parameter_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
            if let Some(bn) = &self.bn[l] {
                out.push(bn.scale.as_slice().expect("standard layout"));
                out.push(bn.shift.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn has_non_finite(&self) -> bool {
        self.slices().iter().any(|s| s.iter().any(|v| !v.is_finite()))
    }
}

/// A feed-forward ReLU network whose weight matrices carry binary masks.
///
/// Masked weights are stored as exactly zero; see [`Network::apply_mask`].
#[derive(Clone, Debug)]
pub struct Network<T> {
    layers: Vec<DenseLayer<T>>,
    masks: Vec<Array2<bool>>,
    init_snapshot: Arc<Vec<DenseLayer<T>>>,
}

impl<T: Scalar> Network<T> {
    /// He-initialized network with zero biases. `sizes` lists every width
    /// from input to output, so `[784, 256, 256, 256, 10]` has four layers.
    pub fn new(sizes: &[usize], batch_norm: bool, seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "network needs at least input and output widths, got {sizes:?}"
            )));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let weights = he_init(w[1], w[0], derive_seed(seed, l as u64))?;
                let layer = DenseLayer::new(weights, Array1::zeros(w[1]));
                Ok(if batch_norm && l < last {
                    layer.with_batch_norm()
                } else {
                    layer
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    /// Wraps hand-built layers; the current weights become the initialization
    /// snapshot and every mask starts fully alive.
    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidShape("network has no layers".into()));
        }
        let mut normalized = Vec::with_capacity(layers.len());
        for (l, layer) in layers.into_iter().enumerate() {
            if layer.fan_in() == 0 || layer.fan_out() == 0 {
                return Err(Error::InvalidShape(format!("layer {l} has an empty dimension")));
            }
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::InvalidShape(format!(
                    "layer {l}: bias length {} != fan_out {}",
                    layer.bias.len(),
                    layer.fan_out()
                )));
            }
            if let Some(bn) = &layer.bn {
                if bn.units() != layer.fan_out() {
                    return Err(Error::InvalidShape(format!(
                        "layer {l}: batch norm width {} != fan_out {}",
                        bn.units(),
                        layer.fan_out()
                    )));
                }
                if bn.running_var.iter().any(|v| *v < T::zero()) {
                    return Err(Error::InvalidShape(format!("layer {l}: negative running variance")));
                }
            }
            if let Some(prev) = normalized.last() {
                let prev: &DenseLayer<T> = prev;
                if prev.fan_out() != layer.fan_in() {
                    return Err(Error::InvalidShape(format!(
                        "layer {l}: fan_in {} does not match previous fan_out {}",
                        layer.fan_in(),
                        prev.fan_out()
                    )));
                }
            }
            normalized.push(DenseLayer {
                weights: layer.weights.as_standard_layout().into_owned(),
                bias: layer.bias.as_standard_layout().into_owned(),
                bn: layer.bn,
            });
        }
        let masks = normalized
            .iter()
            .map(|l| Array2::from_elem(l.weights.raw_dim(), true))
            .collect();
        Ok(Self {
            init_snapshot: Arc::new(normalized.clone()),
            layers: normalized,
            masks,
        })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Layer widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::fan_out))
            .collect()
    }

    pub fn uses_bn(&self, layer: usize) -> bool {
        self.layers.get(layer).is_some_and(|l| l.bn.is_some())
    }

    pub fn masks(&self) -> &[Array2<bool>] {
        &self.masks
    }

    pub fn init_snapshot(&self) -> &[DenseLayer<T>] {
        &self.init_snapshot
    }

    /// Mutable layer access. Call [`Network::apply_mask`] afterwards if weights
    /// at pruned positions may have been touched.
    pub fn layer_mut(&mut self, layer: usize) -> &mut DenseLayer<T> {
        &mut self.layers[layer]
    }

    /// Replaces one mask; pruned positions are zeroed immediately.
    pub fn set_mask(&mut self, layer: usize, mask: Array2<bool>) -> Result<()> {
        if mask.raw_dim() != self.layers[layer].weights.raw_dim() {
            return Err(Error::InvalidShape(format!(
                "mask {:?} does not match weights {:?} in layer {layer}",
                mask.shape(),
                self.layers[layer].weights.shape()
            )));
        }
        self.masks[layer] = mask;
        self.apply_mask();
        Ok(())
    }

    pub(crate) fn masks_mut(&mut self) -> &mut [Array2<bool>] {
        &mut self.masks
    }

    /// Writes `+0.0` to every pruned weight.
    pub fn apply_mask(&mut self) {
        for (layer, mask) in self.layers.iter_mut().zip(&self.masks) {
            Zip::from(&mut layer.weights).and(mask).for_each(|w, &alive| {
                if !alive {
                    *w = T::zero();
                }
            });
        }
    }

    /// Zeroes the gradient of every pruned weight.
    pub fn freeze_gradients(&self, grads: &mut Gradients<T>) {
        for (g, mask) in grads.weights.iter_mut().zip(&self.masks) {
            Zip::from(g).and(mask).for_each(|g, &alive| {
                if !alive {
                    *g = T::zero();
                }
            });
        }
    }

    /// Restores weights, biases and batch-norm state to the initialization
    /// snapshot, keeping pruned weights at zero.
    pub fn rewind_to_init(&mut self) {
        let snapshot = Arc::clone(&self.init_snapshot);
        for ((layer, init), mask) in self.layers.iter_mut().zip(snapshot.iter()).zip(&self.masks) {
            Zip::from(&mut layer.weights)
                .and(&init.weights)
                .and(mask)
                .for_each(|w, &w0, &alive| *w = if alive { w0 } else { T::zero() });
            layer.bias.assign(&init.bias);
            layer.bn.clone_from(&init.bn);
        }
    }

    /// Flat mutable parameter views: per layer weights, bias, then batch-norm
    /// scale and shift when present. The weight entries are paired with their
    /// mask.
    pub fn parameter_slices_mut(&mut self) -> Vec<(&mut [T], Option<&[bool]>)> {
        let mut out = Vec::new();
        for (layer, mask) in self.layers.iter_mut().zip(&self.masks) {
            out.push((
                layer.weights.as_slice_mut().expect("standard layout"),
                Some(mask.as_slice().expect("standard layout")),
            ));
            out.push((layer.bias.as_slice_mut().expect("standard layout"), None));
            if let Some(bn) = layer.bn.as_mut() {
                out.push((bn.scale.as_slice_mut().expect("standard layout"), None));
                out.push((bn.shift.as_slice_mut().expect("standard layout"), None));
            }
        }
        out
    }

    pub fn forward(&self, batch: ArrayView2<T>, mode: Mode) -> Result<ForwardTrace<T>> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::InvalidShape(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut traces: Vec<LayerTrace<T>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = match traces.last() {
                Some(prev) => prev.hidden.as_ref().expect("hidden layer").view(),
                None => batch,
            };
            let pre_activation = input.dot(&layer.weights.t()) + &layer.bias;
            if l == last {
                traces.push(LayerTrace {
                    pre_activation,
                    bn: None,
                    hidden: None,
                });
                break;
            }
            let bn = layer
                .bn
                .as_ref()
                .map(|bn| bn_forward(pre_activation.view(), bn, mode))
                .transpose()?;
            let hidden = match &bn {
                Some(out) => out.output.mapv(relu),
                None => pre_activation.mapv(relu),
            };
            traces.push(LayerTrace {
                pre_activation,
                bn,
                hidden: Some(hidden),
            });
        }
        Ok(ForwardTrace {
            input: batch.to_owned(),
            layers: traces,
            mode,
        })
    }

    /// Mean cross-entropy gradients for every weight, pruned positions
    /// included; callers apply [`Network::freeze_gradients`].
    pub fn backward(&self, trace: &ForwardTrace<T>, labels: &[usize]) -> Result<Gradients<T>> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::InvalidShape("trace does not belong to this network".into()));
        }
        let logits = trace.logits();
        let rows = logits.nrows();
        if labels.len() != rows {
            return Err(Error::InvalidShape(format!(
                "{} labels for a batch of {rows}",
                labels.len()
            )));
        }
        let (loss, mut delta) = softmax_cross_entropy(logits, labels)?;
        let inv_rows = T::one() / T::from_usize(rows).expect("batch size");
        delta.mapv_inplace(|d| d * inv_rows);

        let n = self.layers.len();
        let mut weights = vec![Array2::zeros((0, 0)); n];
        let mut biases = vec![Array1::zeros(0); n];
        let mut bn_grads = vec![None; n];
        for l in (0..n).rev() {
            let input = if l == 0 {
                trace.input.view()
            } else {
                trace.layers[l - 1].hidden.as_ref().expect("hidden layer").view()
            };
            weights[l] = delta.t().dot(&input).as_standard_layout().into_owned();
            biases[l] = delta.sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let below = &trace.layers[l - 1];
            let mut upstream = delta.dot(&self.layers[l].weights);
            Zip::from(&mut upstream)
                .and(below.hidden.as_ref().expect("hidden layer"))
                .for_each(|g, &h| {
                    if h <= T::zero() {
                        *g = T::zero();
                    }
                });
            delta = match (&below.bn, &self.layers[l - 1].bn) {
                (Some(cache), Some(params)) => {
                    let (dz, grad) = bn_backward(&upstream, cache, params);
                    bn_grads[l - 1] = Some(grad);
                    dz
                }
                _ => upstream,
            };
        }
        Ok(Gradients {
            weights,
            biases,
            bn: bn_grads,
            loss,
        })
    }

    /// Folds the batch statistics of a training-mode trace into the running
    /// batch-norm statistics.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace<T>) {
        let momentum = T::from_f64_lossy(BN_MOMENTUM);
        let keep = T::one() - momentum;
        for (layer, lt) in self.layers.iter_mut().zip(&trace.layers) {
            let (Some(bn), Some(out)) = (layer.bn.as_mut(), lt.bn.as_ref()) else {
                continue;
            };
            let Some((mean, var)) = &out.batch_stats else {
                continue;
            };
            let rows = lt.pre_activation.nrows();
            let unbias = T::from_usize(rows).expect("rows") / T::from_usize(rows - 1).expect("rows");
            Zip::from(&mut bn.running_mean)
                .and(mean)
                .for_each(|r, &m| *r = keep * *r + momentum * m);
            Zip::from(&mut bn.running_var)
                .and(var)
                .for_each(|r, &v| *r = keep * *r + momentum * v * unbias);
        }
    }

    /// Mean cross-entropy of a trace against labels.
    pub fn loss(&self, trace: &ForwardTrace<T>, labels: &[usize]) -> Result<T> {
        softmax_cross_entropy(trace.logits(), labels).map(|(l, _)| l)
    }

    /// Arg-max class per row in eval mode.
    pub fn predict(&self, batch: ArrayView2<T>) -> Result<Vec<usize>> {
        let trace = self.forward(batch, Mode::Eval)?;
        Ok(argmax_rows(trace.logits()))
    }
}

fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

pub fn argmax_rows<T: Scalar>(logits: &Array2<T>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Mean cross-entropy and the unscaled logit gradient `softmax - onehot`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[usize]) -> Result<(T, Array2<T>)> {
    let classes = logits.ncols();
    if labels.len() != logits.nrows() {
        return Err(Error::InvalidShape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.nrows()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidLabel { label, classes });
    }
    let mut probs = logits.clone();
    let mut total = T::zero();
    for (mut row, &label) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        total = total + (sum.ln() - row[label].ln());
        row.mapv_inplace(|v| v / sum);
        row[label] = row[label] - T::one();
    }
    let loss = total / T::from_usize(labels.len().max(1)).expect("batch size");
    Ok((loss, probs))
}

fn bn_backward<T: Scalar>(upstream: &Array2<T>, cache: &BnOutput<T>, params: &BatchNorm<T>) -> (Array2<T>, BnGrad<T>) {
    let grad = BnGrad {
        scale: (upstream * &cache.normalized).sum_axis(Axis(0)),
        shift: upstream.sum_axis(Axis(0)),
    };
    let dxhat = upstream * &params.scale;
    let dz = if cache.batch_stats.is_some() {
        let rows = T::from_usize(upstream.nrows()).expect("rows");
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.normalized).sum_axis(Axis(0));
        let dz = &dxhat * rows - &sum_dxhat - &cache.normalized * &sum_dxhat_xhat;
        dz * &(&cache.inv_std / rows)
    } else {
        dxhat * &cache.inv_std
    };
    (dz, grad)
}
