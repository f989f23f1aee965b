use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::rng::{self, Purpose};

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// One affine layer; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Weights of a fully connected network with ReLU hidden layers and an
/// identity output layer. The same shape doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

impl ModelParams {
    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least an input and an output size");
        let mut rng = rng::stream(seed, Purpose::Init, 0);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..limit));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    /// Layer sizes, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weight.nrows()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.nrows()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// All scalars in a fixed order: per layer, weights row-major then bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    /// Adds the L2 penalty gradient `decay * W` for weights (not biases).
    pub fn add_weight_decay(&mut self, params: &ModelParams, decay: f64) {
        if decay == 0.0 {
            return;
        }
        for (g, p) in self.layers.iter_mut().zip(&params.layers) {
            g.weight.scaled_add(decay, &p.weight);
        }
    }

    /// `0.5 * decay * sum(W^2)` over weights only.
    pub fn weight_penalty(&self, decay: f64) -> f64 {
        0.5 * decay * self.layers.iter().map(|l| l.weight.mapv(|v| v * v).sum()).sum::<f64>()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "input dimension mismatch");
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if k < last {
                z.mapv_inplace(relu);
            }
            h = z;
        }
        h
    }

    /// Accumulates into `grads` the gradient of
    /// `-(1/norm) * sum_i weights[i] * ln(max(p_i[targets[i]], PROB_FLOOR))`
    /// and returns that loss. A zero `norm` or an empty batch contributes 0.
    pub fn accumulate_weighted_ce(
        &self,
        x: ArrayView2<'_, f64>,
        targets: &[usize],
        weights: &[f64],
        norm: f64,
        grads: &mut ModelParams,
    ) -> f64 {
        let b = x.nrows();
        assert_eq!(targets.len(), b, "one target per row");
        assert_eq!(weights.len(), b, "one weight per row");
        if b == 0 || norm == 0.0 {
            return 0.0;
        }
        assert_eq!(x.ncols(), self.input_dim(), "input dimension mismatch");
        let last = self.layers.len() - 1;

        // Forward, keeping each layer's input (post-activation of the previous one).
        let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if k < last {
                z.mapv_inplace(relu);
            }
            inputs.push(h);
            h = z;
        }
        let probs = softmax_rows(h.view());

        let mut loss = 0.0;
        let mut delta = probs;
        for (i, mut row) in delta.outer_iter_mut().enumerate() {
            let y = targets[i];
            let p = row[y];
            let w = weights[i];
            loss -= w * p.max(PROB_FLOOR).ln();
            if p < PROB_FLOOR || w == 0.0 {
                // The clamped log is constant here.
                row.fill(0.0);
            } else {
                row[y] -= 1.0;
                row *= w / norm;
            }
        }
        loss /= norm;

        for k in (0..self.layers.len()).rev() {
            let g = &mut grads.layers[k];
            g.weight += &delta.t().dot(&inputs[k]);
            g.bias += &delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].weight);
                // inputs[k] is relu output of layer k-1: gate where it was active.
                Zip::from(&mut back).and(&inputs[k]).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        loss
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Weighted cross-entropy `-(1/B) sum_i w_i ln p_i[y_i]` and its exact
/// gradient, with `weight_decay * W` added to every weight gradient. The
/// returned loss excludes the decay penalty.
pub fn loss_and_grads(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    targets: &[usize],
    weights: &[f64],
    weight_decay: f64,
) -> (f64, ModelParams) {
    let mut grads = params.zeros_like();
    let loss = params.accumulate_weighted_ce(x, targets, weights, x.nrows() as f64, &mut grads);
    grads.add_weight_decay(params, weight_decay);
    (loss, grads)
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows(probs: ArrayView2<'_, f64>) -> Vec<usize> {
    probs
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
