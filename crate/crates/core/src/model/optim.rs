use super::ModelParams;

pub const MOMENTUM: f64 = 0.9;

/// SGD with heavy-ball momentum. Weight decay is folded into the gradients
/// before they reach [`sgd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: ModelParams,
    pub momentum: f64,
    pub base_lr: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, base_lr: f64, weight_decay: f64) -> Self {
        Self {
            velocity: params.zeros_like(),
            momentum: MOMENTUM,
            base_lr,
            weight_decay,
        }
    }
}

/// `v <- momentum * v + g; p <- p - lr * v`.
pub fn sgd_step(opt: &mut OptimizerState, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
    assert!(params.same_shape(grads) && params.same_shape(&opt.velocity), "shape mismatch");
    for ((p, v), g) in params.layers.iter_mut().zip(opt.velocity.layers.iter_mut()).zip(&grads.layers) {
        v.weight *= opt.momentum;
        v.weight += &g.weight;
        v.bias *= opt.momentum;
        v.bias += &g.bias;
        p.weight.scaled_add(-lr, &v.weight);
        p.bias.scaled_add(-lr, &v.bias);
    }
}

/// `base_lr * 0.5 * (1 + cos(pi * epoch / total_epochs))`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    debug_assert!(epoch < total_epochs);
    let progress = epoch as f64 / total_epochs as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
