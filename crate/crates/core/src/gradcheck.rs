//! Finite-difference verification of the analytic backward passes.
//!
//! Each check evaluates a scalar `L = <r, f(inputs)>` for a random upstream
//! vector `r`, differentiates it numerically with a Richardson-extrapolated
//! central difference and compares against the layer's backward pass.
//! Coordinates whose step-`h` and step-`h/2` estimates disagree sit on a
//! kink (ReLU zero, max-pool switch) and are skipped and counted.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{InitScheme, Model, ModelConfig};
use crate::model::{Axis, SENSOR_ROWS, INPUT_LEN};
use crate::nn::{
    maxpool_time_backward, maxpool_time_forward, relu_backward, relu_forward, BatchNormLayer, ConvLayer, DenseLayer,
    DropoutLayer, Mode,
};
use crate::tensor::Tensor;
use crate::training::{fused_loss_grad, rmse_grad};

/// Finite-difference step for single layers.
pub const LAYER_STEP: f64 = 1e-3;
/// Smaller step for the whole model, whose ReLU kinks are dense.
pub const MODEL_STEP: f64 = 1e-4;
/// Absolute floor of the error denominator.
pub const FLOOR: f64 = 1e-10;
/// Coordinates smaller than this fraction of their tensor's largest
/// gradient are measured against that fraction instead of themselves.
pub const TENSOR_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor).max(FLOOR)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckStats {
    pub trials: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradCheckStats {
    fn record(&mut self, rel: f64, label: impl FnOnce() -> String) {
        self.checked += 1;
        if rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = label();
        }
    }

    pub fn merge(&mut self, other: &GradCheckStats) {
        self.trials += other.trials;
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.clone();
        }
    }
}

impl fmt::Display for GradCheckStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} trials, {} coordinates, {} skipped at kinks, max rel error {:.3e}",
            self.trials, self.checked, self.skipped, self.max_rel_error
        )?;
        if !self.worst.is_empty() {
            write!(f, " ({})", self.worst)?;
        }
        Ok(())
    }
}

/// Numeric derivative of `f` at `x0` along one coordinate. Returns `None`
/// when a kink lies near `x0`: the second difference then grows like `1/h`
/// instead of settling, and the estimates disagree across step sizes.
fn derivative(f: &mut dyn FnMut(f64) -> f64, x0: f64, step: f64) -> Option<f64> {
    let f0 = f(x0);
    let mut central = [0.0; 3];
    let mut second = [0.0; 3];
    for (i, h) in [step, step / 2.0, step / 4.0].into_iter().enumerate() {
        let (up, down) = (f(x0 + h), f(x0 - h));
        central[i] = (up - down) / (2.0 * h);
        second[i] = (up - 2.0 * f0 + down) / h;
    }
    let r1 = (4.0 * central[1] - central[0]) / 3.0;
    let r2 = (4.0 * central[2] - central[1]) / 3.0;
    let scale = r1.abs().max(r2.abs()).max(1e-3);
    let kink = (second[0] - 2.0 * second[1]).abs().max((second[1] - 2.0 * second[2]).abs());
    if (r1 - r2).abs() > 1e-4 * scale || kink > 1e-5 * scale {
        return None;
    }
    Some(r2)
}

/// Compares `grads` against finite differences of `loss` over every
/// coordinate of every tensor in `inputs` (or `per_tensor` sampled ones).
fn compare(
    name: &str,
    inputs: &[Tensor<f64>],
    grads: &[Tensor<f64>],
    loss: &mut dyn FnMut(&[Tensor<f64>]) -> f64,
    per_tensor: Option<usize>,
    step: f64,
    rng: &mut ChaCha8Rng,
    stats: &mut GradCheckStats,
) {
    let mut work = inputs.to_vec();
    for (ti, (t, g)) in inputs.iter().zip(grads).enumerate() {
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < t.len() => (0..k).map(|_| rng.random_range(0..t.len())).collect(),
            _ => (0..t.len()).collect(),
        };
        let floor = TENSOR_FLOOR * g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in coords {
            let x0 = t.data()[i];
            let numeric = derivative(
                &mut |v| {
                    work[ti].data_mut()[i] = v;
                    loss(&work)
                },
                x0,
                step,
            );
            work[ti].data_mut()[i] = x0;
            match numeric {
                None => stats.skipped += 1,
                Some(n) => {
                    let a = g.data()[i];
                    stats.record(rel_error(a, n, floor), || format!("{} tensor {} index {}: {} vs {}", name, ti, i, a, n));
                }
            }
        }
    }
}

fn normal_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Layer operations covered by [`check_layer`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerOp {
    Conv,
    Dense,
    BatchNormTrain,
    BatchNormInfer,
    Relu,
    MaxPool,
    Dropout,
    Rmse,
    FusedLoss,
}

impl LayerOp {
    pub const ALL: [LayerOp; 9] = [
        LayerOp::Conv,
        LayerOp::Dense,
        LayerOp::BatchNormTrain,
        LayerOp::BatchNormInfer,
        LayerOp::Relu,
        LayerOp::MaxPool,
        LayerOp::Dropout,
        LayerOp::Rmse,
        LayerOp::FusedLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerOp::Conv => "conv2d",
            LayerOp::Dense => "dense",
            LayerOp::BatchNormTrain => "batchnorm(train)",
            LayerOp::BatchNormInfer => "batchnorm(infer)",
            LayerOp::Relu => "relu",
            LayerOp::MaxPool => "maxpool",
            LayerOp::Dropout => "dropout",
            LayerOp::Rmse => "rmse",
            LayerOp::FusedLoss => "fused_loss",
        }
    }
}

fn activation_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(1..=4),
        rng.random_range(2..=7),
    ]
}

/// Runs `trials` randomized checks of one operation in double precision.
pub fn check_layer(op: LayerOp, trials: usize, seed: u64) -> GradCheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = GradCheckStats::default();
    for _ in 0..trials {
        stats.trials += 1;
        match op {
            LayerOp::Conv => {
                let shape = activation_shape(&mut rng);
                let c_out = rng.random_range(1..=3);
                let x = normal_tensor(&shape, &mut rng);
                let w = normal_tensor(&[c_out, shape[0], 3, 3], &mut rng);
                let b = normal_tensor(&[c_out], &mut rng);
                let r = normal_tensor(&[c_out, shape[1], shape[2], shape[3]], &mut rng);
                let layer = ConvLayer { weight: w.clone(), bias: b.clone() };
                let g = layer.backward(&x, &r, true).expect("shapes agree");
                let grads = [g.x.expect("requested"), g.weight, g.bias];
                let mut loss = |p: &[Tensor<f64>]| {
                    let l = ConvLayer { weight: p[1].clone(), bias: p[2].clone() };
                    dot(&r, &l.forward(&p[0]).expect("shapes agree"))
                };
                compare(op.name(), &[x, w, b], &grads, &mut loss, None, LAYER_STEP, &mut rng, &mut stats);
            }
            LayerOp::Dense => {
                let (bsz, n_in, n_out) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=5));
                let x = normal_tensor(&[bsz, n_in], &mut rng);
                let w = normal_tensor(&[n_out, n_in], &mut rng);
                let b = normal_tensor(&[n_out], &mut rng);
                let r = normal_tensor(&[bsz, n_out], &mut rng);
                let layer = DenseLayer { weight: w.clone(), bias: b.clone() };
                let g = layer.backward(&x, &r, true).expect("shapes agree");
                let grads = [g.x.expect("requested"), g.weight, g.bias];
                let mut loss = |p: &[Tensor<f64>]| {
                    let l = DenseLayer { weight: p[1].clone(), bias: p[2].clone() };
                    dot(&r, &l.forward(&p[0]).expect("shapes agree"))
                };
                compare(op.name(), &[x, w, b], &grads, &mut loss, None, LAYER_STEP, &mut rng, &mut stats);
            }
            LayerOp::BatchNormTrain | LayerOp::BatchNormInfer => {
                let mut shape = activation_shape(&mut rng);
                if op == LayerOp::BatchNormTrain && shape[1] * shape[2] * shape[3] < 2 {
                    shape[3] = 2;
                }
                let c = shape[0];
                let x = normal_tensor(&shape, &mut rng);
                let gamma = normal_tensor(&[c], &mut rng);
                let beta = normal_tensor(&[c], &mut rng);
                let r = normal_tensor(&shape, &mut rng);
                let mut layer = BatchNormLayer::<f64>::new(c);
                layer.running_mean = normal_tensor(&[c], &mut rng);
                layer.running_var = Tensor::from_fn(&[c], |_| rng.random_range(0.2..2.0));
                let mode = if op == LayerOp::BatchNormTrain { Mode::Train } else { Mode::Infer };
                let run = |l: &mut BatchNormLayer<f64>, p: &[Tensor<f64>]| {
                    l.gamma = p[1].clone();
                    l.beta = p[2].clone();
                    l.forward(&p[0], mode).expect("shapes agree")
                };
                let base = layer.clone();
                let (_, cache) = run(&mut layer.clone(), &[x.clone(), gamma.clone(), beta.clone()]);
                let mut with_params = base.clone();
                with_params.gamma = gamma.clone();
                with_params.beta = beta.clone();
                let g = with_params.backward(&cache, &r).expect("shapes agree");
                let grads = [g.x, g.gamma, g.beta];
                let mut loss = |p: &[Tensor<f64>]| dot(&r, &run(&mut base.clone(), p).0);
                compare(op.name(), &[x, gamma, beta], &grads, &mut loss, None, LAYER_STEP, &mut rng, &mut stats);
            }
            LayerOp::Relu => {
                let shape = activation_shape(&mut rng);
                // Keep inputs away from the kink at zero.
                let x = Tensor::from_fn(&shape, |_| {
                    let v: f64 = rng.random_range(0.05..1.0);
                    if rng.random::<bool>() { v } else { -v }
                });
                let r = normal_tensor(&shape, &mut rng);
                let g = relu_backward(&x, &r).expect("shapes agree");
                let mut loss = |p: &[Tensor<f64>]| dot(&r, &relu_forward(&p[0]));
                compare(op.name(), &[x], &[g], &mut loss, None, LAYER_STEP, &mut rng, &mut stats);
            }
            LayerOp::MaxPool => {
                let shape = activation_shape(&mut rng);
                let x = normal_tensor(&shape, &mut rng);
                let (y, idx) = maxpool_time_forward(&x).expect("width >= 2");
                let r = normal_tensor(y.shape(), &mut rng);
                let g = maxpool_time_backward(&idx, &r).expect("shapes agree");
                let mut loss = |p: &[Tensor<f64>]| dot(&r, &maxpool_time_forward(&p[0]).expect("width >= 2").0);
                compare(op.name(), &[x], &[g], &mut loss, None, LAYER_STEP, &mut rng, &mut stats);
            }
            LayerOp::Dropout => {
                let shape = activation_shape(&mut rng);
                let x = normal_tensor(&shape, &mut rng);
                let r = normal_tensor(&shape, &mut rng);
                let d = DropoutLayer { p: rng.random_range(0.1..0.9) };
                let mask_seed: u64 = rng.random();
                let (_, mask) = d.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed));
                let g = d.backward(mask.as_ref(), &r).expect("shapes agree");
                let mut loss = |p: &[Tensor<f64>]| {
                    dot(&r, &d.forward(&p[0], Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed)).0)
                };
                compare(op.name(), &[x], &[g], &mut loss, None, LAYER_STEP, &mut rng, &mut stats);
            }
            LayerOp::Rmse => {
                let shape = [rng.random_range(1..=4), rng.random_range(1..=29)];
                let p = normal_tensor(&shape, &mut rng);
                let t = normal_tensor(&shape, &mut rng);
                let (_, g) = rmse_grad(&p, &t).expect("shapes agree");
                let mut loss = |q: &[Tensor<f64>]| rmse_grad(&q[0], &t).expect("shapes agree").0;
                compare(op.name(), &[p], &[g], &mut loss, None, LAYER_STEP, &mut rng, &mut stats);
            }
            LayerOp::FusedLoss => {
                let shape = [rng.random_range(1..=4), rng.random_range(1..=29)];
                let p: Vec<Tensor<f64>> = (0..3).map(|_| normal_tensor(&shape, &mut rng)).collect();
                let t: Vec<Tensor<f64>> = (0..3).map(|_| normal_tensor(&shape, &mut rng)).collect();
                let (w1, w2) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
                let (_, g) = fused_loss_grad(&p, &t, w1, w2).expect("shapes agree");
                let mut loss = |q: &[Tensor<f64>]| fused_loss_grad(q, &t, w1, w2).expect("shapes agree").0;
                compare(op.name(), &p, &g, &mut loss, None, LAYER_STEP, &mut rng, &mut stats);
            }
        }
    }
    stats
}

/// Checks the full model (train mode, fixed dropout masks) under the fused
/// loss, sampling `per_tensor` coordinates of every parameter tensor.
pub fn check_model(config: &ModelConfig, batch: usize, per_tensor: usize, seed: u64) -> GradCheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = InitScheme::He;
    let model = Model::<f64>::build(config, &Axis::ALL, init, &mut rng).expect("valid config");
    let x = normal_tensor(&[batch, SENSOR_ROWS, INPUT_LEN], &mut rng);
    let targets: Vec<Tensor<f64>> = (0..3).map(|_| normal_tensor(&[batch, config.out_len], &mut rng)).collect();
    let mask_seed: u64 = rng.random();
    let eval = |m: &Model<f64>| {
        let mut m = m.clone();
        let (outs, cache) = m
            .forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))
            .expect("valid input");
        (outs, cache, m)
    };
    let (outs, cache, _) = eval(&model);
    let (_, g_out) = fused_loss_grad(&outs, &targets, 10.0, 10.0).expect("shapes agree");
    let grads = model.backward(&cache, &g_out).expect("shapes agree");
    let params: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
    let mut loss = |p: &[Tensor<f64>]| {
        let mut m = model.clone();
        for (slot, v) in m.params_mut().into_iter().zip(p) {
            slot.data_mut().copy_from_slice(v.data());
        }
        let (outs, _, _) = eval(&m);
        fused_loss_grad(&outs, &targets, 10.0, 10.0).expect("shapes agree").0
    };
    let mut stats = GradCheckStats {
        trials: 1,
        ..GradCheckStats::default()
    };
    compare("model", &params, &grads, &mut loss, Some(per_tensor), MODEL_STEP, &mut rng, &mut stats);
    stats
}
