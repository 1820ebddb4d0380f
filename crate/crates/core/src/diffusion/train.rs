//! Noise-prediction loss, its gradient, and a minibatch training loop.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::net::{NetArch, ScoreNet};
use super::schedule::{forward_noise_batch, NoiseSchedule};
use crate::error::{invalid, LabError, Result};
use crate::rng::{self, LabRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    /// `p -= lr * g`
    Sgd,
    /// `v = momentum * v + g; p -= lr * v`
    Momentum { momentum: f64 },
    /// Bias-corrected Adam.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Self::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOpts {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainOpts {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::adam(),
        }
    }
}

impl TrainOpts {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.iterations == 0 {
            problems.push("iterations must be positive".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        match self.optimizer {
            Optimizer::Sgd => {}
            Optimizer::Momentum { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    problems.push(format!("momentum must lie in [0, 1), got {momentum}"));
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                    problems.push("adam needs beta1, beta2 in [0, 1) and epsilon > 0".to_string());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(invalid(problems.join("; ")))
        }
    }
}

/// Loss `mean_i ||noise_i - net(x_t_i, t_i)||^2` at explicit steps and noise,
/// with its parameter gradient.
pub fn denoise_loss_and_grads_at(
    net: &ScoreNet,
    batch: ArrayView2<f64>,
    classes: Option<&[usize]>,
    steps: &[usize],
    noise: ArrayView2<f64>,
    sched: &NoiseSchedule,
) -> Result<(f64, Array1<f64>)> {
    if batch.nrows() == 0 {
        return Err(invalid("denoising loss needs a nonempty batch"));
    }
    let noisy = forward_noise_batch(batch, steps, noise, sched)?;
    let (pred, cache) = net.forward_cached(noisy.view(), steps, classes)?;
    let resid = &pred - &noise;
    let b = batch.nrows() as f64;
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / b;
    let grad_out = resid * (2.0 / b);
    Ok((loss, net.backward(&cache, grad_out.view())))
}

/// Draws `t ~ U{1..T}` then standard normal noise per row, in row order.
pub fn draw_steps_and_noise(
    rows: usize,
    dim: usize,
    sched: &NoiseSchedule,
    rng: &mut LabRng,
) -> (Vec<usize>, Array2<f64>) {
    let mut steps = Vec::with_capacity(rows);
    let mut noise = Array2::zeros((rows, dim));
    for mut row in noise.axis_iter_mut(Axis(0)) {
        steps.push(rng.random_range(1..=sched.steps()));
        for v in row.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
    }
    (steps, noise)
}

pub fn denoise_loss_and_grads(
    net: &ScoreNet,
    batch: ArrayView2<f64>,
    classes: Option<&[usize]>,
    sched: &NoiseSchedule,
    rng: &mut LabRng,
) -> Result<(f64, Array1<f64>)> {
    let (steps, noise) = draw_steps_and_noise(batch.nrows(), net.dim(), sched, rng);
    denoise_loss_and_grads_at(net, batch, classes, &steps, noise.view(), sched)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Minibatch loss at every iteration.
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    /// Mean of the last `min(100, iterations)` minibatch losses.
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub net: ScoreNet,
    pub report: TrainReport,
}

struct OptimizerState {
    first: Array1<f64>,
    second: Array1<f64>,
    step: i32,
}

/// Trains a fresh net of architecture `arch` on `data`. Initialization and
/// minibatches derive from `opts.seed`.
pub fn train_score_net(
    arch: &NetArch,
    data: ArrayView2<f64>,
    labels: Option<&[usize]>,
    sched: &NoiseSchedule,
    opts: &TrainOpts,
) -> Result<TrainedNet> {
    opts.validate()?;
    if data.nrows() == 0 {
        return Err(invalid("training data is empty"));
    }
    if data.ncols() != arch.dim {
        return Err(LabError::Shape(format!("arch dim {} vs data dim {}", arch.dim, data.ncols())));
    }
    if let Some(l) = labels {
        if l.len() != data.nrows() {
            return Err(LabError::Shape("one label per data row is required".into()));
        }
    }
    let mut net = ScoreNet::new(arch.clone(), rng::derive_seed(opts.seed, 0))?;
    let mut rng = rng::stream(opts.seed, 1);
    let n_params = net.params().len();
    let mut state = OptimizerState {
        first: Array1::zeros(n_params),
        second: Array1::zeros(n_params),
        step: 0,
    };
    let mut losses = Vec::with_capacity(opts.iterations);
    let mut batch = Array2::zeros((opts.batch_size, arch.dim));
    let mut batch_labels = vec![0usize; opts.batch_size];

    for iteration in 0..opts.iterations {
        for (i, mut row) in batch.axis_iter_mut(Axis(0)).enumerate() {
            let j = rng.random_range(0..data.nrows());
            row.assign(&data.row(j));
            if let Some(l) = labels {
                batch_labels[i] = l[j];
            }
        }
        let classes = labels.map(|_| batch_labels.as_slice());
        let (loss, grads) = denoise_loss_and_grads(&net, batch.view(), classes, sched, &mut rng)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(LabError::TrainingDiverged { iteration, loss });
        }
        losses.push(loss);
        apply_update(net.params_mut(), &grads, opts, &mut state);
    }

    let tail = losses.len().min(100);
    let final_loss = losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64;
    let initial_loss = losses[0];
    Ok(TrainedNet { net, report: TrainReport { losses, initial_loss, final_loss } })
}

fn apply_update(
    params: &mut Array1<f64>,
    grads: &Array1<f64>,
    opts: &TrainOpts,
    state: &mut OptimizerState,
) {
    let lr = opts.learning_rate;
    match opts.optimizer {
        Optimizer::Sgd => params.scaled_add(-lr, grads),
        Optimizer::Momentum { momentum } => {
            state.first.zip_mut_with(grads, |v, &g| *v = momentum * *v + g);
            params.scaled_add(-lr, &state.first);
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            state.step += 1;
            let c1 = 1.0 - beta1.powi(state.step);
            let c2 = 1.0 - beta2.powi(state.step);
            for i in 0..params.len() {
                let g = grads[i];
                state.first[i] = beta1 * state.first[i] + (1.0 - beta1) * g;
                state.second[i] = beta2 * state.second[i] + (1.0 - beta2) * g * g;
                let m = state.first[i] / c1;
                let v = state.second[i] / c2;
                params[i] -= lr * m / (v.sqrt() + epsilon);
            }
        }
    }
}
