//! Ancestral (DDPM) and implicit (DDIM) samplers.
//!
//! Every chain owns a seed. From it derive three streams: the starting
//! point, the per-step injected noise, and pair selection for guided
//! sampling. Reordering the chains therefore reorders the outputs without
//! changing any of them.

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::net::ScoreNet;
use super::schedule::NoiseSchedule;
use crate::error::{invalid, LabError, Result};
use crate::rng::{self, LabRng};

const INIT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
pub(crate) const PAIR_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSetup {
    pub seeds: Vec<u64>,
    /// Class per chain for conditional nets.
    pub classes: Option<Vec<usize>>,
    /// The starting point is `init_scale * N(0, I)`.
    pub init_scale: f64,
}

impl ChainSetup {
    pub fn from_seed(seed: u64, chains: usize) -> Self {
        Self {
            seeds: (0..chains as u64).map(|i| rng::derive_seed(seed, i)).collect(),
            classes: None,
            init_scale: 1.0,
        }
    }

    pub fn with_classes(mut self, classes: Vec<usize>) -> Self {
        self.classes = Some(classes);
        self
    }

    pub fn with_init_scale(mut self, scale: f64) -> Self {
        self.init_scale = scale;
        self
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// Chain `i` of the result is chain `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            seeds: perm.iter().map(|&p| self.seeds[p]).collect(),
            classes: self.classes.as_ref().map(|c| perm.iter().map(|&p| c[p]).collect()),
            init_scale: self.init_scale,
        }
    }

    pub(crate) fn validate(&self, net: &ScoreNet) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("at least one chain is required"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(invalid(format!("init_scale must be positive, got {}", self.init_scale)));
        }
        if let Some(c) = &self.classes {
            if c.len() != self.seeds.len() {
                return Err(LabError::Shape("one class per chain is required".into()));
            }
        }
        if net.is_conditional() != self.classes.is_some() {
            return Err(invalid("class labels must be given exactly when the net is conditional"));
        }
        Ok(())
    }

    pub(crate) fn class_slice(&self) -> Option<&[usize]> {
        self.classes.as_deref()
    }

    pub(crate) fn initial_points(&self, dim: usize) -> Array2<f64> {
        let mut x = Array2::zeros((self.len(), dim));
        for (row, &seed) in x.axis_iter_mut(Axis(0)).zip(&self.seeds) {
            let mut r = rng::stream(seed, INIT_STREAM);
            fill_normal(row, &mut r, self.init_scale);
        }
        x
    }

    pub(crate) fn noise_streams(&self) -> Vec<LabRng> {
        self.seeds.iter().map(|&s| rng::stream(s, NOISE_STREAM)).collect()
    }

    pub(crate) fn pair_streams(&self) -> Vec<LabRng> {
        self.seeds.iter().map(|&s| rng::stream(s, PAIR_STREAM)).collect()
    }
}

pub(crate) fn fill_normal(mut row: ArrayViewMut1<f64>, rng: &mut LabRng, scale: f64) {
    for v in row.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = scale * z;
    }
}

fn check_finite(x: &Array2<f64>, step: usize) -> Result<()> {
    for (chain, row) in x.axis_iter(Axis(0)).enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFiniteSample { step, chain });
        }
    }
    Ok(())
}

/// Ancestral sampling with `sigma_t = sqrt(1 - alpha_t)` and no noise at `t = 1`.
pub fn ddpm_sample_chains(net: &ScoreNet, sched: &NoiseSchedule, setup: &ChainSetup) -> Result<Array2<f64>> {
    setup.validate(net)?;
    let d = net.dim();
    let mut x = setup.initial_points(d);
    let mut noise_rngs = setup.noise_streams();
    let mut z = Array1::zeros(d);
    for t in (1..=sched.steps()).rev() {
        let eps = net.forward_at(x.view(), t, setup.class_slice())?;
        let a = sched.alpha(t);
        let coef = (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
        let sigma = (1.0 - a).sqrt();
        let inv_sqrt_a = 1.0 / a.sqrt();
        for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
            let e = eps.row(i);
            if t > 1 {
                fill_normal(z.view_mut(), &mut noise_rngs[i], 1.0);
            }
            for j in 0..d {
                let mut v = (row[j] - coef * e[j]) * inv_sqrt_a;
                if t > 1 {
                    v += sigma * z[j];
                }
                row[j] = v;
            }
        }
        check_finite(&x, t)?;
    }
    Ok(x)
}

pub fn ddpm_sample(net: &ScoreNet, sched: &NoiseSchedule, m: usize, seed: u64) -> Result<Array2<f64>> {
    if m == 0 {
        return Err(invalid("ddpm_sample needs m >= 1"));
    }
    ddpm_sample_chains(net, sched, &ChainSetup::from_seed(seed, m))
}

/// Coefficients of one implicit step from `alpha_bar` to `alpha_bar_prev`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimStep {
    pub sqrt_ab: f64,
    pub sqrt_one_minus_ab: f64,
    pub sqrt_ab_prev: f64,
    /// Coefficient on the predicted noise pointing back to `x_t`.
    pub direction: f64,
    pub sigma: f64,
}

impl DdimStep {
    pub fn new(ab: f64, ab_prev: f64, eta: f64) -> Self {
        let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt();
        Self {
            sqrt_ab: ab.sqrt(),
            sqrt_one_minus_ab: (1.0 - ab).sqrt(),
            sqrt_ab_prev: ab_prev.sqrt(),
            direction: (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt(),
            sigma,
        }
    }

    /// `sqrt(ab') (x - sqrt(1-ab) delta)/sqrt(ab) + dir * delta + sigma z`.
    pub fn apply(&self, mut x: ArrayViewMut1<f64>, delta: ArrayView1<f64>, z: Option<ArrayView1<f64>>) {
        for j in 0..x.len() {
            let x0 = (x[j] - self.sqrt_one_minus_ab * delta[j]) / self.sqrt_ab;
            let mut v = self.sqrt_ab_prev * x0 + self.direction * delta[j];
            if let Some(z) = z {
                v += self.sigma * z[j];
            }
            x[j] = v;
        }
    }
}

/// Subsequence steps in sampling order: `(t, t_prev)` pairs ending at 0.
pub fn ddim_transitions(subseq: &[usize], sched: &NoiseSchedule) -> Result<Vec<(usize, usize)>> {
    validate_subsequence(subseq, sched.steps())?;
    Ok((0..subseq.len())
        .rev()
        .map(|i| (subseq[i], if i == 0 { 0 } else { subseq[i - 1] }))
        .collect())
}

pub fn validate_subsequence(subseq: &[usize], steps: usize) -> Result<()> {
    if subseq.is_empty() {
        return Err(invalid("subsequence is empty"));
    }
    if subseq[0] == 0 || *subseq.last().unwrap() > steps {
        return Err(invalid(format!("subsequence must lie in 1..={steps}")));
    }
    if subseq.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("subsequence must be strictly increasing"));
    }
    Ok(())
}

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(invalid(format!("eta must lie in [0, 1], got {eta}")))
    }
}

/// Implicit sampling along the reversed subsequence, starting from its
/// last element and finishing at `alpha_bar_0 = 1`.
pub fn ddim_sample_chains(
    net: &ScoreNet,
    sched: &NoiseSchedule,
    subseq: &[usize],
    eta: f64,
    setup: &ChainSetup,
) -> Result<Array2<f64>> {
    setup.validate(net)?;
    check_eta(eta)?;
    let transitions = ddim_transitions(subseq, sched)?;
    let d = net.dim();
    let mut x = setup.initial_points(d);
    let mut noise_rngs = setup.noise_streams();
    let mut z = Array1::zeros(d);
    for (t, t_prev) in transitions {
        let eps = net.forward_at(x.view(), t, setup.class_slice())?;
        let step = DdimStep::new(sched.alpha_bar(t), sched.alpha_bar(t_prev), eta);
        for (i, row) in x.axis_iter_mut(Axis(0)).enumerate() {
            let noise = if eta > 0.0 {
                fill_normal(z.view_mut(), &mut noise_rngs[i], 1.0);
                Some(z.view())
            } else {
                None
            };
            step.apply(row, eps.row(i), noise);
        }
        check_finite(&x, t)?;
    }
    Ok(x)
}

pub fn ddim_sample(
    net: &ScoreNet,
    sched: &NoiseSchedule,
    subseq: &[usize],
    eta: f64,
    m: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if m == 0 {
        return Err(invalid("ddim_sample needs m >= 1"));
    }
    ddim_sample_chains(net, sched, subseq, eta, &ChainSetup::from_seed(seed, m))
}

/// `S` strictly increasing steps in `1..=T`, spaced quadratically:
/// `t_0 = 1`, `t_i = max(t_{i-1} + 1, 1 + floor(i^2 T / S^2))`.
pub fn quadratic_subsequence(steps: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > steps {
        return Err(invalid(format!("need 1 <= S <= T, got S = {count}, T = {steps}")));
    }
    let mut out = Vec::with_capacity(count);
    out.push(1);
    for i in 1..count {
        let quad = 1 + (i * i * steps) / (count * count);
        out.push(quad.max(out[i - 1] + 1));
    }
    Ok(out)
}
