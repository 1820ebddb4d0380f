//! Noise schedules and the forward noising marginal.
//!
//! Indices are 1-based: `alpha(t)` and `alpha_bar(t)` for `t` in `1..=T`,
//! with `alpha_bar(0) = 1` so that samplers can step to the clean end.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};

const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `beta_t` evenly spaced from `beta_start` to `beta_end`.
    LinearBeta { steps: usize, beta_start: f64, beta_end: f64 },
    /// Squared-cosine `alpha_bar` with offset `s`, per-step betas clipped at 0.999.
    Cosine { steps: usize, offset: f64 },
}

impl ScheduleSpec {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        Self::LinearBeta { steps, beta_start, beta_end }
    }

    /// The `[1e-4, 0.02]` range at `T = 1000`, rescaled by `1000 / T` so that
    /// shorter chains still end near pure noise.
    pub fn scaled_linear(steps: usize) -> Self {
        let scale = 1000.0 / steps.max(1) as f64;
        Self::linear(steps, (1e-4 * scale).min(MAX_BETA), (0.02 * scale).min(MAX_BETA))
    }

    pub fn cosine(steps: usize) -> Self {
        Self::Cosine { steps, offset: 0.008 }
    }

    pub fn steps(&self) -> usize {
        match *self {
            Self::LinearBeta { steps, .. } | Self::Cosine { steps, .. } => steps,
        }
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn build_schedule(spec: ScheduleSpec) -> Result<NoiseSchedule> {
    let steps = spec.steps();
    if steps == 0 {
        return Err(invalid("schedule needs at least one step"));
    }
    let betas: Vec<f64> = match spec {
        ScheduleSpec::LinearBeta { beta_start, beta_end, .. } => (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
        ScheduleSpec::Cosine { offset, .. } => {
            if !(offset >= 0.0 && offset.is_finite()) {
                return Err(invalid(format!("cosine offset must be nonnegative, got {offset}")));
            }
            let f = |t: f64| {
                let v = ((t / steps as f64 + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2)
                    .cos();
                v * v
            };
            (1..=steps).map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).min(MAX_BETA)).collect()
        }
    };
    let mut alpha = Vec::with_capacity(steps);
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for (i, beta) in betas.into_iter().enumerate() {
        let a = 1.0 - beta;
        if !(a > 0.0 && a < 1.0) {
            return Err(invalid(format!("alpha_{} = {a} lies outside (0, 1)", i + 1)));
        }
        acc *= a;
        alpha.push(a);
        alpha_bar.push(acc);
    }
    if alpha_bar.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("cumulative alpha underflows to zero"));
    }
    Ok(NoiseSchedule { spec, alpha, alpha_bar })
}

impl NoiseSchedule {
    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    /// Per-step retention `alpha_t`, `1 <= t <= T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha(t)
    }

    /// Cumulative `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(invalid(format!("step {t} outside 1..={}", self.steps())))
        } else {
            Ok(())
        }
    }
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise`.
pub fn forward_noise(
    x0: ArrayView1<f64>,
    t: usize,
    noise: ArrayView1<f64>,
    sched: &NoiseSchedule,
) -> Result<Array1<f64>> {
    sched.check_step(t)?;
    if x0.len() != noise.len() {
        return Err(LabError::Shape(format!(
            "x0 has length {}, noise {}",
            x0.len(),
            noise.len()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(&x0).and(&noise).map_collect(|&x, &e| a * x + b * e))
}

/// Row-wise `forward_noise` with a step per row.
pub fn forward_noise_batch(
    x0: ArrayView2<f64>,
    steps: &[usize],
    noise: ArrayView2<f64>,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    if x0.dim() != noise.dim() || steps.len() != x0.nrows() {
        return Err(LabError::Shape("batch, steps and noise disagree".into()));
    }
    let mut out = Array2::zeros(x0.dim());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        row.assign(&forward_noise(x0.row(i), steps[i], noise.row(i), sched)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_step_schedule() {
        let s = build_schedule(ScheduleSpec::linear(1, 0.1, 0.1)).unwrap();
        assert_eq!(s.alphas(), &[0.9]);
        assert_eq!(s.alpha_bars(), &[0.9]);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn default_schedule_reaches_noise() {
        let s = build_schedule(ScheduleSpec::default()).unwrap();
        // Oracle: direct product of (1 - beta_t).
        let direct: f64 = (0..1000).map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).product();
        assert!((s.alpha_bar(1000) - direct).abs() < 1e-15);
        assert!(s.alpha_bar(1000) < 5e-5);
        for spec in [ScheduleSpec::scaled_linear(100), ScheduleSpec::cosine(100)] {
            let s = build_schedule(spec).unwrap();
            assert!(s.alpha_bar(100) <= 0.05, "{spec:?}: {}", s.alpha_bar(100));
        }
    }

    #[test]
    fn schedules_are_strictly_decreasing_products() {
        for spec in [
            ScheduleSpec::default(),
            ScheduleSpec::scaled_linear(100),
            ScheduleSpec::cosine(50),
            ScheduleSpec::linear(10, 0.05, 0.3),
        ] {
            let s = build_schedule(spec).unwrap();
            let mut prod = 1.0;
            for t in 1..=s.steps() {
                prod *= s.alpha(t);
                assert!((s.alpha_bar(t) - prod).abs() < 1e-12);
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn invalid_schedules() {
        assert!(build_schedule(ScheduleSpec::linear(0, 0.1, 0.1)).is_err());
        assert!(build_schedule(ScheduleSpec::linear(3, 0.1, 1.0)).is_err());
        assert!(build_schedule(ScheduleSpec::linear(3, 0.0, 0.1)).is_err());
    }

    #[test]
    fn forward_noise_examples() {
        let s = build_schedule(ScheduleSpec::linear(10, 0.05, 0.3)).unwrap();
        let x0 = array![1.0, -2.0];
        let ab = s.alpha_bar(4);
        let out = forward_noise(x0.view(), 4, array![0.0, 0.0].view(), &s).unwrap();
        assert_eq!(out, x0.mapv(|v| ab.sqrt() * v));
        let e = array![0.3, 0.7];
        let out = forward_noise(array![0.0, 0.0].view(), 4, e.view(), &s).unwrap();
        assert_eq!(out, e.mapv(|v| (1.0 - ab).sqrt() * v));
        assert!(forward_noise(x0.view(), 0, e.view(), &s).is_err());
        assert!(forward_noise(x0.view(), 11, e.view(), &s).is_err());
    }
}
