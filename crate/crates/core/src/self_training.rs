//! Self-training with pseudo-labeled synthetic data on the Gaussian mixture.
//!
//! One trial of the simulation pipeline:
//!
//! 1. sample `n` labeled real points and fit the intermediate classifier
//!    `theta_inter = mean(y_i x_i)`;
//! 2. sample `n_tilde` synthetic features from the mixture with mean
//!    `+-mu_tilde` and pseudo-label them with `theta_inter`;
//! 3. fit the final classifier, either by pooled label-weighted averaging or
//!    by minimizing a logistic surrogate of the robust 0-1 loss;
//! 4. score it in closed form and on a fresh real holdout.
//!
//! Trials derive their generators from `(seed, trial)`; inside a trial the
//! real, synthetic and holdout draws use separate child streams so that runs
//! which differ only in `c` or `n_tilde` see the same real data and holdout.

use std::time::Instant;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::gaussian::{
    accuracy_counts, robust_error, sample_with_rng, sign0, standard_error, LabeledDataset,
    LinearClassifier, MixtureSpec,
};
use crate::rng::{self, LabRng};

const CHUNK_ROWS: usize = 512;

/// `mu` with squared norm `norm_sq` at `angle_deg` from the all-ones direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuMode {
    pub norm_sq: f64,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthMeanMode {
    /// `mu_tilde = c * mu`
    ScaledMu,
    /// `mu_tilde = c * (mu - eps * 1)`
    RobustShifted,
    /// `mu_tilde = c * ||mu|| * u` with `u` a fixed unit vector orthogonal to `mu`
    Orthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Pooled label-weighted mean.
    Average,
    /// Logistic surrogate of the robust loss, full-batch gradient descent.
    AdversarialSurrogate,
}

/// Which samples the final estimator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainOn {
    Pooled,
    SyntheticOnly,
    RealOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateOpts {
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once the subgradient norm falls below this.
    pub tolerance: f64,
}

impl Default for SurrogateOpts {
    fn default() -> Self {
        Self { step_size: 0.1, max_iters: 2000, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfTrainConfig {
    pub d: usize,
    pub n: usize,
    pub n_tilde: usize,
    pub c: f64,
    pub eps: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub mu: MuMode,
    #[serde(default = "default_synth_mean")]
    pub synth_mean: SynthMeanMode,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    #[serde(default = "default_train_on")]
    pub train_on: TrainOn,
    /// Weight of the real-data term in the surrogate objective.
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fresh real points per trial for empirical accuracy; 0 disables.
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    #[serde(default)]
    pub surrogate: SurrogateOpts,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_synth_mean() -> SynthMeanMode {
    SynthMeanMode::ScaledMu
}
fn default_estimator() -> Estimator {
    Estimator::AdversarialSurrogate
}
fn default_train_on() -> TrainOn {
    TrainOn::SyntheticOnly
}
fn default_eta() -> f64 {
    0.5
}
fn default_trials() -> usize {
    50
}
fn default_holdout() -> usize {
    10_000
}

impl SelfTrainConfig {
    /// Every violated constraint, empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.d == 0 {
            out.push("d must be at least 1".to_string());
        }
        if self.n == 0 {
            out.push("n must be at least 1 (the intermediate classifier needs real data)".into());
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            out.push(format!("c must be positive, got {}", self.c));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            out.push(format!("eps must be nonnegative, got {}", self.eps));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            out.push(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.mu.norm_sq > 0.0 && self.mu.norm_sq.is_finite()) {
            out.push(format!("mu.norm_sq must be positive, got {}", self.mu.norm_sq));
        }
        if !(0.0..=90.0).contains(&self.mu.angle_deg) {
            out.push(format!("mu.angle_deg must lie in [0, 90], got {}", self.mu.angle_deg));
        }
        if self.d == 1 && self.mu.angle_deg != 0.0 {
            out.push("a nonzero angle needs d >= 2".into());
        }
        if self.d == 1 && self.synth_mean == SynthMeanMode::Orthogonal {
            out.push("an orthogonal synthetic mean needs d >= 2".into());
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            out.push(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if self.trials == 0 {
            out.push("trials must be at least 1".into());
        }
        if self.n_tilde == 0 && self.train_on == TrainOn::SyntheticOnly {
            out.push("train_on = synthetic-only needs n_tilde >= 1".into());
        }
        if !(self.surrogate.step_size > 0.0) || self.surrogate.max_iters == 0 {
            out.push("surrogate step_size and max_iters must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(invalid(v.join("; ")))
        }
    }

    pub fn true_spec(&self) -> Result<MixtureSpec> {
        MixtureSpec::new(build_mu(self.d, self.mu)?, self.sigma)
    }

    pub fn synthetic_spec(&self, truth: &MixtureSpec) -> Result<MixtureSpec> {
        let mu = truth.mu();
        let mean = match self.synth_mean {
            SynthMeanMode::ScaledMu => mu * self.c,
            SynthMeanMode::RobustShifted => mu.mapv(|m| self.c * (m - self.eps)),
            SynthMeanMode::Orthogonal => {
                orthogonal_unit(mu.view())? * (self.c * mu.dot(mu).sqrt())
            }
        };
        MixtureSpec::new(mean, self.sigma)
    }
}

/// Places `mu` in the plane spanned by the all-ones direction and
/// `e_1 - (1/d) 1`, rotated `angle_deg` away from all-ones.
pub fn build_mu(d: usize, mode: MuMode) -> Result<Array1<f64>> {
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    let norm = mode.norm_sq.sqrt();
    let ones = Array1::from_elem(d, 1.0 / (d as f64).sqrt());
    if mode.angle_deg == 0.0 {
        return Ok(ones * norm);
    }
    if d == 1 {
        return Err(invalid("a nonzero angle needs d >= 2"));
    }
    let mut reference = Array1::from_elem(d, -1.0 / d as f64);
    reference[0] += 1.0;
    let r_norm = reference.dot(&reference).sqrt();
    reference /= r_norm;
    let a = mode.angle_deg.to_radians();
    Ok((ones * a.cos() + reference * a.sin()) * norm)
}

/// First standard basis vector with a nonvanishing component orthogonal to
/// `v`, projected and normalized.
pub fn orthogonal_unit(v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let vv = v.dot(&v);
    for j in 0..v.len() {
        let mut e = Array1::zeros(v.len());
        e[j] = 1.0;
        let proj = v[j] / vv;
        let u = &e - &(v.to_owned() * proj);
        let n = u.dot(&u).sqrt();
        if n > 1e-8 {
            return Ok(u / n);
        }
    }
    Err(invalid("no orthogonal direction exists in dimension 1"))
}

/// `theta_inter = (1/n) sum_i y_i x_i`.
pub fn fit_intermediate(data: &LabeledDataset) -> Result<LinearClassifier> {
    if data.is_empty() {
        return Err(invalid("fit_intermediate requires a nonempty dataset"));
    }
    LinearClassifier::new(data.label_weighted_sum() / data.len() as f64)
}

/// Labels each feature row with `sign(theta^T x)`, ties to +1.
pub fn assign_pseudo_labels(
    clf: &LinearClassifier,
    features: ArrayView2<f64>,
) -> Result<LabeledDataset> {
    clf.require_nonzero()?;
    if features.ncols() != clf.dim() {
        return Err(LabError::Shape(format!(
            "classifier has dimension {}, features {}",
            clf.dim(),
            features.ncols()
        )));
    }
    let labels = features.axis_iter(Axis(0)).map(|x| clf.predict(x)).collect();
    LabeledDataset::new(features.to_owned(), labels)
}

/// Pooled label-weighted mean over real and pseudo-labeled synthetic data.
pub fn fit_final_average(real: &LabeledDataset, synth: &LabeledDataset) -> Result<LinearClassifier> {
    let total = real.len() + synth.len();
    if total == 0 {
        return Err(invalid("fit_final_average requires at least one sample"));
    }
    if !real.is_empty() && !synth.is_empty() && real.dim() != synth.dim() {
        return Err(LabError::Shape("real and synthetic dimensions differ".into()));
    }
    let sum = match (real.is_empty(), synth.is_empty()) {
        (false, true) => real.label_weighted_sum(),
        (true, false) => synth.label_weighted_sum(),
        _ => real.label_weighted_sum() + synth.label_weighted_sum(),
    };
    LinearClassifier::new(sum / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialFit {
    /// Lowest-loss iterate.
    pub classifier: LinearClassifier,
    pub converged: bool,
    pub iterations: usize,
    /// Surrogate value at the start and after every step.
    pub losses: Vec<f64>,
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// Minimizes `eta * mean_real[phi(y theta^T x - eps ||theta||_1)] + (1 - eta) * mean_synth[phi(...)]`
/// with `phi(m) = log(1 + e^-m)`,
/// starting from the pooled average. An empty set drops out and the other
/// term takes the full weight.
pub fn fit_final_adversarial(
    real: &LabeledDataset,
    synth: &LabeledDataset,
    eps: f64,
    eta: f64,
    opts: &SurrogateOpts,
) -> Result<AdversarialFit> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid(format!("eps must be nonnegative, got {eps}")));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    let mut terms: Vec<(&LabeledDataset, f64)> = Vec::with_capacity(2);
    if !real.is_empty() {
        terms.push((real, eta));
    }
    if !synth.is_empty() && eta < 1.0 {
        terms.push((synth, 1.0 - eta));
    }
    if terms.is_empty() {
        return Err(invalid("fit_final_adversarial needs a nonempty set with positive weight"));
    }
    let weight_sum: f64 = terms.iter().map(|t| t.1).sum();
    for t in terms.iter_mut() {
        t.1 /= weight_sum;
    }
    let init = if eta == 1.0 {
        fit_intermediate(real)?
    } else {
        fit_final_average(real, synth)?
    };

    let objective = |theta: &Array1<f64>| -> f64 {
        let penalty = eps * theta.iter().map(|v| v.abs()).sum::<f64>();
        terms
            .iter()
            .map(|(set, w)| {
                let margins = set.features().dot(theta) * set.labels();
                w * margins.iter().map(|&m| softplus(-(m - penalty))).sum::<f64>()
                    / set.len() as f64
            })
            .sum()
    };

    let mut theta = init.theta().clone();
    let mut loss = objective(&theta);
    let mut losses = vec![loss];
    let mut best = (loss, theta.clone());
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        let signs = theta.mapv(sign0);
        let penalty = eps * theta.iter().map(|v| v.abs()).sum::<f64>();
        let mut grad = Array1::zeros(theta.len());
        for (set, w) in &terms {
            let margins = set.features().dot(&theta) * set.labels();
            // d phi / d m = -1 / (1 + e^m)
            let dphi = margins.mapv(|m| -1.0 / (1.0 + (m - penalty).exp()));
            let scale = w / set.len() as f64;
            let coeff = &dphi * set.labels();
            grad.scaled_add(scale, &set.features().t().dot(&coeff));
            grad.scaled_add(-scale * eps * dphi.sum(), &signs);
        }
        if grad.dot(&grad).sqrt() <= opts.tolerance {
            converged = true;
            break;
        }
        theta.scaled_add(-opts.step_size, &grad);
        iterations += 1;
        loss = objective(&theta);
        if !loss.is_finite() {
            break;
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, theta.clone());
        }
    }

    Ok(AdversarialFit {
        classifier: LinearClassifier::new(best.1)?,
        converged,
        iterations,
        losses,
    })
}

/// `ceil((288 n / c) * eps^2 * sqrt(d / n))`.
pub fn theorem2_threshold(n: usize, d: usize, eps: f64, c: f64) -> Result<u64> {
    if n == 0 || d == 0 || !(eps > 0.0) || !(c > 0.0) {
        return Err(invalid("theorem2_threshold requires positive n, d, eps and c"));
    }
    let value = threshold_value(n, d, eps, c);
    // Guard against a representation error pushing an exact integer up by one.
    let rounded = value.round();
    if (value - rounded).abs() <= 1e-9 * value.max(1.0) {
        Ok(rounded as u64)
    } else {
        Ok(value.ceil() as u64)
    }
}

/// The threshold before rounding up.
pub fn threshold_value(n: usize, d: usize, eps: f64, c: f64) -> f64 {
    let n = n as f64;
    288.0 * n / c * eps * eps * (d as f64 / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub clean_closed: f64,
    pub robust_closed: f64,
    pub clean_empirical: Option<f64>,
    pub robust_empirical: Option<f64>,
    /// `1 - 2 * (pseudo-label disagreement with the generating label)`.
    pub gamma_hat: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for one trial.
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }

    fn of_optional(values: impl Iterator<Item = Option<f64>>) -> Option<Self> {
        let v: Option<Vec<f64>> = values.collect();
        v.filter(|v| !v.is_empty()).map(|v| Self::of(&v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub clean_closed: Aggregate,
    pub robust_closed: Aggregate,
    pub clean_empirical: Option<Aggregate>,
    pub robust_empirical: Option<Aggregate>,
    pub gamma_hat: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: SelfTrainConfig,
    pub seed: u64,
    pub trials: Vec<TrialRecord>,
    pub summary: ExperimentSummary,
    /// `eps^2 sqrt(d / n)`, the quantity the sample-complexity bound is
    /// conditioned on.
    pub eps2_sqrt_d_over_n: f64,
    pub elapsed_secs: f64,
}

impl ExperimentReport {
    pub fn summarize(trials: &[TrialRecord]) -> ExperimentSummary {
        ExperimentSummary {
            clean_closed: Aggregate::of(&trials.iter().map(|t| t.clean_closed).collect::<Vec<_>>()),
            robust_closed: Aggregate::of(
                &trials.iter().map(|t| t.robust_closed).collect::<Vec<_>>(),
            ),
            clean_empirical: Aggregate::of_optional(trials.iter().map(|t| t.clean_empirical)),
            robust_empirical: Aggregate::of_optional(trials.iter().map(|t| t.robust_empirical)),
            gamma_hat: Aggregate::of_optional(trials.iter().map(|t| t.gamma_hat)),
        }
    }
}

struct SyntheticDraw {
    /// Retained rows, only when the estimator needs them.
    data: Option<LabeledDataset>,
    weighted_sum: Array1<f64>,
    disagreements: usize,
}

/// Streams `count` synthetic points through the pseudo-labeler in chunks so
/// that large `n_tilde * d` never has to be resident.
fn draw_pseudo_labeled(
    spec: &MixtureSpec,
    count: usize,
    inter: &LinearClassifier,
    rng: &mut LabRng,
    keep: bool,
) -> Result<SyntheticDraw> {
    let d = spec.dim();
    let mut weighted_sum = Array1::zeros(d);
    let mut disagreements = 0;
    let mut kept_x = if keep { Some(ndarray::Array2::zeros((count, d))) } else { None };
    let mut kept_y = if keep { Some(Array1::zeros(count)) } else { None };
    let mut done = 0;
    while done < count {
        let rows = CHUNK_ROWS.min(count - done);
        let chunk = sample_with_rng(spec, rows, rng);
        for (i, (x, &truth)) in
            chunk.features().axis_iter(Axis(0)).zip(chunk.labels().iter()).enumerate()
        {
            let y = inter.predict(x);
            if y != truth {
                disagreements += 1;
            }
            weighted_sum.scaled_add(y, &x);
            if let (Some(kx), Some(ky)) = (kept_x.as_mut(), kept_y.as_mut()) {
                kx.row_mut(done + i).assign(&x);
                ky[done + i] = y;
            }
        }
        done += rows;
    }
    let data = match (kept_x, kept_y) {
        (Some(x), Some(y)) => Some(LabeledDataset::new(x, y)?),
        _ => None,
    };
    Ok(SyntheticDraw { data, weighted_sum, disagreements })
}

fn holdout_accuracy(
    clf: &LinearClassifier,
    spec: &MixtureSpec,
    count: usize,
    eps: f64,
    rng: &mut LabRng,
) -> (f64, f64) {
    let mut clean = 0;
    let mut robust = 0;
    let mut done = 0;
    while done < count {
        let rows = CHUNK_ROWS.min(count - done);
        let chunk = sample_with_rng(spec, rows, rng);
        let (c, r) = accuracy_counts(clf, chunk.features().view(), chunk.labels().view(), eps);
        clean += c;
        robust += r;
        done += rows;
    }
    (clean as f64 / count as f64, robust as f64 / count as f64)
}

/// Runs one trial of the pipeline with the generator derived from
/// `(cfg.seed, trial)`.
pub fn run_trial(cfg: &SelfTrainConfig, truth: &MixtureSpec, trial: usize) -> Result<TrialRecord> {
    let trial_seed = rng::derive_seed(cfg.seed, trial as u64);
    let mut real_rng = rng::stream(trial_seed, 0);
    let mut synth_rng = rng::stream(trial_seed, 1);
    let mut holdout_rng = rng::stream(trial_seed, 2);

    let real = sample_with_rng(truth, cfg.n, &mut real_rng);
    let inter = fit_intermediate(&real)?;

    let synth_spec = cfg.synthetic_spec(truth)?;
    let needs_rows = cfg.estimator == Estimator::AdversarialSurrogate;
    let synth = if cfg.n_tilde > 0 {
        inter.require_nonzero()?;
        Some(draw_pseudo_labeled(&synth_spec, cfg.n_tilde, &inter, &mut synth_rng, needs_rows)?)
    } else {
        None
    };
    let gamma_hat = synth
        .as_ref()
        .map(|s| 1.0 - 2.0 * s.disagreements as f64 / cfg.n_tilde as f64);

    let (final_clf, converged) = match cfg.estimator {
        Estimator::Average => {
            let real_sum = real.label_weighted_sum();
            let (sum, count) = match (cfg.train_on, synth.as_ref()) {
                (TrainOn::RealOnly, _) | (TrainOn::Pooled, None) => (real_sum, cfg.n),
                (TrainOn::SyntheticOnly, Some(s)) => (s.weighted_sum.clone(), cfg.n_tilde),
                (TrainOn::Pooled, Some(s)) => (real_sum + &s.weighted_sum, cfg.n + cfg.n_tilde),
                (TrainOn::SyntheticOnly, None) => {
                    return Err(invalid("synthetic-only estimator with n_tilde = 0"))
                }
            };
            (LinearClassifier::new(sum / count as f64)?, true)
        }
        Estimator::AdversarialSurrogate => {
            let empty = LabeledDataset::empty(cfg.d);
            let synth_data = synth.as_ref().and_then(|s| s.data.as_ref()).unwrap_or(&empty);
            let (r, s, eta) = match cfg.train_on {
                TrainOn::RealOnly => (&real, &empty, 1.0),
                TrainOn::SyntheticOnly => (&empty, synth_data, 0.5),
                TrainOn::Pooled => (&real, synth_data, cfg.eta),
            };
            let fit = fit_final_adversarial(r, s, cfg.eps, eta, &cfg.surrogate)?;
            (fit.classifier, fit.converged)
        }
    };

    let clean_closed = 1.0 - standard_error(&final_clf, truth)?;
    let robust_closed = 1.0 - robust_error(&final_clf, truth, cfg.eps)?;
    let (clean_empirical, robust_empirical) = if cfg.holdout > 0 {
        let (c, r) = holdout_accuracy(&final_clf, truth, cfg.holdout, cfg.eps, &mut holdout_rng);
        (Some(c), Some(r))
    } else {
        (None, None)
    };

    Ok(TrialRecord {
        trial,
        seed: trial_seed,
        clean_closed,
        robust_closed,
        clean_empirical,
        robust_empirical,
        gamma_hat,
        converged,
    })
}

/// Runs all trials and aggregates them.
pub fn run_gaussian_experiment(cfg: &SelfTrainConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let truth = cfg.true_spec()?;
    let trials = (0..cfg.trials)
        .map(|t| run_trial(cfg, &truth, t))
        .collect::<Result<Vec<_>>>()?;
    let summary = ExperimentReport::summarize(&trials);
    Ok(ExperimentReport {
        config: cfg.clone(),
        seed: cfg.seed,
        trials,
        summary,
        eps2_sqrt_d_over_n: cfg.eps * cfg.eps * (cfg.d as f64 / cfg.n as f64).sqrt(),
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ds(x: ndarray::Array2<f64>, y: Vec<f64>) -> LabeledDataset {
        LabeledDataset::new(x, Array1::from(y)).unwrap()
    }

    #[test]
    fn intermediate_examples() {
        let data = ds(array![[1.0, 2.0], [-1.0, -2.0]], vec![1.0, -1.0]);
        assert_eq!(fit_intermediate(&data).unwrap().theta(), &array![1.0, 2.0]);

        let single = ds(array![[3.0, -1.0]], vec![-1.0]);
        assert_eq!(fit_intermediate(&single).unwrap().theta(), &array![-3.0, 1.0]);

        assert!(fit_intermediate(&LabeledDataset::empty(2)).is_err());
    }

    #[test]
    fn pseudo_label_examples() {
        let clf = LinearClassifier::new(array![1.0, 0.0]).unwrap();
        let labeled = assign_pseudo_labels(&clf, array![[3.0, -7.0], [0.0, 5.0], [-2.0, 1.0]].view())
            .unwrap();
        assert_eq!(labeled.labels(), &array![1.0, 1.0, -1.0]);

        let zero = LinearClassifier::new(array![0.0, 0.0]).unwrap();
        assert_eq!(
            assign_pseudo_labels(&zero, array![[1.0, 1.0]].view()),
            Err(LabError::DegenerateClassifier)
        );
    }

    #[test]
    fn final_average_examples() {
        let real = ds(array![[1.0, 0.0]], vec![1.0]);
        let synth = ds(array![[0.0, 1.0]], vec![1.0]);
        assert_eq!(fit_final_average(&real, &synth).unwrap().theta(), &array![0.5, 0.5]);

        let real = ds(array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]], vec![1.0, -1.0, 1.0]);
        let empty = LabeledDataset::empty(2);
        assert_eq!(fit_final_average(&real, &empty).unwrap(), fit_intermediate(&real).unwrap());
        assert!(fit_final_average(&empty, &empty).is_err());
    }

    #[test]
    fn final_average_scales_linearly() {
        let real = ds(array![[1.0, 2.0], [0.5, -1.0]], vec![1.0, -1.0]);
        let synth = ds(array![[0.2, 0.4], [-3.0, 1.0]], vec![1.0, 1.0]);
        let base = fit_final_average(&real, &synth).unwrap();
        let real2 = ds(real.features() * 2.0, real.labels().to_vec());
        let synth2 = ds(synth.features() * 2.0, synth.labels().to_vec());
        let scaled = fit_final_average(&real2, &synth2).unwrap();
        assert_eq!(scaled.theta(), &(base.theta() * 2.0));
        for x in [array![1.0, -0.3], array![-0.7, 2.0], array![0.1, 0.1]] {
            assert_eq!(base.predict(x.view()), scaled.predict(x.view()));
        }
    }

    #[test]
    fn surrogate_descends_on_separable_1d_data() {
        let real = ds(array![[1.0], [-1.0]], vec![1.0, -1.0]);
        let fit = fit_final_adversarial(
            &real,
            &LabeledDataset::empty(1),
            0.0,
            1.0,
            &SurrogateOpts::default(),
        )
        .unwrap();
        assert!(fit.classifier.theta()[0] > 0.0);
        for w in fit.losses.windows(2) {
            assert!(w[1] < w[0], "surrogate increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn surrogate_with_full_real_weight_ignores_synthetic() {
        let real = ds(array![[1.0, 0.5], [-0.8, -1.2], [0.3, -0.1]], vec![1.0, -1.0, 1.0]);
        let synth = ds(array![[5.0, -5.0], [2.0, 9.0]], vec![-1.0, 1.0]);
        let opts = SurrogateOpts { max_iters: 200, ..Default::default() };
        let a = fit_final_adversarial(&real, &LabeledDataset::empty(2), 0.2, 1.0, &opts).unwrap();
        let b = fit_final_adversarial(&real, &synth, 0.2, 1.0, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn surrogate_rejects_bad_arguments() {
        let real = ds(array![[1.0]], vec![1.0]);
        let empty = LabeledDataset::empty(1);
        let opts = SurrogateOpts::default();
        assert!(fit_final_adversarial(&real, &empty, -1.0, 0.5, &opts).is_err());
        assert!(fit_final_adversarial(&real, &empty, 0.1, 0.0, &opts).is_err());
        assert!(fit_final_adversarial(&empty, &empty, 0.1, 0.5, &opts).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(theorem2_threshold(100, 10_000, 0.5, 1.0).unwrap(), 72_000);
        assert_eq!(theorem2_threshold(4, 6000, 0.5, 1.0).unwrap(), 11_155);
        let a = threshold_value(37, 900, 0.3, 1.0);
        let b = threshold_value(37, 900, 0.3, 2.0);
        assert!((a - 2.0 * b).abs() < 1e-12 * a);
        assert!(theorem2_threshold(0, 10, 0.5, 1.0).is_err());
    }

    #[test]
    fn mu_construction() {
        let mu = build_mu(2, MuMode { norm_sq: 2.0, angle_deg: 0.0 }).unwrap();
        assert!((mu[0] - 1.0).abs() < 1e-15 && (mu[1] - 1.0).abs() < 1e-15);

        for angle in [30.0, 60.0, 90.0] {
            let mu = build_mu(5, MuMode { norm_sq: 4.0, angle_deg: angle }).unwrap();
            assert!((mu.dot(&mu) - 4.0).abs() < 1e-12);
            let cos = mu.sum() / (2.0 * 5f64.sqrt());
            assert!((cos - f64::cos(angle.to_radians())).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_unit_is_orthogonal() {
        let v = array![1.0, 1.0, 1.0];
        let u = orthogonal_unit(v.view()).unwrap();
        assert!(u.dot(&v).abs() < 1e-14);
        assert!((u.dot(&u) - 1.0).abs() < 1e-14);
        assert!(orthogonal_unit(array![2.0].view()).is_err());
    }

    #[test]
    fn config_violations_are_all_reported() {
        let cfg = SelfTrainConfig {
            d: 0,
            n: 0,
            n_tilde: 0,
            c: -1.0,
            eps: 0.1,
            sigma: 1.0,
            mu: MuMode { norm_sq: 1.0, angle_deg: 120.0 },
            synth_mean: SynthMeanMode::ScaledMu,
            estimator: Estimator::Average,
            train_on: TrainOn::SyntheticOnly,
            eta: 0.0,
            trials: 0,
            seed: 0,
            holdout: 0,
            surrogate: SurrogateOpts::default(),
        };
        assert!(cfg.violations().len() >= 7, "{:?}", cfg.violations());
    }

    #[test]
    fn aggregate_matches_definition() {
        let a = Aggregate::of(&[1.0, 2.0, 4.0]);
        assert!((a.mean - 7.0 / 3.0).abs() < 1e-15);
        assert!((a.std - (7.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Aggregate::of(&[0.3]).std, 0.0);
    }
}
