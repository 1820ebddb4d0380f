//! Two-component Gaussian mixture model and closed-form error analysis.
//!
//! Labels are uniform on {-1, +1} and `x | y ~ N(y * mu, sigma^2 I)`. For a
//! linear classifier `sign(theta^T x)` both the clean and the l-infinity
//! robust error have closed forms in terms of the Gaussian tail function
//! `Q`, and the robust-optimal direction is the normalized hard-threshold of
//! `mu`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::rng::{self, LabRng};

/// Upper-tail probability of the standard normal, `Q(x) = P(Z > x)`.
///
/// Evaluated as `erfc(x / sqrt 2) / 2`, which keeps full relative accuracy in
/// the far tail.
pub fn q_function(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(LabError::Domain(format!("Q requires a finite argument, got {x}")));
    }
    Ok(0.5 * libm::erfc(x / std::f64::consts::SQRT_2))
}

/// `sign` with `sign(0) = 0`, as used by the exact l-infinity attack.
pub fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    mu: Array1<f64>,
    sigma: f64,
}

impl MixtureSpec {
    /// `sigma = 0` is accepted and describes a noiseless mixture; the
    /// closed-form error operations require `sigma > 0`.
    pub fn new(mu: Array1<f64>, sigma: f64) -> Result<Self> {
        if mu.is_empty() {
            return Err(invalid("mixture dimension must be at least 1"));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(invalid("mu must be finite"));
        }
        if mu.iter().all(|&v| v == 0.0) {
            return Err(invalid("mu must have a nonzero coordinate"));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid(format!("sigma must be finite and nonnegative, got {sigma}")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn require_noise(&self) -> Result<()> {
        if self.sigma > 0.0 {
            Ok(())
        } else {
            Err(LabError::Domain("closed-form errors require sigma > 0".into()))
        }
    }
}

/// Features with +-1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Array1<f64>,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(LabError::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid("labels must be -1 or +1"));
        }
        Ok(Self { features, labels })
    }

    /// Zero rows of dimension `dim`.
    pub fn empty(dim: usize) -> Self {
        Self { features: Array2::zeros((0, dim)), labels: Array1::zeros(0) }
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// `sum_i y_i x_i`.
    pub fn label_weighted_sum(&self) -> Array1<f64> {
        self.features.t().dot(&self.labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    theta: Array1<f64>,
}

impl LinearClassifier {
    pub fn new(theta: Array1<f64>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(invalid("classifier weights must be finite"));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn norm(&self) -> f64 {
        self.theta.dot(&self.theta).sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.theta.iter().map(|v| v.abs()).sum()
    }

    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        self.theta.dot(&x)
    }

    /// `sign(theta^T x)` with ties resolved to +1.
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        if self.score(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub(crate) fn require_nonzero(&self) -> Result<f64> {
        let norm = self.norm();
        if norm > 0.0 {
            Ok(norm)
        } else {
            Err(LabError::DegenerateClassifier)
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(LabError::Shape(format!("classifier has dimension {}, data {}", self.dim(), dim)))
        }
    }
}

/// Draws `n` labeled points into preallocated storage using `rng`.
pub fn sample_with_rng(spec: &MixtureSpec, n: usize, rng: &mut LabRng) -> LabeledDataset {
    let d = spec.dim();
    let mut features = Array2::zeros((n, d));
    let mut labels = Array1::zeros(n);
    for (mut row, y) in features.axis_iter_mut(Axis(0)).zip(labels.iter_mut()) {
        *y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for (x, m) in row.iter_mut().zip(spec.mu.iter()) {
            let z: f64 = rng.sample(StandardNormal);
            *x = *y * m + spec.sigma * z;
        }
    }
    LabeledDataset { features, labels }
}

/// `n` i.i.d. draws from the mixture, deterministic in `seed`.
pub fn sample_dataset(spec: &MixtureSpec, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(invalid("sample_dataset requires n >= 1"));
    }
    Ok(sample_with_rng(spec, n, &mut rng::seeded(seed)))
}

/// `Q(mu^T theta / (sigma ||theta||))`.
pub fn standard_error(clf: &LinearClassifier, spec: &MixtureSpec) -> Result<f64> {
    robust_error(clf, spec, 0.0)
}

/// `Q((mu^T theta - eps ||theta||_1) / (sigma ||theta||))`.
pub fn robust_error(clf: &LinearClassifier, spec: &MixtureSpec, eps: f64) -> Result<f64> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid(format!("eps must be finite and nonnegative, got {eps}")));
    }
    clf.check_dim(spec.dim())?;
    let norm = clf.require_nonzero()?;
    spec.require_noise()?;
    let margin = clf.theta.dot(&spec.mu) - eps * clf.l1_norm();
    q_function(margin / (spec.sigma * norm))
}

/// Coordinate-wise shrinkage `sign(mu_j) * max(|mu_j| - eps, 0)`.
pub fn hard_threshold(mu: ArrayView1<f64>, eps: f64) -> Array1<f64> {
    mu.mapv(|m| sign0(m) * (m.abs() - eps).max(0.0))
}

/// Unit-norm direction minimizing the robust error.
pub fn optimal_robust_direction(mu: ArrayView1<f64>, eps: f64) -> Result<LinearClassifier> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid(format!("eps must be finite and nonnegative, got {eps}")));
    }
    let shrunk = hard_threshold(mu, eps);
    let norm = shrunk.dot(&shrunk).sqrt();
    if norm == 0.0 {
        return Err(LabError::NoRobustDirection { eps });
    }
    LinearClassifier::new(shrunk / norm)
}

/// Worst-case l-infinity perturbation of `x` against a linear classifier:
/// `x - eps * y * sign(theta)`.
pub fn exact_attack(clf: &LinearClassifier, x: ArrayView1<f64>, y: f64, eps: f64) -> Array1<f64> {
    let mut out = x.to_owned();
    for (v, t) in out.iter_mut().zip(clf.theta.iter()) {
        *v -= eps * y * sign0(*t);
    }
    out
}

/// Fractions of `test` classified correctly without perturbation and under
/// the exact attack.
///
/// A point counts as correct when its (attacked) margin `y theta^T x` is
/// strictly positive.
pub fn empirical_accuracy(
    clf: &LinearClassifier,
    test: &LabeledDataset,
    eps: f64,
) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(invalid("empirical_accuracy requires a nonempty test set"));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid(format!("eps must be finite and nonnegative, got {eps}")));
    }
    clf.check_dim(test.dim())?;
    clf.require_nonzero()?;
    let (clean, robust) = accuracy_counts(clf, test.features.view(), test.labels.view(), eps);
    let n = test.len() as f64;
    Ok((clean as f64 / n, robust as f64 / n))
}

pub(crate) fn accuracy_counts(
    clf: &LinearClassifier,
    features: ArrayView2<f64>,
    labels: ArrayView1<f64>,
    eps: f64,
) -> (usize, usize) {
    let penalty = eps * clf.l1_norm();
    let mut clean = 0;
    let mut robust = 0;
    for (row, &y) in features.axis_iter(Axis(0)).zip(labels.iter()) {
        let margin = y * clf.theta.dot(&row);
        if margin > 0.0 {
            clean += 1;
        }
        if margin - penalty > 0.0 {
            robust += 1;
        }
    }
    (clean, robust)
}
