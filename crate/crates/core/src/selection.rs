//! Per-class selection of generated samples.
//!
//! Every criterion scores each pool member, then keeps the `k` best members
//! of every class present in the labels. Ties go to the lower index and the
//! returned indices are sorted ascending.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::gaussian::sign0;
use crate::guidance::FeatureExtractor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Separability,
    GradientNorm,
    RobustGradientNorm,
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPool {
    pub criterion: Criterion,
    /// Class each score was grouped under.
    pub labels: Vec<usize>,
    pub scores: Vec<f64>,
    /// Sorted pool indices.
    pub selected: Vec<usize>,
}

/// Keeps `k` members per class: the smallest scores, or the largest when
/// `largest` is set.
pub fn select_per_class(scores: &[f64], labels: &[usize], k: usize, largest: bool) -> Result<Vec<usize>> {
    if scores.len() != labels.len() {
        return Err(LabError::Shape("one label per score is required".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(LabError::Domain(format!("score {i} is not finite")));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut out = Vec::with_capacity(k * groups.len());
    for (class, mut members) in groups {
        if members.len() < k {
            return Err(LabError::InsufficientClassSize { class, have: members.len(), need: k });
        }
        members.sort_by(|&a, &b| {
            let ord = scores[a].total_cmp(&scores[b]);
            let ord = if largest { ord.reverse() } else { ord };
            ord.then(a.cmp(&b))
        });
        out.extend_from_slice(&members[..k]);
    }
    out.sort_unstable();
    Ok(out)
}

fn check_pool(pool: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if pool.nrows() != labels.len() {
        return Err(LabError::Shape(format!(
            "pool has {} rows, {} labels",
            pool.nrows(),
            labels.len()
        )));
    }
    if pool.nrows() == 0 {
        return Err(invalid("pool is empty"));
    }
    Ok(())
}

/// Sum over classes of the distance from each embedded sample to the class
/// centroid.
pub fn separability_scores(
    pool: ArrayView2<f64>,
    labels: &[usize],
    extractor: &FeatureExtractor,
) -> Result<Vec<f64>> {
    check_pool(pool, labels)?;
    extractor.validate(pool.ncols())?;
    let feats: Vec<Array1<f64>> = pool.axis_iter(Axis(0)).map(|x| extractor.features(x)).collect();
    let mut sums: BTreeMap<usize, (Array1<f64>, usize)> = BTreeMap::new();
    for (f, &l) in feats.iter().zip(labels) {
        let entry = sums.entry(l).or_insert_with(|| (Array1::zeros(f.len()), 0));
        entry.0 += f;
        entry.1 += 1;
    }
    let centroids: Vec<Array1<f64>> = sums.into_values().map(|(s, n)| s / n as f64).collect();
    Ok(feats
        .iter()
        .map(|f| {
            centroids
                .iter()
                .map(|c| {
                    let d = f - c;
                    d.dot(&d).sqrt()
                })
                .sum()
        })
        .collect())
}

pub fn separability_select(
    pool: ArrayView2<f64>,
    labels: &[usize],
    extractor: &FeatureExtractor,
    k: usize,
) -> Result<ScoredPool> {
    let scores = separability_scores(pool, labels, extractor)?;
    let selected = select_per_class(&scores, labels, k, false)?;
    Ok(ScoredPool { criterion: Criterion::Separability, labels: labels.to_vec(), scores, selected })
}

pub trait ProbabilisticClassifier {
    fn class_count(&self) -> usize;
    fn probabilities(&self, x: ArrayView1<f64>) -> Array1<f64>;
}

/// Multinomial logistic regression, `p = softmax(W^T x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticFitOpts {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LogisticFitOpts {
    fn default() -> Self {
        Self { iterations: 500, learning_rate: 0.5, l2: 1e-4 }
    }
}

fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let e = logits.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

impl LogisticModel {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.ncols() != bias.len() || bias.len() < 2 {
            return Err(LabError::Shape("need at least two classes and matching bias".into()));
        }
        Ok(Self { weights, bias })
    }

    /// Full-batch gradient descent on mean cross-entropy plus `l2 ||W||^2 / 2`.
    pub fn fit(x: ArrayView2<f64>, labels: &[usize], classes: usize, opts: &LogisticFitOpts) -> Result<Self> {
        check_pool(x, labels)?;
        if classes < 2 {
            return Err(invalid("logistic model needs at least two classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(invalid(format!("label {bad} outside 0..{classes}")));
        }
        let n = x.nrows() as f64;
        let mut onehot = Array2::zeros((x.nrows(), classes));
        for (i, &l) in labels.iter().enumerate() {
            onehot[[i, l]] = 1.0;
        }
        let mut model = Self { weights: Array2::zeros((x.ncols(), classes)), bias: Array1::zeros(classes) };
        for _ in 0..opts.iterations {
            let mut probs = x.dot(&model.weights) + &model.bias;
            for mut row in probs.axis_iter_mut(Axis(0)) {
                let p = softmax(row.view());
                row.assign(&p);
            }
            let resid = probs - &onehot;
            let gw = x.t().dot(&resid) / n + &model.weights * opts.l2;
            let gb = resid.sum_axis(Axis(0)) / n;
            model.weights.scaled_add(-opts.learning_rate, &gw);
            model.bias.scaled_add(-opts.learning_rate, &gb);
        }
        Ok(model)
    }

    pub fn logits(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weights.t().dot(&x) + &self.bias
    }

    /// Squared norm of the cross-entropy parameter gradient at `(x, label)`:
    /// `||p - e_y||^2 (||x||^2 + 1)`.
    pub fn grad_norm_sq(&self, x: ArrayView1<f64>, label: usize) -> f64 {
        let mut r = softmax(self.logits(x).view());
        r[label] -= 1.0;
        r.dot(&r) * (x.dot(&x) + 1.0)
    }

    /// Worst-case linear perturbation for `label` against the strongest
    /// competing class: `x - eps * sign(w_y - w_j)`.
    pub fn attack(&self, x: ArrayView1<f64>, label: usize, eps: f64) -> Array1<f64> {
        let logits = self.logits(x);
        let rival = (0..logits.len())
            .filter(|&j| j != label)
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if logits[b] >= logits[j] => Some(b),
                _ => Some(j),
            })
            .expect("at least two classes");
        let dir = &self.weights.column(label) - &self.weights.column(rival);
        &x - &(dir.mapv(sign0) * eps)
    }
}

impl ProbabilisticClassifier for LogisticModel {
    fn class_count(&self) -> usize {
        self.bias.len()
    }

    fn probabilities(&self, x: ArrayView1<f64>) -> Array1<f64> {
        softmax(self.logits(x).view())
    }
}

/// Per-sample parameter-gradient norms; with `robust_eps`, evaluated at the
/// attacked input.
pub fn gradient_norm_scores(
    pool: ArrayView2<f64>,
    labels: &[usize],
    model: &LogisticModel,
    robust_eps: Option<f64>,
) -> Result<Vec<f64>> {
    check_pool(pool, labels)?;
    if pool.ncols() != model.weights.nrows() {
        return Err(LabError::Shape("model and pool dimensions differ".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.class_count()) {
        return Err(invalid(format!("label {bad} outside the model's classes")));
    }
    if let Some(eps) = robust_eps {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(invalid(format!("eps must be nonnegative, got {eps}")));
        }
    }
    Ok(pool
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(x, &y)| match robust_eps {
            Some(eps) => model.grad_norm_sq(model.attack(x, y, eps).view(), y).sqrt(),
            None => model.grad_norm_sq(x, y).sqrt(),
        })
        .collect())
}

pub fn gradient_norm_select(
    pool: ArrayView2<f64>,
    labels: &[usize],
    model: &LogisticModel,
    k: usize,
    robust_eps: Option<f64>,
) -> Result<ScoredPool> {
    let scores = gradient_norm_scores(pool, labels, model, robust_eps)?;
    let selected = select_per_class(&scores, labels, k, true)?;
    let criterion = if robust_eps.is_some() { Criterion::RobustGradientNorm } else { Criterion::GradientNorm };
    Ok(ScoredPool { criterion, labels: labels.to_vec(), scores, selected })
}

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn entropy(p: ArrayView1<f64>) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn argmax(p: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for j in 1..p.len() {
        if p[j] > p[best] {
            best = j;
        }
    }
    best
}

/// Entropy selection from explicit predictive distributions, one row per
/// pool member. Classes are the row argmax.
pub fn entropy_select_from_probs(probs: ArrayView2<f64>, k: usize) -> Result<ScoredPool> {
    if probs.nrows() == 0 || probs.ncols() == 0 {
        return Err(invalid("probability table is empty"));
    }
    for (i, row) in probs.axis_iter(Axis(0)).enumerate() {
        if row.iter().any(|&v| !(v >= 0.0)) || (row.sum() - 1.0).abs() > 1e-9 {
            return Err(LabError::Domain(format!("row {i} is not a probability vector")));
        }
    }
    let labels: Vec<usize> = probs.axis_iter(Axis(0)).map(argmax).collect();
    let scores: Vec<f64> = probs.axis_iter(Axis(0)).map(entropy).collect();
    let selected = select_per_class(&scores, &labels, k, false)?;
    Ok(ScoredPool { criterion: Criterion::Entropy, labels, scores, selected })
}

pub fn entropy_select(
    pool: ArrayView2<f64>,
    clf: &dyn ProbabilisticClassifier,
    k: usize,
) -> Result<ScoredPool> {
    if pool.nrows() == 0 {
        return Err(invalid("pool is empty"));
    }
    let mut probs = Array2::zeros((pool.nrows(), clf.class_count()));
    for (i, x) in pool.axis_iter(Axis(0)).enumerate() {
        probs.row_mut(i).assign(&clf.probabilities(x));
    }
    entropy_select_from_probs(probs.view(), k)
}
