//! Contrastive-guided implicit sampling.
//!
//! Each step computes, for every chain from the frozen batch,
//! `delta_i = eps(x_i, t) + lambda * grad_x loss(x_i, positive_i, negatives_i)`,
//! then moves all chains with the implicit update driven by `delta`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::extractor::{FeatureExtractor, Featurizer};
use super::losses::{hnm_with_grad, info_nce_with_grad, HnmParams};
use super::pairs::{select_pairs, BatchState, Pair, PairStrategy, RealData};
use crate::diffusion::sample::{check_eta, ddim_transitions, fill_normal, ChainSetup, DdimStep};
use crate::diffusion::{NoiseSchedule, ScoreNet};
use crate::error::{invalid, LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    InfoNce,
    Hnm,
    /// InfoNCE with same-class negatives removed.
    ConditionalInfoNce,
    /// HNM with same-class negatives removed.
    ConditionalHnm,
}

impl LossKind {
    pub fn is_conditional(self) -> bool {
        matches!(self, Self::ConditionalInfoNce | Self::ConditionalHnm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub loss: LossKind,
    pub tau: f64,
    pub tau_plus: f64,
    pub beta: f64,
    pub lambda: f64,
    pub strategy: PairStrategy,
    pub extractor: FeatureExtractor,
    /// Project features onto the unit sphere before similarities.
    pub normalize: bool,
    /// Stochasticity of the implicit sampler, in `[0, 1]`.
    pub eta: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Hnm,
            tau: 10.0,
            tau_plus: 0.1,
            beta: 1.0,
            lambda: 0.0,
            strategy: PairStrategy::Vanilla,
            extractor: FeatureExtractor::Identity,
            normalize: true,
            eta: 0.0,
        }
    }
}

impl GuidanceConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            out.push(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.tau_plus) {
            out.push(format!("tau_plus must lie in [0, 1), got {}", self.tau_plus));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            out.push(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            out.push(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            out.push(format!("eta must lie in [0, 1], got {}", self.eta));
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

    pub fn featurizer(&self) -> Featurizer<'_> {
        Featurizer { extractor: &self.extractor, normalize: self.normalize }
    }
}

/// Loss and its gradient in anchor features, with the pair already in
/// feature space.
fn feature_loss_and_grad(
    cfg: &GuidanceConfig,
    anchor_feature: ArrayView1<f64>,
    pair: &Pair,
    anchor: usize,
    anchor_label: Option<usize>,
    batch_size: usize,
) -> Result<(f64, Array1<f64>)> {
    let filtered;
    let negatives = if cfg.loss.is_conditional() {
        let label = anchor_label
            .ok_or_else(|| invalid("conditional losses need the anchor's class label"))?;
        let labels = pair
            .negative_labels
            .as_ref()
            .ok_or_else(|| invalid("conditional losses need labels on the negatives"))?;
        let keep: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] != label).collect();
        if keep.is_empty() {
            return Err(LabError::EmptyNegativeSet { anchor });
        }
        filtered = pair.negatives.select(Axis(0), &keep);
        filtered.view()
    } else {
        pair.negatives.view()
    };
    if negatives.nrows() == 0 {
        return Err(LabError::EmptyNegativeSet { anchor });
    }
    match cfg.loss {
        LossKind::InfoNce | LossKind::ConditionalInfoNce => {
            info_nce_with_grad(anchor_feature, pair.positive.view(), negatives, cfg.tau)
        }
        LossKind::Hnm | LossKind::ConditionalHnm => {
            let params =
                HnmParams { tau: cfg.tau, tau_plus: cfg.tau_plus, beta: cfg.beta, m: batch_size };
            hnm_with_grad(anchor_feature, pair.positive.view(), negatives, &params)
        }
    }
}

fn featurize_rows(feat: &Featurizer, x: ndarray::ArrayView2<f64>) -> Array2<f64> {
    let first = feat.features(x.row(0));
    let mut out = Array2::zeros((x.nrows(), first.len()));
    out.row_mut(0).assign(&first);
    for i in 1..x.nrows() {
        out.row_mut(i).assign(&feat.features(x.row(i)));
    }
    out
}

/// Loss value and its gradient in the anchor's input coordinates. The
/// positive and negatives are raw points, treated as constants.
pub fn contrastive_grad(
    cfg: &GuidanceConfig,
    anchor: ArrayView1<f64>,
    pair: &Pair,
    anchor_label: Option<usize>,
    batch_size: usize,
) -> Result<(f64, Array1<f64>)> {
    cfg.validate()?;
    cfg.extractor.validate(anchor.len())?;
    let feat = cfg.featurizer();
    if pair.negatives.nrows() == 0 {
        return Err(LabError::EmptyNegativeSet { anchor: 0 });
    }
    let feature_pair = Pair {
        positive: feat.features(pair.positive.view()),
        negatives: featurize_rows(&feat, pair.negatives.view()),
        negative_labels: pair.negative_labels.clone(),
    };
    let fa = feat.features(anchor);
    let (loss, gf) = feature_loss_and_grad(cfg, fa.view(), &feature_pair, 0, anchor_label, batch_size)?;
    Ok((loss, feat.vjp(anchor, gf.view())))
}

/// Chains listed by ascending seed, ties by position.
fn canonical_order(setup: &ChainSetup) -> Vec<usize> {
    let mut order: Vec<usize> = (0..setup.len()).collect();
    order.sort_by_key(|&i| (setup.seeds[i], i));
    order
}

enum Mode {
    Sample,
    /// Stop at the first step at or below `T/2` and report mean norms.
    Probe,
}

enum Outcome {
    Samples(Array2<f64>),
    Norms { score: f64, guidance: f64 },
}

fn run(
    net: &ScoreNet,
    sched: &NoiseSchedule,
    subseq: &[usize],
    cfg: &GuidanceConfig,
    setup: &ChainSetup,
    real: Option<RealData>,
    mode: Mode,
) -> Result<Outcome> {
    cfg.validate()?;
    check_eta(cfg.eta)?;
    setup.validate(net)?;
    let m = setup.len();
    if m < 2 {
        return Err(invalid("guided sampling needs at least two chains"));
    }
    let d = net.dim();
    cfg.extractor.validate(d)?;
    let needs_labels =
        cfg.loss.is_conditional() || cfg.strategy == PairStrategy::ClassConditional;
    if needs_labels && setup.classes.is_none() {
        return Err(invalid("conditional guidance needs a class per chain"));
    }
    let transitions = ddim_transitions(subseq, sched)?;
    let feat = cfg.featurizer();
    let real_features = match real {
        Some(r) if r.points.nrows() > 0 => {
            if r.points.ncols() != d {
                return Err(LabError::Shape("real data dimension differs from the net".into()));
            }
            Some(featurize_rows(&feat, r.points))
        }
        _ => None,
    };
    let order = canonical_order(setup);
    let classes = setup.class_slice();

    let mut x = setup.initial_points(d);
    let mut prev = x.clone();
    let mut noise_rngs = setup.noise_streams();
    let mut pair_rngs = setup.pair_streams();
    let mut z = Array1::zeros(d);
    let half = sched.steps() / 2;

    for (t, t_prev) in transitions {
        let eps = net.forward_at(x.view(), t, classes)?;
        let cur_f = featurize_rows(&feat, x.view());
        let prev_f = featurize_rows(&feat, prev.view());
        let state = BatchState {
            current: cur_f.view(),
            previous: prev_f.view(),
            classes,
            real: real_features.as_ref().map(|f| RealData {
                points: f.view(),
                labels: real.and_then(|r| r.labels),
            }),
            order: &order,
        };
        let mut grads = Array2::zeros((m, d));
        for i in 0..m {
            let pair = select_pairs(cfg.strategy, &state, i, &mut pair_rngs[i])?;
            let (_, gf) =
                feature_loss_and_grad(cfg, cur_f.row(i), &pair, i, classes.map(|c| c[i]), m)?;
            grads.row_mut(i).assign(&feat.vjp(x.row(i), gf.view()));
        }

        if matches!(mode, Mode::Probe) && t <= half.max(1) {
            let mean_norm = |a: &Array2<f64>| {
                a.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).sum::<f64>() / m as f64
            };
            return Ok(Outcome::Norms { score: mean_norm(&eps), guidance: mean_norm(&grads) });
        }

        let delta = if cfg.lambda == 0.0 {
            eps
        } else {
            let mut delta = eps;
            delta.scaled_add(cfg.lambda, &grads);
            delta
        };
        prev.assign(&x);
        let step = DdimStep::new(sched.alpha_bar(t), sched.alpha_bar(t_prev), cfg.eta);
        for (i, row) in x.axis_iter_mut(Axis(0)).enumerate() {
            let noise = if cfg.eta > 0.0 {
                fill_normal(z.view_mut(), &mut noise_rngs[i], 1.0);
                Some(z.view())
            } else {
                None
            };
            step.apply(row, delta.row(i), noise);
        }
        for (chain, row) in x.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(LabError::GuidanceDiverged { step: t, chain });
            }
        }
    }
    match mode {
        Mode::Sample => Ok(Outcome::Samples(x)),
        Mode::Probe => Err(invalid("subsequence never reaches the midpoint step")),
    }
}

/// Guided implicit sampling in lockstep over the batch. With `lambda = 0`
/// the output equals `ddim_sample_chains` on the same setup bit for bit.
pub fn contrastive_dp_sample(
    net: &ScoreNet,
    sched: &NoiseSchedule,
    subseq: &[usize],
    cfg: &GuidanceConfig,
    setup: &ChainSetup,
    real: Option<RealData>,
) -> Result<Array2<f64>> {
    match run(net, sched, subseq, cfg, setup, real, Mode::Sample)? {
        Outcome::Samples(x) => Ok(x),
        Outcome::Norms { .. } => unreachable!("sampling mode returns samples"),
    }
}

/// Picks `lambda` so that at the first step at or below `T/2` of an
/// unguided run the mean guidance norm is `target_ratio` times the mean
/// score norm.
pub fn calibrate_lambda(
    net: &ScoreNet,
    sched: &NoiseSchedule,
    subseq: &[usize],
    cfg: &GuidanceConfig,
    setup: &ChainSetup,
    real: Option<RealData>,
    target_ratio: f64,
) -> Result<f64> {
    if !(target_ratio > 0.0 && target_ratio.is_finite()) {
        return Err(invalid(format!("target_ratio must be positive, got {target_ratio}")));
    }
    let probe_cfg = GuidanceConfig { lambda: 0.0, ..cfg.clone() };
    match run(net, sched, subseq, &probe_cfg, setup, real, Mode::Probe)? {
        Outcome::Norms { score, guidance } => {
            if !(guidance > 0.0) {
                return Err(LabError::Domain("guidance gradient vanishes at the midpoint".into()));
            }
            Ok(target_ratio * score / guidance)
        }
        Outcome::Samples(_) => unreachable!("probe mode returns norms"),
    }
}
