//! Contrastive losses on feature vectors, with gradients in the anchor.
//!
//! Similarities are inner products; `g(a, b) = exp(a^T b / tau)`.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

use crate::error::{invalid, Result};

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("tau must be positive, got {tau}")))
    }
}

/// `-log(g(a, p) / sum_k g(a, n_k))` and its gradient in `a`.
pub fn info_nce_with_grad(
    anchor: ArrayView1<f64>,
    positive: ArrayView1<f64>,
    negatives: ArrayView2<f64>,
    tau: f64,
) -> Result<(f64, Array1<f64>)> {
    check_tau(tau)?;
    if negatives.nrows() == 0 {
        return Err(invalid("info_nce needs at least one negative"));
    }
    let logits = negatives.dot(&anchor) / tau;
    let shift = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let weights = logits.mapv(|l| (l - shift).exp());
    let total = weights.sum();
    let loss = shift + total.ln() - positive.dot(&anchor) / tau;
    let soft = weights / total;
    let grad = (negatives.t().dot(&soft) - positive) / tau;
    Ok((loss, grad))
}

/// InfoNCE with the denominator over every batch row except `anchor_index`.
pub fn info_nce(
    anchor: ArrayView1<f64>,
    positive: ArrayView1<f64>,
    batch: ArrayView2<f64>,
    anchor_index: usize,
    tau: f64,
) -> Result<f64> {
    if batch.nrows() < 2 {
        return Err(invalid("info_nce needs a batch of at least two"));
    }
    if anchor_index >= batch.nrows() {
        return Err(invalid("anchor index out of range"));
    }
    let keep: Vec<usize> = (0..batch.nrows()).filter(|&k| k != anchor_index).collect();
    let negatives = batch.select(Axis(0), &keep);
    Ok(info_nce_with_grad(anchor, positive, negatives.view(), tau)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HnmParams {
    pub tau: f64,
    /// Class prior of a same-class sample; `tau_minus = 1 - tau_plus`.
    pub tau_plus: f64,
    /// Concentration of the negative reweighting.
    pub beta: f64,
    /// Batch size scaling the negative term.
    pub m: usize,
}

impl HnmParams {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(0.0..1.0).contains(&self.tau_plus) {
            return Err(invalid(format!("tau_plus must lie in [0, 1), got {}", self.tau_plus)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if self.m == 0 {
            return Err(invalid("m must be positive"));
        }
        Ok(())
    }
}

/// Hard-negative-mining loss
/// `-log(g_p / (g_p + (m / tau_minus) * max(h, e^{-1/tau})))`,
/// `h = sum_n w_n g(a, n) - tau_plus g_p`, `w` the softmax of `beta a^T n`.
/// Returns the loss and its gradient in `a`.
pub fn hnm_with_grad(
    anchor: ArrayView1<f64>,
    positive: ArrayView1<f64>,
    negatives: ArrayView2<f64>,
    params: &HnmParams,
) -> Result<(f64, Array1<f64>)> {
    params.validate()?;
    if negatives.nrows() == 0 {
        return Err(invalid("hnm loss needs at least one negative"));
    }
    let HnmParams { tau, tau_plus, beta, m } = *params;
    let scale = m as f64 / (1.0 - tau_plus);
    let sims = negatives.dot(&anchor);
    let sim_p = positive.dot(&anchor);

    let bmax = sims.fold(f64::NEG_INFINITY, |a, &v| a.max(beta * v));
    let mut w = sims.mapv(|s| (beta * s - bmax).exp());
    w /= w.sum();

    // Everything below is scaled by e^{-shift}.
    let shift = sims
        .fold(f64::NEG_INFINITY, |a, &v| a.max(v / tau))
        .max(sim_p / tau)
        .max(-1.0 / tau);
    let g = sims.mapv(|s| (s / tau - shift).exp());
    let gp = (sim_p / tau - shift).exp();
    let expect = (&w * &g).sum();
    let h = expect - tau_plus * gp;
    let floor = (-1.0 / tau - shift).exp();
    let clamped = h < floor;
    let hc = if clamped { floor } else { h };
    let denom = gp + scale * hc;
    let loss = denom.ln() - (sim_p / tau - shift);

    let p_over_tau = positive.to_owned() / tau;
    let mut num = &p_over_tau * gp;
    if !clamped {
        let mean_neg = negatives.t().dot(&w);
        let wg = &w * &g;
        let mut d_expect = negatives.t().dot(&wg) / tau;
        d_expect.scaled_add(beta, &(negatives.t().dot(&wg) - &mean_neg * wg.sum()));
        let d_h = d_expect - &p_over_tau * (tau_plus * gp);
        num.scaled_add(scale, &d_h);
    }
    let grad = num / denom - p_over_tau;
    Ok((loss, grad))
}
