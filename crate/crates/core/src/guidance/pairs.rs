//! Positive and negative pair selection for guided sampling.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::rng::LabRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairStrategy {
    /// Positive: own previous iterate. Negatives: the rest of the batch.
    Vanilla,
    /// Positive: a random real sample (same class when labels exist).
    /// Negatives: the rest of the batch.
    RealPositive,
    /// Positive: a random other batch member. Negatives: `m` random real samples.
    RealNegative,
    /// Positive: own previous iterate. Negatives: batch members of another class.
    ClassConditional,
}

/// Real data available to the real-* strategies.
#[derive(Debug, Clone, Copy)]
pub struct RealData<'a> {
    pub points: ArrayView2<'a, f64>,
    pub labels: Option<&'a [usize]>,
}

/// The frozen batch at one step.
#[derive(Debug, Clone, Copy)]
pub struct BatchState<'a> {
    pub current: ArrayView2<'a, f64>,
    pub previous: ArrayView2<'a, f64>,
    pub classes: Option<&'a [usize]>,
    pub real: Option<RealData<'a>>,
    /// Order in which batch members are listed as negatives.
    pub order: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub positive: Array1<f64>,
    pub negatives: Array2<f64>,
    /// Labels of the negatives, when known.
    pub negative_labels: Option<Vec<usize>>,
}

fn gather(points: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), points.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&points.row(r));
    }
    out
}

fn require_real<'a>(state: &BatchState<'a>, strategy: PairStrategy) -> Result<RealData<'a>> {
    let real = state
        .real
        .ok_or_else(|| invalid(format!("{strategy:?} pairs need real data")))?;
    if real.points.nrows() == 0 {
        return Err(invalid("real data is empty"));
    }
    if real.points.ncols() != state.current.ncols() {
        return Err(LabError::Shape("real data dimension differs from the batch".into()));
    }
    Ok(real)
}

pub fn select_pairs(
    strategy: PairStrategy,
    state: &BatchState,
    anchor: usize,
    rng: &mut LabRng,
) -> Result<Pair> {
    let m = state.current.nrows();
    if anchor >= m {
        return Err(invalid(format!("anchor {anchor} outside batch of {m}")));
    }
    if state.previous.dim() != state.current.dim() || state.order.len() != m {
        return Err(LabError::Shape("batch state arrays disagree".into()));
    }
    if let Some(c) = state.classes {
        if c.len() != m {
            return Err(LabError::Shape("one class per chain is required".into()));
        }
    }
    let others: Vec<usize> = state.order.iter().copied().filter(|&k| k != anchor).collect();
    let labels_of = |rows: &[usize]| state.classes.map(|c| rows.iter().map(|&r| c[r]).collect());

    match strategy {
        PairStrategy::Vanilla => Ok(Pair {
            positive: state.previous.row(anchor).to_owned(),
            negatives: gather(state.current, &others),
            negative_labels: labels_of(&others),
        }),
        PairStrategy::RealPositive => {
            let real = require_real(state, strategy)?;
            let candidates: Vec<usize> = match (state.classes, real.labels) {
                (Some(c), Some(l)) => (0..l.len()).filter(|&j| l[j] == c[anchor]).collect(),
                _ => (0..real.points.nrows()).collect(),
            };
            if candidates.is_empty() {
                return Err(LabError::InsufficientClassSize {
                    class: state.classes.map_or(0, |c| c[anchor]),
                    have: 0,
                    need: 1,
                });
            }
            let pick = candidates[rng.random_range(0..candidates.len())];
            Ok(Pair {
                positive: real.points.row(pick).to_owned(),
                negatives: gather(state.current, &others),
                negative_labels: labels_of(&others),
            })
        }
        PairStrategy::RealNegative => {
            let real = require_real(state, strategy)?;
            if m < 2 {
                return Err(invalid("real-negative pairs need at least two chains"));
            }
            let pick = others[rng.random_range(0..others.len())];
            let rows: Vec<usize> = (0..m).map(|_| rng.random_range(0..real.points.nrows())).collect();
            Ok(Pair {
                positive: state.current.row(pick).to_owned(),
                negatives: gather(real.points, &rows),
                negative_labels: real.labels.map(|l| rows.iter().map(|&r| l[r]).collect()),
            })
        }
        PairStrategy::ClassConditional => {
            let classes = state
                .classes
                .ok_or_else(|| invalid("class-conditional pairs need chain labels"))?;
            let rows: Vec<usize> =
                others.into_iter().filter(|&k| classes[k] != classes[anchor]).collect();
            if rows.is_empty() {
                return Err(LabError::EmptyNegativeSet { anchor });
            }
            Ok(Pair {
                positive: state.previous.row(anchor).to_owned(),
                negatives: gather(state.current, &rows),
                negative_labels: labels_of(&rows),
            })
        }
    }
}
