//! Feature maps used by the contrastive losses.

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::rng;

/// `f(x) = W2^T tanh(W1^T x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpEmbedding {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpEmbedding {
    /// Gaussian Xavier weights and small random biases.
    pub fn new(input: usize, hidden: usize, output: usize, seed: u64) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(invalid("embedding widths must be positive"));
        }
        let mut r = rng::seeded(seed);
        let mut normal = |rows: usize, cols: usize, std: f64| {
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(&mut r);
                std * z
            })
        };
        let w1 = normal(input, hidden, (2.0 / (input + hidden) as f64).sqrt());
        let w2 = normal(hidden, output, (2.0 / (hidden + output) as f64).sqrt());
        let b1 = normal(1, hidden, 0.1).into_shape_with_order(hidden).expect("row");
        let b2 = normal(1, output, 0.1).into_shape_with_order(output).expect("row");
        Ok(Self { w1, b1, w2, b2 })
    }

    fn check(&self) -> Result<()> {
        let (i, h) = self.w1.dim();
        let (h2, o) = self.w2.dim();
        if h != h2 || self.b1.len() != h || self.b2.len() != o || i == 0 {
            return Err(LabError::Shape("embedding weight shapes are inconsistent".into()));
        }
        Ok(())
    }

    fn hidden(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (self.w1.t().dot(&x) + &self.b1).mapv(f64::tanh)
    }
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureExtractor {
    #[default]
    Identity,
    Embedding(MlpEmbedding),
}

impl FeatureExtractor {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Self::Identity => Ok(()),
            Self::Embedding(e) => {
                e.check()?;
                if e.w1.nrows() != dim {
                    return Err(LabError::Shape(format!(
                        "embedding expects dim {}, data has {dim}",
                        e.w1.nrows()
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn features(&self, x: ArrayView1<f64>) -> Array1<f64> {
        match self {
            Self::Identity => x.to_owned(),
            Self::Embedding(e) => e.w2.t().dot(&e.hidden(x)) + &e.b2,
        }
    }

    /// `v^T J_f(x)`.
    pub fn vjp(&self, x: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64> {
        match self {
            Self::Identity => v.to_owned(),
            Self::Embedding(e) => {
                let h = e.hidden(x);
                let back = e.w2.dot(&v) * h.mapv(|a| 1.0 - a * a);
                e.w1.dot(&back)
            }
        }
    }
}

/// An extractor, optionally followed by projection onto the unit sphere.
#[derive(Debug, Clone, Copy)]
pub struct Featurizer<'a> {
    pub extractor: &'a FeatureExtractor,
    pub normalize: bool,
}

impl Featurizer<'_> {
    pub fn features(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let f = self.extractor.features(x);
        if self.normalize {
            let n = f.dot(&f).sqrt();
            if n > 0.0 {
                return f / n;
            }
        }
        f
    }

    /// `v^T J(x)`, including `(I - f f^T) / ||f||` when normalizing.
    pub fn vjp(&self, x: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64> {
        if !self.normalize {
            return self.extractor.vjp(x, v);
        }
        let f = self.extractor.features(x);
        let n = f.dot(&f).sqrt();
        if n == 0.0 {
            return self.extractor.vjp(x, v);
        }
        let unit = &f / n;
        let projected = (&v - &(&unit * unit.dot(&v))) / n;
        self.extractor.vjp(x, projected.view())
    }
}
