//! Fully connected noise-prediction network with hand-written backprop.
//!
//! Input row: `[x, t/T, sin(pi 2^k t/T), cos(pi 2^k t/T) for k < F/2, one_hot(class)]`.
//! Hidden layers use SiLU; the output layer is linear with width `dim`.
//! Parameters live in one flat vector, layer by layer, weight (row-major,
//! `fan_in x fan_out`) before bias.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetArch {
    pub dim: usize,
    pub hidden: Vec<usize>,
    /// Number of sinusoidal time features; must be even.
    pub time_features: usize,
    /// One-hot width for conditional nets, 0 for unconditional.
    pub classes: usize,
    /// `T`, used to scale the step index into `[0, 1]`.
    pub horizon: usize,
}

impl NetArch {
    /// Three hidden layers of 128 with 8 time features.
    pub fn standard(dim: usize, horizon: usize, classes: usize) -> Self {
        Self { dim, hidden: vec![128, 128, 128], time_features: 8, classes, horizon }
    }

    pub fn input_dim(&self) -> usize {
        self.dim + 1 + self.time_features + self.classes
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("dim must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            problems.push("hidden layers must be nonempty with positive widths");
        }
        if !self.time_features.is_multiple_of(2) {
            problems.push("time_features must be even");
        }
        if self.horizon == 0 {
            problems.push("horizon must be at least 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(invalid(problems.join("; ")))
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.hidden);
        w.push(self.dim);
        w
    }

    /// Ordered parameter blocks.
    pub fn layout(&self) -> Vec<ParamBlock> {
        let widths = self.widths();
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (l, pair) in widths.windows(2).enumerate() {
            blocks.push(ParamBlock {
                name: format!("layer{l}.weight"),
                shape: vec![pair[0], pair[1]],
                offset,
            });
            offset += pair[0] * pair[1];
            blocks.push(ParamBlock { name: format!("layer{l}.bias"), shape: vec![pair[1]], offset });
            offset += pair[1];
        }
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    arch: NetArch,
    params: Array1<f64>,
}

/// Activations kept from a forward pass for backprop.
pub struct ForwardCache {
    /// Layer inputs, starting with the embedded input.
    inputs: Vec<Array2<f64>>,
    /// Hidden pre-activations.
    pre: Vec<Array2<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

impl ScoreNet {
    /// Gaussian Xavier initialization, zero biases.
    pub fn new(arch: NetArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::seeded(seed);
        let mut params = Array1::zeros(arch.param_count());
        for block in arch.layout() {
            if block.shape.len() == 2 {
                let std = (2.0 / (block.shape[0] + block.shape[1]) as f64).sqrt();
                for v in params.slice_mut(s![block.offset..block.offset + block.len()]) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = std * z;
                }
            }
        }
        Ok(Self { arch, params })
    }

    /// All parameters zero, so the output is identically zero.
    pub fn zeros(arch: NetArch) -> Result<Self> {
        arch.validate()?;
        let params = Array1::zeros(arch.param_count());
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: NetArch, params: Array1<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(LabError::Shape(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.dim
    }

    pub fn params(&self) -> &Array1<f64> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Array1<f64> {
        &mut self.params
    }

    pub fn is_conditional(&self) -> bool {
        self.arch.classes > 0
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let widths = self.arch.widths();
        let mut offset = 0;
        for p in widths.windows(2).take(l) {
            offset += p[0] * p[1] + p[1];
        }
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let w = self
            .params
            .slice(s![offset..offset + fan_in * fan_out])
            .into_shape_with_order((fan_in, fan_out))
            .expect("contiguous weight block");
        let b = self.params.slice(s![offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out]);
        (w, b)
    }

    fn layer_count(&self) -> usize {
        self.arch.hidden.len() + 1
    }

    /// Builds the input rows from points, steps and optional classes.
    pub fn embed(
        &self,
        x: ArrayView2<f64>,
        steps: &[usize],
        classes: Option<&[usize]>,
    ) -> Result<Array2<f64>> {
        let a = &self.arch;
        if x.ncols() != a.dim {
            return Err(LabError::Shape(format!("net expects dim {}, got {}", a.dim, x.ncols())));
        }
        if steps.len() != x.nrows() {
            return Err(LabError::Shape("one step index per row is required".into()));
        }
        match (a.classes, classes) {
            (0, None) => {}
            (0, Some(_)) => return Err(invalid("unconditional net given class labels")),
            (_, None) => return Err(invalid("conditional net needs class labels")),
            (k, Some(c)) => {
                if c.len() != x.nrows() {
                    return Err(LabError::Shape("one class label per row is required".into()));
                }
                if let Some(bad) = c.iter().find(|&&c| c >= k) {
                    return Err(invalid(format!("class {bad} outside 0..{k}")));
                }
            }
        }
        let mut input = Array2::zeros((x.nrows(), a.input_dim()));
        input.slice_mut(s![.., ..a.dim]).assign(&x);
        for (i, &t) in steps.iter().enumerate() {
            let u = t as f64 / a.horizon as f64;
            let mut row = input.row_mut(i);
            row[a.dim] = u;
            for k in 0..a.time_features / 2 {
                let arg = std::f64::consts::PI * (1u64 << k) as f64 * u;
                row[a.dim + 1 + 2 * k] = arg.sin();
                row[a.dim + 2 + 2 * k] = arg.cos();
            }
            if let Some(c) = classes {
                row[a.dim + 1 + a.time_features + c[i]] = 1.0;
            }
        }
        Ok(input)
    }

    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        steps: &[usize],
        classes: Option<&[usize]>,
    ) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x, steps, classes)?.0)
    }

    /// Forward pass with every row at step `t`.
    pub fn forward_at(
        &self,
        x: ArrayView2<f64>,
        t: usize,
        classes: Option<&[usize]>,
    ) -> Result<Array2<f64>> {
        self.forward(x, &vec![t; x.nrows()], classes)
    }

    pub fn forward_cached(
        &self,
        x: ArrayView2<f64>,
        steps: &[usize],
        classes: Option<&[usize]>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let mut a = self.embed(x, steps, classes)?;
        let mut inputs = Vec::with_capacity(self.layer_count());
        let mut pre = Vec::with_capacity(self.layer_count() - 1);
        for l in 0..self.layer_count() {
            let (w, b) = self.layer(l);
            let mut z = a.dot(&w);
            z += &b;
            inputs.push(a);
            if l + 1 == self.layer_count() {
                return Ok((z, ForwardCache { inputs, pre }));
            }
            a = z.mapv(silu);
            pre.push(z);
        }
        unreachable!("at least one layer")
    }

    /// Parameter gradient of `sum(grad_out * output)`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Array1<f64> {
        let mut grads = Array1::zeros(self.params.len());
        let widths = self.arch.widths();
        let mut offsets = Vec::with_capacity(self.layer_count());
        let mut offset = 0;
        for p in widths.windows(2) {
            offsets.push(offset);
            offset += p[0] * p[1] + p[1];
        }
        let mut delta = grad_out.to_owned();
        for l in (0..self.layer_count()).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            {
                let gw = grads.slice_mut(s![off..off + fan_in * fan_out]);
                let mut gw: ArrayViewMut2<f64> =
                    gw.into_shape_with_order((fan_in, fan_out)).expect("contiguous block");
                gw.assign(&cache.inputs[l].t().dot(&delta));
            }
            grads
                .slice_mut(s![off + fan_in * fan_out..off + fan_in * fan_out + fan_out])
                .assign(&delta.sum_axis(Axis(0)));
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut back = delta.dot(&w.t());
                back.zip_mut_with(&cache.pre[l - 1], |g, &z| *g *= silu_grad(z));
                delta = back;
            }
        }
        grads
    }
}
