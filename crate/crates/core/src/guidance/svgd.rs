//! Stein variational update with an RBF kernel, kept as a comparison
//! baseline for the repulsion the contrastive term provides.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, LabError, Result};

/// `k(a, b) = exp(-||a - b||^2 / (2 h^2))` and its gradient in `a`.
pub fn rbf_kernel(a: ArrayView1<f64>, b: ArrayView1<f64>, bandwidth: f64) -> (f64, Array1<f64>) {
    let diff = &a - &b;
    let h2 = bandwidth * bandwidth;
    let k = (-diff.dot(&diff) / (2.0 * h2)).exp();
    (k, diff * (-k / h2))
}

/// `x_i + step * (1/n) sum_j [k(x_j, x_i) s_j + grad_{x_j} k(x_j, x_i)]`.
pub fn svgd_update(
    particles: ArrayView2<f64>,
    scores: ArrayView2<f64>,
    bandwidth: f64,
    step: f64,
) -> Result<Array2<f64>> {
    let n = particles.nrows();
    if n == 0 {
        return Err(invalid("svgd needs at least one particle"));
    }
    if scores.dim() != particles.dim() {
        return Err(LabError::Shape("scores must match particles".into()));
    }
    if !(bandwidth > 0.0) || !(step > 0.0) {
        return Err(invalid("bandwidth and step must be positive"));
    }
    let mut out = particles.to_owned();
    for i in 0..n {
        let mut phi = Array1::zeros(particles.ncols());
        for j in 0..n {
            let (k, grad) = rbf_kernel(particles.row(j), particles.row(i), bandwidth);
            phi.scaled_add(k, &scores.row(j));
            phi += &grad;
        }
        out.row_mut(i).scaled_add(step / n as f64, &phi);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_particle_follows_score() {
        let x = array![[0.5, -1.0]];
        let s = array![[2.0, 3.0]];
        let out = svgd_update(x.view(), s.view(), 1.0, 0.1).unwrap();
        assert_eq!(out, array![[0.7, -0.7]]);
    }

    #[test]
    fn two_particles_repel_symmetrically() {
        let x = array![[0.0, 0.0], [1.0, 0.5]];
        let out = svgd_update(x.view(), Array2::zeros((2, 2)).view(), 0.8, 0.3).unwrap();
        let d0 = &out.row(0) - &x.row(0);
        let d1 = &out.row(1) - &x.row(1);
        assert!((&d0 + &d1).iter().all(|v| v.abs() < 1e-15));
        assert!(d0.dot(&(&x.row(1) - &x.row(0))) < 0.0);
    }

    #[test]
    fn kernel_gradient_matches_finite_differences() {
        let a = array![0.3, -0.2, 1.1];
        let b = array![-0.4, 0.5, 0.9];
        let (_, g) = rbf_kernel(a.view(), b.view(), 0.7);
        for j in 0..3 {
            let h = 1e-6;
            let mut ap = a.clone();
            ap[j] += h;
            let mut am = a.clone();
            am[j] -= h;
            let fd = (rbf_kernel(ap.view(), b.view(), 0.7).0 - rbf_kernel(am.view(), b.view(), 0.7).0)
                / (2.0 * h);
            assert!((fd - g[j]).abs() / fd.abs().max(1e-8) < 1e-4);
        }
    }
}
