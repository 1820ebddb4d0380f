//! The two-class Gaussian benchmark and the statistics used to compare
//! generated sample sets.

use cdp_core::gaussian::{sample_dataset, MixtureSpec};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::config::DataSection;

/// Labeled benchmark points; class 1 is centred at `+mean * 1`.
pub struct Benchmark {
    pub points: Array2<f64>,
    pub classes: Vec<usize>,
}

pub fn class_centres(data: &DataSection) -> [Array1<f64>; 2] {
    let c = Array1::from_elem(data.dim, data.mean);
    [-&c, c]
}

pub fn generate(data: &DataSection, seed: u64) -> cdp_core::Result<Benchmark> {
    let spec = MixtureSpec::new(Array1::from_elem(data.dim, data.mean), data.sigma)?;
    let ds = sample_dataset(&spec, data.count, seed)?;
    let classes = ds.labels().iter().map(|&y| usize::from(y > 0.0)).collect();
    Ok(Benchmark { points: ds.features().clone(), classes })
}

/// Index of the nearest centre, ties to the lower index.
pub fn nearest_centre(points: ArrayView2<f64>, centres: &[Array1<f64>]) -> Vec<usize> {
    points
        .axis_iter(Axis(0))
        .map(|x| {
            let mut best = (0, f64::INFINITY);
            for (k, c) in centres.iter().enumerate() {
                let d = &x - c;
                let dist = d.dot(&d);
                if dist < best.1 {
                    best = (k, dist);
                }
            }
            best.0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub class: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    /// Trace of the sample covariance, divisor `count - 1`.
    pub cov_trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Separation {
    pub classes: Vec<ClassStats>,
    /// Distance between the first two class means.
    pub centroid_distance: f64,
    /// Mean over classes of the covariance trace.
    pub within_trace: f64,
}

/// Per-class statistics for `classes` in `0..class_count`.
pub fn separation(points: ArrayView2<f64>, classes: &[usize], class_count: usize) -> Separation {
    let stats: Vec<ClassStats> = (0..class_count)
        .map(|class| {
            let rows: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == class).collect();
            let sel = points.select(Axis(0), &rows);
            let mean = sel.mean_axis(Axis(0)).unwrap_or_else(|| Array1::from_elem(points.ncols(), f64::NAN));
            let cov_trace = if rows.len() > 1 { sel.var_axis(Axis(0), 1.0).sum() } else { f64::NAN };
            ClassStats { class, count: rows.len(), mean: mean.to_vec(), cov_trace }
        })
        .collect();
    let centroid_distance = if stats.len() >= 2 {
        stats[0].mean.iter().zip(&stats[1].mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    } else {
        f64::NAN
    };
    let within_trace = stats.iter().map(|s| s.cov_trace).sum::<f64>() / stats.len() as f64;
    Separation { classes: stats, centroid_distance, within_trace }
}
