//! Runs one configured experiment and writes its report files.

use std::path::Path;
use std::time::Instant;

use cdp_core::diffusion::{
    build_schedule, ddim_sample_chains, ddpm_sample_chains, quadratic_subsequence, train_score_net, ChainSetup,
    NetArch, NoiseSchedule, ScoreNet,
};
use cdp_core::guidance::{
    calibrate_lambda, contrastive_dp_sample, FeatureExtractor, GuidanceConfig, MlpEmbedding, PairStrategy, RealData,
};
use cdp_core::rng;
use cdp_core::selection::{
    entropy_select, gradient_norm_select, separability_select, Criterion, LogisticModel, ProbabilisticClassifier,
};
use cdp_core::self_training::{run_gaussian_experiment, theorem2_threshold};
use ndarray::{Array2, Axis};
use serde::Serialize;
use serde_json::json;

use crate::benchmark::{self, Benchmark};
use crate::checkpoint::{load_checkpoint, save_checkpoint, TrainingMeta};
use crate::config::{DataSection, EmbeddingSection, ExperimentConfig, ExperimentKind, SamplerKind, SamplingSection};
use crate::error::{RunError, RunResult};
use crate::report::{fmt_f64, fmt_opt, read_sample_table, sample_table, ReportFiles, ReportWriter, Table};

/// Stream of the global seed that generates benchmark data.
const DATA_STREAM: u64 = 0xDA7A;

pub const TRIALS_TABLE: &str = "trials.csv";
pub const LOSSES_TABLE: &str = "losses.csv";
pub const SAMPLES_TABLE: &str = "samples.csv";
pub const SELECTED_TABLE: &str = "selected.csv";
pub const METRICS_TABLE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Benchmark points for a run with global `seed`.
pub fn benchmark_data(data: &DataSection, seed: u64) -> RunResult<Benchmark> {
    benchmark::generate(data, rng::derive_seed(seed, DATA_STREAM)).map_err(|e| RunError::lab("benchmark data", e))
}

pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> RunResult<ReportFiles> {
    cfg.validate()?;
    let start = Instant::now();
    let mut writer = ReportWriter::create(out)?;
    let results = match cfg.kind {
        ExperimentKind::SimulateGaussian => simulate_gaussian(cfg, &mut writer)?,
        ExperimentKind::TrainDiffusion => train_diffusion(cfg, &mut writer)?,
        ExperimentKind::Sample => sample(cfg, &mut writer)?,
        ExperimentKind::GuidedSample => guided_sample(cfg, &mut writer)?,
        ExperimentKind::Select => select(cfg, &mut writer)?,
        ExperimentKind::Evaluate => evaluate(cfg, &mut writer)?,
    };
    writer.finish(cfg, &results, start.elapsed().as_secs_f64())
}

fn simulate_gaussian(cfg: &ExperimentConfig, writer: &mut ReportWriter) -> RunResult<serde_json::Value> {
    let g = cfg.gaussian.as_ref().expect("validated");
    let report = run_gaussian_experiment(g).map_err(|e| RunError::lab("simulate-gaussian", e))?;
    let mut t = Table::new(&[
        "trial",
        "seed",
        "clean_closed",
        "robust_closed",
        "clean_empirical",
        "robust_empirical",
        "gamma_hat",
        "converged",
    ]);
    for r in &report.trials {
        t.row(&[
            r.trial.to_string(),
            r.seed.to_string(),
            fmt_f64(r.clean_closed),
            fmt_f64(r.robust_closed),
            fmt_opt(r.clean_empirical),
            fmt_opt(r.robust_empirical),
            fmt_opt(r.gamma_hat),
            r.converged.to_string(),
        ]);
    }
    writer.table(TRIALS_TABLE, &t)?;
    let threshold = if g.eps > 0.0 { theorem2_threshold(g.n, g.d, g.eps, g.c).ok() } else { None };
    Ok(json!({
        "summary": report.summary,
        "eps2_sqrt_d_over_n": report.eps2_sqrt_d_over_n,
        "n_tilde_threshold": threshold,
    }))
}

fn train_diffusion(cfg: &ExperimentConfig, writer: &mut ReportWriter) -> RunResult<serde_json::Value> {
    let data = cfg.data.as_ref().expect("validated");
    let net_cfg = cfg.net.clone().unwrap_or_default();
    let sched = build_schedule(cfg.schedule.expect("validated")).map_err(|e| RunError::lab("schedule", e))?;
    let opts = cfg.train.unwrap_or_default();
    let bench = benchmark_data(data, cfg.seed)?;
    let arch = NetArch {
        dim: data.dim,
        hidden: net_cfg.hidden.clone(),
        time_features: net_cfg.time_features,
        classes: if net_cfg.conditional { 2 } else { 0 },
        horizon: sched.steps(),
    };
    let labels = net_cfg.conditional.then_some(bench.classes.as_slice());
    let trained = train_score_net(&arch, bench.points.view(), labels, &sched, &opts)
        .map_err(|e| RunError::lab("train-diffusion", e))?;

    let mut t = Table::new(&["iteration", "loss"]);
    for (i, l) in trained.report.losses.iter().enumerate() {
        t.row(&[i.to_string(), fmt_f64(*l)]);
    }
    writer.table(LOSSES_TABLE, &t)?;
    let meta = TrainingMeta {
        opts,
        initial_loss: trained.report.initial_loss,
        final_loss: trained.report.final_loss,
    };
    let path = writer.dir().join(CHECKPOINT_FILE);
    save_checkpoint(&trained.net, &sched, Some(&meta), &path)?;
    writer.record(path);
    Ok(json!({
        "initial_loss": meta.initial_loss,
        "final_loss": meta.final_loss,
        "parameters": arch.param_count(),
        "training_points": bench.points.nrows(),
    }))
}

/// Chains with round-robin classes for conditional nets.
fn chain_setup(net: &ScoreNet, s: &SamplingSection, seed: u64) -> ChainSetup {
    let setup = ChainSetup::from_seed(seed, s.chains).with_init_scale(s.init_scale);
    let classes = net.arch().classes;
    if classes > 0 {
        setup.with_classes((0..s.chains).map(|i| i % classes).collect())
    } else {
        setup
    }
}

fn subsequence(s: &SamplingSection, sched: &NoiseSchedule) -> RunResult<Vec<usize>> {
    let steps = sched.steps();
    match s.steps {
        Some(count) => quadratic_subsequence(steps, count).map_err(|e| RunError::lab("sampling.steps", e)),
        None => Ok((1..=steps).collect()),
    }
}

#[derive(Serialize)]
struct SampleResults {
    chains: usize,
    dim: usize,
    sampler: SamplerKind,
    subsequence: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibrated: Option<bool>,
}

fn sample(cfg: &ExperimentConfig, writer: &mut ReportWriter) -> RunResult<serde_json::Value> {
    let s = cfg.sampling.as_ref().expect("validated");
    let ckpt = load_checkpoint(&s.checkpoint)?;
    let setup = chain_setup(&ckpt.net, s, cfg.seed);
    let (points, subseq) = match s.sampler {
        SamplerKind::Ddpm => (
            ddpm_sample_chains(&ckpt.net, &ckpt.schedule, &setup).map_err(|e| RunError::lab("ddpm sampling", e))?,
            None,
        ),
        SamplerKind::Ddim => {
            let subseq = subsequence(s, &ckpt.schedule)?;
            let x = ddim_sample_chains(&ckpt.net, &ckpt.schedule, &subseq, s.eta, &setup)
                .map_err(|e| RunError::lab("ddim sampling", e))?;
            (x, Some(subseq))
        }
    };
    writer.table(SAMPLES_TABLE, &sample_table(points.view(), setup.classes.as_deref()))?;
    let results = SampleResults {
        chains: s.chains,
        dim: points.ncols(),
        sampler: s.sampler,
        subsequence: subseq,
        lambda: None,
        calibrated: None,
    };
    Ok(serde_json::to_value(results).expect("results serialize"))
}

fn embedding(e: &EmbeddingSection, dim: usize) -> RunResult<FeatureExtractor> {
    MlpEmbedding::new(dim, e.hidden, e.output, e.seed)
        .map(FeatureExtractor::Embedding)
        .map_err(|err| RunError::lab("embedding", err))
}

/// Consecutive chain groups of `size`; a remainder shorter than two joins
/// the previous group.
pub fn chain_groups(total: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < total {
        let mut end = (start + size).min(total);
        if total - end < 2 {
            end = total;
        }
        out.push(start..end);
        start = end;
    }
    out
}

fn guided_sample(cfg: &ExperimentConfig, writer: &mut ReportWriter) -> RunResult<serde_json::Value> {
    let s = cfg.sampling.as_ref().expect("validated");
    let mut guidance: GuidanceConfig = cfg.guidance.clone().expect("resolved");
    let ckpt = load_checkpoint(&s.checkpoint)?;
    let dim = ckpt.net.dim();
    if let Some(e) = &cfg.embedding {
        guidance.extractor = embedding(e, dim)?;
    }
    let subseq = subsequence(s, &ckpt.schedule)?;
    let setup = chain_setup(&ckpt.net, s, cfg.seed);
    let real_needed = matches!(guidance.strategy, PairStrategy::RealPositive | PairStrategy::RealNegative);
    let bench = match (&cfg.data, real_needed) {
        (Some(d), true) => Some(benchmark_data(d, cfg.seed)?),
        (None, true) => {
            return Err(RunError::Config(crate::error::ConfigError::Invalid(vec![
                "data: real-data pair strategies need a data section".into(),
            ])))
        }
        _ => None,
    };
    let real = bench.as_ref().map(|b| RealData { points: b.points.view(), labels: Some(&b.classes) });

    let groups = chain_groups(s.chains, s.group);
    let group_setup = |r: &std::ops::Range<usize>| ChainSetup {
        seeds: setup.seeds[r.clone()].to_vec(),
        classes: setup.classes.as_ref().map(|c| c[r.clone()].to_vec()),
        init_scale: setup.init_scale,
    };
    if groups.iter().any(|g| g.len() < 2) {
        return Err(RunError::Config(crate::error::ConfigError::Invalid(vec![
            "sampling.chains: guided sampling needs at least 2 chains".into(),
        ])));
    }
    let calibrated = cfg.calibration.is_some();
    if let Some(c) = &cfg.calibration {
        guidance.lambda = calibrate_lambda(
            &ckpt.net,
            &ckpt.schedule,
            &subseq,
            &guidance,
            &group_setup(&groups[0]),
            real,
            c.ratio,
        )
        .map_err(|e| RunError::lab("lambda calibration", e))?;
    }
    let mut points = Array2::zeros((s.chains, dim));
    for g in &groups {
        let x = contrastive_dp_sample(&ckpt.net, &ckpt.schedule, &subseq, &guidance, &group_setup(g), real)
            .map_err(|e| RunError::lab("guided sampling", e))?;
        points.slice_mut(ndarray::s![g.clone(), ..]).assign(&x);
    }
    writer.table(SAMPLES_TABLE, &sample_table(points.view(), setup.classes.as_deref()))?;
    let results = SampleResults {
        chains: s.chains,
        dim,
        sampler: SamplerKind::Ddim,
        subsequence: Some(subseq),
        lambda: Some(guidance.lambda),
        calibrated: Some(calibrated),
    };
    Ok(serde_json::to_value(results).expect("results serialize"))
}

fn select(cfg: &ExperimentConfig, writer: &mut ReportWriter) -> RunResult<serde_json::Value> {
    let sel = cfg.selection.as_ref().expect("validated");
    let data = cfg.data.as_ref().expect("resolved");
    let pool = read_sample_table(&sel.samples)?;
    if pool.points.ncols() != data.dim {
        return Err(RunError::Data {
            path: sel.samples.clone(),
            message: format!("samples have dimension {}, data section {}", pool.points.ncols(), data.dim),
        });
    }
    let bench = benchmark_data(data, cfg.seed)?;
    let model = LogisticModel::fit(bench.points.view(), &bench.classes, 2, &sel.fit)
        .map_err(|e| RunError::lab("reference classifier", e))?;
    let labels: Vec<usize> = match &pool.classes {
        Some(c) => c.clone(),
        None => pool
            .points
            .axis_iter(Axis(0))
            .map(|x| {
                let p = model.probabilities(x);
                usize::from(p[1] > p[0])
            })
            .collect(),
    };
    let lab = |e| RunError::lab("selection", e);
    let scored = match sel.criterion {
        Criterion::Separability => {
            let extractor = match &cfg.embedding {
                Some(e) => embedding(e, data.dim)?,
                None => FeatureExtractor::Identity,
            };
            separability_select(pool.points.view(), &labels, &extractor, sel.k).map_err(lab)?
        }
        Criterion::GradientNorm => gradient_norm_select(pool.points.view(), &labels, &model, sel.k, None).map_err(lab)?,
        Criterion::RobustGradientNorm => {
            gradient_norm_select(pool.points.view(), &labels, &model, sel.k, Some(sel.robust_eps)).map_err(lab)?
        }
        Criterion::Entropy => entropy_select(pool.points.view(), &model, sel.k).map_err(lab)?,
    };
    let mut header = vec!["row".to_string(), "chain".into(), "class".into(), "score".into()];
    header.extend((0..data.dim).map(|j| format!("x{j}")));
    let mut t = Table::new(&header);
    for &i in &scored.selected {
        let mut cells = vec![
            i.to_string(),
            pool.chains[i].to_string(),
            scored.labels[i].to_string(),
            fmt_f64(scored.scores[i]),
        ];
        cells.extend(pool.points.row(i).iter().map(|&v| fmt_f64(v)));
        t.row(&cells);
    }
    writer.table(SELECTED_TABLE, &t)?;
    Ok(json!({
        "criterion": scored.criterion,
        "k": sel.k,
        "pool": pool.points.nrows(),
        "selected": scored.selected.len(),
    }))
}

fn evaluate(cfg: &ExperimentConfig, writer: &mut ReportWriter) -> RunResult<serde_json::Value> {
    let ev = cfg.evaluate.as_ref().expect("validated");
    let data = cfg.data.as_ref().expect("resolved");
    let table = read_sample_table(&ev.samples)?;
    if table.points.ncols() != data.dim {
        return Err(RunError::Data {
            path: ev.samples.clone(),
            message: format!("samples have dimension {}, data section {}", table.points.ncols(), data.dim),
        });
    }
    let centres = benchmark::class_centres(data);
    let assigned = table.classes.is_none();
    let classes = table
        .classes
        .clone()
        .unwrap_or_else(|| benchmark::nearest_centre(table.points.view(), &centres));
    let sep = benchmark::separation(table.points.view(), &classes, 2);
    let mut header = vec!["class".to_string(), "count".into()];
    header.extend((0..data.dim).map(|j| format!("mean_x{j}")));
    header.extend(["cov_trace".to_string(), "centre_error".into()]);
    let mut t = Table::new(&header);
    let mut worst: f64 = 0.0;
    for c in &sep.classes {
        let err = c
            .mean
            .iter()
            .zip(centres[c.class].iter())
            .map(|(m, z)| (m - z).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        let mut cells = vec![c.class.to_string(), c.count.to_string()];
        cells.extend(c.mean.iter().map(|&v| fmt_f64(v)));
        cells.extend([fmt_f64(c.cov_trace), fmt_f64(err)]);
        t.row(&cells);
    }
    writer.table(METRICS_TABLE, &t)?;
    Ok(json!({
        "classes_from": if assigned { "nearest-centre" } else { "sample-table" },
        "centroid_distance": sep.centroid_distance,
        "within_trace": sep.within_trace,
        "max_centre_error": worst,
        "per_class": sep.classes,
    }))
}
