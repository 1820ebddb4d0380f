use cdp_core::gaussian::*;
use cdp_core::self_training::*;
use ndarray::{array, Array1, Axis};
use proptest::prelude::*;

fn config(c: f64, synth_mean: SynthMeanMode) -> SelfTrainConfig {
    SelfTrainConfig {
        d: 100,
        n: 100,
        n_tilde: 10_000,
        c,
        eps: 0.1,
        sigma: 1.0,
        mu: MuMode { norm_sq: 4.0, angle_deg: 30.0 },
        synth_mean,
        estimator: Estimator::Average,
        train_on: TrainOn::Pooled,
        eta: 0.5,
        trials: 50,
        seed: 7,
        holdout: 0,
        surrogate: SurrogateOpts::default(),
    }
}

#[test]
fn intermediate_concentrates_around_mu() {
    let d = 8;
    let n = 100_000;
    let mu = build_mu(d, MuMode { norm_sq: 3.0, angle_deg: 20.0 }).unwrap();
    let spec = MixtureSpec::new(mu.clone(), 1.0).unwrap();
    let bound = 4.0 * (d as f64 / n as f64).sqrt();
    let mut sq = 0.0;
    let reps = 20;
    for seed in 0..reps {
        let data = sample_dataset(&spec, n, seed).unwrap();
        let theta = fit_intermediate(&data).unwrap();
        let diff = theta.theta() - &mu;
        let dist = diff.dot(&diff);
        assert!(dist.sqrt() <= bound, "seed {seed}");
        sq += dist;
    }
    // E ||theta - mu||^2 = sigma^2 d / n
    let mean_sq = sq / reps as f64;
    let expected = d as f64 / n as f64;
    assert!((mean_sq / expected - 1.0).abs() < 0.35, "{mean_sq} vs {expected}");
}

#[test]
fn pseudo_label_error_matches_closed_form() {
    let mu = array![0.6, -0.3, 0.2, 0.9];
    let theta = LinearClassifier::new(array![0.5, 0.1, 0.4, 0.7]).unwrap();
    let sigma = 1.2;
    for c in [0.5, 1.5] {
        let synth = MixtureSpec::new(&mu * c, sigma).unwrap();
        let n = 1_000_000;
        let data = sample_dataset(&synth, n, 31).unwrap();
        let labeled = assign_pseudo_labels(&theta, data.features().view()).unwrap();
        let wrong = labeled
            .labels()
            .iter()
            .zip(data.labels())
            .filter(|(a, b)| a != b)
            .count() as f64
            / n as f64;
        let p = q_function(c * mu.dot(theta.theta()) / (sigma * theta.norm())).unwrap();
        assert!((wrong - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "c = {c}: {wrong} vs {p}");
    }
}

#[test]
fn clean_accuracy_grows_with_scaled_mean() {
    let means: Vec<f64> = [0.5, 1.0, 1.5, 2.0]
        .iter()
        .map(|&c| {
            run_gaussian_experiment(&config(c, SynthMeanMode::ScaledMu))
                .unwrap()
                .summary
                .clean_closed
                .mean
        })
        .collect();
    for w in means.windows(2) {
        assert!(w[1] >= w[0], "{means:?}");
    }
}

#[test]
fn robust_accuracy_grows_with_shifted_mean() {
    let means: Vec<f64> = [0.5, 1.0, 1.5, 2.0]
        .iter()
        .map(|&c| {
            run_gaussian_experiment(&config(c, SynthMeanMode::RobustShifted))
                .unwrap()
                .summary
                .robust_closed
                .mean
        })
        .collect();
    for w in means.windows(2) {
        assert!(w[1] >= w[0], "{means:?}");
    }
}

#[test]
fn report_is_consistent_and_reproducible() {
    let mut cfg = config(1.0, SynthMeanMode::ScaledMu);
    cfg.n_tilde = 500;
    cfg.trials = 6;
    cfg.holdout = 2000;
    let a = run_gaussian_experiment(&cfg).unwrap();
    let b = run_gaussian_experiment(&cfg).unwrap();
    assert_eq!(a.trials, b.trials);
    assert_eq!(a.trials.len(), 6);
    let clean: Vec<f64> = a.trials.iter().map(|t| t.clean_closed).collect();
    let mean = clean.iter().sum::<f64>() / clean.len() as f64;
    assert!((a.summary.clean_closed.mean - mean).abs() <= 1e-12);
    for t in &a.trials {
        let g = t.gamma_hat.unwrap();
        assert!((-1.0..=1.0).contains(&g));
        for acc in [t.clean_closed, t.robust_closed, t.clean_empirical.unwrap(), t.robust_empirical.unwrap()] {
            assert!((0.0..=1.0).contains(&acc));
        }
        assert!(t.robust_closed <= t.clean_closed);
    }
}

#[test]
fn gamma_tracks_pseudo_label_quality() {
    // Agreement from the closed form at the population intermediate classifier.
    let mut cfg = config(1.0, SynthMeanMode::ScaledMu);
    cfg.n = 100_000;
    cfg.trials = 3;
    cfg.n_tilde = 20_000;
    let report = run_gaussian_experiment(&cfg).unwrap();
    let truth = cfg.true_spec().unwrap();
    let err = q_function(truth.mu().dot(truth.mu()).sqrt() / cfg.sigma).unwrap();
    let expected = 1.0 - 2.0 * err;
    let band = 4.0 * 2.0 * (err * (1.0 - err) / cfg.n_tilde as f64).sqrt() + 0.01;
    for t in &report.trials {
        assert!((t.gamma_hat.unwrap() - expected).abs() < band, "{:?} vs {expected}", t.gamma_hat);
    }
}

#[test]
fn surrogate_beats_its_start_on_the_robust_loss() {
    let spec = MixtureSpec::new(array![1.0, 1.0], 1.0).unwrap();
    let real = sample_dataset(&spec, 200, 3).unwrap();
    let synth = sample_dataset(&spec, 400, 4).unwrap();
    let fit = fit_final_adversarial(&real, &synth, 0.5, 0.5, &SurrogateOpts::default()).unwrap();
    assert!(fit.losses.iter().cloned().fold(f64::INFINITY, f64::min) <= fit.losses[0]);
    let err = robust_error(&fit.classifier, &spec, 0.5).unwrap();
    let best = robust_error(&optimal_robust_direction(spec.mu().view(), 0.5).unwrap(), &spec, 0.5).unwrap();
    assert!(err - best < 0.05, "{err} vs {best}");
}

#[test]
fn final_average_without_synthetic_is_intermediate() {
    let spec = MixtureSpec::new(array![0.4, -1.0, 0.3], 0.8).unwrap();
    let real = sample_dataset(&spec, 300, 12).unwrap();
    let empty = LabeledDataset::empty(3);
    assert_eq!(fit_final_average(&real, &empty).unwrap(), fit_intermediate(&real).unwrap());
}

proptest! {
    #[test]
    fn threshold_is_monotone(
        n in 1usize..1000,
        d in 1usize..20_000,
        eps in 0.01f64..1.0,
        c in 0.1f64..4.0,
    ) {
        let base = theorem2_threshold(n, d, eps, c).unwrap();
        prop_assert!(theorem2_threshold(n, d, eps, c * 1.5).unwrap() <= base);
        prop_assert!(theorem2_threshold(n, d + 1, eps, c).unwrap() >= base);
        prop_assert!(theorem2_threshold(n, d, eps * 1.1, c).unwrap() >= base);
        let half = threshold_value(n, d, eps, 2.0 * c);
        prop_assert!((2.0 * half / threshold_value(n, d, eps, c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn average_predictions_are_scale_invariant(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..20),
        flips in prop::collection::vec(any::<bool>(), 20),
        scale in 0.01f64..100.0,
    ) {
        let n = rows.len();
        let x = ndarray::Array2::from_shape_fn((n, 3), |(i, j)| rows[i][j]);
        let y: Array1<f64> = (0..n).map(|i| if flips[i] { 1.0 } else { -1.0 }).collect();
        let real = LabeledDataset::new(x.clone(), y.clone()).unwrap();
        let scaled = LabeledDataset::new(&x * scale, y).unwrap();
        let empty = LabeledDataset::empty(3);
        let a = fit_final_average(&real, &empty).unwrap();
        let b = fit_final_average(&scaled, &empty).unwrap();
        prop_assume!(a.norm() > 1e-9);
        for row in x.axis_iter(Axis(0)) {
            prop_assume!(a.score(row).abs() > 1e-9);
            prop_assert_eq!(a.predict(row), b.predict(row));
        }
    }
}
