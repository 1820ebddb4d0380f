use cdp_core::diffusion::*;
use cdp_core::rng;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn zero_net(dim: usize, horizon: usize) -> ScoreNet {
    ScoreNet::zeros(NetArch { dim, hidden: vec![4], time_features: 2, classes: 0, horizon }).unwrap()
}

fn column_moments(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).unwrap();
    let var = x.var_axis(Axis(0), 1.0);
    (mean, var)
}

#[test]
fn default_schedule_ends_near_pure_noise() {
    let sched = build_schedule(ScheduleSpec::default()).unwrap();
    let mut product = 1.0;
    for t in 0..1000 {
        product *= 1.0 - (1e-4 + (0.02 - 1e-4) * t as f64 / 999.0);
    }
    assert!(product < 5e-5);
    assert!((sched.alpha_bar(1000) - product).abs() < 1e-15);
    for spec in [ScheduleSpec::cosine(1000), ScheduleSpec::scaled_linear(100), ScheduleSpec::cosine(50)] {
        let s = build_schedule(spec).unwrap();
        assert!(s.alpha_bar(s.steps()) <= 0.05, "{spec:?}");
    }
}

#[test]
fn forward_marginal_moments_at_final_step() {
    let sched = build_schedule(ScheduleSpec::linear(100, 1e-4, 0.2)).unwrap();
    let t = sched.steps();
    let (m, d) = (100_000, 3);
    let mut r = rng::seeded(41);
    let mut out = Array2::zeros((m, d));
    let mut x0 = Array1::zeros(d);
    let mut noise = Array1::zeros(d);
    for mut row in out.axis_iter_mut(Axis(0)) {
        x0.mapv_inplace(|_| StandardNormal.sample(&mut r));
        noise.mapv_inplace(|_| StandardNormal.sample(&mut r));
        row.assign(&forward_noise(x0.view(), t, noise.view(), &sched).unwrap());
    }
    let ab = sched.alpha_bar(t);
    let var_target = ab + (1.0 - ab);
    let (mean, var) = column_moments(&out);
    for j in 0..d {
        assert!(mean[j].abs() < 4.0 * (var_target / m as f64).sqrt());
        assert!((var[j] - var_target).abs() < 4.0 * var_target * (2.0 / m as f64).sqrt());
    }
}

#[test]
fn forward_marginal_keeps_signal_at_early_steps() {
    let sched = build_schedule(ScheduleSpec::scaled_linear(20)).unwrap();
    let x0 = Array1::from(vec![2.0, -1.0]);
    let zero = Array1::zeros(2);
    let out = forward_noise(x0.view(), 1, zero.view(), &sched).unwrap();
    assert_eq!(out, &x0 * sched.alpha_bar(1).sqrt());
}

#[test]
fn ddpm_zero_net_variance_follows_recursion() {
    let horizon = 10;
    let sched = build_schedule(ScheduleSpec::scaled_linear(horizon)).unwrap();
    let net = zero_net(2, horizon);
    let m = 100_000;
    let out = ddpm_sample(&net, &sched, m, 9).unwrap();
    // v_{t-1} = v_t / alpha_t + sigma_t^2, no injected noise at t = 1.
    let mut v = 1.0;
    for t in (1..=horizon).rev() {
        v /= sched.alpha(t);
        if t > 1 {
            v += 1.0 - sched.alpha(t);
        }
    }
    let (mean, var) = column_moments(&out);
    for j in 0..2 {
        assert!(mean[j].abs() < 4.0 * (v / m as f64).sqrt());
        assert!((var[j] - v).abs() < 4.0 * v * (2.0 / m as f64).sqrt(), "{} vs {v}", var[j]);
    }
}

#[test]
fn ddim_zero_net_rescales_deterministically() {
    let horizon = 50;
    let sched = build_schedule(ScheduleSpec::scaled_linear(horizon)).unwrap();
    let net = zero_net(3, horizon);
    let subseq = quadratic_subsequence(horizon, 8).unwrap();
    let out = ddim_sample(&net, &sched, &subseq, 0.0, 5, 2).unwrap();
    let start = ddim_sample(&net, &sched, &[horizon], 0.0, 5, 2).unwrap();
    let top = *subseq.last().unwrap();
    let gain = 1.0 / sched.alpha_bar(top).sqrt();
    let lone = 1.0 / sched.alpha_bar(horizon).sqrt();
    for (a, b) in out.iter().zip(start.iter()) {
        // Both start from the same points; only the overall gain differs.
        assert!((a / gain - b / lone).abs() < 1e-12);
    }
}

#[test]
fn ddim_without_noise_is_a_pure_function_of_the_start() {
    let horizon = 30;
    let sched = build_schedule(ScheduleSpec::cosine(horizon)).unwrap();
    let net = ScoreNet::new(NetArch { dim: 2, hidden: vec![8, 8], time_features: 4, classes: 0, horizon }, 5)
        .unwrap();
    let subseq = quadratic_subsequence(horizon, 10).unwrap();
    let setup = ChainSetup::from_seed(77, 6);
    let full = ddim_sample_chains(&net, &sched, &subseq, 0.0, &setup).unwrap();
    assert_eq!(full, ddim_sample_chains(&net, &sched, &subseq, 0.0, &setup).unwrap());
    // Each chain depends only on its own seed.
    for i in 0..6 {
        let single = ChainSetup { seeds: vec![setup.seeds[i]], ..setup.clone() };
        let one = ddim_sample_chains(&net, &sched, &subseq, 0.0, &single).unwrap();
        assert_eq!(one.row(0), full.row(i));
    }
    let noisy = ddim_sample_chains(&net, &sched, &subseq, 0.5, &setup).unwrap();
    assert_ne!(noisy, full);
}

#[test]
fn ddpm_posterior_matches_full_ddim_at_unit_eta() {
    let horizon = 10;
    let sched = build_schedule(ScheduleSpec::scaled_linear(horizon)).unwrap();
    let net = zero_net(1, horizon);
    let m = 100_000;
    let subseq: Vec<usize> = (1..=horizon).collect();
    let out = ddim_sample(&net, &sched, &subseq, 1.0, m, 3).unwrap();
    // With a zero net, x_{t-1} = sqrt(ab_{t-1}/ab_t) x_t + sigma_t z.
    let mut v = 1.0;
    for t in (1..=horizon).rev() {
        let (ab, prev) = (sched.alpha_bar(t), sched.alpha_bar(t - 1));
        let sigma_sq = (1.0 - prev) / (1.0 - ab) * (1.0 - ab / prev);
        v = v * prev / ab + sigma_sq;
    }
    let (_, var) = column_moments(&out);
    assert!((var[0] - v).abs() < 4.0 * v * (2.0 / m as f64).sqrt(), "{} vs {v}", var[0]);
}

#[test]
fn init_scale_inflates_start() {
    let sched = build_schedule(ScheduleSpec::scaled_linear(5)).unwrap();
    let net = zero_net(2, 5);
    let base = ChainSetup::from_seed(1, 4);
    let wide = base.clone().with_init_scale(2.0);
    let a = ddim_sample_chains(&net, &sched, &[5], 0.0, &base).unwrap();
    let b = ddim_sample_chains(&net, &sched, &[5], 0.0, &wide).unwrap();
    assert_eq!(b, a * 2.0);
}

proptest! {
    #[test]
    fn quadratic_subsequence_is_valid(steps in 1usize..2000, frac in 0.0f64..1.0) {
        let count = 1 + ((steps - 1) as f64 * frac) as usize;
        let s = quadratic_subsequence(steps, count).unwrap();
        prop_assert_eq!(s.len(), count);
        prop_assert_eq!(s[0], 1);
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*s.last().unwrap() <= steps);
    }

    #[test]
    fn schedules_are_consistent(steps in 1usize..400, lo in 1e-5f64..0.01, span in 0.0f64..0.1) {
        let sched = build_schedule(ScheduleSpec::linear(steps, lo, lo + span)).unwrap();
        let mut prod = 1.0;
        for t in 1..=steps {
            prod *= sched.alpha(t);
            prop_assert!((sched.alpha_bar(t) - prod).abs() < 1e-12);
            prop_assert!(sched.alpha_bar(t) < sched.alpha_bar(t - 1));
        }
    }
}
