//! Invariants of the comb model, solvers and metrics over random inputs.

use nfc_echo::analytic::{target_transfer, SeriesConfig, SeriesEvaluator, DEFAULT_TRUNCATION_TOL};
use nfc_echo::comb::{build_shaped_comb, shaped_weights};
use nfc_echo::config::RunConfig;
use nfc_echo::metrics::{detect_window, efficiency, fidelity, report, EchoWindow, MetricOptions};
use nfc_echo::solver::simulate_chain;
use nfc_echo::{CombSystem, FieldTrace, Grid, PhysConstants, PulseSpec, TargetSpec};
use num_complex::Complex;
use proptest::prelude::*;

fn consts() -> PhysConstants {
    PhysConstants::default()
}

fn static_comb() -> impl Strategy<Value = CombSystem> {
    prop::collection::vec((0.0..20.0f64, -100.0..100.0f64), 1..5).prop_map(|ts| {
        let targets = ts.into_iter().map(|(xi, d)| TargetSpec::stationary(xi, d)).collect();
        CombSystem::new(targets, 50.0, 0.0).unwrap()
    })
}

fn output_of(comb: &CombSystem, pulse: &PulseSpec) -> (FieldTrace, FieldTrace) {
    let grid = Grid::auto(comb, pulse, &consts()).unwrap();
    let mut traces = simulate_chain(comb, pulse, &grid, &consts()).unwrap();
    let out = traces.pop().unwrap();
    (traces.swap_remove(0), out)
}

fn gaussian(t0: f64, dt: f64, n: usize, center: f64, width: f64) -> FieldTrace {
    FieldTrace::from_fn(t0, dt, n, |t| Complex::new((-((t - center) / width).powi(2)).exp(), 0.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shaped_weights_are_normalized_symmetric_and_positive(
        half in 0usize..8, k in 0.0..2.0f64, tau_p in 1.0..10.0f64, total in 0.1..200.0f64,
    ) {
        let m = 2 * half + 1;
        let g = consts().gamma;
        let w = shaped_weights(m, k, tau_p, 50.0, g).unwrap();
        prop_assert_eq!(w.len(), m);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..m {
            prop_assert!(w[i] > 0.0);
            prop_assert!((w[i] - w[m - 1 - i]).abs() < 1e-14);
        }
        let comb = build_shaped_comb(m, 50.0, k, tau_p, total, g).unwrap();
        prop_assert!((comb.total_xi() - total).abs() < 1e-9 * total);
        let flat = build_shaped_comb(m, 50.0, 0.0, tau_p, total, g).unwrap();
        for t in &flat.targets {
            prop_assert_eq!(t.xi, total / m as f64);
        }
    }

    #[test]
    fn single_target_transfer_is_passive(omega in -1e3..1e3f64, xi in 0.0..500.0f64, delta in -1e3..1e3f64) {
        prop_assert!(target_transfer(omega, xi, delta).norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn detected_window_is_idempotent_and_scale_invariant(
        delay in 15.0..40.0f64, amp in 0.05..0.8f64, scale in 0.01..100.0f64,
    ) {
        let dt = 0.05;
        let n = 2400;
        let input = gaussian(0.0, dt, n, 20.0, 3.0);
        let output = FieldTrace::from_fn(0.0, dt, n, |t| {
            let a = (-((t - 20.0) / 3.0).powi(2)).exp() * 0.6;
            let b = (-((t - 20.0 - delay) / 3.0).powi(2)).exp() * amp;
            Complex::new(a - b, 0.0)
        }).unwrap();
        let w = detect_window(&output, 20.0, 3.0, None).unwrap();
        let big = output.scaled(Complex::new(scale, 0.0));
        prop_assert_eq!(detect_window(&big, 20.0, 3.0, None).unwrap(), w);

        // spacing whose expected echo time matches the synthetic delay
        let comb = CombSystem::empty(2.0 * std::f64::consts::PI / (delay * consts().gamma));
        let pulse = PulseSpec::unit(20.0, 3.0).unwrap();
        let auto = report(&input, &output, &pulse, &comb, consts().gamma, &MetricOptions::default()).unwrap();
        let opts = MetricOptions { window: Some(auto.window), ..Default::default() };
        let fixed = report(&input, &output, &pulse, &comb, consts().gamma, &opts).unwrap();
        prop_assert_eq!(fixed.efficiency, auto.efficiency);
        prop_assert_eq!(fixed.fidelity, auto.fidelity);

        let scaled_in = input.scaled(Complex::new(scale, 0.0));
        let scaled = report(&scaled_in, &big, &pulse, &comb, consts().gamma, &MetricOptions::default()).unwrap();
        prop_assert!((scaled.efficiency - auto.efficiency).abs() < 1e-12 * auto.efficiency.max(1e-300));
        prop_assert!((scaled.fidelity - auto.fidelity).abs() < 1e-12);
    }

    #[test]
    fn efficiency_grows_with_the_window(a in 0.0..50.0f64, b in 0.0..50.0f64, c in 0.0..50.0f64, d in 0.0..50.0f64) {
        let input = gaussian(0.0, 0.1, 1000, 30.0, 4.0);
        let output = FieldTrace::from_fn(0.0, 0.1, 1000, |t| {
            Complex::new((t * 0.3).sin() * (-((t - 50.0) / 10.0).powi(2)).exp(), 0.2)
        }).unwrap();
        let mut v = [a, b, c, d];
        v.sort_by(f64::total_cmp);
        prop_assume!(v[0] < v[1] && v[2] < v[3]);
        let inner = EchoWindow::new(v[1] + 20.0, v[2] + 20.0 + 1e-9).unwrap();
        let outer = EchoWindow::new(v[0] + 20.0, v[3] + 20.0 + 1e-9).unwrap();
        let ei = efficiency(&input, &output, &inner).unwrap();
        let eo = efficiency(&input, &output, &outer).unwrap();
        prop_assert!(eo >= ei - 1e-15);
    }

    #[test]
    fn delayed_scaled_copy_has_unit_fidelity(delay_steps in 50usize..400, re in -3.0..3.0f64, im in -3.0..3.0f64) {
        prop_assume!(re.hypot(im) > 1e-3);
        let dt = 0.1;
        let input = gaussian(0.0, dt, 1200, 20.0, 5.0);
        let shift = delay_steps as f64 * dt;
        let c = Complex::new(re, im);
        let output = FieldTrace::from_fn(0.0, dt, 1200, |t| c * (-((t - 20.0 - shift) / 5.0).powi(2)).exp()).unwrap();
        let w = EchoWindow::new(20.0 + shift - 30.0, 20.0 + shift + 30.0).unwrap();
        let f = fidelity(&input, &output, &w, shift).unwrap();
        prop_assert!((f - 1.0).abs() < 1e-9, "F = {}", f);
    }

    #[test]
    fn series_is_linear_and_order_independent(
        ts in prop::collection::vec((0.0..15.0f64, -2.0..2.0f64), 1..5), amp in 0.1..10.0f64, t in 20.0..120.0f64,
    ) {
        let g = consts().gamma;
        let targets: Vec<TargetSpec> = ts.iter().map(|&(xi, n)| TargetSpec::stationary(xi, 50.0 * n)).collect();
        let comb = CombSystem::new(targets.clone(), 50.0, 0.0).unwrap();
        let mut rev = targets;
        rev.reverse();
        let rcomb = CombSystem::new(rev, 50.0, 0.0).unwrap();
        let unit = PulseSpec::unit(30.0, 5.0).unwrap();
        let scaled = PulseSpec::new(amp, 30.0, 5.0).unwrap();
        let cfg = SeriesConfig::auto(&unit, &comb, g, DEFAULT_TRUNCATION_TOL).unwrap();
        let a = SeriesEvaluator::new(&unit, &comb, &cfg, g).unwrap().eval(t);
        let b = SeriesEvaluator::new(&unit, &rcomb, &cfg, g).unwrap().eval(t);
        let c = SeriesEvaluator::new(&scaled, &comb, &cfg, g).unwrap().eval(t);
        prop_assert!((a - b).norm() < 1e-10);
        prop_assert!((c - a * amp).norm() < 1e-10 * amp);
    }

    #[test]
    fn series_is_time_covariant(xi in 0.5..15.0f64, shift in 1.0..40.0f64, t in 10.0..100.0f64) {
        let g = consts().gamma;
        let comb = CombSystem::new(vec![TargetSpec::stationary(xi, 25.0)], 50.0, 0.0).unwrap();
        let early = PulseSpec::unit(30.0, 5.0).unwrap();
        let late = PulseSpec::unit(30.0 + shift, 5.0).unwrap();
        let ce = SeriesConfig::auto(&early, &comb, g, DEFAULT_TRUNCATION_TOL).unwrap();
        let cl = SeriesConfig::auto(&late, &comb, g, DEFAULT_TRUNCATION_TOL).unwrap();
        let a = SeriesEvaluator::new(&early, &comb, &ce, g).unwrap().eval(t);
        let b = SeriesEvaluator::new(&late, &comb, &cl, g).unwrap().eval(t + shift);
        prop_assert!((a - b).norm() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(samples in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 2..60), t0 in -50.0..50.0f64) {
        let tr = FieldTrace::new(t0, 0.37, samples.into_iter().map(|(a, b)| Complex::new(a, b)).collect()).unwrap();
        let back = FieldTrace::from_csv_str(&tr.to_csv_string()).unwrap();
        prop_assert_eq!(back.samples, tr.samples);
    }

    #[test]
    fn config_round_trips_through_toml(
        tau_p in 0.5..20.0f64, half in 0usize..10, k in 0.0..2.0f64, xi_bar in 0.0..30.0f64, nz in 1usize..100,
    ) {
        let text = format!("mode = \"simulate\"\ntau_p = {tau_p:?}\nM = {}\nk = {k:?}\nxi_bar = {xi_bar:?}\nnz = {nz}\n", 2 * half + 1);
        let cfg = RunConfig::from_toml_str(&text).unwrap().resolved().unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn static_combs_are_passive(comb in static_comb(), tau_p in 3.0..8.0f64) {
        let pulse = PulseSpec::unit(6.0 * tau_p, tau_p).unwrap();
        let (input, output) = output_of(&comb, &pulse);
        prop_assert!(output.energy() <= input.energy() * (1.0 + 1e-9));
    }

    #[test]
    fn solver_is_linear_in_the_drive(comb in static_comb(), amp in 0.01..50.0f64) {
        let unit = PulseSpec::unit(30.0, 5.0).unwrap();
        let strong = PulseSpec::new(amp, 30.0, 5.0).unwrap();
        let grid = Grid::auto(&comb, &unit, &consts()).unwrap();
        let a = simulate_chain(&comb, &unit, &grid, &consts()).unwrap().pop().unwrap();
        let b = simulate_chain(&comb, &strong, &grid, &consts()).unwrap().pop().unwrap();
        prop_assert!(b.relative_l2(&a.scaled(Complex::new(amp, 0.0))).unwrap() < 1e-12);
    }

    #[test]
    fn static_target_order_does_not_matter(comb in static_comb()) {
        let pulse = PulseSpec::unit(30.0, 5.0).unwrap();
        let mut rev = comb.clone();
        rev.targets.reverse();
        let grid = Grid::auto(&comb, &pulse, &consts()).unwrap();
        let a = simulate_chain(&comb, &pulse, &grid, &consts()).unwrap().pop().unwrap();
        let b = simulate_chain(&rev, &pulse, &grid, &consts()).unwrap().pop().unwrap();
        prop_assert!(b.relative_l2(&a).unwrap() < 1e-9);
    }

    #[test]
    fn solver_is_time_covariant(comb in static_comb(), steps in 1usize..200) {
        let early = PulseSpec::unit(30.0, 5.0).unwrap();
        let grid = Grid::auto(&comb, &early, &consts()).unwrap();
        let shift = steps as f64 * grid.dt;
        let late = PulseSpec::unit(30.0 + shift, 5.0).unwrap();
        let long = Grid::new(grid.t0, grid.t1 + shift, grid.dt, grid.nz).unwrap();
        let a = simulate_chain(&comb, &early, &grid, &consts()).unwrap().pop().unwrap();
        let b = simulate_chain(&comb, &late, &long, &consts()).unwrap().pop().unwrap();
        let peak = a.power().into_iter().fold(0.0, f64::max).sqrt();
        for (i, s) in a.samples.iter().enumerate() {
            // the Gaussian's tail before t0 is cut, so the match is to ~1e-9
            prop_assert!((b.samples[i + steps] - s).norm() < 1e-8 * peak.max(1.0));
        }
    }
}
