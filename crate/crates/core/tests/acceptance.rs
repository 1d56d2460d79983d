//! Acceptance checks: one PASS/FAIL line per criterion, nonzero exit when any
//! criterion fails. Numerical criteria run on grids validated by a
//! refinement study.

use std::time::Instant;

use nfc_echo::analytic::{
    analytic_report, closed_form_efficiency, default_sampling, SeriesConfig, SeriesEvaluator,
    DEFAULT_TRUNCATION_TOL,
};
use nfc_echo::comb::{build_shaped_comb, shaped_weights};
use nfc_echo::error::Error;
use nfc_echo::metrics::{fidelity, report, EchoWindow};
use nfc_echo::scan::{
    calibrate_scenario_tau_i, scan_dynamical_xi, scan_m, trace_difference, xi_bar_grid, ScenarioId, ScenarioParams,
};
use nfc_echo::solver::{convergence_study, convergence_study_with_levels, simulate_chain, CONVERGENCE_TOL};
use nfc_echo::{CombSystem, FieldTrace, Grid, MetricOptions, PhysConstants, PulseSpec, TargetSpec};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn consts() -> PhysConstants {
    PhysConstants::default()
}

fn opts() -> MetricOptions {
    MetricOptions::default()
}

fn criterion_1() -> Outcome {
    let e = closed_form_efficiency(8.0, 50.0);
    let sups: Vec<f64> = [1e3, 1e4, 1e5]
        .iter()
        .map(|&s| closed_form_efficiency(s / (2.0 * std::f64::consts::PI), s))
        .collect();
    let monotone = sups.windows(2).all(|w| w[1] > w[0]);
    let pass = within(e, 0.477, 0.001) && monotone && within(sups[2], 0.541, 0.001);
    check(pass, format!("E(8, 50) = {e:.5}; sup over S = 1e3, 1e4, 1e5: {sups:.5?}"))
}

fn criterion_2() -> Outcome {
    let pulse = PulseSpec::unit(6.0, 1.0).unwrap();
    let comb = build_shaped_comb(21, 50.0, 0.0, 1.0, 8.0 * 21.0, consts().gamma).unwrap();
    let rep = analytic_report(&pulse, &comb, consts().gamma, &opts()).unwrap();
    let (_, dt, _) = default_sampling(&pulse, 50.0, consts().gamma);
    let delay = rep.echo_peak - pulse.tau_i;
    let pass = within(rep.efficiency, 0.477, 0.02) && within(delay, 17.73, dt);
    check(
        pass,
        format!(
            "E = {:.4} (0.477 ± 0.02); peak at tau_i + {delay:.4} ns (17.73 ± {dt} ns)",
            rep.efficiency
        ),
    )
}

fn shaped_e(tau_p: f64, m: usize, k: f64, xi: f64) -> f64 {
    let pulse = PulseSpec::unit(6.0 * tau_p, tau_p).unwrap();
    let comb = build_shaped_comb(m, 50.0, k, tau_p, xi, consts().gamma).unwrap();
    match analytic_report(&pulse, &comb, consts().gamma, &opts()) {
        Ok(r) => r.efficiency,
        Err(Error::NoEcho(_)) => 0.0,
        Err(e) => panic!("{e}"),
    }
}

fn criterion_3() -> Outcome {
    let e0 = shaped_e(1.0, 21, 0.0, 80.0);
    let e1 = shaped_e(1.0, 21, 1.0, 80.0);
    check(
        within(e0, 0.30, 0.03) && within(e1, 0.44, 0.03),
        format!("E(k=0, xi=80) = {e0:.4} (0.30 ± 0.03); E(k=1, xi=80) = {e1:.4} (0.44 ± 0.03)"),
    )
}

fn criterion_4() -> Outcome {
    let a = shaped_e(5.0, 9, 0.0, 60.0);
    let b = shaped_e(5.0, 9, 0.5, 26.0);
    let c = shaped_e(5.0, 9, 0.0, 26.0);
    check(
        a >= 0.50 && b >= 0.50 && c < 0.50,
        format!("E(0, 60) = {a:.4} (>= 0.50); E(0.5, 26) = {b:.4} (>= 0.50); E(0, 26) = {c:.4} (< 0.50)"),
    )
}

fn criterion_5() -> Outcome {
    let pulse = PulseSpec::unit(30.0, 5.0).unwrap();
    let scan = scan_m(&pulse, 50.0, 0.0, &[3], (0.0, 15.0), 0.05, &consts(), &opts()).unwrap();
    let (e, f, xb) = (scan.efficiency[0], scan.fidelity[0], scan.extra[0].values[0]);
    check(
        within(e, 0.51, 0.02) && within(f, 0.99, 0.01),
        format!("max E = {e:.4} at xi_bar = {xb} (0.51 ± 0.02); F = {f:.4} (0.99 ± 0.01)"),
    )
}

/// Solver output on the converged grid and the series sampled on it.
fn numeric_vs_series(comb: &CombSystem, pulse: &PulseSpec) -> (f64, Grid) {
    let g = consts();
    let base = Grid::auto(comb, pulse, &g).unwrap();
    let study = convergence_study(comb, pulse, &base, &g, &opts(), CONVERGENCE_TOL).unwrap();
    let grid = study.converged_grid;
    let numeric = simulate_chain(comb, pulse, &grid, &g).unwrap().pop().unwrap();
    let cfg = SeriesConfig::auto(pulse, comb, g.gamma, DEFAULT_TRUNCATION_TOL).unwrap();
    let series = SeriesEvaluator::new(pulse, comb, &cfg, g.gamma)
        .unwrap()
        .trace(grid.t0, grid.dt, grid.n_t())
        .unwrap();
    (numeric.relative_l2(&series).unwrap(), grid)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for _ in 0..10 {
        let m = 2 * rng.gen_range(0..5) + 1;
        let s = rng.gen_range(30.0..80.0);
        let tau_p = rng.gen_range(1.0..7.0);
        let k = rng.gen_range(0.0..1.0);
        let xi_bar = rng.gen_range(0.5..10.0);
        let comb = build_shaped_comb(m, s, k, tau_p, xi_bar * m as f64, consts().gamma).unwrap();
        let pulse = PulseSpec::unit(6.0 * tau_p, tau_p).unwrap();
        let (err, grid) = numeric_vs_series(&comb, &pulse);
        worst = worst.max(err);
        lines.push(format!("M={m} S={s:.1} tau_p={tau_p:.2} k={k:.2} xi_bar={xi_bar:.2} dt={} err={err:.2e}", grid.dt));
    }
    for l in &lines {
        println!("      {l}");
    }
    check(worst < 1e-2, format!("worst relative L2 = {worst:.3e} over 10 combs (< 1e-2)"))
}

struct Converged {
    e: f64,
    f: f64,
    grid: Grid,
    tau_i: f64,
}

/// Calibrated τ_i (unless given), then a refinement study from the default grid.
fn converged_scenario(id: ScenarioId, params: &ScenarioParams<f64>, tau_i: Option<f64>) -> Converged {
    let g = consts();
    let tau_i = tau_i.unwrap_or_else(|| calibrate_scenario_tau_i(id, params, &g).unwrap());
    let comb = id.comb(params).unwrap();
    let pulse = PulseSpec::unit(tau_i, params.tau_p).unwrap();
    let base = params.grid_for(&comb, &pulse, &g).unwrap();
    let study = convergence_study(&comb, &pulse, &base, &g, &params.metric_options(), CONVERGENCE_TOL).unwrap();
    let level = study.levels[study.converged_level];
    Converged {
        e: level.efficiency,
        f: level.fidelity,
        grid: study.converged_grid,
        tau_i,
    }
}

fn criterion_7() -> Outcome {
    let g = consts();
    let params = ScenarioParams::<f64>::default();
    let h6 = converged_scenario(ScenarioId::Fig3eHybrid6, &params, None);

    // same τ_i and a common grid for the equivalence check
    let d10_comb = ScenarioId::Fig3eDoppler10.comb(&params).unwrap();
    let h6_comb = ScenarioId::Fig3eHybrid6.comb(&params).unwrap();
    let pulse = PulseSpec::unit(h6.tau_i, params.tau_p).unwrap();
    let d10_auto = Grid::auto(&d10_comb, &pulse, &g).unwrap();
    let mut common = h6.grid;
    while common.dt > d10_auto.dt * (1.0 + 1e-12) {
        common = common.refined();
    }
    let h6_out = simulate_chain(&h6_comb, &pulse, &common, &g).unwrap().pop().unwrap();
    let d10_out = simulate_chain(&d10_comb, &pulse, &common, &g).unwrap().pop().unwrap();
    let l2 = trace_difference(&d10_out, &h6_out).unwrap();

    let d4 = converged_scenario(ScenarioId::Fig3fDoppler4, &params, None);
    let p5 = ScenarioParams {
        tau_p: 5.0,
        ..ScenarioParams::default()
    };
    let h5 = converged_scenario(ScenarioId::Fig3eHybrid6, &p5, None);

    let parts = [
        (
            within(h6.e, 0.67, 0.03) && within(h6.f, 0.96, 0.02),
            format!("hybrid6 tau_i={} E={:.4} F={:.4} (0.67±0.03, 0.96±0.02)", h6.tau_i, h6.e, h6.f),
        ),
        (l2 < 0.05, format!("doppler10 vs hybrid6 L2={l2:.2e} (< 0.05)")),
        (
            within(d4.e, 0.66, 0.03) && within(d4.f, 0.95, 0.02),
            format!("doppler4 tau_i={} E={:.4} F={:.4} (0.66±0.03, 0.95±0.02)", d4.tau_i, d4.e, d4.f),
        ),
        (
            within(h5.e, 0.65, 0.03) && within(h5.f, 0.87, 0.03),
            format!("hybrid6 at 5 ns tau_i={} E={:.4} F={:.4} (0.65±0.03, 0.87±0.03)", h5.tau_i, h5.e, h5.f),
        ),
    ];
    for (ok, text) in &parts {
        println!("      [{}] {text}", if *ok { "ok" } else { "miss" });
    }
    check(
        parts.iter().all(|p| p.0),
        parts.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join("; "),
    )
}

fn criterion_8() -> Outcome {
    let g = consts();
    let params = ScenarioParams::<f64>::default();
    let tau_i = calibrate_scenario_tau_i(ScenarioId::Fig3eDoppler6, &params, &g).unwrap();
    let fixed = ScenarioParams {
        tau_i: Some(tau_i),
        ..params
    };
    let xs = xi_bar_grid(2.0, 15.0, 0.5).unwrap();
    let with = scan_dynamical_xi(&xs, true, &fixed, &g).unwrap();
    let without = scan_dynamical_xi(&xs, false, &fixed, &g).unwrap();
    let mut worst_e: (f64, f64) = (0.0, 0.0);
    let mut worst_f: (f64, f64) = (0.0, 0.0);
    for (i, &x) in xs.iter().enumerate() {
        let de = (with.efficiency[i] - without.efficiency[i]).abs();
        let df = (with.fidelity[i] - without.fidelity[i]).abs();
        if de > worst_e.0 {
            worst_e = (de, x);
        }
        if df > worst_f.0 {
            worst_f = (df, x);
        }
        println!(
            "      xi_bar={x:<4} with E={:.4} F={:.4}  without E={:.4} F={:.4}",
            with.efficiency[i], with.fidelity[i], without.efficiency[i], without.fidelity[i]
        );
    }
    check(
        worst_e.0 <= 0.03 && worst_f.0 <= 0.03,
        format!(
            "tau_i={tau_i}; max |dE| = {:.4} at xi_bar={}; max |dF| = {:.4} at xi_bar={} (both <= 0.03)",
            worst_e.0, worst_e.1, worst_f.0, worst_f.1
        ),
    )
}

fn random_static_comb(rng: &mut ChaCha8Rng) -> CombSystem {
    let n = rng.gen_range(1..6);
    let targets = (0..n)
        .map(|_| TargetSpec::stationary(rng.gen_range(0.0..20.0), rng.gen_range(-100.0..100.0)))
        .collect();
    CombSystem::new(targets, 50.0, 0.0).unwrap()
}

fn criterion_9() -> Outcome {
    let g = consts();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut notes = Vec::new();
    let mut pass = true;

    let mut weights_ok = true;
    for m in [1, 3, 5, 9, 21] {
        for k in [0.0, 0.3, 1.0, 2.0] {
            let w = shaped_weights(m, k, 5.0, 50.0, g.gamma).unwrap();
            weights_ok &= (w.iter().sum::<f64>() - 1.0).abs() < 1e-12;
            weights_ok &= (0..m).all(|i| (w[i] - w[m - 1 - i]).abs() < 1e-14 && w[i] > 0.0);
        }
    }
    pass &= weights_ok;
    notes.push(format!("weights {}", if weights_ok { "ok" } else { "BAD" }));

    let pulse = PulseSpec::unit(30.0, 5.0).unwrap();
    let mut worst_gain: f64 = 0.0;
    for _ in 0..20 {
        let comb = random_static_comb(&mut rng);
        let grid = Grid::auto(&comb, &pulse, &g).unwrap();
        let tr = simulate_chain(&comb, &pulse, &grid, &g).unwrap();
        worst_gain = worst_gain.max(tr[tr.len() - 1].energy() / tr[0].energy());
    }
    pass &= worst_gain <= 1.0 + 1e-12;
    notes.push(format!("passivity max out/in = {worst_gain:.6}"));

    let comb = build_shaped_comb(3, 50.0, 0.0, 5.0, 21.0, g.gamma).unwrap();
    let grid = Grid::auto(&comb, &pulse, &g).unwrap();
    let strong = PulseSpec::new(37.5, 30.0, 5.0).unwrap();
    let a = simulate_chain(&comb, &pulse, &grid, &g).unwrap();
    let b = simulate_chain(&comb, &strong, &grid, &g).unwrap();
    let ra = report(&a[0], &a[a.len() - 1], &pulse, &comb, g.gamma, &opts()).unwrap();
    let rb = report(&b[0], &b[b.len() - 1], &strong, &comb, g.gamma, &opts()).unwrap();
    let lin = (ra.efficiency - rb.efficiency).abs().max((ra.fidelity - rb.fidelity).abs());
    pass &= lin <= 1e-12;
    notes.push(format!("linearity dE,dF = {lin:.1e}"));

    let mut worst_perm: f64 = 0.0;
    for _ in 0..5 {
        let comb = random_static_comb(&mut rng);
        let mut rev = comb.clone();
        rev.targets.reverse();
        let grid = Grid::auto(&comb, &pulse, &g).unwrap();
        let x = simulate_chain(&comb, &pulse, &grid, &g).unwrap().pop().unwrap();
        let y = simulate_chain(&rev, &pulse, &grid, &g).unwrap().pop().unwrap();
        worst_perm = worst_perm.max(y.relative_l2(&x).unwrap());
    }
    pass &= worst_perm < 1e-9;
    notes.push(format!("permutation L2 = {worst_perm:.1e}"));

    let input = FieldTrace::from_fn(0.0, 0.1, 1500, |t| Complex::new((-((t - 30.0) / 5.0).powi(2)).exp(), 0.0)).unwrap();
    let c = Complex::new(0.3, -0.4);
    let copy = FieldTrace::from_fn(0.0, 0.1, 1500, |t| c * (-((t - 47.7) / 5.0).powi(2)).exp()).unwrap();
    let f = fidelity(&input, &copy, &EchoWindow::new(20.0, 80.0).unwrap(), 17.7).unwrap();
    pass &= (f - 1.0).abs() < 1e-9;
    notes.push(format!("copy F = {f:.12}"));

    let base = Grid::auto(&comb, &pulse, &g).unwrap();
    let study = convergence_study_with_levels(&comb, &pulse, &base, &g, &opts(), 0.0, 5, false).unwrap();
    let ratios = study.richardson_ratios();
    let ratios_ok = !ratios.is_empty() && ratios.iter().all(|r| (3.0..=5.0).contains(r));
    pass &= ratios_ok;
    notes.push(format!("Richardson ratios {ratios:.3?}"));

    check(pass, notes.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("closed-form efficiency and static bound", criterion_1),
        ("series self-consistency (1 ns, M=21)", criterion_2),
        ("shaped-comb anchors at 1 ns", criterion_3),
        ("shaped-comb anchors at 5 ns", criterion_4),
        ("optimal three-target comb", criterion_5),
        ("numeric vs series on random static combs", criterion_6),
        ("dynamical scenarios", criterion_7),
        ("outer-pair pruning across xi_bar", criterion_8),
        ("property suite", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} [{}] {name}: {} ({secs:.1} s)",
            if out.pass { "PASS" } else { "FAIL" },
            i + 1,
            out.detail
        );
        if !out.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
