//! Frequency-domain solutions for static single-line combs: per-target
//! transfer factors, the Fourier-series output field and the closed-form
//! flat-comb efficiency.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comb::{build_shaped_comb, CombSystem, PhysConstants, PulseSpec};
use crate::error::{Error, Result};
use crate::metrics::{report, EchoReport, MetricOptions};
use crate::scalar::Real;
use crate::trace::{fmt_f64, FieldTrace};

pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-12;

/// `E = 16π²ξ̄² exp[−2π(2ξ̄+1)/S] / S²`.
pub fn closed_form_efficiency<T: Real>(xi_bar: T, spacing: T) -> T {
    let pi = T::PI();
    let two = T::lit(2.0);
    T::lit(16.0) * pi * pi * xi_bar * xi_bar * (-two * pi * (two * xi_bar + T::one()) / spacing).exp()
        / (spacing * spacing)
}

/// `exp[−2iξ/(ω − δ + i/2)]`, everything in units of Γ.
pub fn target_transfer<T: Real>(omega: T, xi: T, delta: T) -> Complex<T> {
    transfer_exponent(omega, xi, delta).exp()
}

fn transfer_exponent<T: Real>(omega: T, xi: T, delta: T) -> Complex<T> {
    let den = Complex::new(omega - delta, T::lit(0.5));
    Complex::new(T::zero(), -T::lit(2.0) * xi) / den
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig<T> {
    /// Half period T of the series, ns.
    pub half_period: T,
    pub l_max: usize,
    pub truncation_tol: T,
}

impl<T: Real> SeriesConfig<T> {
    /// Smallest `l_max` with `exp[−(l_max·π·τ_p/2T)²] < tol`.
    pub fn new(half_period: T, tau_p: T, truncation_tol: T) -> Result<Self> {
        if !(half_period > T::zero()) || !half_period.is_finite() {
            return Err(Error::invalid("half_period", "must be positive"));
        }
        if !(truncation_tol > T::zero() && truncation_tol < T::one()) {
            return Err(Error::invalid("truncation_tol", "must lie in (0, 1)"));
        }
        if !(tau_p > T::zero()) {
            return Err(Error::invalid("tau_p", "pulse width must be positive"));
        }
        let bound = T::lit(2.0) * half_period / (T::PI() * tau_p) * (-truncation_tol.ln()).sqrt();
        let l_max = bound.floor().to_usize().ok_or_else(|| Error::invalid("half_period", "series too long"))? + 1;
        Ok(Self {
            half_period,
            l_max,
            truncation_tol,
        })
    }

    /// Default half period: transmitted pulse, three echo delays, a 6τ_p guard
    /// and the time for the coherence tail `(1+ξ)·exp(−Γt/2)` to fall below
    /// the truncation tolerance, so the periodic images do not overlap.
    pub fn auto(pulse: &PulseSpec<T>, comb: &CombSystem<T>, gamma: T, truncation_tol: T) -> Result<Self> {
        if !(comb.spacing > T::zero()) {
            return Err(Error::invalid("S", "comb spacing must be positive"));
        }
        let delay = T::TAU() / (comb.spacing * gamma);
        let tail = ((T::one() + comb.total_xi()) / truncation_tol).ln() / gamma;
        let half_period = pulse.tau_i.max(T::zero()) + T::lit(3.0) * delay + T::lit(6.0) * pulse.tau_p + tail;
        Self::new(half_period, pulse.tau_p, truncation_tol)
    }
}

fn ensure_series_comb<T: Real>(comb: &CombSystem<T>) -> Result<()> {
    if let Some((i, _)) = comb.targets.iter().enumerate().find(|(_, t)| !t.is_static()) {
        return Err(Error::UnsupportedComb(format!("target {i} is accelerated")));
    }
    if let Some((i, _)) = comb.targets.iter().enumerate().find(|(_, t)| !t.is_single_line()) {
        return Err(Error::UnsupportedComb(format!("target {i} is magnetized")));
    }
    Ok(())
}

/// Precomputed series coefficients `c_l`, l = −l_max..=l_max.
#[derive(Debug, Clone)]
pub struct SeriesEvaluator<T> {
    tau_i: T,
    half_period: T,
    l_max: usize,
    coeffs: Vec<Complex<T>>,
}

impl<T: Real> SeriesEvaluator<T> {
    pub fn new(pulse: &PulseSpec<T>, comb: &CombSystem<T>, cfg: &SeriesConfig<T>, gamma: T) -> Result<Self> {
        ensure_series_comb(comb)?;
        let tt = cfg.half_period;
        let pi = T::PI();
        let prefactor = pulse.omega0 * pi.sqrt() * pulse.tau_p / (T::lit(2.0) * tt);
        let l_max = cfg.l_max as i64;
        let coeffs = (-l_max..=l_max)
            .map(|l| {
                let lf = T::lit(l as f64);
                let omega = -lf * pi / (tt * gamma);
                let g = lf * pi * pulse.tau_p / (T::lit(2.0) * tt);
                let exponent = comb
                    .targets
                    .iter()
                    .fold(Complex::new(-g * g, T::zero()), |acc, t| {
                        acc + transfer_exponent(omega, t.xi, t.doppler_static)
                    });
                exponent.exp() * prefactor
            })
            .collect();
        Ok(Self {
            tau_i: pulse.tau_i,
            half_period: tt,
            l_max: cfg.l_max,
            coeffs,
        })
    }

    pub fn eval(&self, t: T) -> Complex<T> {
        // Powers of z = exp(iπ(t−τ_i)/T) by recurrence, reseeded every 256
        // terms to keep the accumulated phase error at the rounding level.
        const RESEED: usize = 256;
        let theta = T::PI() * (t - self.tau_i) / self.half_period;
        let z = Complex::from_polar(T::one(), theta);
        let zc = z.conj();
        let c0 = self.l_max;
        let mut acc = self.coeffs[c0];
        let (mut wp, mut wn) = (z, zc);
        for l in 1..=self.l_max {
            if l % RESEED == 0 {
                let ang = theta * T::from_usize_lossy(l);
                wp = Complex::from_polar(T::one(), ang);
                wn = wp.conj();
            }
            acc = acc + self.coeffs[c0 + l] * wp + self.coeffs[c0 - l] * wn;
            wp = wp * z;
            wn = wn * zc;
        }
        acc
    }

    pub fn trace(&self, t_start: T, dt: T, n: usize) -> Result<FieldTrace<T>> {
        let samples = (0..n)
            .into_par_iter()
            .map(|i| self.eval(t_start + T::from_usize_lossy(i) * dt))
            .collect();
        FieldTrace::new(t_start, dt, samples)
    }
}

/// Output field Ω_M(t) of a static single-line comb, evaluated from the
/// truncated Fourier series.
pub fn echo_field_series<T: Real>(
    t: T,
    pulse: &PulseSpec<T>,
    comb: &CombSystem<T>,
    cfg: &SeriesConfig<T>,
    gamma: T,
) -> Result<Complex<T>> {
    Ok(SeriesEvaluator::new(pulse, comb, cfg, gamma)?.eval(t))
}

/// Default sampling of analytic traces: dt = τ_p/40 from
/// min(0, τ_i − 6τ_p) to τ_i + 2.5 echo delays + 6τ_p.
pub fn default_sampling<T: Real>(pulse: &PulseSpec<T>, spacing: T, gamma: T) -> (T, T, usize) {
    let dt = pulse.tau_p / T::lit(40.0);
    let delay = T::TAU() / (spacing * gamma);
    let t0 = (pulse.tau_i - T::lit(6.0) * pulse.tau_p).min(T::zero());
    let t_end = pulse.tau_i + T::lit(2.5) * delay + T::lit(6.0) * pulse.tau_p;
    let n = ((t_end - t0) / dt).floor().to_usize().unwrap_or(0) + 1;
    (t0, dt, n)
}

/// Input and series output sampled on the default analytic grid.
#[derive(Debug, Clone)]
pub struct AnalyticRun<T> {
    pub input: FieldTrace<T>,
    pub output: FieldTrace<T>,
    pub config: SeriesConfig<T>,
}

pub fn series_run<T: Real>(pulse: &PulseSpec<T>, comb: &CombSystem<T>, gamma: T) -> Result<AnalyticRun<T>> {
    let cfg = SeriesConfig::auto(pulse, comb, gamma, T::lit(DEFAULT_TRUNCATION_TOL))?;
    let (t0, dt, n) = default_sampling(pulse, comb.spacing, gamma);
    let output = SeriesEvaluator::new(pulse, comb, &cfg, gamma)?.trace(t0, dt, n)?;
    let input = FieldTrace::from_fn(t0, dt, n, |t| Complex::new(pulse.envelope(t), T::zero()))?;
    Ok(AnalyticRun {
        input,
        output,
        config: cfg,
    })
}

/// Echo report of the series output for a static comb.
pub fn analytic_report<T: Real>(
    pulse: &PulseSpec<T>,
    comb: &CombSystem<T>,
    gamma: T,
    opts: &MetricOptions<T>,
) -> Result<EchoReport<T>> {
    let run = series_run(pulse, comb, gamma)?;
    report(&run.input, &run.output, pulse, comb, gamma, opts)
}

/// E and F on a (k, ξ) grid; cells without a detectable echo are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyMap<T> {
    pub k_grid: Vec<T>,
    pub xi_grid: Vec<T>,
    /// `efficiency[i][j]` belongs to `(k_grid[i], xi_grid[j])`.
    pub efficiency: Vec<Vec<T>>,
    pub fidelity: Vec<Vec<T>>,
}

impl<T: Real> EfficiencyMap<T> {
    /// Header row of ξ values, first column of k values, cells = E.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k\\xi");
        for xi in &self.xi_grid {
            s.push(',');
            s.push_str(&fmt_f64(xi.to_f64_lossy()));
        }
        s.push('\n');
        for (k, row) in self.k_grid.iter().zip(&self.efficiency) {
            s.push_str(&fmt_f64(k.to_f64_lossy()));
            for e in row {
                s.push(',');
                s.push_str(&fmt_f64(e.to_f64_lossy()));
            }
            s.push('\n');
        }
        s
    }
}

/// Echo report for one shaped comb, with "no echo" mapped to `None`.
pub fn shaped_comb_report<T: Real>(
    pulse: &PulseSpec<T>,
    spacing: T,
    m: usize,
    k: T,
    total_xi: T,
    constants: &PhysConstants<T>,
    opts: &MetricOptions<T>,
) -> Result<Option<EchoReport<T>>> {
    let comb = build_shaped_comb(m, spacing, k, pulse.tau_p, total_xi, constants.gamma)?;
    if comb.total_xi() == T::zero() {
        return Ok(None);
    }
    match analytic_report(pulse, &comb, constants.gamma, opts) {
        Ok(r) => Ok(Some(r)),
        Err(Error::NoEcho(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn efficiency_map<T: Real>(
    k_grid: &[T],
    xi_grid: &[T],
    pulse: &PulseSpec<T>,
    spacing: T,
    m: usize,
    constants: &PhysConstants<T>,
    opts: &MetricOptions<T>,
) -> Result<EfficiencyMap<T>> {
    if k_grid.is_empty() || xi_grid.is_empty() {
        return Err(Error::invalid("grid", "k and xi grids must be non-empty"));
    }
    let nx = xi_grid.len();
    let cells = (0..k_grid.len() * nx)
        .into_par_iter()
        .map(|idx| {
            let r = shaped_comb_report(pulse, spacing, m, k_grid[idx / nx], xi_grid[idx % nx], constants, opts)?;
            Ok(r.map_or((T::zero(), T::zero()), |r| (r.efficiency, r.fidelity)))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = |f: fn(&(T, T)) -> T| cells.chunks(nx).map(|row| row.iter().map(f).collect()).collect();
    Ok(EfficiencyMap {
        k_grid: k_grid.to_vec(),
        xi_grid: xi_grid.to_vec(),
        efficiency: rows(|c| c.0),
        fidelity: rows(|c| c.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comb::{build_flat_comb, MotionProfile, TargetSpec};

    const G: f64 = 1.0 / 141.1;

    #[test]
    fn closed_form_values() {
        assert!((closed_form_efficiency(8.0f64, 50.0) - 0.4773).abs() < 5e-4);
        assert_eq!(closed_form_efficiency(0.0, 50.0), 0.0);
        let s = 1e6;
        let e = closed_form_efficiency(s / std::f64::consts::TAU, s);
        assert!((e - 4.0 * (-2.0f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn transfer_limits() {
        assert_eq!(target_transfer(3.0, 0.0, 1.0), Complex::new(1.0, 0.0));
        let on = target_transfer(7.0, 1.0, 7.0);
        assert!((on - Complex::new((-4.0f64).exp(), 0.0)).norm() < 1e-15);
        let far = target_transfer(1e9, 5.0, 0.0);
        assert!((far - Complex::new(1.0, 0.0)).norm() < 1e-7);
    }

    #[test]
    fn empty_comb_reconstructs_gaussian() {
        let pulse = PulseSpec::unit(6.0, 1.0).unwrap();
        let comb = build_flat_comb(3, 50.0, 0.0).unwrap();
        let cfg = SeriesConfig::auto(&pulse, &comb, G, 1e-12).unwrap();
        let ev = SeriesEvaluator::new(&pulse, &comb, &cfg, G).unwrap();
        for i in 0..200 {
            let t = i as f64 * 0.173;
            assert!((ev.eval(t) - Complex::new(pulse.envelope(t), 0.0)).norm() < 1e-11, "t = {t}");
        }
    }

    #[test]
    fn truncation_bound_holds() {
        let cfg = SeriesConfig::new(500.0, 2.0, 1e-12).unwrap();
        let x = cfg.l_max as f64 * std::f64::consts::PI * 2.0 / 1000.0;
        assert!((-x * x).exp() < 1e-12);
        let y = (cfg.l_max - 1) as f64 * std::f64::consts::PI * 2.0 / 1000.0;
        assert!((-y * y).exp() >= 1e-12);
    }

    #[test]
    fn rejects_dynamic_and_magnetized() {
        let pulse = PulseSpec::unit(30.0, 5.0).unwrap();
        let mut comb = build_flat_comb(1, 50.0, 1.0).unwrap();
        comb.targets[0].hyperfine = 50.0;
        let cfg = SeriesConfig::auto(&pulse, &comb, G, 1e-12).unwrap();
        assert!(matches!(SeriesEvaluator::new(&pulse, &comb, &cfg, G), Err(Error::UnsupportedComb(_))));
        comb.targets[0] = TargetSpec {
            motion: MotionProfile::new(1, 60.0, 100.0, 50.0).unwrap(),
            ..TargetSpec::stationary(1.0, 0.0)
        };
        assert!(matches!(SeriesEvaluator::new(&pulse, &comb, &cfg, G), Err(Error::UnsupportedComb(_))));
    }

    #[test]
    fn single_resonant_target_attenuates_by_transfer() {
        // a long pulse is narrow-band, so the peak transmission approaches exp(-4ξ)
        let pulse = PulseSpec::unit(20_000.0, 5000.0).unwrap();
        let comb = CombSystem::new(vec![TargetSpec::stationary(0.1, 0.0)], 50.0, 0.0).unwrap();
        let cfg = SeriesConfig::new(100_000.0, 5000.0, 1e-12).unwrap();
        let out = echo_field_series(20_000.0, &pulse, &comb, &cfg, G).unwrap();
        assert!((out.norm() - (-0.4f64).exp()).abs() < 2e-3, "{}", out.norm());
    }

    #[test]
    fn map_has_zero_column_at_zero_thickness() {
        let pulse = PulseSpec::unit(30.0, 5.0).unwrap();
        let c = PhysConstants::default();
        let map = efficiency_map(&[0.0, 0.5], &[0.0, 24.0], &pulse, 50.0, 3, &c, &MetricOptions::default()).unwrap();
        assert_eq!(map.efficiency[0][0], 0.0);
        assert_eq!(map.efficiency[1][0], 0.0);
        assert!(map.efficiency[0][1] > 0.3);
        let csv = map.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("k\\xi,"));
    }
}
