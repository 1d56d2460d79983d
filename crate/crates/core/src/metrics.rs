//! Echo-window detection, efficiency, fidelity and echo timing.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::comb::{CombSystem, PulseSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trace::{fmt_f64, FieldTrace};

/// Echo arrival `τ_i + 2π/(SΓ)`, ns.
pub fn expected_echo_time<T: Real>(tau_i: T, spacing: T, gamma: T) -> T {
    tau_i + T::TAU() / (spacing * gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoWindow<T> {
    pub t1: T,
    pub t2: T,
}

impl<T: Real> EchoWindow<T> {
    pub fn new(t1: T, t2: T) -> Result<Self> {
        if !(t1 < t2) {
            return Err(Error::invalid("window", format!("t1 = {t1} must precede t2 = {t2}")));
        }
        Ok(Self { t1, t2 })
    }

    fn indices(&self, trace: &FieldTrace<T>) -> std::ops::RangeInclusive<usize> {
        let n = trace.len();
        let eps = T::lit(1e-9);
        let lo = ((self.t1 - trace.t_start) / trace.dt - eps).ceil().max(T::zero());
        let hi = ((self.t2 - trace.t_start) / trace.dt + eps).floor();
        let lo = lo.to_usize().unwrap_or(usize::MAX);
        let hi = if hi < T::zero() { 0 } else { hi.to_usize().unwrap_or(0).min(n.saturating_sub(1)) };
        if n == 0 || hi < lo {
            // empty range
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        lo..=hi
    }
}

/// A detected echo: its window and peak time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedEcho<T> {
    pub window: EchoWindow<T>,
    pub peak: T,
}

fn is_local_min<T: Real>(p: &[T], i: usize) -> bool {
    p[i] <= p[i - 1] && p[i] < p[i + 1]
}

/// A minimum only bounds a window if it dips to at most this fraction of
/// the smaller neighbouring maximum; shallower dips are ripples.
const MIN_DIP_RATIO: f64 = 0.5;

/// First significant local minimum in `(start, n − 1)`: the highest power
/// since `start` and the highest power reached before the trace falls below
/// the minimum again both exceed it by the dip ratio.
fn significant_min_after<T: Real>(p: &[T], start: usize) -> Option<usize> {
    let n = p.len();
    let ratio = T::lit(MIN_DIP_RATIO);
    let mut left = p[start];
    for i in start + 1..n.saturating_sub(1) {
        left = left.max(p[i]);
        if !is_local_min(p, i) {
            continue;
        }
        let right = p[i + 1..].iter().take_while(|&&x| x >= p[i]).copied().fold(T::zero(), T::max);
        if p[i] <= ratio * left.min(right) {
            return Some(i);
        }
    }
    None
}

fn is_local_max<T: Real>(p: &[T], i: usize) -> bool {
    p[i] >= p[i - 1] && p[i] > p[i + 1]
}

/// Locates the echo in an output trace.
///
/// The transmitted pulse ends at the first significant local minimum of
/// |Ω|² after `tau_i`; the echo peak is the largest local maximum after that
/// (before `hint + (hint − τ_i)/2` when a hint is given, which excludes a
/// second echo). `t1` is the power minimum between pulse and peak, `t2` the
/// next significant local minimum after the peak, or `peak + (peak − τ_i)/2`
/// if there is none. Minima shallower than half the neighbouring maxima are
/// ripples on a broad echo and are skipped.
pub fn detect_echo<T: Real>(
    trace: &FieldTrace<T>,
    tau_i: T,
    tau_p: T,
    hint_echo_time: Option<T>,
) -> Result<DetectedEcho<T>> {
    let p = trace.power();
    let n = p.len();
    if n < 3 {
        return Err(Error::NoEcho("trace too short".into()));
    }
    let idx = |t: T| -> usize {
        let x = ((t - trace.t_start) / trace.dt).max(T::zero());
        x.floor().to_usize().unwrap_or(n).min(n)
    };
    let i0 = idx(tau_i);
    // a dispersed transmitted pulse can peak before τ_i
    let i0 = i0.min(n - 1);
    let lo = idx(tau_i - T::lit(2.0) * tau_p).min(i0);
    let pulse_peak = (lo..=i0).fold(lo, |b, i| if p[i] > p[b] { i } else { b });
    let end_of_pulse = significant_min_after(&p, pulse_peak)
        .ok_or_else(|| Error::NoEcho("transmitted pulse never decays to a minimum".into()))?;
    let search_end = match hint_echo_time {
        Some(h) if h > tau_i => idx(h + (h - tau_i) / T::lit(2.0)).min(n - 1),
        _ => n - 1,
    };
    let p_max = p.iter().copied().fold(T::zero(), T::max);
    let threshold = p_max * T::lit(1e-6);
    let peak = (end_of_pulse + 1..search_end)
        .filter(|&i| is_local_max(&p, i))
        .fold(None::<usize>, |best, i| match best {
            Some(b) if p[b] >= p[i] => Some(b),
            _ => Some(i),
        })
        .filter(|&i| p[i] > threshold)
        .ok_or_else(|| Error::NoEcho("no local maximum after the transmitted pulse".into()))?;

    let i1 = (end_of_pulse..=peak).fold(end_of_pulse, |best, i| if p[i] < p[best] { i } else { best });
    let t_peak = trace.time_at(peak);
    let i2 = significant_min_after(&p, peak).unwrap_or_else(|| {
        let cap = t_peak + (t_peak - tau_i) / T::lit(2.0);
        idx(cap).clamp(peak + 1, n - 1)
    });
    Ok(DetectedEcho {
        window: EchoWindow {
            t1: trace.time_at(i1),
            t2: trace.time_at(i2),
        },
        peak: t_peak,
    })
}

pub fn detect_window<T: Real>(
    trace: &FieldTrace<T>,
    tau_i: T,
    tau_p: T,
    hint_echo_time: Option<T>,
) -> Result<EchoWindow<T>> {
    detect_echo(trace, tau_i, tau_p, hint_echo_time).map(|d| d.window)
}

/// Windowed output energy over total input energy.
pub fn efficiency<T: Real>(input: &FieldTrace<T>, output: &FieldTrace<T>, window: &EchoWindow<T>) -> Result<T> {
    let e_in = input.energy();
    if !(e_in > T::zero()) {
        return Err(Error::ZeroEnergy("input trace"));
    }
    Ok(output.energy_between(window.t1, window.t2) / e_in)
}

/// |∫_w Ω₁*(t − shift) Ω_M(t) dt|² / (E_in · E_w), clamped to [0, 1].
pub fn fidelity<T: Real>(
    input: &FieldTrace<T>,
    output: &FieldTrace<T>,
    window: &EchoWindow<T>,
    shift: T,
) -> Result<T> {
    if !shift.is_finite() {
        return Err(Error::invalid("shift", "must be finite"));
    }
    let e_in = input.energy();
    let (overlap, e_w) = windowed_overlap(input, output, window, shift);
    let den = e_in * e_w;
    if !(den > T::zero()) {
        return Err(Error::ZeroEnergy("fidelity denominator"));
    }
    Ok((overlap.norm_sqr() / den).min(T::one()))
}

fn windowed_overlap<T: Real>(
    input: &FieldTrace<T>,
    output: &FieldTrace<T>,
    window: &EchoWindow<T>,
    shift: T,
) -> (Complex<T>, T) {
    let range = window.indices(output);
    let (lo, hi) = (*range.start(), *range.end());
    let zero = Complex::new(T::zero(), T::zero());
    if lo > hi {
        return (zero, T::zero());
    }
    let half = T::lit(0.5);
    let mut overlap = zero;
    let mut energy = T::zero();
    for i in lo..=hi {
        let w = if (i == lo || i == hi) && lo != hi { half } else { T::one() };
        let out = output.samples[i];
        let reference = input.interpolate(output.time_at(i) - shift);
        overlap = overlap + reference.conj() * out * w;
        energy = energy + out.norm_sqr() * w;
    }
    if lo == hi {
        return (zero, T::zero());
    }
    (overlap * output.dt, energy * output.dt)
}

/// How the input is aligned with the echo when computing fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMode {
    /// τ_e − τ_i with τ_e = τ_i + 2π/(SΓ).
    Expected,
    /// Detected echo peak − τ_i.
    #[default]
    Peak,
    /// Maximizes F over ±2τ_p around the peak shift, in steps of dt.
    Optimized,
}

impl FromStr for ShiftMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expected" => Ok(Self::Expected),
            "peak" => Ok(Self::Peak),
            "optimized" => Ok(Self::Optimized),
            _ => Err(Error::Unknown {
                kind: "shift mode",
                name: s.to_owned(),
            }),
        }
    }
}

impl fmt::Display for ShiftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Expected => "expected",
            Self::Peak => "peak",
            Self::Optimized => "optimized",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricOptions<T> {
    /// Explicit window; detected when absent.
    pub window: Option<EchoWindow<T>>,
    pub shift_mode: ShiftMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoReport<T> {
    pub efficiency: T,
    pub fidelity: T,
    pub window: EchoWindow<T>,
    pub echo_peak: T,
    pub input_energy: T,
    pub echo_energy: T,
    pub shift_used: T,
    pub shift_mode: ShiftMode,
}

impl<T: Real> EchoReport<T> {
    /// Flat `(key, value)` view shared by the TOML and CSV writers.
    pub fn record(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("efficiency", self.efficiency.to_f64_lossy()),
            ("fidelity", self.fidelity.to_f64_lossy()),
            ("t1_ns", self.window.t1.to_f64_lossy()),
            ("t2_ns", self.window.t2.to_f64_lossy()),
            ("echo_peak_ns", self.echo_peak.to_f64_lossy()),
            ("input_energy", self.input_energy.to_f64_lossy()),
            ("echo_energy", self.echo_energy.to_f64_lossy()),
            ("shift_used_ns", self.shift_used.to_f64_lossy()),
        ]
    }

    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.record() {
            s.push_str(&format!("{k} = {}\n", fmt_toml_float(v)));
        }
        s.push_str(&format!("shift_mode = \"{}\"\n", self.shift_mode));
        s
    }

    pub fn csv_header() -> String {
        "efficiency,fidelity,t1_ns,t2_ns,echo_peak_ns,input_energy,echo_energy,shift_used_ns,shift_mode".into()
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols: Vec<String> = self.record().into_iter().map(|(_, v)| fmt_f64(v)).collect();
        cols.push(self.shift_mode.to_string());
        cols.join(",")
    }
}

/// TOML float literal with 17 significant digits.
pub(crate) fn fmt_toml_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        fmt_f64(v)
    }
}

/// Detects the echo (unless a window is given) and evaluates E and F.
pub fn report<T: Real>(
    input: &FieldTrace<T>,
    output: &FieldTrace<T>,
    pulse: &PulseSpec<T>,
    comb: &CombSystem<T>,
    gamma: T,
    opts: &MetricOptions<T>,
) -> Result<EchoReport<T>> {
    input.ensure_compatible(output)?;
    let expected = (comb.spacing > T::zero()).then(|| expected_echo_time(pulse.tau_i, comb.spacing, gamma));
    let (window, echo_peak) = match opts.window {
        Some(w) => {
            let w = EchoWindow::new(w.t1, w.t2)?;
            (w, peak_in(output, &w))
        }
        None => {
            // accelerated combs do not rephase a second time
            let hint = expected.filter(|_| comb.is_static());
            let d = detect_echo(output, pulse.tau_i, pulse.tau_p, hint)?;
            (d.window, d.peak)
        }
    };
    let input_energy = input.energy();
    if !(input_energy > T::zero()) {
        return Err(Error::ZeroEnergy("input trace"));
    }
    let echo_energy = output.energy_between(window.t1, window.t2);
    let peak_shift = echo_peak - pulse.tau_i;
    let (shift_used, fid) = match opts.shift_mode {
        ShiftMode::Peak => (peak_shift, fidelity(input, output, &window, peak_shift)?),
        ShiftMode::Expected => {
            let shift = expected.map_or(peak_shift, |te| te - pulse.tau_i);
            (shift, fidelity(input, output, &window, shift)?)
        }
        ShiftMode::Optimized => {
            let steps = (T::lit(2.0) * pulse.tau_p / output.dt).ceil().to_i64().unwrap_or(0);
            let mut best = (peak_shift, fidelity(input, output, &window, peak_shift)?);
            for s in -steps..=steps {
                let shift = peak_shift + T::lit(s as f64) * output.dt;
                let f = fidelity(input, output, &window, shift)?;
                if f > best.1 {
                    best = (shift, f);
                }
            }
            best
        }
    };
    Ok(EchoReport {
        efficiency: echo_energy / input_energy,
        fidelity: fid,
        window,
        echo_peak,
        input_energy,
        echo_energy,
        shift_used,
        shift_mode: opts.shift_mode,
    })
}

fn peak_in<T: Real>(trace: &FieldTrace<T>, window: &EchoWindow<T>) -> T {
    let range = window.indices(trace);
    let best = range.fold(None::<usize>, |best, i| match best {
        Some(b) if trace.samples[b].norm_sqr() >= trace.samples[i].norm_sqr() => Some(b),
        _ => Some(i),
    });
    best.map_or(window.t1, |i| trace.time_at(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comb::build_flat_comb;

    const G: f64 = 1.0 / 141.1;

    fn two_gaussians(a: f64, b: f64) -> FieldTrace<f64> {
        FieldTrace::from_fn(0.0, 0.01, 8001, |t| {
            let g = |c: f64| (-((t - c) / 2.0).powi(2)).exp();
            Complex::new(g(20.0) * a + g(40.0) * b, 0.0)
        })
        .unwrap()
    }

    fn gaussian_at(c: f64, amp: Complex<f64>) -> FieldTrace<f64> {
        FieldTrace::from_fn(0.0, 0.01, 8001, |t| amp * (-((t - c) / 2.0).powi(2)).exp()).unwrap()
    }

    #[test]
    fn expected_echo_time_values() {
        assert!((expected_echo_time(20.0, 50.0, G) - 37.73).abs() < 0.005);
        assert_eq!(expected_echo_time(20.0, f64::INFINITY, G), 20.0);
        let d50 = expected_echo_time(0.0, 50.0, G);
        assert!((expected_echo_time(0.0, 25.0, G) - 2.0 * d50).abs() < 1e-12);
    }

    #[test]
    fn synthetic_window() {
        let tr = two_gaussians(1.0, 1.0);
        let d = detect_echo(&tr, 20.0, 2.0, None).unwrap();
        assert!((d.window.t1 - 30.0).abs() < 0.02, "{:?}", d);
        assert!((d.window.t2 - 50.0).abs() < 0.02, "{:?}", d);
        assert!((d.peak - 40.0).abs() < 0.011);
    }

    #[test]
    fn no_echo_after_input() {
        let tr = two_gaussians(1.0, 0.0);
        assert!(matches!(detect_window(&tr, 20.0, 2.0, None), Err(Error::NoEcho(_))));
    }

    #[test]
    fn efficiency_examples() {
        let input = gaussian_at(20.0, Complex::new(1.0, 0.0));
        let w = EchoWindow::new(30.0, 79.0).unwrap();
        let e1 = efficiency(&input, &gaussian_at(50.0, Complex::new(1.0, 0.0)), &w).unwrap();
        assert!((e1 - 1.0).abs() < 1e-9);
        let e2 = efficiency(&input, &gaussian_at(50.0, Complex::new(0.5, 0.0)), &w).unwrap();
        assert!((e2 - 0.25).abs() < 1e-9);
        assert_eq!(efficiency(&input, &input.zeros_like(), &w).unwrap(), 0.0);
        assert!(efficiency(&input.zeros_like(), &input, &w).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let input = gaussian_at(20.0, Complex::new(1.0, 0.0));
        let w = EchoWindow::new(30.0, 79.0).unwrap();
        let out = gaussian_at(50.0, Complex::new(-0.3, 0.7));
        assert!((fidelity(&input, &out, &w, 30.0).unwrap() - 1.0).abs() < 1e-9);
        let odd = FieldTrace::from_fn(0.0, 0.01, 8001, |t: f64| {
            let x = (t - 50.0) / 2.0;
            Complex::new(x * (-x * x).exp(), 0.0)
        })
        .unwrap();
        let w = EchoWindow::new(40.0, 60.0).unwrap();
        assert!(fidelity(&input, &odd, &w, 30.0).unwrap() < 1e-12);
    }

    #[test]
    fn report_rejects_passive_comb() {
        let pulse = PulseSpec::unit(30.0, 5.0).unwrap();
        let input = FieldTrace::from_fn(0.0, 0.1, 2000, |t| Complex::new(pulse.envelope(t), 0.0)).unwrap();
        let comb = build_flat_comb(3, 50.0, 0.0).unwrap();
        let r = report(&input, &input.clone(), &pulse, &comb, G, &MetricOptions::default());
        assert!(matches!(r, Err(Error::NoEcho(_))));
    }

    #[test]
    fn report_shift_modes() {
        let pulse = PulseSpec::unit(20.0, 2.0).unwrap();
        let input = gaussian_at(20.0, Complex::new(1.0, 0.0));
        let output = two_gaussians(0.8, 0.6);
        let comb = build_flat_comb(3, 50.0, 1.0).unwrap();
        let peak = report(&input, &output, &pulse, &comb, G, &MetricOptions::default()).unwrap();
        assert!((peak.shift_used - 20.0).abs() < 0.011);
        assert!((peak.efficiency - 0.36).abs() < 1e-3);
        let opt = MetricOptions {
            window: None,
            shift_mode: ShiftMode::Optimized,
        };
        let best = report(&input, &output, &pulse, &comb, G, &opt).unwrap();
        assert!(best.fidelity >= peak.fidelity);
        let toml_text = best.to_toml();
        assert!(toml_text.contains("shift_mode = \"optimized\""));
        let parsed: toml::Table = toml_text.parse().unwrap();
        assert_eq!(parsed["efficiency"].as_float().unwrap(), best.efficiency);
        assert_eq!(best.to_csv_row().split(',').count(), EchoReport::<f64>::csv_header().split(',').count());
    }
}
