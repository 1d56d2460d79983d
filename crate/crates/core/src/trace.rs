//! Uniformly sampled complex field envelopes.

use std::io::{self, Write};

use num_complex::Complex;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrace<T> {
    /// ns
    pub t_start: T,
    /// ns
    pub dt: T,
    pub samples: Vec<Complex<T>>,
}

impl<T: Real> FieldTrace<T> {
    pub fn new(t_start: T, dt: T, samples: Vec<Complex<T>>) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::invalid("dt", "sample spacing must be positive"));
        }
        if !t_start.is_finite() {
            return Err(Error::invalid("t_start", "must be finite"));
        }
        let trace = Self {
            t_start,
            dt,
            samples,
        };
        trace.check_finite()?;
        Ok(trace)
    }

    /// Samples `f` at `t_start + i·dt`, i = 0..n.
    pub fn from_fn(t_start: T, dt: T, n: usize, f: impl Fn(T) -> Complex<T>) -> Result<Self> {
        let samples = (0..n).map(|i| f(t_start + T::from_usize_lossy(i) * dt)).collect();
        Self::new(t_start, dt, samples)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            t_start: self.t_start,
            dt: self.dt,
            samples: vec![Complex::new(T::zero(), T::zero()); self.samples.len()],
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.samples.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    #[inline]
    pub fn time_at(&self, i: usize) -> T {
        self.t_start + T::from_usize_lossy(i) * self.dt
    }

    pub fn t_end(&self) -> T {
        self.time_at(self.len().saturating_sub(1))
    }

    pub fn power(&self) -> Vec<T> {
        self.samples.iter().map(|z| z.norm_sqr()).collect()
    }

    /// ∫|Ω|² dt over the full trace (trapezoid).
    pub fn energy(&self) -> T {
        trapezoid(&self.power(), self.dt)
    }

    /// ∫|Ω|² dt over `[t1, t2]`, trapezoid on the samples with linearly
    /// interpolated power at the window edges.
    pub fn energy_between(&self, t1: T, t2: T) -> T {
        let p = self.power();
        integrate_linear(&p, self.t_start, self.dt, t1, t2)
    }

    /// Linear interpolation of the complex envelope; zero outside the trace.
    pub fn interpolate(&self, t: T) -> Complex<T> {
        let zero = Complex::new(T::zero(), T::zero());
        let n = self.len();
        if n == 0 {
            return zero;
        }
        let x = (t - self.t_start) / self.dt;
        let last = T::from_usize_lossy(n - 1);
        if x < T::zero() || x > last || !x.is_finite() {
            return zero;
        }
        let i = x.floor().to_usize().unwrap_or(0).min(n - 1);
        if i + 1 >= n {
            return self.samples[n - 1];
        }
        let f = x - T::from_usize_lossy(i);
        self.samples[i] * (T::one() - f) + self.samples[i + 1] * f
    }

    pub fn scaled(&self, c: Complex<T>) -> Self {
        Self {
            t_start: self.t_start,
            dt: self.dt,
            samples: self.samples.iter().map(|&z| z * c).collect(),
        }
    }

    /// Same length, spacing and origin (to a small fraction of a sample).
    pub fn ensure_compatible(&self, other: &Self) -> Result<()> {
        let tol = self.dt * T::lit(1e-6);
        if self.len() != other.len()
            || (self.dt - other.dt).abs() > tol
            || (self.t_start - other.t_start).abs() > tol
        {
            return Err(Error::IncompatibleTraces(format!(
                "({}, {}, {}) vs ({}, {}, {})",
                self.t_start,
                self.dt,
                self.len(),
                other.t_start,
                other.dt,
                other.len()
            )));
        }
        Ok(())
    }

    /// ‖self − reference‖₂ / ‖reference‖₂ over the common samples.
    pub fn relative_l2(&self, reference: &Self) -> Result<T> {
        self.ensure_compatible(reference)?;
        let num: T = self
            .samples
            .iter()
            .zip(&reference.samples)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let den: T = reference.samples.iter().map(|z| z.norm_sqr()).sum();
        if den == T::zero() {
            return Err(Error::ZeroEnergy("reference trace"));
        }
        Ok((num / den).sqrt())
    }

    /// CSV with header `t_ns,re,im,abs2`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_ns,re,im,abs2")?;
        for (i, z) in self.samples.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(self.time_at(i).to_f64_lossy()),
                fmt_f64(z.re.to_f64_lossy()),
                fmt_f64(z.im.to_f64_lossy()),
                fmt_f64(z.norm_sqr().to_f64_lossy())
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Parses the format written by [`FieldTrace::write_csv`].
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 3 {
                return Err(Error::Config(format!("trace CSV line {}: expected t_ns,re,im", lineno + 1)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("trace CSV line {}: {e}", lineno + 1)))
            };
            times.push(parse(cols[0])?);
            samples.push(Complex::new(T::lit(parse(cols[1])?), T::lit(parse(cols[2])?)));
        }
        if times.len() < 2 {
            return Err(Error::Config("trace CSV needs at least two samples".into()));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        Self::new(T::lit(times[0]), T::lit(dt), samples)
    }
}

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Trapezoid rule on uniformly spaced samples.
pub fn trapezoid<T: Real>(values: &[T], dt: T) -> T {
    match values.len() {
        0 | 1 => T::zero(),
        n => {
            let inner: T = values[1..n - 1].iter().copied().sum();
            dt * (inner + (values[0] + values[n - 1]) / T::lit(2.0))
        }
    }
}

/// Integral over `[a, b]` of the piecewise-linear interpolant of `values`.
fn integrate_linear<T: Real>(values: &[T], t0: T, dt: T, a: T, b: T) -> T {
    let n = values.len();
    if n < 2 || !(b > a) {
        return T::zero();
    }
    let last = T::from_usize_lossy(n - 1);
    let xa = ((a - t0) / dt).max(T::zero()).min(last);
    let xb = ((b - t0) / dt).max(T::zero()).min(last);
    if !(xb > xa) {
        return T::zero();
    }
    let at = |x: T| {
        let i = x.floor().to_usize().unwrap_or(0).min(n - 2);
        let f = x - T::from_usize_lossy(i);
        values[i] * (T::one() - f) + values[i + 1] * f
    };
    let ia = xa.ceil().to_usize().unwrap_or(0);
    let ib = xb.floor().to_usize().unwrap_or(0);
    if ia > ib {
        // both ends inside one interval
        return (at(xa) + at(xb)) / T::lit(2.0) * (xb - xa) * dt;
    }
    let head = (at(xa) + values[ia]) / T::lit(2.0) * (T::from_usize_lossy(ia) - xa);
    let tail = (values[ib] + at(xb)) / T::lit(2.0) * (xb - T::from_usize_lossy(ib));
    let body = trapezoid(&values[ia..=ib], T::one());
    (head + body + tail) * dt
}
