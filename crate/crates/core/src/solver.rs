//! Numerical Maxwell–Bloch propagation through a chain of targets.
//!
//! Retarded frame, z ∈ [0, 1] per target. Coherences advance in t with an
//! exponential integrator (exact decay/detuning factor over each step,
//! trapezoidal drive); the field advances in z with Heun's predictor-corrector.
//! Both are second order.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::comb::{CombSystem, PhysConstants, PulseSpec, TargetSpec};
use crate::error::{Error, Result};
use crate::metrics::{report, EchoWindow, MetricOptions};
use crate::scalar::Real;
use crate::trace::FieldTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    /// ns
    pub t0: T,
    /// ns; always `t0 + (n_t − 1)·dt`.
    pub t1: T,
    /// ns
    pub dt: T,
    /// Minimum z slabs per target; thick targets get `nz·ξ_n/2` (see [`Grid::slabs_for`]).
    pub nz: usize,
}

impl<T: Real> Grid<T> {
    /// Snaps `t1` down onto the sample lattice.
    pub fn new(t0: T, t1: T, dt: T, nz: usize) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::invalid("dt", "time step must be positive"));
        }
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::invalid("t1", "window must satisfy t0 < t1"));
        }
        if nz == 0 {
            return Err(Error::invalid("nz", "need at least one z step"));
        }
        let steps = ((t1 - t0) / dt + T::lit(1e-9)).floor();
        Ok(Self {
            t0,
            t1: t0 + steps * dt,
            dt,
            nz,
        })
    }

    /// Default grid for a run: window `[min(0, τ_i − 6τ_p), τ_i + 3·2π/(SΓ) + 6τ_p]`,
    /// `dt = min(τ_p/40, 2π/(16·Δ_max·Γ))`, `nz = 32`.
    pub fn auto(comb: &CombSystem<T>, pulse: &PulseSpec<T>, constants: &PhysConstants<T>) -> Result<Self> {
        let gamma = constants.gamma;
        let delay = if comb.spacing > T::zero() {
            T::TAU() / (comb.spacing * gamma)
        } else {
            T::lit(6.0) * pulse.tau_p
        };
        let t1 = pulse.tau_i + T::lit(3.0) * delay + T::lit(6.0) * pulse.tau_p;
        let mut dt = pulse.tau_p / T::lit(40.0);
        let dmax = comb.max_abs_detuning();
        if dmax > T::zero() {
            dt = dt.min(T::TAU() / (T::lit(16.0) * dmax * gamma));
        }
        let t0 = (pulse.tau_i - T::lit(6.0) * pulse.tau_p).min(T::zero());
        Self::new(t0, t1, dt, 32)
    }

    pub fn n_t(&self) -> usize {
        ((self.t1 - self.t0) / self.dt + T::lit(0.5)).floor().to_usize().unwrap_or(0) + 1
    }

    pub fn time_at(&self, i: usize) -> T {
        self.t0 + T::from_usize_lossy(i) * self.dt
    }

    /// z slabs used for a target of thickness ξ: `max(nz, ⌈nz·ξ/2⌉)`, which
    /// keeps |dz·4ξ| ≤ 8/nz for Heun's method.
    pub fn slabs_for(&self, xi: T) -> usize {
        let thick = (T::from_usize_lossy(self.nz) * xi / T::lit(2.0)).ceil().to_usize().unwrap_or(usize::MAX);
        self.nz.max(thick)
    }

    /// Halved dt, doubled nz, same window.
    pub fn refined(&self) -> Self {
        Self {
            t0: self.t0,
            t1: self.t1,
            dt: self.dt / T::lit(2.0),
            nz: self.nz * 2,
        }
    }

    /// Refuses grids with fewer than 8 samples per oscillation of the largest
    /// detuning or fewer than 16 samples per pulse width.
    pub fn check_resolution(&self, comb: &CombSystem<T>, tau_p: T, gamma: T) -> Result<()> {
        let dmax = comb.max_abs_detuning();
        if self.dt * dmax * gamma > T::TAU() / T::lit(8.0) {
            return Err(Error::GridTooCoarse(format!(
                "dt = {} ns gives fewer than 8 samples per oscillation at |Δ| = {}Γ (need dt <= {} ns)",
                self.dt,
                dmax,
                T::TAU() / (T::lit(8.0) * dmax * gamma)
            )));
        }
        if self.dt * T::lit(16.0) > tau_p {
            return Err(Error::GridTooCoarse(format!(
                "dt = {} ns gives fewer than 16 samples per pulse width {} ns",
                self.dt, tau_p
            )));
        }
        Ok(())
    }

    pub fn sample_pulse(&self, pulse: &PulseSpec<T>) -> Result<FieldTrace<T>> {
        FieldTrace::from_fn(self.t0, self.dt, self.n_t(), |t| Complex::new(pulse.envelope(t), T::zero()))
    }
}

/// Coherences ρ₃₁, ρ₄₂ over t at the exit slab of a target.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceState<T> {
    pub rho31: Vec<Complex<T>>,
    pub rho42: Vec<Complex<T>>,
}

impl<T: Real> CoherenceState<T> {
    pub fn max_abs(&self) -> T {
        self.rho31.iter().chain(&self.rho42).map(|z| z.norm()).fold(T::zero(), T::max)
    }
}

/// One absorption line of a target: per-step propagators
/// `exp[−(Γ/2 + iΔ(t_{j+½})Γ)dt]` and how many transitions share it.
struct Line<T> {
    decay: Vec<Complex<T>>,
    multiplicity: T,
}

fn lines_for<T: Real>(target: &TargetSpec<T>, grid: &Grid<T>, gamma: T) -> (Line<T>, Option<Line<T>>) {
    let n = grid.n_t();
    let half = T::lit(0.5);
    let mut d31 = Vec::with_capacity(n.saturating_sub(1));
    let mut d42 = Vec::with_capacity(n.saturating_sub(1));
    for j in 0..n.saturating_sub(1) {
        let tm = grid.t0 + (T::from_usize_lossy(j) + half) * grid.dt;
        let (a, b) = target.detunings_at(tm);
        let step = |delta: T| Complex::new(-half * gamma * grid.dt, -delta * gamma * grid.dt).exp();
        d31.push(step(a));
        if !target.is_single_line() {
            d42.push(step(b));
        }
    }
    if target.is_single_line() {
        (
            Line {
                decay: d31,
                multiplicity: T::lit(2.0),
            },
            None,
        )
    } else {
        (
            Line {
                decay: d31,
                multiplicity: T::one(),
            },
            Some(Line {
                decay: d42,
                multiplicity: T::one(),
            }),
        )
    }
}

/// Coherence of one line driven by `field`, starting from zero:
/// ρ_{j+1} = E_j ρ_j + i(a/4)(dt/2)(E_j Ω_j + Ω_{j+1}).
fn line_coherence<T: Real>(field: &[Complex<T>], line: &Line<T>, drive: Complex<T>, out: &mut [Complex<T>]) {
    let mut rho = Complex::new(T::zero(), T::zero());
    out[0] = rho;
    for j in 0..field.len() - 1 {
        let e = line.decay[j];
        rho = e * rho + drive * (e * field[j] + field[j + 1]);
        out[j + 1] = rho;
    }
}

struct SourceWork<T> {
    rho: Vec<Complex<T>>,
}

/// dΩ/dz = i·6Γξ·a·(ρ₃₁ + ρ₄₂), written into `out`.
fn source<T: Real>(
    field: &[Complex<T>],
    lines: &(Line<T>, Option<Line<T>>),
    coupling: Complex<T>,
    drive: Complex<T>,
    work: &mut SourceWork<T>,
    out: &mut [Complex<T>],
) {
    line_coherence(field, &lines.0, drive, &mut work.rho);
    let c = coupling * lines.0.multiplicity;
    for (o, r) in out.iter_mut().zip(&work.rho) {
        *o = *r * c;
    }
    if let Some(second) = &lines.1 {
        line_coherence(field, second, drive, &mut work.rho);
        let c = coupling * second.multiplicity;
        for (o, r) in out.iter_mut().zip(&work.rho) {
            *o = *o + *r * c;
        }
    }
}

/// Field at the exit face of one target plus its exit-slab coherences.
pub fn propagate_target_detailed<T: Real>(
    input: &FieldTrace<T>,
    target: &TargetSpec<T>,
    grid: &Grid<T>,
    constants: &PhysConstants<T>,
) -> Result<(FieldTrace<T>, CoherenceState<T>)> {
    input.check_finite()?;
    target.validate()?;
    let n = grid.n_t();
    if input.len() != n || (input.dt - grid.dt).abs() > grid.dt * T::lit(1e-9) {
        return Err(Error::IncompatibleTraces(format!(
            "input has {} samples at dt = {}, grid expects {} at dt = {}",
            input.len(),
            input.dt,
            n,
            grid.dt
        )));
    }
    let dmax = target.max_abs_detuning();
    if grid.dt * dmax * constants.gamma > T::TAU() / T::lit(8.0) {
        return Err(Error::GridTooCoarse(format!(
            "dt = {} ns gives fewer than 8 samples per oscillation at |Δ| = {}Γ",
            grid.dt, dmax
        )));
    }
    let zero = Complex::new(T::zero(), T::zero());
    if target.xi == T::zero() || n < 2 {
        let empty = vec![zero; n];
        return Ok((
            input.clone(),
            CoherenceState {
                rho31: empty.clone(),
                rho42: empty,
            },
        ));
    }

    let gamma = constants.gamma;
    let a = constants.cg;
    let lines = lines_for(target, grid, gamma);
    let coupling = Complex::new(T::zero(), T::lit(6.0) * gamma * target.xi * a);
    let drive = Complex::new(T::zero(), a / T::lit(4.0) * grid.dt / T::lit(2.0));
    let slabs = grid.slabs_for(target.xi);
    let dz = T::one() / T::from_usize_lossy(slabs);
    let half_dz = dz / T::lit(2.0);

    let mut field = input.samples.clone();
    let mut k1 = vec![zero; n];
    let mut k2 = vec![zero; n];
    let mut predictor = vec![zero; n];
    let mut work = SourceWork { rho: vec![zero; n] };
    for _ in 0..slabs {
        source(&field, &lines, coupling, drive, &mut work, &mut k1);
        for ((p, f), k) in predictor.iter_mut().zip(&field).zip(&k1) {
            *p = *f + *k * dz;
        }
        source(&predictor, &lines, coupling, drive, &mut work, &mut k2);
        for ((f, a1), a2) in field.iter_mut().zip(&k1).zip(&k2) {
            *f = *f + (*a1 + *a2) * half_dz;
        }
    }

    let mut rho31 = vec![zero; n];
    line_coherence(&field, &lines.0, drive, &mut rho31);
    let rho42 = match &lines.1 {
        Some(second) => {
            let mut r = vec![zero; n];
            line_coherence(&field, second, drive, &mut r);
            r
        }
        None => rho31.clone(),
    };
    let out = FieldTrace::new(input.t_start, input.dt, field)?;
    Ok((out, CoherenceState { rho31, rho42 }))
}

pub fn propagate_target<T: Real>(
    input: &FieldTrace<T>,
    target: &TargetSpec<T>,
    grid: &Grid<T>,
    constants: &PhysConstants<T>,
) -> Result<FieldTrace<T>> {
    propagate_target_detailed(input, target, grid, constants).map(|(f, _)| f)
}

/// Boundary traces of a chain run and the largest |ρ| encountered.
#[derive(Debug, Clone)]
pub struct ChainRun<T> {
    /// `traces[0]` is the input, `traces[n]` the exit field of target n.
    pub traces: Vec<FieldTrace<T>>,
    pub max_coherence: T,
}

impl<T> ChainRun<T> {
    pub fn input(&self) -> &FieldTrace<T> {
        &self.traces[0]
    }

    pub fn output(&self) -> &FieldTrace<T> {
        self.traces.last().expect("chain run holds at least the input")
    }
}

pub fn simulate_chain_detailed<T: Real>(
    comb: &CombSystem<T>,
    pulse: &PulseSpec<T>,
    grid: &Grid<T>,
    constants: &PhysConstants<T>,
) -> Result<ChainRun<T>> {
    comb.validate()?;
    grid.check_resolution(comb, pulse.tau_p, constants.gamma)?;
    let mut traces = Vec::with_capacity(comb.len() + 1);
    traces.push(grid.sample_pulse(pulse)?);
    let mut max_coherence = T::zero();
    for target in &comb.targets {
        let (next, rho) = propagate_target_detailed(traces.last().expect("non-empty"), target, grid, constants)?;
        max_coherence = max_coherence.max(rho.max_abs());
        traces.push(next);
    }
    Ok(ChainRun {
        traces,
        max_coherence,
    })
}

/// Exit trace of every target, preceded by the sampled input.
pub fn simulate_chain<T: Real>(
    comb: &CombSystem<T>,
    pulse: &PulseSpec<T>,
    grid: &Grid<T>,
    constants: &PhysConstants<T>,
) -> Result<Vec<FieldTrace<T>>> {
    simulate_chain_detailed(comb, pulse, grid, constants).map(|r| r.traces)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel<T> {
    pub level: usize,
    pub dt: T,
    pub nz: usize,
    pub efficiency: T,
    pub fidelity: T,
    /// |E − E_previous|, absent on level 0.
    pub change: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport<T> {
    pub levels: Vec<ConvergenceLevel<T>>,
    pub converged_grid: Grid<T>,
    pub converged_level: usize,
    /// Window used at every level (detected on level 0); absent when the
    /// comb produces no echo and E is the total transmission.
    pub window: Option<EchoWindow<T>>,
}

impl<T: Real> ConvergenceReport<T> {
    /// Successive ratios of E differences, ≈4 for a second-order scheme.
    pub fn richardson_ratios(&self) -> Vec<T> {
        let changes: Vec<T> = self.levels.iter().filter_map(|l| l.change).collect();
        changes.windows(2).filter(|w| w[1] != T::zero()).map(|w| w[0] / w[1]).collect()
    }
}

pub const CONVERGENCE_TOL: f64 = 1e-3;
pub const MAX_CONVERGENCE_LEVELS: usize = 6;

/// Halves dt and doubles nz until E changes by less than `tol` between
/// levels. The converged grid is the coarser of the agreeing pair.
pub fn convergence_study<T: Real>(
    comb: &CombSystem<T>,
    pulse: &PulseSpec<T>,
    base_grid: &Grid<T>,
    constants: &PhysConstants<T>,
    opts: &MetricOptions<T>,
    tol: T,
) -> Result<ConvergenceReport<T>> {
    convergence_study_with_levels(comb, pulse, base_grid, constants, opts, tol, MAX_CONVERGENCE_LEVELS, true)
}

/// Runs exactly `levels` refinements (no early stop when `stop_early` is
/// false), e.g. to measure Richardson ratios.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study_with_levels<T: Real>(
    comb: &CombSystem<T>,
    pulse: &PulseSpec<T>,
    base_grid: &Grid<T>,
    constants: &PhysConstants<T>,
    opts: &MetricOptions<T>,
    tol: T,
    levels: usize,
    stop_early: bool,
) -> Result<ConvergenceReport<T>> {
    let mut grid = *base_grid;
    let mut window = opts.window;
    let mut passive = false;
    let mut out: Vec<ConvergenceLevel<T>> = Vec::new();
    for level in 0..levels.max(1) {
        let run = simulate_chain(comb, pulse, &grid, constants)?;
        let (input, output) = (&run[0], &run[run.len() - 1]);
        let (e, f) = if passive {
            (output.energy() / input.energy(), T::zero())
        } else {
            let level_opts = MetricOptions {
                window,
                shift_mode: opts.shift_mode,
            };
            match report(input, output, pulse, comb, constants.gamma, &level_opts) {
                Ok(r) => {
                    window = Some(r.window);
                    (r.efficiency, r.fidelity)
                }
                Err(Error::NoEcho(_)) if level == 0 => {
                    passive = true;
                    (output.energy() / input.energy(), T::zero())
                }
                Err(e) => return Err(e),
            }
        };
        let change = out.last().map(|prev| (e - prev.efficiency).abs());
        out.push(ConvergenceLevel {
            level,
            dt: grid.dt,
            nz: grid.nz,
            efficiency: e,
            fidelity: f,
            change,
        });
        if stop_early && change.is_some_and(|c| c < tol) {
            let converged_level = level - 1;
            let mut converged_grid = *base_grid;
            for _ in 0..converged_level {
                converged_grid = converged_grid.refined();
            }
            return Ok(ConvergenceReport {
                levels: out,
                converged_grid,
                converged_level,
                window: if passive { None } else { window },
            });
        }
        grid = grid.refined();
    }
    if stop_early {
        let last_change = out.last().and_then(|l| l.change).map_or(f64::NAN, |c| c.to_f64_lossy());
        return Err(Error::NotConverged {
            levels: out.len(),
            last_change,
        });
    }
    let converged_level = out.len() - 1;
    let mut converged_grid = *base_grid;
    for _ in 0..converged_level {
        converged_grid = converged_grid.refined();
    }
    Ok(ConvergenceReport {
        levels: out,
        converged_grid,
        converged_level,
        window: if passive { None } else { window },
    })
}
