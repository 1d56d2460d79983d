//! Physical constants, absorber/comb/pulse descriptions, the Gaussian
//! tooth-shaping distribution, acceleration profiles, and builders for the
//! comb layouts used throughout the crate.
//!
//! Units: time in ns, detunings in units of the decay rate Γ. Only
//! [`terminal_velocity`] touches SI units.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Decay rate of the 14.4 keV excited states of ⁵⁷Fe, in 1/ns.
pub const GAMMA_FE57_PER_NS: f64 = 1.0 / 141.1;
/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Angular frequency of the 14.4125 keV ⁵⁷Fe Mössbauer line, rad/s.
pub const OMEGA_FE57: f64 = 14_412.5 / 6.582_119_569e-16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysConstants<T> {
    /// Excited-state decay rate Γ in 1/ns.
    pub gamma: T,
    /// Clebsch–Gordan coefficient of the two Δm = 0 transitions.
    pub cg: T,
    /// m/s
    pub c_light: T,
    /// rad/s
    pub omega_transition: T,
}

impl<T: Real> Default for PhysConstants<T> {
    fn default() -> Self {
        Self {
            gamma: T::lit(GAMMA_FE57_PER_NS),
            cg: T::lit(2.0 / 3.0).sqrt(),
            c_light: T::lit(SPEED_OF_LIGHT),
            omega_transition: T::lit(OMEGA_FE57),
        }
    }
}

/// Acceleration profile of a target: `epsilon` selects the direction
/// (−1 forward/red, 0 stationary, +1 backward/blue).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile<T> {
    pub epsilon: i8,
    /// Mid-time of the acceleration, ns.
    pub tau_d: T,
    /// Velocity rise time, ns.
    pub b_d: T,
    /// Terminal shift in units of SΓ is `epsilon`; this is S.
    pub s_units: T,
}

impl<T: Real> MotionProfile<T> {
    pub fn stationary() -> Self {
        Self {
            epsilon: 0,
            tau_d: T::zero(),
            b_d: T::one(),
            s_units: T::zero(),
        }
    }

    pub fn new(epsilon: i8, tau_d: T, b_d: T, s_units: T) -> Result<Self> {
        let profile = Self {
            epsilon,
            tau_d,
            b_d,
            s_units,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1..=1).contains(&self.epsilon) {
            return Err(Error::invalid("epsilon", format!("{} not in {{-1, 0, 1}}", self.epsilon)));
        }
        if self.epsilon != 0 && !(self.b_d > T::zero()) {
            return Err(Error::invalid("b_d", "rise time must be positive for an accelerated target"));
        }
        if !self.tau_d.is_finite() || !self.s_units.is_finite() {
            return Err(Error::invalid("motion", "non-finite profile parameter"));
        }
        Ok(())
    }

    pub fn is_static(&self) -> bool {
        self.epsilon == 0
    }
}

/// Time-dependent Doppler shift of an accelerated target, in units of Γ:
/// `0.5·ε·S·{1 + tanh[(t − τ_d)/(0.25·b_d)]}`.
pub fn doppler_shift_at<T: Real>(t: T, motion: &MotionProfile<T>) -> T {
    if motion.epsilon == 0 {
        return T::zero();
    }
    let eps = T::lit(f64::from(motion.epsilon));
    let arg = (t - motion.tau_d) / (T::lit(0.25) * motion.b_d);
    T::lit(0.5) * eps * motion.s_units * (T::one() + arg.tanh())
}

/// Terminal velocity (m/s) of a target whose Doppler shift reaches one comb
/// spacing `S·Γ`.
pub fn terminal_velocity<T: Real>(spacing: T, constants: &PhysConstants<T>) -> T {
    let gamma_rad_per_s = constants.gamma * T::lit(1e9);
    constants.c_light * spacing * gamma_rad_per_s / constants.omega_transition
}

/// One absorber in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec<T> {
    /// Resonant thickness ξ_n.
    pub xi: T,
    /// Combined hyperfine splitting Δ_g + Δ_e in units of Γ.
    pub hyperfine: T,
    /// Static Doppler shift in units of Γ.
    pub doppler_static: T,
    pub motion: MotionProfile<T>,
}

impl<T: Real> TargetSpec<T> {
    pub fn stationary(xi: T, doppler_static: T) -> Self {
        Self {
            xi,
            hyperfine: T::zero(),
            doppler_static,
            motion: MotionProfile::stationary(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= T::zero()) || !self.xi.is_finite() {
            return Err(Error::invalid("xi", format!("resonant thickness {} must be finite and >= 0", self.xi)));
        }
        if !self.hyperfine.is_finite() || !self.doppler_static.is_finite() {
            return Err(Error::invalid("detuning", "non-finite static shift"));
        }
        self.motion.validate()
    }

    /// Detunings (Δ₃₁, Δ₄₂) at time `t`, in units of Γ.
    pub fn detunings_at(&self, t: T) -> (T, T) {
        let moving = self.doppler_static + doppler_shift_at(t, &self.motion);
        (self.hyperfine + moving, moving - self.hyperfine)
    }

    pub fn is_static(&self) -> bool {
        self.motion.is_static()
    }

    /// Both driven transitions share one line.
    pub fn is_single_line(&self) -> bool {
        self.hyperfine == T::zero()
    }

    /// Upper bound of |Δ| over all times, in units of Γ.
    pub fn max_abs_detuning(&self) -> T {
        let drift = T::lit(f64::from(self.motion.epsilon.abs())) * self.motion.s_units.abs();
        self.hyperfine.abs() + self.doppler_static.abs() + drift
    }
}

/// An ordered chain of targets plus the global comb parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombSystem<T> {
    pub targets: Vec<TargetSpec<T>>,
    /// Comb spacing S (tooth separation S·Γ).
    pub spacing: T,
    /// Shaping parameter k (0 for flat combs).
    pub shape_k: T,
}

impl<T: Real> CombSystem<T> {
    pub fn new(targets: Vec<TargetSpec<T>>, spacing: T, shape_k: T) -> Result<Self> {
        let comb = Self {
            targets,
            spacing,
            shape_k,
        };
        comb.validate()?;
        Ok(comb)
    }

    pub fn empty(spacing: T) -> Self {
        Self {
            targets: Vec::new(),
            spacing,
            shape_k: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing >= T::zero()) {
            return Err(Error::invalid("S", "comb spacing must be >= 0"));
        }
        if !(self.shape_k >= T::zero()) {
            return Err(Error::invalid("k", "shaping parameter must be >= 0"));
        }
        self.targets.iter().try_for_each(TargetSpec::validate)
    }

    /// Total resonant thickness ξ = Σ ξ_n.
    pub fn total_xi(&self) -> T {
        self.targets.iter().map(|t| t.xi).sum()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn is_static(&self) -> bool {
        self.targets.iter().all(TargetSpec::is_static)
    }

    pub fn is_single_line(&self) -> bool {
        self.targets.iter().all(TargetSpec::is_single_line)
    }

    pub fn max_abs_detuning(&self) -> T {
        self.targets
            .iter()
            .map(TargetSpec::max_abs_detuning)
            .fold(T::zero(), T::max)
    }
}

/// Gaussian input envelope `Ω₀·exp[−(t − τ_i)²/τ_p²]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec<T> {
    pub omega0: T,
    pub tau_i: T,
    pub tau_p: T,
}

impl<T: Real> PulseSpec<T> {
    pub fn new(omega0: T, tau_i: T, tau_p: T) -> Result<Self> {
        if !(tau_p > T::zero()) {
            return Err(Error::invalid("tau_p", "pulse width must be positive"));
        }
        if !omega0.is_finite() || !tau_i.is_finite() {
            return Err(Error::invalid("pulse", "non-finite amplitude or arrival time"));
        }
        Ok(Self {
            omega0,
            tau_i,
            tau_p,
        })
    }

    /// Unit-amplitude pulse with the peak at `tau_i`.
    pub fn unit(tau_i: T, tau_p: T) -> Result<Self> {
        Self::new(T::one(), tau_i, tau_p)
    }

    pub fn envelope(&self, t: T) -> T {
        let x = (t - self.tau_i) / self.tau_p;
        self.omega0 * (-x * x).exp()
    }

    /// ∫|Ω|² dt over the whole real line.
    pub fn energy(&self) -> T {
        self.omega0 * self.omega0 * self.tau_p * (T::PI() / T::lit(2.0)).sqrt()
    }
}

/// Normalized Gaussian tooth weights P(n, k) for n = 1..M (M odd).
pub fn shaped_weights<T: Real>(m: usize, k: T, tau_p: T, spacing: T, gamma: T) -> Result<Vec<T>> {
    let (raw, norm) = raw_weights(m, k, tau_p, spacing, gamma)?;
    Ok(raw.into_iter().map(|w| w / norm).collect())
}

fn raw_weights<T: Real>(m: usize, k: T, tau_p: T, spacing: T, gamma: T) -> Result<(Vec<T>, T)> {
    if m == 0 || m % 2 == 0 {
        return Err(Error::invalid("M", format!("shaped combs need an odd number of targets, got {m}")));
    }
    if !(tau_p > T::zero()) {
        return Err(Error::invalid("tau_p", "pulse width must be positive"));
    }
    if !(spacing > T::zero()) {
        return Err(Error::invalid("S", "comb spacing must be positive"));
    }
    if !(k >= T::zero()) {
        return Err(Error::invalid("k", "shaping parameter must be >= 0"));
    }
    let center = (m as i64 + 1) / 2;
    let raw: Vec<T> = (1..=m as i64)
        .map(|n| {
            // |offset| keeps P(n) and P(M+1-n) bit-identical
            let offset = T::lit((n - center).unsigned_abs() as f64);
            let x = T::lit(0.5) * k * tau_p * offset * spacing * gamma;
            (-x * x).exp()
        })
        .collect();
    let norm = symmetric_sum(&raw);
    Ok((raw, norm))
}

// Pairs mirror-image entries so the sum does not depend on traversal direction.
fn symmetric_sum<T: Real>(values: &[T]) -> T {
    let m = values.len();
    let mut acc = if m % 2 == 1 { values[m / 2] } else { T::zero() };
    for i in (0..m / 2).rev() {
        acc = acc + (values[i] + values[m - 1 - i]);
    }
    acc
}

/// Tooth position of target `n` (1-based) in units of Γ: `(n − (M+1)/2)·S`.
fn tooth_position<T: Real>(n: usize, m: usize, spacing: T) -> T {
    (T::from_usize_lossy(2 * n) - T::from_usize_lossy(m + 1)) / T::lit(2.0) * spacing
}

/// M static, unmagnetized targets of equal thickness on a comb of spacing S.
pub fn build_flat_comb<T: Real>(m: usize, spacing: T, xi_bar: T) -> Result<CombSystem<T>> {
    if m < 1 {
        return Err(Error::invalid("M", "need at least one target"));
    }
    if !(xi_bar >= T::zero()) {
        return Err(Error::invalid("xi_bar", "mean resonant thickness must be >= 0"));
    }
    let targets = (1..=m)
        .map(|n| TargetSpec::stationary(xi_bar, tooth_position(n, m, spacing)))
        .collect();
    CombSystem::new(targets, spacing, T::zero())
}

/// Static comb whose tooth thicknesses follow `total_xi·P(n, k)`.
pub fn build_shaped_comb<T: Real>(
    m: usize,
    spacing: T,
    k: T,
    tau_p: T,
    total_xi: T,
    gamma: T,
) -> Result<CombSystem<T>> {
    if !(total_xi >= T::zero()) {
        return Err(Error::invalid("xi", "total resonant thickness must be >= 0"));
    }
    let (raw, norm) = raw_weights(m, k, tau_p, spacing, gamma)?;
    // total·raw/norm rather than total·P so that k = 0 reproduces the flat comb bit for bit
    let targets = raw
        .iter()
        .enumerate()
        .map(|(i, &w)| TargetSpec::stationary(total_xi * w / norm, tooth_position(i + 1, m, spacing)))
        .collect();
    CombSystem::new(targets, spacing, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HybridVariant {
    M4,
    M6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DopplerVariant {
    M4,
    M6,
    M10,
}

impl FromStr for HybridVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m4" | "4" => Ok(Self::M4),
            "m6" | "6" => Ok(Self::M6),
            _ => Err(Error::Unknown {
                kind: "hybrid variant",
                name: s.to_owned(),
            }),
        }
    }
}

impl FromStr for DopplerVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m4" | "4" => Ok(Self::M4),
            "m6" | "6" => Ok(Self::M6),
            "m10" | "10" => Ok(Self::M10),
            _ => Err(Error::Unknown {
                kind: "doppler variant",
                name: s.to_owned(),
            }),
        }
    }
}

impl fmt::Display for HybridVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::M4 => "m4",
            Self::M6 => "m6",
        })
    }
}

impl fmt::Display for DopplerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::M4 => "m4",
            Self::M6 => "m6",
            Self::M10 => "m10",
        })
    }
}

/// Magnetized and/or accelerated targets forming a dynamically split comb.
///
/// Entries are `(hyperfine/S, epsilon)`. A magnetized target spreads its
/// thickness over two lines while an unmagnetized one stacks both
/// transitions on a single line, so unmagnetized members get `xi_bar / 2`;
/// every comb line then carries the same strength as in the equivalent
/// pure-Doppler chain.
pub fn build_dynamical_hybrid<T: Real>(
    variant: HybridVariant,
    spacing: T,
    xi_bar: T,
    tau_d: T,
    b_d: T,
) -> Result<CombSystem<T>> {
    const M4: [(i32, i8); 4] = [(1, 1), (1, -1), (0, 1), (0, -1)];
    const M6: [(i32, i8); 6] = [(2, 1), (2, -1), (1, 1), (1, -1), (0, 1), (0, -1)];
    let layout: &[(i32, i8)] = match variant {
        HybridVariant::M4 => &M4,
        HybridVariant::M6 => &M6,
    };
    let targets = layout
        .iter()
        .map(|&(hf, eps)| {
            let xi = if hf == 0 { xi_bar / T::lit(2.0) } else { xi_bar };
            Ok(TargetSpec {
                xi,
                hyperfine: T::lit(f64::from(hf)) * spacing,
                doppler_static: T::zero(),
                motion: MotionProfile::new(eps, tau_d, b_d, spacing)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CombSystem::new(targets, spacing, T::zero())
}

/// Unmagnetized targets with static plus accelerated Doppler shifts.
///
/// Entries are `(doppler_static/S, epsilon)`, in chain order. The six-target
/// layout is b1..b6 = (S,+1), (S,−1), (−S,+1), (−S,−1), (0,−1), (0,+1): b1
/// and b4 are the teeth that drift outward, and `M4` drops exactly those two.
/// Order matters for accelerated targets (their propagators do not commute).
pub fn build_dynamical_doppler<T: Real>(
    variant: DopplerVariant,
    spacing: T,
    xi_bar: T,
    tau_d: T,
    b_d: T,
) -> Result<CombSystem<T>> {
    // each magnetized hybrid target becomes a (±hf, ε) pair in place, so the
    // ten-target chain reproduces the six-target hybrid one
    const M10: [(i32, i8); 10] = [
        (2, 1),
        (-2, 1),
        (2, -1),
        (-2, -1),
        (1, 1),
        (-1, 1),
        (1, -1),
        (-1, -1),
        (0, 1),
        (0, -1),
    ];
    const M6: [(i32, i8); 6] = [(1, 1), (1, -1), (-1, 1), (-1, -1), (0, -1), (0, 1)];
    const M4: [(i32, i8); 4] = [(1, -1), (-1, 1), (0, -1), (0, 1)];
    let layout: &[(i32, i8)] = match variant {
        DopplerVariant::M4 => &M4,
        DopplerVariant::M6 => &M6,
        DopplerVariant::M10 => &M10,
    };
    let targets = layout
        .iter()
        .map(|&(d, eps)| {
            Ok(TargetSpec {
                xi: xi_bar,
                hyperfine: T::zero(),
                doppler_static: T::lit(f64::from(d)) * spacing,
                motion: MotionProfile::new(eps, tau_d, b_d, spacing)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CombSystem::new(targets, spacing, T::zero())
}
