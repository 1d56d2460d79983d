//! Run configuration: a flat TOML table with one nesting level for explicit
//! target lists. Unknown keys are errors; `--set key=value` overrides are
//! applied to the parsed table before validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comb::{
    build_dynamical_doppler, build_dynamical_hybrid, build_flat_comb, build_shaped_comb, CombSystem,
    DopplerVariant, HybridVariant, MotionProfile, PhysConstants, PulseSpec, TargetSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{EchoWindow, MetricOptions, ShiftMode};
use crate::scan::{default_tau_i_grid, xi_bar_grid, ScenarioId, ScenarioParams};
use crate::solver::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Analytic,
    Simulate,
    ScanKxi,
    ScanM,
    ScanDyn,
    Scenario,
    Convergence,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Analytic => "analytic",
            Self::Simulate => "simulate",
            Self::ScanKxi => "scan-kxi",
            Self::ScanM => "scan-m",
            Self::ScanDyn => "scan-dyn",
            Self::Scenario => "scenario",
            Self::Convergence => "convergence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombKind {
    /// Gaussian-weighted static comb (k = 0 is flat); M must be odd.
    Shaped,
    /// Equal thicknesses; any M.
    Flat,
    Hybrid4,
    Hybrid6,
    Doppler4,
    Doppler6,
    Doppler10,
    /// Explicit `[[targets]]` list.
    Targets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    pub xi: f64,
    #[serde(default)]
    pub hyperfine: f64,
    #[serde(default)]
    pub doppler_static: f64,
    #[serde(default)]
    pub epsilon: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_d: Option<f64>,
}

/// Every field is optional in the file; [`RunConfig::resolved`] fills in the
/// defaults that a given mode uses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,

    /// Decay rate Γ in 1/ns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_i: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_p: Option<f64>,

    #[serde(rename = "S", skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_bar: Option<f64>,
    /// Total thickness of a shaped comb (alternative to `xi_bar`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comb: Option<CombKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_d: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nz: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_t1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_t2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_mode: Option<ShiftMode>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_bar_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_bar_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_bar_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_i_grid: Option<Vec<f64>>,
    /// scan-dyn: only the six-target (true) or four-target (false) comb.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_pair: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_points: Option<bool>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_levels: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<TargetEntry>>,
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_owned())),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("override `{item}` has an empty key")));
        }
        table.insert(key.to_owned(), parse_override_value(value.trim()));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        apply_overrides(&mut table, overrides)?;
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn mode(&self) -> Result<Mode> {
        self.mode.ok_or_else(|| Error::invalid("mode", "no mode given"))
    }

    pub fn comb_kind(&self) -> CombKind {
        match (self.comb, &self.targets) {
            (Some(k), _) => k,
            (None, Some(_)) => CombKind::Targets,
            (None, None) => CombKind::Shaped,
        }
    }

    fn scenario_id(&self) -> Result<Option<ScenarioId>> {
        self.scenario.as_deref().map(str::parse).transpose()
    }

    /// Field-level checks that do not depend on the mode.
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::invalid(field, format!("{x} must be positive"))),
            _ => Ok(()),
        };
        let non_negative = |field: &'static str, v: Option<f64>| match v {
            Some(x) if !(x >= 0.0 && x.is_finite()) => Err(Error::invalid(field, format!("{x} must be >= 0"))),
            _ => Ok(()),
        };
        positive("gamma", self.gamma)?;
        positive("tau_p", self.tau_p)?;
        positive("S", self.spacing)?;
        positive("dt", self.dt)?;
        positive("b_d", self.b_d)?;
        positive("xi_bar_step", self.xi_bar_step)?;
        positive("convergence_tol", self.convergence_tol)?;
        non_negative("k", self.k)?;
        non_negative("xi_bar", self.xi_bar)?;
        non_negative("xi", self.xi)?;
        if self.nz == Some(0) {
            return Err(Error::invalid("nz", "need at least one z step"));
        }
        if self.m == Some(0) {
            return Err(Error::invalid("M", "need at least one target"));
        }
        if let (Some(m), CombKind::Shaped) = (self.m, self.comb_kind()) {
            if m % 2 == 0 {
                return Err(Error::invalid("M", format!("shaped combs need an odd number of targets, got {m}")));
            }
        }
        if let Some(list) = &self.m_list {
            if let Some(m) = list.iter().find(|m| *m % 2 == 0 || **m == 0) {
                return Err(Error::invalid("m_list", format!("M = {m} must be odd")));
            }
        }
        if let Some(grid) = &self.xi_grid {
            if grid.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::invalid("xi_grid", "thicknesses must be >= 0"));
            }
        }
        if let Some(grid) = &self.k_grid {
            if grid.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::invalid("k_grid", "shaping parameters must be >= 0"));
            }
        }
        if let (Some(a), Some(b)) = (self.window_t1, self.window_t2) {
            EchoWindow::new(a, b)?;
        } else if self.window_t1.is_some() != self.window_t2.is_some() {
            return Err(Error::invalid("window_t1", "give both window_t1 and window_t2"));
        }
        if let Some(targets) = &self.targets {
            for t in targets {
                self.target_spec(t)?.validate()?;
            }
        }
        self.scenario_id()?;
        Ok(())
    }

    /// Copy with every default the mode uses filled in; this is what the
    /// run manifest records.
    pub fn resolved(&self) -> Result<Self> {
        let mode = self.mode()?;
        let mut c = self.clone();
        let scenario_like = matches!(mode, Mode::Scenario | Mode::ScanDyn) || c.scenario.is_some();
        c.gamma.get_or_insert(crate::comb::GAMMA_FE57_PER_NS);
        c.omega0.get_or_insert(1.0);
        c.tau_p.get_or_insert(if scenario_like { 7.0 } else { 5.0 });
        c.spacing.get_or_insert(50.0);
        c.shift_mode.get_or_insert(ShiftMode::Peak);
        let tau_p = c.tau_p.unwrap_or(5.0);
        match mode {
            Mode::Scenario | Mode::ScanDyn => {
                c.tau_d.get_or_insert(60.0);
                c.b_d.get_or_insert(100.0);
                if c.tau_i.is_none() {
                    c.tau_i_grid.get_or_insert_with(default_tau_i_grid);
                }
                if mode == Mode::ScanDyn {
                    c.xi_bar_min.get_or_insert(0.0);
                    c.xi_bar_max.get_or_insert(15.0);
                    c.xi_bar_step.get_or_insert(0.4);
                }
                if mode == Mode::Scenario && c.scenario.is_none() {
                    return Err(Error::invalid("scenario", "scenario mode needs a scenario id"));
                }
            }
            Mode::ScanM => {
                c.tau_i.get_or_insert(6.0 * tau_p);
                c.k.get_or_insert(0.0);
                c.m_list.get_or_insert_with(|| vec![1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21]);
                c.xi_bar_min.get_or_insert(0.0);
                c.xi_bar_max.get_or_insert(15.0);
                c.xi_bar_step.get_or_insert(0.05);
            }
            Mode::ScanKxi => {
                c.tau_i.get_or_insert(6.0 * tau_p);
                c.reference_points.get_or_insert(true);
                if c.m.is_none() {
                    return Err(Error::invalid("M", "scan-kxi needs M"));
                }
                if c.k_grid.is_none() || c.xi_grid.is_none() {
                    return Err(Error::invalid("k_grid", "scan-kxi needs k_grid and xi_grid"));
                }
            }
            Mode::Analytic | Mode::Simulate | Mode::Convergence => {
                if c.scenario.is_some() {
                    c.tau_d.get_or_insert(60.0);
                    c.b_d.get_or_insert(100.0);
                    if c.tau_i.is_none() {
                        c.tau_i_grid.get_or_insert_with(default_tau_i_grid);
                    }
                } else {
                    c.tau_i.get_or_insert(6.0 * tau_p);
                    c.comb.get_or_insert(c.comb_kind());
                    match c.comb_kind() {
                        CombKind::Shaped => {
                            c.k.get_or_insert(0.0);
                        }
                        CombKind::Hybrid4 | CombKind::Hybrid6 | CombKind::Doppler4 | CombKind::Doppler6 | CombKind::Doppler10 => {
                            c.tau_d.get_or_insert(60.0);
                            c.b_d.get_or_insert(100.0);
                        }
                        CombKind::Flat | CombKind::Targets => {}
                    }
                }
                if mode == Mode::Convergence {
                    c.convergence_tol.get_or_insert(crate::solver::CONVERGENCE_TOL);
                    c.max_levels.get_or_insert(crate::solver::MAX_CONVERGENCE_LEVELS);
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn constants(&self) -> PhysConstants<f64> {
        let mut c = PhysConstants::default();
        if let Some(g) = self.gamma {
            c.gamma = g;
        }
        c
    }

    pub fn pulse(&self) -> Result<PulseSpec<f64>> {
        let tau_p = self.tau_p.ok_or_else(|| Error::invalid("tau_p", "missing"))?;
        let tau_i = self.tau_i.ok_or_else(|| Error::invalid("tau_i", "missing"))?;
        PulseSpec::new(self.omega0.unwrap_or(1.0), tau_i, tau_p)
    }

    fn target_spec(&self, t: &TargetEntry) -> Result<TargetSpec<f64>> {
        let motion = if t.epsilon == 0 {
            MotionProfile::stationary()
        } else {
            MotionProfile::new(
                t.epsilon,
                t.tau_d.or(self.tau_d).unwrap_or(60.0),
                t.b_d.or(self.b_d).unwrap_or(100.0),
                self.spacing.unwrap_or(50.0),
            )?
        };
        Ok(TargetSpec {
            xi: t.xi,
            hyperfine: t.hyperfine,
            doppler_static: t.doppler_static,
            motion,
        })
    }

    fn require<V: Copy>(v: Option<V>, field: &'static str) -> Result<V> {
        v.ok_or_else(|| Error::invalid(field, "required for this comb"))
    }

    /// The comb described by the (resolved) configuration.
    pub fn build_comb(&self) -> Result<CombSystem<f64>> {
        if let Some(id) = self.scenario_id()? {
            return id.comb(&self.scenario_params()?);
        }
        let s = Self::require(self.spacing, "S")?;
        let tau_d = self.tau_d.unwrap_or(60.0);
        let b_d = self.b_d.unwrap_or(100.0);
        let dyn_xi = |default: f64| self.xi_bar.unwrap_or(default);
        match self.comb_kind() {
            CombKind::Shaped => {
                let m = Self::require(self.m, "M")?;
                let total = match (self.xi, self.xi_bar) {
                    (Some(x), _) => x,
                    (None, Some(xb)) => xb * m as f64,
                    (None, None) => return Err(Error::invalid("xi_bar", "give xi_bar or xi")),
                };
                let tau_p = Self::require(self.tau_p, "tau_p")?;
                build_shaped_comb(m, s, self.k.unwrap_or(0.0), tau_p, total, self.constants().gamma)
            }
            CombKind::Flat => {
                let m = Self::require(self.m, "M")?;
                let xb = match (self.xi_bar, self.xi) {
                    (Some(xb), _) => xb,
                    (None, Some(x)) => x / m as f64,
                    (None, None) => return Err(Error::invalid("xi_bar", "give xi_bar or xi")),
                };
                build_flat_comb(m, s, xb)
            }
            CombKind::Hybrid4 => build_dynamical_hybrid(HybridVariant::M4, s, dyn_xi(11.2), tau_d, b_d),
            CombKind::Hybrid6 => build_dynamical_hybrid(HybridVariant::M6, s, dyn_xi(11.2), tau_d, b_d),
            CombKind::Doppler4 => build_dynamical_doppler(DopplerVariant::M4, s, dyn_xi(5.6), tau_d, b_d),
            CombKind::Doppler6 => build_dynamical_doppler(DopplerVariant::M6, s, dyn_xi(5.6), tau_d, b_d),
            CombKind::Doppler10 => build_dynamical_doppler(DopplerVariant::M10, s, dyn_xi(5.6), tau_d, b_d),
            CombKind::Targets => {
                let entries = self
                    .targets
                    .as_ref()
                    .ok_or_else(|| Error::invalid("targets", "comb = \"targets\" needs [[targets]] entries"))?;
                let targets = entries.iter().map(|t| self.target_spec(t)).collect::<Result<Vec<_>>>()?;
                CombSystem::new(targets, s, self.k.unwrap_or(0.0))
            }
        }
    }

    pub fn metric_options(&self) -> Result<MetricOptions<f64>> {
        let window = match (self.window_t1, self.window_t2) {
            (Some(a), Some(b)) => Some(EchoWindow::new(a, b)?),
            _ => None,
        };
        Ok(MetricOptions {
            window,
            shift_mode: self.shift_mode.unwrap_or_default(),
        })
    }

    /// Automatic grid with any `dt`, `nz`, `t_start`, `t_end` overrides.
    pub fn grid(&self, comb: &CombSystem<f64>, pulse: &PulseSpec<f64>) -> Result<Grid<f64>> {
        let auto = Grid::auto(comb, pulse, &self.constants())?;
        Grid::new(
            self.t_start.unwrap_or(auto.t0),
            self.t_end.unwrap_or(auto.t1),
            self.dt.unwrap_or(auto.dt),
            self.nz.unwrap_or(auto.nz),
        )
    }

    pub fn scenario_params(&self) -> Result<ScenarioParams<f64>> {
        let d = ScenarioParams::<f64>::default();
        Ok(ScenarioParams {
            tau_p: self.tau_p.unwrap_or(d.tau_p),
            spacing: self.spacing.unwrap_or(d.spacing),
            tau_d: self.tau_d.unwrap_or(d.tau_d),
            b_d: self.b_d.unwrap_or(d.b_d),
            xi_bar: self.xi_bar,
            tau_i: self.tau_i,
            tau_i_grid: self.tau_i_grid.clone().unwrap_or(d.tau_i_grid),
            dt: self.dt,
            nz: self.nz,
            shift_mode: self.shift_mode.unwrap_or_default(),
        })
    }

    pub fn xi_bar_values(&self) -> Result<Vec<f64>> {
        xi_bar_grid(
            self.xi_bar_min.unwrap_or(0.0),
            self.xi_bar_max.unwrap_or(15.0),
            self.xi_bar_step.unwrap_or(0.05),
        )
    }
}
