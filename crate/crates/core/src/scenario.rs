//! Scenario configuration: a TOML document of nested sections layered over the
//! committed defaults, command-line overrides, and resolution of `"auto"`
//! values into a fully specified run.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{InitialState, ScanMode, ScanThermometry, TofGeometry};
use crate::dynamics::{lattice_scattering_rate, CoolingParameters, RecoilModel};
use crate::field::{standard_beam_set, BeamSet, PhaseChoice};
use crate::levels::{resonance_field, LevelModel, LevelScheme, SidebandAxis};
use crate::potential::{principal_well, LambDickeOrder, LatticePotential, WellExpansion};
use crate::units::{AtomSpecies, UnitSystem};
use crate::{Error, Result, Vec2};

/// The committed default scenario.
pub const DEFAULT_SCENARIO: &str = include_str!("../paper.defaults");

/// Top-level table of a run manifest; ignored when a manifest is loaded back
/// as a scenario.
pub const MANIFEST_TABLE: &str = "manifest";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

/// A number or the string `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    Auto(AutoTag),
    Value(f64),
}

impl AutoOr {
    pub fn value(&self) -> Option<f64> {
        match self {
            AutoOr::Value(v) => Some(*v),
            AutoOr::Auto(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementAxis {
    /// Along a lattice beam, 30° from x̂.
    XPrime,
    Y,
    X,
}

impl MeasurementAxis {
    pub fn unit(&self) -> Vec2 {
        match self {
            MeasurementAxis::XPrime => Vec2::new(30f64.to_radians().cos(), 30f64.to_radians().sin()),
            MeasurementAxis::Y => Vec2::y(),
            MeasurementAxis::X => Vec2::x(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Single-beam light shift, Eᵣ.
    pub u1: f64,
    pub detuning_ghz: f64,
    pub epi_ratio: f64,
    pub phi: f64,
    pub phase: PhaseChoice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsConfig {
    pub model: LevelModel,
    pub sideband_axis: SidebandAxis,
    /// Red sideband targeted by an automatic field.
    pub sideband_order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoolingConfig {
    /// mG
    pub b_z: AutoOr,
    pub gamma_p: f64,
    /// Per-axis heating rate, Eᵣ/ħ.
    pub heat_rate: AutoOr,
    /// Multiplies the lattice scattering rate when `heat_rate` is automatic.
    pub heat_factor: f64,
    /// Repumper detuning in linewidths; inflates heating by 1 + 4δ².
    pub repumper_detuning: f64,
    pub photons_per_cycle: u32,
    pub n_max: u32,
    pub carrier: bool,
    pub blue_sidebands: bool,
    pub lamb_dicke_order: LambDickeOrder,
    pub recoil: RecoilModel,
    pub bath_factor: f64,
    pub time_ms: f64,
    pub initial: InitialState,
    /// Atoms for the optional jump-process check; 0 disables it.
    pub monte_carlo_atoms: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanModeConfig {
    SteadyState,
    Timed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermometryConfig {
    Observables,
    Tof,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub b_min: f64,
    pub b_max: f64,
    pub points: usize,
    pub mode: ScanModeConfig,
    pub thermometry: ThermometryConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TofConfig {
    pub drop_height_cm: f64,
    pub probe_thickness_um: f64,
    pub cloud_diameter_um: f64,
    pub bin_width_ms: f64,
    /// Vertical gradient for sublevel separation, G/cm; 0 disables it.
    pub gradient: f64,
    pub atoms: usize,
    /// Lattice direction aligned with gravity, shared by scans.
    pub axis: MeasurementAxis,
}

impl TofConfig {
    pub fn geometry(&self) -> TofGeometry {
        TofGeometry {
            drop_height_cm: self.drop_height_cm,
            probe_thickness_um: self.probe_thickness_um,
            cloud_diameter_um: self.cloud_diameter_um,
            bin_width_ms: self.bin_width_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMapConfig {
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub species: AtomSpecies,
    pub lattice: LatticeConfig,
    pub levels: LevelsConfig,
    pub cooling: CoolingConfig,
    pub scan: ScanConfig,
    pub tof: TofConfig,
    pub field_map: FieldMapConfig,
    pub run: RunConfig,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Line of `key` inside `[section]`, 1-based.
fn key_line(text: &str, path: &[String]) -> Option<usize> {
    let (key, section) = path.split_last()?;
    let section = section.join(".");
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            current = h.trim_end_matches(']').trim().to_string();
            if current == path.join(".") {
                return Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    // a key of an inline table reports its parent
    if path.len() > 1 {
        return key_line(text, &path[..path.len() - 1]);
    }
    None
}

/// Tables carrying a `kind` key are replaced whole rather than merged.
fn is_tagged(table: &toml::Table) -> bool {
    table.contains_key("kind")
}

fn merge(base: &mut toml::Table, over: &toml::Table, path: &mut Vec<String>, text: &str) -> Result<()> {
    for (k, v) in over {
        path.push(k.clone());
        match base.get_mut(k) {
            None => {
                let at = key_line(text, path).map(|l| format!(" at line {l}")).unwrap_or_default();
                return Err(config_err(format!("unknown key `{}`{at}", path.join("."))));
            }
            Some(toml::Value::Table(b)) if !is_tagged(b) => match v {
                toml::Value::Table(o) => merge(b, o, path, text)?,
                _ => {
                    let at = key_line(text, path).map(|l| format!(" at line {l}")).unwrap_or_default();
                    return Err(config_err(format!("`{}`{at} must be a table", path.join("."))));
                }
            },
            Some(slot) => *slot = v.clone(),
        }
        path.pop();
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply one `section.key=value` override.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{spec}` is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("override `{spec}` needs a section and a key")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut table = doc;
    for k in parents {
        table = match table.get_mut(*k) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(config_err(format!("unknown key `{path}` in override"))),
        };
    }
    if *last == "kind" && is_tagged(table) {
        table.clear();
        table.insert("kind".into(), value);
        return Ok(());
    }
    if !table.contains_key(*last) && !is_tagged(table) {
        return Err(config_err(format!("unknown key `{path}` in override")));
    }
    table.insert((*last).to_string(), value);
    Ok(())
}

fn defaults_table() -> toml::Table {
    DEFAULT_SCENARIO.parse::<toml::Table>().expect("committed defaults parse")
}

impl Default for Scenario {
    fn default() -> Self {
        Self::from_table(defaults_table()).expect("committed defaults are valid")
    }
}

impl Scenario {
    fn from_table(t: toml::Table) -> Result<Self> {
        let s: Scenario = toml::Value::Table(t)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Defaults overlaid with an optional config document and overrides.
    pub fn load(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut doc = defaults_table();
        if let Some(text) = text {
            let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
            user.remove(MANIFEST_TABLE);
            merge(&mut doc, &user, &mut Vec::new(), text)?;
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_table(doc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(format!("`{name}` must be positive, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(format!("`{name}` must be non-negative, got {v}")))
            }
        };
        AtomSpecies::new(
            self.species.name.clone(),
            self.species.mass,
            self.species.wavelength,
            self.species.natural_linewidth,
            self.species.g_f,
            self.species.f,
        )?;
        positive("lattice.u1", self.lattice.u1)?;
        positive("lattice.detuning_ghz", self.lattice.detuning_ghz)?;
        non_negative("lattice.epi_ratio", self.lattice.epi_ratio)?;
        if !self.lattice.phi.is_finite() {
            return Err(config_err("`lattice.phi` must be finite"));
        }
        if !(1..=2).contains(&self.levels.sideband_order) {
            return Err(config_err("`levels.sideband_order` must be 1 or 2"));
        }
        let c = &self.cooling;
        if let Some(b) = c.b_z.value() {
            if !b.is_finite() {
                return Err(config_err("`cooling.b_z` must be finite"));
            }
        }
        positive("cooling.gamma_p", c.gamma_p)?;
        if let Some(h) = c.heat_rate.value() {
            non_negative("cooling.heat_rate", h)?;
        }
        non_negative("cooling.heat_factor", c.heat_factor)?;
        if !c.repumper_detuning.is_finite() {
            return Err(config_err("`cooling.repumper_detuning` must be finite"));
        }
        if c.photons_per_cycle == 0 {
            return Err(config_err("`cooling.photons_per_cycle` must be at least 1"));
        }
        if c.n_max < 2 {
            return Err(config_err("`cooling.n_max` must be at least 2"));
        }
        non_negative("cooling.bath_factor", c.bath_factor)?;
        non_negative("cooling.time_ms", c.time_ms)?;
        if !(self.scan.b_min < self.scan.b_max) {
            return Err(config_err("`scan.b_min` must lie below `scan.b_max`"));
        }
        if self.scan.points < 8 {
            return Err(config_err(format!("`scan.points` must be at least 8, got {}", self.scan.points)));
        }
        self.tof.geometry().validate()?;
        if !self.tof.gradient.is_finite() {
            return Err(config_err("`tof.gradient` must be finite"));
        }
        if self.tof.atoms == 0 {
            return Err(config_err("`tof.atoms` must be at least 1"));
        }
        if self.field_map.points < 2 {
            return Err(config_err("`field_map.points` must be at least 2"));
        }
        Ok(())
    }

    pub fn scan_fields(&self) -> Vec<f64> {
        let n = self.scan.points;
        (0..n)
            .map(|i| self.scan.b_min + (self.scan.b_max - self.scan.b_min) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn scan_mode(&self, units: &UnitSystem) -> ScanMode {
        match self.scan.mode {
            ScanModeConfig::SteadyState => ScanMode::LongTime {
                initial: self.cooling.initial,
            },
            ScanModeConfig::Timed => ScanMode::Timed {
                t: units.ms_to_time(self.cooling.time_ms),
                initial: self.cooling.initial,
            },
        }
    }

    pub fn scan_thermometry(&self) -> ScanThermometry {
        match self.scan.thermometry {
            ThermometryConfig::Observables => ScanThermometry::Observables,
            ThermometryConfig::Tof => ScanThermometry::Tof {
                geometry: self.tof.geometry(),
                atoms: self.tof.atoms,
                seed: self.run.seed,
            },
        }
    }

    pub fn beams(&self) -> Result<BeamSet> {
        standard_beam_set(1.0, self.lattice.epi_ratio, self.lattice.phi, self.lattice.phase)
    }

    pub fn units(&self) -> UnitSystem {
        UnitSystem::new(&self.species)
    }

    pub fn potential(&self) -> Result<LatticePotential> {
        LatticePotential::new(self.beams()?, self.lattice.u1, &self.species)
    }

    /// Build every derived quantity and fill in automatic values.
    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let units = self.units();
        let potential = self.potential()?;
        let well = principal_well(&potential)?;
        let c = &self.cooling;
        let scheme = LevelScheme::new(&potential, &well, c.n_max as usize, self.levels.model)?;
        let detuning_linewidths = self.species.detuning_in_linewidths(self.lattice.detuning_ghz * 1e9);
        let lattice_scattering = lattice_scattering_rate(well.depth_u0, detuning_linewidths);
        let repumper_factor = 1.0 + 4.0 * c.repumper_detuning.powi(2);
        let heat_rate = match c.heat_rate {
            AutoOr::Value(h) => h,
            AutoOr::Auto(_) => c.heat_factor * lattice_scattering * repumper_factor,
        };
        let b_z = match c.b_z {
            AutoOr::Value(b) => b,
            AutoOr::Auto(_) => {
                resonance_field(&scheme, self.levels.sideband_order, self.levels.sideband_axis, 1e4, &units)?.b_z
            }
        };
        let scheme = scheme.with_field(b_z, &units);
        let params = CoolingParameters {
            gamma_p: c.gamma_p,
            heat_rate: [heat_rate; 2],
            photons_per_cycle: c.photons_per_cycle,
            n_max: c.n_max,
            carrier: c.carrier,
            blue_sidebands: c.blue_sidebands,
            lamb_dicke_order: c.lamb_dicke_order,
            recoil: c.recoil,
            bath_factor: c.bath_factor,
            axes: [true, true],
        };
        params.validate()?;
        let mut scenario = self.clone();
        scenario.cooling.b_z = AutoOr::Value(b_z);
        scenario.cooling.heat_rate = AutoOr::Value(heat_rate);
        Ok(Resolved {
            scenario,
            units,
            potential,
            well,
            scheme,
            params,
            b_z,
            lattice_scattering,
            detuning_linewidths,
        })
    }
}

/// A scenario with all automatic values filled in and the physics built.
#[derive(Clone, Debug)]
pub struct Resolved {
    /// Copy of the input with explicit `b_z` and `heat_rate`.
    pub scenario: Scenario,
    pub units: UnitSystem,
    pub potential: LatticePotential,
    pub well: WellExpansion,
    /// Levels at the resolved field.
    pub scheme: LevelScheme,
    pub params: CoolingParameters,
    /// mG
    pub b_z: f64,
    /// Lattice photon scattering rate, Eᵣ/ħ.
    pub lattice_scattering: f64,
    pub detuning_linewidths: f64,
}

impl Resolved {
    pub fn cooling_time(&self) -> f64 {
        self.units.ms_to_time(self.scenario.cooling.time_ms)
    }

    /// Derived quantities recorded alongside the resolved scenario.
    pub fn derived(&self) -> Vec<(&'static str, f64)> {
        let w = &self.well;
        vec![
            ("recoil_energy_hz", self.units.recoil_energy_hz),
            ("recoil_temperature_nk", self.units.recoil_temperature_nk),
            ("detuning_linewidths", self.detuning_linewidths),
            ("depth_u0", w.depth_u0),
            ("omega_x", w.omega_x),
            ("omega_y", w.omega_y),
            ("eta_x", w.eta_x),
            ("eta_y", w.eta_y),
            ("b_z_mg", self.b_z),
            ("zeeman_per_m", self.scheme.zeeman_per_m),
            ("lattice_scattering_rate", self.lattice_scattering),
            ("heat_rate", self.params.heat_rate[0]),
            ("gamma_p", self.params.gamma_p),
            ("cooling_time", self.cooling_time()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_load_and_resolve() {
        let s = Scenario::default();
        assert_eq!(s.lattice.u1, 54.0);
        assert!(matches!(s.cooling.heat_rate, AutoOr::Auto(_)));
        let r = s.resolve().unwrap();
        assert!((r.lattice_scattering - r.well.depth_u0 / 3831.4).abs() < 1e-4);
        assert!((r.params.heat_rate[0] - s.cooling.heat_factor * r.lattice_scattering).abs() < 1e-15);
        assert!(r.b_z < 0.0 && r.b_z > -20.0);
        // the resolved copy round-trips through text
        let again = Scenario::load(Some(&r.scenario.to_toml()), &[]).unwrap();
        assert_eq!(again, r.scenario);
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = "[lattice]\nu1 = 50.0\nforty_two = 1\n";
        let e = Scenario::load(Some(text), &[]).unwrap_err().to_string();
        assert!(e.contains("lattice.forty_two") && e.contains("line 3"), "{e}");
        let e = Scenario::load(Some("[nonsense]\nx = 1\n"), &[]).unwrap_err().to_string();
        assert!(e.contains("nonsense") && e.contains("line 1"), "{e}");
    }

    #[test]
    fn partial_config_merges_over_defaults() {
        let s = Scenario::load(Some("[lattice]\nepi_ratio = 0.0\n"), &[]).unwrap();
        assert_eq!(s.lattice.epi_ratio, 0.0);
        assert_eq!(s.lattice.u1, 54.0);
    }

    #[test]
    fn overrides() {
        let s = Scenario::load(None, &["lattice.u1=108".into(), "cooling.b_z=-3.5".into(), "run.output=elsewhere".into()]).unwrap();
        assert_eq!(s.lattice.u1, 108.0);
        assert_eq!(s.cooling.b_z, AutoOr::Value(-3.5));
        assert_eq!(s.run.output, "elsewhere");
        let s = Scenario::load(None, &["cooling.initial.kind=\"thermal\"".into(), "cooling.initial.t_nk=2000".into()]).unwrap();
        assert_eq!(s.cooling.initial, InitialState::Thermal { t_nk: 2000.0 });
        assert!(Scenario::load(None, &["lattice.nope=1".into()]).is_err());
        assert!(Scenario::load(None, &["lattice".into()]).is_err());
        assert!(Scenario::load(None, &["lattice.u1=-1".into()]).is_err());
        assert!(Scenario::load(None, &["scan.points=1".into()]).is_err());
    }

    #[test]
    fn manifest_table_is_ignored() {
        let text = format!("{}\n[manifest]\ncommand = \"wells\"\n", Scenario::default().to_toml());
        assert_eq!(Scenario::load(Some(&text), &[]).unwrap(), Scenario::default());
    }
}
