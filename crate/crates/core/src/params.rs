//! Physical constants, parameter profiles, unit conventions, and config ingestion.
//!
//! Everything downstream works in strict SI: concentrations in mol/m^3
//! (numerically equal to mM), potentials in volts, times in seconds.
//! Config files may attach `mM`, `mV`, or `ms` suffixes to values; those
//! are the only unit conversions supported.
//!
//! # Config grammar
//!
//! A config file is line-oriented, with `#` comments, five optional
//! sections, and `key = value` entries:
//!
//! ```text
//! [parameters]
//! profile = "new"            # "new" | "previous": selects a built-in profile
//! gbar_K  = 73.64            # scalar, S/m^2
//! lambda  = (0.34, 0.33, 0.33)
//!
//! [geometry]
//! R = 1.5e-4                 # cylinder radius, m
//! L = 3e-3                   # cylinder length, m
//! Nr = 8
//! Nz = 32
//!
//! [bath]
//! Na = 120 mM
//! K  = 3 mM
//! Cl = 123 mM
//!
//! [scenario]
//! mode     = "single_ap"     # rest | single_ap | train | comparison
//! onset    = 5 ms
//! duration = 3 ms
//! probe    = (7.5e-5, 1.5e-3)   # may repeat for several probes
//! output_dir = "out"
//!
//! [solver]
//! dt = 0.01 ms
//! newton_tol = 1e-9
//! ```
//!
//! Values are scalars (optionally suffixed `mM`/`mV`/`ms`), quoted strings,
//! or parenthesized tuples of scalars/strings. Keys absent from the file
//! take documented defaults; the nine tissue parameters default to the
//! selected profile column.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::scenarios::{Mode, ScenarioConfig};

/// Elementary charge (C); exact by SI definition.
pub const E_CHARGE: f64 = 1.602_176_634e-19;
/// Boltzmann constant (J/K); exact by SI definition.
pub const K_BOLTZMANN: f64 = 1.380_649e-23;
/// Avogadro constant (1/mol); exact by SI definition.
pub const N_AVOGADRO: f64 = 6.022_140_76e23;
/// Faraday constant (C/mol).
pub const FARADAY: f64 = E_CHARGE * N_AVOGADRO;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("temperature must be positive, got {0} K")]
    NonPositiveTemperature(f64),
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ParamError {
    ParamError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Fundamental constants plus the (configurable) absolute temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Elementary charge (C).
    pub e: f64,
    /// Boltzmann constant (J/K).
    pub k_b: f64,
    /// Absolute temperature (K).
    pub temperature: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            e: E_CHARGE,
            k_b: K_BOLTZMANN,
            temperature: 293.15,
        }
    }
}

impl PhysicalConstants {
    pub fn with_temperature(temperature: f64) -> Result<Self, ParamError> {
        if !(temperature > 0.0) {
            return Err(ParamError::NonPositiveTemperature(temperature));
        }
        Ok(PhysicalConstants {
            temperature,
            ..Default::default()
        })
    }

    /// k_B T / e, the thermal voltage scale (V).
    pub fn thermal_voltage(&self) -> Result<f64, ParamError> {
        thermal_voltage(self)
    }
}

/// k_B T / e (V). Errors if the temperature is not positive.
pub fn thermal_voltage(constants: &PhysicalConstants) -> Result<f64, ParamError> {
    if !(constants.temperature > 0.0) {
        return Err(ParamError::NonPositiveTemperature(constants.temperature));
    }
    Ok(constants.k_b * constants.temperature / constants.e)
}

/// The three mobile ion species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Species {
    Na,
    K,
    Cl,
}

impl Species {
    pub const ALL: [Species; 3] = [Species::Na, Species::K, Species::Cl];

    /// Signed valence z^i.
    pub fn valence(self) -> f64 {
        match self {
            Species::Na | Species::K => 1.0,
            Species::Cl => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Species::Na => 0,
            Species::K => 1,
            Species::Cl => 2,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Species::Na => "Na",
            Species::K => "K",
            Species::Cl => "Cl",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// The three tissue compartments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Compartment {
    Ax,
    Gl,
    Ex,
}

impl Compartment {
    pub const ALL: [Compartment; 3] = [Compartment::Ax, Compartment::Gl, Compartment::Ex];

    pub fn index(self) -> usize {
        match self {
            Compartment::Ax => 0,
            Compartment::Gl => 1,
            Compartment::Ex => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Compartment::Ax => "ax",
            Compartment::Gl => "gl",
            Compartment::Ex => "ex",
        }
    }
}

impl fmt::Display for Compartment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One ion species bundled with its per-compartment diffusivities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonSpecies {
    pub species: Species,
    /// Diffusivity in each compartment, indexed ax/gl/ex (m^2/s).
    pub diffusivity: [f64; 3],
}

/// Which Table column supplies the nine tissue defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    New,
    Previous,
}

impl Profile {
    pub fn label(self) -> &'static str {
        match self {
            Profile::New => "new",
            Profile::Previous => "previous",
        }
    }
}

/// The nine published tissue parameters of one profile column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueProfile {
    pub m_ax: f64,
    pub i_ax1: f64,
    pub i_ax2: f64,
    pub g_leak_na: f64,
    pub g_leak_k: f64,
    pub gbar_na: f64,
    pub gbar_k: f64,
    pub g_ax_cl: f64,
    pub i_shock: f64,
}

/// Current calibrated profile.
pub const PROFILE_NEW: TissueProfile = TissueProfile {
    m_ax: 2.392e5,
    i_ax1: 2.39e-2,
    i_ax2: 3.25e-3,
    g_leak_na: 1.2e-1,
    g_leak_k: 5.5e-1,
    gbar_na: 3.393e2,
    gbar_k: 7.364e1,
    g_ax_cl: 3.75,
    i_shock: 7.5e-2,
};

/// Legacy profile kept for the calibration cross-check.
pub const PROFILE_PREVIOUS: TissueProfile = TissueProfile {
    m_ax: 5.98e6,
    i_ax1: 9.56e-4,
    i_ax2: 1.3e-4,
    g_leak_na: 4.8e-3,
    g_leak_k: 2.2e-2,
    gbar_na: 1.357e1,
    gbar_k: 2.945,
    g_ax_cl: 1.5e-1,
    i_shock: 3e-3,
};

pub fn tissue_profile(profile: Profile) -> TissueProfile {
    match profile {
        Profile::New => PROFILE_NEW,
        Profile::Previous => PROFILE_PREVIOUS,
    }
}

/// Where a resolved parameter value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Published table value selected through the profile.
    Paper,
    /// Built-in default of this artifact.
    Default,
    /// Explicitly set in the config file.
    Override,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Paper => "paper:Table1",
            Provenance::Default => "default",
            Provenance::Override => "override",
        }
    }
}

/// Cylinder dimensions and grid resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// Radius (m).
    pub radius: f64,
    /// Length (m).
    pub length: f64,
    pub nr: usize,
    pub nz: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            radius: 1.5e-4,
            length: 3e-3,
            nr: 8,
            nz: 32,
        }
    }
}

/// Fully resolved model parameters. Immutable after load; shared read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub constants: PhysicalConstants,
    pub profile: Profile,
    /// Axon membrane area per tissue volume (1/m).
    pub m_ax: f64,
    /// Glial membrane area per tissue volume (1/m).
    pub m_gl: f64,
    /// Axon pump strength (A/m^2).
    pub i_ax1: f64,
    /// Glial pump strength (A/m^2).
    pub i_ax2: f64,
    /// Axon leak conductances (S/m^2).
    pub g_leak_na: f64,
    pub g_leak_k: f64,
    pub g_ax_cl: f64,
    /// Maximal gated conductances on the axon membrane (S/m^2).
    pub gbar_na: f64,
    pub gbar_k: f64,
    /// Glial passive conductances (S/m^2).
    pub g_gl_na: f64,
    pub g_gl_k: f64,
    /// Stimulus current density (A/m^2).
    pub i_shock: f64,
    /// Membrane capacitance, both membranes (F/m^2).
    pub c_m: f64,
    /// Per-species capacitive partition, indexed Na/K/Cl; sums to 1.
    pub lambda: [f64; 3],
    /// Volume fractions, indexed ax/gl/ex; sums to 1.
    pub eta: [f64; 3],
    pub geometry: Geometry,
    /// Bath concentrations, indexed Na/K/Cl (mol/m^3).
    pub bath: [f64; 3],
    /// Free-solution diffusivities, indexed Na/K/Cl (m^2/s).
    pub diffusivity_free: [f64; 3],
    /// Per-compartment tortuosity scale on diffusivities, indexed ax/gl/ex.
    pub tortuosity: [f64; 3],
    /// Pump half-saturation constants (mol/m^3).
    pub pump_k_na: f64,
    pub pump_k_k: f64,
    /// Initial intracellular K+ used by rest-state construction (mol/m^3).
    pub init_k_ax: f64,
    pub init_k_gl: f64,
    /// Species carrying the stimulus current.
    pub stim_carrier: Species,
    provenance: BTreeMap<&'static str, Provenance>,
}

/// Names of the nine profile-backed parameters, in table order.
const PROFILE_KEYS: [&str; 9] = [
    "M_ax",
    "I_ax1",
    "I_ax2",
    "g_leak_Na",
    "g_leak_K",
    "gbar_Na",
    "gbar_K",
    "g_ax_Cl",
    "I_shock",
];

impl ParameterSet {
    /// Defaults for the selected profile; every non-table field takes its
    /// built-in default.
    pub fn with_profile(profile: Profile) -> Self {
        let t = tissue_profile(profile);
        let mut provenance: BTreeMap<&'static str, Provenance> = BTreeMap::new();
        for key in PROFILE_KEYS {
            provenance.insert(key, Provenance::Paper);
        }
        ParameterSet {
            constants: PhysicalConstants::default(),
            profile,
            m_ax: t.m_ax,
            m_gl: 2.392e5,
            i_ax1: t.i_ax1,
            i_ax2: t.i_ax2,
            g_leak_na: t.g_leak_na,
            g_leak_k: t.g_leak_k,
            g_ax_cl: t.g_ax_cl,
            gbar_na: t.gbar_na,
            gbar_k: t.gbar_k,
            g_gl_na: 6.7e-3,
            g_gl_k: 0.5,
            i_shock: t.i_shock,
            c_m: 7.5e-3,
            lambda: [1.0 / 3.0; 3],
            // Necturus optic nerve is glia-dominated with narrow
            // extracellular clefts; the small eta_ex sets the size of the
            // per-impulse potassium excursion.
            eta: [0.465, 0.50, 0.035],
            geometry: Geometry::default(),
            bath: [120.0, 3.0, 123.0],
            diffusivity_free: [1.33e-9, 1.96e-9, 2.03e-9],
            tortuosity: [1.0, 0.2, 0.4],
            pump_k_na: 10.0,
            pump_k_k: 1.5,
            init_k_ax: 70.0,
            init_k_gl: 100.0,
            stim_carrier: Species::K,
            provenance,
        }
    }

    /// Effective diffusivity of a species in a compartment (m^2/s).
    pub fn diffusivity(&self, comp: Compartment, species: Species) -> f64 {
        self.diffusivity_free[species.index()] * self.tortuosity[comp.index()]
    }

    pub fn ion_species(&self, species: Species) -> IonSpecies {
        IonSpecies {
            species,
            diffusivity: [
                self.diffusivity(Compartment::Ax, species),
                self.diffusivity(Compartment::Gl, species),
                self.diffusivity(Compartment::Ex, species),
            ],
        }
    }

    /// k_B T / e (V). Parameters are validated, so this cannot fail.
    pub fn thermal_voltage(&self) -> f64 {
        self.constants.k_b * self.constants.temperature / self.constants.e
    }

    pub fn provenance(&self, key: &str) -> Provenance {
        self.provenance
            .get(key)
            .copied()
            .unwrap_or(Provenance::Default)
    }

    fn mark_override(&mut self, key: &'static str) {
        self.provenance.insert(key, Provenance::Override);
    }

    /// Checks every invariant, naming the offending key on failure.
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.constants.temperature > 0.0) {
            return Err(invalid("T", "temperature must be positive"));
        }
        let nonneg: [(&str, f64); 12] = [
            ("M_ax", self.m_ax),
            ("M_gl", self.m_gl),
            ("I_ax1", self.i_ax1),
            ("I_ax2", self.i_ax2),
            ("g_leak_Na", self.g_leak_na),
            ("g_leak_K", self.g_leak_k),
            ("g_ax_Cl", self.g_ax_cl),
            ("gbar_Na", self.gbar_na),
            ("gbar_K", self.gbar_k),
            ("g_gl_Na", self.g_gl_na),
            ("g_gl_K", self.g_gl_k),
            ("C_m", self.c_m),
        ];
        for (key, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        let lambda_sum: f64 = self.lambda.iter().sum();
        if (lambda_sum - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "lambda",
                format!("partitions must sum to 1, got {lambda_sum}"),
            ));
        }
        for (i, l) in self.lambda.iter().enumerate() {
            if !(*l >= 0.0 && *l <= 1.0) {
                return Err(invalid(
                    "lambda",
                    format!("component {} must lie in [0,1], got {l}", Species::ALL[i]),
                ));
            }
        }
        let eta_sum: f64 = self.eta.iter().sum();
        if (eta_sum - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "eta",
                format!("volume fractions must sum to 1, got {eta_sum}"),
            ));
        }
        for (comp, v) in Compartment::ALL.iter().zip(self.eta) {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(
                    &format!("eta_{comp}"),
                    format!("must lie in (0,1), got {v}"),
                ));
            }
        }
        let mut charge = 0.0;
        let mut total = 0.0;
        for s in Species::ALL {
            let c = self.bath[s.index()];
            if !(c > 0.0) {
                return Err(invalid(
                    s.symbol(),
                    format!("bath value must be > 0, got {c}"),
                ));
            }
            charge += s.valence() * c;
            total += c;
        }
        if charge.abs() > 1e-9 * total {
            return Err(invalid(
                "bath",
                format!("composition must be electroneutral, net charge {charge} mol/m^3"),
            ));
        }
        for s in Species::ALL {
            let d = self.diffusivity_free[s.index()];
            if !(d > 0.0) {
                return Err(invalid(&format!("D_{s}"), format!("must be > 0, got {d}")));
            }
        }
        for (comp, t) in Compartment::ALL.iter().zip(self.tortuosity) {
            if !(t > 0.0) {
                return Err(invalid(
                    &format!("tort_{comp}"),
                    format!("must be > 0, got {t}"),
                ));
            }
        }
        if !(self.geometry.radius > 0.0) {
            return Err(invalid("R", "radius must be positive"));
        }
        if !(self.geometry.length > 0.0) {
            return Err(invalid("L", "length must be positive"));
        }
        if self.geometry.nr < 1 {
            return Err(invalid("Nr", "need at least one radial cell"));
        }
        if self.geometry.nz < 2 {
            return Err(invalid("Nz", "need at least two axial cells"));
        }
        for (key, v) in [
            ("pump_K_Na", self.pump_k_na),
            ("pump_K_K", self.pump_k_k),
            ("K_in_ax", self.init_k_ax),
            ("K_in_gl", self.init_k_gl),
        ] {
            if !(v > 0.0) {
                return Err(invalid(key, format!("must be > 0, got {v}")));
            }
        }
        if !(self.i_shock >= 0.0) {
            return Err(invalid("I_shock", "must be >= 0"));
        }
        Ok(())
    }
}

impl Default for ParameterSet {
    fn default() -> Self {
        ParameterSet::with_profile(Profile::New)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq)]
enum Scalar {
    Num(f64),
    Str(String),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    One(Scalar),
    List(Vec<Scalar>),
}

impl Value {
    fn as_num(&self, key: &str) -> Result<f64, ParamError> {
        match self {
            Value::One(Scalar::Num(v)) => Ok(*v),
            _ => Err(invalid(key, "expected a number")),
        }
    }

    fn as_usize(&self, key: &str) -> Result<usize, ParamError> {
        let v = self.as_num(key)?;
        if v.fract() != 0.0 || v < 0.0 {
            return Err(invalid(
                key,
                format!("expected a non-negative integer, got {v}"),
            ));
        }
        Ok(v as usize)
    }

    fn as_str(&self, key: &str) -> Result<&str, ParamError> {
        match self {
            Value::One(Scalar::Str(s)) => Ok(s),
            _ => Err(invalid(key, "expected a quoted string")),
        }
    }

    fn as_bool(&self, key: &str) -> Result<bool, ParamError> {
        match self {
            Value::One(Scalar::Bool(b)) => Ok(*b),
            _ => Err(invalid(key, "expected true or false")),
        }
    }

    fn as_num_list(&self, key: &str, len: usize) -> Result<Vec<f64>, ParamError> {
        let items = match self {
            Value::List(items) => items,
            _ => return Err(invalid(key, "expected a parenthesized tuple")),
        };
        if items.len() != len {
            return Err(invalid(
                key,
                format!("expected {len} entries, got {}", items.len()),
            ));
        }
        items
            .iter()
            .map(|s| match s {
                Scalar::Num(v) => Ok(*v),
                _ => Err(invalid(key, "expected numeric tuple entries")),
            })
            .collect()
    }

    fn as_pair(&self, key: &str) -> Result<(f64, f64), ParamError> {
        let v = self.as_num_list(key, 2)?;
        Ok((v[0], v[1]))
    }
}

/// Multiplier for a recognized unit suffix.
fn unit_factor(suffix: &str) -> Option<f64> {
    match suffix {
        "mM" => Some(1.0), // mol/m^3 == mM
        "mV" => Some(1e-3),
        "ms" => Some(1e-3),
        _ => None,
    }
}

fn parse_scalar(token: &str, line: usize) -> Result<Scalar, ConfigError> {
    let token = token.trim();
    if token == "true" {
        return Ok(Scalar::Bool(true));
    }
    if token == "false" {
        return Ok(Scalar::Bool(false));
    }
    if let Some(stripped) = token.strip_prefix('"') {
        let inner = stripped.strip_suffix('"').ok_or(ConfigError::Parse {
            line,
            msg: format!("unterminated string: {token}"),
        })?;
        return Ok(Scalar::Str(inner.to_string()));
    }
    // Split an optional unit suffix off the numeric part.
    let (num_part, suffix) = match token.find(|c: char| c.is_ascii_alphabetic()) {
        // 'e'/'E' inside a float literal is not a suffix start.
        Some(pos) if !matches!(&token[pos..pos + 1], "e" | "E") => {
            (token[..pos].trim(), token[pos..].trim())
        }
        Some(pos) => {
            // Scientific notation: find a suffix after the exponent digits.
            let rest = &token[pos + 1..];
            match rest.find(|c: char| c.is_ascii_alphabetic()) {
                Some(p2) => (token[..pos + 1 + p2].trim(), token[pos + 1 + p2..].trim()),
                None => (token, ""),
            }
        }
        None => (token, ""),
    };
    let value: f64 = num_part.parse().map_err(|_| ConfigError::Parse {
        line,
        msg: format!("not a number: {num_part}"),
    })?;
    if suffix.is_empty() {
        return Ok(Scalar::Num(value));
    }
    let factor = unit_factor(suffix).ok_or(ConfigError::Parse {
        line,
        msg: format!("unknown unit suffix `{suffix}` (expected mM, mV, or ms)"),
    })?;
    Ok(Scalar::Num(value * factor))
}

fn parse_value(raw: &str, line: usize) -> Result<Value, ConfigError> {
    let raw = raw.trim();
    if let Some(stripped) = raw.strip_prefix('(') {
        let inner = stripped.strip_suffix(')').ok_or(ConfigError::Parse {
            line,
            msg: "unterminated tuple".to_string(),
        })?;
        let items = inner
            .split(',')
            .map(|tok| parse_scalar(tok, line))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(Value::List(items));
    }
    Ok(Value::One(parse_scalar(raw, line)?))
}

#[derive(Debug, Default)]
struct RawConfig {
    /// (section, key) -> values in file order; `probe` may repeat.
    entries: Vec<(String, String, Value)>,
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_raw(text: &str) -> Result<RawConfig, ConfigError> {
    let mut raw = RawConfig::default();
    let mut section = String::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(line).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(stripped) = line.strip_prefix('[') {
            let name = stripped.strip_suffix(']').ok_or(ConfigError::Parse {
                line: line_no,
                msg: "unterminated section header".to_string(),
            })?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
            line: line_no,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        raw.entries.push((
            section.clone(),
            key.trim().to_string(),
            parse_value(value, line_no)?,
        ));
    }
    Ok(raw)
}

/// Loads and validates a config file. Missing keys take documented
/// defaults; the nine tissue parameters default to the selected profile.
pub fn load_config(path: impl AsRef<Path>) -> Result<(ParameterSet, ScenarioConfig), ConfigError> {
    let text = std::fs::read_to_string(path)?;
    load_config_str(&text)
}

/// Same as [`load_config`] but from an in-memory string.
pub fn load_config_str(text: &str) -> Result<(ParameterSet, ScenarioConfig), ConfigError> {
    let raw = parse_raw(text)?;

    // The profile must be resolved first: it selects the default layer.
    let mut profile = Profile::New;
    for (section, key, value) in &raw.entries {
        if key == "profile" && (section.is_empty() || section == "parameters") {
            profile = match value.as_str("profile")? {
                "new" => Profile::New,
                "previous" => Profile::Previous,
                other => {
                    return Err(invalid(
                        "profile",
                        format!("expected \"new\" or \"previous\", got \"{other}\""),
                    )
                    .into())
                }
            };
        }
    }

    let mut params = ParameterSet::with_profile(profile);
    let mut scenario = ScenarioConfig::default();
    let mut probes: Vec<(f64, f64)> = Vec::new();

    for (section, key, value) in &raw.entries {
        let k = key.as_str();
        match (section.as_str(), k) {
            (_, "profile") if section.is_empty() || section == "parameters" => {}
            ("parameters", "M_ax") => params.m_ax = value.as_num(k)?,
            ("parameters", "M_gl") => params.m_gl = value.as_num(k)?,
            ("parameters", "I_ax1") => params.i_ax1 = value.as_num(k)?,
            ("parameters", "I_ax2") => params.i_ax2 = value.as_num(k)?,
            ("parameters", "g_leak_Na") => params.g_leak_na = value.as_num(k)?,
            ("parameters", "g_leak_K") => params.g_leak_k = value.as_num(k)?,
            ("parameters", "g_ax_Cl") => params.g_ax_cl = value.as_num(k)?,
            ("parameters", "gbar_Na") => params.gbar_na = value.as_num(k)?,
            ("parameters", "gbar_K") => params.gbar_k = value.as_num(k)?,
            ("parameters", "g_gl_Na") => params.g_gl_na = value.as_num(k)?,
            ("parameters", "g_gl_K") => params.g_gl_k = value.as_num(k)?,
            ("parameters", "I_shock") => params.i_shock = value.as_num(k)?,
            ("parameters", "C_m") => params.c_m = value.as_num(k)?,
            ("parameters", "T") => {
                params.constants = PhysicalConstants::with_temperature(value.as_num(k)?)?;
            }
            ("parameters", "lambda") => {
                let v = value.as_num_list(k, 3)?;
                params.lambda = [v[0], v[1], v[2]];
            }
            ("parameters", "eta_ax") => params.eta[0] = value.as_num(k)?,
            ("parameters", "eta_gl") => params.eta[1] = value.as_num(k)?,
            ("parameters", "eta_ex") => params.eta[2] = value.as_num(k)?,
            ("parameters", "D_Na") => params.diffusivity_free[0] = value.as_num(k)?,
            ("parameters", "D_K") => params.diffusivity_free[1] = value.as_num(k)?,
            ("parameters", "D_Cl") => params.diffusivity_free[2] = value.as_num(k)?,
            ("parameters", "tort_ax") => params.tortuosity[0] = value.as_num(k)?,
            ("parameters", "tort_gl") => params.tortuosity[1] = value.as_num(k)?,
            ("parameters", "tort_ex") => params.tortuosity[2] = value.as_num(k)?,
            ("parameters", "pump_K_Na") => params.pump_k_na = value.as_num(k)?,
            ("parameters", "pump_K_K") => params.pump_k_k = value.as_num(k)?,
            ("parameters", "K_in_ax") => params.init_k_ax = value.as_num(k)?,
            ("parameters", "K_in_gl") => params.init_k_gl = value.as_num(k)?,
            ("parameters", "stim_carrier") => {
                params.stim_carrier = match value.as_str(k)? {
                    "Na" => Species::Na,
                    "K" => Species::K,
                    "Cl" => Species::Cl,
                    other => {
                        return Err(
                            invalid(k, format!("expected Na, K, or Cl, got \"{other}\"")).into(),
                        )
                    }
                };
            }
            ("geometry", "R") => params.geometry.radius = value.as_num(k)?,
            ("geometry", "L") => params.geometry.length = value.as_num(k)?,
            ("geometry", "Nr") => params.geometry.nr = value.as_usize(k)?,
            ("geometry", "Nz") => params.geometry.nz = value.as_usize(k)?,
            ("bath", "Na") => params.bath[0] = value.as_num(k)?,
            ("bath", "K") => params.bath[1] = value.as_num(k)?,
            ("bath", "Cl") => params.bath[2] = value.as_num(k)?,
            ("scenario", "mode") => {
                scenario.mode = match value.as_str(k)? {
                    "rest" => Mode::Rest,
                    "single_ap" => Mode::SingleAp,
                    "train" => Mode::Train,
                    "comparison" => Mode::Comparison,
                    other => {
                        return Err(invalid(
                            k,
                            format!(
                                "expected rest, single_ap, train, or comparison, got \"{other}\""
                            ),
                        )
                        .into())
                    }
                };
            }
            ("scenario", "capacitive") => scenario.capacitive = value.as_bool(k)?,
            ("scenario", "onset") => scenario.stimulus.onset = value.as_num(k)?,
            ("scenario", "duration") => scenario.stimulus.duration = value.as_num(k)?,
            ("scenario", "period") => scenario.stimulus.period = value.as_num(k)?,
            ("scenario", "count") => scenario.stimulus.count = value.as_usize(k)?,
            ("scenario", "stim_z_fraction") => scenario.stimulus.z_fraction = value.as_num(k)?,
            ("scenario", "probe") => probes.push(value.as_pair(k)?),
            ("scenario", "output_dir") => scenario.output.dir = value.as_str(k)?.into(),
            ("scenario", "cadence") => scenario.output.cadence = value.as_num(k)?,
            ("scenario", "formats") => {
                let items = match value {
                    Value::List(items) => items,
                    _ => return Err(invalid(k, "expected a tuple of format names").into()),
                };
                scenario.output.csv = false;
                scenario.output.svg = false;
                for item in items {
                    match item {
                        Scalar::Str(s) if s == "csv" => scenario.output.csv = true,
                        Scalar::Str(s) if s == "svg" => scenario.output.svg = true,
                        other => {
                            return Err(invalid(
                                k,
                                format!("expected \"csv\" or \"svg\", got {other:?}"),
                            )
                            .into())
                        }
                    }
                }
            }
            ("solver", "dt") => scenario.solver.dt = value.as_num(k)?,
            ("solver", "newton_tol") => scenario.solver.newton_tol = value.as_num(k)?,
            ("solver", "newton_max_iter") => scenario.solver.newton_max_iter = value.as_usize(k)?,
            ("solver", "linear_tol") => scenario.solver.linear_tol = value.as_num(k)?,
            ("solver", "max_time") => scenario.solver.max_time = value.as_num(k)?,
            (section, _) => {
                return Err(ConfigError::UnknownKey {
                    section: section.to_string(),
                    key: key.clone(),
                })
            }
        }
        if section == "parameters" || section == "geometry" || section == "bath" {
            if let Some(static_key) = lookup_static_key(k) {
                params.mark_override(static_key);
            }
        }
    }

    if !probes.is_empty() {
        scenario.probes = probes;
    } else {
        // Default probe: mid-length, mid-radius.
        scenario.probes = vec![(params.geometry.radius * 0.5, params.geometry.length * 0.5)];
    }

    params.validate()?;
    scenario.validate(&params)?;
    Ok((params, scenario))
}

/// All config keys owned by the parameter sections, used for provenance
/// tracking and serialization. The bare species names are the [bath] keys.
const STATIC_KEYS: [&str; 36] = [
    "M_ax",
    "M_gl",
    "I_ax1",
    "I_ax2",
    "g_leak_Na",
    "g_leak_K",
    "g_ax_Cl",
    "gbar_Na",
    "gbar_K",
    "g_gl_Na",
    "g_gl_K",
    "I_shock",
    "C_m",
    "T",
    "lambda",
    "eta_ax",
    "eta_gl",
    "eta_ex",
    "D_Na",
    "D_K",
    "D_Cl",
    "tort_ax",
    "tort_gl",
    "tort_ex",
    "pump_K_Na",
    "pump_K_K",
    "K_in_ax",
    "K_in_gl",
    "stim_carrier",
    "R",
    "L",
    "Nr",
    "Nz",
    "Na",
    "K",
    "Cl",
];

fn lookup_static_key(key: &str) -> Option<&'static str> {
    STATIC_KEYS.iter().find(|k| **k == key).copied()
}

/// Serializes a parameter set (plus scenario) back into config text. The
/// output reparses to an identical parameter set.
pub fn to_config_string(params: &ParameterSet, scenario: &ScenarioConfig) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let g = &params.geometry;
    writeln!(out, "[parameters]").unwrap();
    writeln!(out, "profile = \"{}\"", params.profile.label()).unwrap();
    for (key, v) in [
        ("M_ax", params.m_ax),
        ("M_gl", params.m_gl),
        ("I_ax1", params.i_ax1),
        ("I_ax2", params.i_ax2),
        ("g_leak_Na", params.g_leak_na),
        ("g_leak_K", params.g_leak_k),
        ("g_ax_Cl", params.g_ax_cl),
        ("gbar_Na", params.gbar_na),
        ("gbar_K", params.gbar_k),
        ("g_gl_Na", params.g_gl_na),
        ("g_gl_K", params.g_gl_k),
        ("I_shock", params.i_shock),
        ("C_m", params.c_m),
        ("T", params.constants.temperature),
        ("eta_ax", params.eta[0]),
        ("eta_gl", params.eta[1]),
        ("eta_ex", params.eta[2]),
        ("D_Na", params.diffusivity_free[0]),
        ("D_K", params.diffusivity_free[1]),
        ("D_Cl", params.diffusivity_free[2]),
        ("tort_ax", params.tortuosity[0]),
        ("tort_gl", params.tortuosity[1]),
        ("tort_ex", params.tortuosity[2]),
        ("pump_K_Na", params.pump_k_na),
        ("pump_K_K", params.pump_k_k),
        ("K_in_ax", params.init_k_ax),
        ("K_in_gl", params.init_k_gl),
    ] {
        writeln!(out, "{key} = {v}").unwrap();
    }
    writeln!(
        out,
        "lambda = ({}, {}, {})",
        params.lambda[0], params.lambda[1], params.lambda[2]
    )
    .unwrap();
    writeln!(out, "stim_carrier = \"{}\"", params.stim_carrier).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "[geometry]").unwrap();
    writeln!(out, "R = {}", g.radius).unwrap();
    writeln!(out, "L = {}", g.length).unwrap();
    writeln!(out, "Nr = {}", g.nr).unwrap();
    writeln!(out, "Nz = {}", g.nz).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "[bath]").unwrap();
    writeln!(out, "Na = {}", params.bath[0]).unwrap();
    writeln!(out, "K = {}", params.bath[1]).unwrap();
    writeln!(out, "Cl = {}", params.bath[2]).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "[scenario]").unwrap();
    writeln!(out, "mode = \"{}\"", scenario.mode.label()).unwrap();
    writeln!(out, "capacitive = {}", scenario.capacitive).unwrap();
    writeln!(out, "onset = {}", scenario.stimulus.onset).unwrap();
    writeln!(out, "duration = {}", scenario.stimulus.duration).unwrap();
    writeln!(out, "period = {}", scenario.stimulus.period).unwrap();
    writeln!(out, "count = {}", scenario.stimulus.count).unwrap();
    writeln!(out, "stim_z_fraction = {}", scenario.stimulus.z_fraction).unwrap();
    for (r, z) in &scenario.probes {
        writeln!(out, "probe = ({r}, {z})").unwrap();
    }
    writeln!(out, "output_dir = \"{}\"", scenario.output.dir.display()).unwrap();
    writeln!(out, "cadence = {}", scenario.output.cadence).unwrap();
    let formats: Vec<&str> = [("csv", scenario.output.csv), ("svg", scenario.output.svg)]
        .iter()
        .filter(|(_, on)| *on)
        .map(|(name, _)| *name)
        .collect();
    if !formats.is_empty() {
        let quoted: Vec<String> = formats.iter().map(|f| format!("\"{f}\"")).collect();
        writeln!(out, "formats = ({})", quoted.join(", ")).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "[solver]").unwrap();
    writeln!(out, "dt = {}", scenario.solver.dt).unwrap();
    writeln!(out, "newton_tol = {}", scenario.solver.newton_tol).unwrap();
    writeln!(out, "newton_max_iter = {}", scenario.solver.newton_max_iter).unwrap();
    writeln!(out, "linear_tol = {}", scenario.solver.linear_tol).unwrap();
    writeln!(out, "max_time = {}", scenario.solver.max_time).unwrap();
    out
}
