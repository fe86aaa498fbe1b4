//! Plain-text key = value run configuration.
//!
//! One `key = value` per line, `#` comments, blank lines ignored. Scalar
//! keys appear at most once; `component` / `component_alt` repeat, one
//! mixture component each. Every rejection names the file, line, and key
//! so a bad config is a one-glance fix. Units are documented per key in
//! the shipped configs and the README; the code treats all quantities as
//! dimensionless numbers in a consistent unit system.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use qcbohm_core::ensemble::{ClassicalInit, InitialMixture, MixtureComponent, StepContext};
use qcbohm_core::grid::Grid;
use qcbohm_core::model::{Model, QuantumPotential};
use qcbohm_core::wavefunction::WaveFunction;
use qcbohm_core::C64;
use serde::Serialize;

/// A config rejection: file, line, key, and what was wrong.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(key) = &self.key {
            write!(f, ": key `{key}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Quantum-sector potential, as written in the config.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PotentialSpec {
    Harmonic { omega_q: f64 },
    DoubleWell { barrier: f64, half_separation: f64 },
}

/// One wavefunction factor of a mixture component.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PsiSpec {
    Gaussian { x0: f64, sigma: f64, k0: f64 },
    Eigen { n: usize },
    Super { c0: f64, n0: usize, c1: f64, n1: usize },
}

/// One classical factor of a mixture component.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassicalSpec {
    Point { x: f64, k: f64 },
    Gauss { mean_x: f64, std_x: f64, mean_k: f64, std_k: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub psi: PsiSpec,
    pub classical: ClassicalSpec,
    #[serde(skip)]
    pub line: usize,
}

/// Fully parsed and validated run configuration. Serializes as the config
/// echo embedded in every summary.json; deliberately excludes the output
/// directory and thread count so artifacts stay location- and
/// parallelism-independent.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub scenario: String,
    pub hbar: f64,
    pub mass_q: f64,
    pub mass_cl: f64,
    pub omega_c: f64,
    pub lambda: f64,
    pub potential: PotentialSpec,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub dt: f64,
    pub steps: u64,
    pub output_stride: u64,
    pub steps_intermediate: Option<u64>,
    pub replicas: usize,
    pub control_replicas: usize,
    pub seed: u64,
    pub seed_alt: u64,
    pub resample_seed: u64,
    pub eps_node: f64,
    pub components: Vec<ComponentSpec>,
    pub components_alt: Vec<ComponentSpec>,
    pub grid_c_min: Option<f64>,
    pub grid_c_max: Option<f64>,
    pub grid_c_points: Option<usize>,
    pub width_scale: f64,
    pub tolerance: f64,
    pub dump_wavefunctions: usize,
    #[serde(skip)]
    key_lines: HashMap<&'static str, usize>,
    #[serde(skip)]
    pub path: PathBuf,
}

const SCALAR_KEYS: &[&str] = &[
    "scenario",
    "hbar",
    "mass_q",
    "mass_cl",
    "omega_c",
    "lambda",
    "potential",
    "grid_min",
    "grid_max",
    "grid_points",
    "dt",
    "steps",
    "output_stride",
    "steps_intermediate",
    "replicas",
    "control_replicas",
    "seed",
    "seed_alt",
    "resample_seed",
    "eps_node",
    "grid_c_min",
    "grid_c_max",
    "grid_c_points",
    "width_scale",
    "tolerance",
    "dump_wavefunctions",
];

struct RawEntry {
    line: usize,
    key: String,
    value: String,
}

struct RawConfig {
    path: PathBuf,
    entries: Vec<RawEntry>,
}

impl RawConfig {
    fn err(&self, line: Option<usize>, key: Option<&str>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.clone(),
            line,
            key: key.map(str::to_owned),
            message: message.into(),
        }
    }

    fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let mut entries = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError {
                    path: path.to_owned(),
                    line: Some(line),
                    key: None,
                    message: format!("expected `key = value`, got `{stripped}`"),
                });
            };
            let key = key.trim().to_owned();
            let value = value.trim().to_owned();
            let known = SCALAR_KEYS.contains(&key.as_str())
                || key == "component"
                || key == "component_alt";
            if !known {
                return Err(ConfigError {
                    path: path.to_owned(),
                    line: Some(line),
                    key: Some(key),
                    message: "unknown key".into(),
                });
            }
            if value.is_empty() {
                return Err(ConfigError {
                    path: path.to_owned(),
                    line: Some(line),
                    key: Some(key),
                    message: "empty value".into(),
                });
            }
            entries.push(RawEntry { line, key, value });
        }
        Ok(Self {
            path: path.to_owned(),
            entries,
        })
    }

    /// The single entry for a scalar key, rejecting duplicates.
    fn scalar(&self, key: &str) -> Result<Option<&RawEntry>, ConfigError> {
        let mut found: Option<&RawEntry> = None;
        for e in self.entries.iter().filter(|e| e.key == key) {
            if let Some(first) = found {
                return Err(self.err(
                    Some(e.line),
                    Some(key),
                    format!("duplicate (first set on line {})", first.line),
                ));
            }
            found = Some(e);
        }
        Ok(found)
    }

    fn parse_value<T: std::str::FromStr>(
        &self,
        entry: &RawEntry,
        what: &str,
    ) -> Result<T, ConfigError> {
        entry.value.parse().map_err(|_| {
            self.err(
                Some(entry.line),
                Some(&entry.key),
                format!("expected {what}, got `{}`", entry.value),
            )
        })
    }

    fn required<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<(T, usize), ConfigError> {
        match self.scalar(key)? {
            Some(e) => Ok((self.parse_value(e, what)?, e.line)),
            None => Err(self.err(None, Some(key), "missing required key")),
        }
    }

    fn optional<T: std::str::FromStr>(
        &self,
        key: &str,
        what: &str,
    ) -> Result<Option<(T, usize)>, ConfigError> {
        match self.scalar(key)? {
            Some(e) => Ok(Some((self.parse_value(e, what)?, e.line))),
            None => Ok(None),
        }
    }
}

fn split_spec<'a>(
    raw: &RawConfig,
    entry: &RawEntry,
    field: &str,
    spec: &'a str,
    expected_parts: usize,
) -> Result<Vec<&'a str>, ConfigError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != expected_parts {
        return Err(raw.err(
            Some(entry.line),
            Some(&entry.key),
            format!(
                "{field} `{spec}`: expected {expected_parts} colon-separated parts, got {}",
                parts.len()
            ),
        ));
    }
    Ok(parts)
}

fn parse_num<T: std::str::FromStr>(
    raw: &RawConfig,
    entry: &RawEntry,
    field: &str,
    text: &str,
) -> Result<T, ConfigError> {
    text.parse().map_err(|_| {
        raw.err(
            Some(entry.line),
            Some(&entry.key),
            format!("{field}: expected a number, got `{text}`"),
        )
    })
}

fn parse_component(raw: &RawConfig, entry: &RawEntry) -> Result<ComponentSpec, ConfigError> {
    let fields: Vec<&str> = entry.value.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(raw.err(
            Some(entry.line),
            Some(&entry.key),
            format!(
                "expected `<weight> <psi-spec> <classical-spec>` (3 fields), got {}",
                fields.len()
            ),
        ));
    }
    let weight: f64 = parse_num(raw, entry, "field 1 (weight)", fields[0])?;

    let psi_spec = fields[1];
    let psi = match psi_spec.split(':').next().unwrap_or("") {
        "gaussian" => {
            let p = split_spec(raw, entry, "field 2", psi_spec, 4)?;
            PsiSpec::Gaussian {
                x0: parse_num(raw, entry, "gaussian x0", p[1])?,
                sigma: parse_num(raw, entry, "gaussian sigma", p[2])?,
                k0: parse_num(raw, entry, "gaussian k0", p[3])?,
            }
        }
        "eigen" => {
            let p = split_spec(raw, entry, "field 2", psi_spec, 2)?;
            PsiSpec::Eigen {
                n: parse_num(raw, entry, "eigen n", p[1])?,
            }
        }
        "super" => {
            let p = split_spec(raw, entry, "field 2", psi_spec, 5)?;
            PsiSpec::Super {
                c0: parse_num(raw, entry, "super c0", p[1])?,
                n0: parse_num(raw, entry, "super n0", p[2])?,
                c1: parse_num(raw, entry, "super c1", p[3])?,
                n1: parse_num(raw, entry, "super n1", p[4])?,
            }
        }
        other => {
            return Err(raw.err(
                Some(entry.line),
                Some(&entry.key),
                format!(
                    "field 2 (`{other}`): wavefunction spec must be \
                     gaussian:<x0>:<sigma>:<k0>, eigen:<n>, or super:<c0>:<n0>:<c1>:<n1>"
                ),
            ))
        }
    };

    let cl_spec = fields[2];
    let classical = match cl_spec.split(':').next().unwrap_or("") {
        "point" => {
            let p = split_spec(raw, entry, "field 3", cl_spec, 3)?;
            ClassicalSpec::Point {
                x: parse_num(raw, entry, "point X0", p[1])?,
                k: parse_num(raw, entry, "point K0", p[2])?,
            }
        }
        "gauss" => {
            let p = split_spec(raw, entry, "field 3", cl_spec, 5)?;
            ClassicalSpec::Gauss {
                mean_x: parse_num(raw, entry, "gauss mean_X", p[1])?,
                std_x: parse_num(raw, entry, "gauss std_X", p[2])?,
                mean_k: parse_num(raw, entry, "gauss mean_K", p[3])?,
                std_k: parse_num(raw, entry, "gauss std_K", p[4])?,
            }
        }
        other => {
            return Err(raw.err(
                Some(entry.line),
                Some(&entry.key),
                format!(
                    "field 3 (`{other}`): classical spec must be \
                     point:<X0>:<K0> or gauss:<mean_X>:<std_X>:<mean_K>:<std_K>"
                ),
            ))
        }
    };

    Ok(ComponentSpec {
        weight,
        psi,
        classical,
        line: entry.line,
    })
}

fn parse_potential(raw: &RawConfig, entry: &RawEntry) -> Result<PotentialSpec, ConfigError> {
    let spec = entry.value.as_str();
    match spec.split(':').next().unwrap_or("") {
        "harmonic" => {
            let p = split_spec(raw, entry, "value", spec, 2)?;
            Ok(PotentialSpec::Harmonic {
                omega_q: parse_num(raw, entry, "harmonic omega_q", p[1])?,
            })
        }
        "doublewell" => {
            let p = split_spec(raw, entry, "value", spec, 3)?;
            Ok(PotentialSpec::DoubleWell {
                barrier: parse_num(raw, entry, "doublewell barrier", p[1])?,
                half_separation: parse_num(raw, entry, "doublewell half_separation", p[2])?,
            })
        }
        other => Err(raw.err(
            Some(entry.line),
            Some(&entry.key),
            format!(
                "`{other}`: potential must be harmonic:<omega_q> or \
                 doublewell:<barrier>:<half_separation>"
            ),
        )),
    }
}

impl RunConfig {
    /// Load and fully validate a config file; `seed_override` comes from
    /// the --seed flag.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_owned(),
            line: None,
            key: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::from_text(path, &text, seed_override)
    }

    pub fn from_text(
        path: &Path,
        text: &str,
        seed_override: Option<u64>,
    ) -> Result<Self, ConfigError> {
        let raw = RawConfig::parse(path, text)?;
        let mut key_lines = HashMap::new();
        let mut record = |key: &'static str, line: usize| {
            key_lines.insert(key, line);
        };

        let scenario = match raw.scalar("scenario")? {
            Some(e) => e.value.clone(),
            None => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into()),
        };

        macro_rules! req {
            ($key:literal, $ty:ty, $what:literal) => {{
                let (v, line): ($ty, usize) = raw.required($key, $what)?;
                record($key, line);
                v
            }};
        }
        macro_rules! opt {
            ($key:literal, $ty:ty, $what:literal) => {{
                match raw.optional::<$ty>($key, $what)? {
                    Some((v, line)) => {
                        record($key, line);
                        Some(v)
                    }
                    None => None,
                }
            }};
        }

        let hbar = opt!("hbar", f64, "a real number").unwrap_or(1.0);
        let mass_q = req!("mass_q", f64, "a real number");
        let mass_cl = req!("mass_cl", f64, "a real number");
        let omega_c = req!("omega_c", f64, "a real number");
        let lambda = req!("lambda", f64, "a real number");
        let potential_entry = raw
            .scalar("potential")?
            .ok_or_else(|| raw.err(None, Some("potential"), "missing required key"))?;
        record("potential", potential_entry.line);
        let potential = parse_potential(&raw, potential_entry)?;

        let grid_min = req!("grid_min", f64, "a real number");
        let grid_max = req!("grid_max", f64, "a real number");
        let grid_points = req!("grid_points", usize, "a positive integer");
        let dt = req!("dt", f64, "a real number");
        let steps = req!("steps", u64, "a non-negative integer");
        let output_stride = req!("output_stride", u64, "a positive integer");
        let steps_intermediate = opt!("steps_intermediate", u64, "a non-negative integer");
        let replicas = req!("replicas", usize, "a positive integer");
        let control_replicas =
            opt!("control_replicas", usize, "a positive integer").unwrap_or(replicas);
        let seed_cfg = req!("seed", u64, "an unsigned 64-bit integer");
        let seed = seed_override.unwrap_or(seed_cfg);
        let seed_alt =
            opt!("seed_alt", u64, "an unsigned 64-bit integer").unwrap_or(seed.wrapping_add(1));
        let resample_seed = opt!("resample_seed", u64, "an unsigned 64-bit integer")
            .unwrap_or(seed.wrapping_add(2));
        let eps_node = opt!("eps_node", f64, "a real number").unwrap_or(1e-6);
        let grid_c_min = opt!("grid_c_min", f64, "a real number");
        let grid_c_max = opt!("grid_c_max", f64, "a real number");
        let grid_c_points = opt!("grid_c_points", usize, "a positive integer");
        let width_scale = opt!("width_scale", f64, "a real number").unwrap_or(1.0);
        let tolerance = opt!("tolerance", f64, "a real number").unwrap_or(0.05);
        let dump_wavefunctions =
            opt!("dump_wavefunctions", usize, "a non-negative integer").unwrap_or(4);

        let mut components = Vec::new();
        let mut components_alt = Vec::new();
        for e in &raw.entries {
            if e.key == "component" {
                components.push(parse_component(&raw, e)?);
            } else if e.key == "component_alt" {
                components_alt.push(parse_component(&raw, e)?);
            }
        }
        if components.is_empty() {
            return Err(raw.err(
                None,
                Some("component"),
                "missing: at least one mixture component is required",
            ));
        }

        if steps == 0 {
            let line = key_lines.get("steps").copied();
            return Err(raw.err(line, Some("steps"), "at least one step required"));
        }
        if output_stride == 0 || steps % output_stride != 0 {
            let line = key_lines.get("output_stride").copied();
            return Err(raw.err(
                line,
                Some("output_stride"),
                format!("must be positive and divide steps = {steps}"),
            ));
        }
        if replicas < 2 {
            let line = key_lines.get("replicas").copied();
            return Err(raw.err(line, Some("replicas"), "at least 2 replicas required"));
        }
        if control_replicas < 2 {
            let line = key_lines.get("control_replicas").copied();
            return Err(raw.err(
                line,
                Some("control_replicas"),
                "at least 2 replicas required",
            ));
        }

        let cfg = Self {
            scenario,
            hbar,
            mass_q,
            mass_cl,
            omega_c,
            lambda,
            potential,
            grid_min,
            grid_max,
            grid_points,
            dt,
            steps,
            output_stride,
            steps_intermediate,
            replicas,
            control_replicas,
            seed,
            seed_alt,
            resample_seed,
            eps_node,
            components,
            components_alt,
            grid_c_min,
            grid_c_max,
            grid_c_points,
            width_scale,
            tolerance,
            dump_wavefunctions,
            key_lines,
            path: path.to_owned(),
        };
        // Building the physics objects performs the deep validation (grid
        // sanity, model parameter ranges, aliasing timestep bound, packet
        // support); failures surface here with key attribution.
        let model = cfg.build_model()?;
        let grid = cfg.build_grid()?;
        StepContext::new(grid.clone(), &model, cfg.dt)
            .map_err(|e| cfg.attributed("dt", &e.to_string()))?;
        cfg.build_mixture(&cfg.components, &grid, &model)?;
        if !cfg.components_alt.is_empty() {
            cfg.build_alt_mixture(&grid, &model)?;
        }
        Ok(cfg)
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.key_lines.get(key).copied()
    }

    /// A validation error attributed to the config key that caused it.
    pub fn attributed(&self, key: &'static str, message: &str) -> ConfigError {
        ConfigError {
            path: self.path.clone(),
            line: self.line_of(key),
            key: Some(key.to_owned()),
            message: message.to_owned(),
        }
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>, ConfigError> {
        Grid::new(self.grid_min, self.grid_max, self.grid_points)
            .map(Arc::new)
            .map_err(|e| self.attributed("grid_points", &e.to_string()))
    }

    /// The heavy-sector grid for the exact two-coordinate reference.
    pub fn build_grid_c(&self) -> Result<Arc<Grid>, ConfigError> {
        let (min, max, n) = match (self.grid_c_min, self.grid_c_max, self.grid_c_points) {
            (Some(a), Some(b), Some(n)) => (a, b, n),
            _ => {
                return Err(self.attributed(
                    "grid_c_points",
                    "grid_c_min, grid_c_max, and grid_c_points are required by exact-compare",
                ))
            }
        };
        Grid::new(min, max, n)
            .map(Arc::new)
            .map_err(|e| self.attributed("grid_c_points", &e.to_string()))
    }

    pub fn build_model(&self) -> Result<Model, ConfigError> {
        let potential = match self.potential {
            PotentialSpec::Harmonic { omega_q } => QuantumPotential::Harmonic { omega: omega_q },
            PotentialSpec::DoubleWell {
                barrier,
                half_separation,
            } => QuantumPotential::DoubleWell {
                barrier,
                half_separation,
            },
        };
        Model::new(
            self.hbar,
            self.mass_q,
            potential,
            self.mass_cl,
            self.omega_c,
            self.lambda,
        )
        .map_err(|e| {
            // Core parameter names map onto config keys.
            let key = match &e {
                qcbohm_core::error::CoreError::BadParameter { name, .. } => match *name {
                    "hbar" => "hbar",
                    "m" => "mass_q",
                    "m_cl" => "mass_cl",
                    "omega_c" => "omega_c",
                    "lambda" => "lambda",
                    _ => "potential",
                },
                _ => "potential",
            };
            self.attributed(key, &e.to_string())
        })
    }

    fn build_psi(
        &self,
        spec: &PsiSpec,
        grid: &Arc<Grid>,
        model: &Model,
    ) -> Result<WaveFunction, qcbohm_core::error::CoreError> {
        match *spec {
            PsiSpec::Gaussian { x0, sigma, k0 } => {
                WaveFunction::gaussian(grid.clone(), x0, sigma, k0)
            }
            PsiSpec::Eigen { n } => WaveFunction::eigenstate(grid.clone(), model, n),
            PsiSpec::Super { c0, n0, c1, n1 } => {
                let a = WaveFunction::eigenstate(grid.clone(), model, n0)?;
                let b = WaveFunction::eigenstate(grid.clone(), model, n1)?;
                WaveFunction::superposition(&[(C64::new(c0, 0.0), &a), (C64::new(c1, 0.0), &b)])
            }
        }
    }

    /// Realize the primary component specs as an initial mixture.
    pub fn build_mixture(
        &self,
        specs: &[ComponentSpec],
        grid: &Arc<Grid>,
        model: &Model,
    ) -> Result<InitialMixture, ConfigError> {
        self.build_mixture_keyed(specs, grid, model, "component")
    }

    /// Realize the `component_alt` mixture (rho-test second preparation).
    pub fn build_alt_mixture(
        &self,
        grid: &Arc<Grid>,
        model: &Model,
    ) -> Result<InitialMixture, ConfigError> {
        self.build_mixture_keyed(&self.components_alt, grid, model, "component_alt")
    }

    fn build_mixture_keyed(
        &self,
        specs: &[ComponentSpec],
        grid: &Arc<Grid>,
        model: &Model,
        key: &'static str,
    ) -> Result<InitialMixture, ConfigError> {
        let mut parts = Vec::with_capacity(specs.len());
        for spec in specs {
            let psi = self.build_psi(&spec.psi, grid, model).map_err(|e| ConfigError {
                path: self.path.clone(),
                line: Some(spec.line),
                key: Some(key.to_owned()),
                message: e.to_string(),
            })?;
            let classical = match spec.classical {
                ClassicalSpec::Point { x, k } => ClassicalInit::Point { x, k },
                ClassicalSpec::Gauss {
                    mean_x,
                    std_x,
                    mean_k,
                    std_k,
                } => ClassicalInit::Gaussian {
                    mean_x,
                    std_x,
                    mean_k,
                    std_k,
                },
            };
            parts.push(MixtureComponent {
                weight: spec.weight,
                classical,
                psi,
            });
        }
        InitialMixture::new(parts).map_err(|e| ConfigError {
            path: self.path.clone(),
            line: specs.first().map(|s| s.line),
            key: Some(key.to_owned()),
            message: e.to_string(),
        })
    }

    /// Fails with a field-named error when a key required by the given
    /// subcommand is absent.
    pub fn require_intermediate(&self) -> Result<u64, ConfigError> {
        match self.steps_intermediate {
            Some(t1) if t1 > 0 && t1 < self.steps => Ok(t1),
            Some(t1) => Err(self.attributed(
                "steps_intermediate",
                &format!("must lie strictly between 0 and steps = {} (got {t1})", self.steps),
            )),
            None => Err(self.attributed(
                "steps_intermediate",
                "missing: required by the composability subcommand",
            )),
        }
    }

    pub fn require_alt_mixture(&self) -> Result<(), ConfigError> {
        if self.components_alt.is_empty() {
            return Err(ConfigError {
                path: self.path.clone(),
                line: None,
                key: Some("component_alt".into()),
                message: "missing: the rho-test subcommand needs a second mixture".into(),
            });
        }
        Ok(())
    }
}
