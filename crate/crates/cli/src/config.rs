//! Run configuration: a TOML file with sections, `section.key=value`
//! overrides, and an output-root environment variable.

use peps_kernel::basis::{Momentum, SupportGeometry};
use peps_kernel::models::beta_c;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable prepended to relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "PEPS_KERNEL_OUTPUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("bad override '{0}': expected section.key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Ising,
    Aklt,
    Rvb,
    /// A PEPS container file written by this tool.
    File,
}

/// Inverse temperature, numeric or `"critical"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Beta {
    Value(f64),
    Named(String),
}

impl Beta {
    pub fn value(&self) -> Result<f64, ConfigError> {
        match self {
            Beta::Value(b) => Ok(*b),
            Beta::Named(s) if s == "critical" => Ok(beta_c()),
            Beta::Named(s) => Err(ConfigError::Invalid(format!(
                "beta '{s}' is neither a number nor \"critical\""
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: ModelName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Beta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Oracle,
    Genfunc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torus: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_tol: Option<f64>,
    #[serde(default)]
    pub cold_check: bool,
    /// Directory for resumable generating-function rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisName {
    Site,
    Pair,
    VerticalPair,
    Plaquette,
    /// 39 SU(2)-invariant plaquette operators (spin-1/2 only).
    #[serde(rename = "su2-39")]
    Su2Plaquette,
}

impl BasisName {
    pub fn geometry(&self, d: usize) -> SupportGeometry {
        match self {
            BasisName::Site => SupportGeometry::site(d),
            BasisName::Pair => SupportGeometry::pair(d),
            BasisName::VerticalPair => SupportGeometry::vertical_pair(d),
            BasisName::Plaquette | BasisName::Su2Plaquette => SupportGeometry::plaquette(d),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub geometry: BasisName,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentumConfig {
    pub n: usize,
    pub m: usize,
    pub lx: usize,
    pub ly: usize,
}

impl Default for MomentumConfig {
    fn default() -> Self {
        Self {
            n: 0,
            m: 0,
            lx: 1,
            ly: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeflationConfig {
    #[serde(default = "yes")]
    pub trivial: bool,
    /// Project out solutions of smaller supports embedded into this one.
    #[serde(default = "yes")]
    pub embedded: bool,
}

fn yes() -> bool {
    true
}

impl Default for DeflationConfig {
    fn default() -> Self {
        Self {
            trivial: true,
            embedded: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_solutions")]
    pub solutions: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_solutions() -> usize {
    4
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            solutions: default_solutions(),
        }
    }
}

/// Fully resolved run description; embedded verbatim in every output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub backend: BackendConfig,
    pub basis: BasisConfig,
    #[serde(default)]
    pub momentum: MomentumConfig,
    #[serde(default)]
    pub deflation: DeflationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parse TOML text, apply overrides, then validate.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; the output root variable is applied to a relative output directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        if let Ok(root) = std::env::var(OUTPUT_ROOT_VAR) {
            if cfg.output.dir.is_relative() && !root.is_empty() {
                cfg.output.dir = Path::new(&root).join(&cfg.output.dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        match self.model.name {
            ModelName::Ising => match &self.model.beta {
                None => return bad("model 'ising' needs beta".into()),
                Some(b) => {
                    let v = b.value()?;
                    if !(v.is_finite() && v >= 0.0) {
                        return bad(format!("beta {v} must be finite and non-negative"));
                    }
                }
            },
            ModelName::File if self.model.path.is_none() => {
                return bad("model 'file' needs path".into())
            }
            _ => {}
        }
        let b = &self.backend;
        match b.kind {
            BackendKind::Oracle => match b.torus {
                None => return bad("oracle backend needs torus = [lx, ly]".into()),
                Some([lx, ly]) if lx == 0 || ly == 0 => {
                    return bad("torus extents must be positive".into())
                }
                Some([lx, ly]) if !self.momentum()?.fits_torus(lx, ly) => {
                    return bad(format!(
                        "momentum {} does not fit a {lx}x{ly} torus",
                        self.momentum()?.label()
                    ))
                }
                _ => {}
            },
            BackendKind::Genfunc => {
                match b.chi {
                    None => return bad("genfunc backend needs chi".into()),
                    Some(0) => return bad("chi must be positive".into()),
                    _ => {}
                }
                match b.delta {
                    None => return bad("genfunc backend needs delta".into()),
                    Some(d) if !(d > 0.0 && d <= 0.5) => {
                        return bad(format!("delta {d} outside (0, 0.5]"))
                    }
                    _ => {}
                }
                self.momentum()?;
            }
        }
        for (name, v) in [("tol", b.tol), ("m_tol", b.m_tol)] {
            if v.is_some_and(|t| t.is_nan() || t <= 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if b.max_iter == Some(0) {
            return bad("max_iter must be positive".into());
        }
        if self.basis.geometry == BasisName::Su2Plaquette
            && matches!(self.model.name, ModelName::Aklt)
        {
            return bad("su2-39 basis needs a spin-1/2 model".into());
        }
        Ok(())
    }

    pub fn momentum(&self) -> Result<Momentum, ConfigError> {
        let m = self.momentum;
        Momentum::new(m.n, m.m, m.lx, m.ly).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Set `section.key` in `table` from `section.key=value`; the value is read as
/// a TOML literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.into()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() != 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(assignment.into()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let section = table
        .entry(keys[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| ConfigError::Override(assignment.into()))?;
    section.insert(keys[1].to_string(), value);
    Ok(())
}
