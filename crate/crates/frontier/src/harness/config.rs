//! Run configuration: one TOML file, dotted-path overrides, a canonical
//! serialized form, and a SHA-256 content hash used as run provenance.
//!
//! Canonicalization invariant: serialize(parse(serialize(cfg))) is
//! byte-identical. The TOML map is key-sorted, so canonical form falls out of
//! round-tripping the config through `toml::Value`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::TrainConfig;
use crate::boxworld::{EnvConfig, RewardMode};
use crate::diagnostics::BandSpec;
use crate::oracle::{GaussianBump, UncertaintyField};
use crate::shaping::{ShapingConfig, SkewGenerator};
use crate::{Error, Result};

/// Uncertainty-field section: the bump list fully determines the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSpec {
    pub dim: usize,
    pub bumps: Vec<GaussianBump>,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            bumps: vec![GaussianBump {
                amplitude: 1.0,
                center: vec![0.5, 0.5],
                sigma: 0.15,
            }],
        }
    }
}

impl FieldSpec {
    pub fn build(&self) -> Result<UncertaintyField> {
        UncertaintyField::new(self.dim, self.bumps.clone())
    }
}

/// Shaping section. `w_upper` spells out the strict upper triangle of W
/// row-major; when empty, the standard 2-D generator with the given
/// orientation is used. `w_tamper` adds a symmetric defect to W and exists
/// only so the verification suite can be shown to catch a non-skew W.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingSpec {
    pub u_mid: f64,
    pub w_orientation: i8,
    pub w_upper: Vec<f64>,
    pub w_tamper: f64,
    pub c_grad: f64,
    pub c_rot: f64,
    pub lambda_unsafe: f64,
    pub eps_unsafe: f64,
}

impl Default for ShapingSpec {
    fn default() -> Self {
        Self {
            u_mid: 0.5,
            w_orientation: 1,
            w_upper: Vec::new(),
            w_tamper: 0.0,
            c_grad: 1.0,
            c_rot: 1.0,
            lambda_unsafe: 100.0,
            eps_unsafe: 0.1,
        }
    }
}

impl ShapingSpec {
    pub fn build(&self, dim: usize) -> Result<ShapingConfig> {
        let w = if self.w_upper.is_empty() {
            if dim != 2 {
                return Err(Error::InvalidConfig(format!(
                    "shaping.w_upper must be given explicitly for dim {dim}; \
                     only dim 2 has a default generator"
                )));
            }
            SkewGenerator::standard_2d(self.w_orientation)?
        } else {
            SkewGenerator::from_upper(dim, &self.w_upper)?
        };
        let w = if self.w_tamper != 0.0 {
            w.tampered(self.w_tamper)
        } else {
            w
        };
        ShapingConfig::new(
            self.u_mid,
            w,
            self.c_grad,
            self.c_rot,
            self.lambda_unsafe,
            self.eps_unsafe,
        )
    }
}

/// Diagnostics / evaluation section. Zero means "derive the default":
/// `delta_band` falls back to 0.1 x max amplitude, `concentration_eps` to the
/// band half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagSpec {
    pub delta_band: f64,
    pub concentration_eps: f64,
    pub grid_resolution: usize,
    pub eval_episodes: usize,
    pub eval_seed_offset: u64,
    pub reference_episodes: usize,
    pub curvature_samples: usize,
    pub trajectory_episodes: usize,
}

impl Default for DiagSpec {
    fn default() -> Self {
        Self {
            delta_band: 0.0,
            concentration_eps: 0.0,
            grid_resolution: 50,
            eval_episodes: 40,
            eval_seed_offset: 10_000,
            reference_episodes: 10,
            curvature_samples: 20_000,
            trajectory_episodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub reward_mode: RewardMode,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub env: EnvConfig,
    pub field: FieldSpec,
    pub shaping: ShapingSpec,
    pub train: TrainConfig,
    pub diagnostics: DiagSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: "run".into(),
            reward_mode: RewardMode::Vf,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: "runs".into(),
            env: EnvConfig::default(),
            field: FieldSpec::default(),
            shaping: ShapingSpec::default(),
            train: TrainConfig::default(),
            diagnostics: DiagSpec::default(),
        }
    }
}

impl RunConfig {
    /// Full validation for training runs; requires at least one bump so that
    /// bands and diagnostics are well defined.
    pub fn validate(&self) -> Result<()> {
        self.validate_inner(true)
    }

    /// Verification accepts bumpless fields (gradient checks become vacuous).
    pub fn validate_lenient(&self) -> Result<()> {
        self.validate_inner(false)
    }

    fn validate_inner(&self, require_bumps: bool) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be nonempty".into()));
        }
        if self.experiment.is_empty()
            || !self
                .experiment
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::InvalidConfig(format!(
                "experiment name {:?} must be nonempty and use only [A-Za-z0-9_-] \
                 (it names the run directory)",
                self.experiment
            )));
        }
        self.env.validate()?;
        self.train.validate()?;
        if require_bumps && self.field.bumps.is_empty() {
            return Err(Error::InvalidConfig(
                "field.bumps must be nonempty for a training run".into(),
            ));
        }
        let field = self.field.build()?;
        let shaping = self.shaping.build(self.field.dim)?;
        let d = &self.diagnostics;
        for (name, v) in [
            ("delta_band", d.delta_band),
            ("concentration_eps", d.concentration_eps),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "diagnostics.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if d.grid_resolution < 2 {
            return Err(Error::InvalidConfig(
                "diagnostics.grid_resolution must be >= 2".into(),
            ));
        }
        if d.curvature_samples == 0 {
            return Err(Error::InvalidConfig(
                "diagnostics.curvature_samples must be >= 1".into(),
            ));
        }
        if require_bumps {
            // Band derivation must succeed up front, not after training.
            self.band_for(&field, &shaping)?;
        }
        Ok(())
    }

    pub fn build_field(&self) -> Result<UncertaintyField> {
        self.field.build()
    }

    pub fn build_shaping(&self) -> Result<ShapingConfig> {
        self.shaping.build(self.field.dim)
    }

    pub fn band_for(
        &self,
        field: &UncertaintyField,
        shaping: &ShapingConfig,
    ) -> Result<BandSpec> {
        let delta = if self.diagnostics.delta_band > 0.0 {
            Some(self.diagnostics.delta_band)
        } else {
            None
        };
        BandSpec::from_shaping(shaping, field, delta)
    }

    /// eps for the concentration bound; defaults to the band half-width.
    pub fn concentration_eps(&self, band: &BandSpec) -> f64 {
        if self.diagnostics.concentration_eps > 0.0 {
            self.diagnostics.concentration_eps
        } else {
            band.delta_band
        }
    }
}

/// Canonical text form: key-sorted TOML of the fully materialized config
/// (defaults included), so equal configs hash equally no matter how sparsely
/// they were written.
pub fn canonical_toml(cfg: &RunConfig) -> Result<String> {
    let value = toml::Value::try_from(cfg)?;
    Ok(toml::to_string(&value)?)
}

pub fn config_hash(canonical: &str) -> String {
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    hex::encode(h.finalize())
}

/// Short prefix used in directory names; the full hash is in every file.
pub fn short_hash(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Parse an override value with TOML scalar syntax; anything that does not
/// parse is taken as a bare string, so `--set reward_mode=baseline` works
/// without inner quotes.
pub fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set `path` (dotted) to `val`, creating intermediate tables. Fails when a
/// path segment lands on a non-table value.
pub fn set_path(root: &mut toml::Value, path: &str, val: toml::Value) -> Result<()> {
    let segs: Vec<&str> = path.split('.').collect();
    if segs.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidConfig(format!(
            "override path {path:?} has an empty segment"
        )));
    }
    let mut cur = root;
    for seg in &segs[..segs.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| {
            Error::InvalidConfig(format!(
                "override path {path:?}: {seg:?} is not inside a table"
            ))
        })?;
        if !table.contains_key(*seg) {
            table.insert(seg.to_string(), toml::Value::Table(toml::Table::new()));
        }
        cur = table.get_mut(*seg).expect("just inserted");
    }
    let table = cur.as_table_mut().ok_or_else(|| {
        Error::InvalidConfig(format!(
            "override path {path:?}: final segment is not inside a table"
        ))
    })?;
    table.insert(segs[segs.len() - 1].to_string(), val);
    Ok(())
}

/// Apply `--set path=value` pairs in order.
pub fn apply_overrides(root: &mut toml::Value, sets: &[String]) -> Result<()> {
    for s in sets {
        let (path, raw) = s.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!(
                "override {s:?} must have the form path.to.key=value"
            ))
        })?;
        set_path(root, path.trim(), parse_override_value(raw.trim()))?;
    }
    Ok(())
}

/// True when `path` resolves to a scalar (not a table or array) in `root`.
pub fn path_is_scalar(root: &toml::Value, path: &str) -> bool {
    let mut cur = root;
    for seg in path.split('.') {
        match cur.as_table().and_then(|t| t.get(seg)) {
            Some(v) => cur = v,
            None => return false,
        }
    }
    !matches!(cur, toml::Value::Table(_) | toml::Value::Array(_))
}

/// Read a config file, apply overrides, and return the typed config together
/// with its canonical form and hash.
pub fn load_config(path: &Path, sets: &[String]) -> Result<(RunConfig, String, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::InvalidInput(format!("cannot read config {}: {e}", path.display()))
    })?;
    let mut value: toml::Value = toml::from_str(&text)?;
    apply_overrides(&mut value, sets)?;
    let cfg: RunConfig = value.try_into()?;
    let canonical = canonical_toml(&cfg)?;
    let hash = config_hash(&canonical);
    Ok((cfg, canonical, hash))
}
