//! Run configuration: one JSON document describing a complete run.
//!
//! The document deserializes into [`RunConfig`], whose nested sections map
//! one-to-one onto the library types (model parameters, time grid, initial
//! state, optional shot noise, optional sweep). A `--set key=value`
//! mechanism patches individual fields with dotted paths before parsing, so
//! scripts can scan parameters without generating whole files. The resolved
//! configuration can be re-serialized as a canonical echo; feeding the echo
//! back reproduces the run exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{
    EvolveOptions, Frame, InitialCondition, Integrator, PrepMode, QubitTarget, TimeGrid,
    RK4_SAFETY_DEFAULT, SPLIT_SUBSTEP_DEFAULT,
};
use crate::hilbert::{ModelParams, MotionalState};
use crate::noise::ShotConfig;
use crate::sweep::AxisSpec;
use crate::{Error, Result};

/// Initial-state section: a named qubit target or explicit Bloch angles,
/// plus an optional per-mode motional preparation.
///
/// Exactly one of `qubit_state` and the (`theta`, `phi`) pair may be given;
/// with neither, the pair along x is used (the experimental default). When
/// `motional` is omitted, each mode starts in the thermal state at its
/// configured n̄.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubit_state: Option<QubitTarget>,
    /// Polar Bloch angle in radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Azimuthal Bloch angle in radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// One motional state per mode; defaults to thermal(n̄) from the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motional: Option<Vec<MotionalState>>,
    /// Ideal state write-down or carrier π/2-pulse preparation.
    #[serde(default)]
    pub preparation: PrepMode,
}

impl InitialSpec {
    /// Resolve to Bloch angles, checking mutual exclusion.
    fn angles(&self) -> Result<(f64, f64)> {
        match (self.qubit_state, self.theta, self.phi) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => Err(Error::Config(
                "initial: give either qubit_state or explicit theta/phi, not both".into(),
            )),
            // For a named target the pulse route and the ideal write-down
            // agree exactly (checked in dynamics), so both map to the
            // target's Bloch angles here.
            (Some(target), None, None) => Ok(target.angles()),
            (None, Some(theta), Some(phi)) => {
                if self.preparation == PrepMode::Pulse {
                    return Err(Error::Config(
                        "initial: pulse preparation needs a named qubit_state, \
                         not raw Bloch angles"
                            .into(),
                    ));
                }
                Ok((theta, phi))
            }
            (None, None, None) => Ok(QubitTarget::PlusX.angles()),
            (None, _, _) => Err(Error::Config(
                "initial: theta and phi must be given together".into(),
            )),
        }
    }

    /// Build the first member of the evolved pair; the second is its
    /// antipode.
    pub fn resolve(&self, params: &ModelParams) -> Result<InitialCondition> {
        let (theta, phi) = self.angles()?;
        let motion = match &self.motional {
            Some(m) => {
                if m.len() != params.modes.len() {
                    return Err(Error::Config(format!(
                        "initial.motional: {} states for {} modes",
                        m.len(),
                        params.modes.len()
                    )));
                }
                m.clone()
            }
            None => params.thermal_motion(),
        };
        let init = InitialCondition { theta, phi, motion };
        init.validate(params)?;
        Ok(init)
    }
}

/// Integrator section of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default)]
    pub method: Integrator,
    /// Safety factor on the RK4 spectral step rule.
    #[serde(default = "default_rk4_safety")]
    pub rk4_safety: f64,
    /// Split-step substep target in μs.
    #[serde(default = "default_split_substep")]
    pub split_substep: f64,
    /// Run the eigenvalue-floor positivity check at every sample.
    #[serde(default)]
    pub check_positivity: bool,
}

fn default_rk4_safety() -> f64 {
    RK4_SAFETY_DEFAULT
}

fn default_split_substep() -> f64 {
    SPLIT_SUBSTEP_DEFAULT
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Integrator::Auto,
            rk4_safety: default_rk4_safety(),
            split_substep: default_split_substep(),
            check_positivity: false,
        }
    }
}

impl IntegratorConfig {
    /// Evolution options for one branch (branch choice is set per run).
    pub fn options(&self) -> EvolveOptions {
        EvolveOptions {
            integrator: self.method,
            rk4_safety: self.rk4_safety,
            split_substep: self.split_substep,
            check_positivity: self.check_positivity,
            ..EvolveOptions::default()
        }
    }
}

/// Which sweep the `sweep` subcommand runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// NM versus Ω at fixed δ.
    Omega,
    /// The (δ, Ω) plane with ridge extraction.
    Circle,
    /// NM versus evolution window.
    Window,
    /// NM versus time-grid resolution.
    Resolution,
    /// Noisy NM versus shot count.
    Repetitions,
    /// NM versus the first branch's dephasing rate.
    Dephasing,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Omega => "omega",
            SweepKind::Circle => "circle",
            SweepKind::Window => "window",
            SweepKind::Resolution => "resolution",
            SweepKind::Repetitions => "repetitions",
            SweepKind::Dephasing => "dephasing",
        }
    }
}

/// Sweep section: the kind plus its axes (empty ⇒ the kind's defaults).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    #[serde(default)]
    pub axes: Vec<AxisSpec>,
}

/// State-pair maximization grid (θ × φ cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaximizeConfig {
    pub n_theta: usize,
    pub n_phi: usize,
}

/// Data-file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// The complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: TimeGrid,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub frame: Frame,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    /// Finite-shot tomography emulation; omitted ⇒ exact expectations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<ShotConfig>,
    /// Required by the `sweep` subcommand, ignored by the others.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// Maximize NM over initial pairs instead of the configured pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maximize: Option<MaximizeConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

impl RunConfig {
    /// Parse a JSON document, mapping serde diagnostics (which name the
    /// offending field) onto the config error class.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Cross-field checks beyond what serde can express.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.grid.validate()?;
        if let Some(s) = &self.shots {
            s.validate()?;
        }
        if self.maximize.is_some() && self.shots.is_some() {
            return Err(Error::Config(
                "config: maximize and shots are mutually exclusive".into(),
            ));
        }
        if let Some(m) = &self.maximize {
            if m.n_theta == 0 || m.n_phi == 0 {
                return Err(Error::Config(
                    "config: maximize.n_theta and maximize.n_phi must be ≥ 1".into(),
                ));
            }
        }
        if let Some(sw) = &self.sweep {
            for axis in &sw.axes {
                axis.validate()?;
            }
            let max_axes = match sw.kind {
                SweepKind::Circle => 2,
                _ => 1,
            };
            if sw.axes.len() > max_axes {
                return Err(Error::Config(format!(
                    "config: sweep kind {} takes at most {} axis(es), got {}",
                    sw.kind.as_str(),
                    max_axes,
                    sw.axes.len()
                )));
            }
        }
        // The angle/motional combination is checked in `InitialSpec::resolve`,
        // which needs the mode list; do it here so `validate` is complete.
        self.initial.resolve(&self.model)?;
        Ok(())
    }

    /// Canonical pretty-printed echo of this configuration.
    pub fn echo_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("config serialization is infallible");
        text.push('\n');
        text
    }
}

/// Parse one `--set key=value` argument into a dotted path and a JSON value.
///
/// The value is parsed as JSON when possible (numbers, booleans, null,
/// quoted strings, arrays/objects) and falls back to a bare string, so
/// `--set initial.qubit_state=g` works without inner quotes.
pub fn parse_set(arg: &str) -> Result<(String, Value)> {
    let (path, raw) = arg.split_once('=').ok_or_else(|| {
        Error::Config(format!("--set {arg}: expected key=value"))
    })?;
    if path.is_empty() {
        return Err(Error::Config(format!("--set {arg}: empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.to_string(), value))
}

/// Apply one dotted-path override to a JSON document in place.
///
/// Path segments are object keys; decimal segments index into arrays, in
/// either dotted or bracket form (`model.modes.0.fock_dim` and
/// `model.modes[0].fock_dim` are equivalent). Missing intermediate objects
/// are created, so optional sections like `shots` can be introduced entirely
/// from the command line; missing array elements are an error.
pub fn apply_override(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let normalized = path.replace('[', ".").replace(']', "");
    let segments: Vec<&str> = normalized.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!(
            "--set {path}: malformed path (empty segment)"
        )));
    }
    let mut cursor = doc;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if let Ok(index) = seg.parse::<usize>() {
            let arr = cursor.as_array_mut().ok_or_else(|| {
                Error::Config(format!(
                    "--set {path}: segment '{seg}' indexes a non-array"
                ))
            })?;
            let len = arr.len();
            let slot = arr.get_mut(index).ok_or_else(|| {
                Error::Config(format!(
                    "--set {path}: index {index} out of bounds (len {len})"
                ))
            })?;
            if last {
                *slot = value;
                return Ok(());
            }
            cursor = slot;
        } else {
            if !cursor.is_object() {
                return Err(Error::Config(format!(
                    "--set {path}: segment '{seg}' keys into a non-object"
                )));
            }
            let map = cursor.as_object_mut().expect("checked is_object");
            if last {
                map.insert((*seg).to_string(), value);
                return Ok(());
            }
            cursor = map
                .entry((*seg).to_string())
                .or_insert_with(|| Value::Object(Default::default()));
            if cursor.is_null() {
                *cursor = Value::Object(Default::default());
            }
        }
    }
    unreachable!("paths are non-empty");
}

/// Load a config document (file or preset text), apply `--set` overrides,
/// and parse.
pub fn load_config(text: &str, sets: &[String]) -> Result<RunConfig> {
    let mut doc: Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
    for s in sets {
        let (path, value) = parse_set(s)?;
        apply_override(&mut doc, &path, value)?;
    }
    RunConfig::from_value(doc)
}

/// Names of the committed presets, in documentation order.
pub const PRESET_NAMES: [&str; 10] = [
    "fig2", "fig3a", "fig3b", "fig3c", "fig3d", "fig4", "fig5", "figS1", "figS2", "figS3",
];

/// The committed JSON text of a named preset.
pub fn preset_json(name: &str) -> Result<&'static str> {
    Ok(match name {
        "fig2" => include_str!("../presets/fig2.json"),
        "fig3a" => include_str!("../presets/fig3a.json"),
        "fig3b" => include_str!("../presets/fig3b.json"),
        "fig3c" => include_str!("../presets/fig3c.json"),
        "fig3d" => include_str!("../presets/fig3d.json"),
        "fig4" => include_str!("../presets/fig4.json"),
        "fig5" => include_str!("../presets/fig5.json"),
        "figS1" => include_str!("../presets/figS1.json"),
        "figS2" => include_str!("../presets/figS2.json"),
        "figS3" => include_str!("../presets/figS3.json"),
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (available: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}
