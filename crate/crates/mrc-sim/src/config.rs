//! Plain-text run configuration, sequence files, and the JSON run manifest.
//!
//! A config file is flat `key = value` text with `#` comments. A sequence
//! file is an ordered list of stanzas, each opened by a `stage = ...` line
//! and followed by that stage's keys. Both parsers are strict: unknown or
//! duplicate keys are errors, and a missing required key is reported by
//! name.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::protocol::{Sequence, Stage};
use crate::pulse::HsPulse;
use crate::units::{CondensateParams, DerivedScales, NonlinearityModel, PhysicalConstants};

/// Everything a run needs that is not part of the sequence itself:
/// condensate parameters, field constants, grid policy, and time steps.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: CondensateParams,
    pub constants: PhysicalConstants,
    /// Requested grid resolution, points per healing length.
    pub grid_points_per_xi: f64,
    /// Requested domain half-width as a multiple of the cloud radius.
    pub grid_padding: f64,
    /// Fine time step used while coupling fields are on (s).
    pub dt_pulse_s: f64,
    /// Coarse time step used during free evolution (s).
    pub dt_free_s: f64,
}

const REQUIRED_KEYS: [&str; 7] = [
    "atoms",
    "f_z_hz",
    "f_r_hz",
    "scattering_length_nm",
    "gamma_mhz_per_gauss",
    "grid_points_per_xi",
    "grid_padding",
];

const OPTIONAL_KEYS: [&str; 3] = ["dt_pulse_ns", "dt_free_us", "nonlinearity"];

/// Split one line of `key = value` text; `#` starts a comment.
/// Returns `None` for blank/comment-only lines.
fn split_key_value(line: &str, line_no: usize) -> Result<Option<(String, String)>> {
    let bare = match line.find('#') {
        Some(idx) => &line[..idx],
        None => line,
    };
    let bare = bare.trim();
    if bare.is_empty() {
        return Ok(None);
    }
    let Some(eq) = bare.find('=') else {
        return Err(Error::Config(format!(
            "line {line_no}: expected `key = value`, got {bare:?}"
        )));
    };
    let key = bare[..eq].trim();
    let value = bare[eq + 1..].trim();
    if key.is_empty() || value.is_empty() {
        return Err(Error::Config(format!(
            "line {line_no}: empty key or value in {bare:?}"
        )));
    }
    Ok(Some((key.to_string(), value.to_string())))
}

/// Collect `key = value` lines into a map, rejecting duplicate keys.
fn collect_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if let Some((key, value)) = split_key_value(line, idx + 1)? {
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate config key `{key}`")));
            }
        }
    }
    Ok(map)
}

fn parse_number(key: &str, value: &str) -> Result<f64> {
    let parsed: f64 = value
        .parse()
        .map_err(|_| Error::Config(format!("config key `{key}`: `{value}` is not a number")))?;
    if !parsed.is_finite() {
        return Err(Error::Config(format!("config key `{key}` must be finite, got {value}")));
    }
    Ok(parsed)
}

/// Parse the flat condensate/run configuration.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let mut map = collect_flat(text)?;
    for key in map.keys() {
        if !REQUIRED_KEYS.contains(&key.as_str()) && !OPTIONAL_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
    }
    let mut required = |key: &str| -> Result<f64> {
        let value = map
            .remove(key)
            .ok_or_else(|| Error::Config(format!("missing required config key `{key}`")))?;
        parse_number(key, &value)
    };

    let atoms = required("atoms")?;
    let f_z_hz = required("f_z_hz")?;
    let f_r_hz = required("f_r_hz")?;
    let scattering_length_nm = required("scattering_length_nm")?;
    let gamma_mhz_per_gauss = required("gamma_mhz_per_gauss")?;
    let grid_points_per_xi = required("grid_points_per_xi")?;
    let grid_padding = required("grid_padding")?;

    let dt_pulse_s = match map.remove("dt_pulse_ns") {
        Some(value) => parse_number("dt_pulse_ns", &value)? * 1e-9,
        None => 2e-9,
    };
    let dt_free_s = match map.remove("dt_free_us") {
        Some(value) => parse_number("dt_free_us", &value)? * 1e-6,
        None => 1e-6,
    };
    let nonlinearity = match map.remove("nonlinearity").as_deref() {
        None | Some("effective_1d") => NonlinearityModel::EffectiveOneD,
        Some("plain_cubic") => NonlinearityModel::PlainCubic,
        Some(other) => {
            return Err(Error::Config(format!(
                "config key `nonlinearity`: expected `effective_1d` or `plain_cubic`, got `{other}`"
            )))
        }
    };

    let params = CondensateParams {
        atoms,
        omega_z_rad_s: 2.0 * std::f64::consts::PI * f_z_hz,
        omega_r_rad_s: 2.0 * std::f64::consts::PI * f_r_hz,
        scattering_length_m: scattering_length_nm * 1e-9,
        nonlinearity,
    };
    params.validate()?;
    let constants = PhysicalConstants {
        gamma_rad_per_s_gauss: 2.0 * std::f64::consts::PI * 1e6 * gamma_mhz_per_gauss,
        ..PhysicalConstants::default()
    };
    constants.validate()?;
    if !(dt_pulse_s > 0.0) || !(dt_free_s > 0.0) {
        return Err(Error::Config("time steps must be strictly positive".into()));
    }

    Ok(SimConfig {
        params,
        constants,
        grid_points_per_xi,
        grid_padding,
        dt_pulse_s,
        dt_free_s,
    })
}

/// Read and parse a config file.
pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}

/// One raw stanza of a sequence file: the stage name plus its keys.
struct Stanza {
    stage: String,
    line_no: usize,
    keys: BTreeMap<String, String>,
}

impl Stanza {
    fn take(&mut self, key: &str) -> Result<String> {
        self.keys.remove(key).ok_or_else(|| {
            Error::Config(format!(
                "{} stanza at line {}: missing required key `{key}`",
                self.stage, self.line_no
            ))
        })
    }

    fn take_number(&mut self, key: &str) -> Result<f64> {
        parse_number(key, &self.take(key)?)
    }

    fn take_optional(&mut self, key: &str) -> Option<String> {
        self.keys.remove(key)
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.keys.keys().next() {
            return Err(Error::Config(format!(
                "unknown key `{key}` in {} stanza at line {}",
                self.stage, self.line_no
            )));
        }
        Ok(())
    }
}

fn split_stanzas(text: &str) -> Result<Vec<Stanza>> {
    let mut stanzas: Vec<Stanza> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let Some((key, value)) = split_key_value(line, idx + 1)? else {
            continue;
        };
        if key == "stage" {
            stanzas.push(Stanza {
                stage: value,
                line_no: idx + 1,
                keys: BTreeMap::new(),
            });
            continue;
        }
        let Some(current) = stanzas.last_mut() else {
            return Err(Error::Config(format!(
                "line {}: key `{key}` appears before any `stage = ...` line",
                idx + 1
            )));
        };
        if current.keys.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!(
                "duplicate key `{key}` in {} stanza at line {}",
                current.stage, current.line_no
            )));
        }
    }
    Ok(stanzas)
}

const TWO_PI_KHZ: f64 = 2.0 * std::f64::consts::PI * 1e3;

fn build_pulse_stage(stanza: &mut Stanza) -> Result<Stage> {
    let signed_gradient = stanza.take_number("gradient_g_per_cm")?;
    if signed_gradient == 0.0 {
        return Err(Error::Config("pulse stanza: gradient_g_per_cm must be nonzero".into()));
    }
    let time_reversed = match stanza.take_optional("time_reversed").as_deref() {
        None | Some("false") => false,
        Some("true") => true,
        Some(other) => {
            return Err(Error::Config(format!(
                "pulse stanza: time_reversed must be `true` or `false`, got `{other}`"
            )))
        }
    };
    let pulse = HsPulse {
        omega0_rad_s: stanza.take_number("omega0_khz")? * TWO_PI_KHZ,
        mu: stanza.take_number("mu")?,
        big_gamma: stanza.take_number("gamma_factor")?,
        alpha: stanza.take_number("alpha")?,
        delta1_rad_s: stanza.take_number("delta1_khz")? * TWO_PI_KHZ,
        gradient_sign: signed_gradient.signum(),
        dbdz_g_per_cm: signed_gradient.abs(),
        time_reversed,
    };
    pulse.validate()?;
    Ok(Stage::CoupledPulse {
        pulse,
        gradient_g_per_cm: signed_gradient,
    })
}

fn build_project_stage(stanza: &mut Stanza) -> Result<Stage> {
    let spec = stanza.take("keep")?;
    let mut keep = Vec::new();
    for token in spec.split(',') {
        let token = token.trim();
        let m: i32 = token.parse().map_err(|_| {
            Error::Config(format!("project stanza: `{token}` is not a spin component"))
        })?;
        keep.push(m);
    }
    Ok(Stage::Project { keep })
}

/// Parse an ordered-stanza sequence file into an executable sequence.
pub fn parse_sequence(text: &str, description: &str) -> Result<Sequence> {
    let mut stages = Vec::new();
    for mut stanza in split_stanzas(text)? {
        let stage = match stanza.stage.as_str() {
            "pulse" => build_pulse_stage(&mut stanza)?,
            "wait" => Stage::PhaseWait {
                dphi_rad_s: stanza.take_number("dphi_khz")? * TWO_PI_KHZ,
                t_phi_s: stanza.take_number("t_phi_us")? * 1e-6,
            },
            "free" => Stage::FreeEvolve {
                duration_s: stanza.take_number("duration_ms")? * 1e-3,
            },
            "project" => build_project_stage(&mut stanza)?,
            other => {
                return Err(Error::Config(format!(
                    "line {}: unknown stage `{other}` (expected pulse|wait|free|project)",
                    stanza.line_no
                )))
            }
        };
        stanza.finish()?;
        stages.push(stage);
    }
    let sequence = Sequence {
        stages,
        description: description.to_string(),
    };
    sequence.validate()?;
    Ok(sequence)
}

/// Read and parse a sequence file; the description is the file name.
pub fn load_sequence(path: &Path) -> Result<Sequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_sequence(&text, &path.display().to_string())
}

/// All resolved run parameters in SI units, as recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub atoms: f64,
    pub f_z_hz: f64,
    pub f_r_hz: f64,
    pub scattering_length_m: f64,
    pub gamma_rad_per_s_gauss: f64,
    pub nonlinearity: String,
    pub grid_points: usize,
    pub z_min_m: f64,
    pub dz_m: f64,
    pub dt_pulse_s: f64,
    pub dt_free_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_m_per_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_xi_s: Option<f64>,
    pub z_tf_m: f64,
    pub mu_chem_j: f64,
}

impl ResolvedParams {
    pub fn new(config: &SimConfig, grid: &Grid, scales: &DerivedScales) -> Self {
        ResolvedParams {
            atoms: config.params.atoms,
            f_z_hz: config.params.omega_z_rad_s / (2.0 * std::f64::consts::PI),
            f_r_hz: config.params.omega_r_rad_s / (2.0 * std::f64::consts::PI),
            scattering_length_m: config.params.scattering_length_m,
            gamma_rad_per_s_gauss: config.constants.gamma_rad_per_s_gauss,
            nonlinearity: match config.params.nonlinearity {
                NonlinearityModel::EffectiveOneD => "effective_1d".to_string(),
                NonlinearityModel::PlainCubic => "plain_cubic".to_string(),
            },
            grid_points: grid.num_points,
            z_min_m: grid.z_min_m,
            dz_m: grid.dz_m,
            dt_pulse_s: config.dt_pulse_s,
            dt_free_s: config.dt_free_s,
            xi_m: scales.xi_m,
            c_m_per_s: scales.c_m_per_s,
            t_xi_s: scales.t_xi_s,
            z_tf_m: scales.z_tf_m,
            mu_chem_j: scales.mu_chem_j,
        }
    }
}

/// Record of one completed run: inputs, resolved parameters, timing, and
/// SHA-256 checksums of every output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub command: String,
    pub config_path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequence_path: Option<String>,
    pub resolved: ResolvedParams,
    pub wall_time_s: f64,
    /// Output file name → SHA-256 hex digest.
    pub output_sha256: BTreeMap<String, String>,
}

/// SHA-256 of a file, as lowercase hex.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let tag = || path.display().to_string();
    let mut file = fs::File::open(path).map_err(|e| Error::io(tag(), e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(tag(), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}

impl RunManifest {
    /// Serialize to pretty JSON at `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Parse a manifest back from JSON text.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bad manifest JSON: {e}")))
    }
}
