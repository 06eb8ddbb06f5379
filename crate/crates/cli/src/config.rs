//! Run configuration: one flat TOML file per run, unknown keys rejected,
//! validated against the library's own invariants before anything executes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use aniso_tik_core::denoise::{Alpha, DenoiseConfig};
use aniso_tik_core::fwi::{AlphaSchedule, FreqBand, FwiConfig};
use aniso_tik_core::grid::Grid2D;
use aniso_tik_core::helmholtz::Pml;
use aniso_tik_core::regularizer::SigmaMode;
use aniso_tik_core::synth::{SynthKind, SynthSpec};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Denoise,
    Fwi,
    Forward,
    Synth,
    Selftest,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Denoise => "denoise",
            Mode::Fwi => "fwi",
            Mode::Forward => "forward",
            Mode::Synth => "synth",
            Mode::Selftest => "selftest",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denoise: Option<DenoiseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwi: Option<FwiSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSection>,
}

/// Regularization weight: a number, or the string `"auto"` for the
/// discrepancy principle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Keyword(String),
}

impl AlphaSpec {
    fn resolve(&self) -> Result<Alpha, CliError> {
        match self {
            AlphaSpec::Value(v) => Ok(Alpha::Value(*v)),
            AlphaSpec::Keyword(s) if s == "auto" => Ok(Alpha::Auto),
            AlphaSpec::Keyword(s) => Err(CliError::config(format!(
                "denoise.alpha: expected a number or \"auto\", found \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaModeSpec {
    Isotropic,
    Fixed,
    Adaptive,
}

fn resolve_sigma_mode(
    spec: &SigmaModeSpec,
    fixed: Option<f64>,
    field: &str,
) -> Result<SigmaMode, CliError> {
    let mode = match spec {
        SigmaModeSpec::Isotropic => SigmaMode::Isotropic,
        SigmaModeSpec::Adaptive => SigmaMode::Adaptive,
        SigmaModeSpec::Fixed => SigmaMode::Fixed(fixed.ok_or_else(|| {
            CliError::config(format!("{field}: sigma_mode = \"fixed\" requires sigma_fixed"))
        })?),
    };
    mode.validate().map_err(CliError::from_validation)?;
    Ok(mode)
}

fn default_outer_iters() -> usize {
    30
}
fn default_tau() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseSection {
    pub input: PathBuf,
    /// Optional clean reference; enables the output SNR metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    pub alpha: AlphaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_norm: Option<f64>,
    #[serde(default = "default_outer_iters")]
    pub outer_iters: usize,
    pub sigma_mode: SigmaModeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_fixed: Option<f64>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

impl DenoiseSection {
    pub fn to_core(&self) -> Result<DenoiseConfig, CliError> {
        let cfg = DenoiseConfig {
            alpha: self.alpha.resolve()?,
            noise_norm: self.noise_norm,
            outer_iters: self.outer_iters,
            sigma_mode: resolve_sigma_mode(&self.sigma_mode, self.sigma_fixed, "denoise")?,
            tau: self.tau,
            beta: self.beta,
        };
        cfg.validate().map_err(CliError::from_validation)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelUnits {
    Velocity,
    SlownessSquared,
}

fn default_units() -> ModelUnits {
    ModelUnits::Velocity
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmlSection {
    #[serde(default = "default_npml")]
    pub npml: usize,
    #[serde(default = "default_pml_power")]
    pub power: f64,
    #[serde(default = "default_r_coeff")]
    pub r_coeff: f64,
}

fn default_npml() -> usize {
    20
}
fn default_pml_power() -> f64 {
    2.0
}
fn default_r_coeff() -> f64 {
    1e-4
}

impl Default for PmlSection {
    fn default() -> Self {
        PmlSection {
            npml: default_npml(),
            power: default_pml_power(),
            r_coeff: default_r_coeff(),
        }
    }
}

impl PmlSection {
    pub fn to_core(&self) -> Result<Pml, CliError> {
        Pml::new(self.npml, self.power, self.r_coeff).map_err(CliError::from_validation)
    }
}

/// Regularization weight for the inversion: one number or one per cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaScheduleSpec {
    Constant(f64),
    PerCycle(Vec<f64>),
}

fn default_mu0() -> f64 {
    1e-2
}
fn default_iters_per_freq() -> usize {
    10
}
fn default_cg_tol() -> f64 {
    1e-8
}
fn default_cg_maxiter() -> usize {
    20_000
}
fn default_f_peak() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FwiSection {
    pub model_init: PathBuf,
    #[serde(default = "default_units")]
    pub model_units: ModelUnits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_true: Option<PathBuf>,
    pub acquisition: PathBuf,
    pub data: PathBuf,
    #[serde(default = "default_mu0")]
    pub mu0: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub alpha: AlphaScheduleSpec,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_iters_per_freq")]
    pub iters_per_freq: usize,
    /// Frequency bands, one `[f_min_hz, f_max_hz, f_step_hz]` per cycle.
    pub cycles: Vec<[f64; 3]>,
    pub sigma_mode: SigmaModeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_fixed: Option<f64>,
    /// Velocity box (m/s) projected onto the model after each update.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default = "default_cg_maxiter")]
    pub cg_maxiter: usize,
    #[serde(default = "default_f_peak")]
    pub f_peak_hz: f64,
    #[serde(default)]
    pub pml: PmlSection,
}

impl FwiSection {
    pub fn to_core(&self) -> Result<FwiConfig, CliError> {
        let alpha = match &self.alpha {
            AlphaScheduleSpec::Constant(a) => AlphaSchedule::Constant(*a),
            AlphaScheduleSpec::PerCycle(v) => AlphaSchedule::PerCycle(v.clone()),
        };
        let m_bounds = match (self.v_min, self.v_max) {
            (Some(vmin), Some(vmax)) => {
                if !(vmin > 0.0 && vmax > vmin) {
                    return Err(CliError::config(format!(
                        "fwi: need 0 < v_min < v_max, got ({vmin}, {vmax})"
                    )));
                }
                Some((1.0 / (vmax * vmax), 1.0 / (vmin * vmin)))
            }
            (None, None) => None,
            _ => {
                return Err(CliError::config(
                    "fwi: v_min and v_max must be given together",
                ))
            }
        };
        let cfg = FwiConfig {
            mu0: self.mu0,
            tau: self.tau,
            alpha,
            beta: self.beta,
            iters_per_freq: self.iters_per_freq,
            cycles: self
                .cycles
                .iter()
                .map(|b| FreqBand {
                    f_min_hz: b[0],
                    f_max_hz: b[1],
                    f_step_hz: b[2],
                })
                .collect(),
            sigma_mode: resolve_sigma_mode(&self.sigma_mode, self.sigma_fixed, "fwi")?,
            m_bounds,
            cg_tol: self.cg_tol,
            cg_maxiter: self.cg_maxiter,
            f_peak_hz: self.f_peak_hz,
            pml: self.pml.to_core()?,
        };
        cfg.validate().map_err(CliError::from_validation)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardSection {
    pub model_true: PathBuf,
    #[serde(default = "default_units")]
    pub model_units: ModelUnits,
    pub acquisition: PathBuf,
    pub out_data: PathBuf,
    #[serde(default = "default_f_peak")]
    pub f_peak_hz: f64,
    #[serde(default)]
    pub pml: PmlSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKindSpec {
    LayersFaultImage,
    LayeredVelocity,
    Ramp,
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub kind: SynthKindSpec,
    pub nx: usize,
    pub nz: usize,
    #[serde(default = "default_spacing")]
    pub dx: f64,
    #[serde(default = "default_spacing")]
    pub dz: f64,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_noisy: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_snr_db: Option<f64>,
    // image parameters
    #[serde(default = "default_wavelength")]
    pub wavelength: f64,
    #[serde(default)]
    pub dip_deg: f64,
    #[serde(default = "default_unconformity_depth")]
    pub unconformity_depth_frac: f64,
    #[serde(default)]
    pub unconformity_slope: f64,
    #[serde(default = "default_fault_center")]
    pub fault_center_frac: f64,
    #[serde(default)]
    pub fault_curvature: f64,
    #[serde(default)]
    pub fault_throw: f64,
    // velocity parameters
    #[serde(default = "default_v_top")]
    pub v_top: f64,
    #[serde(default)]
    pub gradient_per_s: f64,
    #[serde(default)]
    pub n_layers: usize,
    // ramp / homogeneous parameters
    #[serde(default)]
    pub coeff_x: f64,
    #[serde(default)]
    pub coeff_z: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub value: f64,
}

fn default_spacing() -> f64 {
    1.0
}
fn default_wavelength() -> f64 {
    24.0
}
fn default_unconformity_depth() -> f64 {
    0.32
}
fn default_fault_center() -> f64 {
    0.55
}
fn default_v_top() -> f64 {
    1500.0
}

impl SynthSection {
    pub fn to_core(&self) -> Result<SynthSpec, CliError> {
        let grid = Grid2D::new(self.nx, self.nz, self.dx, self.dz)
            .map_err(CliError::from_validation)?;
        let kind = match self.kind {
            SynthKindSpec::LayersFaultImage => SynthKind::LayersFaultImage {
                wavelength: self.wavelength,
                dip_rad: self.dip_deg.to_radians(),
                unconformity_depth_frac: self.unconformity_depth_frac,
                unconformity_slope: self.unconformity_slope,
                fault_center_frac: self.fault_center_frac,
                fault_curvature: self.fault_curvature,
                fault_throw: self.fault_throw,
            },
            SynthKindSpec::LayeredVelocity => SynthKind::LayeredVelocity {
                v_top: self.v_top,
                gradient_per_s: self.gradient_per_s,
                n_layers: self.n_layers,
                dip_rad: self.dip_deg.to_radians(),
                fault_throw_m: self.fault_throw,
            },
            SynthKindSpec::Ramp => SynthKind::Ramp {
                coeff_x: self.coeff_x,
                coeff_z: self.coeff_z,
                offset: self.offset,
            },
            SynthKindSpec::Homogeneous => SynthKind::Homogeneous { value: self.value },
        };
        let spec = SynthSpec {
            kind,
            grid,
            noise_snr_db: self.noise_snr_db,
        };
        spec.validate().map_err(CliError::from_validation)?;
        Ok(spec)
    }
}

impl RunConfig {
    /// Parses a TOML document into a fully validated configuration; defaults
    /// are applied, unknown keys rejected, and every module invariant checked.
    /// Input paths are checked for existence relative to `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::config(format!("config parse error: {e}")))?;
        cfg.validate(base_dir)?;
        Ok(cfg)
    }

    pub fn serialize(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolve a configured path against the config file's directory.
    pub fn resolve_path(base_dir: Option<&Path>, p: &Path) -> PathBuf {
        match base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn validate(&self, base_dir: Option<&Path>) -> Result<(), CliError> {
        let require_input = |p: &Path, what: &str| -> Result<(), CliError> {
            let full = Self::resolve_path(base_dir, p);
            if !full.exists() {
                return Err(CliError::config(format!(
                    "{what}: input path {} does not exist",
                    full.display()
                )));
            }
            Ok(())
        };
        let section = |present: bool, name: &str| -> Result<(), CliError> {
            if !present {
                return Err(CliError::config(format!(
                    "mode \"{}\" requires a [{name}] section",
                    self.mode
                )));
            }
            Ok(())
        };
        match self.mode {
            Mode::Denoise => {
                section(self.denoise.is_some(), "denoise")?;
                let d = self.denoise.as_ref().unwrap();
                d.to_core()?;
                require_input(&d.input, "denoise.input")?;
                if let Some(r) = &d.reference {
                    require_input(r, "denoise.reference")?;
                }
            }
            Mode::Fwi => {
                section(self.fwi.is_some(), "fwi")?;
                let f = self.fwi.as_ref().unwrap();
                f.to_core()?;
                require_input(&f.model_init, "fwi.model_init")?;
                if let Some(t) = &f.model_true {
                    require_input(t, "fwi.model_true")?;
                }
                require_input(&f.acquisition, "fwi.acquisition")?;
                require_input(&f.data, "fwi.data")?;
            }
            Mode::Forward => {
                section(self.forward.is_some(), "forward")?;
                let f = self.forward.as_ref().unwrap();
                f.pml.to_core()?;
                if !(f.f_peak_hz > 0.0) {
                    return Err(CliError::config(format!(
                        "forward.f_peak_hz: must be positive, got {}",
                        f.f_peak_hz
                    )));
                }
                require_input(&f.model_true, "forward.model_true")?;
                require_input(&f.acquisition, "forward.acquisition")?;
            }
            Mode::Synth => {
                section(self.synth.is_some(), "synth")?;
                let s = self.synth.as_ref().unwrap();
                s.to_core()?;
                if s.noise_snr_db.is_some() != s.out_noisy.is_some() {
                    return Err(CliError::config(
                        "synth: noise_snr_db and out_noisy must be given together",
                    ));
                }
            }
            Mode::Selftest => {}
        }
        Ok(())
    }
}
