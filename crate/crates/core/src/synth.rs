//! Synthetic model and image generators for the bundled experiments, plus
//! exact-SNR noise. Generators are pure functions of their spec; randomness
//! enters only through the caller-provided seeded generator.

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::grid::{Grid2D, ScalarField2D};

/// Which structure to generate and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthKind {
    /// Seismic-section style image: gently dipping beds above a sloping
    /// unconformity, steeper quasi-periodic beds below it, displaced across a
    /// curved fault. Values are dimensionless, O(1).
    LayersFaultImage {
        /// Stratification wavelength in meters.
        wavelength: f64,
        /// Dip of the beds below the unconformity (radians, clockwise from
        /// horizontal).
        dip_rad: f64,
        /// Depth of the unconformity at x = 0 as a fraction of the z extent.
        unconformity_depth_frac: f64,
        /// Slope dz/dx of the unconformity plane.
        unconformity_slope: f64,
        /// Fault position at the top of the section as a fraction of the x
        /// extent.
        fault_center_frac: f64,
        /// Curvature of the fault trace (1/m).
        fault_curvature: f64,
        /// Vertical displacement across the fault in meters.
        fault_throw: f64,
    },
    /// Velocity model `v = v_top + gradient * t` along the (possibly dipping,
    /// possibly faulted) stratigraphic depth `t`, optionally quantized into
    /// `n_layers` constant beds. `n_layers = 0` keeps the smooth profile.
    LayeredVelocity {
        v_top: f64,
        gradient_per_s: f64,
        n_layers: usize,
        dip_rad: f64,
        fault_throw_m: f64,
    },
    /// Plane `coeff_x * x + coeff_z * z + offset` (operator tests, tilted
    /// backgrounds).
    Ramp {
        coeff_x: f64,
        coeff_z: f64,
        offset: f64,
    },
    /// Constant field.
    Homogeneous { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub grid: Grid2D,
    /// When set, callers also want a noisy copy at exactly this input SNR.
    pub noise_snr_db: Option<f64>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            SynthKind::LayersFaultImage {
                wavelength,
                dip_rad,
                ..
            } => {
                if !(*wavelength > 0.0) {
                    return Err(CoreError::InvalidParam {
                        name: "wavelength",
                        reason: format!("must be positive, got {wavelength}"),
                    });
                }
                check_dip(*dip_rad)?;
            }
            SynthKind::LayeredVelocity {
                v_top,
                gradient_per_s,
                dip_rad,
                ..
            } => {
                let (_, lz) = self.grid.extent();
                let v_bottom = v_top + gradient_per_s * lz;
                if !(*v_top > 0.0 && v_bottom > 0.0) {
                    return Err(CoreError::InvalidParam {
                        name: "v_top/gradient_per_s",
                        reason: format!(
                            "velocity range must stay positive; top {v_top}, bottom {v_bottom}"
                        ),
                    });
                }
                check_dip(*dip_rad)?;
            }
            SynthKind::Ramp { .. } | SynthKind::Homogeneous { .. } => {}
        }
        Ok(())
    }
}

fn check_dip(dip: f64) -> Result<()> {
    use std::f64::consts::FRAC_PI_2;
    if !(dip > -FRAC_PI_2 && dip <= FRAC_PI_2) {
        return Err(CoreError::InvalidParam {
            name: "dip",
            reason: format!("must lie in (-pi/2, pi/2], got {dip}"),
        });
    }
    Ok(())
}

/// Generates the clean field described by `spec`.
pub fn synth_model(spec: &SynthSpec) -> Result<ScalarField2D> {
    spec.validate()?;
    let grid = spec.grid;
    let (lx, lz) = grid.extent();
    let field = match &spec.kind {
        SynthKind::Homogeneous { value } => ScalarField2D::constant(grid, *value),
        SynthKind::Ramp {
            coeff_x,
            coeff_z,
            offset,
        } => ScalarField2D::from_fn(grid, |x, z| coeff_x * x + coeff_z * z + offset),
        SynthKind::LayeredVelocity {
            v_top,
            gradient_per_s,
            n_layers,
            dip_rad,
            fault_throw_m,
        } => {
            let tan_dip = dip_rad.tan();
            let n_layers = *n_layers;
            ScalarField2D::from_fn(grid, |x, z| {
                let mut t = z + tan_dip * (x - 0.5 * lx);
                if *fault_throw_m != 0.0 {
                    // listric fault through the model center, hanging wall on
                    // the right, displacement growing with depth
                    let xf = 0.55 * lx - 0.18 * lx * (z / lz.max(1.0));
                    if x > xf {
                        t -= fault_throw_m * (0.4 + 0.6 * (z / lz.max(1.0)));
                    }
                }
                let t = t.clamp(0.0, lz);
                let t_eff = if n_layers == 0 {
                    t
                } else {
                    let step = lz / n_layers as f64;
                    let band = (t / step).floor().min(n_layers as f64 - 1.0);
                    (band + 0.5) * step
                };
                v_top + gradient_per_s * t_eff
            })
        }
        SynthKind::LayersFaultImage {
            wavelength,
            dip_rad,
            unconformity_depth_frac,
            unconformity_slope,
            fault_center_frac,
            fault_curvature,
            fault_throw,
        } => {
            let tan_dip = dip_rad.tan();
            ScalarField2D::from_fn(grid, |x, z| {
                let zu = unconformity_depth_frac * lz + unconformity_slope * (x - 0.5 * lx);
                if z < zu {
                    // shallow section: flat-lying beds, gentler banding
                    bed_profile(z / (1.6 * wavelength))
                } else {
                    // deep section: dipping beds cut by a curved fault
                    let mut t = z + tan_dip * (x - 0.5 * lx);
                    let xf = fault_center_frac * lx + fault_curvature * (z - zu) * (z - zu);
                    if x > xf {
                        t += fault_throw;
                    }
                    bed_profile(t / wavelength)
                }
            })
        }
    };
    Ok(field)
}

/// Quasi-periodic bed sequence: a fundamental plus two fixed overtones, so
/// neighboring beds differ without any per-run randomness.
fn bed_profile(s: f64) -> f64 {
    use std::f64::consts::TAU;
    (TAU * s).sin() + 0.5 * (2.0 * TAU * s + 1.3).sin() + 0.25 * (3.0 * TAU * s + 2.1).sin()
}

/// Adds white Gaussian noise scaled so that `snr_db(clean, noisy)` equals the
/// target exactly (up to rounding).
pub fn add_noise_to_snr(
    clean: &ScalarField2D,
    snr_db: f64,
    rng: &mut ChaCha12Rng,
) -> ScalarField2D {
    let grid = clean.grid();
    let mut noise = ScalarField2D::zeros(grid);
    for v in noise.values_mut() {
        *v = StandardNormal.sample(rng);
    }
    let raw_norm = noise.norm2();
    if raw_norm == 0.0 {
        // astronomically unlikely; draw a deterministic fallback direction
        noise.values_mut()[0] = 1.0;
    }
    let target_norm = clean.norm2() / 10f64.powf(snr_db / 20.0);
    let s = target_norm / noise.norm2();
    noise.scale(s);
    let mut noisy = clean.clone();
    noisy.axpy(1.0, &noise);
    noisy
}

/// Convert a velocity field (m/s) to slowness-squared (s^2/m^2).
pub fn velocity_to_slowness_squared(v: &ScalarField2D) -> Result<ScalarField2D> {
    if let Some(idx) = v.values().iter().position(|&x| !(x > 0.0)) {
        return Err(CoreError::InvalidParam {
            name: "velocity",
            reason: format!("must be positive everywhere; value {} at {idx}", v.values()[idx]),
        });
    }
    Ok(v.map(|x| 1.0 / (x * x)))
}

/// Convert slowness-squared back to velocity.
pub fn slowness_squared_to_velocity(m: &ScalarField2D) -> Result<ScalarField2D> {
    if let Some(idx) = m.values().iter().position(|&x| !(x > 0.0)) {
        return Err(CoreError::InvalidParam {
            name: "slowness_squared",
            reason: format!("must be positive everywhere; value {} at {idx}", m.values()[idx]),
        });
    }
    Ok(m.map(|x| 1.0 / x.sqrt()))
}
