//! Desk-scale benchmark fixtures: a 2 km x 1 km section at 20 m spacing
//! (101 x 51 physical samples) with shallow sources. Shared by the
//! integration and acceptance suites and reproducible from the command line
//! via the bundled configs.

use num_complex::Complex64;

use crate::grid::{Grid2D, ScalarField2D};
use crate::helmholtz::{Acquisition, Pml, Source};
use crate::synth::{synth_model, velocity_to_slowness_squared, SynthKind, SynthSpec};

pub const PHYS_NX: usize = 101;
pub const PHYS_NZ: usize = 51;
pub const SPACING_M: f64 = 20.0;

/// A complete inversion scenario on the padded computational grid.
pub struct DeskScaleFixture {
    /// True slowness-squared model, padded by the absorbing layer.
    pub m_true: ScalarField2D,
    /// Linear-with-depth starting model, padded.
    pub m_init: ScalarField2D,
    pub acq: Acquisition,
    pub pml: Pml,
    pub f_peak_hz: f64,
    /// Slowness-squared box from the velocity range with 20% margin.
    pub m_bounds: (f64, f64),
}

pub fn physical_grid() -> Grid2D {
    Grid2D::new(PHYS_NX, PHYS_NZ, SPACING_M, SPACING_M).unwrap()
}

fn physical_velocity(kind: SynthKind) -> ScalarField2D {
    let spec = SynthSpec {
        kind,
        grid: physical_grid(),
        noise_snr_db: None,
    };
    synth_model(&spec).unwrap()
}

fn shallow_sources(pad: usize) -> Vec<Source> {
    (0..PHYS_NX)
        .step_by(4)
        .map(|i| Source {
            ix: i + pad,
            iz: 1 + pad,
            amplitude: Complex64::new(1.0, 0.0),
        })
        .collect()
}

fn build(
    v_true: ScalarField2D,
    receivers: Vec<(usize, usize)>,
    frequencies_hz: Vec<f64>,
    pml: Pml,
) -> DeskScaleFixture {
    let v_init = physical_velocity(SynthKind::LayeredVelocity {
        v_top: 1600.0,
        gradient_per_s: 0.8,
        n_layers: 0,
        dip_rad: 0.0,
        fault_throw_m: 0.0,
    });
    let (vmin, vmax) = (
        v_true.min().min(v_init.min()),
        v_true.max().max(v_init.max()),
    );
    let m_bounds = (1.0 / (1.2 * vmax).powi(2), 1.0 / (0.8 * vmin).powi(2));

    let pad = pml.npml;
    let m_true = velocity_to_slowness_squared(&v_true.pad_edge(pad)).unwrap();
    let m_init = velocity_to_slowness_squared(&v_init.pad_edge(pad)).unwrap();
    let acq = Acquisition {
        sources: shallow_sources(pad),
        receivers,
        frequencies_hz,
    };
    DeskScaleFixture {
        m_true,
        m_init,
        acq,
        pml,
        f_peak_hz: 10.0,
        m_bounds,
    }
}

/// Two flat layers (1800 / 2200 m/s): the recovery regression scenario.
/// Receivers are dense around the whole perimeter of the physical window so
/// the model is well illuminated.
pub fn two_layer_fixture(frequencies_hz: Vec<f64>) -> DeskScaleFixture {
    let v_true = physical_velocity(SynthKind::LayeredVelocity {
        v_top: 1600.0,
        gradient_per_s: 0.8,
        n_layers: 2,
        dip_rad: 0.0,
        fault_throw_m: 0.0,
    });
    let pml = Pml::default();
    let pad = pml.npml;
    let mut receivers: Vec<(usize, usize)> = Vec::new();
    for i in 0..PHYS_NX {
        receivers.push((i + pad, 2 + pad));
        receivers.push((i + pad, PHYS_NZ - 3 + pad));
    }
    for j in 3..PHYS_NZ - 3 {
        receivers.push((2 + pad, j + pad));
        receivers.push((PHYS_NX - 3 + pad, j + pad));
    }
    build(v_true, receivers, frequencies_hz, pml)
}

/// Dipping quantized beds cut by a listric fault, observed by a single
/// shallow receiver line with the given spacing in cells: the
/// sparse-acquisition sweep scenario.
pub fn layered_fault_fixture(
    receiver_every: usize,
    frequencies_hz: Vec<f64>,
) -> DeskScaleFixture {
    let v_true = physical_velocity(SynthKind::LayeredVelocity {
        v_top: 1600.0,
        gradient_per_s: 0.8,
        n_layers: 6,
        dip_rad: 0.12,
        fault_throw_m: 150.0,
    });
    let pml = Pml::default();
    let pad = pml.npml;
    let receivers = (0..PHYS_NX)
        .step_by(receiver_every)
        .map(|i| (i + pad, 2 + pad))
        .collect();
    build(v_true, receivers, frequencies_hz, pml)
}
