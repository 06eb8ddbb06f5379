//! Frequency-domain Helmholtz operator `A(m) = omega^2 diag(m) + Lap` with an
//! absorbing boundary layer, plus source synthesis and forward modeling.
//!
//! The model `m` is slowness-squared (s^2/m^2, the reciprocal of squared
//! velocity) and lives on the full computational grid; the outer `npml`
//! samples on each side form the absorbing layer. Complex coordinate
//! stretching `1/s(x) d/dx (1/s(x) d/dx)` with `s = 1 + i sigma(x)/omega` is
//! discretized in the row-scaled form that keeps the assembled matrix exactly
//! complex symmetric, so one LU factorization serves all sources and
//! source/receiver reciprocity holds to solver precision.

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::grid::{laplacian_into, ComplexField2D, Grid2D, ScalarField2D, StretchCoeffs};
use crate::sparse::{CsMat, SparseLu};

/// Relative residual required from a direct solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// Absorbing-layer geometry and profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pml {
    /// Layer thickness in samples on each side.
    pub npml: usize,
    /// Polynomial profile exponent.
    pub power: f64,
    /// Target theoretical reflection coefficient.
    pub r_coeff: f64,
}

impl Default for Pml {
    fn default() -> Self {
        Pml {
            npml: 20,
            power: 2.0,
            r_coeff: 1e-4,
        }
    }
}

impl Pml {
    pub fn new(npml: usize, power: f64, r_coeff: f64) -> Result<Self> {
        let pml = Pml {
            npml,
            power,
            r_coeff,
        };
        pml.validate()?;
        Ok(pml)
    }

    pub fn validate(&self) -> Result<()> {
        if self.npml < 8 {
            return Err(CoreError::InvalidParam {
                name: "npml",
                reason: format!("need at least 8 samples, got {}", self.npml),
            });
        }
        if !(self.power >= 2.0 && self.power <= 4.0) {
            return Err(CoreError::InvalidParam {
                name: "pml.power",
                reason: format!("must lie in [2, 4], got {}", self.power),
            });
        }
        if !(self.r_coeff > 0.0 && self.r_coeff < 1.0) {
            return Err(CoreError::InvalidParam {
                name: "pml.r_coeff",
                reason: format!("must lie in (0, 1), got {}", self.r_coeff),
            });
        }
        Ok(())
    }

    /// Checks that a grid leaves room for the layer on all four sides.
    pub fn check_grid(&self, grid: Grid2D) -> Result<()> {
        if grid.nx < 2 * self.npml + 3 || grid.nz < 2 * self.npml + 3 {
            return Err(CoreError::InvalidGrid(format!(
                "grid {}x{} too small for a {}-sample absorbing layer on all sides",
                grid.nx, grid.nz, self.npml
            )));
        }
        Ok(())
    }
}

/// Damping profile value at physical coordinate `x` along one axis.
fn sigma_profile(x: f64, lo: f64, hi: f64, layer: f64, sigma_max: f64, power: f64) -> f64 {
    let d = if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        return 0.0;
    };
    sigma_max * (d / layer).powf(power)
}

/// Complex link coefficients and mass weights implementing the absorbing
/// layer for a given frequency. `c_ref` is the reference wavespeed used to
/// scale the damping profile.
///
/// The discretization is the coordinate-stretched operator with every row
/// scaled by `sx(i) sz(j)`: x-links carry `sz(j) / sx(i-1/2)`, z-links carry
/// `sx(i) / sz(j-1/2)`, and the `omega^2 m` term is weighted by
/// `sx(i) sz(j)`. Both rows adjacent to a link see the same coefficient, so
/// the assembled matrix is exactly complex symmetric while the layer remains
/// reflection-free in the continuum limit.
pub fn stretch_coeffs(grid: Grid2D, omega: f64, pml: &Pml, c_ref: f64) -> StretchCoeffs {
    let (nx, nz) = (grid.nx, grid.nz);
    let lx = pml.npml as f64 * grid.dx;
    let lz = pml.npml as f64 * grid.dz;
    let x_lo = lx;
    let x_hi = (nx - 1 - pml.npml) as f64 * grid.dx;
    let z_lo = lz;
    let z_hi = (nz - 1 - pml.npml) as f64 * grid.dz;
    // two-way amplitude decay exp(-2 int sigma / c) hits r_coeff exactly
    let smax_x = -(pml.power + 1.0) * c_ref * pml.r_coeff.ln() / (2.0 * lx);
    let smax_z = -(pml.power + 1.0) * c_ref * pml.r_coeff.ln() / (2.0 * lz);

    let s_of = |sigma: f64| Complex64::new(1.0, sigma / omega);
    let sx_node: Vec<Complex64> = (0..nx)
        .map(|i| s_of(sigma_profile(i as f64 * grid.dx, x_lo, x_hi, lx, smax_x, pml.power)))
        .collect();
    let sz_node: Vec<Complex64> = (0..nz)
        .map(|j| s_of(sigma_profile(j as f64 * grid.dz, z_lo, z_hi, lz, smax_z, pml.power)))
        .collect();
    let sx_half: Vec<Complex64> = (0..=nx)
        .map(|i| {
            s_of(sigma_profile(
                (i as f64 - 0.5) * grid.dx,
                x_lo,
                x_hi,
                lx,
                smax_x,
                pml.power,
            ))
        })
        .collect();
    let sz_half: Vec<Complex64> = (0..=nz)
        .map(|j| {
            s_of(sigma_profile(
                (j as f64 - 0.5) * grid.dz,
                z_lo,
                z_hi,
                lz,
                smax_z,
                pml.power,
            ))
        })
        .collect();

    let mut ax = Vec::with_capacity((nx + 1) * nz);
    for j in 0..nz {
        for i in 0..=nx {
            ax.push(sz_node[j] / sx_half[i]);
        }
    }
    let mut az = Vec::with_capacity(nx * (nz + 1));
    for j in 0..=nz {
        for i in 0..nx {
            az.push(sx_node[i] / sz_half[j]);
        }
    }
    let mut mass = Vec::with_capacity(grid.n());
    for j in 0..nz {
        for i in 0..nx {
            mass.push(sx_node[i] * sz_node[j]);
        }
    }
    StretchCoeffs {
        grid,
        ax,
        az,
        mass,
    }
}

/// Assembled Helmholtz operator, factorizable for repeated solves.
pub struct HelmholtzSystem {
    grid: Grid2D,
    omega: f64,
    m: ScalarField2D,
    pml: Pml,
    stretch: StretchCoeffs,
    matrix: CsMat,
    factorization: Option<SparseLu>,
}

/// Mean wavespeed of a slowness-squared model, the default damping-profile
/// reference.
pub fn mean_velocity(m: &ScalarField2D) -> f64 {
    m.values().iter().map(|&v| 1.0 / v.sqrt()).sum::<f64>() / m.grid().n() as f64
}

/// Builds `A(m)` with the damping profile scaled to the model's own mean
/// velocity. See [`assemble_with_reference`].
pub fn assemble(m: &ScalarField2D, omega: f64, pml: &Pml) -> Result<HelmholtzSystem> {
    assemble_with_reference(m, omega, pml, mean_velocity(m))
}

/// Builds `A(m)` for angular frequency `omega` (rad/s). Interior rows reduce
/// to the plain 5-point stencil with mass `omega^2 m`, so at fixed `c_ref`
/// the assembly satisfies `A(m1) - A(m2) = omega^2 diag(m1 - m2)` exactly
/// outside the absorbing layer (inside it, the difference carries the layer's
/// mass weight). Iterative schemes that update `m` should pin `c_ref` once so
/// the layer does not drift with the model.
pub fn assemble_with_reference(
    m: &ScalarField2D,
    omega: f64,
    pml: &Pml,
    c_ref: f64,
) -> Result<HelmholtzSystem> {
    pml.validate()?;
    let grid = m.grid();
    pml.check_grid(grid)?;
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(CoreError::InvalidParam {
            name: "omega",
            reason: format!("must be positive, got {omega}"),
        });
    }
    if !(c_ref > 0.0 && c_ref.is_finite()) {
        return Err(CoreError::InvalidParam {
            name: "c_ref",
            reason: format!("must be positive, got {c_ref}"),
        });
    }
    if let Some(idx) = m.values().iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(CoreError::InvalidParam {
            name: "m",
            reason: format!(
                "slowness-squared must be positive everywhere; value {} at index {idx}",
                m.values()[idx]
            ),
        });
    }

    let stretch = stretch_coeffs(grid, omega, pml, c_ref);

    let (nx, nz) = (grid.nx, grid.nz);
    let inv_dx2 = 1.0 / (grid.dx * grid.dx);
    let inv_dz2 = 1.0 / (grid.dz * grid.dz);
    let omega2 = omega * omega;
    let mut triplets: Vec<(usize, usize, Complex64)> = Vec::with_capacity(5 * grid.n());
    for j in 0..nz {
        for i in 0..nx {
            let k = grid.idx(i, j);
            let axm = stretch.ax[j * (nx + 1) + i] * inv_dx2;
            let axp = stretch.ax[j * (nx + 1) + i + 1] * inv_dx2;
            let azm = stretch.az[j * nx + i] * inv_dz2;
            let azp = stretch.az[(j + 1) * nx + i] * inv_dz2;
            let diag = omega2 * m.values()[k] * stretch.mass[k] - (axp + axm) - (azp + azm);
            triplets.push((k, k, diag));
            if i + 1 < nx {
                triplets.push((k, k + 1, axp));
            }
            if i > 0 {
                triplets.push((k, k - 1, axm));
            }
            if j + 1 < nz {
                triplets.push((k, k + nx, azp));
            }
            if j > 0 {
                triplets.push((k, k - nx, azm));
            }
        }
    }
    let matrix = CsMat::from_triplets(grid.n(), &triplets);
    Ok(HelmholtzSystem {
        grid,
        omega,
        m: m.clone(),
        pml: *pml,
        stretch,
        matrix,
        factorization: None,
    })
}

impl HelmholtzSystem {
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn model(&self) -> &ScalarField2D {
        &self.m
    }

    pub fn pml(&self) -> &Pml {
        &self.pml
    }

    pub fn stretch(&self) -> &StretchCoeffs {
        &self.stretch
    }

    pub fn matrix(&self) -> &CsMat {
        &self.matrix
    }

    pub fn is_factorized(&self) -> bool {
        self.factorization.is_some()
    }

    pub fn factorization(&self) -> Option<&SparseLu> {
        self.factorization.as_ref()
    }

    /// Computes and stores the sparse direct factorization.
    pub fn factorize(&mut self) -> Result<&mut Self> {
        if self.factorization.is_none() {
            self.factorization = Some(self.matrix.factorize()?);
        }
        Ok(self)
    }

    /// Matrix-free application
    /// `A u = omega^2 (mass_weight . m . u) + Lap_stretched u`.
    pub fn apply(&self, u: &ComplexField2D) -> ComplexField2D {
        debug_assert_eq!(u.grid(), self.grid);
        let mut out = ComplexField2D::zeros(self.grid);
        laplacian_into(self.grid, u.values(), &self.stretch, out.values_mut());
        let omega2 = self.omega * self.omega;
        for (k, o) in out.values_mut().iter_mut().enumerate() {
            *o += omega2 * self.m.values()[k] * self.stretch.mass[k] * u.values()[k];
        }
        out
    }

    /// Direct solve of `A u = b`; requires [`HelmholtzSystem::factorize`].
    pub fn solve(&self, b: &ComplexField2D) -> Result<ComplexField2D> {
        Ok(self.solve_many(std::slice::from_ref(b))?.pop().unwrap())
    }

    /// Solves one factorization against many right-hand sides.
    pub fn solve_many(&self, bs: &[ComplexField2D]) -> Result<Vec<ComplexField2D>> {
        let lu = self.factorization.as_ref().ok_or(CoreError::NotFactorized)?;
        let rhs: Vec<Vec<Complex64>> = bs.iter().map(|b| b.values().to_vec()).collect();
        let sols = lu.solve_many(&rhs);
        let mut out = Vec::with_capacity(bs.len());
        for (b, x) in bs.iter().zip(sols) {
            let u = ComplexField2D::new(self.grid, x)?;
            let b_norm = b.norm2();
            if b_norm > 0.0 {
                let r = self.apply(&u).sub(b).norm2() / b_norm;
                if r > SOLVE_TOL {
                    return Err(CoreError::SubproblemResidual {
                        what: "helmholtz solve",
                        residual: r,
                        required: SOLVE_TOL,
                    });
                }
            }
            out.push(u);
        }
        Ok(out)
    }
}

/// Zero-phase Ricker amplitude spectrum
/// `W(f) = 2 f^2 / (sqrt(pi) f_p^3) * exp(-f^2 / f_p^2)`.
pub fn ricker_spectrum(f_peak_hz: f64, f_hz: f64) -> Complex64 {
    debug_assert!(f_peak_hz > 0.0 && f_hz >= 0.0);
    let fp3 = f_peak_hz * f_peak_hz * f_peak_hz;
    let w = 2.0 * f_hz * f_hz / (std::f64::consts::PI.sqrt() * fp3)
        * (-f_hz * f_hz / (f_peak_hz * f_peak_hz)).exp();
    Complex64::new(w, 0.0)
}

/// A point source at a grid node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub ix: usize,
    pub iz: usize,
    pub amplitude: Complex64,
}

/// Survey layout: sources, receivers, and the modeled frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub sources: Vec<Source>,
    pub receivers: Vec<(usize, usize)>,
    pub frequencies_hz: Vec<f64>,
}

impl Acquisition {
    /// All positions must sit inside the non-absorbing interior of the grid.
    pub fn validate(&self, grid: Grid2D, pml: &Pml) -> Result<()> {
        let inside = |i: usize, j: usize| {
            i >= pml.npml && i < grid.nx - pml.npml && j >= pml.npml && j < grid.nz - pml.npml
        };
        if self.sources.is_empty() {
            return Err(CoreError::InvalidParam {
                name: "acquisition.sources",
                reason: "need at least one source".into(),
            });
        }
        for (k, s) in self.sources.iter().enumerate() {
            if !inside(s.ix, s.iz) {
                return Err(CoreError::InvalidParam {
                    name: "acquisition.sources",
                    reason: format!(
                        "source {k} at ({}, {}) lies in the absorbing layer",
                        s.ix, s.iz
                    ),
                });
            }
        }
        for (k, &(i, j)) in self.receivers.iter().enumerate() {
            if !inside(i, j) {
                return Err(CoreError::InvalidParam {
                    name: "acquisition.receivers",
                    reason: format!("receiver {k} at ({i}, {j}) lies in the absorbing layer"),
                });
            }
        }
        if self.frequencies_hz.is_empty() {
            return Err(CoreError::InvalidParam {
                name: "acquisition.frequencies_hz",
                reason: "need at least one frequency".into(),
            });
        }
        for w in self.frequencies_hz.windows(2) {
            if !(w[1] > w[0]) {
                return Err(CoreError::InvalidParam {
                    name: "acquisition.frequencies_hz",
                    reason: "frequencies must be strictly ascending".into(),
                });
            }
        }
        if self.frequencies_hz[0] <= 0.0 {
            return Err(CoreError::InvalidParam {
                name: "acquisition.frequencies_hz",
                reason: "frequencies must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn receiver_flat_indices(&self, grid: Grid2D) -> Vec<usize> {
        self.receivers.iter().map(|&(i, j)| grid.idx(i, j)).collect()
    }

    /// Index of a frequency in the table, matched to 1e-9 relative tolerance.
    pub fn freq_index(&self, f_hz: f64) -> Option<usize> {
        self.frequencies_hz
            .iter()
            .position(|&f| (f - f_hz).abs() <= 1e-9 * f_hz.max(1.0))
    }
}

/// Discrete delta at a node, scaled by `1/(dx dz)` so it approximates a unit
/// point source on any grid.
pub fn point_source(grid: Grid2D, ix: usize, iz: usize, amplitude: Complex64) -> ComplexField2D {
    let mut b = ComplexField2D::zeros(grid);
    let scale = 1.0 / (grid.dx * grid.dz);
    b.set(ix, iz, amplitude * scale);
    b
}

/// Ricker-weighted right-hand sides for every source at one frequency.
pub fn build_sources(
    acq: &Acquisition,
    grid: Grid2D,
    f_hz: f64,
    f_peak_hz: f64,
) -> Vec<ComplexField2D> {
    let w = ricker_spectrum(f_peak_hz, f_hz);
    acq.sources
        .iter()
        .map(|s| point_source(grid, s.ix, s.iz, s.amplitude * w))
        .collect()
}

/// Observed-data table: one complex sample per (frequency, source, receiver),
/// frequency-major then source.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub n_freq: usize,
    pub n_src: usize,
    pub n_rec: usize,
    values: Vec<Complex64>,
}

impl DataTable {
    pub fn zeros(n_freq: usize, n_src: usize, n_rec: usize) -> Self {
        DataTable {
            n_freq,
            n_src,
            n_rec,
            values: vec![Complex64::new(0.0, 0.0); n_freq * n_src * n_rec],
        }
    }

    pub fn from_values(
        n_freq: usize,
        n_src: usize,
        n_rec: usize,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        if values.len() != n_freq * n_src * n_rec {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} samples", n_freq * n_src * n_rec),
                got: format!("{}", values.len()),
            });
        }
        Ok(DataTable {
            n_freq,
            n_src,
            n_rec,
            values,
        })
    }

    #[inline]
    fn offset(&self, f: usize, s: usize) -> usize {
        (f * self.n_src + s) * self.n_rec
    }

    pub fn record(&self, f: usize, s: usize) -> &[Complex64] {
        let o = self.offset(f, s);
        &self.values[o..o + self.n_rec]
    }

    pub fn record_mut(&mut self, f: usize, s: usize) -> &mut [Complex64] {
        let o = self.offset(f, s);
        &mut self.values[o..o + self.n_rec]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

/// Forward modeling: for every frequency and source, assemble, factorize,
/// solve, and sample the wavefield at the receivers. Deterministic given its
/// inputs.
pub fn synthesize_data(
    m_true: &ScalarField2D,
    acq: &Acquisition,
    pml: &Pml,
    f_peak_hz: f64,
) -> Result<DataTable> {
    acq.validate(m_true.grid(), pml)?;
    let grid = m_true.grid();
    let rec_idx = acq.receiver_flat_indices(grid);
    let mut table = DataTable::zeros(acq.frequencies_hz.len(), acq.sources.len(), rec_idx.len());
    for (fi, &f_hz) in acq.frequencies_hz.iter().enumerate() {
        let omega = 2.0 * std::f64::consts::PI * f_hz;
        let mut sys = assemble(m_true, omega, pml)?;
        sys.factorize()?;
        let bs = build_sources(acq, grid, f_hz, f_peak_hz);
        let us = sys.solve_many(&bs)?;
        for (si, u) in us.iter().enumerate() {
            let rec = table.record_mut(fi, si);
            for (r, &k) in rec_idx.iter().enumerate() {
                rec[r] = u.values()[k];
            }
        }
    }
    Ok(table)
}

/// Free-space response of `(Lap + k^2) G = delta` selecting the outgoing
/// branch: `G(r) = (Y0(k r) - i J0(k r)) / 4`.
pub fn greens_2d(k: f64, r: f64) -> Complex64 {
    debug_assert!(k > 0.0 && r > 0.0);
    Complex64::new(libm::y0(k * r) / 4.0, -libm::j0(k * r) / 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn small_pml() -> Pml {
        Pml {
            npml: 8,
            power: 2.0,
            r_coeff: 1e-4,
        }
    }

    fn const_model(nx: usize, nz: usize, d: f64, v: f64) -> ScalarField2D {
        let grid = Grid2D::new(nx, nz, d, d).unwrap();
        ScalarField2D::constant(grid, 1.0 / (v * v))
    }

    #[test]
    fn interior_diagonal_matches_stencil_arithmetic() {
        let m = const_model(25, 25, 10.0, 2000.0);
        let omega = 2.0 * std::f64::consts::PI * 5.0;
        let sys = assemble(&m, omega, &small_pml()).unwrap();
        let grid = m.grid();
        let k = grid.idx(12, 12);
        let expect = omega * omega * m.values()[k] - 2.0 / 100.0 - 2.0 / 100.0;
        let got = sys.matrix().get(k, k);
        assert!((got.re - expect).abs() < 1e-12 * expect.abs());
        assert!(got.im.abs() < 1e-15);
    }

    #[test]
    fn zero_damping_reduces_to_plain_discretization() {
        // r_coeff -> 1 makes ln(r) = 0 and the profile identically zero.
        let m = const_model(25, 25, 10.0, 2000.0);
        let omega = 2.0 * std::f64::consts::PI * 5.0;
        let pml = Pml {
            npml: 8,
            power: 2.0,
            r_coeff: 1.0 - 1e-15,
        };
        let sys = assemble(&m, omega, &pml).unwrap();
        let grid = m.grid();
        for j in 0..25 {
            for i in 0..25 {
                let k = grid.idx(i, j);
                let diag = sys.matrix().get(k, k);
                let expect = omega * omega * m.values()[k] - 4.0 / 100.0;
                assert!(
                    (diag.re - expect).abs() < 1e-10 && diag.im.abs() < 1e-12,
                    "node ({i},{j}): {diag}"
                );
            }
        }
    }

    #[test]
    fn matrix_vector_product_matches_matrix_free_apply() {
        let m = const_model(30, 26, 12.5, 1800.0);
        let omega = 2.0 * std::f64::consts::PI * 4.0;
        let sys = assemble(&m, omega, &small_pml()).unwrap();
        let grid = m.grid();
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut u = ComplexField2D::zeros(grid);
        for v in u.values_mut() {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        let free = sys.apply(&u);
        let mut assembled = vec![Complex64::new(0.0, 0.0); grid.n()];
        sys.matrix().matvec(u.values(), &mut assembled);
        let scale = free.norm2().max(1.0);
        let diff: f64 = free
            .values()
            .iter()
            .zip(&assembled)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff / scale <= 1e-13, "mismatch {diff:.3e}");
    }

    #[test]
    fn assembled_matrix_is_complex_symmetric() {
        let m = const_model(22, 20, 15.0, 1500.0);
        let omega = 2.0 * std::f64::consts::PI * 6.0;
        let sys = assemble(&m, omega, &small_pml()).unwrap();
        assert!(sys.matrix().max_asymmetry() == 0.0);
    }

    #[test]
    fn mass_term_is_exactly_linear_in_m() {
        let grid = Grid2D::new(21, 21, 10.0, 10.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let m1 = ScalarField2D::new(
            grid,
            (0..grid.n())
                .map(|_| rng.random_range(1e-7..5e-7))
                .collect(),
        )
        .unwrap();
        let m2 = ScalarField2D::new(
            grid,
            (0..grid.n())
                .map(|_| rng.random_range(1e-7..5e-7))
                .collect(),
        )
        .unwrap();
        let omega = 2.0 * std::f64::consts::PI * 7.0;
        let s1 = assemble_with_reference(&m1, omega, &small_pml(), 2000.0).unwrap();
        let s2 = assemble_with_reference(&m2, omega, &small_pml(), 2000.0).unwrap();
        for j in 0..grid.nz {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                let (d1, d2) = (s1.matrix().get(k, k), s2.matrix().get(k, k));
                let got = d1 - d2;
                let dm = m1.values()[k] - m2.values()[k];
                let expect = omega * omega * dm * s1.stretch().mass[k];
                // exact up to roundoff of the diagonal subtraction itself
                let tol = 1e-14 * d1.norm().max(d2.norm());
                assert!(
                    (got - expect).norm() <= tol,
                    "node ({i},{j}): {got} vs {expect}"
                );
                // outside the layer the identity is the unweighted one
                let npml = small_pml().npml;
                if i >= npml && i < grid.nx - npml && j >= npml && j < grid.nz - npml {
                    assert_eq!(s1.stretch().mass[k], Complex64::new(1.0, 0.0));
                    assert!((got.re - omega * omega * dm).abs() <= tol);
                    assert_eq!(got.im, 0.0);
                }
                // every off-diagonal coefficient is model-independent
                for (dk, dkn) in [(1usize, i + 1 < grid.nx), (grid.nx, j + 1 < grid.nz)] {
                    if dkn {
                        assert_eq!(s1.matrix().get(k, k + dk), s2.matrix().get(k, k + dk));
                    }
                }
            }
        }
    }

    #[test]
    fn solve_consistency_and_superposition() {
        let m = const_model(30, 30, 10.0, 2000.0);
        let omega = 2.0 * std::f64::consts::PI * 6.0;
        let mut sys = assemble(&m, omega, &small_pml()).unwrap();
        assert!(sys.solve(&ComplexField2D::zeros(m.grid())).is_err());
        sys.factorize().unwrap();

        let grid = m.grid();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut v = ComplexField2D::zeros(grid);
        for w in v.values_mut() {
            *w = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        let b = sys.apply(&v);
        let u = sys.solve(&b).unwrap();
        let err = u.sub(&v).norm2() / v.norm2();
        assert!(err <= 1e-10, "consistency {err:.3e}");

        let b1 = point_source(grid, 12, 12, Complex64::new(1.0, 0.0));
        let b2 = point_source(grid, 17, 15, Complex64::new(0.0, 2.0));
        let mut b12 = b1.clone();
        b12.axpy(Complex64::new(1.0, 0.0), &b2);
        let us = sys.solve_many(&[b1, b2, b12]).unwrap();
        let mut sum = us[0].clone();
        sum.axpy(Complex64::new(1.0, 0.0), &us[1]);
        let err = sum.sub(&us[2]).norm2() / us[2].norm2();
        assert!(err <= 1e-12, "superposition {err:.3e}");
    }

    #[test]
    fn reciprocity_between_two_interior_points() {
        let m = {
            // mildly heterogeneous medium
            let grid = Grid2D::new(36, 32, 10.0, 10.0).unwrap();
            ScalarField2D::from_fn(grid, |x, z| {
                let v = 1800.0 + 0.4 * z + 20.0 * (x / 70.0).sin();
                1.0 / (v * v)
            })
        };
        let omega = 2.0 * std::f64::consts::PI * 6.0;
        let mut sys = assemble(&m, omega, &small_pml()).unwrap();
        sys.factorize().unwrap();
        let grid = m.grid();
        let p = (12, 14);
        let q = (22, 18);
        let amp = Complex64::new(1.0, 0.0);
        let u_p = sys.solve(&point_source(grid, p.0, p.1, amp)).unwrap();
        let u_q = sys.solve(&point_source(grid, q.0, q.1, amp)).unwrap();
        let a = u_p.at(q.0, q.1);
        let b = u_q.at(p.0, p.1);
        assert!(
            (a - b).norm() <= 1e-8 * a.norm(),
            "reciprocity violated: {a} vs {b}"
        );
    }

    #[test]
    fn ricker_shape() {
        assert_eq!(ricker_spectrum(10.0, 0.0).re, 0.0);
        // argmax over a fine grid is the peak frequency
        let mut best = (0.0, 0.0);
        for k in 1..4000 {
            let f = k as f64 * 0.01;
            let w = ricker_spectrum(10.0, f).re;
            assert!(w > 0.0);
            if w > best.1 {
                best = (f, w);
            }
        }
        assert!((best.0 - 10.0).abs() <= 0.01);
    }

    #[test]
    fn synthesize_data_scales_linearly_with_amplitude() {
        let m = const_model(26, 24, 10.0, 2000.0);
        let make_acq = |amp: f64| Acquisition {
            sources: vec![Source {
                ix: 12,
                iz: 10,
                amplitude: Complex64::new(amp, 0.0),
            }],
            receivers: vec![(10, 12), (14, 13)],
            frequencies_hz: vec![5.0, 7.0],
        };
        let pml = small_pml();
        let zero = synthesize_data(&m, &make_acq(0.0), &pml, 10.0).unwrap();
        assert!(zero.values().iter().all(|v| v.norm() == 0.0));
        let one = synthesize_data(&m, &make_acq(1.0), &pml, 10.0).unwrap();
        let two = synthesize_data(&m, &make_acq(2.0), &pml, 10.0).unwrap();
        for (a, b) in one.values().iter().zip(two.values()) {
            assert!((2.0 * a - b).norm() <= 1e-12 * b.norm().max(1e-300));
        }
    }

    #[test]
    fn acquisition_rejects_positions_in_the_layer() {
        let grid = Grid2D::new(30, 30, 10.0, 10.0).unwrap();
        let pml = small_pml();
        let acq = Acquisition {
            sources: vec![Source {
                ix: 2,
                iz: 15,
                amplitude: Complex64::new(1.0, 0.0),
            }],
            receivers: vec![],
            frequencies_hz: vec![5.0],
        };
        assert!(acq.validate(grid, &pml).is_err());
    }
}
