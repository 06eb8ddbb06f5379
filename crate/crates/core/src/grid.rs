//! Regular-grid containers and first-order finite-difference operators.
//!
//! All fields are stored row-major with x fastest: the flat index of sample
//! `(i, j)` is `j * nx + i`, where `i` runs along x (0..nx) and `j` along z
//! (0..nz). Every operator in the crate indexes through [`Grid2D::idx`] so the
//! ordering is fixed in one place.

use num_complex::Complex64;

use crate::error::{CoreError, Result};

/// Uniform 2D grid: sample counts and spacings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
}

impl Grid2D {
    pub fn new(nx: usize, nz: usize, dx: f64, dz: f64) -> Result<Self> {
        if nx < 3 || nz < 3 {
            return Err(CoreError::InvalidGrid(format!(
                "need at least 3 samples per axis, got {nx}x{nz}"
            )));
        }
        if !(dx > 0.0 && dx.is_finite() && dz > 0.0 && dz.is_finite()) {
            return Err(CoreError::InvalidGrid(format!(
                "spacings must be positive and finite, got dx={dx}, dz={dz}"
            )));
        }
        Ok(Grid2D { nx, nz, dx, dz })
    }

    /// Total number of samples.
    #[inline]
    pub fn n(&self) -> usize {
        self.nx * self.nz
    }

    /// Flat index of sample (i, j), x fastest.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.nz);
        j * self.nx + i
    }

    /// Physical extent (meters) along x and z.
    pub fn extent(&self) -> (f64, f64) {
        (
            (self.nx - 1) as f64 * self.dx,
            (self.nz - 1) as f64 * self.dz,
        )
    }

    /// Grid enlarged by `pad` samples on every side, same spacing.
    pub fn padded(&self, pad: usize) -> Grid2D {
        Grid2D {
            nx: self.nx + 2 * pad,
            nz: self.nz + 2 * pad,
            dx: self.dx,
            dz: self.dz,
        }
    }
}

/// Real-valued field on a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} values ({}x{})", grid.n(), grid.nx, grid.nz),
                got: format!("{}", values.len()),
            });
        }
        Ok(ScalarField2D { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        ScalarField2D {
            grid,
            values: vec![0.0; grid.n()],
        }
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        ScalarField2D {
            grid,
            values: vec![value; grid.n()],
        }
    }

    /// Build from a function of the physical coordinates (x, z) in meters.
    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n());
        for j in 0..grid.nz {
            let z = j as f64 * grid.dz;
            for i in 0..grid.nx {
                let x = i as f64 * grid.dx;
                values.push(f(x, z));
            }
        }
        ScalarField2D { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert_eq!(self.grid, other.grid);
        for (y, x) in self.values.iter_mut().zip(&other.values) {
            *y += a * x;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        ScalarField2D {
            grid: self.grid,
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField2D {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp_values(&mut self, lo: f64, hi: f64) {
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
    }

    /// Enlarge by `pad` samples on every side, replicating edge values.
    pub fn pad_edge(&self, pad: usize) -> ScalarField2D {
        let g = self.grid;
        let gp = g.padded(pad);
        let mut out = ScalarField2D::zeros(gp);
        for j in 0..gp.nz {
            let js = j.saturating_sub(pad).min(g.nz - 1);
            for i in 0..gp.nx {
                let is = i.saturating_sub(pad).min(g.nx - 1);
                out.values[gp.idx(i, j)] = self.values[g.idx(is, js)];
            }
        }
        out
    }

    /// Drop `pad` samples from every side.
    pub fn crop(&self, pad: usize) -> Result<ScalarField2D> {
        let g = self.grid;
        if g.nx <= 2 * pad + 2 || g.nz <= 2 * pad + 2 {
            return Err(CoreError::InvalidGrid(format!(
                "cannot crop {pad} samples from a {}x{} grid",
                g.nx, g.nz
            )));
        }
        let gc = Grid2D::new(g.nx - 2 * pad, g.nz - 2 * pad, g.dx, g.dz)?;
        let mut values = Vec::with_capacity(gc.n());
        for j in 0..gc.nz {
            for i in 0..gc.nx {
                values.push(self.values[g.idx(i + pad, j + pad)]);
            }
        }
        Ok(ScalarField2D { grid: gc, values })
    }
}

/// Complex-valued field on a [`Grid2D`] (monochromatic wavefields, sources,
/// multipliers).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField2D {
    grid: Grid2D,
    values: Vec<Complex64>,
}

impl ComplexField2D {
    pub fn new(grid: Grid2D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} values ({}x{})", grid.n(), grid.nx, grid.nz),
                got: format!("{}", values.len()),
            });
        }
        Ok(ComplexField2D { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        ComplexField2D {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.n()],
        }
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, a: Complex64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    /// self += a * other
    pub fn axpy(&mut self, a: Complex64, other: &Self) {
        debug_assert_eq!(self.grid, other.grid);
        for (y, x) in self.values.iter_mut().zip(&other.values) {
            *y += a * x;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        ComplexField2D {
            grid: self.grid,
            values,
        }
    }
}

/// Pair of first-derivative fields sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub gx: ScalarField2D,
    pub gz: ScalarField2D,
}

/// Forward-difference gradient with a zero last column (x) / last row (z).
///
/// `gx[i,j] = (m[i+1,j] - m[i,j]) / dx` for `i < nx-1`, zero at `i = nx-1`;
/// analogously for `gz` along z. Linear in `m`, and the adjoint below is exact
/// under the Euclidean inner product.
pub fn gradient(m: &ScalarField2D) -> GradientPair {
    let g = m.grid();
    let mut gx = ScalarField2D::zeros(g);
    let mut gz = ScalarField2D::zeros(g);
    gradient_into(g, m.values(), gx.values_mut(), gz.values_mut());
    GradientPair { gx, gz }
}

/// Allocation-free kernel behind [`gradient`]. Divides by the spacing rather
/// than multiplying by its reciprocal so results match a direct stencil
/// evaluation bit for bit.
pub fn gradient_into(grid: Grid2D, m: &[f64], gx: &mut [f64], gz: &mut [f64]) {
    let (nx, nz) = (grid.nx, grid.nz);
    let (dx, dz) = (grid.dx, grid.dz);
    for j in 0..nz {
        let row = j * nx;
        for i in 0..nx - 1 {
            gx[row + i] = (m[row + i + 1] - m[row + i]) / dx;
        }
        gx[row + nx - 1] = 0.0;
        if j < nz - 1 {
            for i in 0..nx {
                gz[row + i] = (m[row + nx + i] - m[row + i]) / dz;
            }
        } else {
            gz[row..row + nx].fill(0.0);
        }
    }
}

/// Exact adjoint of [`gradient`]: a negative-divergence stencil.
pub fn gradient_adjoint(g: &GradientPair) -> ScalarField2D {
    let grid = g.gx.grid();
    let mut out = ScalarField2D::zeros(grid);
    gradient_adjoint_into(grid, g.gx.values(), g.gz.values(), out.values_mut());
    out
}

/// Allocation-free kernel behind [`gradient_adjoint`].
///
/// The last column of `gx` and last row of `gz` are annihilated by the forward
/// operator, so they do not contribute here.
pub fn gradient_adjoint_into(grid: Grid2D, gx: &[f64], gz: &[f64], out: &mut [f64]) {
    let (nx, nz) = (grid.nx, grid.nz);
    let (dx, dz) = (grid.dx, grid.dz);
    for j in 0..nz {
        let row = j * nx;
        for i in 0..nx {
            let k = row + i;
            let mut acc = 0.0;
            if i < nx - 1 {
                acc -= gx[k] / dx;
            }
            if i > 0 {
                acc += gx[k - 1] / dx;
            }
            if j < nz - 1 {
                acc -= gz[k] / dz;
            }
            if j > 0 {
                acc += gz[k - nx] / dz;
            }
            out[k] = acc;
        }
    }
}

/// Complex coefficients on the half-sample links of a grid, used by the
/// absorbing-layer form of the Laplacian, plus the matching per-node mass
/// weight. `ax` holds one value per x-link `(i-1/2, j)` for `i in 0..=nx`
/// (boundary ghost links included), indexed `j * (nx + 1) + i`; `az` holds
/// one value per z-link `(i, j-1/2)` for `j in 0..=nz`, indexed `j * nx + i`.
/// `mass` is the node weight that multiplies the `omega^2 m` term; it equals
/// one everywhere outside the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StretchCoeffs {
    pub grid: Grid2D,
    pub ax: Vec<Complex64>,
    pub az: Vec<Complex64>,
    pub mass: Vec<Complex64>,
}

impl StretchCoeffs {
    /// All-ones coefficients: the plain 5-point Laplacian.
    pub fn identity(grid: Grid2D) -> Self {
        StretchCoeffs {
            grid,
            ax: vec![Complex64::new(1.0, 0.0); (grid.nx + 1) * grid.nz],
            az: vec![Complex64::new(1.0, 0.0); grid.nx * (grid.nz + 1)],
            mass: vec![Complex64::new(1.0, 0.0); grid.n()],
        }
    }

    #[inline]
    pub fn ax_at(&self, i_half: usize, j: usize) -> Complex64 {
        self.ax[j * (self.grid.nx + 1) + i_half]
    }

    #[inline]
    pub fn az_at(&self, i: usize, j_half: usize) -> Complex64 {
        self.az[j_half * self.grid.nx + i]
    }
}

/// Five-point Laplacian with zero (Dirichlet) ghost samples outside the grid.
///
/// With `stretch` present the link coefficients are the complex absorbing-layer
/// values, so the result matches the assembled Helmholtz matrix minus its mass
/// term.
pub fn laplacian(u: &ComplexField2D, stretch: Option<&StretchCoeffs>) -> ComplexField2D {
    let grid = u.grid();
    let mut out = ComplexField2D::zeros(grid);
    match stretch {
        Some(s) => {
            debug_assert_eq!(s.grid, grid);
            laplacian_into(grid, u.values(), s, out.values_mut());
        }
        None => {
            let s = StretchCoeffs::identity(grid);
            laplacian_into(grid, u.values(), &s, out.values_mut());
        }
    }
    out
}

/// Allocation-free kernel behind [`laplacian`].
pub fn laplacian_into(grid: Grid2D, u: &[Complex64], s: &StretchCoeffs, out: &mut [Complex64]) {
    let (nx, nz) = (grid.nx, grid.nz);
    let inv_dx2 = 1.0 / (grid.dx * grid.dx);
    let inv_dz2 = 1.0 / (grid.dz * grid.dz);
    let zero = Complex64::new(0.0, 0.0);
    for j in 0..nz {
        let row = j * nx;
        for i in 0..nx {
            let k = row + i;
            let uc = u[k];
            let axm = s.ax[j * (nx + 1) + i];
            let axp = s.ax[j * (nx + 1) + i + 1];
            let azm = s.az[j * nx + i];
            let azp = s.az[(j + 1) * nx + i];
            let ul = if i > 0 { u[k - 1] } else { zero };
            let ur = if i < nx - 1 { u[k + 1] } else { zero };
            let uu = if j > 0 { u[k - nx] } else { zero };
            let ud = if j < nz - 1 { u[k + nx] } else { zero };
            out[k] = (axp * (ur - uc) - axm * (uc - ul)) * inv_dx2
                + (azp * (ud - uc) - azm * (uc - uu)) * inv_dz2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_field(grid: Grid2D, rng: &mut ChaCha12Rng) -> ScalarField2D {
        let values = (0..grid.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ScalarField2D::new(grid, values).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_shapes() {
        assert!(Grid2D::new(2, 5, 1.0, 1.0).is_err());
        assert!(Grid2D::new(5, 2, 1.0, 1.0).is_err());
        assert!(Grid2D::new(5, 5, 0.0, 1.0).is_err());
        assert!(Grid2D::new(5, 5, 1.0, -1.0).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let grid = Grid2D::new(7, 5, 0.5, 2.0).unwrap();
        let m = ScalarField2D::constant(grid, 3.25);
        let g = gradient(&m);
        assert!(g.gx.values().iter().all(|&v| v == 0.0));
        assert!(g.gz.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_x_ramp() {
        let grid = Grid2D::new(6, 4, 1.0, 1.0).unwrap();
        let m = ScalarField2D::from_fn(grid, |x, _| x);
        let g = gradient(&m);
        for j in 0..4 {
            for i in 0..6 {
                let expect = if i == 5 { 0.0 } else { 1.0 };
                assert_eq!(g.gx.at(i, j), expect, "at ({i},{j})");
                assert_eq!(g.gz.at(i, j), 0.0);
            }
        }
    }

    #[test]
    fn gradient_matches_direct_stencil() {
        let grid = Grid2D::new(11, 9, 0.7, 1.3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let m = random_field(grid, &mut rng);
        let g = gradient(&m);
        for j in 0..grid.nz {
            for i in 0..grid.nx {
                let ex = if i + 1 < grid.nx {
                    (m.at(i + 1, j) - m.at(i, j)) / grid.dx
                } else {
                    0.0
                };
                let ez = if j + 1 < grid.nz {
                    (m.at(i, j + 1) - m.at(i, j)) / grid.dz
                } else {
                    0.0
                };
                assert_eq!(g.gx.at(i, j), ex);
                assert_eq!(g.gz.at(i, j), ez);
            }
        }
    }

    #[test]
    fn gradient_adjoint_identity() {
        let grid = Grid2D::new(13, 8, 0.4, 0.9).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..100 {
            let m = random_field(grid, &mut rng);
            let y = GradientPair {
                gx: random_field(grid, &mut rng),
                gz: random_field(grid, &mut rng),
            };
            let g = gradient(&m);
            let lhs = g.gx.dot(&y.gx) + g.gz.dot(&y.gz);
            let rhs = m.dot(&gradient_adjoint(&y));
            let scale = lhs.abs().max(rhs.abs()).max(1e-300);
            assert!(
                (lhs - rhs).abs() / scale <= 1e-12,
                "adjoint mismatch: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn gradient_is_linear() {
        let grid = Grid2D::new(9, 9, 1.0, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let m = random_field(grid, &mut rng);
        let n = random_field(grid, &mut rng);
        let (a, b) = (1.7, -0.4);
        let mut comb = m.clone();
        comb.scale(a);
        comb.axpy(b, &n);
        let g_comb = gradient(&comb);
        let gm = gradient(&m);
        let gn = gradient(&n);
        for k in 0..grid.n() {
            let ex = a * gm.gx.values()[k] + b * gn.gx.values()[k];
            let ez = a * gm.gz.values()[k] + b * gn.gz.values()[k];
            let tol = 1e-14 * (ex.abs() + ez.abs()).max(1.0);
            assert!((g_comb.gx.values()[k] - ex).abs() <= tol);
            assert!((g_comb.gz.values()[k] - ez).abs() <= tol);
        }
    }

    #[test]
    fn adjoint_of_impulse_has_divergence_footprint() {
        let grid = Grid2D::new(8, 8, 1.0, 1.0).unwrap();
        let mut gx = ScalarField2D::zeros(grid);
        gx.set(3, 4, 1.0);
        let y = GradientPair {
            gx,
            gz: ScalarField2D::zeros(grid),
        };
        let out = gradient_adjoint(&y);
        let nonzero: Vec<usize> = out
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, _)| k)
            .collect();
        assert!(nonzero.len() <= 2, "footprint {nonzero:?}");
        assert_eq!(out.at(3, 4), -1.0);
        assert_eq!(out.at(4, 4), 1.0);
    }

    #[test]
    fn laplacian_of_quadratic_interior() {
        let grid = Grid2D::new(9, 9, 1.0, 1.0).unwrap();
        let mut u = ComplexField2D::zeros(grid);
        for j in 0..9 {
            for i in 0..9 {
                u.set(i, j, Complex64::new((i * i) as f64, 0.0));
            }
        }
        let lap = laplacian(&u, None);
        for j in 1..8 {
            for i in 1..8 {
                assert!((lap.at(i, j).re - 2.0).abs() < 1e-12, "at ({i},{j})");
                assert_eq!(lap.at(i, j).im, 0.0);
            }
        }
    }

    #[test]
    fn laplacian_of_constant_interior_is_zero() {
        let grid = Grid2D::new(7, 6, 0.3, 0.8).unwrap();
        let mut u = ComplexField2D::zeros(grid);
        for v in u.values_mut() {
            *v = Complex64::new(2.5, -1.0);
        }
        let lap = laplacian(&u, None);
        for j in 1..5 {
            for i in 1..6 {
                assert!(lap.at(i, j).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pad_and_crop_round_trip() {
        let grid = Grid2D::new(6, 5, 1.0, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let m = random_field(grid, &mut rng);
        let padded = m.pad_edge(4);
        assert_eq!(padded.grid().nx, 14);
        assert_eq!(padded.grid().nz, 13);
        // corners replicate
        assert_eq!(padded.at(0, 0), m.at(0, 0));
        assert_eq!(padded.at(13, 12), m.at(5, 4));
        let back = padded.crop(4).unwrap();
        assert_eq!(back, m);
    }
}
