//! Full waveform inversion with the wave equation as a relaxed constraint:
//! wavefields are explicit unknowns, and an augmented-Lagrangian loop cycles
//! through tilt, weights, wavefields, model, and multipliers at each
//! frequency, wrapped in a low-to-high multiscale frequency continuation.

use num_complex::Complex64;

use crate::cg;
use crate::error::{CoreError, Result};
use crate::grid::{laplacian_into, ComplexField2D, ScalarField2D, StretchCoeffs};
use crate::helmholtz::{
    assemble_with_reference, build_sources, mean_velocity, Acquisition, DataTable,
    HelmholtzSystem, Pml,
};
use crate::regularizer::{
    sigma_update, theta_init, theta_update, AnisoParams, RegCtx, RegScratch, SigmaMode,
    ThetaAugState,
};
use crate::sparse::{CsMat, SparseLu};

/// Required relative residual of the wavefield normal-equation solve.
pub const U_NORMAL_TOL: f64 = 1e-8;

/// One band of the frequency continuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqBand {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub f_step_hz: f64,
}

impl FreqBand {
    pub fn frequencies(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let f = self.f_min_hz + k as f64 * self.f_step_hz;
            if f > self.f_max_hz + 1e-9 * self.f_max_hz {
                break;
            }
            out.push(f);
            k += 1;
        }
        out
    }
}

/// Regularization weight schedule: one value for the whole run or one per
/// cycle.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSchedule {
    Constant(f64),
    PerCycle(Vec<f64>),
}

impl AlphaSchedule {
    pub fn for_cycle(&self, cycle: usize) -> f64 {
        match self {
            AlphaSchedule::Constant(a) => *a,
            AlphaSchedule::PerCycle(v) => v[cycle],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwiConfig {
    /// Wave-equation penalty scale; the actual penalty is
    /// `mu = mu0 / ||A(m0)||_1` computed at the first inverted frequency.
    pub mu0: f64,
    /// Tilt splitting penalty.
    pub tau: f64,
    /// Regularization weight (per run or per cycle).
    pub alpha: AlphaSchedule,
    /// Tilt smoothing weight.
    pub beta: f64,
    pub iters_per_freq: usize,
    pub cycles: Vec<FreqBand>,
    pub sigma_mode: SigmaMode,
    /// Box bounds on slowness-squared, applied after each model update.
    pub m_bounds: Option<(f64, f64)>,
    pub cg_tol: f64,
    pub cg_maxiter: usize,
    /// Dominant frequency of the source wavelet (Hz).
    pub f_peak_hz: f64,
    pub pml: Pml,
}

impl Default for FwiConfig {
    fn default() -> Self {
        FwiConfig {
            mu0: 1e-2,
            tau: 1.0,
            alpha: AlphaSchedule::Constant(1.0),
            beta: 1.0,
            iters_per_freq: 10,
            cycles: vec![FreqBand {
                f_min_hz: 3.0,
                f_max_hz: 8.0,
                f_step_hz: 1.0,
            }],
            sigma_mode: SigmaMode::Adaptive,
            m_bounds: None,
            cg_tol: 1e-8,
            cg_maxiter: 20_000,
            f_peak_hz: 10.0,
            pml: Pml::default(),
        }
    }
}

impl FwiConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CoreError::InvalidParam {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
            Ok(())
        };
        positive("mu0", self.mu0)?;
        positive("tau", self.tau)?;
        positive("f_peak_hz", self.f_peak_hz)?;
        positive("cg_tol", self.cg_tol)?;
        match &self.alpha {
            AlphaSchedule::Constant(a) => positive("alpha", *a)?,
            AlphaSchedule::PerCycle(v) => {
                if v.len() != self.cycles.len() {
                    return Err(CoreError::InvalidParam {
                        name: "alpha",
                        reason: format!(
                            "per-cycle schedule has {} entries for {} cycles",
                            v.len(),
                            self.cycles.len()
                        ),
                    });
                }
                for &a in v {
                    positive("alpha", a)?;
                }
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(CoreError::InvalidParam {
                name: "beta",
                reason: format!("must be nonnegative, got {}", self.beta),
            });
        }
        if self.iters_per_freq == 0 {
            return Err(CoreError::InvalidParam {
                name: "iters_per_freq",
                reason: "must be at least 1".into(),
            });
        }
        if self.cycles.is_empty() {
            return Err(CoreError::InvalidParam {
                name: "cycles",
                reason: "cycles nonempty".into(),
            });
        }
        for (k, band) in self.cycles.iter().enumerate() {
            if !(band.f_min_hz > 0.0 && band.f_step_hz > 0.0 && band.f_max_hz >= band.f_min_hz) {
                return Err(CoreError::InvalidParam {
                    name: "cycles",
                    reason: format!(
                        "band {k} must satisfy 0 < f_min <= f_max with positive step, got {band:?}"
                    ),
                });
            }
        }
        self.sigma_mode.validate()?;
        if let Some((lo, hi)) = self.m_bounds {
            if !(lo > 0.0 && hi > lo) {
                return Err(CoreError::InvalidParam {
                    name: "m_bounds",
                    reason: format!("need 0 < lo < hi, got ({lo}, {hi})"),
                });
            }
        }
        if self.cg_maxiter == 0 {
            return Err(CoreError::InvalidParam {
                name: "cg_maxiter",
                reason: "must be at least 1".into(),
            });
        }
        self.pml.validate()
    }
}

/// One history record per iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub cycle: usize,
    pub freq_hz: f64,
    pub relative_error: f64,
    pub data_residual: f64,
    pub waveeq_residual: f64,
    pub reg_value: f64,
}

/// Everything the loop evolves.
#[derive(Debug, Clone)]
pub struct InversionState {
    pub m: ScalarField2D,
    pub p: AnisoParams,
    pub u: Vec<ComplexField2D>,
    pub lambda: Vec<ComplexField2D>,
    pub theta_aug: ThetaAugState,
    pub history: Vec<HistoryRow>,
}

/// Model quality in percent: `100 ||m_k - m*|| / ||m*||`.
pub fn relative_error(m_k: &ScalarField2D, m_star: &ScalarField2D) -> Result<f64> {
    if m_k.grid() != m_star.grid() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", m_star.grid()),
            got: format!("{:?}", m_k.grid()),
        });
    }
    let denom = m_star.norm2();
    if denom == 0.0 {
        return Err(CoreError::InvalidParam {
            name: "m_star",
            reason: "reference model has zero norm".into(),
        });
    }
    Ok(100.0 * m_k.sub(m_star).norm2() / denom)
}

/// Wavefield subproblem solver at fixed `(omega, m)`: a sparse direct
/// factorization of the normal matrix `P^T P + mu A^H A`, shared by every
/// source at this frequency.
pub struct WavefieldSolver<'a> {
    sys: &'a HelmholtzSystem,
    receivers: &'a [usize],
    mu: f64,
    normal: CsMat,
    normal_lu: SparseLu,
}

impl<'a> WavefieldSolver<'a> {
    pub fn new(sys: &'a HelmholtzSystem, receivers: &'a [usize], mu: f64) -> Result<Self> {
        let n = sys.grid().n();
        let mut normal = sys.matrix().herm_normal_of_symmetric(mu);
        let mut ptp = vec![Complex64::new(0.0, 0.0); n];
        for &r in receivers {
            ptp[r] += Complex64::new(1.0, 0.0);
        }
        normal.add_diagonal(&ptp);
        let normal_lu = normal.factorize()?;
        Ok(WavefieldSolver {
            sys,
            receivers,
            mu,
            normal,
            normal_lu,
        })
    }

    /// `A^H v` using complex symmetry of `A`: `conj(A conj(v))`.
    fn herm_apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = v.len();
        let conj_v: Vec<Complex64> = v.iter().map(|x| x.conj()).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        self.sys.matrix().matvec(&conj_v, &mut out);
        for x in &mut out {
            *x = x.conj();
        }
        out
    }

    fn rhs_for(&self, d: &[Complex64], lambda: &ComplexField2D, b: &ComplexField2D) -> Vec<Complex64> {
        let n = self.sys.grid().n();
        let mut v: Vec<Complex64> = b.values().iter().map(|x| self.mu * x).collect();
        for (vv, l) in v.iter_mut().zip(lambda.values()) {
            *vv += l;
        }
        let mut rhs = self.herm_apply(&v);
        debug_assert_eq!(d.len(), self.receivers.len());
        for (&r, &dv) in self.receivers.iter().zip(d) {
            rhs[r] += dv;
        }
        debug_assert_eq!(rhs.len(), n);
        rhs
    }

    /// Minimizes `1/2||P u - d||^2 + mu/2||A u - b||^2 - Re<lambda, A u - b>`
    /// for every source against the shared factorization, with one step of
    /// iterative refinement, and enforces the normal-equation residual
    /// contract.
    pub fn u_update_many(
        &self,
        data: &[Vec<Complex64>],
        lambda: &[ComplexField2D],
        b: &[ComplexField2D],
    ) -> Result<Vec<ComplexField2D>> {
        assert_eq!(data.len(), lambda.len());
        assert_eq!(data.len(), b.len());
        let n = self.sys.grid().n();
        let rhs: Vec<Vec<Complex64>> = data
            .iter()
            .zip(lambda)
            .zip(b)
            .map(|((d, l), bb)| self.rhs_for(d, l, bb))
            .collect();
        let mut sols = self.normal_lu.solve_many(&rhs);

        // one refinement sweep, then verify the contract
        let mut residuals: Vec<Vec<Complex64>> = Vec::with_capacity(sols.len());
        for (x, r) in sols.iter().zip(&rhs) {
            let mut nx = vec![Complex64::new(0.0, 0.0); n];
            self.normal.matvec(x, &mut nx);
            residuals.push(r.iter().zip(&nx).map(|(a, b)| a - b).collect());
        }
        let corrections = self.normal_lu.solve_many(&residuals);
        for (x, c) in sols.iter_mut().zip(&corrections) {
            for (xv, cv) in x.iter_mut().zip(c) {
                *xv += cv;
            }
        }

        let mut out = Vec::with_capacity(sols.len());
        for (x, r) in sols.into_iter().zip(&rhs) {
            let rhs_norm = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if rhs_norm > 0.0 {
                let mut nx = vec![Complex64::new(0.0, 0.0); n];
                self.normal.matvec(&x, &mut nx);
                let res = nx
                    .iter()
                    .zip(r)
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt()
                    / rhs_norm;
                if res > U_NORMAL_TOL {
                    return Err(CoreError::SubproblemResidual {
                        what: "wavefield normal equations",
                        residual: res,
                        required: U_NORMAL_TOL,
                    });
                }
            }
            out.push(ComplexField2D::new(self.sys.grid(), x)?);
        }
        Ok(out)
    }

    /// Single-source convenience wrapper.
    pub fn u_update(
        &self,
        d: &[Complex64],
        lambda: &ComplexField2D,
        b: &ComplexField2D,
    ) -> Result<ComplexField2D> {
        Ok(self
            .u_update_many(&[d.to_vec()], std::slice::from_ref(lambda), std::slice::from_ref(b))?
            .pop()
            .unwrap())
    }
}

/// Model subproblem: with `A(m) u = omega^2 diag(u) m + Lap u` linear in `m`,
/// the stationarity condition is the real SPD system
/// `(mu omega^4 sum_s |u_s|^2 + alpha L^T L) m
///    = Re[omega^2 sum_s conj(u_s) . (mu (b_s - Lap u_s) + lambda_s)]`,
/// solved by CG from the previous model, then optionally projected onto the
/// configured box.
#[allow(clippy::too_many_arguments)]
pub fn m_update(
    u: &[ComplexField2D],
    lambda: &[ComplexField2D],
    b: &[ComplexField2D],
    p: &AnisoParams,
    stretch: &StretchCoeffs,
    omega: f64,
    mu: f64,
    alpha: f64,
    warm_start: &ScalarField2D,
    bounds: Option<(f64, f64)>,
    cg_tol: f64,
    cg_maxiter: usize,
) -> Result<ScalarField2D> {
    let grid = warm_start.grid();
    let n = grid.n();
    let omega2 = omega * omega;
    let omega4 = omega2 * omega2;

    let mut weight = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut lap = vec![Complex64::new(0.0, 0.0); n];
    for ((us, ls), bs) in u.iter().zip(lambda).zip(b) {
        laplacian_into(grid, us.values(), stretch, &mut lap);
        for k in 0..n {
            let uv = stretch.mass[k] * us.values()[k];
            weight[k] += uv.norm_sqr();
            let c = mu * (bs.values()[k] - lap[k]) + ls.values()[k];
            rhs[k] += omega2 * (uv.conj() * c).re;
        }
    }
    for w in &mut weight {
        *w *= mu * omega4;
    }

    let ctx = RegCtx::new(p);
    let mut scratch = RegScratch::new(grid);
    let mut ltl = vec![0.0; n];
    let mut m = warm_start.clone();
    {
        let apply = |x: &[f64], y: &mut [f64]| {
            ctx.normal_apply_into(x, &mut scratch, &mut ltl);
            for k in 0..n {
                y[k] = weight[k] * x[k] + alpha * ltl[k];
            }
        };
        cg::solve_spd(apply, &rhs, m.values_mut(), cg_tol, cg_maxiter)?;
    }
    if let Some((lo, hi)) = bounds {
        m.clamp_values(lo, hi);
    }
    Ok(m)
}

/// Per-frequency immutable inputs to the iteration.
pub struct AdmmContext<'a> {
    pub cycle: usize,
    pub freq_hz: f64,
    pub omega: f64,
    pub mu: f64,
    pub alpha: f64,
    pub b: &'a [ComplexField2D],
    pub data: &'a [Vec<Complex64>],
    pub receivers: &'a [usize],
    /// Damping-profile reference velocity, pinned at the start of the run so
    /// the absorbing layer does not drift with the model.
    pub c_ref: f64,
    /// True model cropped to the physical interior, for the history metric.
    pub m_true_interior: Option<&'a ScalarField2D>,
    pub npml: usize,
}

/// One sweep of the six update steps, in order: tilt, weights, wavefields,
/// model, wave-equation multipliers, tilt multiplier. The state is committed
/// only after every step succeeds.
pub fn admm_iteration(
    state: &mut InversionState,
    ctx: &AdmmContext,
    cfg: &FwiConfig,
) -> Result<()> {
    let grid = state.m.grid();

    // tilt step; the penalty is tilt-independent under forced isotropy
    let (theta_new, mut aug_new) = if cfg.sigma_mode.is_isotropic() {
        (state.p.theta().clone(), state.theta_aug.clone())
    } else {
        theta_update(&state.m, &state.p, &state.theta_aug, cfg.cg_tol, cfg.cg_maxiter)?
    };

    // weight step
    let sigma_new = match cfg.sigma_mode {
        SigmaMode::Isotropic | SigmaMode::Fixed(_) => state.p.sigma().clone(),
        SigmaMode::Adaptive => sigma_update(&state.m, &theta_new)?,
    };
    let p_new = AnisoParams::new(theta_new.clone(), sigma_new)?;

    // wavefield step: one normal-matrix factorization shared by all sources
    let sys = assemble_with_reference(&state.m, ctx.omega, &cfg.pml, ctx.c_ref)?;
    let solver = WavefieldSolver::new(&sys, ctx.receivers, ctx.mu)?;
    let u_new = solver.u_update_many(ctx.data, &state.lambda, ctx.b)?;

    // model step
    let m_new = m_update(
        &u_new,
        &state.lambda,
        ctx.b,
        &p_new,
        sys.stretch(),
        ctx.omega,
        ctx.mu,
        ctx.alpha,
        &state.m,
        cfg.m_bounds,
        cfg.cg_tol,
        cfg.cg_maxiter,
    )?;

    // wave-equation multipliers against the updated model (same stretch)
    let omega2 = ctx.omega * ctx.omega;
    let mut lap = vec![Complex64::new(0.0, 0.0); grid.n()];
    let mut lambda_new = Vec::with_capacity(state.lambda.len());
    let mut waveeq_residual = 0.0;
    for ((us, bs), ls) in u_new.iter().zip(ctx.b).zip(&state.lambda) {
        laplacian_into(grid, us.values(), sys.stretch(), &mut lap);
        let mut l = ls.clone();
        let mut acc = 0.0;
        for k in 0..grid.n() {
            let r = omega2 * m_new.values()[k] * sys.stretch().mass[k] * us.values()[k] + lap[k]
                - bs.values()[k];
            acc += r.norm_sqr();
            l.values_mut()[k] -= ctx.mu * r;
        }
        waveeq_residual += acc.sqrt();
        lambda_new.push(l);
    }

    // tilt multiplier
    aug_new.update_multiplier(&theta_new);

    // metrics
    let mut data_residual = 0.0;
    for (us, ds) in u_new.iter().zip(ctx.data) {
        let mut acc = 0.0;
        for (&r, &dv) in ctx.receivers.iter().zip(ds) {
            acc += (us.values()[r] - dv).norm_sqr();
        }
        data_residual += acc.sqrt();
    }
    let rel_err = match ctx.m_true_interior {
        Some(mt) => relative_error(&m_new.crop(ctx.npml)?, mt)?,
        None => f64::NAN,
    };
    let row = HistoryRow {
        iteration: state.history.len() + 1,
        cycle: ctx.cycle,
        freq_hz: ctx.freq_hz,
        relative_error: rel_err,
        data_residual,
        waveeq_residual,
        reg_value: crate::regularizer::reg_value(&m_new, &p_new),
    };

    state.m = m_new;
    state.p = p_new;
    state.u = u_new;
    state.lambda = lambda_new;
    state.theta_aug = aug_new;
    state.history.push(row);
    Ok(())
}

/// Multiscale driver: cycles run low to high frequency, the model and the
/// tilt/weight fields warm-start across frequencies and cycles, and the
/// wave-equation multipliers reset at every new frequency.
pub fn continuation_driver(
    m0: &ScalarField2D,
    acq: &Acquisition,
    data: &DataTable,
    cfg: &FwiConfig,
    m_true: Option<&ScalarField2D>,
    mut on_cycle_end: impl FnMut(usize, &InversionState) -> Result<()>,
) -> Result<(ScalarField2D, InversionState)> {
    cfg.validate()?;
    let grid = m0.grid();
    acq.validate(grid, &cfg.pml)?;
    if data.n_src != acq.sources.len()
        || data.n_rec != acq.receivers.len()
        || data.n_freq != acq.frequencies_hz.len()
    {
        return Err(CoreError::ShapeMismatch {
            expected: format!(
                "data table {}x{}x{}",
                acq.frequencies_hz.len(),
                acq.sources.len(),
                acq.receivers.len()
            ),
            got: format!("{}x{}x{}", data.n_freq, data.n_src, data.n_rec),
        });
    }
    let m_true_interior = match m_true {
        Some(mt) => Some(mt.crop(cfg.pml.npml)?),
        None => None,
    };
    let receivers = acq.receiver_flat_indices(grid);
    let n_src = acq.sources.len();

    // penalty scale from the initial operator at the first inverted frequency
    let c_ref = mean_velocity(m0);
    let f_first = cfg.cycles[0].f_min_hz;
    let omega_first = 2.0 * std::f64::consts::PI * f_first;
    let mu = cfg.mu0
        / assemble_with_reference(m0, omega_first, &cfg.pml, c_ref)?
            .matrix()
            .norm1();

    let theta0 = if cfg.sigma_mode.is_isotropic() {
        ScalarField2D::zeros(grid)
    } else {
        theta_init(m0, 3)
    };
    let sigma0 = match cfg.sigma_mode {
        SigmaMode::Fixed(v) => ScalarField2D::constant(grid, v),
        _ => ScalarField2D::constant(grid, 0.5),
    };
    let theta_aug = ThetaAugState::new(&theta0, cfg.tau, cfg.beta)?;
    let mut state = InversionState {
        m: m0.clone(),
        p: AnisoParams::new(theta0, sigma0)?,
        u: vec![ComplexField2D::zeros(grid); n_src],
        lambda: vec![ComplexField2D::zeros(grid); n_src],
        theta_aug,
        history: Vec::new(),
    };

    for (cycle, band) in cfg.cycles.iter().enumerate() {
        let alpha = cfg.alpha.for_cycle(cycle);
        for f_hz in band.frequencies() {
            let fi = acq.freq_index(f_hz).ok_or_else(|| CoreError::InvalidParam {
                name: "cycles",
                reason: format!("data does not cover frequency {f_hz} Hz"),
            })?;
            let b = build_sources(acq, grid, f_hz, cfg.f_peak_hz);
            let records: Vec<Vec<Complex64>> = (0..n_src)
                .map(|s| data.record(fi, s).to_vec())
                .collect();
            // wavefield multipliers restart at each frequency
            for l in &mut state.lambda {
                *l = ComplexField2D::zeros(grid);
            }
            let ctx = AdmmContext {
                cycle,
                freq_hz: f_hz,
                omega: 2.0 * std::f64::consts::PI * f_hz,
                mu,
                alpha,
                b: &b,
                data: &records,
                receivers: &receivers,
                c_ref,
                m_true_interior: m_true_interior.as_ref(),
                npml: cfg.pml.npml,
            };
            for _ in 0..cfg.iters_per_freq {
                admm_iteration(&mut state, &ctx, cfg)?;
            }
        }
        on_cycle_end(cycle, &state)?;
    }
    let m_final = state.m.clone();
    Ok((m_final, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::helmholtz::{assemble, point_source, Source};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn small_pml() -> Pml {
        Pml {
            npml: 8,
            power: 2.0,
            r_coeff: 1e-4,
        }
    }

    fn two_layer_model(grid: Grid2D, v_top: f64, v_bot: f64) -> ScalarField2D {
        let (_, lz) = grid.extent();
        ScalarField2D::from_fn(grid, |_, z| {
            let v = if z < 0.5 * lz { v_top } else { v_bot };
            1.0 / (v * v)
        })
    }

    #[test]
    fn relative_error_basics() {
        let grid = Grid2D::new(5, 5, 1.0, 1.0).unwrap();
        let m = ScalarField2D::constant(grid, 2.0);
        assert_eq!(relative_error(&m, &m).unwrap(), 0.0);
        let double = m.map(|v| 2.0 * v);
        assert!((relative_error(&double, &m).unwrap() - 100.0).abs() < 1e-12);
        let zero = ScalarField2D::zeros(grid);
        assert!((relative_error(&zero, &m).unwrap() - 100.0).abs() < 1e-12);
        assert!(relative_error(&m, &zero).is_err());
    }

    #[test]
    fn freq_band_enumeration() {
        let band = FreqBand {
            f_min_hz: 3.0,
            f_max_hz: 8.0,
            f_step_hz: 1.0,
        };
        assert_eq!(band.frequencies(), vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let half = FreqBand {
            f_min_hz: 3.0,
            f_max_hz: 4.5,
            f_step_hz: 0.5,
        };
        assert_eq!(half.frequencies().len(), 4);
    }

    #[test]
    fn u_update_with_no_receivers_is_a_plain_solve() {
        let grid = Grid2D::new(30, 28, 10.0, 10.0).unwrap();
        let m = two_layer_model(grid, 1800.0, 2200.0);
        let omega = 2.0 * std::f64::consts::PI * 6.0;
        let pml = small_pml();
        let mut sys = assemble(&m, omega, &pml).unwrap();
        sys.factorize().unwrap();
        let b = point_source(grid, 14, 12, Complex64::new(1.0, 0.0));
        let direct = sys.solve(&b).unwrap();

        let receivers: Vec<usize> = vec![];
        let solver = WavefieldSolver::new(&sys, &receivers, 3.7).unwrap();
        let u = solver
            .u_update(&[], &ComplexField2D::zeros(grid), &b)
            .unwrap();
        let err = u.sub(&direct).norm2() / direct.norm2();
        assert!(err <= 1e-8, "err {err:.3e}");
    }

    #[test]
    fn u_update_with_consistent_data_is_the_wave_equation_solution() {
        let grid = Grid2D::new(30, 28, 10.0, 10.0).unwrap();
        let m = two_layer_model(grid, 1800.0, 2200.0);
        let omega = 2.0 * std::f64::consts::PI * 5.0;
        let pml = small_pml();
        let mut sys = assemble(&m, omega, &pml).unwrap();
        sys.factorize().unwrap();
        let b = point_source(grid, 14, 12, Complex64::new(1.0, 0.0));
        let u_true = sys.solve(&b).unwrap();
        let receivers: Vec<usize> = vec![grid.idx(10, 10), grid.idx(20, 11), grid.idx(15, 14)];
        let d: Vec<Complex64> = receivers.iter().map(|&k| u_true.values()[k]).collect();

        let solver = WavefieldSolver::new(&sys, &receivers, 0.5).unwrap();
        let u = solver
            .u_update(&d, &ComplexField2D::zeros(grid), &b)
            .unwrap();
        let err = u.sub(&u_true).norm2() / u_true.norm2();
        assert!(err <= 1e-7, "feasible point not recovered: {err:.3e}");
    }

    #[test]
    fn u_update_large_mu_approaches_the_constrained_solve() {
        let grid = Grid2D::new(28, 26, 10.0, 10.0).unwrap();
        let m = two_layer_model(grid, 1700.0, 2100.0);
        let omega = 2.0 * std::f64::consts::PI * 5.0;
        let pml = small_pml();
        let mut sys = assemble(&m, omega, &pml).unwrap();
        sys.factorize().unwrap();
        let b = point_source(grid, 13, 12, Complex64::new(1.0, 0.0));
        let u_wave = sys.solve(&b).unwrap();
        let receivers: Vec<usize> = vec![grid.idx(10, 10), grid.idx(18, 13)];
        // inconsistent data pulls u away from the wave-equation solution
        let d: Vec<Complex64> = vec![Complex64::new(1.0, 1.0); receivers.len()];

        // Make the wave-equation curvature dominate the (unit) data curvature
        // by 1e8: mu * sigma_min(A)^2 = 1e8, with sigma_min estimated by
        // power iteration on A^{-1} A^{-H} through the factorization.
        let n = grid.n();
        let mut v: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new((k as f64 * 0.37).sin(), (k as f64 * 0.71).cos()))
            .collect();
        let mut inv_sv_sq = 0.0;
        for _ in 0..12 {
            let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= norm;
            }
            // A^{-H} v = conj(A^{-1} conj(v)) by complex symmetry
            let conj_v: Vec<Complex64> = v.iter().map(|x| x.conj()).collect();
            let w = sys.factorization().unwrap().solve(&conj_v);
            let w: Vec<Complex64> = w.iter().map(|x| x.conj()).collect();
            v = sys.factorization().unwrap().solve(&w);
            inv_sv_sq = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        }
        let mu = 1e8 * inv_sv_sq;
        let solver = WavefieldSolver::new(&sys, &receivers, mu).unwrap();
        let u = solver
            .u_update(&d, &ComplexField2D::zeros(grid), &b)
            .unwrap();
        let err = u.sub(&u_wave).norm2() / u_wave.norm2();
        assert!(err <= 1e-4, "mu-dominated update strayed: {err:.3e}");
    }

    #[test]
    fn m_update_matches_per_pixel_closed_form_without_regularization() {
        let grid = Grid2D::new(26, 24, 10.0, 10.0).unwrap();
        let m_star = two_layer_model(grid, 1800.0, 2300.0);
        let omega = 2.0 * std::f64::consts::PI * 6.0;
        let pml = small_pml();
        let mut sys = assemble(&m_star, omega, &pml).unwrap();
        sys.factorize().unwrap();
        let b = point_source(grid, 12, 11, Complex64::new(1.0, 0.0));
        let u = sys.solve(&b).unwrap();

        let p = AnisoParams::isotropic(grid);
        let warm = ScalarField2D::constant(grid, 2e-7);
        let lambda = ComplexField2D::zeros(grid);
        let m = m_update(
            std::slice::from_ref(&u),
            std::slice::from_ref(&lambda),
            std::slice::from_ref(&b),
            &p,
            sys.stretch(),
            omega,
            0.8,
            0.0,
            &warm,
            None,
            1e-12,
            50_000,
        )
        .unwrap();

        // closed form m_i = Re[conj(u_i)(b - Lap u)_i] / (omega^2 |u_i|^2),
        // checked on the interior where the layer's mass weight is one
        let mut lap = vec![Complex64::new(0.0, 0.0); grid.n()];
        laplacian_into(grid, u.values(), sys.stretch(), &mut lap);
        let umax = u.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut checked = 0;
        for j in pml.npml..grid.nz - pml.npml {
            for i in pml.npml..grid.nx - pml.npml {
                let k = grid.idx(i, j);
                let uk = u.values()[k];
                if uk.norm() <= 1e-6 * umax {
                    continue;
                }
                let closed =
                    (uk.conj() * (b.values()[k] - lap[k])).re / (omega * omega * uk.norm_sqr());
                assert!(
                    (m.values()[k] - closed).abs() <= 1e-8 * closed.abs().max(1e-12),
                    "k={k}: {} vs {closed}",
                    m.values()[k]
                );
                checked += 1;
            }
        }
        assert!(checked > 50);

        // and the inverse-crime consistency: u came from m_star, so the
        // update recovers m_star wherever the field is non-negligible (the
        // layer's mass weight cancels, so this holds on the whole grid)
        for k in 0..grid.n() {
            let uk = u.values()[k];
            if uk.norm() <= 1e-6 * umax {
                continue;
            }
            let rel = (m.values()[k] - m_star.values()[k]).abs() / m_star.values()[k];
            assert!(rel <= 1e-6, "k={k} rel={rel:.3e}");
        }
    }

    #[test]
    fn m_update_with_growing_alpha_flattens_the_model() {
        let grid = Grid2D::new(26, 24, 10.0, 10.0).unwrap();
        let m_star = two_layer_model(grid, 1700.0, 2400.0);
        let omega = 2.0 * std::f64::consts::PI * 5.0;
        let pml = small_pml();
        let mut sys = assemble(&m_star, omega, &pml).unwrap();
        sys.factorize().unwrap();
        let b = point_source(grid, 13, 12, Complex64::new(1.0, 0.0));
        let u = sys.solve(&b).unwrap();
        let p = AnisoParams::isotropic(grid);
        let warm = ScalarField2D::constant(grid, 2.5e-7);
        let lambda = ComplexField2D::zeros(grid);

        let variance = |m: &ScalarField2D| {
            let mean = m.mean();
            m.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        };
        let mut prev = f64::INFINITY;
        for alpha_exp in [-2.0f64, 0.0, 2.0, 4.0] {
            let alpha = 10f64.powf(alpha_exp) * 1e-10;
            let m = m_update(
                std::slice::from_ref(&u),
                std::slice::from_ref(&lambda),
                std::slice::from_ref(&b),
                &p,
                sys.stretch(),
                omega,
                1.0,
                alpha,
                &warm,
                None,
                1e-10,
                50_000,
            )
            .unwrap();
            let v = variance(&m);
            assert!(v <= prev * (1.0 + 1e-9), "variance rose: {v} after {prev}");
            prev = v;
        }
    }

    #[test]
    fn feasible_state_is_a_fixed_point_of_the_multiplier_update() {
        // data consistent with the current model and u = A^-1 b keeps the
        // wave-equation residual at zero, so multipliers stay zero
        let grid = Grid2D::new(28, 26, 10.0, 10.0).unwrap();
        let m = two_layer_model(grid, 1800.0, 2200.0);
        let pml = small_pml();
        let f_hz = 5.0;
        let omega = 2.0 * std::f64::consts::PI * f_hz;

        let acq = Acquisition {
            sources: vec![Source {
                ix: 14,
                iz: 10,
                amplitude: Complex64::new(1.0, 0.0),
            }],
            receivers: (10..18).map(|i| (i, 9)).collect(),
            frequencies_hz: vec![f_hz],
        };
        let data = crate::helmholtz::synthesize_data(&m, &acq, &pml, 10.0).unwrap();
        let receivers = acq.receiver_flat_indices(grid);
        let b = build_sources(&acq, grid, f_hz, 10.0);
        let records: Vec<Vec<Complex64>> = vec![data.record(0, 0).to_vec()];

        let cfg = FwiConfig {
            sigma_mode: SigmaMode::Isotropic,
            m_bounds: None,
            pml,
            ..Default::default()
        };
        let theta0 = ScalarField2D::zeros(grid);
        let mut state = InversionState {
            m: m.clone(),
            p: AnisoParams::isotropic(grid),
            u: vec![ComplexField2D::zeros(grid)],
            lambda: vec![ComplexField2D::zeros(grid)],
            theta_aug: ThetaAugState::new(&theta0, cfg.tau, cfg.beta).unwrap(),
            history: Vec::new(),
        };
        let ctx = AdmmContext {
            cycle: 0,
            freq_hz: f_hz,
            omega,
            mu: 1e-2
                / assemble_with_reference(&m, omega, &pml, mean_velocity(&m))
                    .unwrap()
                    .matrix()
                    .norm1(),
            alpha: 1e-12,
            b: &b,
            data: &records,
            receivers: &receivers,
            c_ref: mean_velocity(&m),
            m_true_interior: None,
            npml: pml.npml,
        };
        admm_iteration(&mut state, &ctx, &cfg).unwrap();
        let row = state.history[0];
        // wavefields reproduce the data and satisfy the wave equation, so the
        // multiplier increment mu * residual is negligible
        let lambda_norm = state.lambda[0].norm2();
        let u_norm = state.u[0].norm2();
        assert!(
            lambda_norm <= 1e-6 * ctx.mu * u_norm.max(1.0),
            "multiplier moved: {lambda_norm:.3e} (u norm {u_norm:.3e})"
        );
        assert!(row.data_residual <= 1e-8 * records[0].iter().map(|v| v.norm()).sum::<f64>());
        // isotropic mode leaves the tilt/weight fields untouched
        assert_eq!(state.p.theta().values(), ScalarField2D::zeros(grid).values());
        assert!(state.p.sigma().values().iter().all(|&s| s == 0.5));
    }
}
