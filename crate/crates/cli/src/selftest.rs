//! Built-in verification suite: adjoint identities, closed-form oracles, and
//! solver contracts, printed one PASS/FAIL line per check. Exits nonzero on
//! any failure so it can gate installs and CI jobs.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use aniso_tik_core::grid::{
    gradient, gradient_adjoint, ComplexField2D, Grid2D, ScalarField2D,
};
use aniso_tik_core::helmholtz::{assemble, point_source, ricker_spectrum, Pml};
use aniso_tik_core::regularizer::{
    box_filter_5x5, optimal_sigma, reg_operator_adjoint, reg_operator_apply, reg_value, rotate,
    AnisoParams,
};

use crate::error::CliError;

struct Check {
    name: &'static str,
    run: fn() -> Result<f64, String>,
    bound: f64,
}

fn random_field(grid: Grid2D, rng: &mut ChaCha12Rng) -> ScalarField2D {
    let values = (0..grid.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ScalarField2D::new(grid, values).unwrap()
}

fn random_params(grid: Grid2D, rng: &mut ChaCha12Rng) -> AnisoParams {
    let theta = random_field(grid, rng).map(|v| v * 1.5);
    let sigma = random_field(grid, rng).map(|v| 0.5 * (v + 1.0));
    AnisoParams::new(theta, sigma).unwrap()
}

fn gradient_adjoint_identity() -> Result<f64, String> {
    let grid = Grid2D::new(17, 13, 0.7, 1.1).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = random_field(grid, &mut rng);
        let gx = random_field(grid, &mut rng);
        let gz = random_field(grid, &mut rng);
        let g = gradient(&m);
        let lhs = g.gx.dot(&gx) + g.gz.dot(&gz);
        let rhs = m.dot(&gradient_adjoint(&aniso_tik_core::grid::GradientPair { gx, gz }));
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
    }
    Ok(worst)
}

fn reg_adjoint_identity() -> Result<f64, String> {
    let grid = Grid2D::new(14, 11, 0.9, 0.8).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = random_field(grid, &mut rng);
        let p = random_params(grid, &mut rng);
        let y: Vec<f64> = (0..2 * grid.n())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let lm = reg_operator_apply(&m, &p);
        let lty = reg_operator_adjoint(&y, &p).map_err(|e| e.to_string())?;
        let lhs: f64 = lm.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs = m.dot(&lty);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
    }
    Ok(worst)
}

fn rotation_orthogonality() -> Result<f64, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t: f64 = rng.random_range(-10.0..10.0);
        let (s, c) = t.sin_cos();
        worst = worst.max((c * c + s * s - 1.0).abs());
        let g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let r = rotate(t, g);
        let n_in = (g[0] * g[0] + g[1] * g[1]).sqrt();
        let n_out = (r[0] * r[0] + r[1] * r[1]).sqrt();
        worst = worst.max((n_in - n_out).abs() / n_in.max(1e-300));
    }
    Ok(worst)
}

fn isotropic_reduction() -> Result<f64, String> {
    let grid = Grid2D::new(16, 12, 1.0, 1.0).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = random_field(grid, &mut rng);
        let theta = random_field(grid, &mut rng).map(|v| v * 1.5);
        let p = AnisoParams::new(theta, ScalarField2D::constant(grid, 0.5)).unwrap();
        let g = gradient(&m);
        let iso: f64 = 0.5
            * g.gx
                .values()
                .iter()
                .zip(g.gz.values())
                .map(|(a, b)| a * a + b * b)
                .sum::<f64>();
        let rv = reg_value(&m, &p);
        worst = worst.max((rv - 0.25 * iso).abs() / (0.25 * iso).max(1e-300));
    }
    Ok(worst)
}

fn pi_periodicity() -> Result<f64, String> {
    let grid = Grid2D::new(12, 14, 1.0, 1.0).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(105);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = random_field(grid, &mut rng);
        let p = random_params(grid, &mut rng);
        let shifted =
            AnisoParams::new(p.theta().map(|t| t + std::f64::consts::PI), p.sigma().clone())
                .unwrap();
        let a = reg_value(&m, &p);
        let b = reg_value(&m, &shifted);
        worst = worst.max((a - b).abs() / a.max(1e-300));
    }
    Ok(worst)
}

fn sigma_closed_form() -> Result<f64, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(106);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let gx: f64 = rng.random_range(-2.0..2.0);
        let gz: f64 = rng.random_range(-2.0..2.0);
        let s = optimal_sigma(gx, gz);
        let mut best = (f64::INFINITY, 0.5);
        for k in 0..=10_000 {
            let c = k as f64 * 1e-4;
            let f = (c * gx).powi(2) + ((1.0 - c) * gz).powi(2);
            if f < best.0 {
                best = (f, c);
            }
        }
        worst = worst.max((s - best.1).abs());
    }
    Ok(worst)
}

fn tilt_jacobian_fd() -> Result<f64, String> {
    let mut rng = ChaCha12Rng::seed_from_u64(107);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t: f64 = rng.random_range(-1.5..1.5);
        let gx: f64 = rng.random_range(-2.0..2.0);
        let gz: f64 = rng.random_range(-2.0..2.0);
        let w: f64 = rng.random_range(0.0..1.0);
        let r = |t: f64| {
            let rr = rotate(t, [gx, gz]);
            [w * rr[0], (1.0 - w) * rr[1]]
        };
        let (s, c) = t.sin_cos();
        let j = [w * (-s * gx + c * gz), (1.0 - w) * (-c * gx - s * gz)];
        let (rp, rm) = (r(t + h), r(t - h));
        let fd = [(rp[0] - rm[0]) / (2.0 * h), (rp[1] - rm[1]) / (2.0 * h)];
        let scale = (j[0] * j[0] + j[1] * j[1]).sqrt().max(1e-9);
        worst =
            worst.max(((fd[0] - j[0]).powi(2) + (fd[1] - j[1]).powi(2)).sqrt() / scale);
    }
    Ok(worst)
}

fn box_filter_oracle() -> Result<f64, String> {
    let grid = Grid2D::new(13, 9, 1.0, 1.0).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(108);
    let f = random_field(grid, &mut rng);
    let filtered = box_filter_5x5(&f).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for j in 0..grid.nz as isize {
        for i in 0..grid.nx as isize {
            let mut acc = 0.0;
            for dj in -2..=2 {
                let jj = (j + dj).clamp(0, grid.nz as isize - 1) as usize;
                for di in -2..=2 {
                    let ii = (i + di).clamp(0, grid.nx as isize - 1) as usize;
                    acc += f.at(ii, jj);
                }
            }
            worst = worst.max((filtered.at(i as usize, j as usize) - acc / 25.0).abs());
        }
    }
    Ok(worst)
}

fn helmholtz_operator_consistency() -> Result<f64, String> {
    let grid = Grid2D::new(30, 26, 12.0, 12.0).unwrap();
    let m = ScalarField2D::constant(grid, 1.0 / (1900.0 * 1900.0));
    let pml = Pml {
        npml: 8,
        power: 2.0,
        r_coeff: 1e-4,
    };
    let omega = 2.0 * std::f64::consts::PI * 5.0;
    let sys = assemble(&m, omega, &pml).map_err(|e| e.to_string())?;
    let mut rng = ChaCha12Rng::seed_from_u64(109);
    let mut u = ComplexField2D::zeros(grid);
    for v in u.values_mut() {
        *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    let free = sys.apply(&u);
    let mut assembled = vec![Complex64::new(0.0, 0.0); grid.n()];
    sys.matrix().matvec(u.values(), &mut assembled);
    let num: f64 = free
        .values()
        .iter()
        .zip(&assembled)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(num / free.norm2().max(1e-300))
}

fn direct_solve_residual() -> Result<f64, String> {
    let grid = Grid2D::new(30, 28, 12.0, 12.0).unwrap();
    let m = ScalarField2D::from_fn(grid, |x, z| {
        let v = 1700.0 + 0.5 * z + 10.0 * (x / 90.0).sin();
        1.0 / (v * v)
    });
    let pml = Pml {
        npml: 8,
        power: 2.0,
        r_coeff: 1e-4,
    };
    let omega = 2.0 * std::f64::consts::PI * 6.0;
    let mut sys = assemble(&m, omega, &pml).map_err(|e| e.to_string())?;
    sys.factorize().map_err(|e| e.to_string())?;
    let b = point_source(grid, 14, 13, Complex64::new(1.0, 0.0));
    let u = sys.solve(&b).map_err(|e| e.to_string())?;
    Ok(sys.apply(&u).sub(&b).norm2() / b.norm2())
}

fn reciprocity() -> Result<f64, String> {
    let grid = Grid2D::new(32, 30, 12.0, 12.0).unwrap();
    let m = ScalarField2D::from_fn(grid, |x, z| {
        let v = 1800.0 + 0.4 * z + 15.0 * (x / 80.0).cos();
        1.0 / (v * v)
    });
    let pml = Pml {
        npml: 8,
        power: 2.0,
        r_coeff: 1e-4,
    };
    let omega = 2.0 * std::f64::consts::PI * 6.0;
    let mut sys = assemble(&m, omega, &pml).map_err(|e| e.to_string())?;
    sys.factorize().map_err(|e| e.to_string())?;
    let amp = Complex64::new(1.0, 0.0);
    let (p, q) = ((11, 12), (20, 17));
    let u_p = sys.solve(&point_source(grid, p.0, p.1, amp)).map_err(|e| e.to_string())?;
    let u_q = sys.solve(&point_source(grid, q.0, q.1, amp)).map_err(|e| e.to_string())?;
    let a = u_p.at(q.0, q.1);
    let b = u_q.at(p.0, p.1);
    Ok((a - b).norm() / a.norm())
}

fn ricker_peak_location() -> Result<f64, String> {
    let f_peak = 10.0;
    let mut best = (0.0f64, 0.0f64);
    for k in 1..40_000 {
        let f = k as f64 * 1e-3;
        let w = ricker_spectrum(f_peak, f).re;
        if w > best.1 {
            best = (f, w);
        }
    }
    Ok((best.0 - f_peak).abs())
}

/// Runs every check, printing one line each; returns an error when any fails.
pub fn run_all() -> Result<(), CliError> {
    let checks: Vec<Check> = vec![
        Check {
            name: "gradient adjoint identity",
            run: gradient_adjoint_identity,
            bound: 1e-12,
        },
        Check {
            name: "regularizer adjoint identity",
            run: reg_adjoint_identity,
            bound: 1e-12,
        },
        Check {
            name: "rotation orthogonality",
            run: rotation_orthogonality,
            bound: 1e-14,
        },
        Check {
            name: "isotropic reduction (sigma = 0.5)",
            run: isotropic_reduction,
            bound: 1e-12,
        },
        Check {
            name: "penalty pi-periodicity in tilt",
            run: pi_periodicity,
            bound: 1e-12,
        },
        Check {
            name: "weight closed form vs grid search",
            run: sigma_closed_form,
            bound: 1e-3,
        },
        Check {
            name: "tilt Jacobian vs finite differences",
            run: tilt_jacobian_fd,
            bound: 1e-6,
        },
        Check {
            name: "box filter vs direct convolution",
            run: box_filter_oracle,
            bound: 0.0,
        },
        Check {
            name: "assembled operator vs matrix-free",
            run: helmholtz_operator_consistency,
            bound: 1e-13,
        },
        Check {
            name: "direct solve residual",
            run: direct_solve_residual,
            bound: 1e-10,
        },
        Check {
            name: "source-receiver reciprocity",
            run: reciprocity,
            bound: 1e-8,
        },
        Check {
            name: "source spectrum peak",
            run: ricker_peak_location,
            bound: 1e-3,
        },
    ];
    let total = checks.len();
    let mut failed = 0usize;
    for c in &checks {
        match (c.run)() {
            Ok(v) if v <= c.bound => {
                println!("PASS {:<42} {v:.3e} <= {:.0e}", c.name, c.bound);
            }
            Ok(v) => {
                failed += 1;
                println!("FAIL {:<42} {v:.3e} >  {:.0e}", c.name, c.bound);
            }
            Err(e) => {
                failed += 1;
                println!("FAIL {:<42} error: {e}", c.name);
            }
        }
    }
    if failed > 0 {
        return Err(CliError::SelftestFailed { failed, total });
    }
    println!("selftest: all {total} checks passed");
    Ok(())
}
