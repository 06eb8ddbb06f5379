//! Conjugate gradient for symmetric positive (semi)definite systems.

use crate::error::{CoreError, Result};

/// Convergence record returned by [`solve_spd`].
#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iters: usize,
    pub rel_residual: f64,
}

/// Solves `A x = b` for SPD `A` given as a mat-vec closure, starting from the
/// contents of `x`. Converges when `||b - A x|| <= tol_rel * ||b||`.
pub fn solve_spd(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol_rel: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    assert_eq!(x.len(), n);
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgOutcome {
            iters: 0,
            rel_residual: 0.0,
        });
    }
    let target = tol_rel * b_norm;

    let mut r = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];

    apply(x, &mut r);
    for k in 0..n {
        r[k] = b[k] - r[k];
    }
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= target {
        return Ok(CgOutcome {
            iters: 0,
            rel_residual: rr.sqrt() / b_norm,
        });
    }
    p.copy_from_slice(&r);

    for iter in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // Round-off at convergence or a semidefinite direction; either way
            // the iteration cannot proceed.
            let rel = rr.sqrt() / b_norm;
            if rel <= tol_rel {
                return Ok(CgOutcome {
                    iters: iter - 1,
                    rel_residual: rel,
                });
            }
            return Err(CoreError::CgDidNotConverge {
                residual: rel,
                iters: iter - 1,
                target: tol_rel,
            });
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            return Ok(CgOutcome {
                iters: iter,
                rel_residual: rr_new.sqrt() / b_norm,
            });
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }

    Err(CoreError::CgDidNotConverge {
        residual: rr.sqrt() / b_norm,
        iters: max_iter,
        target: tol_rel,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
