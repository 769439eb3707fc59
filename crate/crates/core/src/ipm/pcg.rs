//! Preconditioned conjugate gradients.

use crate::error::{Error, Result};
use crate::par::{dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgSettings {
    /// Stop once `√(rᵀP⁻¹r) ≤ rel_tol · reference`.
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Preconditioned norm the tolerance is relative to; defaults to that of
    /// the right-hand side.
    pub reference: Option<f64>,
    /// Additional requirement `‖r‖₂ ≤ cap` before the relative test may stop.
    pub residual_cap: Option<f64>,
    /// Stop as soon as `‖r‖₂ ≤ residual_cap`, ignoring the relative test.
    pub early_exit: bool,
}

impl PcgSettings {
    pub fn new(rel_tol: f64, max_iters: usize) -> Self {
        PcgSettings {
            rel_tol,
            max_iters,
            reference: None,
            residual_cap: None,
            early_exit: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// Final `‖r‖₂`.
    pub residual_norm: f64,
}

/// Solve `M x = rhs` starting from the contents of `x`.
///
/// `matvec(v, out)` computes `M v`; `precond(r, z)` solves `P z = r`.
/// Returns `PcgBreakdown` if a search direction has non-positive curvature.
pub fn pcg_solve_with(
    matvec: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    x: &mut [f64],
    settings: &PcgSettings,
) -> Result<PcgOutcome> {
    let n = rhs.len();
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];

    let reference = match settings.reference {
        Some(v) => v,
        None => {
            precond(rhs, &mut z);
            dot(rhs, &z).max(0.0).sqrt()
        }
    };
    if reference == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(PcgOutcome {
            iterations: 0,
            converged: true,
            residual_norm: 0.0,
        });
    }

    matvec(x, &mut q);
    for i in 0..n {
        r[i] = rhs[i] - q[i];
    }
    precond(&r, &mut z);
    let mut rz = dot(&r, &z);
    let mut p = z.clone();
    let cap = settings.residual_cap.unwrap_or(f64::INFINITY);

    let done = |rz: f64, r: &[f64]| {
        let rn = norm2(r);
        let rel_ok = rz.max(0.0).sqrt() <= settings.rel_tol * reference;
        (rel_ok && rn <= cap) || (settings.early_exit && rn <= cap)
    };

    let mut it = 0;
    while it < settings.max_iters {
        if done(rz, &r) {
            return Ok(PcgOutcome {
                iterations: it,
                converged: true,
                residual_norm: norm2(&r),
            });
        }
        matvec(&p, &mut q);
        let curvature = dot(&p, &q);
        if !(curvature > 0.0) {
            return Err(Error::PcgBreakdown {
                iteration: it,
                curvature,
            });
        }
        let step = rz / curvature;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * q[i];
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
    }
    Ok(PcgOutcome {
        iterations: it,
        converged: done(rz, &r),
        residual_norm: norm2(&r),
    })
}

/// Zero initial guess, relative tolerance only. Returns `(x, iterations)`.
pub fn pcg_solve(
    matvec: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    precond: impl Fn(&[f64], &mut [f64]),
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut x = vec![0.0; rhs.len()];
    let out = pcg_solve_with(
        matvec,
        precond,
        rhs,
        &mut x,
        &PcgSettings::new(tol, max_iters),
    )?;
    Ok((x, out.iterations))
}
