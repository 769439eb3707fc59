mod common;

use common::*;
use dexc::ipm::pcg::pcg_solve;
use dexc::ipm::precond::{build_preconditioner, precond_apply_into};
use dexc::ipm::spectrum::spectrum_bound;
use dexc::projector::{estimate_rho, estimate_sigma_max, RayOperator};
use dexc::{AttenuationCoeffs, DualEnergyOperator, Geometry, ParallelBeamProjector, RegWeights};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn matrix_free_projector_matches_chord_assembly_at_16() {
    let geo = Geometry::parallel_beam(16, 65).unwrap();
    let p = ParallelBeamProjector::new(geo.clone());
    let dense = dense_projector(&geo);
    let mut cols = DMatrix::zeros(geo.n_rows(), geo.n_cols());
    let mut e = vec![0.0; geo.n_cols()];
    for j in 0..geo.n_cols() {
        e[j] = 1.0;
        cols.column_mut(j).copy_from_slice(&p.forward(&e));
        e[j] = 0.0;
    }
    assert!((cols - &dense).norm() <= 1e-12 * dense.norm());
}

#[test]
fn kronecker_eigenvalues_are_pairwise_products() {
    let geo = Geometry::parallel_beam(4, 9).unwrap();
    let a = dense_projector(&geo);
    let ata = a.transpose() * &a;
    let f = AttenuationCoeffs::default().f_low();
    let fm = DMatrix::from_row_slice(2, 2, &[f.a, f.b, f.b, f.d]);
    let kron = fm.kronecker(&ata);
    let mut got: Vec<f64> = kron.symmetric_eigenvalues().iter().copied().collect();
    let fe = fm.symmetric_eigenvalues();
    let ae = ata.clone().symmetric_eigenvalues();
    let mut want: Vec<f64> = fe
        .iter()
        .flat_map(|x| ae.iter().map(move |y| x * y))
        .collect();
    got.sort_by(f64::total_cmp);
    want.sort_by(f64::total_cmp);
    let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-8 * scale, "{g} vs {w}");
    }
}

#[test]
fn power_iteration_matches_dense_svd() {
    let geo = Geometry::parallel_beam(8, 65).unwrap();
    let p = ParallelBeamProjector::new(geo.clone());
    let svd = dense_projector(&geo).singular_values();
    let exact = svd.max();
    let est = estimate_sigma_max(&p, 1e-8);
    assert!((est - exact).abs() <= 1e-6 * exact, "{est} vs {exact}");
}

#[test]
fn rho_with_every_column_is_mean_diagonal() {
    let geo = Geometry::parallel_beam(8, 65).unwrap();
    let p = ParallelBeamProjector::new(geo.clone());
    let a = dense_projector(&geo);
    let ata = a.transpose() * &a;
    let mean = ata.diagonal().mean();
    let rho = estimate_rho(&p, 64, 0);
    assert!((rho - mean).abs() <= 1e-12 * mean);
}

#[test]
fn pcg_matches_dense_factorization() {
    let geo = Geometry::parallel_beam(8, 65).unwrap();
    let op = shared_operator(&geo);
    let w = RegWeights::new(5.0, 4.0).unwrap();
    let c = AttenuationCoeffs::default();
    let mut r = rng(2);
    let g: Vec<f64> = (0..op.dim()).map(|_| 0.01 + r.random::<f64>()).collect();
    let s: Vec<f64> = (0..op.dim()).map(|_| 0.01 + r.random::<f64>()).collect();
    let rhs = gaussian_vec(&mut r, op.dim());

    let mut m = dense_q(
        &dense_dual(&c, &dense_projector(&geo), &dense_projector(&geo)),
        &w,
    );
    for j in 0..op.dim() {
        m[(j, j)] += s[j] / g[j];
    }
    let exact = m
        .cholesky()
        .unwrap()
        .solve(&DVector::from_column_slice(&rhs));

    let rho = estimate_rho(op.low().as_ref(), 64, 0);
    let p = build_preconditioner(&g, &s, &c, &w, rho, rho).unwrap();
    let matvec = |v: &[f64], out: &mut [f64]| {
        op.apply_q_into(&w, v, out);
        for j in 0..v.len() {
            out[j] += s[j] / g[j] * v[j];
        }
    };
    let (x, iters) = pcg_solve(
        matvec,
        &rhs,
        |y, z| precond_apply_into(&p, y, z),
        1e-12,
        5000,
    )
    .unwrap();
    assert!(iters < 5000);
    assert!(rel_diff(&x, exact.as_slice()) <= 1e-8);
}

/// Eigenvalues of `P⁻¹M` through the symmetric form `L⁻¹ M L⁻ᵀ`.
fn preconditioned_spectrum(
    m: &DMatrix<f64>,
    p: &dexc::ipm::precond::PrecondDiagonals,
) -> (f64, f64) {
    let dim = m.nrows();
    let n = dim / 2;
    let mut pm = DMatrix::zeros(dim, dim);
    for i in 0..n {
        pm[(i, i)] = p.d11[i];
        pm[(i, n + i)] = p.d12[i];
        pm[(n + i, i)] = p.d12[i];
        pm[(n + i, n + i)] = p.d22[i];
    }
    let l = pm.cholesky().unwrap().l();
    let li = l.try_inverse().unwrap();
    let c = &li * m * li.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let e = c.symmetric_eigenvalues();
    (e.min(), e.max())
}

#[test]
fn spectrum_bound_holds_for_distinct_operators() {
    let c = AttenuationCoeffs::default();
    let full = Geometry::parallel_beam(8, 30).unwrap();
    let gl = full.select_angles(|i| i % 2 == 0).unwrap();
    let gh = full.select_angles(|i| i % 2 == 1).unwrap();
    let op = DualEnergyOperator::from_geometries(c, &gl, &gh).unwrap();
    let (al, ah) = (dense_projector(&gl), dense_projector(&gh));
    let sl = al.clone().singular_values().max();
    let sh = ah.clone().singular_values().max();
    let rl = estimate_rho(op.low().as_ref(), 64, 0);
    let rh = estimate_rho(op.high().as_ref(), 64, 0);
    let q0 = dense_dual(&c, &al, &ah);
    let mut r = rng(4);
    for (a, b) in [(500.0, 250.0), (1.0, 0.8), (10.0, 0.0)] {
        let w = RegWeights::new(a, b).unwrap();
        let q = dense_q(&q0, &w);
        let (lo, hi) = spectrum_bound(&c, &w, rl, rh, sl, sh);
        for spread in [1e-4, 1.0, 1e4] {
            let g: Vec<f64> = (0..q.nrows())
                .map(|_| spread * (0.01 + r.random::<f64>()))
                .collect();
            let s: Vec<f64> = (0..q.nrows()).map(|_| 0.01 + r.random::<f64>()).collect();
            let mut m = q.clone();
            for j in 0..q.nrows() {
                m[(j, j)] += s[j] / g[j];
            }
            let p = build_preconditioner(&g, &s, &c, &w, rl, rh).unwrap();
            let (emin, emax) = preconditioned_spectrum(&m, &p);
            assert!(emin >= lo * (1.0 - 1e-9), "({a},{b}) {emin} < {lo}");
            assert!(emax <= hi * (1.0 + 1e-9), "({a},{b}) {emax} > {hi}");
        }
    }
}
