mod common;

use std::sync::Arc;

use common::*;
use dexc::ipm::{solve_qp, solve_tomography, IpmConfig, IpmState, TomographyQp};
use dexc::jtv::{jtv_solve_with, JtvConfig};
use dexc::projector::RayOperator;
use dexc::{
    AttenuationCoeffs, DualEnergyOperator, Geometry, ParallelBeamProjector, RegWeights, Sinogram,
    SinogramPair,
};

/// `A` with its columns relabelled: pixel `j` of the new ordering is pixel
/// `perm[j]` of the original.
struct Permuted {
    inner: ParallelBeamProjector,
    perm: Vec<usize>,
}

impl RayOperator for Permuted {
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    fn n_cols(&self) -> usize {
        self.inner.n_cols()
    }

    fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        let mut orig = vec![0.0; x.len()];
        for (j, &p) in self.perm.iter().enumerate() {
            orig[p] = x[j];
        }
        self.inner.forward_into(&orig, y);
    }

    fn adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        let orig = self.inner.adjoint(y);
        for (j, &p) in self.perm.iter().enumerate() {
            x[j] = orig[p];
        }
    }
}

#[test]
fn ipm_iterates_stay_positive_and_mu_decreases() {
    let hy = hy_problem(32);
    let w = RegWeights::new(500.0, 250.0).unwrap();
    let cfg = IpmConfig::default();
    let mut mus = Vec::new();
    let mut positive = true;
    let mut watch = |s: &IpmState| {
        positive &= s.g.iter().chain(&s.s).all(|v| *v > 0.0);
        mus.push(s.mu);
    };
    let (g, report) = solve_tomography(&hy.op, &hy.m, &w, &cfg, Some(&mut watch)).unwrap();
    assert!(report.converged);
    assert!(positive);
    assert!(g.stacked().iter().all(|v| *v > 0.0));
    for pair in mus.windows(2) {
        assert!(pair[1] <= 1.05 * pair[0], "{pair:?}");
    }
}

#[test]
fn ipm_output_is_complementary() {
    let hy = hy_problem(16);
    let w = RegWeights::new(150.0, 120.0).unwrap();
    let cfg = IpmConfig::default();
    let qp = TomographyQp::new(&hy.op, &hy.m, w, cfg.rho_samples, cfg.seed).unwrap();
    let out = solve_qp(&qp, &cfg, None).unwrap();
    assert!(out.report.converged);
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let bound = cfg.tol.sqrt() * (1.0 + inf(&out.g) + inf(&out.s));
    for (g, s) in out.g.iter().zip(&out.s) {
        assert!(g.min(*s) <= bound);
    }
}

#[test]
fn hy_at_64_converges_within_iteration_budget() {
    let hy = hy_problem(64);
    let w = RegWeights::new(500.0, 250.0).unwrap();
    let (_, report) = solve_tomography(&hy.op, &hy.m, &w, &IpmConfig::default(), None).unwrap();
    assert!(report.converged);
    assert!(report.iterations <= 48, "{} iterations", report.iterations);
    assert!(report.final_mu < 1e-8 && report.final_dual_residual < 1e-8);
}

#[test]
fn ipm_is_invariant_to_pixel_relabelling() {
    let n = 8;
    let geo = Geometry::parallel_beam(n, 65).unwrap();
    let hy = hy_problem(n);
    let c = AttenuationCoeffs::default();
    // A fixed scramble of the pixel indices.
    let perm: Vec<usize> = (0..n * n).map(|j| (j * 37 + 11) % (n * n)).collect();
    let permuted: Arc<dyn RayOperator> = Arc::new(Permuted {
        inner: ParallelBeamProjector::new(geo.clone()),
        perm: perm.clone(),
    });
    let op_p = DualEnergyOperator::shared(c, permuted).unwrap();
    let cfg = IpmConfig {
        rho_samples: Some(n * n),
        ..IpmConfig::default()
    };
    let w = RegWeights::new(50.0, 40.0).unwrap();
    let (g, _) = solve_tomography(&hy.op, &hy.m, &w, &cfg, None).unwrap();
    let (gp, _) = solve_tomography(&op_p, &hy.m, &w, &cfg, None).unwrap();
    let mut back = vec![0.0; 2 * n * n];
    for (j, &p) in perm.iter().enumerate() {
        back[p] = gp.g1()[j];
        back[n * n + p] = gp.g2()[j];
    }
    assert!(rel_diff(&back, g.stacked()) <= 1e-6);
}

#[test]
fn alternating_energy_geometry_solves() {
    let n = 16;
    let full = Geometry::parallel_beam(n, 65).unwrap();
    let gl = full.select_angles(|i| i % 2 == 0).unwrap();
    let gh = full.select_angles(|i| i % 2 == 1).unwrap();
    let c = AttenuationCoeffs::default();
    let op = DualEnergyOperator::from_geometries(c, &gl, &gh).unwrap();
    assert!(!op.is_shared());
    let truth = hy_problem(n).phantom;
    let (ml, mh) = op.forward(truth.stacked());
    let m = SinogramPair {
        low: Sinogram::for_geometry(&gl, ml).unwrap(),
        high: Sinogram::for_geometry(&gh, mh).unwrap(),
    };
    let w = RegWeights::new(1.0, 0.8).unwrap();
    let (g, report) = solve_tomography(&op, &m, &w, &IpmConfig::default(), None).unwrap();
    assert!(report.converged);
    assert_ne!(report.rho_low, report.rho_high);
    assert!(rel_diff(g.stacked(), truth.stacked()) < 0.5);
}

#[test]
fn jtv_stays_nonnegative_and_descends() {
    let hy = hy_problem(32);
    let cfg = JtvConfig {
        n_iters: 150,
        ..JtvConfig::default()
    };
    let (g, report) = jtv_solve_with(&hy.op, &hy.m, &cfg).unwrap();
    assert!(g.stacked().iter().all(|v| *v >= 0.0));
    assert_eq!(report.records.len(), 151);
    for pair in report.records.windows(2) {
        assert!(pair[1].objective <= pair[0].objective);
    }
}

#[test]
fn execution_policies_agree_bitwise() {
    let geo = Geometry::parallel_beam(24, 65).unwrap();
    let hy = hy_problem(24);
    let c = AttenuationCoeffs::default();
    let w = RegWeights::new(500.0, 250.0).unwrap();
    let mut outs = Vec::new();
    for exec in [dexc::Execution::Sequential, dexc::Execution::Parallel] {
        let p = Arc::new(ParallelBeamProjector::with_execution(geo.clone(), exec));
        let op = DualEnergyOperator::shared(c, p).unwrap();
        outs.push(
            solve_tomography(&op, &hy.m, &w, &IpmConfig::default(), None)
                .unwrap()
                .0,
        );
    }
    assert_eq!(outs[0], outs[1]);
}
