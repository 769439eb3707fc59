#![allow(dead_code)]

use std::sync::Arc;

use dexc::geometry::cos_sin_deg;
use dexc::phantoms::{generate, PhantomKind, PhantomSpec};
use dexc::simulate::{simulate_measurement, SimulationParams};
use dexc::{
    AttenuationCoeffs, DualEnergyOperator, Geometry, ImagePair, ParallelBeamProjector, RegWeights,
    SinogramPair,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Length of the line `p·(c,s) = t` inside `[x0,x1]×[y0,y1]`, by slab clipping.
pub fn chord_in_box(c: f64, s: f64, t: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let (px, py, dx, dy) = (t * c, t * s, -s, c);
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (p, d, a, b) in [(px, dx, x0, x1), (py, dy, y0, y1)] {
        if d.abs() < 1e-15 {
            if p < a || p >= b {
                return 0.0;
            }
        } else {
            let (u, v) = ((a - p) / d, (b - p) / d);
            lo = lo.max(u.min(v));
            hi = hi.min(u.max(v));
        }
    }
    (hi - lo).max(0.0)
}

/// System matrix assembled pixel by pixel, independently of the ray tracer.
pub fn dense_projector(geo: &Geometry) -> DMatrix<f64> {
    let n = geo.n_pixels();
    let half = 0.5 * geo.pixel_size();
    let mut a = DMatrix::zeros(geo.n_rows(), geo.n_cols());
    for (p, &angle) in geo.angles_deg().iter().enumerate() {
        let (c, s) = cos_sin_deg(angle);
        for d in 0..geo.n_detectors() {
            let t = geo.detector_offset(d);
            for r in 0..n {
                for col in 0..n {
                    let (cx, cy) = geo.pixel_center(r, col);
                    a[(p * geo.n_detectors() + d, r * n + col)] =
                        chord_in_box(c, s, t, cx - half, cx + half, cy - half, cy + half);
                }
            }
        }
    }
    a
}

/// `[[c11 A_L, c12 A_L], [c21 A_H, c22 A_H]]`.
pub fn dense_dual(c: &AttenuationCoeffs, al: &DMatrix<f64>, ah: &DMatrix<f64>) -> DMatrix<f64> {
    let (ml, mh, n2) = (al.nrows(), ah.nrows(), al.ncols());
    let mut out = DMatrix::zeros(ml + mh, 2 * n2);
    out.view_mut((0, 0), (ml, n2)).copy_from(&(al * c.c11));
    out.view_mut((0, n2), (ml, n2)).copy_from(&(al * c.c12));
    out.view_mut((ml, 0), (mh, n2)).copy_from(&(ah * c.c21));
    out.view_mut((ml, n2), (mh, n2)).copy_from(&(ah * c.c22));
    out
}

/// `𝒜ᵀ𝒜 + K ⊗ I`.
pub fn dense_q(big_a: &DMatrix<f64>, w: &RegWeights) -> DMatrix<f64> {
    let mut q = big_a.transpose() * big_a;
    let n2 = q.nrows() / 2;
    for i in 0..n2 {
        q[(i, i)] += w.alpha();
        q[(n2 + i, n2 + i)] += w.alpha();
        q[(i, n2 + i)] += w.beta();
        q[(n2 + i, i)] += w.beta();
    }
    q
}

/// Matrix of a linear map given by its action, column by column.
pub fn materialize(n: usize, apply: impl Fn(&[f64], &mut [f64])) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        apply(&e, &mut col);
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    m
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(1e-300);
            let v: f64 = rng.random();
            (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn shared_operator(geo: &Geometry) -> DualEnergyOperator {
    let proj = Arc::new(ParallelBeamProjector::new(geo.clone()));
    DualEnergyOperator::shared(AttenuationCoeffs::default(), proj).unwrap()
}

/// HY phantom at size `n`, 65 angles, 1% noise and a 45° rotation.
pub struct HyProblem {
    pub geo: Geometry,
    pub op: DualEnergyOperator,
    pub phantom: ImagePair,
    pub m: SinogramPair,
}

pub fn hy_problem(n: usize) -> HyProblem {
    let geo = Geometry::parallel_beam(n, 65).unwrap();
    let phantom = generate(&PhantomSpec::new(PhantomKind::Hy, n, 0)).unwrap();
    let m = simulate_measurement(
        &phantom,
        &AttenuationCoeffs::default(),
        &geo,
        &geo,
        &SimulationParams::default(),
    )
    .unwrap();
    HyProblem {
        op: shared_operator(&geo),
        geo,
        phantom,
        m,
    }
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
