//! Pencil-beam projector: exact ray/pixel intersection lengths.
//!
//! Each detector bin is sampled by one ray through the bin centre. Rays are
//! traced once through the pixel grid when the projector is built; forward and
//! adjoint applications then stream over the stored intersection lengths
//! (row-wise for the forward map, column-wise for the adjoint), so the system
//! matrix is never used in any other form and `AᵀA` is never formed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Result};
use crate::geometry::{cos_sin_deg, Geometry, Image, Sinogram};
use crate::par::{fill_indexed, Execution};

/// A linear map from an image (length `n_cols`) to measurements
/// (length `n_rows`), together with its exact transpose.
pub trait RayOperator: Send + Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn forward_into(&self, x: &[f64], y: &mut [f64]);
    fn adjoint_into(&self, y: &[f64], x: &mut [f64]);

    /// `‖A e_j‖²`, the j-th diagonal entry of `AᵀA`.
    fn column_norm_sq(&self, j: usize) -> f64 {
        let mut e = vec![0.0; self.n_cols()];
        e[j] = 1.0;
        let mut y = vec![0.0; self.n_rows()];
        self.forward_into(&e, &mut y);
        y.iter().map(|v| v * v).sum()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows()];
        self.forward_into(x, &mut y);
        y
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_cols()];
        self.adjoint_into(y, &mut x);
        x
    }
}

/// Walk one ray through the grid, calling `emit(pixel, length)` for every
/// pixel it crosses with positive length, in order along the ray.
///
/// The ray is the line `{p : p·(cos, sin) = offset}`. Breakpoints are the
/// crossings with the vertical and horizontal grid lines, merged in order;
/// each segment between consecutive breakpoints lies in one pixel.
pub fn trace_ray(geo: &Geometry, angle_deg: f64, offset: f64, mut emit: impl FnMut(usize, f64)) {
    let n = geo.n_pixels();
    let s = geo.pixel_size();
    let h = geo.half_width();
    let (c, sn) = cos_sin_deg(angle_deg);
    let (px, py) = (offset * c, offset * sn);
    let (dx, dy) = (-sn, c);

    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (p, d) in [(px, dx), (py, dy)] {
        if d == 0.0 {
            // Parallel to this axis: half-open extent [-h, h).
            if p < -h || p >= h {
                return;
            }
        } else {
            let a = (-h - p) / d;
            let b = (h - p) / d;
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    let min_len = 1e-12 * s;
    if hi - lo <= min_len {
        return;
    }

    let crossings = |p: f64, d: f64| -> Vec<f64> {
        if d == 0.0 {
            return Vec::new();
        }
        let mut out: Vec<f64> = (1..n)
            .map(|i| (-h + i as f64 * s - p) / d)
            .filter(|l| *l > lo && *l < hi)
            .collect();
        if d < 0.0 {
            out.reverse();
        }
        out
    };
    let xs = crossings(px, dx);
    let ys = crossings(py, dy);

    let mut prev = lo;
    let (mut i, mut j) = (0, 0);
    loop {
        let next = match (xs.get(i), ys.get(j)) {
            (Some(&a), Some(&b)) if a <= b => {
                i += 1;
                a
            }
            (Some(_), Some(&b)) => {
                j += 1;
                b
            }
            (Some(&a), None) => {
                i += 1;
                a
            }
            (None, Some(&b)) => {
                j += 1;
                b
            }
            (None, None) => hi,
        };
        let len = next - prev;
        if len > min_len {
            let mid = 0.5 * (prev + next);
            let mx = px + mid * dx;
            let my = py + mid * dy;
            let col = (((mx + h) / s).floor() as isize).clamp(0, n as isize - 1) as usize;
            let row = (((h - my) / s).floor() as isize).clamp(0, n as isize - 1) as usize;
            emit(row * n + col, len);
        }
        if next >= hi {
            break;
        }
        prev = next;
    }
}

/// Parallel-beam projector over a [`Geometry`].
#[derive(Debug, Clone)]
pub struct ParallelBeamProjector {
    geometry: Geometry,
    exec: Execution,
    // Row-major (ray-major) intersection lengths.
    row_ptr: Vec<usize>,
    row_pix: Vec<u32>,
    row_len: Vec<f64>,
    // Same entries grouped by pixel, rays ascending.
    col_ptr: Vec<usize>,
    col_ray: Vec<u32>,
    col_len: Vec<f64>,
}

impl ParallelBeamProjector {
    pub fn new(geometry: Geometry) -> Self {
        Self::with_execution(geometry, Execution::default())
    }

    pub fn with_execution(geometry: Geometry, exec: Execution) -> Self {
        let r0 = geometry.n_detectors();
        let per_angle: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> =
            crate::par::map_items(exec, geometry.angles_deg(), |&angle| {
                let mut counts = Vec::with_capacity(r0);
                let mut pix = Vec::new();
                let mut len = Vec::new();
                for d in 0..r0 {
                    let before = pix.len();
                    trace_ray(&geometry, angle, geometry.detector_offset(d), |p, l| {
                        pix.push(p as u32);
                        len.push(l);
                    });
                    counts.push(pix.len() - before);
                }
                (counts, pix, len)
            });

        let mut row_ptr = Vec::with_capacity(geometry.n_rows() + 1);
        row_ptr.push(0);
        let nnz: usize = per_angle.iter().map(|(_, p, _)| p.len()).sum();
        let mut row_pix = Vec::with_capacity(nnz);
        let mut row_len = Vec::with_capacity(nnz);
        for (counts, pix, len) in per_angle {
            for c in counts {
                row_ptr.push(row_ptr.last().unwrap() + c);
            }
            row_pix.extend(pix);
            row_len.extend(len);
        }

        let n_cols = geometry.n_cols();
        let mut col_ptr = vec![0usize; n_cols + 1];
        for &p in &row_pix {
            col_ptr[p as usize + 1] += 1;
        }
        for j in 0..n_cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut fill = col_ptr.clone();
        let mut col_ray = vec![0u32; nnz];
        let mut col_len = vec![0.0; nnz];
        for ray in 0..geometry.n_rows() {
            for k in row_ptr[ray]..row_ptr[ray + 1] {
                let p = row_pix[k] as usize;
                col_ray[fill[p]] = ray as u32;
                col_len[fill[p]] = row_len[k];
                fill[p] += 1;
            }
        }

        ParallelBeamProjector {
            geometry,
            exec,
            row_ptr,
            row_pix,
            row_len,
            col_ptr,
            col_ray,
            col_len,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    /// Number of stored ray/pixel intersections.
    pub fn nnz(&self) -> usize {
        self.row_len.len()
    }

    /// Pixels crossed by ray `(angle, det)` with their intersection lengths.
    pub fn ray(&self, angle: usize, det: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let i = angle * self.geometry.n_detectors() + det;
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.row_pix[range.clone()]
            .iter()
            .zip(&self.row_len[range])
            .map(|(&p, &l)| (p as usize, l))
    }

    pub fn forward_with(&self, exec: Execution, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols(), "forward: image length");
        assert_eq!(y.len(), self.n_rows(), "forward: sinogram length");
        fill_indexed(exec, y, |i| {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            self.row_pix[a..b]
                .iter()
                .zip(&self.row_len[a..b])
                .map(|(&p, &l)| l * x[p as usize])
                .sum()
        });
    }

    pub fn adjoint_with(&self, exec: Execution, y: &[f64], x: &mut [f64]) {
        assert_eq!(y.len(), self.n_rows(), "adjoint: sinogram length");
        assert_eq!(x.len(), self.n_cols(), "adjoint: image length");
        fill_indexed(exec, x, |j| {
            let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
            self.col_ray[a..b]
                .iter()
                .zip(&self.col_len[a..b])
                .map(|(&r, &l)| l * y[r as usize])
                .sum()
        });
    }
}

impl RayOperator for ParallelBeamProjector {
    fn n_rows(&self) -> usize {
        self.geometry.n_rows()
    }

    fn n_cols(&self) -> usize {
        self.geometry.n_cols()
    }

    fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        self.forward_with(self.exec, x, y)
    }

    fn adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        self.adjoint_with(self.exec, y, x)
    }

    fn column_norm_sq(&self, j: usize) -> f64 {
        self.col_len[self.col_ptr[j]..self.col_ptr[j + 1]]
            .iter()
            .map(|l| l * l)
            .sum()
    }
}

/// `A = I` on `n` unknowns; a synthetic projector for tests and toy problems.
#[derive(Debug, Clone, Copy)]
pub struct IdentityOperator(pub usize);

impl RayOperator for IdentityOperator {
    fn n_rows(&self) -> usize {
        self.0
    }

    fn n_cols(&self) -> usize {
        self.0
    }

    fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }

    fn adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        x.copy_from_slice(y);
    }
}

/// Project `img` through `geo`.
pub fn radon_forward(img: &Image, geo: &Geometry) -> Result<Sinogram> {
    check_len("radon_forward image size", geo.n_pixels(), img.size())?;
    let proj = ParallelBeamProjector::new(geo.clone());
    Sinogram::for_geometry(geo, proj.forward(img.as_slice()))
}

/// Back-project `sino` through `geo` (exact transpose of [`radon_forward`]).
pub fn radon_adjoint(sino: &Sinogram, geo: &Geometry) -> Result<Image> {
    sino.check(geo)?;
    let proj = ParallelBeamProjector::new(geo.clone());
    Image::from_vec(geo.n_pixels(), proj.adjoint(sino.as_slice()))
}

/// Mean of `diag(AᵀA)` over `n_samples` pixel indices drawn with a seeded
/// ChaCha8 stream; without replacement while `n_samples ≤ n_cols`.
pub fn estimate_rho(op: &dyn RayOperator, n_samples: usize, seed: u64) -> f64 {
    let n = op.n_cols();
    if n == 0 || n_samples == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = if n_samples <= n {
        sample(&mut rng, n, n_samples)
            .into_iter()
            .map(|j| op.column_norm_sq(j))
            .sum()
    } else {
        (0..n_samples)
            .map(|_| op.column_norm_sq(rng.random_range(0..n)))
            .sum()
    };
    total / n_samples as f64
}

/// Largest singular value of `A` by power iteration on `AᵀA`. Stops when the
/// Rayleigh quotient changes by less than `tol` relative between iterates.
pub fn estimate_sigma_max(op: &dyn RayOperator, tol: f64) -> f64 {
    const MAX_ITERS: usize = 20_000;
    let n = op.n_cols();
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut av = vec![0.0; op.n_rows()];
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERS {
        op.forward_into(&v, &mut av);
        let rq: f64 = av.iter().map(|a| a * a).sum();
        op.adjoint_into(&av, &mut w);
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let done = (rq - lambda).abs() <= tol * rq;
        lambda = rq;
        if done {
            break;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    lambda.sqrt()
}
