//! Smoothed total-variation baseline.
//!
//! Minimizes `‖m − 𝒜g‖² + γ·Σ_ℓ (|L_H g¹|_κ + |L_V g¹|_κ + |L_H g²|_κ + |L_V g²|_κ)`
//! over `g ≥ 0`, with `|x|_κ = √(x² + κ)`, by projected gradient descent
//! and Armijo backtracking.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{Geometry, Image};
use crate::model::{AttenuationCoeffs, DualEnergyOperator, ImagePair, SinogramPair};
use crate::par::dot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JtvConfig {
    pub gamma: f64,
    pub kappa: f64,
    pub n_iters: usize,
    /// Sufficient-decrease constant.
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
}

impl Default for JtvConfig {
    fn default() -> Self {
        JtvConfig {
            gamma: 0.001,
            kappa: 1e-6,
            n_iters: 400,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 80,
            initial_step: 1.0,
        }
    }
}

impl JtvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.kappa > 0.0 && self.n_iters >= 1) {
            return Err(Error::InvalidParameter(
                "jtv: gamma and kappa must be positive and n_iters at least 1".into(),
            ));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0 && self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter(
                "jtv: armijo_c and shrink must lie in (0,1)".into(),
            ));
        }
        if !(self.initial_step > 0.0) || self.max_backtracks == 0 {
            return Err(Error::InvalidParameter(
                "jtv: initial_step and max_backtracks must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Horizontal forward differences on a row-major `n×n` slice, zero beyond
/// the last column.
pub fn diff_h_slice(n: usize, f: &[f64], out: &mut [f64]) {
    for r in 0..n {
        let row = &f[r * n..(r + 1) * n];
        for c in 0..n {
            let next = if c + 1 < n { row[c + 1] } else { 0.0 };
            out[r * n + c] = next - row[c];
        }
    }
}

/// Vertical forward differences, zero below the last row.
pub fn diff_v_slice(n: usize, f: &[f64], out: &mut [f64]) {
    for r in 0..n {
        for c in 0..n {
            let next = if r + 1 < n { f[(r + 1) * n + c] } else { 0.0 };
            out[r * n + c] = next - f[r * n + c];
        }
    }
}

/// `L_Hᵀ y`.
pub fn diff_h_adjoint_slice(n: usize, y: &[f64], out: &mut [f64]) {
    for r in 0..n {
        for c in 0..n {
            let prev = if c > 0 { y[r * n + c - 1] } else { 0.0 };
            out[r * n + c] = prev - y[r * n + c];
        }
    }
}

/// `L_Vᵀ y`.
pub fn diff_v_adjoint_slice(n: usize, y: &[f64], out: &mut [f64]) {
    for r in 0..n {
        for c in 0..n {
            let prev = if r > 0 { y[(r - 1) * n + c] } else { 0.0 };
            out[r * n + c] = prev - y[r * n + c];
        }
    }
}

fn image_op(f: &Image, op: fn(usize, &[f64], &mut [f64])) -> Image {
    let n = f.size();
    let mut out = vec![0.0; n * n];
    op(n, f.as_slice(), &mut out);
    Image::from_vec(n, out).expect("finite input gives finite differences")
}

pub fn diff_h(f: &Image) -> Image {
    image_op(f, diff_h_slice)
}

pub fn diff_v(f: &Image) -> Image {
    image_op(f, diff_v_slice)
}

pub fn diff_h_adjoint(y: &Image) -> Image {
    image_op(y, diff_h_adjoint_slice)
}

pub fn diff_v_adjoint(y: &Image) -> Image {
    image_op(y, diff_v_adjoint_slice)
}

fn smooth_abs(x: f64, kappa: f64) -> f64 {
    (x * x + kappa).sqrt()
}

/// Penalty value on a stacked vector of two `n×n` images.
fn jtv_stacked(n: usize, g: &[f64], kappa: f64, scratch: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for f in g.chunks_exact(n * n) {
        diff_h_slice(n, f, scratch);
        total += scratch.iter().map(|x| smooth_abs(*x, kappa)).sum::<f64>();
        diff_v_slice(n, f, scratch);
        total += scratch.iter().map(|x| smooth_abs(*x, kappa)).sum::<f64>();
    }
    total
}

/// Adds `scale · ∇JTV_κ(g)` to `grad`.
fn jtv_gradient_acc(n: usize, g: &[f64], kappa: f64, scale: f64, grad: &mut [f64]) {
    let mut d = vec![0.0; n * n];
    let mut back = vec![0.0; n * n];
    for (f, out) in g.chunks_exact(n * n).zip(grad.chunks_exact_mut(n * n)) {
        type Pair = (fn(usize, &[f64], &mut [f64]), fn(usize, &[f64], &mut [f64]));
        let pairs: [Pair; 2] = [
            (diff_h_slice, diff_h_adjoint_slice),
            (diff_v_slice, diff_v_adjoint_slice),
        ];
        for (fwd, adj) in pairs {
            fwd(n, f, &mut d);
            d.iter_mut().for_each(|x| *x /= smooth_abs(*x, kappa));
            adj(n, &d, &mut back);
            for (o, b) in out.iter_mut().zip(&back) {
                *o += scale * b;
            }
        }
    }
}

/// `Σ_ℓ |L_H g¹|_κ + |L_V g¹|_κ + |L_H g²|_κ + |L_V g²|_κ`.
pub fn jtv_value(g: &ImagePair, kappa: f64) -> f64 {
    let n = g.size();
    let mut scratch = vec![0.0; n * n];
    jtv_stacked(n, g.stacked(), kappa, &mut scratch)
}

/// Smoothed objective `‖m − 𝒜g‖² + γ·JTV_κ(g)` and its gradient.
pub struct JtvObjective<'a> {
    op: &'a DualEnergyOperator,
    ml: &'a [f64],
    mh: &'a [f64],
    n: usize,
    gamma: f64,
    kappa: f64,
}

impl<'a> JtvObjective<'a> {
    pub fn new(
        op: &'a DualEnergyOperator,
        m: &'a SinogramPair,
        gamma: f64,
        kappa: f64,
    ) -> Result<Self> {
        check_len("low-energy data", op.low().n_rows(), m.low.as_slice().len())?;
        check_len(
            "high-energy data",
            op.high().n_rows(),
            m.high.as_slice().len(),
        )?;
        let n = (op.n_half() as f64).sqrt().round() as usize;
        if n * n != op.n_half() {
            return Err(Error::InvalidParameter("jtv needs square images".into()));
        }
        Ok(JtvObjective {
            op,
            ml: m.low.as_slice(),
            mh: m.high.as_slice(),
            n,
            gamma,
            kappa,
        })
    }

    fn residuals(&self, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut rl, mut rh) = self.op.forward(g);
        rl.iter_mut().zip(self.ml).for_each(|(a, b)| *a -= b);
        rh.iter_mut().zip(self.mh).for_each(|(a, b)| *a -= b);
        (rl, rh)
    }

    pub fn value(&self, g: &[f64]) -> f64 {
        let (rl, rh) = self.residuals(g);
        let mut scratch = vec![0.0; self.n * self.n];
        dot(&rl, &rl)
            + dot(&rh, &rh)
            + self.gamma * jtv_stacked(self.n, g, self.kappa, &mut scratch)
    }

    /// Returns the value and writes the gradient.
    pub fn value_and_gradient(&self, g: &[f64], grad: &mut [f64]) -> f64 {
        let (rl, rh) = self.residuals(g);
        self.op.transpose_into(&rl, &rh, grad);
        grad.iter_mut().for_each(|x| *x *= 2.0);
        jtv_gradient_acc(self.n, g, self.kappa, self.gamma, grad);
        let mut scratch = vec![0.0; self.n * self.n];
        dot(&rl, &rl)
            + dot(&rh, &rh)
            + self.gamma * jtv_stacked(self.n, g, self.kappa, &mut scratch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JtvRecord {
    pub iteration: usize,
    pub objective: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JtvReport {
    /// Iteration 0 is the starting point.
    pub records: Vec<JtvRecord>,
    /// Set when a line search failed before `n_iters` steps were taken.
    pub stopped_early: bool,
}

impl JtvReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,objective,step_size")?;
        for r in &self.records {
            writeln!(w, "{},{:?},{:?}", r.iteration, r.objective, r.step_size)?;
        }
        Ok(())
    }

    pub fn accepted_steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

/// Projected gradient descent from `g = 0`.
pub fn jtv_solve_with(
    op: &DualEnergyOperator,
    m: &SinogramPair,
    cfg: &JtvConfig,
) -> Result<(ImagePair, JtvReport)> {
    cfg.validate()?;
    let obj = JtvObjective::new(op, m, cfg.gamma, cfg.kappa)?;
    let dim = op.dim();
    let mut g = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut f = obj.value_and_gradient(&g, &mut grad);
    let mut report = JtvReport {
        records: vec![JtvRecord {
            iteration: 0,
            objective: f,
            step_size: 0.0,
        }],
        stopped_early: false,
    };
    let mut step = cfg.initial_step;
    let mut trial = vec![0.0; dim];
    for it in 1..=cfg.n_iters {
        let mut accepted = false;
        let mut stationary = false;
        let mut t = step;
        for _ in 0..cfg.max_backtracks {
            for i in 0..dim {
                trial[i] = (g[i] - t * grad[i]).max(0.0);
            }
            let decrease: f64 = (0..dim).map(|i| grad[i] * (trial[i] - g[i])).sum();
            if decrease == 0.0 {
                // Projected gradient vanishes: stationary point.
                stationary = true;
                break;
            }
            let ft = obj.value(&trial);
            if ft <= f + cfg.armijo_c * decrease {
                accepted = true;
                break;
            }
            t *= cfg.shrink;
        }
        if !accepted {
            if it == 1 && !stationary {
                return Err(Error::LineSearchFailed);
            }
            report.stopped_early = true;
            break;
        }
        std::mem::swap(&mut g, &mut trial);
        f = obj.value_and_gradient(&g, &mut grad);
        report.records.push(JtvRecord {
            iteration: it,
            objective: f,
            step_size: t,
        });
        step = 2.0 * t;
    }
    Ok((ImagePair::from_stacked(obj.n, g)?, report))
}

pub fn jtv_solve(
    m: &SinogramPair,
    coeffs: &AttenuationCoeffs,
    cfg: &JtvConfig,
    geo_low: &Geometry,
    geo_high: &Geometry,
) -> Result<(ImagePair, JtvReport)> {
    let op = DualEnergyOperator::from_geometries(*coeffs, geo_low, geo_high)?;
    jtv_solve_with(&op, m, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_differences() {
        let f = Image::from_vec(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(diff_h(&f).as_slice(), &[1.0, -2.0, 1.0, -4.0]);
        assert_eq!(diff_v(&f).as_slice(), &[2.0, 2.0, -3.0, -4.0]);
    }

    #[test]
    fn constant_image_boundaries() {
        let f = Image::from_fn(4, |_, _| 3.0);
        let h = diff_h(&f);
        let v = diff_v(&f);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(h.get(r, c), if c == 3 { -3.0 } else { 0.0 });
                assert_eq!(v.get(r, c), if r == 3 { -3.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_image_value() {
        let kappa: f64 = 1e-6;
        // Two images, two directions, four entries each.
        let v = jtv_value(&ImagePair::zeros(2), kappa);
        assert!((v - 16.0 * kappa.sqrt()).abs() < 1e-18);
    }

    #[test]
    fn value_symmetric_in_materials() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Image::from_vec(5, (0..25).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let b = Image::from_fn(5, |r, c| (r * c) as f64);
        let p = ImagePair::new(a.clone(), b.clone()).unwrap();
        let q = ImagePair::new(b, a).unwrap();
        assert_eq!(jtv_value(&p, 1e-4), jtv_value(&q, 1e-4));
    }

    #[test]
    fn binary_image_tends_to_jump_count() {
        // A 2×2 block in a 6×6 image: 8 interior jumps, no boundary ones.
        let f = Image::from_fn(6, |r, c| {
            if (2..4).contains(&r) && (2..4).contains(&c) {
                1.0
            } else {
                0.0
            }
        });
        let p = ImagePair::new(f, Image::zeros(6)).unwrap();
        let v = jtv_value(&p, 1e-16);
        assert!((v - 8.0).abs() < 1e-5, "{v}");
        assert!(jtv_value(&p, 1e-4) > v);
    }

    #[test]
    fn config_validation() {
        assert!(JtvConfig::default().validate().is_ok());
        let bad = JtvConfig {
            kappa: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
