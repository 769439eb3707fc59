//! Block-diagonal preconditioner for the normal equations.
//!
//! Every diagonal block `AᵀA` of `Q₁` is replaced by `ρ·I`, where `ρ` is the
//! average diagonal entry of `AᵀA`. What remains is a 2×2 block matrix with
//! diagonal blocks, inverted through its (diagonal) Schur complement.

use crate::error::{Error, Result};
use crate::model::{AttenuationCoeffs, RegWeights, Sym2};

#[derive(Debug, Clone, PartialEq)]
pub struct PrecondDiagonals {
    pub d11: Vec<f64>,
    pub d12: Vec<f64>,
    pub d22: Vec<f64>,
    pub rho_low: f64,
    pub rho_high: f64,
}

/// `ρL·F_L + ρH·F_H + K`, the constant part of every pixel block.
pub fn base_block(c: &AttenuationCoeffs, w: &RegWeights, rho_low: f64, rho_high: f64) -> Sym2 {
    c.f_low()
        .scale(rho_low)
        .add(c.f_high().scale(rho_high))
        .add(w.coupling())
}

impl PrecondDiagonals {
    /// Adds `G⁻¹S` to a constant block.
    pub fn from_base(
        base: Sym2,
        g: &[f64],
        s: &[f64],
        rho_low: f64,
        rho_high: f64,
    ) -> Result<Self> {
        if g.len() != s.len() || g.len() % 2 != 0 {
            return Err(Error::DimensionMismatch {
                context: "preconditioner iterate",
                expected: g.len(),
                actual: s.len(),
            });
        }
        if let Some(j) = g.iter().zip(s).position(|(a, b)| !(*a > 0.0 && *b > 0.0)) {
            return Err(Error::NonPositiveIterate(format!(
                "g[{j}]={}, s[{j}]={}",
                g[j], s[j]
            )));
        }
        let n = g.len() / 2;
        let d11 = (0..n).map(|i| base.a + s[i] / g[i]).collect();
        let d22 = (0..n).map(|i| base.d + s[n + i] / g[n + i]).collect();
        Ok(PrecondDiagonals {
            d11,
            d12: vec![base.b; n],
            d22,
            rho_low,
            rho_high,
        })
    }

    pub fn len(&self) -> usize {
        self.d11.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d11.is_empty()
    }

    /// `P·x` on a stacked vector.
    pub fn multiply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let (a, b) = (x[i], x[n + i]);
            out[i] = self.d11[i] * a + self.d12[i] * b;
            out[n + i] = self.d12[i] * a + self.d22[i] * b;
        }
    }

    /// Schur diagonal `d22 − d12²/d11`.
    pub fn schur(&self, i: usize) -> f64 {
        self.d22[i] - self.d12[i] * self.d12[i] / self.d11[i]
    }
}

/// Preconditioner for a given iterate.
pub fn build_preconditioner(
    g: &[f64],
    s: &[f64],
    c: &AttenuationCoeffs,
    w: &RegWeights,
    rho_low: f64,
    rho_high: f64,
) -> Result<PrecondDiagonals> {
    PrecondDiagonals::from_base(base_block(c, w, rho_low, rho_high), g, s, rho_low, rho_high)
}

/// Solves `P x = y`.
pub fn precond_apply_into(p: &PrecondDiagonals, y: &[f64], x: &mut [f64]) {
    let n = p.len();
    for i in 0..n {
        let ratio = p.d12[i] / p.d11[i];
        let x2 = (y[n + i] - ratio * y[i]) / p.schur(i);
        x[n + i] = x2;
        x[i] = (y[i] - p.d12[i] * x2) / p.d11[i];
    }
}

pub fn precond_apply(p: &PrecondDiagonals, y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; y.len()];
    precond_apply_into(p, y, &mut x);
    x
}
