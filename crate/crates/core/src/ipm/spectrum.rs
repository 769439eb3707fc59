//! Eigenvalue bounds for the preconditioned normal equations and
//! material-separation statistics.

use crate::model::{AttenuationCoeffs, ImagePair, RegWeights};
use crate::par::dot;

/// Interval containing the spectrum of `P⁻¹M` at every interior iterate.
///
/// `sigma_low`, `sigma_high` are the largest singular values of the two
/// projectors. The numerator of the upper bound uses the largest eigenvalue
/// of `σL²F_L + σH²F_H`; with equal singular values this is `σ²Λ(F_L + F_H)`,
/// and in general it never exceeds `σL²Λ(F_L) + σH²Λ(F_H)`.
pub fn spectrum_bound(
    c: &AttenuationCoeffs,
    w: &RegWeights,
    rho_low: f64,
    rho_high: f64,
    sigma_low: f64,
    sigma_high: f64,
) -> (f64, f64) {
    let (a, b) = (w.alpha(), w.beta());
    let (lam_rho, big_rho) = c
        .f_low()
        .scale(rho_low)
        .add(c.f_high().scale(rho_high))
        .eigenvalues();
    let top = if sigma_low == sigma_high {
        sigma_low * sigma_low * c.f_low().add(c.f_high()).eigenvalues().1
    } else {
        sigma_low * sigma_low * c.f_low().eigenvalues().1
            + sigma_high * sigma_high * c.f_high().eigenvalues().1
    };
    let lower = (a - b) / (big_rho + a + b);
    let upper = (top + a + b) / (lam_rho.max(0.0) + a - b);
    (lower, upper)
}

/// `(n_small, avg_product)`: the number of pixels with `g¹ᵢg²ᵢ < threshold`
/// and `⟨g¹, g²⟩ / N²`.
pub fn separation_report(g: &ImagePair, threshold: f64) -> (usize, f64) {
    let small = g
        .g1()
        .iter()
        .zip(g.g2())
        .filter(|(a, b)| *a * *b < threshold)
        .count();
    let n2 = g.g1().len().max(1) as f64;
    (small, dot(g.g1(), g.g2()) / n2)
}
