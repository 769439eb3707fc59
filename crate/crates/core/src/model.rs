//! Two-material, two-energy measurement model.
//!
//! The stacked unknown is `g = [g¹; g²]` (length 2N²) and the stacked data
//! `m = [mᴸ; mᴴ]` with
//!
//! ```text
//! mᴸ = c11·Aᴸ g¹ + c12·Aᴸ g²
//! mᴴ = c21·Aᴴ g¹ + c22·Aᴴ g²
//! ```
//!
//! The regularized problem `min_{g ≥ 0} ‖m − 𝒜g‖² + α‖g‖² + β·2⟨g¹,g²⟩` is
//! handled in its quadratic-program form `min −mᵀ𝒜g + ½ gᵀQg` with
//! `Q = F_L⊗AᴸᵀAᴸ + F_H⊗AᴴᵀAᴴ + K⊗I`, `K = [[α, β], [β, α]]`. The two
//! objectives are related by `2·qp(g) + ‖m‖² = variational(g)`.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::geometry::{Geometry, Image, Sinogram};
use crate::par::dot;
use crate::projector::{ParallelBeamProjector, RayOperator};

/// Attenuation of material `i` at energy `j` is `c_ji`: `c11`, `c12` are the
/// low-energy constants of materials 1 and 2, `c21`, `c22` the high-energy ones.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttenuationCoeffs {
    pub c11: f64,
    pub c12: f64,
    pub c21: f64,
    pub c22: f64,
}

impl Default for AttenuationCoeffs {
    /// PVC (material 1) and iodine (material 2) at 30 kV and 50 kV.
    fn default() -> Self {
        AttenuationCoeffs {
            c11: 1.491,
            c12: 8.561,
            c21: 0.456,
            c22: 12.32,
        }
    }
}

impl AttenuationCoeffs {
    pub fn new(c11: f64, c12: f64, c21: f64, c22: f64) -> Result<Self> {
        let c = AttenuationCoeffs { c11, c12, c21, c22 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c11", self.c11),
            ("c12", self.c12),
            ("c21", self.c21),
            ("c22", self.c22),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "attenuation coefficient {name}={v} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// `F_L = [c11, c12]ᵀ[c11, c12]` as `(f11, f12, f22)`.
    pub fn f_low(&self) -> Sym2 {
        Sym2::outer(self.c11, self.c12)
    }

    /// `F_H = [c21, c22]ᵀ[c21, c22]`.
    pub fn f_high(&self) -> Sym2 {
        Sym2::outer(self.c21, self.c22)
    }

    pub fn determinant(&self) -> f64 {
        self.c11 * self.c22 - self.c12 * self.c21
    }
}

/// Symmetric 2×2 matrix `[[a, b], [b, d]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

impl Sym2 {
    pub fn outer(x: f64, y: f64) -> Self {
        Sym2 {
            a: x * x,
            b: x * y,
            d: y * y,
        }
    }

    pub fn scale(self, k: f64) -> Self {
        Sym2 {
            a: k * self.a,
            b: k * self.b,
            d: k * self.d,
        }
    }

    pub fn add(self, o: Sym2) -> Self {
        Sym2 {
            a: self.a + o.a,
            b: self.b + o.b,
            d: self.d + o.d,
        }
    }

    /// Eigenvalues `(smaller, larger)`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.a + self.d);
        let r = (0.25 * (self.a - self.d).powi(2) + self.b * self.b).sqrt();
        (mean - r, mean + r)
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.b
    }
}

/// Tikhonov weight `alpha` and inner-product weight `beta`, `alpha ≥ beta ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegWeights {
    alpha: f64,
    beta: f64,
}

impl RegWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "regularization weights must be finite and non-negative (alpha={alpha}, beta={beta})"
            )));
        }
        if alpha < beta {
            return Err(Error::NonConvex { alpha, beta });
        }
        Ok(RegWeights { alpha, beta })
    }

    /// The parameter-selection convention `beta = 0.8·alpha`.
    pub fn with_ratio(alpha: f64) -> Result<Self> {
        Self::new(alpha, 0.8 * alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `K = [[α, β], [β, α]]`.
    pub fn coupling(&self) -> Sym2 {
        Sym2 {
            a: self.alpha,
            b: self.beta,
            d: self.alpha,
        }
    }
}

/// The two material images, stored stacked `[g¹; g²]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    n: usize,
    data: Vec<f64>,
}

impl ImagePair {
    pub fn zeros(n: usize) -> Self {
        ImagePair {
            n,
            data: vec![0.0; 2 * n * n],
        }
    }

    pub fn new(g1: Image, g2: Image) -> Result<Self> {
        check_len("image pair", g1.size(), g2.size())?;
        let n = g1.size();
        let mut data = g1.into_vec();
        data.extend(g2.into_vec());
        Ok(ImagePair { n, data })
    }

    pub fn from_stacked(n: usize, data: Vec<f64>) -> Result<Self> {
        check_len("stacked image pair", 2 * n * n, data.len())?;
        Ok(ImagePair { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn stacked(&self) -> &[f64] {
        &self.data
    }

    pub fn stacked_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_stacked(self) -> Vec<f64> {
        self.data
    }

    pub fn g1(&self) -> &[f64] {
        &self.data[..self.n * self.n]
    }

    pub fn g2(&self) -> &[f64] {
        &self.data[self.n * self.n..]
    }

    pub fn image1(&self) -> Image {
        Image::from_vec(self.n, self.g1().to_vec()).expect("finite by construction")
    }

    pub fn image2(&self) -> Image {
        Image::from_vec(self.n, self.g2().to_vec()).expect("finite by construction")
    }
}

/// Low- and high-energy sinograms.
#[derive(Debug, Clone, PartialEq)]
pub struct SinogramPair {
    pub low: Sinogram,
    pub high: Sinogram,
}

impl SinogramPair {
    pub fn norm_sq(&self) -> f64 {
        dot(self.low.as_slice(), self.low.as_slice())
            + dot(self.high.as_slice(), self.high.as_slice())
    }
}

/// `𝒮(g) = 2⟨g¹, g²⟩`.
pub fn penalty_s(g: &ImagePair) -> f64 {
    2.0 * dot(g.g1(), g.g2())
}

/// `ℛ(g) = ‖g‖²` over the stacked vector.
pub fn penalty_r(g: &ImagePair) -> f64 {
    dot(g.stacked(), g.stacked())
}

/// The unified operator `𝒜` over one or two projectors.
#[derive(Clone)]
pub struct DualEnergyOperator {
    coeffs: AttenuationCoeffs,
    low: Arc<dyn RayOperator>,
    high: Arc<dyn RayOperator>,
    shared: bool,
    // (angles, detectors) used to shape sinograms.
    shape_low: (usize, usize),
    shape_high: (usize, usize),
}

impl std::fmt::Debug for DualEnergyOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DualEnergyOperator")
            .field("coeffs", &self.coeffs)
            .field("shared", &self.shared)
            .field("shape_low", &self.shape_low)
            .field("shape_high", &self.shape_high)
            .finish()
    }
}

impl DualEnergyOperator {
    /// Operators without an attached geometry; sinograms are shaped as a
    /// single row of `n_rows` bins.
    pub fn new(
        coeffs: AttenuationCoeffs,
        low: Arc<dyn RayOperator>,
        high: Arc<dyn RayOperator>,
    ) -> Result<Self> {
        coeffs.validate()?;
        check_len("energy operators (image size)", low.n_cols(), high.n_cols())?;
        let shared = Arc::ptr_eq(&low, &high);
        let shape_low = (1, low.n_rows());
        let shape_high = (1, high.n_rows());
        Ok(DualEnergyOperator {
            coeffs,
            low,
            high,
            shared,
            shape_low,
            shape_high,
        })
    }

    /// The same projector at both energies (`Aᴸ = Aᴴ`).
    pub fn shared(coeffs: AttenuationCoeffs, op: Arc<dyn RayOperator>) -> Result<Self> {
        Self::new(coeffs, op.clone(), op)
    }

    /// Build projectors for both geometries, sharing one when they coincide.
    pub fn from_geometries(
        coeffs: AttenuationCoeffs,
        geo_low: &Geometry,
        geo_high: &Geometry,
    ) -> Result<Self> {
        check_len(
            "energy geometries (N)",
            geo_low.n_pixels(),
            geo_high.n_pixels(),
        )?;
        let low: Arc<dyn RayOperator> = Arc::new(ParallelBeamProjector::new(geo_low.clone()));
        let high = if geo_low == geo_high {
            low.clone()
        } else {
            Arc::new(ParallelBeamProjector::new(geo_high.clone())) as Arc<dyn RayOperator>
        };
        let mut op = Self::new(coeffs, low, high)?;
        op.shape_low = (geo_low.n_angles(), geo_low.n_detectors());
        op.shape_high = (geo_high.n_angles(), geo_high.n_detectors());
        Ok(op)
    }

    pub fn coeffs(&self) -> &AttenuationCoeffs {
        &self.coeffs
    }

    pub fn low(&self) -> &Arc<dyn RayOperator> {
        &self.low
    }

    pub fn high(&self) -> &Arc<dyn RayOperator> {
        &self.high
    }

    /// True when both energies use the same projector.
    pub fn is_shared(&self) -> bool {
        self.shared
    }

    /// Pixels per material image, N².
    pub fn n_half(&self) -> usize {
        self.low.n_cols()
    }

    /// Length of the stacked unknown, 2N².
    pub fn dim(&self) -> usize {
        2 * self.n_half()
    }

    /// `𝒜g` on raw stacked vectors.
    pub fn forward(&self, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut ml = vec![0.0; self.low.n_rows()];
        let mut mh = vec![0.0; self.high.n_rows()];
        self.forward_into(g, &mut ml, &mut mh);
        (ml, mh)
    }

    pub fn forward_into(&self, g: &[f64], ml: &mut [f64], mh: &mut [f64]) {
        let n = self.n_half();
        assert_eq!(g.len(), 2 * n, "stacked image length");
        let (g1, g2) = g.split_at(n);
        let c = &self.coeffs;
        let mut u1 = vec![0.0; self.low.n_rows()];
        let mut u2 = vec![0.0; self.low.n_rows()];
        self.low.forward_into(g1, &mut u1);
        self.low.forward_into(g2, &mut u2);
        for ((m, a), b) in ml.iter_mut().zip(&u1).zip(&u2) {
            *m = c.c11 * a + c.c12 * b;
        }
        if !self.shared {
            u1.resize(self.high.n_rows(), 0.0);
            u2.resize(self.high.n_rows(), 0.0);
            self.high.forward_into(g1, &mut u1);
            self.high.forward_into(g2, &mut u2);
        }
        for ((m, a), b) in mh.iter_mut().zip(&u1).zip(&u2) {
            *m = c.c21 * a + c.c22 * b;
        }
    }

    /// `𝒜ᵀm` on raw vectors.
    pub fn transpose(&self, ml: &[f64], mh: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.transpose_into(ml, mh, &mut out);
        out
    }

    pub fn transpose_into(&self, ml: &[f64], mh: &[f64], out: &mut [f64]) {
        let n = self.n_half();
        assert_eq!(out.len(), 2 * n, "stacked image length");
        let c = &self.coeffs;
        let mut tl = vec![0.0; n];
        let mut th = vec![0.0; n];
        self.low.adjoint_into(ml, &mut tl);
        self.high.adjoint_into(mh, &mut th);
        let (o1, o2) = out.split_at_mut(n);
        for i in 0..n {
            o1[i] = c.c11 * tl[i] + c.c21 * th[i];
            o2[i] = c.c12 * tl[i] + c.c22 * th[i];
        }
    }

    /// `Q₁g = 𝒜ᵀ𝒜g`.
    pub fn gram_into(&self, g: &[f64], out: &mut [f64]) {
        let (ml, mh) = self.forward(g);
        self.transpose_into(&ml, &mh, out);
    }

    /// `Qg = 𝒜ᵀ𝒜g + (K⊗I)g`.
    pub fn apply_q_into(&self, w: &RegWeights, g: &[f64], out: &mut [f64]) {
        self.gram_into(g, out);
        let n = self.n_half();
        let (a, b) = (w.alpha(), w.beta());
        for i in 0..n {
            let (x1, x2) = (g[i], g[n + i]);
            out[i] += a * x1 + b * x2;
            out[n + i] += b * x1 + a * x2;
        }
    }

    fn check_pair(&self, g: &ImagePair) -> Result<()> {
        check_len("image pair pixels", self.n_half(), g.size() * g.size())
    }

    fn check_data(&self, m: &SinogramPair) -> Result<()> {
        check_len(
            "low-energy sinogram",
            self.low.n_rows(),
            m.low.as_slice().len(),
        )?;
        check_len(
            "high-energy sinogram",
            self.high.n_rows(),
            m.high.as_slice().len(),
        )
    }

    pub fn apply(&self, g: &ImagePair) -> Result<SinogramPair> {
        self.check_pair(g)?;
        let (ml, mh) = self.forward(g.stacked());
        Ok(SinogramPair {
            low: Sinogram::from_vec(self.shape_low.0, self.shape_low.1, ml)?,
            high: Sinogram::from_vec(self.shape_high.0, self.shape_high.1, mh)?,
        })
    }

    pub fn apply_transpose(&self, m: &SinogramPair) -> Result<ImagePair> {
        self.check_data(m)?;
        let n = (self.n_half() as f64).sqrt().round() as usize;
        ImagePair::from_stacked(n, self.transpose(m.low.as_slice(), m.high.as_slice()))
    }

    pub fn apply_q(&self, g: &ImagePair, w: &RegWeights) -> Result<ImagePair> {
        self.check_pair(g)?;
        let mut out = vec![0.0; self.dim()];
        self.apply_q_into(w, g.stacked(), &mut out);
        ImagePair::from_stacked(g.size(), out)
    }

    /// `‖m − 𝒜g‖² + α‖g‖² + β𝒮(g)`.
    pub fn objective(&self, g: &ImagePair, m: &SinogramPair, w: &RegWeights) -> Result<f64> {
        self.check_pair(g)?;
        self.check_data(m)?;
        let (ml, mh) = self.forward(g.stacked());
        let misfit: f64 = ml
            .iter()
            .zip(m.low.as_slice())
            .chain(mh.iter().zip(m.high.as_slice()))
            .map(|(a, b)| (b - a) * (b - a))
            .sum();
        Ok(misfit + w.alpha() * penalty_r(g) + w.beta() * penalty_s(g))
    }

    /// `−mᵀ𝒜g + ½gᵀQg`, the form minimized by the interior point solver.
    pub fn qp_objective(&self, g: &ImagePair, m: &SinogramPair, w: &RegWeights) -> Result<f64> {
        self.check_pair(g)?;
        self.check_data(m)?;
        let b = self.transpose(m.low.as_slice(), m.high.as_slice());
        let mut qg = vec![0.0; self.dim()];
        self.apply_q_into(w, g.stacked(), &mut qg);
        Ok(-dot(&b, g.stacked()) + 0.5 * dot(g.stacked(), &qg))
    }
}
