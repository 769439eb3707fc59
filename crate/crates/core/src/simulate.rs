//! Synthetic measurements: rotated ground truth, forward projection, noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{cos_sin_deg, Geometry, Image};
use crate::model::{AttenuationCoeffs, DualEnergyOperator, ImagePair, SinogramPair};

/// Standard normal samples by the Box–Muller transform.
pub struct Gaussian {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Gaussian { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Rotate counter-clockwise by `deg` about the image centre with bilinear
/// interpolation; samples outside the grid read as zero.
pub fn rotate_image(img: &Image, deg: f64) -> Image {
    let n = img.size();
    if deg == 0.0 {
        return img.clone();
    }
    let (c, s) = cos_sin_deg(deg);
    let half = 0.5 * n as f64;
    let at = |r: isize, col: isize| -> f64 {
        if r < 0 || col < 0 || r >= n as isize || col >= n as isize {
            0.0
        } else {
            img.get(r as usize, col as usize)
        }
    };
    Image::from_fn(n, |row, col| {
        let x = col as f64 + 0.5 - half;
        let y = half - (row as f64 + 0.5);
        // Inverse rotation gives the source point.
        let xs = c * x + s * y;
        let ys = -s * x + c * y;
        let fc = xs + half - 0.5;
        let fr = half - ys - 0.5;
        let (c0, r0) = (fc.floor(), fr.floor());
        let (tx, ty) = (fc - c0, fr - r0);
        let (c0, r0) = (c0 as isize, r0 as isize);
        (1.0 - ty) * ((1.0 - tx) * at(r0, c0) + tx * at(r0, c0 + 1))
            + ty * ((1.0 - tx) * at(r0 + 1, c0) + tx * at(r0 + 1, c0 + 1))
    })
}

/// Adds `level * max|m| * N(0,1)` to every entry.
pub fn add_relative_noise(data: &mut [f64], level: f64, noise: &mut Gaussian) {
    if level == 0.0 {
        return;
    }
    let scale = level * data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for v in data.iter_mut() {
        *v += scale * noise.sample();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationParams {
    pub noise_level: f64,
    pub rotation_deg: f64,
    pub seed: u64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            noise_level: 0.01,
            rotation_deg: 45.0,
            seed: 0,
        }
    }
}

/// Simulate both energies from a ground truth.
///
/// The phantom is rotated by `rotation_deg` before projection, and the data
/// angles are shifted by the same amount, so the returned sinograms describe
/// the unrotated phantom at the angles of `geo_low` / `geo_high` while the
/// discretization differs from the reconstruction operator.
pub fn simulate_measurement(
    phantom: &ImagePair,
    coeffs: &AttenuationCoeffs,
    geo_low: &Geometry,
    geo_high: &Geometry,
    params: &SimulationParams,
) -> Result<SinogramPair> {
    if !(params.noise_level >= 0.0 && params.noise_level.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise level {} must be non-negative",
            params.noise_level
        )));
    }
    if phantom.size() != geo_low.n_pixels() {
        return Err(Error::DimensionMismatch {
            context: "phantom size",
            expected: geo_low.n_pixels(),
            actual: phantom.size(),
        });
    }
    let theta = params.rotation_deg;
    let truth = if theta == 0.0 {
        phantom.clone()
    } else {
        ImagePair::new(
            rotate_image(&phantom.image1(), theta),
            rotate_image(&phantom.image2(), theta),
        )?
    };
    let (dl, dh) = if theta == 0.0 {
        (geo_low.clone(), geo_high.clone())
    } else {
        (
            geo_low.shifted_angles(theta)?,
            geo_high.shifted_angles(theta)?,
        )
    };
    let op = DualEnergyOperator::from_geometries(*coeffs, &dl, &dh)?;
    let mut m = op.apply(&truth)?;
    add_relative_noise(
        m.low.as_mut_slice(),
        params.noise_level,
        &mut Gaussian::new(params.seed, 0),
    );
    add_relative_noise(
        m.high.as_mut_slice(),
        params.noise_level,
        &mut Gaussian::new(params.seed, 1),
    );
    Ok(m)
}
