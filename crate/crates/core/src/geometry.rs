//! Parallel-beam acquisition geometry and the raster containers it describes.
//!
//! The image is an N×N grid of square pixels centred on the origin. Row 0 is
//! the top of the image (largest y), column 0 the left (smallest x). Values are
//! stored row-major. A sinogram holds one row of detector bins per projection
//! angle, angle-major.
//!
//! Lengths are measured in units where one pixel has side `pixel_size`. The
//! default constructors use `pixel_size = 1`, i.e. path lengths in pixels.

use crate::error::{check_len, Error, Result};

/// Smallest detector count covering the image diagonal, with the parity of `n`
/// so that the central bins line up with pixel centres at 0° and 90°.
pub fn default_detector_count(n: usize) -> usize {
    let mut r0 = (std::f64::consts::SQRT_2 * n as f64).ceil() as usize;
    if r0 % 2 != n % 2 {
        r0 += 1;
    }
    r0.max(1)
}

/// `P` equally spaced angles in degrees over `[0, 180)`.
pub fn uniform_angles(n_angles: usize) -> Vec<f64> {
    (0..n_angles)
        .map(|p| p as f64 * 180.0 / n_angles as f64)
        .collect()
}

/// Cosine and sine of an angle in degrees, exact at multiples of 90°.
pub fn cos_sin_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (1.0, 0.0)
    } else if r == 90.0 {
        (0.0, 1.0)
    } else if r == 180.0 {
        (-1.0, 0.0)
    } else if r == 270.0 {
        (0.0, -1.0)
    } else {
        let rad = r.to_radians();
        (rad.cos(), rad.sin())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    n_pixels: usize,
    pixel_size: f64,
    angles_deg: Vec<f64>,
    n_detectors: usize,
    detector_spacing: f64,
}

impl Geometry {
    /// `n_angles` uniform angles over `[0, 180)`, pixel-unit lengths and
    /// `default_detector_count(n)` bins one pixel apart.
    pub fn parallel_beam(n: usize, n_angles: usize) -> Result<Self> {
        if n_angles == 0 {
            return Err(Error::InvalidGeometry("need at least one angle".into()));
        }
        Self::new(
            n,
            1.0,
            uniform_angles(n_angles),
            default_detector_count(n),
            1.0,
        )
    }

    /// Same layout as [`Geometry::parallel_beam`] on the unit square: pixel
    /// side `1/n`.
    pub fn unit_square(n: usize, n_angles: usize) -> Result<Self> {
        if n == 0 || n_angles == 0 {
            return Err(Error::InvalidGeometry("empty grid or angle set".into()));
        }
        let s = 1.0 / n as f64;
        Self::new(n, s, uniform_angles(n_angles), default_detector_count(n), s)
    }

    pub fn new(
        n_pixels: usize,
        pixel_size: f64,
        angles_deg: Vec<f64>,
        n_detectors: usize,
        detector_spacing: f64,
    ) -> Result<Self> {
        if n_pixels == 0 {
            return Err(Error::InvalidGeometry("N must be at least 1".into()));
        }
        if angles_deg.is_empty() {
            return Err(Error::InvalidGeometry("need at least one angle".into()));
        }
        if n_detectors == 0 {
            return Err(Error::InvalidGeometry("need at least one detector".into()));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::InvalidGeometry(format!("pixel size {pixel_size}")));
        }
        if !(detector_spacing > 0.0 && detector_spacing.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "detector spacing {detector_spacing}"
            )));
        }
        if angles_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite angle".into()));
        }
        if angles_deg.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGeometry(
                "angles must be strictly increasing".into(),
            ));
        }
        let geo = Geometry {
            n_pixels,
            pixel_size,
            angles_deg,
            n_detectors,
            detector_spacing,
        };
        // Every ray that meets the image must land on the detector array.
        let half_span = 0.5 * n_detectors as f64 * detector_spacing;
        for &a in &geo.angles_deg {
            let (c, s) = cos_sin_deg(a);
            let footprint = geo.half_width() * (c.abs() + s.abs());
            if footprint > half_span * (1.0 + 1e-12) {
                return Err(Error::InvalidGeometry(format!(
                    "detector span ±{half_span} truncates footprint ±{footprint} at {a}°"
                )));
            }
        }
        Ok(geo)
    }

    /// Geometry used to generate data for an object rotated by `deg`: the
    /// same detector layout with every angle shifted by `deg`.
    pub fn shifted_angles(&self, deg: f64) -> Result<Self> {
        Self::new(
            self.n_pixels,
            self.pixel_size,
            self.angles_deg.iter().map(|a| a + deg).collect(),
            self.n_detectors,
            self.detector_spacing,
        )
    }

    /// Keep only the angles whose index satisfies `keep`.
    pub fn select_angles(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let angles = self
            .angles_deg
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, a)| *a)
            .collect();
        Self::new(
            self.n_pixels,
            self.pixel_size,
            angles,
            self.n_detectors,
            self.detector_spacing,
        )
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn n_angles(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    /// Number of unknowns, N².
    pub fn n_cols(&self) -> usize {
        self.n_pixels * self.n_pixels
    }

    /// Number of measurements, M = r₀·P.
    pub fn n_rows(&self) -> usize {
        self.n_detectors * self.angles_deg.len()
    }

    /// Half the side length of the imaged square.
    pub fn half_width(&self) -> f64 {
        0.5 * self.n_pixels as f64 * self.pixel_size
    }

    /// Signed offset of detector bin `d` from the rotation centre.
    pub fn detector_offset(&self, d: usize) -> f64 {
        (d as f64 - 0.5 * (self.n_detectors as f64 - 1.0)) * self.detector_spacing
    }

    /// Centre of pixel (row, col).
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let h = self.half_width();
        let s = self.pixel_size;
        (-h + (col as f64 + 0.5) * s, h - (row as f64 + 0.5) * s)
    }
}

/// N×N raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    n: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(n: usize) -> Self {
        Image {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        check_len("image", n * n, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite pixel value".into()));
        }
        Ok(Image { n, data })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                data.push(f(r, c));
            }
        }
        Image { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.n + col] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }
}

/// Measurements for one energy: `n_angles` rows of `n_detectors` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    n_angles: usize,
    n_detectors: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(geo: &Geometry) -> Self {
        Sinogram {
            n_angles: geo.n_angles(),
            n_detectors: geo.n_detectors(),
            data: vec![0.0; geo.n_rows()],
        }
    }

    pub fn from_vec(n_angles: usize, n_detectors: usize, data: Vec<f64>) -> Result<Self> {
        check_len("sinogram", n_angles * n_detectors, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite sinogram value".into()));
        }
        Ok(Sinogram {
            n_angles,
            n_detectors,
            data,
        })
    }

    pub fn for_geometry(geo: &Geometry, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(geo.n_angles(), geo.n_detectors(), data)
    }

    /// Reject a sinogram whose layout does not match `geo`.
    pub fn check(&self, geo: &Geometry) -> Result<()> {
        check_len("sinogram angles", geo.n_angles(), self.n_angles)?;
        check_len("sinogram detectors", geo.n_detectors(), self.n_detectors)
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, angle: usize, det: usize) -> f64 {
        self.data[angle * self.n_detectors + det]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_count_covers_diagonal_with_matching_parity() {
        for n in 1..200 {
            let r0 = default_detector_count(n);
            assert!(r0 as f64 >= std::f64::consts::SQRT_2 * n as f64);
            assert_eq!(r0 % 2, n % 2);
        }
        assert_eq!(default_detector_count(128), 182);
        assert_eq!(default_detector_count(32), 46);
        assert_eq!(default_detector_count(64), 92);
    }

    #[test]
    fn rejects_bad_geometries() {
        assert!(Geometry::parallel_beam(0, 4).is_err());
        assert!(Geometry::parallel_beam(4, 0).is_err());
        assert!(Geometry::new(4, 1.0, vec![10.0, 5.0], 6, 1.0).is_err());
        // Too few bins to cover the diagonal at 45°.
        assert!(Geometry::new(8, 1.0, vec![0.0, 45.0], 9, 1.0).is_err());
        assert!(Geometry::new(8, 1.0, vec![0.0], 8, 1.0).is_ok());
    }

    #[test]
    fn rows_are_bins_times_angles() {
        let g = Geometry::parallel_beam(32, 65).unwrap();
        assert_eq!(g.n_rows(), 46 * 65);
        assert_eq!(g.n_cols(), 1024);
        assert_eq!(g.angles_deg()[0], 0.0);
        assert!(g.angles_deg().last().copied().unwrap() < 180.0);
    }

    #[test]
    fn exact_trig_at_right_angles() {
        assert_eq!(cos_sin_deg(90.0), (0.0, 1.0));
        assert_eq!(cos_sin_deg(180.0), (-1.0, 0.0));
        assert_eq!(cos_sin_deg(-90.0), (0.0, -1.0));
    }

    #[test]
    fn sinogram_layout_checked() {
        let g = Geometry::parallel_beam(4, 3).unwrap();
        let s = Sinogram::zeros(&g);
        assert!(s.check(&g).is_ok());
        let other = Geometry::parallel_beam(4, 2).unwrap();
        assert!(s.check(&other).is_err());
        assert!(Image::from_vec(3, vec![0.0; 8]).is_err());
    }
}
