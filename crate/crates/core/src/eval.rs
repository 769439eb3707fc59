//! Reconstruction quality: relative errors, SSIM, fraction-constrained
//! segmentation, misclassification and regularization-parameter selection.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::Image;
use crate::ipm::{solve_tomography, IpmConfig};
use crate::jtv::{jtv_solve_with, JtvConfig};
use crate::model::{DualEnergyOperator, ImagePair, RegWeights, SinogramPair};
use crate::par::{map_items, Execution};

/// `‖recon − truth‖ / ‖truth‖`.
pub fn l2_error(recon: &Image, truth: &Image) -> Result<f64> {
    check_len("l2 error images", truth.size(), recon.size())?;
    let (mut diff, mut norm) = (0.0, 0.0);
    for (r, t) in recon.as_slice().iter().zip(truth.as_slice()) {
        diff += (r - t) * (r - t);
        norm += t * t;
    }
    if norm == 0.0 {
        return Err(Error::InvalidParameter(
            "relative error against a zero image".into(),
        ));
    }
    Ok((diff / norm).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 8,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Mean SSIM over all `w×w` windows (stride 1) with population moments.
/// The dynamic range is that of `truth`, or 1 for a constant truth.
pub fn ssim_with(recon: &Image, truth: &Image, p: &SsimParams) -> Result<f64> {
    check_len("ssim images", truth.size(), recon.size())?;
    let n = truth.size();
    let w = p.window.min(n).max(1);
    let range = truth.max() - truth.min();
    let l = if range > 0.0 { range } else { 1.0 };
    let c1 = (p.k1 * l).powi(2);
    let c2 = (p.k2 * l).powi(2);
    let (x, y) = (recon.as_slice(), truth.as_slice());
    let count = (w * w) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=n - w {
        for q0 in 0..=n - w {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + w {
                for q in q0..q0 + w {
                    let (a, b) = (x[r * n + q], y[r * n + q]);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let (mx, my) = (sx / count, sy / count);
            let vx = (sxx / count - mx * mx).max(0.0);
            let vy = (syy / count - my * my).max(0.0);
            let cxy = sxy / count - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

pub fn ssim(recon: &Image, truth: &Image) -> Result<f64> {
    ssim_with(recon, truth, &SsimParams::default())
}

/// Mask of the `target_count` largest pixels (ties broken by pixel order)
/// and the value of the last one selected. An empty selection reports an
/// infinite threshold.
pub fn segment_by_fraction(recon: &Image, target_count: usize) -> Result<(Image, f64)> {
    let v = recon.as_slice();
    if target_count > v.len() {
        return Err(Error::InvalidParameter(format!(
            "target count {target_count} exceeds {} pixels",
            v.len()
        )));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut mask = vec![0.0; v.len()];
    for &i in &order[..target_count] {
        mask[i] = 1.0;
    }
    let threshold = if target_count == 0 {
        f64::INFINITY
    } else {
        v[order[target_count - 1]]
    };
    Ok((Image::from_vec(recon.size(), mask)?, threshold))
}

fn check_masks(imgs: &[&Image]) -> Result<()> {
    let n = imgs[0].size();
    for img in imgs {
        check_len("segmentation masks", n, img.size())?;
    }
    Ok(())
}

/// Fraction of pixels whose material tuple `(seg1, seg2)` differs from the
/// truth tuple.
pub fn misclassification(
    seg1: &Image,
    seg2: &Image,
    truth1: &Image,
    truth2: &Image,
) -> Result<f64> {
    check_masks(&[seg1, seg2, truth1, truth2])?;
    let on = |x: f64| x != 0.0;
    let wrong = (0..seg1.as_slice().len())
        .filter(|&i| {
            on(seg1.as_slice()[i]) != on(truth1.as_slice()[i])
                || on(seg2.as_slice()[i]) != on(truth2.as_slice()[i])
        })
        .count();
    Ok(wrong as f64 / seg1.as_slice().len() as f64)
}

/// Fraction of pixels where one material mask disagrees with its truth.
pub fn material_misclassification(seg: &Image, truth: &Image) -> Result<f64> {
    check_masks(&[seg, truth])?;
    let wrong = seg
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .filter(|(a, b)| (**a != 0.0) != (**b != 0.0))
        .count();
    Ok(wrong as f64 / seg.as_slice().len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub l2_error_1: f64,
    pub l2_error_2: f64,
    pub e_mean: f64,
    pub ssim_1: f64,
    pub ssim_2: f64,
    pub misclassification: f64,
    pub misclassification_1: f64,
    pub misclassification_2: f64,
    pub threshold_1: f64,
    pub threshold_2: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "label,l2_error_1,l2_error_2,e_mean,ssim_1,ssim_2,\
misclassification,misclassification_1,misclassification_2,threshold_1,threshold_2";

    pub fn write_csv_row<W: Write>(&self, mut w: W, label: &str) -> Result<()> {
        writeln!(
            w,
            "{label},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.l2_error_1,
            self.l2_error_2,
            self.e_mean,
            self.ssim_1,
            self.ssim_2,
            self.misclassification,
            self.misclassification_1,
            self.misclassification_2,
            self.threshold_1,
            self.threshold_2
        )?;
        Ok(())
    }
}

/// `√(E₁E₂)` over the two material images.
pub fn e_mean(recon: &ImagePair, truth: &ImagePair) -> Result<f64> {
    let e1 = l2_error(&recon.image1(), &truth.image1())?;
    let e2 = l2_error(&recon.image2(), &truth.image2())?;
    Ok((e1 * e2).sqrt())
}

/// Segment each material to its true pixel count, then score everything.
/// Returns the metrics and the two masks.
pub fn evaluate(recon: &ImagePair, truth: &ImagePair) -> Result<(MetricsReport, ImagePair)> {
    let (r1, r2) = (recon.image1(), recon.image2());
    let (t1, t2) = (truth.image1(), truth.image2());
    let (s1, th1) = segment_by_fraction(&r1, t1.count_nonzero())?;
    let (s2, th2) = segment_by_fraction(&r2, t2.count_nonzero())?;
    let l2_error_1 = l2_error(&r1, &t1)?;
    let l2_error_2 = l2_error(&r2, &t2)?;
    let report = MetricsReport {
        l2_error_1,
        l2_error_2,
        e_mean: (l2_error_1 * l2_error_2).sqrt(),
        ssim_1: ssim(&r1, &t1)?,
        ssim_2: ssim(&r2, &t2)?,
        misclassification: misclassification(&s1, &s2, &t1, &t2)?,
        misclassification_1: material_misclassification(&s1, &t1)?,
        misclassification_2: material_misclassification(&s2, &t2)?,
        threshold_1: th1,
        threshold_2: th2,
    };
    Ok((report, ImagePair::new(s1, s2)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ip,
    Jtv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSelection {
    pub chosen: f64,
    /// `(candidate, E_mean)` in input order.
    pub scores: Vec<(f64, f64)>,
}

/// Arg-min of `score` over `candidates`; ties go to the smaller candidate.
pub fn select_by_score(
    exec: Execution,
    candidates: &[f64],
    score: impl Fn(f64) -> Result<f64> + Sync + Send,
) -> Result<AlphaSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("empty candidate list".into()));
    }
    let results = map_items(exec, candidates, |&a| score(a));
    let mut scores = Vec::with_capacity(candidates.len());
    for (&a, r) in candidates.iter().zip(results) {
        scores.push((a, r?));
    }
    let mut best = scores[0];
    for &(a, e) in &scores[1..] {
        if e < best.1 || (e == best.1 && a < best.0) {
            best = (a, e);
        }
    }
    Ok(AlphaSelection {
        chosen: best.0,
        scores,
    })
}

/// Reconstruct with each candidate and keep the one with the smallest
/// `E_mean`. For `Ip` the candidate is `α` with `β = 0.8α`; for `Jtv` it
/// replaces `γ`.
#[allow(clippy::too_many_arguments)]
pub fn select_alpha(
    exec: Execution,
    op: &DualEnergyOperator,
    m: &SinogramPair,
    truth: &ImagePair,
    alphas: &[f64],
    method: Method,
    ipm: &IpmConfig,
    jtv: &JtvConfig,
) -> Result<AlphaSelection> {
    select_by_score(exec, alphas, |a| {
        let recon = match method {
            Method::Ip => solve_tomography(op, m, &RegWeights::with_ratio(a)?, ipm, None)?.0,
            Method::Jtv => {
                let cfg = JtvConfig {
                    gamma: a,
                    ..jtv.clone()
                };
                jtv_solve_with(op, m, &cfg)?.0
            }
        };
        e_mean(&recon, truth)
    })
}
