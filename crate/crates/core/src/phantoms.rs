//! Binary two-material test objects.
//!
//! Shapes are described in normalized coordinates `(u, v) ∈ [−1, 1]²` with
//! `v` pointing up, and a pixel belongs to a shape when its centre does.
//! Everything stays inside the inscribed circle so that no material leaves
//! the field of view under rotation.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::io::load_image;
use crate::model::ImagePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Hy,
    Bone,
    EgyptLike,
    CircuitLike,
    FromFiles,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "hy" => Ok(PhantomKind::Hy),
            "bone" => Ok(PhantomKind::Bone),
            "egypt_like" | "egypt" => Ok(PhantomKind::EgyptLike),
            "circuit_like" | "circuit" => Ok(PhantomKind::CircuitLike),
            "from_files" => Ok(PhantomKind::FromFiles),
            other => Err(Error::InvalidPhantom(format!(
                "unknown phantom kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Material 1 and material 2 containers for `FromFiles`.
    #[serde(default)]
    pub material1: Option<PathBuf>,
    #[serde(default)]
    pub material2: Option<PathBuf>,
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, size: usize, seed: u64) -> Self {
        PhantomSpec {
            kind,
            size,
            seed,
            material1: None,
            material2: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Empty,
    One,
    Two,
}

fn render(n: usize, label: impl Fn(f64, f64) -> Label) -> ImagePair {
    let mut g1 = Image::zeros(n);
    let mut g2 = Image::zeros(n);
    for r in 0..n {
        let v = 1.0 - 2.0 * (r as f64 + 0.5) / n as f64;
        for c in 0..n {
            let u = 2.0 * (c as f64 + 0.5) / n as f64 - 1.0;
            match label(u, v) {
                Label::One => g1.set(r, c, 1.0),
                Label::Two => g2.set(r, c, 1.0),
                Label::Empty => {}
            }
        }
    }
    ImagePair::new(g1, g2).expect("same size")
}

/// Distance from `p` to the segment `a`–`b`.
fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn in_box(u: f64, v: f64, u0: f64, u1: f64, v0: f64, v1: f64) -> bool {
    u >= u0 && u <= u1 && v >= v0 && v <= v1
}

fn hy(n: usize) -> ImagePair {
    const W: f64 = 0.06;
    render(n, |u, v| {
        if u.abs() >= 0.75 || v.abs() >= 0.55 {
            return Label::Empty;
        }
        let h = in_box(u, v, -0.58, -0.46, -0.35, 0.35)
            || in_box(u, v, -0.24, -0.12, -0.35, 0.35)
            || in_box(u, v, -0.46, -0.24, -W, W);
        let p = (u, v);
        let y = seg_dist(p, (0.35, -0.35), (0.35, 0.0)) < W
            || seg_dist(p, (0.35, 0.0), (0.15, 0.35)) < W
            || seg_dist(p, (0.35, 0.0), (0.55, 0.35)) < W;
        if h || y {
            Label::Two
        } else {
            Label::One
        }
    })
}

fn bone(n: usize, rng: &mut ChaCha8Rng) -> ImagePair {
    let harmonics: Vec<(f64, f64, f64)> = (2..=5)
        .map(|k| {
            (
                k as f64,
                rng.random_range(0.02..0.06),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let (cx, cy) = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let inner = rng.random_range(0.55..0.65);
    render(n, |u, v| {
        let (x, y) = (u - cx, v - cy);
        let r = (x * x + y * y).sqrt();
        let phi = y.atan2(x);
        let radius = 0.62
            * (1.0
                + harmonics
                    .iter()
                    .map(|(k, a, p)| a * (k * phi + p).cos())
                    .sum::<f64>());
        // The marrow boundary wobbles independently of the outer surface.
        let marrow = inner * radius * (1.0 + 0.05 * (3.0 * phi + harmonics[0].2).sin());
        if r < marrow {
            Label::Two
        } else if r < radius {
            Label::One
        } else {
            Label::Empty
        }
    })
}

fn egypt_like(n: usize, rng: &mut ChaCha8Rng) -> ImagePair {
    const HALF: f64 = 0.64;
    const CELLS: usize = 4;
    const W: f64 = 0.022;
    let cell = 2.0 * HALF / CELLS as f64;
    let mut strokes: Vec<((f64, f64), (f64, f64))> = Vec::new();
    for i in 0..CELLS {
        for j in 0..CELLS {
            let u0 = -HALF + (j as f64 + 0.5) * cell;
            let v0 = -HALF + (i as f64 + 0.5) * cell;
            let reach = 0.32 * cell;
            let mut at = (
                u0 + rng.random_range(-reach..reach),
                v0 + rng.random_range(-reach..reach),
            );
            for _ in 0..rng.random_range(2..5) {
                let next = (
                    u0 + rng.random_range(-reach..reach),
                    v0 + rng.random_range(-reach..reach),
                );
                strokes.push((at, next));
                at = next;
            }
        }
    }
    render(n, |u, v| {
        if u.abs() >= HALF || v.abs() >= HALF {
            return Label::Empty;
        }
        if strokes.iter().any(|(a, b)| seg_dist((u, v), *a, *b) < W) {
            Label::Two
        } else {
            Label::One
        }
    })
}

fn circuit_like(n: usize, rng: &mut ChaCha8Rng) -> ImagePair {
    const HALF: f64 = 0.66;
    const GRID: i32 = 10;
    const W: f64 = 0.016;
    const PAD: f64 = 0.035;
    let step = 2.0 * (HALF - 0.08) / GRID as f64;
    let node = |k: i32| -HALF + 0.08 + k as f64 * step;
    let mut traces: Vec<((f64, f64), (f64, f64))> = Vec::new();
    let mut pads: Vec<(f64, f64)> = Vec::new();
    for _ in 0..14 {
        let mut at = (rng.random_range(0..=GRID), rng.random_range(0..=GRID));
        pads.push((node(at.0), node(at.1)));
        for leg in 0..rng.random_range(2..4) {
            let mut next = at;
            if leg % 2 == 0 {
                next.0 = rng.random_range(0..=GRID);
            } else {
                next.1 = rng.random_range(0..=GRID);
            }
            traces.push(((node(at.0), node(at.1)), (node(next.0), node(next.1))));
            at = next;
        }
        pads.push((node(at.0), node(at.1)));
    }
    render(n, |u, v| {
        if u.abs() >= HALF || v.abs() >= HALF {
            return Label::Empty;
        }
        let on_trace = traces.iter().any(|(a, b)| {
            in_box(
                u,
                v,
                a.0.min(b.0) - W,
                a.0.max(b.0) + W,
                a.1.min(b.1) - W,
                a.1.max(b.1) + W,
            )
        });
        let on_pad = pads
            .iter()
            .any(|p| (u - p.0).abs() <= PAD && (v - p.1).abs() <= PAD);
        if on_trace || on_pad {
            Label::Two
        } else {
            Label::One
        }
    })
}

/// Checks that both images are binary and never overlap.
pub fn validate_pair(pair: &ImagePair) -> Result<()> {
    for (k, img) in [pair.g1(), pair.g2()].iter().enumerate() {
        if let Some(j) = img.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidPhantom(format!(
                "material {} is not binary: pixel {j} has value {}",
                k + 1,
                img[j]
            )));
        }
    }
    if let Some(j) = pair
        .g1()
        .iter()
        .zip(pair.g2())
        .position(|(a, b)| *a != 0.0 && *b != 0.0)
    {
        let n = pair.size();
        return Err(Error::InvalidPhantom(format!(
            "materials overlap at row {}, column {}",
            j / n,
            j % n
        )));
    }
    Ok(())
}

/// Render the phantom described by `spec`.
pub fn generate(spec: &PhantomSpec) -> Result<ImagePair> {
    let n = spec.size;
    if n == 0 {
        return Err(Error::InvalidPhantom("size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pair = match spec.kind {
        PhantomKind::Hy => hy(n),
        PhantomKind::Bone => bone(n, &mut rng),
        PhantomKind::EgyptLike => egypt_like(n, &mut rng),
        PhantomKind::CircuitLike => circuit_like(n, &mut rng),
        PhantomKind::FromFiles => {
            let (Some(p1), Some(p2)) = (&spec.material1, &spec.material2) else {
                return Err(Error::InvalidPhantom(
                    "from_files needs material1 and material2 paths".into(),
                ));
            };
            let pair = ImagePair::new(load_image(p1)?, load_image(p2)?)?;
            if pair.size() != n {
                return Err(Error::InvalidPhantom(format!(
                    "files hold {0}x{0} images, spec asks for {n}",
                    pair.size()
                )));
            }
            pair
        }
    };
    validate_pair(&pair)?;
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KINDS: [PhantomKind; 4] = [
        PhantomKind::Hy,
        PhantomKind::Bone,
        PhantomKind::EgyptLike,
        PhantomKind::CircuitLike,
    ];

    fn fraction(img: &[f64]) -> f64 {
        img.iter().filter(|v| **v != 0.0).count() as f64 / img.len() as f64
    }

    #[test]
    fn all_kinds_binary_disjoint_and_in_fraction_range() {
        for kind in KINDS {
            for seed in 0..3 {
                let pair = generate(&PhantomSpec::new(kind, 128, seed)).unwrap();
                validate_pair(&pair).unwrap();
                let f2 = fraction(pair.g2());
                assert!((0.03..=0.25).contains(&f2), "{kind:?} seed {seed}: {f2}");
                assert!(fraction(pair.g1()) > f2, "{kind:?}");
            }
        }
    }

    #[test]
    fn material_inside_inscribed_circle() {
        for kind in KINDS {
            let n = 96;
            let pair = generate(&PhantomSpec::new(kind, n, 5)).unwrap();
            for r in 0..n {
                for c in 0..n {
                    let u = 2.0 * (c as f64 + 0.5) / n as f64 - 1.0;
                    let v = 1.0 - 2.0 * (r as f64 + 0.5) / n as f64;
                    if u * u + v * v > 1.0 {
                        assert_eq!(pair.g1()[r * n + c] + pair.g2()[r * n + c], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        for kind in KINDS {
            let a = generate(&PhantomSpec::new(kind, 64, 11)).unwrap();
            let b = generate(&PhantomSpec::new(kind, 64, 11)).unwrap();
            assert_eq!(a, b);
        }
        let a = generate(&PhantomSpec::new(PhantomKind::CircuitLike, 64, 1)).unwrap();
        let b = generate(&PhantomSpec::new(PhantomKind::CircuitLike, 64, 2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn validation_rejects_overlap_and_grey() {
        let one = Image::from_fn(2, |_, _| 1.0);
        let overlap = ImagePair::new(one.clone(), one).unwrap();
        assert!(validate_pair(&overlap).is_err());
        let grey = ImagePair::new(Image::from_fn(2, |_, _| 0.5), Image::zeros(2)).unwrap();
        assert!(validate_pair(&grey).is_err());
    }

    #[test]
    fn kind_names_parse() {
        assert_eq!("hy".parse::<PhantomKind>().unwrap(), PhantomKind::Hy);
        assert_eq!(
            "egypt-like".parse::<PhantomKind>().unwrap(),
            PhantomKind::EgyptLike
        );
        assert!("moon".parse::<PhantomKind>().is_err());
    }
}
