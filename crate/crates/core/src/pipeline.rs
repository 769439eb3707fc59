//! End-to-end experiment: phantom, simulated data, reconstructions,
//! segmentation, metrics and a provenance record, all under one directory.
//!
//! ```text
//! out/
//!   config.toml  provenance.toml  metrics.csv
//!   phantom/   material_1.dexc  material_2.dexc  (+ .pgm)
//!   sinogram/  low.dexc  high.dexc  metadata.toml
//!   ip/        recon_1.dexc  recon_2.dexc  seg_1.dexc  seg_2.dexc  report.csv  (+ .pgm)
//!   jtv/       ...
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, select_alpha, AlphaSelection, Method, MetricsReport};
use crate::geometry::{Geometry, Image};
use crate::io::{load_image, load_sinogram, save_image, save_pgm, save_sinogram, PgmDepth};
use crate::ipm::{solve_tomography, IpmConfig};
use crate::jtv::{jtv_solve_with, JtvConfig};
use crate::model::{DualEnergyOperator, ImagePair, RegWeights, SinogramPair};
use crate::par::Execution;
use crate::phantoms::{generate, PhantomKind, PhantomSpec};
use crate::simulate::simulate_measurement;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Artifact locations below the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn phantom(&self, k: usize) -> PathBuf {
        self.root.join("phantom").join(format!("material_{k}.dexc"))
    }

    pub fn sinogram_low(&self) -> PathBuf {
        self.root.join("sinogram").join("low.dexc")
    }

    pub fn sinogram_high(&self) -> PathBuf {
        self.root.join("sinogram").join("high.dexc")
    }

    pub fn method_dir(&self, method: Method) -> PathBuf {
        self.root.join(match method {
            Method::Ip => "ip",
            Method::Jtv => "jtv",
        })
    }

    pub fn recon(&self, method: Method, k: usize) -> PathBuf {
        self.method_dir(method).join(format!("recon_{k}.dexc"))
    }

    pub fn seg(&self, method: Method, k: usize) -> PathBuf {
        self.method_dir(method).join(format!("seg_{k}.dexc"))
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn pgm_depth(cfg: &ExperimentConfig) -> PgmDepth {
    if cfg.output.pgm_bits == 8 {
        PgmDepth::Eight
    } else {
        PgmDepth::Sixteen
    }
}

fn save_with_preview(path: &Path, img: &Image, depth: PgmDepth) -> Result<()> {
    ensure_parent(path)?;
    save_image(path, img)?;
    save_pgm(&path.with_extension("pgm"), img, depth)?;
    Ok(())
}

fn save_pair(paths: [PathBuf; 2], pair: &ImagePair, depth: PgmDepth) -> Result<()> {
    save_with_preview(&paths[0], &pair.image1(), depth)?;
    save_with_preview(&paths[1], &pair.image2(), depth)
}

fn load_pair(paths: [PathBuf; 2]) -> Result<ImagePair> {
    ImagePair::new(load_image(&paths[0])?, load_image(&paths[1])?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SinogramMetadata {
    n_pixels: usize,
    pixel_size: f64,
    low_angles_deg: Vec<f64>,
    high_angles_deg: Vec<f64>,
    n_detectors: usize,
    detector_spacing: f64,
    noise_level: f64,
    rotation_deg: f64,
    /// Decimal string: TOML integers are signed 64-bit.
    noise_seed: String,
}

/// Result of one reconstruction method.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub recon: ImagePair,
    /// `α` for IP, `γ` for JTV.
    pub parameter: f64,
    pub converged: bool,
    pub selection: Option<AlphaSelection>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: Vec<(Method, MetricsReport)>,
    pub all_converged: bool,
}

/// One experiment bound to its output directory.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
    exec: Execution,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg.output_dir.clone());
        Ok(Experiment {
            cfg,
            layout,
            exec: Execution::default(),
        })
    }

    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.layout = Layout::new(dir);
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn depth(&self) -> PgmDepth {
        pgm_depth(&self.cfg)
    }

    pub fn generate_phantom(&self) -> Result<ImagePair> {
        let pair = generate(&self.cfg.phantom_spec())?;
        save_pair(
            [self.layout.phantom(1), self.layout.phantom(2)],
            &pair,
            self.depth(),
        )?;
        Ok(pair)
    }

    pub fn load_phantom(&self) -> Result<ImagePair> {
        load_pair([self.layout.phantom(1), self.layout.phantom(2)])
    }

    pub fn simulate(&self, phantom: &ImagePair) -> Result<SinogramPair> {
        let (gl, gh) = self.cfg.geometries()?;
        let params = self.cfg.simulation_params();
        let m = simulate_measurement(phantom, &self.cfg.coefficients, &gl, &gh, &params)?;
        ensure_parent(&self.layout.sinogram_low())?;
        save_sinogram(&self.layout.sinogram_low(), &m.low)?;
        save_sinogram(&self.layout.sinogram_high(), &m.high)?;
        let meta = SinogramMetadata {
            n_pixels: gl.n_pixels(),
            pixel_size: gl.pixel_size(),
            low_angles_deg: gl.angles_deg().to_vec(),
            high_angles_deg: gh.angles_deg().to_vec(),
            n_detectors: gl.n_detectors(),
            detector_spacing: gl.detector_spacing(),
            noise_level: params.noise_level,
            rotation_deg: params.rotation_deg,
            noise_seed: params.seed.to_string(),
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
        write_text(
            &self.layout.root().join("sinogram").join("metadata.toml"),
            &text,
        )?;
        Ok(m)
    }

    pub fn load_sinograms(&self) -> Result<SinogramPair> {
        let (gl, gh) = self.cfg.geometries()?;
        let low = load_sinogram(&self.layout.sinogram_low())?;
        let high = load_sinogram(&self.layout.sinogram_high())?;
        low.check(&gl)?;
        high.check(&gh)?;
        Ok(SinogramPair { low, high })
    }

    pub fn operator(&self) -> Result<DualEnergyOperator> {
        let (gl, gh) = self.cfg.geometries()?;
        DualEnergyOperator::from_geometries(self.cfg.coefficients, &gl, &gh)
    }

    /// Reconstruct with one method, running parameter selection first when
    /// a grid is configured (this needs the ground truth).
    pub fn reconstruct(
        &self,
        method: Method,
        m: &SinogramPair,
        truth: Option<&ImagePair>,
    ) -> Result<MethodOutcome> {
        let op = self.operator()?;
        let ipm = self.cfg.ipm_config();
        let jtv = self.cfg.jtv.solver.clone();
        let grid = match method {
            Method::Ip => &self.cfg.ip.alpha_grid,
            Method::Jtv => &self.cfg.jtv.gamma_grid,
        };
        let selection = match (grid.is_empty(), truth) {
            (true, _) => None,
            (false, Some(t)) => Some(select_alpha(
                self.exec, &op, m, t, grid, method, &ipm, &jtv,
            )?),
            (false, None) => {
                return Err(Error::Config(
                    "parameter grids need the phantom for scoring".into(),
                ))
            }
        };
        let dir = self.layout.method_dir(method);
        fs::create_dir_all(&dir)?;
        let outcome = match method {
            Method::Ip => {
                let weights = match &selection {
                    Some(s) => RegWeights::with_ratio(s.chosen)?,
                    None => RegWeights::new(self.cfg.ip.alpha, self.cfg.ip.beta)?,
                };
                let (recon, report) = solve_tomography(&op, m, &weights, &ipm, None)?;
                report.write_csv(
                    BufWriter::new(File::create(dir.join("report.csv"))?),
                    self.cfg.output.wall_clock,
                )?;
                MethodOutcome {
                    method,
                    recon,
                    parameter: weights.alpha(),
                    converged: report.converged,
                    selection,
                }
            }
            Method::Jtv => {
                let cfg = JtvConfig {
                    gamma: selection.as_ref().map_or(jtv.gamma, |s| s.chosen),
                    ..jtv
                };
                let (recon, report) = jtv_solve_with(&op, m, &cfg)?;
                report.write_csv(BufWriter::new(File::create(dir.join("report.csv"))?))?;
                MethodOutcome {
                    method,
                    recon,
                    parameter: cfg.gamma,
                    converged: !report.stopped_early,
                    selection,
                }
            }
        };
        if let Some(sel) = &outcome.selection {
            let mut w = BufWriter::new(File::create(dir.join("selection.csv"))?);
            writeln!(w, "parameter,e_mean")?;
            for (a, e) in &sel.scores {
                writeln!(w, "{a:?},{e:?}")?;
            }
            w.flush()?;
        }
        save_pair(
            [self.layout.recon(method, 1), self.layout.recon(method, 2)],
            &outcome.recon,
            self.depth(),
        )?;
        Ok(outcome)
    }

    pub fn load_recon(&self, method: Method) -> Result<ImagePair> {
        load_pair([self.layout.recon(method, 1), self.layout.recon(method, 2)])
    }

    /// Segments to the true material counts and scores the result.
    pub fn evaluate(
        &self,
        method: Method,
        recon: &ImagePair,
        truth: &ImagePair,
    ) -> Result<MetricsReport> {
        let (report, seg) = evaluate(recon, truth)?;
        save_pair(
            [self.layout.seg(method, 1), self.layout.seg(method, 2)],
            &seg,
            self.depth(),
        )?;
        Ok(report)
    }

    pub fn write_metrics(&self, rows: &[(Method, MetricsReport)]) -> Result<()> {
        ensure_parent(&self.layout.metrics())?;
        let mut w = BufWriter::new(File::create(self.layout.metrics())?);
        writeln!(w, "{}", MetricsReport::CSV_HEADER)?;
        for (method, r) in rows {
            r.write_csv_row(&mut w, method_name(*method))?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_provenance(&self, outcomes: &[MethodOutcome]) -> Result<()> {
        let cfg_text = self.cfg.to_toml_string()?;
        write_text(&self.layout.root().join("config.toml"), &cfg_text)?;
        let digest = Sha256::digest(cfg_text.as_bytes());
        let hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let seeds = self.cfg.sub_seeds();
        let mut text = String::new();
        text.push_str(&format!("version = \"{VERSION}\"\n"));
        text.push_str(&format!("config_sha256 = \"{hash}\"\n"));
        text.push_str(&format!("master_seed = \"{}\"\n", self.cfg.seed));
        text.push_str(&format!(
            "[seeds]\nphantom = \"{}\"\nnoise = \"{}\"\nrho = \"{}\"\n",
            seeds.phantom, seeds.noise, seeds.rho
        ));
        for o in outcomes {
            text.push_str(&format!(
                "[{}]\nparameter = {:?}\nconverged = {}\n",
                method_name(o.method),
                o.parameter,
                o.converged
            ));
        }
        write_text(&self.layout.root().join("provenance.toml"), &text)
    }

    /// All stages in order.
    pub fn run(&self) -> Result<RunSummary> {
        fs::create_dir_all(self.layout.root())?;
        let phantom = self.generate_phantom()?;
        let m = self.simulate(&phantom)?;
        let mut methods = Vec::new();
        if self.cfg.ip.enabled {
            methods.push(Method::Ip);
        }
        if self.cfg.jtv.enabled {
            methods.push(Method::Jtv);
        }
        let mut outcomes = Vec::new();
        let mut metrics = Vec::new();
        for method in methods {
            let o = self.reconstruct(method, &m, Some(&phantom))?;
            log::info!(
                "{} finished (parameter {}, converged {})",
                method_name(method),
                o.parameter,
                o.converged
            );
            metrics.push((method, self.evaluate(method, &o.recon, &phantom)?));
            outcomes.push(o);
        }
        self.write_metrics(&metrics)?;
        self.write_provenance(&outcomes)?;
        Ok(RunSummary {
            metrics,
            all_converged: outcomes.iter().all(|o| o.converged),
        })
    }
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Ip => "ip",
        Method::Jtv => "jtv",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub dimension: usize,
    pub ipm_iters: usize,
    pub pcg_iters: usize,
    pub seconds: f64,
}

pub const BENCH_HEADER: &str = "N,dimension,ipm_iters,pcg_iters,seconds";

/// Interior point solves on the HY phantom for every configured size.
pub fn bench(cfg: &ExperimentConfig, ipm: &IpmConfig) -> Result<Vec<BenchRow>> {
    let weights = RegWeights::new(cfg.bench.alpha, cfg.bench.beta)?;
    let mut rows = Vec::new();
    for &n in &cfg.bench.sizes {
        let phantom = generate(&PhantomSpec::new(
            PhantomKind::Hy,
            n,
            cfg.sub_seeds().phantom,
        ))?;
        let (gl, gh): (Geometry, Geometry) = cfg.geometries_for(n)?;
        let m = simulate_measurement(
            &phantom,
            &cfg.coefficients,
            &gl,
            &gh,
            &cfg.simulation_params(),
        )?;
        let op = DualEnergyOperator::from_geometries(cfg.coefficients, &gl, &gh)?;
        let start = Instant::now();
        let (_, report) = solve_tomography(&op, &m, &weights, ipm, None)?;
        rows.push(BenchRow {
            n,
            dimension: 2 * n * n,
            ipm_iters: report.iterations,
            pcg_iters: report.total_pcg_iters,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "{BENCH_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.3}",
            r.n, r.dimension, r.ipm_iters, r.pcg_iters, r.seconds
        )?;
    }
    Ok(())
}
