//! Experiment description, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::ipm::IpmConfig;
use crate::jtv::JtvConfig;
use crate::model::{AttenuationCoeffs, RegWeights};
use crate::phantoms::{PhantomKind, PhantomSpec};
use crate::simulate::SimulationParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    pub kind: PhantomKind,
    pub size: usize,
    #[serde(default)]
    pub material1: Option<PathBuf>,
    #[serde(default)]
    pub material2: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Both energies see every angle.
    #[default]
    SameOperator,
    /// Even-indexed angles are measured at low energy, odd ones at high.
    AlternatingEnergy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub n_angles: usize,
    pub protocol: Protocol,
    /// Pixel side length; path lengths are measured in these units.
    pub pixel_size: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            n_angles: 65,
            protocol: Protocol::SameOperator,
            pixel_size: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub noise_level: f64,
    pub rotation_deg: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            noise_level: 0.01,
            rotation_deg: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpSection {
    pub enabled: bool,
    pub alpha: f64,
    pub beta: f64,
    /// When non-empty, `alpha` is chosen from this grid with `beta = 0.8·alpha`.
    pub alpha_grid: Vec<f64>,
    pub solver: IpmConfig,
}

impl Default for IpSection {
    fn default() -> Self {
        IpSection {
            enabled: true,
            alpha: 150.0,
            beta: 120.0,
            alpha_grid: Vec::new(),
            solver: IpmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JtvSection {
    pub enabled: bool,
    /// When non-empty, `gamma` is chosen from this grid.
    pub gamma_grid: Vec<f64>,
    pub solver: JtvConfig,
}

impl Default for JtvSection {
    fn default() -> Self {
        JtvSection {
            enabled: true,
            gamma_grid: Vec::new(),
            solver: JtvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Record elapsed time in solver reports; off keeps reruns byte-identical.
    pub wall_clock: bool,
    /// 8 or 16.
    pub pgm_bits: u8,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            wall_clock: false,
            pgm_bits: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub sizes: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            sizes: vec![32, 64],
            alpha: 500.0,
            beta: 250.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub phantom: PhantomSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub coefficients: AttenuationCoeffs,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub ip: IpSection,
    #[serde(default)]
    pub jtv: JtvSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub bench: BenchSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SubSeeds {
    pub phantom: u64,
    pub noise: u64,
    pub rho: u64,
}

impl ExperimentConfig {
    /// Paper-scale defaults around the given phantom.
    pub fn with_phantom(kind: PhantomKind, size: usize) -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: default_output_dir(),
            phantom: PhantomSection {
                kind,
                size,
                material1: None,
                material2: None,
            },
            geometry: GeometrySection::default(),
            coefficients: AttenuationCoeffs::default(),
            simulation: SimulationSection::default(),
            ip: IpSection::default(),
            jtv: JtvSection::default(),
            output: OutputSection::default(),
            bench: BenchSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative raster paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.phantom.material1, &mut cfg.phantom.material2]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.phantom.size == 0 {
            return bad("phantom.size must be positive".into());
        }
        if self.geometry.n_angles == 0 {
            return bad("geometry.n_angles must be positive".into());
        }
        if self.geometry.protocol == Protocol::AlternatingEnergy && self.geometry.n_angles < 2 {
            return bad("alternating_energy needs at least 2 angles".into());
        }
        if !(self.geometry.pixel_size > 0.0) {
            return bad("geometry.pixel_size must be positive".into());
        }
        self.coefficients
            .validate()
            .map_err(|e| Error::Config(format!("coefficients: {e}")))?;
        if !(self.simulation.noise_level >= 0.0 && self.simulation.rotation_deg.is_finite()) {
            return bad("simulation.noise_level must be non-negative".into());
        }
        if self.ip.enabled {
            RegWeights::new(self.ip.alpha, self.ip.beta)
                .map_err(|e| Error::Config(format!("ip: {e}")))?;
            self.ip
                .solver
                .validate()
                .map_err(|e| Error::Config(format!("ip.solver: {e}")))?;
            if self.ip.alpha_grid.iter().any(|a| !(*a >= 0.0)) {
                return bad("ip.alpha_grid entries must be non-negative".into());
            }
        }
        if self.jtv.enabled {
            self.jtv
                .solver
                .validate()
                .map_err(|e| Error::Config(format!("jtv.solver: {e}")))?;
            if self.jtv.gamma_grid.iter().any(|g| !(*g > 0.0)) {
                return bad("jtv.gamma_grid entries must be positive".into());
            }
        }
        if self.output.pgm_bits != 8 && self.output.pgm_bits != 16 {
            return bad("output.pgm_bits must be 8 or 16".into());
        }
        RegWeights::new(self.bench.alpha, self.bench.beta)
            .map_err(|e| Error::Config(format!("bench: {e}")))?;
        Ok(())
    }

    pub fn sub_seeds(&self) -> SubSeeds {
        SubSeeds {
            phantom: splitmix64(self.seed ^ 0x5048_414E),
            noise: splitmix64(self.seed ^ 0x4E4F_4953),
            rho: splitmix64(self.seed ^ 0x0052_484F),
        }
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        PhantomSpec {
            kind: self.phantom.kind,
            size: self.phantom.size,
            seed: self.sub_seeds().phantom,
            material1: self.phantom.material1.clone(),
            material2: self.phantom.material2.clone(),
        }
    }

    /// `(low, high)` reconstruction geometries for image size `n`.
    pub fn geometries_for(&self, n: usize) -> Result<(Geometry, Geometry)> {
        let s = self.geometry.pixel_size;
        let r0 = crate::geometry::default_detector_count(n);
        let full = Geometry::new(
            n,
            s,
            crate::geometry::uniform_angles(self.geometry.n_angles),
            r0,
            s,
        )?;
        Ok(match self.geometry.protocol {
            Protocol::SameOperator => (full.clone(), full),
            Protocol::AlternatingEnergy => (
                full.select_angles(|k| k % 2 == 0)?,
                full.select_angles(|k| k % 2 == 1)?,
            ),
        })
    }

    pub fn geometries(&self) -> Result<(Geometry, Geometry)> {
        self.geometries_for(self.phantom.size)
    }

    pub fn simulation_params(&self) -> SimulationParams {
        SimulationParams {
            noise_level: self.simulation.noise_level,
            rotation_deg: self.simulation.rotation_deg,
            seed: self.sub_seeds().noise,
        }
    }

    pub fn ipm_config(&self) -> IpmConfig {
        IpmConfig {
            seed: self.sub_seeds().rho,
            ..self.ip.solver.clone()
        }
    }
}
