//! The pipeline configuration document (TOML). Physical quantities are
//! strings with explicit units ("532nm", "50mm", "30deg") and are resolved to
//! SI on load. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fisher::PhotonModel;
use crate::forward::NoiseConfig;
use crate::forward::scenes::{SceneGeometry, TreeParams};
use crate::mask::GSConfig;
use crate::optics::{GLBeamSpec, Grid2D, System4f};
use crate::recon::ReconConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("`{key}`: cannot parse quantity `{value}`: {reason}")]
    Unit { key: String, value: String, reason: String },
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

#[derive(Clone, Copy)]
enum Scale {
    /// Decimal exponent, applied exactly to the written number.
    Pow10(i32),
    Factor(f64),
}

/// Parses `"<number><unit>"` for length units nm, um, µm, mm, cm, m. The
/// result is the correctly rounded SI value, so "0.532um" and "532nm" agree
/// bit for bit.
pub fn parse_length(key: &str, s: &str) -> Result<f64, ConfigError> {
    use Scale::Pow10;
    parse_quantity(key, s, &[("nm", Pow10(-9)), ("um", Pow10(-6)), ("µm", Pow10(-6)), ("mm", Pow10(-3)), ("cm", Pow10(-2)), ("m", Pow10(0))])
}

/// Parses `"<number><unit>"` for angle units deg, rad.
pub fn parse_angle(key: &str, s: &str) -> Result<f64, ConfigError> {
    parse_quantity(key, s, &[("deg", Scale::Factor(std::f64::consts::PI / 180.0)), ("rad", Scale::Factor(1.0))])
}

fn parse_quantity(key: &str, s: &str, units: &[(&str, Scale)]) -> Result<f64, ConfigError> {
    let err = |reason: String| ConfigError::Unit { key: key.into(), value: s.into(), reason };
    let t = s.trim();
    for (unit, scale) in units {
        let Some(num) = t.strip_suffix(unit) else { continue };
        let num = num.trim_end();
        let parsed: f64 = match num.parse() {
            Ok(v) => v,
            Err(_) if num.is_empty() || num.ends_with(char::is_alphabetic) => continue,
            Err(_) => return Err(err(format!("`{num}` is not a number"))),
        };
        if !parsed.is_finite() {
            return Err(err("value is not finite".into()));
        }
        let v = match *scale {
            Scale::Factor(f) => parsed * f,
            Scale::Pow10(p) => {
                let (mantissa, exp) = match num.split_once(['e', 'E']) {
                    Some((m, e)) => (m, e.parse::<i32>().map_err(|_| err(format!("bad exponent in `{num}`")))?),
                    None => (num, 0),
                };
                format!("{mantissa}e{}", exp + p).parse::<f64>().map_err(|_| err(format!("`{num}` is not a number")))?
            }
        };
        return Ok(v);
    }
    let names: Vec<&str> = units.iter().map(|u| u.0).collect();
    Err(err(format!("missing or unknown unit (expected one of {})", names.join(", "))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    optics: RawOptics,
    #[serde(default)]
    mask: RawMask,
    sensor: RawSensor,
    z: RawZ,
    #[serde(default)]
    scene: RawScene,
    #[serde(default)]
    noise: RawNoise,
    #[serde(default)]
    recon: RawRecon,
    #[serde(default)]
    crlb: RawCrlb,
    #[serde(default)]
    evaluate: EvaluateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptics {
    wavelength: String,
    f1: String,
    f2: Option<String>,
    aperture: String,
    #[serde(default = "default_pupil_samples")]
    pupil_samples: usize,
}

fn default_pupil_samples() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawMask {
    kind: MaskKind,
    modes: Vec<(i32, i32)>,
    waist: String,
    slope: i32,
    intercept: i32,
    gs_iterations: usize,
    gs_tolerance: f64,
    quantization_levels: Option<u32>,
    partition_axis: String,
    external: Option<PathBuf>,
}

impl Default for RawMask {
    fn default() -> Self {
        let spec = GLBeamSpec::double_helix();
        let gs = GSConfig::default();
        RawMask {
            kind: MaskKind::Ps2f,
            modes: spec.modes,
            waist: "0.4mm".into(),
            slope: spec.slope,
            intercept: spec.intercept,
            gs_iterations: gs.iterations,
            gs_tolerance: gs.convergence_tol,
            quantization_levels: None,
            partition_axis: "auto".into(),
            external: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensor {
    pixels: usize,
    pitch: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawZ {
    min: String,
    max: String,
    planes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawScene {
    source: SceneSource,
    seed: u64,
    path: Option<PathBuf>,
    tree: TreeParams,
}

impl Default for RawScene {
    fn default() -> Self {
        RawScene { source: SceneSource::Tree, seed: 0, path: None, tree: TreeParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawNoise {
    enabled: bool,
    poisson: bool,
    read_sigma: f64,
    clamp: bool,
    /// Expected photons per unit voxel value through the clear aperture.
    exposure: f64,
}

impl Default for RawNoise {
    fn default() -> Self {
        let n = NoiseConfig::default();
        RawNoise { enabled: true, poisson: n.poisson, read_sigma: n.read_sigma, clamp: n.clamp, exposure: 1000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawRecon {
    preset: Option<String>,
    lambda_tv: Option<f64>,
    lambda_l1: Option<f64>,
    iterations: Option<usize>,
    step_size: Option<f64>,
    estimate_weights: bool,
}

impl Default for RawRecon {
    fn default() -> Self {
        RawRecon { preset: Some("strands".into()), lambda_tv: None, lambda_l1: None, iterations: None, step_size: None, estimate_weights: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCrlb {
    z_points: usize,
    phi_points: usize,
    photons: f64,
    background: f64,
    patch_size: usize,
    line_width: f64,
}

impl Default for RawCrlb {
    fn default() -> Self {
        RawCrlb { z_points: 16, phi_points: 16, photons: 1e5, background: 5.0, patch_size: 64, line_width: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// Single-channel double-helix mask.
    Dhpsf,
    /// Polarized half-aperture pair.
    Ps2f,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    Tree,
    SkewLine,
    SingleVoxel,
    /// A `Volume3D` container at `scene.path`.
    File,
    /// A VascuSynth raw grid at `scene.path`.
    Vascusynth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub mip_threshold: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { mip_threshold: crate::evaluate::MIP_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub kind: MaskKind,
    pub beam: GLBeamSpec,
    pub gs: GSConfig,
    pub quantization_levels: Option<u32>,
    /// `None` selects the in-focus lobe axis automatically.
    pub partition_axis: Option<f64>,
    pub external: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub source: SceneSource,
    pub seed: u64,
    pub path: Option<PathBuf>,
    pub tree: TreeParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrlbConfig {
    pub z_points: usize,
    pub phi_points: usize,
    pub photons: PhotonModel,
    pub patch_size: usize,
    pub line_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub noise_enabled: bool,
    pub noise: NoiseConfig,
    pub exposure: f64,
}

/// A validated configuration with every quantity in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub system: System4f,
    pub pupil_samples: usize,
    pub mask: MaskConfig,
    pub sensor: Grid2D,
    pub z_min: f64,
    pub z_max: f64,
    pub z_planes: usize,
    pub scene: SceneConfig,
    pub simulation: SimulationConfig,
    pub recon: ReconConfig,
    pub recon_preset: Option<String>,
    pub crlb: CrlbConfig,
    pub evaluate: EvaluateConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| ConfigError::Read { path: p.display().to_string(), reason: e.to_string() })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = p.parent().unwrap_or(Path::new("."));
        for slot in [&mut cfg.mask.external, &mut cfg.scene.path] {
            if let Some(rel) = slot.as_mut() {
                if rel.is_relative() {
                    *rel = base.join(&*rel);
                }
            }
        }
        Ok(cfg)
    }

    fn resolve(raw: RawConfig) -> Result<Self, ConfigError> {
        let o = &raw.optics;
        let f1 = parse_length("optics.f1", &o.f1)?;
        let f2 = match &o.f2 {
            Some(s) => parse_length("optics.f2", s)?,
            None => f1,
        };
        let system = System4f::new(f1, f2, parse_length("optics.aperture", &o.aperture)?, parse_length("optics.wavelength", &o.wavelength)?)
            .map_err(|e| invalid("optics", e.to_string()))?;
        if o.pupil_samples < 16 {
            return Err(invalid("optics.pupil_samples", "need at least 16 samples"));
        }

        let m = &raw.mask;
        let beam = GLBeamSpec::new(m.modes.clone(), parse_length("mask.waist", &m.waist)?, m.slope, m.intercept)
            .map_err(|e| invalid("mask.modes", e.to_string()))?;
        if m.gs_iterations == 0 {
            return Err(invalid("mask.gs_iterations", "must be at least 1"));
        }
        if !(m.gs_tolerance >= 0.0) {
            return Err(invalid("mask.gs_tolerance", "must be non-negative"));
        }
        if matches!(m.quantization_levels, Some(l) if l < 2) {
            return Err(invalid("mask.quantization_levels", "need at least 2 levels"));
        }
        let partition_axis = match m.partition_axis.trim() {
            "auto" => None,
            s => Some(parse_angle("mask.partition_axis", s)?),
        };
        let mask = MaskConfig {
            kind: m.kind,
            beam,
            gs: GSConfig { iterations: m.gs_iterations, modal_projection: true, convergence_tol: m.gs_tolerance },
            quantization_levels: m.quantization_levels,
            partition_axis,
            external: m.external.clone(),
        };

        let sensor = Grid2D::square(raw.sensor.pixels, parse_length("sensor.pitch", &raw.sensor.pitch)?)
            .map_err(|e| invalid("sensor", e.to_string()))?;
        let z_min = parse_length("z.min", &raw.z.min)?;
        let z_max = parse_length("z.max", &raw.z.max)?;
        if !(z_max > z_min) || raw.z.planes < 2 {
            return Err(invalid("z", "need max > min and at least 2 planes"));
        }

        let s = &raw.scene;
        if matches!(s.source, SceneSource::File | SceneSource::Vascusynth) && s.path.is_none() {
            return Err(invalid("scene.path", "required for file and vascusynth sources"));
        }
        let scene = SceneConfig { source: s.source, seed: s.seed, path: s.path.clone(), tree: s.tree };

        let n = &raw.noise;
        if !(n.read_sigma >= 0.0) {
            return Err(invalid("noise.read_sigma", "must be non-negative"));
        }
        if !(n.exposure > 0.0) {
            return Err(invalid("noise.exposure", "must be positive"));
        }
        let simulation = SimulationConfig {
            noise_enabled: n.enabled,
            noise: NoiseConfig { poisson: n.poisson, read_sigma: n.read_sigma, seed: scene.seed, clamp: n.clamp },
            exposure: n.exposure,
        };

        let r = &raw.recon;
        let mut recon = match &r.preset {
            Some(p) => ReconConfig::preset(p).map_err(|e| invalid("recon.preset", e.to_string()))?,
            None => ReconConfig::default(),
        };
        if let Some(v) = r.lambda_tv {
            recon.lambda_tv = v;
        }
        if let Some(v) = r.lambda_l1 {
            recon.lambda_l1 = v;
        }
        if let Some(v) = r.iterations {
            recon.iterations = v;
        }
        if let Some(v) = r.step_size {
            recon.step_size = v;
        }
        recon.estimate_weights = r.estimate_weights;
        recon.seed = scene.seed;
        recon.validate().map_err(|e| invalid("recon", e.to_string()))?;

        let c = &raw.crlb;
        if c.z_points == 0 || c.phi_points == 0 {
            return Err(invalid("crlb", "grid needs at least one point per axis"));
        }
        if c.patch_size < 16 || !(c.line_width > 0.0) {
            return Err(invalid("crlb", "patch_size must be >= 16 and line_width positive"));
        }
        let photons = PhotonModel::new(c.photons, c.background).map_err(|e| invalid("crlb", e.to_string()))?;
        let crlb = CrlbConfig { z_points: c.z_points, phi_points: c.phi_points, photons, patch_size: c.patch_size, line_width: c.line_width };

        if !(0.0..1.0).contains(&raw.evaluate.mip_threshold) {
            return Err(invalid("evaluate.mip_threshold", "must lie in [0, 1)"));
        }

        Ok(PipelineConfig {
            system,
            pupil_samples: o.pupil_samples,
            mask,
            sensor,
            z_min,
            z_max,
            z_planes: raw.z.planes,
            scene,
            simulation,
            recon,
            recon_preset: r.preset.clone(),
            crlb,
            evaluate: raw.evaluate,
        })
    }

    /// Overrides every seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scene.seed = seed;
        self.simulation.noise.seed = seed;
        self.recon.seed = seed;
        self
    }

    pub fn z_samples(&self) -> Vec<f64> {
        let n = self.z_planes;
        (0..n).map(|k| self.z_min + (self.z_max - self.z_min) * k as f64 / (n - 1) as f64).collect()
    }

    pub fn scene_geometry(&self) -> SceneGeometry {
        SceneGeometry { nx: self.sensor.width, ny: self.sensor.height, nz: self.z_planes, pitch_xy: self.sensor.pitch, z_min: self.z_min, z_max: self.z_max }
    }

    /// Canonical JSON of the resolved configuration: SI values, object keys
    /// sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("json value serializes")
    }

    /// Hex SHA-256 of [`PipelineConfig::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
