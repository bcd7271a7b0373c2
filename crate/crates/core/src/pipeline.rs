//! End-to-end stages driven by a [`PipelineConfig`]: mask design, PSF stack,
//! CRLB map, scene, simulated capture, reconstruction and scoring.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::evaluate::{mip_depth, score, DepthMap, ScoreReport};
use crate::fisher::{crlb_map, ChannelRef, CrlbMap, FdStep};
use crate::forward::scenes::{single_voxel, skew_line, vascular_tree, SceneGeometry};
use crate::forward::{add_noise, image_scene, surface_extract, Measurement, NoiseConfig, Volume3D};
use crate::io::config::{MaskKind, PipelineConfig, SceneSource};
use crate::io::formats::{import_vascusynth, load, volume_from_container, VASCUSYNTH_DIMS, VASCUSYNTH_EXTENT};
use crate::mask::{
    auto_partition_axis, design_dhpsf_mask, load_external_mask, partition_mask, quantize_phase, render_psf_stack_with, GSDiagnostics,
    PhaseMask, PsfSource, PsfStack,
};
use crate::optics::PsfRenderer;
use crate::recon::{solve_from, solve_with_weights, Problem, ReconConfig, ReconResult};

#[derive(Debug, Clone)]
pub struct Design {
    pub mask: PhaseMask,
    /// `None` for an external mask.
    pub diagnostics: Option<GSDiagnostics>,
    /// Dividing-line angle of the polarized halves (radians).
    pub partition_axis: Option<f64>,
}

/// Designs (or loads) the mask and, for a polarized pair, picks the
/// partition axis.
pub fn design(cfg: &PipelineConfig) -> Result<Design> {
    let (mut mask, diagnostics) = match &cfg.mask.external {
        Some(path) => (load_external_mask(path)?.mask, None),
        None => {
            let grid = cfg.system.pupil_grid(cfg.pupil_samples)?;
            let d = design_dhpsf_mask(&cfg.mask.beam, &cfg.system, &grid, &cfg.mask.gs)?;
            (d.mask, Some(d.diagnostics))
        }
    };
    if let Some(levels) = cfg.mask.quantization_levels {
        mask = quantize_phase(&mask, levels)?;
    }
    with_mask(cfg, mask, diagnostics)
}

/// Wraps an existing mask, choosing the partition axis as configured.
pub fn with_mask(cfg: &PipelineConfig, mask: PhaseMask, diagnostics: Option<GSDiagnostics>) -> Result<Design> {
    let partition_axis = match cfg.mask.kind {
        MaskKind::Dhpsf => None,
        MaskKind::Ps2f => Some(match cfg.mask.partition_axis {
            Some(a) => a,
            None => {
                let r = PsfRenderer::new(cfg.system, mask.grid, 2)?;
                auto_partition_axis(&mask, &r, &cfg.sensor)?
            }
        }),
    };
    Ok(Design { mask, diagnostics, partition_axis })
}

/// PSF stack at the configured depths: one full channel for a DHPSF, the
/// 0/90 deg pair for PS2F.
pub fn render_stack(cfg: &PipelineConfig, design: &Design) -> Result<PsfStack> {
    let r = PsfRenderer::new(cfg.system, design.mask.grid, 2)?;
    let z = cfg.z_samples();
    match design.partition_axis {
        None => render_psf_stack_with(PsfSource::Mask(&design.mask), &r, &z, &cfg.sensor),
        Some(a) => render_psf_stack_with(PsfSource::Assembly(&partition_mask(&design.mask, a)), &r, &z, &cfg.sensor),
    }
}

/// sqrt-CRLB map over the configured (z, phi) grid, with z spanning the stack
/// range inset by the finite-difference step. A single-channel stack gets the
/// full photon budget; a pair gets a quarter per channel.
pub fn crlb(cfg: &PipelineConfig, stack: &PsfStack) -> Result<CrlbMap> {
    let c = &cfg.crlb;
    let span = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
        if n == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
        }
    };
    let step = FdStep::for_stack(stack);
    let (lo, hi) = stack.z_range();
    let z_grid = span(c.z_points, lo + step.dz, hi - step.dz);
    let phi_grid: Vec<f64> = (0..c.phi_points).map(|k| PI * k as f64 / c.phi_points as f64).collect();
    let (channels, label) = if stack.channels.len() >= 2 { (ChannelRef::pair(stack), "ps2f") } else { (ChannelRef::single(stack), "dhpsf") };
    crlb_map(&channels, &z_grid, &phi_grid, &c.photons, c.patch_size, c.line_width, &step, label)
}

/// The configured scene on the sensor grid and z sampling.
pub fn build_scene(cfg: &PipelineConfig) -> Result<Volume3D> {
    let g = cfg.scene_geometry();
    let s = &cfg.scene;
    match s.source {
        SceneSource::Tree => Ok(vascular_tree(&g, &s.tree, s.seed)),
        SceneSource::SkewLine => skew_line(&g, g.ny / 2, g.nx / 8, g.nz / 4, (3 * g.nz) / 4),
        SceneSource::SingleVoxel => single_voxel(&g, (g.nx / 2, g.ny / 2, g.nz / 2), 1.0),
        SceneSource::File => volume_from_container(&load(s.path.as_ref().expect("validated"))?),
        SceneSource::Vascusynth => {
            let d = VASCUSYNTH_DIMS;
            import_vascusynth(s.path.as_ref().expect("validated"), (d, d, d), (g.nx, g.ny, g.nz), VASCUSYNTH_EXTENT)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// The visible surface actually imaged.
    pub surface: Volume3D,
    pub clean: Measurement,
    pub measurement: Measurement,
}

/// Surface extraction, imaging at the configured exposure, then noise.
pub fn simulate(cfg: &PipelineConfig, scene: &Volume3D, stack: &PsfStack) -> Result<Simulation> {
    let surface = surface_extract(scene);
    let clean = image_scene(&surface, stack, cfg.simulation.exposure)?;
    let measurement = if cfg.simulation.noise_enabled { add_noise(&clean, &cfg.simulation.noise)? } else { clean.clone() };
    Ok(Simulation { surface, clean, measurement })
}

/// Reconstruction on the stack's plane grid from the measurement scaled to
/// unit maximum.
pub fn reconstruct(cfg: &PipelineConfig, meas: &Measurement, stack: &PsfStack) -> Result<ReconResult> {
    let peak = meas.max();
    if !(peak > 0.0) {
        return Err(Error::param("measurement", "has no positive signal"));
    }
    let scaled = meas.scaled(1.0 / peak);
    let problem = Problem::new(&scaled, stack)?;
    solve_with_weights(&problem, &cfg.recon)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predicted: DepthMap,
    pub truth: DepthMap,
    pub report: ScoreReport,
}

pub fn evaluate(cfg: &PipelineConfig, reconstruction: &Volume3D, truth: &Volume3D) -> Result<Evaluation> {
    let t = cfg.evaluate.mip_threshold;
    let predicted = mip_depth(reconstruction, t);
    let truth = mip_depth(truth, t);
    let report = score(&predicted, &truth)?;
    Ok(Evaluation { predicted, truth, report })
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub design: Design,
    pub stack: PsfStack,
    pub scene: Volume3D,
    pub simulation: Simulation,
    pub reconstruction: ReconResult,
    pub evaluation: Evaluation,
}

/// Every stage in order, scored against the imaged surface.
pub fn run(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let design = design(cfg)?;
    let stack = render_stack(cfg, &design)?;
    let scene = build_scene(cfg)?;
    let simulation = simulate(cfg, &scene, &stack)?;
    let reconstruction = reconstruct(cfg, &simulation.measurement, &stack)?;
    let evaluation = evaluate(cfg, &reconstruction.volume, &simulation.surface)?;
    Ok(PipelineRun { design, stack, scene, simulation, reconstruction, evaluation })
}

/// Outcome of reconstructing one skew line from the true and the depth-mirrored
/// initial scene.
#[derive(Debug, Clone, PartialEq)]
pub struct LineTrial {
    /// Final data residuals from the true and the mirrored start.
    pub residuals: [f64; 2],
    /// `|r_true - r_mirror| / min(r_true, r_mirror)`.
    pub relative_gap: f64,
    /// Depth slope along x (metres per pixel) of the truth.
    pub true_slope: f64,
    /// Depth slope of the lower-residual reconstruction; NaN if undefined.
    pub best_slope: f64,
}

/// Images a line along row `row` spanning the full width, with depth running
/// from plane `z_from` to `z_to`, then reconstructs from the line and from its
/// mirror image about the centre of the depth range. The measurement and each
/// starting volume's noiseless image are scaled to unit peak.
#[allow(clippy::too_many_arguments)]
pub fn line_trial(
    stack: &PsfStack,
    geom: &SceneGeometry,
    row: usize,
    (z_from, z_to): (usize, usize),
    exposure: f64,
    noise: &NoiseConfig,
    recon: &ReconConfig,
    threshold: f64,
) -> Result<LineTrial> {
    let last = geom.nz - 1;
    let truth = skew_line(geom, row, 0, z_from, z_to)?;
    let mirror = skew_line(geom, row, 0, last - z_from.min(last), last - z_to.min(last))?;
    let clean = image_scene(&truth, stack, exposure)?;
    let noisy = add_noise(&clean, noise)?;
    let peak = noisy.max();
    if !(peak > 0.0) {
        return Err(Error::param("measurement", "has no positive signal"));
    }
    let scaled = noisy.scaled(1.0 / peak);
    let problem = Problem::on_grid(&scaled, stack, &truth)?;
    let start = |v: &Volume3D| -> Result<Volume3D> { v.with_values(&v.values * (1.0 / image_scene(v, stack, 1.0)?.max())) };
    let a = solve_from(&problem, recon, &start(&truth)?)?;
    let b = solve_from(&problem, recon, &start(&mirror)?)?;
    let residuals = [a.data_residual, b.data_residual];
    let best = if residuals[0] <= residuals[1] { &a } else { &b };
    Ok(LineTrial {
        residuals,
        relative_gap: (residuals[0] - residuals[1]).abs() / residuals[0].min(residuals[1]),
        true_slope: mip_depth(&truth, threshold).slope_x().unwrap_or(f64::NAN),
        best_slope: mip_depth(&best.volume, threshold).slope_x().unwrap_or(f64::NAN),
    })
}
