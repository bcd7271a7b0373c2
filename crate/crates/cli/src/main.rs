mod figures;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Axis};
use serde_json::json;

use ps2f::evaluate::{DepthMap, ScoreReport};
use ps2f::io::config::{ConfigError, MaskKind, PipelineConfig};
use ps2f::io::container::Container;
use ps2f::io::formats::{self, VASCUSYNTH_DIMS, VASCUSYNTH_EXTENT};
use ps2f::io::manifest::RunManifest;
use ps2f::mask::PsfStack;
use ps2f::pipeline;
use ps2f::Error;

#[derive(Parser)]
#[command(name = "ps2f", version, about = "Polarized spiral PSF design, simulation and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Design the phase mask (and partition axis for a polarized pair).
    DesignMask {
        #[command(flatten)]
        common: Common,
    },
    /// Render the PSF stack at the configured depths.
    RenderPsf {
        #[command(flatten)]
        common: Common,
        /// Use this mask container instead of designing one.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// sqrt-CRLB maps of line depth and orientation.
    CrlbMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stack: PathBuf,
    },
    /// Image a scene through a stack, with noise.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stack: PathBuf,
        /// Volume container; defaults to the configured scene.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recover a volume from a measurement.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        measurement: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a reconstruction's depth map against a ground-truth volume.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// All stages in sequence.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Resample a VascuSynth voxel grid into a volume container.
    ImportVascusynth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Source grid edge length.
        #[arg(long, default_value_t = VASCUSYNTH_DIMS)]
        source: usize,
    },
    /// Tabulate score reports (`score.json` files) side by side.
    Table {
        /// `label=path` pairs.
        #[arg(required = true)]
        reports: Vec<String>,
    },
}

enum Failure {
    Config(String),
    Io(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            Error::Io(_) | Error::Format(_) => Failure::Io(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<image::ImageError> for Failure {
    fn from(e: image::ImageError) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

struct Run {
    cfg: PipelineConfig,
    out: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn start(command: &str, common: &Common, seed: Option<u64>) -> Outcome<Run> {
        let mut cfg = PipelineConfig::load(&common.config).map_err(|e| match e {
            ConfigError::Read { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        })?;
        if let Some(s) = seed {
            cfg = cfg.with_seed(s);
        }
        fs::create_dir_all(&common.out)?;
        let manifest = RunManifest::new(command, &cfg);
        Ok(Run { cfg, out: common.out.clone(), manifest, started: Instant::now() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn save(&mut self, c: Container, name: &str) -> Outcome<()> {
        formats::stamp(c, &self.cfg).write_file(self.path(name))?;
        self.manifest.outputs.push(name.into());
        Ok(())
    }

    fn figure_gray(&mut self, img: &image::GrayImage, name: &str) -> Outcome<()> {
        figures::save_gray(img, &self.path(name))?;
        self.manifest.outputs.push(name.into());
        Ok(())
    }

    fn figure_rgb(&mut self, img: &image::RgbImage, name: &str) -> Outcome<()> {
        figures::save_rgb(img, &self.path(name))?;
        self.manifest.outputs.push(name.into());
        Ok(())
    }

    fn finish(mut self) -> Outcome<()> {
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        let name = format!("{}.manifest.json", self.manifest.command);
        self.manifest.write(self.path(&name))?;
        log::info!("wrote {}", self.path(&name).display());
        Ok(())
    }
}

fn load(path: &Path) -> Outcome<Container> {
    Ok(formats::load(path)?)
}

fn stack_gallery(run: &mut Run, stack: &PsfStack) -> Outcome<()> {
    let step = (stack.n_z() / 8).max(1);
    for (c, ch) in stack.channels.iter().enumerate() {
        let tiles: Vec<Array2<f64>> = (0..stack.n_z()).step_by(step).map(|k| stack.plane(c, k).to_owned()).collect();
        run.figure_gray(&figures::gallery(&tiles, 4), &format!("psf_gallery_{ch}.png"))?;
    }
    Ok(())
}

fn write_design(run: &mut Run, design: &pipeline::Design) -> Outcome<()> {
    let mut c = formats::mask_to_container(&design.mask);
    if let Some(a) = design.partition_axis {
        c.set_json("partition_axis", &a);
    }
    run.save(c, "mask.ps2f")?;
    run.figure_gray(&figures::gray(design.mask.phase.view(), 1), "mask_phase.png")?;
    run.manifest.summary = json!({
        "partition_axis_deg": design.partition_axis.map(f64::to_degrees),
        "gs": design.diagnostics,
    });
    Ok(())
}

fn design_from(run: &Run, mask: Option<&Path>) -> Outcome<pipeline::Design> {
    match mask {
        None => Ok(pipeline::design(&run.cfg)?),
        Some(p) => {
            let c = load(p)?;
            let partition_axis = match c.attrs.get("partition_axis") {
                Some(_) => Some(c.attr_json::<f64>("partition_axis").map_err(Error::from)?),
                None => None,
            };
            let m = formats::mask_from_container(c)?;
            let stored = partition_axis.filter(|_| run.cfg.mask.kind == MaskKind::Ps2f && run.cfg.mask.partition_axis.is_none());
            match stored {
                Some(a) => Ok(pipeline::Design { mask: m.mask, diagnostics: None, partition_axis: Some(a) }),
                None => Ok(pipeline::with_mask(&run.cfg, m.mask, None)?),
            }
        }
    }
}

fn depth_figure(run: &mut Run, d: &DepthMap, name: &str) -> Outcome<()> {
    let lo = d.z_levels.first().copied().unwrap_or(0.0);
    let hi = d.z_levels.last().copied().unwrap_or(1.0);
    let img = figures::colour(d.depth.view(), Some(d.valid.view()), Some((lo, hi)), 4);
    run.figure_rgb(&img, name)
}

fn write_scores(run: &mut Run, eval: &pipeline::Evaluation) -> Outcome<()> {
    let r = &eval.report;
    fs::write(run.path("score.txt"), r.to_text())?;
    fs::write(run.path("score.json"), serde_json::to_string_pretty(r).expect("report serializes") + "\n")?;
    run.manifest.outputs.extend(["score.txt".to_string(), "score.json".to_string()]);
    run.save(formats::image_to_container(&eval.predicted.depth, "depth_map"), "depth.ps2f")?;
    depth_figure(run, &eval.predicted, "depth_pred.png")?;
    depth_figure(run, &eval.truth, "depth_truth.png")?;
    run.manifest.summary = serde_json::to_value(r).expect("report serializes");
    print!("{}", r.to_text());
    Ok(())
}

fn print_loss(trace: &[f64]) {
    for (i, l) in trace.iter().enumerate().step_by(100) {
        println!("iter {i:5} loss {l:.6e}");
    }
    if let Some(l) = trace.last() {
        println!("final      loss {l:.6e}");
    }
}

fn log_map(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| if v > 0.0 { v.log10() } else { f64::NAN })
}

fn measurement_figure(run: &mut Run, m: &ps2f::forward::Measurement, name: &str) -> Outcome<()> {
    let tiles: Vec<Array2<f64>> = m.images.axis_iter(Axis(0)).map(|v| v.to_owned()).collect();
    run.figure_gray(&figures::gallery(&tiles, tiles.len()), name)
}

fn execute(cmd: Command) -> Outcome<()> {
    match cmd {
        Command::DesignMask { common } => {
            let mut run = Run::start("design-mask", &common, None)?;
            let design = pipeline::design(&run.cfg)?;
            write_design(&mut run, &design)?;
            run.finish()
        }
        Command::RenderPsf { common, mask } => {
            let mut run = Run::start("render-psf", &common, None)?;
            let design = design_from(&run, mask.as_deref())?;
            let stack = pipeline::render_stack(&run.cfg, &design)?;
            run.save(formats::stack_to_container(&stack), "stack.ps2f")?;
            stack_gallery(&mut run, &stack)?;
            run.finish()
        }
        Command::CrlbMap { common, stack } => {
            let mut run = Run::start("crlb-map", &common, None)?;
            let stack = formats::stack_from_container(&load(&stack)?)?;
            let map = pipeline::crlb(&run.cfg, &stack)?;
            run.save(formats::crlb_to_container(&map), "crlb.ps2f")?;
            run.figure_rgb(&figures::colour(log_map(&map.sqrt_crlb_z).view(), None, None, 8), "crlb_z.png")?;
            run.figure_rgb(&figures::colour(log_map(&map.sqrt_crlb_phi).view(), None, None, 8), "crlb_phi.png")?;
            let s = map.summary();
            println!("mean_sqrt_crlb_z_mm={:.6}\nmean_sqrt_crlb_phi_deg={:.6}\npeak_count={}\nnan_cells={}", s.mean_z * 1e3, s.mean_phi.to_degrees(), s.peak_count, s.nan_cells);
            run.manifest.summary = serde_json::to_value(s).expect("summary serializes");
            run.finish()
        }
        Command::Simulate { common, stack, scene, seed } => {
            let mut run = Run::start("simulate", &common, seed)?;
            let stack = formats::stack_from_container(&load(&stack)?)?;
            let scene = match scene {
                Some(p) => formats::volume_from_container(&load(&p)?)?,
                None => pipeline::build_scene(&run.cfg)?,
            };
            let sim = pipeline::simulate(&run.cfg, &scene, &stack)?;
            run.save(formats::volume_to_container(&sim.surface), "scene.ps2f")?;
            run.save(formats::measurement_to_container(&sim.measurement), "measurement.ps2f")?;
            measurement_figure(&mut run, &sim.measurement, "measurement.png")?;
            run.finish()
        }
        Command::Reconstruct { common, stack, measurement, seed } => {
            let mut run = Run::start("reconstruct", &common, seed)?;
            let stack = formats::stack_from_container(&load(&stack)?)?;
            let meas = formats::measurement_from_container(&load(&measurement)?)?;
            let r = pipeline::reconstruct(&run.cfg, &meas, &stack)?;
            print_loss(&r.loss_trace);
            run.manifest.summary = json!({ "data_residual": r.data_residual, "converged": r.converged, "iterations": r.loss_trace.len() - 1 });
            run.save(formats::recon_to_container(&r), "recon.ps2f")?;
            run.finish()
        }
        Command::Evaluate { common, recon, truth } => {
            let mut run = Run::start("evaluate", &common, None)?;
            let recon = formats::recon_from_container(&load(&recon)?)?;
            let truth = formats::volume_from_container(&load(&truth)?)?;
            let eval = pipeline::evaluate(&run.cfg, &recon.volume, &truth)?;
            write_scores(&mut run, &eval)?;
            run.finish()
        }
        Command::Pipeline { common, seed } => {
            let mut run = Run::start("pipeline", &common, seed)?;
            let design = pipeline::design(&run.cfg)?;
            write_design(&mut run, &design)?;
            let stack = pipeline::render_stack(&run.cfg, &design)?;
            run.save(formats::stack_to_container(&stack), "stack.ps2f")?;
            stack_gallery(&mut run, &stack)?;
            let scene = pipeline::build_scene(&run.cfg)?;
            let sim = pipeline::simulate(&run.cfg, &scene, &stack)?;
            run.save(formats::volume_to_container(&sim.surface), "scene.ps2f")?;
            run.save(formats::measurement_to_container(&sim.measurement), "measurement.ps2f")?;
            measurement_figure(&mut run, &sim.measurement, "measurement.png")?;
            let r = pipeline::reconstruct(&run.cfg, &sim.measurement, &stack)?;
            print_loss(&r.loss_trace);
            run.save(formats::recon_to_container(&r), "recon.ps2f")?;
            let eval = pipeline::evaluate(&run.cfg, &r.volume, &sim.surface)?;
            write_scores(&mut run, &eval)?;
            run.finish()
        }
        Command::ImportVascusynth { common, input, source } => {
            let mut run = Run::start("import-vascusynth", &common, None)?;
            let g = run.cfg.scene_geometry();
            let v = formats::import_vascusynth(&input, (source, source, source), (g.nx, g.ny, g.nz), VASCUSYNTH_EXTENT)?;
            let (px, py, pz) = v.voxel_pitch;
            println!("voxel_pitch_um={:.3}x{:.3}x{:.3}", px * 1e6, py * 1e6, pz * 1e6);
            run.manifest.summary = json!({ "voxel_pitch_m": [px, py, pz], "dims": [g.nx, g.ny, g.nz] });
            run.save(formats::volume_to_container(&v), "volume.ps2f")?;
            run.finish()
        }
        Command::Table { reports } => {
            println!("{:<16} {:>10} {:>10} {:>9} {:>9}", "label", "MAE(mm)", "RMSE(mm)", "MS-SSIM", "coverage");
            for entry in reports {
                let (label, path) = entry.split_once('=').ok_or_else(|| Failure::Config(format!("expected label=path, got `{entry}`")))?;
                let text = fs::read_to_string(path)?;
                let r: ScoreReport = serde_json::from_str(&text).map_err(|e| Failure::Io(format!("{path}: {e}")))?;
                println!("{:<16} {:>10.4} {:>10.4} {:>9.4} {:>9.3}", label, r.mae * 1e3, r.rmse * 1e3, r.ms_ssim, r.coverage);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
