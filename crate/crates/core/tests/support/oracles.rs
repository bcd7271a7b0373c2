//! Numerical oracles shared by the oracle tests and the acceptance run.
//! Each check returns `Err` with a description of the first violation.

use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ps2f::fisher::{crlb_extract, fisher_point, CrlbMap, FdStep, PhotonModel};
use ps2f::forward::{image_scene, ForwardOperator, Measurement, NoiseMeta, Volume3D};
use ps2f::io::config::PipelineConfig;
use ps2f::io::container::Container;
use ps2f::io::formats::*;
use ps2f::mask::{design_dhpsf_mask, partition_mask, Channel, GSConfig, Half, PsfStack};
use ps2f::optics::{GLBeamSpec, PsfRenderer, System4f};
use ps2f::pipeline;
use ps2f::recon::{gradient, objective, solve_with_weights, Problem, ReconConfig, ReconResult};

pub type Check = Result<(), String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

macro_rules! check_eq {
    ($a:expr, $b:expr, $($msg:tt)+) => {
        if $a != $b {
            return Err(format!($($msg)+));
        }
    };
    ($a:expr, $b:expr) => {
        check_eq!($a, $b, "{} != {}", stringify!($a), stringify!($b))
    };
}


fn gaussian(n: usize, sigma: f64) -> Array2<f64> {
    let c = (n / 2) as f64;
    Array2::from_shape_fn((n, n), |(r, col)| {
        let (x, y) = (col as f64 - c, r as f64 - c);
        (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
    })
}

fn random_stack(rng: &mut ChaCha8Rng, channels: Vec<Channel>, planes: usize, k: usize) -> PsfStack {
    let psfs = Array4::from_shape_fn((channels.len(), planes, k, k), |_| rng.random::<f64>() / (k * k) as f64);
    let z = (0..planes).map(|i| i as f64 * 1e-4).collect();
    PsfStack::new(z, channels, psfs, 1e-6).unwrap()
}

pub fn gaussian_spot_localization_matches_closed_form() -> Check {
    let n = 64;
    let sigmas = [2.0, 2.2, 2.4, 2.6, 2.8];
    let mut psfs = Array4::zeros((1, sigmas.len(), n, n));
    for (k, s) in sigmas.iter().enumerate() {
        psfs.index_axis_mut(Axis(0), 0).index_axis_mut(Axis(0), k).assign(&gaussian(n, *s));
    }
    let z: Vec<f64> = (0..sigmas.len()).map(|k| k as f64 * 1e-4).collect();
    let stack = PsfStack::new(z, vec![Channel::Full], psfs, 1e-6).unwrap();
    let photons = 5000.0;
    let model = PhotonModel::new(photons, 0.0).unwrap();
    let fi = fisher_point(&stack, 0, (0.0, 0.0, 2e-4), &model, &FdStep::for_stack(&stack)).unwrap();
    let crlb = crlb_extract(&fi);
    let expect = 2.4 / photons.sqrt();
    for v in &crlb[..2] {
        check!((v / expect - 1.0).abs() < 0.05, "{v} vs {expect}");
    }
    Ok(())
}

pub fn gradient_matches_central_differences() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stack = random_stack(&mut rng, vec![Channel::Deg0, Channel::Deg90], 4, 7);
    let images = Array3::from_shape_fn((2, 16, 16), |_| rng.random::<f64>());
    let meas = Measurement::new(vec![Channel::Deg0, Channel::Deg90], images, NoiseMeta::default()).unwrap();
    let p = Problem::new(&meas, &stack).unwrap();
    let cfg = ReconConfig::default();
    let x = p.template.with_values(Array3::from_shape_fn(p.template.values.dim(), |_| rng.random::<f64>())).unwrap();
    let g = gradient(&x, &p, &cfg).unwrap();
    let (nz, ny, nx) = x.values.dim();
    let h = 1e-4;
    for _ in 0..100 {
        let idx = (rng.random_range(0..nz), rng.random_range(0..ny), rng.random_range(0..nx));
        let mut plus = x.clone();
        plus.values[idx] += h;
        let mut minus = x.clone();
        minus.values[idx] -= h;
        let fd = (objective(&plus, &p, &cfg).unwrap() - objective(&minus, &p, &cfg).unwrap()) / (2.0 * h);
        let rel = (fd - g[idx]).abs() / g[idx].abs().max(1e-12);
        check!(rel < 1e-4, "{idx:?}: {fd} vs {}", g[idx]);
    }
    Ok(())
}

pub fn adjoint_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let stack = random_stack(&mut rng, vec![Channel::Deg0, Channel::Deg90], 5, 9);
    let scene = Volume3D::new(Array3::from_shape_fn((5, 20, 24), |_| rng.random::<f64>()), (1e-6, 1e-6, 1e-4), 0.0).unwrap();
    let op = ForwardOperator::new(&scene, &stack).unwrap();
    let y = Array3::from_shape_fn((2, 20, 24), |_| rng.random::<f64>() - 0.5);
    let lhs = (&op.apply(&scene.values).unwrap() * &y).sum();
    let rhs = (&scene.values * &op.adjoint(&y).unwrap()).sum();
    check!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
    Ok(())
}

pub fn half_aperture_fields_add_coherently() -> Check {
    let sys = System4f::reference();
    let grid = sys.pupil_grid(128).unwrap();
    let gs = GSConfig { iterations: 5, ..GSConfig::default() };
    let mask = design_dhpsf_mask(&GLBeamSpec::double_helix(), &sys, &grid, &gs).unwrap().mask;
    let asm = partition_mask(&mask, 0.7);
    let r = PsfRenderer::new(sys, grid, 2).unwrap();
    for dz in [-1.3e-3, 0.0, 2.1e-3] {
        let a = r.field(&asm.half_field(Half::A), dz).unwrap();
        let b = r.field(&asm.half_field(Half::B), dz).unwrap();
        let full = r.intensity(&mask.to_field().values, dz).unwrap();
        let sum: Array2<f64> = (&a + &b).mapv(|v: Complex64| v.norm_sqr());
        let peak = full.iter().cloned().fold(0.0, f64::max);
        let worst = (&sum - &full).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        check!(worst <= 1e-9 * peak, "dz {dz}: {worst} vs peak {peak}");
    }
    Ok(())
}

fn roundtrip(c: &Container, dir: &Path, name: &str) -> Result<Container, String> {
    let path = dir.join(name);
    save(c, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = load(&path).unwrap();
    check_eq!(back.to_bytes(), first, "{name}: bytes differ after reload");
    Ok(back)
}

pub fn container_roundtrips_are_bit_exact() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let f32s = |a: Array3<f64>| a.mapv(|v| v as f32 as f64);

    let stack = random_stack(&mut rng, vec![Channel::Deg0, Channel::Deg90], 3, 8);
    let stack = PsfStack::new(stack.z_samples.clone(), stack.channels.clone(), stack.psfs.mapv(|v| v as f32 as f64), stack.pitch).unwrap();
    let back = stack_from_container(&roundtrip(&stack_to_container(&stack), dir.path(), "stack")?).unwrap();
    check_eq!(back.psfs, stack.psfs);
    check_eq!(back.channels, stack.channels);
    check_eq!(back.z_samples, stack.z_samples);

    let vol = Volume3D::new(f32s(Array3::from_shape_fn((3, 5, 6), |_| rng.random::<f64>())), (1e-6, 2e-6, 3e-5), -1e-3).unwrap();
    let back = volume_from_container(&roundtrip(&volume_to_container(&vol), dir.path(), "volume")?).unwrap();
    check_eq!(back, vol);

    let meas = Measurement::new(
        vec![Channel::Deg0, Channel::Deg90],
        f32s(Array3::from_shape_fn((2, 5, 6), |_| rng.random::<f64>())),
        NoiseMeta { poisson: true, read_sigma: 0.05 },
    )
    .unwrap();
    let back = measurement_from_container(&roundtrip(&measurement_to_container(&meas), dir.path(), "meas")?).unwrap();
    check_eq!(back, meas);

    let sys = System4f::reference();
    let grid = sys.pupil_grid(64).unwrap();
    let gs = GSConfig { iterations: 2, ..GSConfig::default() };
    let mask = design_dhpsf_mask(&GLBeamSpec::double_helix(), &sys, &grid, &gs).unwrap().mask;
    let c = mask_to_container(&mask);
    let once = mask_from_container(roundtrip(&c, dir.path(), "mask")?).unwrap().mask;
    let twice = mask_from_container(roundtrip(&mask_to_container(&once), dir.path(), "mask2")?).unwrap().mask;
    check_eq!(once, twice);

    let map = CrlbMap {
        z_grid: vec![-1e-3, 1e-3],
        phi_grid: vec![0.0, 0.5, 1.0],
        sqrt_crlb_z: Array2::from_shape_fn((2, 3), |(i, j)| if i + j == 2 { f64::NAN } else { ((i * 3 + j) as f64 * 1e-6) as f32 as f64 }),
        sqrt_crlb_phi: Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64 * 0.125),
        photon_model: PhotonModel::new(1e5, 5.0).unwrap(),
        psf_label: "ps2f".into(),
        patch_size: 64,
        line_width: 1.0,
    };
    let back = crlb_from_container(&roundtrip(&crlb_to_container(&map), dir.path(), "crlb")?).unwrap();
    check_eq!(back.sqrt_crlb_z.mapv(f64::to_bits), map.sqrt_crlb_z.mapv(f64::to_bits), "crlb z surface changed");
    check_eq!(back.sqrt_crlb_phi, map.sqrt_crlb_phi, "crlb phi surface changed");
    check_eq!((back.z_grid, back.phi_grid, back.psf_label), (map.z_grid, map.phi_grid, map.psf_label), "crlb grids changed");

    let recon = ReconResult {
        volume: vol.clone(),
        weights: Some(f32s(Array3::from_shape_fn((2, 5, 6), |_| rng.random::<f64>()))),
        loss_trace: vec![3.25, 1.0 / 3.0, 0.1],
        data_residual: 0.07,
        converged: false,
    };
    let back = recon_from_container(&roundtrip(&recon_to_container(&recon), dir.path(), "recon")?).unwrap();
    check_eq!(back, recon, "recon result changed");
    Ok(())
}

const SMALL: &str = r#"
[optics]
wavelength = "532nm"
f1 = "50mm"
aperture = "3mm"
pupil_samples = 128
[mask]
gs_iterations = 5
[sensor]
pixels = 32
pitch = "6.875um"
[z]
min = "-2mm"
max = "2mm"
planes = 12
[recon]
iterations = 40
[crlb]
z_points = 2
phi_points = 2
patch_size = 32
"#;

pub fn fixed_seed_pipeline_is_byte_identical() -> Check {
    let cfg = PipelineConfig::from_toml_str(SMALL).unwrap().with_seed(5);
    let reseeded = cfg.clone().with_seed(6);
    let bytes = |run: &pipeline::PipelineRun| {
        [
            stamp(stack_to_container(&run.stack), &cfg).to_bytes(),
            stamp(measurement_to_container(&run.simulation.measurement), &cfg).to_bytes(),
            stamp(recon_to_container(&run.reconstruction), &cfg).to_bytes(),
        ]
    };
    let a = pipeline::run(&cfg).unwrap();
    let b = pipeline::run(&cfg).unwrap();
    check_eq!(bytes(&a), bytes(&b), "two runs with one seed differ");
    let other = pipeline::run(&reseeded).unwrap();
    check!(bytes(&a)[1] != bytes(&other)[1], "seed change left the measurement unchanged");
    Ok(())
}

pub fn stamped_hash_matches_config() -> Check {
    let cfg = PipelineConfig::from_toml_str(SMALL).unwrap();
    let vol = Volume3D::zeros((2, 2, 2), (1e-6, 1e-6, 1e-6), 0.0).unwrap();
    let c = stamp(volume_to_container(&vol), &cfg);
    check_eq!(c.attr("config_hash").unwrap(), cfg.hash(), "stamped hash differs from the config hash");
    let back = PipelineConfig::from_toml_str(&SMALL.replace("\"532nm\"", "\"0.532um\"")).unwrap();
    check_eq!(back.hash(), cfg.hash(), "equivalent units hash differently");
    Ok(())
}

pub fn channel_gains_recovered_as_weight_ratio() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let k = 7;
    let mut psfs = Array4::zeros((2, 3, k, k));
    for c in 0..2 {
        for z in 0..3 {
            let g = gaussian(k, 0.8 + 0.4 * z as f64 + 0.2 * c as f64);
            let s = g.sum();
            psfs.index_axis_mut(Axis(0), c).index_axis_mut(Axis(0), z).assign(&(g / s));
        }
    }
    let stack = PsfStack::new(vec![0.0, 1e-4, 2e-4], vec![Channel::Deg0, Channel::Deg90], psfs, 1e-6).unwrap();
    let scene = Volume3D::new(
        Array3::from_shape_fn((3, 24, 24), |_| if rng.random::<f64>() < 0.08 { rng.random_range(0.5..1.0) } else { 0.0 }),
        (1e-6, 1e-6, 1e-4),
        0.0,
    )
    .unwrap();
    let mut meas = image_scene(&scene, &stack, 1.0).unwrap();
    meas.images.index_axis_mut(Axis(0), 1).mapv_inplace(|v| v * 0.5);
    let p = Problem::new(&meas, &stack).unwrap();
    let cfg = ReconConfig { iterations: 1500, estimate_weights: true, ..ReconConfig::default() };
    let r = solve_with_weights(&p, &cfg).unwrap();
    let w = r.weights.unwrap();
    let signal = &meas.images;
    let peak = signal.iter().cloned().fold(0.0, f64::max);
    let mut ratios: Vec<f64> = (0..24 * 24)
        .map(|i| (i / 24, i % 24))
        .filter(|&(y, x)| signal[[0, y, x]] > 0.2 * peak && signal[[1, y, x]] > 0.1 * peak)
        .map(|(y, x)| w[[0, y, x]] / w[[1, y, x]])
        .collect();
    ratios.sort_by(|a, b| a.total_cmp(b));
    let median = ratios[ratios.len() / 2];
    check!((median / 2.0 - 1.0).abs() < 0.1, "median weight ratio {median} over {} pixels", ratios.len());
    Ok(())
}
