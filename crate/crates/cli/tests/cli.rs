use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[optics]
wavelength = "532nm"
f1 = "50mm"
aperture = "3mm"
pupil_samples = 128
[mask]
kind = "ps2f"
gs_iterations = 5
[sensor]
pixels = 32
pitch = "6.875um"
[z]
min = "-2mm"
max = "2mm"
planes = 8
[recon]
iterations = 20
[crlb]
z_points = 2
phi_points = 2
patch_size = 32
"#;

fn ps2f(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ps2f")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ps2f(&["design-mask", "-c", s(&dir.path().join("absent.toml")), "-o", s(dir.path())]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_configs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("unknown.toml", format!("{TINY}\n[extra]\nx = 1\n")),
        ("unitless.toml", TINY.replace("\"532nm\"", "\"532\"")),
        ("planes.toml", TINY.replace("planes = 8", "planes = 0")),
    ] {
        let cfg = write_config(dir.path(), name, &text);
        let o = ps2f(&["design-mask", "-c", s(&cfg), "-o", s(&dir.path().join("out"))]);
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn corrupt_container_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let bad = dir.path().join("bad.ps2f");
    fs::write(&bad, b"NOPE0000").unwrap();
    let o = ps2f(&["crlb-map", "-c", s(&cfg), "-o", s(dir.path()), "--stack", s(&bad)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn stages_chain_and_write_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("run");
    let o = ps2f(&["render-psf", "-c", s(&cfg), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stack = out.join("stack.ps2f");
    let galleries = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("psf_gallery")).count();
    assert_eq!(galleries, 2);

    let o = ps2f(&["crlb-map", "-c", s(&cfg), "-o", s(&out), "--stack", s(&stack)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let map = ps2f::io::formats::crlb_from_container(&ps2f::io::formats::load(out.join("crlb.ps2f")).unwrap()).unwrap();
    assert_eq!(map.sqrt_crlb_z.dim(), (2, 2));
    assert!(out.join("crlb_z.png").exists());

    let o = ps2f(&["simulate", "-c", s(&cfg), "-o", s(&out), "--stack", s(&stack), "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = ps2f(&["reconstruct", "-c", s(&cfg), "-o", s(&out), "--stack", s(&stack), "--measurement", s(&out.join("measurement.ps2f"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("iter     0 loss"));
    let o = ps2f(&["evaluate", "-c", s(&cfg), "-o", s(&out), "--recon", s(&out.join("recon.ps2f")), "--truth", s(&out.join("scene.ps2f"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("rmse"));

    let hash = ps2f::io::config::PipelineConfig::load(&cfg).unwrap().with_seed(4).hash();
    let m = ps2f::io::manifest::RunManifest::read(out.join("simulate.manifest.json")).unwrap();
    assert_eq!(m.config_hash, hash);
    assert_eq!(m.crate_version, env!("CARGO_PKG_VERSION"));
    assert!(m.wall_time_s >= 0.0);
    for name in ["render-psf", "crlb-map", "reconstruct", "evaluate"] {
        assert!(out.join(format!("{name}.manifest.json")).exists(), "{name}");
    }
}

#[test]
fn scene_outside_the_stack_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let o = ps2f(&["render-psf", "-c", s(&cfg), "-o", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let far = ps2f::forward::Volume3D::zeros((32, 32, 4), (6.875e-6, 6.875e-6, 1e-3), 40e-3).unwrap();
    let scene = dir.path().join("far.ps2f");
    ps2f::io::formats::save(&ps2f::io::formats::volume_to_container(&far), &scene).unwrap();
    let o = ps2f(&["simulate", "-c", s(&cfg), "-o", s(dir.path()), "--stack", s(&dir.path().join("stack.ps2f")), "--scene", s(&scene)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pipeline_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = ps2f(&["pipeline", "-c", s(&cfg), "-o", s(&out), "--seed", seed]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b, c) = (run("a", "9"), run("b", "9"), run("c", "10"));
    for f in ["mask.ps2f", "stack.ps2f", "scene.ps2f", "measurement.ps2f", "recon.ps2f", "depth.ps2f", "score.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("measurement.ps2f")).unwrap(), fs::read(c.join("measurement.ps2f")).unwrap());
    for f in ["mask_phase.png", "measurement.png", "depth_pred.png", "depth_truth.png", "pipeline.manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
}

#[test]
fn table_lists_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("score.json");
    fs::write(&p, r#"{"mae": 0.0001, "rmse": 0.0002, "ms_ssim": 0.9, "coverage": 0.5}"#).unwrap();
    let o = ps2f(&["table", &format!("tree={}", s(&p))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("tree") && text.contains("0.2000"), "{text}");
    assert_eq!(code(&ps2f(&["table", "nolabel"])), 2);
}
