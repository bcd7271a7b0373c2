//! Typed save/load of domain objects through the array container, external
//! mask import and VascuSynth volume import.
//!
//! Array data is stored as float32, so a loaded object holds the float32
//! rounding of what was saved; saving it again reproduces the same bytes.
//! Scalar metadata travels as JSON attributes and is exact.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Array3, Array4, ArrayD, Axis, IxDyn};

use crate::error::{Error, Result};
use crate::fisher::CrlbMap;
use crate::forward::{Measurement, Volume3D};
use crate::io::config::PipelineConfig;
use crate::io::container::{Container, FormatError};
use crate::mask::{Channel, ExternalMask, PhaseMask, PsfStack};
use crate::optics::Grid2D;
use crate::recon::ReconResult;

pub const KIND_PHASE_MASK: &str = "phase_mask";
pub const KIND_PSF_STACK: &str = "psf_stack";
pub const KIND_VOLUME: &str = "volume";
pub const KIND_MEASUREMENT: &str = "measurement";
pub const KIND_CRLB_MAP: &str = "crlb_map";
pub const KIND_RECON_RESULT: &str = "recon_result";

fn bad(key: &str, reason: impl Into<String>) -> Error {
    FormatError::BadAttribute { key: key.into(), reason: reason.into() }.into()
}

fn pack<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> Container {
    Container::new(a.shape().to_vec(), a.iter().map(|v| *v as f32).collect())
}

fn unpack(c: &Container, ndim: usize) -> Result<ArrayD<f64>> {
    if c.dims.len() != ndim {
        return Err(bad("dims", format!("expected {ndim} dimensions, found {}", c.dims.len())));
    }
    Ok(ArrayD::from_shape_vec(IxDyn(&c.dims), c.data.iter().map(|v| *v as f64).collect()).expect("length checked on read"))
}

fn channel_labels(channels: &[Channel]) -> Vec<&'static str> {
    channels.iter().map(|c| c.label()).collect()
}

fn parse_channels(c: &Container) -> Result<Vec<Channel>> {
    let labels: Vec<String> = c.attr_json("channels")?;
    labels.iter().map(|l| l.parse().map_err(|e: Error| bad("channels", e.to_string()))).collect()
}

/// Records the configuration snapshot and its hash on a container.
pub fn stamp(mut c: Container, cfg: &PipelineConfig) -> Container {
    c.attrs.insert("config".into(), cfg.canonical_json());
    c.attrs.insert("config_hash".into(), cfg.hash());
    c
}

pub fn mask_to_container(m: &PhaseMask) -> Container {
    let mut c = pack(&m.phase).with_attr("kind", KIND_PHASE_MASK);
    c.set_json("pitch", &m.grid.pitch);
    c.set_json("diameter", &m.diameter);
    c.set_json("quantization_levels", &m.quantization_levels);
    c
}

/// Reads a phase mask. Phases outside [0, 2pi) are wrapped; samples that lay
/// outside by more than float32 rounding are counted and logged. `pitch` is
/// required; a missing `diameter` means the full grid width.
pub fn mask_from_container(c: Container) -> Result<ExternalMask> {
    if let Ok(kind) = c.attr("kind") {
        if kind != KIND_PHASE_MASK {
            return Err(FormatError::KindMismatch { expected: KIND_PHASE_MASK.into(), found: kind.into() }.into());
        }
    }
    let raw = unpack(&c, 2)?.into_dimensionality::<ndarray::Ix2>().expect("2-D");
    let pitch: f64 = c.attr_json("pitch")?;
    let (h, w) = raw.dim();
    let grid = Grid2D::new(w, h, pitch)?;
    let diameter: f64 = match c.attrs.get("diameter") {
        Some(_) => c.attr_json("diameter")?,
        None => grid.extent().0,
    };
    let levels: Option<u32> = match c.attrs.get("quantization_levels") {
        Some(_) => c.attr_json("quantization_levels")?,
        None => None,
    };
    let slack = 1e-6;
    let wrapped_samples = raw.iter().filter(|p| !(**p >= -slack && **p < TAU + slack)).count();
    if raw.iter().any(|p| !p.is_finite()) {
        return Err(bad("data", "phase values must be finite"));
    }
    let phase = match levels {
        Some(l) => {
            let step = TAU / l as f64;
            raw.mapv(|p| ((p / step).round() as i64).rem_euclid(l as i64) as f64 * step)
        }
        None => raw.mapv(crate::mask::wrap_phase),
    };
    if wrapped_samples > 0 {
        log::warn!("{wrapped_samples} mask samples outside [0, 2pi) were wrapped");
    }
    Ok(ExternalMask { mask: PhaseMask::new(grid, phase, diameter, levels)?, wrapped_samples })
}

pub fn stack_to_container(s: &PsfStack) -> Container {
    let mut c = pack(&s.psfs).with_attr("kind", KIND_PSF_STACK);
    c.set_json("z_samples", &s.z_samples);
    c.set_json("channels", &channel_labels(&s.channels));
    c.set_json("pitch", &s.pitch);
    c
}

pub fn stack_from_container(c: &Container) -> Result<PsfStack> {
    c.expect_kind(KIND_PSF_STACK)?;
    let psfs: Array4<f64> = unpack(c, 4)?.into_dimensionality().expect("4-D");
    PsfStack::new(c.attr_json("z_samples")?, parse_channels(c)?, psfs, c.attr_json("pitch")?)
}

pub fn volume_to_container(v: &Volume3D) -> Container {
    let mut c = pack(&v.values).with_attr("kind", KIND_VOLUME);
    c.set_json("voxel_pitch", &v.voxel_pitch);
    c.set_json("z_origin", &v.z_origin);
    c
}

pub fn volume_from_container(c: &Container) -> Result<Volume3D> {
    c.expect_kind(KIND_VOLUME)?;
    let values: Array3<f64> = unpack(c, 3)?.into_dimensionality().expect("3-D");
    Volume3D::new(values, c.attr_json("voxel_pitch")?, c.attr_json("z_origin")?)
}

pub fn measurement_to_container(m: &Measurement) -> Container {
    let mut c = pack(&m.images).with_attr("kind", KIND_MEASUREMENT);
    c.set_json("channels", &channel_labels(&m.channels));
    c.set_json("noise", &m.noise);
    c
}

pub fn measurement_from_container(c: &Container) -> Result<Measurement> {
    c.expect_kind(KIND_MEASUREMENT)?;
    let images: Array3<f64> = unpack(c, 3)?.into_dimensionality().expect("3-D");
    Measurement::new(parse_channels(c)?, images, c.attr_json("noise")?)
}

/// Stored as `[2][z][phi]`: sqrt CRLB of z, then of phi.
pub fn crlb_to_container(m: &CrlbMap) -> Container {
    let both = ndarray::stack(Axis(0), &[m.sqrt_crlb_z.view(), m.sqrt_crlb_phi.view()]).expect("equal shapes");
    let mut c = pack(&both).with_attr("kind", KIND_CRLB_MAP);
    c.set_json("z_grid", &m.z_grid);
    c.set_json("phi_grid", &m.phi_grid);
    c.set_json("photon_model", &m.photon_model);
    c.set_json("patch_size", &m.patch_size);
    c.set_json("line_width", &m.line_width);
    c.attrs.insert("psf_label".into(), m.psf_label.clone());
    c
}

pub fn crlb_from_container(c: &Container) -> Result<CrlbMap> {
    c.expect_kind(KIND_CRLB_MAP)?;
    let both: Array3<f64> = unpack(c, 3)?.into_dimensionality().expect("3-D");
    if both.dim().0 != 2 {
        return Err(bad("dims", "expected a leading axis of 2 (z, phi)"));
    }
    let z_grid: Vec<f64> = c.attr_json("z_grid")?;
    let phi_grid: Vec<f64> = c.attr_json("phi_grid")?;
    if both.dim().1 != z_grid.len() || both.dim().2 != phi_grid.len() {
        return Err(bad("dims", "grid lengths do not match the data"));
    }
    Ok(CrlbMap {
        z_grid,
        phi_grid,
        sqrt_crlb_z: both.index_axis(Axis(0), 0).to_owned(),
        sqrt_crlb_phi: both.index_axis(Axis(0), 1).to_owned(),
        photon_model: c.attr_json("photon_model")?,
        psf_label: c.attr("psf_label")?.to_string(),
        patch_size: c.attr_json("patch_size")?,
        line_width: c.attr_json("line_width")?,
    })
}

/// Stored as `[z + c][y][x]`: the volume planes followed by any weight maps.
pub fn recon_to_container(r: &ReconResult) -> Container {
    let v = &r.volume.values;
    let data = match &r.weights {
        Some(w) => ndarray::concatenate(Axis(0), &[v.view(), w.view()]).expect("matching image size"),
        None => v.clone(),
    };
    let mut c = pack(&data).with_attr("kind", KIND_RECON_RESULT);
    c.set_json("volume_planes", &v.dim().0);
    c.set_json("voxel_pitch", &r.volume.voxel_pitch);
    c.set_json("z_origin", &r.volume.z_origin);
    c.set_json("loss_trace", &r.loss_trace);
    c.set_json("data_residual", &r.data_residual);
    c.set_json("converged", &r.converged);
    c
}

pub fn recon_from_container(c: &Container) -> Result<ReconResult> {
    c.expect_kind(KIND_RECON_RESULT)?;
    let data: Array3<f64> = unpack(c, 3)?.into_dimensionality().expect("3-D");
    let nz: usize = c.attr_json("volume_planes")?;
    if nz == 0 || nz > data.dim().0 {
        return Err(bad("volume_planes", format!("{nz} does not fit {} stored planes", data.dim().0)));
    }
    let volume = Volume3D::new(data.slice(s![..nz, .., ..]).to_owned(), c.attr_json("voxel_pitch")?, c.attr_json("z_origin")?)?;
    let weights = (data.dim().0 > nz).then(|| data.slice(s![nz.., .., ..]).to_owned());
    Ok(ReconResult {
        volume,
        weights,
        loss_trace: c.attr_json("loss_trace")?,
        data_residual: c.attr_json("data_residual")?,
        converged: c.attr_json("converged")?,
    })
}

/// Reads a VascuSynth voxel grid of `source_dims` (x, y, z; x fastest).
/// `.txt` files hold whitespace-separated numbers; other files are raw
/// bytes, read as u8 when the length equals the voxel count and as
/// little-endian float32 when it is four times that.
pub fn read_vascusynth_grid(path: impl AsRef<Path>, source_dims: (usize, usize, usize)) -> Result<Array3<f64>> {
    let path = path.as_ref();
    let (nx, ny, nz) = source_dims;
    let n = nx * ny * nz;
    let values: Vec<f64> = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("txt")) {
        let text = fs::read_to_string(path)?;
        text.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad("vascusynth", format!("`{t}` is not a number"))))
            .collect::<Result<_>>()?
    } else {
        let bytes = fs::read(path)?;
        if bytes.len() == n {
            bytes.iter().map(|b| *b as f64).collect()
        } else if bytes.len() == 4 * n {
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
        } else {
            return Err(bad("vascusynth", format!("{} bytes fits neither u8 nor float32 for {nx}x{ny}x{nz}", bytes.len())));
        }
    };
    if values.len() != n {
        return Err(bad("vascusynth", format!("expected {n} values, found {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("vascusynth", "non-finite voxel value"));
    }
    Ok(Array3::from_shape_vec((nz, ny, nx), values).expect("length checked"))
}

/// Trilinear resample of a `[z][y][x]` grid onto `target` (x, y, z)
/// samples, with corner samples aligned.
pub fn resample_trilinear(src: &Array3<f64>, target: (usize, usize, usize)) -> Array3<f64> {
    let (sz, sy, sx) = src.dim();
    let (tx, ty, tz) = target;
    let coord = |i: usize, t: usize, s: usize| -> (usize, usize, f64) {
        if t <= 1 || s <= 1 {
            return (0, 0, 0.0);
        }
        let u = i as f64 * (s - 1) as f64 / (t - 1) as f64;
        let i0 = (u.floor() as usize).min(s - 1);
        let i1 = (i0 + 1).min(s - 1);
        (i0, i1, u - i0 as f64)
    };
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + t * (b - a) };
    let cx: Vec<_> = (0..tx).map(|i| coord(i, tx, sx)).collect();
    let cy: Vec<_> = (0..ty).map(|i| coord(i, ty, sy)).collect();
    let cz: Vec<_> = (0..tz).map(|i| coord(i, tz, sz)).collect();
    Array3::from_shape_fn((tz, ty, tx), |(k, j, i)| {
        let (x0, x1, fx) = cx[i];
        let (y0, y1, fy) = cy[j];
        let (z0, z1, fz) = cz[k];
        let plane = |z: usize| {
            let a = lerp(src[[z, y0, x0]], src[[z, y0, x1]], fx);
            let b = lerp(src[[z, y1, x0]], src[[z, y1, x1]], fx);
            lerp(a, b, fy)
        };
        lerp(plane(z0), plane(z1), fz)
    })
}

/// Default physical extent of an imported vessel volume (x, y, z), metres.
pub const VASCUSYNTH_EXTENT: (f64, f64, f64) = (1.76e-3, 1.76e-3, 5.0e-3);
/// Native VascuSynth grid size.
pub const VASCUSYNTH_DIMS: usize = 101;

/// Imports a VascuSynth grid, resampled to `target_dims` (x, y, z) over
/// `target_extent` (x, y, z). Voxel pitch is extent / dims; depth is
/// centred on the focal plane.
pub fn import_vascusynth(
    path: impl AsRef<Path>,
    source_dims: (usize, usize, usize),
    target_dims: (usize, usize, usize),
    target_extent: (f64, f64, f64),
) -> Result<Volume3D> {
    let src = read_vascusynth_grid(path, source_dims)?;
    let (tx, ty, tz) = target_dims;
    if tx == 0 || ty == 0 || tz == 0 {
        return Err(Error::param("target_dims", "must be non-zero"));
    }
    let pitch = (target_extent.0 / tx as f64, target_extent.1 / ty as f64, target_extent.2 / tz as f64);
    let values = resample_trilinear(&src, target_dims);
    Volume3D::new(values, pitch, -0.5 * (tz - 1) as f64 * pitch.2)
}

/// Writes a 2-D float image as a container (used for depth maps).
pub fn image_to_container(img: &Array2<f64>, kind: &str) -> Container {
    pack(img).with_attr("kind", kind)
}

pub fn save(c: &Container, path: impl AsRef<Path>) -> Result<()> {
    c.write_file(path)
}

pub fn load(path: impl AsRef<Path>) -> Result<Container> {
    Container::read_file(path)
}
