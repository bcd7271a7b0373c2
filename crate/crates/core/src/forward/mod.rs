//! Scene-to-measurement simulation: surface extraction, depth-sliced
//! convolution imaging, sensor noise and polarization mosaicing.

mod bayer;
mod noise;
pub mod scenes;
mod surface;

pub use bayer::{bayer_average, demosaic, mosaic_polarization, BAYER_LAYOUT};
pub use noise::{add_noise, psnr_db, NoiseConfig};
pub use surface::surface_extract;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::ConvPlan;
use crate::mask::{Channel, PsfStack};

/// Voxelized scene intensity, indexed `[z][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    pub values: Array3<f64>,
    /// (x, y, z) voxel pitch in metres.
    pub voxel_pitch: (f64, f64, f64),
    /// Defocus of plane 0 (m).
    pub z_origin: f64,
}

impl Volume3D {
    pub fn new(values: Array3<f64>, voxel_pitch: (f64, f64, f64), z_origin: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("volume"));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::param("values", "volume intensities must be finite and non-negative"));
        }
        let (px, py, pz) = voxel_pitch;
        if !(px > 0.0 && py > 0.0 && pz > 0.0) {
            return Err(Error::param("voxel_pitch", "must be positive"));
        }
        if !z_origin.is_finite() {
            return Err(Error::param("z_origin", "must be finite"));
        }
        Ok(Volume3D { values, voxel_pitch, z_origin })
    }

    pub fn zeros(dims: (usize, usize, usize), voxel_pitch: (f64, f64, f64), z_origin: f64) -> Result<Self> {
        let (nx, ny, nz) = dims;
        Self::new(Array3::zeros((nz, ny, nx)), voxel_pitch, z_origin)
    }

    /// (nx, ny, nz).
    pub fn dims(&self) -> (usize, usize, usize) {
        let (nz, ny, nx) = self.values.dim();
        (nx, ny, nz)
    }

    pub fn z_of(&self, plane: usize) -> f64 {
        self.z_origin + plane as f64 * self.voxel_pitch.2
    }

    pub fn z_levels(&self) -> Vec<f64> {
        (0..self.values.dim().0).map(|k| self.z_of(k)).collect()
    }

    pub fn with_values(&self, values: Array3<f64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            let (a, b, c) = self.values.dim();
            let (d, e, f) = values.dim();
            return Err(Error::ShapeMismatch { expected: vec![a, b, c], found: vec![d, e, f] });
        }
        Volume3D::new(values, self.voxel_pitch, self.z_origin)
    }
}

/// Noise provenance of a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseMeta {
    pub poisson: bool,
    pub read_sigma: f64,
}

/// Labelled channel images, indexed `[channel][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub channels: Vec<Channel>,
    pub images: Array3<f64>,
    pub noise: NoiseMeta,
}

impl Measurement {
    pub fn new(channels: Vec<Channel>, images: Array3<f64>, noise: NoiseMeta) -> Result<Self> {
        if channels.len() != images.dim().0 {
            return Err(Error::ShapeMismatch { expected: vec![channels.len()], found: vec![images.dim().0] });
        }
        if channels.is_empty() {
            return Err(Error::Empty("measurement channels"));
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("images", "measurement values must be finite"));
        }
        Ok(Measurement { channels, images, noise })
    }

    pub fn image_shape(&self) -> (usize, usize) {
        let (_, h, w) = self.images.dim();
        (h, w)
    }

    pub fn channel(&self, c: Channel) -> Option<ArrayView2<'_, f64>> {
        let i = self.channels.iter().position(|&x| x == c)?;
        Some(self.images.index_axis(Axis(0), i))
    }

    pub fn max(&self) -> f64 {
        self.images.iter().cloned().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Measurement {
        Measurement { images: &self.images * factor, ..self.clone() }
    }
}

/// The depth-sliced convolution operator `I_c = sum_z h_c(z) * s(z)` and its
/// adjoint, with kernel spectra computed once.
pub struct ForwardOperator {
    plan: ConvPlan,
    /// `[channel][plane]` transfer functions.
    spectra: Vec<Vec<Array2<Complex64>>>,
    pub channels: Vec<Channel>,
    /// (nz, ny, nx) of the scene.
    pub scene_shape: (usize, usize, usize),
}

impl std::fmt::Debug for ForwardOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardOperator").field("channels", &self.channels).field("scene_shape", &self.scene_shape).finish()
    }
}

/// Stack plane associated with each scene plane (nearest in z).
pub fn plane_association(scene: &Volume3D, stack: &PsfStack) -> Result<Vec<usize>> {
    let (lo, hi) = stack.z_range();
    let spacing = if stack.n_z() > 1 { (hi - lo) / (stack.n_z() - 1) as f64 } else { 0.0 };
    let tol = 0.5 * spacing + 1e-12 * hi.abs().max(lo.abs()).max(1e-9);
    scene
        .z_levels()
        .into_iter()
        .map(|z| {
            if z < lo - tol || z > hi + tol {
                Err(Error::OutOfRange { what: "scene plane depth", value: z, min: lo, max: hi })
            } else {
                Ok(stack.nearest_plane(z))
            }
        })
        .collect()
}

impl ForwardOperator {
    pub fn new(scene: &Volume3D, stack: &PsfStack) -> Result<Self> {
        let planes = plane_association(scene, stack)?;
        let (nz, ny, nx) = scene.values.dim();
        let plan = ConvPlan::new((ny, nx), stack.kernel_shape());
        let spectra = (0..stack.channels.len())
            .map(|c| planes.par_iter().map(|&k| plan.kernel_spectrum(stack.plane(c, k))).collect())
            .collect();
        Ok(ForwardOperator { plan, spectra, channels: stack.channels.clone(), scene_shape: (nz, ny, nx) })
    }

    fn check_scene(&self, x: &Array3<f64>) -> Result<()> {
        if x.dim() != self.scene_shape {
            let (a, b, c) = self.scene_shape;
            let (d, e, f) = x.dim();
            return Err(Error::ShapeMismatch { expected: vec![a, b, c], found: vec![d, e, f] });
        }
        Ok(())
    }

    /// Applies the operator to a scene array `[z][y][x]`, giving `[c][y][x]`.
    pub fn apply(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        self.check_scene(x)?;
        let (nz, ny, nx) = self.scene_shape;
        let spectra: Vec<Option<Array2<Complex64>>> = (0..nz)
            .into_par_iter()
            .map(|k| {
                let plane = x.index_axis(Axis(0), k);
                plane.iter().any(|v| *v != 0.0).then(|| self.plan.image_spectrum(plane))
            })
            .collect();
        let images: Vec<Array2<f64>> = self
            .spectra
            .par_iter()
            .map(|per_plane| {
                let mut acc = Array2::<Complex64>::zeros(self.plan.spectrum_shape());
                for (s, h) in spectra.iter().zip(per_plane.iter()) {
                    if let Some(s) = s {
                        ndarray::Zip::from(&mut acc).and(s).and(h).for_each(|a, s, h| *a += s * h);
                    }
                }
                self.plan.to_image(acc)
            })
            .collect();
        let mut out = Array3::zeros((self.channels.len(), ny, nx));
        for (c, img) in images.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), c).assign(&img);
        }
        Ok(out)
    }

    /// Adjoint: correlates each channel image with its kernels and sums
    /// over channels, giving a scene-shaped array.
    pub fn adjoint(&self, y: &Array3<f64>) -> Result<Array3<f64>> {
        let (nz, ny, nx) = self.scene_shape;
        if y.dim() != (self.channels.len(), ny, nx) {
            let (d, e, f) = y.dim();
            return Err(Error::ShapeMismatch { expected: vec![self.channels.len(), ny, nx], found: vec![d, e, f] });
        }
        let spectra: Vec<Array2<Complex64>> =
            (0..self.channels.len()).into_par_iter().map(|c| self.plan.image_spectrum(y.index_axis(Axis(0), c))).collect();
        let planes: Vec<Array2<f64>> = (0..nz)
            .into_par_iter()
            .map(|k| {
                let mut acc = Array2::<Complex64>::zeros(self.plan.spectrum_shape());
                for (s, per_plane) in spectra.iter().zip(self.spectra.iter()) {
                    ndarray::Zip::from(&mut acc).and(s).and(&per_plane[k]).for_each(|a, s, h| *a += s * h.conj());
                }
                self.plan.to_image(acc)
            })
            .collect();
        let mut out = Array3::zeros((nz, ny, nx));
        for (k, p) in planes.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), k).assign(&p);
        }
        Ok(out)
    }
}

/// Noiseless capture of `scene` through every channel of `stack`, scaled by
/// `exposure`. Each scene plane uses the nearest stack plane.
pub fn image_scene(scene: &Volume3D, stack: &PsfStack, exposure: f64) -> Result<Measurement> {
    if !(exposure > 0.0) || !exposure.is_finite() {
        return Err(Error::param("exposure", "must be positive"));
    }
    let op = ForwardOperator::new(scene, stack)?;
    let images = op.apply(&scene.values)? * exposure;
    Measurement::new(stack.channels.clone(), images, NoiseMeta::default())
}
