//! Fisher information and Cramér-Rao bounds for point sources and line
//! targets imaged through a PSF stack.
//!
//! Images are expected photon counts under a Poisson model. Partial
//! derivatives are central finite differences, with the PSF interpolated
//! linearly between stack planes.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use ndarray::{s, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{ConvPlan, Fft2};
use crate::mask::PsfStack;

/// Condition number above which a Fisher matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Photon fraction each channel of a polarized pair receives relative to a
/// single-image PSF.
pub const PAIR_PHOTON_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonModel {
    /// Total signal photons N.
    pub signal_photons: f64,
    /// Background photons per pixel.
    pub background: f64,
}

impl PhotonModel {
    pub fn new(signal_photons: f64, background: f64) -> Result<Self> {
        if !(signal_photons > 0.0) || !signal_photons.is_finite() {
            return Err(Error::param("signal_photons", "must be positive"));
        }
        if !(background >= 0.0) || !background.is_finite() {
            return Err(Error::param("background", "must be non-negative"));
        }
        Ok(PhotonModel { signal_photons, background })
    }

    pub fn scaled(&self, fraction: f64) -> PhotonModel {
        PhotonModel { signal_photons: self.signal_photons * fraction, ..*self }
    }
}

/// A straight line through the centre of a square image patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinePatch {
    /// Defocus of the line (m).
    pub z: f64,
    /// Orientation in [0, pi), counter-clockwise as displayed.
    pub phi: f64,
    pub patch_size: usize,
    /// Line width in pixels.
    pub line_width: f64,
}

impl LinePatch {
    pub fn new(z: f64, phi: f64, patch_size: usize, line_width: f64) -> Result<Self> {
        if patch_size < 16 {
            return Err(Error::param("patch_size", "must be at least 16 pixels"));
        }
        if !(line_width > 0.0) {
            return Err(Error::param("line_width", "must be positive"));
        }
        Ok(LinePatch { z, phi: phi.rem_euclid(PI), patch_size, line_width })
    }
}

/// Finite-difference steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdStep {
    /// Depth step (m).
    pub dz: f64,
    /// Orientation step (rad).
    pub dphi: f64,
    /// Lateral step (pixels), used for point sources.
    pub dxy: f64,
}

impl FdStep {
    /// A quarter of the mean plane spacing in z, 0.5 deg in phi, 0.05 px laterally.
    pub fn for_stack(stack: &PsfStack) -> FdStep {
        let (lo, hi) = stack.z_range();
        let spacing = if stack.n_z() > 1 { (hi - lo) / (stack.n_z() - 1) as f64 } else { 1e-6 };
        FdStep { dz: spacing / 4.0, dphi: 0.5f64.to_radians(), dxy: 0.05 }
    }
}

/// Symmetric Fisher information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub entries: DMatrix<f64>,
}

impl FisherMatrix {
    pub fn zeros(dim: usize) -> Self {
        FisherMatrix { entries: DMatrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn scaled(&self, factor: f64) -> FisherMatrix {
        FisherMatrix { entries: &self.entries * factor }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.entries.clone().symmetric_eigen().eigenvalues.iter().copied().collect()
    }
}

impl std::ops::Add for FisherMatrix {
    type Output = FisherMatrix;

    fn add(self, rhs: FisherMatrix) -> FisherMatrix {
        FisherMatrix { entries: self.entries + rhs.entries }
    }
}

/// One image channel contributing to a Fisher matrix.
#[derive(Debug, Clone, Copy)]
pub struct ChannelRef<'a> {
    pub stack: &'a PsfStack,
    pub channel: usize,
    /// Share of the model's photons this channel receives.
    pub photon_fraction: f64,
}

impl<'a> ChannelRef<'a> {
    /// The first channel of `stack` with the full photon budget.
    pub fn single(stack: &'a PsfStack) -> Vec<ChannelRef<'a>> {
        vec![ChannelRef { stack, channel: 0, photon_fraction: 1.0 }]
    }

    /// The first two channels of `stack`, each with [`PAIR_PHOTON_FRACTION`].
    pub fn pair(stack: &'a PsfStack) -> Vec<ChannelRef<'a>> {
        (0..2).map(|channel| ChannelRef { stack, channel, photon_fraction: PAIR_PHOTON_FRACTION }).collect()
    }
}

/// Rasterizes a line of orientation `phi` through the centre of a
/// `size`x`size` canvas. The profile across the line is a plateau of the
/// line width with a one-pixel linear falloff.
pub fn rasterize_line(size: usize, phi: f64, width: f64) -> Array2<f64> {
    let c = (size / 2) as f64;
    let (s, co) = phi.sin_cos();
    let half = (width + 1.0) / 2.0;
    Array2::from_shape_fn((size, size), |(r, col)| {
        let x = col as f64 - c;
        let y = c - r as f64;
        let d = (-x * s + y * co).abs();
        (half - d).clamp(0.0, 1.0)
    })
}

fn line_image(stack: &PsfStack, channel: usize, z: f64, phi: f64, patch: &LinePatch, plan: &ConvPlan, model: &PhotonModel) -> Result<Array2<f64>> {
    let psf = stack.interpolate(channel, z)?;
    let canvas = plan.image.0;
    let line = rasterize_line(canvas, phi, patch.line_width);
    let blurred = plan.convolve(line.view(), psf.view());
    let o = canvas / 2 - patch.patch_size / 2;
    let crop = blurred.slice(s![o..o + patch.patch_size, o..o + patch.patch_size]).mapv(|v| v.max(0.0));
    let total = crop.sum();
    if !(total > 0.0) {
        return Err(Error::param("stack", "PSF carries no energy at this depth"));
    }
    let scale = model.signal_photons / total;
    Ok(crop.mapv(|v| v * scale + model.background))
}

fn line_plan(stack: &PsfStack, patch: &LinePatch) -> ConvPlan {
    let (kh, kw) = stack.kernel_shape();
    let canvas = patch.patch_size + 2 * kh.max(kw);
    ConvPlan::new((canvas, canvas), (kh, kw))
}

/// Expected photon image of a line patch: the line convolved with the PSF at
/// depth `patch.z`, scaled to `signal_photons` and offset by the background.
pub fn render_line_image(stack: &PsfStack, channel: usize, patch: &LinePatch, model: &PhotonModel) -> Result<Array2<f64>> {
    let plan = line_plan(stack, patch);
    line_image(stack, channel, patch.z, patch.phi, patch, &plan, model)
}

/// Poisson Fisher information from an expected image and its partials.
pub fn fisher_from_images(mean: &Array2<f64>, partials: &[Array2<f64>]) -> FisherMatrix {
    let k = partials.len();
    let mut fi = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let mut acc = 0.0;
            for ((m, a), b) in mean.iter().zip(partials[i].iter()).zip(partials[j].iter()) {
                if *m > 0.0 {
                    acc += a * b / m;
                }
            }
            fi[(i, j)] = acc;
            fi[(j, i)] = acc;
        }
    }
    FisherMatrix { entries: fi }
}

fn check_margin(stack: &PsfStack, z: f64, dz: f64) -> Result<()> {
    let (lo, hi) = stack.z_range();
    if !(z - dz >= lo && z + dz <= hi) {
        return Err(Error::OutOfRange { what: "depth (with finite-difference margin)", value: z, min: lo + dz, max: hi - dz });
    }
    Ok(())
}

fn central(plus: &Array2<f64>, minus: &Array2<f64>, h: f64) -> Array2<f64> {
    (plus - minus) / (2.0 * h)
}

/// 2x2 Fisher information over (z, phi) of a line patch, summed over channels.
pub fn fisher_line(channels: &[ChannelRef<'_>], patch: &LinePatch, model: &PhotonModel, step: &FdStep) -> Result<FisherMatrix> {
    if channels.is_empty() {
        return Err(Error::Empty("channels"));
    }
    let mut total = FisherMatrix::zeros(2);
    for ch in channels {
        check_margin(ch.stack, patch.z, step.dz)?;
        let m = model.scaled(ch.photon_fraction);
        let plan = line_plan(ch.stack, patch);
        let img = |z: f64, phi: f64| line_image(ch.stack, ch.channel, z, phi, patch, &plan, &m);
        let mean = img(patch.z, patch.phi)?;
        let dz = central(&img(patch.z + step.dz, patch.phi)?, &img(patch.z - step.dz, patch.phi)?, step.dz);
        let dphi = central(&img(patch.z, patch.phi + step.dphi)?, &img(patch.z, patch.phi - step.dphi)?, step.dphi);
        total = total + fisher_from_images(&mean, &[dz, dphi]);
    }
    Ok(total)
}

/// Translates an image by (dx, dy) pixels with a Fourier phase ramp.
pub fn fourier_shift(img: &Array2<f64>, dx: f64, dy: f64) -> Array2<f64> {
    let (h, w) = img.dim();
    let fft = Fft2::new(h, w);
    let mut buf = img.mapv(|v| Complex64::new(v, 0.0));
    fft.forward(&mut buf);
    let freq = |k: usize, n: usize| {
        let k = k as f64;
        let n = n as f64;
        if k > n / 2.0 { k - n } else if 2.0 * k == n { 0.0 } else { k }
    };
    for ((r, c), v) in buf.indexed_iter_mut() {
        let arg = -2.0 * PI * (freq(c, w) * dx / w as f64 + freq(r, h) * dy / h as f64);
        *v *= Complex64::from_polar(1.0, arg);
    }
    fft.inverse(&mut buf);
    buf.mapv(|v| v.re)
}

/// 3x3 Fisher information over (x, y, z) of a point source at lateral
/// offset (x, y) pixels (x along columns, y along rows) and depth z.
pub fn fisher_point(stack: &PsfStack, channel: usize, position: (f64, f64, f64), model: &PhotonModel, step: &FdStep) -> Result<FisherMatrix> {
    let (x, y, z) = position;
    check_margin(stack, z, step.dz)?;
    let image = |x: f64, y: f64, z: f64| -> Result<Array2<f64>> {
        let psf = stack.interpolate(channel, z)?;
        let norm = psf.sum();
        if !(norm > 0.0) {
            return Err(Error::param("stack", "PSF carries no energy at this depth"));
        }
        let shifted = fourier_shift(&psf, x, y);
        Ok(shifted.mapv(|v| v.max(0.0) * model.signal_photons / norm + model.background))
    };
    let h = step.dxy;
    let mean = image(x, y, z)?;
    let dx = central(&image(x + h, y, z)?, &image(x - h, y, z)?, h);
    let dy = central(&image(x, y + h, z)?, &image(x, y - h, z)?, h);
    let dz = central(&image(x, y, z + step.dz)?, &image(x, y, z - step.dz)?, step.dz);
    Ok(fisher_from_images(&mean, &[dx, dy, dz]))
}

/// Square roots of the diagonal of the inverse Fisher matrix; all NaN when
/// the matrix is singular or its condition number exceeds [`MAX_CONDITION`].
pub fn crlb_extract(fi: &FisherMatrix) -> Vec<f64> {
    let n = fi.dim();
    let nan = vec![f64::NAN; n];
    if fi.entries.iter().any(|v| !v.is_finite()) {
        return nan;
    }
    let sv = fi.entries.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || !(min > 0.0) || max / min > MAX_CONDITION {
        return nan;
    }
    match fi.entries.clone().try_inverse() {
        Some(inv) => (0..n).map(|i| if inv[(i, i)] > 0.0 { inv[(i, i)].sqrt() } else { f64::NAN }).collect(),
        None => nan,
    }
}

/// sqrt(CRLB) surfaces over a (z, phi) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CrlbMap {
    pub z_grid: Vec<f64>,
    pub phi_grid: Vec<f64>,
    /// Indexed [z][phi], metres.
    pub sqrt_crlb_z: Array2<f64>,
    /// Indexed [z][phi], radians.
    pub sqrt_crlb_phi: Array2<f64>,
    pub photon_model: PhotonModel,
    pub psf_label: String,
    pub patch_size: usize,
    pub line_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrlbSummary {
    pub mean_z: f64,
    pub std_z: f64,
    pub mean_phi: f64,
    pub peak_count: usize,
    /// Cells that came out singular.
    pub nan_cells: usize,
}

/// Minimum height of a peak over its higher neighbour, relative.
pub const PEAK_PROMINENCE: f64 = 0.05;

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Counts circular local maxima of each row (fixed z) along phi that stand
/// at least [`PEAK_PROMINENCE`] above both neighbours.
pub fn count_phi_peaks(map: &Array2<f64>) -> usize {
    let (_, np) = map.dim();
    if np < 3 {
        return 0;
    }
    let mut count = 0;
    for row in map.rows() {
        for k in 0..np {
            let v = row[k];
            let l = row[(k + np - 1) % np];
            let r = row[(k + 1) % np];
            if v.is_finite() && l.is_finite() && r.is_finite() && v > l.max(r) * (1.0 + PEAK_PROMINENCE) {
                count += 1;
            }
        }
    }
    count
}

impl CrlbMap {
    pub fn summary(&self) -> CrlbSummary {
        let (mean_z, std_z) = mean_std(self.sqrt_crlb_z.iter().copied());
        let (mean_phi, _) = mean_std(self.sqrt_crlb_phi.iter().copied());
        CrlbSummary {
            mean_z,
            std_z,
            mean_phi,
            peak_count: count_phi_peaks(&self.sqrt_crlb_z),
            nan_cells: self.sqrt_crlb_z.iter().filter(|v| v.is_nan()).count(),
        }
    }
}

/// Evaluates sqrt(CRLB_z) and sqrt(CRLB_phi) on every (z, phi) cell.
/// Singular cells hold NaN.
#[allow(clippy::too_many_arguments)]
pub fn crlb_map(
    channels: &[ChannelRef<'_>],
    z_grid: &[f64],
    phi_grid: &[f64],
    model: &PhotonModel,
    patch_size: usize,
    line_width: f64,
    step: &FdStep,
    label: &str,
) -> Result<CrlbMap> {
    if z_grid.is_empty() || phi_grid.is_empty() {
        return Err(Error::Empty("CRLB grid"));
    }
    let cells: Vec<(usize, usize)> = (0..z_grid.len()).flat_map(|i| (0..phi_grid.len()).map(move |j| (i, j))).collect();
    let values: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let patch = LinePatch::new(z_grid[i], phi_grid[j], patch_size, line_width)?;
            let fi = fisher_line(channels, &patch, model, step)?;
            Ok(crlb_extract(&fi))
        })
        .collect::<Result<_>>()?;
    let shape = (z_grid.len(), phi_grid.len());
    let sqrt_crlb_z = Array2::from_shape_fn(shape, |(i, j)| values[i * shape.1 + j][0]);
    let sqrt_crlb_phi = Array2::from_shape_fn(shape, |(i, j)| values[i * shape.1 + j][1]);
    Ok(CrlbMap {
        z_grid: z_grid.to_vec(),
        phi_grid: phi_grid.to_vec(),
        sqrt_crlb_z,
        sqrt_crlb_phi,
        photon_model: *model,
        psf_label: label.to_string(),
        patch_size,
        line_width,
    })
}
