use std::f64::consts::PI;

use ndarray::{s, Array2};
use num_complex::Complex64;

use super::{ComplexField, GLBeamSpec, Grid2D, System4f};
use crate::error::{Error, Result};
use crate::fft::{fftshift, ifftshift, Fft2};

/// First zero of J1 divided by pi (the "1.22" of the Airy radius).
pub const AIRY_FIRST_ZERO: f64 = 1.219_669_891_266_504_5;

/// Quadratic pupil phase produced by moving the source `dz` away from focus:
/// `exp(i k/(2 f1) (dz/f1) (u^2 + v^2))`.
pub fn defocus_phase(system: &System4f, dz: f64, grid: &Grid2D) -> ComplexField {
    let coeff = system.wavenumber() / (2.0 * system.f1) * (dz / system.f1);
    let values = Array2::from_shape_fn(grid.shape(), |(r, c)| {
        let (u, v) = (grid.x(c), grid.y(r));
        Complex64::from_polar(1.0, coeff * (u * u + v * v))
    });
    ComplexField { grid: *grid, values }
}

/// Equivalent Rayleigh length of a GL mask in the relay: lambda f1^2 / (pi w0^2).
pub fn equivalent_rayleigh(system: &System4f, waist: f64) -> Result<f64> {
    if !(waist > 0.0) {
        return Err(Error::param("waist", format!("must be positive, got {waist}")));
    }
    Ok(system.wavelength * system.f1 * system.f1 / (PI * waist * waist))
}

/// Lobe axis angle of a GL rotating PSF at defocus `dz`.
pub fn rotation_angle(dz: f64, spec: &GLBeamSpec, system: &System4f, phi0: f64) -> f64 {
    let zr = system.wavelength * system.f1 * system.f1 / (PI * spec.waist * spec.waist);
    phi0 + spec.slope as f64 * (dz / zr).atan()
}

/// Airy first-zero radius in object space.
pub fn lateral_diffraction_limit(system: &System4f) -> f64 {
    AIRY_FIRST_ZERO * system.wavelength * system.f1 / system.aperture_diameter
}

/// Axial extent 4 lambda (f/D)^2 of the clear-aperture focus.
pub fn axial_diffraction_limit(system: &System4f) -> f64 {
    4.0 * system.wavelength * (system.f1 / system.aperture_diameter).powi(2)
}

/// Pupil-to-sensor propagator for one relay and pupil sampling.
///
/// The pupil field is zero-padded `pad` times before the transform; the
/// natural image-plane pitch is then `lambda f2 / (pad * pupil extent)`.
/// Intensities are scaled so that an unobstructed aperture carries unit energy
/// over the full natural image plane.
#[derive(Debug, Clone)]
pub struct PsfRenderer {
    pub system: System4f,
    pub pupil: Grid2D,
    pub pad: usize,
    fft: Fft2,
    aperture: Array2<f64>,
    radius2: Array2<f64>,
    clear_energy: f64,
}

impl PsfRenderer {
    pub fn new(system: System4f, pupil: Grid2D, pad: usize) -> Result<Self> {
        if pupil.width != pupil.height {
            return Err(Error::param("pupil", "pupil grid must be square"));
        }
        if pad == 0 {
            return Err(Error::param("pad", "padding factor must be at least 1"));
        }
        let (extent, _) = pupil.extent();
        if system.aperture_diameter >= extent {
            return Err(Error::param(
                "aperture_diameter",
                format!("aperture {:.3e} m does not fit the pupil grid extent {:.3e} m", system.aperture_diameter, extent),
            ));
        }
        let aperture = system.aperture(&pupil);
        let clear_energy = aperture.sum();
        let radius2 = pupil.map(|u, v| u * u + v * v);
        let m = pad * pupil.width;
        Ok(PsfRenderer { system, pupil, pad, fft: Fft2::new(m, m), aperture, radius2, clear_energy })
    }

    /// 512 samples across twice the aperture, 2x zero padding.
    pub fn standard(system: System4f) -> Result<Self> {
        Self::new(system, system.pupil_grid(512)?, 2)
    }

    pub fn padded_size(&self) -> usize {
        self.pad * self.pupil.width
    }

    /// Image-plane sample spacing of the transform (sensor side).
    pub fn natural_pitch(&self) -> f64 {
        self.system.wavelength * self.system.f2 / (self.padded_size() as f64 * self.pupil.pitch)
    }

    pub fn natural_grid(&self) -> Grid2D {
        let m = self.padded_size();
        Grid2D { width: m, height: m, pitch: self.natural_pitch() }
    }

    pub fn aperture(&self) -> &Array2<f64> {
        &self.aperture
    }

    /// Centred complex image-plane field on the natural grid.
    pub fn field(&self, mask: &Array2<Complex64>, dz: f64) -> Result<Array2<Complex64>> {
        if mask.dim() != self.pupil.shape() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.pupil.height, self.pupil.width],
                found: mask.shape().to_vec(),
            });
        }
        let n = self.pupil.width;
        let m = self.padded_size();
        let coeff = self.system.wavenumber() / (2.0 * self.system.f1) * (dz / self.system.f1);
        let mut buf = Array2::<Complex64>::zeros((m, m));
        let off = m / 2 - n / 2;
        let mut window = buf.slice_mut(s![off..off + n, off..off + n]);
        ndarray::Zip::from(&mut window)
            .and(mask)
            .and(&self.aperture)
            .and(&self.radius2)
            .for_each(|b, &u, &a, &r2| {
                if a > 0.0 {
                    *b = u * Complex64::from_polar(a, coeff * r2);
                }
            });
        let mut buf = ifftshift(&buf);
        self.fft.forward(&mut buf);
        let scale = 1.0 / (m as f64 * self.clear_energy.sqrt());
        let mut out = fftshift(&buf);
        out.mapv_inplace(|v| v * scale);
        Ok(out)
    }

    /// Energy-scaled intensity on the natural grid.
    pub fn intensity(&self, mask: &Array2<Complex64>, dz: f64) -> Result<Array2<f64>> {
        Ok(self.field(mask, dz)?.mapv(|v| v.norm_sqr()))
    }

    /// Energy-scaled intensity resampled onto `sensor` (bilinear, area-corrected).
    pub fn intensity_on(&self, mask: &Array2<Complex64>, dz: f64, sensor: &Grid2D) -> Result<Array2<f64>> {
        let natural = self.intensity(mask, dz)?;
        self.resample(&natural, sensor)
    }

    /// Bilinear resampling from the natural grid to `sensor`; values are
    /// multiplied by the pixel-area ratio so energies stay comparable.
    pub fn resample(&self, natural: &Array2<f64>, sensor: &Grid2D) -> Result<Array2<f64>> {
        let nat = self.natural_grid();
        let (sx, sy) = sensor.extent();
        let (nx, _) = nat.extent();
        if sx > nx * (1.0 + 1e-9) || sy > nx * (1.0 + 1e-9) {
            return Err(Error::SensorGrid(format!(
                "sensor extent {sx:.3e} x {sy:.3e} m exceeds the transform field of view {nx:.3e} m"
            )));
        }
        Ok(bilinear(natural, &nat, sensor))
    }
}

/// Bilinear resampling between two centred grids, area-corrected.
pub(crate) fn bilinear(src: &Array2<f64>, from: &Grid2D, to: &Grid2D) -> Array2<f64> {
    let area = (to.pitch / from.pitch).powi(2);
    let (h, w) = src.dim();
    let cx = (from.width / 2) as f64;
    let cy = (from.height / 2) as f64;
    Array2::from_shape_fn(to.shape(), |(r, c)| {
        let fx = to.x(c) / from.pitch + cx;
        let fy = to.y(r) / from.pitch + cy;
        if fx < 0.0 || fy < 0.0 || fx > (w - 1) as f64 || fy > (h - 1) as f64 {
            return 0.0;
        }
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let top = src[[y0, x0]] * (1.0 - tx) + src[[y0, x1]] * tx;
        let bottom = src[[y1, x0]] * (1.0 - tx) + src[[y1, x1]] * tx;
        (top * (1.0 - ty) + bottom * ty) * area
    })
}

/// Unit-sum PSF of `mask` at defocus `dz`, sampled on `sensor_grid`.
///
/// Uses the standard 2x zero padding; `mask.grid` is taken as the pupil grid.
pub fn render_psf(mask: &ComplexField, system: &System4f, dz: f64, sensor_grid: &Grid2D) -> Result<Array2<f64>> {
    let renderer = PsfRenderer::new(*system, mask.grid, 2)?;
    let mut psf = renderer.intensity_on(&mask.values, dz, sensor_grid)?;
    let total = psf.sum();
    if !(total > 0.0) {
        return Err(Error::SensorGrid("no energy reaches the sensor window".into()));
    }
    psf.mapv_inplace(|v| v / total);
    Ok(psf)
}
