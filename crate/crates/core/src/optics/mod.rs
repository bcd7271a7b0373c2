//! Scalar Fourier optics for a 4f relay: sampled fields, Gauss-Laguerre
//! beams and defocused PSF rendering.

mod gl;
mod propagate;

pub use gl::{gl_mode, laguerre, superpose_beam, GLBeamSpec};
pub use propagate::{
    axial_diffraction_limit, defocus_phase, equivalent_rayleigh, lateral_diffraction_limit,
    render_psf, rotation_angle, PsfRenderer, AIRY_FIRST_ZERO,
};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square-pixel sampling lattice centred on the optical axis.
///
/// Sample `(row, col)` sits at `x = (col - width/2) * pitch`,
/// `y = (row - height/2) * pitch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
}

impl Grid2D {
    pub fn new(width: usize, height: usize, pitch: f64) -> Result<Self> {
        if width < 2 || height < 2 || !(pitch > 0.0) || !pitch.is_finite() {
            return Err(Error::InvalidGrid { width, height, pitch });
        }
        Ok(Grid2D { width, height, pitch })
    }

    pub fn square(samples: usize, pitch: f64) -> Result<Self> {
        Self::new(samples, samples, pitch)
    }

    /// Array shape as (rows, cols).
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.width as f64 * self.pitch, self.height as f64 * self.pitch)
    }

    pub fn x(&self, col: usize) -> f64 {
        (col as f64 - (self.width / 2) as f64) * self.pitch
    }

    pub fn y(&self, row: usize) -> f64 {
        (row as f64 - (self.height / 2) as f64) * self.pitch
    }

    /// Fills a real array from a function of physical (x, y).
    pub fn map<F: Fn(f64, f64) -> f64>(&self, f: F) -> Array2<f64> {
        Array2::from_shape_fn(self.shape(), |(r, c)| f(self.x(c), self.y(r)))
    }
}

/// Sampled complex amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: Grid2D,
    pub values: Array2<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid2D, values: Array2<Complex64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::ShapeMismatch {
                expected: vec![grid.height, grid.width],
                found: values.shape().to_vec(),
            });
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::param("values", "non-finite field sample"));
        }
        Ok(ComplexField { grid, values })
    }

    pub fn ones(grid: Grid2D) -> Self {
        ComplexField { grid, values: Array2::from_elem(grid.shape(), Complex64::new(1.0, 0.0)) }
    }

    /// Discrete L2 norm (no area element).
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.values.mapv_inplace(|v| v / n);
        }
        self
    }

    /// Discrete inner product <self, other> = sum conj(self) * other.
    pub fn inner(&self, other: &ComplexField) -> Complex64 {
        self.values.iter().zip(other.values.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }
}

/// Two-lens relay with the mask in the shared Fourier plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct System4f {
    /// Objective-side focal length (m).
    pub f1: f64,
    /// Sensor-side focal length (m).
    pub f2: f64,
    /// Clear aperture diameter D (m).
    pub aperture_diameter: f64,
    /// Wavelength (m).
    pub wavelength: f64,
}

impl System4f {
    pub fn new(f1: f64, f2: f64, aperture_diameter: f64, wavelength: f64) -> Result<Self> {
        for (name, v) in [
            ("f1", f1),
            ("f2", f2),
            ("aperture_diameter", aperture_diameter),
            ("wavelength", wavelength),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        Ok(System4f { f1, f2, aperture_diameter, wavelength })
    }

    /// f = 50 mm relay, 3 mm aperture, 532 nm light.
    pub fn reference() -> Self {
        System4f { f1: 0.05, f2: 0.05, aperture_diameter: 3e-3, wavelength: 532e-9 }
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }

    /// Default pupil grid: `samples` points spanning twice the aperture.
    pub fn pupil_grid(&self, samples: usize) -> Result<Grid2D> {
        Grid2D::square(samples, 2.0 * self.aperture_diameter / samples as f64)
    }

    /// Sensor-to-object lateral magnification (f2/f1).
    pub fn magnification(&self) -> f64 {
        self.f2 / self.f1
    }

    pub fn aperture(&self, grid: &Grid2D) -> Array2<f64> {
        let r2 = (self.aperture_diameter / 2.0).powi(2);
        grid.map(|u, v| if u * u + v * v <= r2 { 1.0 } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(Grid2D::new(1, 4, 1.0).is_err());
        assert!(Grid2D::new(4, 4, 0.0).is_err());
        assert!(Grid2D::new(4, 4, f64::NAN).is_err());
        let g = Grid2D::new(4, 6, 0.5).unwrap();
        assert_eq!(g.shape(), (6, 4));
        assert_eq!(g.x(2), 0.0);
        assert_eq!(g.y(0), -1.5);
    }

    #[test]
    fn field_shape_checked() {
        let g = Grid2D::square(4, 1.0).unwrap();
        assert!(ComplexField::new(g, Array2::zeros((3, 4))).is_err());
        let mut bad = Array2::zeros((4, 4));
        bad[[0, 0]] = Complex64::new(f64::INFINITY, 0.0);
        assert!(ComplexField::new(g, bad).is_err());
    }

    #[test]
    fn system_rejects_nonpositive() {
        assert!(System4f::new(0.05, 0.05, 0.0, 532e-9).is_err());
        assert!(System4f::new(-1.0, 0.05, 3e-3, 532e-9).is_err());
    }
}
