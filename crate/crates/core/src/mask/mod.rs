//! Phase-only pupil masks: GL-constrained Gerchberg-Saxton design, quantization,
//! polarized half-aperture partitioning and PSF-stack rendering.

mod gs;
mod partition;
mod stack;

pub use gs::{design_dhpsf_mask, DesignedMask, GSConfig, GSDiagnostics};
pub use partition::{auto_partition_axis, partition_mask, Half, PolarizedMaskAssembly, LOBE_THRESHOLD};
pub use stack::{render_psf_stack, render_psf_stack_with, Channel, PsfSource, PsfStack, POLARIZER_TRANSMISSION};

use std::f64::consts::TAU;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::optics::{ComplexField, Grid2D};

/// Phase-only pupil element. Samples outside `diameter` are opaque.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMask {
    pub grid: Grid2D,
    /// Radians in [0, 2pi).
    pub phase: Array2<f64>,
    /// Clear diameter (m).
    pub diameter: f64,
    pub quantization_levels: Option<u32>,
}

impl PhaseMask {
    pub fn new(grid: Grid2D, phase: Array2<f64>, diameter: f64, quantization_levels: Option<u32>) -> Result<Self> {
        if phase.dim() != grid.shape() {
            return Err(Error::ShapeMismatch { expected: vec![grid.height, grid.width], found: phase.shape().to_vec() });
        }
        if !(diameter > 0.0) {
            return Err(Error::param("diameter", format!("must be positive, got {diameter}")));
        }
        if let Some(&bad) = phase.iter().find(|p| !(**p >= 0.0 && **p < TAU)) {
            return Err(Error::OutOfRange { what: "phase", value: bad, min: 0.0, max: TAU });
        }
        let mask = PhaseMask { grid, phase, diameter, quantization_levels };
        if let Some(levels) = quantization_levels {
            if levels < 2 {
                return Err(Error::param("quantization_levels", "need at least 2 levels"));
            }
            let step = TAU / levels as f64;
            let inside = mask.support();
            for (p, &a) in mask.phase.iter().zip(inside.iter()) {
                let k = p / step;
                if a && (k - k.round()).abs() > 1e-9 {
                    return Err(Error::param("phase", format!("{p} is not a multiple of 2pi/{levels}")));
                }
            }
        }
        Ok(mask)
    }

    /// Phase of a complex field, wrapped into [0, 2pi).
    pub fn from_field(field: &ComplexField, diameter: f64) -> Result<Self> {
        let phase = field.values.mapv(|v| wrap_phase(v.arg()));
        Self::new(field.grid, phase, diameter, None)
    }

    /// 1 inside the clear diameter, 0 outside.
    pub fn support(&self) -> Array2<bool> {
        let r2 = (self.diameter / 2.0).powi(2);
        Array2::from_shape_fn(self.grid.shape(), |(r, c)| {
            let (x, y) = (self.grid.x(c), self.grid.y(r));
            x * x + y * y <= r2
        })
    }

    /// Unit-amplitude transmission inside the diameter.
    pub fn to_field(&self) -> ComplexField {
        let support = self.support();
        let values = ndarray::Zip::from(&self.phase).and(&support).map_collect(|&p, &s| {
            if s {
                Complex64::from_polar(1.0, p)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        ComplexField { grid: self.grid, values }
    }
}

/// Wraps any finite angle into [0, 2pi).
pub fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Snaps every phase to the nearest multiple of 2pi/levels (ties go to the
/// lower level). Wrap-around is respected, so values near 2pi may snap to 0.
pub fn quantize_phase(mask: &PhaseMask, levels: u32) -> Result<PhaseMask> {
    if levels < 2 {
        return Err(Error::param("levels", format!("need at least 2 levels, got {levels}")));
    }
    let step = TAU / levels as f64;
    let phase = mask.phase.mapv(|p| {
        let k = (p / step - 0.5).ceil() as i64;
        k.rem_euclid(levels as i64) as f64 * step
    });
    PhaseMask::new(mask.grid, phase, mask.diameter, Some(levels))
}

/// A mask read from disk, plus how many samples had to be wrapped into [0, 2pi).
#[derive(Debug, Clone)]
pub struct ExternalMask {
    pub mask: PhaseMask,
    pub wrapped_samples: usize,
}

/// Loads a mask stored in the array container (e.g. a Tetrapod mask made
/// elsewhere). Out-of-range phases are wrapped and reported.
pub fn load_external_mask(path: impl AsRef<Path>) -> Result<ExternalMask> {
    let container = crate::io::container::Container::read_file(path)?;
    crate::io::formats::mask_from_container(container)
}
