use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::PhaseMask;
use crate::analysis::lobe_axis_angle;
use crate::error::{Error, Result};
use crate::optics::{Grid2D, PsfRenderer};

/// Pixel threshold (fraction of peak) used when counting PSF lobes.
pub const LOBE_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Half {
    /// Counter-clockwise side of the dividing line; 0 deg polarizer.
    A,
    /// The complement; 90 deg polarizer.
    B,
}

/// A phase mask split by a line through the optical axis, each half behind
/// its own linear polarizer (A: 0 deg, B: 90 deg).
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizedMaskAssembly {
    pub mask: PhaseMask,
    /// Orientation of the dividing line (rad), counter-clockwise as displayed
    /// with row 0 at the top, like [`crate::analysis::lobe_axis_angle`].
    pub partition_axis_angle: f64,
}

impl PolarizedMaskAssembly {
    /// Polarizer orientation (deg) over each half.
    pub fn polarizer_deg(half: Half) -> u32 {
        match half {
            Half::A => 0,
            Half::B => 90,
        }
    }

    /// Membership of each pupil sample in `half`. Samples on the line belong to A.
    pub fn half_support(&self, half: Half) -> Array2<bool> {
        let (s, c) = self.partition_axis_angle.sin_cos();
        let g = &self.mask.grid;
        Array2::from_shape_fn(g.shape(), |(r, col)| {
            let side = -s * g.x(col) - c * g.y(r) >= 0.0;
            match half {
                Half::A => side,
                Half::B => !side,
            }
        })
    }

    /// Mask transmission restricted to one half.
    pub fn half_field(&self, half: Half) -> Array2<Complex64> {
        let full = self.mask.to_field().values;
        let sel = self.half_support(half);
        ndarray::Zip::from(&full).and(&sel).map_collect(|v, &k| if k { *v } else { Complex64::new(0.0, 0.0) })
    }
}

pub fn partition_mask(mask: &PhaseMask, axis_angle: f64) -> PolarizedMaskAssembly {
    PolarizedMaskAssembly { mask: mask.clone(), partition_axis_angle: axis_angle.rem_euclid(PI) }
}

/// Dividing-line orientation along the in-focus lobe axis of the full-mask
/// PSF rendered on `sensor`. Each half then images one of the two lobes.
pub fn auto_partition_axis(mask: &PhaseMask, renderer: &PsfRenderer, sensor: &Grid2D) -> Result<f64> {
    let psf = renderer.intensity_on(&mask.to_field().values, 0.0, sensor)?;
    let lobes = lobe_axis_angle(&psf, LOBE_THRESHOLD)
        .ok_or_else(|| Error::param("mask", "in-focus PSF has no resolvable lobe pair"))?;
    Ok(lobes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::System4f;

    #[test]
    fn halves_are_complementary() {
        let sys = System4f::reference();
        let g = sys.pupil_grid(32).unwrap();
        let mask = PhaseMask::new(g, Array2::from_shape_fn(g.shape(), |(r, c)| ((r + c) % 6) as f64), 3e-3, None).unwrap();
        for angle in [0.0, 0.4, 1.3, 2.9] {
            let asm = partition_mask(&mask, angle);
            let a = asm.half_support(Half::A);
            let b = asm.half_support(Half::B);
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x ^ y));
            let sum = &asm.half_field(Half::A) + &asm.half_field(Half::B);
            assert_eq!(sum, mask.to_field().values);
        }
        assert_ne!(PolarizedMaskAssembly::polarizer_deg(Half::A), PolarizedMaskAssembly::polarizer_deg(Half::B));
    }
}
