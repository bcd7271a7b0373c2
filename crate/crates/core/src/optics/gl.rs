use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ComplexField, Grid2D};
use crate::error::{Error, Result};

/// Generalized Laguerre polynomial L_p^alpha(x) by the three-term recurrence.
pub fn laguerre(p: u32, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if p == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..p {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

fn check_index(n: i32, m: i32) -> Result<(u32, i32)> {
    if n < 0 {
        return Err(Error::InvalidMode { n, m, reason: "n must be non-negative" });
    }
    if n < m.abs() {
        return Err(Error::InvalidMode { n, m, reason: "n must be at least |m|" });
    }
    if (n - m.abs()) % 2 != 0 {
        return Err(Error::InvalidMode { n, m, reason: "n - |m| must be even" });
    }
    Ok((((n - m.abs()) / 2) as u32, m))
}

/// Gauss-Laguerre mode (n, m) at its waist plane, unit discrete L2 norm.
///
/// Uses the Laguerre-Gauss form with radial order p = (n - |m|)/2 and
/// azimuthal order l = m:
/// `(sqrt(2) r / w0)^|l| L_p^|l|(2 r^2 / w0^2) exp(-r^2 / w0^2) exp(i l theta)`.
pub fn gl_mode(n: i32, m: i32, waist: f64, grid: &Grid2D) -> Result<ComplexField> {
    let (p, l) = check_index(n, m)?;
    if !(waist > 0.0) || !waist.is_finite() {
        return Err(Error::param("waist", format!("must be positive, got {waist}")));
    }
    let al = l.unsigned_abs() as i32;
    let values = Array2::from_shape_fn(grid.shape(), |(r, c)| {
        let (x, y) = (grid.x(c), grid.y(r));
        let rho2 = (x * x + y * y) / (waist * waist);
        let radial = (2.0 * rho2).sqrt().powi(al) * laguerre(p, al as f64, 2.0 * rho2) * (-rho2).exp();
        let theta = y.atan2(x);
        Complex64::from_polar(1.0, l as f64 * theta) * radial
    });
    let field = ComplexField { grid: *grid, values };
    if field.norm() == 0.0 {
        return Err(Error::param("grid", "mode vanishes on the sampling grid"));
    }
    Ok(field.normalized())
}

/// A rotating beam: GL modes lying on the line n = slope * m + intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GLBeamSpec {
    /// (n, m) index pairs.
    pub modes: Vec<(i32, i32)>,
    /// Beam waist w0 in the mask plane (m).
    pub waist: f64,
    pub slope: i32,
    pub intercept: i32,
}

impl GLBeamSpec {
    pub fn new(modes: Vec<(i32, i32)>, waist: f64, slope: i32, intercept: i32) -> Result<Self> {
        let spec = GLBeamSpec { modes, waist, slope, intercept };
        spec.validate()?;
        Ok(spec)
    }

    /// Modes (1,1), (5,3), (9,5), (13,7) with w0 = 0.4 mm: n = 2m - 1.
    pub fn double_helix() -> Self {
        GLBeamSpec { modes: vec![(1, 1), (5, 3), (9, 5), (13, 7)], waist: 0.4e-3, slope: 2, intercept: -1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Empty("GL mode list"));
        }
        if !(self.waist > 0.0) || !self.waist.is_finite() {
            return Err(Error::param("waist", format!("must be positive, got {}", self.waist)));
        }
        for &(n, m) in &self.modes {
            check_index(n, m)?;
            if n != self.slope * m + self.intercept {
                return Err(Error::InvalidMode { n, m, reason: "mode is off the line n = slope*m + intercept" });
            }
            if m < 0 {
                return Err(Error::InvalidMode { n, m, reason: "m must be non-negative" });
            }
        }
        if self.modes.len() > 2 {
            let step = self.modes[1].1 - self.modes[0].1;
            if self.modes.windows(2).any(|w| w[1].1 - w[0].1 != step) {
                return Err(Error::param("modes", "m values must form an arithmetic progression"));
            }
        }
        Ok(())
    }
}

/// Equal-weight coherent sum of the beam's modes, renormalized to unit L2 norm.
pub fn superpose_beam(spec: &GLBeamSpec, grid: &Grid2D) -> Result<ComplexField> {
    spec.validate()?;
    let mut acc = Array2::<Complex64>::zeros(grid.shape());
    for &(n, m) in &spec.modes {
        acc += &gl_mode(n, m, spec.waist, grid)?.values;
    }
    Ok(ComplexField { grid: *grid, values: acc }.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> Grid2D {
        Grid2D::square(128, 0.05e-3).unwrap()
    }

    #[test]
    fn laguerre_closed_forms() {
        for &x in &[0.0, 0.3, 1.7, 4.0] {
            let a = 2.0;
            assert!((laguerre(1, a, x) - (1.0 + a - x)).abs() < 1e-12);
            let l2 = 0.5 * (x * x - 2.0 * (a + 2.0) * x + (a + 1.0) * (a + 2.0));
            assert!((laguerre(2, a, x) - l2).abs() < 1e-12);
        }
    }

    #[test]
    fn fundamental_mode_is_real_gaussian() {
        let g = grid();
        let f = gl_mode(0, 0, 0.4e-3, &g).unwrap();
        assert!(f.values.iter().all(|v| v.im.abs() < 1e-15 && v.re >= 0.0));
        let c = g.height / 2;
        assert!((f.values[[c, c + 5]].re - f.values[[c + 5, c]].re).abs() < 1e-15);
        assert!((f.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vortex_phase_winds_once() {
        let g = grid();
        let f = gl_mode(1, 1, 0.4e-3, &g).unwrap();
        let c = (g.height / 2) as isize;
        // sample a ring of radius 8 px and compare arg against azimuth
        let mut offset = None;
        for k in 0..32 {
            let t = 2.0 * PI * k as f64 / 32.0;
            let (x, y) = ((8.0 * t.cos()).round() as isize, (8.0 * t.sin()).round() as isize);
            let v = f.values[[(c + y) as usize, (c + x) as usize]];
            let theta = (y as f64).atan2(x as f64);
            let d = (v.arg() - theta).rem_euclid(2.0 * PI);
            let o = *offset.get_or_insert(d);
            let diff = (d - o + PI).rem_euclid(2.0 * PI) - PI;
            assert!(diff.abs() < 1e-9, "phase offset drift {diff}");
        }
    }

    #[test]
    fn modes_are_orthogonal() {
        let g = grid();
        let pairs = [(0, 0), (1, 1), (1, -1), (2, 0), (5, 3), (9, 5), (13, 7)];
        let modes: Vec<_> = pairs.iter().map(|&(n, m)| gl_mode(n, m, 0.4e-3, &g).unwrap()).collect();
        for i in 0..modes.len() {
            assert!((modes[i].norm() - 1.0).abs() < 1e-6);
            for j in 0..i {
                assert!(modes[i].inner(&modes[j]).norm() < 1e-3, "{:?} vs {:?}", pairs[i], pairs[j]);
            }
        }
    }

    #[test]
    fn invalid_indices_rejected() {
        let g = grid();
        assert!(gl_mode(-1, 0, 1e-3, &g).is_err());
        assert!(gl_mode(1, 3, 1e-3, &g).is_err());
        assert!(gl_mode(2, 1, 1e-3, &g).is_err());
        assert!(gl_mode(0, 0, 0.0, &g).is_err());
    }

    #[test]
    fn beam_spec_validation() {
        assert!(GLBeamSpec::double_helix().validate().is_ok());
        assert!(GLBeamSpec::new(vec![], 1e-3, 2, -1).is_err());
        assert!(GLBeamSpec::new(vec![(1, 1), (4, 3)], 1e-3, 2, -1).is_err());
        assert!(GLBeamSpec::new(vec![(1, 1), (5, 3), (13, 7)], 1e-3, 2, -1).is_err());
    }

    #[test]
    fn singleton_superposition_is_the_mode() {
        let g = grid();
        let spec = GLBeamSpec::new(vec![(5, 3)], 0.4e-3, 2, -1).unwrap();
        let a = superpose_beam(&spec, &g).unwrap();
        let b = gl_mode(5, 3, 0.4e-3, &g).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn two_mode_sum_normalized() {
        let g = grid();
        let spec = GLBeamSpec::new(vec![(1, 1), (5, 3)], 0.4e-3, 2, -1).unwrap();
        assert!((superpose_beam(&spec, &g).unwrap().norm() - 1.0).abs() < 1e-12);
    }
}
