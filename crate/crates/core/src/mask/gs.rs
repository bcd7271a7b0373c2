use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{wrap_phase, PhaseMask};
use crate::error::{Error, Result};
use crate::optics::{gl_mode, superpose_beam, GLBeamSpec, Grid2D, System4f};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GSConfig {
    pub iterations: usize,
    pub modal_projection: bool,
    /// Stop when the modal-energy fraction changes by less than this (relative).
    pub convergence_tol: f64,
}

impl Default for GSConfig {
    fn default() -> Self {
        GSConfig { iterations: 200, modal_projection: true, convergence_tol: 1e-5 }
    }
}

/// What the design loop did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSDiagnostics {
    /// Fraction of the phase-only aperture energy captured by the equal-weight
    /// GL superposition, per iteration.
    pub modal_fraction: Vec<f64>,
    pub final_modal_fraction: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Least-squares |c_j| of the returned field, in beam mode order.
    pub mode_weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DesignedMask {
    pub mask: PhaseMask,
    pub diagnostics: GSDiagnostics,
}

/// Least-squares projector onto span{GL modes} restricted to the aperture.
struct ModalProjector {
    basis: Vec<Array2<Complex64>>,
    gram_inv: DMatrix<Complex64>,
}

impl ModalProjector {
    fn new(spec: &GLBeamSpec, grid: &Grid2D, aperture: &Array2<f64>) -> Result<Self> {
        let basis: Vec<Array2<Complex64>> = spec
            .modes
            .iter()
            .map(|&(n, m)| gl_mode(n, m, spec.waist, grid).map(|f| &f.values * &aperture.mapv(|a| Complex64::new(a, 0.0))))
            .collect::<Result<_>>()?;
        let k = basis.len();
        let gram = DMatrix::from_fn(k, k, |i, j| inner(&basis[i], &basis[j]));
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::param("modes", "GL modes are linearly dependent on the aperture"))?;
        Ok(ModalProjector { basis, gram_inv })
    }

    /// Projects onto the equal-magnitude superpositions: the mode phases come
    /// from the least-squares coefficients, the common magnitude from the
    /// best fit. Returns the projection, the least-squares coefficients and
    /// the captured energy.
    fn project(&self, field: &Array2<Complex64>) -> (Array2<Complex64>, DVector<Complex64>, f64) {
        let rhs = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|b| inner(b, field)));
        let coeffs = &self.gram_inv * &rhs;
        let mut unit = Array2::<Complex64>::zeros(field.dim());
        for (b, c) in self.basis.iter().zip(coeffs.iter()) {
            unit.scaled_add(Complex64::from_polar(1.0, c.arg()), b);
        }
        let norm = inner(&unit, &unit).re.sqrt();
        unit.mapv_inplace(|v| v / norm);
        let alpha = inner(&unit, field);
        (unit.mapv(|v| v * alpha), coeffs, alpha.norm_sqr())
    }
}

fn inner(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn phase_only(field: &Array2<Complex64>, aperture: &Array2<f64>) -> Array2<Complex64> {
    ndarray::Zip::from(field).and(aperture).map_collect(|v, &a| {
        if a > 0.0 {
            Complex64::from_polar(a, v.arg())
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Designs a phase-only rotating-PSF mask for `spec`.
///
/// Starting from the phase of the equal-weight GL superposition, the loop
/// alternates between the unit-amplitude aperture constraint and a projection
/// onto superpositions of the beam's GL modes with equal magnitudes and free
/// phases. Letting the magnitudes float instead concentrates the energy in
/// the highest-order mode and the PSF loses its two lobes. The iterate that
/// captures the largest energy fraction is returned.
pub fn design_dhpsf_mask(spec: &GLBeamSpec, system: &System4f, grid: &Grid2D, cfg: &GSConfig) -> Result<DesignedMask> {
    if cfg.iterations == 0 {
        return Err(Error::param("iterations", "at least one GS iteration is required"));
    }
    spec.validate()?;
    let (extent, _) = grid.extent();
    if system.aperture_diameter >= extent {
        return Err(Error::param("grid", "pupil grid does not cover the aperture"));
    }
    let aperture = system.aperture(grid);
    let total = aperture.sum();
    let projector = ModalProjector::new(spec, grid, &aperture)?;
    let mut estimate = superpose_beam(spec, grid)?.values;

    let mut fractions = Vec::new();
    let mut best: Option<(f64, Array2<Complex64>, Vec<f64>)> = None;
    let mut converged = false;
    for _ in 0..cfg.iterations {
        let constrained = phase_only(&estimate, &aperture);
        let (projected, coeffs, captured) = projector.project(&constrained);
        let fraction = captured / total;
        let weights: Vec<f64> = coeffs.iter().map(|c| c.norm()).collect();
        if best.as_ref().map_or(true, |b| fraction > b.0) {
            best = Some((fraction, constrained, weights));
        }
        let prev = fractions.last().copied();
        fractions.push(fraction);
        if !cfg.modal_projection {
            break;
        }
        estimate = projected;
        if let Some(p) = prev {
            if ((fraction - p) / fraction.max(f64::MIN_POSITIVE)).abs() < cfg.convergence_tol {
                converged = true;
                break;
            }
        }
    }
    let (final_fraction, field, mode_weights) = best.expect("at least one iteration ran");
    // f32-representable phases so the mask survives the float32 container unchanged
    let phase = field.mapv(|v| if v.norm() > 0.0 { wrap_phase(v.arg()) as f32 as f64 } else { 0.0 });
    let phase = phase.mapv(|p| if p >= std::f64::consts::TAU { 0.0 } else { p });
    let mask = PhaseMask::new(*grid, phase, system.aperture_diameter, None)?;
    Ok(DesignedMask {
        mask,
        diagnostics: GSDiagnostics {
            iterations_run: fractions.len(),
            modal_fraction: fractions,
            final_modal_fraction: final_fraction,
            converged,
            mode_weights,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (GLBeamSpec, System4f, Grid2D) {
        let sys = System4f::reference();
        (GLBeamSpec::double_helix(), sys, sys.pupil_grid(96).unwrap())
    }

    #[test]
    fn zero_iterations_rejected() {
        let (spec, sys, g) = small();
        let cfg = GSConfig { iterations: 0, ..GSConfig::default() };
        assert!(design_dhpsf_mask(&spec, &sys, &g, &cfg).is_err());
    }

    #[test]
    fn modal_fraction_never_decreases() {
        let (spec, sys, g) = small();
        let cfg = GSConfig { iterations: 40, modal_projection: true, convergence_tol: 0.0 };
        let d = design_dhpsf_mask(&spec, &sys, &g, &cfg).unwrap();
        let f = &d.diagnostics.modal_fraction;
        assert_eq!(f.len(), 40);
        for w in f.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
        }
        assert!(d.diagnostics.final_modal_fraction > 0.5);
    }

    #[test]
    fn output_is_phase_only() {
        let (spec, sys, g) = small();
        let d = design_dhpsf_mask(&spec, &sys, &g, &GSConfig { iterations: 5, ..GSConfig::default() }).unwrap();
        let field = d.mask.to_field();
        let support = d.mask.support();
        for (v, s) in field.values.iter().zip(support.iter()) {
            if *s {
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert!(d.mask.phase.iter().all(|p| (*p as f32) as f64 == *p));
    }
}
