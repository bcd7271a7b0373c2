use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Measurement, NoiseMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub poisson: bool,
    /// Read-noise sigma as a fraction of the noiseless image maximum.
    pub read_sigma: f64,
    pub seed: u64,
    /// Clamp negative values after read noise.
    pub clamp: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { poisson: true, read_sigma: 0.02, seed: 0, clamp: false }
    }
}

/// Poisson shot noise (if enabled) then additive Gaussian read noise with
/// sigma = `read_sigma` x the noiseless maximum of each channel. Channel `c`
/// draws from its own ChaCha8 stream, so results do not depend on threading.
pub fn add_noise(m: &Measurement, cfg: &NoiseConfig) -> Result<Measurement> {
    if !(cfg.read_sigma >= 0.0) || !cfg.read_sigma.is_finite() {
        return Err(Error::param("read_sigma", "must be non-negative"));
    }
    let mut out = m.images.clone();
    for (c, mut img) in out.axis_iter_mut(Axis(0)).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(c as u64);
        let peak = img.iter().cloned().fold(0.0, f64::max);
        if cfg.poisson {
            for v in img.iter_mut() {
                if *v > 0.0 {
                    *v = Poisson::new(*v).map_err(|e| Error::param("images", e.to_string()))?.sample(&mut rng);
                }
            }
        }
        let sigma = cfg.read_sigma * peak;
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::param("read_sigma", e.to_string()))?;
            for v in img.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        if cfg.clamp {
            img.mapv_inplace(|v| v.max(0.0));
        }
    }
    Measurement::new(m.channels.clone(), out, NoiseMeta { poisson: cfg.poisson, read_sigma: cfg.read_sigma })
}

/// 20 log10(max(reference) / RMSE).
pub fn psnr_db(reference: ArrayView2<f64>, noisy: ArrayView2<f64>) -> f64 {
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let diff: Array2<f64> = &noisy - &reference;
    let mse = diff.mapv(|d| d * d).mean().unwrap_or(0.0);
    20.0 * (peak / mse.sqrt()).log10()
}
