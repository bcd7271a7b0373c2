//! Depth maps from reconstructed volumes, depth-map scores (MAE, RMSE,
//! MS-SSIM), and Gaussian width fits of PSF lobes and axial profiles.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::analysis::{bright_clusters, two_lobes};
use crate::error::{Error, Result};
use crate::forward::Volume3D;
use crate::mask::PsfStack;

/// Default validity threshold, as a fraction of the largest per-pixel z-sum.
pub const MIP_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    /// Depth in metres; 0 where invalid.
    pub depth: Array2<f64>,
    pub valid: Array2<bool>,
    pub z_levels: Vec<f64>,
}

impl DepthMap {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Least-squares slope of depth against column index (metres per
    /// pixel) over valid pixels; `None` with fewer than two distinct columns.
    pub fn slope_x(&self) -> Option<f64> {
        let (mut n, mut sx, mut sz, mut sxx, mut sxz) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((r, c), ok) in self.valid.indexed_iter() {
            if *ok {
                let (x, z) = (c as f64, self.depth[[r, c]]);
                n += 1.0;
                sx += x;
                sz += z;
                sxx += x * x;
                sxz += x * z;
            }
        }
        let den = n * sxx - sx * sx;
        (den > 0.0).then(|| (n * sxz - sx * sz) / den)
    }
}

/// Per-pixel depth of the brightest plane. Pixels whose z-sum falls below
/// `threshold` x the largest z-sum are invalid. Ties go to the plane nearest
/// focus, then to the smaller depth.
pub fn mip_depth(volume: &Volume3D, threshold: f64) -> DepthMap {
    let v = &volume.values;
    let (nz, ny, nx) = v.dim();
    let z_levels = volume.z_levels();
    let sums = v.sum_axis(Axis(0));
    let max = sums.iter().cloned().fold(0.0, f64::max);
    let mut depth = Array2::zeros((ny, nx));
    let mut valid = Array2::from_elem((ny, nx), false);
    if max > 0.0 {
        for y in 0..ny {
            for x in 0..nx {
                if !(sums[[y, x]] > 0.0 && sums[[y, x]] >= threshold * max) {
                    continue;
                }
                let mut best = 0;
                for k in 1..nz {
                    let (a, b) = (v[[k, y, x]], v[[best, y, x]]);
                    let better = a > b || (a == b && z_levels[k].abs() < z_levels[best].abs());
                    if better {
                        best = k;
                    }
                }
                depth[[y, x]] = z_levels[best];
                valid[[y, x]] = true;
            }
        }
    }
    DepthMap { depth, valid, z_levels }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Metres.
    pub mae: f64,
    /// Metres.
    pub rmse: f64,
    pub ms_ssim: f64,
    /// Mutually valid pixels over pixels valid in either map.
    pub coverage: f64,
}

impl ScoreReport {
    /// `key=value` lines with depths in millimetres.
    pub fn to_text(&self) -> String {
        format!(
            "mae_mm={:.6}\nrmse_mm={:.6}\nms_ssim={:.6}\ncoverage={:.6}\n",
            self.mae * 1e3,
            self.rmse * 1e3,
            self.ms_ssim,
            self.coverage
        )
    }
}

/// Scores `pred` against `truth` on their mutually valid pixels. MS-SSIM is
/// computed on depth maps scaled to [0, 1] over the shared z range; pixels
/// not valid in both maps take the truth value (0 where truth is invalid).
pub fn score(pred: &DepthMap, truth: &DepthMap) -> Result<ScoreReport> {
    if pred.depth.dim() != truth.depth.dim() {
        let (a, b) = truth.depth.dim();
        let (c, d) = pred.depth.dim();
        return Err(Error::ShapeMismatch { expected: vec![a, b], found: vec![c, d] });
    }
    let mut n = 0usize;
    let mut union = 0usize;
    let (mut abs, mut sq) = (0.0, 0.0);
    for ((p, t), (pv, tv)) in pred.depth.iter().zip(truth.depth.iter()).zip(pred.valid.iter().zip(truth.valid.iter())) {
        if *pv || *tv {
            union += 1;
        }
        if *pv && *tv {
            let d = p - t;
            abs += d.abs();
            sq += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("mutually valid depth pixels"));
    }
    let lo = truth.z_levels.iter().chain(pred.z_levels.iter()).cloned().fold(f64::INFINITY, f64::min);
    let hi = truth.z_levels.iter().chain(pred.z_levels.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let norm = |d: f64| (d - lo) / span;
    let shape = truth.depth.dim();
    let t_img = Array2::from_shape_fn(shape, |i| if truth.valid[i] { norm(truth.depth[i]) } else { 0.0 });
    let p_img = Array2::from_shape_fn(shape, |i| if truth.valid[i] && pred.valid[i] { norm(pred.depth[i]) } else { t_img[i] });
    Ok(ScoreReport {
        mae: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        ms_ssim: ms_ssim(p_img.view(), t_img.view())?,
        coverage: n as f64 / union as f64,
    })
}

/// Per-scale exponents of multi-scale SSIM.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window(size: usize, sigma: f64) -> Array1<f64> {
    let c = (size / 2) as f64;
    let w = Array1::from_shape_fn(size, |i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp());
    let s = w.sum();
    w / s
}

/// 'valid' separable filtering.
fn filter_valid(img: &Array2<f64>, w: &Array1<f64>) -> Array2<f64> {
    let k = w.len();
    let (h, wd) = img.dim();
    let rows = Array2::from_shape_fn((h, wd + 1 - k), |(r, c)| (0..k).map(|i| img[[r, c + i]] * w[i]).sum::<f64>());
    Array2::from_shape_fn((h + 1 - k, wd + 1 - k), |(r, c)| (0..k).map(|i| rows[[r + i, c]] * w[i]).sum::<f64>())
}

/// Mean luminance and contrast-structure terms of SSIM on data range 1.
fn ssim_terms(a: &Array2<f64>, b: &Array2<f64>) -> (f64, f64) {
    let (h, w) = a.dim();
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let win = gaussian_window(size, SSIM_SIGMA);
    let mu_a = filter_valid(a, &win);
    let mu_b = filter_valid(b, &win);
    let aa = filter_valid(&(a * a), &win);
    let bb = filter_valid(&(b * b), &win);
    let ab = filter_valid(&(a * b), &win);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (mut l_sum, mut cs_sum) = (0.0, 0.0);
    let n = mu_a.len() as f64;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice().unwrap()[i], mu_b.as_slice().unwrap()[i]);
        let va = aa.as_slice().unwrap()[i] - ma * ma;
        let vb = bb.as_slice().unwrap()[i] - mb * mb;
        let cov = ab.as_slice().unwrap()[i] - ma * mb;
        l_sum += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += (2.0 * cov + c2) / (va + vb + c2);
    }
    (l_sum / n, cs_sum / n)
}

fn downsample(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(r, c)| {
        0.25 * (img[[2 * r, 2 * c]] + img[[2 * r + 1, 2 * c]] + img[[2 * r, 2 * c + 1]] + img[[2 * r + 1, 2 * c + 1]])
    })
}

/// Multi-scale SSIM of two images with values in [0, 1]. The Gaussian
/// window shrinks to the image size at coarse scales; negative terms are
/// clamped to 0.
pub fn ms_ssim(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch { expected: vec![a.nrows(), a.ncols()], found: vec![b.nrows(), b.ncols()] });
    }
    let scales = MS_SSIM_WEIGHTS.len();
    let min_side = 1usize << (scales - 1);
    if a.nrows() < min_side || a.ncols() < min_side {
        return Err(Error::param("image", format!("MS-SSIM needs at least {min_side}x{min_side} pixels")));
    }
    let mut x = a.to_owned();
    let mut y = b.to_owned();
    let mut out = 1.0;
    for (j, w) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (l, cs) = ssim_terms(&x, &y);
        if j + 1 == scales {
            out *= (l.max(0.0) * cs.max(0.0)).powf(*w);
        } else {
            out *= cs.max(0.0).powf(*w);
            x = downsample(&x);
            y = downsample(&y);
        }
    }
    Ok(out)
}

/// Elliptical 2D Gaussian `a exp(-(dx^2/2sx^2 + dy^2/2sy^2)) + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub amplitude: f64,
    pub x0: f64,
    pub y0: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub offset: f64,
}

/// Levenberg-Marquardt least squares for a model with parameter vector `p`.
fn levenberg_marquardt<F>(mut p: DVector<f64>, n_obs: usize, model: F, iterations: usize) -> Option<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let mut lambda = 1e-3;
    let (mut r, mut j) = model(&p);
    let mut cost = r.norm_squared();
    for _ in 0..iterations {
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        let mut a = jtj.clone();
        for i in 0..p.len() {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let step = a.lu().solve(&(-g))?;
        let trial = &p + &step;
        let (rt, jt2) = model(&trial);
        let ct = rt.norm_squared();
        if ct.is_finite() && ct < cost {
            let done = (cost - ct) <= 1e-14 * cost.max(1e-300) || step.norm() <= 1e-12 * p.norm().max(1.0);
            p = trial;
            r = rt;
            j = jt2;
            cost = ct;
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    debug_assert_eq!(r.len(), n_obs);
    Some(p)
}

/// Least-squares fit of a [`Gaussian2D`] (pixel units) seeded from moments.
pub fn fit_gaussian_2d(img: ArrayView2<f64>) -> Option<Gaussian2D> {
    let (h, w) = img.dim();
    let min = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let mass: f64 = img.iter().map(|v| v - min).sum();
    if !(mass > 0.0) {
        return None;
    }
    let (mut mx, mut my) = (0.0, 0.0);
    for ((r, c), v) in img.indexed_iter() {
        mx += (v - min) * c as f64;
        my += (v - min) * r as f64;
    }
    mx /= mass;
    my /= mass;
    let (mut vx, mut vy) = (0.0, 0.0);
    for ((r, c), v) in img.indexed_iter() {
        vx += (v - min) * (c as f64 - mx).powi(2);
        vy += (v - min) * (r as f64 - my).powi(2);
    }
    let peak = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p0 = DVector::from_vec(vec![peak - min, mx, my, (vx / mass).sqrt().max(0.5), (vy / mass).sqrt().max(0.5), min]);
    let n = h * w;
    let model = |p: &DVector<f64>| {
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 6);
        for ((row, col), v) in img.indexed_iter() {
            let i = row * w + col;
            let dx = col as f64 - p[1];
            let dy = row as f64 - p[2];
            let (sx, sy) = (p[3], p[4]);
            let e = (-(dx * dx / (2.0 * sx * sx) + dy * dy / (2.0 * sy * sy))).exp();
            r[i] = p[0] * e + p[5] - v;
            j[(i, 0)] = e;
            j[(i, 1)] = p[0] * e * dx / (sx * sx);
            j[(i, 2)] = p[0] * e * dy / (sy * sy);
            j[(i, 3)] = p[0] * e * dx * dx / (sx * sx * sx);
            j[(i, 4)] = p[0] * e * dy * dy / (sy * sy * sy);
            j[(i, 5)] = 1.0;
        }
        (r, j)
    };
    let p = levenberg_marquardt(p0, n, model, 200)?;
    let g = Gaussian2D { amplitude: p[0], x0: p[1], y0: p[2], sigma_x: p[3].abs(), sigma_y: p[4].abs(), offset: p[5] };
    let ok = [g.amplitude, g.x0, g.y0, g.sigma_x, g.sigma_y, g.offset].iter().all(|v| v.is_finite()) && g.amplitude > 0.0;
    ok.then_some(g)
}

/// 1D Gaussian fit `a exp(-(i - mu)^2 / 2 sigma^2) + b`; returns (mu, sigma) in samples.
pub fn fit_gaussian_1d(profile: ArrayView1<f64>) -> Option<(f64, f64)> {
    let n = profile.len();
    if n < 4 {
        return None;
    }
    let min = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    let mass: f64 = profile.iter().map(|v| v - min).sum();
    if !(mass > 0.0) {
        return None;
    }
    let mu = profile.iter().enumerate().map(|(i, v)| (v - min) * i as f64).sum::<f64>() / mass;
    let var = profile.iter().enumerate().map(|(i, v)| (v - min) * (i as f64 - mu).powi(2)).sum::<f64>() / mass;
    let peak = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p0 = DVector::from_vec(vec![peak - min, mu, var.sqrt().max(0.3), min]);
    let model = |p: &DVector<f64>| {
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 4);
        for (i, v) in profile.iter().enumerate() {
            let d = i as f64 - p[1];
            let s = p[2];
            let e = (-(d * d) / (2.0 * s * s)).exp();
            r[i] = p[0] * e + p[3] - v;
            j[(i, 0)] = e;
            j[(i, 1)] = p[0] * e * d / (s * s);
            j[(i, 2)] = p[0] * e * d * d / (s * s * s);
            j[(i, 3)] = 1.0;
        }
        (r, j)
    };
    let p = levenberg_marquardt(p0, n, model, 200)?;
    (p[0] > 0.0 && p[1].is_finite() && p[2].is_finite()).then(|| (p[1], p[2].abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobeWidthReport {
    /// Per fitted lobe: mean of 2 sigma_x and 2 sigma_y, metres (NaN on fit failure).
    pub two_sigma: Vec<f64>,
    /// Average over fitted lobes, metres.
    pub mean_two_sigma: f64,
    /// Same, in sensor pixels.
    pub mean_two_sigma_px: f64,
}

/// Half-width of the window cut around each lobe before fitting.
pub const LOBE_FIT_RADIUS: usize = 5;

fn window(img: &Array2<f64>, center: (f64, f64), radius: usize) -> (Array2<f64>, usize, usize) {
    let (h, w) = img.dim();
    let cx = center.0.round().clamp(0.0, (w - 1) as f64) as usize;
    let cy = center.1.round().clamp(0.0, (h - 1) as f64) as usize;
    let (r0, r1) = (cy.saturating_sub(radius), (cy + radius + 1).min(h));
    let (c0, c1) = (cx.saturating_sub(radius), (cx + radius + 1).min(w));
    (img.slice(s![r0..r1, c0..c1]).to_owned(), r0, c0)
}

/// 2 sigma widths of Gaussians fitted to the lobes of the PSF plane nearest
/// `z`: one lobe per channel for a polarized stack, two for a single
/// channel.
pub fn lobe_width_report(stack: &PsfStack, z: f64) -> LobeWidthReport {
    let k = stack.nearest_plane(z);
    let mut widths = Vec::new();
    let mut fit_at = |img: &Array2<f64>, center: (f64, f64)| {
        let (win, _, _) = window(img, center, LOBE_FIT_RADIUS);
        match fit_gaussian_2d(win.view()) {
            Some(g) => widths.push(g.sigma_x + g.sigma_y),
            None => widths.push(f64::NAN),
        }
    };
    if stack.channels.len() == 1 {
        let img = stack.plane(0, k).to_owned();
        if let Some(lobes) = two_lobes(&img, 0.2) {
            for c in lobes {
                fit_at(&img, c);
            }
        }
    } else {
        for c in 0..stack.channels.len() {
            let img = stack.plane(c, k).to_owned();
            if let Some(top) = bright_clusters(&img, 0.2).first() {
                fit_at(&img, top.centroid);
            }
        }
    }
    let good: Vec<f64> = widths.iter().copied().filter(|v| v.is_finite()).collect();
    let mean_px = if good.is_empty() { f64::NAN } else { good.iter().sum::<f64>() / good.len() as f64 };
    LobeWidthReport {
        two_sigma: widths.iter().map(|w| w * stack.pitch).collect(),
        mean_two_sigma: mean_px * stack.pitch,
        mean_two_sigma_px: mean_px,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxialSpreadReport {
    /// Median 2 sigma of the z profile over high-signal columns, metres.
    pub median_two_sigma: f64,
    pub columns_fitted: usize,
    pub columns_failed: usize,
}

/// Median 2 sigma of 1D Gaussian fits along z for pixel columns whose z-sum
/// reaches `threshold` x the largest z-sum.
pub fn axial_spread_report(volume: &Volume3D, threshold: f64) -> AxialSpreadReport {
    let v = &volume.values;
    let sums = v.sum_axis(Axis(0));
    let max = sums.iter().cloned().fold(0.0, f64::max);
    let mut spreads = Vec::new();
    let mut failed = 0;
    for ((y, x), s) in sums.indexed_iter() {
        if !(max > 0.0 && *s >= threshold * max && *s > 0.0) {
            continue;
        }
        match fit_gaussian_1d(v.slice(s![.., y, x])) {
            Some((_, sigma)) => spreads.push(2.0 * sigma * volume.voxel_pitch.2),
            None => failed += 1,
        }
    }
    spreads.sort_by(f64::total_cmp);
    let median = match spreads.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => spreads[n / 2],
        n => 0.5 * (spreads[n / 2 - 1] + spreads[n / 2]),
    };
    AxialSpreadReport { median_two_sigma: median, columns_fitted: spreads.len(), columns_failed: failed }
}
