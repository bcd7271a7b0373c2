//! Geometry of rendered PSFs: lobe segmentation, lobe-axis angle and lobe
//! dominance. Angles are counter-clockwise as displayed, with row 0 at the
//! top: `atan2(-d_row, d_col)`.

use std::f64::consts::PI;

use ndarray::Array2;

/// One connected region of bright pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Summed intensity.
    pub mass: f64,
    /// Intensity-weighted centroid as (x, y) in pixels.
    pub centroid: (f64, f64),
    pub pixels: Vec<(usize, usize)>,
}

/// Intensity-weighted centroid (x, y) in pixels.
pub fn centroid(img: &Array2<f64>) -> Option<(f64, f64)> {
    let mut m = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for ((r, c), &v) in img.indexed_iter() {
        m += v;
        sx += v * c as f64;
        sy += v * r as f64;
    }
    (m > 0.0).then(|| (sx / m, sy / m))
}

/// 8-connected components of pixels above `threshold * max`, largest mass first.
pub fn bright_clusters(img: &Array2<f64>, threshold: f64) -> Vec<Cluster> {
    let max = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let cut = threshold * max;
    let (h, w) = img.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut clusters = Vec::new();
    for r0 in 0..h {
        for c0 in 0..w {
            if seen[[r0, c0]] || img[[r0, c0]] <= cut {
                continue;
            }
            let mut stack = vec![(r0, c0)];
            seen[[r0, c0]] = true;
            let mut pixels = Vec::new();
            while let Some((r, c)) = stack.pop() {
                pixels.push((r, c));
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                            continue;
                        }
                        let (rr, cc) = (rr as usize, cc as usize);
                        if !seen[[rr, cc]] && img[[rr, cc]] > cut {
                            seen[[rr, cc]] = true;
                            stack.push((rr, cc));
                        }
                    }
                }
            }
            let mass: f64 = pixels.iter().map(|&p| img[p]).sum();
            let cx = pixels.iter().map(|&(r, c)| img[[r, c]] * c as f64).sum::<f64>() / mass;
            let cy = pixels.iter().map(|&(r, c)| img[[r, c]] * r as f64).sum::<f64>() / mass;
            clusters.push(Cluster { mass, centroid: (cx, cy), pixels });
        }
    }
    clusters.sort_by(|a, b| b.mass.total_cmp(&a.mass));
    clusters
}

/// Ratio of the largest to the second-largest bright cluster (infinite when
/// only one cluster exists).
pub fn dominance_ratio(img: &Array2<f64>, threshold: f64) -> f64 {
    let clusters = bright_clusters(img, threshold);
    match clusters.len() {
        0 => 0.0,
        1 => f64::INFINITY,
        _ => clusters[0].mass / clusters[1].mass,
    }
}

/// Two-lobe split of the bright pixels by weighted 2-means, seeded along the
/// principal axis. Returns both lobe centroids (x, y).
pub fn two_lobes(img: &Array2<f64>, threshold: f64) -> Option<[(f64, f64); 2]> {
    let max = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let pts: Vec<(f64, f64, f64)> = img
        .indexed_iter()
        .filter(|(_, &v)| v > threshold * max)
        .map(|((r, c), &v)| (c as f64, r as f64, v))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / m;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y, v) in &pts {
        sxx += v * (x - mx) * (x - mx);
        syy += v * (y - my) * (y - my);
        sxy += v * (x - mx) * (y - my);
    }
    let axis = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let spread = ((sxx + syy) / m).sqrt().max(0.5);
    let mut centers = [
        (mx + spread * axis.cos(), my + spread * axis.sin()),
        (mx - spread * axis.cos(), my - spread * axis.sin()),
    ];
    for _ in 0..50 {
        let mut acc = [(0.0, 0.0, 0.0); 2];
        for &(x, y, v) in &pts {
            let d0 = (x - centers[0].0).powi(2) + (y - centers[0].1).powi(2);
            let d1 = (x - centers[1].0).powi(2) + (y - centers[1].1).powi(2);
            let k = usize::from(d1 < d0);
            acc[k].0 += v * x;
            acc[k].1 += v * y;
            acc[k].2 += v;
        }
        let mut next = centers;
        for k in 0..2 {
            if acc[k].2 > 0.0 {
                next[k] = (acc[k].0 / acc[k].2, acc[k].1 / acc[k].2);
            }
        }
        let moved = (0..2).map(|k| (next[k].0 - centers[k].0).abs() + (next[k].1 - centers[k].1).abs()).sum::<f64>();
        centers = next;
        if moved < 1e-9 {
            break;
        }
    }
    Some(centers)
}

/// Orientation in [0, pi) of the line joining the two lobes.
pub fn lobe_axis_angle(img: &Array2<f64>, threshold: f64) -> Option<f64> {
    let [a, b] = two_lobes(img, threshold)?;
    Some(wrap_half_turn((a.1 - b.1).atan2(b.0 - a.0)))
}

pub fn wrap_half_turn(angle: f64) -> f64 {
    angle.rem_euclid(PI)
}

/// Signed difference `a - b` folded into [-pi/2, pi/2).
pub fn half_turn_difference(a: f64, b: f64) -> f64 {
    (a - b + PI / 2.0).rem_euclid(PI) - PI / 2.0
}

/// Unwraps a sequence of axis angles (defined modulo pi) into a continuous
/// curve starting at the first sample.
pub fn unwrap_half_turn(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    for &a in angles {
        match out.last() {
            None => out.push(a),
            Some(&prev) => out.push(prev + half_turn_difference(a, prev)),
        }
    }
    out
}
