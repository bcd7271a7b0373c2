//! Procedural test scenes.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Volume3D;
use crate::error::{Error, Result};

/// Voxel grid of a scene whose planes coincide with PSF-stack planes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Lateral voxel pitch (m), equal to the sensor pitch.
    pub pitch_xy: f64,
    /// Depth of the first and last plane (m).
    pub z_min: f64,
    pub z_max: f64,
}

impl SceneGeometry {
    pub fn new(nx: usize, ny: usize, nz: usize, pitch_xy: f64, z_min: f64, z_max: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nz < 2 {
            return Err(Error::param("dims", "need nx, ny >= 1 and nz >= 2"));
        }
        if !(pitch_xy > 0.0) || !(z_max > z_min) {
            return Err(Error::param("geometry", "pitch must be positive and z_max > z_min"));
        }
        Ok(SceneGeometry { nx, ny, nz, pitch_xy, z_min, z_max })
    }

    pub fn pitch_z(&self) -> f64 {
        (self.z_max - self.z_min) / (self.nz - 1) as f64
    }

    /// Depth of every plane.
    pub fn z_levels(&self) -> Vec<f64> {
        (0..self.nz).map(|k| self.z_min + k as f64 * self.pitch_z()).collect()
    }

    pub fn empty(&self) -> Volume3D {
        Volume3D {
            values: Array3::zeros((self.nz, self.ny, self.nx)),
            voxel_pitch: (self.pitch_xy, self.pitch_xy, self.pitch_z()),
            z_origin: self.z_min,
        }
    }
}

/// A single bright voxel.
pub fn single_voxel(geom: &SceneGeometry, at: (usize, usize, usize), value: f64) -> Result<Volume3D> {
    let (x, y, z) = at;
    if x >= geom.nx || y >= geom.ny || z >= geom.nz {
        return Err(Error::param("at", "voxel outside the scene"));
    }
    let mut v = geom.empty();
    v.values[[z, y, x]] = value;
    Ok(v)
}

/// A one-voxel-thick line along x in row `row`, spanning columns
/// `[margin, nx - margin)`, whose depth runs linearly from plane `z_from` to
/// plane `z_to`.
pub fn skew_line(geom: &SceneGeometry, row: usize, margin: usize, z_from: usize, z_to: usize) -> Result<Volume3D> {
    if row >= geom.ny || 2 * margin + 2 > geom.nx || z_from >= geom.nz || z_to >= geom.nz {
        return Err(Error::param("line", "line does not fit in the scene"));
    }
    let mut v = geom.empty();
    let (x0, x1) = (margin, geom.nx - margin - 1);
    for x in x0..=x1 {
        let t = (x - x0) as f64 / (x1 - x0) as f64;
        let z = (z_from as f64 + t * (z_to as f64 - z_from as f64)).round() as usize;
        v.values[[z, row, x]] = 1.0;
    }
    Ok(v)
}

/// Shape of a procedural vessel tree, in voxel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    /// Bifurcation generations below the root segment.
    pub generations: u32,
    /// Lateral radius of the root vessel (voxels).
    pub root_radius: f64,
    /// Child radius / parent radius.
    pub radius_decay: f64,
    /// Axial radius relative to the lateral one.
    pub axial_ratio: f64,
    /// Root segment length as a fraction of the lateral size.
    pub root_length: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { generations: 3, root_radius: 2.2, radius_decay: 0.8, axial_ratio: 0.6, root_length: 0.45 }
    }
}

struct Segment {
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// A branching vessel-like tree with depth variation across the whole z
/// range, deterministic per seed. Vessel voxels have value 1.
pub fn vascular_tree(geom: &SceneGeometry, params: &TreeParams, seed: u64) -> Volume3D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // coordinates (x, y, z) in voxels; z is stretched so vessels sweep depth
    let (nx, ny, nz) = (geom.nx as f64, geom.ny as f64, geom.nz as f64);
    let lateral = nx.min(ny);
    let z_stretch = nz / lateral;
    let mut segments = Vec::new();
    let start = [rng.random_range(0.1..0.3) * nx, rng.random_range(0.3..0.7) * ny, rng.random_range(0.2..0.8) * nz];
    let dir = normalize([1.0, rng.random_range(-0.4..0.4), rng.random_range(-0.8..0.8)]);
    let mut stack = vec![(start, dir, params.root_radius, params.root_length * lateral, 0u32)];
    while let Some((a, d, r, len, gen)) = stack.pop() {
        let b = [a[0] + d[0] * len, a[1] + d[1] * len, a[2] + d[2] * len * z_stretch];
        segments.push(Segment { a, b, radius: r });
        if gen < params.generations {
            for side in [-1.0, 1.0] {
                let turn = side * rng.random_range(0.35..0.8);
                let (s, c) = f64::sin_cos(turn);
                let nd = normalize([d[0] * c - d[1] * s, d[0] * s + d[1] * c, d[2] + rng.random_range(-0.9..0.9)]);
                let nlen = len * rng.random_range(0.65..0.85);
                stack.push((b, nd, r * params.radius_decay, nlen, gen + 1));
            }
        }
    }
    let mut v = geom.empty();
    for seg in &segments {
        let rz = (seg.radius * params.axial_ratio).max(0.6);
        let lo = |i: usize| (seg.a[i].min(seg.b[i]) - seg.radius.max(rz) - 1.0).floor().max(0.0) as usize;
        let hi = |i: usize, n: usize| ((seg.a[i].max(seg.b[i]) + seg.radius.max(rz) + 1.0).ceil().max(0.0) as usize).min(n);
        let (x0, x1) = (lo(0), hi(0, geom.nx));
        let (y0, y1) = (lo(1), hi(1, geom.ny));
        let (z0, z1) = (lo(2), hi(2, geom.nz));
        let ab = [seg.b[0] - seg.a[0], seg.b[1] - seg.a[1], seg.b[2] - seg.a[2]];
        let ab2 = ab.iter().map(|c| c * c).sum::<f64>().max(1e-12);
        for z in z0..z1 {
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = [x as f64, y as f64, z as f64];
                    let t = ((p[0] - seg.a[0]) * ab[0] + (p[1] - seg.a[1]) * ab[1] + (p[2] - seg.a[2]) * ab[2]) / ab2;
                    let t = t.clamp(0.0, 1.0);
                    let q = [seg.a[0] + t * ab[0], seg.a[1] + t * ab[1], seg.a[2] + t * ab[2]];
                    let dl = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)) / (seg.radius * seg.radius);
                    let dz = (p[2] - q[2]).powi(2) / (rz * rz);
                    if dl + dz <= 1.0 {
                        v.values[[z, y, x]] = 1.0;
                    }
                }
            }
        }
    }
    v
}
