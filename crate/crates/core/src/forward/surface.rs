use ndarray::Array3;

use super::Volume3D;

/// Keeps the voxels light can leave from: occupied voxels with an empty
/// 6-neighbour (outside the volume counts as empty), then, per (x, y)
/// column seen from plane 0, only the first run of those.
pub fn surface_extract(volume: &Volume3D) -> Volume3D {
    let v = &volume.values;
    let (nz, ny, nx) = v.dim();
    let occupied = |z: isize, y: isize, x: isize| {
        z >= 0 && y >= 0 && x >= 0 && (z as usize) < nz && (y as usize) < ny && (x as usize) < nx && v[[z as usize, y as usize, x as usize]] > 0.0
    };
    let mut shell = Array3::<f64>::zeros(v.dim());
    for ((z, y, x), &val) in v.indexed_iter() {
        if val <= 0.0 {
            continue;
        }
        let (zi, yi, xi) = (z as isize, y as isize, x as isize);
        let exposed = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
            .iter()
            .any(|&(dz, dy, dx)| !occupied(zi + dz, yi + dy, xi + dx));
        if exposed {
            shell[[z, y, x]] = val;
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            let mut seen = false;
            let mut blocked = false;
            for z in 0..nz {
                let on = shell[[z, y, x]] > 0.0;
                if blocked {
                    shell[[z, y, x]] = 0.0;
                } else if on {
                    seen = true;
                } else if seen {
                    blocked = true;
                }
            }
        }
    }
    Volume3D { values: shell, ..volume.clone() }
}
