//! PNG figures: grayscale galleries and false-colour maps.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array2, ArrayView2};

/// Anchor colours of a perceptually ordered dark-blue to yellow ramp.
const RAMP: [[f64; 3]; 5] = [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [94.0, 201.0, 98.0], [253.0, 231.0, 37.0]];
const INVALID: Rgb<u8> = Rgb([0, 0, 0]);

fn ramp(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let c = |k: usize| (RAMP[i][k] + f * (RAMP[i + 1][k] - RAMP[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn finite_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo <= hi).then_some((lo, hi))
}

/// Scales `img` to 0..255 over its own range; `scale` repeats each pixel.
pub fn gray(img: ArrayView2<f64>, scale: u32) -> GrayImage {
    let (lo, hi) = finite_range(img.iter().copied()).unwrap_or((0.0, 1.0));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = img.dim();
    GrayImage::from_fn(w as u32 * scale, h as u32 * scale, |x, y| {
        let v = img[[(y / scale) as usize, (x / scale) as usize]];
        Luma([(((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

/// False-colour map over `range` (or the data range); non-finite or
/// masked-out pixels are black.
pub fn colour(img: ArrayView2<f64>, valid: Option<ArrayView2<bool>>, range: Option<(f64, f64)>, scale: u32) -> RgbImage {
    let ok = |r: usize, c: usize| img[[r, c]].is_finite() && valid.map_or(true, |v| v[[r, c]]);
    let data = img.indexed_iter().filter(|((r, c), _)| ok(*r, *c)).map(|(_, v)| *v);
    let (lo, hi) = range.or_else(|| finite_range(data)).unwrap_or((0.0, 1.0));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = img.dim();
    RgbImage::from_fn(w as u32 * scale, h as u32 * scale, |x, y| {
        let (r, c) = ((y / scale) as usize, (x / scale) as usize);
        if ok(r, c) {
            ramp((img[[r, c]] - lo) / span)
        } else {
            INVALID
        }
    })
}

/// Tiles equally sized images into rows of `cols`, each normalized on its own.
pub fn gallery(tiles: &[Array2<f64>], cols: usize) -> GrayImage {
    let (h, w) = tiles.first().map(|t| t.dim()).unwrap_or((1, 1));
    let cols = cols.max(1).min(tiles.len().max(1));
    let rows = tiles.len().div_ceil(cols).max(1);
    let mut out = GrayImage::new((cols * (w + 1)) as u32, (rows * (h + 1)) as u32);
    for (i, t) in tiles.iter().enumerate() {
        let g = gray(t.view(), 1);
        let (ox, oy) = ((i % cols) * (w + 1), (i / cols) * (h + 1));
        for (x, y, p) in g.enumerate_pixels() {
            out.put_pixel(ox as u32 + x, oy as u32 + y, *p);
        }
    }
    out
}

pub fn save_gray(img: &GrayImage, path: &Path) -> image::ImageResult<()> {
    img.save(path)
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> image::ImageResult<()> {
    img.save(path)
}
