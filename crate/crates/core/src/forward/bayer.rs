use ndarray::{s, Array2, Array3, Axis};

use super::{Measurement, NoiseMeta};
use crate::error::{Error, Result};
use crate::mask::Channel;

/// Polarizer of each cell of the 2x2 super-pixel, row-major.
pub const BAYER_LAYOUT: [[Channel; 2]; 2] = [[Channel::Deg90, Channel::Deg45], [Channel::Deg135, Channel::Deg0]];

/// Interleaves the 0/45/90/135 channels into one sensor image. Missing 45
/// and 135 channels are synthesized as the mean of 0 and 90.
pub fn mosaic_polarization(m: &Measurement) -> Result<Array2<f64>> {
    let (h, w) = m.image_shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::param("measurement", format!("mosaic needs even dimensions, got {h}x{w}")));
    }
    let i0 = m.channel(Channel::Deg0).ok_or_else(|| Error::param("measurement", "no 0 deg channel"))?;
    let i90 = m.channel(Channel::Deg90).ok_or_else(|| Error::param("measurement", "no 90 deg channel"))?;
    let mean = (&i0 + &i90) * 0.5;
    let pick = |c: Channel| match c {
        Channel::Deg0 => i0.to_owned(),
        Channel::Deg90 => i90.to_owned(),
        other => m.channel(other).map(|v| v.to_owned()).unwrap_or_else(|| mean.clone()),
    };
    let mut out = Array2::zeros((h, w));
    for (dr, row) in BAYER_LAYOUT.iter().enumerate() {
        for (dc, &c) in row.iter().enumerate() {
            let src = pick(c);
            out.slice_mut(s![dr..;2, dc..;2]).assign(&src.slice(s![dr..;2, dc..;2]));
        }
    }
    Ok(out)
}

/// Splits a mosaic into half-resolution 0/45/90/135 images by subsampling.
pub fn demosaic(image: &Array2<f64>) -> Result<Measurement> {
    let (h, w) = image.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::param("image", format!("mosaic needs even dimensions, got {h}x{w}")));
    }
    let order = [Channel::Deg0, Channel::Deg45, Channel::Deg90, Channel::Deg135];
    let mut images = Array3::zeros((4, h / 2, w / 2));
    for (dr, row) in BAYER_LAYOUT.iter().enumerate() {
        for (dc, c) in row.iter().enumerate() {
            let i = order.iter().position(|o| o == c).unwrap();
            images.index_axis_mut(Axis(0), i).assign(&image.slice(s![dr..;2, dc..;2]));
        }
    }
    Measurement::new(order.to_vec(), images, NoiseMeta::default())
}

/// Mean of each 2x2 super-pixel: the unpolarized image at half resolution.
pub fn bayer_average(image: &Array2<f64>) -> Result<Array2<f64>> {
    let d = demosaic(image)?;
    Ok(d.images.mean_axis(Axis(0)).expect("four channels"))
}
