use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array4, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Half, PhaseMask, PolarizedMaskAssembly};
use crate::error::{Error, Result};
use crate::optics::{ComplexField, Grid2D, PsfRenderer, System4f};

/// Polarization channel of a capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Full,
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl Channel {
    pub fn label(self) -> &'static str {
        match self {
            Channel::Full => "full",
            Channel::Deg0 => "0",
            Channel::Deg45 => "45",
            Channel::Deg90 => "90",
            Channel::Deg135 => "135",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Channel::Full,
            "0" => Channel::Deg0,
            "45" => Channel::Deg45,
            "90" => Channel::Deg90,
            "135" => Channel::Deg135,
            other => return Err(Error::param("channel", format!("unknown channel label `{other}`"))),
        })
    }
}

/// Depth- and channel-resolved PSFs h_c(x, y; z), indexed `[channel][z][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    pub z_samples: Vec<f64>,
    pub channels: Vec<Channel>,
    pub psfs: Array4<f64>,
    /// Sensor pixel pitch (m).
    pub pitch: f64,
}

impl PsfStack {
    pub fn new(z_samples: Vec<f64>, channels: Vec<Channel>, psfs: Array4<f64>, pitch: f64) -> Result<Self> {
        if z_samples.is_empty() {
            return Err(Error::Empty("z samples"));
        }
        if z_samples.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("z_samples", "must be strictly increasing"));
        }
        let (nc, nz, _, _) = psfs.dim();
        if nc != channels.len() || nz != z_samples.len() {
            return Err(Error::ShapeMismatch { expected: vec![channels.len(), z_samples.len()], found: vec![nc, nz] });
        }
        if psfs.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::param("psfs", "PSF values must be finite and non-negative"));
        }
        if !(pitch > 0.0) {
            return Err(Error::param("pitch", "must be positive"));
        }
        Ok(PsfStack { z_samples, channels, psfs, pitch })
    }

    pub fn n_z(&self) -> usize {
        self.z_samples.len()
    }

    /// (rows, cols) of one PSF.
    pub fn kernel_shape(&self) -> (usize, usize) {
        let (_, _, h, w) = self.psfs.dim();
        (h, w)
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.z_samples[0], *self.z_samples.last().unwrap())
    }

    pub fn channel_index(&self, channel: Channel) -> Option<usize> {
        self.channels.iter().position(|&c| c == channel)
    }

    pub fn plane(&self, channel: usize, z: usize) -> ArrayView2<'_, f64> {
        self.psfs.index_axis(Axis(0), channel).index_axis_move(Axis(0), z)
    }

    /// Index of the stack plane closest to `z`.
    pub fn nearest_plane(&self, z: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.z_samples.iter().enumerate() {
            if (s - z).abs() < (self.z_samples[best] - z).abs() {
                best = i;
            }
        }
        best
    }

    /// PSF at an arbitrary depth by linear interpolation between planes.
    pub fn interpolate(&self, channel: usize, z: f64) -> Result<Array2<f64>> {
        let (lo, hi) = self.z_range();
        if !(z >= lo && z <= hi) {
            return Err(Error::OutOfRange { what: "depth", value: z, min: lo, max: hi });
        }
        if self.n_z() == 1 {
            return Ok(self.plane(channel, 0).to_owned());
        }
        let k = self.z_samples.partition_point(|&s| s <= z).clamp(1, self.n_z() - 1);
        let (z0, z1) = (self.z_samples[k - 1], self.z_samples[k]);
        let t = (z - z0) / (z1 - z0);
        Ok(&self.plane(channel, k - 1) * (1.0 - t) + &self.plane(channel, k) * t)
    }

    /// Per-plane energy of one channel.
    pub fn plane_energy(&self, channel: usize) -> Vec<f64> {
        (0..self.n_z()).map(|z| self.plane(channel, z).sum()).collect()
    }

    /// A stack holding only the listed channels.
    pub fn select(&self, channels: &[Channel]) -> Result<PsfStack> {
        let idx: Vec<usize> = channels
            .iter()
            .map(|&c| self.channel_index(c).ok_or_else(|| Error::param("channel", format!("stack has no `{c}` channel"))))
            .collect::<Result<_>>()?;
        let psfs = self.psfs.select(Axis(0), &idx);
        Ok(PsfStack { z_samples: self.z_samples.clone(), channels: channels.to_vec(), psfs, pitch: self.pitch })
    }

    pub fn scaled(&self, factor: f64) -> PsfStack {
        PsfStack { psfs: &self.psfs * factor, ..self.clone() }
    }
}

/// What to render a stack from.
#[derive(Debug, Clone, Copy)]
pub enum PsfSource<'a> {
    /// Single unpolarized channel.
    Mask(&'a PhaseMask),
    /// 0 deg and 90 deg channels from the two polarized halves.
    Assembly(&'a PolarizedMaskAssembly),
    /// Arbitrary pupil transmission (e.g. a clear aperture); single channel.
    Field(&'a ComplexField),
}

/// Polarizer transmission for unpolarized light.
pub const POLARIZER_TRANSMISSION: f64 = 0.5;

/// Renders a PSF stack on `sensor` for every defocus in `z_samples`.
///
/// All planes share one normalization: an unobstructed aperture carries unit
/// energy, so relative per-plane energy and the polarizer loss are preserved.
pub fn render_psf_stack(source: PsfSource<'_>, system: &System4f, z_samples: &[f64], sensor: &Grid2D) -> Result<PsfStack> {
    let pupil = match source {
        PsfSource::Mask(m) => m.grid,
        PsfSource::Assembly(a) => a.mask.grid,
        PsfSource::Field(f) => f.grid,
    };
    let renderer = PsfRenderer::new(*system, pupil, 2)?;
    render_psf_stack_with(source, &renderer, z_samples, sensor)
}

/// As [`render_psf_stack`] with an explicit renderer (pupil sampling, padding).
pub fn render_psf_stack_with(source: PsfSource<'_>, renderer: &PsfRenderer, z_samples: &[f64], sensor: &Grid2D) -> Result<PsfStack> {
    if z_samples.is_empty() {
        return Err(Error::Empty("z samples"));
    }
    if z_samples.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("z_samples", "must be sorted and distinct"));
    }
    let (channels, fields): (Vec<Channel>, Vec<(Array2<Complex64>, f64)>) = match source {
        PsfSource::Mask(m) => (vec![Channel::Full], vec![(m.to_field().values, 1.0)]),
        PsfSource::Field(f) => (vec![Channel::Full], vec![(f.values.clone(), 1.0)]),
        PsfSource::Assembly(a) => (
            vec![Channel::Deg0, Channel::Deg90],
            vec![
                (a.half_field(Half::A), POLARIZER_TRANSMISSION),
                (a.half_field(Half::B), POLARIZER_TRANSMISSION),
            ],
        ),
    };
    let planes: Vec<Vec<Array2<f64>>> = z_samples
        .par_iter()
        .map(|&dz| {
            fields
                .iter()
                .map(|(f, gain)| renderer.intensity_on(f, dz, sensor).map(|p| p * *gain))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let (h, w) = sensor.shape();
    let mut psfs = Array4::<f64>::zeros((channels.len(), z_samples.len(), h, w));
    for (z, per_channel) in planes.into_iter().enumerate() {
        for (c, p) in per_channel.into_iter().enumerate() {
            psfs.index_axis_mut(Axis(0), c).index_axis_mut(Axis(0), z).assign(&p);
        }
    }
    let pitch = sensor.pitch;
    PsfStack::new(z_samples.to_vec(), channels, psfs, pitch)
}
