//! Thin 2D FFT layer over `rustfft` plus the linear-convolution helpers used by
//! the imaging operator and the line renderer.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

/// Planned forward and inverse transforms for one 2D shape.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.rows, self.cols)
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.apply(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform including the 1/(rows*cols) factor, in place.
    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.apply(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.mapv_inplace(|v| v * scale);
    }

    fn apply(&self, data: &mut Array2<Complex64>, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.dim(), (self.rows, self.cols), "fft shape mismatch");
        if !data.is_standard_layout() {
            *data = data.as_standard_layout().into_owned();
        }
        let flat = data.as_slice_mut().expect("standard layout");
        row.process(flat);
        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for (r, v) in column.iter_mut().enumerate() {
                *v = flat[r * self.cols + c];
            }
            col.process(&mut column);
            for (r, v) in column.iter().enumerate() {
                flat[r * self.cols + c] = *v;
            }
        }
    }
}

/// Swap quadrants so that the zero-frequency sample moves to index (rows/2, cols/2).
pub fn fftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (rows, cols) = a.dim();
    let mut out = a.clone();
    for r in 0..rows {
        for c in 0..cols {
            out[[(r + rows / 2) % rows, (c + cols / 2) % cols]] = a[[r, c]].clone();
        }
    }
    out
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (rows, cols) = a.dim();
    let mut out = a.clone();
    for r in 0..rows {
        for c in 0..cols {
            out[[r, c]] = a[[(r + rows / 2) % rows, (c + cols / 2) % cols]].clone();
        }
    }
    out
}

/// Real-input 2D transform. Spectra keep the `cols / 2 + 1` non-negative
/// column frequencies and are stored transposed, `[col_freq][row_freq]`.
#[derive(Clone)]
pub struct RealFft2 {
    rows: usize,
    cols: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealFft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RealFft2({}x{})", self.rows, self.cols)
    }
}

impl RealFft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut real = RealFftPlanner::<f64>::new();
        let mut planner = FftPlanner::new();
        RealFft2 {
            rows,
            cols,
            r2c: real.plan_fft_forward(cols),
            c2r: real.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    /// Shape of the stored (transposed) spectrum.
    pub fn spectrum_shape(&self) -> (usize, usize) {
        (self.cols / 2 + 1, self.rows)
    }

    /// Unnormalized forward transform of a `rows x cols` real array.
    pub fn forward(&self, data: ArrayView2<f64>) -> Array2<Complex64> {
        assert_eq!(data.dim(), (self.rows, self.cols), "fft shape mismatch");
        let (nk, nr) = self.spectrum_shape();
        let mut out = Array2::<Complex64>::zeros((nk, nr));
        let mut row = self.r2c.make_input_vec();
        let mut half = self.r2c.make_output_vec();
        for (r, src) in data.outer_iter().enumerate() {
            row.iter_mut().zip(src.iter()).for_each(|(d, s)| *d = *s);
            self.r2c.process(&mut row, &mut half).expect("real fft lengths");
            for (k, v) in half.iter().enumerate() {
                out[[k, r]] = *v;
            }
        }
        self.col_fwd.process(out.as_slice_mut().expect("standard layout"));
        out
    }

    /// Inverse transform including the 1/(rows*cols) factor.
    pub fn inverse(&self, mut spectrum: Array2<Complex64>) -> Array2<f64> {
        assert_eq!(spectrum.dim(), self.spectrum_shape(), "fft shape mismatch");
        if !spectrum.is_standard_layout() {
            spectrum = spectrum.as_standard_layout().into_owned();
        }
        self.col_inv.process(spectrum.as_slice_mut().expect("standard layout"));
        let (nk, _) = self.spectrum_shape();
        let scale = 1.0 / (self.rows * self.cols) as f64;
        let mut out = Array2::<f64>::zeros((self.rows, self.cols));
        let mut half = self.c2r.make_input_vec();
        let mut row = self.c2r.make_output_vec();
        for (r, mut dst) in out.outer_iter_mut().enumerate() {
            for (k, v) in half.iter_mut().enumerate() {
                *v = spectrum[[k, r]];
            }
            half[0].im = 0.0;
            if self.cols % 2 == 0 {
                half[nk - 1].im = 0.0;
            }
            self.c2r.process(&mut half, &mut row).expect("real fft lengths");
            dst.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = s * scale);
        }
        out
    }
}

/// Frequency-domain plan for "same"-size linear convolution of images of shape
/// `image` with kernels of shape `kernel` whose origin sits at (kh/2, kw/2).
#[derive(Debug, Clone)]
pub struct ConvPlan {
    pub image: (usize, usize),
    pub kernel: (usize, usize),
    pub padded: (usize, usize),
    fft: RealFft2,
}

impl ConvPlan {
    pub fn new(image: (usize, usize), kernel: (usize, usize)) -> Self {
        let padded = (
            good_size(image.0 + kernel.0 - 1),
            good_size(image.1 + kernel.1 - 1),
        );
        ConvPlan { image, kernel, padded, fft: RealFft2::new(padded.0, padded.1) }
    }

    /// Shape of the spectra returned by this plan.
    pub fn spectrum_shape(&self) -> (usize, usize) {
        self.fft.spectrum_shape()
    }

    /// Transfer function of a kernel (zero padded, origin moved to index 0).
    pub fn kernel_spectrum(&self, kernel: ArrayView2<f64>) -> Array2<Complex64> {
        let (kh, kw) = kernel.dim();
        let (ph, pw) = self.padded;
        let mut buf = Array2::<f64>::zeros((ph, pw));
        let (cy, cx) = (kh / 2, kw / 2);
        for ((r, c), v) in kernel.indexed_iter() {
            buf[[(r + ph - cy) % ph, (c + pw - cx) % pw]] = *v;
        }
        self.fft.forward(buf.view())
    }

    pub fn image_spectrum(&self, image: ArrayView2<f64>) -> Array2<Complex64> {
        let mut buf = Array2::<f64>::zeros(self.padded);
        buf.slice_mut(s![..image.nrows(), ..image.ncols()]).assign(&image);
        self.fft.forward(buf.view())
    }

    /// Inverse transform a spectrum and keep the top-left `image`-sized block.
    pub fn to_image(&self, spectrum: Array2<Complex64>) -> Array2<f64> {
        self.fft.inverse(spectrum).slice(s![..self.image.0, ..self.image.1]).to_owned()
    }

    pub fn convolve(&self, image: ArrayView2<f64>, kernel: ArrayView2<f64>) -> Array2<f64> {
        let mut spec = self.image_spectrum(image);
        spec *= &self.kernel_spectrum(kernel);
        self.to_image(spec)
    }

    /// Adjoint of [`ConvPlan::convolve`] with respect to the image argument.
    pub fn correlate(&self, image: ArrayView2<f64>, kernel: ArrayView2<f64>) -> Array2<f64> {
        let mut spec = self.image_spectrum(image);
        let k = self.kernel_spectrum(kernel);
        spec.zip_mut_with(&k, |a, b| *a *= b.conj());
        self.to_image(spec)
    }

}

/// Smallest 2^a 3^b 5^c not below `n`.
pub fn good_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn direct_same(image: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
        let (h, w) = image.dim();
        let (kh, kw) = kernel.dim();
        let mut out = Array2::zeros((h, w));
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for ky in 0..kh as isize {
                    for kx in 0..kw as isize {
                        let sy = y - (ky - kh as isize / 2);
                        let sx = x - (kx - kw as isize / 2);
                        if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                            acc += kernel[[ky as usize, kx as usize]] * image[[sy as usize, sx as usize]];
                        }
                    }
                }
                out[[y as usize, x as usize]] = acc;
            }
        }
        out
    }

    #[test]
    fn fft_roundtrip() {
        let plan = Fft2::new(6, 10);
        let orig = Array2::from_shape_fn((6, 10), |(r, c)| Complex64::new(r as f64 - c as f64 * 0.3, (r * c) as f64));
        let mut a = orig.clone();
        plan.forward(&mut a);
        plan.inverse(&mut a);
        for (x, y) in a.iter().zip(orig.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn real_fft_matches_complex() {
        for (rows, cols) in [(6, 10), (5, 9)] {
            let real = Array2::from_shape_fn((rows, cols), |(r, c)| (r as f64 * 1.3 - c as f64).sin());
            let plan = RealFft2::new(rows, cols);
            let half = plan.forward(real.view());
            let mut full = real.mapv(|v| Complex64::new(v, 0.0));
            Fft2::new(rows, cols).forward(&mut full);
            for ((k, r), v) in half.indexed_iter() {
                assert!((v - full[[r, k]]).norm() < 1e-10);
            }
            let back = plan.inverse(half);
            for (a, b) in back.iter().zip(real.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_inverse() {
        let a = Array2::from_shape_fn((5, 4), |(r, c)| r * 10 + c);
        assert_eq!(ifftshift(&fftshift(&a)), a);
        assert_eq!(fftshift(&a)[[2, 2]], 0);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let image = Array2::from_shape_fn((9, 7), |(r, c)| ((r * 7 + c) % 5) as f64 - 1.0);
        let kernel = Array2::from_shape_fn((4, 5), |(r, c)| (r + 2 * c) as f64 * 0.1);
        let plan = ConvPlan::new((9, 7), (4, 5));
        let fast = plan.convolve(image.view(), kernel.view());
        let slow = direct_same(&image, &kernel);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn good_sizes() {
        assert_eq!(good_size(7), 8);
        assert_eq!(good_size(97), 100);
        assert_eq!(good_size(128), 128);
    }
}
