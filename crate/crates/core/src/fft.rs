//! Two-dimensional FFTs and circular convolution.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernel::BlurKernel;

/// Planned forward/inverse 2-D transforms for one grid size.
#[derive(Clone)]
pub struct Fft2 {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform of a real grid.
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    pub fn forward_image(&self, img: &Image) -> Vec<Complex64> {
        debug_assert_eq!(img.width(), self.width);
        debug_assert_eq!(img.height(), self.height);
        self.forward_real(img.data())
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_fwd, &self.col_fwd);
    }

    /// In-place inverse transform, scaled so that `inverse(forward(x)) == x`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_inv, &self.col_inv);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut buf);
        buf.into_iter().map(|v| v.re).collect()
    }

    pub fn inverse_image(&self, buf: Vec<Complex64>) -> Image {
        Image::new(self.width, self.height, self.inverse_real(buf))
            .expect("inverse transform of finite data is finite")
    }

    fn transform(&self, buf: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(buf.len(), self.len(), "buffer does not match the planned grid");
        let (w, h) = (self.width, self.height);
        rows.process(buf);
        if h > 1 {
            let mut col = vec![Complex64::new(0.0, 0.0); h];
            for c in 0..w {
                for r in 0..h {
                    col[r] = buf[r * w + c];
                }
                cols.process(&mut col);
                for r in 0..h {
                    buf[r * w + c] = col[r];
                }
            }
        }
    }

    /// Transfer function of the kernel, centered at the origin.
    pub fn kernel_otf(&self, k: &BlurKernel) -> Result<Vec<Complex64>> {
        Ok(self.forward_real(&k.embed(self.width, self.height)?))
    }

    /// Transfer functions of the forward differences `(D1, D2)`.
    pub fn difference_symbols(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        let (w, h) = (self.width, self.height);
        let mut d1 = Vec::with_capacity(w * h);
        let mut d2 = Vec::with_capacity(w * h);
        for r in 0..h {
            let ev = Complex64::from_polar(1.0, 2.0 * PI * r as f64 / h as f64) - 1.0;
            for c in 0..w {
                let eh = Complex64::from_polar(1.0, 2.0 * PI * c as f64 / w as f64) - 1.0;
                d1.push(ev);
                d2.push(eh);
            }
        }
        (d1, d2)
    }
}

/// Circular convolution with the kernel anchored at its center.
pub fn convolve_fft(img: &Image, k: &BlurKernel) -> Result<Image> {
    if k.size() > img.width().min(img.height()) {
        return Err(Error::InvalidKernel(format!(
            "kernel of size {} exceeds image {}x{}",
            k.size(),
            img.width(),
            img.height()
        )));
    }
    let fft = Fft2::new(img.width(), img.height());
    let otf = fft.kernel_otf(k)?;
    let mut spec = fft.forward_image(img);
    spec.iter_mut().zip(&otf).for_each(|(s, o)| *s *= o);
    Ok(fft.inverse_image(spec))
}

/// Circular correlation with the kernel (the adjoint of [`convolve_fft`]).
pub fn correlate_fft(img: &Image, k: &BlurKernel) -> Result<Image> {
    convolve_fft(img, &k.flipped())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lcg_image(w: usize, h: usize, seed: u64) -> Image {
        let mut s = seed | 1;
        Image::from_fn(w, h, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    fn lcg_kernel(size: usize, seed: u64) -> BlurKernel {
        let img = lcg_image(size, size, seed);
        BlurKernel::project(size, img.data()).unwrap()
    }

    fn spatial_circular(img: &Image, k: &BlurKernel) -> Image {
        let r = k.radius() as isize;
        Image::from_fn(img.width(), img.height(), |y, x| {
            let mut acc = 0.0;
            for a in -r..=r {
                for b in -r..=r {
                    acc += k.offset(a, b) * img.get_wrapped(y as isize - a, x as isize - b);
                }
            }
            acc
        })
    }

    #[test]
    fn identity_and_delta_kernels_preserve_input() {
        let img = lcg_image(7, 5, 9);
        let out = convolve_fft(&img, &BlurKernel::identity()).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-14);
        let out = convolve_fft(&img, &BlurKernel::delta(3)).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-14);
    }

    #[test]
    fn matches_spatial_oracle_8x8() {
        let img = lcg_image(8, 8, 42);
        let k = lcg_kernel(3, 7);
        let fast = convolve_fft(&img, &k).unwrap();
        assert!(fast.max_abs_diff(&spatial_circular(&img, &k)) < 1e-10);
    }

    #[test]
    fn rejects_oversized_kernel() {
        assert!(convolve_fft(&Image::zeros(4, 8), &BlurKernel::delta(5)).is_err());
    }

    #[test]
    fn correlation_is_adjoint_of_convolution() {
        let f = lcg_image(9, 6, 1);
        let g = lcg_image(9, 6, 2);
        let k = lcg_kernel(5, 3);
        let lhs = convolve_fft(&f, &k).unwrap().dot(&g);
        let rhs = f.dot(&correlate_fft(&g, &k).unwrap());
        assert!((lhs - rhs).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn frequency_and_spatial_paths_agree(w in 1usize..=16, h in 1usize..=16, ks in 0usize..3, seed in any::<u64>()) {
            let size = (2 * ks + 1).min(if w.min(h) % 2 == 0 { w.min(h) - 1 } else { w.min(h) });
            let img = lcg_image(w, h, seed);
            let k = lcg_kernel(size, seed ^ 0xfeed);
            let fast = convolve_fft(&img, &k).unwrap();
            prop_assert!(fast.max_abs_diff(&spatial_circular(&img, &k)) < 1e-10);
        }

        #[test]
        fn convolution_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let f = lcg_image(6, 6, seed);
            let g = lcg_image(6, 6, seed.wrapping_add(1));
            let k = lcg_kernel(3, seed ^ 3);
            let combo = f.zip_map(&g, |x, y| a * x + b * y);
            let lhs = convolve_fft(&combo, &k).unwrap();
            let cf = convolve_fft(&f, &k).unwrap();
            let cg = convolve_fft(&g, &k).unwrap();
            let rhs = cf.zip_map(&cg, |x, y| a * x + b * y);
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }
    }
}
