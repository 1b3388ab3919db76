//! Image container and finite-difference calculus.
//!
//! Pixels are stored row-major. The first derivative component always refers to
//! the vertical axis (rows) and the second to the horizontal axis (columns).

use crate::error::{Error, Result};

/// Default floor applied before taking logarithms.
pub const DEFAULT_LOG_FLOOR: f64 = 1e-4;

/// A single-channel real-valued image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Boundary handling for finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Wrap around; the setting under which every operator is diagonal in the
    /// discrete Fourier basis.
    Periodic,
    /// Replicate the edge pixel, so the forward difference vanishes on the last
    /// row/column (Neumann).
    Symmetric,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidDimensions(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite pixel at index {i}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Zero image. Panics on zero dimensions.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds an image from a function of `(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    /// Reads with row/column indices wrapped onto the grid.
    #[inline]
    pub fn get_wrapped(&self, row: isize, col: isize) -> f64 {
        let r = row.rem_euclid(self.height as isize) as usize;
        let c = col.rem_euclid(self.width as isize) as usize;
        self.get(r, c)
    }

    /// Reads with row/column indices clamped to the grid.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two images of identical shape.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert!(self.same_shape(other), "zip_map on mismatched shapes");
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn dot(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "dot on mismatched shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &Image, scale: f64) {
        assert!(self.same_shape(other), "add_scaled on mismatched shapes");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Copies a `size x size` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, w: usize, h: usize) -> Image {
        assert!(row + h <= self.height && col + w <= self.width, "crop out of bounds");
        Image::from_fn(w, h, |r, c| self.get(row + r, col + c))
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Pixelwise `ln(max(v, floor))`.
pub fn to_log(img: &Image, floor: f64) -> Result<Image> {
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "log floor must be positive, got {floor}"
        )));
    }
    Ok(img.map(|v| v.max(floor).ln()))
}

/// Pixelwise `exp`, clamped to `[0, 1]`.
pub fn from_log(img: &Image) -> Image {
    img.map(|v| v.exp().clamp(0.0, 1.0))
}

/// Forward differences `(D1 f, D2 f)`: vertical then horizontal component.
pub fn gradient(img: &Image, boundary: Boundary) -> (Image, Image) {
    let (w, h) = (img.width(), img.height());
    let mut gv = Image::zeros(w, h);
    let mut gh = Image::zeros(w, h);
    for r in 0..h {
        for c in 0..w {
            let v = img.get(r, c);
            let (down, right) = match boundary {
                Boundary::Periodic => (img.get((r + 1) % h, c), img.get(r, (c + 1) % w)),
                Boundary::Symmetric => (
                    img.get((r + 1).min(h - 1), c),
                    img.get(r, (c + 1).min(w - 1)),
                ),
            };
            gv.set(r, c, down - v);
            gh.set(r, c, right - v);
        }
    }
    (gv, gh)
}

/// Negative adjoint of [`gradient`] under the same boundary.
pub fn divergence(vv: &Image, vh: &Image, boundary: Boundary) -> Result<Image> {
    vv.check_same_shape(vh, "divergence components")?;
    let (w, h) = (vv.width(), vv.height());
    let mut out = Image::zeros(w, h);
    for r in 0..h {
        for c in 0..w {
            let d = match boundary {
                Boundary::Periodic => {
                    let up = (r + h - 1) % h;
                    let left = (c + w - 1) % w;
                    (vv.get(r, c) - vv.get(up, c)) + (vh.get(r, c) - vh.get(r, left))
                }
                Boundary::Symmetric => {
                    let mut d = 0.0;
                    if r + 1 < h {
                        d += vv.get(r, c);
                    }
                    if r > 0 {
                        d -= vv.get(r - 1, c);
                    }
                    if c + 1 < w {
                        d += vh.get(r, c);
                    }
                    if c > 0 {
                        d -= vh.get(r, c - 1);
                    }
                    d
                }
            };
            out.set(r, c, d);
        }
    }
    Ok(out)
}

/// Five-point Laplacian `[0 1 0; 1 -4 1; 0 1 0]` with edge replication.
pub fn laplacian(img: &Image) -> Image {
    laplacian_with(img, Boundary::Symmetric)
}

/// Five-point Laplacian under an explicit boundary. Equals `div(grad f)` for
/// either boundary mode.
pub fn laplacian_with(img: &Image, boundary: Boundary) -> Image {
    let fetch = |r: isize, c: isize| match boundary {
        Boundary::Periodic => img.get_wrapped(r, c),
        Boundary::Symmetric => img.get_clamped(r, c),
    };
    Image::from_fn(img.width(), img.height(), |r, c| {
        let (r, c) = (r as isize, c as isize);
        fetch(r - 1, c) + fetch(r + 1, c) + fetch(r, c - 1) + fetch(r, c + 1) - 4.0 * fetch(r, c)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pseudo_random(w: usize, h: usize, seed: u64) -> Image {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Image::from_fn(w, h, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn log_of_constants() {
        let l = to_log(&Image::filled(3, 2, 0.5), DEFAULT_LOG_FLOOR).unwrap();
        assert!(l.data().iter().all(|&v| (v - 0.5f64.ln()).abs() < 1e-15));
        assert!((0.5f64.ln() + 0.6931).abs() < 1e-4);
        let l = to_log(&Image::filled(3, 2, 1.0), DEFAULT_LOG_FLOOR).unwrap();
        assert!(l.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_floor_guards_zero() {
        let l = to_log(&Image::filled(1, 1, 0.0), 1e-4).unwrap();
        assert!((l.get(0, 0) - (-9.2103)).abs() < 1e-4);
        assert!(to_log(&Image::filled(1, 1, 0.0), 0.0).is_err());
    }

    #[test]
    fn from_log_inverts_and_clamps() {
        let back = from_log(&Image::filled(2, 2, 0.5f64.ln()));
        assert!((back.get(1, 1) - 0.5).abs() < 1e-15);
        assert_eq!(from_log(&Image::filled(1, 1, 0.1)).get(0, 0), 1.0);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Image::new(0, 3, vec![]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        for b in [Boundary::Periodic, Boundary::Symmetric] {
            let (gv, gh) = gradient(&Image::filled(5, 4, 0.3), b);
            assert_eq!(gv.max_abs_diff(&Image::zeros(5, 4)), 0.0);
            assert_eq!(gh.max_abs_diff(&Image::zeros(5, 4)), 0.0);
        }
    }

    #[test]
    fn gradient_of_ramp() {
        let w = 8;
        let ramp = Image::from_fn(w, 3, |_, c| c as f64 / w as f64);
        let (gv, gh) = gradient(&ramp, Boundary::Periodic);
        assert_eq!(gv.norm(), 0.0);
        for r in 0..3 {
            for c in 0..w - 1 {
                assert!((gh.get(r, c) - 1.0 / w as f64).abs() < 1e-15);
            }
            assert!((gh.get(r, w - 1) + (w - 1) as f64 / w as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_field_has_zero_divergence() {
        let z = Image::zeros(4, 3);
        for b in [Boundary::Periodic, Boundary::Symmetric] {
            assert_eq!(divergence(&z, &z, b).unwrap().norm(), 0.0);
        }
        assert!(divergence(&z, &Image::zeros(3, 4), Boundary::Periodic).is_err());
    }

    #[test]
    fn divergence_of_gradient_is_laplacian() {
        let f = pseudo_random(9, 7, 3);
        for b in [Boundary::Periodic, Boundary::Symmetric] {
            let (gv, gh) = gradient(&f, b);
            let dg = divergence(&gv, &gh, b).unwrap();
            assert!(dg.max_abs_diff(&laplacian_with(&f, b)) < 1e-12);
        }
    }

    #[test]
    fn laplacian_stencil() {
        assert_eq!(laplacian(&Image::filled(5, 5, 2.0)).norm(), 0.0);
        let mut imp = Image::zeros(5, 5);
        imp.set(2, 2, 1.0);
        let l = laplacian(&imp);
        let expect = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
        for r in 0..5 {
            for c in 0..5 {
                let e = if (1..4).contains(&r) && (1..4).contains(&c) {
                    expect[r - 1][c - 1]
                } else {
                    0.0
                };
                assert_eq!(l.get(r, c), e);
            }
        }
    }

    proptest! {
        #[test]
        fn gradient_divergence_adjoint(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let f = pseudo_random(w, h, seed);
            let qv = pseudo_random(w, h, seed ^ 0x55);
            let qh = pseudo_random(w, h, seed ^ 0xaa);
            for b in [Boundary::Periodic, Boundary::Symmetric] {
                let (gv, gh) = gradient(&f, b);
                let lhs = gv.dot(&qv) + gh.dot(&qh);
                let rhs = -f.dot(&divergence(&qv, &qh, b).unwrap());
                let scale = f.norm() * (qv.norm_sq() + qh.norm_sq()).sqrt();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1.0));
            }
        }

        #[test]
        fn laplacian_sums_to_zero(w in 1usize..10, h in 1usize..10, seed in any::<u64>()) {
            let f = pseudo_random(w, h, seed);
            for b in [Boundary::Periodic, Boundary::Symmetric] {
                prop_assert!(laplacian_with(&f, b).sum().abs() < 1e-10);
            }
        }

        #[test]
        fn log_round_trip(v in 1e-4f64..=1.0) {
            let img = Image::filled(1, 1, v);
            let back = from_log(&to_log(&img, 1e-4).unwrap());
            prop_assert!((back.get(0, 0) - v).abs() <= 1e-12);
        }
    }
}
