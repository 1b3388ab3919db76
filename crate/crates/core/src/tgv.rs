//! Structure-adaptive second-order total generalized variation.
//!
//! The structure tensor is written in `(x, y)` order, horizontal first, so a
//! horizontal ramp has tensor `∝ [[1, 0], [0, 0]]`. Difference operators keep
//! the crate-wide order: `D1` vertical, `D2` horizontal.

use crate::error::{Error, Result};
use crate::image::{divergence, gradient, Boundary, Image};

pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_CHI: f64 = 0.025;

/// Per-pixel eigen-analysis of the smoothed structure tensor.
#[derive(Debug, Clone)]
pub struct StructureTensorField {
    pub sigma: f64,
    /// Normalized so the largest value over the image is (almost) 1.
    pub lambda_plus: Image,
    pub lambda_minus: Image,
    /// Unit eigenvectors `(x, y)` for `lambda_plus`; `v₋` is the rotation by +90°.
    pub v_plus: Vec<(f64, f64)>,
}

impl StructureTensorField {
    pub fn v_minus(&self, i: usize) -> (f64, f64) {
        let (x, y) = self.v_plus[i];
        (-y, x)
    }
}

/// Eigen-decomposition of `[[a, b], [b, c]]` as `(λ₊, λ₋, v₊)`, `λ₊ ≥ λ₋`.
pub fn eigen_sym2(a: f64, b: f64, c: f64) -> (f64, f64, (f64, f64)) {
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    (mean + rad, mean - rad, (theta.cos(), theta.sin()))
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable normalized Gaussian with edge replication.
pub fn gaussian_smooth(img: &Image, sigma: f64) -> Image {
    let g = gaussian_taps(sigma);
    let r = (g.len() / 2) as isize;
    let rows = Image::from_fn(img.width(), img.height(), |row, col| {
        g.iter()
            .enumerate()
            .map(|(k, w)| w * img.get_clamped(row as isize, col as isize + k as isize - r))
            .sum()
    });
    Image::from_fn(img.width(), img.height(), |row, col| {
        g.iter()
            .enumerate()
            .map(|(k, w)| w * rows.get_clamped(row as isize + k as isize - r, col as isize))
            .sum()
    })
}

/// Smoothed structure tensor, eigen-decomposed and normalized by the image maximum of `λ₊`.
pub fn structure_tensor(img: &Image, sigma: f64) -> Result<StructureTensorField> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "structure tensor sigma must be positive, got {sigma}"
        )));
    }
    let (fy, fx) = gradient(img, Boundary::Symmetric);
    let txx = gaussian_smooth(&fx.zip_map(&fx, |a, b| a * b), sigma);
    let txy = gaussian_smooth(&fx.zip_map(&fy, |a, b| a * b), sigma);
    let tyy = gaussian_smooth(&fy.zip_map(&fy, |a, b| a * b), sigma);
    let n = img.len();
    let mut lp = Vec::with_capacity(n);
    let mut lm = Vec::with_capacity(n);
    let mut vp = Vec::with_capacity(n);
    for i in 0..n {
        let (l1, l2, v) = eigen_sym2(txx.data()[i], txy.data()[i], tyy.data()[i]);
        lp.push(l1.max(0.0));
        lm.push(l2.max(0.0));
        vp.push(v);
    }
    let scale = 1.0 / (lp.iter().cloned().fold(0.0, f64::max) + 1e-12);
    let (w, h) = (img.width(), img.height());
    Ok(StructureTensorField {
        sigma,
        lambda_plus: Image::new(w, h, lp.into_iter().map(|v| v * scale).collect())?,
        lambda_minus: Image::new(w, h, lm.into_iter().map(|v| v * scale).collect())?,
        v_plus: vp,
    })
}

/// Anisotropy indicator `E = (λ₊ − λ₋)/(χ + λ₊ + λ₋)` clamped to `[0, 1]`.
pub fn indicator_value(lambda_plus: f64, lambda_minus: f64, chi: f64) -> f64 {
    ((lambda_plus - lambda_minus) / (chi + lambda_plus + lambda_minus)).clamp(0.0, 1.0)
}

pub fn indicator(field: &StructureTensorField, chi: f64) -> Result<Image> {
    if !(chi > 0.0) {
        return Err(Error::InvalidParameter(format!("chi must be positive, got {chi}")));
    }
    Ok(field
        .lambda_plus
        .zip_map(&field.lambda_minus, |a, b| indicator_value(a, b, chi)))
}

/// Upper (`max`) and lower (`min`) weights for both TGV orders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TgvBounds {
    pub alpha0_max: f64,
    pub alpha0_min: f64,
    pub alpha1_max: f64,
    pub alpha1_min: f64,
}

impl Default for TgvBounds {
    fn default() -> Self {
        Self {
            alpha0_max: 0.01,
            alpha0_min: 0.001,
            alpha1_max: 0.01,
            alpha1_min: 0.001,
        }
    }
}

impl TgvBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo > 0.0 && lo <= hi && hi.is_finite();
        if !ok(self.alpha0_min, self.alpha0_max) || !ok(self.alpha1_min, self.alpha1_max) {
            return Err(Error::InvalidParameter(format!(
                "TGV bounds need 0 < min <= max, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-pixel TGV weights.
#[derive(Debug, Clone)]
pub struct AdaptiveWeights {
    pub alpha0: Image,
    pub alpha1: Image,
    pub bounds: TgvBounds,
}

impl AdaptiveWeights {
    /// Spatially constant weights.
    pub fn uniform(width: usize, height: usize, alpha0: f64, alpha1: f64) -> Self {
        Self {
            alpha0: Image::filled(width, height, alpha0),
            alpha1: Image::filled(width, height, alpha1),
            bounds: TgvBounds {
                alpha0_max: alpha0,
                alpha0_min: alpha0,
                alpha1_max: alpha1,
                alpha1_min: alpha1,
            },
        }
    }

    pub fn mean_alpha0(&self) -> f64 {
        self.alpha0.mean()
    }

    pub fn mean_alpha1(&self) -> f64 {
        self.alpha1.mean()
    }
}

/// `α_i = E·α̲_i + (1 − E)·ᾱ_i`.
pub fn adaptive_weights(e: &Image, bounds: TgvBounds) -> Result<AdaptiveWeights> {
    bounds.validate()?;
    let mix = |lo: f64, hi: f64| e.map(|v| v * lo + (1.0 - v) * hi);
    Ok(AdaptiveWeights {
        alpha0: mix(bounds.alpha0_min, bounds.alpha0_max),
        alpha1: mix(bounds.alpha1_min, bounds.alpha1_max),
        bounds,
    })
}

/// Structure tensor, indicator and weights in one call.
pub fn weights_for_image(img: &Image, sigma: f64, chi: f64, bounds: TgvBounds) -> Result<AdaptiveWeights> {
    let field = structure_tensor(img, sigma)?;
    adaptive_weights(&indicator(&field, chi)?, bounds)
}

/// The auxiliary field `p = (p₁, p₂)` approximating `∇f`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub p1: Image,
    pub p2: Image,
}

impl VectorField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            p1: Image::zeros(width, height),
            p2: Image::zeros(width, height),
        }
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        self.p1.dot(&other.p1) + self.p2.dot(&other.p2)
    }
}

/// Symmetric 2×2 tensor field; the off-diagonal entry counts twice in norms.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    pub e11: Image,
    pub e12: Image,
    pub e22: Image,
}

impl SymTensorField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            e11: Image::zeros(width, height),
            e12: Image::zeros(width, height),
            e22: Image::zeros(width, height),
        }
    }

    pub fn dot(&self, other: &SymTensorField) -> f64 {
        self.e11.dot(&other.e11) + 2.0 * self.e12.dot(&other.e12) + self.e22.dot(&other.e22)
    }
}

/// Symmetrized derivative `ε(p)`.
pub fn epsilon_op(p: &VectorField, boundary: Boundary) -> SymTensorField {
    let (d1p1, d2p1) = gradient(&p.p1, boundary);
    let (d1p2, d2p2) = gradient(&p.p2, boundary);
    SymTensorField {
        e11: d1p1,
        e12: d2p1.zip_map(&d1p2, |a, b| 0.5 * (a + b)),
        e22: d2p2,
    }
}

/// Adjoint of [`epsilon_op`] under [`SymTensorField::dot`].
pub fn epsilon_adjoint(v: &SymTensorField, boundary: Boundary) -> VectorField {
    let p1 = divergence(&v.e11, &v.e12, boundary).expect("tensor components share a shape");
    let p2 = divergence(&v.e12, &v.e22, boundary).expect("tensor components share a shape");
    VectorField {
        p1: p1.map(|x| -x),
        p2: p2.map(|x| -x),
    }
}

/// `Σ α₁‖∇f − p‖₁ + Σ α₀‖ε(p)‖₁` with entrywise absolute sums.
pub fn tgv2_value(f: &Image, p: &VectorField, w: &AdaptiveWeights, boundary: Boundary) -> Result<f64> {
    f.check_same_shape(&p.p1, "p1")?;
    f.check_same_shape(&p.p2, "p2")?;
    f.check_same_shape(&w.alpha0, "alpha0")?;
    f.check_same_shape(&w.alpha1, "alpha1")?;
    let (g1, g2) = gradient(f, boundary);
    let e = epsilon_op(p, boundary);
    let mut total = 0.0;
    for i in 0..f.len() {
        let first = (g1.data()[i] - p.p1.data()[i]).abs() + (g2.data()[i] - p.p2.data()[i]).abs();
        let second = e.e11.data()[i].abs() + 2.0 * e.e12.data()[i].abs() + e.e22.data()[i].abs();
        total += w.alpha1.data()[i] * first + w.alpha0.data()[i] * second;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_zero_tensor() {
        let f = structure_tensor(&Image::filled(12, 9, 0.4), 1.0).unwrap();
        assert_eq!(f.lambda_plus.max(), 0.0);
        assert_eq!(f.lambda_minus.max(), 0.0);
        assert!(structure_tensor(&Image::zeros(4, 4), 0.0).is_err());
    }

    #[test]
    fn horizontal_ramp_tensor() {
        let w = 24;
        let f = structure_tensor(&Image::from_fn(w, 16, |_, c| c as f64 / w as f64), 1.0).unwrap();
        for r in 5..11 {
            for c in 5..18 {
                let i = r * w + c;
                assert!(f.lambda_minus.data()[i].abs() < 1e-12);
                assert!((f.lambda_plus.data()[i] - 1.0).abs() < 1e-9);
                let (x, y) = f.v_plus[i];
                assert!((x.abs() - 1.0).abs() < 1e-12 && y.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigenvectors_are_orthonormal() {
        for (a, b, c) in [(1.0, 0.3, 0.2), (0.0, 0.0, 0.0), (0.1, -0.4, 2.0), (3.0, 0.0, 3.0)] {
            let (lp, lm, v) = eigen_sym2(a, b, c);
            assert!(lp >= lm);
            assert!((v.0 * v.0 + v.1 * v.1 - 1.0).abs() < 1e-12);
            // T v = λ v
            assert!((a * v.0 + b * v.1 - lp * v.0).abs() < 1e-12);
            assert!((b * v.0 + c * v.1 - lp * v.1).abs() < 1e-12);
        }
    }

    #[test]
    fn indicator_endpoints() {
        assert_eq!(indicator_value(0.0, 0.0, DEFAULT_CHI), 0.0);
        assert!((indicator_value(1.0, 0.0, 0.025) - 1.0 / 1.025).abs() < 1e-15);
        assert_eq!(indicator_value(1.0, 1.0, 0.025), 0.0);
    }

    #[test]
    fn weight_interpolation() {
        let b = TgvBounds::default();
        let e = Image::new(3, 1, vec![0.0, 1.0, 0.5]).unwrap();
        let w = adaptive_weights(&e, b).unwrap();
        assert_eq!(w.alpha0.data()[0], 0.01);
        assert_eq!(w.alpha1.data()[1], 0.001);
        assert!((w.alpha0.data()[2] - 0.0055).abs() < 1e-15);
        let bad = TgvBounds { alpha0_min: 0.02, ..b };
        assert!(adaptive_weights(&e, bad).is_err());
    }

    #[test]
    fn epsilon_of_constant_is_zero() {
        let p = VectorField {
            p1: Image::filled(6, 5, 0.3),
            p2: Image::filled(6, 5, -1.0),
        };
        for b in [Boundary::Periodic, Boundary::Symmetric] {
            let e = epsilon_op(&p, b);
            assert_eq!(e.dot(&e), 0.0);
            assert_eq!(epsilon_op(&VectorField::zeros(6, 5), b).dot(&e), 0.0);
            let z = epsilon_adjoint(&SymTensorField::zeros(6, 5), b);
            assert_eq!(z.dot(&z), 0.0);
        }
    }

    #[test]
    fn tgv_of_constant_is_zero() {
        let f = Image::filled(8, 8, 0.7);
        let w = AdaptiveWeights::uniform(8, 8, 0.01, 0.01);
        assert_eq!(tgv2_value(&f, &VectorField::zeros(8, 8), &w, Boundary::Periodic).unwrap(), 0.0);
    }
}
