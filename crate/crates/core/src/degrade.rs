//! Synthetic degradations and image quality metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fft::convolve_fft;
use crate::image::Image;
use crate::kernel::BlurKernel;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Shape of a multiplicative lighting field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Illumination {
    None,
    /// Linear ramp from `min_level` at the left column to 1 at the right.
    Horizontal { min_level: f64 },
    /// Linear ramp from `min_level` at the top row to 1 at the bottom.
    Vertical { min_level: f64 },
    /// Gaussian bump, 1 at the center and `min_level` at the farthest corner.
    Gaussian { min_level: f64 },
}

impl Illumination {
    pub fn min_level(&self) -> Option<f64> {
        match *self {
            Illumination::None => None,
            Illumination::Horizontal { min_level }
            | Illumination::Vertical { min_level }
            | Illumination::Gaussian { min_level } => Some(min_level),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Illumination::None => "none",
            Illumination::Horizontal { .. } => "horizontal",
            Illumination::Vertical { .. } => "vertical",
            Illumination::Gaussian { .. } => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub kernel: BlurKernel,
    pub illumination: Illumination,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn identity() -> Self {
        Self {
            kernel: BlurKernel::identity(),
            illumination: Illumination::None,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.noise_sigma) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must lie in [0, 0.5), got {}",
                self.noise_sigma
            )));
        }
        if let Some(m) = self.illumination.min_level() {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "illumination minimum must lie in (0, 1), got {m}"
                )));
            }
        }
        Ok(())
    }
}

/// Anti-aliased straight motion path of `length` pixels at `angle_deg`
/// (counter-clockwise from the horizontal axis), centered in a
/// `size x size` support.
pub fn synth_motion_kernel(length: f64, angle_deg: f64, size: usize) -> Result<BlurKernel> {
    if !(length >= 1.0) {
        return Err(Error::InvalidParameter(format!("motion length must be >= 1, got {length}")));
    }
    if size % 2 == 0 {
        return Err(Error::InvalidKernel(format!("size must be odd, got {size}")));
    }
    if length > size as f64 {
        return Err(Error::InvalidKernel(format!(
            "motion length {length} exceeds support {size}"
        )));
    }
    let theta = angle_deg.to_radians();
    let half = (length - 1.0) / 2.0;
    let (dx, dy) = (theta.cos(), -theta.sin());
    rasterize_path(size, |t| (t * half * dy, t * half * dx), (length * 16.0).ceil() as usize)
}

/// Splats a path `t in [-1, 1] -> (row offset, col offset)` onto the support
/// with bilinear weights, sampling symmetrically about `t = 0`.
fn rasterize_path(
    size: usize,
    path: impl Fn(f64) -> (f64, f64),
    samples: usize,
) -> Result<BlurKernel> {
    let r = (size / 2) as f64;
    let mut raw = vec![0.0; size * size];
    let n = samples.max(1);
    for i in 0..=2 * n {
        let t = i as f64 / n as f64 - 1.0;
        let (py, px) = path(t);
        let (y, x) = (py + r, px + r);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1.0, fy)] {
            for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1.0, fx)] {
                let wgt = wy * wx;
                if wgt <= 1e-15 {
                    continue;
                }
                if yy < 0.0 || xx < 0.0 || yy >= size as f64 || xx >= size as f64 {
                    return Err(Error::InvalidKernel(format!(
                        "motion path leaves the {size}x{size} support"
                    )));
                }
                raw[yy as usize * size + xx as usize] += wgt;
            }
        }
    }
    BlurKernel::project(size, &raw)
}

/// Two-segment bent path: `length` pixels total, turning by `bend_deg` at
/// the midpoint. Used as the curved member of the stand-in suite.
pub fn synth_bent_kernel(length: f64, angle_deg: f64, bend_deg: f64, size: usize) -> Result<BlurKernel> {
    let half = (length - 1.0) / 2.0;
    let a = angle_deg.to_radians();
    let b = (angle_deg + bend_deg).to_radians();
    // Each arm spans half the length; the elbow sits at the support center.
    rasterize_path(
        size,
        |t| {
            let theta = if t < 0.0 { a } else { b };
            (t * half * -theta.sin(), t * half * theta.cos())
        },
        (length * 16.0).ceil() as usize,
    )
}

/// One labelled kernel of the evaluation suite.
#[derive(Debug, Clone)]
pub struct SuiteKernel {
    pub id: &'static str,
    pub kernel: BlurKernel,
}

/// Eight synthetic motion kernels standing in for an external benchmark set.
pub fn standin_kernels() -> Vec<SuiteKernel> {
    let line = |id, len: f64, ang, size| SuiteKernel {
        id,
        kernel: synth_motion_kernel(len, ang, size).expect("suite kernel fits its support"),
    };
    vec![
        line("len5_ang0", 5.0, 0.0, 5),
        line("len5_ang90", 5.0, 90.0, 5),
        line("len10_ang10", 10.0, 10.0, 11),
        line("len10_ang45", 10.0, 45.0, 11),
        line("len10_ang90", 10.0, 90.0, 11),
        line("len15_ang0", 15.0, 0.0, 15),
        line("len15_ang45", 15.0, 45.0, 15),
        SuiteKernel {
            id: "bent_len13",
            kernel: synth_bent_kernel(13.0, 20.0, 60.0, 13).expect("suite kernel fits its support"),
        },
    ]
}

/// Multiplicative lighting field with values in `[min_level, 1]`.
pub fn synth_illumination(kind: Illumination, width: usize, height: usize) -> Image {
    match kind {
        Illumination::None => Image::filled(width, height, 1.0),
        Illumination::Horizontal { min_level } => Image::from_fn(width, height, |_, c| {
            ramp(min_level, c, width)
        }),
        Illumination::Vertical { min_level } => Image::from_fn(width, height, |r, _| {
            ramp(min_level, r, height)
        }),
        Illumination::Gaussian { min_level } => {
            let cy = (height as f64 - 1.0) / 2.0;
            let cx = (width as f64 - 1.0) / 2.0;
            let dmax2 = cy * cy + cx * cx;
            Image::from_fn(width, height, |r, c| {
                if dmax2 == 0.0 {
                    return 1.0;
                }
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                (min_level.ln() * d2 / dmax2).exp().clamp(min_level, 1.0)
            })
        }
    }
}

fn ramp(min_level: f64, i: usize, n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    min_level + (1.0 - min_level) * i as f64 / (n - 1) as f64
}

/// `clamp(K * (truth . l) + n, 0, 1)`.
pub fn degrade(truth: &Image, spec: &DegradationSpec) -> Result<Image> {
    spec.validate()?;
    let lit = match spec.illumination {
        Illumination::None => truth.clone(),
        kind => {
            let light = synth_illumination(kind, truth.width(), truth.height());
            truth.zip_map(&light, |a, b| a * b)
        }
    };
    let mut blurred = if spec.kernel.size() == 1 {
        lit
    } else {
        convolve_fft(&lit, &spec.kernel)?
    };
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in blurred.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(blurred.clamp01())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "metric inputs")?;
    let ss: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(ss / a.len() as f64)
}

/// Peak signal-to-noise ratio for unit dynamic range, capped for identical
/// inputs.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the normalized Gaussian window.
fn filter_valid(data: &[f64], w: usize, h: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = g.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..n).map(|k| g[k] * data[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|k| g[k] * tmp[(r + k) * ow + c]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// `K1 = 0.01`, `K2 = 0.03` and unit dynamic range, over windows that fit
/// inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "metric inputs")?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidDimensions(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let g = gaussian_window();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    };
    let (mu_a, ..) = filter_valid(a.data(), w, h, &g);
    let (mu_b, ..) = filter_valid(b.data(), w, h, &g);
    let (aa, ..) = filter_valid(&prod(&|x, _| x * x), w, h, &g);
    let (bb, ..) = filter_valid(&prod(&|_, y| y * y), w, h, &g);
    let (ab, ..) = filter_valid(&prod(&|x, y| x * y), w, h, &g);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub error_ratio: Option<f64>,
}

pub fn metrics(truth: &Image, candidate: &Image) -> Result<MetricsReport> {
    Ok(MetricsReport {
        psnr: psnr(truth, candidate)?,
        ssim: ssim(truth, candidate)?,
        error_ratio: None,
    })
}

/// Kernel quality relative to the true kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRatio {
    /// `ssd_estimated / ssd_true`; 1 when both reconstructions are exact.
    pub ratio: f64,
    pub ssd_estimated: f64,
    pub ssd_true: f64,
    /// The true kernel reconstructs the truth exactly (`ssd_true < 1e-12`),
    /// so the ratio carries no information.
    pub exact_recovery: bool,
}

/// `SSD(deconv(K_true⊛truth, K_est), truth) / SSD(deconv(K_true⊛truth, K_true), truth)`
/// with the non-blind mode of the patch solver as the common reconstructor.
pub fn error_ratio(
    truth: &Image,
    k_est: &BlurKernel,
    k_true: &BlurKernel,
    nonblind: &crate::restore::RestoreConfig,
) -> Result<ErrorRatio> {
    let blurred = convolve_fft(truth, k_true)?;
    let ssd = |k: &BlurKernel| -> Result<f64> {
        let f = crate::restore::deconvolve_nonblind(&blurred, k, nonblind)?;
        Ok(f.zip_map(truth, |a, b| a - b).norm_sq())
    };
    let ssd_true = ssd(k_true)?;
    let ssd_estimated = if k_est == k_true { ssd_true } else { ssd(k_est)? };
    let exact_recovery = ssd_true < 1e-12;
    let ratio = if exact_recovery {
        if ssd_estimated < 1e-12 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        ssd_estimated / ssd_true
    };
    Ok(ErrorRatio {
        ratio,
        ssd_estimated,
        ssd_true,
        exact_recovery,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(n: usize) -> Image {
        Image::from_fn(n, n, |r, c| if (r / 3 + c / 3) % 2 == 0 { 0.9 } else { 0.1 })
    }

    #[test]
    fn unit_length_is_delta() {
        assert_eq!(synth_motion_kernel(1.0, 37.0, 5).unwrap(), BlurKernel::delta(5));
        assert!(synth_motion_kernel(12.0, 0.0, 11).is_err());
    }

    #[test]
    fn motion_kernels_are_point_symmetric() {
        for (len, ang, size) in [(10.0, 10.0, 11), (9.0, 10.0, 9), (15.0, 45.0, 15), (5.0, 90.0, 5)] {
            let k = synth_motion_kernel(len, ang, size).unwrap();
            assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(k.linf_distance(&k.flipped()) < 1e-12, "{len} {ang}");
        }
    }

    #[test]
    fn horizontal_kernel_lies_on_center_row() {
        // end taps carry half weight, as for a box of length four
        let k = synth_motion_kernel(5.0, 0.0, 5).unwrap();
        let want = [0.125, 0.25, 0.25, 0.25, 0.125];
        for c in 0..5 {
            assert!((k.get(2, c) - want[c]).abs() < 1e-2);
        }
        assert!((k.central_mass(5) - (0..5).map(|c| k.get(2, c)).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn standin_suite_has_eight_valid_kernels() {
        let suite = standin_kernels();
        assert_eq!(suite.len(), 8);
        for s in &suite {
            assert!(s.kernel.size() <= 21);
            assert!(s.kernel.weights().iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn illumination_endpoints() {
        let h = synth_illumination(Illumination::Horizontal { min_level: 0.3 }, 10, 4);
        assert!((h.get(2, 0) - 0.3).abs() < 1e-15);
        assert!((h.get(2, 9) - 1.0).abs() < 1e-15);
        let v = synth_illumination(Illumination::Vertical { min_level: 0.3 }, 4, 10);
        assert!((v.get(0, 1) - 0.3).abs() < 1e-15);
        let g = synth_illumination(Illumination::Gaussian { min_level: 0.3 }, 11, 11);
        assert_eq!(g.get(5, 5), 1.0);
        assert!((g.get(0, 0) - 0.3).abs() < 1e-12);
        assert!(g.data().iter().all(|&x| (0.3..=1.0).contains(&x)));
    }

    #[test]
    fn identity_spec_is_identity() {
        let t = checker(16);
        assert_eq!(degrade(&t, &DegradationSpec::identity()).unwrap(), t);
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let t = checker(16);
        let spec = DegradationSpec {
            noise_sigma: 0.05,
            seed: 7,
            ..DegradationSpec::identity()
        };
        let a = degrade(&t, &spec).unwrap();
        let b = degrade(&t, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs_diff(&t) > 0.0);
    }

    #[test]
    fn psnr_examples() {
        let a = checker(12);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-10);
    }

    #[test]
    fn ssim_examples() {
        let a = checker(24);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap() < 0.1);
        let b = a.map(|v| 0.8 * v + 0.05);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ssim(&Image::zeros(10, 20), &Image::zeros(10, 20)).is_err());
    }
}
