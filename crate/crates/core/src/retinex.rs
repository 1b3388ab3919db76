//! Non-local Retinex illumination correction.
//!
//! Minimizes, over the log reflectance `r` with `r <= 0`,
//!
//! ```text
//! |grad r - grad g|^2 + eta0 * sum (r - ln 0.5)^2
//!     + eta1 * sum_x sqrt(sum_{y in G_x} w(x,y) (r_x - r_y)^2)
//! ```
//!
//! by projected steepest descent. The square root is smoothed with `eps_nl`.

use std::f64::consts::LN_2;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::image::{self, Boundary, Image, DEFAULT_LOG_FLOOR};

const GRAY_LEVEL: f64 = -LN_2;
const MAX_HALVINGS: usize = 40;

/// How the descent direction is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentMode {
    /// Plain projected steepest descent with step `tau`.
    Gradient,
    /// The gradient is first multiplied by `(2 eta0 - 2 Laplacian)^-1`, the
    /// inverse Hessian of the two quadratic terms; the starting step is 1.
    Preconditioned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetinexConfig {
    pub eta0: f64,
    pub eta1: f64,
    /// Bandwidth of the similarity weights.
    pub h: f64,
    /// Side of the search window `G_x` (odd).
    pub window: usize,
    /// Radius of the patches compared by the weights.
    pub patch_radius: usize,
    pub tau: f64,
    pub iter_max: usize,
    pub log_floor: f64,
    pub eps_nl: f64,
    /// Weights are recomputed every this many iterations.
    pub weight_refresh: usize,
    /// Relative change of the iterate below which the descent stops.
    pub tol: f64,
    pub mode: DescentMode,
    pub patch_domain: PatchDomain,
}

impl Default for RetinexConfig {
    fn default() -> Self {
        Self {
            eta0: 0.01,
            eta1: 0.02,
            h: 2.0,
            window: 41,
            patch_radius: 1,
            tau: 0.08,
            iter_max: 100,
            log_floor: DEFAULT_LOG_FLOOR,
            eps_nl: 1e-6,
            weight_refresh: 5,
            tol: 1e-5,
            mode: DescentMode::Preconditioned,
            patch_domain: PatchDomain::Gray8,
        }
    }
}

impl RetinexConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta0", self.eta0),
            ("eta1", self.eta1),
            ("h", self.h),
            ("tau", self.tau),
            ("log_floor", self.log_floor),
            ("eps_nl", self.eps_nl),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.window % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "window must be odd, got {}",
                self.window
            )));
        }
        if self.iter_max == 0 || self.weight_refresh == 0 {
            return Err(Error::InvalidParameter(
                "iter_max and weight_refresh must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Unbiased sample variance of the `window x window` block whose top-left
/// pixel is `(row, col)`. The block is clamped to the image.
pub fn region_variance(img: &Image, row: usize, col: usize, window: usize) -> Result<f64> {
    if window * window <= 1 {
        return Err(Error::InvalidParameter(format!(
            "window {window} has too few samples for a variance"
        )));
    }
    let n = (window * window) as f64;
    let at = |i: usize, j: usize| img.get_clamped((row + i) as isize, (col + j) as isize);
    let mut sum = 0.0;
    for i in 0..window {
        for j in 0..window {
            sum += at(i, j);
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for i in 0..window {
        for j in 0..window {
            let d = at(i, j) - mean;
            ss += d * d;
        }
    }
    Ok(ss / (n - 1.0))
}

/// Top-left corner and variance of the sharpest `window x window` block,
/// scanned at stride one. Ties go to the first block in row-major order.
pub fn select_sharp_window(img: &Image, window: usize) -> Result<((usize, usize), f64)> {
    if window > img.width().min(img.height()) {
        return Err(Error::InvalidDimensions(format!(
            "window {window} exceeds image {}x{}",
            img.width(),
            img.height()
        )));
    }
    let rows = img.height() - window + 1;
    let cols = img.width() - window + 1;
    let mut best = ((0, 0), f64::NEG_INFINITY);
    for r in 0..rows {
        for c in 0..cols {
            let v = region_variance(img, r, c, window)?;
            if v > best.1 {
                best = ((r, c), v);
            }
        }
    }
    Ok(best)
}

/// Values the patch distance is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchDomain {
    /// The log image as given.
    Log,
    /// Intensities `exp(r)` on the 0..255 gray-level scale, the usual
    /// units of a non-local means bandwidth.
    Gray8,
}

/// Weights below this are dropped from the neighbour lists.
pub const WEIGHT_CUTOFF: f64 = 1e-10;

/// Sparse similarity weights: for each pixel, the neighbours `y` in its
/// search window (itself excluded) whose weight exceeds [`WEIGHT_CUTOFF`].
/// The lists are symmetric: `y` lists `x` with the same weight.
#[derive(Debug, Clone)]
pub struct NonLocalWeights {
    width: usize,
    height: usize,
    start: Vec<usize>,
    neighbor: Vec<u32>,
    weight: Vec<f64>,
}

impl NonLocalWeights {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Stored `(neighbour index, weight)` pairs.
    pub fn nnz(&self) -> usize {
        self.weight.len()
    }

    /// Neighbours of pixel `z` (row-major index) and their weights.
    pub fn neighbors(&self, z: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.start[z], self.start[z + 1]);
        (&self.neighbor[a..b], &self.weight[a..b])
    }

    /// `w(x, y)` for `x = (row, col)` and `y = x + (dy, dx)`. One for `y = x`;
    /// zero when `y` is outside the image, outside the window or below the
    /// cutoff.
    pub fn weight(&self, row: usize, col: usize, dy: isize, dx: isize) -> f64 {
        if dy == 0 && dx == 0 {
            return 1.0;
        }
        let (y, x) = (row as isize + dy, col as isize + dx);
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            return 0.0;
        }
        let target = (y as usize * self.width + x as usize) as u32;
        let (idx, w) = self.neighbors(row * self.width + col);
        idx.iter().position(|&i| i == target).map_or(0.0, |k| w[k])
    }
}

/// Columns `c` of a row for which `c + dx` stays inside `0..w`.
#[inline]
fn span(w: usize, dx: isize) -> (usize, usize) {
    let c0 = (-dx).max(0) as usize;
    let c1 = (w as isize - dx.max(0)).max(c0 as isize) as usize;
    (c0, c1)
}

/// Non-local means style weights `exp(-d^2 / (2 h^2))`, with `d` the
/// Euclidean distance between the edge-clamped patches around two pixels.
pub fn compute_weights(logref: &Image, cfg: &RetinexConfig) -> NonLocalWeights {
    let (w, h) = (logref.width(), logref.height());
    let pr = cfg.patch_radius;
    let pw = w + 2 * pr;
    let ph = h + 2 * pr;
    let domain = cfg.patch_domain;
    let padded: Vec<f64> = (0..ph)
        .flat_map(|r| {
            (0..pw).map(move |c| {
                let v = logref.get_clamped(r as isize - pr as isize, c as isize - pr as isize);
                match domain {
                    PatchDomain::Log => v,
                    PatchDomain::Gray8 => 255.0 * v.exp(),
                }
            })
        })
        .collect();
    let half = (cfg.window / 2) as isize;
    let inv = 1.0 / (2.0 * cfg.h * cfg.h);
    let rows: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut lists: Vec<Vec<(u32, f64)>> = vec![Vec::new(); w];
            let mut acc = vec![0.0; w];
            for dy in -half..=half {
                let ry = r as isize + dy;
                if ry < 0 || ry >= h as isize {
                    continue;
                }
                let ry = ry as usize;
                for dx in -half..=half {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (c0, c1) = span(w, dx);
                    if c0 >= c1 {
                        continue;
                    }
                    let acc = &mut acc[..c1 - c0];
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..=2 * pr {
                        for j in 0..=2 * pr {
                            let a = &padded[(r + i) * pw + c0 + j..][..c1 - c0];
                            let b = &padded[(ry + i) * pw + (c0 as isize + dx) as usize + j..]
                                [..c1 - c0];
                            for ((s, x), y) in acc.iter_mut().zip(a).zip(b) {
                                let t = x - y;
                                *s += t * t;
                            }
                        }
                    }
                    for (k, d2) in acc.iter().enumerate() {
                        let wt = (-d2 * inv).exp();
                        if wt > WEIGHT_CUTOFF {
                            let c = c0 + k;
                            let y = ry * w + (c as isize + dx) as usize;
                            lists[c].push((y as u32, wt));
                        }
                    }
                }
            }
            let mut counts = Vec::with_capacity(w);
            let mut idx = Vec::new();
            let mut wts = Vec::new();
            for l in lists {
                counts.push(l.len());
                for (i, v) in l {
                    idx.push(i);
                    wts.push(v);
                }
            }
            (counts, idx, wts)
        })
        .collect();
    let mut start = Vec::with_capacity(w * h + 1);
    start.push(0);
    let mut neighbor = Vec::new();
    let mut weight = Vec::new();
    for (counts, idx, wts) in rows {
        for n in counts {
            start.push(start.last().copied().unwrap_or(0) + n);
        }
        neighbor.extend(idx);
        weight.extend(wts);
    }
    NonLocalWeights {
        width: w,
        height: h,
        start,
        neighbor,
        weight,
    }
}

/// Per-pixel `S_x = sum_y w(x,y) (r_x - r_y)^2` over the full window.
fn nonlocal_energy(r: &Image, wts: &NonLocalWeights) -> Vec<f64> {
    let d = r.data();
    (0..d.len())
        .into_par_iter()
        .map(|z| {
            let (idx, w) = wts.neighbors(z);
            idx.iter()
                .zip(w)
                .map(|(&y, &wt)| {
                    let t = d[z] - d[y as usize];
                    wt * t * t
                })
                .sum()
        })
        .collect()
}

fn check_inputs(rlog: &Image, glog: &Image, wts: &NonLocalWeights) -> Result<()> {
    rlog.check_same_shape(glog, "reflectance and observation")?;
    if wts.width != rlog.width() || wts.height != rlog.height() {
        return Err(Error::ShapeMismatch(format!(
            "weights built for {}x{}, image is {}x{}",
            wts.width,
            wts.height,
            rlog.width(),
            rlog.height()
        )));
    }
    Ok(())
}

/// Value of the smoothed functional. The smoothing constant is subtracted
/// per pixel so a flat reflectance contributes nothing.
pub fn retinex_objective(
    rlog: &Image,
    glog: &Image,
    wts: &NonLocalWeights,
    cfg: &RetinexConfig,
) -> Result<f64> {
    check_inputs(rlog, glog, wts)?;
    let diff = rlog.zip_map(glog, |a, b| a - b);
    let (dv, dh) = image::gradient(&diff, Boundary::Symmetric);
    let fidelity = dv.norm_sq() + dh.norm_sq();
    let gray: f64 = rlog.data().iter().map(|v| (v - GRAY_LEVEL).powi(2)).sum();
    let se = cfg.eps_nl.sqrt();
    let nl: f64 = nonlocal_energy(rlog, wts)
        .iter()
        .map(|s| (s + cfg.eps_nl).sqrt() - se)
        .sum();
    Ok(fidelity + cfg.eta0 * gray + cfg.eta1 * nl)
}

/// Exact gradient of [`retinex_objective`] with respect to `rlog`.
pub fn retinex_gradient(
    rlog: &Image,
    glog: &Image,
    wts: &NonLocalWeights,
    cfg: &RetinexConfig,
) -> Result<Image> {
    check_inputs(rlog, glog, wts)?;
    let (w, h) = (rlog.width(), rlog.height());
    let diff = rlog.zip_map(glog, |a, b| a - b);
    let lap = image::laplacian(&diff);
    let inv: Vec<f64> = nonlocal_energy(rlog, wts)
        .iter()
        .map(|s| 1.0 / (s + cfg.eps_nl).sqrt())
        .collect();
    let d = rlog.data();
    let nl: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|z| {
            let (idx, wz) = wts.neighbors(z);
            idx.iter()
                .zip(wz)
                .map(|(&y, &wt)| {
                    let y = y as usize;
                    wt * (d[z] - d[y]) * (inv[z] + inv[y])
                })
                .sum()
        })
        .collect();
    let out: Vec<f64> = (0..w * h)
        .map(|z| -2.0 * lap.data()[z] + 2.0 * cfg.eta0 * (d[z] - GRAY_LEVEL) + cfg.eta1 * nl[z])
        .collect();
    Image::new(w, h, out)
}

/// Inverse of `2 eta0 I - 2 Laplacian` under edge replication, applied on the
/// mirrored grid where that Laplacian becomes circulant.
struct Preconditioner {
    fft: Fft2,
    inv_symbol: Vec<f64>,
    width: usize,
    height: usize,
}

impl Preconditioner {
    fn new(width: usize, height: usize, eta0: f64) -> Self {
        let (w2, h2) = (2 * width, 2 * height);
        let mut inv_symbol = Vec::with_capacity(w2 * h2);
        for k in 0..h2 {
            let cy = (std::f64::consts::TAU * k as f64 / h2 as f64).cos();
            for l in 0..w2 {
                let cx = (std::f64::consts::TAU * l as f64 / w2 as f64).cos();
                let lap = 2.0 * cy + 2.0 * cx - 4.0;
                inv_symbol.push(1.0 / (2.0 * eta0 - 2.0 * lap));
            }
        }
        Self {
            fft: Fft2::new(w2, h2),
            inv_symbol,
            width,
            height,
        }
    }

    fn apply(&self, g: &Image) -> Image {
        let (w, h) = (self.width, self.height);
        let (w2, h2) = (2 * w, 2 * h);
        let mut ext = Vec::with_capacity(w2 * h2);
        for r in 0..h2 {
            let rr = if r < h { r } else { h2 - 1 - r };
            for c in 0..w2 {
                let cc = if c < w { c } else { w2 - 1 - c };
                ext.push(g.get(rr, cc));
            }
        }
        let mut spec = self.fft.forward_real(&ext);
        spec.iter_mut().zip(&self.inv_symbol).for_each(|(v, s)| *v *= s);
        let full = self.fft.inverse_real(spec);
        Image::from_fn(w, h, |r, c| full[r * w2 + c])
    }
}

/// One row of the descent trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetinexStep {
    pub iteration: usize,
    pub objective: f64,
    pub max_log_reflectance: f64,
    /// Step length accepted for this sweep.
    pub step: f64,
    /// Whether the weights were recomputed before this sweep.
    pub refreshed: bool,
}

#[derive(Debug, Clone)]
pub struct RetinexOutput {
    pub reflectance: Image,
    pub illumination: Image,
    pub log_reflectance: Image,
    pub trace: Vec<RetinexStep>,
    pub converged: bool,
}

impl RetinexOutput {
    /// Trace as CSV with a header row.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,objective,max_r\n");
        for t in &self.trace {
            let _ = writeln!(s, "{},{:.12e},{:.12e}", t.iteration, t.objective, t.max_log_reflectance);
        }
        s
    }
}

/// Splits `g` into reflectance and illumination, `g = r * l`.
pub fn correct_illumination(g: &Image, cfg: &RetinexConfig) -> Result<RetinexOutput> {
    cfg.validate()?;
    if !g.is_finite() {
        return Err(Error::Numerical("input contains non-finite values".into()));
    }
    let glog = image::to_log(g, cfg.log_floor)?;
    let mut r = glog.map(|v| v.min(0.0));
    let mut trace = Vec::new();
    let mut wts = compute_weights(&r, cfg);
    let mut converged = false;
    let precond = match cfg.mode {
        DescentMode::Gradient => None,
        DescentMode::Preconditioned => Some(Preconditioner::new(g.width(), g.height(), cfg.eta0)),
    };
    for it in 0..cfg.iter_max {
        let refreshed = it > 0 && it % cfg.weight_refresh == 0;
        if refreshed {
            wts = compute_weights(&r, cfg);
        }
        let f0 = retinex_objective(&r, &glog, &wts, cfg)?;
        let grad = retinex_gradient(&r, &glog, &wts, cfg)?;
        if !grad.is_finite() || !f0.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient at iteration {it}")));
        }
        let (grad, mut step) = match &precond {
            Some(p) => (p.apply(&grad), 1.0),
            None => (grad, cfg.tau),
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = r.zip_map(&grad, |a, b| (a - step * b).min(0.0));
            let f1 = retinex_objective(&cand, &glog, &wts, cfg)?;
            if !f1.is_finite() {
                return Err(Error::Numerical(format!("non-finite objective at iteration {it}")));
            }
            if f1 <= f0 {
                accepted = Some((cand, f1));
                break;
            }
            step *= 0.5;
        }
        let Some((next, f1)) = accepted else {
            converged = true;
            break;
        };
        let change = next.zip_map(&r, |a, b| a - b).norm() / r.norm().max(1e-300);
        r = next;
        trace.push(RetinexStep {
            iteration: it + 1,
            objective: f1,
            max_log_reflectance: r.max(),
            step,
            refreshed,
        });
        if change <= cfg.tol {
            converged = true;
            break;
        }
    }
    let illumination = glog.zip_map(&r, |a, b| (a - b).exp());
    Ok(RetinexOutput {
        reflectance: r.map(f64::exp),
        illumination,
        log_reflectance: r,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed | 1;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    fn small_cfg() -> RetinexConfig {
        RetinexConfig {
            window: 5,
            patch_domain: PatchDomain::Log,
            ..RetinexConfig::default()
        }
    }

    #[test]
    fn variance_examples() {
        let c = Image::filled(5, 5, 0.3);
        assert_eq!(region_variance(&c, 0, 0, 3).unwrap(), 0.0);
        let img = Image::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((region_variance(&img, 0, 0, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(region_variance(&img, 0, 0, 1).is_err());
    }

    #[test]
    fn sharp_window_tie_break_and_texture() {
        let c = Image::filled(9, 9, 0.5);
        assert_eq!(select_sharp_window(&c, 3).unwrap().0, (0, 0));
        let mut next = lcg(5);
        let img = Image::from_fn(12, 12, |r, c| {
            if (6..9).contains(&r) && (2..5).contains(&c) {
                next()
            } else {
                0.5
            }
        });
        assert_eq!(select_sharp_window(&img, 3).unwrap().0, (6, 2));
    }

    #[test]
    fn weights_closed_form() {
        let cfg = RetinexConfig {
            window: 9,
            ..small_cfg()
        };
        let img = Image::from_fn(7, 7, |_, c| if c >= 4 { 0.2 } else { 0.0 });
        let w = compute_weights(&img, &cfg);
        assert_eq!(w.weight(3, 3, 0, 0), 1.0);
        // patch at (3,1) is all zeros, patch at (3,5) is all 0.2
        let expected = (-9.0f64 * 0.04 / 8.0).exp();
        assert!((w.weight(3, 1, 0, 4) - expected).abs() < 1e-12);
        assert!((w.weight(3, 5, 0, -4) - expected).abs() < 1e-12);
        assert!((w.weight(3, 2, 0, 2) - w.weight(3, 4, 0, -2)).abs() < 1e-15);
        let flat = compute_weights(&Image::filled(6, 6, -0.3), &small_cfg());
        assert!(flat.weight.iter().all(|&v| v == 1.0));
        assert_eq!(flat.nnz(), (0..36).map(|z| flat.neighbors(z).0.len()).sum::<usize>());
        assert_eq!(flat.weight(2, 2, 1, -2), 1.0);
    }

    #[test]
    fn objective_vanishes_at_gray_world() {
        let cfg = small_cfg();
        let r = Image::filled(6, 6, GRAY_LEVEL);
        let w = compute_weights(&r, &cfg);
        assert!(retinex_objective(&r, &r, &w, &cfg).unwrap().abs() < 1e-15);
        let g = retinex_gradient(&r, &r, &w, &cfg).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-15));
        let c = Image::filled(6, 6, -0.2);
        let obj = retinex_objective(&c, &c, &w, &cfg).unwrap();
        assert!((obj - 0.01 * 36.0 * (-0.2 - GRAY_LEVEL).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn gray_world_only_gradient() {
        let cfg = RetinexConfig {
            eta1: 1e-300,
            ..small_cfg()
        };
        let mut next = lcg(3);
        let r = Image::from_fn(5, 5, |_, _| -next());
        let w = compute_weights(&r, &cfg);
        let g = retinex_gradient(&r, &r, &w, &cfg).unwrap();
        for (gv, rv) in g.data().iter().zip(r.data()) {
            assert!((gv - 2.0 * 0.01 * (rv - GRAY_LEVEL)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_half_is_a_fixed_point() {
        let g = Image::filled(16, 16, 0.5);
        let out = correct_illumination(&g, &small_cfg()).unwrap();
        assert!(out.reflectance.max_abs_diff(&g) < 1e-12);
        assert!(out.illumination.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn decomposition_identity_and_constraint() {
        let mut next = lcg(11);
        let g = Image::from_fn(16, 16, |_, c| (0.2 + 0.6 * next()) * (0.3 + 0.04 * c as f64));
        let cfg = RetinexConfig {
            iter_max: 12,
            ..small_cfg()
        };
        let out = correct_illumination(&g, &cfg).unwrap();
        assert!(out.log_reflectance.max() <= 0.0);
        let glog = image::to_log(&g, cfg.log_floor).unwrap();
        let back = out
            .log_reflectance
            .zip_map(&out.illumination, |r, l| r + l.ln());
        assert!(back.max_abs_diff(&glog) < 1e-12);
        assert!(out.trace_csv().starts_with("iteration,objective,max_r\n"));
    }
}
