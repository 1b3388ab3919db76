//! Discrete nonseparable shearlet transform (DNST) built in the frequency domain.
//!
//! Every subband filter is real, even and sampled on the full image grid, so the
//! transform is non-subsampled and commutes with circular shifts. The directional
//! filters are products of a radial band-pass (from a separable maximally flat
//! generator), a fan filter evaluated at the dilated frequency, and a smooth
//! angular shear window. A residual low-pass completes the bank so that
//! `Σ|Ĥ_i|² = 1`, which makes the adjoint equal to the inverse up to rounding.
//!
//! Frequencies are written `(w_r, w_c)`: vertical (row) and horizontal (column).
//! The basically-vertical (BV) cone is `|w_r| ≥ |w_c|`.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::image::Image;

pub const DEFAULT_LEVELS: usize = 4;
pub const DEFAULT_SHEARS: usize = 8;
pub const DEFAULT_FAN_SIZE: usize = 17;

// Meyer transition half-width as a fraction of the narrower neighbouring window.
const SHEAR_TRANSITION: f64 = 0.25;
const MIN_FRAME: f64 = 1e-12;

/// Coefficients of the maximally flat half-band polynomial `P(x)` in the power basis.
///
/// `P(x) = ((1+x)/2)^N Σ_{k<N} C(N-1+k, k) ((1-x)/2)^k`, which satisfies
/// `P(x) + P(-x) = 1` and is monotone on `[-1, 1]`.
pub fn maxflat_halfband(order: usize) -> Vec<f64> {
    let half_plus = [0.5, 0.5];
    let half_minus = [0.5, -0.5];
    let mut lead = vec![1.0];
    for _ in 0..order {
        lead = poly_mul(&lead, &half_plus);
    }
    let mut tail = vec![0.0];
    let mut pow = vec![1.0];
    let mut binom = 1.0;
    for k in 0..order {
        if k > 0 {
            binom = binom * (order - 1 + k) as f64 / k as f64;
            pow = poly_mul(&pow, &half_minus);
        }
        tail = poly_add(&tail, &pow.iter().map(|c| c * binom).collect::<Vec<_>>());
    }
    poly_mul(&lead, &tail)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, v) in a.iter().enumerate() {
        out[i] += v;
    }
    for (i, v) in b.iter().enumerate() {
        out[i] += v;
    }
    out
}

/// Square tap array centered at offset `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Taps2 {
    radius: usize,
    values: Vec<f64>,
}

impl Taps2 {
    fn zeros(radius: usize) -> Self {
        let n = 2 * radius + 1;
        Self {
            radius,
            values: vec![0.0; n * n],
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    /// Tap at row offset `a` and column offset `b`; zero outside the support.
    pub fn get(&self, a: isize, b: isize) -> f64 {
        let r = self.radius as isize;
        if a.abs() > r || b.abs() > r {
            return 0.0;
        }
        self.values[((a + r) as usize) * self.size() + (b + r) as usize]
    }

    fn set(&mut self, a: isize, b: isize, v: f64) {
        let r = self.radius as isize;
        let n = self.size();
        self.values[((a + r) as usize) * n + (b + r) as usize] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn transposed(&self) -> Taps2 {
        let r = self.radius as isize;
        let mut out = Taps2::zeros(self.radius);
        for a in -r..=r {
            for b in -r..=r {
                out.set(a, b, self.get(b, a));
            }
        }
        out
    }

    /// Copy with a larger support; new taps are zero.
    pub fn padded(&self, radius: usize) -> Taps2 {
        let radius = radius.max(self.radius);
        let r = self.radius as isize;
        let mut out = Taps2::zeros(radius);
        for a in -r..=r {
            for b in -r..=r {
                out.set(a, b, self.get(a, b));
            }
        }
        out
    }

    /// `Σ t(a,b) exp(-i(a w_r + b w_c))`, real part.
    ///
    /// All taps used here are point-symmetric, so the imaginary part vanishes.
    pub fn response(&self, w_r: f64, w_c: f64) -> f64 {
        let r = self.radius as isize;
        let mut acc = 0.0;
        for a in -r..=r {
            for b in -r..=r {
                let t = self.get(a, b);
                if t != 0.0 {
                    acc += t * (a as f64 * w_r + b as f64 * w_c).cos();
                }
            }
        }
        acc
    }

    /// Response at `dilation · ω` for every frequency of a `width × height` DFT grid.
    fn response_grid(&self, width: usize, height: usize, dilation: f64) -> Vec<f64> {
        let r = self.radius as isize;
        let n = self.size();
        // Split cos(a w_r + b w_c) so the column sums are shared by every row.
        let mut col_cos = vec![0.0; width * n];
        let mut col_sin = vec![0.0; width * n];
        for c in 0..width {
            let wc = dilation * grid_frequency(c, width);
            for a in -r..=r {
                let (mut cs, mut sn) = (0.0, 0.0);
                for b in -r..=r {
                    let t = self.get(a, b);
                    let (s, co) = (b as f64 * wc).sin_cos();
                    cs += t * co;
                    sn += t * s;
                }
                col_cos[c * n + (a + r) as usize] = cs;
                col_sin[c * n + (a + r) as usize] = sn;
            }
        }
        let mut out = vec![0.0; width * height];
        for row in 0..height {
            let wr = dilation * grid_frequency(row, height);
            let trig: Vec<(f64, f64)> = (-r..=r).map(|a| (a as f64 * wr).sin_cos()).collect();
            for c in 0..width {
                let mut acc = 0.0;
                for (i, &(s, co)) in trig.iter().enumerate() {
                    acc += co * col_cos[c * n + i] - s * col_sin[c * n + i];
                }
                out[row * width + c] = acc;
            }
        }
        out
    }
}

/// Angular frequency of DFT bin `k` on an `n`-point grid, in `[-π, π)`.
pub fn grid_frequency(k: usize, n: usize) -> f64 {
    let k = if 2 * k >= n { k as f64 - n as f64 } else { k as f64 };
    2.0 * PI * k / n as f64
}

/// 2-D half-band filter with a diamond passband.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidFilter {
    order: usize,
    taps: Taps2,
}

impl PyramidFilter {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn taps(&self) -> &Taps2 {
        &self.taps
    }

    pub fn response(&self, w_r: f64, w_c: f64) -> f64 {
        self.taps.response(w_r, w_c)
    }
}

/// McClellan diamond transform of the maximally flat 1-D half-band of `order`.
///
/// The substitution `x = (cos w_r + cos w_c)/2` maps `P(x) + P(-x) = 1` to
/// `Q(ω) + Q(ω + (π, π)) = 1`. Taps span `(4·order − 1)²`.
pub fn build_pyramid_filter(order: usize) -> Result<PyramidFilter> {
    if order == 0 {
        return Err(Error::InvalidParameter("pyramid filter order must be >= 1".into()));
    }
    let coeffs = maxflat_halfband(order);
    // Horner in the convolution algebra: acc = acc * T + c_m δ.
    let mut acc = Taps2::zeros(0);
    acc.set(0, 0, coeffs[coeffs.len() - 1]);
    for &c in coeffs.iter().rev().skip(1) {
        let r = acc.radius as isize;
        let mut next = Taps2::zeros(acc.radius + 1);
        for a in -r..=r {
            for b in -r..=r {
                let v = 0.25 * acc.get(a, b);
                if v == 0.0 {
                    continue;
                }
                for (da, db) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    next.set(a + da, b + db, next.get(a + da, b + db) + v);
                }
            }
        }
        next.set(0, 0, next.get(0, 0) + c);
        acc = next;
    }
    Ok(PyramidFilter { order, taps: acc })
}

/// Fan filters sampled on the pseudopolar index grid.
///
/// `P_BV(m_x, m_y)` is the BV fan response at `w_c = 2π m_x m_y / N²`,
/// `w_r = π m_y / N`; `P_BH` swaps the two roles. Grids cover
/// `-N ≤ m_x ≤ N`, `-N/2 ≤ m_y ≤ N/2` and are stored row-major in `m_y`.
#[derive(Debug, Clone)]
pub struct FanFilterPair {
    n: usize,
    pyramid: PyramidFilter,
    bv_taps: Taps2,
    bh_taps: Taps2,
    bv: Vec<f64>,
    bh: Vec<f64>,
}

impl FanFilterPair {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pyramid(&self) -> &PyramidFilter {
        &self.pyramid
    }

    /// Taps of the BV fan: the diamond modulated by `(-1)^a` along rows.
    pub fn bv_taps(&self) -> &Taps2 {
        &self.bv_taps
    }

    pub fn bh_taps(&self) -> &Taps2 {
        &self.bh_taps
    }

    fn index(&self, m_x: isize, m_y: isize) -> Option<usize> {
        let n = self.n as isize;
        if m_x.abs() > n || m_y.abs() > n / 2 {
            return None;
        }
        Some(((m_y + n / 2) * (2 * n + 1) + m_x + n) as usize)
    }

    /// Stored BV sample; zero outside the index domain.
    pub fn bv(&self, m_x: isize, m_y: isize) -> f64 {
        self.index(m_x, m_y).map_or(0.0, |i| self.bv[i])
    }

    pub fn bh(&self, m_x: isize, m_y: isize) -> f64 {
        self.index(m_x, m_y).map_or(0.0, |i| self.bh[i])
    }

    /// BV sum at any (possibly fractional) pseudopolar index.
    pub fn bv_at(&self, m_x: f64, m_y: f64) -> f64 {
        let n = self.n as f64;
        self.bv_taps.response(PI * m_y / n, 2.0 * PI * m_x * m_y / (n * n))
    }

    pub fn bh_at(&self, m_x: f64, m_y: f64) -> f64 {
        let n = self.n as f64;
        self.bh_taps.response(2.0 * PI * m_x * m_y / (n * n), PI * m_y / n)
    }

    /// Cartesian BV fan response; passband is the cone `|w_r| ≥ |w_c|`.
    pub fn bv_response(&self, w_r: f64, w_c: f64) -> f64 {
        self.bv_taps.response(w_r, w_c)
    }

    pub fn bh_response(&self, w_r: f64, w_c: f64) -> f64 {
        self.bh_taps.response(w_r, w_c)
    }
}

/// Modulates the diamond into the two fan filters and samples them per Eq. (13) layout.
pub fn build_fan_filters(q: &PyramidFilter, n: usize) -> Result<FanFilterPair> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "fan grid parameter must be a power of two >= 2, got {n}"
        )));
    }
    let r = q.taps.radius as isize;
    let mut bv_taps = Taps2::zeros(q.taps.radius);
    for a in -r..=r {
        for b in -r..=r {
            let sign = if a.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            bv_taps.set(a, b, sign * q.taps.get(a, b));
        }
    }
    let bh_taps = bv_taps.transposed();
    let mut pair = FanFilterPair {
        n,
        pyramid: q.clone(),
        bv_taps,
        bh_taps,
        bv: Vec::new(),
        bh: Vec::new(),
    };
    let ni = n as isize;
    for m_y in -ni / 2..=ni / 2 {
        for m_x in -ni..=ni {
            let bv = pair.bv_at(m_x as f64, m_y as f64);
            let bh = pair.bh_at(m_x as f64, m_y as f64);
            pair.bv.push(bv);
            pair.bh.push(bh);
        }
    }
    Ok(pair)
}

/// The two fan responses assembled side by side, periodic with period `2N` in `ξ₁`.
///
/// Columns `ξ₁ ∈ [-2N, -N]` hold `P_BV(ξ₂, ξ₁ + 3N/2)` and `ξ₁ ∈ [-N, 0]` hold
/// `P_BH(ξ₂, -N/2 - ξ₁)` (arguments as `(m_x, m_y)`); `ξ₂ ∈ [-N, N]`.
#[derive(Debug, Clone)]
pub struct CombinedFan {
    n: usize,
    // rows ξ₂ = -N..=N, columns ξ₁ = -2N..=-1
    values: Vec<f64>,
}

impl CombinedFan {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Combined response; periodic in `xi1`, zero for `|xi2| > N`.
    pub fn get(&self, xi1: isize, xi2: isize) -> f64 {
        let n = self.n as isize;
        if xi2.abs() > n {
            return 0.0;
        }
        let col = (xi1 + 2 * n).rem_euclid(2 * n);
        self.values[((xi2 + n) * 2 * n + col) as usize]
    }

    /// Largest `|P|` on the grid.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Branch values of the combined response before blending, as `(bv, bh)`.
pub fn fan_branches(pair: &FanFilterPair, xi1: f64, xi2: f64) -> (f64, f64) {
    let n = pair.n as f64;
    (
        pair.bv_at(xi2, xi1 + 1.5 * n),
        pair.bh_at(xi2, -0.5 * n - xi1),
    )
}

/// Assembles `P(ξ₁, ξ₂)` from the pair with a raised-cosine cross-fade one
/// sample either side of each seam (`ξ₁ = -N` and `ξ₁ = 0 ≡ -2N`).
pub fn combine_fan(pair: &FanFilterPair) -> CombinedFan {
    let n = pair.n as isize;
    let nf = n as f64;
    let fade = |t: f64| 0.5 - 0.5 * (PI * (t + 1.0) / 2.0).cos();
    let mut values = Vec::with_capacity(((2 * n + 1) * 2 * n) as usize);
    for xi2 in -n..=n {
        for xi1 in -2 * n..0 {
            let x1 = xi1 as f64;
            let x2 = xi2 as f64;
            let v = if (x1 + nf).abs() <= 1.0 {
                // BV on the left of the seam, BH on the right
                let w = fade(x1 + nf);
                let (bv, bh) = fan_branches(pair, x1, x2);
                (1.0 - w) * bv + w * bh
            } else if x1 >= -1.0 || x1 <= -2.0 * nf + 1.0 {
                // periodic seam: BH approaches from the left (ξ₁ → 0), BV leaves at -2N
                let t = if x1 >= -1.0 { x1 } else { x1 + 2.0 * nf };
                let w = fade(t);
                let bh = fan_branches(pair, t, x2).1;
                let bv = fan_branches(pair, t - 2.0 * nf, x2).0;
                (1.0 - w) * bh + w * bv
            } else if x1 < -nf {
                fan_branches(pair, x1, x2).0
            } else {
                fan_branches(pair, x1, x2).1
            };
            values.push(v);
        }
    }
    CombinedFan {
        n: pair.n,
        values,
    }
}

/// 1-D low-pass `cos⁶(ω/2)(1 + 3 sin²(ω/2))`: 9 taps, monotone from 1 to 0.
pub fn generator_lowpass(w: f64) -> f64 {
    let c = (0.5 * w).cos().powi(2);
    let s = 1.0 - c;
    c * c * c * (1.0 + 3.0 * s)
}

/// Smooth partition of the orientation circle `[-π/2, π/2)` into `n` windows.
///
/// Boundaries sit at slopes `-1 + 2i/n` (shear steps) plus the wrap point `±π/2`;
/// squared windows sum to one for every orientation.
#[derive(Debug, Clone)]
struct ShearWindows {
    // bounds[i] is the left edge of window i; bounds[n] = bounds[0] + π
    bounds: Vec<f64>,
    deltas: Vec<f64>,
}

impl ShearWindows {
    fn new(n: usize) -> Self {
        let mut bounds = vec![-FRAC_PI_2];
        for i in 1..n {
            bounds.push((-1.0 + 2.0 * i as f64 / n as f64).atan());
        }
        bounds.push(FRAC_PI_2);
        let span = |i: usize| bounds[(i + n) % n + 1] - bounds[(i + n) % n];
        let deltas = (0..n)
            .map(|i| SHEAR_TRANSITION * span(i).min(span(i + n - 1)))
            .collect();
        Self { bounds, deltas }
    }

    fn len(&self) -> usize {
        self.deltas.len()
    }

    fn value(&self, i: usize, theta: f64) -> f64 {
        let n = self.len();
        let lo = self.bounds[i];
        let hi = self.bounds[i + 1];
        let dlo = self.deltas[i];
        let dhi = self.deltas[(i + 1) % n];
        let mut t = theta;
        while t < lo - dlo {
            t += PI;
        }
        while t >= lo - dlo + PI {
            t -= PI;
        }
        if t < lo + dlo {
            (FRAC_PI_2 * meyer((t - lo + dlo) / (2.0 * dlo))).sin()
        } else if t <= hi - dhi {
            1.0
        } else if t < hi + dhi {
            (FRAC_PI_2 * meyer((t - hi + dhi) / (2.0 * dhi))).cos()
        } else {
            0.0
        }
    }
}

fn meyer(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.powi(4) * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x.powi(3))
}

/// Orientation of `(w_r, w_c)` inside a cone, as `atan` of the cross/axis ratio.
fn cone_angle(axis: f64, cross: f64) -> f64 {
    if axis == 0.0 {
        if cross == 0.0 {
            0.0
        } else {
            -FRAC_PI_2
        }
    } else {
        (cross / axis).atan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// `|w_r| ≥ |w_c|`
    Vertical,
    /// `|w_c| ≥ |w_r|`
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubbandKind {
    /// `scale` 0 is the coarsest; `shear` counts within the scale, BV cone first.
    Directional { scale: usize, shear: usize, cone: Cone },
    Residual,
}

/// One precomputed bank of frequency-domain filters for a fixed grid size.
#[derive(Debug, Clone)]
pub struct ShearletSystem {
    width: usize,
    height: usize,
    levels: usize,
    shears: usize,
    fan_size: usize,
    fan: FanFilterPair,
    filters: Vec<Vec<f64>>,
    kinds: Vec<SubbandKind>,
    frame: Vec<f64>,
    fft: Fft2,
}

impl ShearletSystem {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn shears_per_level(&self) -> usize {
        self.shears
    }

    pub fn fan_size(&self) -> usize {
        self.fan_size
    }

    pub fn fan(&self) -> &FanFilterPair {
        &self.fan
    }

    /// Number of subbands, `levels · shears + 1`.
    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Real transfer function of subband `i`, row-major on the DFT grid.
    pub fn filter(&self, i: usize) -> &[f64] {
        &self.filters[i]
    }

    pub fn kind(&self, i: usize) -> SubbandKind {
        self.kinds[i]
    }

    /// `Σ_i |Ĥ_i|²` per frequency; the symbol of `ΨᵀΨ`.
    pub fn frame_symbol(&self) -> &[f64] {
        &self.frame
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if img.width() != self.width || img.height() != self.height {
            return Err(Error::ShapeMismatch(format!(
                "image is {}x{}, shearlet system was built for {}x{}",
                img.width(),
                img.height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    pub fn check_stack(&self, stack: &SubbandStack) -> Result<()> {
        if stack.len() != self.len() || stack.width != self.width || stack.height != self.height {
            return Err(Error::ShapeMismatch(format!(
                "stack has {} bands of {}x{}, system expects {} of {}x{}",
                stack.len(),
                stack.width,
                stack.height,
                self.len(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    /// Subband coefficients `F⁻¹(Ĥ_i · f̂)`.
    pub fn forward(&self, img: &Image) -> Result<SubbandStack> {
        self.check_image(img)?;
        Ok(self.forward_spectrum(&self.fft.forward_image(img)))
    }

    /// Forward transform from an already transformed image.
    pub fn forward_spectrum(&self, spectrum: &[Complex64]) -> SubbandStack {
        let bands = self
            .filters
            .par_iter()
            .map(|h| {
                let buf = spectrum.iter().zip(h).map(|(f, &g)| f * g).collect();
                self.fft.inverse_image(buf)
            })
            .collect();
        SubbandStack {
            width: self.width,
            height: self.height,
            bands,
        }
    }

    /// `Σ_i Ĥ_i · Ŵ_i` (filters are real, so `conj(Ĥ_i) = Ĥ_i`).
    pub fn adjoint_spectrum(&self, stack: &SubbandStack) -> Result<Vec<Complex64>> {
        self.check_stack(stack)?;
        let parts: Vec<Vec<Complex64>> = stack
            .bands
            .par_iter()
            .zip(&self.filters)
            .map(|(band, h)| {
                let mut s = self.fft.forward_image(band);
                s.iter_mut().zip(h).for_each(|(v, &g)| *v *= g);
                s
            })
            .collect();
        let mut acc = vec![Complex64::new(0.0, 0.0); self.width * self.height];
        for p in parts {
            acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
        }
        Ok(acc)
    }

    pub fn adjoint(&self, stack: &SubbandStack) -> Result<Image> {
        Ok(self.fft.inverse_image(self.adjoint_spectrum(stack)?))
    }

    /// Dual-frame synthesis `F⁻¹(Σ Ĥ_i Ŵ_i / Σ|Ĥ_i|²)`.
    pub fn reconstruct(&self, stack: &SubbandStack) -> Result<Image> {
        let mut acc = self.adjoint_spectrum(stack)?;
        for (v, &s) in acc.iter_mut().zip(&self.frame) {
            if s < MIN_FRAME {
                return Err(Error::Numerical(format!(
                    "frame symbol {s:e} too small for dual reconstruction"
                )));
            }
            *v /= s;
        }
        Ok(self.fft.inverse_image(acc))
    }
}

/// Builds the bank for a `width × height` grid.
///
/// Scale `j` (0 coarsest) uses the radial band-pass
/// `sqrt(G_ℓ² − G_{ℓ+1}²)` with `ℓ = J−1−j` and `G_ℓ(ω) = Π_{i<ℓ} φ(2^i ω)`,
/// the fan pair evaluated at `2^ℓ ω` (normalised so `P_BV² + P_BH²` weighs 1),
/// and `shears/2` angular windows per cone.
pub fn build_system(
    width: usize,
    height: usize,
    levels: usize,
    shears: usize,
    fan_size: usize,
) -> Result<ShearletSystem> {
    if levels == 0 {
        return Err(Error::InvalidParameter("shearlet levels must be >= 1".into()));
    }
    if ![4, 8, 16].contains(&shears) {
        return Err(Error::InvalidParameter(format!(
            "shears per level must be 4, 8 or 16, got {shears}"
        )));
    }
    if fan_size < 3 || fan_size % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "fan size must be odd and >= 3, got {fan_size}"
        )));
    }
    let min_side = (1usize << levels.min(20)) * 4;
    if levels > 20 || width < min_side || height < min_side {
        return Err(Error::InvalidDimensions(format!(
            "{width}x{height} is too small for {levels} shearlet levels (need >= {min_side})"
        )));
    }
    // largest maximally flat order whose (4·order − 1)² taps fit the fan window
    let order = (fan_size + 1) / 4;
    let q = build_pyramid_filter(order)?;
    let n = (width.max(height).next_power_of_two() / 2).max(2);
    let mut fan = build_fan_filters(&q, n)?;
    fan.bv_taps = fan.bv_taps.padded((fan_size - 1) / 2);
    fan.bh_taps = fan.bh_taps.padded((fan_size - 1) / 2);

    let len = width * height;
    let phi: Vec<Vec<f64>> = (0..=levels)
        .map(|l| {
            let d = (1u64 << l) as f64;
            let col: Vec<f64> = (0..width).map(|c| generator_lowpass(d * grid_frequency(c, width))).collect();
            (0..height)
                .flat_map(|r| {
                    let lr = generator_lowpass(d * grid_frequency(r, height));
                    col.iter().map(move |lc| lr * lc).collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();
    // cumulative low-passes G_0 = 1, G_{l+1} = G_l · φ(2^l ω)
    let mut lowpass = vec![vec![1.0; len]];
    for l in 0..levels {
        let next: Vec<f64> = lowpass[l].iter().zip(&phi[l]).map(|(g, p)| g * p).collect();
        lowpass.push(next);
    }

    let per_cone = shears / 2;
    let windows = ShearWindows::new(per_cone);
    let mut filters = Vec::with_capacity(levels * shears + 1);
    let mut kinds = Vec::with_capacity(levels * shears + 1);
    for j in 0..levels {
        let l = levels - 1 - j;
        let dilation = (1u64 << l) as f64;
        let radial: Vec<f64> = lowpass[l]
            .iter()
            .zip(&lowpass[l + 1])
            .map(|(a, b)| (a * a - b * b).max(0.0).sqrt())
            .collect();
        let fan_bv = fan.bv_taps.response_grid(width, height, dilation);
        let fan_bh = fan.bh_taps.response_grid(width, height, dilation);
        // ψ^non = P·ψ, renormalised so the two cones stay a tight split
        let norm: Vec<f64> = fan_bv
            .iter()
            .zip(&fan_bh)
            .map(|(a, b)| (a.clamp(0.0, 1.0).powi(2) + b.clamp(0.0, 1.0).powi(2)).sqrt())
            .collect();
        for (cone, fan_grid) in [(Cone::Vertical, &fan_bv), (Cone::Horizontal, &fan_bh)] {
            for k in 0..per_cone {
                let raw: Vec<f64> = (0..len)
                    .map(|i| {
                        let (wr, wc) = (grid_frequency(i / width, height), grid_frequency(i % width, width));
                        let theta = match cone {
                            Cone::Vertical => cone_angle(wr, wc),
                            Cone::Horizontal => cone_angle(wc, wr),
                        };
                        radial[i] * fan_grid[i].clamp(0.0, 1.0) / norm[i] * windows.value(k, theta)
                    })
                    .collect();
                filters.push(hermitian_even(&raw, width, height));
                let shear = match cone {
                    Cone::Vertical => k,
                    Cone::Horizontal => per_cone + k,
                };
                kinds.push(SubbandKind::Directional { scale: j, shear, cone });
            }
        }
    }
    let mut frame = vec![0.0; len];
    for h in &filters {
        frame.iter_mut().zip(h).for_each(|(f, v)| *f += v * v);
    }
    let residual: Vec<f64> = frame.iter().map(|s| (1.0 - s).max(0.0).sqrt()).collect();
    frame.iter_mut().zip(&residual).for_each(|(f, v)| *f += v * v);
    filters.push(residual);
    kinds.push(SubbandKind::Residual);

    Ok(ShearletSystem {
        width,
        height,
        levels,
        shears,
        fan_size,
        fan,
        filters,
        kinds,
        frame,
        fft: Fft2::new(width, height),
    })
}

/// Enforces `H(ω) = H(-ω)` while keeping `Σ|H|²` unchanged.
///
/// Only the Nyquist row/column differ, where `-π` and `π` name the same bin
/// but the angular windows see opposite slopes.
fn hermitian_even(raw: &[f64], width: usize, height: usize) -> Vec<f64> {
    (0..width * height)
        .map(|i| {
            let (r, c) = (i / width, i % width);
            let m = ((height - r) % height) * width + (width - c) % width;
            ((raw[i] * raw[i] + raw[m] * raw[m]) / 2.0).sqrt()
        })
        .collect()
}

/// Non-subsampled coefficients, one image-sized grid per subband.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandStack {
    width: usize,
    height: usize,
    bands: Vec<Image>,
}

impl SubbandStack {
    pub fn zeros(sys: &ShearletSystem) -> Self {
        Self {
            width: sys.width,
            height: sys.height,
            bands: vec![Image::zeros(sys.width, sys.height); sys.len()],
        }
    }

    pub fn from_bands(bands: Vec<Image>) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| Error::InvalidDimensions("subband stack needs at least one band".into()))?;
        let (width, height) = (first.width(), first.height());
        for b in &bands {
            first.check_same_shape(b, "subband")?;
        }
        Ok(Self { width, height, bands })
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn band(&self, i: usize) -> &Image {
        &self.bands[i]
    }

    pub fn band_mut(&mut self, i: usize) -> &mut Image {
        &mut self.bands[i]
    }

    pub fn bands(&self) -> &[Image] {
        &self.bands
    }

    pub fn bands_mut(&mut self) -> &mut [Image] {
        &mut self.bands
    }

    pub fn dot(&self, other: &SubbandStack) -> f64 {
        self.bands.iter().zip(&other.bands).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.bands.iter().map(Image::norm_sq).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed | 1;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        }
    }

    fn grid_points(n: usize) -> impl Iterator<Item = (f64, f64)> {
        (0..n * n).map(move |i| (grid_frequency(i / n, n), grid_frequency(i % n, n)))
    }

    #[test]
    fn halfband_polynomial_is_complementary() {
        for order in 1..6 {
            let p = maxflat_halfband(order);
            let eval = |x: f64| p.iter().rev().fold(0.0, |acc, c| acc * x + c);
            for i in 0..=20 {
                let x = -1.0 + i as f64 / 10.0;
                assert!((eval(x) + eval(-x) - 1.0).abs() < 1e-12);
            }
            assert!((eval(1.0) - 1.0).abs() < 1e-12 && eval(-1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn order_one_endpoints() {
        let q = build_pyramid_filter(1).unwrap();
        assert!((q.response(0.0, 0.0) - 1.0).abs() < 1e-14);
        assert!(q.response(PI, PI).abs() < 1e-14);
        assert_eq!(q.taps().size(), 3);
        assert!(build_pyramid_filter(0).is_err());
    }

    #[test]
    fn pyramid_complementarity_and_symmetry() {
        for order in [1, 2, 4] {
            let q = build_pyramid_filter(order).unwrap();
            assert_eq!(q.taps().size(), 4 * order - 1);
            for (wr, wc) in grid_points(64) {
                let a = q.response(wr, wc);
                assert!((a + q.response(wr + PI, wc + PI) - 1.0).abs() < 1e-8);
                assert!((a - q.response(wc, wr)).abs() < 1e-12);
                assert!((a - q.response(-wr, -wc)).abs() < 1e-12);
                assert!((-1e-12..=1.0 + 1e-12).contains(&a));
            }
        }
    }

    #[test]
    fn fan_dc_equals_tap_sum() {
        let q = build_pyramid_filter(4).unwrap();
        let pair = build_fan_filters(&q, 16).unwrap();
        assert!((pair.bv(0, 0) - pair.bv_taps().sum()).abs() < 1e-14);
        assert!((pair.bh(0, 0) - pair.bh_taps().sum()).abs() < 1e-14);
        // the modulated diamond puts DC on the fan apex
        assert!((pair.bv(0, 0) - 0.5).abs() < 1e-12);
        assert!(build_fan_filters(&q, 12).is_err());
    }

    #[test]
    fn bh_is_bv_with_exponent_roles_swapped() {
        let q = build_pyramid_filter(3).unwrap();
        let pair = build_fan_filters(&q, 8).unwrap();
        let t = pair.bv_taps();
        let r = t.radius() as isize;
        for m_y in -4isize..=4 {
            for m_x in -8isize..=8 {
                // BV taps read transposed, with the two exponents exchanged
                let (a1, a2) = (PI * m_y as f64 / 8.0, 2.0 * PI * (m_x * m_y) as f64 / 64.0);
                let mut direct = 0.0;
                for k1 in -r..=r {
                    for k2 in -r..=r {
                        direct += t.get(k1, k2) * (k1 as f64 * a1 + k2 as f64 * a2).cos();
                    }
                }
                assert!((pair.bh(m_x, m_y) - direct).abs() < 1e-12);
                assert!((pair.bh(m_x, m_y) - pair.bv(m_x, m_y)).abs() < 1e-12);
            }
        }
        for (wr, wc) in grid_points(16) {
            assert!((pair.bh_response(wr, wc) - pair.bv_response(wc, wr)).abs() < 1e-12);
            assert!((pair.bh_response(wr, wc) + pair.bv_response(wr, wc) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bv_mass_sits_in_vertical_cone() {
        let q = build_pyramid_filter(4).unwrap();
        let pair = build_fan_filters(&q, 32).unwrap();
        let (mut inside, mut total) = (0.0, 0.0);
        for (wr, wc) in grid_points(64) {
            let e = pair.bv_response(wr, wc).powi(2);
            total += e;
            if wr.abs() >= wc.abs() {
                inside += e;
            }
        }
        assert!(inside / total >= 0.9, "fraction {}", inside / total);
    }

    #[test]
    fn combined_fan_examples() {
        let q = build_pyramid_filter(4).unwrap();
        let pair = build_fan_filters(&q, 16).unwrap();
        let p = combine_fan(&pair);
        let n = 16isize;
        for xi2 in -n..=n {
            for xi1 in -2 * n..=0 {
                assert_eq!(p.get(xi1, xi2), p.get(xi1 + 2 * n, xi2));
            }
            let (bv, bh) = fan_branches(&pair, -(n as f64), xi2 as f64);
            assert!((bv - bh).abs() <= 1e-6);
        }
        for xi1 in -2 * n..0 {
            assert_eq!(p.get(xi1, n + 1), 0.0);
            assert_eq!(p.get(xi1, -n - 3), 0.0);
        }
        assert!(p.max_abs() <= 1.0 + 1e-9);
    }

    #[test]
    fn shear_windows_partition_unity() {
        for n in [2, 4, 8] {
            let w = ShearWindows::new(n);
            for i in 0..=400 {
                let theta = -FRAC_PI_2 + PI * i as f64 / 400.0;
                let s: f64 = (0..n).map(|k| w.value(k, theta).powi(2)).sum();
                assert!((s - 1.0).abs() < 1e-12, "n {n} theta {theta}: {s}");
            }
        }
    }

    #[test]
    fn system_shape_and_admissibility() {
        let sys = build_system(64, 64, 4, 8, 17).unwrap();
        assert_eq!(sys.len(), 33);
        assert_eq!(sys.fan().bv_taps().size(), 17);
        assert_eq!(sys.kind(32), SubbandKind::Residual);
        let min = sys.frame_symbol().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = sys.frame_symbol().iter().cloned().fold(0.0, f64::max);
        assert!(min > 0.0 && (max - 1.0).abs() < 1e-12 && (min - 1.0).abs() < 1e-12);
        assert!(build_system(32, 64, 4, 8, 17).is_err());
        assert!(build_system(64, 64, 4, 6, 17).is_err());
        assert!(build_system(64, 64, 3, 16, 17).is_ok());
    }

    #[test]
    fn zero_and_linearity() {
        let sys = build_system(32, 32, 3, 8, 17).unwrap();
        let z = sys.forward(&Image::zeros(32, 32)).unwrap();
        assert_eq!(z.norm_sq(), 0.0);
        assert_eq!(sys.adjoint(&SubbandStack::zeros(&sys)).unwrap().norm_sq(), 0.0);
        let mut next = lcg(3);
        let f = Image::from_fn(32, 32, |_, _| next());
        let g = Image::from_fn(32, 32, |_, _| next());
        let combo = f.zip_map(&g, |a, b| 2.0 * a - 0.5 * b);
        let lhs = sys.forward(&combo).unwrap();
        let (sf, sg) = (sys.forward(&f).unwrap(), sys.forward(&g).unwrap());
        for i in 0..sys.len() {
            let rhs = sf.band(i).zip_map(sg.band(i), |a, b| 2.0 * a - 0.5 * b);
            assert!(lhs.band(i).max_abs_diff(&rhs) < 1e-10);
        }
    }

    #[test]
    fn impulse_response_matches_direct_inverse_dft() {
        let n = 32;
        let sys = build_system(n, n, 3, 8, 17).unwrap();
        let mut delta = Image::zeros(n, n);
        delta.set(0, 0, 1.0);
        let out = sys.forward(&delta).unwrap();
        for i in [0, 5, 12, 23, sys.len() - 1] {
            let h = sys.filter(i);
            for (r, c) in [(0, 0), (1, 0), (0, 3), (5, 7), (31, 30)] {
                let mut acc = 0.0;
                for k in 0..n * n {
                    let (kr, kc) = (k / n, k % n);
                    let ph = 2.0 * PI * ((kr * r) as f64 + (kc * c) as f64) / n as f64;
                    acc += h[k] * ph.cos();
                }
                assert!((out.band(i).get(r, c) - acc / (n * n) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_is_frame_symbol() {
        let sys = build_system(32, 32, 3, 4, 9).unwrap();
        let mut next = lcg(11);
        let f = Image::from_fn(32, 32, |_, _| next());
        let back = sys.adjoint(&sys.forward(&f).unwrap()).unwrap();
        let mut spec = sys.fft().forward_image(&f);
        spec.iter_mut().zip(sys.frame_symbol()).for_each(|(v, s)| *v *= s);
        let want = sys.fft().inverse_image(spec);
        assert!(back.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn constant_round_trip() {
        let sys = build_system(64, 64, 4, 8, 17).unwrap();
        let f = Image::filled(64, 64, 0.37);
        let back = sys.reconstruct(&sys.forward(&f).unwrap()).unwrap();
        assert!(back.max_abs_diff(&f) < 1e-10);
        assert!(sys.forward(&Image::zeros(32, 64)).is_err());
    }
}
