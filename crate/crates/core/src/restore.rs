//! Patch-wise blind deconvolution: ADMM over shearlet and TGV splits with an
//! alternating kernel update, and the full correct-then-restore pipeline.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rayon::prelude::*;

use crate::dnst::{build_system, ShearletSystem, SubbandStack};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::image::{gradient, Boundary, Image};
use crate::kernel::BlurKernel;
use crate::patch::{self, PatchGrid};
use crate::retinex::{correct_illumination, RetinexConfig};
use crate::tgv::{
    epsilon_adjoint, epsilon_op, tgv2_value, weights_for_image, AdaptiveWeights, SymTensorField, TgvBounds,
    VectorField,
};

/// Shearlet weight for noisy inputs.
pub const LAMBDA_NOISY: f64 = 0.1;
/// Shearlet weight for noise-free inputs.
pub const LAMBDA_NOISE_FREE: f64 = 0.01;

const BOUNDARY: Boundary = Boundary::Periodic;

/// How the kernel block of the alternation is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    /// Fit the kernel on the gradients of an ℓ₀-sharpened latent image, then
    /// restore with the ADMM image block.
    EdgePrediction,
    /// Fit `½‖K⊛f − r‖² + γ‖K‖₁` on the ADMM image after every sweep. Started
    /// from the unit pulse this stays at the no-blur solution.
    Literal,
}

/// Every knob of the patch solver.
#[derive(Debug, Clone, PartialEq)]
pub struct RestoreConfig {
    /// Kernel sparsity weight of the literal kernel block.
    pub gamma: f64,
    /// Shearlet sparsity weight.
    pub lambda: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Dual step.
    pub beta: f64,
    /// Primal residual threshold.
    pub t_r: f64,
    /// Squared relative image change threshold.
    pub t_t: f64,
    pub kernel_size_init: usize,
    pub kernel_size_max: usize,
    /// Upper bound on kernel-size stages.
    pub max_outer_iters: usize,
    /// ADMM sweeps per kernel-size stage.
    pub max_admm_iters: usize,
    /// Sweeps with the kernel held fixed before the first kernel update.
    pub burn_in: usize,
    /// Kernel update every this many sweeps after the burn-in.
    pub kernel_every: usize,
    pub kernel_iters: usize,
    pub kernel_tol: f64,
    /// Boundary ring mass below which the support stops growing.
    pub ring_mass_stop: f64,
    pub inner_sweeps: usize,
    pub inner_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub tgv: TgvBounds,
    /// Structure tensor scale for the adaptive weights.
    pub sigma: f64,
    pub chi: f64,
    pub levels: usize,
    pub shears: usize,
    pub fan_size: usize,
    pub patch_size: usize,
    pub overlap: usize,
    /// Gray levels per unit intensity in which `λ`, `γ` and the TGV bounds
    /// are expressed; data lives on [0, 1].
    pub intensity_scale: f64,
    pub kernel_mode: KernelMode,
    /// ℓ₀ gradient weight of the edge predictor.
    pub edge_weight: f64,
    /// Kernel ℓ₁ weight of the edge fit, relative to the peak data correlation.
    pub edge_gamma: f64,
    /// Ridge of the edge fit, relative to the mean Gram diagonal.
    pub kernel_ridge: f64,
    /// Taps below this fraction of the largest are cut after each edge fit.
    pub kernel_cut: f64,
    /// Edge-predict/fit alternations per kernel-size stage.
    pub kernel_updates: usize,
    /// Smooth periodic padding added around each patch before solving.
    pub pad: usize,
    /// Debug mode: keep this kernel and never run the kernel update.
    pub fixed_kernel: Option<BlurKernel>,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            lambda: LAMBDA_NOISY,
            beta0: 0.1,
            beta1: 1e-3,
            beta2: 1e-5,
            beta: 1.0,
            t_r: 1e-4,
            t_t: 1e-5,
            kernel_size_init: 3,
            kernel_size_max: 21,
            max_outer_iters: 10,
            max_admm_iters: 200,
            burn_in: 5,
            kernel_every: 1,
            kernel_iters: 300,
            kernel_tol: 1e-6,
            ring_mass_stop: 1e-3,
            inner_sweeps: 5,
            inner_tol: 1e-6,
            cg_tol: 1e-8,
            cg_max_iters: 500,
            tgv: TgvBounds::default(),
            sigma: crate::tgv::DEFAULT_SIGMA,
            chi: crate::tgv::DEFAULT_CHI,
            levels: crate::dnst::DEFAULT_LEVELS,
            shears: crate::dnst::DEFAULT_SHEARS,
            fan_size: crate::dnst::DEFAULT_FAN_SIZE,
            patch_size: patch::DEFAULT_PATCH_SIZE,
            overlap: patch::DEFAULT_OVERLAP,
            intensity_scale: 255.0,
            kernel_mode: KernelMode::EdgePrediction,
            edge_weight: 0.01,
            edge_gamma: 0.05,
            kernel_ridge: 1e-3,
            kernel_cut: 0.05,
            kernel_updates: 5,
            pad: 16,
            fixed_kernel: None,
        }
    }
}

impl RestoreConfig {
    /// Defaults with the shearlet weight for noise-free data.
    pub fn noise_free() -> Self {
        Self {
            lambda: LAMBDA_NOISE_FREE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let golden = (5f64.sqrt() + 1.0) / 2.0;
        if !(self.beta > 0.0 && self.beta < golden) {
            return bad(format!("dual step beta must lie in (0, {golden:.4}), got {}", self.beta));
        }
        for (name, v) in [
            ("beta0", self.beta0),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("t_r", self.t_r),
            ("t_t", self.t_t),
            ("kernel_tol", self.kernel_tol),
            ("inner_tol", self.inner_tol),
            ("cg_tol", self.cg_tol),
            ("sigma", self.sigma),
            ("chi", self.chi),
            ("intensity_scale", self.intensity_scale),
            ("edge_weight", self.edge_weight),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda), ("ring_mass_stop", self.ring_mass_stop),
            ("edge_gamma", self.edge_gamma),
            ("kernel_ridge", self.kernel_ridge),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        let (a, b) = (self.kernel_size_init, self.kernel_size_max);
        if a % 2 == 0 || b % 2 == 0 || a > b {
            return bad(format!("kernel sizes must be odd with init <= max, got {a} and {b}"));
        }
        if self.max_outer_iters == 0 || self.max_admm_iters == 0 || self.kernel_every == 0 {
            return bad("iteration counts and kernel cadence must be positive".into());
        }
        if !(0.0..1.0).contains(&self.kernel_cut) {
            return bad(format!("kernel_cut must lie in [0, 1), got {}", self.kernel_cut));
        }
        if self.inner_sweeps == 0 || self.kernel_iters == 0 || self.cg_max_iters == 0 || self.kernel_updates == 0 {
            return bad("inner iteration counts must be positive".into());
        }
        if self.overlap >= self.patch_size {
            return bad(format!("overlap {} must be below patch size {}", self.overlap, self.patch_size));
        }
        self.tgv.validate()
    }

    /// The config with `λ`, `γ` and the TGV bounds converted to [0, 1] data
    /// units: `λ/s`, `γ/s²`, `α/s`.
    pub fn working_units(&self) -> RestoreConfig {
        let s = self.intensity_scale;
        RestoreConfig {
            lambda: self.lambda / s,
            gamma: self.gamma / (s * s),
            tgv: scale_bounds(self.tgv, 1.0 / s),
            intensity_scale: 1.0,
            ..self.clone()
        }
    }
}

fn scale_bounds(b: TgvBounds, k: f64) -> TgvBounds {
    TgvBounds {
        alpha0_max: b.alpha0_max * k,
        alpha0_min: b.alpha0_min * k,
        alpha1_max: b.alpha1_max * k,
        alpha1_min: b.alpha1_min * k,
    }
}

fn scale_weights(w: &AdaptiveWeights, k: f64) -> AdaptiveWeights {
    AdaptiveWeights {
        alpha0: w.alpha0.map(|a| a * k),
        alpha1: w.alpha1.map(|a| a * k),
        bounds: scale_bounds(w.bounds, k),
    }
}

/// `sign(v)·max(|v| − t, 0)`.
pub fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Elementwise shrinkage with a uniform threshold.
pub fn soft_threshold(v: &Image, t: f64) -> Result<Image> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be non-negative, got {t}")));
    }
    Ok(v.map(|x| shrink(x, t)))
}

/// Elementwise shrinkage with a per-pixel threshold.
pub fn soft_threshold_map(v: &Image, t: &Image) -> Result<Image> {
    v.check_same_shape(t, "threshold map")?;
    if t.data().iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidParameter("threshold map has negative entries".into()));
    }
    Ok(v.zip_map(t, shrink))
}

/// Primal, split and dual variables of one patch.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub f: Image,
    pub p: VectorField,
    pub kernel: BlurKernel,
    pub w: SubbandStack,
    pub y: VectorField,
    pub v: SymTensorField,
    pub w_dual: SubbandStack,
    pub y_dual: VectorField,
    pub v_dual: SymTensorField,
    pub iteration: usize,
    pub residuals: Vec<f64>,
    /// `Ψf` for the current `f`.
    psi_f: SubbandStack,
}

impl AdmmState {
    /// Starts from `f = r`, `p = ∇r`, zero splits and duals.
    pub fn new(r: &Image, kernel: BlurKernel, sys: &ShearletSystem) -> Result<Self> {
        let (w, h) = (r.width(), r.height());
        if kernel.size() > w.min(h) {
            return Err(Error::InvalidKernel(format!(
                "kernel {0}x{0} exceeds the {w}x{h} patch",
                kernel.size()
            )));
        }
        let psi_f = sys.forward(r)?;
        let (g1, g2) = gradient(r, BOUNDARY);
        Ok(Self {
            f: r.clone(),
            p: VectorField { p1: g1, p2: g2 },
            kernel,
            w: SubbandStack::zeros(sys),
            y: VectorField::zeros(w, h),
            v: SymTensorField::zeros(w, h),
            w_dual: SubbandStack::zeros(sys),
            y_dual: VectorField::zeros(w, h),
            v_dual: SymTensorField::zeros(w, h),
            iteration: 0,
            residuals: Vec::new(),
            psi_f,
        })
    }

    /// Replaces `f` and refreshes the cached transform.
    pub fn set_image(&mut self, f: Image, sys: &ShearletSystem) -> Result<()> {
        self.psi_f = sys.forward(&f)?;
        self.f = f;
        Ok(())
    }

    pub fn psi_f(&self) -> &SubbandStack {
        &self.psi_f
    }
}

fn sub(a: &Image, b: &Image) -> Image {
    a.zip_map(b, |x, y| x - y)
}

fn add(a: &Image, b: &Image) -> Image {
    a.zip_map(b, |x, y| x + y)
}

fn vf_combine(a: &VectorField, b: &VectorField, op: impl Fn(f64, f64) -> f64 + Copy) -> VectorField {
    VectorField {
        p1: a.p1.zip_map(&b.p1, op),
        p2: a.p2.zip_map(&b.p2, op),
    }
}

fn st_combine(a: &SymTensorField, b: &SymTensorField, op: impl Fn(f64, f64) -> f64 + Copy) -> SymTensorField {
    SymTensorField {
        e11: a.e11.zip_map(&b.e11, op),
        e12: a.e12.zip_map(&b.e12, op),
        e22: a.e22.zip_map(&b.e22, op),
    }
}

fn grad_field(f: &Image) -> VectorField {
    let (p1, p2) = gradient(f, BOUNDARY);
    VectorField { p1, p2 }
}

fn sym_abs_sum(v: &SymTensorField, weight: &Image) -> f64 {
    (0..weight.len())
        .map(|i| {
            weight.data()[i] * (v.e11.data()[i].abs() + 2.0 * v.e12.data()[i].abs() + v.e22.data()[i].abs())
        })
        .sum()
}

fn check_weights(state: &AdmmState, weights: &AdaptiveWeights) -> Result<()> {
    state.f.check_same_shape(&weights.alpha0, "alpha0")?;
    state.f.check_same_shape(&weights.alpha1, "alpha1")
}

/// The three shrinkage blocks:
/// `W ← S(Ψf + W̃, λ/β₀)`, `Y ← S(∇f − p + Ỹ, α₁/β₁)`, `V ← S(ε(p) + Ṽ, α₀/β₂)`.
pub fn update_splits(
    state: &mut AdmmState,
    sys: &ShearletSystem,
    weights: &AdaptiveWeights,
    cfg: &RestoreConfig,
) -> Result<()> {
    check_weights(state, weights)?;
    sys.check_stack(&state.w)?;
    let tw = cfg.lambda / cfg.beta0;
    let bands: Vec<Image> = state
        .psi_f
        .bands()
        .par_iter()
        .zip(state.w_dual.bands())
        .map(|(c, d)| c.zip_map(d, |a, b| shrink(a + b, tw)))
        .collect();
    state.w = SubbandStack::from_bands(bands)?;

    let t1 = weights.alpha1.map(|a| a / cfg.beta1);
    let g = grad_field(&state.f);
    let arg = vf_combine(&vf_combine(&g, &state.p, |a, b| a - b), &state.y_dual, |a, b| a + b);
    state.y = VectorField {
        p1: soft_threshold_map(&arg.p1, &t1)?,
        p2: soft_threshold_map(&arg.p2, &t1)?,
    };

    let t0 = weights.alpha0.map(|a| a / cfg.beta2);
    let arg = st_combine(&epsilon_op(&state.p, BOUNDARY), &state.v_dual, |a, b| a + b);
    state.v = SymTensorField {
        e11: soft_threshold_map(&arg.e11, &t0)?,
        e12: soft_threshold_map(&arg.e12, &t0)?,
        e22: soft_threshold_map(&arg.e22, &t0)?,
    };
    Ok(())
}

/// The quadratic minimised jointly over `(f, p)`:
/// `½‖Kf − r‖² + β₀/2‖W − Ψf − W̃‖² + β₁/2‖Y − (∇f − p) − Ỹ‖² + β₂/2‖V − ε(p) − Ṽ‖²`.
pub fn quadratic_objective(state: &AdmmState, r: &Image, cfg: &RestoreConfig) -> Result<f64> {
    let kf = crate::fft::convolve_fft(&state.f, &state.kernel)?;
    let data = 0.5 * sub(&kf, r).norm_sq();
    Ok(data + penalty_terms(state, cfg))
}

fn penalty_terms(state: &AdmmState, cfg: &RestoreConfig) -> f64 {
    let w_term: f64 = state
        .w
        .bands()
        .iter()
        .zip(state.psi_f.bands())
        .zip(state.w_dual.bands())
        .map(|((w, c), d)| {
            w.data()
                .iter()
                .zip(c.data())
                .zip(d.data())
                .map(|((a, b), e)| (a - b - e).powi(2))
                .sum::<f64>()
        })
        .sum();
    let g = grad_field(&state.f);
    let y_res = vf_combine(
        &vf_combine(&state.y, &vf_combine(&g, &state.p, |a, b| a - b), |a, b| a - b),
        &state.y_dual,
        |a, b| a - b,
    );
    let e = epsilon_op(&state.p, BOUNDARY);
    let v_res = st_combine(&st_combine(&state.v, &e, |a, b| a - b), &state.v_dual, |a, b| a - b);
    0.5 * cfg.beta0 * w_term + 0.5 * cfg.beta1 * y_res.dot(&y_res) + 0.5 * cfg.beta2 * v_res.dot(&v_res)
}

/// The augmented Lagrangian: data, kernel and split ℓ₁ terms plus the penalties.
pub fn augmented_lagrangian(
    state: &AdmmState,
    r: &Image,
    weights: &AdaptiveWeights,
    cfg: &RestoreConfig,
) -> Result<f64> {
    check_weights(state, weights)?;
    let l1_w: f64 = state.w.bands().iter().map(|b| b.data().iter().map(|x| x.abs()).sum::<f64>()).sum();
    let l1_y: f64 = (0..state.f.len())
        .map(|i| weights.alpha1.data()[i] * (state.y.p1.data()[i].abs() + state.y.p2.data()[i].abs()))
        .sum();
    let l1_v = sym_abs_sum(&state.v, &weights.alpha0);
    let l1_k: f64 = state.kernel.weights().iter().map(|x| x.abs()).sum();
    Ok(quadratic_objective(state, r, cfg)? + cfg.gamma * l1_k + cfg.lambda * l1_w + l1_y + l1_v)
}

/// The unsplit patch functional `½‖Kf − r‖² + γ‖K‖₁ + λ‖Ψf‖₁ + TGV(f, p)`.
pub fn patch_objective(
    state: &AdmmState,
    r: &Image,
    weights: &AdaptiveWeights,
    cfg: &RestoreConfig,
) -> Result<f64> {
    let kf = crate::fft::convolve_fft(&state.f, &state.kernel)?;
    let data = 0.5 * sub(&kf, r).norm_sq();
    let l1_k: f64 = state.kernel.weights().iter().map(|x| x.abs()).sum();
    let l1_psi: f64 = state.psi_f.bands().iter().map(|b| b.data().iter().map(|x| x.abs()).sum::<f64>()).sum();
    Ok(data + cfg.gamma * l1_k + cfg.lambda * l1_psi + tgv2_value(&state.f, &state.p, weights, BOUNDARY)?)
}

/// Result of one `(f, p)` block solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerReport {
    pub sweeps: usize,
    pub cg_iterations: usize,
    /// Relative change of `f` in the last sweep.
    pub last_change: f64,
}

/// Exact minimiser of the `f` part of the quadratic for fixed `p`.
fn solve_f(state: &AdmmState, r_hat: &[Complex64], sys: &ShearletSystem, cfg: &RestoreConfig) -> Result<Image> {
    let fft = sys.fft();
    let k_hat = fft.kernel_otf(&state.kernel)?;
    let (d1, d2) = fft.difference_symbols();
    let target = SubbandStack::from_bands(
        state
            .w
            .bands()
            .iter()
            .zip(state.w_dual.bands())
            .map(|(w, d)| sub(w, d))
            .collect(),
    )?;
    let psi_t = sys.adjoint_spectrum(&target)?;
    let q1 = fft.forward_image(&add(&sub(&state.y.p1, &state.y_dual.p1), &state.p.p1));
    let q2 = fft.forward_image(&add(&sub(&state.y.p2, &state.y_dual.p2), &state.p.p2));
    let frame = sys.frame_symbol();
    let mut out = Vec::with_capacity(r_hat.len());
    for i in 0..r_hat.len() {
        let den = k_hat[i].norm_sqr() + cfg.beta0 * frame[i] + cfg.beta1 * (d1[i].norm_sqr() + d2[i].norm_sqr());
        let num = k_hat[i].conj() * r_hat[i]
            + cfg.beta0 * psi_t[i]
            + cfg.beta1 * (d1[i].conj() * q1[i] + d2[i].conj() * q2[i]);
        if !(den > 0.0 && den.is_finite() && num.re.is_finite() && num.im.is_finite()) {
            return Err(Error::Numerical(format!(
                "image normal equations are singular or non-finite at frequency bin {i} (denominator {den:e})"
            )));
        }
        out.push(num / den);
    }
    Ok(fft.inverse_image(out))
}

/// `(β₁I + β₂ε*ε) p`.
fn p_operator(p: &VectorField, cfg: &RestoreConfig) -> VectorField {
    let back = epsilon_adjoint(&epsilon_op(p, BOUNDARY), BOUNDARY);
    vf_combine(p, &back, |a, b| cfg.beta1 * a + cfg.beta2 * b)
}

/// Conjugate gradients for the `p` normal equations, warm-started at `state.p`.
fn solve_p(state: &AdmmState, cfg: &RestoreConfig) -> Result<(VectorField, usize)> {
    let g = grad_field(&state.f);
    let lhs1 = vf_combine(&vf_combine(&g, &state.y, |a, b| a - b), &state.y_dual, |a, b| a + b);
    let back = epsilon_adjoint(&st_combine(&state.v, &state.v_dual, |a, b| a - b), BOUNDARY);
    let b = vf_combine(&lhs1, &back, |a, c| cfg.beta1 * a + cfg.beta2 * c);
    let b_norm = b.dot(&b).sqrt();
    let mut x = state.p.clone();
    let ax = p_operator(&x, cfg);
    let mut res = vf_combine(&b, &ax, |a, c| a - c);
    let mut dir = res.clone();
    let mut rr = res.dot(&res);
    let tol = cfg.cg_tol * b_norm.max(f64::MIN_POSITIVE);
    let mut iters = 0;
    while rr.sqrt() > tol && iters < cfg.cg_max_iters {
        let ad = p_operator(&dir, cfg);
        let denom = dir.dot(&ad);
        if !(denom > 0.0) {
            break;
        }
        let step = rr / denom;
        x = vf_combine(&x, &dir, |a, d| a + step * d);
        res = vf_combine(&res, &ad, |a, d| a - step * d);
        let rr_new = res.dot(&res);
        let ratio = rr_new / rr;
        dir = vf_combine(&res, &dir, |a, d| a + ratio * d);
        rr = rr_new;
        iters += 1;
    }
    if !rr.is_finite() {
        return Err(Error::Numerical("auxiliary field solve produced non-finite values".into()));
    }
    Ok((x, iters))
}

/// Minimises the `(f, p)` quadratic for fixed splits, duals and kernel by
/// alternating the Fourier `f`-solve with a conjugate-gradient `p`-solve.
pub fn solve_image_and_p(
    state: &mut AdmmState,
    r: &Image,
    sys: &ShearletSystem,
    cfg: &RestoreConfig,
) -> Result<InnerReport> {
    state.f.check_same_shape(r, "observed patch")?;
    let r_hat = sys.fft().forward_image(r);
    let mut report = InnerReport {
        sweeps: 0,
        cg_iterations: 0,
        last_change: f64::INFINITY,
    };
    for _ in 0..cfg.inner_sweeps {
        let f_new = solve_f(state, &r_hat, sys, cfg)?;
        let change = sub(&f_new, &state.f).norm() / state.f.norm().max(f64::MIN_POSITIVE);
        state.f = f_new;
        let (p, iters) = solve_p(state, cfg)?;
        state.p = p;
        report.sweeps += 1;
        report.cg_iterations += iters;
        report.last_change = change;
        if change <= cfg.inner_tol {
            break;
        }
    }
    state.psi_f = sys.forward(&state.f)?;
    Ok(report)
}

/// Dual ascent `W̃ += β(Ψf − W)`, `Ỹ += β(∇f − p − Y)`, `Ṽ += β(ε(p) − V)`.
///
/// Returns the primal residual: the squared norm of the three constraint
/// residuals divided by their total element count.
pub fn update_duals(state: &mut AdmmState, cfg: &RestoreConfig) -> Result<f64> {
    let beta = cfg.beta;
    let mut sq = 0.0;
    let mut count = 0usize;
    for ((d, c), w) in state.w_dual.bands_mut().iter_mut().zip(state.psi_f.bands()).zip(state.w.bands()) {
        for ((dv, cv), wv) in d.data_mut().iter_mut().zip(c.data()).zip(w.data()) {
            let res = cv - wv;
            sq += res * res;
            *dv += beta * res;
        }
        count += c.len();
    }
    let g = grad_field(&state.f);
    let pairs = [
        (&mut state.y_dual.p1, &g.p1, &state.p.p1, &state.y.p1),
        (&mut state.y_dual.p2, &g.p2, &state.p.p2, &state.y.p2),
    ];
    for (d, gi, pi, yi) in pairs {
        for (((dv, a), b), c) in d.data_mut().iter_mut().zip(gi.data()).zip(pi.data()).zip(yi.data()) {
            let res = a - b - c;
            sq += res * res;
            *dv += beta * res;
        }
        count += gi.len();
    }
    let e = epsilon_op(&state.p, BOUNDARY);
    let triples = [
        (&mut state.v_dual.e11, &e.e11, &state.v.e11),
        (&mut state.v_dual.e12, &e.e12, &state.v.e12),
        (&mut state.v_dual.e22, &e.e22, &state.v.e22),
    ];
    for (d, ei, vi) in triples {
        for ((dv, a), b) in d.data_mut().iter_mut().zip(ei.data()).zip(vi.data()) {
            let res = a - b;
            sq += res * res;
            *dv += beta * res;
        }
        count += ei.len();
    }
    let res = sq / count as f64;
    if !res.is_finite() {
        return Err(Error::Numerical("primal residual is not finite".into()));
    }
    state.residuals.push(res);
    Ok(res)
}

/// Support offsets of an odd `size × size` kernel, row-major.
fn support_offsets(size: usize) -> Vec<(isize, isize)> {
    let c = (size / 2) as isize;
    (0..size as isize)
        .flat_map(|a| (0..size as isize).map(move |b| (a - c, b - c)))
        .collect()
}

fn wrap_index(fft: &Fft2, dr: isize, dc: isize) -> usize {
    let (w, h) = (fft.width() as isize, fft.height() as isize);
    (dr.rem_euclid(h) * w + dc.rem_euclid(w)) as usize
}

/// Normal equations of `min_K Σ_i ½‖K⊛x_i − y_i‖²` over one support, from
/// spectra of the pairs: `G(u,v) = A(u − v)` with `A` the summed circular
/// autocorrelation of the `x_i`, and `b(u) = Σ_i Σ_z y_i(z) x_i(z − u)`.
struct KernelSystem {
    n: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    /// `max_ω Σ_i |x̂_i(ω)|²`, the largest Gram eigenvalue bound.
    spectral_max: f64,
}

impl KernelSystem {
    fn new(fft: &Fft2, pairs: &[(Vec<Complex64>, Vec<Complex64>)], size: usize) -> Self {
        let len = fft.len();
        let mut power = vec![0.0; len];
        let mut cross = vec![Complex64::new(0.0, 0.0); len];
        for (x, y) in pairs {
            for i in 0..len {
                power[i] += x[i].norm_sqr();
                cross[i] += y[i] * x[i].conj();
            }
        }
        let spectral_max = power.iter().cloned().fold(0.0, f64::max);
        let auto = fft.inverse_real(power.iter().map(|&p| Complex64::new(p, 0.0)).collect());
        let cross = fft.inverse_real(cross);
        let offsets = support_offsets(size);
        let n = offsets.len();
        let mut gram = vec![0.0; n * n];
        for (i, &(ur, uc)) in offsets.iter().enumerate() {
            for (j, &(vr, vc)) in offsets.iter().enumerate() {
                gram[i * n + j] = auto[wrap_index(fft, ur - vr, uc - vc)];
            }
        }
        let rhs = offsets.iter().map(|&(ur, uc)| cross[wrap_index(fft, ur, uc)]).collect();
        Self {
            n,
            gram,
            rhs,
            spectral_max,
        }
    }

    /// Unconstrained minimiser `G⁻¹b`, or `None` when `G` is singular.
    fn least_squares(&self) -> Option<Vec<f64>> {
        let g = DMatrix::from_row_slice(self.n, self.n, &self.gram);
        let k = g.cholesky()?.solve(&DVector::from_column_slice(&self.rhs));
        k.iter().all(|v| v.is_finite()).then(|| k.as_slice().to_vec())
    }

    /// Accelerated proximal gradient on `½kᵀ(G + ρI)k − bᵀk + l1·‖k‖₁`, with
    /// the nonnegativity constraint inside the prox when `nonneg` is set.
    fn fista(&self, init: Vec<f64>, l1: f64, ridge: f64, nonneg: bool, iters: usize, tol: f64) -> Vec<f64> {
        let n = self.n;
        let step = 1.0 / (self.spectral_max + ridge);
        let mut k = init;
        let mut y = k.clone();
        let mut t = 1.0f64;
        let mut grad = vec![0.0; n];
        for _ in 0..iters {
            for i in 0..n {
                let row = &self.gram[i * n..(i + 1) * n];
                grad[i] = row.iter().zip(&y).map(|(g, v)| g * v).sum::<f64>() + ridge * y[i] - self.rhs[i];
            }
            let k_new: Vec<f64> = (0..n)
                .map(|i| {
                    let v = y[i] - step * grad[i];
                    if nonneg {
                        (v - l1 * step).max(0.0)
                    } else {
                        shrink(v, l1 * step)
                    }
                })
                .collect();
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let mom = (t - 1.0) / t_new;
            let mut diff = 0.0;
            let mut norm = 0.0;
            for i in 0..n {
                y[i] = k_new[i] + mom * (k_new[i] - k[i]);
                diff += (k_new[i] - k[i]).powi(2);
                norm += k_new[i] * k_new[i];
            }
            k = k_new;
            t = t_new;
            if diff.sqrt() <= tol * norm.sqrt().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        k
    }
}

fn check_kernel_size(img: &Image, kernel_size: usize) -> Result<()> {
    if kernel_size % 2 == 0 || kernel_size > img.width().min(img.height()) {
        return Err(Error::InvalidKernel(format!(
            "kernel size {kernel_size} must be odd and fit the {}x{} patch",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn finite_taps(k: &[f64]) -> Result<()> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kernel iterations produced non-finite taps".into()));
    }
    Ok(())
}

/// Minimises `½‖K⊛f − r‖² + γ‖K‖₁` over an odd support by accelerated
/// proximal gradient (step `1/max|f̂|²`), then projects onto nonnegative
/// unit-sum kernels. The iteration starts from the least-squares kernel,
/// since a bright image makes the DC direction dominate the Gram spectrum
/// and plain gradient steps crawl along the rest. `warm_start` is used
/// only when the Gram matrix is singular.
pub fn solve_kernel(
    f: &Image,
    r: &Image,
    gamma: f64,
    kernel_size: usize,
    warm_start: Option<&BlurKernel>,
    cfg: &RestoreConfig,
) -> Result<BlurKernel> {
    f.check_same_shape(r, "kernel data")?;
    check_kernel_size(f, kernel_size)?;
    if !(gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be non-negative, got {gamma}")));
    }
    if f.data().iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidParameter("kernel estimation needs a non-zero image".into()));
    }
    let fft = Fft2::new(f.width(), f.height());
    let system = KernelSystem::new(&fft, &[(fft.forward_image(f), fft.forward_image(r))], kernel_size);
    let init = match (system.least_squares(), warm_start) {
        (Some(ls), _) => ls,
        (None, Some(w)) if w.size() <= kernel_size => w.resize_support(kernel_size)?.weights().to_vec(),
        _ => BlurKernel::delta(kernel_size).weights().to_vec(),
    };
    let k = system.fista(init, gamma, 0.0, false, cfg.kernel_iters, cfg.kernel_tol);
    finite_taps(&k)?;
    BlurKernel::project(kernel_size, &k)
}

/// Edge-predicting latent: `min_f ½‖K⊛f − r‖² + μ‖∇f‖₀` by half-quadratic
/// splitting, doubling the coupling from `2μ` to `1e5`. Gradients whose
/// squared magnitude falls below `μ/β` are zeroed, so ramps collapse into
/// steps.
pub fn l0_latent(r: &Image, kernel: &BlurKernel, mu: f64) -> Result<Image> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("edge weight must be positive, got {mu}")));
    }
    check_kernel_size(r, kernel.size())?;
    let fft = Fft2::new(r.width(), r.height());
    let k_hat = fft.kernel_otf(kernel)?;
    let (d1, d2) = fft.difference_symbols();
    let r_hat = fft.forward_image(r);
    let mut f = r.clone();
    let mut beta = 2.0 * mu;
    while beta < 1e5 {
        let (g1, g2) = gradient(&f, BOUNDARY);
        let t = mu / beta;
        let keep = g1.zip_map(&g2, |a, b| if a * a + b * b >= t { 1.0 } else { 0.0 });
        let h1 = fft.forward_image(&g1.zip_map(&keep, |a, b| a * b));
        let h2 = fft.forward_image(&g2.zip_map(&keep, |a, b| a * b));
        let out: Vec<Complex64> = (0..r_hat.len())
            .map(|i| {
                (k_hat[i].conj() * r_hat[i] + beta * (d1[i].conj() * h1[i] + d2[i].conj() * h2[i]))
                    / (k_hat[i].norm_sqr() + beta * (d1[i].norm_sqr() + d2[i].norm_sqr()))
            })
            .collect();
        f = fft.inverse_image(out);
        beta *= 2.0;
    }
    if !f.is_finite() {
        return Err(Error::Numerical("edge predictor produced non-finite values".into()));
    }
    Ok(f)
}

/// Kernel fit on gradients: `min_{K≥0} Σ_i ½‖K⊛(M·∂_i f) − ∂_i r‖² + ρ‖K‖² + γ‖K‖₁`,
/// where `M` masks a `margin`-wide border of the predicted gradients so
/// wrap-around jumps never enter the fit. `γ` and `ρ` are relative to the
/// peak correlation and the mean Gram diagonal. Small taps are cut and the
/// result recentred.
pub fn fit_kernel_on_edges(
    latent: &Image,
    r: &Image,
    kernel_size: usize,
    margin: usize,
    cfg: &RestoreConfig,
) -> Result<BlurKernel> {
    latent.check_same_shape(r, "kernel data")?;
    check_kernel_size(r, kernel_size)?;
    let (w, h) = (r.width(), r.height());
    let inside = |row: usize, col: usize| row >= margin && col >= margin && row + margin < h && col + margin < w;
    let fft = Fft2::new(w, h);
    let (p1, p2) = gradient(latent, BOUNDARY);
    let (q1, q2) = gradient(r, BOUNDARY);
    let masked = |p: &Image| {
        let mut out = p.clone();
        for row in 0..h {
            for col in 0..w {
                if !inside(row, col) {
                    out.set(row, col, 0.0);
                }
            }
        }
        out
    };
    let pairs = [
        (fft.forward_image(&masked(&p1)), fft.forward_image(&q1)),
        (fft.forward_image(&masked(&p2)), fft.forward_image(&q2)),
    ];
    let system = KernelSystem::new(&fft, &pairs, kernel_size);
    let n = system.n;
    let peak = system.rhs.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Ok(BlurKernel::delta(kernel_size));
    }
    let ridge = cfg.kernel_ridge * (0..n).map(|i| system.gram[i * n + i]).sum::<f64>() / n as f64;
    let k = system.fista(
        vec![1.0 / n as f64; n],
        cfg.edge_gamma * peak,
        ridge,
        true,
        cfg.kernel_iters,
        cfg.kernel_tol,
    );
    finite_taps(&k)?;
    let top = k.iter().cloned().fold(0.0, f64::max);
    let cut: Vec<f64> = k.iter().map(|&v| if v < cfg.kernel_cut * top { 0.0 } else { v }).collect();
    BlurKernel::project(kernel_size, &cut)?.recentered()
}

/// One line of a patch solve trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub kernel_size: usize,
    pub residual: f64,
    /// `‖fⁿ⁺¹ − fⁿ‖² / ‖fⁿ‖²`.
    pub change: f64,
    pub objective: f64,
}

/// One kernel-size stage of the edge-prediction kernel search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelStage {
    pub kernel_size: usize,
    pub ring_mass: f64,
    /// The stage raised the ring mass, so its kernel was dropped.
    pub reverted: bool,
}

/// Output of [`restore_patch`].
#[derive(Debug, Clone)]
pub struct PatchSolution {
    pub f: Image,
    pub kernel: BlurKernel,
    pub trace: Vec<TraceEntry>,
    pub kernel_stages: Vec<KernelStage>,
    /// True when the last stage met both stopping thresholds.
    pub converged: bool,
}

impl PatchSolution {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,kernel_size,residual,change,objective\n");
        for t in &self.trace {
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e}\n",
                t.iteration, t.kernel_size, t.residual, t.change, t.objective
            ));
        }
        s
    }
}

/// Builds the shearlet system a config asks for on a given grid.
pub fn system_for(width: usize, height: usize, cfg: &RestoreConfig) -> Result<ShearletSystem> {
    build_system(width, height, cfg.levels, cfg.shears, cfg.fan_size)
}

/// Grows the kernel support from `kernel_size_init`, alternating the edge
/// predictor with the gradient fit. Stops at `kernel_size_max`, when the
/// outer ring is (nearly) empty, or when growing raised the ring mass, in
/// which case the previous kernel is kept.
pub fn estimate_kernel(r: &Image, margin: usize, cfg: &RestoreConfig) -> Result<(BlurKernel, Vec<KernelStage>)> {
    cfg.validate()?;
    let mut size = cfg.kernel_size_init;
    let mut kernel = BlurKernel::delta(size);
    let mut stages = Vec::new();
    let mut previous: Option<(f64, BlurKernel)> = None;
    for _ in 0..cfg.max_outer_iters {
        for _ in 0..cfg.kernel_updates {
            let latent = l0_latent(r, &kernel, cfg.edge_weight)?;
            kernel = fit_kernel_on_edges(&latent, r, size, margin + size / 2 + 1, cfg)?;
        }
        let ring = kernel.boundary_ring_mass();
        if let Some((prev_ring, prev_kernel)) = &previous {
            if ring > *prev_ring {
                stages.push(KernelStage {
                    kernel_size: size,
                    ring_mass: ring,
                    reverted: true,
                });
                return Ok((prev_kernel.clone(), stages));
            }
        }
        stages.push(KernelStage {
            kernel_size: size,
            ring_mass: ring,
            reverted: false,
        });
        let next = size + 2;
        if ring < cfg.ring_mass_stop || next > cfg.kernel_size_max || next > r.width().min(r.height()) {
            break;
        }
        previous = Some((ring, kernel.clone()));
        kernel = kernel.upsample(next)?;
        size = next;
    }
    Ok((kernel, stages))
}

/// Running state of the sweep loop shared by all stages of one patch.
struct SweepLog {
    trace: Vec<TraceEntry>,
    total: usize,
}

/// ADMM sweeps at one kernel size until both stopping thresholds hold or
/// `max_admm_iters`. With `kernel_size = Some(s)` the literal kernel block
/// runs after each sweep past the burn-in.
fn run_sweeps(
    state: &mut AdmmState,
    r: &Image,
    weights: &AdaptiveWeights,
    sys: &ShearletSystem,
    work: &RestoreConfig,
    kernel_size: Option<usize>,
    log: &mut SweepLog,
) -> Result<bool> {
    let mut best = f64::INFINITY;
    let mut above = 0usize;
    for _ in 0..work.max_admm_iters {
        let f_old = state.f.clone();
        update_splits(state, sys, weights, work)?;
        solve_image_and_p(state, r, sys, work)?;
        let res = update_duals(state, work)?;
        log.total += 1;
        state.iteration = log.total;
        let kernel_due = log.total > work.burn_in && (log.total - work.burn_in) % work.kernel_every == 0;
        if let (Some(size), true) = (kernel_size, kernel_due) {
            state.kernel = solve_kernel(&state.f, r, work.gamma, size, Some(&state.kernel), work)?;
        }
        let change = sub(&state.f, &f_old).norm_sq() / f_old.norm_sq().max(f64::MIN_POSITIVE);
        log.trace.push(TraceEntry {
            iteration: log.total,
            kernel_size: state.kernel.size(),
            residual: res,
            change,
            objective: patch_objective(state, r, weights, work)?,
        });
        best = best.min(res);
        if res > 10.0 * best && res > work.t_r {
            above += 1;
            if above >= 20 {
                return Err(Error::Diverged(format!(
                    "primal residual {res:e} stayed above 10x its minimum {best:e} for 20 iterations (iteration {})",
                    log.total
                )));
            }
        } else {
            above = 0;
        }
        let burnt_in = kernel_size.is_none() || log.total > work.burn_in;
        if burnt_in && res <= work.t_r && change <= work.t_t {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Joint image and kernel estimation on one corrected patch. `weights` are
/// in the same intensity units as the config.
pub fn restore_patch(
    r: &Image,
    weights: &AdaptiveWeights,
    sys: &ShearletSystem,
    cfg: &RestoreConfig,
) -> Result<PatchSolution> {
    solve_patch(r, weights, sys, cfg, 0)
}

/// [`restore_patch`] on a patch whose outer `margin` pixels are synthetic
/// padding, kept out of the kernel fit.
fn solve_patch(
    r: &Image,
    weights: &AdaptiveWeights,
    sys: &ShearletSystem,
    cfg: &RestoreConfig,
    margin: usize,
) -> Result<PatchSolution> {
    cfg.validate()?;
    if !r.is_finite() {
        return Err(Error::InvalidParameter("patch contains non-finite values".into()));
    }
    let work = cfg.working_units();
    let weights = scale_weights(weights, 1.0 / cfg.intensity_scale);
    let mut log = SweepLog {
        trace: Vec::new(),
        total: 0,
    };
    let (kernel, kernel_stages) = match (&cfg.fixed_kernel, cfg.kernel_mode) {
        (Some(k), _) => (k.clone(), Vec::new()),
        (None, KernelMode::EdgePrediction) => estimate_kernel(r, margin, cfg)?,
        (None, KernelMode::Literal) => {
            let (state, converged) = literal_joint(r, &weights, sys, &work, &mut log)?;
            return Ok(PatchSolution {
                f: state.f,
                kernel: state.kernel,
                trace: log.trace,
                kernel_stages: Vec::new(),
                converged,
            });
        }
    };
    let mut state = AdmmState::new(r, kernel, sys)?;
    let converged = run_sweeps(&mut state, r, &weights, sys, &work, None, &mut log)?;
    Ok(PatchSolution {
        f: state.f,
        kernel: state.kernel,
        trace: log.trace,
        kernel_stages,
        converged,
    })
}

/// The alternation with the literal kernel block interleaved into the sweeps,
/// growing the support stage by stage.
fn literal_joint(
    r: &Image,
    weights: &AdaptiveWeights,
    sys: &ShearletSystem,
    work: &RestoreConfig,
    log: &mut SweepLog,
) -> Result<(AdmmState, bool)> {
    let mut size = work.kernel_size_init;
    let mut state = AdmmState::new(r, BlurKernel::delta(size), sys)?;
    let mut converged = false;
    for _ in 0..work.max_outer_iters {
        converged = run_sweeps(&mut state, r, weights, sys, work, Some(size), log)?;
        if size >= work.kernel_size_max || state.kernel.boundary_ring_mass() < work.ring_mass_stop {
            break;
        }
        size += 2;
        state.kernel = state.kernel.upsample(size)?;
    }
    Ok((state, converged))
}

/// Per-patch summary for reports.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchReport {
    pub index: usize,
    pub corner: (usize, usize),
    pub iterations: usize,
    pub final_residual: f64,
    pub kernel_size: usize,
    pub converged: bool,
}

/// Output of [`restore_image`].
#[derive(Debug, Clone)]
pub struct RestoreOutput {
    pub image: Image,
    /// Merged illumination-corrected patches (the deblurring input).
    pub corrected: Image,
    pub grid: PatchGrid,
    pub kernels: Vec<BlurKernel>,
    pub reports: Vec<PatchReport>,
    pub solutions: Vec<PatchSolution>,
}

impl RestoreOutput {
    /// Median of the per-patch kernels.
    pub fn consensus_kernel(&self) -> Result<BlurKernel> {
        consensus_kernel(&self.kernels)
    }

    /// Plain-text report, one line per patch.
    pub fn report_text(&self) -> String {
        let mut s = format!(
            "patches {} patch_size {} overlap {}\n",
            self.grid.len(),
            self.grid.patch_size(),
            self.grid.overlap()
        );
        s.push_str("index row col iterations final_residual kernel_size converged\n");
        for r in &self.reports {
            s.push_str(&format!(
                "{} {} {} {} {:e} {} {}\n",
                r.index, r.corner.0, r.corner.1, r.iterations, r.final_residual, r.kernel_size, r.converged
            ));
        }
        s
    }
}

/// Where one patch sits inside its solve window.
#[derive(Debug, Clone, Copy)]
struct Window {
    row: usize,
    col: usize,
    width: usize,
    height: usize,
    /// Offset of the patch inside the padded window.
    core: (usize, usize),
}

/// The patch grown by up to `context` real pixels per side, clipped to the
/// image; the solver then adds `pad` pixels of smooth wrap padding.
fn window_for(corner: (usize, usize), size: usize, img: &Image, context: usize, pad: usize) -> Window {
    let (r0, c0) = corner;
    let row = r0.saturating_sub(context);
    let col = c0.saturating_sub(context);
    let height = (r0 + size + context).min(img.height()) - row;
    let width = (c0 + size + context).min(img.width()) - col;
    Window {
        row,
        col,
        width,
        height,
        core: (pad + r0 - row, pad + c0 - col),
    }
}

fn solve_window(
    g: &Image,
    win: Window,
    size: usize,
    retinex: Option<&RetinexConfig>,
    sys: &ShearletSystem,
    cfg: &RestoreConfig,
) -> Result<(Image, PatchSolution)> {
    let raw = g.crop(win.row, win.col, win.width, win.height);
    let corrected = match retinex {
        Some(rc) => correct_illumination(&raw, rc)?.reflectance,
        None => raw,
    };
    let padded = patch::pad_smooth(&corrected, cfg.pad);
    let weights = weights_for_image(&padded, cfg.sigma, cfg.chi, cfg.tgv)?;
    let mut sol = solve_patch(&padded, &weights, sys, cfg, cfg.pad)?;
    let (cr, cc) = win.core;
    sol.f = sol.f.crop(cr, cc, size, size);
    let core = corrected.crop(cr - cfg.pad, cc - cfg.pad, size, size);
    Ok((core, sol))
}

/// Partition, then for each patch: take it with up to `pad` pixels of
/// surrounding context, correct the illumination (skipped when `retinex` is
/// `None`), pad smoothly for the periodic solver, restore, and keep the
/// patch itself. Patches merge by plain averaging.
pub fn restore_image(g: &Image, retinex: Option<&RetinexConfig>, cfg: &RestoreConfig) -> Result<RestoreOutput> {
    cfg.validate()?;
    if let Some(rc) = retinex {
        rc.validate()?;
    }
    let size = cfg.patch_size.min(g.width()).min(g.height());
    let overlap = if size == cfg.patch_size { cfg.overlap } else { 0 };
    let grid = PatchGrid::new(g.width(), g.height(), size, overlap)?;
    let windows: Vec<Window> = grid
        .corners()
        .iter()
        .map(|&c| window_for(c, size, g, cfg.pad, cfg.pad))
        .collect();
    let mut shapes: Vec<(usize, usize)> = windows
        .iter()
        .map(|w| (w.width + 2 * cfg.pad, w.height + 2 * cfg.pad))
        .collect();
    shapes.sort_unstable();
    shapes.dedup();
    let systems: Vec<ShearletSystem> = shapes
        .par_iter()
        .map(|&(w, h)| system_for(w, h, cfg))
        .collect::<Result<_>>()?;
    let results: Vec<Result<(Image, PatchSolution)>> = windows
        .par_iter()
        .enumerate()
        .map(|(i, win)| {
            let shape = (win.width + 2 * cfg.pad, win.height + 2 * cfg.pad);
            let sys = &systems[shapes.binary_search(&shape).expect("window shape was registered")];
            solve_window(g, *win, size, retinex, sys, cfg).map_err(|e| e.in_patch(i))
        })
        .collect();
    let mut corrected = Vec::with_capacity(results.len());
    let mut solutions = Vec::with_capacity(results.len());
    for r in results {
        let (c, s) = r?;
        corrected.push(c);
        solutions.push(s);
    }
    let restored: Vec<Image> = solutions.iter().map(|s| s.f.clone()).collect();
    let reports = solutions
        .iter()
        .enumerate()
        .map(|(i, s)| PatchReport {
            index: i,
            corner: grid.corners()[i],
            iterations: s.trace.len(),
            final_residual: s.trace.last().map_or(0.0, |t| t.residual),
            kernel_size: s.kernel.size(),
            converged: s.converged,
        })
        .collect();
    Ok(RestoreOutput {
        image: patch::merge(&restored, &grid)?,
        corrected: patch::merge(&corrected, &grid)?,
        kernels: solutions.iter().map(|s| s.kernel.clone()).collect(),
        grid,
        reports,
        solutions,
    })
}

/// Tap-wise median of kernels after zero-padding to the largest support,
/// projected back to a valid kernel.
pub fn consensus_kernel(kernels: &[BlurKernel]) -> Result<BlurKernel> {
    let size = kernels
        .iter()
        .map(BlurKernel::size)
        .max()
        .ok_or_else(|| Error::InvalidParameter("no kernels to combine".into()))?;
    let padded: Vec<BlurKernel> = kernels.iter().map(|k| k.resize_support(size)).collect::<Result<_>>()?;
    let raw: Vec<f64> = (0..size * size)
        .map(|i| {
            let mut taps: Vec<f64> = padded.iter().map(|k| k.weights()[i]).collect();
            taps.sort_by(f64::total_cmp);
            let m = taps.len();
            if m % 2 == 1 {
                taps[m / 2]
            } else {
                0.5 * (taps[m / 2 - 1] + taps[m / 2])
            }
        })
        .collect();
    BlurKernel::project(size, &raw)
}

/// Non-blind deconvolution of a whole image with a known kernel (debug mode of
/// the patch solver: the kernel update is skipped).
pub fn deconvolve_nonblind(r: &Image, kernel: &BlurKernel, cfg: &RestoreConfig) -> Result<Image> {
    let cfg = RestoreConfig {
        fixed_kernel: Some(kernel.clone()),
        ..cfg.clone()
    };
    let sys = system_for(r.width(), r.height(), &cfg)?;
    let weights = weights_for_image(r, cfg.sigma, cfg.chi, cfg.tgv)?;
    Ok(restore_patch(r, &weights, &sys, &cfg)?.f)
}
