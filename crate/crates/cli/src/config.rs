//! Flat `key = value` configuration covering every tunable of the pipeline.

use std::fmt::Write as _;
use std::path::Path;

use aerodeblur_core::degrade::Illumination;
use aerodeblur_core::restore::{KernelMode, RestoreConfig, LAMBDA_NOISE_FREE, LAMBDA_NOISY};
use aerodeblur_core::retinex::{DescentMode, PatchDomain, RetinexConfig};

use crate::error::CliError;

/// Shape of the synthetic lighting field used by `degrade`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IllumKind {
    None,
    Horizontal,
    Vertical,
    Gaussian,
}

/// Parameters of the experiment harness rather than of the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct Harness {
    /// Run the illumination correction before deblurring.
    pub correct: bool,
    pub seed: u64,
    /// Noise standard deviation added by `degrade`.
    pub sigma: f64,
    pub illum: IllumKind,
    pub illum_min: f64,
    pub motion_length: f64,
    pub motion_angle: f64,
    pub motion_size: usize,
    /// `grid-search` sweeps `alpha*_max` geometrically over this range; the
    /// lower bounds follow at a tenth.
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_steps: usize,
}

impl Default for Harness {
    fn default() -> Self {
        Self {
            correct: true,
            seed: 0,
            sigma: 0.01,
            illum: IllumKind::None,
            illum_min: 0.3,
            motion_length: 10.0,
            motion_angle: 10.0,
            motion_size: 11,
            grid_min: 1e-3,
            grid_max: 0.1,
            grid_steps: 5,
        }
    }
}

impl Harness {
    pub fn illumination(&self) -> Illumination {
        let min_level = self.illum_min;
        match self.illum {
            IllumKind::None => Illumination::None,
            IllumKind::Horizontal => Illumination::Horizontal { min_level },
            IllumKind::Vertical => Illumination::Vertical { min_level },
            IllumKind::Gaussian => Illumination::Gaussian { min_level },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CliConfig {
    pub retinex: RetinexConfig,
    pub restore: RestoreConfig,
    pub harness: Harness,
}

/// Text form of one config value. Floats use the shortest representation
/// that parses back to the same bits.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn to_text(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
    fn to_text(&self) -> String {
        format!("{self}")
    }
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn to_text(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn to_text(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for bool {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "true" | "on" | "yes" | "1" => Some(true),
            "false" | "off" | "no" | "0" => Some(false),
            _ => None,
        }
    }
    fn to_text(&self) -> String {
        self.to_string()
    }
}

macro_rules! named_enum {
    ($ty:ty { $($name:literal => $variant:expr),* $(,)? }) => {
        impl ConfigValue for $ty {
            fn parse_value(s: &str) -> Option<Self> {
                match s {
                    $($name => Some($variant),)*
                    _ => None,
                }
            }
            fn to_text(&self) -> String {
                $(if *self == $variant { return $name.to_string(); })*
                unreachable!()
            }
        }
    };
}

named_enum!(DescentMode { "gradient" => DescentMode::Gradient, "preconditioned" => DescentMode::Preconditioned });
named_enum!(PatchDomain { "log" => PatchDomain::Log, "gray8" => PatchDomain::Gray8 });
named_enum!(KernelMode { "edge" => KernelMode::EdgePrediction, "literal" => KernelMode::Literal });
named_enum!(IllumKind {
    "none" => IllumKind::None,
    "horizontal" => IllumKind::Horizontal,
    "vertical" => IllumKind::Vertical,
    "gaussian" => IllumKind::Gaussian,
});

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        /// Every accepted key, in the order `--print-config` emits them.
        pub const KEYS: &[&str] = &[$($key),*];

        impl CliConfig {
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
                match key {
                    $($key => {
                        self.$($field).+ = ConfigValue::parse_value(value).ok_or_else(|| {
                            CliError::Config(format!("bad value {value:?} for key {key}"))
                        })?;
                    })*
                    _ => return Err(CliError::Config(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.to_text()),)*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    // illumination correction
    "eta0" => retinex.eta0,
    "eta1" => retinex.eta1,
    "nl_h" => retinex.h,
    "nl_window" => retinex.window,
    "nl_patch_radius" => retinex.patch_radius,
    "nl_patch_domain" => retinex.patch_domain,
    "nl_eps" => retinex.eps_nl,
    "nl_refresh" => retinex.weight_refresh,
    "tau" => retinex.tau,
    "retinex_iters" => retinex.iter_max,
    "retinex_tol" => retinex.tol,
    "retinex_descent" => retinex.mode,
    "log_floor" => retinex.log_floor,
    // blind deconvolution
    "gamma" => restore.gamma,
    "lambda" => restore.lambda,
    "beta0" => restore.beta0,
    "beta1" => restore.beta1,
    "beta2" => restore.beta2,
    "beta" => restore.beta,
    "t_r" => restore.t_r,
    "t_t" => restore.t_t,
    "kernel_size_init" => restore.kernel_size_init,
    "kernel_size_max" => restore.kernel_size_max,
    "max_outer_iters" => restore.max_outer_iters,
    "max_admm_iters" => restore.max_admm_iters,
    "burn_in" => restore.burn_in,
    "kernel_every" => restore.kernel_every,
    "kernel_iters" => restore.kernel_iters,
    "kernel_tol" => restore.kernel_tol,
    "ring_mass_stop" => restore.ring_mass_stop,
    "inner_sweeps" => restore.inner_sweeps,
    "inner_tol" => restore.inner_tol,
    "cg_tol" => restore.cg_tol,
    "cg_max_iters" => restore.cg_max_iters,
    "intensity_scale" => restore.intensity_scale,
    "kernel_mode" => restore.kernel_mode,
    "edge_weight" => restore.edge_weight,
    "edge_gamma" => restore.edge_gamma,
    "kernel_ridge" => restore.kernel_ridge,
    "kernel_cut" => restore.kernel_cut,
    "kernel_updates" => restore.kernel_updates,
    "patch_size" => restore.patch_size,
    "overlap" => restore.overlap,
    "pad" => restore.pad,
    // shearlet system
    "levels" => restore.levels,
    "shears" => restore.shears,
    "fan_size" => restore.fan_size,
    // TGV weights
    "alpha0_max" => restore.tgv.alpha0_max,
    "alpha0_min" => restore.tgv.alpha0_min,
    "alpha1_max" => restore.tgv.alpha1_max,
    "alpha1_min" => restore.tgv.alpha1_min,
    "tensor_sigma" => restore.sigma,
    "chi" => restore.chi,
    // harness
    "correct" => harness.correct,
    "seed" => harness.seed,
    "sigma" => harness.sigma,
    "illum" => harness.illum,
    "illum_min" => harness.illum_min,
    "motion_length" => harness.motion_length,
    "motion_angle" => harness.motion_angle,
    "motion_size" => harness.motion_size,
    "grid_min" => harness.grid_min,
    "grid_max" => harness.grid_max,
    "grid_steps" => harness.grid_steps,
}

/// Normalizes a flag name (`patch-size`) to its key (`patch_size`).
pub fn key_for_flag(flag: &str) -> Option<&'static str> {
    let k = flag.replace('-', "_");
    KEYS.iter().copied().find(|&key| key == k)
}

impl CliConfig {
    /// Applies `key = value` lines. `#` starts a comment; blank lines are
    /// skipped; a later line overrides an earlier one.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{origin}:{}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn preset_noisy(&mut self) {
        self.restore.lambda = LAMBDA_NOISY;
    }

    pub fn preset_noise_free(&mut self) {
        self.restore.lambda = LAMBDA_NOISE_FREE;
    }

    /// The effective config in the file format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).unwrap_or_default());
        }
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.retinex.validate()?;
        self.restore.validate()?;
        let h = &self.harness;
        if !(h.grid_min > 0.0 && h.grid_min <= h.grid_max) || h.grid_steps == 0 {
            return Err(CliError::Config(format!(
                "grid search needs 0 < grid_min <= grid_max and grid_steps >= 1, got {} {} {}",
                h.grid_min, h.grid_max, h.grid_steps
            )));
        }
        Ok(())
    }
}
