//! Argument handling and the subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aerodeblur_core::degrade::{degrade, error_ratio, psnr, ssim, synth_motion_kernel, DegradationSpec};
use aerodeblur_core::dnst::SubbandKind;
use aerodeblur_core::restore::{restore_image, system_for, RestoreConfig};
use aerodeblur_core::retinex::correct_illumination;
use aerodeblur_core::BlurKernel;
use clap::{ArgAction, Parser, Subcommand};

use crate::config::{key_for_flag, CliConfig};
use crate::error::CliError;
use crate::io::{kernel_text, load_image, load_kernel, write_atomic, BitDepth, Outputs};

/// Environment variable naming a config file applied before `--config`.
pub const CONFIG_ENV: &str = "RESTORE_CONFIG";

const KEY_HELP: &str = "Every config key is also a flag: --eta0 0.02, --patch-size 48, \
--sigma 0 and so on. Use --print-config to list the keys with their effective values.";

#[derive(Debug, Parser)]
#[command(name = "aerodeblur", version, about = "Illumination correction and blind deblurring of grayscale images", after_help = KEY_HELP)]
struct Cli {
    /// Config file of `key = value` lines, applied after $RESTORE_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Shearlet weight for noisy data.
    #[arg(long, global = true, conflicts_with = "noise_free")]
    noisy: bool,

    /// Shearlet weight for noise-free data.
    #[arg(long, global = true)]
    noise_free: bool,

    /// Print the effective config and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Upper bound on worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write 16-bit instead of 8-bit images.
    #[arg(long, global = true)]
    sixteen_bit: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Remove uneven illumination.
    Correct {
        input: PathBuf,
        output: PathBuf,
        /// Also write the estimated illumination.
        #[arg(long)]
        dump_illumination: Option<PathBuf>,
        /// Per-iteration objective as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Blind restoration: correction, then patchwise deblurring.
    Restore {
        input: PathBuf,
        output: PathBuf,
        /// Report file [default: OUTPUT with extension report.txt].
        #[arg(long)]
        report: Option<PathBuf>,
        /// Kernel gallery directory [default: OUTPUT with extension kernels].
        #[arg(long)]
        kernels: Option<PathBuf>,
        /// Directory for per-patch solver traces.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Also write the merged illumination-corrected input.
        #[arg(long)]
        corrected: Option<PathBuf>,
        /// Known kernel file; skips kernel estimation.
        #[arg(long)]
        kernel: Option<PathBuf>,
    },
    /// Synthesize a degraded image from a truth image.
    Degrade {
        input: PathBuf,
        output: PathBuf,
        /// `identity`, `motion` (motion_* keys) or a kernel file.
        #[arg(long, default_value = "motion")]
        kernel: String,
        /// Also write the kernel that was applied.
        #[arg(long)]
        write_kernel: Option<PathBuf>,
    },
    /// PSNR and SSIM for TRUTH CANDIDATE pairs, printed as CSV.
    Eval {
        #[arg(required = true, num_args = 2.., value_names = ["TRUTH", "CANDIDATE"])]
        images: Vec<PathBuf>,
        /// Append the rows to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Error ratio of an estimated kernel against the true one, measured
        /// on the first truth image.
        #[arg(long, num_args = 2, value_names = ["EST", "TRUE"], action = ArgAction::Append)]
        kernel_pair: Vec<PathBuf>,
    },
    /// Write every shearlet subband of an image as a raster.
    ShearletDump { input: PathBuf, outdir: PathBuf },
    /// Sweep the TGV weight bounds and keep the best PSNR against TRUTH.
    GridSearch {
        truth: PathBuf,
        input: PathBuf,
        /// Known kernel file; otherwise each point runs the blind pipeline.
        #[arg(long)]
        kernel: Option<PathBuf>,
        /// Write all grid points as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the full config with the best bounds.
        #[arg(long)]
        best_config: Option<PathBuf>,
    },
}

/// Pulls `--key value` and `--key=value` pairs for config keys out of `args`
/// and returns the rest for the regular parser.
pub fn split_key_flags(args: Vec<String>) -> Result<(Vec<String>, Vec<(&'static str, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut keys = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--" {
            rest.push(arg);
            rest.extend(it.by_ref());
            break;
        }
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        match key_for_flag(name) {
            Some(key) => {
                let value = match inline {
                    Some(v) => v,
                    None => it
                        .next()
                        .ok_or_else(|| CliError::Config(format!("--{name} needs a value")))?,
                };
                keys.push((key, value));
            }
            None => rest.push(arg),
        }
    }
    Ok((rest, keys))
}

/// Runs the program on `args` (including the program name).
pub fn run(args: Vec<String>) -> Result<(), CliError> {
    let (rest, keys) = split_key_flags(args)?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.render().to_string();
            let msg = msg.strip_prefix("error: ").unwrap_or(&msg).trim_end();
            return Err(CliError::Config(msg.to_string()));
        }
    };

    let mut cfg = CliConfig::default();
    if let Some(p) = std::env::var_os(CONFIG_ENV).filter(|p| !p.is_empty()) {
        cfg.apply_file(Path::new(&p))?;
    }
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
    }
    if cli.noisy {
        cfg.preset_noisy();
    }
    if cli.noise_free {
        cfg.preset_noise_free();
    }
    for (key, value) in &keys {
        cfg.set(key, value)?;
    }
    cfg.validate()?;

    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Config("no subcommand given (see --help)".into()));
    };
    let depth = if cli.sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight };
    let ctx = Context { cfg, depth };

    match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(|| ctx.dispatch(command)),
        None => ctx.dispatch(command),
    }
}

struct Context {
    cfg: CliConfig,
    depth: BitDepth,
}

impl Context {
    fn dispatch(&self, command: Command) -> Result<(), CliError> {
        match command {
            Command::Correct { input, output, dump_illumination, trace } => {
                self.correct(&input, &output, dump_illumination, trace)
            }
            Command::Restore { input, output, report, kernels, trace_dir, corrected, kernel } => {
                let report = report.unwrap_or_else(|| output.with_extension("report.txt"));
                let kernels = kernels.unwrap_or_else(|| output.with_extension("kernels"));
                self.restore(&input, &output, report, kernels, trace_dir, corrected, kernel)
            }
            Command::Degrade { input, output, kernel, write_kernel } => {
                self.degrade(&input, &output, &kernel, write_kernel)
            }
            Command::Eval { images, csv, kernel_pair } => self.eval(&images, csv, &kernel_pair),
            Command::ShearletDump { input, outdir } => self.shearlet_dump(&input, &outdir),
            Command::GridSearch { truth, input, kernel, csv, best_config } => {
                self.grid_search(&truth, &input, kernel, csv, best_config)
            }
        }
    }

    fn retinex(&self) -> Option<&aerodeblur_core::retinex::RetinexConfig> {
        self.cfg.harness.correct.then_some(&self.cfg.retinex)
    }

    fn correct(&self, input: &Path, output: &Path, illum: Option<PathBuf>, trace: Option<PathBuf>) -> Result<(), CliError> {
        let g = load_image(input)?;
        eprintln!("correcting {} ({}x{})", input.display(), g.width(), g.height());
        let out = correct_illumination(&g, &self.cfg.retinex)?;
        eprintln!("{} iterations, converged {}", out.trace.len(), out.converged);
        let mut files = Outputs::new();
        files.image(output, &out.reflectance, self.depth)?;
        if let Some(p) = illum {
            files.image(p, &out.illumination, self.depth)?;
        }
        if let Some(p) = trace {
            files.file(p, out.trace_csv());
        }
        files.commit()
    }

    #[allow(clippy::too_many_arguments)]
    fn restore(
        &self,
        input: &Path,
        output: &Path,
        report: PathBuf,
        gallery: PathBuf,
        trace_dir: Option<PathBuf>,
        corrected: Option<PathBuf>,
        kernel: Option<PathBuf>,
    ) -> Result<(), CliError> {
        let g = load_image(input)?;
        let mut rc = self.cfg.restore.clone();
        if let Some(p) = kernel {
            rc.fixed_kernel = Some(load_kernel(&p)?.kernel);
        }
        eprintln!(
            "restoring {} ({}x{}) with {} threads",
            input.display(),
            g.width(),
            g.height(),
            rayon::current_num_threads()
        );
        let out = restore_image(&g, self.retinex(), &rc)?;
        let unconverged = out.reports.iter().filter(|r| !r.converged).count();
        eprintln!("{} patches, {} stopped at the iteration cap", out.reports.len(), unconverged);

        let mut files = Outputs::new();
        files.image(output, &out.image, self.depth)?;
        files.file(report, out.report_text());
        files.dir(&gallery);
        for (i, k) in out.kernels.iter().enumerate() {
            files.file(gallery.join(format!("patch_{i:03}.txt")), kernel_text(k));
        }
        files.file(gallery.join("consensus.txt"), kernel_text(&out.consensus_kernel()?));
        if let Some(dir) = trace_dir {
            files.dir(&dir);
            for (i, s) in out.solutions.iter().enumerate() {
                files.file(dir.join(format!("patch_{i:03}.csv")), s.trace_csv());
            }
        }
        if let Some(p) = corrected {
            files.image(p, &out.corrected, self.depth)?;
        }
        files.commit()
    }

    fn degrade(&self, input: &Path, output: &Path, kernel: &str, write_kernel: Option<PathBuf>) -> Result<(), CliError> {
        let h = &self.cfg.harness;
        let truth = load_image(input)?;
        let kernel = match kernel {
            "identity" => BlurKernel::identity(),
            "motion" => synth_motion_kernel(h.motion_length, h.motion_angle, h.motion_size)?,
            path => load_kernel(Path::new(path))?.kernel,
        };
        let spec = DegradationSpec {
            kernel,
            illumination: h.illumination(),
            noise_sigma: h.sigma,
            seed: h.seed,
        };
        let g = degrade(&truth, &spec)?;
        let mut files = Outputs::new();
        files.image(output, &g, self.depth)?;
        if let Some(p) = write_kernel {
            files.file(p, kernel_text(&spec.kernel));
        }
        files.commit()
    }

    fn eval(&self, images: &[PathBuf], csv: Option<PathBuf>, kernel_pairs: &[PathBuf]) -> Result<(), CliError> {
        if images.len() % 2 != 0 {
            return Err(CliError::Config("eval takes TRUTH CANDIDATE pairs".into()));
        }
        let mut rows = String::new();
        let mut first_truth = None;
        for pair in images.chunks(2) {
            let truth = load_image(&pair[0])?;
            let cand = load_image(&pair[1])?;
            let p = psnr(&truth, &cand)?;
            let s = ssim(&truth, &cand)?;
            let _ = writeln!(rows, "image,{},{},{p:.4},{s:.6},", pair[0].display(), pair[1].display());
            first_truth.get_or_insert(truth);
        }
        if !kernel_pairs.is_empty() {
            let truth = first_truth.as_ref().expect("at least one image pair");
            let nonblind = RestoreConfig {
                fixed_kernel: None,
                ..self.cfg.restore.clone()
            };
            for pair in kernel_pairs.chunks(2) {
                let est = load_kernel(&pair[0])?.kernel;
                let tru = load_kernel(&pair[1])?.kernel;
                let er = error_ratio(truth, &est, &tru, &nonblind)?;
                let _ = writeln!(rows, "kernel,{},{},,,{:.6}", pair[0].display(), pair[1].display(), er.ratio);
            }
        }
        let header = "kind,reference,candidate,psnr,ssim,error_ratio\n";
        print!("{header}{rows}");
        if let Some(p) = csv {
            let mut text = match std::fs::read_to_string(&p) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
                Err(e) => return Err(CliError::io(&p, e)),
            };
            if text.is_empty() {
                text.push_str(header);
            } else if !text.ends_with('\n') {
                text.push('\n');
            }
            text.push_str(&rows);
            write_atomic(&p, text.as_bytes())?;
        }
        Ok(())
    }

    fn shearlet_dump(&self, input: &Path, outdir: &Path) -> Result<(), CliError> {
        let img = load_image(input)?;
        let sys = system_for(img.width(), img.height(), &self.cfg.restore)?;
        let stack = sys.forward(&img)?;
        let mut files = Outputs::new();
        files.dir(outdir);
        let mut index = String::from("band kind scale shear cone min max\n");
        for (i, band) in stack.bands().iter().enumerate() {
            let (lo, hi) = (band.min(), band.max());
            let span = if hi > lo { hi - lo } else { 1.0 };
            let raster = band.map(|v| (v - lo) / span);
            files.image(outdir.join(format!("band_{i:02}.png")), &raster, self.depth)?;
            let desc = match sys.kind(i) {
                SubbandKind::Directional { scale, shear, cone } => format!("directional {scale} {shear} {cone:?}"),
                SubbandKind::Residual => "residual - - -".to_string(),
            };
            let _ = writeln!(index, "{i} {desc} {lo:e} {hi:e}");
        }
        files.file(outdir.join("bands.txt"), index);
        eprintln!("{} subbands written to {}", stack.len(), outdir.display());
        files.commit()
    }

    fn grid_search(
        &self,
        truth_path: &Path,
        input: &Path,
        kernel: Option<PathBuf>,
        csv: Option<PathBuf>,
        best_config: Option<PathBuf>,
    ) -> Result<(), CliError> {
        let truth = load_image(truth_path)?;
        let g = load_image(input)?;
        truth.check_same_shape(&g, "grid-search inputs")?;
        let h = &self.cfg.harness;
        let fixed = kernel.map(|p| load_kernel(&p)).transpose()?.map(|k| k.kernel);
        let mut rows = String::from("alpha_max,alpha_min,psnr,ssim\n");
        let mut best: Option<(f64, f64)> = None;
        for a in geometric_grid(h.grid_min, h.grid_max, h.grid_steps) {
            let mut rc = self.cfg.restore.clone();
            rc.tgv.alpha0_max = a;
            rc.tgv.alpha1_max = a;
            rc.tgv.alpha0_min = a / 10.0;
            rc.tgv.alpha1_min = a / 10.0;
            rc.fixed_kernel = fixed.clone();
            let out = restore_image(&g, self.retinex(), &rc)?;
            let p = psnr(&truth, &out.image)?;
            let s = ssim(&truth, &out.image)?;
            eprintln!("alpha_max {a:e}: psnr {p:.3} ssim {s:.4}");
            let _ = writeln!(rows, "{a:e},{:e},{p:.4},{s:.6}", a / 10.0);
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((a, p));
            }
        }
        let (a, p) = best.expect("grid has at least one point");
        eprintln!("best alpha_max {a:e} (psnr {p:.3})");
        let mut files = Outputs::new();
        if let Some(path) = csv {
            files.file(path, rows);
        }
        if let Some(path) = best_config {
            let mut cfg = self.cfg.clone();
            cfg.restore.tgv.alpha0_max = a;
            cfg.restore.tgv.alpha1_max = a;
            cfg.restore.tgv.alpha0_min = a / 10.0;
            cfg.restore.tgv.alpha1_min = a / 10.0;
            files.file(path, cfg.to_text());
        }
        files.commit()
    }
}

/// `steps` values spaced evenly in log from `lo` to `hi`.
pub fn geometric_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (steps - 1) as f64;
    (0..steps).map(|i| lo * (ratio * i as f64).exp()).collect()
}
