//! Image and kernel files. Every write goes to a temporary file in the target
//! directory and is renamed into place once complete.

use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use aerodeblur_core::{BlurKernel, Image};
use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::CliError;

/// Kernel sums further than this from 1 are reported when loading.
pub const KERNEL_SUM_REPORT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Pgm,
    Png,
}

fn format_for(path: &Path) -> Result<Format, CliError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pgm" | "pnm") => Ok(Format::Pgm),
        Some("png") => Ok(Format::Png),
        _ => Err(CliError::Io(format!(
            "{}: unsupported format (expected .pgm or .png)",
            path.display()
        ))),
    }
}

/// Reads an 8- or 16-bit grayscale PGM or PNG, mapped linearly to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image, CliError> {
    let reader = ImageReader::open(path)
        .map_err(|e| CliError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| CliError::io(path, e))?;
    let decoded = reader.decode().map_err(|e| CliError::io(path, e))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        _ => return Err(CliError::io(path, "grayscale required")),
    };
    Ok(Image::new(w, h, data)?)
}

/// Quantizes with round-half-up after clamping to `[0, 1]`.
pub fn quantize(v: f64, depth: BitDepth) -> u16 {
    let m = depth.max();
    (v.clamp(0.0, 1.0) * m + 0.5).floor().min(m) as u16
}

/// Encodes in the format implied by the extension of `path`.
pub fn encode_image(img: &Image, path: &Path, depth: BitDepth) -> Result<Vec<u8>, CliError> {
    if format_for(path)? == Format::Pgm {
        return Ok(pgm_bytes(img, depth));
    }
    let (bytes, color) = match depth {
        BitDepth::Eight => (
            img.data().iter().map(|&v| quantize(v, depth) as u8).collect::<Vec<u8>>(),
            ExtendedColorType::L8,
        ),
        BitDepth::Sixteen => (
            img.data()
                .iter()
                .flat_map(|&v| quantize(v, depth).to_ne_bytes())
                .collect(),
            ExtendedColorType::L16,
        ),
    };
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new(&mut out)
        .write_image(&bytes, img.width() as u32, img.height() as u32, color)
        .map_err(|e| CliError::io(path, e))?;
    Ok(out.into_inner())
}

/// Binary PGM; 16-bit samples are big-endian.
fn pgm_bytes(img: &Image, depth: BitDepth) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), depth.max()).into_bytes();
    for &v in img.data() {
        let q = quantize(v, depth);
        match depth {
            BitDepth::Eight => out.push(q as u8),
            BitDepth::Sixteen => out.extend_from_slice(&q.to_be_bytes()),
        }
    }
    out
}

pub fn save_image(img: &Image, path: &Path, depth: BitDepth) -> Result<(), CliError> {
    let bytes = encode_image(img, path, depth)?;
    write_atomic(path, &bytes)
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".partial-")
        .tempfile_in(&dir)
        .map_err(|e| CliError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Output files produced by a command, held in memory until the whole
/// computation has succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    dirs: Vec<PathBuf>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dir(&mut self, path: impl Into<PathBuf>) {
        self.dirs.push(path.into());
    }

    pub fn file(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    pub fn image(&mut self, path: impl Into<PathBuf>, img: &Image, depth: BitDepth) -> Result<(), CliError> {
        let path = path.into();
        let bytes = encode_image(img, &path, depth)?;
        self.files.push((path, bytes));
        Ok(())
    }

    pub fn commit(self) -> Result<(), CliError> {
        for d in &self.dirs {
            std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
        }
        for (path, bytes) in &self.files {
            write_atomic(path, bytes)?;
        }
        Ok(())
    }
}

/// A kernel read from text, with the amount its sum was off from 1.
#[derive(Debug, Clone)]
pub struct LoadedKernel {
    pub kernel: BlurKernel,
    pub sum_correction: f64,
}

/// Parses `rows cols` followed by row-major taps, renormalizing to unit sum.
pub fn parse_kernel(text: &str) -> Result<LoadedKernel, String> {
    let mut tokens = text.split_whitespace();
    let mut dim = |what: &str| -> Result<usize, String> {
        tokens
            .next()
            .ok_or(format!("missing {what}"))?
            .parse::<usize>()
            .map_err(|e| format!("bad {what}: {e}"))
    };
    let rows = dim("row count")?;
    let cols = dim("column count")?;
    if rows != cols || rows % 2 == 0 {
        return Err(format!("kernel must be square with odd side, got {rows}x{cols}"));
    }
    let taps = tokens
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad tap {t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if taps.len() != rows * cols {
        return Err(format!("expected {} taps, found {}", rows * cols, taps.len()));
    }
    if taps.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err("taps must be finite and non-negative".into());
    }
    let sum: f64 = taps.iter().sum();
    if !(sum > 0.0) {
        return Err("taps sum to zero".into());
    }
    let kernel = BlurKernel::new(rows, taps.iter().map(|t| t / sum).collect()).map_err(|e| e.to_string())?;
    Ok(LoadedKernel {
        kernel,
        sum_correction: (sum - 1.0).abs(),
    })
}

pub fn load_kernel(path: &Path) -> Result<LoadedKernel, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let k = parse_kernel(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if k.sum_correction > KERNEL_SUM_REPORT {
        eprintln!(
            "{}: kernel renormalized (sum was off by {:e})",
            path.display(),
            k.sum_correction
        );
    }
    Ok(k)
}

/// The kernel file format: `rows cols`, then one line of taps per row.
pub fn kernel_text(k: &BlurKernel) -> String {
    let n = k.size();
    let mut s = format!("{n} {n}\n");
    for row in k.weights().chunks(n) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5 / 255.0, BitDepth::Eight), 1);
        assert_eq!(quantize(0.49 / 255.0, BitDepth::Eight), 0);
        assert_eq!(quantize(1.3, BitDepth::Eight), 255);
        assert_eq!(quantize(-0.2, BitDepth::Sixteen), 0);
    }

    #[test]
    fn kernel_text_round_trips() {
        let k = BlurKernel::project(3, &[0.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let back = parse_kernel(&kernel_text(&k)).unwrap();
        assert!(back.kernel.linf_distance(&k) < 1e-15);
    }

    #[test]
    fn unnormalized_kernel_is_rescaled() {
        let k = parse_kernel("1 1\n2.5\n").unwrap();
        assert_eq!(k.kernel.weights(), &[1.0]);
        assert!((k.sum_correction - 1.5).abs() < 1e-15);
    }

    #[test]
    fn malformed_kernels_are_rejected() {
        assert!(parse_kernel("2 2\n1 1 1 1").is_err());
        assert!(parse_kernel("3 3\n1 1").is_err());
        assert!(parse_kernel("1 1\n-1").is_err());
    }
}
