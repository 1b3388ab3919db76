//! Point spread functions.

use crate::error::{Error, Result};
use crate::image::Image;

/// Largest kernel side accepted by default.
pub const DEFAULT_MAX_KERNEL_SIZE: usize = 21;

const SUM_TOLERANCE: f64 = 1e-10;

/// A square, odd-sized, nonnegative blur kernel whose weights sum to one.
///
/// Weights are indexed relative to the geometric center, so `offset(a, b)`
/// with `a, b` in `-radius..=radius` addresses every tap.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    /// Validates an explicit set of weights.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::InvalidKernel(format!("size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "expected {} weights for size {size}, got {}",
                size * size,
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidKernel(format!("weight {w} is negative or non-finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidKernel(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { size, weights })
    }

    /// Clamps negative taps to zero and rescales to unit sum. Falls back to the
    /// centered impulse when nothing positive survives.
    pub fn project(size: usize, raw: &[f64]) -> Result<Self> {
        if size == 0 || size % 2 == 0 || raw.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "cannot project {} taps onto an odd {size}x{size} support",
                raw.len()
            )));
        }
        let mut weights: Vec<f64> = raw
            .iter()
            .map(|&w| if w.is_finite() && w > 0.0 { w } else { 0.0 })
            .collect();
        let sum: f64 = weights.iter().sum();
        if !(sum > 1e-300) {
            return Ok(Self::delta(size));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Self { size, weights })
    }

    /// Centered unit impulse.
    pub fn delta(size: usize) -> Self {
        assert!(size % 2 == 1, "kernel size must be odd");
        let mut weights = vec![0.0; size * size];
        weights[(size / 2) * size + size / 2] = 1.0;
        Self { size, weights }
    }

    /// The 1x1 identity kernel.
    pub fn identity() -> Self {
        Self::delta(1)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    /// Tap at offset `(dr, dc)` from the center; zero outside the support.
    pub fn offset(&self, dr: isize, dc: isize) -> f64 {
        let r = self.radius() as isize;
        if dr.abs() > r || dc.abs() > r {
            return 0.0;
        }
        self.get((dr + r) as usize, (dc + r) as usize)
    }

    /// Rotates the kernel by 180 degrees.
    pub fn flipped(&self) -> Self {
        let mut weights = self.weights.clone();
        weights.reverse();
        Self {
            size: self.size,
            weights,
        }
    }

    /// Kernel as a `size x size` image, for dumping or inspection.
    pub fn to_image(&self) -> Image {
        Image::new(self.size, self.size, self.weights.clone()).expect("kernel weights are finite")
    }

    /// Places the taps on a `width x height` periodic grid with the kernel
    /// center at the origin, the layout expected by FFT-based convolution.
    pub fn embed(&self, width: usize, height: usize) -> Result<Vec<f64>> {
        if self.size > width || self.size > height {
            return Err(Error::InvalidKernel(format!(
                "kernel of size {} does not fit a {width}x{height} grid",
                self.size
            )));
        }
        let r = self.radius() as isize;
        let mut grid = vec![0.0; width * height];
        for a in -r..=r {
            for b in -r..=r {
                let row = a.rem_euclid(height as isize) as usize;
                let col = b.rem_euclid(width as isize) as usize;
                grid[row * width + col] += self.offset(a, b);
            }
        }
        Ok(grid)
    }

    /// Resamples onto a larger odd support by bilinear interpolation, stretching
    /// the kernel about its center, then projects back to a valid kernel.
    pub fn upsample(&self, new_size: usize) -> Result<Self> {
        if new_size % 2 == 0 || new_size < self.size {
            return Err(Error::InvalidKernel(format!(
                "cannot upsample size {} to {new_size}",
                self.size
            )));
        }
        if new_size == self.size {
            return Ok(self.clone());
        }
        let scale = self.size as f64 / new_size as f64;
        let c_old = self.radius() as f64;
        let c_new = (new_size / 2) as f64;
        let sample = |y: f64, x: f64| -> f64 {
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = (y - y0, x - x0);
            let tap = |yy: f64, xx: f64| {
                if yy < 0.0 || xx < 0.0 || yy >= self.size as f64 || xx >= self.size as f64 {
                    0.0
                } else {
                    self.get(yy as usize, xx as usize)
                }
            };
            (1.0 - fy) * (1.0 - fx) * tap(y0, x0)
                + (1.0 - fy) * fx * tap(y0, x0 + 1.0)
                + fy * (1.0 - fx) * tap(y0 + 1.0, x0)
                + fy * fx * tap(y0 + 1.0, x0 + 1.0)
        };
        let mut raw = Vec::with_capacity(new_size * new_size);
        for r in 0..new_size {
            for c in 0..new_size {
                let y = (r as f64 - c_new) * scale + c_old;
                let x = (c as f64 - c_new) * scale + c_old;
                raw.push(sample(y, x));
            }
        }
        Self::project(new_size, &raw)
    }

    /// Shifts the taps by whole pixels so their centroid sits on the center.
    /// Mass pushed off the support is dropped before renormalizing.
    pub fn recentered(&self) -> Result<Self> {
        let n = self.size;
        let c = self.radius() as f64;
        let (mut mr, mut mc) = (0.0, 0.0);
        for r in 0..n {
            for col in 0..n {
                mr += r as f64 * self.get(r, col);
                mc += col as f64 * self.get(r, col);
            }
        }
        let (dr, dc) = ((mr - c).round() as isize, (mc - c).round() as isize);
        let raw: Vec<f64> = (0..n * n)
            .map(|i| {
                let (r, col) = ((i / n) as isize + dr, (i % n) as isize + dc);
                if r < 0 || col < 0 || r >= n as isize || col >= n as isize {
                    0.0
                } else {
                    self.get(r as usize, col as usize)
                }
            })
            .collect();
        Self::project(n, &raw)
    }

    /// Mass on the outermost ring of the support.
    pub fn boundary_ring_mass(&self) -> f64 {
        let n = self.size;
        if n == 1 {
            return 0.0;
        }
        let mut m = 0.0;
        for r in 0..n {
            for c in 0..n {
                if r == 0 || c == 0 || r == n - 1 || c == n - 1 {
                    m += self.get(r, c);
                }
            }
        }
        m
    }

    /// Mass inside the centered `window x window` square.
    pub fn central_mass(&self, window: usize) -> f64 {
        let half = (window / 2) as isize;
        let r = self.radius() as isize;
        let mut m = 0.0;
        for a in -r..=r {
            for b in -r..=r {
                if a.abs() <= half && b.abs() <= half {
                    m += self.offset(a, b);
                }
            }
        }
        m
    }

    /// Zero-pads (or centrally crops) to another odd size without renormalizing
    /// the surviving taps beyond a final projection.
    pub fn resize_support(&self, new_size: usize) -> Result<Self> {
        if new_size % 2 == 0 {
            return Err(Error::InvalidKernel(format!("size must be odd, got {new_size}")));
        }
        let r = (new_size / 2) as isize;
        let mut raw = Vec::with_capacity(new_size * new_size);
        for a in -r..=r {
            for b in -r..=r {
                raw.push(self.offset(a, b));
            }
        }
        Self::project(new_size, &raw)
    }

    /// Sum of absolute tap differences after aligning both kernels at their
    /// centers.
    pub fn l1_distance(&self, other: &BlurKernel) -> f64 {
        self.aligned_diffs(other).map(f64::abs).sum()
    }

    /// Largest absolute tap difference after center alignment.
    pub fn linf_distance(&self, other: &BlurKernel) -> f64 {
        self.aligned_diffs(other).map(f64::abs).fold(0.0, f64::max)
    }

    fn aligned_diffs<'a>(&'a self, other: &'a BlurKernel) -> impl Iterator<Item = f64> + 'a {
        let r = self.radius().max(other.radius()) as isize;
        (-r..=r).flat_map(move |a| (-r..=r).map(move |b| self.offset(a, b) - other.offset(a, b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_invariants() {
        assert!(BlurKernel::new(2, vec![0.25; 4]).is_err());
        assert!(BlurKernel::new(1, vec![0.5]).is_err());
        assert!(BlurKernel::new(3, vec![-0.1, 1.1, 0., 0., 0., 0., 0., 0., 0.]).is_err());
        assert!(BlurKernel::new(3, vec![1.0 / 9.0; 9]).is_ok());
    }

    #[test]
    fn projection_clamps_and_normalizes() {
        let k = BlurKernel::project(3, &[-1.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(k.get(0, 0), 0.0);
        assert!((k.get(0, 1) - 0.5).abs() < 1e-15);
        let k = BlurKernel::project(3, &[-1.0; 9]).unwrap();
        assert_eq!(k, BlurKernel::delta(3));
    }

    #[test]
    fn embed_places_center_at_origin() {
        let k = BlurKernel::delta(3);
        let g = k.embed(4, 4).unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(g.iter().sum::<f64>(), 1.0);
        assert!(BlurKernel::delta(5).embed(4, 8).is_err());
    }

    #[test]
    fn upsampling_keeps_delta_centered_and_valid() {
        let k = BlurKernel::delta(3).upsample(5).unwrap();
        assert_eq!(k.size(), 5);
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(k.central_mass(3) > 0.99);
        let mut w = vec![0.0; 9];
        w[3] = 0.5;
        w[5] = 0.5;
        let line = BlurKernel::new(3, w).unwrap().upsample(7).unwrap();
        // a horizontal line stays mirror-symmetric and peaked on its own row
        let row_mass = |r: usize| (0..7).map(|c| line.get(r, c)).sum::<f64>();
        for r in 0..7 {
            assert!((row_mass(r) - row_mass(6 - r)).abs() < 1e-12);
            if r != 3 {
                assert!(row_mass(r) < row_mass(3));
            }
        }
    }

    #[test]
    fn ring_mass_and_distances() {
        let k = BlurKernel::new(3, vec![1.0 / 9.0; 9]).unwrap();
        assert!((k.boundary_ring_mass() - 8.0 / 9.0).abs() < 1e-12);
        let d = BlurKernel::delta(5);
        assert_eq!(d.l1_distance(&BlurKernel::identity()), 0.0);
        assert!((k.linf_distance(&BlurKernel::delta(3)) - 8.0 / 9.0).abs() < 1e-12);
    }
}
