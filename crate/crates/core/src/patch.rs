//! Overlapping square patch partition and averaging merge.

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_PATCH_SIZE: usize = 64;
pub const DEFAULT_OVERLAP: usize = 32;

/// Top-left corners of square patches covering an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    patch_size: usize,
    overlap: usize,
    width: usize,
    height: usize,
    corners: Vec<(usize, usize)>,
}

/// Start offsets along one axis: regular stride, with the last patch pushed
/// back inside the image.
fn axis_starts(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    loop {
        if s + patch >= extent {
            starts.push(extent - patch);
            break;
        }
        starts.push(s);
        s += stride;
    }
    starts.dedup();
    starts
}

impl PatchGrid {
    pub fn new(width: usize, height: usize, patch_size: usize, overlap: usize) -> Result<Self> {
        if patch_size == 0 || overlap >= patch_size {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= overlap < patch_size, got overlap {overlap}, patch {patch_size}"
            )));
        }
        if patch_size > width.min(height) {
            return Err(Error::InvalidDimensions(format!(
                "patch size {patch_size} exceeds image {width}x{height}"
            )));
        }
        let stride = patch_size - overlap;
        let rows = axis_starts(height, patch_size, stride);
        let cols = axis_starts(width, patch_size, stride);
        let corners = rows
            .iter()
            .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
            .collect();
        Ok(Self {
            patch_size,
            overlap,
            width,
            height,
            corners,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(row, col)` of each patch's top-left pixel, in row-major order.
    pub fn corners(&self) -> &[(usize, usize)] {
        &self.corners
    }

    pub fn len(&self) -> usize {
        self.corners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corners.is_empty()
    }

    /// Number of patches covering each pixel.
    pub fn coverage(&self) -> Vec<u32> {
        let mut count = vec![0u32; self.width * self.height];
        let p = self.patch_size;
        for &(r0, c0) in &self.corners {
            for r in r0..r0 + p {
                for c in c0..c0 + p {
                    count[r * self.width + c] += 1;
                }
            }
        }
        count
    }
}

/// Cuts the image into the patches of a fresh grid.
pub fn partition(img: &Image, patch_size: usize, overlap: usize) -> Result<(PatchGrid, Vec<Image>)> {
    let grid = PatchGrid::new(img.width(), img.height(), patch_size, overlap)?;
    let patches = extract(img, &grid)?;
    Ok((grid, patches))
}

/// Cuts the image along an existing grid.
pub fn extract(img: &Image, grid: &PatchGrid) -> Result<Vec<Image>> {
    if img.width() != grid.width || img.height() != grid.height {
        return Err(Error::ShapeMismatch(format!(
            "grid built for {}x{}, image is {}x{}",
            grid.width,
            grid.height,
            img.width(),
            img.height()
        )));
    }
    let p = grid.patch_size;
    Ok(grid
        .corners
        .iter()
        .map(|&(r, c)| img.crop(r, c, p, p))
        .collect())
}

/// Averages overlapping patches back into a full image.
pub fn merge(patches: &[Image], grid: &PatchGrid) -> Result<Image> {
    if patches.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "grid has {} patches, got {}",
            grid.len(),
            patches.len()
        )));
    }
    let p = grid.patch_size;
    let w = grid.width;
    let mut acc = vec![0.0; w * grid.height];
    let mut count = vec![0u32; w * grid.height];
    for (patch, &(r0, c0)) in patches.iter().zip(&grid.corners) {
        if patch.width() != p || patch.height() != p {
            return Err(Error::ShapeMismatch(format!(
                "expected {p}x{p} patch, got {}x{}",
                patch.width(),
                patch.height()
            )));
        }
        for r in 0..p {
            let row = &patch.data()[r * p..(r + 1) * p];
            let base = (r0 + r) * w + c0;
            for (c, &v) in row.iter().enumerate() {
                acc[base + c] += v;
                count[base + c] += 1;
            }
        }
    }
    let data = acc.iter().zip(&count).map(|(&a, &n)| a / n as f64).collect();
    Image::new(w, grid.height, data)
}

/// Pads by `margin` on every side so the result is smooth under periodic
/// wrap: each padded row (then column) ramps linearly from the last sample
/// back to the first across the `2·margin` gap.
pub fn pad_smooth(img: &Image, margin: usize) -> Image {
    if margin == 0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let gap = (2 * margin + 1) as f64;
    // distance, in samples, from the far edge across the gap
    let ramp = |i: usize, n: usize| -> Option<f64> {
        if i >= margin && i < margin + n {
            None
        } else if i >= margin + n {
            Some((i - margin - n + 1) as f64 / gap)
        } else {
            Some((i + margin + 1) as f64 / gap)
        }
    };
    let pw = w + 2 * margin;
    let rows = Image::from_fn(pw, h, |r, c| match ramp(c, w) {
        None => img.get(r, c - margin),
        Some(t) => (1.0 - t) * img.get(r, w - 1) + t * img.get(r, 0),
    });
    Image::from_fn(pw, h + 2 * margin, |r, c| match ramp(r, h) {
        None => rows.get(r - margin, c),
        Some(t) => (1.0 - t) * rows.get(h - 1, c) + t * rows.get(0, c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_patch() {
        let g = PatchGrid::new(64, 64, 64, 0).unwrap();
        assert_eq!(g.corners(), &[(0, 0)]);
    }

    #[test]
    fn half_overlap_corners() {
        let g = PatchGrid::new(96, 96, 64, 32).unwrap();
        assert_eq!(g.corners(), &[(0, 0), (0, 32), (32, 0), (32, 32)]);
    }

    #[test]
    fn last_patch_shifted_inward() {
        let g = PatchGrid::new(100, 64, 64, 16).unwrap();
        let cols: Vec<usize> = g.corners().iter().map(|c| c.1).collect();
        assert_eq!(cols, vec![0, 36]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PatchGrid::new(32, 32, 64, 0).is_err());
        assert!(PatchGrid::new(64, 64, 32, 32).is_err());
    }

    #[test]
    fn two_patches_average_in_shared_column() {
        let g = PatchGrid::new(3, 2, 2, 1).unwrap();
        assert_eq!(g.len(), 2);
        let a = Image::zeros(2, 2);
        let b = Image::filled(2, 2, 1.0);
        let m = merge(&[a, b], &g).unwrap();
        assert_eq!(m.data(), &[0.0, 0.5, 1.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn merge_rejects_mismatch() {
        let g = PatchGrid::new(4, 4, 2, 0).unwrap();
        assert!(merge(&[Image::zeros(2, 2)], &g).is_err());
    }

    proptest! {
        #[test]
        fn covers_every_pixel_and_round_trips(w in 1usize..40, h in 1usize..40, pf in 0.0f64..1.0, of in 0.0f64..1.0, seed in any::<u32>()) {
            let p = 1 + (pf * w.min(h) as f64) as usize % w.min(h);
            let o = (of * p as f64) as usize % p;
            let img = Image::from_fn(w, h, |r, c| ((r * 31 + c * 17 + seed as usize) % 97) as f64 / 97.0);
            let (grid, patches) = partition(&img, p, o).unwrap();
            prop_assert!(grid.coverage().iter().all(|&n| n >= 1));
            for &(r, c) in grid.corners() {
                prop_assert!(r + p <= h && c + p <= w);
            }
            let back = merge(&patches, &grid).unwrap();
            prop_assert!(back.max_abs_diff(&img) < 1e-12);
        }
    }
}
