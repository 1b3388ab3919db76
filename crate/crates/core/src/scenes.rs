//! Procedural ground-truth images for tests and benchmarks.
//!
//! Every scene is deterministic in its size and seed and stays inside
//! `[0.05, 0.95]` so degradations never saturate the truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scene {
    /// Field parcels, roads and rooftops seen from above.
    Aerial,
    /// Flat shapes on a flat background.
    Cartoon,
    /// Oriented gratings and a smooth ramp.
    Texture,
}

impl Scene {
    pub const ALL: [Scene; 3] = [Scene::Aerial, Scene::Cartoon, Scene::Texture];

    pub fn name(&self) -> &'static str {
        match self {
            Scene::Aerial => "aerial",
            Scene::Cartoon => "cartoon",
            Scene::Texture => "texture",
        }
    }

    pub fn from_name(s: &str) -> Option<Scene> {
        Scene::ALL.into_iter().find(|sc| sc.name() == s)
    }

    pub fn render(&self, size: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (*self as u64) << 32);
        let img = match self {
            Scene::Aerial => aerial(size, &mut rng),
            Scene::Cartoon => cartoon(size, &mut rng),
            Scene::Texture => texture(size, &mut rng),
        };
        img.map(|v| v.clamp(0.05, 0.95))
    }
}

/// The image used by the acceptance protocols.
pub fn reference_truth(size: usize) -> Image {
    Scene::Aerial.render(size, 2024)
}

fn aerial(n: usize, rng: &mut ChaCha8Rng) -> Image {
    let nf = n as f64;
    let mut img = vec![0.0; n * n];
    // Voronoi parcels with per-parcel tone and furrow direction.
    let parcels: Vec<(f64, f64, f64, f64)> = (0..(n / 12).max(4))
        .map(|_| {
            (
                rng.random::<f64>() * nf,
                rng.random::<f64>() * nf,
                0.3 + 0.4 * rng.random::<f64>(),
                rng.random::<f64>() * std::f64::consts::PI,
            )
        })
        .collect();
    for r in 0..n {
        for c in 0..n {
            let (y, x) = (r as f64, c as f64);
            let p = parcels
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - y).powi(2) + (a.1 - x).powi(2);
                    let db = (b.0 - y).powi(2) + (b.1 - x).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least one parcel");
            let furrow = (0.9 * (x * p.3.cos() + y * p.3.sin())).sin();
            img[r * n + c] = p.2 + 0.05 * furrow;
        }
    }
    // Roads: bright straight strips.
    for _ in 0..3 {
        let a = rng.random::<f64>() * std::f64::consts::PI;
        let off = (rng.random::<f64>() - 0.5) * nf * 0.6;
        let (s, co) = a.sin_cos();
        for r in 0..n {
            for c in 0..n {
                let d = (c as f64 - nf / 2.0) * s - (r as f64 - nf / 2.0) * co - off;
                if d.abs() < 1.6 {
                    img[r * n + c] = 0.85;
                }
            }
        }
    }
    // Rooftops with a dark shadow on their lower right.
    for _ in 0..(n / 10).max(3) {
        let h = 4 + rng.random_range(0..(n / 10).max(2));
        let w = 4 + rng.random_range(0..(n / 10).max(2));
        let r0 = rng.random_range(0..n.saturating_sub(h + 3).max(1));
        let c0 = rng.random_range(0..n.saturating_sub(w + 3).max(1));
        let tone = 0.6 + 0.3 * rng.random::<f64>();
        for r in r0..(r0 + h + 2).min(n) {
            for c in c0..(c0 + w + 2).min(n) {
                img[r * n + c] = if r < r0 + h && c < c0 + w { tone } else { 0.15 };
            }
        }
    }
    Image::new(n, n, img).expect("finite scene")
}

fn cartoon(n: usize, rng: &mut ChaCha8Rng) -> Image {
    let nf = n as f64;
    let mut img = vec![0.45; n * n];
    for _ in 0..6 {
        let cy = rng.random::<f64>() * nf;
        let cx = rng.random::<f64>() * nf;
        let rad = nf * (0.08 + 0.15 * rng.random::<f64>());
        let tone = 0.15 + 0.7 * rng.random::<f64>();
        let square = rng.random::<bool>();
        for r in 0..n {
            for c in 0..n {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                let inside = if square {
                    dy.abs().max(dx.abs()) < rad
                } else {
                    dy * dy + dx * dx < rad * rad
                };
                if inside {
                    img[r * n + c] = tone;
                }
            }
        }
    }
    Image::new(n, n, img).expect("finite scene")
}

fn texture(n: usize, rng: &mut ChaCha8Rng) -> Image {
    let nf = n as f64;
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random::<f64>() * std::f64::consts::PI,
                0.15 + 0.6 * rng.random::<f64>(),
                rng.random::<f64>() * std::f64::consts::TAU,
            )
        })
        .collect();
    Image::from_fn(n, n, |r, c| {
        let (y, x) = (r as f64, c as f64);
        let mut v = 0.35 + 0.3 * (x + y) / (2.0 * nf);
        for &(a, f, ph) in &waves {
            v += 0.07 * (f * (x * a.cos() + y * a.sin()) + ph).sin();
        }
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        for s in Scene::ALL {
            let a = s.render(64, 3);
            assert_eq!(a, s.render(64, 3));
            assert!(a.min() >= 0.05 && a.max() <= 0.95);
            assert!(a.norm_sq() > 0.0);
            assert_eq!(Scene::from_name(s.name()), Some(s));
        }
    }

    #[test]
    fn reference_truth_has_midtone_mean() {
        let t = reference_truth(128);
        assert!((t.mean() - 0.5).abs() < 0.15, "mean {}", t.mean());
    }
}
