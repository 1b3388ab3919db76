use aerodeblur_core::image::Image;
use aerodeblur_core::retinex::{
    compute_weights, correct_illumination, region_variance, retinex_gradient, retinex_objective,
    select_sharp_window, DescentMode, PatchDomain, RetinexConfig, WEIGHT_CUTOFF,
};
use proptest::prelude::*;

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed | 1;
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn random_log_image(w: usize, h: usize, seed: u64) -> Image {
    let mut next = lcg(seed);
    Image::from_fn(w, h, |_, _| -0.05 - 2.0 * next())
}

fn literal_weight(img: &Image, x: (usize, usize), y: (usize, usize), cfg: &RetinexConfig) -> f64 {
    let pr = cfg.patch_radius as isize;
    let val = |v: f64| match cfg.patch_domain {
        PatchDomain::Log => v,
        PatchDomain::Gray8 => 255.0 * v.exp(),
    };
    let mut d2 = 0.0;
    for i in -pr..=pr {
        for j in -pr..=pr {
            let a = val(img.get_clamped(x.0 as isize + i, x.1 as isize + j));
            let b = val(img.get_clamped(y.0 as isize + i, y.1 as isize + j));
            d2 += (a - b) * (a - b);
        }
    }
    let w = (-d2 / (2.0 * cfg.h * cfg.h)).exp();
    if w > WEIGHT_CUTOFF {
        w
    } else {
        0.0
    }
}

fn literal_objective(r: &Image, g: &Image, wref: &Image, cfg: &RetinexConfig) -> f64 {
    let (w, h) = (r.width(), r.height());
    let half = (cfg.window / 2) as isize;
    let mut fid = 0.0;
    let mut gray = 0.0;
    let mut nl = 0.0;
    for a in 0..h {
        for b in 0..w {
            let d = |rr: usize, cc: usize| r.get(rr, cc) - g.get(rr, cc);
            let down = if a + 1 < h { d(a + 1, b) - d(a, b) } else { 0.0 };
            let right = if b + 1 < w { d(a, b + 1) - d(a, b) } else { 0.0 };
            fid += down * down + right * right;
            gray += (r.get(a, b) - 0.5f64.ln()).powi(2);
            let mut s = 0.0;
            for c in 0..h {
                for e in 0..w {
                    let (dy, dx) = (c as isize - a as isize, e as isize - b as isize);
                    if dy.abs() > half || dx.abs() > half {
                        continue;
                    }
                    let wt = literal_weight(wref, (a, b), (c, e), cfg);
                    s += wt * (r.get(a, b) - r.get(c, e)).powi(2);
                }
            }
            nl += (s + cfg.eps_nl).sqrt() - cfg.eps_nl.sqrt();
        }
    }
    fid + cfg.eta0 * gray + cfg.eta1 * nl
}

fn cfg8() -> RetinexConfig {
    RetinexConfig {
        window: 5,
        patch_domain: PatchDomain::Log,
        ..RetinexConfig::default()
    }
}

#[test]
fn objective_matches_triple_loop() {
    for seed in 0..3 {
        let cfg = cfg8();
        let r = random_log_image(8, 8, 100 + seed);
        let g = random_log_image(8, 8, 200 + seed);
        let wref = random_log_image(8, 8, 300 + seed);
        let wts = compute_weights(&wref, &cfg);
        let fast = retinex_objective(&r, &g, &wts, &cfg).unwrap();
        let slow = literal_objective(&r, &g, &wref, &cfg);
        assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0), "{fast} vs {slow}");
    }
}

#[test]
fn weights_match_literal_and_are_symmetric() {
    for domain in [PatchDomain::Log, PatchDomain::Gray8] {
        let cfg = RetinexConfig {
            patch_domain: domain,
            h: if domain == PatchDomain::Log { 2.0 } else { 40.0 },
            ..cfg8()
        };
        check_weights(&cfg);
    }
}

fn check_weights(cfg: &RetinexConfig) {
    let img = random_log_image(9, 7, 4);
    let wts = compute_weights(&img, &cfg);
    for a in 0..7usize {
        for b in 0..9usize {
            for dy in -2isize..=2 {
                for dx in -2isize..=2 {
                    let (c, e) = (a as isize + dy, b as isize + dx);
                    if c < 0 || e < 0 || c >= 7 || e >= 9 {
                        assert_eq!(wts.weight(a, b, dy, dx), 0.0);
                        continue;
                    }
                    let want = literal_weight(&img, (a, b), (c as usize, e as usize), cfg);
                    let got = wts.weight(a, b, dy, dx);
                    assert!((got - want).abs() < 1e-14);
                    assert!(got >= 0.0 && got <= 1.0);
                    assert_eq!(got, wts.weight(c as usize, e as usize, -dy, -dx));
                }
            }
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..10 {
        // log-domain patches keep most weights well above the cutoff
        let cfg = RetinexConfig {
            eps_nl: 1e-6,
            ..cfg8()
        };
        let r = random_log_image(8, 8, 10 + seed);
        let g = random_log_image(8, 8, 50 + seed);
        let wts = compute_weights(&r, &cfg);
        let grad = retinex_gradient(&r, &g, &wts, &cfg).unwrap();
        let step = 1e-6;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..r.len() {
            let mut plus = r.clone();
            plus.data_mut()[i] += step;
            let mut minus = r.clone();
            minus.data_mut()[i] -= step;
            let fd = (retinex_objective(&plus, &g, &wts, &cfg).unwrap()
                - retinex_objective(&minus, &g, &wts, &cfg).unwrap())
                / (2.0 * step);
            num += (fd - grad.data()[i]).powi(2);
            den += fd * fd;
        }
        let rel = (num / den).sqrt();
        assert!(rel <= 1e-5, "seed {seed}: relative error {rel}");
    }
}

#[test]
fn descent_is_monotone_between_weight_refreshes() {
    let mut next = lcg(77);
    let g = Image::from_fn(32, 32, |r, c| {
        let tex = if (r / 4 + c / 4) % 2 == 0 { 0.7 } else { 0.35 };
        (tex + 0.1 * next()) * (0.3 + 0.7 * c as f64 / 31.0)
    });
    for mode in [DescentMode::Gradient, DescentMode::Preconditioned] {
        let cfg = RetinexConfig {
            window: 9,
            iter_max: 30,
            mode,
            ..RetinexConfig::default()
        };
        let out = correct_illumination(&g, &cfg).unwrap();
        assert!(!out.trace.is_empty());
        for pair in out.trace.windows(2) {
            if !pair[1].refreshed {
                assert!(pair[1].objective <= pair[0].objective, "{:?}", pair);
            }
            assert!(pair[1].max_log_reflectance <= 0.0);
        }
    }
}

#[test]
fn sharp_window_matches_exhaustive_scan() {
    let mut next = lcg(9);
    let img = Image::from_fn(14, 11, |_, _| next());
    let ((r, c), v) = select_sharp_window(&img, 4).unwrap();
    for rr in 0..=7 {
        for cc in 0..=10 {
            assert!(region_variance(&img, rr, cc, 4).unwrap() <= v);
        }
    }
    assert_eq!(region_variance(&img, r, c, 4).unwrap(), v);
}

proptest! {
    #[test]
    fn variance_matches_two_pass(seed in any::<u64>(), win in 2usize..6) {
        let mut next = lcg(seed);
        let img = Image::from_fn(8, 8, |_, _| next());
        let v = region_variance(&img, 1, 2, win).unwrap();
        let vals: Vec<f64> = (0..win).flat_map(|i| (0..win).map(move |j| (i, j)))
            .map(|(i, j)| img.get_clamped(1 + i as isize, 2 + j as isize)).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let want = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (vals.len() as f64 - 1.0);
        prop_assert!((v - want).abs() < 1e-12);
    }
}
