use aerodeblur_core::degrade::{degrade, error_ratio, psnr, synth_motion_kernel, DegradationSpec};
use aerodeblur_core::restore::{restore_image, RestoreConfig};
use aerodeblur_core::scenes::reference_truth;
use aerodeblur_core::BlurKernel;

fn shifted(k: &BlurKernel, dc: isize) -> BlurKernel {
    let n = k.size();
    let r = k.radius() as isize;
    let raw: Vec<f64> = (0..n * n)
        .map(|i| k.offset((i / n) as isize - r, (i % n) as isize - r - dc))
        .collect();
    BlurKernel::project(n, &raw).unwrap()
}

fn cheap() -> RestoreConfig {
    RestoreConfig {
        levels: 2,
        patch_size: 32,
        overlap: 16,
        pad: 8,
        kernel_size_max: 9,
        ..RestoreConfig::default()
    }
}

#[test]
fn error_ratio_is_one_for_the_true_kernel() {
    let truth = reference_truth(64);
    let k = synth_motion_kernel(7.0, 10.0, 7).unwrap();
    let er = error_ratio(&truth, &k, &k, &RestoreConfig::default()).unwrap();
    assert_eq!(er.ratio, 1.0);
    assert!(!er.exact_recovery);
}

#[test]
fn one_pixel_length_error_costs_a_bounded_ratio() {
    let truth = reference_truth(64);
    let k = synth_motion_kernel(5.0, 0.0, 9).unwrap();
    let est = synth_motion_kernel(4.0, 0.0, 9).unwrap();
    let er = error_ratio(&truth, &est, &k, &RestoreConfig::default()).unwrap();
    assert!(er.ratio > 1.0 && er.ratio <= 3.0, "{}", er.ratio);
}

#[test]
fn translated_kernel_is_penalised() {
    // a whole-pixel translation displaces the reconstruction against the truth
    let truth = reference_truth(64);
    let k = synth_motion_kernel(5.0, 0.0, 9).unwrap();
    let er = error_ratio(&truth, &shifted(&k, 1), &k, &RestoreConfig::default()).unwrap();
    assert!(er.ratio > 3.0, "{}", er.ratio);
}

#[test]
fn error_ratio_ignores_intensity_offset() {
    let truth = reference_truth(64);
    let k = synth_motion_kernel(5.0, 30.0, 7).unwrap();
    let est = synth_motion_kernel(4.0, 20.0, 7).unwrap();
    let cfg = RestoreConfig::default();
    let a = error_ratio(&truth, &est, &k, &cfg).unwrap().ratio;
    let b = error_ratio(&truth.map(|v| 0.8 * v + 0.15), &est, &k, &cfg).unwrap().ratio;
    let c = error_ratio(&truth.map(|v| 0.8 * v + 0.05), &est, &k, &cfg).unwrap().ratio;
    assert!((b - c).abs() <= 0.01 * c, "{b} vs {c}");
    assert!(a > 1.0);
}

#[test]
fn zero_truth_flags_exact_recovery() {
    let truth = aerodeblur_core::Image::zeros(64, 64);
    let k = synth_motion_kernel(5.0, 0.0, 5).unwrap();
    let er = error_ratio(&truth, &BlurKernel::delta(5), &k, &RestoreConfig::default()).unwrap();
    assert!(er.exact_recovery);
}

#[test]
fn merged_output_matches_input_shape() {
    let g = reference_truth(48).crop(0, 0, 48, 40);
    let out = restore_image(&g, None, &cheap()).unwrap();
    assert_eq!((out.image.width(), out.image.height()), (48, 40));
    assert_eq!(out.kernels.len(), out.grid.len());
    assert_eq!(out.report_text().lines().count(), 2 + out.grid.len());
}

#[test]
fn thread_count_does_not_change_the_result() {
    let truth = reference_truth(64);
    let spec = DegradationSpec {
        kernel: synth_motion_kernel(5.0, 10.0, 5).unwrap(),
        noise_sigma: 0.01,
        seed: 3,
        ..DegradationSpec::identity()
    };
    let g = degrade(&truth, &spec).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| restore_image(&g, None, &cheap()).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.image, b.image);
    assert_eq!(a.kernels, b.kernels);
}

#[test]
fn sharp_input_stays_close() {
    let truth = reference_truth(64);
    let out = restore_image(&truth, None, &cheap()).unwrap();
    let p = psnr(&truth, &out.image).unwrap();
    assert!(p >= 30.0, "{p:.2}");
}
