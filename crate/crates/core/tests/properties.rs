use fsr_core::decoder::{encoding_len, gather_neighbors, positional_encode, QueryBatch};
use fsr_core::image::{cubic_kernel, make_coord_grid, resample_bicubic, resample_bilinear, resample_nearest, rgb_to_y};
use fsr_core::metrics::{psnr_y, ssim_y};
use fsr_core::trainer::{sample_scale, TrainConfig};
use fsr_core::{Image, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize, px: &[f64]) -> Image {
    Image::new(h, w, px[..h * w * 3].to_vec()).unwrap()
}

fn pixels() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 3 * 20 * 20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn coord_grid_is_symmetric_and_inside(h in 1usize..40, w in 1usize..40) {
        let g = make_coord_grid(h, w).unwrap();
        prop_assert_eq!(g.len(), h * w);
        for (i, c) in g.coords().iter().enumerate() {
            prop_assert!(c[0].abs() < 1.0 && c[1].abs() < 1.0);
            let mirror = g.coords()[h * w - 1 - i];
            prop_assert!((c[0] + mirror[0]).abs() < 1e-12 && (c[1] + mirror[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn resampling_keeps_constants(h in 1usize..20, w in 1usize..20, oh in 1usize..40, ow in 1usize..40, v in 0.0f64..=1.0) {
        let img = Image::filled(h, w, [v, 1.0 - v, 0.5]).unwrap();
        for out in [
            resample_bicubic(&img, oh, ow).unwrap(),
            resample_bilinear(&img, oh, ow).unwrap(),
            resample_nearest(&img, oh, ow).unwrap(),
        ] {
            prop_assert_eq!((out.height(), out.width()), (oh, ow));
            for p in out.pixels().chunks_exact(3) {
                prop_assert!((p[0] - v).abs() < 1e-12 && (p[1] - (1.0 - v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_size_resampling_is_identity(h in 1usize..20, w in 1usize..20, px in pixels()) {
        let img = image(h, w, &px);
        prop_assert_eq!(&resample_nearest(&img, h, w).unwrap(), &img);
        for out in [resample_bilinear(&img, h, w).unwrap(), resample_bicubic(&img, h, w).unwrap()] {
            for (a, b) in out.pixels().iter().zip(img.pixels()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cubic_taps_sum_to_one(t in 0.0f64..1.0) {
        let s: f64 = (-1..=2).map(|i| cubic_kernel(t - i as f64)).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ensemble_weights_partition_unity(h in 1usize..65, w in 1usize..65, qy in -1.0f64..=1.0, qx in -1.0f64..=1.0) {
        let nb = gather_neighbors(h, w, &QueryBatch::new(vec![[qy, qx]], [0.5, 0.5]).unwrap()).unwrap();
        let ws = nb.neighbors[0].map(|n| n.weight);
        prop_assert!(ws.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((ws.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for n in nb.neighbors[0] {
            prop_assert!(n.index < h * w);
        }
    }

    #[test]
    fn encoding_is_bounded(y in -1.0f64..=1.0, x in -1.0f64..=1.0, n in 0usize..12) {
        let e = positional_encode([y, x], n);
        prop_assert_eq!(e.len(), encoding_len(n));
        prop_assert_eq!((e[0], e[1]), (y, x));
        prop_assert!(e.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn luma_stays_in_studio_range(px in pixels()) {
        let img = image(20, 20, &px);
        for y in rgb_to_y(&img) {
            prop_assert!((16.0 / 255.0 - 1e-12..=235.0 / 255.0 + 1e-12).contains(&y));
        }
    }

    #[test]
    fn metrics_are_symmetric(h in 11usize..20, w in 11usize..20, a in pixels(), b in pixels()) {
        let (a, b) = (image(h, w, &a), image(h, w, &b));
        prop_assert_eq!(psnr_y(&a, &b).unwrap(), psnr_y(&b, &a).unwrap());
        let (s, t) = (ssim_y(&a, &b).unwrap(), ssim_y(&b, &a).unwrap());
        prop_assert!((s - t).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn reshape_keeps_row_major_data(r in 1usize..8, c in 1usize..8) {
        let t = Tensor::from_fn(&[r, c], |i| i as f64);
        let u = t.clone().reshaped(&[c, r]).unwrap();
        prop_assert_eq!(u.data(), t.data());
        prop_assert!(t.reshaped(&[r * c + 1]).is_err());
    }

    #[test]
    fn out_of_range_queries_are_rejected(q in 1.0f64..3.0) {
        prop_assume!(q > 1.0);
        prop_assert!(QueryBatch::new(vec![[q, 0.0]], [0.5, 0.5]).is_err());
        prop_assert!(QueryBatch::new(vec![[0.0, -q]], [0.5, 0.5]).is_err());
        prop_assert!(QueryBatch::new(vec![[0.0, 0.0]], [0.0, 0.5]).is_err());
    }
}

#[test]
fn scale_draws_are_uniform_on_one_to_two() {
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<[f64; 2]> = (0..10_000).map(|_| sample_scale(&cfg, &mut rng)).collect();
    let mean = draws.iter().map(|s| s[0]).sum::<f64>() / draws.len() as f64;
    assert!((mean - 1.5).abs() < 0.02, "{mean}");
    assert!(draws.iter().all(|s| s[0] == s[1] && (1.0..=2.0).contains(&s[0])));
}
