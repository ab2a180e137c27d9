mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vimpute_core::augment::{self, AugmentConfig, PointPattern};
use vimpute_core::metrics::{accuracy, dice, paired_ttest};
use vimpute_core::model::{kl_divergence, LatentStats};
use vimpute_core::phantom::generate_phantoms;
use vimpute_core::postprocess::{label_components, morphological_close, postprocess, remove_small_components, Connectivity, PostprocessConfig};
use vimpute_core::preprocess::equalize_histogram;
use vimpute_core::{BinaryMask, GrayImage, SoftMask};

fn mask_strategy(max_side: usize) -> impl Strategy<Value = BinaryMask> {
    (8..=max_side, 8..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(prop::bool::weighted(0.45), h * w)
            .prop_map(move |v| BinaryMask::new(h, w, v.into_iter().map(u8::from).collect()).unwrap())
    })
}

fn image_strategy() -> impl Strategy<Value = GrayImage> {
    (8usize..=24, 8usize..=24).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..=1.0, h * w).prop_map(move |v| GrayImage::new(h, w, v).unwrap())
    })
}

fn connectivity() -> impl Strategy<Value = Connectivity> {
    prop_oneof![Just(Connectivity::Four), Just(Connectivity::Eight)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equalization_is_idempotent_up_to_one_bin(img in image_strategy(), bins in 2usize..=256) {
        let once = equalize_histogram(&img, bins).unwrap();
        let twice = equalize_histogram(&once, bins).unwrap();
        for (a, b) in once.pixels().iter().zip(twice.pixels()) {
            prop_assert!((a - b).abs() <= 1.0 / bins as f32 + 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn equalization_preserves_intensity_order(img in image_strategy(), bins in 2usize..=256) {
        let eq = equalize_histogram(&img, bins).unwrap();
        let (src, out) = (img.pixels(), eq.pixels());
        for i in 0..src.len() {
            for j in 0..src.len() {
                if src[i] <= src[j] {
                    prop_assert!(out[i] <= out[j]);
                }
            }
        }
    }

    #[test]
    fn closing_is_extensive_and_idempotent(m in mask_strategy(24), r in 0usize..=4) {
        let c = morphological_close(&m, r);
        prop_assert!(m.is_subset_of(&c));
        prop_assert_eq!(morphological_close(&c, r), c.clone());
        let (h, w) = m.dims();
        prop_assert_eq!(c.pixels(), &common::close_direct(m.pixels(), h, w, r)[..]);
    }

    #[test]
    fn component_removal_is_anti_extensive_and_keeps_components_whole(
        m in mask_strategy(24),
        min_area in 0usize..40,
        conn in connectivity(),
    ) {
        let kept = remove_small_components(&m, min_area, conn);
        prop_assert!(kept.is_subset_of(&m));
        let (h, w) = m.dims();
        let eight = conn == Connectivity::Eight;
        let before = common::flood_components(m.pixels(), h, w, 1, eight);
        let after = common::flood_components(kept.pixels(), h, w, 1, eight);
        let survivors: Vec<_> = before.into_iter().filter(|c| c.len() >= min_area).collect();
        let mut a: Vec<Vec<_>> = after.into_iter().map(|mut c| { c.sort(); c }).collect();
        let mut b: Vec<Vec<_>> = survivors.into_iter().map(|mut c| { c.sort(); c }).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn postprocess_leaves_no_small_components_or_holes(
        m in mask_strategy(32),
        min_area in 1usize..30,
        r in 1usize..=4,
        conn in connectivity(),
    ) {
        let (h, w) = m.dims();
        let soft = SoftMask::new(h, w, m.pixels().iter().map(|&b| if b == 1 { 0.8 } else { 0.2 }).collect()).unwrap();
        let cfg = PostprocessConfig {
            min_area_frac: min_area as f64 / (h * w) as f64,
            closing_radius: r,
            connectivity: conn,
            ..PostprocessConfig::default()
        };
        let out = postprocess(&soft, &cfg);
        let comps = common::flood_components(out.pixels(), h, w, 1, conn == Connectivity::Eight);
        prop_assert!(comps.iter().all(|c| c.len() >= min_area));
        prop_assert!(common::background_components_hold_disks(out.pixels(), h, w, r));
        prop_assert_eq!(postprocess(&soft, &cfg), out);
    }

    #[test]
    fn labelling_agrees_with_flood_fill(m in mask_strategy(20), conn in connectivity()) {
        let (h, w) = m.dims();
        let (labels, areas) = label_components(&m, conn);
        let comps = common::flood_components(m.pixels(), h, w, 1, conn == Connectivity::Eight);
        prop_assert_eq!(areas.iter().filter(|&&a| a > 0).count(), comps.len());
        for comp in comps {
            let l = labels[comp[0].0 * w + comp[0].1];
            prop_assert!(comp.iter().all(|&(y, x)| labels[y * w + x] == l));
        }
    }

    #[test]
    fn kl_is_non_negative(
        pairs in prop::collection::vec((-50.0f64..50.0, -30.0f64..30.0), 1..16)
    ) {
        let (mu, logvar): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let stats = LatentStats::new(mu, logvar).unwrap();
        prop_assert!(kl_divergence(&stats).unwrap() >= 0.0);
    }

    #[test]
    fn dice_and_accuracy_are_symmetric_and_bounded(
        bits in prop::collection::vec((any::<bool>(), any::<bool>()), 64)
    ) {
        let p = BinaryMask::new(8, 8, bits.iter().map(|b| b.0 as u8).collect()).unwrap();
        let t = BinaryMask::new(8, 8, bits.iter().map(|b| b.1 as u8).collect()).unwrap();
        let d = dice(&p, &t).unwrap();
        prop_assert_eq!(d, dice(&t, &p).unwrap());
        prop_assert_eq!(accuracy(&p, &t).unwrap(), accuracy(&t, &p).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d == 1.0, p == t);
    }

    #[test]
    fn swapping_ttest_arguments_negates_t(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..30)
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let (Ok(x), Ok(y)) = (paired_ttest(&a, &b), paired_ttest(&b, &a)) {
            prop_assert_eq!(x.t, -y.t);
            prop_assert_eq!(x.p, y.p);
            prop_assert!((0.0..=1.0).contains(&x.p));
        }
    }

    #[test]
    fn hard_core_strauss_keeps_its_distance(seed in any::<u64>(), radius in 2.0f64..20.0) {
        let params = augment::StraussParams { beta: 0.01, gamma: 0.0, interaction_radius_px: radius, mcmc_steps: 500 };
        let pattern: PointPattern = augment::sample_strauss(&params, (48, 48), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(pattern.close_pairs(radius), 0);
        prop_assert_eq!(common::pairs_closer_than(&pattern.points, radius), 0);
        prop_assert!(pattern.points.iter().all(|&(x, y)| (0.0..48.0).contains(&x) && (0.0..48.0).contains(&y)));
    }

    #[test]
    fn occlusion_augmentations_keep_the_label(seed in any::<u64>(), m in mask_strategy(16)) {
        let (h, w) = m.dims();
        let img = GrayImage::new(h, w, (0..h * w).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let cfg = AugmentConfig { p_aug: 1.0, ..AugmentConfig::default() }.with_families(false, true, true);
        let out = augment::apply(&img, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(out.mask, m);
    }

    #[test]
    fn diffused_noise_never_darkens(img in image_strategy(), seed in any::<u64>()) {
        let out = augment::diffused_noise(&img, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed));
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            prop_assert!(b >= a && *b <= 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn phantom_masks_ignore_occlusion(seed in any::<u64>(), n in 1usize..6) {
        let clear = generate_phantoms(n, (64, 64), 0.0, seed).unwrap();
        let hidden = generate_phantoms(n, (64, 64), 1.0, seed).unwrap();
        for (a, b) in clear.items().iter().zip(hidden.items()) {
            prop_assert_eq!(&a.mask, &b.mask);
        }
    }
}
