mod common;

use proptest::prelude::*;
use rand::Rng;

use ucnet::channelrep::{channel_representation, ColorPlanes, Domain, Image8};
use ucnet::filterbank::{apply_bank, full_bank, PadMode, ResidualConfig, BANK_SIZE};
use ucnet::jpeg::tables::{natural_to_zigzag, zigzag_to_natural};
use ucnet::jpeg::{encode_planes, parse_jpeg};
use ucnet::model::{read_container, write_container, Container, NamedTensor};
use ucnet::plane::Plane;
use ucnet::ppm::{decode_ppm, encode_ppm};
use ucnet::stegosim::{
    inverse_ternary_entropy, jpeg_embed, lsbm_embed, ternary_entropy, EmbedSpec, LOG2_3,
    MAX_CHANGE_RATE,
};
use ucnet::train::p_e;

fn plane_strategy(max: usize) -> impl Strategy<Value = Plane> {
    (5..=max, 5..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..255.0, h * w).prop_map(move |d| Plane::from_vec(h, w, d))
    })
}

fn rgb_strategy(max: usize) -> impl Strategy<Value = ColorPlanes> {
    (5..=max, 5..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..=255, 3 * h * w).prop_map(move |d| {
            let p = |c: usize| Plane::from_fn(h, w, |y, x| d[c * h * w + y * w + x] as f64);
            ColorPlanes::new(Domain::SpatialRgb, [p(0), p(1), p(2)]).unwrap()
        })
    })
}

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            // coarse values so ties are common
            prop::collection::vec((0i32..12).prop_map(|v| v as f64 / 4.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
    .prop_map(|(s, mut l)| {
        l[0] = false;
        l[1] = true;
        (s, l)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residuals_stay_within_truncation(plane in plane_strategy(14), t in 0.5f64..6.0, reflect in any::<bool>()) {
        let pad = if reflect { PadMode::Reflect } else { PadMode::Zero };
        let cfg = ResidualConfig::new(t, pad).unwrap();
        let stack = apply_bank(&plane, &full_bank(), &cfg).unwrap();
        prop_assert!(stack.data.iter().all(|v| v.abs() <= t));
    }

    #[test]
    fn bank_matches_direct_correlation(plane in plane_strategy(10), reflect in any::<bool>()) {
        let pad = if reflect { PadMode::Reflect } else { PadMode::Zero };
        let bank = full_bank();
        let stack = apply_bank(&plane, &bank, &ResidualConfig::new(3.0, pad).unwrap()).unwrap();
        for (k, want) in common::naive_bank(&plane, &bank, 3.0, pad).iter().enumerate() {
            for (a, b) in stack.map(k).iter().zip(want) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn channel_perturbation_stays_in_its_block(
        cp in rgb_strategy(12),
        c in 0usize..3,
        fy in 0.0f64..1.0,
        fx in 0.0f64..1.0,
    ) {
        let bank = full_bank();
        let cfg = ResidualConfig::default();
        let (h, w) = (cp.height(), cp.width());
        let (y, x) = ((fy * h as f64) as usize, (fx * w as f64) as usize);
        let mut bumped = cp.clone();
        let v = bumped.plane(c).get(y, x);
        bumped.plane_mut(c).set(y, x, if v < 128.0 { v + 50.0 } else { v - 50.0 });
        let a = channel_representation(&cp, &bank, &cfg).unwrap();
        let b = channel_representation(&bumped, &bank, &cfg).unwrap();
        for i in 0..a.planes() {
            let own = i / BANK_SIZE == c;
            for (j, (p, q)) in a.map(i).iter().zip(b.map(i)).enumerate() {
                let (py, px) = (j / w, j % w);
                let near = py.abs_diff(y) <= 2 && px.abs_diff(x) <= 2;
                if !(own && near) {
                    prop_assert_eq!(p, q, "plane {} pixel ({}, {})", i, py, px);
                }
            }
        }
    }

    #[test]
    fn zigzag_round_trip(t in prop::array::uniform32(any::<u16>()), u in prop::array::uniform32(any::<u16>())) {
        let mut table = [0u16; 64];
        table[..32].copy_from_slice(&t);
        table[32..].copy_from_slice(&u);
        prop_assert_eq!(zigzag_to_natural(&natural_to_zigzag(&table)), table);
        prop_assert_eq!(natural_to_zigzag(&zigzag_to_natural(&table)), table);
    }

    #[test]
    fn jpeg_encode_parse_identity(plane in plane_strategy(30), q in 1u8..=100) {
        let (bytes, img) = encode_planes(&[&plane], q).unwrap();
        let parsed = parse_jpeg(&bytes).unwrap();
        prop_assert_eq!(parsed.quant_tables, img.quant_tables);
        prop_assert_eq!(&parsed.components[0].coeffs, &img.components[0].coeffs);
    }

    #[test]
    fn jpeg_embedding_changes_only_nonzero_ac_by_one(
        plane in plane_strategy(24),
        beta in 0.0f64..=MAX_CHANGE_RATE,
        seed in any::<u64>(),
    ) {
        let (_, img) = encode_planes(&[&plane], 80).unwrap();
        let stego = jpeg_embed(&img, &EmbedSpec::from_beta(beta, seed).unwrap()).unwrap();
        let before = img.components[0].coeffs.chunks_exact(64);
        let after = stego.components[0].coeffs.chunks_exact(64);
        for (a, b) in before.zip(after) {
            prop_assert_eq!(a[0], b[0]);
            for (&x, &y) in a[1..].iter().zip(&b[1..]) {
                if x == 0 {
                    prop_assert_eq!(y, 0);
                } else {
                    prop_assert!((x - y).abs() <= 1);
                }
            }
        }
    }

    #[test]
    fn lsbm_changes_are_unit_and_in_range(cp in rgb_strategy(16), beta in 0.0f64..=MAX_CHANGE_RATE, seed in any::<u64>()) {
        let stego = lsbm_embed(&cp, &EmbedSpec::from_beta(beta, seed).unwrap()).unwrap();
        for c in 0..3 {
            for (a, b) in cp.plane(c).data().iter().zip(stego.plane(c).data()) {
                prop_assert!((a - b).abs() <= 1.0);
                prop_assert!((0.0..=255.0).contains(b));
            }
        }
    }

    #[test]
    fn ternary_entropy_inverse_round_trip(beta in 0.0f64..=MAX_CHANGE_RATE) {
        let alpha = ternary_entropy(beta);
        prop_assert!((0.0..=LOG2_3 + 1e-12).contains(&alpha));
        let back = inverse_ternary_entropy(alpha).unwrap();
        prop_assert!((back - beta).abs() < 1e-9, "{} -> {} -> {}", beta, alpha, back);
    }

    #[test]
    fn p_e_matches_brute_force((scores, labels) in scores_and_labels()) {
        let fast = p_e(&scores, &labels).unwrap();
        prop_assert!((fast - common::brute_force_p_e(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn p_e_is_bounded((scores, labels) in scores_and_labels()) {
        let v = p_e(&scores, &labels).unwrap();
        prop_assert!((0.0..=0.5).contains(&v));
    }

    #[test]
    fn p_e_invariant_under_monotone_maps((scores, labels) in scores_and_labels(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert!((p_e(&scores, &labels).unwrap() - p_e(&mapped, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ppm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let data: Vec<u8> = (0..w * h * 3).map(|_| r.random()).collect();
        let img = Image8::new(w, h, 3, data);
        prop_assert_eq!(decode_ppm(&encode_ppm(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn container_round_trip(
        meta in prop::collection::vec(("[a-z_]{1,8}", "[ -~&&[^\n=]]{0,12}"), 0..5),
        tensors in prop::collection::vec(("[a-z.]{1,12}", prop::collection::vec(1usize..4, 1..4)), 0..4),
        seed in any::<u64>(),
    ) {
        let mut r = common::rng(seed);
        let c = Container {
            meta,
            tensors: tensors
                .into_iter()
                .map(|(name, dims)| {
                    let n = dims.iter().product();
                    NamedTensor { name, dims, values: (0..n).map(|_| r.random::<f32>() - 0.5).collect() }
                })
                .collect(),
        };
        prop_assert_eq!(read_container(&write_container(&c).unwrap()).unwrap(), c);
    }
}
