mod common;

use ucnet::channelrep::{split_rgb, Domain, REP_PLANES};
use ucnet::covers::{textured_cover, CoverStyle};
use ucnet::model::{reps_to_tensor, LayerSpec, Model, ModelError, UcnetConfig};
use ucnet::nn::{BnMode, Tensor};

fn desk() -> UcnetConfig {
    UcnetConfig::desk(Domain::SpatialRgb)
}

#[test]
fn desk_forward_shape_and_finite() {
    let m = Model::<f32>::build(&desk(), 3).unwrap();
    let reps: Vec<_> = (0..2)
        .map(|i| {
            let img = textured_cover(64, 64, i, &CoverStyle::default());
            m.preprocess(&split_rgb(&img).unwrap()).unwrap()
        })
        .collect();
    let refs: Vec<_> = reps.iter().collect();
    let x = reps_to_tensor::<f32>(&refs).unwrap();
    assert_eq!(x.shape(), [2, REP_PLANES, 64, 64]);
    let logits = m.predict(&x).unwrap();
    assert_eq!(logits.shape(), [2, 2, 1, 1]);
    assert!(logits.data().iter().all(|v| v.is_finite()));
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::<f32>::build(&desk(), 42).unwrap();
    let b = Model::<f32>::build(&desk(), 42).unwrap();
    let c = Model::<f32>::build(&desk(), 43).unwrap();
    let bits = |m: &Model<f32>| -> Vec<u32> {
        m.params().iter().flat_map(|(_, p)| p.iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn zero_input_gives_fc_bias() {
    let mut m = Model::<f64>::build(&desk(), 1).unwrap();
    let n = m.params().len();
    m.params_mut()[n - 1].copy_from_slice(&[0.25, -0.75]);
    let x = Tensor::<f64>::zeros([1, REP_PLANES, 16, 16]);
    let logits = m.predict(&x).unwrap();
    assert_eq!(logits.data(), &[0.25, -0.75]);
}

#[test]
fn duplicated_items_give_identical_rows() {
    let m = Model::<f32>::build(&desk(), 2).unwrap();
    let mut r = common::rng(8);
    let one = common::random_tensor(&mut r, [1, REP_PLANES, 16, 16], 3.0).cast::<f32>();
    let x = Tensor::stack(&[&one, &one]).unwrap();
    let logits = m.predict(&x).unwrap();
    assert_eq!(logits.item(0), logits.item(1));
}

#[test]
fn eval_forward_does_not_mutate() {
    let mut m = Model::<f32>::build(&desk(), 2).unwrap();
    let before = m.clone();
    let x = Tensor::<f32>::zeros([2, REP_PLANES, 16, 16]);
    m.forward(&x, BnMode::Eval).unwrap();
    assert_eq!(m, before);
    m.forward(&x.map(|_| 1.0), BnMode::Train).unwrap();
    assert_ne!(m, before);
}

#[test]
fn wrong_plane_count_rejected() {
    let m = Model::<f32>::build(&desk(), 0).unwrap();
    let x = Tensor::<f32>::zeros([1, 62, 8, 8]);
    assert_eq!(
        m.predict(&x).unwrap_err(),
        ModelError::InputPlanes { expected: 186, found: 62 }
    );
}

#[test]
fn zeroed_type1_block_is_identity_after_relu() {
    let mut with_block = UcnetConfig::tiny(Domain::SpatialRgb);
    with_block.stages = vec![LayerSpec::type1(8)];
    let mut bare = with_block.clone();
    bare.stages.clear();

    let mut a = Model::<f64>::build(&with_block, 4).unwrap();
    let mut b = Model::<f64>::build(&bare, 4).unwrap();
    // share stem and head, zero the block's conv
    let names: Vec<String> = a.params().into_iter().map(|(n, _)| n).collect();
    let src: Vec<Vec<f64>> = a.params().into_iter().map(|(_, p)| p.to_vec()).collect();
    let mut bi = 0;
    for (i, slot) in a.params_mut().into_iter().enumerate() {
        if names[i] == "blocks.0.main.conv.weight" {
            slot.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    for (i, name) in names.iter().enumerate() {
        if !name.starts_with("blocks.") {
            b.params_mut()[bi].copy_from_slice(&src[i]);
            bi += 1;
        }
    }
    let mut r = common::rng(9);
    let x = common::random_tensor(&mut r, [2, REP_PLANES, 8, 8], 3.0);
    let la = a.predict(&x).unwrap();
    let lb = b.predict(&x).unwrap();
    for (p, q) in la.data().iter().zip(lb.data()) {
        assert!((p - q).abs() < 1e-12, "{p} vs {q}");
    }
}

#[test]
fn grouped_layer_has_fewer_weights_by_group_factor() {
    let mut t1 = UcnetConfig::tiny(Domain::SpatialRgb);
    t1.stem_width = 64;
    t1.stages = vec![LayerSpec::type1(64)];
    let mut t3 = t1.clone();
    t3.stages = vec![LayerSpec::type3(64, 4)];
    let a = Model::<f32>::build(&t1, 0).unwrap();
    let b = Model::<f32>::build(&t3, 0).unwrap();
    let conv = |m: &Model<f32>| {
        m.params()
            .into_iter()
            .find(|(n, _)| n == "blocks.0.main.conv.weight")
            .unwrap()
            .1
            .len()
    };
    assert_eq!(conv(&a), 36864);
    assert_eq!(conv(&b), 9216);
    assert_eq!(conv(&a), 4 * conv(&b));
    assert_eq!(a.param_count() - b.param_count(), 36864 - 9216);
}

#[test]
fn fc_alone_parameter_count() {
    let mut cfg = UcnetConfig::tiny(Domain::SpatialRgb);
    cfg.stem_width = 128;
    cfg.stages.clear();
    let m = Model::<f32>::build(&cfg, 0).unwrap();
    let fc: usize = m
        .params()
        .iter()
        .filter(|(n, _)| n.starts_with("fc."))
        .map(|(_, p)| p.len())
        .sum();
    assert_eq!(fc, 258);
}

#[test]
fn recalibrated_statistics_are_batch_averages() {
    let cfg = UcnetConfig::tiny(Domain::SpatialRgb);
    let mut m = Model::<f64>::build(&cfg, 5).unwrap();
    let mut r = common::rng(10);
    let a = common::random_tensor(&mut r, [2, REP_PLANES, 8, 8], 3.0);
    let b = common::random_tensor(&mut r, [2, REP_PLANES, 8, 8], 1.0);
    m.recalibrate_bn([&a, &b]).unwrap();
    // stem BN sees the conv output directly, so its statistics are easy to recompute
    let mut one = m.clone();
    one.recalibrate_bn([&a]).unwrap();
    let mut two = m.clone();
    two.recalibrate_bn([&b]).unwrap();
    let stem_mean = |mm: &Model<f64>| mm.buffers()[0].1.to_vec();
    for ((avg, x), y) in stem_mean(&m).iter().zip(stem_mean(&one)).zip(stem_mean(&two)) {
        assert!((avg - 0.5 * (x + y)).abs() < 1e-12);
    }
    assert_eq!(m.buffers().len(), one.buffers().len());
}
