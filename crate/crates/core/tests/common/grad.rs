//! Finite-difference checks of every layer's backward pass, in f64.
//!
//! Each check draws random instances, projects the layer output onto a
//! fixed random tensor to get a scalar loss, and compares the analytic
//! gradient with central differences. The return value is the worst
//! relative error seen.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ucnet::channelrep::Domain;
use ucnet::model::{LayerSpec, Model, UcnetConfig};
use ucnet::nn::*;

use super::{away_from_zero, numeric_grad, random_tensor, rel_err, rng};

pub const STEP: f64 = 1e-6;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Up to `max` distinct coordinates of a buffer of length `n`.
fn coords(r: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        sample(r, n, max).into_vec()
    }
}

fn check(
    r: &mut ChaCha8Rng,
    analytic: &[f64],
    buf: &mut [f64],
    max: usize,
    f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let c = coords(r, buf.len(), max);
    let num = numeric_grad(buf, &c, STEP, f);
    let ana: Vec<f64> = c.iter().map(|&i| analytic[i]).collect();
    rel_err(&ana, &num)
}

pub fn conv(instances: usize) -> f64 {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let groups = [1usize, 2, 4][r.random_range(0..3)];
        let c_in = groups * r.random_range(1..=3);
        let c_out = groups * r.random_range(1..=3);
        let k = [1usize, 3][r.random_range(0..2)];
        let stride = r.random_range(1..=2);
        let pad = if k == 3 { r.random_range(0..=1) } else { 0 };
        let bias = r.random_bool(0.5);
        let mut p = ConvParams::<f64>::new(c_in, c_out, k, stride, pad, groups, bias).unwrap();
        for w in p.weight.iter_mut() {
            *w = r.random_range(-1.0..1.0);
        }
        if let Some(b) = p.bias.as_mut() {
            for v in b.iter_mut() {
                *v = r.random_range(-1.0..1.0);
            }
        }
        let n = r.random_range(1..=2);
        let hw = r.random_range(k.max(3)..=7);
        let x = random_tensor(&mut r, [n, c_in, hw, hw], 1.0);
        let y = conv2d(&x, &p).unwrap();
        let proj = random_tensor(&mut r, y.shape(), 1.0);
        let g = conv2d_grad(&x, &p, &proj).unwrap();

        let mut xb = x.data().to_vec();
        let shape = x.shape();
        worst = worst.max(check(&mut r, g.grad_x.as_ref().unwrap().data(), &mut xb, 60, |v| {
            let xt = Tensor::from_vec(shape, v.to_vec()).unwrap();
            dot(conv2d(&xt, &p).unwrap().data(), proj.data())
        }));
        let mut wb = p.weight.clone();
        worst = worst.max(check(&mut r, &g.grad_weight, &mut wb, 60, |v| {
            let mut q = p.clone();
            q.weight = v.to_vec();
            dot(conv2d(&x, &q).unwrap().data(), proj.data())
        }));
        if let (Some(gb), Some(b)) = (&g.grad_bias, &p.bias) {
            let mut bb = b.clone();
            worst = worst.max(check(&mut r, gb, &mut bb, 60, |v| {
                let mut q = p.clone();
                q.bias = Some(v.to_vec());
                dot(conv2d(&x, &q).unwrap().data(), proj.data())
            }));
        }
        // parameter-only path must agree with the full one
        let gp = conv2d_grad_params(&x, &p, &proj).unwrap();
        assert_eq!(gp.grad_weight, g.grad_weight);
    }
    worst
}

pub fn batchnorm(instances: usize, mode: BnMode) -> f64 {
    let mut r = rng(12 + mode as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let ch = r.random_range(1..=4);
        let n = r.random_range(1..=3);
        let hw = r.random_range(2..=4);
        let mut p = BnParams::<f64>::new(ch);
        for c in 0..ch {
            p.gamma[c] = r.random_range(0.5..1.5);
            p.beta[c] = r.random_range(-0.5..0.5);
            p.running_mean[c] = r.random_range(-0.5..0.5);
            p.running_var[c] = r.random_range(0.5..2.0);
        }
        let x = random_tensor(&mut r, [n, ch, hw, hw], 2.0);
        let (y, cache) = batch_norm(&x, &mut p.clone(), mode).unwrap();
        let proj = random_tensor(&mut r, y.shape(), 1.0);
        let g = batch_norm_grad(&cache, &p.gamma, &proj).unwrap();
        let shape = x.shape();
        let eval = |xt: &Tensor<f64>, q: &BnParams<f64>| {
            dot(batch_norm(xt, &mut q.clone(), mode).unwrap().0.data(), proj.data())
        };
        let mut xb = x.data().to_vec();
        worst = worst.max(check(&mut r, g.grad_x.data(), &mut xb, 60, |v| {
            eval(&Tensor::from_vec(shape, v.to_vec()).unwrap(), &p)
        }));
        let mut gb = p.gamma.clone();
        worst = worst.max(check(&mut r, &g.grad_gamma, &mut gb, 60, |v| {
            let mut q = p.clone();
            q.gamma = v.to_vec();
            eval(&x, &q)
        }));
        let mut bb = p.beta.clone();
        worst = worst.max(check(&mut r, &g.grad_beta, &mut bb, 60, |v| {
            let mut q = p.clone();
            q.beta = v.to_vec();
            eval(&x, &q)
        }));
    }
    worst
}

pub fn relu_layer(instances: usize) -> f64 {
    let mut r = rng(14);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let x = away_from_zero(&mut r, [2, 3, 4, 4]);
        let proj = random_tensor(&mut r, x.shape(), 1.0);
        let g = relu_grad(&x, &proj).unwrap();
        let mut xb = x.data().to_vec();
        worst = worst.max(check(&mut r, g.data(), &mut xb, 96, |v| {
            dot(relu(&Tensor::from_vec([2, 3, 4, 4], v.to_vec()).unwrap()).data(), proj.data())
        }));
    }
    worst
}

pub fn gap_layer(instances: usize) -> f64 {
    let mut r = rng(15);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let shape = [r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=5), r.random_range(1..=5)];
        let x = random_tensor(&mut r, shape, 1.0);
        let proj = random_tensor(&mut r, [shape[0], shape[1], 1, 1], 1.0);
        let g = global_avg_pool_grad(shape, &proj).unwrap();
        let mut xb = x.data().to_vec();
        worst = worst.max(check(&mut r, g.data(), &mut xb, 60, |v| {
            dot(global_avg_pool(&Tensor::from_vec(shape, v.to_vec()).unwrap()).data(), proj.data())
        }));
    }
    worst
}

pub fn fc_layer(instances: usize) -> f64 {
    let mut r = rng(16);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n, c, k) = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(2..=3));
        let x = random_tensor(&mut r, [n, c, 1, 1], 1.0);
        let w: Vec<f64> = (0..c * k).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
        let proj = random_tensor(&mut r, [n, k, 1, 1], 1.0);
        let g = fully_connected_grad(&x, &w, &proj).unwrap();
        let mut xb = x.data().to_vec();
        worst = worst.max(check(&mut r, g.grad_x.data(), &mut xb, 60, |v| {
            let xt = Tensor::from_vec([n, c, 1, 1], v.to_vec()).unwrap();
            dot(fully_connected(&xt, &w, &b).unwrap().data(), proj.data())
        }));
        let mut wb = w.clone();
        worst = worst.max(check(&mut r, &g.grad_weight, &mut wb, 60, |v| {
            dot(fully_connected(&x, v, &b).unwrap().data(), proj.data())
        }));
        let mut bb = b.clone();
        worst = worst.max(check(&mut r, &g.grad_bias, &mut bb, 60, |v| {
            dot(fully_connected(&x, &w, v).unwrap().data(), proj.data())
        }));
    }
    worst
}

pub fn softmax_ce(instances: usize) -> f64 {
    let mut r = rng(17);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n, k) = (r.random_range(1..=5), r.random_range(2..=4));
        let z = random_tensor(&mut r, [n, k, 1, 1], 4.0);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let (_, g) = softmax_cross_entropy(&z, &labels).unwrap();
        let mut zb = z.data().to_vec();
        worst = worst.max(check(&mut r, g.data(), &mut zb, 60, |v| {
            let zt = Tensor::from_vec([n, k, 1, 1], v.to_vec()).unwrap();
            softmax_cross_entropy(&zt, &labels).unwrap().0
        }));
    }
    worst
}

/// Loss of `model` (train-mode BN on a throwaway copy) for fixed inputs.
fn model_loss(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let mut m = model.clone();
    let (logits, _) = m.forward_cached(x, BnMode::Train).unwrap();
    softmax_cross_entropy(&logits, labels).unwrap().0
}

/// Gradient check of every trainable tensor of `cfg`, sampling up to
/// `per_tensor` coordinates from each.
pub fn model_instance(cfg: &UcnetConfig, seed: u64, hw: usize, per_tensor: usize) -> f64 {
    let mut r = rng(1000 + seed);
    let mut model = Model::<f64>::build(cfg, seed).unwrap();
    // move BN away from the identity so gamma/beta gradients are generic
    for (i, p) in model.params_mut().into_iter().enumerate() {
        if i % 3 != 0 && p.len() < 200 {
            for v in p.iter_mut() {
                *v += r.random_range(-0.2..0.2);
            }
        }
    }
    let x = random_tensor(&mut r, [2, 186, hw, hw], 3.0);
    let labels = [0usize, 1];
    let mut m = model.clone();
    let (logits, cache) = m.forward_cached(&x, BnMode::Train).unwrap();
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    let grads = m.backward(&cache, &g).unwrap();

    let mut ana = Vec::new();
    let mut num = Vec::new();
    let n_tensors = grads.len();
    for t in 0..n_tensors {
        let len = grads[t].len();
        let cs = coords(&mut r, len, per_tensor);
        for &i in &cs {
            let orig = model.params_mut()[t][i];
            model.params_mut()[t][i] = orig + STEP;
            let up = model_loss(&model, &x, &labels);
            model.params_mut()[t][i] = orig - STEP;
            let down = model_loss(&model, &x, &labels);
            model.params_mut()[t][i] = orig;
            num.push((up - down) / (2.0 * STEP));
            ana.push(grads[t][i]);
        }
    }
    rel_err(&ana, &num)
}

/// One TYPE1, TYPE2 or TYPE3 block behind a small stem.
pub fn block_config(kind: usize) -> UcnetConfig {
    let mut cfg = UcnetConfig::tiny(Domain::SpatialRgb);
    cfg.stem_width = 4;
    cfg.stages = vec![match kind {
        0 => LayerSpec::type1(4),
        1 => LayerSpec::type2(4, 8),
        _ => LayerSpec::type3(4, 2),
    }];
    cfg
}

pub fn blocks(instances: usize) -> f64 {
    (0..instances)
        .map(|i| model_instance(&block_config(i % 3), i as u64, 6, 12))
        .fold(0.0, f64::max)
}

/// Tiny config (stem 8, one layer of each type) on 16x16 inputs.
pub fn end_to_end(instances: usize) -> f64 {
    let cfg = UcnetConfig::tiny(Domain::SpatialRgb);
    (0..instances)
        .map(|i| model_instance(&cfg, 50 + i as u64, 16, 6))
        .fold(0.0, f64::max)
}
