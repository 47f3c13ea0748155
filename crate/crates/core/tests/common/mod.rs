#![allow(dead_code)]

pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ucnet::channelrep::{split_rgb, ColorPlanes};
use ucnet::covers::{textured_cover, CoverStyle};
use ucnet::filterbank::{FilterBank, PadMode};
use ucnet::jpeg::{decompress_to_ycbcr, encode_jpeg, parse_jpeg, write_jpeg};
use ucnet::nn::Tensor;
use ucnet::plane::Plane;
use ucnet::stegosim::{jpeg_embed, lsbm_embed, EmbedSpec};
use ucnet::train::LoadedPair;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_plane(r: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Plane {
    Plane::from_fn(h, w, |_, _| r.random_range(lo..hi))
}

/// Direct 5x5 correlation of every kernel with zero (or reflect) padding,
/// divided by its normalizer and clamped; written independently of the
/// library's padded-copy implementation.
pub fn naive_bank(plane: &Plane, bank: &FilterBank, t: f64, pad: PadMode) -> Vec<Vec<f64>> {
    let (h, w) = (plane.height() as isize, plane.width() as isize);
    let fetch = |y: isize, x: isize| -> f64 {
        let reflect = |i: isize, n: isize| {
            if i < 0 {
                -i
            } else if i >= n {
                2 * (n - 1) - i
            } else {
                i
            }
        };
        if (0..h).contains(&y) && (0..w).contains(&x) {
            plane.get(y as usize, x as usize)
        } else {
            match pad {
                PadMode::Zero => 0.0,
                PadMode::Reflect => plane.get(reflect(y, h) as usize, reflect(x, w) as usize),
            }
        }
    };
    bank.kernels()
        .iter()
        .map(|k| {
            let mut out = Vec::with_capacity((h * w) as usize);
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0.0;
                    for dy in 0..5isize {
                        for dx in 0..5isize {
                            s += k.taps[dy as usize][dx as usize] * fetch(y + dy - 2, x + dx - 2);
                        }
                    }
                    out.push((s / k.normalizer).clamp(-t, t));
                }
            }
            out
        })
        .collect()
}

/// Midpoint-enumeration P_E: tries every threshold between adjacent
/// distinct scores plus one below and one above all of them.
pub fn brute_force_p_e(scores: &[f64], labels: &[bool]) -> f64 {
    let mut uniq: Vec<f64> = scores.to_vec();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let mut thresholds = vec![uniq[0] - 1.0];
    for w in uniq.windows(2) {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    thresholds.push(uniq[uniq.len() - 1] + 1.0);
    let n_stego = labels.iter().filter(|&&l| l).count();
    let n_cover = labels.len() - n_stego;
    thresholds
        .iter()
        .map(|&t| {
            let mut fa = 0;
            let mut md = 0;
            for (&s, &l) in scores.iter().zip(labels) {
                if l && s <= t {
                    md += 1;
                }
                if !l && s > t {
                    fa += 1;
                }
            }
            0.5 * (fa as f64 / n_cover as f64 + md as f64 / n_stego as f64)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: [usize; 4], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks are never straddled by a
/// finite-difference step.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| {
                let m = r.random_range(0.05..1.0);
                if r.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

/// Central differences of `f` at `x` for the listed coordinates.
pub fn numeric_grad(
    x: &mut [f64],
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute gap when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn spatial_pairs(n: u64, size: usize, beta: f64, seed: u64) -> Vec<LoadedPair> {
    let spec = EmbedSpec::from_beta(beta, seed).unwrap();
    let style = CoverStyle::default();
    (0..n)
        .map(|i| {
            let cover = split_rgb(&textured_cover(size, size, seed.wrapping_add(i), &style)).unwrap();
            let stego = lsbm_embed(&cover, &spec.for_item(i)).unwrap();
            LoadedPair { cover, stego }
        })
        .collect()
}

/// Covers compressed at `quality`, stegos from coefficient embedding; both
/// pass through the file writer and parser before decompression.
pub fn jpeg_pairs(n: u64, size: usize, quality: u8, beta: f64, seed: u64) -> Vec<LoadedPair> {
    let spec = EmbedSpec::from_beta(beta, seed).unwrap();
    let style = CoverStyle::default();
    (0..n)
        .map(|i| {
            let rgb = split_rgb(&textured_cover(size, size, seed.wrapping_add(i), &style)).unwrap();
            let (bytes, _) = encode_jpeg(&rgb, quality).unwrap();
            let cj = parse_jpeg(&bytes).unwrap();
            let sj = parse_jpeg(&write_jpeg(&jpeg_embed(&cj, &spec.for_item(i)).unwrap()).unwrap()).unwrap();
            LoadedPair {
                cover: decompress_to_ycbcr(&cj).unwrap(),
                stego: decompress_to_ycbcr(&sj).unwrap(),
            }
        })
        .collect()
}

pub fn planes_equal(a: &ColorPlanes, b: &ColorPlanes) -> bool {
    a == b
}
