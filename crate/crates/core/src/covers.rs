//! Seeded synthetic color covers for desk-scale experiments.
//!
//! Each image is a smooth luminance field (oriented gratings plus Gaussian
//! blobs), turned into RGB with per-channel gain/offset and a weaker chroma
//! texture, then given mostly channel-correlated sensor noise and rounded
//! to 8 bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channelrep::Image8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverStyle {
    /// Range of the shared (all-channel) noise std.
    pub noise_std: (f64, f64),
    /// Independent per-channel noise as a fraction of the shared std.
    pub channel_noise_ratio: f64,
    pub gratings: (usize, usize),
    pub blobs: (usize, usize),
}

impl Default for CoverStyle {
    fn default() -> Self {
        Self {
            noise_std: (0.3, 1.2),
            channel_noise_ratio: 0.3,
            gratings: (3, 6),
            blobs: (2, 5),
        }
    }
}

struct Grating {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

struct Blob {
    amp: f64,
    cy: f64,
    cx: f64,
    inv_two_var: f64,
}

fn gratings(rng: &mut ChaCha8Rng, count: usize, amp: (f64, f64)) -> Vec<Grating> {
    (0..count)
        .map(|_| {
            let f = rng.random_range(0.01..0.12);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            Grating {
                amp: rng.random_range(amp.0..amp.1),
                fx: f * theta.cos(),
                fy: f * theta.sin(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect()
}

fn blobs(rng: &mut ChaCha8Rng, count: usize, w: usize, h: usize) -> Vec<Blob> {
    (0..count)
        .map(|_| {
            let sigma: f64 = rng.random_range(4.0..20.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Blob {
                amp: sign * rng.random_range(10.0..50.0),
                cy: rng.random_range(0.0..h as f64),
                cx: rng.random_range(0.0..w as f64),
                inv_two_var: 1.0 / (2.0 * sigma * sigma),
            }
        })
        .collect()
}

fn field(gs: &[Grating], bs: &[Blob], y: f64, x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let g: f64 = gs
        .iter()
        .map(|g| g.amp * (tau * (g.fx * x + g.fy * y) + g.phase).sin())
        .sum();
    let b: f64 = bs
        .iter()
        .map(|b| b.amp * (-((y - b.cy).powi(2) + (x - b.cx).powi(2)) * b.inv_two_var).exp())
        .sum();
    g + b
}

pub fn textured_cover(width: usize, height: usize, seed: u64, style: &CoverStyle) -> Image8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_g = rng.random_range(style.gratings.0..=style.gratings.1);
    let n_b = rng.random_range(style.blobs.0..=style.blobs.1);
    let luma_g = gratings(&mut rng, n_g, (5.0, 35.0));
    let luma_b = blobs(&mut rng, n_b, width, height);
    let mean = rng.random_range(60.0..190.0);
    let chroma: Vec<(f64, f64, Vec<Grating>)> = (0..3)
        .map(|_| {
            let gain = rng.random_range(0.8..1.2);
            let offset = rng.random_range(-25.0..25.0);
            (gain, offset, gratings(&mut rng, 2, (1.0, 8.0)))
        })
        .collect();
    let sigma = rng.random_range(style.noise_std.0..=style.noise_std.1);
    let shared = Normal::new(0.0, sigma).expect("finite std");
    let own = Normal::new(0.0, sigma * style.channel_noise_ratio).expect("finite std");

    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f64, x as f64);
            let l = mean + field(&luma_g, &luma_b, fy, fx);
            let n = shared.sample(&mut rng);
            for (gain, offset, cg) in &chroma {
                let v = gain * l + offset + field(cg, &[], fy, fx) + n + own.sample(&mut rng);
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image8::new(width, height, 3, data)
}
