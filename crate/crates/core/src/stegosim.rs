//! Non-adaptive +-1 embedding simulators at a target change rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channelrep::{ColorPlanes, Domain};
use crate::jpeg::JpegImage;

pub const LOG2_3: f64 = 1.584_962_500_721_156_2;
pub const MAX_CHANGE_RATE: f64 = 1.0 / 3.0;

/// Largest quantized AC magnitude the standard Huffman tables can carry.
const AC_LIMIT: i32 = 1023;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StegoError {
    #[error("payload {0} outside [0, log2 3]")]
    PayloadOutOfRange(f64),
    #[error("change rate {0} outside [0, 1/3]")]
    ChangeRateOutOfRange(f64),
    #[error("spatial embedding needs RGB planes")]
    WrongDomain,
}

/// Ternary entropy in bits, `-2b log2 b - (1-2b) log2 (1-2b)`; reaches
/// `log2 3` at `b = 1/3`.
pub fn ternary_entropy(beta: f64) -> f64 {
    let xlog = |p: f64| if p <= 0.0 { 0.0 } else { p * p.log2() };
    -2.0 * xlog(beta) - xlog(1.0 - 2.0 * beta)
}

/// Solves `ternary_entropy(beta) = alpha` for beta in `[0, 1/3]` by bisection.
pub fn inverse_ternary_entropy(alpha: f64) -> Result<f64, StegoError> {
    if !(0.0..=LOG2_3 + 1e-12).contains(&alpha) {
        return Err(StegoError::PayloadOutOfRange(alpha));
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    // the entropy is flat at its peak, so anything at or above the computed
    // maximum maps to the peak instead of a bisection point ~1e-8 below it
    if alpha >= ternary_entropy(MAX_CHANGE_RATE) {
        return Ok(MAX_CHANGE_RATE);
    }
    let (mut lo, mut hi) = (0.0f64, MAX_CHANGE_RATE);
    // entropy is increasing on [0, 1/3]
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ternary_entropy(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedSpec {
    pub payload_alpha: f64,
    pub change_rate_beta: f64,
    pub seed: u64,
}

impl EmbedSpec {
    pub fn from_alpha(alpha: f64, seed: u64) -> Result<Self, StegoError> {
        Ok(Self {
            payload_alpha: alpha,
            change_rate_beta: inverse_ternary_entropy(alpha)?,
            seed,
        })
    }

    pub fn from_beta(beta: f64, seed: u64) -> Result<Self, StegoError> {
        if !(0.0..=MAX_CHANGE_RATE).contains(&beta) {
            return Err(StegoError::ChangeRateOutOfRange(beta));
        }
        Ok(Self {
            payload_alpha: ternary_entropy(beta),
            change_rate_beta: beta,
            seed,
        })
    }

    /// Per-item seed for dataset generation.
    pub fn for_item(&self, index: u64) -> Self {
        Self {
            seed: self.seed ^ index,
            ..*self
        }
    }
}

/// LSB matching on all three channels: each pixel is changed by +-1 with
/// probability beta, forced inward at 0 and 255.
pub fn lsbm_embed(planes: &ColorPlanes, spec: &EmbedSpec) -> Result<ColorPlanes, StegoError> {
    if planes.domain() != Domain::SpatialRgb {
        return Err(StegoError::WrongDomain);
    }
    let beta = spec.change_rate_beta;
    if !(0.0..=MAX_CHANGE_RATE).contains(&beta) {
        return Err(StegoError::ChangeRateOutOfRange(beta));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = planes.clone();
    for c in 0..3 {
        for v in out.plane_mut(c).data_mut() {
            if rng.random::<f64>() >= beta {
                continue;
            }
            let up = rng.random::<bool>();
            *v = if *v <= 0.0 {
                *v + 1.0
            } else if *v >= 255.0 {
                *v - 1.0
            } else if up {
                *v + 1.0
            } else {
                *v - 1.0
            };
        }
    }
    Ok(out)
}

/// Changes each nonzero AC coefficient of every component by +-1 with
/// probability beta. DC terms and zeros are never touched; a coefficient at
/// the Huffman range limit is moved inward.
pub fn jpeg_embed(j: &JpegImage, spec: &EmbedSpec) -> Result<JpegImage, StegoError> {
    let beta = spec.change_rate_beta;
    if !(0.0..=MAX_CHANGE_RATE).contains(&beta) {
        return Err(StegoError::ChangeRateOutOfRange(beta));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = j.clone();
    for comp in &mut out.components {
        for block in comp.coeffs.chunks_exact_mut(64) {
            for v in &mut block[1..] {
                if *v == 0 || rng.random::<f64>() >= beta {
                    continue;
                }
                let up = rng.random::<bool>();
                *v += if *v >= AC_LIMIT {
                    -1
                } else if *v <= -AC_LIMIT {
                    1
                } else if up {
                    1
                } else {
                    -1
                };
            }
        }
    }
    Ok(out)
}

/// Number of nonzero AC coefficients, the JPEG embedding population.
pub fn nonzero_ac_count(j: &JpegImage) -> usize {
    j.components
        .iter()
        .flat_map(|c| c.coeffs.chunks_exact(64))
        .map(|b| b[1..].iter().filter(|&&v| v != 0).count())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::Plane;

    /// Independent oracle: bisection with its own entropy expression.
    fn oracle_inverse(alpha: f64) -> f64 {
        let h = |b: f64| {
            let r = 1.0 - 2.0 * b;
            let tail = if r > 0.0 { r * r.ln() } else { 0.0 };
            (-2.0 * b * b.ln() - tail) / 2f64.ln()
        };
        let (mut lo, mut hi) = (1e-300, 1.0 / 3.0);
        for _ in 0..300 {
            let m = 0.5 * (lo + hi);
            if h(m) < alpha {
                lo = m
            } else {
                hi = m
            }
        }
        lo
    }

    #[test]
    fn inverse_endpoints() {
        assert_eq!(inverse_ternary_entropy(0.0).unwrap(), 0.0);
        assert!((inverse_ternary_entropy(LOG2_3).unwrap() - 1.0 / 3.0).abs() < 1e-9);
        assert!((ternary_entropy(1.0 / 3.0) - LOG2_3).abs() < 1e-12);
    }

    #[test]
    fn inverse_at_one_bit() {
        let b = inverse_ternary_entropy(1.0).unwrap();
        assert!((b - oracle_inverse(1.0)).abs() < 1e-10);
        // frozen: scipy brentq on the same equation gives 0.11354609760967413
        assert!((b - 0.113_546_097_609_674_13).abs() < 1e-10);
        assert!((ternary_entropy(b) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn inverse_rejects_out_of_range() {
        assert!(inverse_ternary_entropy(-0.1).is_err());
        assert!(inverse_ternary_entropy(1.6).is_err());
    }

    fn planes(h: usize, w: usize, value: f64) -> ColorPlanes {
        let p = Plane::filled(h, w, value);
        ColorPlanes::new(Domain::SpatialRgb, [p.clone(), p.clone(), p]).unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let cp = planes(16, 16, 100.0);
        let out = lsbm_embed(&cp, &EmbedSpec::from_beta(0.0, 1).unwrap()).unwrap();
        assert_eq!(out, cp);
    }

    #[test]
    fn saturated_pixels_move_inward() {
        let spec = EmbedSpec::from_beta(1.0 / 3.0, 11).unwrap();
        let hi = lsbm_embed(&planes(32, 32, 255.0), &spec).unwrap();
        assert!(hi.planes().iter().flat_map(|p| p.data()).all(|&v| v == 255.0 || v == 254.0));
        assert!(hi.planes().iter().flat_map(|p| p.data()).any(|&v| v == 254.0));
        let lo = lsbm_embed(&planes(32, 32, 0.0), &spec).unwrap();
        assert!(lo.planes().iter().flat_map(|p| p.data()).all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn same_seed_same_stego() {
        let cp = planes(20, 20, 128.0);
        let spec = EmbedSpec::from_beta(0.2, 99).unwrap();
        assert_eq!(lsbm_embed(&cp, &spec).unwrap(), lsbm_embed(&cp, &spec).unwrap());
        assert_ne!(
            lsbm_embed(&cp, &spec).unwrap(),
            lsbm_embed(&cp, &spec.for_item(1)).unwrap()
        );
    }

    #[test]
    fn ycbcr_planes_rejected_for_lsbm() {
        let p = Plane::zeros(8, 8);
        let cp = ColorPlanes::new(Domain::JpegYcbcr, [p.clone(), p.clone(), p]).unwrap();
        assert_eq!(
            lsbm_embed(&cp, &EmbedSpec::from_beta(0.1, 0).unwrap()),
            Err(StegoError::WrongDomain)
        );
    }
}
