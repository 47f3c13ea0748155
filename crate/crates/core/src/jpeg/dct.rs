//! Orthonormal 8x8 DCT used by JPEG. Blocks are row-major: index
//! `row * 8 + col`, row = vertical frequency / position.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// `BASIS[u][x] = C(u)/2 * cos((2x+1) u pi / 16)`.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let c = if u == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * c * (((2 * x + 1) * u) as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

/// Inverse transform of real coefficients, without level shift.
pub fn idct_real(coef: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    // rows: tmp[v][x] = sum_u coef[v][u] * b[u][x]
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += coef[v * 8 + u] * b[u][x];
            }
            tmp[v * 8 + x] = acc;
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += b[v][y] * tmp[v * 8 + x];
            }
            out[y * 8 + x] = acc;
        }
    }
    out
}

/// Forward transform of samples (already level shifted).
pub fn fdct_real(samples: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                acc += samples[y * 8 + x] * b[u][x];
            }
            tmp[y * 8 + u] = acc;
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                acc += b[v][y] * tmp[y * 8 + u];
            }
            out[v * 8 + u] = acc;
        }
    }
    out
}

/// Dequantizes a natural-order block with a natural-order table and
/// inverts the DCT, adding the +128 level shift. No rounding or clipping.
pub fn idct_block(coeffs: &[i32], qtable: &[u16; 64]) -> [f64; 64] {
    assert_eq!(coeffs.len(), 64, "block must have 64 coefficients");
    let mut deq = [0.0; 64];
    for i in 0..64 {
        deq[i] = coeffs[i] as f64 * qtable[i] as f64;
    }
    let mut s = idct_real(&deq);
    for v in s.iter_mut() {
        *v += 128.0;
    }
    s
}
