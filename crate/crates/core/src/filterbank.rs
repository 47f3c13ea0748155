//! Fixed high-pass residual filters: the 30 SRM basic linear kernels
//! followed by 32 zero-mean Gabor kernels, all on a 5x5 support.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::plane::Plane;

pub const KERNEL_SIZE: usize = 5;
pub const SRM_COUNT: usize = 30;
pub const GABOR_COUNT: usize = 32;
pub const BANK_SIZE: usize = SRM_COUNT + GABOR_COUNT;

/// Default Gabor scales (sigma); wavelength is `2 * sigma`.
pub const GABOR_SCALES: [f64; 4] = [0.5, 0.75, 1.0, 1.25];
pub const GABOR_ORIENTATIONS: usize = 8;
pub const GABOR_GAMMA: f64 = 0.5;
pub const GABOR_PHASE: f64 = 0.0;

pub type Taps = [[f64; KERNEL_SIZE]; KERNEL_SIZE];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("gabor parameters give {got} kernels, expected {GABOR_COUNT}")]
    GaborCount { got: usize },
    #[error("plane {height}x{width} is smaller than the {KERNEL_SIZE}x{KERNEL_SIZE} kernel support")]
    PlaneTooSmall { height: usize, width: usize },
    #[error("truncation bound must be positive, got {0}")]
    BadTruncation(f64),
    #[error("filter file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    Srm1st,
    Srm2nd,
    Srm3rd,
    SrmSquare3,
    SrmSquare5,
    SrmEdge3,
    SrmEdge5,
    Gabor,
}

impl KernelFamily {
    pub fn is_srm(self) -> bool {
        self != KernelFamily::Gabor
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Srm1st => "SRM_1ST",
            KernelFamily::Srm2nd => "SRM_2ND",
            KernelFamily::Srm3rd => "SRM_3RD",
            KernelFamily::SrmSquare3 => "SRM_SQUARE3",
            KernelFamily::SrmSquare5 => "SRM_SQUARE5",
            KernelFamily::SrmEdge3 => "SRM_EDGE3",
            KernelFamily::SrmEdge5 => "SRM_EDGE5",
            KernelFamily::Gabor => "GABOR",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "SRM_1ST" => KernelFamily::Srm1st,
            "SRM_2ND" => KernelFamily::Srm2nd,
            "SRM_3RD" => KernelFamily::Srm3rd,
            "SRM_SQUARE3" => KernelFamily::SrmSquare3,
            "SRM_SQUARE5" => KernelFamily::SrmSquare5,
            "SRM_EDGE3" => KernelFamily::SrmEdge3,
            "SRM_EDGE5" => KernelFamily::SrmEdge5,
            "GABOR" => KernelFamily::Gabor,
            other => return Err(FilterError::Format(format!("unknown family {other:?}"))),
        })
    }
}

/// A 5x5 kernel stored unnormalized together with its normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub taps: Taps,
    pub normalizer: f64,
    pub family: KernelFamily,
    pub index_in_family: usize,
}

impl Kernel {
    /// Taps divided by the normalizer; this is what gets convolved.
    pub fn normalized(&self) -> Taps {
        let mut out = self.taps;
        for row in out.iter_mut() {
            for t in row.iter_mut() {
                *t /= self.normalizer;
            }
        }
        out
    }

    pub fn tap_sum(&self) -> f64 {
        self.taps.iter().flatten().sum()
    }
}

/// The ordered 62-kernel preprocessing bank.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    kernels: Vec<Kernel>,
}

impl FilterBank {
    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Builds a bank from an arbitrary kernel list (used when reading exports).
    pub fn from_kernels(kernels: Vec<Kernel>) -> Self {
        Self { kernels }
    }

    /// Plain-text export: a header line, then one line per kernel with
    /// family, index, normalizer and 25 row-major taps.
    pub fn to_text(&self) -> String {
        let mut out = format!("UCNET-FILTERS v1 count={}\n", self.kernels.len());
        for k in &self.kernels {
            out.push_str(&format!(
                "{} {} {}",
                k.family,
                k.index_in_family,
                sig9(k.normalizer)
            ));
            for t in k.taps.iter().flatten() {
                out.push(' ');
                out.push_str(&sig9(*t));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FilterError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| FilterError::Format("empty file".into()))?;
        let count: usize = header
            .strip_prefix("UCNET-FILTERS v1 count=")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| FilterError::Format(format!("bad header {header:?}")))?;
        let mut kernels = Vec::with_capacity(count);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 + KERNEL_SIZE * KERNEL_SIZE {
                return Err(FilterError::Format(format!(
                    "expected 28 fields, got {}",
                    fields.len()
                )));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| FilterError::Format(format!("bad number {s:?}")))
            };
            let family = fields[0].parse()?;
            let index_in_family = fields[1]
                .parse()
                .map_err(|_| FilterError::Format(format!("bad index {:?}", fields[1])))?;
            let normalizer = num(fields[2])?;
            let mut taps = [[0.0; KERNEL_SIZE]; KERNEL_SIZE];
            for (i, f) in fields[3..].iter().enumerate() {
                taps[i / KERNEL_SIZE][i % KERNEL_SIZE] = num(f)?;
            }
            kernels.push(Kernel {
                taps,
                normalizer,
                family,
                index_in_family,
            });
        }
        if kernels.len() != count {
            return Err(FilterError::Format(format!(
                "header says {count} kernels, found {}",
                kernels.len()
            )));
        }
        Ok(Self { kernels })
    }
}

/// Nine significant digits in scientific notation.
fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// The eight neighbour directions as (dy, dx), clockwise from east.
const DIRECTIONS: [(isize, isize); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

fn place(taps: &mut Taps, dy: isize, dx: isize, v: f64) {
    let c = (KERNEL_SIZE / 2) as isize;
    taps[(c + dy) as usize][(c + dx) as usize] += v;
}

/// Embeds a small odd-sized kernel centered in 5x5.
fn embed<const N: usize>(small: [[f64; N]; N]) -> Taps {
    let off = (KERNEL_SIZE - N) / 2;
    let mut taps = [[0.0; KERNEL_SIZE]; KERNEL_SIZE];
    for (y, row) in small.iter().enumerate() {
        for (x, v) in row.iter().enumerate() {
            taps[y + off][x + off] = *v;
        }
    }
    taps
}

/// Rotates a 5x5 kernel by 90 degrees clockwise.
fn rotate_cw(t: &Taps) -> Taps {
    let mut out = [[0.0; KERNEL_SIZE]; KERNEL_SIZE];
    for (y, row) in out.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = t[KERNEL_SIZE - 1 - x][y];
        }
    }
    out
}

const SQUARE3: [[f64; 3]; 3] = [[-1., 2., -1.], [2., -4., 2.], [-1., 2., -1.]];
const EDGE3: [[f64; 3]; 3] = [[-1., 2., -1.], [2., -4., 2.], [0., 0., 0.]];
const SQUARE5: [[f64; 5]; 5] = [
    [-1., 2., -2., 2., -1.],
    [2., -6., 8., -6., 2.],
    [-2., 8., -12., 8., -2.],
    [2., -6., 8., -6., 2.],
    [-1., 2., -2., 2., -1.],
];
const EDGE5: [[f64; 5]; 5] = [
    [-1., 2., -2., 2., -1.],
    [2., -6., 8., -6., 2.],
    [-2., 8., -12., 8., -2.],
    [0., 0., 0., 0., 0.],
    [0., 0., 0., 0., 0.],
];

/// The 30 SRM basic linear kernels, in family order.
pub fn srm_kernels() -> Vec<Kernel> {
    let mut out = Vec::with_capacity(SRM_COUNT);
    let mut push = |taps: Taps, normalizer: f64, family: KernelFamily, idx: usize| {
        out.push(Kernel {
            taps,
            normalizer,
            family,
            index_in_family: idx,
        })
    };

    // first order: x[d] - x[0]
    for (i, &(dy, dx)) in DIRECTIONS.iter().enumerate() {
        let mut t = [[0.0; KERNEL_SIZE]; KERNEL_SIZE];
        place(&mut t, 0, 0, -1.0);
        place(&mut t, dy, dx, 1.0);
        push(t, 1.0, KernelFamily::Srm1st, i);
    }

    // second order: x[-d] - 2 x[0] + x[d] along horizontal, vertical and both diagonals
    for (i, &(dy, dx)) in [(0, 1), (1, 0), (1, 1), (1, -1)].iter().enumerate() {
        let mut t = [[0.0; KERNEL_SIZE]; KERNEL_SIZE];
        place(&mut t, -dy, -dx, 1.0);
        place(&mut t, 0, 0, -2.0);
        place(&mut t, dy, dx, 1.0);
        push(t, 2.0, KernelFamily::Srm2nd, i);
    }

    // third order: x[-d] - 3 x[0] + 3 x[d] - x[2d]
    for (i, &(dy, dx)) in DIRECTIONS.iter().enumerate() {
        let mut t = [[0.0; KERNEL_SIZE]; KERNEL_SIZE];
        place(&mut t, -dy, -dx, 1.0);
        place(&mut t, 0, 0, -3.0);
        place(&mut t, dy, dx, 3.0);
        place(&mut t, 2 * dy, 2 * dx, -1.0);
        push(t, 3.0, KernelFamily::Srm3rd, i);
    }

    push(embed(SQUARE3), 4.0, KernelFamily::SrmSquare3, 0);
    push(SQUARE5, 12.0, KernelFamily::SrmSquare5, 0);

    let mut t = embed(EDGE3);
    for i in 0..4 {
        push(t, 4.0, KernelFamily::SrmEdge3, i);
        t = rotate_cw(&t);
    }
    let mut t = EDGE5;
    for i in 0..4 {
        push(t, 12.0, KernelFamily::SrmEdge5, i);
        t = rotate_cw(&t);
    }
    out
}

/// Samples one Gabor kernel on the 5x5 integer grid (x = column offset,
/// y = row offset from the center), before mean removal.
pub fn gabor_sample(sigma: f64, theta: f64, gamma: f64, phase: f64, x: f64, y: f64) -> f64 {
    let lambda = 2.0 * sigma;
    let xr = x * theta.cos() + y * theta.sin();
    let yr = -x * theta.sin() + y * theta.cos();
    (-(xr * xr + gamma * gamma * yr * yr) / (2.0 * sigma * sigma)).exp()
        * (2.0 * PI * xr / lambda + phase).cos()
}

/// Zero-mean Gabor kernels ordered by (scale, orientation); orientation `k`
/// is `k * pi / orientations`.
pub fn gabor_kernels(
    scales: &[f64],
    orientations: usize,
    gamma: f64,
    phase: f64,
) -> Result<Vec<Kernel>, FilterError> {
    let got = scales.len() * orientations;
    if got != GABOR_COUNT {
        return Err(FilterError::GaborCount { got });
    }
    let c = (KERNEL_SIZE / 2) as f64;
    let mut out = Vec::with_capacity(GABOR_COUNT);
    for &sigma in scales {
        for k in 0..orientations {
            let theta = k as f64 * PI / orientations as f64;
            let mut taps = [[0.0; KERNEL_SIZE]; KERNEL_SIZE];
            for (row, line) in taps.iter_mut().enumerate() {
                for (col, t) in line.iter_mut().enumerate() {
                    *t = gabor_sample(sigma, theta, gamma, phase, col as f64 - c, row as f64 - c);
                }
            }
            let mean = taps.iter().flatten().sum::<f64>() / (KERNEL_SIZE * KERNEL_SIZE) as f64;
            for t in taps.iter_mut().flatten() {
                *t -= mean;
            }
            out.push(Kernel {
                taps,
                normalizer: 1.0,
                family: KernelFamily::Gabor,
                index_in_family: out.len(),
            });
        }
    }
    Ok(out)
}

/// SRM kernels followed by the default Gabor set.
pub fn full_bank() -> FilterBank {
    let mut kernels = srm_kernels();
    kernels.extend(
        gabor_kernels(&GABOR_SCALES, GABOR_ORIENTATIONS, GABOR_GAMMA, GABOR_PHASE)
            .expect("default gabor parameters give 32 kernels"),
    );
    FilterBank { kernels }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample.
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualConfig {
    pub truncation_t: f64,
    pub pad_mode: PadMode,
}

impl ResidualConfig {
    pub fn new(truncation_t: f64, pad_mode: PadMode) -> Result<Self, FilterError> {
        if !(truncation_t > 0.0) || !truncation_t.is_finite() {
            return Err(FilterError::BadTruncation(truncation_t));
        }
        Ok(Self {
            truncation_t,
            pad_mode,
        })
    }
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            truncation_t: 3.0,
            pad_mode: PadMode::Zero,
        }
    }
}

/// `count x height x width` residual maps, kernel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStack {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ResidualStack {
    pub fn map(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }
}

fn padded(plane: &Plane, pad: usize, mode: PadMode) -> Vec<f64> {
    let (h, w) = (plane.height(), plane.width());
    let pw = w + 2 * pad;
    let mut out = vec![0.0; (h + 2 * pad) * pw];
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let j = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
        j as usize
    };
    for py in 0..h + 2 * pad {
        let sy = py as isize - pad as isize;
        for px in 0..pw {
            let sx = px as isize - pad as isize;
            let inside = sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize;
            out[py * pw + px] = match (inside, mode) {
                (true, _) => plane.get(sy as usize, sx as usize),
                (false, PadMode::Zero) => 0.0,
                (false, PadMode::Reflect) => plane.get(reflect(sy, h), reflect(sx, w)),
            };
        }
    }
    out
}

/// Correlates `plane` with every normalized kernel (no kernel flip),
/// same-size output, then clamps to `[-T, T]`.
pub fn apply_bank(
    plane: &Plane,
    bank: &FilterBank,
    cfg: &ResidualConfig,
) -> Result<ResidualStack, FilterError> {
    let mut data = vec![0.0; bank.len() * plane.height() * plane.width()];
    apply_bank_into(plane, bank, cfg, &mut data)?;
    Ok(ResidualStack {
        count: bank.len(),
        height: plane.height(),
        width: plane.width(),
        data,
    })
}

/// As [`apply_bank`], writing into a caller-provided buffer of
/// `bank.len() * H * W` values.
pub fn apply_bank_into(
    plane: &Plane,
    bank: &FilterBank,
    cfg: &ResidualConfig,
    out: &mut [f64],
) -> Result<(), FilterError> {
    let (h, w) = (plane.height(), plane.width());
    if h < KERNEL_SIZE || w < KERNEL_SIZE {
        return Err(FilterError::PlaneTooSmall {
            height: h,
            width: w,
        });
    }
    assert_eq!(out.len(), bank.len() * h * w, "residual buffer size");
    let pad = KERNEL_SIZE / 2;
    let src = padded(plane, pad, cfg.pad_mode);
    let pw = w + 2 * pad;
    let t = cfg.truncation_t;

    for (kernel, map) in bank.kernels().iter().zip(out.chunks_exact_mut(h * w)) {
        let norm = kernel.normalized();
        let taps: Vec<(usize, usize, f64)> = (0..KERNEL_SIZE)
            .flat_map(|ky| (0..KERNEL_SIZE).map(move |kx| (ky, kx)))
            .filter(|&(ky, kx)| norm[ky][kx] != 0.0)
            .map(|(ky, kx)| (ky, kx, norm[ky][kx]))
            .collect();
        map.fill(0.0);
        for &(ky, kx, wt) in &taps {
            for y in 0..h {
                let row = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                let dst = &mut map[y * w..(y + 1) * w];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += wt * s;
                }
            }
        }
        for v in map.iter_mut() {
            *v = v.clamp(-t, t);
        }
    }
    Ok(())
}
