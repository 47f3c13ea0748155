//! Channel representation: each color channel is filtered separately by the
//! full bank and the truncated residual stacks are concatenated, channel-major.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::filterbank::{apply_bank_into, FilterBank, FilterError, ResidualConfig, BANK_SIZE};
use crate::plane::Plane;

pub const COLOR_CHANNELS: usize = 3;
pub const REP_PLANES: usize = COLOR_CHANNELS * BANK_SIZE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("expected 3 color channels, got {0}")]
    ChannelCount(usize),
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferSize { got: usize, expected: usize },
    #[error("color planes have mismatched dimensions")]
    PlaneDims,
    #[error("filter bank has {0} kernels, expected {BANK_SIZE}")]
    BankSize(usize),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Embedding domain of the input, which fixes its color space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    SpatialRgb,
    JpegYcbcr,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::SpatialRgb => "spatial",
            Domain::JpegYcbcr => "jpeg",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "spatial" | "spatial_rgb" | "rgb" => Ok(Domain::SpatialRgb),
            "jpeg" | "jpeg_ycbcr" | "ycbcr" => Ok(Domain::JpegYcbcr),
            other => Err(format!("unknown domain {other:?} (expected spatial or jpeg)")),
        }
    }
}

/// Interleaved 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Self {
        Self {
            width,
            height,
            channels,
            data,
        }
    }
}

/// Three same-sized planes in the color space of `domain`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorPlanes {
    domain: Domain,
    planes: [Plane; 3],
}

impl ColorPlanes {
    pub fn new(domain: Domain, planes: [Plane; 3]) -> Result<Self, ChannelError> {
        if !planes[0].same_dims(&planes[1]) || !planes[0].same_dims(&planes[2]) {
            return Err(ChannelError::PlaneDims);
        }
        Ok(Self { domain, planes })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn planes(&self) -> &[Plane; 3] {
        &self.planes
    }

    pub fn plane(&self, c: usize) -> &Plane {
        &self.planes[c]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut Plane {
        &mut self.planes[c]
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn into_planes(self) -> [Plane; 3] {
        self.planes
    }

    /// Rounds and clamps spatial samples back to interleaved 8-bit RGB.
    pub fn to_image8(&self) -> Image8 {
        let (h, w) = (self.height(), self.width());
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for p in &self.planes {
                    data.push(p.get(y, x).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Image8::new(w, h, 3, data)
    }

    pub fn map_planes(&self, f: impl Fn(&Plane) -> Plane) -> ColorPlanes {
        ColorPlanes {
            domain: self.domain,
            planes: [f(&self.planes[0]), f(&self.planes[1]), f(&self.planes[2])],
        }
    }
}

/// Separates an interleaved RGB image into R, G and B planes.
pub fn split_rgb(image: &Image8) -> Result<ColorPlanes, ChannelError> {
    if image.channels != COLOR_CHANNELS {
        return Err(ChannelError::ChannelCount(image.channels));
    }
    let expected = image.width * image.height * 3;
    if image.data.len() != expected {
        return Err(ChannelError::BufferSize {
            got: image.data.len(),
            expected,
        });
    }
    let plane = |c: usize| {
        Plane::from_fn(image.height, image.width, |y, x| {
            image.data[(y * image.width + x) * 3 + c] as f64
        })
    };
    Ok(ColorPlanes {
        domain: Domain::SpatialRgb,
        planes: [plane(0), plane(1), plane(2)],
    })
}

/// `186 x H x W` tensor; plane `62 * c + k` is kernel `k` applied to channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRep {
    pub height: usize,
    pub width: usize,
    pub maps: Vec<f32>,
}

impl ChannelRep {
    pub fn planes(&self) -> usize {
        self.maps.len() / (self.height * self.width)
    }

    pub fn map(&self, i: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.maps[i * n..(i + 1) * n]
    }
}

/// Filters every channel with the bank and concatenates the truncated
/// residuals. Channels never mix.
pub fn channel_representation(
    cp: &ColorPlanes,
    bank: &FilterBank,
    cfg: &ResidualConfig,
) -> Result<ChannelRep, ChannelError> {
    if bank.len() != BANK_SIZE {
        return Err(ChannelError::BankSize(bank.len()));
    }
    let (h, w) = (cp.height(), cp.width());
    let per_channel = BANK_SIZE * h * w;
    let mut scratch = vec![0.0f64; per_channel];
    let mut maps = Vec::with_capacity(COLOR_CHANNELS * per_channel);
    for plane in cp.planes() {
        apply_bank_into(plane, bank, cfg, &mut scratch)?;
        maps.extend(scratch.iter().map(|&v| v as f32));
    }
    Ok(ChannelRep {
        height: h,
        width: w,
        maps,
    })
}
