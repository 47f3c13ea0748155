//! Baseline JPEG: DCT coefficient access, unrounded YCbCr decompression,
//! and a small 4:4:4 encoder for fabricating covers.

mod dct;
mod decoder;
mod encoder;
mod huffman;
pub mod tables;

use thiserror::Error;

use crate::channelrep::{ColorPlanes, Domain};
use crate::plane::Plane;

pub use dct::{fdct_real, idct_block, idct_real};
pub use decoder::parse_jpeg;
pub use encoder::{encode_jpeg, encode_planes, quality_table, write_jpeg};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JpegError {
    #[error("progressive JPEG is not supported")]
    ProgressiveUnsupported,
    #[error("arithmetic-coded JPEG is not supported")]
    ArithmeticUnsupported,
    #[error("truncated stream")]
    TruncatedStream,
    #[error("bad marker: {0}")]
    BadMarker(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("cannot encode: {0}")]
    Encode(String),
}

/// One color component with its quantized coefficients. Blocks are stored
/// row-major over the block grid, each as 64 natural-order values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub id: u8,
    pub h: u8,
    pub v: u8,
    pub quant_index: u8,
    pub blocks_w: usize,
    pub blocks_h: usize,
    pub coeffs: Vec<i32>,
}

impl Component {
    pub fn block(&self, by: usize, bx: usize) -> &[i32] {
        let i = (by * self.blocks_w + bx) * 64;
        &self.coeffs[i..i + 64]
    }

    pub fn block_mut(&mut self, by: usize, bx: usize) -> &mut [i32] {
        let i = (by * self.blocks_w + bx) * 64;
        &mut self.coeffs[i..i + 64]
    }

    pub fn block_count(&self) -> usize {
        self.blocks_w * self.blocks_h
    }
}

/// A parsed baseline JPEG. Quantization tables are kept in zigzag (file)
/// order; use [`JpegImage::quant_natural`] for the natural-order table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JpegImage {
    pub width: usize,
    pub height: usize,
    pub quant_tables: [Option<[u16; 64]>; 4],
    pub components: Vec<Component>,
}

impl JpegImage {
    pub fn max_sampling(&self) -> (usize, usize) {
        let h = self.components.iter().map(|c| c.h as usize).max().unwrap_or(1);
        let v = self.components.iter().map(|c| c.v as usize).max().unwrap_or(1);
        (h, v)
    }

    pub fn quant_natural(&self, component: usize) -> Result<[u16; 64], JpegError> {
        let idx = self.components[component].quant_index as usize;
        self.quant_tables
            .get(idx)
            .copied()
            .flatten()
            .map(|zz| tables::zigzag_to_natural(&zz))
            .ok_or_else(|| JpegError::Corrupt(format!("missing quantization table {idx}")))
    }

    /// Sampling factors as `HxV` strings, e.g. `["2x2", "1x1", "1x1"]`.
    pub fn sampling_summary(&self) -> String {
        self.components
            .iter()
            .map(|c| format!("{}x{}", c.h, c.v))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Samples of one component at its native resolution, unrounded.
fn component_samples(j: &JpegImage, ci: usize) -> Result<Plane, JpegError> {
    let c = &j.components[ci];
    let q = j.quant_natural(ci)?;
    let (pw, ph) = (c.blocks_w * 8, c.blocks_h * 8);
    let mut plane = Plane::zeros(ph, pw);
    for by in 0..c.blocks_h {
        for bx in 0..c.blocks_w {
            let s = idct_block(c.block(by, bx), &q);
            for y in 0..8 {
                for x in 0..8 {
                    plane.set(by * 8 + y, bx * 8 + x, s[y * 8 + x]);
                }
            }
        }
    }
    Ok(plane)
}

/// Every component decompressed to image resolution; subsampled chroma is
/// upsampled by pixel replication. Values are unrounded and unclipped.
pub fn decompress_planes(j: &JpegImage) -> Result<Vec<Plane>, JpegError> {
    let (hmax, vmax) = j.max_sampling();
    let mut out = Vec::with_capacity(j.components.len());
    for (ci, c) in j.components.iter().enumerate() {
        let native = component_samples(j, ci)?;
        let (h, v) = (c.h as usize, c.v as usize);
        out.push(Plane::from_fn(j.height, j.width, |y, x| {
            native.get(y * v / vmax, x * h / hmax)
        }));
    }
    Ok(out)
}

/// Y, Cb, Cr planes for the JPEG branch of the network.
pub fn decompress_to_ycbcr(j: &JpegImage) -> Result<ColorPlanes, JpegError> {
    if j.components.len() != 3 {
        return Err(JpegError::Unsupported(format!(
            "{} components; YCbCr needs 3",
            j.components.len()
        )));
    }
    let planes = decompress_planes(j)?;
    let [y, cb, cr]: [Plane; 3] = planes.try_into().expect("three planes");
    Ok(ColorPlanes::new(Domain::JpegYcbcr, [y, cb, cr]).expect("planes share image dimensions"))
}
