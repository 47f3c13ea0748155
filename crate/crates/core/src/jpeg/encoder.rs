//! Fixture encoder: IJG quality scaling, standard Huffman tables, 4:4:4,
//! no restart markers. Output bytes are deterministic.

use super::dct::fdct_real;
use super::huffman::{category, magnitude_bits, BitWriter, EncodeTable, HuffmanSpec};
use super::tables::*;
use super::{Component, JpegError, JpegImage};
use crate::channelrep::{ColorPlanes, Domain};
use crate::plane::Plane;

/// Scales a natural-order base table for `quality` in 1..=100.
pub fn quality_table(base: &[u16; 64], quality: u8) -> Result<[u16; 64], JpegError> {
    if !(1..=100).contains(&quality) {
        return Err(JpegError::Encode(format!("quality {quality} outside 1..=100")));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(out)
}

fn rgb_to_ycbcr(cp: &ColorPlanes) -> [Plane; 3] {
    let [r, g, b] = cp.planes();
    let f = |wr: f64, wg: f64, wb: f64, off: f64| {
        Plane::from_fn(cp.height(), cp.width(), |y, x| {
            wr * r.get(y, x) + wg * g.get(y, x) + wb * b.get(y, x) + off
        })
    };
    [
        f(0.299, 0.587, 0.114, 0.0),
        f(-0.168_736, -0.331_264, 0.5, 128.0),
        f(0.5, -0.418_688, -0.081_312, 128.0),
    ]
}

fn quantize_plane(plane: &Plane, qtable: &[u16; 64]) -> (usize, usize, Vec<i32>) {
    let (h, w) = (plane.height(), plane.width());
    let (bw, bh) = (w.div_ceil(8), h.div_ceil(8));
    let mut coeffs = Vec::with_capacity(bw * bh * 64);
    let mut block = [0.0; 64];
    for by in 0..bh {
        for bx in 0..bw {
            for y in 0..8 {
                for x in 0..8 {
                    // edge replication for partial blocks
                    let sy = (by * 8 + y).min(h - 1);
                    let sx = (bx * 8 + x).min(w - 1);
                    block[y * 8 + x] = plane.get(sy, sx) - 128.0;
                }
            }
            let f = fdct_real(&block);
            for (i, &v) in f.iter().enumerate() {
                let q = (v / qtable[i] as f64).round() as i32;
                let limit = if i == 0 { 2047 } else { 1023 };
                coeffs.push(q.clamp(-limit, limit));
            }
        }
    }
    (bw, bh, coeffs)
}

/// Transforms and quantizes 1 (gray) or 3 (YCbCr) planes. Plane 0 uses the
/// scaled luminance table, planes 1 and 2 share the chrominance table.
pub fn encode_planes(planes: &[&Plane], quality: u8) -> Result<(Vec<u8>, JpegImage), JpegError> {
    if planes.len() != 1 && planes.len() != 3 {
        return Err(JpegError::Encode(format!("{} planes", planes.len())));
    }
    let (h, w) = (planes[0].height(), planes[0].width());
    if h == 0 || w == 0 || h > 65535 || w > 65535 {
        return Err(JpegError::Encode(format!("dimensions {w}x{h}")));
    }
    if planes.iter().any(|p| !p.same_dims(planes[0])) {
        return Err(JpegError::Encode("planes differ in size".into()));
    }
    let luma = quality_table(&BASE_LUMA_QUANT, quality)?;
    let chroma = quality_table(&BASE_CHROMA_QUANT, quality)?;
    let mut quant_tables = [None; 4];
    quant_tables[0] = Some(natural_to_zigzag(&luma));
    if planes.len() == 3 {
        quant_tables[1] = Some(natural_to_zigzag(&chroma));
    }
    let components = planes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let table = if i == 0 { &luma } else { &chroma };
            let (bw, bh, coeffs) = quantize_plane(p, table);
            Component {
                id: i as u8 + 1,
                h: 1,
                v: 1,
                quant_index: (i > 0) as u8,
                blocks_w: bw,
                blocks_h: bh,
                coeffs,
            }
        })
        .collect();
    let img = JpegImage {
        width: w,
        height: h,
        quant_tables,
        components,
    };
    let bytes = write_jpeg(&img)?;
    Ok((bytes, img))
}

/// Encodes three color planes at `quality`; RGB input is converted to
/// YCbCr (JFIF), YCbCr input is used as is.
pub fn encode_jpeg(planes: &ColorPlanes, quality: u8) -> Result<(Vec<u8>, JpegImage), JpegError> {
    let ycc = match planes.domain() {
        Domain::SpatialRgb => rgb_to_ycbcr(planes),
        Domain::JpegYcbcr => planes.planes().clone(),
    };
    encode_planes(&[&ycc[0], &ycc[1], &ycc[2]], quality)
}

fn segment(out: &mut Vec<u8>, marker: u8, body: &[u8]) {
    out.extend([0xFF, marker]);
    out.extend(((body.len() + 2) as u16).to_be_bytes());
    out.extend(body);
}

fn dht_body(class_slot: u8, bits: &[u8; 16], values: &[u8]) -> Vec<u8> {
    let mut b = vec![class_slot];
    b.extend(bits);
    b.extend(values);
    b
}

/// Serializes coefficients with the standard Huffman tables. Every
/// component must be 1x1 sampled; the first component uses the luminance
/// tables and the rest the chrominance tables.
pub fn write_jpeg(img: &JpegImage) -> Result<Vec<u8>, JpegError> {
    let n = img.components.len();
    if n != 1 && n != 3 {
        return Err(JpegError::Encode(format!("{n} components")));
    }
    let (bw, bh) = (img.width.div_ceil(8), img.height.div_ceil(8));
    for c in &img.components {
        if c.h != 1 || c.v != 1 {
            return Err(JpegError::Encode("only 4:4:4 sampling can be written".into()));
        }
        if c.blocks_w != bw || c.blocks_h != bh || c.coeffs.len() != bw * bh * 64 {
            return Err(JpegError::Encode("block grid does not match dimensions".into()));
        }
        if img.quant_tables[c.quant_index as usize & 3].is_none() {
            return Err(JpegError::Encode(format!("missing table {}", c.quant_index)));
        }
    }

    let mut out = vec![0xFF, 0xD8];
    segment(
        &mut out,
        0xE0,
        &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0],
    );
    for (slot, t) in img.quant_tables.iter().enumerate() {
        if let Some(t) = t {
            let wide = t.iter().any(|&v| v > 255);
            let mut body = vec![((wide as u8) << 4) | slot as u8];
            for &v in t {
                if wide {
                    body.extend(v.to_be_bytes());
                } else {
                    body.push(v as u8);
                }
            }
            segment(&mut out, 0xDB, &body);
        }
    }
    let mut sof = vec![8];
    sof.extend((img.height as u16).to_be_bytes());
    sof.extend((img.width as u16).to_be_bytes());
    sof.push(n as u8);
    for c in &img.components {
        sof.extend([c.id, 0x11, c.quant_index]);
    }
    segment(&mut out, 0xC0, &sof);

    segment(&mut out, 0xC4, &dht_body(0x00, &DC_LUMA_BITS, &DC_LUMA_VALUES));
    segment(&mut out, 0xC4, &dht_body(0x10, &AC_LUMA_BITS, &AC_LUMA_VALUES));
    if n == 3 {
        segment(&mut out, 0xC4, &dht_body(0x01, &DC_CHROMA_BITS, &DC_CHROMA_VALUES));
        segment(&mut out, 0xC4, &dht_body(0x11, &AC_CHROMA_BITS, &AC_CHROMA_VALUES));
    }
    let mut sos = vec![n as u8];
    for (i, c) in img.components.iter().enumerate() {
        sos.extend([c.id, if i == 0 { 0x00 } else { 0x11 }]);
    }
    sos.extend([0, 63, 0]);
    segment(&mut out, 0xDA, &sos);

    let spec = |bits: [u8; 16], values: &[u8]| {
        EncodeTable::new(&HuffmanSpec {
            bits,
            values: values.to_vec(),
        })
    };
    let luma = (spec(DC_LUMA_BITS, &DC_LUMA_VALUES), spec(AC_LUMA_BITS, &AC_LUMA_VALUES));
    let chroma = (
        spec(DC_CHROMA_BITS, &DC_CHROMA_VALUES),
        spec(AC_CHROMA_BITS, &AC_CHROMA_VALUES),
    );
    let mut w = BitWriter::default();
    let mut preds = vec![0i32; n];
    for by in 0..bh {
        for bx in 0..bw {
            for (ci, c) in img.components.iter().enumerate() {
                let (dc, ac) = if ci == 0 { (&luma.0, &luma.1) } else { (&chroma.0, &chroma.1) };
                encode_block(&mut w, c.block(by, bx), &mut preds[ci], dc, ac)?;
            }
        }
    }
    out.extend(w.finish());
    out.extend([0xFF, 0xD9]);
    Ok(out)
}

fn put_symbol(w: &mut BitWriter, t: &EncodeTable, sym: u8) -> Result<(), JpegError> {
    let (code, len) = t
        .code(sym)
        .ok_or_else(|| JpegError::Encode(format!("symbol 0x{sym:02X} not in table")))?;
    w.put(code as u32, len);
    Ok(())
}

fn encode_block(
    w: &mut BitWriter,
    block: &[i32],
    pred: &mut i32,
    dc: &EncodeTable,
    ac: &EncodeTable,
) -> Result<(), JpegError> {
    let diff = block[0] - *pred;
    *pred = block[0];
    let s = category(diff);
    if s > 11 {
        return Err(JpegError::Encode(format!("DC difference {diff} out of range")));
    }
    put_symbol(w, dc, s)?;
    w.put(magnitude_bits(diff, s), s);

    let mut run = 0u8;
    for &nat in &ZIGZAG[1..] {
        let v = block[nat];
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            put_symbol(w, ac, 0xF0)?;
            run -= 16;
        }
        let s = category(v);
        if s > 10 {
            return Err(JpegError::Encode(format!("AC coefficient {v} out of range")));
        }
        put_symbol(w, ac, (run << 4) | s)?;
        w.put(magnitude_bits(v, s), s);
        run = 0;
    }
    if run > 0 {
        put_symbol(w, ac, 0x00)?;
    }
    Ok(())
}
