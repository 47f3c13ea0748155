//! Marker-segment parser and baseline Huffman scan decoder.

use super::huffman::{BitReader, DecodeTable, HuffmanSpec};
use super::tables::ZIGZAG;
use super::{Component, JpegError, JpegImage};

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8, JpegError> {
        let b = *self.data.get(self.pos).ok_or(JpegError::TruncatedStream)?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, JpegError> {
        Ok(((self.u8()? as u16) << 8) | self.u8()? as u16)
    }

    /// Reads a length-prefixed segment body.
    fn segment(&mut self) -> Result<&'a [u8], JpegError> {
        let len = self.u16()? as usize;
        if len < 2 {
            return Err(JpegError::Corrupt(format!("segment length {len}")));
        }
        let end = self.pos + len - 2;
        if end > self.data.len() {
            return Err(JpegError::TruncatedStream);
        }
        let body = &self.data[self.pos..end];
        self.pos = end;
        Ok(body)
    }

    /// Next marker code, skipping fill bytes.
    fn marker(&mut self) -> Result<u8, JpegError> {
        let b = self.u8()?;
        if b != 0xFF {
            return Err(JpegError::BadMarker(format!(
                "expected 0xFF at offset {}, found 0x{b:02X}",
                self.pos - 1
            )));
        }
        let mut m = self.u8()?;
        while m == 0xFF {
            m = self.u8()?;
        }
        Ok(m)
    }
}

struct FrameComponent {
    id: u8,
    h: u8,
    v: u8,
    tq: u8,
}

struct Frame {
    width: usize,
    height: usize,
    comps: Vec<FrameComponent>,
}

fn parse_dqt(body: &[u8], tables: &mut [Option<[u16; 64]>; 4]) -> Result<(), JpegError> {
    let mut c = Cursor { data: body, pos: 0 };
    while c.pos < body.len() {
        let pq_tq = c.u8()?;
        let (pq, tq) = (pq_tq >> 4, (pq_tq & 15) as usize);
        if tq > 3 || pq > 1 {
            return Err(JpegError::Corrupt(format!("DQT precision {pq} slot {tq}")));
        }
        let mut t = [0u16; 64];
        for v in t.iter_mut() {
            *v = if pq == 0 { c.u8()? as u16 } else { c.u16()? };
        }
        if t.contains(&0) {
            return Err(JpegError::Corrupt("zero quantizer".into()));
        }
        tables[tq] = Some(t);
    }
    Ok(())
}

fn parse_dht(
    body: &[u8],
    dc: &mut [Option<DecodeTable>; 4],
    ac: &mut [Option<DecodeTable>; 4],
) -> Result<(), JpegError> {
    let mut c = Cursor { data: body, pos: 0 };
    while c.pos < body.len() {
        let tc_th = c.u8()?;
        let (tc, th) = (tc_th >> 4, (tc_th & 15) as usize);
        if tc > 1 || th > 3 {
            return Err(JpegError::Corrupt(format!("DHT class {tc} slot {th}")));
        }
        let mut bits = [0u8; 16];
        for b in bits.iter_mut() {
            *b = c.u8()?;
        }
        let n: usize = bits.iter().map(|&b| b as usize).sum();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(c.u8()?);
        }
        let table = DecodeTable::new(&HuffmanSpec { bits, values })?;
        if tc == 0 {
            dc[th] = Some(table);
        } else {
            ac[th] = Some(table);
        }
    }
    Ok(())
}

fn parse_sof(body: &[u8]) -> Result<Frame, JpegError> {
    let mut c = Cursor { data: body, pos: 0 };
    let precision = c.u8()?;
    if precision != 8 {
        return Err(JpegError::Unsupported(format!("{precision}-bit samples")));
    }
    let height = c.u16()? as usize;
    let width = c.u16()? as usize;
    if height == 0 || width == 0 {
        return Err(JpegError::Unsupported("zero or DNL-defined dimensions".into()));
    }
    let n = c.u8()? as usize;
    if n != 1 && n != 3 {
        return Err(JpegError::Unsupported(format!("{n} components")));
    }
    let mut comps = Vec::with_capacity(n);
    for _ in 0..n {
        let id = c.u8()?;
        let hv = c.u8()?;
        let tq = c.u8()?;
        let (h, v) = (hv >> 4, hv & 15);
        if !(1..=2).contains(&h) || !(1..=2).contains(&v) || tq > 3 {
            return Err(JpegError::Unsupported(format!(
                "component {id} sampling {h}x{v} table {tq}"
            )));
        }
        comps.push(FrameComponent { id, h, v, tq });
    }
    Ok(Frame {
        width,
        height,
        comps,
    })
}

fn decode_block(
    r: &mut BitReader<'_>,
    dc: &DecodeTable,
    ac: &DecodeTable,
    pred: &mut i32,
    out: &mut [i32],
) -> Result<(), JpegError> {
    let s = dc.decode(r)?;
    if s > 11 {
        return Err(JpegError::Corrupt(format!("DC category {s}")));
    }
    *pred += r.receive_extend(s)?;
    out[0] = *pred;
    let mut k = 1;
    while k < 64 {
        let rs = ac.decode(r)?;
        let (run, size) = ((rs >> 4) as usize, rs & 15);
        if size == 0 {
            if run == 15 {
                k += 16;
                continue;
            }
            break;
        }
        k += run;
        if k > 63 {
            return Err(JpegError::Corrupt("AC run past end of block".into()));
        }
        out[ZIGZAG[k]] = r.receive_extend(size)?;
        k += 1;
    }
    if k > 64 {
        return Err(JpegError::Corrupt("AC run past end of block".into()));
    }
    Ok(())
}

/// Parses a baseline sequential Huffman JPEG into quantized coefficients.
pub fn parse_jpeg(bytes: &[u8]) -> Result<JpegImage, JpegError> {
    let mut c = Cursor {
        data: bytes,
        pos: 0,
    };
    if c.marker()? != 0xD8 {
        return Err(JpegError::BadMarker("missing SOI".into()));
    }
    let mut quant = [None; 4];
    let mut dc_tables: [Option<DecodeTable>; 4] = Default::default();
    let mut ac_tables: [Option<DecodeTable>; 4] = Default::default();
    let mut image: Option<JpegImage> = None;
    let mut scanned = false;

    loop {
        let m = c.marker()?;
        match m {
            0xC0 | 0xC1 => {
                if image.is_some() {
                    return Err(JpegError::BadMarker("second SOF".into()));
                }
                let f = parse_sof(c.segment()?)?;
                let hmax = f.comps.iter().map(|x| x.h as usize).max().unwrap();
                let vmax = f.comps.iter().map(|x| x.v as usize).max().unwrap();
                let components = f
                    .comps
                    .iter()
                    .map(|fc| {
                        let cw = (f.width * fc.h as usize).div_ceil(hmax);
                        let ch = (f.height * fc.v as usize).div_ceil(vmax);
                        let (bw, bh) = (cw.div_ceil(8), ch.div_ceil(8));
                        Component {
                            id: fc.id,
                            h: fc.h,
                            v: fc.v,
                            quant_index: fc.tq,
                            blocks_w: bw,
                            blocks_h: bh,
                            coeffs: vec![0; bw * bh * 64],
                        }
                    })
                    .collect();
                image = Some(JpegImage {
                    width: f.width,
                    height: f.height,
                    quant_tables: [None; 4],
                    components,
                });
            }
            0xC2 | 0xC6 => return Err(JpegError::ProgressiveUnsupported),
            0xC9..=0xCB | 0xCD..=0xCF | 0xCC => return Err(JpegError::ArithmeticUnsupported),
            0xC3 | 0xC5 | 0xC7 => {
                return Err(JpegError::Unsupported(format!("SOF marker 0x{m:02X}")))
            }
            0xC4 => parse_dht(c.segment()?, &mut dc_tables, &mut ac_tables)?,
            0xDB => parse_dqt(c.segment()?, &mut quant)?,
            0xDD => {
                let body = c.segment()?;
                if body.len() != 2 {
                    return Err(JpegError::Corrupt("DRI length".into()));
                }
                if body != [0, 0] {
                    return Err(JpegError::Unsupported("restart intervals".into()));
                }
            }
            0xDA => {
                let img = image
                    .as_mut()
                    .ok_or_else(|| JpegError::BadMarker("SOS before SOF".into()))?;
                let body = c.segment()?;
                c.pos = decode_scan(bytes, c.pos, body, img, &dc_tables, &ac_tables)?;
                scanned = true;
            }
            0xD9 => break,
            0xE0..=0xEF | 0xFE | 0xDC | 0xDE | 0xDF => {
                c.segment()?;
            }
            _ => {
                return Err(JpegError::BadMarker(format!(
                    "unexpected marker 0x{m:02X} at offset {}",
                    c.pos - 2
                )))
            }
        }
    }

    let mut img = image.ok_or_else(|| JpegError::BadMarker("no SOF".into()))?;
    if !scanned {
        return Err(JpegError::BadMarker("no SOS".into()));
    }
    for comp in &img.components {
        if quant[comp.quant_index as usize].is_none() {
            return Err(JpegError::Corrupt(format!(
                "component {} uses undefined quantization table {}",
                comp.id, comp.quant_index
            )));
        }
    }
    img.quant_tables = quant;
    Ok(img)
}

/// Decodes one scan; returns the offset of the marker that ends it.
fn decode_scan(
    bytes: &[u8],
    start: usize,
    header: &[u8],
    img: &mut JpegImage,
    dc_tables: &[Option<DecodeTable>; 4],
    ac_tables: &[Option<DecodeTable>; 4],
) -> Result<usize, JpegError> {
    let mut h = Cursor {
        data: header,
        pos: 0,
    };
    let ns = h.u8()? as usize;
    if ns == 0 || ns > img.components.len() {
        return Err(JpegError::Corrupt(format!("scan with {ns} components")));
    }
    let mut scan = Vec::with_capacity(ns);
    for _ in 0..ns {
        let id = h.u8()?;
        let tables = h.u8()?;
        let ci = img
            .components
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| JpegError::Corrupt(format!("scan references component {id}")))?;
        let dc = dc_tables[(tables >> 4) as usize & 3]
            .as_ref()
            .ok_or_else(|| JpegError::Corrupt("undefined DC table".into()))?;
        let ac = ac_tables[(tables & 15) as usize & 3]
            .as_ref()
            .ok_or_else(|| JpegError::Corrupt("undefined AC table".into()))?;
        scan.push((ci, dc, ac));
    }
    let (ss, se, ahal) = (h.u8()?, h.u8()?, h.u8()?);
    if ss != 0 || se != 63 || ahal != 0 {
        return Err(JpegError::ProgressiveUnsupported);
    }

    let mut r = BitReader::new(bytes, start);
    let mut preds = vec![0i32; ns];
    let mut block = [0i32; 64];
    if ns == 1 {
        let (ci, dc, ac) = scan[0];
        let (bw, bh) = (img.components[ci].blocks_w, img.components[ci].blocks_h);
        for by in 0..bh {
            for bx in 0..bw {
                block.fill(0);
                decode_block(&mut r, dc, ac, &mut preds[0], &mut block)?;
                img.components[ci].block_mut(by, bx).copy_from_slice(&block);
            }
        }
    } else {
        let (hmax, vmax) = img.max_sampling();
        let mcus_x = img.width.div_ceil(8 * hmax);
        let mcus_y = img.height.div_ceil(8 * vmax);
        for my in 0..mcus_y {
            for mx in 0..mcus_x {
                for (si, &(ci, dc, ac)) in scan.iter().enumerate() {
                    let comp = &mut img.components[ci];
                    let (ch, cv) = (comp.h as usize, comp.v as usize);
                    for y in 0..cv {
                        for x in 0..ch {
                            block.fill(0);
                            decode_block(&mut r, dc, ac, &mut preds[si], &mut block)?;
                            let (by, bx) = (my * cv + y, mx * ch + x);
                            if by < comp.blocks_h && bx < comp.blocks_w {
                                comp.block_mut(by, bx).copy_from_slice(&block);
                            }
                        }
                    }
                }
            }
        }
    }

    // skip padding up to the next marker
    let mut pos = r.position();
    loop {
        match bytes.get(pos) {
            None => return Err(JpegError::TruncatedStream),
            Some(0xFF) => match bytes.get(pos + 1) {
                Some(0x00) => pos += 2,
                Some(0xD0..=0xD7) => {
                    return Err(JpegError::Unsupported("restart markers".into()))
                }
                Some(_) => return Ok(pos),
                None => return Err(JpegError::TruncatedStream),
            },
            Some(_) => pos += 1,
        }
    }
}
