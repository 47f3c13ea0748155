//! Canonical Huffman tables plus the entropy-coded segment bit reader/writer.

use super::JpegError;

#[derive(Debug, Clone)]
pub struct HuffmanSpec {
    pub bits: [u8; 16],
    pub values: Vec<u8>,
}

/// Decoding form: per code length, the largest code and the index of the
/// first value.
#[derive(Debug, Clone)]
pub struct DecodeTable {
    maxcode: [i32; 17],
    valptr: [i32; 17],
    mincode: [i32; 17],
    values: Vec<u8>,
}

impl DecodeTable {
    pub fn new(spec: &HuffmanSpec) -> Result<Self, JpegError> {
        let total: usize = spec.bits.iter().map(|&b| b as usize).sum();
        if total != spec.values.len() || total > 256 {
            return Err(JpegError::Corrupt("huffman table size".into()));
        }
        let mut maxcode = [-1i32; 17];
        let mut valptr = [0i32; 17];
        let mut mincode = [0i32; 17];
        let mut code = 0i32;
        let mut k = 0i32;
        for len in 1..=16 {
            let n = spec.bits[len - 1] as i32;
            if n > 0 {
                valptr[len] = k;
                mincode[len] = code;
                code += n;
                k += n;
                maxcode[len] = code - 1;
            }
            if code > (1 << len) {
                return Err(JpegError::Corrupt("huffman code overflow".into()));
            }
            code <<= 1;
        }
        Ok(Self {
            maxcode,
            valptr,
            mincode,
            values: spec.values.clone(),
        })
    }

    pub fn decode(&self, r: &mut BitReader<'_>) -> Result<u8, JpegError> {
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | r.bit()? as i32;
            if code <= self.maxcode[len] {
                let idx = self.valptr[len] + code - self.mincode[len];
                return Ok(self.values[idx as usize]);
            }
        }
        Err(JpegError::Corrupt("invalid huffman code".into()))
    }
}

/// Encoding form: `(code, length)` indexed by symbol.
#[derive(Debug, Clone)]
pub struct EncodeTable {
    codes: [(u16, u8); 256],
}

impl EncodeTable {
    pub fn new(spec: &HuffmanSpec) -> Self {
        let mut codes = [(0u16, 0u8); 256];
        let mut code = 0u16;
        let mut k = 0;
        for len in 1..=16u8 {
            for _ in 0..spec.bits[len as usize - 1] {
                codes[spec.values[k] as usize] = (code, len);
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        Self { codes }
    }

    pub fn code(&self, symbol: u8) -> Option<(u16, u8)> {
        let c = self.codes[symbol as usize];
        (c.1 > 0).then_some(c)
    }
}

/// Bit reader over entropy-coded data; undoes 0xFF00 byte stuffing and
/// stops at the first marker.
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    cur: u8,
    left: u8,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8], pos: usize) -> Self {
        Self {
            data,
            pos,
            cur: 0,
            left: 0,
        }
    }

    fn next_byte(&mut self) -> Result<u8, JpegError> {
        let b = *self.data.get(self.pos).ok_or(JpegError::TruncatedStream)?;
        if b == 0xFF {
            match self.data.get(self.pos + 1) {
                Some(0x00) => {
                    self.pos += 2;
                    return Ok(0xFF);
                }
                Some(_) => return Err(JpegError::TruncatedStream),
                None => return Err(JpegError::TruncatedStream),
            }
        }
        self.pos += 1;
        Ok(b)
    }

    pub fn bit(&mut self) -> Result<u8, JpegError> {
        if self.left == 0 {
            self.cur = self.next_byte()?;
            self.left = 8;
        }
        self.left -= 1;
        Ok((self.cur >> self.left) & 1)
    }

    pub fn bits(&mut self, n: u8) -> Result<u32, JpegError> {
        let mut v = 0u32;
        for _ in 0..n {
            v = (v << 1) | self.bit()? as u32;
        }
        Ok(v)
    }

    /// Reads `size` magnitude bits and sign-extends per T.81 F.2.2.1.
    pub fn receive_extend(&mut self, size: u8) -> Result<i32, JpegError> {
        if size == 0 {
            return Ok(0);
        }
        if size > 16 {
            return Err(JpegError::Corrupt(format!("coefficient size {size}")));
        }
        let v = self.bits(size)? as i32;
        Ok(if v < (1 << (size - 1)) {
            v - (1 << size) + 1
        } else {
            v
        })
    }

    /// Byte offset just past the consumed data.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[derive(Default)]
pub struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    n: u8,
}

impl BitWriter {
    pub fn put(&mut self, value: u32, len: u8) {
        for i in (0..len).rev() {
            self.acc = (self.acc << 1) | ((value >> i) & 1);
            self.n += 1;
            if self.n == 8 {
                let b = self.acc as u8;
                self.out.push(b);
                if b == 0xFF {
                    self.out.push(0x00);
                }
                self.acc = 0;
                self.n = 0;
            }
        }
    }

    /// Pads the final byte with one bits.
    pub fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            let pad = 8 - self.n;
            self.put((1 << pad) - 1, pad);
        }
        self.out
    }
}

/// Magnitude category of a coefficient value.
pub fn category(v: i32) -> u8 {
    (32 - v.unsigned_abs().leading_zeros()) as u8
}

/// Low `size` bits written after the category code.
pub fn magnitude_bits(v: i32, size: u8) -> u32 {
    if v < 0 {
        (v - 1) as u32 & ((1u32 << size) - 1)
    } else {
        v as u32
    }
}
