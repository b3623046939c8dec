//! Lossless JPEG (process 14, SOF3) encoder for 8-bit images.
//!
//! One interleaved scan, every component sampled 1x1, a single optimal
//! Huffman table built from the image's own difference statistics. The
//! output is a pure function of the pixels.

use super::PixelImage;
use crate::error::{Error, Result};

/// Ra + Rb - Rc.
const PREDICTOR: u8 = 4;

pub fn encode(img: &PixelImage) -> Result<Vec<u8>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::Codec(format!(
            "lossless JPEG supports at most 65535 px per side, got {w}x{h}"
        )));
    }
    let nc = img.channels() as usize;
    let samples = img.samples();

    let mut diffs = Vec::with_capacity(samples.len());
    for y in 0..h {
        for x in 0..w {
            for c in 0..nc {
                let at = |xx: usize, yy: usize| i32::from(samples[(yy * w + xx) * nc + c]);
                let pred = match (x, y) {
                    (0, 0) => 128,
                    (_, 0) => at(x - 1, 0),
                    (0, _) => at(0, y - 1),
                    _ => at(x - 1, y) + at(x, y - 1) - at(x - 1, y - 1),
                };
                diffs.push(at(x, y) - pred);
            }
        }
    }

    let mut freq = [0u64; 257];
    for &d in &diffs {
        freq[category(d) as usize] += 1;
    }
    let table = HuffmanTable::optimal(&freq);

    let mut out = Vec::with_capacity(samples.len() / 2 + 64);
    out.extend_from_slice(&[0xFF, 0xD8]);

    out.extend_from_slice(&[0xFF, 0xC3]);
    push_u16(&mut out, (8 + 3 * nc) as u16);
    out.push(8);
    push_u16(&mut out, h as u16);
    push_u16(&mut out, w as u16);
    out.push(nc as u8);
    for c in 0..nc {
        out.extend_from_slice(&[c as u8 + 1, 0x11, 0]);
    }

    out.extend_from_slice(&[0xFF, 0xC4]);
    push_u16(&mut out, (2 + 1 + 16 + table.values.len()) as u16);
    out.push(0x00);
    out.extend_from_slice(&table.bits[1..=16]);
    out.extend_from_slice(&table.values);

    out.extend_from_slice(&[0xFF, 0xDA]);
    push_u16(&mut out, (6 + 2 * nc) as u16);
    out.push(nc as u8);
    for c in 0..nc {
        out.extend_from_slice(&[c as u8 + 1, 0x00]);
    }
    out.extend_from_slice(&[PREDICTOR, 0, 0]);

    let mut bits = BitWriter::new(&mut out);
    for &d in &diffs {
        let ssss = category(d);
        let (code, len) = table.codes[ssss as usize];
        bits.put(u32::from(code), u32::from(len));
        if ssss > 0 {
            let extra = if d < 0 { d + (1 << ssss) - 1 } else { d };
            bits.put(extra as u32, ssss);
        }
    }
    bits.flush();

    out.extend_from_slice(&[0xFF, 0xD9]);
    Ok(out)
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn category(d: i32) -> u32 {
    32 - d.unsigned_abs().leading_zeros()
}

struct HuffmanTable {
    /// bits[n] = number of codes of length n (index 0 unused).
    bits: [u8; 17],
    values: Vec<u8>,
    /// (code, length) per symbol; length 0 when unused.
    codes: [(u16, u8); 256],
}

impl HuffmanTable {
    /// Length-limited optimal table; symbol 256 reserves the all-ones code.
    fn optimal(counts: &[u64; 257]) -> Self {
        let mut freq = *counts;
        freq[256] = 1;
        let mut codesize = [0usize; 257];
        let mut others = [usize::MAX; 257];

        loop {
            let mut c1 = usize::MAX;
            let mut v = u64::MAX;
            for i in 0..257 {
                if freq[i] > 0 && freq[i] <= v {
                    v = freq[i];
                    c1 = i;
                }
            }
            let mut c2 = usize::MAX;
            let mut v = u64::MAX;
            for i in 0..257 {
                if freq[i] > 0 && freq[i] <= v && i != c1 {
                    v = freq[i];
                    c2 = i;
                }
            }
            if c2 == usize::MAX {
                break;
            }
            freq[c1] += freq[c2];
            freq[c2] = 0;
            codesize[c1] += 1;
            while others[c1] != usize::MAX {
                c1 = others[c1];
                codesize[c1] += 1;
            }
            others[c1] = c2;
            codesize[c2] += 1;
            while others[c2] != usize::MAX {
                c2 = others[c2];
                codesize[c2] += 1;
            }
        }

        let mut wide = [0u32; 33];
        for &size in codesize.iter().filter(|&&s| s > 0) {
            wide[size] += 1;
        }
        for i in (17..=32).rev() {
            while wide[i] > 0 {
                let mut j = i - 2;
                while wide[j] == 0 {
                    j -= 1;
                }
                wide[i] -= 2;
                wide[i - 1] += 1;
                wide[j + 1] += 2;
                wide[j] -= 1;
            }
        }
        let mut i = 16;
        while wide[i] == 0 {
            i -= 1;
        }
        wide[i] -= 1;

        let mut bits = [0u8; 17];
        for n in 1..=16 {
            bits[n] = wide[n] as u8;
        }

        // Symbols ordered by original code size, then value; the reserved
        // symbol sorts last and is dropped.
        let mut order: Vec<usize> = (0..256).filter(|&s| codesize[s] > 0).collect();
        order.sort_by_key(|&s| (codesize[s], s));
        let values: Vec<u8> = order.iter().map(|&s| s as u8).collect();

        let mut codes = [(0u16, 0u8); 256];
        let mut code = 0u16;
        let mut k = 0;
        for len in 1..=16u8 {
            for _ in 0..bits[len as usize] {
                codes[values[k] as usize] = (code, len);
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        HuffmanTable {
            bits,
            values,
            codes,
        }
    }
}

struct BitWriter<'a> {
    out: &'a mut Vec<u8>,
    acc: u64,
    n: u32,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut Vec<u8>) -> Self {
        BitWriter { out, acc: 0, n: 0 }
    }

    fn put(&mut self, value: u32, len: u32) {
        if len == 0 {
            return;
        }
        self.acc = (self.acc << len) | u64::from(value & ((1u32 << len) - 1));
        self.n += len;
        while self.n >= 8 {
            self.n -= 8;
            let byte = (self.acc >> self.n) as u8;
            self.out.push(byte);
            if byte == 0xFF {
                self.out.push(0x00);
            }
        }
    }

    fn flush(&mut self) {
        if self.n > 0 {
            let pad = 8 - self.n;
            self.put((1 << pad) - 1, pad);
        }
    }
}
