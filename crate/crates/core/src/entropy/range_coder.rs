//! 32-bit renormalizing range coder over 16-bit frequency tables.
//!
//! The encoder keeps `low` with one carry bit and propagates carries into
//! bytes already written, so no leading byte is wasted. `finish` writes the
//! shortest byte string that still identifies a point inside the final
//! interval. Trailing zero bytes are dropped because the decoder reads zeros
//! past the end of its input.

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
const TOP: u32 = 1 << 24;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    fn propagate_carry(&mut self) {
        for byte in self.out.iter_mut().rev() {
            let (v, overflow) = byte.overflowing_add(1);
            *byte = v;
            if !overflow {
                return;
            }
        }
        unreachable!("carry out of the first byte: interval left [0, 1)");
    }

    /// Codes the symbol occupying `[cum, cum + freq)` of [`PROB_TOTAL`].
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= PROB_TOTAL);
        let r = self.range >> PROB_BITS;
        self.low += u64::from(r) * u64::from(cum);
        self.range = r * freq;
        if self.low >> 32 != 0 {
            self.low &= 0xFFFF_FFFF;
            self.propagate_carry();
        }
        while self.range < TOP {
            self.out.push((self.low >> 24) as u8);
            self.low = (self.low << 8) & 0xFFFF_FFFF;
            self.range <<= 8;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let end = self.low + u64::from(self.range);
        for k in 0..=4u32 {
            let unit = 1u64 << (32 - 8 * k);
            let v = self.low.div_ceil(unit) * unit;
            if v < end {
                let mut v = v;
                if v >> 32 != 0 {
                    v &= 0xFFFF_FFFF;
                    self.propagate_carry();
                }
                for i in 0..k {
                    self.out.push((v >> (24 - 8 * i)) as u8);
                }
                break;
            }
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = Self {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte());
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Bytes consumed so far, including implicit zero padding.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Decodes one symbol given the frequency table used to encode it.
    /// Malformed input yields some symbol, never a panic.
    pub fn decode(&mut self, freqs: &[u32]) -> usize {
        let r = self.range >> PROB_BITS;
        let target = (self.code / r).min(PROB_TOTAL - 1);
        let mut cum = 0;
        let mut symbol = freqs.len() - 1;
        for (s, &f) in freqs.iter().enumerate() {
            if target < cum + f {
                symbol = s;
                break;
            }
            cum += f;
        }
        if symbol == freqs.len() - 1 {
            cum = PROB_TOTAL - freqs[symbol];
        }
        self.code = self.code.wrapping_sub(r.wrapping_mul(cum));
        self.range = r.wrapping_mul(freqs[symbol]).max(1);
        while self.range < TOP {
            self.code = (self.code << 8) | u32::from(self.next_byte());
            self.range <<= 8;
        }
        symbol
    }
}

/// Cumulative start of `symbol` in `freqs`.
pub fn cumulative(freqs: &[u32], symbol: usize) -> u32 {
    freqs[..symbol].iter().sum()
}
