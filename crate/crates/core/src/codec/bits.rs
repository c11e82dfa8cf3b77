//! MSB-first bit I/O with Exp-Golomb codes.

use crate::error::{Error, Result};

#[derive(Default, Debug, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        BitWriter::default()
    }

    /// Appends the low `n` bits of `value`, most significant first.
    pub fn put(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 57);
        if n == 0 {
            return;
        }
        self.acc = (self.acc << n) | (value & ((1u64 << n) - 1));
        self.nbits += n;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.bytes.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    pub fn put_bit(&mut self, bit: bool) {
        self.put(bit as u64, 1);
    }

    pub fn put_ue(&mut self, v: u32) {
        let x = v as u64 + 1;
        let len = 64 - x.leading_zeros();
        self.put(0, len - 1);
        self.put(x, len);
    }

    pub fn put_se(&mut self, v: i32) {
        let mapped = if v > 0 {
            2 * v as i64 - 1
        } else {
            -2 * v as i64
        };
        self.put_ue(mapped as u32);
    }

    pub fn bit_len(&self) -> usize {
        self.bytes.len() * 8 + self.nbits as usize
    }

    /// Pads with zero bits to a byte boundary and returns the bytes.
    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put(0, pad);
        }
        self.bytes
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn bit(&mut self) -> Result<bool> {
        let byte = self
            .bytes
            .get(self.pos / 8)
            .ok_or_else(|| Error::Malformed("read past end of payload".into()))?;
        let b = (byte >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Ok(b == 1)
    }

    pub fn get(&mut self, n: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | self.bit()? as u64;
        }
        Ok(v)
    }

    pub fn ue(&mut self) -> Result<u32> {
        let mut zeros = 0u32;
        while !self.bit()? {
            zeros += 1;
            if zeros > 32 {
                return Err(Error::Malformed("Exp-Golomb prefix longer than 32 bits".into()));
            }
        }
        let rest = self.get(zeros)?;
        let x = (1u64 << zeros) | rest;
        u32::try_from(x - 1).map_err(|_| Error::Malformed("Exp-Golomb value overflows".into()))
    }

    pub fn se(&mut self) -> Result<i32> {
        let k = self.ue()? as i64;
        let v = if k % 2 == 1 { (k + 1) / 2 } else { -(k / 2) };
        i32::try_from(v).map_err(|_| Error::Malformed("signed Exp-Golomb value overflows".into()))
    }

    pub fn bits_read(&self) -> usize {
        self.pos
    }

    /// True when only zero padding of less than a byte remains.
    pub fn at_padded_end(&self) -> bool {
        let total = self.bytes.len() * 8;
        if total < self.pos || total - self.pos >= 8 {
            return false;
        }
        let mut probe = BitReader { bytes: self.bytes, pos: self.pos };
        (self.pos..total).all(|_| probe.bit().map(|b| !b).unwrap_or(false))
    }
}

/// Bit string of an unsigned Exp-Golomb code, as '0'/'1' characters.
pub fn expgolomb_ue(v: u32) -> String {
    let mut w = BitWriter::new();
    w.put_ue(v);
    bit_string(w)
}

pub fn expgolomb_se(v: i32) -> String {
    let mut w = BitWriter::new();
    w.put_se(v);
    bit_string(w)
}

fn bit_string(w: BitWriter) -> String {
    let n = w.bit_len();
    let bytes = w.finish();
    (0..n)
        .map(|i| if (bytes[i / 8] >> (7 - i % 8)) & 1 == 1 { '1' } else { '0' })
        .collect()
}

fn pack(bits: &str) -> Result<Vec<u8>> {
    let mut w = BitWriter::new();
    for c in bits.chars() {
        match c {
            '0' => w.put_bit(false),
            '1' => w.put_bit(true),
            _ => return Err(Error::Malformed(format!("not a bit: {c:?}"))),
        }
    }
    Ok(w.finish())
}

/// Parses exactly one unsigned code from a '0'/'1' string.
pub fn parse_ue(bits: &str) -> Result<u32> {
    let bytes = pack(bits)?;
    let mut r = BitReader::new(&bytes);
    let v = r.ue()?;
    if r.bits_read() != bits.len() {
        return Err(Error::Malformed("trailing bits after code".into()));
    }
    Ok(v)
}

pub fn parse_se(bits: &str) -> Result<i32> {
    let bytes = pack(bits)?;
    let mut r = BitReader::new(&bytes);
    let v = r.se()?;
    if r.bits_read() != bits.len() {
        return Err(Error::Malformed("trailing bits after code".into()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ue_examples() {
        assert_eq!(expgolomb_ue(0), "1");
        assert_eq!(expgolomb_ue(1), "010");
        assert_eq!(expgolomb_ue(2), "011");
        assert_eq!(expgolomb_ue(3), "00100");
        assert_eq!(expgolomb_ue(7), "0001000");
    }

    #[test]
    fn se_examples() {
        assert_eq!(expgolomb_se(0), "1");
        assert_eq!(expgolomb_se(1), "010");
        assert_eq!(expgolomb_se(-1), "011");
        assert_eq!(expgolomb_se(2), "00100");
        assert_eq!(expgolomb_se(-2), "00101");
    }

    #[test]
    fn round_trip_range() {
        for v in -1000..=1000 {
            assert_eq!(parse_se(&expgolomb_se(v)).unwrap(), v);
            if v >= 0 {
                assert_eq!(parse_ue(&expgolomb_ue(v as u32)).unwrap(), v as u32);
            }
        }
        let mut w = BitWriter::new();
        for v in -1000..=1000 {
            w.put_se(v);
            w.put_ue(v.unsigned_abs());
        }
        let bytes = w.finish();
        let mut r = BitReader::new(&bytes);
        for v in -1000..=1000 {
            assert_eq!(r.se().unwrap(), v);
            assert_eq!(r.ue().unwrap(), v.unsigned_abs());
        }
        assert!(r.at_padded_end());
    }

    #[test]
    fn extreme_values() {
        for v in [u32::MAX - 1, 1 << 31, 65535] {
            assert_eq!(parse_ue(&expgolomb_ue(v)).unwrap(), v);
        }
        for v in [i32::MAX, i32::MIN + 1] {
            assert_eq!(parse_se(&expgolomb_se(v)).unwrap(), v);
        }
    }

    #[test]
    fn malformed_prefix() {
        assert!(parse_ue(&"0".repeat(40)).is_err());
        assert!(parse_ue("000").is_err());
        assert!(parse_ue("0110").is_err());
    }

    #[test]
    fn writer_packs_msb_first() {
        let mut w = BitWriter::new();
        w.put(0b101, 3);
        w.put(0xff, 8);
        assert_eq!(w.bit_len(), 11);
        assert_eq!(w.finish(), vec![0b1011_1111, 0b1110_0000]);
    }
}
