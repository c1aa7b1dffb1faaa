use std::fmt;

use crate::error::{Error, Result};

/// Ordered payload bits, consumed row-major over watermark blocks, eight per block.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Payload {
    bits: Vec<u8>,
}

pub const BITS_PER_BLOCK: usize = 8;

impl Payload {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Payload("bits must be 0 or 1".into()));
        }
        Ok(Self { bits })
    }

    pub fn zeros(len: usize) -> Self {
        Self { bits: vec![0; len] }
    }

    pub fn random(len: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            bits: (0..len).map(|_| rng.random_range(0..2u8)).collect(),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Hex digits, most significant bit of each nibble first.
    pub fn from_hex(hex: &str) -> Result<Self> {
        let mut bits = Vec::with_capacity(hex.len() * 4);
        for ch in hex.trim().chars().filter(|c| !c.is_whitespace()) {
            let nibble = ch
                .to_digit(16)
                .ok_or_else(|| Error::Payload(format!("invalid hex digit {ch:?}")))?;
            bits.extend((0..4).rev().map(|i| ((nibble >> i) & 1) as u8));
        }
        Ok(Self { bits })
    }

    /// Hex rendering; a trailing partial nibble is zero-padded.
    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|c| {
                let v = c
                    .iter()
                    .chain(std::iter::repeat(&0))
                    .take(4)
                    .fold(0u32, |acc, &b| (acc << 1) | b as u32);
                char::from_digit(v, 16).unwrap()
            })
            .collect()
    }

    /// Parses an ASCII bit file of `0`/`1` characters; whitespace is ignored.
    pub fn from_bit_text(text: &str) -> Result<Self> {
        let mut bits = Vec::new();
        for ch in text.chars().filter(|c| !c.is_whitespace()) {
            match ch {
                '0' => bits.push(0),
                '1' => bits.push(1),
                other => return Err(Error::Payload(format!("invalid bit character {other:?}"))),
            }
        }
        Ok(Self { bits })
    }

    pub fn to_bit_text(&self) -> String {
        self.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hex_layout_is_msb_first() {
        let p = Payload::from_hex("a5").unwrap();
        assert_eq!(p.bits(), &[1, 0, 1, 0, 0, 1, 0, 1]);
        assert!(Payload::from_hex("zz").is_err());
        assert!(Payload::new(vec![2]).is_err());
    }

    #[test]
    fn bit_text_parses() {
        let p = Payload::from_bit_text("01 1\n0").unwrap();
        assert_eq!(p.bits(), &[0, 1, 1, 0]);
        assert!(Payload::from_bit_text("012").is_err());
    }

    proptest! {
        #[test]
        fn hex_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..40)) {
            let bits: Vec<u8> = bytes.iter().flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1)).collect();
            let p = Payload::new(bits).unwrap();
            prop_assert_eq!(Payload::from_hex(&p.to_hex()).unwrap(), p.clone());
            prop_assert_eq!(Payload::from_bit_text(&p.to_bit_text()).unwrap(), p);
        }
    }
}
