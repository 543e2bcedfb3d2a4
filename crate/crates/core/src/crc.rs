//! Bitwise CRC over arbitrary-length bit sequences.

use serde::{Deserialize, Serialize};

/// CRC generator: `width` check bits, polynomial given without the leading
/// x^width term (e.g. CRC-8 with poly 0x07 is x^8 + x^2 + x + 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrcSpec {
    pub width: u32,
    pub poly: u16,
}

impl CrcSpec {
    pub const CRC8: CrcSpec = CrcSpec { width: 8, poly: 0x07 };
    /// CRC-4-ITU, used for short experimental code configurations.
    pub const CRC4: CrcSpec = CrcSpec { width: 4, poly: 0x3 };

    fn mask(&self) -> u16 {
        if self.width >= 16 {
            u16::MAX
        } else {
            (1u16 << self.width) - 1
        }
    }

    /// Remainder of `bits(x) * x^width` modulo the generator, MSB first.
    pub fn remainder(&self, bits: &[u8]) -> Vec<u8> {
        let mask = self.mask();
        let top = 1u16 << (self.width - 1);
        let mut reg: u16 = 0;
        for &b in bits {
            let msb = reg & top != 0;
            reg = (reg << 1) & mask;
            if msb != (b != 0) {
                reg ^= self.poly;
            }
        }
        (0..self.width)
            .rev()
            .map(|i| ((reg >> i) & 1) as u8)
            .collect()
    }

    /// Payload bits with the CRC remainder appended.
    pub fn append(&self, payload: &[u8]) -> Vec<u8> {
        let mut out = payload.to_vec();
        out.extend(self.remainder(payload));
        out
    }

    /// True when `bits` (payload followed by its CRC) divides cleanly.
    pub fn check(&self, bits: &[u8]) -> bool {
        if bits.len() < self.width as usize {
            return false;
        }
        self.remainder(bits).iter().all(|&b| b == 0)
    }
}
