//! LSB-first bit streams for variable-width code fields.
//!
//! Fields are appended least-significant bit first: bit `j` of a field
//! written at stream position `q` lands in byte `(q + j) / 8`, bit
//! `(q + j) % 8`. Streams are padded with zero bits to a byte boundary.

/// Widest field the streams accept.
pub const MAX_FIELD_BITS: u32 = 32;

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    fill: u32,
    nbits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_bits(nbits: u64) -> Self {
        Self {
            bytes: Vec::with_capacity(nbits.div_ceil(8) as usize),
            ..Self::default()
        }
    }

    /// Appends the low `width` bits of `value`.
    pub fn push(&mut self, value: u64, width: u32) {
        debug_assert!(width <= MAX_FIELD_BITS);
        if width == 0 {
            return;
        }
        let masked = value & ((1u64 << width) - 1);
        self.acc |= masked << self.fill;
        self.fill += width;
        self.nbits += u64::from(width);
        while self.fill >= 8 {
            self.bytes.push(self.acc as u8);
            self.acc >>= 8;
            self.fill -= 8;
        }
    }

    pub fn push_bit(&mut self, bit: bool) {
        self.push(u64::from(bit), 1);
    }

    pub fn len_bits(&self) -> u64 {
        self.nbits
    }

    /// Flushes the partial byte and returns `(bytes, bit_length)`.
    pub fn finish(mut self) -> (Vec<u8>, u64) {
        if self.fill > 0 {
            self.bytes.push(self.acc as u8);
        }
        (self.bytes, self.nbits)
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    nbits: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], nbits: u64) -> Self {
        debug_assert!(nbits <= bytes.len() as u64 * 8);
        Self {
            bytes,
            nbits,
            pos: 0,
        }
    }

    pub fn remaining(&self) -> u64 {
        self.nbits - self.pos
    }

    /// Reads the next `width`-bit field, or `None` past the declared end.
    pub fn read(&mut self, width: u32) -> Option<u64> {
        debug_assert!(width <= MAX_FIELD_BITS);
        if u64::from(width) > self.remaining() {
            return None;
        }
        let mut out = 0u64;
        let mut got = 0u32;
        while got < width {
            let byte = self.bytes[(self.pos / 8) as usize];
            let bit_off = (self.pos % 8) as u32;
            let take = (8 - bit_off).min(width - got);
            let chunk = (u64::from(byte) >> bit_off) & ((1u64 << take) - 1);
            out |= chunk << got;
            got += take;
            self.pos += u64::from(take);
        }
        Some(out)
    }

    pub fn read_bit(&mut self) -> Option<bool> {
        self.read(1).map(|b| b == 1)
    }
}

/// Packs a sign-magnitude code into a `bits`-wide field: the sign occupies
/// the most significant bit (1 = negative), the magnitude the low `bits - 1`.
pub fn encode_sign_magnitude(negative: bool, magnitude: u32, bits: u32) -> u64 {
    debug_assert!((2..=MAX_FIELD_BITS).contains(&bits));
    debug_assert!(u64::from(magnitude) < (1u64 << (bits - 1)));
    (u64::from(negative) << (bits - 1)) | u64::from(magnitude)
}

pub fn decode_sign_magnitude(field: u64, bits: u32) -> (bool, u32) {
    let negative = (field >> (bits - 1)) & 1 == 1;
    let magnitude = (field & ((1u64 << (bits - 1)) - 1)) as u32;
    (negative, magnitude)
}
