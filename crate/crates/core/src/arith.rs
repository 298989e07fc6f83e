//! Fixed-point value types and the quad 12-bit SIMD primitives of the DSP
//! post-adder.
//!
//! Everything here is plain value semantics. Widths are fixed: INT8 weights,
//! 12-bit SIMD lanes packed four to a 48-bit word, 18-bit thresholds and a
//! 24-bit wrapping accumulator for partial sums and membrane potentials.

use std::fmt;

use crate::error::{Error, Result};

const LANE_BITS: u32 = 12;
const LANE_MASK: u64 = (1 << LANE_BITS) - 1;
const WORD_MASK: u64 = (1 << 48) - 1;

/// Sign-extends the low `bits` bits of `raw`.
#[inline]
pub fn sign_extend(raw: i64, bits: u32) -> i64 {
    let shift = 64 - bits;
    (raw << shift) >> shift
}

/// Scalar two's-complement wrap into the 12-bit lane range.
#[inline]
pub fn wrap12(v: i64) -> i16 {
    sign_extend(v, LANE_BITS) as i16
}

/// Scalar two's-complement wrap into the 24-bit accumulator range.
#[inline]
pub fn wrap24(v: i64) -> i32 {
    sign_extend(v, Acc24::BITS) as i32
}

/// A signed 8-bit synaptic weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Int8Weight(pub i8);

impl Int8Weight {
    pub fn value(self) -> i8 {
        self.0
    }
}

impl From<i8> for Int8Weight {
    fn from(v: i8) -> Self {
        Self(v)
    }
}

/// One signed 12-bit lane of the SIMD post-adder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Lane12(i16);

impl Lane12 {
    pub const MIN: i16 = -2048;
    pub const MAX: i16 = 2047;

    pub fn new(v: i16) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&v) {
            Ok(Self(v))
        } else {
            Err(Error::Config(format!("{v} does not fit a 12-bit lane")))
        }
    }

    /// Keeps the low 12 bits of `v`.
    pub fn wrapping(v: i64) -> Self {
        Self(wrap12(v))
    }

    /// Interprets the low 12 bits of `raw` as a two's-complement lane.
    pub fn from_bits(raw: u16) -> Self {
        Self(wrap12(i64::from(raw)))
    }

    pub fn value(self) -> i16 {
        self.0
    }

    pub fn bits(self) -> u16 {
        (self.0 as u16) & LANE_MASK as u16
    }
}

impl From<Int8Weight> for Lane12 {
    fn from(w: Int8Weight) -> Self {
        Self(i16::from(w.0))
    }
}

/// A 48-bit word of four packed 12-bit lanes, lane 0 in bits 11..0.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Word48(u64);

impl Word48 {
    pub const ZERO: Word48 = Word48(0);

    pub fn from_bits(raw: u64) -> Self {
        Self(raw & WORD_MASK)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn from_lanes(lanes: [Lane12; 4]) -> Self {
        let raw = lanes.iter().enumerate().fold(0u64, |acc, (i, l)| {
            acc | (u64::from(l.bits()) << (LANE_BITS * i as u32))
        });
        Self(raw)
    }

    pub fn lane(self, i: usize) -> Lane12 {
        assert!(i < 4, "lane index {i} out of range");
        Lane12::from_bits(((self.0 >> (LANE_BITS * i as u32)) & LANE_MASK) as u16)
    }

    pub fn lanes(self) -> [Lane12; 4] {
        [self.lane(0), self.lane(1), self.lane(2), self.lane(3)]
    }

    pub fn lane_values(self) -> [i16; 4] {
        self.lanes().map(Lane12::value)
    }
}

impl fmt::Debug for Word48 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word48({:#014x} = {:?})", self.0, self.lane_values())
    }
}

/// Sign-extends four weights to 12 bits and concatenates them, `w[0]` least
/// significant.
pub fn pack4(w: [Int8Weight; 4]) -> Word48 {
    Word48::from_lanes(w.map(Lane12::from))
}

/// Inverse of [`pack4`]. Fails if any lane is outside the INT8 range.
pub fn unpack4(word: Word48) -> Result<[Int8Weight; 4]> {
    let mut out = [Int8Weight(0); 4];
    for (i, lane) in word.lanes().iter().enumerate() {
        let v = i8::try_from(lane.value()).map_err(|_| {
            Error::Config(format!("lane {i} = {} is not an INT8 weight", lane.value()))
        })?;
        out[i] = Int8Weight(v);
    }
    Ok(out)
}

/// Four independent 12-bit adders: no carry crosses a lane boundary.
#[inline]
pub fn simd_add12(a: Word48, b: Word48) -> Word48 {
    // Add with the lane MSBs masked off so no carry can leave a lane, then
    // restore each MSB as the xor of the operand MSBs and the inner carry.
    const MSB: u64 = 0x800_800_800_800;
    let low = (a.0 & !MSB) + (b.0 & !MSB);
    Word48((low ^ ((a.0 ^ b.0) & MSB)) & WORD_MASK)
}

/// A signed 24-bit accumulator with two's-complement wrap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Acc24(i32);

impl Acc24 {
    pub const BITS: u32 = 24;
    pub const MIN: i32 = -(1 << 23);
    pub const MAX: i32 = (1 << 23) - 1;
    pub const ZERO: Acc24 = Acc24(0);

    pub fn new(v: i32) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&v) {
            Ok(Self(v))
        } else {
            Err(Error::Config(format!(
                "{v} does not fit a 24-bit accumulator"
            )))
        }
    }

    pub fn wrapping(v: i64) -> Self {
        Self(wrap24(v))
    }

    pub fn value(self) -> i32 {
        self.0
    }

    pub fn wrapping_add(self, rhs: Acc24) -> Acc24 {
        Self::wrapping(i64::from(self.0) + i64::from(rhs.0))
    }

    /// Wrapping add that also reports whether the 24-bit range was left.
    pub fn overflowing_add(self, rhs: Acc24) -> (Acc24, bool) {
        let exact = i64::from(self.0) + i64::from(rhs.0);
        let wrapped = Self::wrapping(exact);
        (wrapped, i64::from(wrapped.0) != exact)
    }

    /// Arithmetic (floor) shift right.
    pub fn ashr(self, k: u32) -> Acc24 {
        Self(self.0 >> k.min(31))
    }
}

/// Sign-extends a lane (or any narrower tree output) into the accumulator.
pub fn sext_lane_to_acc(l: Lane12) -> Acc24 {
    Acc24(i32::from(l.value()))
}

/// Sign-extends the low `width` bits of `raw` (`width` ≤ 24) into an [`Acc24`].
pub fn sext_bits_to_acc(raw: u32, width: u32) -> Result<Acc24> {
    if width == 0 || width > Acc24::BITS {
        return Err(Error::Config(format!(
            "cannot sign-extend a {width}-bit value to 24 bits"
        )));
    }
    Ok(Acc24(sign_extend(i64::from(raw), width) as i32))
}

/// A signed 18-bit firing threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Threshold18(i32);

impl Threshold18 {
    pub const MIN: i32 = -(1 << 17);
    pub const MAX: i32 = (1 << 17) - 1;

    pub fn new(v: i32) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&v) {
            Ok(Self(v))
        } else {
            Err(Error::Config(format!("threshold {v} does not fit 18 bits")))
        }
    }

    pub fn value(self) -> i32 {
        self.0
    }
}
