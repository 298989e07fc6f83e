//! Bit-packed binary spike tensors and their on-disk format.
//!
//! A tensor is indexed `[t][c][y][x]` but stored channel-fastest: bit
//! `(t, c, y, x)` lives at linear index `((t * H + y) * W + x) * C + c`,
//! LSB-first within each byte. One pixel's channels therefore form a
//! contiguous bundle, which is what the line buffer consumes.
//!
//! File layout (all integers little-endian):
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `b"FFLY"`                    |
//! | 4      | 4    | T (u32)                            |
//! | 8      | 4    | C (u32)                            |
//! | 12     | 4    | H (u32)                            |
//! | 16     | 4    | W (u32)                            |
//! | 20     | ⌈TCHW/8⌉ | packed bits, unused high bits 0 |

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, SpikeFormatError};

pub const MAGIC: [u8; 4] = *b"FFLY";
pub const HEADER_LEN: usize = 20;

/// Tensor dimensions `T×C×H×W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpikeDims {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl SpikeDims {
    pub fn new(t: usize, c: usize, h: usize, w: usize) -> Self {
        Self { t, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.t * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bits in one timestep.
    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl std::fmt::Display for SpikeDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.t, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SpikeTensor {
    dims: SpikeDims,
    bits: Vec<u8>,
}

impl std::fmt::Debug for SpikeTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SpikeTensor({}, {} ones)", self.dims, self.count_ones())
    }
}

impl SpikeTensor {
    pub fn zeros(dims: SpikeDims) -> Self {
        Self {
            dims,
            bits: vec![0; dims.len().div_ceil(8)],
        }
    }

    pub fn dims(&self) -> SpikeDims {
        self.dims
    }

    #[inline]
    pub fn linear_index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        let d = &self.dims;
        debug_assert!(t < d.t && c < d.c && y < d.h && x < d.w);
        ((t * d.h + y) * d.w + x) * d.c + c
    }

    #[inline]
    pub fn get_linear(&self, i: usize) -> bool {
        self.bits[i / 8] >> (i % 8) & 1 == 1
    }

    #[inline]
    pub fn set_linear(&mut self, i: usize, v: bool) {
        let mask = 1u8 << (i % 8);
        if v {
            self.bits[i / 8] |= mask;
        } else {
            self.bits[i / 8] &= !mask;
        }
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> bool {
        self.get_linear(self.linear_index(t, c, y, x))
    }

    #[inline]
    pub fn set(&mut self, t: usize, c: usize, y: usize, x: usize, v: bool) {
        let i = self.linear_index(t, c, y, x);
        self.set_linear(i, v);
    }

    /// All channels of one pixel, channel 0 first.
    pub fn bundle(&self, t: usize, y: usize, x: usize) -> Vec<bool> {
        let base = self.linear_index(t, 0, y, x);
        (base..base + self.dims.c)
            .map(|i| self.get_linear(i))
            .collect()
    }

    /// One timestep flattened in storage order (pixel-major, channel-fastest).
    pub fn frame(&self, t: usize) -> Vec<bool> {
        let n = self.dims.frame_len();
        (t * n..(t + 1) * n).map(|i| self.get_linear(i)).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    /// First coordinate `(t, c, y, x)` at which the tensors differ.
    pub fn first_difference(&self, other: &SpikeTensor) -> Option<(usize, usize, usize, usize)> {
        if self.dims != other.dims {
            return Some((0, 0, 0, 0));
        }
        let d = self.dims;
        (0..d.len())
            .find(|&i| self.get_linear(i) != other.get_linear(i))
            .map(|i| {
                let c = i % d.c;
                let x = (i / d.c) % d.w;
                let y = (i / (d.c * d.w)) % d.h;
                let t = i / (d.c * d.w * d.h);
                (t, c, y, x)
            })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dims;
        let mut out = Vec::with_capacity(HEADER_LEN + self.bits.len());
        out.extend_from_slice(&MAGIC);
        for v in [d.t, d.c, d.h, d.w] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, SpikeFormatError> {
        if data.len() < 4 {
            return Err(SpikeFormatError::TruncatedHeader(data.len()));
        }
        let magic: [u8; 4] = data[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(SpikeFormatError::BadMagic(magic));
        }
        if data.len() < HEADER_LEN {
            return Err(SpikeFormatError::TruncatedHeader(data.len()));
        }
        let field = |k: usize| u32::from_le_bytes(data[4 + 4 * k..8 + 4 * k].try_into().unwrap());
        let (t, c, h, w) = (field(0), field(1), field(2), field(3));
        let overflow = SpikeFormatError::DimOverflow { t, c, h, w };
        let total = [t, c, h, w]
            .iter()
            .try_fold(1usize, |acc, &v| {
                if v == 0 {
                    None
                } else {
                    acc.checked_mul(v as usize)
                }
            })
            .filter(|&n| n <= isize::MAX as usize)
            .ok_or(overflow)?;
        let expected = total.div_ceil(8);
        let found = data.len() - HEADER_LEN;
        if found < expected {
            return Err(SpikeFormatError::TruncatedPayload { expected, found });
        }
        if found > expected {
            return Err(SpikeFormatError::TrailingData { expected, found });
        }
        let mut bits = data[HEADER_LEN..].to_vec();
        // Unused high bits of the last byte are not part of the tensor.
        if total % 8 != 0 {
            let last = bits.len() - 1;
            bits[last] &= (1u8 << (total % 8)) - 1;
        }
        Ok(Self {
            dims: SpikeDims::new(t as usize, c as usize, h as usize, w as usize),
            bits,
        })
    }
}

/// Prefixes an I/O error with the file it concerns.
pub(crate) fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    }
}

pub fn write_spikes(path: impl AsRef<Path>, tensor: &SpikeTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(with_path(path))
}

pub fn read_spikes(path: impl AsRef<Path>) -> Result<SpikeTensor> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(with_path(path))?;
    SpikeTensor::from_bytes(&data).map_err(Error::from)
}

/// Reproducible Bernoulli spikes: each bit fires with probability `density`.
pub fn gen_random_spikes(dims: SpikeDims, density: f64, seed: u64) -> Result<SpikeTensor> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Config(format!(
            "spike density {density} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensor = SpikeTensor::zeros(dims);
    for i in 0..dims.len() {
        tensor.set_linear(i, rng.gen_bool(density));
    }
    Ok(tensor)
}
