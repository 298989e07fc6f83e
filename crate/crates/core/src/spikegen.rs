//! Spike-vector generation for the systolic array.
//!
//! Convolution mode streams P-channel spike bundles through a 3×3 line buffer
//! (stride 1, same padding) and flattens each window as `(kh, kw, channel)`
//! with `kh` outermost. MLP mode concatenates nine consecutive P-bit
//! transactions into one 9P-bit vector. Both produce vectors of the same
//! width, N = 9P.
//!
//! The `(kh, kw, channel)` order is the single source of truth for how
//! weight tiles are laid out by the scheduler.

use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
pub const TAPS: usize = KERNEL * KERNEL;

/// Index of `(kh, kw, channel)` inside a flattened window of `p` channels.
#[inline]
pub fn window_index(kh: usize, kw: usize, channel: usize, p: usize) -> usize {
    (kh * KERNEL + kw) * p + channel
}

/// Streaming 3×3 same-padding window generator.
///
/// Storage is two full rows plus the row being received, as a ring of three
/// row buffers. A window centred at `(y, x)` is emitted as soon as its last
/// in-bounds pixel `(min(y+1, H-1), min(x+1, W-1))` has arrived, so windows
/// leave in raster order.
#[derive(Clone, Debug)]
pub struct LineBuffer {
    height: usize,
    width: usize,
    p: usize,
    rows: [Vec<bool>; 3],
    received: usize,
    next_out: usize,
}

impl LineBuffer {
    pub fn new(height: usize, width: usize, p: usize) -> Result<Self> {
        if height == 0 || width == 0 || p == 0 {
            return Err(Error::Config(format!(
                "line buffer geometry {height}x{width}x{p} is empty"
            )));
        }
        let row = vec![false; width * p];
        Ok(Self {
            height,
            width,
            p,
            rows: [row.clone(), row.clone(), row],
            received: 0,
            next_out: 0,
        })
    }

    /// Rejects anything but the fixed 3×3, stride-1, same-padding kernel.
    pub fn check_kernel(kh: usize, kw: usize, stride: usize) -> Result<()> {
        if (kh, kw, stride) != (KERNEL, KERNEL, 1) {
            return Err(Error::Config(format!(
                "line buffer supports only 3x3 stride-1 same convolution, got {kh}x{kw} stride {stride}"
            )));
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        self.received = 0;
        self.next_out = 0;
    }

    pub fn is_done(&self) -> bool {
        self.next_out == self.height * self.width
    }

    /// Pushes the next pixel bundle in raster order and returns every window
    /// that became complete.
    pub fn push(&mut self, bundle: &[bool]) -> Vec<Vec<bool>> {
        assert_eq!(bundle.len(), self.p, "bundle width must equal P");
        assert!(
            self.received < self.height * self.width,
            "line buffer overrun"
        );
        let (y, x) = (self.received / self.width, self.received % self.width);
        let p = self.p;
        self.rows[y % 3][x * p..(x + 1) * p].copy_from_slice(bundle);
        self.received += 1;

        let mut out = Vec::new();
        while self.next_out < self.height * self.width && self.window_ready(self.next_out) {
            out.push(self.window(self.next_out));
            self.next_out += 1;
        }
        out
    }

    fn window_ready(&self, idx: usize) -> bool {
        let (y, x) = (idx / self.width, idx % self.width);
        let last = (y + 1).min(self.height - 1) * self.width + (x + 1).min(self.width - 1);
        last < self.received
    }

    fn window(&self, idx: usize) -> Vec<bool> {
        let (y, x) = (idx / self.width, idx % self.width);
        let p = self.p;
        let mut v = vec![false; TAPS * p];
        for kh in 0..KERNEL {
            let Some(yy) = (y + kh).checked_sub(1).filter(|&r| r < self.height) else {
                continue;
            };
            let row = &self.rows[yy % 3];
            for kw in 0..KERNEL {
                let Some(xx) = (x + kw).checked_sub(1).filter(|&c| c < self.width) else {
                    continue;
                };
                let dst = window_index(kh, kw, 0, p);
                v[dst..dst + p].copy_from_slice(&row[xx * p..(xx + 1) * p]);
            }
        }
        v
    }
}

/// Runs a whole `H×W×P` map (pixel-major, channel-fastest) through a line
/// buffer, returning the `H×W` flattened windows in raster order.
pub fn lb_stream(map: &[bool], height: usize, width: usize, p: usize) -> Result<Vec<Vec<bool>>> {
    if map.len() != height * width * p {
        return Err(Error::Shape(format!(
            "spike map has {} bits, expected {height}x{width}x{p}",
            map.len()
        )));
    }
    let mut lb = LineBuffer::new(height, width, p)?;
    let mut out = Vec::with_capacity(height * width);
    for bundle in map.chunks(p) {
        out.extend(lb.push(bundle));
    }
    debug_assert!(lb.is_done());
    Ok(out)
}

/// Serial-to-parallel width adapter for MLP mode: nine P-bit transactions in,
/// one 9P-bit vector out.
#[derive(Clone, Debug)]
pub struct MlpGather {
    p: usize,
    pending: Vec<bool>,
}

impl MlpGather {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            pending: Vec::with_capacity(TAPS * p),
        }
    }

    pub fn push(&mut self, transaction: &[bool]) -> Option<Vec<bool>> {
        assert_eq!(transaction.len(), self.p, "transaction width must equal P");
        self.pending.extend_from_slice(transaction);
        (self.pending.len() == TAPS * self.p).then(|| std::mem::take(&mut self.pending))
    }

    /// Emits a trailing partial vector padded with zero transactions.
    pub fn flush(&mut self) -> Option<Vec<bool>> {
        if self.pending.is_empty() {
            return None;
        }
        let mut v = std::mem::take(&mut self.pending);
        v.resize(TAPS * self.p, false);
        Some(v)
    }
}

pub fn mlp_gather(stream: &[Vec<bool>], p: usize) -> Vec<Vec<bool>> {
    let mut g = MlpGather::new(p);
    let mut out: Vec<Vec<bool>> = stream.iter().filter_map(|t| g.push(t)).collect();
    out.extend(g.flush());
    out
}

/// Splits a flat feature vector into P-bit transactions, zero-padding the
/// last one.
pub fn to_transactions(features: &[bool], p: usize) -> Vec<Vec<bool>> {
    features
        .chunks(p)
        .map(|c| {
            let mut t = c.to_vec();
            t.resize(p, false);
            t
        })
        .collect()
}
