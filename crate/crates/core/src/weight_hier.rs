//! Four-level synaptic weight delivery: Lv1 width adapter → Lv2 Partial Reuse
//! FIFO → Lv3 width adapter → Lv4 skid buffer → systolic array.
//!
//! Every stage is a single-writer state machine advanced one clock at a
//! time. Handshakes are modeled as accepted/refused returns instead of
//! ready/valid wires.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Collects `factor` narrow items and fires them as one wide word.
#[derive(Clone, Debug)]
pub struct WidthAdapter<T> {
    factor: usize,
    acc: Vec<T>,
}

impl<T> WidthAdapter<T> {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config(
                "width adapter factor must be positive".into(),
            ));
        }
        Ok(Self {
            factor,
            acc: Vec::with_capacity(factor),
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn pending(&self) -> usize {
        self.acc.len()
    }

    pub fn push(&mut self, item: T) -> Option<Vec<T>> {
        self.acc.push(item);
        (self.acc.len() == self.factor)
            .then(|| std::mem::replace(&mut self.acc, Vec::with_capacity(self.factor)))
    }
}

/// Inverse of [`WidthAdapter`]: splits wide words back into narrow items.
pub fn split_words<T: Clone>(words: &[Vec<T>]) -> Vec<T> {
    words.iter().flatten().cloned().collect()
}

/// A ring FIFO whose head block of `l_block` words is replayed `t_reuse`
/// times before its slots may be overwritten.
///
/// Pointers are kept as absolute word counts and mapped onto the ring modulo
/// the depth. The protected region runs from the `Start` label up to the push
/// pointer. A push is refused when it would land on `Start`, so at most
/// `depth` words are resident. Pops are refused until the whole current block
/// has been written.
#[derive(Clone, Debug)]
pub struct PartialReuseFifo<T> {
    slots: Vec<Option<T>>,
    t_reuse: usize,
    l_block: usize,
    written: u64,
    start: u64,
    pop: u64,
    reuse: usize,
}

impl<T: Clone> PartialReuseFifo<T> {
    pub fn new(depth: usize, l_block: usize, t_reuse: usize) -> Result<Self> {
        if l_block == 0 || t_reuse == 0 {
            return Err(Error::Config(
                "Partial Reuse FIFO needs L_block >= 1 and T_reuse >= 1".into(),
            ));
        }
        if depth < l_block {
            return Err(Error::Config(format!(
                "Partial Reuse FIFO depth {depth} cannot hold a block of {l_block} words"
            )));
        }
        Ok(Self {
            slots: vec![None; depth],
            t_reuse,
            l_block,
            written: 0,
            start: 0,
            pop: 0,
            reuse: 0,
        })
    }

    /// Rewrites the two control registers. Only legal while nothing is
    /// resident.
    pub fn configure(&mut self, l_block: usize, t_reuse: usize) -> Result<()> {
        if self.occupancy() != 0 {
            return Err(Error::Config(
                "control registers changed while data is resident".into(),
            ));
        }
        if l_block == 0 || t_reuse == 0 || l_block > self.depth() {
            return Err(Error::Config(format!(
                "invalid L_block {l_block} / T_reuse {t_reuse}"
            )));
        }
        self.l_block = l_block;
        self.t_reuse = t_reuse;
        self.reuse = 0;
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.slots.len()
    }

    pub fn l_block(&self) -> usize {
        self.l_block
    }

    pub fn t_reuse(&self) -> usize {
        self.t_reuse
    }

    /// Words resident from `Start` to the push pointer.
    pub fn occupancy(&self) -> usize {
        (self.written - self.start) as usize
    }

    /// Complete blocks resident, including the one being reused.
    pub fn resident_blocks(&self) -> usize {
        self.occupancy() / self.l_block
    }

    pub fn can_push(&self) -> bool {
        self.occupancy() < self.depth()
    }

    pub fn can_pop(&self) -> bool {
        self.written >= self.end_abs()
    }

    fn end_abs(&self) -> u64 {
        self.start + self.l_block as u64
    }

    fn addr(&self, abs: u64) -> usize {
        (abs % self.depth() as u64) as usize
    }

    pub fn push_ptr(&self) -> usize {
        self.addr(self.written)
    }

    pub fn pop_ptr(&self) -> usize {
        self.addr(self.pop)
    }

    /// Ring address of the `Start` label.
    pub fn start_label(&self) -> usize {
        self.addr(self.start)
    }

    /// Ring address of the `End` label (`Start + L - 1`).
    pub fn end_label(&self) -> usize {
        self.addr(self.end_abs() - 1)
    }

    pub fn reuse_count(&self) -> usize {
        self.reuse
    }

    /// Total words accepted so far.
    pub fn total_pushed(&self) -> u64 {
        self.written
    }

    /// Absolute index of the first word still protected.
    pub fn protected_from(&self) -> u64 {
        self.start
    }

    pub fn push(&mut self, word: T) -> bool {
        if !self.can_push() {
            return false;
        }
        let a = self.push_ptr();
        self.slots[a] = Some(word);
        self.written += 1;
        true
    }

    pub fn pop(&mut self) -> Option<T> {
        if !self.can_pop() {
            return None;
        }
        let word = self.slots[self.pop_ptr()].clone();
        self.pop += 1;
        if self.pop == self.end_abs() {
            self.reuse += 1;
            if self.reuse == self.t_reuse {
                self.reuse = 0;
                self.start = self.end_abs();
            }
            self.pop = self.start;
        }
        debug_assert!(word.is_some(), "popped an unwritten slot");
        word
    }
}

/// Two-entry pipeline register decoupling a ready/valid handshake.
#[derive(Clone, Debug)]
pub struct SkidBuffer<T> {
    main: Option<T>,
    skid: Option<T>,
}

impl<T> Default for SkidBuffer<T> {
    fn default() -> Self {
        Self {
            main: None,
            skid: None,
        }
    }
}

impl<T> SkidBuffer<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registered ready: high while the skid slot is free.
    pub fn in_ready(&self) -> bool {
        self.skid.is_none()
    }

    pub fn out_valid(&self) -> bool {
        self.main.is_some()
    }

    pub fn peek(&self) -> Option<&T> {
        self.main.as_ref()
    }

    pub fn len(&self) -> usize {
        self.main.is_some() as usize + self.skid.is_some() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One clock edge. `input` is taken if the buffer was ready at the start
    /// of the cycle; the head item is returned if `out_ready` was high.
    pub fn tick(&mut self, input: &mut Option<T>, out_ready: bool) -> Option<T> {
        let accept = input.is_some() && self.in_ready();
        let out = if out_ready { self.main.take() } else { None };
        if out.is_some() {
            self.main = self.skid.take();
        }
        if accept {
            let item = input.take();
            if self.main.is_none() {
                self.main = item;
            } else {
                self.skid = item;
            }
        }
        out
    }
}

/// Geometry and timing of the weight pipeline for one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HierarchyConfig {
    /// Weights per off-chip beat (Lv1 input width).
    pub beat: usize,
    /// Beats per FIFO word.
    pub lv1_factor: usize,
    /// FIFO depth in words.
    pub fifo_depth: usize,
    /// Words per reuse block.
    pub l_block: usize,
    /// Replays per block.
    pub t_reuse: usize,
    /// FIFO words per tile.
    pub lv3_factor: usize,
    /// Cycles before the first beat arrives.
    pub latency: u64,
}

pub const TRACE_HEADER: &str =
    "# cycle src_pos lv1_pending push_ok pop_ok push_ptr pop_ptr start end reuse occupancy tile_out";

/// The whole Lv1..Lv4 chain fed from an ideal fixed-latency source.
pub struct WeightHierarchy<W> {
    cfg: HierarchyConfig,
    source: Vec<W>,
    src_pos: usize,
    cycle: u64,
    lv1: WidthAdapter<W>,
    lv1_out: Option<Vec<W>>,
    prf: PartialReuseFifo<Vec<W>>,
    lv3: WidthAdapter<Vec<W>>,
    lv3_out: Option<Vec<W>>,
    skid: SkidBuffer<Vec<W>>,
    max_blocks_resident: usize,
    trace: Option<String>,
}

impl<W: Clone> WeightHierarchy<W> {
    pub fn new(cfg: HierarchyConfig, stream: Vec<W>) -> Result<Self> {
        if cfg.beat == 0 {
            return Err(Error::Config("weight beat must be positive".into()));
        }
        Ok(Self {
            cfg,
            source: stream,
            src_pos: 0,
            cycle: 0,
            lv1: WidthAdapter::new(cfg.beat * cfg.lv1_factor)?,
            lv1_out: None,
            prf: PartialReuseFifo::new(cfg.fifo_depth, cfg.l_block, cfg.t_reuse)?,
            lv3: WidthAdapter::new(cfg.lv3_factor)?,
            lv3_out: None,
            skid: SkidBuffer::new(),
            max_blocks_resident: 0,
            trace: None,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(format!("{TRACE_HEADER}\n"));
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.trace.take()
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn fifo(&self) -> &PartialReuseFifo<Vec<W>> {
        &self.prf
    }

    /// Largest number of complete blocks seen resident in the FIFO at once.
    pub fn max_blocks_resident(&self) -> usize {
        self.max_blocks_resident
    }

    fn source_exhausted(&self) -> bool {
        self.src_pos >= self.source.len()
    }

    /// Advances one clock. Returns a tile if `out_ready` and one was valid,
    /// plus whether any stage moved.
    fn step(&mut self, out_ready: bool) -> (Option<Vec<W>>, bool) {
        let mut moved = false;

        // Lv4: skid buffer towards the array.
        let had_lv3 = self.lv3_out.is_some();
        let tile = self.skid.tick(&mut self.lv3_out, out_ready);
        moved |= tile.is_some() || (had_lv3 && self.lv3_out.is_none());

        // Lv2 -> Lv3: one FIFO word per cycle.
        let mut pop_ok = false;
        if self.lv3_out.is_none() {
            if let Some(word) = self.prf.pop() {
                pop_ok = true;
                moved = true;
                self.lv3_out = self.lv3.push(word).map(|words| words.concat());
            }
        }

        // Lv1 -> Lv2.
        let mut push_ok = false;
        if let Some(word) = self.lv1_out.take() {
            if self.prf.push(word.clone()) {
                push_ok = true;
                moved = true;
            } else {
                self.lv1_out = Some(word);
            }
        }
        self.max_blocks_resident = self.max_blocks_resident.max(self.prf.resident_blocks());

        // Source -> Lv1: one beat per cycle once the latency has elapsed.
        if self.lv1_out.is_none() && self.cycle >= self.cfg.latency && !self.source_exhausted() {
            let end = (self.src_pos + self.cfg.beat).min(self.source.len());
            for w in self.source[self.src_pos..end].iter().cloned() {
                if let Some(word) = self.lv1.push(w) {
                    self.lv1_out = Some(word);
                }
            }
            self.src_pos = end;
            moved = true;
        }

        if let Some(trace) = self.trace.as_mut() {
            let _ = writeln!(
                trace,
                "{} {} {} {} {} {} {} {} {} {} {} {}",
                self.cycle,
                self.src_pos,
                self.lv1.pending(),
                push_ok as u8,
                pop_ok as u8,
                self.prf.push_ptr(),
                self.prf.pop_ptr(),
                self.prf.start_label(),
                self.prf.end_label(),
                self.prf.reuse_count(),
                self.prf.occupancy(),
                tile.is_some() as u8,
            );
        }
        self.cycle += 1;
        (tile, moved || !self.source_exhausted())
    }

    /// Advances `cycles` clocks with the array applying backpressure.
    pub fn advance(&mut self, cycles: u64) {
        for _ in 0..cycles {
            let (tile, _) = self.step(false);
            debug_assert!(tile.is_none());
        }
    }

    /// Clocks with the array ready until a tile is delivered. Returns the
    /// tile and the number of clocks spent (≥ 1).
    pub fn acquire(&mut self) -> Result<(Vec<W>, u64)> {
        let begin = self.cycle;
        loop {
            let (tile, progress) = self.step(true);
            if let Some(tile) = tile {
                return Ok((tile, self.cycle - begin));
            }
            if !progress {
                return Err(Error::Stream(format!(
                    "weight stream truncated: {} of {} weights consumed and no tile can be formed",
                    self.src_pos,
                    self.source.len()
                )));
            }
        }
    }
}

/// Replays a block-structured stream the way the Partial Reuse FIFO should:
/// each block of `l_block` words, in order, `t_reuse` times.
pub fn reuse_reference<T: Clone>(words: &[T], l_block: usize, t_reuse: usize) -> Vec<T> {
    words
        .chunks(l_block)
        .flat_map(|block| std::iter::repeat_n(block, t_reuse).flatten().cloned())
        .collect()
}
