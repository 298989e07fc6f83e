//! Psum-Vmem unified buffer and its three-phase update engine.
//!
//! One buffer entry per (output lane, pixel) holds the partial sum while
//! input-channel tiles of a timestep are still arriving, and the membrane
//! potential between timesteps. On the last input tile of a timestep the
//! engine leaks, compares against the threshold, fires and resets. On the
//! last tile of the last timestep it does the same and then clears the entry
//! for the next layer.

use std::io::Write;

use crate::arith::{Acc24, Threshold18};
use crate::error::{Error, Result};
use crate::systolic::PartialSumRow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UpdatePhase {
    Accumulating,
    Thresholding,
    Clearing,
}

impl UpdatePhase {
    /// Phase selected by the FSM when input tile `p_i` of timestep `t`
    /// arrives.
    pub fn for_tile(t: usize, timesteps: usize, p_i: usize, c_i: usize) -> Self {
        if p_i + 1 < c_i {
            UpdatePhase::Accumulating
        } else if t + 1 < timesteps {
            UpdatePhase::Thresholding
        } else {
            UpdatePhase::Clearing
        }
    }
}

/// Firing comparison. `>=` is the default; `>` exists for sensitivity runs.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Compare {
    #[default]
    GreaterEqual,
    Greater,
}

impl Compare {
    #[inline]
    pub fn fires(self, v: i32, v_th: i32) -> bool {
        match self {
            Compare::GreaterEqual => v >= v_th,
            Compare::Greater => v > v_th,
        }
    }
}

pub const MAX_LEAK_SHIFT: u8 = 23;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeuronConfig {
    pub v_th: Threshold18,
    /// `None` is a plain IF neuron; `Some(k)` leaks `v >> k` per timestep.
    pub leak_shift: Option<u8>,
    /// One bias per output lane, injected once per timestep.
    pub bias: Option<Vec<Acc24>>,
    pub compare: Compare,
}

impl NeuronConfig {
    pub fn if_neuron(v_th: Threshold18) -> Self {
        Self {
            v_th,
            leak_shift: None,
            bias: None,
            compare: Compare::GreaterEqual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_leak_shift(self.leak_shift)
    }
}

pub fn check_leak_shift(k: Option<u8>) -> Result<()> {
    match k {
        Some(k) if !(1..=MAX_LEAK_SHIFT).contains(&k) => Err(Error::Config(format!(
            "leak shift {k} outside [1, {MAX_LEAK_SHIFT}]"
        ))),
        _ => Ok(()),
    }
}

/// `v - (v >> k)`, i.e. `v * (1 - 2^-k)` with floor semantics on the shifted
/// term. Identity for IF neurons.
#[inline]
pub fn leak(v: Acc24, k: Option<u8>) -> Acc24 {
    match k {
        Some(k) => Acc24::wrapping(i64::from(v.value()) - i64::from(v.ashr(u32::from(k)).value())),
        None => v,
    }
}

/// Leak, compare and reset one fully accumulated membrane value.
pub fn fire_and_update(v: Acc24, cfg: &NeuronConfig, phase: UpdatePhase) -> (bool, Acc24) {
    assert!(
        phase != UpdatePhase::Accumulating,
        "no spike is generated while accumulating"
    );
    let leaked = leak(v, cfg.leak_shift);
    let spike = cfg.compare.fires(leaked.value(), cfg.v_th.value());
    let next = match phase {
        UpdatePhase::Thresholding if !spike => leaked,
        _ => Acc24::ZERO,
    };
    (spike, next)
}

/// 2×2 max pooling of binary spikes is a logical OR.
#[inline]
pub fn maxpool2(window: [bool; 4]) -> bool {
    window.iter().any(|&s| s)
}

/// Pools an `h×w×c` map (pixel-major, channel-fastest) down to
/// `h/2 × w/2 × c`.
pub fn maxpool2_map(map: &[bool], h: usize, w: usize, c: usize) -> Result<Vec<bool>> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "2x2 pooling needs even dimensions, got {h}x{w}"
        )));
    }
    if map.len() != h * w * c {
        return Err(Error::Shape(format!(
            "pooling input has {} bits, expected {h}x{w}x{c}",
            map.len()
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let at = |y: usize, x: usize, ch: usize| map[(y * w + x) * c + ch];
    let mut out = Vec::with_capacity(ho * wo * c);
    for y in 0..ho {
        for x in 0..wo {
            for ch in 0..c {
                out.push(maxpool2([
                    at(2 * y, 2 * x, ch),
                    at(2 * y, 2 * x + 1, ch),
                    at(2 * y + 1, 2 * x, ch),
                    at(2 * y + 1, 2 * x + 1, ch),
                ]));
            }
        }
    }
    Ok(out)
}

/// Unified Psum/Vmem storage: `lanes × positions` 24-bit entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VmemBuffer {
    lanes: usize,
    positions: usize,
    data: Vec<Acc24>,
    overflows: u64,
}

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"FFVM";

impl VmemBuffer {
    pub fn new(lanes: usize, positions: usize) -> Self {
        Self {
            lanes,
            positions,
            data: vec![Acc24::ZERO; lanes * positions],
            overflows: 0,
        }
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    #[inline]
    pub fn get(&self, lane: usize, pos: usize) -> Acc24 {
        self.data[lane * self.positions + pos]
    }

    #[inline]
    pub fn set(&mut self, lane: usize, pos: usize, v: Acc24) {
        self.data[lane * self.positions + pos] = v;
    }

    /// Wrapping add; every wrap bumps the overflow diagnostic.
    #[inline]
    pub fn add(&mut self, lane: usize, pos: usize, v: Acc24) {
        let (sum, wrapped) = self.get(lane, pos).overflowing_add(v);
        self.overflows += u64::from(wrapped);
        self.set(lane, pos, sum);
    }

    pub fn accumulate(&mut self, pos: usize, row: &PartialSumRow) {
        assert_eq!(
            row.values.len(),
            self.lanes,
            "partial-sum row width must equal the lane count"
        );
        for (lane, &v) in row.values.iter().enumerate() {
            self.add(lane, pos, v);
        }
    }

    pub fn overflows(&self) -> u64 {
        self.overflows
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|v| *v == Acc24::ZERO)
    }

    /// Snapshot layout, little-endian: magic `b"FFVM"`, u32 lanes, u32
    /// positions, u32 timestep, then `lanes * positions` i32 values, lane
    /// major.
    pub fn write_snapshot(&self, timestep: u32, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(&SNAPSHOT_MAGIC)?;
        for v in [self.lanes as u32, self.positions as u32, timestep] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            out.write_all(&v.value().to_le_bytes())?;
        }
        Ok(())
    }
}

/// Drives one [`VmemBuffer`] through a layer pass for one output-channel
/// group.
#[derive(Clone, Debug)]
pub struct UpdateEngine {
    cfg: NeuronConfig,
    buf: VmemBuffer,
    phase: UpdatePhase,
    first_tile: bool,
    /// Leaked membrane seen in the clearing phase, before it is zeroed.
    final_membrane: Vec<Acc24>,
}

impl UpdateEngine {
    pub fn new(cfg: NeuronConfig, lanes: usize, positions: usize) -> Result<Self> {
        cfg.validate()?;
        if let Some(b) = &cfg.bias {
            if b.len() != lanes {
                return Err(Error::Shape(format!(
                    "bias has {} entries for {lanes} lanes",
                    b.len()
                )));
            }
        }
        Ok(Self {
            cfg,
            buf: VmemBuffer::new(lanes, positions),
            phase: UpdatePhase::Accumulating,
            first_tile: true,
            final_membrane: vec![Acc24::ZERO; lanes * positions],
        })
    }

    pub fn buffer(&self) -> &VmemBuffer {
        &self.buf
    }

    pub fn phase(&self) -> UpdatePhase {
        self.phase
    }

    pub fn final_membrane(&self, lane: usize, pos: usize) -> Acc24 {
        self.final_membrane[lane * self.buf.positions + pos]
    }

    /// Selects the FSM phase for the tile about to stream in.
    pub fn begin_tile(
        &mut self,
        t: usize,
        timesteps: usize,
        p_i: usize,
        c_i: usize,
    ) -> UpdatePhase {
        self.phase = UpdatePhase::for_tile(t, timesteps, p_i, c_i);
        self.first_tile = p_i == 0;
        self.phase
    }

    /// Consumes the partial sums of one pixel. Returns one spike per lane
    /// when the current tile completes the timestep.
    pub fn process(&mut self, pos: usize, row: &PartialSumRow) -> Option<Vec<bool>> {
        if self.first_tile {
            if let Some(bias) = &self.cfg.bias {
                for (lane, &b) in bias.iter().enumerate() {
                    self.buf.add(lane, pos, b);
                }
            }
        }
        self.buf.accumulate(pos, row);
        if self.phase == UpdatePhase::Accumulating {
            return None;
        }
        let spikes = (0..self.buf.lanes)
            .map(|lane| {
                let v = self.buf.get(lane, pos);
                if self.phase == UpdatePhase::Clearing {
                    self.final_membrane[lane * self.buf.positions + pos] =
                        leak(v, self.cfg.leak_shift);
                }
                let (spike, next) = fire_and_update(v, &self.cfg, self.phase);
                self.buf.set(lane, pos, next);
                spike
            })
            .collect();
        Some(spikes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn acc(v: i32) -> Acc24 {
        Acc24::new(v).unwrap()
    }

    fn th(v: i32) -> Threshold18 {
        Threshold18::new(v).unwrap()
    }

    fn row(v: &[i32]) -> PartialSumRow {
        PartialSumRow {
            values: v.iter().map(|&x| acc(x)).collect(),
        }
    }

    #[test]
    fn leak_examples() {
        assert_eq!(leak(acc(7), Some(1)).value(), 4);
        assert_eq!(leak(acc(0), Some(3)).value(), 0);
        assert_eq!(leak(acc(-7), Some(1)).value(), -3);
        assert_eq!(leak(acc(-7), None).value(), -7);
    }

    #[test]
    fn threshold_boundary() {
        let cfg = NeuronConfig::if_neuron(th(5));
        assert_eq!(
            fire_and_update(acc(5), &cfg, UpdatePhase::Thresholding),
            (true, Acc24::ZERO)
        );
        assert_eq!(
            fire_and_update(acc(4), &cfg, UpdatePhase::Thresholding),
            (false, acc(4))
        );
        assert_eq!(
            fire_and_update(acc(4), &cfg, UpdatePhase::Clearing),
            (false, Acc24::ZERO)
        );
        let strict = NeuronConfig {
            compare: Compare::Greater,
            ..cfg
        };
        assert!(!fire_and_update(acc(5), &strict, UpdatePhase::Thresholding).0);
    }

    #[test]
    fn if_neuron_two_steps() {
        // I = [3, 4], v_th = 5 → spikes [0, 1], Vmem ends at 0.
        let mut e = UpdateEngine::new(NeuronConfig::if_neuron(th(5)), 1, 1).unwrap();
        let mut spikes = Vec::new();
        for (t, i) in [3, 4].into_iter().enumerate() {
            e.begin_tile(t, 2, 0, 1);
            spikes.push(e.process(0, &row(&[i])).unwrap()[0]);
        }
        assert_eq!(spikes, [false, true]);
        assert!(e.buffer().is_all_zero());
    }

    #[test]
    fn accumulate_examples() {
        let mut b = VmemBuffer::new(2, 3);
        b.accumulate(1, &row(&[0, 0]));
        assert!(b.is_all_zero());
        b.accumulate(1, &row(&[3, 0]));
        b.accumulate(1, &row(&[4, 0]));
        assert_eq!(b.get(0, 1).value(), 7);
        b.set(1, 2, acc(Acc24::MAX));
        b.add(1, 2, acc(1));
        assert_eq!(b.get(1, 2).value(), Acc24::MIN);
        assert_eq!(b.overflows(), 1);
    }

    #[test]
    fn bias_added_once_per_timestep() {
        let cfg = NeuronConfig {
            bias: Some(vec![acc(10)]),
            ..NeuronConfig::if_neuron(th(1000))
        };
        let mut e = UpdateEngine::new(cfg, 1, 1).unwrap();
        for p_i in 0..3 {
            e.begin_tile(0, 2, p_i, 3);
            e.process(0, &row(&[1]));
        }
        assert_eq!(e.buffer().get(0, 0).value(), 13);
    }

    #[test]
    fn maxpool_examples() {
        assert!(!maxpool2([false; 4]));
        assert!(maxpool2([false, true, false, false]));
        let map = vec![true; 4 * 6 * 2];
        assert_eq!(maxpool2_map(&map, 4, 6, 2).unwrap().len(), 2 * 3 * 2);
        assert!(maxpool2_map(&[false; 3 * 4], 3, 4, 1).is_err());
    }

    #[test]
    fn leak_shift_range() {
        let mut cfg = NeuronConfig::if_neuron(th(1));
        cfg.leak_shift = Some(0);
        assert!(cfg.validate().is_err());
        cfg.leak_shift = Some(24);
        assert!(cfg.validate().is_err());
        cfg.leak_shift = Some(23);
        assert!(cfg.validate().is_ok());
    }

    // Enumerates every (t, p_i) of a schedule and checks the FSM conditions.
    #[test]
    fn fsm_matches_enumerated_schedule() {
        for timesteps in 1..5 {
            for c_i in 1..5 {
                for t in 0..timesteps {
                    for p_i in 0..c_i {
                        let want = match (p_i == c_i - 1, t == timesteps - 1) {
                            (false, _) => UpdatePhase::Accumulating,
                            (true, false) => UpdatePhase::Thresholding,
                            (true, true) => UpdatePhase::Clearing,
                        };
                        assert_eq!(UpdatePhase::for_tile(t, timesteps, p_i, c_i), want);
                    }
                }
            }
        }
    }

    // Scalar transcription: accumulate → leak → compare ≥ → reset.
    fn scalar_trace(currents: &[i32], v_th: i32, k: Option<u8>) -> Vec<bool> {
        let mut u: i64 = 0;
        let mut out = Vec::new();
        for &i in currents {
            let mut v = u + i64::from(i);
            if let Some(k) = k {
                v -= v >> k;
            }
            if v >= i64::from(v_th) {
                out.push(true);
                u = 0;
            } else {
                out.push(false);
                u = v;
            }
        }
        out
    }

    #[test]
    fn random_single_neuron_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let steps = rng.gen_range(1..8);
            let c_i = rng.gen_range(1..4);
            let v_th = rng.gen_range(-50..200);
            let k = rng.gen_bool(0.5).then(|| rng.gen_range(1..6));
            let tiles: Vec<Vec<i32>> = (0..steps)
                .map(|_| (0..c_i).map(|_| rng.gen_range(-40..80)).collect())
                .collect();
            let cfg = NeuronConfig {
                leak_shift: k,
                ..NeuronConfig::if_neuron(th(v_th))
            };
            let mut e = UpdateEngine::new(cfg, 1, 1).unwrap();
            let mut got = Vec::new();
            for (t, parts) in tiles.iter().enumerate() {
                for (p_i, &p) in parts.iter().enumerate() {
                    e.begin_tile(t, steps, p_i, c_i);
                    if let Some(s) = e.process(0, &row(&[p])) {
                        got.push(s[0]);
                    }
                }
            }
            let currents: Vec<i32> = tiles.iter().map(|p| p.iter().sum()).collect();
            assert_eq!(got, scalar_trace(&currents, v_th, k));
            assert!(e.buffer().is_all_zero());
        }
    }

    #[test]
    fn snapshot_layout() {
        let mut b = VmemBuffer::new(2, 2);
        b.set(1, 0, acc(-2));
        let mut bytes = Vec::new();
        b.write_snapshot(3, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 16 + 4 * 4);
        assert_eq!(&bytes[..4], b"FFVM");
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(i32::from_le_bytes(bytes[24..28].try_into().unwrap()), -2);
    }
}
