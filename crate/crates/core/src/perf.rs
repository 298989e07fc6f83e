//! Throughput and latency model.
//!
//! Peak throughput counts every multiply-accumulate slot of the array as two
//! synaptic operations per clock. Layer latency is the loop-bound compute
//! term plus weight-stream stalls, one pipeline fill per layer and a fixed
//! overhead per descriptor.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LayerKind, TopologyLayer};

pub use crate::network::parse_topology;
use crate::scheduler::{drive_layer, LayerConfig};
use crate::systolic::ArrayDims;

/// Weight delivery model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MemoryModel {
    /// Every tile is on chip when needed.
    Ideal,
    /// Off-chip stream of `weights_per_cycle` INT8 weights per clock after a
    /// fixed `latency`, feeding the Lv1..Lv4 hierarchy.
    Stream {
        weights_per_cycle: usize,
        latency: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfConfig {
    pub freq_hz: f64,
    pub dims: ArrayDims,
    pub command_overhead: u64,
    pub memory: MemoryModel,
    /// Partial Reuse FIFO depth in words; `None` sizes it to the largest
    /// reuse block.
    pub fifo_depth: Option<usize>,
    /// Pipeline stages between the array output and a spike leaving the
    /// update engine.
    pub update_latency: u64,
}

impl PerfConfig {
    /// Ideal memory, zero descriptor overhead.
    pub fn ideal(dims: ArrayDims, freq_hz: f64) -> Self {
        Self {
            freq_hz,
            dims,
            command_overhead: 0,
            memory: MemoryModel::Ideal,
            fifo_depth: None,
            update_latency: 3,
        }
    }

    /// Default streaming model: one 128-bit beat per clock after 40 clocks
    /// of latency, 2 clocks per descriptor.
    pub fn streaming(dims: ArrayDims, freq_hz: f64) -> Self {
        Self {
            command_overhead: 2,
            memory: MemoryModel::Stream {
                weights_per_cycle: 16,
                latency: 40,
            },
            ..Self::ideal(dims, freq_hz)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.freq_hz.is_finite() && self.freq_hz > 0.0) {
            return Err(Error::Config(format!(
                "clock frequency {} Hz must be positive",
                self.freq_hz
            )));
        }
        if let MemoryModel::Stream {
            weights_per_cycle: 0,
            ..
        } = self.memory
        {
            return Err(Error::Config(
                "weight stream bandwidth must be positive".into(),
            ));
        }
        ArrayDims::new(self.dims.m, self.dims.n).map(|_| ())
    }

    /// Array plus update-engine pipeline depth, paid once per layer.
    pub fn fill_cycles(&self) -> u64 {
        u64::from(self.dims.fill_latency()) + self.update_latency
    }
}

/// Cycle breakdown of one layer (or a sum of layers).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCycles {
    pub compute: u64,
    pub stall: u64,
    pub fill: u64,
    pub overhead: u64,
}

impl LayerCycles {
    pub fn total(&self) -> u64 {
        self.compute + self.stall + self.fill + self.overhead
    }
}

impl Add for LayerCycles {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            compute: self.compute + o.compute,
            stall: self.stall + o.stall,
            fill: self.fill + o.fill,
            overhead: self.overhead + o.overhead,
        }
    }
}

impl AddAssign for LayerCycles {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Peak synaptic operations per second, `2 f M N`, exact in integers.
pub fn peak_sops(freq_hz: u64, m: usize, n: usize) -> u128 {
    2 * u128::from(freq_hz) * m as u128 * n as u128
}

/// Peak throughput in GSOP/s.
pub fn peak_gsops(freq_hz: f64, m: usize, n: usize) -> f64 {
    2.0 * freq_hz * m as f64 * n as f64 / 1e9
}

/// Cycles of one layer under `perf`, from the same command walk and weight
/// hierarchy the simulator uses, without moving any data.
pub fn layer_cycles(cfg: &LayerConfig, perf: &PerfConfig) -> Result<LayerCycles> {
    perf.validate()?;
    drive_layer(
        cfg,
        perf,
        || vec![(); cfg.stream_len()],
        None,
        |_, _| Ok(()),
    )
}

/// Cycles of every layer with one FIFO shared across the network, sized to
/// the largest reuse block unless configured.
pub fn network_cycles(layers: &[LayerConfig], perf: &PerfConfig) -> Result<Vec<LayerCycles>> {
    let mut perf = perf.clone();
    if perf.fifo_depth.is_none() {
        perf.fifo_depth = Some(
            layers
                .iter()
                .map(LayerConfig::block_words)
                .max()
                .unwrap_or(0)
                .max(1),
        );
    }
    layers.iter().map(|l| layer_cycles(l, &perf)).collect()
}

/// Synaptic operations of a layer: two per in-bounds spike/weight pair the
/// array evaluates, padded channels excluded.
pub fn layer_sops(cfg: &LayerConfig) -> u64 {
    let pairs = match cfg.kind {
        LayerKind::Conv3x3 => {
            let taps_h = 3 * cfg.h as u64 - 2;
            let taps_w = 3 * cfg.w as u64 - 2;
            (cfg.c_out * cfg.c_in) as u64 * taps_h * taps_w
        }
        LayerKind::FullyConnected => (cfg.c_out * cfg.c_in) as u64,
        LayerKind::Maxpool2 => 0,
    };
    2 * cfg.t as u64 * pairs
}

/// Achieved GSOP/s and its ratio to peak.
pub fn actual_gsops(sops: u64, cycles: u64, perf: &PerfConfig) -> (f64, f64) {
    if cycles == 0 {
        return (0.0, 0.0);
    }
    let seconds = cycles as f64 / perf.freq_hz;
    let gsops = sops as f64 / seconds / 1e9;
    (
        gsops,
        gsops / peak_gsops(perf.freq_hz, perf.dims.m, perf.dims.n),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: LayerKind,
    pub cycles: LayerCycles,
    pub sops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub array: String,
    pub freq_mhz: f64,
    pub peak_gsops: f64,
    pub actual_gsops: f64,
    pub utilization: f64,
    pub total_cycles: u64,
    pub latency_s: f64,
    pub layers: Vec<LayerReport>,
}

impl PerfReport {
    pub fn new(perf: &PerfConfig, layers: Vec<LayerReport>) -> Self {
        let total_cycles: u64 = layers.iter().map(|l| l.cycles.total()).sum();
        let sops: u64 = layers.iter().map(|l| l.sops).sum();
        let (actual, utilization) = actual_gsops(sops, total_cycles, perf);
        Self {
            array: perf.dims.to_string(),
            freq_mhz: perf.freq_hz / 1e6,
            peak_gsops: peak_gsops(perf.freq_hz, perf.dims.m, perf.dims.n),
            actual_gsops: actual,
            utilization,
            total_cycles,
            latency_s: total_cycles as f64 / perf.freq_hz,
            layers,
        }
    }

    /// Report for a list of layer configs via [`network_cycles`].
    pub fn for_layers(layers: &[LayerConfig], perf: &PerfConfig) -> Result<Self> {
        let cycles = network_cycles(layers, perf)?;
        let rows = layers
            .iter()
            .zip(cycles)
            .enumerate()
            .map(|(index, (cfg, cycles))| LayerReport {
                index,
                kind: cfg.kind,
                cycles,
                sops: layer_sops(cfg),
            })
            .collect();
        Ok(Self::new(perf, rows))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "array {} @ {} MHz", self.array, self.freq_mhz);
        let _ = writeln!(
            s,
            "{:>5} {:>16} {:>10} {:>10} {:>8} {:>8} {:>12}",
            "layer", "kind", "compute", "stall", "fill", "overhead", "SOPs"
        );
        for l in &self.layers {
            let c = &l.cycles;
            let _ = writeln!(
                s,
                "{:>5} {:>16} {:>10} {:>10} {:>8} {:>8} {:>12}",
                l.index,
                format!("{:?}", l.kind),
                c.compute,
                c.stall,
                c.fill,
                c.overhead,
                l.sops
            );
        }
        let _ = writeln!(s, "total cycles     {}", self.total_cycles);
        let _ = writeln!(s, "latency          {:.6} ms", self.latency_s * 1e3);
        let _ = writeln!(s, "peak GSOP/s      {:.1}", self.peak_gsops);
        let _ = writeln!(s, "actual GSOP/s    {:.1}", self.actual_gsops);
        let _ = writeln!(s, "utilization      {:.3}", self.utilization);
        s
    }
}

/// The five-conv benchmark network on 28×28 single-channel input.
pub const SCNN5: &str = "28x28-16c3-64c3-p2-128c3-p2-256c3-256c3-10";

pub fn topology_configs(layers: &[TopologyLayer], t: usize, p: usize) -> Vec<LayerConfig> {
    layers
        .iter()
        .map(|l| LayerConfig {
            pool: l.pool,
            ..LayerConfig::new(l.kind, l.c_in, l.c_out, l.h, l.w, t, p)
        })
        .collect()
}
