//! Layer scheduling: channel tiling, the command stream, and the simulator
//! that wires spike generation, the systolic array, the weight hierarchy and
//! the update engine together.
//!
//! Loop nest per layer: output group `p_o`, then timestep `t`, then input
//! group `p_i`, then spatial positions. Weights for one `p_o` (all its `c_i`
//! tiles) form one reuse block that the Partial Reuse FIFO replays `T` times.

use std::fmt;

use crate::arith::Acc24;
use crate::error::{Error, Result};
use crate::network::{ClassHead, Layer, LayerKind, Network, Shape};
use crate::neuron::{maxpool2_map, NeuronConfig, UpdateEngine, UpdatePhase};
use crate::perf::{LayerCycles, MemoryModel, PerfConfig};
use crate::spikegen::{lb_stream, mlp_gather, to_transactions, window_index, TAPS};
use crate::spikes::SpikeTensor;
use crate::systolic::{ArrayDims, SystolicArray};
use crate::weight_hier::{HierarchyConfig, WeightHierarchy};

/// Geometry of one layer as seen by the scheduler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerConfig {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub t: usize,
    /// Parallelism factor, equal to the array's M.
    pub p: usize,
    pub pool: bool,
}

impl LayerConfig {
    pub fn new(
        kind: LayerKind,
        c_in: usize,
        c_out: usize,
        h: usize,
        w: usize,
        t: usize,
        p: usize,
    ) -> Self {
        Self {
            kind,
            c_in,
            c_out,
            h,
            w,
            t,
            p,
            pool: false,
        }
    }

    pub fn for_layer(layer: &Layer, t: usize, p: usize) -> Self {
        Self {
            kind: layer.kind,
            c_in: layer.c_in,
            c_out: layer.c_out,
            h: layer.h,
            w: layer.w,
            t,
            p,
            pool: layer.pool,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0
            || self.p == 0
            || self.c_in == 0
            || self.c_out == 0
            || self.h == 0
            || self.w == 0
        {
            return Err(Error::Config(format!("degenerate layer config {self:?}")));
        }
        if self.kind == LayerKind::FullyConnected && (self.h, self.w) != (1, 1) {
            return Err(Error::Config(
                "fully connected layers are 1x1 spatially".into(),
            ));
        }
        Ok(())
    }

    /// Spike-vector width, `9P`.
    pub fn n(&self) -> usize {
        TAPS * self.p
    }

    /// Input-channel tiles per timestep. For FC layers, the number of
    /// gathered `9P`-wide feature vectors.
    pub fn c_i(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 => self.c_in.div_ceil(self.p),
            LayerKind::FullyConnected => self.c_in.div_ceil(self.n()),
            LayerKind::Maxpool2 => 0,
        }
    }

    pub fn c_o(&self) -> usize {
        match self.kind {
            LayerKind::Maxpool2 => 0,
            _ => self.c_out.div_ceil(self.p),
        }
    }

    /// Spike vectors streamed per tile pass.
    pub fn positions(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 => self.h * self.w,
            LayerKind::FullyConnected => 1,
            LayerKind::Maxpool2 => 0,
        }
    }

    /// `c_o × T × c_i × positions`: one spike vector per cycle.
    pub fn compute_cycles(&self) -> u64 {
        (self.c_o() * self.t * self.c_i() * self.positions()) as u64
    }

    /// Weights in one tile stream covering the whole layer.
    pub fn stream_len(&self) -> usize {
        self.c_o() * self.c_i() * self.p * self.n()
    }

    /// FIFO words (tile rows) per reuse block.
    pub fn block_words(&self) -> usize {
        self.c_i() * self.p
    }
}

/// One descriptor of the pre-generated command sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    /// Start of output group `p_o`; its `c_i` tiles begin streaming.
    LoadWeights { p_o: usize },
    /// Stream `positions` spike vectors of input group `p_i` at timestep `t`
    /// through tile `tile`.
    ProcessTile {
        t: usize,
        p_i: usize,
        p_o: usize,
        tile: usize,
        positions: usize,
    },
    /// The preceding pass completed timestep `t`: fire and reset.
    Threshold { t: usize, p_o: usize },
    /// The preceding pass completed the last timestep: fire and clear.
    Clear { p_o: usize },
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Command::LoadWeights { p_o } => write!(f, "LOAD_WEIGHTS p_o={p_o}"),
            Command::ProcessTile {
                t,
                p_i,
                p_o,
                tile,
                positions,
            } => write!(
                f,
                "PROCESS_TILE t={t} p_i={p_i} p_o={p_o} tile={tile} positions={positions}"
            ),
            Command::Threshold { t, p_o } => write!(f, "THRESHOLD t={t} p_o={p_o}"),
            Command::Clear { p_o } => write!(f, "CLEAR p_o={p_o}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommandStream {
    pub commands: Vec<Command>,
}

impl CommandStream {
    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&Command) -> bool) -> usize {
        self.commands.iter().filter(|c| pred(c)).count()
    }

    /// Sum of positions over all `ProcessTile` descriptors.
    pub fn processed_positions(&self) -> u64 {
        self.commands
            .iter()
            .map(|c| match c {
                Command::ProcessTile { positions, .. } => *positions as u64,
                _ => 0,
            })
            .sum()
    }
}

impl fmt::Display for CommandStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.commands {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Expands the loop nest into descriptors. Standalone pooling needs no array
/// work and yields an empty stream.
pub fn plan_layer(cfg: &LayerConfig) -> Result<CommandStream> {
    cfg.validate()?;
    let (c_i, c_o, positions) = (cfg.c_i(), cfg.c_o(), cfg.positions());
    let mut commands = Vec::with_capacity(c_o * (1 + cfg.t * (c_i + 1)));
    for p_o in 0..c_o {
        commands.push(Command::LoadWeights { p_o });
        for t in 0..cfg.t {
            for p_i in 0..c_i {
                commands.push(Command::ProcessTile {
                    t,
                    p_i,
                    p_o,
                    tile: p_o * c_i + p_i,
                    positions,
                });
            }
            if t + 1 < cfg.t {
                commands.push(Command::Threshold { t, p_o });
            } else {
                commands.push(Command::Clear { p_o });
            }
        }
    }
    Ok(CommandStream { commands })
}

/// Weight tile `(p_o, p_i)` as an `M×N` row-major block, zero-padded past
/// `C_out` and `C_in`.
pub fn weight_tile(layer: &Layer, p: usize, p_o: usize, p_i: usize) -> Vec<i8> {
    let n = TAPS * p;
    let mut tile = vec![0i8; p * n];
    for lane in 0..p {
        let o = p_o * p + lane;
        if o >= layer.c_out {
            continue;
        }
        let row = &mut tile[lane * n..(lane + 1) * n];
        match layer.kind {
            LayerKind::Conv3x3 => {
                for c in 0..p {
                    let i = p_i * p + c;
                    if i >= layer.c_in {
                        break;
                    }
                    for kh in 0..3 {
                        for kw in 0..3 {
                            row[window_index(kh, kw, c, p)] = layer.weight(o, i, kh, kw);
                        }
                    }
                }
            }
            LayerKind::FullyConnected => {
                for (j, w) in row.iter_mut().enumerate() {
                    let i = p_i * n + j;
                    if i >= layer.c_in {
                        break;
                    }
                    *w = layer.weight(o, i, 0, 0);
                }
            }
            LayerKind::Maxpool2 => {}
        }
    }
    tile
}

/// The whole layer's weights in off-chip stream order: `p_o`, then `p_i`,
/// then tile rows.
pub fn weight_stream(layer: &Layer, p: usize) -> Vec<i8> {
    let cfg = LayerConfig::for_layer(layer, 1, p);
    let mut out = Vec::with_capacity(cfg.stream_len());
    for p_o in 0..cfg.c_o() {
        for p_i in 0..cfg.c_i() {
            out.extend(weight_tile(layer, p, p_o, p_i));
        }
    }
    out
}

/// Hierarchy geometry for one layer under a streaming memory model.
pub fn hierarchy_config(cfg: &LayerConfig, perf: &PerfConfig) -> Result<Option<HierarchyConfig>> {
    let MemoryModel::Stream {
        weights_per_cycle,
        latency,
    } = perf.memory
    else {
        return Ok(None);
    };
    let n = cfg.n();
    let beat = gcd(n, weights_per_cycle.max(1));
    let l_block = cfg.block_words();
    let fifo_depth = perf.fifo_depth.unwrap_or(l_block);
    if fifo_depth < l_block {
        return Err(Error::Config(format!(
            "FIFO depth {fifo_depth} cannot hold a {l_block}-word reuse block"
        )));
    }
    Ok(Some(HierarchyConfig {
        beat,
        lv1_factor: n / beat,
        fifo_depth,
        l_block,
        t_reuse: cfg.t,
        lv3_factor: cfg.p,
        latency,
    }))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Walks a layer's command stream, charging cycles and pulling tiles from
/// the weight hierarchy when one is modeled. `on_cmd` sees every command;
/// for `ProcessTile` it also receives the delivered tile (None under ideal
/// memory).
pub(crate) fn drive_layer<W: Clone>(
    cfg: &LayerConfig,
    perf: &PerfConfig,
    stream: impl FnOnce() -> Vec<W>,
    trace: Option<&mut String>,
    mut on_cmd: impl FnMut(&Command, Option<Vec<W>>) -> Result<()>,
) -> Result<LayerCycles> {
    let plan = plan_layer(cfg)?;
    let mut hier = match hierarchy_config(cfg, perf)? {
        Some(hcfg) if !plan.is_empty() => {
            let mut h = WeightHierarchy::new(hcfg, stream())?;
            if trace.is_some() {
                h.enable_trace();
            }
            Some(h)
        }
        _ => None,
    };
    let mut cycles = LayerCycles::default();
    if !plan.is_empty() {
        cycles.fill = perf.fill_cycles();
    }
    for cmd in &plan.commands {
        cycles.overhead += perf.command_overhead;
        match *cmd {
            Command::ProcessTile { positions, .. } => {
                let tile = match hier.as_mut() {
                    Some(h) => {
                        let (tile, k) = h.acquire()?;
                        cycles.stall += k - 1;
                        Some(tile)
                    }
                    None => None,
                };
                on_cmd(cmd, tile)?;
                cycles.compute += positions as u64;
                if let Some(h) = hier.as_mut() {
                    h.advance(positions as u64 - 1);
                }
            }
            _ => on_cmd(cmd, None)?,
        }
    }
    if let (Some(h), Some(out)) = (hier.as_mut(), trace) {
        out.push_str(&h.take_trace().unwrap_or_default());
    }
    Ok(cycles)
}

/// Result of one simulated layer.
#[derive(Clone, Debug)]
pub struct LayerRun {
    pub output: SpikeTensor,
    pub cycles: LayerCycles,
    /// Leaked membrane of the last timestep per output channel, summed over
    /// positions.
    pub final_vmem: Vec<i64>,
    /// Accumulator wraps observed in the unified buffer.
    pub overflows: u64,
}

#[derive(Clone, Debug)]
pub struct NetworkRun {
    pub output: SpikeTensor,
    pub scores: Vec<i64>,
    pub layers: Vec<LayerRun>,
    pub cycles: LayerCycles,
}

impl NetworkRun {
    /// Index of the highest score; ties go to the lowest index.
    pub fn predicted_class(&self) -> Option<usize> {
        argmax(&self.scores)
    }
}

pub fn argmax(scores: &[i64]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, i64)>, (i, &s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
}

/// Architectural simulator for one array.
#[derive(Clone, Debug)]
pub struct Simulator {
    perf: PerfConfig,
    trace: Option<String>,
    snapshots: Option<Vec<u8>>,
}

impl Simulator {
    pub fn new(perf: PerfConfig) -> Result<Self> {
        perf.validate()?;
        let ArrayDims { m, n } = perf.dims;
        if n != TAPS * m {
            return Err(Error::Config(format!(
                "the scheduler maps 3x3 windows of M channels and needs N = 9M, got {m}x{n}"
            )));
        }
        Ok(Self {
            perf,
            trace: None,
            snapshots: None,
        })
    }

    pub fn perf(&self) -> &PerfConfig {
        &self.perf
    }

    /// Records the weight-hierarchy state every cycle (streaming memory only).
    pub fn enable_trace(&mut self) {
        self.trace = Some(String::new());
    }

    pub fn take_trace(&mut self) -> Option<String> {
        self.trace.take()
    }

    /// Records a unified-buffer snapshot after every timestep of every
    /// output group.
    pub fn enable_snapshots(&mut self) {
        self.snapshots = Some(Vec::new());
    }

    pub fn take_snapshots(&mut self) -> Option<Vec<u8>> {
        self.snapshots.take()
    }

    pub fn run_layer(&mut self, layer: &Layer, input: &SpikeTensor) -> Result<LayerRun> {
        layer.validate()?;
        let dims = input.dims();
        if !layer.accepts(Shape::new(dims.c, dims.h, dims.w)) {
            return Err(Error::Shape(format!(
                "{:?} layer ({} in, {}x{}) cannot consume spikes {dims}",
                layer.kind, layer.c_in, layer.h, layer.w
            )));
        }
        let p = self.perf.dims.m;
        let cfg = LayerConfig::for_layer(layer, dims.t, p);
        let out_shape = layer.output_shape();
        let mut output = SpikeTensor::zeros(out_shape.with_timesteps(dims.t));

        if layer.kind == LayerKind::Maxpool2 {
            for t in 0..dims.t {
                let pooled = maxpool2_map(&input.frame(t), layer.h, layer.w, layer.c_in)?;
                let base = t * out_shape.features();
                for (i, &s) in pooled.iter().enumerate() {
                    output.set_linear(base + i, s);
                }
            }
            return Ok(LayerRun {
                output,
                cycles: LayerCycles::default(),
                final_vmem: vec![0; layer.c_out],
                overflows: 0,
            });
        }

        let vectors = spike_vectors(layer, &cfg, input)?;
        let (c_i, positions, timesteps) = (cfg.c_i(), cfg.positions(), cfg.t);
        let mut array = SystolicArray::new(self.perf.dims);
        let mut engine: Option<UpdateEngine> = None;
        let mut group_spikes = vec![false; positions * p];
        let mut final_vmem = vec![0i64; layer.c_out];
        let mut overflows = 0u64;
        let snapshots = &mut self.snapshots;

        let mut on_cmd = |cmd: &Command, tile: Option<Vec<i8>>| -> Result<()> {
            match *cmd {
                Command::LoadWeights { p_o } => {
                    if let Some(e) = engine.take() {
                        overflows += e.buffer().overflows();
                    }
                    engine = Some(UpdateEngine::new(
                        neuron_config(layer, p, p_o),
                        p,
                        positions,
                    )?);
                }
                Command::ProcessTile {
                    t,
                    p_i,
                    p_o,
                    tile: id,
                    ..
                } => {
                    let tile = tile.unwrap_or_else(|| weight_tile(layer, p, p_o, p_i));
                    array.array_load(&tile, id as u64)?;
                    let eng = engine
                        .as_mut()
                        .ok_or_else(|| desync("tile before weight load"))?;
                    let phase = eng.begin_tile(t, timesteps, p_i, c_i);
                    for (pos, v) in vectors[t * c_i + p_i].iter().enumerate() {
                        let row = array.array_step(v);
                        if let Some(spikes) = eng.process(pos, &row) {
                            group_spikes[pos * p..(pos + 1) * p].copy_from_slice(&spikes);
                        }
                    }
                    if phase != UpdatePhase::Accumulating {
                        emit_group(layer, p, p_o, t, &group_spikes, &mut output)?;
                        if let Some(buf) = snapshots.as_mut() {
                            eng.buffer().write_snapshot(t as u32, &mut *buf)?;
                        }
                    }
                    if phase == UpdatePhase::Clearing {
                        for lane in 0..p.min(layer.c_out.saturating_sub(p_o * p)) {
                            final_vmem[p_o * p + lane] = (0..positions)
                                .map(|pos| i64::from(eng.final_membrane(lane, pos).value()))
                                .sum();
                        }
                    }
                }
                Command::Threshold { .. } | Command::Clear { .. } => {
                    let expect = if matches!(cmd, Command::Clear { .. }) {
                        UpdatePhase::Clearing
                    } else {
                        UpdatePhase::Thresholding
                    };
                    let eng = engine
                        .as_ref()
                        .ok_or_else(|| desync("marker before weight load"))?;
                    if eng.phase() != expect {
                        return Err(desync(&format!(
                            "{cmd} while the update engine is {:?}",
                            eng.phase()
                        )));
                    }
                }
            }
            Ok(())
        };
        let cycles = drive_layer(
            &cfg,
            &self.perf,
            || weight_stream(layer, p),
            self.trace.as_mut(),
            &mut on_cmd,
        )?;
        if let Some(e) = engine {
            overflows += e.buffer().overflows();
        }
        Ok(LayerRun {
            output,
            cycles,
            final_vmem,
            overflows,
        })
    }

    /// Runs every layer in order. The FIFO depth, unless configured, is
    /// sized to the largest reuse block in the network.
    pub fn run_network(&mut self, net: &Network, input: &SpikeTensor) -> Result<NetworkRun> {
        net.validate()?;
        net.check_input(input.dims())?;
        let saved = self.perf.clone();
        if self.perf.fifo_depth.is_none() {
            self.perf.fifo_depth = Some(network_fifo_depth(net, input.dims().t, self.perf.dims.m));
        }
        let result = self.run_layers(net, input);
        self.perf = saved;
        result
    }

    fn run_layers(&mut self, net: &Network, input: &SpikeTensor) -> Result<NetworkRun> {
        let mut layers: Vec<LayerRun> = Vec::with_capacity(net.layers.len());
        let mut cycles = LayerCycles::default();
        let mut last_vmem: Option<Vec<i64>> = None;
        for (i, layer) in net.layers.iter().enumerate() {
            if let Some(trace) = self.trace.as_mut() {
                trace.push_str(&format!("# layer {i}\n"));
            }
            let x = layers.last().map_or(input, |l| &l.output);
            let run = self.run_layer(layer, x)?;
            cycles += run.cycles;
            if layer.kind != LayerKind::Maxpool2 {
                last_vmem = Some(run.final_vmem.clone());
            }
            layers.push(run);
        }
        let output = layers
            .last()
            .expect("validated network has layers")
            .output
            .clone();
        let scores = class_scores(net.head, &output, last_vmem.as_deref());
        Ok(NetworkRun {
            output,
            scores,
            layers,
            cycles,
        })
    }
}

/// FIFO words needed to hold the largest reuse block of any layer.
pub fn network_fifo_depth(net: &Network, t: usize, p: usize) -> usize {
    net.layers
        .iter()
        .map(|l| LayerConfig::for_layer(l, t, p).block_words())
        .max()
        .unwrap_or(0)
        .max(1)
}

/// Per-channel class scores of the final output.
pub fn class_scores(head: ClassHead, output: &SpikeTensor, final_vmem: Option<&[i64]>) -> Vec<i64> {
    let d = output.dims();
    match (head, final_vmem) {
        (ClassHead::FinalVmem, Some(v)) => v.to_vec(),
        _ => {
            let mut counts = vec![0i64; d.c];
            for i in 0..d.len() {
                if output.get_linear(i) {
                    counts[i % d.c] += 1;
                }
            }
            counts
        }
    }
}

fn desync(what: &str) -> Error {
    Error::Stream(format!("command/stream desync: {what}"))
}

fn neuron_config(layer: &Layer, p: usize, p_o: usize) -> NeuronConfig {
    let bias = layer.bias.as_ref().map(|b| {
        (0..p)
            .map(|lane| b.get(p_o * p + lane).copied().unwrap_or(Acc24::ZERO))
            .collect()
    });
    NeuronConfig {
        v_th: layer.v_th,
        leak_shift: layer.leak_shift,
        bias,
        compare: layer.compare,
    }
}

/// Spike vectors for every `(t, p_i)` pass, indexed `t * c_i + p_i`.
fn spike_vectors(
    layer: &Layer,
    cfg: &LayerConfig,
    input: &SpikeTensor,
) -> Result<Vec<Vec<Vec<bool>>>> {
    let d = input.dims();
    let p = cfg.p;
    let mut out = Vec::with_capacity(d.t * cfg.c_i());
    for t in 0..d.t {
        match layer.kind {
            LayerKind::Conv3x3 => {
                for p_i in 0..cfg.c_i() {
                    let mut map = vec![false; d.h * d.w * p];
                    for y in 0..d.h {
                        for x in 0..d.w {
                            for c in 0..p.min(d.c - p_i * p) {
                                map[(y * d.w + x) * p + c] = input.get(t, p_i * p + c, y, x);
                            }
                        }
                    }
                    out.push(lb_stream(&map, d.h, d.w, p)?);
                }
            }
            LayerKind::FullyConnected => {
                let gathered = mlp_gather(&to_transactions(&input.frame(t), p), p);
                debug_assert_eq!(gathered.len(), cfg.c_i());
                out.extend(gathered.into_iter().map(|v| vec![v]));
            }
            LayerKind::Maxpool2 => unreachable!("pooling layers stream no vectors"),
        }
    }
    Ok(out)
}

/// Writes one output group's spikes for timestep `t`, dropping padded lanes
/// and pooling if configured.
fn emit_group(
    layer: &Layer,
    p: usize,
    p_o: usize,
    t: usize,
    spikes: &[bool],
    out: &mut SpikeTensor,
) -> Result<()> {
    let lanes = p.min(layer.c_out - p_o * p);
    let (h, w) = match layer.kind {
        LayerKind::FullyConnected => (1, 1),
        _ => (layer.h, layer.w),
    };
    for y in 0..h {
        for x in 0..w {
            for lane in 0..lanes {
                if !spikes[(y * w + x) * p + lane] {
                    continue;
                }
                let c = p_o * p + lane;
                if layer.pool {
                    out.set(t, c, y / 2, x / 2, true);
                } else {
                    out.set(t, c, y, x, true);
                }
            }
        }
    }
    Ok(())
}
