use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use firefly_core::golden::golden_network;
use firefly_core::network::{
    parse_topology, random_network, topology_network, ClassHead, RandomNetSpec,
};
use firefly_core::perf::{self, LayerReport, PerfConfig, PerfReport};
use firefly_core::quantizer::{load_model, save_model};
use firefly_core::scheduler::{argmax, plan_layer, LayerConfig, Simulator};
use firefly_core::spikes::{gen_random_spikes, read_spikes, write_spikes};
use firefly_core::{ArrayDims, Error, Network, Shape, SpikeTensor};

/// Simulator, golden model and performance model for a DSP48-based SNN
/// accelerator.
///
/// Exit codes: 0 success or equal, 1 mismatch, 2 usage, 3 I/O or parse,
/// 4 configuration.
#[derive(Parser)]
#[command(name = "firefly", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the architectural simulator.
    Run(RunArgs),
    /// Run the golden reference model.
    Golden(GoldenArgs),
    /// Compare two spike files bit for bit.
    Compare { a: PathBuf, b: PathBuf },
    /// Peak and modeled throughput for the standard array configurations.
    Bench(BenchArgs),
    /// Write the command stream and, optionally, per-cycle weight-pipeline
    /// and membrane traces.
    DumpTrace(TraceArgs),
    /// Generate a random model and input spikes.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Memory {
    Ideal,
    Stream,
}

#[derive(Args)]
struct HwArgs {
    /// Array geometry, MxN.
    #[arg(long, default_value = "16x144")]
    array: String,
    #[arg(long, default_value_t = 300.0)]
    freq_mhz: f64,
    #[arg(long, value_enum, default_value = "stream")]
    memory: Memory,
}

impl HwArgs {
    fn perf(&self) -> Result<PerfConfig, Error> {
        perf_config(ArrayDims::parse(&self.array)?, self.freq_mhz, self.memory)
    }
}

fn perf_config(dims: ArrayDims, freq_mhz: f64, memory: Memory) -> Result<PerfConfig, Error> {
    let f = freq_mhz * 1e6;
    let cfg = match memory {
        Memory::Ideal => PerfConfig::ideal(dims, f),
        Memory::Stream => PerfConfig::streaming(dims, f),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Output spike file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hw: HwArgs,
    /// Class scores as JSON.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Performance report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-cycle weight-pipeline trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct GoldenArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 300.0)]
    freq_mhz: f64,
    /// Network topology, e.g. 28x28-16c3-64c3-p2-10.
    #[arg(long, default_value = perf::SCNN5)]
    topology: String,
    #[arg(long, default_value_t = 1)]
    in_channels: usize,
    #[arg(long, default_value_t = 4)]
    timesteps: usize,
    /// Array geometries to sweep.
    #[arg(long, value_delimiter = ',', default_value = "16x144,32x288")]
    array: Vec<String>,
    /// All reports as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Command stream dump, one descriptor per line.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hw: HwArgs,
    /// Per-cycle weight-pipeline trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Binary membrane snapshots after every timestep.
    #[arg(long)]
    vmem: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for model.json, its weight files and input.spk.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed topology; a random small network otherwise.
    #[arg(long)]
    topology: Option<String>,
    #[arg(long, default_value_t = 2)]
    in_channels: usize,
    #[arg(long, default_value_t = 4)]
    timesteps: usize,
    #[arg(long, default_value_t = 0.3)]
    density: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Golden(a) => cmd_golden(&a),
        Cmd::Compare { a, b } => cmd_compare(&a, &b),
        Cmd::Bench(a) => cmd_bench(&a),
        Cmd::DumpTrace(a) => cmd_dump_trace(&a),
        Cmd::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Quantization(_) => 4,
        Error::Io(_)
        | Error::Json(_)
        | Error::Model(_)
        | Error::SpikeFormat(_)
        | Error::Stream(_) => 3,
    }
}

fn load_inputs(model: &Path, input: &Path) -> Result<(Network, SpikeTensor), Error> {
    let net = load_model(model)?;
    let x = read_spikes(input)?;
    net.check_input(x.dims())?;
    Ok((net, x))
}

fn write_scores(path: Option<&Path>, scores: &[i64]) -> Result<(), Error> {
    let predicted = argmax(scores);
    println!("scores: {scores:?}");
    match predicted {
        Some(k) => println!("predicted class: {k}"),
        None => println!("predicted class: none"),
    }
    if let Some(path) = path {
        let doc = serde_json::json!({ "scores": scores, "predicted": predicted });
        fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<u8, Error> {
    let perf = a.hw.perf()?;
    let (net, x) = load_inputs(&a.model, &a.input)?;
    let mut sim = Simulator::new(perf.clone())?;
    if a.trace.is_some() {
        sim.enable_trace();
    }
    let run = sim.run_network(&net, &x)?;
    write_spikes(&a.out, &run.output)?;
    if let (Some(path), Some(trace)) = (&a.trace, sim.take_trace()) {
        fs::write(path, trace)?;
    }
    write_scores(a.scores.as_deref(), &run.scores)?;

    let t = x.dims().t;
    let layers = net
        .layers
        .iter()
        .zip(&run.layers)
        .enumerate()
        .map(|(index, (l, r))| LayerReport {
            index,
            kind: l.kind,
            cycles: r.cycles,
            sops: perf::layer_sops(&LayerConfig::for_layer(l, t, perf.dims.m)),
        })
        .collect();
    let report = PerfReport::new(&perf, layers);
    print!("{}", report.to_text());
    let overflows: u64 = run.layers.iter().map(|l| l.overflows).sum();
    if overflows > 0 {
        println!("membrane accumulator wrapped {overflows} times");
    }
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(0)
}

fn cmd_golden(a: &GoldenArgs) -> Result<u8, Error> {
    let (net, x) = load_inputs(&a.model, &a.input)?;
    let run = golden_network(&net, &x)?;
    write_spikes(&a.out, &run.output)?;
    write_scores(a.scores.as_deref(), &run.scores)?;
    println!("synaptic operations: {}", run.sops);
    Ok(0)
}

fn cmd_compare(a: &Path, b: &Path) -> Result<u8, Error> {
    let (x, y) = (read_spikes(a)?, read_spikes(b)?);
    if x.dims() != y.dims() {
        println!("dimension mismatch: {} vs {}", x.dims(), y.dims());
        return Ok(1);
    }
    match x.first_difference(&y) {
        None => {
            println!("identical ({} spikes)", x.count_ones());
            Ok(0)
        }
        Some((t, c, yy, xx)) => {
            let differing = (0..x.dims().len())
                .filter(|&i| x.get_linear(i) != y.get_linear(i))
                .count();
            println!("first divergence at t={t} c={c} y={yy} x={xx} ({differing} bits differ)");
            Ok(1)
        }
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<u8, Error> {
    let topology = parse_topology(&a.topology, a.in_channels)?;
    println!("topology {} (T = {})", a.topology, a.timesteps);
    println!(
        "{:>8} {:>6} {:>6} {:>12} {:>7} {:>12} {:>14} {:>11}",
        "array",
        "DSPs",
        "MHz",
        "peak GSOP/s",
        "memory",
        "latency ms",
        "actual GSOP/s",
        "utilization"
    );
    let mut reports = Vec::new();
    for spec in &a.array {
        let dims = ArrayDims::parse(spec)?;
        let cfgs = perf::topology_configs(&topology, a.timesteps, dims.m);
        for (name, memory) in [("ideal", Memory::Ideal), ("stream", Memory::Stream)] {
            let perf = perf_config(dims, a.freq_mhz, memory)?;
            let r = PerfReport::for_layers(&cfgs, &perf)?;
            println!(
                "{:>8} {:>6} {:>6} {:>12.1} {:>7} {:>12.4} {:>14.1} {:>11.3}",
                r.array,
                dims.m * dims.n / 8,
                r.freq_mhz,
                r.peak_gsops,
                name,
                r.latency_s * 1e3,
                r.actual_gsops,
                r.utilization
            );
            reports.push(r);
        }
    }
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_string_pretty(&reports)? + "\n")?;
    }
    Ok(0)
}

fn cmd_dump_trace(a: &TraceArgs) -> Result<u8, Error> {
    let perf = a.hw.perf()?;
    let (net, x) = load_inputs(&a.model, &a.input)?;
    let mut dump = String::new();
    for (i, l) in net.layers.iter().enumerate() {
        let plan = plan_layer(&LayerConfig::for_layer(l, x.dims().t, perf.dims.m))?;
        dump.push_str(&format!(
            "# layer {i} {:?} ({} descriptors)\n",
            l.kind,
            plan.len()
        ));
        dump.push_str(&plan.to_string());
    }
    fs::write(&a.out, dump)?;
    if a.trace.is_some() || a.vmem.is_some() {
        let mut sim = Simulator::new(perf)?;
        if a.trace.is_some() {
            sim.enable_trace();
        }
        if a.vmem.is_some() {
            sim.enable_snapshots();
        }
        sim.run_network(&net, &x)?;
        if let (Some(path), Some(trace)) = (&a.trace, sim.take_trace()) {
            fs::write(path, trace)?;
        }
        if let (Some(path), Some(snaps)) = (&a.vmem, sim.take_snapshots()) {
            fs::write(path, snaps)?;
        }
    }
    Ok(0)
}

fn cmd_synth(a: &SynthArgs) -> Result<u8, Error> {
    if !(0.0..=1.0).contains(&a.density) || a.timesteps == 0 {
        return Err(Error::Config(
            "density must be in [0, 1] and timesteps positive".into(),
        ));
    }
    let net = match &a.topology {
        Some(t) => {
            let layers = parse_topology(t, a.in_channels)?;
            let first = layers[0];
            topology_network(
                Shape::new(a.in_channels, first.h, first.w),
                &layers,
                a.seed,
                ClassHead::SpikeCount,
            )?
        }
        None => random_network(a.seed, &RandomNetSpec::default()),
    };
    fs::create_dir_all(&a.out)?;
    let model = a.out.join("model.json");
    save_model(&model, &net)?;
    let x = gen_random_spikes(net.input.with_timesteps(a.timesteps), a.density, a.seed)?;
    let input = a.out.join("input.spk");
    write_spikes(&input, &x)?;
    println!("wrote {} and {}", model.display(), input.display());
    Ok(0)
}
