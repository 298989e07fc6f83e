//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use firefly_core::arith::{Acc24, Int8Weight, Threshold18};
use firefly_core::dsp::pe_forward;
use firefly_core::golden::golden_network;
use firefly_core::network::{random_network, LayerKind, Network, RandomNetSpec};
use firefly_core::neuron::{Compare, NeuronConfig, UpdateEngine};
use firefly_core::perf::{self, peak_gsops, PerfConfig};
use firefly_core::quantizer::{quantize_layer_with_scale, FloatLayer};
use firefly_core::scheduler::Simulator;
use firefly_core::spikegen::lb_stream;
use firefly_core::spikes::gen_random_spikes;
use firefly_core::systolic::PartialSumRow;
use firefly_core::weight_hier::{reuse_reference, PartialReuseFifo};
use firefly_core::ArrayDims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("peak throughput", peak_throughput),
        (
            "simulator/golden bit-exact equivalence",
            sim_golden_equivalence,
        ),
        ("DSP cascade never overflows 12 bits", dsp_no_overflow),
        ("Partial Reuse FIFO conformance", fifo_conformance),
        ("line buffer conformance", line_buffer_conformance),
        ("neuron dynamics", neuron_dynamics),
        ("SCNN-5 ideal latency bound", latency_bound),
        (
            "IF spike trains invariant to x2 quantization scale",
            scale_invariance,
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn peak_throughput() -> Outcome {
    let small = peak_gsops(300e6, 16, 144);
    let large = peak_gsops(300e6, 32, 288);
    check(small == 1382.4 && large == 5529.6, || {
        format!("got {small} and {large}")
    })?;
    Ok(format!(
        "16x144 -> {small} GSOP/s, 32x288 -> {large} GSOP/s at 300 MHz"
    ))
}

fn sim_golden_equivalence() -> Outcome {
    const NETS: u64 = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut active, mut spikes, mut layers) = (0, 0, 0);
    for seed in 0..NETS {
        let net = random_network(seed, &RandomNetSpec::default());
        let t = rng.gen_range(1..=4);
        let density: f64 = rng.gen();
        let x = gen_random_spikes(net.input.with_timesteps(t), density, seed ^ 0x5eed)
            .map_err(|e| e.to_string())?;
        let perf = if seed % 2 == 0 {
            PerfConfig::ideal(ArrayDims::default(), 300e6)
        } else {
            PerfConfig::streaming(ArrayDims::default(), 300e6)
        };
        let sim = Simulator::new(perf)
            .and_then(|mut s| s.run_network(&net, &x))
            .map_err(|e| format!("net {seed}: simulator error {e}"))?;
        let gold = golden_network(&net, &x).map_err(|e| format!("net {seed}: golden error {e}"))?;
        if let Some((t, c, y, x)) = sim.output.first_difference(&gold.output) {
            return Err(format!(
                "net {seed}: first divergence at t={t} c={c} y={y} x={x}"
            ));
        }
        check(sim.scores == gold.scores, || {
            format!("net {seed}: class scores differ")
        })?;
        for (a, b) in sim.layers.iter().zip(&gold.layers) {
            check(a.output == b.output, || {
                format!("net {seed}: intermediate layer differs")
            })?;
        }
        layers += net.layers.len();
        spikes += sim.output.count_ones();
        active += usize::from(sim.output.count_ones() > 0);
    }
    Ok(format!(
        "{NETS} networks ({layers} layers) identical; {active} with output activity, {spikes} output spikes"
    ))
}

fn dsp_no_overflow() -> Outcome {
    let check_case = |spikes: &[bool], w: &[[Int8Weight; 4]]| -> Result<(), String> {
        let out = pe_forward(spikes, w).map_err(|e| e.to_string())?;
        for (lane, v) in out.iter().enumerate() {
            let v = i32::from(v.value());
            let exact: i32 = (0..16)
                .filter(|&i| spikes[i])
                .map(|i| i32::from(w[i][lane].0))
                .sum();
            check((-2048..=2047).contains(&v) && v == exact, || {
                format!("lane {lane}: got {v}, exact {exact}")
            })?;
        }
        Ok(())
    };
    let mut spike_patterns: Vec<Vec<bool>> = vec![vec![true; 16], vec![false; 16]];
    spike_patterns.extend((0..16).map(|k| (0..16).map(|i| i == k).collect()));
    spike_patterns.push((0..16).map(|i| i % 2 == 0).collect());
    spike_patterns.push((0..16).map(|i| i % 2 == 1).collect());
    let mut corners = 0;
    for spikes in &spike_patterns {
        // Every assignment of {-128, 127} to the four lanes, uniform over rows,
        // plus row-alternating extremes.
        for mask in 0..16u32 {
            let row: [Int8Weight; 4] =
                std::array::from_fn(|l| Int8Weight(if mask >> l & 1 == 1 { 127 } else { -128 }));
            check_case(spikes, &[row; 16])?;
            let alt: Vec<[Int8Weight; 4]> = (0..16)
                .map(|i| {
                    if i % 2 == 0 {
                        row
                    } else {
                        row.map(|w| Int8Weight(!w.0))
                    }
                })
                .collect();
            check_case(spikes, &alt)?;
            corners += 2;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    const RANDOM: usize = 100_000;
    for _ in 0..RANDOM {
        let spikes: Vec<bool> = (0..16).map(|_| rng.gen()).collect();
        let w: Vec<[Int8Weight; 4]> = (0..16)
            .map(|_| std::array::from_fn(|_| Int8Weight(rng.gen())))
            .collect();
        check_case(&spikes, &w)?;
    }
    Ok(format!(
        "{corners} corner cases and {RANDOM} random cases in [-2048, 2047] and exact"
    ))
}

fn fifo_conformance() -> Outcome {
    const TRACES: u64 = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rejected_pushes = 0u64;
    for trace in 0..TRACES {
        let depth = rng.gen_range(1..=48);
        let l_block = rng.gen_range(1..=depth);
        let t_reuse = rng.gen_range(1..=5);
        let blocks = rng.gen_range(1..=6);
        let words: Vec<u32> = (0..(l_block * blocks) as u32).collect();
        let want = reuse_reference(&words, l_block, t_reuse);
        let mut fifo = PartialReuseFifo::new(depth, l_block, t_reuse).map_err(|e| e.to_string())?;
        let push_bias: f64 = rng.gen_range(0.1..0.9);
        let (mut next, mut got) = (0usize, Vec::with_capacity(want.len()));
        let mut idle = 0;
        while got.len() < want.len() {
            let mut progressed = false;
            if next < words.len() && rng.gen_bool(push_bias) {
                if fifo.push(words[next]) {
                    // Words of a block still being replayed must survive until
                    // that block's last replay has been read.
                    let retired = (got.len() / (l_block * t_reuse)) * l_block;
                    check(next < retired + depth, || {
                        format!("trace {trace}: word {next} accepted over protected data (retired {retired}, depth {depth})")
                    })?;
                    next += 1;
                    progressed = true;
                } else {
                    rejected_pushes += 1;
                }
            } else if let Some(w) = fifo.pop() {
                got.push(w);
                progressed = true;
            }
            idle = if progressed { 0 } else { idle + 1 };
            check(idle < 1000, || {
                format!("trace {trace}: deadlock after {} pops", got.len())
            })?;
        }
        check(got == want, || {
            format!("trace {trace}: popped sequence differs (D={depth} L={l_block} T={t_reuse})")
        })?;
        check(fifo.pop().is_none(), || {
            format!("trace {trace}: extra data after the stream")
        })?;
    }
    Ok(format!("{TRACES} random traces match the replay reference; {rejected_pushes} pushes correctly refused"))
}

fn line_buffer_conformance() -> Outcome {
    const MAPS: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..MAPS {
        let (h, w, p) = if i == 0 {
            (16, 16, 32)
        } else {
            (
                rng.gen_range(1..=16),
                rng.gen_range(1..=16),
                rng.gen_range(1..=32),
            )
        };
        let density: f64 = rng.gen();
        let map: Vec<bool> = (0..h * w * p).map(|_| rng.gen_bool(density)).collect();
        let got = lb_stream(&map, h, w, p).map_err(|e| e.to_string())?;
        let mut want = Vec::with_capacity(h * w);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut v = Vec::with_capacity(9 * p);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (yy, xx) = (y + dy, x + dx);
                        let inside = (0..h as isize).contains(&yy) && (0..w as isize).contains(&xx);
                        for c in 0..p {
                            v.push(inside && map[(yy as usize * w + xx as usize) * p + c]);
                        }
                    }
                }
                want.push(v);
            }
        }
        check(got == want, || {
            format!("map {i} ({h}x{w}x{p}) differs from the zero-padded oracle")
        })?;
    }
    Ok(format!("{MAPS} random maps up to 16x16x32 match"))
}

fn neuron_dynamics() -> Outcome {
    const TRACES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let wrap = |v: i64| (v << 40) >> 40;
    let mut boundary_hits = 0;
    for trace in 0..TRACES {
        let timesteps = rng.gen_range(1..=8);
        let c_i = rng.gen_range(1..=4);
        let leak = rng.gen_bool(0.5).then(|| rng.gen_range(1..=8u8));
        let bias = rng.gen_bool(0.3).then(|| rng.gen_range(-2000..=2000i64));
        let compare = if rng.gen_bool(0.9) {
            Compare::GreaterEqual
        } else {
            Compare::Greater
        };
        let currents: Vec<Vec<i64>> = (0..timesteps)
            .map(|_| (0..c_i).map(|_| rng.gen_range(-4000..=6000)).collect())
            .collect();

        let oracle = |v_th: i64| {
            let mut v = 0i64;
            let mut spikes = Vec::new();
            let mut leaked_values = Vec::new();
            for (t, tiles) in currents.iter().enumerate() {
                v = wrap(v + bias.unwrap_or(0));
                for &i in tiles {
                    v = wrap(v + i);
                }
                let u = match leak {
                    Some(k) => wrap(v - (v >> k)),
                    None => v,
                };
                leaked_values.push(u);
                let fire = match compare {
                    Compare::GreaterEqual => u >= v_th,
                    Compare::Greater => u > v_th,
                };
                spikes.push(fire);
                v = if t + 1 == timesteps || fire { 0 } else { u };
            }
            (spikes, leaked_values)
        };

        // Half the traces put the threshold exactly on a value the neuron
        // reaches, so the comparison boundary is exercised.
        let mut v_th = rng.gen_range(-500..=20_000i64);
        if trace % 2 == 0 {
            let (_, reached) = oracle(i64::from(Threshold18::MAX));
            v_th =
                reached[rng.gen_range(0..reached.len())].clamp(-1000, i64::from(Threshold18::MAX));
        }
        let (want, leaked) = oracle(v_th);
        boundary_hits += leaked.iter().filter(|&&u| u == v_th).count();

        let cfg = NeuronConfig {
            v_th: Threshold18::new(v_th as i32).map_err(|e| e.to_string())?,
            leak_shift: leak,
            bias: bias.map(|b| vec![Acc24::new(b as i32).unwrap()]),
            compare,
        };
        let mut engine = UpdateEngine::new(cfg, 1, 1).map_err(|e| e.to_string())?;
        let mut got = Vec::new();
        for (t, tiles) in currents.iter().enumerate() {
            for (p_i, &i) in tiles.iter().enumerate() {
                engine.begin_tile(t, timesteps, p_i, c_i);
                let row = PartialSumRow {
                    values: vec![Acc24::new(i as i32).unwrap()],
                };
                if let Some(s) = engine.process(0, &row) {
                    got.push(s[0]);
                }
            }
        }
        check(got == want, || {
            format!("trace {trace}: spikes {got:?}, oracle {want:?}")
        })?;
        check(engine.buffer().is_all_zero(), || {
            format!("trace {trace}: membrane not cleared")
        })?;
    }
    check(boundary_hits > 0, || "no trace reached v = v_th".into())?;
    Ok(format!(
        "{TRACES} traces match; {boundary_hits} steps landed exactly on the threshold"
    ))
}

fn latency_bound() -> Outcome {
    let layers = perf::parse_topology(perf::SCNN5, 1).map_err(|e| e.to_string())?;
    let cfgs = perf::topology_configs(&layers, 4, 16);
    let perf = PerfConfig::ideal(ArrayDims::default(), 300e6);
    let report = perf::PerfReport::for_layers(&cfgs, &perf).map_err(|e| e.to_string())?;
    let ms = report.latency_s * 1e3;
    check(ms > 0.25 && ms <= 0.491, || {
        format!("modeled latency {ms:.4} ms outside (0.25, 0.491]")
    })?;
    Ok(format!(
        "{ms:.4} ms over {} cycles, in (0.25, 0.491] ms",
        report.total_cycles
    ))
}

/// Float layers whose weights and thresholds are exact binary fractions,
/// so quantizing at scale `s` and `2s` involves no rounding.
fn as_float(net: &Network, unit: f64) -> Vec<FloatLayer> {
    net.layers
        .iter()
        .map(|l| FloatLayer {
            kind: l.kind,
            c_in: l.c_in,
            c_out: l.c_out,
            h: l.h,
            w: l.w,
            weights: l.weights.iter().map(|&w| f64::from(w) / unit).collect(),
            bias: l
                .bias
                .as_ref()
                .map(|b| b.iter().map(|v| f64::from(v.value()) / unit).collect()),
            bn: None,
            v_th: f64::from(l.v_th.value()) / unit,
            lambda: None,
            pool: l.pool,
        })
        .collect()
}

fn scale_invariance() -> Outcome {
    const NETS: u64 = 100;
    let spec = RandomNetSpec {
        weight_mag: 64,
        allow_leak: false,
        ..RandomNetSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut total_spikes = 0;
    for seed in 0..NETS {
        let base = random_network(10_000 + seed, &spec);
        let floats = as_float(&base, 64.0);
        let quantize = |s: f64| -> Result<Network, String> {
            let layers = floats
                .iter()
                .zip(&base.layers)
                .map(|(f, orig)| match f.kind {
                    LayerKind::Maxpool2 => Ok(orig.clone()),
                    _ => quantize_layer_with_scale(f, s)
                        .map(|q| q.layer)
                        .map_err(|e| e.to_string()),
                })
                .collect::<Result<Vec<_>, String>>()?;
            Ok(Network {
                layers,
                ..base.clone()
            })
        };
        let (a, b) = (quantize(64.0)?, quantize(128.0)?);
        check(a == base, || {
            format!("net {seed}: quantization at the native scale is not exact")
        })?;
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            check(
                la.weights
                    .iter()
                    .zip(&lb.weights)
                    .all(|(x, y)| 2 * i16::from(*x) == i16::from(*y)),
                || format!("net {seed}: doubled scale clamped a weight"),
            )?;
        }
        let x = gen_random_spikes(
            base.input.with_timesteps(rng.gen_range(1..=4)),
            rng.gen(),
            seed,
        )
        .map_err(|e| e.to_string())?;
        let run = |n: &Network| {
            Simulator::new(PerfConfig::ideal(ArrayDims::default(), 300e6))
                .and_then(|mut s| s.run_network(n, &x))
                .map_err(|e| e.to_string())
        };
        let (ra, rb) = (run(&a)?, run(&b)?);
        check(ra.output == rb.output, || {
            format!("net {seed}: spike train changed under x2 scale")
        })?;
        check(ra.predicted_class() == rb.predicted_class(), || {
            format!("net {seed}: argmax changed")
        })?;
        let ga = golden_network(&a, &x).map_err(|e| e.to_string())?;
        check(ga.output == ra.output, || {
            format!("net {seed}: golden disagrees")
        })?;
        total_spikes += ra.output.count_ones();
    }
    Ok(format!(
        "{NETS} IF networks unchanged at s and 2s ({total_spikes} output spikes compared)"
    ))
}
