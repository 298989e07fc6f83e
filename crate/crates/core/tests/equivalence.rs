use firefly_core::golden::golden_network;
use firefly_core::network::{random_network, LayerKind, RandomNetSpec};
use firefly_core::perf::{self, MemoryModel, PerfConfig};
use firefly_core::scheduler::{plan_layer, Command, LayerConfig, Simulator};
use firefly_core::spikes::gen_random_spikes;
use firefly_core::ArrayDims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn array() -> ArrayDims {
    ArrayDims::default()
}

#[test]
fn simulator_matches_golden_on_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..60 {
        let net = random_network(seed, &RandomNetSpec::default());
        let dims = net.input.with_timesteps(rng.gen_range(1..=4));
        let x = gen_random_spikes(dims, rng.gen(), seed).unwrap();
        let perf = if seed % 2 == 0 {
            PerfConfig::ideal(array(), 300e6)
        } else {
            PerfConfig::streaming(array(), 300e6)
        };
        let sim = Simulator::new(perf).unwrap().run_network(&net, &x).unwrap();
        let gold = golden_network(&net, &x).unwrap();
        assert_eq!(
            sim.output.first_difference(&gold.output),
            None,
            "seed {seed}"
        );
        assert_eq!(sim.scores, gold.scores, "seed {seed}");
    }
}

#[test]
fn output_is_invariant_to_fifo_depth_and_latency() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 100..130 {
        let net = random_network(seed, &RandomNetSpec::default());
        let x = gen_random_spikes(net.input.with_timesteps(3), 0.4, seed).unwrap();
        let reference = Simulator::new(PerfConfig::ideal(array(), 1e8))
            .unwrap()
            .run_network(&net, &x)
            .unwrap();
        let block = firefly_core::scheduler::network_fifo_depth(&net, 3, 16);
        for _ in 0..3 {
            let mut perf = PerfConfig::streaming(array(), 1e8);
            perf.memory = MemoryModel::Stream {
                weights_per_cycle: [1, 4, 12, 36, 64][rng.gen_range(0..5)],
                latency: rng.gen_range(0..200),
            };
            perf.fifo_depth = Some(block + rng.gen_range(0..3 * block));
            let run = Simulator::new(perf).unwrap().run_network(&net, &x).unwrap();
            assert_eq!(run.output, reference.output, "seed {seed}");
            assert_eq!(run.scores, reference.scores, "seed {seed}");
            assert!(run.cycles.total() >= reference.cycles.total());
        }
    }
}

#[test]
fn fifo_smaller_than_a_block_is_a_config_error() {
    let net = random_network(5, &RandomNetSpec::default());
    let x = gen_random_spikes(net.input.with_timesteps(2), 0.5, 1).unwrap();
    let mut perf = PerfConfig::streaming(array(), 1e8);
    perf.fifo_depth = Some(1);
    let needs_more = firefly_core::scheduler::network_fifo_depth(&net, 2, 16) > 1;
    let res = Simulator::new(perf).unwrap().run_network(&net, &x);
    assert_eq!(res.is_err(), needs_more);
}

#[test]
fn command_counts_match_loop_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let p = [4, 8, 16][rng.gen_range(0..3)];
        let cfg = LayerConfig::new(
            LayerKind::Conv3x3,
            rng.gen_range(1..100),
            rng.gen_range(1..100),
            rng.gen_range(1..20),
            rng.gen_range(1..20),
            rng.gen_range(1..6),
            p,
        );
        let plan = plan_layer(&cfg).unwrap();
        let (c_i, c_o) = (cfg.c_in.div_ceil(p), cfg.c_out.div_ceil(p));
        assert_eq!(
            plan.processed_positions(),
            (c_o * cfg.t * c_i * cfg.h * cfg.w) as u64
        );
        assert_eq!(
            plan.count(|c| matches!(c, Command::LoadWeights { .. })),
            c_o
        );
        assert_eq!(
            plan.count(|c| matches!(c, Command::Threshold { .. })),
            c_o * (cfg.t - 1)
        );
        assert_eq!(plan.count(|c| matches!(c, Command::Clear { .. })), c_o);
        // Every marker directly follows the last input tile of its timestep.
        for w in plan.commands.windows(2) {
            if matches!(w[1], Command::Threshold { .. } | Command::Clear { .. }) {
                assert!(matches!(w[0], Command::ProcessTile { p_i, .. } if p_i + 1 == c_i));
            }
        }
    }
}

#[test]
fn golden_sop_count_matches_perf_model() {
    for seed in 0..40 {
        let net = random_network(seed, &RandomNetSpec::default());
        let x = gen_random_spikes(net.input.with_timesteps(2), 0.3, seed).unwrap();
        let gold = golden_network(&net, &x).unwrap();
        for (layer, out) in net.layers.iter().zip(&gold.layers) {
            let cfg = LayerConfig::for_layer(layer, 2, 16);
            assert_eq!(out.sops, perf::layer_sops(&cfg), "seed {seed}");
        }
    }
}

#[test]
fn ideal_latency_bounds_streaming_latency() {
    let cfgs = perf::topology_configs(&perf::parse_topology(perf::SCNN5, 1).unwrap(), 4, 16);
    let ideal =
        perf::network_cycles(&cfgs, &PerfConfig::ideal(ArrayDims::default(), 300e6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..4 {
        let mut p = PerfConfig::streaming(ArrayDims::default(), 300e6);
        p.command_overhead = rng.gen_range(0..20);
        p.memory = MemoryModel::Stream {
            weights_per_cycle: [8, 16, 48, 144][rng.gen_range(0..4)],
            latency: rng.gen_range(0..100),
        };
        let streamed = perf::network_cycles(&cfgs, &p).unwrap();
        for (a, b) in ideal.iter().zip(&streamed) {
            assert!(a.total() <= b.total());
            assert_eq!(a.compute, b.compute);
        }
    }
}

#[test]
fn default_streaming_scnn5_latency_stays_near_ideal() {
    let cfgs = perf::topology_configs(&perf::parse_topology(perf::SCNN5, 1).unwrap(), 4, 16);
    let total = |p: &PerfConfig| -> u64 {
        perf::network_cycles(&cfgs, p)
            .unwrap()
            .iter()
            .map(|c| c.total())
            .sum()
    };
    let ideal = total(&PerfConfig::ideal(array(), 300e6)) as f64 / 300e6;
    let streamed = total(&PerfConfig::streaming(array(), 300e6)) as f64 / 300e6;
    assert!(
        ideal <= streamed && streamed <= 0.491e-3,
        "ideal {ideal} streamed {streamed}"
    );
}

#[test]
fn nonnegative_weights_and_silent_input_stay_silent() {
    for seed in 0..20 {
        let mut net = random_network(
            seed,
            &RandomNetSpec {
                allow_bias: false,
                ..RandomNetSpec::default()
            },
        );
        for l in &mut net.layers {
            l.weights
                .iter_mut()
                .for_each(|w| *w = w.unsigned_abs().min(127) as i8);
            if l.v_th.value() <= 0 {
                l.v_th = firefly_core::arith::Threshold18::new(1).unwrap();
            }
        }
        let x = gen_random_spikes(net.input.with_timesteps(2), 0.0, seed).unwrap();
        let run = Simulator::new(PerfConfig::ideal(ArrayDims::default(), 1e8))
            .unwrap()
            .run_network(&net, &x)
            .unwrap();
        assert_eq!(run.output.count_ones(), 0, "seed {seed}");
    }
}
