//! Quantized network description shared by the simulator, the golden model
//! and the model file reader.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arith::{Acc24, Threshold18};
use crate::error::{Error, Result};
use crate::neuron::{check_leak_shift, Compare};
use crate::spikes::SpikeDims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv3x3,
    FullyConnected,
    Maxpool2,
}

/// How the final layer's activity becomes class scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassHead {
    /// Spikes per output channel summed over timesteps and positions.
    #[default]
    SpikeCount,
    /// Leaked membrane of the last timestep (before clearing), summed over
    /// positions.
    FinalVmem,
}

/// Per-timestep spatial shape `C×H×W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn features(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn with_timesteps(&self, t: usize) -> SpikeDims {
        SpikeDims::new(t, self.c, self.h, self.w)
    }
}

/// One layer.
///
/// * `Conv3x3`: input `c_in×h×w`, output `c_out×h×w` (halved if `pool`).
///   Weights `[c_out][c_in][3][3]`.
/// * `FullyConnected`: input is any tensor with `c_in` features per
///   timestep, flattened in storage order (pixel-major, channel-fastest);
///   output `c_out×1×1`. Weights `[c_out][c_in]`; `h = w = 1`.
/// * `Maxpool2`: standalone 2×2 pooling, `c_in = c_out`, no weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub weights: Vec<i8>,
    pub bias: Option<Vec<Acc24>>,
    pub v_th: Threshold18,
    pub leak_shift: Option<u8>,
    pub pool: bool,
    pub compare: Compare,
}

impl Layer {
    pub fn taps(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 => 9,
            LayerKind::FullyConnected => 1,
            LayerKind::Maxpool2 => 0,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.taps()
    }

    /// `W[o][i][kh][kw]`; FC layers ignore `kh`/`kw`.
    #[inline]
    pub fn weight(&self, o: usize, i: usize, kh: usize, kw: usize) -> i8 {
        match self.kind {
            LayerKind::Conv3x3 => self.weights[((o * self.c_in + i) * 3 + kh) * 3 + kw],
            _ => self.weights[o * self.c_in + i],
        }
    }

    pub fn input_shape(&self) -> Shape {
        match self.kind {
            LayerKind::FullyConnected => Shape::new(self.c_in, 1, 1),
            _ => Shape::new(self.c_in, self.h, self.w),
        }
    }

    pub fn output_shape(&self) -> Shape {
        match self.kind {
            LayerKind::Conv3x3 if self.pool => Shape::new(self.c_out, self.h / 2, self.w / 2),
            LayerKind::Conv3x3 => Shape::new(self.c_out, self.h, self.w),
            LayerKind::FullyConnected => Shape::new(self.c_out, 1, 1),
            LayerKind::Maxpool2 => Shape::new(self.c_out, self.h / 2, self.w / 2),
        }
    }

    /// Whether an input tensor with this per-timestep shape feeds the layer.
    pub fn accepts(&self, s: Shape) -> bool {
        match self.kind {
            LayerKind::FullyConnected => s.features() == self.c_in,
            _ => s == self.input_shape(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Config(format!(
                "layer {:?} has an empty dimension",
                self.kind
            )));
        }
        if self.weights.len() != self.weight_len() {
            return Err(Error::Shape(format!(
                "{:?} layer expects {} weights, got {}",
                self.kind,
                self.weight_len(),
                self.weights.len()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.c_out {
                return Err(Error::Shape(format!(
                    "bias has {} entries for {} channels",
                    b.len(),
                    self.c_out
                )));
            }
        }
        check_leak_shift(self.leak_shift)?;
        match self.kind {
            LayerKind::FullyConnected if (self.h, self.w) != (1, 1) || self.pool => Err(
                Error::Config("fully connected layers have h = w = 1 and no pooling".into()),
            ),
            LayerKind::Maxpool2 if self.c_in != self.c_out => Err(Error::Config(
                "standalone pooling keeps the channel count".into(),
            )),
            LayerKind::Maxpool2 | LayerKind::Conv3x3
                if (self.kind == LayerKind::Maxpool2 || self.pool)
                    && (!self.h.is_multiple_of(2) || !self.w.is_multiple_of(2)) =>
            {
                Err(Error::Config(format!(
                    "2x2 pooling needs even dimensions, got {}x{}",
                    self.h, self.w
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    pub input: Shape,
    pub layers: Vec<Layer>,
    pub head: ClassHead,
}

impl Network {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        let mut shape = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if !layer.accepts(shape) {
                return Err(Error::Shape(format!(
                    "layer {i} ({:?}) cannot consume a {}x{}x{} input",
                    layer.kind, shape.c, shape.h, shape.w
                )));
            }
            shape = layer.output_shape();
        }
        Ok(())
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map_or(self.input, Layer::output_shape)
    }

    pub fn check_input(&self, dims: SpikeDims) -> Result<()> {
        if Shape::new(dims.c, dims.h, dims.w) != self.input || dims.t == 0 {
            return Err(Error::Shape(format!(
                "input spikes {dims} do not match the model input {}x{}x{}",
                self.input.c, self.input.h, self.input.w
            )));
        }
        Ok(())
    }
}

/// Bounds for [`random_network`].
#[derive(Clone, Copy, Debug)]
pub struct RandomNetSpec {
    pub max_layers: usize,
    pub max_channels: usize,
    pub max_hw: usize,
    /// Draw weights from `[-weight_mag, weight_mag - 1]`.
    pub weight_mag: i16,
    pub allow_leak: bool,
    pub allow_bias: bool,
}

impl Default for RandomNetSpec {
    fn default() -> Self {
        Self {
            max_layers: 4,
            max_channels: 32,
            max_hw: 8,
            weight_mag: 128,
            allow_leak: true,
            allow_bias: true,
        }
    }
}

/// A random but valid network: conv layers (optionally pooled), standalone
/// pooling and FC layers in any legal order.
pub fn random_network(seed: u64, spec: &RandomNetSpec) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = Shape::new(
        rng.gen_range(1..=spec.max_channels),
        rng.gen_range(1..=spec.max_hw),
        rng.gen_range(1..=spec.max_hw),
    );
    let input = shape;
    let n_layers = rng.gen_range(1..=spec.max_layers.max(1));
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let even = shape.h.is_multiple_of(2) && shape.w.is_multiple_of(2);
        let roll: f64 = rng.gen();
        let kind = if roll < 0.1 && even {
            LayerKind::Maxpool2
        } else if roll < 0.35 {
            LayerKind::FullyConnected
        } else {
            LayerKind::Conv3x3
        };
        let c_out = match kind {
            LayerKind::Maxpool2 => shape.c,
            _ => rng.gen_range(1..=spec.max_channels),
        };
        let (c_in, h, w) = match kind {
            LayerKind::FullyConnected => (shape.features(), 1, 1),
            _ => (shape.c, shape.h, shape.w),
        };
        let pool = kind == LayerKind::Conv3x3 && even && rng.gen_bool(0.3);
        let taps = if kind == LayerKind::Conv3x3 { 9 } else { 1 };
        let weights = if kind == LayerKind::Maxpool2 {
            Vec::new()
        } else {
            (0..c_out * c_in * taps)
                .map(|_| rng.gen_range(-spec.weight_mag..spec.weight_mag) as i8)
                .collect()
        };
        // Thresholds scaled to the fan-in so layers neither saturate nor
        // stay silent; a few non-positive thresholds exercise the edges.
        let fan_in = (c_in * taps) as i32;
        let typical = (fan_in * i32::from(spec.weight_mag) / 6).clamp(1, Threshold18::MAX);
        let v_th = if rng.gen_bool(0.05) {
            rng.gen_range(-typical.min(1000)..=0)
        } else {
            rng.gen_range(1..=typical)
        };
        let leak_shift = (spec.allow_leak && rng.gen_bool(0.5)).then(|| rng.gen_range(1..=6u8));
        let bias =
            (spec.allow_bias && kind != LayerKind::Maxpool2 && rng.gen_bool(0.3)).then(|| {
                (0..c_out)
                    .map(|_| Acc24::new(rng.gen_range(-typical..=typical)).unwrap())
                    .collect()
            });
        let layer = Layer {
            kind,
            c_in,
            c_out,
            h,
            w,
            weights,
            bias,
            v_th: Threshold18::new(v_th).unwrap(),
            leak_shift,
            pool,
            compare: Compare::GreaterEqual,
        };
        shape = layer.output_shape();
        layers.push(layer);
    }
    let head = if rng.gen_bool(0.5) {
        ClassHead::SpikeCount
    } else {
        ClassHead::FinalVmem
    };
    Network {
        input,
        layers,
        head,
    }
}

/// One layer of a topology string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TopologyLayer {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub pool: bool,
}

/// Parses `HxW-<c>c3-...-p2-...-<classes>`. `p2` pools the preceding conv
/// (or stands alone if nothing precedes it); a bare number is an FC layer
/// over everything before it.
pub fn parse_topology(s: &str, in_channels: usize) -> Result<Vec<TopologyLayer>> {
    let bad = |why: &str| Error::Config(format!("topology {s:?}: {why}"));
    let mut parts = s.split('-');
    let (h, w) = parts
        .next()
        .and_then(|d| d.split_once('x'))
        .and_then(|(h, w)| Some((h.parse::<usize>().ok()?, w.parse::<usize>().ok()?)))
        .ok_or_else(|| bad("expected a leading HxW input size"))?;
    let (mut c, mut h, mut w) = (in_channels, h, w);
    let mut layers: Vec<TopologyLayer> = Vec::new();
    for tok in parts {
        if tok == "p2" {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(bad("pooling an odd-sized map"));
            }
            match layers.last_mut() {
                Some(l) if l.kind == LayerKind::Conv3x3 && !l.pool => l.pool = true,
                _ => layers.push(TopologyLayer {
                    kind: LayerKind::Maxpool2,
                    c_in: c,
                    c_out: c,
                    h,
                    w,
                    pool: false,
                }),
            }
            h /= 2;
            w /= 2;
        } else if let Some(n) = tok.strip_suffix("c3") {
            let c_out = n.parse().map_err(|_| bad(tok))?;
            layers.push(TopologyLayer {
                kind: LayerKind::Conv3x3,
                c_in: c,
                c_out,
                h,
                w,
                pool: false,
            });
            c = c_out;
        } else {
            let c_out = tok.parse().map_err(|_| bad(tok))?;
            layers.push(TopologyLayer {
                kind: LayerKind::FullyConnected,
                c_in: c * h * w,
                c_out,
                h: 1,
                w: 1,
                pool: false,
            });
            (c, h, w) = (c_out, 1, 1);
        }
    }
    if layers.is_empty() {
        return Err(bad("no layers"));
    }
    Ok(layers)
}

/// Random weights for a fixed topology. Thresholds sit near the spread of
/// the input current so activity survives several layers.
pub fn topology_network(
    input: Shape,
    topology: &[TopologyLayer],
    seed: u64,
    head: ClassHead,
) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = topology
        .iter()
        .map(|t| {
            let taps = match t.kind {
                LayerKind::Conv3x3 => 9,
                LayerKind::FullyConnected => 1,
                LayerKind::Maxpool2 => 0,
            };
            let weights: Vec<i8> = (0..t.c_out * t.c_in * taps)
                .map(|_| rng.gen_range(-64..=64))
                .collect();
            let spread = ((t.c_in * taps) as f64).sqrt() * 64.0;
            let v_th = rng.gen_range(spread / 8.0..=spread / 3.0).round().max(1.0) as i32;
            Layer {
                kind: t.kind,
                c_in: t.c_in,
                c_out: t.c_out,
                h: t.h,
                w: t.w,
                weights,
                bias: None,
                v_th: Threshold18::new(v_th.min(Threshold18::MAX)).expect("clamped"),
                leak_shift: (t.kind != LayerKind::Maxpool2).then_some(3),
                pool: t.pool,
                compare: Compare::GreaterEqual,
            }
        })
        .collect();
    let net = Network {
        input,
        layers,
        head,
    };
    net.validate()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_network_has_requested_shape() {
        let topo = parse_topology("8x8-16c3-p2-32c3-10", 2).unwrap();
        let net = topology_network(Shape::new(2, 8, 8), &topo, 1, ClassHead::SpikeCount).unwrap();
        assert_eq!(net.layers.len(), 3);
        assert_eq!(net.output_shape(), Shape::new(10, 1, 1));
        assert_eq!(net.layers[2].c_in, 32 * 16);
    }

    #[test]
    fn random_networks_are_valid() {
        for seed in 0..300 {
            let net = random_network(seed, &RandomNetSpec::default());
            net.validate()
                .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        }
    }

    #[test]
    fn validation_catches_shape_errors() {
        let mut net = random_network(1, &RandomNetSpec::default());
        net.input.c += 1;
        assert!(net.validate().is_err());

        let conv = Layer {
            kind: LayerKind::Conv3x3,
            c_in: 2,
            c_out: 3,
            h: 3,
            w: 4,
            weights: vec![0; 54],
            bias: None,
            v_th: Threshold18::new(1).unwrap(),
            leak_shift: None,
            pool: false,
            compare: Compare::GreaterEqual,
        };
        assert!(conv.validate().is_ok());
        assert!(Layer {
            pool: true,
            ..conv.clone()
        }
        .validate()
        .is_err());
        assert!(Layer {
            weights: vec![0; 53],
            ..conv.clone()
        }
        .validate()
        .is_err());
        assert!(Layer {
            leak_shift: Some(30),
            ..conv.clone()
        }
        .validate()
        .is_err());
        assert_eq!(conv.weight(2, 1, 2, 2), 0);
    }
}
