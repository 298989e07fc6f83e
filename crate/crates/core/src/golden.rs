//! Reference SNN inference written as plain nested loops over unpacked
//! integers. It never touches the DSP, systolic, line-buffer or FIFO models,
//! so agreement with the simulator is evidence rather than a tautology.
//!
//! Per neuron and timestep: `v = wrap24(v + bias + Σ w·s)`, then
//! `v = v - (v >> k)` for leaky layers, fire if `v >= v_th`, reset to zero on
//! a spike. After the last timestep the membrane is zeroed unconditionally.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::network::{ClassHead, Layer, LayerKind, Network, Shape};
use crate::neuron::Compare;
use crate::spikes::{SpikeDims, SpikeTensor};

#[derive(Clone, Debug)]
pub struct GoldenLayerOut {
    pub output: SpikeTensor,
    /// Leaked membrane at the last timestep, per output channel, summed over
    /// positions.
    pub final_vmem: Vec<i64>,
    /// Two per in-bounds spike/weight pair evaluated.
    pub sops: u64,
}

#[derive(Clone, Debug)]
pub struct GoldenRun {
    pub output: SpikeTensor,
    pub scores: Vec<i64>,
    pub layers: Vec<GoldenLayerOut>,
    pub sops: u64,
}

fn wrap24(x: i64) -> i64 {
    (x << 40) >> 40
}

struct Dynamics<'a> {
    layer: &'a Layer,
    timesteps: usize,
}

impl Dynamics<'_> {
    /// Integrates one timestep's input current into `v`; returns the spike.
    fn step(&self, v: &mut i64, current: i64, t: usize, final_vmem: &mut i64) -> bool {
        let mut u = wrap24(*v + current);
        if let Some(k) = self.layer.leak_shift {
            u = wrap24(u - (u >> k));
        }
        let th = i64::from(self.layer.v_th.value());
        let fired = match self.layer.compare {
            Compare::GreaterEqual => u >= th,
            Compare::Greater => u > th,
        };
        if t + 1 == self.timesteps {
            *final_vmem += u;
            *v = 0;
        } else {
            *v = if fired { 0 } else { u };
        }
        fired
    }

    fn bias(&self, o: usize) -> i64 {
        self.layer
            .bias
            .as_ref()
            .map_or(0, |b| i64::from(b[o].value()))
    }
}

fn check(layer: &Layer, input: &SpikeTensor) -> Result<SpikeDims> {
    layer.validate()?;
    let d = input.dims();
    if !layer.accepts(Shape::new(d.c, d.h, d.w)) {
        return Err(Error::Shape(format!(
            "{:?} layer cannot consume spikes {d}",
            layer.kind
        )));
    }
    Ok(d)
}

pub fn golden_conv(layer: &Layer, input: &SpikeTensor) -> Result<GoldenLayerOut> {
    let d = check(layer, input)?;
    if layer.kind != LayerKind::Conv3x3 {
        return Err(Error::Config(format!(
            "golden_conv given a {:?} layer",
            layer.kind
        )));
    }
    let (h, w) = (d.h as isize, d.w as isize);
    let shape = layer.output_shape();
    let mut out = SpikeTensor::zeros(shape.with_timesteps(d.t));
    let mut final_vmem = vec![0i64; layer.c_out];
    let mut sops = 0u64;
    let dynamics = Dynamics {
        layer,
        timesteps: d.t,
    };
    for o in 0..layer.c_out {
        for y in 0..h {
            for x in 0..w {
                let mut v = 0i64;
                for t in 0..d.t {
                    let mut current = dynamics.bias(o);
                    for i in 0..layer.c_in {
                        for kh in 0..3 {
                            for kw in 0..3 {
                                let (yy, xx) = (y + kh as isize - 1, x + kw as isize - 1);
                                if yy < 0 || xx < 0 || yy >= h || xx >= w {
                                    continue;
                                }
                                sops += 2;
                                if input.get(t, i, yy as usize, xx as usize) {
                                    current += i64::from(layer.weight(o, i, kh, kw));
                                }
                            }
                        }
                    }
                    if dynamics.step(&mut v, current, t, &mut final_vmem[o]) {
                        let (y, x) = (y as usize, x as usize);
                        if layer.pool {
                            out.set(t, o, y / 2, x / 2, true);
                        } else {
                            out.set(t, o, y, x, true);
                        }
                    }
                }
            }
        }
    }
    Ok(GoldenLayerOut {
        output: out,
        final_vmem,
        sops,
    })
}

/// Dense layer over the input flattened pixel-major, channel-fastest.
pub fn golden_fc(layer: &Layer, input: &SpikeTensor) -> Result<GoldenLayerOut> {
    let d = check(layer, input)?;
    if layer.kind != LayerKind::FullyConnected {
        return Err(Error::Config(format!(
            "golden_fc given a {:?} layer",
            layer.kind
        )));
    }
    let mut out = SpikeTensor::zeros(SpikeDims::new(d.t, layer.c_out, 1, 1));
    let mut final_vmem = vec![0i64; layer.c_out];
    let mut sops = 0u64;
    let dynamics = Dynamics {
        layer,
        timesteps: d.t,
    };
    let mut v = vec![0i64; layer.c_out];
    for t in 0..d.t {
        let mut features = Vec::with_capacity(layer.c_in);
        for y in 0..d.h {
            for x in 0..d.w {
                for c in 0..d.c {
                    features.push(input.get(t, c, y, x));
                }
            }
        }
        for o in 0..layer.c_out {
            let mut current = dynamics.bias(o);
            for (j, &s) in features.iter().enumerate() {
                sops += 2;
                if s {
                    current += i64::from(layer.weight(o, j, 0, 0));
                }
            }
            if dynamics.step(&mut v[o], current, t, &mut final_vmem[o]) {
                out.set(t, o, 0, 0, true);
            }
        }
    }
    Ok(GoldenLayerOut {
        output: out,
        final_vmem,
        sops,
    })
}

pub fn golden_pool(layer: &Layer, input: &SpikeTensor) -> Result<GoldenLayerOut> {
    let d = check(layer, input)?;
    let mut out = SpikeTensor::zeros(SpikeDims::new(d.t, d.c, d.h / 2, d.w / 2));
    for t in 0..d.t {
        for c in 0..d.c {
            for y in 0..d.h {
                for x in 0..d.w {
                    if input.get(t, c, y, x) {
                        out.set(t, c, y / 2, x / 2, true);
                    }
                }
            }
        }
    }
    Ok(GoldenLayerOut {
        output: out,
        final_vmem: vec![0; d.c],
        sops: 0,
    })
}

pub fn golden_layer(layer: &Layer, input: &SpikeTensor) -> Result<GoldenLayerOut> {
    match layer.kind {
        LayerKind::Conv3x3 => golden_conv(layer, input),
        LayerKind::FullyConnected => golden_fc(layer, input),
        LayerKind::Maxpool2 => golden_pool(layer, input),
    }
}

pub fn golden_network(net: &Network, input: &SpikeTensor) -> Result<GoldenRun> {
    net.validate()?;
    net.check_input(input.dims())?;
    let mut layers: Vec<GoldenLayerOut> = Vec::with_capacity(net.layers.len());
    let mut head_vmem = None;
    for layer in &net.layers {
        let x = layers.last().map_or(input, |l| &l.output);
        let out = golden_layer(layer, x)?;
        if layer.kind != LayerKind::Maxpool2 {
            head_vmem = Some(out.final_vmem.clone());
        }
        layers.push(out);
    }
    let output = layers
        .last()
        .expect("validated network has layers")
        .output
        .clone();
    let scores = match (net.head, head_vmem) {
        (ClassHead::FinalVmem, Some(v)) => v,
        _ => {
            let d = output.dims();
            (0..d.c)
                .map(|c| {
                    let mut n = 0;
                    for t in 0..d.t {
                        for y in 0..d.h {
                            for x in 0..d.w {
                                n += i64::from(output.get(t, c, y, x));
                            }
                        }
                    }
                    n
                })
                .collect()
        }
    };
    let sops = layers.iter().map(|l| l.sops).sum();
    Ok(GoldenRun {
        output,
        scores,
        layers,
        sops,
    })
}
