//! Post-training quantization: batchnorm fusion, then a symmetric per-layer
//! scale shared by weights, bias and threshold.
//!
//! With `s = 127 / max|w|`, weights become `round_half_even(w·s)`, the
//! threshold `round(v_th·s)` and the bias `round(b·s)`. Because every term
//! that reaches the comparator carries the same factor, spiking decisions
//! need no rescaling multiplier. Leak factors are snapped to `2^-k` so the
//! membrane decay is a shift and subtract.

use crate::arith::{Acc24, Threshold18};
use crate::error::{Error, Result};
use crate::network::{ClassHead, Layer, LayerKind, Network, Shape};
use crate::neuron::{Compare, MAX_LEAK_SHIFT};

pub use crate::model_file::{load_model, save_model};

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    /// Parameters that leave activations unchanged.
    pub fn identity(channels: usize, eps: f64) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0 - eps; channels],
            eps,
        }
    }
}

/// A float layer prior to quantization. Weight layout matches [`Layer`].
#[derive(Clone, Debug, PartialEq)]
pub struct FloatLayer {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub bn: Option<BatchNorm>,
    pub v_th: f64,
    /// Per-timestep decay `λ` in `v ← v·(1 − λ)`; `None` is IF.
    pub lambda: Option<f64>,
    pub pool: bool,
}

impl FloatLayer {
    fn taps(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 => 9,
            LayerKind::FullyConnected => 1,
            LayerKind::Maxpool2 => 0,
        }
    }

    fn fan_in(&self) -> usize {
        self.c_in * self.taps()
    }

    /// Pre-activation output for one float input (`c_in×h×w`, channel-major
    /// for conv, flat for FC), with batchnorm applied if present.
    #[allow(clippy::needless_range_loop)]
    pub fn currents(&self, input: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h as isize, self.w as isize);
        let positions = match self.kind {
            LayerKind::Conv3x3 => self.h * self.w,
            _ => 1,
        };
        let mut out = vec![0.0; self.c_out * positions];
        for o in 0..self.c_out {
            for pos in 0..positions {
                let mut acc = self.bias.as_ref().map_or(0.0, |b| b[o]);
                match self.kind {
                    LayerKind::Conv3x3 => {
                        let (y, x) = ((pos / self.w) as isize, (pos % self.w) as isize);
                        for i in 0..self.c_in {
                            for kh in 0..3 {
                                for kw in 0..3 {
                                    let (yy, xx) = (y + kh - 1, x + kw - 1);
                                    if yy >= 0 && xx >= 0 && yy < h && xx < w {
                                        let wi = ((o * self.c_in + i) * 3 + kh as usize) * 3
                                            + kw as usize;
                                        acc += self.weights[wi]
                                            * input
                                                [(i * self.h + yy as usize) * self.w + xx as usize];
                                    }
                                }
                            }
                        }
                    }
                    _ => {
                        for i in 0..self.c_in {
                            acc += self.weights[o * self.c_in + i] * input[i];
                        }
                    }
                }
                if let Some(bn) = &self.bn {
                    acc =
                        (acc - bn.mean[o]) * bn.gamma[o] / (bn.var[o] + bn.eps).sqrt() + bn.beta[o];
                }
                out[o * positions + pos] = acc;
            }
        }
        out
    }
}

/// Folds batchnorm into weights and bias:
/// `w' = w·γ/√(σ²+ε)`, `b' = (b − μ)·γ/√(σ²+ε) + β`.
pub fn fuse_batchnorm(layer: &FloatLayer) -> Result<FloatLayer> {
    let Some(bn) = &layer.bn else {
        return Ok(layer.clone());
    };
    let c = layer.c_out;
    if [bn.gamma.len(), bn.beta.len(), bn.mean.len(), bn.var.len()] != [c; 4] {
        return Err(Error::Shape(format!(
            "batchnorm parameters do not cover {c} channels"
        )));
    }
    let fan_in = layer.fan_in();
    let mut weights = layer.weights.clone();
    let mut bias = layer.bias.clone().unwrap_or_else(|| vec![0.0; c]);
    for o in 0..c {
        let denom = bn.var[o] + bn.eps;
        if denom <= 0.0 {
            return Err(Error::Quantization(format!(
                "channel {o}: var + eps = {denom} is not positive"
            )));
        }
        let g = bn.gamma[o] / denom.sqrt();
        for wv in &mut weights[o * fan_in..(o + 1) * fan_in] {
            *wv *= g;
        }
        bias[o] = (bias[o] - bn.mean[o]) * g + bn.beta[o];
    }
    Ok(FloatLayer {
        weights,
        bias: Some(bias),
        bn: None,
        ..layer.clone()
    })
}

/// A quantized layer with the numbers that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLayer {
    pub layer: Layer,
    pub scale: f64,
    /// `|λ − 2^-k|` for leaky layers.
    pub leak_snap_error: Option<f64>,
}

/// Symmetric per-layer scale `127 / max|w|`, or 1 for an all-zero layer.
pub fn layer_scale(weights: &[f64]) -> f64 {
    let max = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max == 0.0 {
        1.0
    } else {
        127.0 / max
    }
}

/// Snaps `λ` to the nearest `2^-k` in log space; returns `(k, |λ − 2^-k|)`.
pub fn snap_leak(lambda: f64) -> Result<(u8, f64)> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Quantization(format!(
            "leak factor λ = {lambda} outside (0, 1)"
        )));
    }
    let k = (-lambda.log2())
        .round()
        .clamp(1.0, f64::from(MAX_LEAK_SHIFT)) as u8;
    Ok((k, (lambda - 2f64.powi(-i32::from(k))).abs()))
}

pub fn quantize_layer(layer: &FloatLayer) -> Result<QuantizedLayer> {
    quantize_layer_with_scale(layer, layer_scale(&layer.weights))
}

/// Quantizes with an explicit scale. Weights clamp to INT8; thresholds and
/// biases that leave their registers are errors.
pub fn quantize_layer_with_scale(layer: &FloatLayer, scale: f64) -> Result<QuantizedLayer> {
    if layer.bn.is_some() {
        return Err(Error::Quantization(
            "fuse batchnorm before quantizing".into(),
        ));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Quantization(format!(
            "scale {scale} must be positive and finite"
        )));
    }
    let weights = layer
        .weights
        .iter()
        .map(|&w| (w * scale).round_ties_even().clamp(-128.0, 127.0) as i8)
        .collect();
    let th = (layer.v_th * scale).round_ties_even();
    let v_th = Threshold18::new(th as i32)
        .ok()
        .filter(|_| th.abs() < f64::from(1 << 20))
        .ok_or_else(|| {
            Error::Quantization(format!(
                "threshold {} × scale {scale} = {th} does not fit an 18-bit register",
                layer.v_th
            ))
        })?;
    let bias = match &layer.bias {
        Some(b) => Some(
            b.iter()
                .enumerate()
                .map(|(o, &b)| {
                    let q = (b * scale).round_ties_even();
                    Acc24::new(q as i32)
                        .ok()
                        .filter(|_| q.abs() < f64::from(1 << 24))
                        .ok_or_else(|| {
                            Error::Quantization(format!(
                                "bias {o}: {b} × scale {scale} = {q} does not fit 24 bits"
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let (leak_shift, leak_snap_error) = match layer.lambda {
        Some(l) => {
            let (k, err) = snap_leak(l)?;
            (Some(k), Some(err))
        }
        None => (None, None),
    };
    let q = Layer {
        kind: layer.kind,
        c_in: layer.c_in,
        c_out: layer.c_out,
        h: layer.h,
        w: layer.w,
        weights,
        bias,
        v_th,
        leak_shift,
        pool: layer.pool,
        compare: Compare::GreaterEqual,
    };
    q.validate()?;
    Ok(QuantizedLayer {
        layer: q,
        scale,
        leak_snap_error,
    })
}

/// Fuses and quantizes every layer.
pub fn quantize_network(
    input: Shape,
    layers: &[FloatLayer],
    head: ClassHead,
) -> Result<(Network, Vec<QuantizedLayer>)> {
    let quantized = layers
        .iter()
        .map(|l| fuse_batchnorm(l).and_then(|f| quantize_layer(&f)))
        .collect::<Result<Vec<_>>>()?;
    let net = Network {
        input,
        layers: quantized.iter().map(|q| q.layer.clone()).collect(),
        head,
    };
    net.validate()?;
    Ok((net, quantized))
}
