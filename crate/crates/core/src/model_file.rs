//! On-disk model format.
//!
//! A JSON document describes the network; each weighted layer points at a
//! raw file of signed bytes in `[out][in][kh][kw]` order (`[out][in]` for FC
//! layers), resolved relative to the JSON file.
//!
//! ```json
//! {
//!   "format": "firefly-model",
//!   "version": 1,
//!   "input": { "c": 1, "h": 8, "w": 8 },
//!   "head": "spike_count",
//!   "layers": [
//!     { "kind": "conv3x3", "c_in": 1, "c_out": 16, "h": 8, "w": 8,
//!       "v_th": 40, "leak_shift": 2, "pool": true, "weights": "net.layer0.bin" }
//!   ]
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arith::{Acc24, Threshold18};
use crate::error::{Error, Result};
use crate::network::{ClassHead, Layer, LayerKind, Network, Shape};
use crate::neuron::Compare;
use crate::spikes::with_path;

pub const FORMAT: &str = "firefly-model";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    input: Shape,
    #[serde(default)]
    head: ClassHead,
    layers: Vec<LayerDoc>,
}

fn one() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    kind: LayerKind,
    c_in: usize,
    c_out: usize,
    #[serde(default = "one")]
    h: usize,
    #[serde(default = "one")]
    w: usize,
    #[serde(default)]
    v_th: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leak_shift: Option<u8>,
    #[serde(default)]
    pool: bool,
    #[serde(default)]
    compare: Compare,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Vec<i32>>,
}

/// Weight file name used by [`save_model`] for layer `i`.
pub fn weight_file_name(model_path: &Path, i: usize) -> String {
    let stem = model_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    format!("{stem}.layer{i}.bin")
}

/// Writes the JSON document and one weight file per weighted layer next to
/// it.
pub fn save_model(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    let path = path.as_ref();
    net.validate()?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut layers = Vec::with_capacity(net.layers.len());
    for (i, l) in net.layers.iter().enumerate() {
        let weights = if l.kind == LayerKind::Maxpool2 {
            None
        } else {
            let name = weight_file_name(path, i);
            let bytes: Vec<u8> = l.weights.iter().map(|&w| w as u8).collect();
            let file = dir.join(&name);
            fs::write(&file, bytes).map_err(with_path(&file))?;
            Some(name)
        };
        layers.push(LayerDoc {
            kind: l.kind,
            c_in: l.c_in,
            c_out: l.c_out,
            h: l.h,
            w: l.w,
            v_th: l.v_th.value(),
            leak_shift: l.leak_shift,
            pool: l.pool,
            compare: l.compare,
            weights,
            bias: l
                .bias
                .as_ref()
                .map(|b| b.iter().map(|v| v.value()).collect()),
        });
    }
    let doc = ModelDoc {
        format: FORMAT.into(),
        version: VERSION,
        input: net.input,
        head: net.head,
        layers,
    };
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n").map_err(with_path(path))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let doc: ModelDoc = serde_json::from_str(&fs::read_to_string(path).map_err(with_path(path))?)?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(Error::Model(format!(
            "{}: expected format {FORMAT:?} version {VERSION}, found {:?} version {}",
            path.display(),
            doc.format,
            doc.version
        )));
    }
    let dir: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.into_iter().enumerate() {
        let weights = match (&l.weights, l.kind) {
            (None, LayerKind::Maxpool2) => Vec::new(),
            (None, _) => return Err(Error::Model(format!("layer {i}: missing weight file"))),
            (Some(name), _) => {
                let file = dir.join(name);
                let bytes = fs::read(&file).map_err(|e| {
                    Error::Model(format!("layer {i}: cannot read {}: {e}", file.display()))
                })?;
                let taps = if l.kind == LayerKind::Conv3x3 { 9 } else { 1 };
                let expected = l.c_out * l.c_in * taps;
                if bytes.len() != expected {
                    return Err(Error::Model(format!(
                        "layer {i}: {} holds {} weights, expected {expected}",
                        file.display(),
                        bytes.len()
                    )));
                }
                bytes.into_iter().map(|b| b as i8).collect()
            }
        };
        let v_th = Threshold18::new(l.v_th).map_err(|_| {
            Error::Model(format!("layer {i}: threshold {} outside 18 bits", l.v_th))
        })?;
        let bias = l
            .bias
            .map(|b| {
                b.into_iter()
                    .map(|v| {
                        Acc24::new(v).map_err(|_| {
                            Error::Model(format!("layer {i}: bias {v} outside 24 bits"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        layers.push(Layer {
            kind: l.kind,
            c_in: l.c_in,
            c_out: l.c_out,
            h: l.h,
            w: l.w,
            weights,
            bias,
            v_th,
            leak_shift: l.leak_shift,
            pool: l.pool,
            compare: l.compare,
        });
    }
    let net = Network {
        input: doc.input,
        layers,
        head: doc.head,
    };
    net.validate()?;
    Ok(net)
}
