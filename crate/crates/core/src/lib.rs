//! Bit-accurate, cycle-approximate model of a DSP48-based SNN accelerator,
//! with an independent golden model, a quantization front end and a
//! performance model.
//!
//! Data flows `spikes` → [`spikegen`] → [`systolic`] (built from [`dsp`]
//! slices over [`arith`] words) → [`neuron`], with weights supplied through
//! [`weight_hier`] and everything sequenced by [`scheduler`].

pub mod arith;
pub mod dsp;
pub mod error;
pub mod golden;
pub mod model_file;
pub mod network;
pub mod neuron;
pub mod perf;
pub mod quantizer;
pub mod scheduler;
pub mod spikegen;
pub mod spikes;
pub mod systolic;
pub mod weight_hier;

pub use error::{Error, Result};
pub use network::{ClassHead, Layer, LayerKind, Network, Shape};
pub use perf::{PerfConfig, PerfReport};
pub use scheduler::{LayerConfig, Simulator};
pub use spikes::{SpikeDims, SpikeTensor};
pub use systolic::ArrayDims;
