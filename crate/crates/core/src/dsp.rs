//! Functional model of one DSP48E2 slice wired for synaptic operations and of
//! the eight-slice cascade that forms a processing element.
//!
//! With the multiplier bypassed the post-adder computes `W + X + Y + Z` in
//! quad 12-bit SIMD mode. Four packed weights sit on A:B behind the X mux,
//! four more on C behind the W mux, Y is tied to zero and Z takes the cascade
//! input PCIN. Each spike bit gates one multiplexer, so one slice performs
//! eight 2:1 muxes and eight additions per cycle.

use crate::arith::{pack4, simd_add12, Int8Weight, Lane12, Word48};
use crate::error::{Error, Result};

/// Pipeline depth of one slice (A/B input register plus P register).
pub const SLICE_LATENCY: u32 = 2;
/// Slices per processing element.
pub const CHAIN_LEN: usize = 8;
/// Spike inputs per processing element (two per slice).
pub const PE_INPUTS: usize = 2 * CHAIN_LEN;
/// Output channels per processing element (one per SIMD lane).
pub const PE_OUTPUTS: usize = 4;

/// One slice. Even spike of a pair gates A:B, odd spike gates C.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DspSlice {
    weights_ab: Word48,
    weights_c: Word48,
}

impl DspSlice {
    pub fn new(ab: [Int8Weight; 4], c: [Int8Weight; 4]) -> Self {
        Self {
            weights_ab: pack4(ab),
            weights_c: pack4(c),
        }
    }

    pub fn weights_ab(&self) -> Word48 {
        self.weights_ab
    }

    pub fn weights_c(&self) -> Word48 {
        self.weights_c
    }

    /// The 30-bit A port: upper 30 bits of the packed A:B word.
    pub fn port_a(&self) -> u32 {
        (self.weights_ab.bits() >> 18) as u32
    }

    /// The 18-bit B port: lower 18 bits of the packed A:B word.
    pub fn port_b(&self) -> u32 {
        (self.weights_ab.bits() & 0x3FFFF) as u32
    }

    pub fn step(&self, s_ab: bool, s_c: bool, pcin: Word48) -> Word48 {
        let x = if s_ab {
            Word48::from_bits(u64::from(self.port_a()) << 18 | u64::from(self.port_b()))
        } else {
            Word48::ZERO
        };
        let w = if s_c { self.weights_c } else { Word48::ZERO };
        let y = Word48::ZERO;
        let z = pcin;
        simd_add12(simd_add12(w, x), simd_add12(y, z))
    }
}

/// Eight cascaded slices computing a 1×16 spike vector times a 16×4 weight
/// matrix.
#[derive(Clone, Debug, Default)]
pub struct PeChain {
    slices: [DspSlice; CHAIN_LEN],
    held: bool,
}

impl PeChain {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a 16×4 matrix (row `i` = weights for spike `i`). Slice `k` gets
    /// rows `2k` on A:B and `2k + 1` on C.
    pub fn load_weights(&mut self, w: &[[Int8Weight; 4]]) -> Result<()> {
        if self.held {
            return Err(Error::Config(
                "weights loaded while the chain holds a stationary tile".into(),
            ));
        }
        if w.len() != PE_INPUTS {
            return Err(Error::Config(format!(
                "PE weight matrix needs {PE_INPUTS} rows, got {}",
                w.len()
            )));
        }
        for (k, slice) in self.slices.iter_mut().enumerate() {
            *slice = DspSlice::new(w[2 * k], w[2 * k + 1]);
        }
        Ok(())
    }

    /// Backpressure: while held, weights stay stationary.
    pub fn set_held(&mut self, held: bool) {
        self.held = held;
    }

    pub fn is_held(&self) -> bool {
        self.held
    }

    pub fn slices(&self) -> &[DspSlice; CHAIN_LEN] {
        &self.slices
    }

    /// Ripples the cascade from slice 0 (PCIN = 0) to slice 7.
    pub fn forward(&self, spikes: &[bool]) -> [Lane12; 4] {
        assert_eq!(
            spikes.len(),
            PE_INPUTS,
            "a PE consumes exactly {PE_INPUTS} spikes"
        );
        self.slices
            .iter()
            .enumerate()
            .fold(Word48::ZERO, |pcin, (k, s)| {
                s.step(spikes[2 * k], spikes[2 * k + 1], pcin)
            })
            .lanes()
    }

    pub fn fill_latency(&self) -> u32 {
        SLICE_LATENCY * CHAIN_LEN as u32
    }
}

/// Convenience wrapper: load `w` into a fresh chain and run one spike vector.
pub fn pe_forward(spikes: &[bool], w: &[[Int8Weight; 4]]) -> Result<[Lane12; 4]> {
    let mut chain = PeChain::new();
    chain.load_weights(w)?;
    Ok(chain.forward(spikes))
}
