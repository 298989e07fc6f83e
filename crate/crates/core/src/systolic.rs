//! The M×N weight-stationary systolic array.
//!
//! `M/4` columns each hold `N/16` PE chains and an adder tree. Every column
//! sees the same N-bit spike vector; column `c` produces output channels
//! `4c..4c+3`.

use crate::arith::{sext_lane_to_acc, Acc24, Int8Weight, Lane12};
use crate::dsp::{PeChain, PE_INPUTS, PE_OUTPUTS};
use crate::error::{Error, Result};

/// Default array geometry (the xczu3eg build).
pub const DEFAULT_M: usize = 16;
pub const DEFAULT_N: usize = 144;

/// One partial sum per output channel for one spatial position and one input
/// tile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialSumRow {
    pub values: Vec<Acc24>,
}

impl PartialSumRow {
    pub fn zeros(m: usize) -> Self {
        Self {
            values: vec![Acc24::ZERO; m],
        }
    }
}

/// Array geometry, validated once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ArrayDims {
    pub m: usize,
    pub n: usize,
}

impl ArrayDims {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 || !m.is_multiple_of(PE_OUTPUTS) || !n.is_multiple_of(PE_INPUTS) {
            return Err(Error::Config(format!(
                "array {m}x{n}: M must be a positive multiple of {PE_OUTPUTS} and N of {PE_INPUTS}"
            )));
        }
        Ok(Self { m, n })
    }

    /// Parses `"MxN"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (m, n) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("array dims {s:?} are not of the form MxN")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("array dims {s:?} are not of the form MxN")))
        };
        Self::new(parse(m)?, parse(n)?)
    }

    pub fn columns(&self) -> usize {
        self.m / PE_OUTPUTS
    }

    pub fn chains_per_column(&self) -> usize {
        self.n / PE_INPUTS
    }

    /// Pipeline depth of a column's adder tree, `ceil(log2(N/16))`.
    pub fn tree_depth(&self) -> u32 {
        let leaves = self.chains_per_column();
        usize::BITS - (leaves.max(1) - 1).leading_zeros()
    }

    /// Cycles from a spike vector entering to its partial sums leaving.
    pub fn fill_latency(&self) -> u32 {
        PeChain::new().fill_latency() + self.tree_depth()
    }
}

impl Default for ArrayDims {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            n: DEFAULT_N,
        }
    }
}

impl std::fmt::Display for ArrayDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.m, self.n)
    }
}

/// Exact per-channel sum of the chain outputs of one column.
///
/// Modeled as a balanced pairwise tree; the result is exact because the
/// widest sum, `(N/16) * 2048`, fits the 24-bit accumulator.
pub fn adder_tree_reduce(parts: &[[Lane12; 4]]) -> [Acc24; 4] {
    let mut level: Vec<[Acc24; 4]> = parts.iter().map(|p| p.map(sext_lane_to_acc)).collect();
    if level.is_empty() {
        return [Acc24::ZERO; 4];
    }
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [a, b] => std::array::from_fn(|j| a[j].wrapping_add(b[j])),
                [a] => *a,
                _ => unreachable!(),
            })
            .collect();
    }
    level[0]
}

#[derive(Clone, Debug)]
pub struct SystolicArray {
    dims: ArrayDims,
    /// `columns[c][r]`: chain `r` of column `c`.
    columns: Vec<Vec<PeChain>>,
    tile_id: Option<u64>,
    steps: u64,
}

impl SystolicArray {
    pub fn new(dims: ArrayDims) -> Self {
        Self {
            dims,
            columns: vec![vec![PeChain::new(); dims.chains_per_column()]; dims.columns()],
            tile_id: None,
            steps: 0,
        }
    }

    pub fn dims(&self) -> ArrayDims {
        self.dims
    }

    pub fn tile_id(&self) -> Option<u64> {
        self.tile_id
    }

    /// Number of spike vectors processed since construction.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Loads an M×N tile, row-major: `tile[o * N + i]` is the weight from
    /// spike input `i` to output channel `o`.
    pub fn array_load(&mut self, tile: &[i8], tile_id: u64) -> Result<()> {
        let ArrayDims { m, n } = self.dims;
        if tile.len() != m * n {
            return Err(Error::Config(format!(
                "weight tile has {} entries, array needs {m}x{n}",
                tile.len()
            )));
        }
        for (c, column) in self.columns.iter_mut().enumerate() {
            for (r, chain) in column.iter_mut().enumerate() {
                let rows: Vec<[Int8Weight; 4]> = (0..PE_INPUTS)
                    .map(|k| {
                        let input = r * PE_INPUTS + k;
                        std::array::from_fn(|j| Int8Weight(tile[(c * PE_OUTPUTS + j) * n + input]))
                    })
                    .collect();
                chain.load_weights(&rows)?;
            }
        }
        self.tile_id = Some(tile_id);
        Ok(())
    }

    /// Asserts or releases backpressure on every chain.
    pub fn set_held(&mut self, held: bool) {
        self.columns
            .iter_mut()
            .flatten()
            .for_each(|c| c.set_held(held));
    }

    pub fn array_step(&mut self, spikes: &[bool]) -> PartialSumRow {
        assert_eq!(spikes.len(), self.dims.n, "spike vector width must equal N");
        self.steps += 1;
        let mut values = Vec::with_capacity(self.dims.m);
        for column in &self.columns {
            let parts: Vec<[Lane12; 4]> = column
                .iter()
                .zip(spikes.chunks(PE_INPUTS))
                .map(|(chain, s)| chain.forward(s))
                .collect();
            values.extend(adder_tree_reduce(&parts));
        }
        PartialSumRow { values }
    }
}
