//! How the order-k̄ tensor is split into blocks.
//!
//! Even order `2k`: block `j` is a `d_{2j} × d_{2j+1}` matrix standing in for
//! `v_{2j} v_{2j+1}ᵀ` (0-based spikes). Odd order `2k+1`: block 0 is a vector
//! for `v_0` (stored as a `1 × d_0` matrix) and block `j ≥ 1` covers
//! `(v_{2j-1}, v_{2j})`. Either way the blocks cover consecutive tensor modes
//! and sweeps visit them in descending index order.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(order: usize) -> Parity {
        if order % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub rows: usize,
    pub cols: usize,
    /// Spike on the row side; `None` for the odd-order vector block.
    pub left: Option<usize>,
    /// Spike on the column side.
    pub right: usize,
}

impl BlockShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_vector(&self) -> bool {
        self.left.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    dims: Vec<usize>,
    parity: Parity,
    blocks: Vec<BlockShape>,
}

impl BlockLayout {
    pub fn new(dims: &[usize]) -> Result<Self> {
        let order = dims.len();
        if order < 3 {
            return Err(invalid(format!("order must be at least 3, got {order}")));
        }
        let parity = Parity::of(order);
        let mut blocks = Vec::new();
        match parity {
            Parity::Even => {
                for j in 0..order / 2 {
                    blocks.push(BlockShape {
                        rows: dims[2 * j],
                        cols: dims[2 * j + 1],
                        left: Some(2 * j),
                        right: 2 * j + 1,
                    });
                }
            }
            Parity::Odd => {
                blocks.push(BlockShape { rows: 1, cols: dims[0], left: None, right: 0 });
                for j in 1..=order / 2 {
                    blocks.push(BlockShape {
                        rows: dims[2 * j - 1],
                        cols: dims[2 * j],
                        left: Some(2 * j - 1),
                        right: 2 * j,
                    });
                }
            }
        }
        Ok(BlockLayout { dims: dims.to_vec(), parity, blocks })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn blocks(&self) -> &[BlockShape] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &BlockShape {
        &self.blocks[j]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `⌊k̄/2⌋`, the number of matrix blocks.
    pub fn num_pairs(&self) -> usize {
        self.order() / 2
    }

    /// Block indices in sweep order.
    pub fn sweep_order(&self) -> impl Iterator<Item = usize> {
        (0..self.blocks.len()).rev()
    }

    /// Number of entries in the full tensor, saturating on overflow.
    pub fn tensor_len(&self) -> usize {
        self.dims.iter().fold(1usize, |acc, &d| acc.saturating_mul(d))
    }

    /// `Σ` block sizes.
    pub fn total_block_len(&self) -> usize {
        self.blocks.iter().map(BlockShape::len).sum()
    }

    /// Left factor of block `j`'s signal: the row-side spike, or `[1]`.
    pub fn left_factor<'a>(&self, j: usize, spikes: &'a [Vec<f64>]) -> std::borrow::Cow<'a, [f64]> {
        match self.blocks[j].left {
            Some(n) => std::borrow::Cow::Borrowed(&spikes[n]),
            None => std::borrow::Cow::Owned(vec![1.0]),
        }
    }

    /// Row-major `v uᵀ` for block `j`.
    pub fn signal_matrix(&self, j: usize, spikes: &[Vec<f64>]) -> Vec<f64> {
        let left = self.left_factor(j, spikes);
        crate::linalg::outer(&left, &spikes[self.blocks[j].right])
    }
}
