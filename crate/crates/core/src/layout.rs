//! Strided block layouts for one exchange round.
//!
//! A buffer holds `p` blocks in rank order. In round `k` the blocks are
//! grouped into `D[k]` units, one per peer of the round's sub-group. Unit
//! `j` starts at block `j·σ(k)` and is built from consecutive segments of
//! `σ(k)` blocks, repeated over the later dimensions with their strides
//! `σ(k+1), …, σ(d-1)`:
//!
//! ```text
//! offset(j, c, t) = j·σ(k) + Σ_{i>k} c_i·σ(i) + t,   0 <= t < σ(k)
//! ```
//!
//! Enumeration runs dimension `k+1` slowest, dimension `d-1` fastest and the
//! segment index `t` innermost. Sender and receiver walk units in this same
//! order, which is what lets a unit be handed over without packing it.

use crate::error::{Error, Result};
use crate::factorization::{stride_table, Dims};

/// Shape of one block: a number of elements of a fixed width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    elems_per_block: usize,
    elem_bytes: usize,
}

impl BlockSpec {
    pub fn new(elems_per_block: usize, elem_bytes: usize) -> Result<Self> {
        if elem_bytes == 0 {
            return Err(Error::InvalidDims("element width must be at least one byte".into()));
        }
        Ok(BlockSpec { elems_per_block, elem_bytes })
    }

    /// Blocks of `elems` 32-bit integers.
    pub fn u32s(elems: usize) -> Self {
        BlockSpec { elems_per_block: elems, elem_bytes: 4 }
    }

    pub fn elems_per_block(&self) -> usize {
        self.elems_per_block
    }

    pub fn elem_bytes(&self) -> usize {
        self.elem_bytes
    }

    pub fn block_bytes(&self) -> usize {
        self.elems_per_block * self.elem_bytes
    }
}

/// One repetition level of a unit: `count` segments `stride` blocks apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OuterDim {
    pub count: usize,
    pub stride_blocks: usize,
}

/// A contiguous byte range of a buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Run {
    pub offset: usize,
    pub len: usize,
}

impl Run {
    pub fn end(&self) -> usize {
        self.offset + self.len
    }
}

/// Per-peer block selection for one all-to-all round.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RoundLayout {
    round: usize,
    p: usize,
    block: BlockSpec,
    unit_count: usize,
    unit_extent_blocks: usize,
    seg_len_blocks: usize,
    outer: Vec<OuterDim>,
}

/// Layout of round `k` for the torus `dims`.
pub fn build_round_layout(k: usize, dims: &Dims, block: BlockSpec) -> Result<RoundLayout> {
    if k >= dims.d() {
        return Err(Error::DimOutOfRange { index: k, d: dims.d() });
    }
    let sigma = stride_table(dims);
    let outer =
        (k + 1..dims.d()).map(|i| OuterDim { count: dims.order(i), stride_blocks: sigma.get(i) }).collect();
    Ok(RoundLayout {
        round: k,
        p: dims.p(),
        block,
        unit_count: dims.order(k),
        unit_extent_blocks: sigma.get(k),
        seg_len_blocks: sigma.get(k),
        outer,
    })
}

impl RoundLayout {
    /// Plain rank-order layout: unit `j` is block `j`.
    pub fn identity(p: usize, block: BlockSpec) -> Self {
        RoundLayout {
            round: 0,
            p,
            block,
            unit_count: p,
            unit_extent_blocks: 1,
            seg_len_blocks: 1,
            outer: Vec::new(),
        }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Total blocks addressed by the layout.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn block(&self) -> BlockSpec {
        self.block
    }

    pub fn unit_count(&self) -> usize {
        self.unit_count
    }

    pub fn unit_extent_blocks(&self) -> usize {
        self.unit_extent_blocks
    }

    pub fn seg_len_blocks(&self) -> usize {
        self.seg_len_blocks
    }

    pub fn outer_dims(&self) -> &[OuterDim] {
        &self.outer
    }

    pub fn blocks_per_unit(&self) -> usize {
        self.seg_len_blocks * self.outer.iter().map(|o| o.count).product::<usize>()
    }

    pub fn unit_bytes(&self) -> usize {
        self.blocks_per_unit() * self.block.block_bytes()
    }

    /// Bytes a buffer must hold for this layout.
    pub fn buffer_bytes(&self) -> usize {
        self.p * self.block.block_bytes()
    }

    /// Block offsets of unit `j` in enumeration order.
    pub fn unit_offsets(&self, j: usize) -> Result<UnitOffsets<'_>> {
        self.check_unit(j)?;
        Ok(UnitOffsets {
            layout: self,
            base: j * self.unit_extent_blocks,
            counters: vec![0; self.outer.len()],
            t: 0,
            done: self.blocks_per_unit() == 0,
        })
    }

    /// Byte runs of unit `j`, adjacent blocks merged.
    pub fn unit_runs(&self, j: usize) -> Result<Vec<Run>> {
        self.check_unit(j)?;
        let shift = j * self.unit_extent_blocks * self.block.block_bytes();
        Ok(self.run_template().into_iter().map(|r| Run { offset: r.offset + shift, len: r.len }).collect())
    }

    /// Runs of unit 0. Every unit has the same run structure shifted by
    /// `j · unit_stride_bytes()`.
    pub fn run_template(&self) -> Vec<Run> {
        let block_bytes = self.block.block_bytes();
        let mut runs: Vec<Run> = Vec::new();
        if block_bytes == 0 {
            return runs;
        }
        let offsets = UnitOffsets {
            layout: self,
            base: 0,
            counters: vec![0; self.outer.len()],
            t: 0,
            done: self.blocks_per_unit() == 0,
        };
        for off in offsets {
            let start = off * block_bytes;
            match runs.last_mut() {
                Some(last) if last.end() == start => last.len += block_bytes,
                _ => runs.push(Run { offset: start, len: block_bytes }),
            }
        }
        runs
    }

    pub fn unit_stride_bytes(&self) -> usize {
        self.unit_extent_blocks * self.block.block_bytes()
    }

    fn check_unit(&self, j: usize) -> Result<()> {
        if j >= self.unit_count {
            return Err(Error::UnitOutOfRange { unit: j, count: self.unit_count });
        }
        Ok(())
    }
}

/// Lazy odometer over the block offsets of one unit.
#[derive(Debug, Clone)]
pub struct UnitOffsets<'a> {
    layout: &'a RoundLayout,
    base: usize,
    counters: Vec<usize>,
    t: usize,
    done: bool,
}

impl Iterator for UnitOffsets<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.done {
            return None;
        }
        let outer = &self.layout.outer;
        let off = self.base
            + self.counters.iter().zip(outer).map(|(&c, o)| c * o.stride_blocks).sum::<usize>()
            + self.t;

        self.t += 1;
        if self.t == self.layout.seg_len_blocks {
            self.t = 0;
            // last outer dimension is the fastest
            let mut i = self.counters.len();
            loop {
                if i == 0 {
                    self.done = true;
                    break;
                }
                i -= 1;
                self.counters[i] += 1;
                if self.counters[i] < outer[i].count {
                    break;
                }
                self.counters[i] = 0;
            }
        }
        Some(off)
    }
}
