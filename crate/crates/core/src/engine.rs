//! Factorized all-to-all over a torus of sub-groups.
//!
//! A group of `p = D[0]·…·D[d-1]` members is split once into `d` sub-groups
//! per member; sub-group `k` holds the members that share every coordinate
//! but the `k`-th. The all-to-all then runs as `d` rounds, round `k` being a
//! smaller all-to-all on sub-group `k` with `p / D[k]` blocks per peer.
//! Blocks are picked out of and dropped into the buffers by the per-round
//! [`RoundLayout`], so the engine never reorders data itself. Three buffers
//! take turns as round input and output: the caller's send and receive
//! buffers plus one temporary of `p` blocks.
//!
//! Ranks are row-major over the dims. Digit `k` of a row-major block index
//! has stride `Π_{j>k} D[j]`, which is the prefix stride of position
//! `d-1-k` in the reversed dims. Round `k` therefore uses layout `d-1-k` of
//! the reversed dims.

use crate::error::{Error, Result};
use crate::factorization::{rank_to_vector, split_color_key, Coord, Dims};
use crate::group::{ProcessGroup, Region, RegionMut};
use crate::layout::{build_round_layout, BlockSpec, RoundLayout};

/// One of the three buffers a round can read from or write into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BufferRole {
    Send,
    Recv,
    Temp,
}

/// Buffers read (`out`) and written (`inp`) by one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundBuffers {
    pub out: BufferRole,
    pub inp: BufferRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferSchedule {
    rounds: Vec<RoundBuffers>,
}

impl BufferSchedule {
    pub fn rounds(&self) -> &[RoundBuffers] {
        &self.rounds
    }
}

/// Buffer roles for `d` rounds. Round 0 reads the send buffer and writes the
/// receive buffer when `d` is odd, the temporary otherwise; after the first
/// round the other two buffers alternate, so the last round always writes
/// the receive buffer.
pub fn buffer_schedule(d: usize) -> BufferSchedule {
    use BufferRole::*;
    let mut rounds = Vec::with_capacity(d);
    if d == 0 {
        return BufferSchedule { rounds };
    }
    let mut out = Send;
    let mut inp = if d % 2 == 1 { Recv } else { Temp };
    for _ in 0..d {
        rounds.push(RoundBuffers { out, inp });
        if out == Send {
            (out, inp) = if inp == Recv { (Recv, Temp) } else { (Temp, Recv) };
        } else {
            std::mem::swap(&mut out, &mut inp);
        }
    }
    BufferSchedule { rounds }
}

/// Blocks each member sends to other members in one factorized all-to-all:
/// `d·p − Σ p/D[k]`.
pub fn expected_block_traffic(dims: &Dims) -> usize {
    let p = dims.p();
    dims.d() * p - dims.factors().iter().map(|&f| p / f).sum::<usize>()
}

/// The layout round `k` uses on the torus `dims`.
pub fn engine_round_layout(dims: &Dims, k: usize, block: BlockSpec) -> Result<RoundLayout> {
    if k >= dims.d() {
        return Err(Error::DimOutOfRange { index: k, d: dims.d() });
    }
    build_round_layout(dims.d() - 1 - k, &dims.reversed(), block)
}

/// Instrumentation points of [`TorusComm::alltoall_observed`]. All default
/// to no-ops.
pub trait EngineObserver {
    /// Fired before round 0 with `round == 0` and the send buffer, then
    /// after each round `k` with `round == k + 1` and the buffer it wrote.
    /// The last call carries the receive buffer.
    fn round_boundary(&mut self, _round: usize, _role: BufferRole, _buffer: &[u8]) {}

    /// Fired when a round starts, with the buffers it reads and writes.
    fn round_started(&mut self, _round: usize, _buffers: RoundBuffers) {}

    /// Every block-sized allocation the engine makes.
    fn allocation(&mut self, _bytes: usize) {}
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoopObserver;

impl EngineObserver for NoopObserver {}

#[derive(Debug)]
struct Factors {
    dims: Dims,
    origin: Coord,
    subgroups: Vec<ProcessGroup>,
}

/// A group handle with an optional cached torus factorization.
///
/// The sub-groups live as long as the factorization: dropping the handle or
/// calling [`TorusComm::release`] frees each of them once.
#[derive(Debug)]
pub struct TorusComm {
    parent: ProcessGroup,
    factors: Option<Factors>,
}

/// Collective: factorize `group` along `dims`.
pub fn factorize_group(group: ProcessGroup, dims: Dims) -> Result<TorusComm> {
    let mut tc = TorusComm::new(group);
    tc.factorize(dims)?;
    Ok(tc)
}

impl TorusComm {
    /// Wrap a group with no factorization attached; all-to-all calls fall
    /// back to the direct exchange until [`TorusComm::factorize`] is called.
    pub fn new(parent: ProcessGroup) -> Self {
        TorusComm { parent, factors: None }
    }

    /// Collective: split the parent into one sub-group per dimension and
    /// cache them. Replaces any earlier factorization.
    pub fn factorize(&mut self, dims: Dims) -> Result<()> {
        if self.parent.size() != dims.p() {
            return Err(Error::SizeMismatch { expected: dims.p(), actual: self.parent.size() });
        }
        let rank = self.parent.rank();
        let origin = rank_to_vector(rank, &dims)?;
        let mut subgroups = Vec::with_capacity(dims.d());
        for i in 0..dims.d() {
            let (color, key) = split_color_key(rank, i, &dims)?;
            let sub = self.parent.split(color as i64, key as i64)?;
            if sub.size() != dims.order(i) || sub.rank() != origin.get(i) {
                return Err(Error::Protocol(format!(
                    "sub-group {i} has size {} and rank {}, expected {} and {}",
                    sub.size(),
                    sub.rank(),
                    dims.order(i),
                    origin.get(i)
                )));
            }
            subgroups.push(sub);
        }
        self.factors = Some(Factors { dims, origin, subgroups });
        Ok(())
    }

    /// Drop the cached sub-groups.
    pub fn release(&mut self) {
        self.factors = None;
    }

    pub fn is_factorized(&self) -> bool {
        self.factors.is_some()
    }

    pub fn dims(&self) -> Option<&Dims> {
        self.factors.as_ref().map(|f| &f.dims)
    }

    pub fn origin(&self) -> Option<&Coord> {
        self.factors.as_ref().map(|f| &f.origin)
    }

    pub fn subgroup(&self, i: usize) -> Option<&ProcessGroup> {
        self.factors.as_ref().and_then(|f| f.subgroups.get(i))
    }

    pub fn subgroup_mut(&mut self, i: usize) -> Option<&mut ProcessGroup> {
        self.factors.as_mut().and_then(|f| f.subgroups.get_mut(i))
    }

    pub fn parent(&self) -> &ProcessGroup {
        &self.parent
    }

    pub fn parent_mut(&mut self) -> &mut ProcessGroup {
        &mut self.parent
    }

    /// Release the factorization and hand back the parent group.
    pub fn into_parent(mut self) -> ProcessGroup {
        self.factors = None;
        self.parent
    }

    /// Collective all-to-all over the parent group: block `i` of member `r`'s
    /// send region ends up as block `r` of member `i`'s receive region.
    pub fn alltoall(&mut self, send: &Region<'_>, recv: &mut RegionMut<'_>) -> Result<()> {
        self.alltoall_observed(send, recv, &mut NoopObserver)
    }

    pub fn alltoall_observed(
        &mut self,
        send: &Region<'_>,
        recv: &mut RegionMut<'_>,
        observer: &mut dyn EngineObserver,
    ) -> Result<()> {
        let Some(factors) = self.factors.as_mut() else {
            return self.parent.direct_alltoall(send, recv);
        };
        let block = send.block();
        if recv.block() != block {
            return Err(Error::BlockMismatch);
        }
        let dims = &factors.dims;
        let total = dims.p() * block.block_bytes();
        for len in [send.bytes().len(), recv.bytes().len()] {
            if len < total {
                return Err(Error::RegionTooSmall { needed: total, actual: len });
            }
        }
        let send = &send.bytes()[..total];
        let recv = &mut recv.bytes_mut()[..total];

        let mut temp = vec![0u8; total];
        observer.allocation(total);

        observer.round_boundary(0, BufferRole::Send, send);
        let schedule = buffer_schedule(dims.d());
        for (k, &step) in schedule.rounds().iter().enumerate() {
            let layout = engine_round_layout(dims, k, block)?;
            observer.round_started(k, step);
            let (out, inp) = select(step, send, recv, &mut temp);
            factors.subgroups[k].alltoall_bytes(out, inp, &layout)?;
            observer.round_boundary(k + 1, step.inp, inp);
        }
        Ok(())
    }
}

fn select<'a>(
    step: RoundBuffers,
    send: &'a [u8],
    recv: &'a mut [u8],
    temp: &'a mut [u8],
) -> (&'a [u8], &'a mut [u8]) {
    use BufferRole::*;
    match (step.out, step.inp) {
        (Send, Recv) => (send, recv),
        (Send, Temp) => (send, temp),
        (Recv, Temp) => (recv, temp),
        (Temp, Recv) => (temp, recv),
        other => unreachable!("schedule never produces {other:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::threads;
    use BufferRole::*;

    fn rb(out: BufferRole, inp: BufferRole) -> RoundBuffers {
        RoundBuffers { out, inp }
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(buffer_schedule(1).rounds(), &[rb(Send, Recv)]);
        assert_eq!(buffer_schedule(2).rounds(), &[rb(Send, Temp), rb(Temp, Recv)]);
        assert_eq!(buffer_schedule(3).rounds(), &[rb(Send, Recv), rb(Recv, Temp), rb(Temp, Recv)]);
    }

    #[test]
    fn traffic_formula() {
        assert_eq!(expected_block_traffic(&Dims::new(vec![5, 4]).unwrap()), 31);
        assert_eq!(expected_block_traffic(&Dims::new(vec![2, 3, 4]).unwrap()), 46);
        assert_eq!(expected_block_traffic(&Dims::new(vec![4, 3, 3, 4]).unwrap()), 408);
        assert_eq!(expected_block_traffic(&Dims::new(vec![13]).unwrap()), 12);
    }

    #[test]
    fn round_layouts_follow_row_major_digits() {
        let dims = Dims::new(vec![2, 3, 4]).unwrap();
        let b = BlockSpec::u32s(1);
        // round 0 talks along the slowest coordinate: contiguous halves
        let l0 = engine_round_layout(&dims, 0, b).unwrap();
        assert_eq!(l0.unit_offsets(1).unwrap().collect::<Vec<_>>(), (12..24).collect::<Vec<_>>());
        // the last round talks along the fastest coordinate
        let l2 = engine_round_layout(&dims, 2, b).unwrap();
        assert_eq!(l2.unit_count(), 4);
        // mirrored dims [4,3,2]: the middle coordinate (stride 4) varies slowest
        assert_eq!(l2.unit_offsets(1).unwrap().collect::<Vec<_>>(), vec![1, 13, 5, 17, 9, 21]);
        assert!(engine_round_layout(&dims, 3, b).is_err());
    }

    #[test]
    fn factorize_subgroup_membership() {
        let out = threads::run(6, |g| {
            let mut tc = factorize_group(g, Dims::new(vec![3, 2]).unwrap()).unwrap();
            let rank = tc.parent().rank() as u8;
            let mut peers = Vec::new();
            for i in 0..2 {
                let sub = tc.subgroup_mut(i).unwrap();
                let members = sub.allgather(&[rank]).unwrap().concat();
                peers.push((sub.rank(), members));
            }
            (peers, tc.origin().unwrap().values().to_vec())
        });
        assert_eq!(out[0].0, vec![(0, vec![0, 2, 4]), (0, vec![0, 1])]);
        assert_eq!(out[5].0, vec![(2, vec![1, 3, 5]), (1, vec![4, 5])]);
        assert_eq!(out[5].1, vec![2, 1]);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let out = threads::run(4, |g| {
            let mut tc = TorusComm::new(g);
            tc.factorize(Dims::new(vec![3, 2]).unwrap()).map(|_| ())
        });
        assert!(out.iter().all(|r| matches!(r, Err(Error::SizeMismatch { expected: 6, actual: 4 }))));
    }

    #[test]
    fn unfactorized_handle_falls_back_to_direct() {
        let out = threads::run(3, |g| {
            let mut tc = TorusComm::new(g);
            let r = tc.parent().rank() as u32;
            let send = [r * 10, r * 10 + 1, r * 10 + 2];
            let mut recv = [0u32; 3];
            tc.alltoall(&Region::from_elems(&send, 1), &mut RegionMut::from_elems(&mut recv, 1)).unwrap();
            recv
        });
        assert_eq!(out, vec![[0, 10, 20], [1, 11, 21], [2, 12, 22]]);
    }
}
