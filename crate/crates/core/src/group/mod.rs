//! Process groups: rank-addressed collective endpoints over a transport.
//!
//! A [`ProcessGroup`] is owned by one participant. All members of a group
//! must call the same collectives in the same order; every collective bumps
//! a per-group sequence number that tags its messages, so collectives on
//! different groups never mix even when they share a transport.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::layout::{BlockSpec, RoundLayout, Run};

pub mod tcp;
pub mod threads;
pub mod wire;

/// Read-only block buffer handed to a collective.
#[derive(Debug, Clone, Copy)]
pub struct Region<'a> {
    bytes: &'a [u8],
    block: BlockSpec,
}

impl<'a> Region<'a> {
    pub fn new(bytes: &'a [u8], block: BlockSpec) -> Self {
        Region { bytes, block }
    }

    /// View a typed slice as blocks of `elems_per_block` elements.
    pub fn from_elems<T: bytemuck::Pod>(elems: &'a [T], elems_per_block: usize) -> Self {
        let block =
            BlockSpec::new(elems_per_block, std::mem::size_of::<T>()).expect("zero-sized element type");
        Region { bytes: bytemuck::cast_slice(elems), block }
    }

    pub fn bytes(&self) -> &'a [u8] {
        self.bytes
    }

    pub fn block(&self) -> BlockSpec {
        self.block
    }

    /// Whole blocks that fit; unbounded for zero-size blocks.
    pub fn capacity_blocks(&self) -> usize {
        capacity(self.bytes.len(), self.block)
    }
}

/// Writable block buffer handed to a collective.
#[derive(Debug)]
pub struct RegionMut<'a> {
    bytes: &'a mut [u8],
    block: BlockSpec,
}

impl<'a> RegionMut<'a> {
    pub fn new(bytes: &'a mut [u8], block: BlockSpec) -> Self {
        RegionMut { bytes, block }
    }

    pub fn from_elems<T: bytemuck::Pod>(elems: &'a mut [T], elems_per_block: usize) -> Self {
        let block =
            BlockSpec::new(elems_per_block, std::mem::size_of::<T>()).expect("zero-sized element type");
        RegionMut { bytes: bytemuck::cast_slice_mut(elems), block }
    }

    pub fn bytes(&self) -> &[u8] {
        self.bytes
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        self.bytes
    }

    pub fn block(&self) -> BlockSpec {
        self.block
    }

    pub fn capacity_blocks(&self) -> usize {
        capacity(self.bytes.len(), self.block)
    }
}

fn capacity(len: usize, block: BlockSpec) -> usize {
    match block.block_bytes() {
        0 => usize::MAX,
        b => len / b,
    }
}

/// Per-participant traffic record, shared by a group and every group split
/// from it, so the numbers cover all traffic of one participant.
#[derive(Debug, Default)]
pub(crate) struct Traffic {
    blocks_sent: AtomicU64,
    bytes_sent: AtomicU64,
    bytes_delivered: AtomicU64,
    splits: AtomicU64,
    groups_created: AtomicU64,
    groups_released: AtomicU64,
}

/// Snapshot of a participant's traffic counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Blocks sent to other members (self blocks excluded).
    pub blocks_sent: u64,
    pub bytes_sent: u64,
    /// Bytes written into this participant's receive buffers by the
    /// transport, self copies included.
    pub bytes_delivered: u64,
    /// Completed split collectives.
    pub splits: u64,
    pub groups_created: u64,
    pub groups_released: u64,
}

impl Counters {
    pub fn since(&self, earlier: &Counters) -> Counters {
        Counters {
            blocks_sent: self.blocks_sent - earlier.blocks_sent,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_delivered: self.bytes_delivered - earlier.bytes_delivered,
            splits: self.splits - earlier.splits,
            groups_created: self.groups_created - earlier.groups_created,
            groups_released: self.groups_released - earlier.groups_released,
        }
    }
}

/// Transport side of one member's view of one group.
pub(crate) trait Link: Send {
    /// Personalized exchange of byte messages; `outgoing[i]` goes to member
    /// `i` and the result holds the message from each member.
    fn exchange(&mut self, seq: u32, outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>>;

    /// Layout-driven all-to-all. Regions are already validated.
    fn alltoall(&mut self, seq: u32, send: &[u8], recv: &mut [u8], layout: &RoundLayout) -> Result<()>;

    /// Link for a new group made of the given members of this group
    /// (indices into this group), where this member sits at `index`.
    fn derive(&self, id: u64, members: &[usize], index: usize) -> Result<Box<dyn Link>>;
}

/// A rank-addressed collective endpoint.
pub struct ProcessGroup {
    id: u64,
    rank: usize,
    size: usize,
    seq: u32,
    link: Box<dyn Link>,
    traffic: Arc<Traffic>,
    derived: bool,
}

impl std::fmt::Debug for ProcessGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessGroup")
            .field("id", &self.id)
            .field("rank", &self.rank)
            .field("size", &self.size)
            .field("seq", &self.seq)
            .finish()
    }
}

impl ProcessGroup {
    pub(crate) fn world(rank: usize, size: usize, link: Box<dyn Link>) -> Self {
        ProcessGroup {
            id: 0,
            rank,
            size,
            seq: 0,
            link,
            traffic: Arc::new(Traffic::default()),
            derived: false,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Identifier shared by all members of this group.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn counters(&self) -> Counters {
        let t = &self.traffic;
        Counters {
            blocks_sent: t.blocks_sent.load(Ordering::Relaxed),
            bytes_sent: t.bytes_sent.load(Ordering::Relaxed),
            bytes_delivered: t.bytes_delivered.load(Ordering::Relaxed),
            splits: t.splits.load(Ordering::Relaxed),
            groups_created: t.groups_created.load(Ordering::Relaxed),
            groups_released: t.groups_released.load(Ordering::Relaxed),
        }
    }

    fn next_seq(&mut self) -> u32 {
        let s = self.seq;
        self.seq = self.seq.wrapping_add(1);
        s
    }

    /// Collective split: members passing the same `color` form a new group,
    /// ranked by ascending `key` with ties broken by rank in this group.
    pub fn split(&mut self, color: i64, key: i64) -> Result<ProcessGroup> {
        let seq = self.next_seq();
        let mut mine = Vec::with_capacity(16);
        mine.extend_from_slice(&color.to_le_bytes());
        mine.extend_from_slice(&key.to_le_bytes());
        let all = self.link.exchange(seq, vec![mine; self.size])?;

        let mut peers = Vec::new();
        for (parent_rank, msg) in all.iter().enumerate() {
            let (c, k) = decode_color_key(msg)
                .ok_or_else(|| Error::Protocol(format!("malformed split message from rank {parent_rank}")))?;
            if c == color {
                peers.push((k, parent_rank));
            }
        }
        peers.sort_unstable();
        let members: Vec<usize> = peers.iter().map(|&(_, r)| r).collect();
        let index = members
            .iter()
            .position(|&r| r == self.rank)
            .ok_or_else(|| Error::Protocol("split lost the calling member".into()))?;

        let id = derive_group_id(self.id, seq, color);
        let link = self.link.derive(id, &members, index)?;
        self.traffic.splits.fetch_add(1, Ordering::Relaxed);
        self.traffic.groups_created.fetch_add(1, Ordering::Relaxed);
        Ok(ProcessGroup {
            id,
            rank: index,
            size: members.len(),
            seq: 0,
            link,
            traffic: Arc::clone(&self.traffic),
            derived: true,
        })
    }

    /// A congruent copy of this group with its own message space.
    pub fn duplicate(&mut self) -> Result<ProcessGroup> {
        let rank = self.rank as i64;
        self.split(0, rank)
    }

    /// No member returns before every member has entered.
    pub fn barrier(&mut self) -> Result<()> {
        let seq = self.next_seq();
        self.link.exchange(seq, vec![Vec::new(); self.size])?;
        Ok(())
    }

    /// Every member contributes `bytes`; all receive every contribution in
    /// rank order.
    pub fn allgather(&mut self, bytes: &[u8]) -> Result<Vec<Vec<u8>>> {
        let seq = self.next_seq();
        self.link.exchange(seq, vec![bytes.to_vec(); self.size])
    }

    /// Layout-driven all-to-all: unit `b` of this member's send region lands
    /// in unit `a` of member `b`'s receive region, where `a` is this
    /// member's rank. All members must pass equal layouts.
    pub fn alltoall(
        &mut self,
        send: &Region<'_>,
        recv: &mut RegionMut<'_>,
        layout: &RoundLayout,
    ) -> Result<()> {
        if send.block() != layout.block() || recv.block() != layout.block() {
            return Err(Error::BlockMismatch);
        }
        self.alltoall_bytes(send.bytes(), recv.bytes_mut(), layout)
    }

    pub(crate) fn alltoall_bytes(
        &mut self,
        send: &[u8],
        recv: &mut [u8],
        layout: &RoundLayout,
    ) -> Result<()> {
        if layout.unit_count() != self.size {
            return Err(Error::SizeMismatch { expected: self.size, actual: layout.unit_count() });
        }
        let needed = layout.buffer_bytes();
        for len in [send.len(), recv.len()] {
            if len < needed {
                return Err(Error::RegionTooSmall { needed, actual: len });
            }
        }
        let send = &send[..needed];
        let recv = &mut recv[..needed];
        if needed > 0 && overlaps(send, recv) {
            return Err(Error::Overlap);
        }

        let seq = self.next_seq();
        self.link.alltoall(seq, send, recv, layout)?;

        let unit_bytes = layout.unit_bytes() as u64;
        if unit_bytes > 0 {
            let peers = (self.size - 1) as u64;
            let t = &self.traffic;
            t.blocks_sent.fetch_add(peers * layout.blocks_per_unit() as u64, Ordering::Relaxed);
            t.bytes_sent.fetch_add(peers * unit_bytes, Ordering::Relaxed);
            t.bytes_delivered.fetch_add(self.size as u64 * unit_bytes, Ordering::Relaxed);
        }
        Ok(())
    }

    /// Plain all-to-all: block `i` of this member goes to member `i`.
    pub fn direct_alltoall(&mut self, send: &Region<'_>, recv: &mut RegionMut<'_>) -> Result<()> {
        if send.block() != recv.block() {
            return Err(Error::BlockMismatch);
        }
        let layout = RoundLayout::identity(self.size, send.block());
        self.alltoall(send, recv, &layout)
    }
}

impl Drop for ProcessGroup {
    fn drop(&mut self) {
        if self.derived {
            self.traffic.groups_released.fetch_add(1, Ordering::Relaxed);
        }
    }
}

fn overlaps(a: &[u8], b: &[u8]) -> bool {
    let a0 = a.as_ptr() as usize;
    let b0 = b.as_ptr() as usize;
    a0 < b0 + b.len() && b0 < a0 + a.len()
}

fn decode_color_key(msg: &[u8]) -> Option<(i64, i64)> {
    let color = i64::from_le_bytes(msg.get(0..8)?.try_into().ok()?);
    let key = i64::from_le_bytes(msg.get(8..16)?.try_into().ok()?);
    Some((color, key))
}

// splitmix64 finalizer over (parent, seq, color); every member computes the
// same id without communication.
fn derive_group_id(parent: u64, seq: u32, color: i64) -> u64 {
    let mut z = parent
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((seq as u64) << 32)
        .wrapping_add(color as u64)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    // 0 is the world group, u64::MAX is reserved for connection setup
    match z {
        0 | u64::MAX => 1,
        z => z,
    }
}

/// Copy from `src` runs to `dst` runs, treating each list as one stream.
pub(crate) fn copy_runs(
    src: &[u8],
    src_runs: impl IntoIterator<Item = Run>,
    dst: &mut [u8],
    dst_runs: impl IntoIterator<Item = Run>,
) {
    let mut dst_runs = dst_runs.into_iter();
    let mut cur: Option<Run> = None;
    for mut s in src_runs {
        while s.len > 0 {
            let d = match cur.take() {
                Some(d) if d.len > 0 => d,
                _ => dst_runs.next().expect("destination runs shorter than source"),
            };
            let n = s.len.min(d.len);
            dst[d.offset..d.offset + n].copy_from_slice(&src[s.offset..s.offset + n]);
            s = Run { offset: s.offset + n, len: s.len - n };
            cur = Some(Run { offset: d.offset + n, len: d.len - n });
        }
    }
}

/// `runs` shifted to unit `unit` with the given unit stride.
pub(crate) fn shifted(runs: &[Run], unit: usize, stride: usize) -> impl Iterator<Item = Run> + '_ {
    let shift = unit * stride;
    runs.iter().map(move |r| Run { offset: r.offset + shift, len: r.len })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_runs_handles_misaligned_runs() {
        let src: Vec<u8> = (0..10).collect();
        let mut dst = vec![0u8; 10];
        copy_runs(
            &src,
            [Run { offset: 0, len: 3 }, Run { offset: 5, len: 3 }],
            &mut dst,
            [Run { offset: 9, len: 1 }, Run { offset: 1, len: 5 }],
        );
        assert_eq!(dst, vec![0, 1, 2, 5, 6, 7, 0, 0, 0, 0]);
    }

    #[test]
    fn overlap_detection() {
        let buf = [0u8; 16];
        assert!(overlaps(&buf[0..8], &buf[4..12]));
        assert!(!overlaps(&buf[0..8], &buf[8..16]));
    }

    #[test]
    fn group_ids_are_distinct_per_color_and_seq() {
        let a = derive_group_id(0, 1, 3);
        assert_ne!(a, derive_group_id(0, 1, 4));
        assert_ne!(a, derive_group_id(0, 2, 3));
        assert_ne!(a, derive_group_id(7, 1, 3));
        assert_ne!(a, 0);
    }
}
