//! Reference results and checks for all-to-all runs.
//!
//! Payload elements are 32-bit tags packing source rank (bits 20..32),
//! destination rank (bits 8..20) and element index (bits 0..8), so every
//! block says where it came from and where it was headed.

use std::collections::HashSet;
use std::fmt;

use crate::engine::{BufferRole, EngineObserver};
use crate::factorization::{rank_to_vector, Coord, Dims};

pub const MAX_RANKS: usize = 1 << 12;

/// Decoded payload element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag {
    pub src: usize,
    pub dst: usize,
    pub elem: usize,
}

impl Tag {
    pub fn encode(&self) -> u32 {
        debug_assert!(self.src < MAX_RANKS && self.dst < MAX_RANKS);
        ((self.src as u32) << 20) | ((self.dst as u32) << 8) | (self.elem as u32 & 0xff)
    }

    pub fn decode(v: u32) -> Tag {
        Tag { src: (v >> 20) as usize, dst: ((v >> 8) & 0xfff) as usize, elem: (v & 0xff) as usize }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(src {}, dst {}, elem {})", self.src, self.dst, self.elem)
    }
}

fn tagged_block(src: usize, dst: usize, elems: usize) -> impl Iterator<Item = u32> {
    (0..elems).map(move |e| Tag { src, dst, elem: e }.encode())
}

/// Send buffer of rank `r`: block `i` carries tags `(r, i)`.
pub fn send_buffer(p: usize, r: usize, elems_per_block: usize) -> Vec<u32> {
    (0..p).flat_map(|i| tagged_block(r, i, elems_per_block)).collect()
}

/// What rank `r` must hold after the exchange: block `i` carries `(i, r)`.
pub fn expected_recv(p: usize, r: usize, elems_per_block: usize) -> Vec<u32> {
    (0..p).flat_map(|i| tagged_block(i, r, elems_per_block)).collect()
}

/// Brute-force all-to-all: block `i` of sender `a` becomes block `a` of
/// receiver `i`.
pub fn transpose(sends: &[Vec<u32>], elems_per_block: usize) -> Vec<Vec<u32>> {
    let p = sends.len();
    (0..p)
        .map(|r| {
            (0..p)
                .flat_map(|a| sends[a][r * elems_per_block..(r + 1) * elems_per_block].iter().copied())
                .collect()
        })
        .collect()
}

/// First difference between two buffers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub block: usize,
    pub elem: usize,
    pub actual: u32,
    pub expected: u32,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "block {} element {}: got {} expected {}",
            self.block,
            self.elem,
            Tag::decode(self.actual),
            Tag::decode(self.expected)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyReport {
    Equal,
    LengthDiffers { actual: usize, expected: usize },
    Differs { mismatches: usize, first: Mismatch },
}

impl VerifyReport {
    pub fn is_equal(&self) -> bool {
        matches!(self, VerifyReport::Equal)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyReport::Equal => f.write_str("equal"),
            VerifyReport::LengthDiffers { actual, expected } => {
                write!(f, "length {actual} elements, expected {expected}")
            }
            VerifyReport::Differs { mismatches, first } => {
                write!(f, "{mismatches} elements differ, first at {first}")
            }
        }
    }
}

/// Exact comparison of two tagged buffers.
pub fn verify_equal(actual: &[u32], expected: &[u32], elems_per_block: usize) -> VerifyReport {
    if actual.len() != expected.len() {
        return VerifyReport::LengthDiffers { actual: actual.len(), expected: expected.len() };
    }
    let mut diffs = actual.iter().zip(expected).enumerate().filter(|(_, (a, e))| a != e);
    let Some((pos, (&a, &e))) = diffs.next() else {
        return VerifyReport::Equal;
    };
    let per = elems_per_block.max(1);
    VerifyReport::Differs {
        mismatches: 1 + diffs.count(),
        first: Mismatch { block: pos / per, elem: pos % per, actual: a, expected: e },
    }
}

/// Ranks whose coordinates agree with `origin` in every dimension where
/// `fixed(i)` holds, and are free elsewhere.
fn product_set(dims: &Dims, origin: &Coord, fixed: impl Fn(usize) -> bool) -> HashSet<usize> {
    (0..dims.p())
        .filter(|&r| {
            let c = rank_to_vector(r, dims).expect("rank below p");
            (0..dims.d()).all(|i| !fixed(i) || c.get(i) == origin.get(i))
        })
        .collect()
}

/// Source and destination sets a member must hold before round `k`.
///
/// Sources agree with `origin` in dimensions `k..d` and range freely over
/// `0..k`; destinations agree in `0..k` and range freely over `k..d`.
pub fn round_invariant_sets(k: usize, dims: &Dims, origin: &Coord) -> (HashSet<usize>, HashSet<usize>) {
    let sources = product_set(dims, origin, |i| i >= k);
    let destinations = product_set(dims, origin, |i| i < k);
    (sources, destinations)
}

/// Check a buffer seen between rounds: it must hold exactly one block for
/// every (source, destination) pair of the invariant sets, each block
/// intact.
pub fn check_round_invariant(
    k: usize,
    dims: &Dims,
    origin: &Coord,
    buffer: &[u32],
    elems_per_block: usize,
) -> Result<(), String> {
    if k > dims.d() {
        return Err(format!("round {k} beyond {} dimensions", dims.d()));
    }
    let p = dims.p();
    if buffer.len() != p * elems_per_block {
        return Err(format!("buffer holds {} elements, expected {}", buffer.len(), p * elems_per_block));
    }
    if elems_per_block == 0 {
        return Ok(());
    }
    let (sources, destinations) = round_invariant_sets(k, dims, origin);
    let mut seen = HashSet::with_capacity(p);
    for (b, block) in buffer.chunks_exact(elems_per_block).enumerate() {
        let head = Tag::decode(block[0]);
        for (e, &v) in block.iter().enumerate() {
            let t = Tag::decode(v);
            if t.src != head.src || t.dst != head.dst || t.elem != e & 0xff {
                return Err(format!("block {b} is torn: element {e} is {t}, block starts with {head}"));
            }
        }
        if !sources.contains(&head.src) {
            return Err(format!("block {b} comes from rank {}, not an allowed source", head.src));
        }
        if !destinations.contains(&head.dst) {
            return Err(format!("block {b} is headed to rank {}, not an allowed destination", head.dst));
        }
        if !seen.insert((head.src, head.dst)) {
            return Err(format!("block {b} duplicates pair ({}, {})", head.src, head.dst));
        }
    }
    // p distinct pairs drawn from a product set of size p: all present
    debug_assert_eq!(sources.len() * destinations.len(), p);
    Ok(())
}

/// Reinterpret native-endian bytes as tags, whatever their alignment.
pub fn words(bytes: &[u8]) -> Vec<u32> {
    bytes.chunks_exact(4).map(|c| u32::from_ne_bytes(c.try_into().unwrap())).collect()
}

/// Engine observer that checks every round boundary against the invariant
/// and records the engine's allocations.
#[derive(Debug, Clone)]
pub struct RoundChecker {
    dims: Dims,
    origin: Coord,
    elems_per_block: usize,
    boundaries: Vec<(usize, BufferRole)>,
    errors: Vec<String>,
    allocations: Vec<usize>,
}

impl RoundChecker {
    pub fn new(dims: Dims, origin: Coord, elems_per_block: usize) -> Self {
        RoundChecker {
            dims,
            origin,
            elems_per_block,
            boundaries: Vec::new(),
            errors: Vec::new(),
            allocations: Vec::new(),
        }
    }

    /// Invariant violations, plus a note if the boundaries seen were not
    /// exactly `0..=d`.
    pub fn errors(&self) -> Vec<String> {
        let mut out = self.errors.clone();
        let rounds: Vec<usize> = self.boundaries.iter().map(|b| b.0).collect();
        if rounds != (0..=self.dims.d()).collect::<Vec<_>>() {
            out.push(format!("boundaries fired for rounds {rounds:?}"));
        }
        out
    }

    pub fn boundaries(&self) -> &[(usize, BufferRole)] {
        &self.boundaries
    }

    pub fn allocations(&self) -> &[usize] {
        &self.allocations
    }
}

impl EngineObserver for RoundChecker {
    fn round_boundary(&mut self, round: usize, role: BufferRole, buffer: &[u8]) {
        self.boundaries.push((round, role));
        let tags = words(buffer);
        if let Err(e) = check_round_invariant(round, &self.dims, &self.origin, &tags, self.elems_per_block) {
            self.errors.push(format!("before round {round}: {e}"));
        }
    }

    fn allocation(&mut self, bytes: usize) {
        self.allocations.push(bytes);
    }
}
