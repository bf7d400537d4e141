#![allow(dead_code)]

pub mod golden;

use torus_alltoall::engine::TorusComm;
use torus_alltoall::factorization::Dims;
use torus_alltoall::group::{ProcessGroup, Region, RegionMut};
use torus_alltoall::oracle;

/// Unit `j` of round `k` by brute force: the blocks whose prefix-stride
/// digit `k` equals `j`, ordered by digits `k+1..d` (first slowest) and then
/// by their position inside a segment.
pub fn brute_unit_offsets(k: usize, dims: &[usize], j: usize) -> Vec<usize> {
    let p: usize = dims.iter().product();
    let mut sigma = vec![1usize];
    for &f in dims {
        sigma.push(sigma.last().unwrap() * f);
    }
    let digit = |b: usize, i: usize| b / sigma[i] % dims[i];
    let mut blocks: Vec<usize> = (0..p).filter(|&b| digit(b, k) == j).collect();
    blocks.sort_by_key(|&b| {
        let mut key: Vec<usize> = (k + 1..dims.len()).map(|i| digit(b, i)).collect();
        key.push(b % sigma[k]);
        key
    });
    blocks
}

/// Every ordered factorization of `p` into factors >= 2, by plain recursion.
pub fn brute_ordered_factorizations(p: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 1 {
            if !prefix.is_empty() {
                out.push(prefix.clone());
            }
            return;
        }
        for f in 2..=n {
            if n.is_multiple_of(f) {
                prefix.push(f);
                go(n / f, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(p, &mut Vec::new(), &mut out);
    out
}

/// Run the factorized and the direct exchange on the same tagged input.
/// Returns (torus result, direct result, expected result).
pub fn exchange_both(
    world: &mut ProcessGroup,
    tc: &mut TorusComm,
    elems: usize,
) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    let p = world.size();
    let rank = world.rank();
    let send = oracle::send_buffer(p, rank, elems);
    let mut torus = vec![0u32; p * elems];
    let mut direct = vec![0u32; p * elems];
    tc.alltoall(&Region::from_elems(&send, elems), &mut RegionMut::from_elems(&mut torus, elems)).unwrap();
    world
        .direct_alltoall(&Region::from_elems(&send, elems), &mut RegionMut::from_elems(&mut direct, elems))
        .unwrap();
    (torus, direct, oracle::expected_recv(p, rank, elems))
}

pub fn dims(f: &[usize]) -> Dims {
    Dims::new(f.to_vec()).unwrap()
}
