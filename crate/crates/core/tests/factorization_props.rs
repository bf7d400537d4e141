mod common;

use std::collections::BTreeMap;

use common::{brute_ordered_factorizations, dims};
use proptest::prelude::*;
use torus_alltoall::factorization::{
    dims_create, ordered_factorizations, prime_factor_count, rank_to_vector, split_color_key, stride_table,
    vector_to_rank, Coord,
};

/// Balanced choice by exhaustive search: sort every d-factor factorization
/// descending and keep the lexicographically smallest.
fn brute_balanced(p: usize, d: usize) -> Option<Vec<usize>> {
    brute_ordered_factorizations(p)
        .into_iter()
        .filter(|f| f.len() == d)
        .map(|mut f| {
            f.sort_unstable_by(|a, b| b.cmp(a));
            f
        })
        .min()
}

#[test]
fn balanced_factorizations_of_1152() {
    assert_eq!(dims_create(1152, 2).unwrap().factors(), &[36, 32]);
    assert_eq!(dims_create(1152, 3).unwrap().factors(), &[12, 12, 8]);
    assert_eq!(dims_create(1152, 4).unwrap().factors(), &[8, 6, 6, 4]);
    assert_eq!(dims_create(1152, 9).unwrap().factors(), &[3, 3, 2, 2, 2, 2, 2, 2, 2]);
    assert!(dims_create(1152, 10).is_err());
}

#[test]
fn balanced_matches_brute_force_up_to_300() {
    for p in 2..=300 {
        for d in 1..=prime_factor_count(p) + 1 {
            let got = dims_create(p, d).ok().map(|x| x.factors().to_vec());
            assert_eq!(got, brute_balanced(p, d), "p={p} d={d}");
        }
    }
}

#[test]
fn ordered_factorizations_match_brute_force() {
    for p in 1..=64 {
        let mut got = ordered_factorizations(p);
        let mut want = brute_ordered_factorizations(p);
        got.sort();
        want.sort();
        assert_eq!(got, want, "p={p}");
    }
}

#[test]
fn coordinate_examples() {
    let d = dims(&[2, 3, 4]);
    assert_eq!(rank_to_vector(0, &d).unwrap().values(), &[0, 0, 0]);
    assert_eq!(rank_to_vector(23, &d).unwrap().values(), &[1, 2, 3]);
    assert_eq!(rank_to_vector(13, &d).unwrap().values(), &[1, 0, 1]);
    assert!(rank_to_vector(24, &d).is_err());
    assert_eq!(stride_table(&d).sigma(), &[1, 2, 6, 24]);
    assert_eq!(stride_table(&dims(&[4, 3, 3, 4])).sigma(), &[1, 4, 12, 36, 144]);
}

fn any_dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..8, 1..6)
        .prop_filter("at most 2000 ranks", |f| f.iter().product::<usize>() <= 2000)
}

proptest! {
    #[test]
    fn rank_vector_round_trip(f in any_dims(), seed in any::<usize>()) {
        let d = dims(&f);
        let r = seed % d.p();
        let c = rank_to_vector(r, &d).unwrap();
        prop_assert_eq!(vector_to_rank(&c), r);
        // row-major: last coordinate varies fastest
        let mut back = 0;
        for (i, &v) in c.values().iter().enumerate() {
            prop_assert!(v < f[i]);
            back = back * f[i] + v;
        }
        prop_assert_eq!(back, r);
        prop_assert_eq!(vector_to_rank(&Coord::new(c.values().to_vec(), d).unwrap()), r);
    }

    #[test]
    fn split_colors_partition_along_one_dimension(f in any_dims(), i_pick in 0usize..6) {
        let d = dims(&f);
        let i = i_pick % f.len();
        let mut groups: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for r in 0..d.p() {
            let (color, key) = split_color_key(r, i, &d).unwrap();
            groups.entry(color).or_default().push((key, r));
        }
        prop_assert_eq!(groups.len(), d.p() / f[i]);
        for (color, mut members) in groups {
            members.sort();
            prop_assert_eq!(members.len(), f[i]);
            let base = rank_to_vector(color, &d).unwrap();
            prop_assert_eq!(base.get(i), 0);
            for (pos, (key, r)) in members.into_iter().enumerate() {
                prop_assert_eq!(key, pos);
                let c = rank_to_vector(r, &d).unwrap();
                prop_assert_eq!(c.get(i), key);
                for j in (0..f.len()).filter(|&j| j != i) {
                    prop_assert_eq!(c.get(j), base.get(j));
                }
            }
        }
    }

    #[test]
    fn balanced_is_optimal(p in 2usize..5000, d in 1usize..6) {
        let got = dims_create(p, d).ok().map(|x| x.factors().to_vec());
        prop_assert_eq!(got, brute_balanced(p, d));
    }
}
