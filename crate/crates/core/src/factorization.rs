//! Factorizations of a group size into torus dimension orders.
//!
//! Ranks are mapped to coordinates in row-major order (the last dimension
//! varies fastest), the same convention as an MPI Cartesian communicator
//! without reordering. Block strides used by the per-round layouts are
//! prefix products of the dimension orders.

use std::fmt;

use crate::error::{Error, Result};

/// Dimension orders `D[0..d]` of a torus with `p = D[0]·…·D[d-1]` members.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Dims {
    factors: Vec<usize>,
    p: usize,
}

impl Dims {
    /// Every factor must be at least 2 and there must be at least one.
    pub fn new(factors: Vec<usize>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidDims("no dimensions given".into()));
        }
        if let Some(bad) = factors.iter().find(|&&f| f < 2) {
            return Err(Error::InvalidDims(format!("dimension order {bad} in {factors:?} is below 2")));
        }
        let p = factors
            .iter()
            .try_fold(1usize, |acc, &f| acc.checked_mul(f))
            .ok_or_else(|| Error::InvalidDims(format!("product of {factors:?} overflows")))?;
        Ok(Dims { factors, p })
    }

    /// Number of dimensions `d`.
    pub fn d(&self) -> usize {
        self.factors.len()
    }

    /// Product of all dimension orders.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn order(&self, i: usize) -> usize {
        self.factors[i]
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    /// The same torus with the dimension order reversed.
    pub fn reversed(&self) -> Dims {
        let mut factors = self.factors.clone();
        factors.reverse();
        Dims { factors, p: self.p }
    }

    /// Row-major stride of dimension `i`: `Π_{j>i} D[j]`.
    pub fn row_major_stride(&self, i: usize) -> usize {
        self.factors[i + 1..].iter().product()
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.factors.iter().map(|x| x.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// Coordinates of one member in a [`Dims`] torus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coord {
    values: Vec<usize>,
    dims: Dims,
}

impl Coord {
    pub fn new(values: Vec<usize>, dims: Dims) -> Result<Self> {
        if values.len() != dims.d() {
            return Err(Error::InvalidDims(format!(
                "{} coordinates given for {} dimensions",
                values.len(),
                dims.d()
            )));
        }
        for (dim, (&value, &order)) in values.iter().zip(dims.factors()).enumerate() {
            if value >= order {
                return Err(Error::CoordOutOfRange { dim, value, order });
            }
        }
        Ok(Coord { values, dims })
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn get(&self, i: usize) -> usize {
        self.values[i]
    }
}

/// Prefix-product strides `σ[i] = Π_{k<i} D[k]`, `d + 1` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrideTable {
    sigma: Vec<usize>,
}

impl StrideTable {
    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    pub fn get(&self, i: usize) -> usize {
        self.sigma[i]
    }
}

/// Balanced factorization of `p` into `d` factors, each at least 2.
///
/// Among all such factorizations the one whose descending-sorted factor
/// vector is lexicographically smallest is returned, in non-increasing
/// order. That makes the largest factor as small as possible, then the
/// second largest, and so on.
pub fn dims_create(p: usize, d: usize) -> Result<Dims> {
    if p == 0 || d == 0 {
        return Err(Error::InvalidDims(format!("dims_create({p}, {d}) needs p >= 1 and d >= 1")));
    }
    let factors = lexmin_factorization(p, d).ok_or(Error::TooFewFactors { p, d })?;
    Dims::new(factors)
}

// Lexicographically smallest non-increasing factorization of `n` into `d`
// factors >= 2. The first factor is the smallest divisor for which the
// remainder still admits a factorization bounded by it; since the optimum
// for the remainder also minimizes its largest factor, checking that one
// candidate is enough.
fn lexmin_factorization(n: usize, d: usize) -> Option<Vec<usize>> {
    if d == 1 {
        return (n >= 2).then(|| vec![n]);
    }
    for f in divisors(n) {
        if f < 2 || f.checked_pow(d as u32).is_some_and(|v| v < n) {
            continue;
        }
        if let Some(rest) = lexmin_factorization(n / f, d - 1) {
            if rest[0] <= f {
                let mut out = Vec::with_capacity(d);
                out.push(f);
                out.extend(rest);
                return Some(out);
            }
        }
    }
    None
}

/// Ascending divisors of `n`.
fn divisors(n: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n.is_multiple_of(i) {
            small.push(i);
            if i != n / i {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Number of prime factors of `n` counted with multiplicity.
pub fn prime_factor_count(mut n: usize) -> usize {
    let mut count = 0;
    let mut f = 2;
    while f * f <= n {
        while n.is_multiple_of(f) {
            n /= f;
            count += 1;
        }
        f += 1;
    }
    if n > 1 {
        count += 1;
    }
    count
}

/// Every ordered factorization of `p` into factors >= 2 (all `d`).
pub fn ordered_factorizations(p: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 1 {
            if !prefix.is_empty() {
                out.push(prefix.clone());
            }
            return;
        }
        for f in divisors(n).into_iter().filter(|&f| f >= 2) {
            prefix.push(f);
            go(n / f, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if p >= 2 {
        go(p, &mut Vec::new(), &mut out);
    }
    out
}

/// Row-major coordinates of `rank`: `rank == Σ O[i]·Π_{j>i} D[j]`.
pub fn rank_to_vector(rank: usize, dims: &Dims) -> Result<Coord> {
    if rank >= dims.p() {
        return Err(Error::RankOutOfRange { rank, size: dims.p() });
    }
    let mut values = vec![0; dims.d()];
    let mut rest = rank;
    for (slot, &order) in values.iter_mut().zip(dims.factors()).rev() {
        *slot = rest % order;
        rest /= order;
    }
    Ok(Coord { values, dims: dims.clone() })
}

pub fn vector_to_rank(coord: &Coord) -> usize {
    coord.values.iter().zip(coord.dims.factors()).fold(0, |acc, (&value, &order)| acc * order + value)
}

pub fn stride_table(dims: &Dims) -> StrideTable {
    let mut sigma = Vec::with_capacity(dims.d() + 1);
    sigma.push(1);
    for &order in dims.factors() {
        let last = *sigma.last().unwrap();
        sigma.push(last * order);
    }
    StrideTable { sigma }
}

/// Color and key for splitting off the sub-group that spans dimension `i`.
///
/// The color is the rank of the member with coordinate 0 in dimension `i`
/// and otherwise the same coordinates; the key is the coordinate itself.
pub fn split_color_key(rank: usize, i: usize, dims: &Dims) -> Result<(usize, usize)> {
    if i >= dims.d() {
        return Err(Error::DimOutOfRange { index: i, d: dims.d() });
    }
    let coord = rank_to_vector(rank, dims)?;
    let o = coord.get(i);
    Ok((rank - o * dims.row_major_stride(i), o))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(f: &[usize]) -> Dims {
        Dims::new(f.to_vec()).unwrap()
    }

    #[test]
    fn dims_create_table_values() {
        assert_eq!(dims_create(1152, 2).unwrap().factors(), &[36, 32]);
        assert_eq!(dims_create(1152, 3).unwrap().factors(), &[12, 12, 8]);
        assert_eq!(dims_create(1152, 4).unwrap().factors(), &[8, 6, 6, 4]);
        assert_eq!(dims_create(1152, 9).unwrap().factors(), &[3, 3, 2, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn dims_create_small_cases() {
        assert_eq!(dims_create(7, 1).unwrap().factors(), &[7]);
        assert_eq!(dims_create(16, 2).unwrap().factors(), &[4, 4]);
        assert_eq!(dims_create(16, 4).unwrap().factors(), &[2, 2, 2, 2]);
        assert!(matches!(dims_create(8, 4), Err(Error::TooFewFactors { p: 8, d: 4 })));
        assert!(dims_create(1, 1).is_err());
        assert!(dims_create(0, 1).is_err());
        assert!(dims_create(12, 0).is_err());
    }

    #[test]
    fn dims_rejects_unit_factor() {
        assert!(Dims::new(vec![4, 1, 3]).is_err());
        assert!(Dims::new(vec![]).is_err());
    }

    #[test]
    fn rank_vector_examples() {
        let d = dims(&[2, 3, 4]);
        assert_eq!(rank_to_vector(0, &d).unwrap().values(), &[0, 0, 0]);
        assert_eq!(rank_to_vector(7, &d).unwrap().values(), &[0, 1, 3]);
        assert_eq!(rank_to_vector(23, &d).unwrap().values(), &[1, 2, 3]);
        assert!(matches!(rank_to_vector(24, &d), Err(Error::RankOutOfRange { .. })));

        assert_eq!(vector_to_rank(&Coord::new(vec![0, 0, 0], d.clone()).unwrap()), 0);
        assert_eq!(vector_to_rank(&Coord::new(vec![1, 2, 3], d.clone()).unwrap()), 23);
        assert_eq!(vector_to_rank(&Coord::new(vec![0, 1, 3], d.clone()).unwrap()), 7);
        assert!(matches!(
            Coord::new(vec![0, 3, 0], d),
            Err(Error::CoordOutOfRange { dim: 1, value: 3, order: 3 })
        ));
    }

    #[test]
    fn stride_table_examples() {
        assert_eq!(stride_table(&dims(&[5, 4])).sigma(), &[1, 5, 20]);
        assert_eq!(stride_table(&dims(&[2, 3, 4])).sigma(), &[1, 2, 6, 24]);
        assert_eq!(stride_table(&dims(&[4, 3, 3, 4])).sigma(), &[1, 4, 12, 36, 144]);
    }

    #[test]
    fn split_color_key_examples() {
        let d = dims(&[2, 3, 4]);
        assert_eq!(split_color_key(7, 1, &d).unwrap(), (3, 1));
        assert_eq!(split_color_key(3, 1, &d).unwrap().0, 3);
        assert_eq!(split_color_key(11, 1, &d).unwrap().0, 3);
        assert_eq!(split_color_key(0, 0, &d).unwrap(), (0, 0));
        assert_eq!(split_color_key(23, 2, &d).unwrap(), (20, 3));
        for r in 20..24 {
            assert_eq!(split_color_key(r, 2, &d).unwrap().0, 20);
        }
        assert!(split_color_key(0, 3, &d).is_err());
    }

    #[test]
    fn ordered_factorizations_of_12() {
        let mut all = ordered_factorizations(12);
        all.sort();
        assert_eq!(
            all,
            vec![
                vec![2, 2, 3],
                vec![2, 3, 2],
                vec![2, 6],
                vec![3, 2, 2],
                vec![3, 4],
                vec![4, 3],
                vec![6, 2],
                vec![12],
            ]
        );
        assert!(ordered_factorizations(1).is_empty());
    }

    #[test]
    fn prime_factor_counts() {
        assert_eq!(prime_factor_count(1152), 9);
        assert_eq!(prime_factor_count(7), 1);
        assert_eq!(prime_factor_count(1), 0);
        assert_eq!(prime_factor_count(144), 6);
    }
}
