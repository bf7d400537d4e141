//! Benchmark, verification and layout-dump drivers behind the CLI.
//!
//! Timing protocol: for every element count and algorithm, `warmups`
//! unmeasured runs, then `reps` measured runs. Each run is preceded by two
//! barriers; every participant times its own call on a monotonic clock.
//! Per repetition the slowest participant counts, and the fastest such
//! repetition is reported.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::engine::{expected_block_traffic, TorusComm};
use crate::error::{Error, Result};
use crate::factorization::{
    dims_create, ordered_factorizations, prime_factor_count, rank_to_vector, stride_table, Dims,
};
use crate::group::tcp::{self, TcpOptions};
use crate::group::{threads, ProcessGroup, Region, RegionMut};
use crate::layout::{build_round_layout, BlockSpec};
use crate::oracle::{self, RoundChecker};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Threads,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "threads" => Ok(TransportKind::Threads),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(format!("unknown transport {other:?}, expected threads or tcp")),
        }
    }
}

/// `a,b,c` or `auto:d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DimsSpec {
    Explicit(Vec<usize>),
    Auto(usize),
}

impl FromStr for DimsSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(d) = s.strip_prefix("auto:") {
            return d.parse().map(DimsSpec::Auto).map_err(|_| format!("bad dimension count in {s:?}"));
        }
        parse_list(s).map(DimsSpec::Explicit)
    }
}

impl DimsSpec {
    pub fn resolve(&self, p: usize) -> Result<Dims> {
        match self {
            DimsSpec::Auto(d) => dims_create(p, *d),
            DimsSpec::Explicit(factors) => {
                let dims = Dims::new(factors.clone())?;
                if dims.p() != p {
                    return Err(Error::InvalidDims(format!("{dims} multiplies to {}, not {p}", dims.p())));
                }
                Ok(dims)
            }
        }
    }
}

/// Comma-separated unsigned integers.
pub fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| format!("bad integer {x:?} in {s:?}")))
        .collect()
}

/// 1..9, 10..90, …, 1000..9000, 10000.
pub fn default_counts() -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 1;
    while decade < 10_000 {
        out.extend((1..10).map(|i| i * decade));
        decade *= 10;
    }
    out.push(10_000);
    out
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub p: usize,
    pub transport: TransportKind,
    pub dims: Vec<DimsSpec>,
    pub counts: Vec<usize>,
    pub reps: usize,
    pub warmups: usize,
    pub check: bool,
    /// Join an external TCP world as this rank instead of spawning all ranks.
    pub tcp_rank: Option<usize>,
    pub tcp_root: Option<String>,
    pub timeout: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            p: 4,
            transport: TransportKind::Threads,
            dims: vec![DimsSpec::Auto(2)],
            counts: default_counts(),
            reps: 40,
            warmups: 8,
            check: false,
            tcp_rank: None,
            tcp_root: None,
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchRow {
    pub p: usize,
    pub dims: String,
    pub algorithm: String,
    pub elems_per_block: usize,
    pub bytes_per_block: usize,
    pub reps: usize,
    pub warmups: usize,
    pub time_ns_min_of_max: u64,
}

pub const CSV_HEADER: &str =
    "p,dims,algorithm,elems_per_block,bytes_per_block,reps,warmups,time_ns_min_of_max";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckOutcome {
    pub algorithm: String,
    pub elems_per_block: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub checks: Vec<CheckOutcome>,
}

impl BenchReport {
    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Torus time over direct time, per torus variant and element count.
    pub fn ratios(&self) -> Vec<(String, usize, f64)> {
        let mut out = Vec::new();
        for row in self.rows.iter().filter(|r| r.algorithm != "direct") {
            let direct = self
                .rows
                .iter()
                .find(|d| d.algorithm == "direct" && d.elems_per_block == row.elems_per_block);
            if let Some(direct) = direct {
                let ratio = row.time_ns_min_of_max as f64 / direct.time_ns_min_of_max.max(1) as f64;
                out.push((format!("{} [{}]", row.algorithm, row.dims), row.elems_per_block, ratio));
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let passed = self.checks.iter().filter(|c| c.passed).count();
        if !self.checks.is_empty() {
            let _ = writeln!(s, "checks: {passed}/{} passed", self.checks.len());
            for c in self.checks.iter().filter(|c| !c.passed) {
                let _ = writeln!(s, "  FAILED {} at {} elements", c.algorithm, c.elems_per_block);
            }
        }
        let _ = writeln!(s, "torus/direct time ratio (below 1 means the torus variant is faster):");
        for (alg, count, ratio) in self.ratios() {
            let _ = writeln!(s, "  {alg:<24} {count:>6} elems  {ratio:.3}");
        }
        s
    }
}

pub fn write_csv(rows: &[BenchRow], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.p,
            r.dims,
            r.algorithm,
            r.elems_per_block,
            r.bytes_per_block,
            r.reps,
            r.warmups,
            r.time_ns_min_of_max
        )?;
    }
    Ok(())
}

/// Run the benchmark. Returns the report on the coordinating rank and
/// `None` on other ranks of an external TCP world.
pub fn bench_run(cfg: &BenchConfig) -> Result<Option<BenchReport>> {
    let dims: Vec<Dims> = cfg.dims.iter().map(|s| s.resolve(cfg.p)).collect::<Result<_>>()?;
    if cfg.p == 0 || cfg.p > oracle::MAX_RANKS {
        return Err(Error::InvalidDims(format!("p must be in 1..={}", oracle::MAX_RANKS)));
    }
    if cfg.reps == 0 {
        return Err(Error::InvalidDims("at least one measured repetition is required".into()));
    }
    let opts = TcpOptions { timeout: cfg.timeout };
    match (cfg.transport, cfg.tcp_rank) {
        (TransportKind::Tcp, Some(rank)) => {
            let root = cfg
                .tcp_root
                .as_deref()
                .ok_or_else(|| Error::Protocol("--rank needs --root host:port".into()))?;
            let group = tcp::join(rank, cfg.p, root, &opts)?;
            bench_participant(group, cfg, &dims)
        }
        (TransportKind::Tcp, None) => {
            let outs = tcp::run_local(cfg.p, &opts, |g| bench_participant(g, cfg, &dims))?;
            first_report(outs)
        }
        (TransportKind::Threads, _) => {
            let outs = threads::run(cfg.p, |g| bench_participant(g, cfg, &dims));
            first_report(outs)
        }
    }
}

fn first_report(outs: Vec<Result<Option<BenchReport>>>) -> Result<Option<BenchReport>> {
    let mut report = None;
    for out in outs {
        if let Some(r) = out? {
            report = Some(r);
        }
    }
    Ok(report)
}

enum Variant {
    Direct,
    Torus(Box<TorusComm>),
}

impl Variant {
    fn run(&mut self, world: &mut ProcessGroup, send: &Region<'_>, recv: &mut RegionMut<'_>) -> Result<()> {
        match self {
            Variant::Direct => world.direct_alltoall(send, recv),
            Variant::Torus(tc) => {
                if !tc.is_factorized() {
                    log::warn!("group is not factorized, falling back to the direct all-to-all");
                }
                tc.alltoall(send, recv)
            }
        }
    }
}

/// One participant's share of [`bench_run`].
pub fn bench_participant(
    mut world: ProcessGroup,
    cfg: &BenchConfig,
    dims: &[Dims],
) -> Result<Option<BenchReport>> {
    let p = world.size();
    let rank = world.rank();

    let mut variants: Vec<(String, String, Variant)> =
        vec![("direct".into(), p.to_string(), Variant::Direct)];
    for d in dims {
        let mut tc = TorusComm::new(world.duplicate()?);
        tc.factorize(d.clone())?;
        variants.push((format!("torus-d{}", d.d()), d.to_string(), Variant::Torus(Box::new(tc))));
    }

    let mut report = BenchReport::default();
    for &count in &cfg.counts {
        let block = BlockSpec::u32s(count);
        let send = oracle::send_buffer(p, rank, count);
        let mut recv = vec![0u32; p * count];
        let expected = cfg.check.then(|| oracle::expected_recv(p, rank, count));

        for (algorithm, dims_label, variant) in variants.iter_mut() {
            let send_region = Region::from_elems(&send, count);
            if let Some(expected) = &expected {
                recv.fill(0);
                variant.run(&mut world, &send_region, &mut RegionMut::from_elems(&mut recv, count))?;
                let ok = oracle::verify_equal(&recv, expected, count).is_equal();
                let all = world.allgather(&[ok as u8])?;
                report.checks.push(CheckOutcome {
                    algorithm: algorithm.clone(),
                    elems_per_block: count,
                    passed: all.iter().all(|m| m == &[1]),
                });
            }

            let mut times = Vec::with_capacity(cfg.reps);
            for i in 0..cfg.warmups + cfg.reps {
                world.barrier()?;
                world.barrier()?;
                let start = Instant::now();
                variant.run(&mut world, &send_region, &mut RegionMut::from_elems(&mut recv, count))?;
                let ns = start.elapsed().as_nanos() as u64;
                if i >= cfg.warmups {
                    times.push(ns);
                }
            }
            let encoded: Vec<u8> = times.iter().flat_map(|t| t.to_le_bytes()).collect();
            let gathered = world.allgather(&encoded)?;
            if rank == 0 {
                let per_rank: Vec<Vec<u64>> = gathered
                    .iter()
                    .map(|b| b.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
                    .collect();
                let best = (0..cfg.reps)
                    .map(|rep| per_rank.iter().map(|t| t[rep]).max().unwrap_or(0))
                    .min()
                    .unwrap_or(0);
                report.rows.push(BenchRow {
                    p,
                    dims: dims_label.clone(),
                    algorithm: algorithm.clone(),
                    elems_per_block: count,
                    bytes_per_block: block.block_bytes(),
                    reps: cfg.reps,
                    warmups: cfg.warmups,
                    time_ns_min_of_max: best,
                });
            }
        }
    }
    world.barrier()?;
    Ok((rank == 0).then_some(report))
}

/// Index table of round `k` in the form
/// `R'_{[σ(k)]…[σ(d-1)]}[D[k]]…[D[d-1]] = [..][..]…` followed by one row
/// per unit.
pub fn layout_dump(dims: &Dims, k: usize) -> Result<String> {
    let layout = build_round_layout(k, dims, BlockSpec::u32s(1))?;
    let sigma = stride_table(dims);
    let list = |v: &mut dyn Iterator<Item = usize>| {
        format!("[{}]", v.map(|x| x.to_string()).collect::<Vec<_>>().join(","))
    };

    let mut out = String::new();
    let subscripts: String = (k..dims.d()).map(|i| format!("[{}]", sigma.get(i))).collect();
    let orders: String = (k..dims.d()).map(|i| format!("[{}]", dims.order(i))).collect();
    let mut values: String =
        (k..dims.d()).map(|i| list(&mut (0..dims.order(i)).map(|c| c * sigma.get(i)))).collect();
    if sigma.get(k) > 1 {
        values.push_str(&list(&mut (0..sigma.get(k))));
    }
    let _ = writeln!(out, "k = {k}: R'_{{{subscripts}}}{orders} = {values}");
    for j in 0..layout.unit_count() {
        let _ = writeln!(out, "R'[{j}] = {}", list(&mut layout.unit_offsets(j)?));
    }
    Ok(out)
}

/// Dims exercised by verification at size `p`: every ordered factorization
/// for `p <= 36`, otherwise the balanced factorizations for every possible
/// dimension count.
pub fn verification_dims(p: usize) -> Vec<Dims> {
    if p <= 36 {
        return ordered_factorizations(p)
            .into_iter()
            .map(|f| Dims::new(f).expect("factors are >= 2"))
            .collect();
    }
    let mut out: Vec<Dims> = Vec::new();
    for d in 1..=prime_factor_count(p) {
        let dims = dims_create(p, d).expect("d is at most the prime factor count");
        if !out.contains(&dims) {
            out.push(dims);
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct VerifySummary {
    pub runs: usize,
    pub failures: Vec<String>,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Check the factorized all-to-all on every verification dims for
/// `p = 2..=pmax` and each block size: result against the direct exchange
/// and the oracle, blocks sent against the traffic formula, every round
/// boundary against the invariant, and exactly one temporary allocation.
pub fn verify_run(pmax: usize, block_sizes: &[usize]) -> VerifySummary {
    let mut summary = VerifySummary::default();
    for p in 2..=pmax {
        let all_dims = verification_dims(p);
        let outs = threads::run(p, |g| verify_participant(g, &all_dims, block_sizes));
        for out in outs {
            match out {
                Ok((runs, failures)) => {
                    summary.runs += runs;
                    summary.failures.extend(failures);
                }
                Err(e) => summary.failures.push(format!("p={p}: {e}")),
            }
        }
    }
    summary
}

fn verify_participant(
    mut world: ProcessGroup,
    all_dims: &[Dims],
    block_sizes: &[usize],
) -> Result<(usize, Vec<String>)> {
    let p = world.size();
    let rank = world.rank();
    let mut runs = 0;
    let mut failures = Vec::new();
    for dims in all_dims {
        let mut tc = TorusComm::new(world.duplicate()?);
        tc.factorize(dims.clone())?;
        let origin = rank_to_vector(rank, dims)?;
        for &elems in block_sizes {
            let label = format!("p={p} dims={dims} elems={elems} rank={rank}");
            let send = oracle::send_buffer(p, rank, elems);
            let expected = oracle::expected_recv(p, rank, elems);
            let mut torus = vec![0u32; p * elems];
            let mut direct = vec![0u32; p * elems];

            let before = tc.parent().counters();
            let mut checker = RoundChecker::new(dims.clone(), origin.clone(), elems);
            tc.alltoall_observed(
                &Region::from_elems(&send, elems),
                &mut RegionMut::from_elems(&mut torus, elems),
                &mut checker,
            )?;
            let sent = tc.parent().counters().since(&before).blocks_sent as usize;
            world.direct_alltoall(
                &Region::from_elems(&send, elems),
                &mut RegionMut::from_elems(&mut direct, elems),
            )?;
            runs += 1;

            if torus != direct {
                failures.push(format!("{label}: torus result differs from direct all-to-all"));
            }
            let report = oracle::verify_equal(&torus, &expected, elems);
            if !report.is_equal() {
                failures.push(format!("{label}: {report}"));
            }
            let want = if elems == 0 { 0 } else { expected_block_traffic(dims) };
            if sent != want {
                failures.push(format!("{label}: sent {sent} blocks, expected {want}"));
            }
            for err in checker.errors() {
                failures.push(format!("{label}: {err}"));
            }
            if checker.allocations() != [p * elems * 4] {
                failures.push(format!("{label}: allocations {:?}", checker.allocations()));
            }
        }
    }
    world.barrier()?;
    Ok((runs, failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_cover_every_decade() {
        let c = default_counts();
        assert_eq!(c.len(), 37);
        assert_eq!(&c[..10], &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        assert_eq!(c[18], 100);
        assert_eq!(*c.last().unwrap(), 10_000);
    }

    #[test]
    fn dims_spec_parsing() {
        assert_eq!("auto:3".parse::<DimsSpec>().unwrap(), DimsSpec::Auto(3));
        assert_eq!("3,2,2".parse::<DimsSpec>().unwrap(), DimsSpec::Explicit(vec![3, 2, 2]));
        assert!("auto:x".parse::<DimsSpec>().is_err());
        assert!("3,,2".parse::<DimsSpec>().is_err());
        assert_eq!(DimsSpec::Auto(2).resolve(16).unwrap().factors(), &[4, 4]);
        assert_eq!(DimsSpec::Auto(4).resolve(16).unwrap().factors(), &[2, 2, 2, 2]);
        assert!(DimsSpec::Explicit(vec![3, 2]).resolve(12).is_err());
        assert!(DimsSpec::Explicit(vec![12, 1]).resolve(12).is_err());
    }

    #[test]
    fn dump_matches_printed_table() {
        let dims = Dims::new(vec![5, 4]).unwrap();
        let text = layout_dump(&dims, 0).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k = 0: R'_{[1][5]}[5][4] = [0,1,2,3,4][0,5,10,15]");
        assert_eq!(lines.next().unwrap(), "R'[0] = [0,5,10,15]");
        assert_eq!(lines.last().unwrap(), "R'[4] = [4,9,14,19]");

        let text = layout_dump(&Dims::new(vec![2, 3, 4]).unwrap(), 1).unwrap();
        assert!(text.starts_with("k = 1: R'_{[2][6]}[3][4] = [0,2,4][0,6,12,18][0,1]\n"));
        assert!(text.contains("R'[0] = [0,1,6,7,12,13,18,19]\n"));
    }

    #[test]
    fn verification_universe() {
        assert_eq!(verification_dims(12).len(), 8);
        let big: Vec<String> = verification_dims(64).iter().map(|d| d.to_string()).collect();
        assert_eq!(big, vec!["64", "8x8", "4x4x4", "4x4x2x2", "4x2x2x2x2", "2x2x2x2x2x2"]);
    }

    #[test]
    fn small_bench_run() {
        let cfg = BenchConfig {
            p: 12,
            dims: vec![DimsSpec::Explicit(vec![3, 2, 2])],
            counts: vec![1],
            reps: 2,
            warmups: 1,
            check: true,
            ..BenchConfig::default()
        };
        let report = bench_run(&cfg).unwrap().unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[1].algorithm, "torus-d3");
        assert_eq!(report.rows[1].dims, "3x2x2");
        assert!(report.all_checks_passed());
        let mut csv = Vec::new();
        write_csv(&report.rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn small_verify_run() {
        let s = verify_run(8, &[0, 2]);
        assert!(s.passed(), "{:?}", s.failures);
        // p=2..8 have 1+1+2+1+3+1+4 ordered factorizations, 2 sizes, p ranks each
        assert!(s.runs > 0);
    }
}
