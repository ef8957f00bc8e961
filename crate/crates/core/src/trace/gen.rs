//! Synthetic workload generators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::{MemoryRequest, Op, REQUEST_BYTES};
use crate::clock::Cycle;
use crate::error::TraceError;

/// Each co-running application gets its own 1 TB virtual region.
pub const APP_REGION_BYTES: u64 = 1 << 40;

/// Consecutive requests issued by the same warp before the next warp.
const WARP_RUN: u64 = 4;
/// Warps sharing one load/store PC.
const WARPS_PER_PC: u64 = 4;
const PC_BASE: u64 = 0x1000;
/// Reads are placed exactly `round(read_ratio * QUOTA_BLOCK)` per block.
const QUOTA_BLOCK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Sequential,
    Strided,
    UniformRandom,
    Zipf,
    MixedApp,
}

fn default_read_ratio() -> f64 {
    1.0
}
fn default_warps() -> u16 {
    32
}
fn default_interval() -> Cycle {
    1
}
fn default_zipf() -> f64 {
    0.99
}
fn default_stride() -> u64 {
    4096
}
fn default_burst() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub generator: GeneratorKind,
    #[serde(default = "default_read_ratio")]
    pub read_ratio: f64,
    #[serde(default)]
    pub footprint: u64,
    #[serde(default)]
    pub length: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_warps")]
    pub warps: u16,
    /// Cycles between consecutive requests of this application.
    #[serde(default = "default_interval")]
    pub issue_interval: Cycle,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    /// Byte stride of the strided generator.
    #[serde(default = "default_stride")]
    pub stride: u64,
    /// Consecutive 128 B lines touched per random page pick (zipf and
    /// uniform-random), like a warp walking an adjacency list or a row.
    #[serde(default = "default_burst")]
    pub burst: u32,
    /// Sub-workloads of a mixed-app spec; application `i` gets app id `i`.
    #[serde(default)]
    pub per_app: Vec<TraceSpec>,
}

impl TraceSpec {
    pub fn new(generator: GeneratorKind, read_ratio: f64, footprint: u64, length: u64) -> Self {
        Self {
            generator,
            read_ratio,
            footprint,
            length,
            seed: 0,
            warps: default_warps(),
            issue_interval: default_interval(),
            zipf_exponent: default_zipf(),
            stride: default_stride(),
            burst: default_burst(),
            per_app: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_warps(mut self, warps: u16) -> Self {
        self.warps = warps;
        self
    }

    pub fn mixed(apps: Vec<TraceSpec>, seed: u64) -> Self {
        let length = apps.iter().map(|a| a.length).sum();
        Self { per_app: apps, length, seed, ..Self::new(GeneratorKind::MixedApp, 1.0, 0, 0) }
    }

    /// Requests per application in the default co-run workload.
    pub const DEFAULT_MIX_LENGTH: u64 = 200_000;

    /// The default co-run workload: a read-intensive graph kernel next to a
    /// write-intensive scientific kernel.
    pub fn default_mixed(length_per_app: u64, seed: u64) -> Self {
        Self::mixed(
            vec![Workload::Betw.spec(length_per_app), Workload::Back.spec(length_per_app)],
            seed,
        )
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.generator == GeneratorKind::MixedApp {
            if self.per_app.is_empty() {
                return Err(TraceError::Spec("mixed-app spec needs at least one sub-spec".into()));
            }
            if self.per_app.len() > u8::MAX as usize + 1 {
                return Err(TraceError::Spec("too many co-running applications".into()));
            }
            for sub in &self.per_app {
                if sub.generator == GeneratorKind::MixedApp {
                    return Err(TraceError::Spec("mixed-app specs cannot nest".into()));
                }
                sub.validate()?;
            }
            return Ok(());
        }
        if self.length == 0 {
            return Err(TraceError::Spec("length must be > 0".into()));
        }
        if self.footprint < REQUEST_BYTES {
            return Err(TraceError::Spec("footprint must be at least 128 bytes".into()));
        }
        if self.burst == 0 || self.burst as u64 > 4096 / REQUEST_BYTES {
            return Err(TraceError::Spec("burst must be 1..=32 lines".into()));
        }
        if self.footprint > APP_REGION_BYTES {
            return Err(TraceError::Spec("footprint exceeds the 1 TB application region".into()));
        }
        if !(0.0..=1.0).contains(&self.read_ratio) || self.read_ratio.is_nan() {
            return Err(TraceError::Spec("read_ratio must be within [0, 1]".into()));
        }
        if self.warps == 0 {
            return Err(TraceError::Spec("warps must be > 0".into()));
        }
        // Also rejects NaN.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if self.generator == GeneratorKind::Zipf && !(self.zipf_exponent >= 0.0) {
            return Err(TraceError::Spec("zipf_exponent must be >= 0".into()));
        }
        if self.generator == GeneratorKind::Strided
            && (self.stride == 0 || !self.stride.is_multiple_of(REQUEST_BYTES))
        {
            return Err(TraceError::Spec("stride must be a positive multiple of 128".into()));
        }
        Ok(())
    }
}

/// Benchmark-like presets with the read ratios of the evaluated kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workload {
    Betw,
    Bfs1,
    Bfs2,
    Bfs3,
    Bfs4,
    Bfs5,
    Bfs6,
    Gc1,
    Gc2,
    Sssp3,
    Deg,
    Pr,
    Back,
    Gaus,
    Fdt,
    Gram,
}

impl Workload {
    pub const ALL: [Workload; 16] = [
        Workload::Betw,
        Workload::Bfs1,
        Workload::Bfs2,
        Workload::Bfs3,
        Workload::Bfs4,
        Workload::Bfs5,
        Workload::Bfs6,
        Workload::Gc1,
        Workload::Gc2,
        Workload::Sssp3,
        Workload::Deg,
        Workload::Pr,
        Workload::Back,
        Workload::Gaus,
        Workload::Fdt,
        Workload::Gram,
    ];

    pub fn read_ratio(self) -> f64 {
        match self {
            Workload::Betw => 0.98,
            Workload::Bfs1 => 0.95,
            Workload::Bfs2 => 0.99,
            Workload::Bfs3 => 0.88,
            Workload::Bfs4 => 0.97,
            Workload::Bfs5 => 0.99,
            Workload::Bfs6 => 0.97,
            Workload::Gc1 => 0.98,
            Workload::Gc2 => 0.99,
            Workload::Sssp3 => 0.98,
            Workload::Deg => 1.0,
            Workload::Pr => 0.99,
            Workload::Back => 0.57,
            Workload::Gaus => 0.66,
            Workload::Fdt => 0.73,
            Workload::Gram => 0.75,
        }
    }

    pub fn is_graph(self) -> bool {
        !matches!(self, Workload::Back | Workload::Gaus | Workload::Fdt | Workload::Gram)
    }

    /// Graph kernels revisit a 64 MB footprint with strongly skewed page
    /// popularity; scientific kernels spread milder skew over 256 MB. Both
    /// touch short runs of consecutive lines per page visit.
    pub fn spec(self, length: u64) -> TraceSpec {
        let mut spec = if self.is_graph() {
            TraceSpec::new(GeneratorKind::Zipf, self.read_ratio(), 64 << 20, length)
        } else {
            let mut s = TraceSpec::new(GeneratorKind::Zipf, self.read_ratio(), 256 << 20, length);
            s.zipf_exponent = 0.8;
            s
        };
        spec.burst = 8;
        spec.seed = self as u64 + 1;
        spec
    }
}

/// splitmix64 finalizer, used to derive sub-stream seeds.
fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Synthesizes the request stream described by `spec`. Identical specs
/// produce identical streams.
pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<MemoryRequest>, TraceError> {
    spec.validate()?;
    if spec.generator != GeneratorKind::MixedApp {
        return Ok(generate_app(spec, 0, spec.seed));
    }
    let streams: Vec<Vec<MemoryRequest>> = spec
        .per_app
        .iter()
        .enumerate()
        .map(|(i, sub)| generate_app(sub, i as u8, sub.seed ^ mix_seed(spec.seed ^ (i as u64 + 1))))
        .collect();
    Ok(merge_by_cycle(streams))
}

/// Interleaves per-app streams by issue cycle; ties go to the lower app id.
fn merge_by_cycle(streams: Vec<Vec<MemoryRequest>>) -> Vec<MemoryRequest> {
    let total = streams.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    let mut cursors = vec![0usize; streams.len()];
    while out.len() < total {
        let next = (0..streams.len())
            .filter(|&i| cursors[i] < streams[i].len())
            .min_by_key(|&i| (streams[i][cursors[i]].issue_cycle, i))
            .expect("records remain");
        out.push(streams[next][cursors[next]]);
        cursors[next] += 1;
    }
    out
}

fn generate_app(spec: &TraceSpec, app_id: u8, seed: u64) -> Vec<MemoryRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lines = spec.footprint / REQUEST_BYTES;
    let lines_per_page = 4096 / REQUEST_BYTES;
    let pages = lines.div_ceil(lines_per_page);
    let zipf = (spec.generator == GeneratorKind::Zipf)
        .then(|| Zipf::new(pages as f64, spec.zipf_exponent).expect("validated zipf parameters"));
    let scatter = RankScatter::new(pages, &mut rng);
    let ops = op_sequence(spec.length as usize, spec.read_ratio, &mut rng);
    let base = app_id as u64 * APP_REGION_BYTES;
    let stride_lines = spec.stride / REQUEST_BYTES;

    let mut run = BurstCursor { burst: spec.burst as u64, lines, lines_per_page, line: 0, left: 0 };

    (0..spec.length)
        .zip(ops)
        .map(|(i, op)| {
            let line = match spec.generator {
                GeneratorKind::Sequential => i % lines,
                GeneratorKind::Strided => {
                    // Shift by one line per pass so repeated passes cover new lines.
                    let flat = i * stride_lines;
                    (flat + flat / lines) % lines
                }
                GeneratorKind::UniformRandom => run.next(&mut rng, |rng| rng.random_range(0..pages)),
                GeneratorKind::Zipf => {
                    let zipf = zipf.as_ref().expect("zipf generator");
                    run.next(&mut rng, |rng| scatter.page(zipf.sample(rng) as u64 - 1))
                }
                GeneratorKind::MixedApp => unreachable!("mixed specs are split per app"),
            };
            let warp = (i / WARP_RUN) % spec.warps as u64;
            MemoryRequest {
                issue_cycle: i * spec.issue_interval,
                warp_id: warp as u16,
                pc: PC_BASE + 0x10 * (warp / WARPS_PER_PC),
                op,
                vaddr: base + line * REQUEST_BYTES,
                app_id,
            }
        })
        .collect()
}

/// Walks `burst` consecutive lines inside a page before picking a new one.
struct BurstCursor {
    burst: u64,
    lines: u64,
    lines_per_page: u64,
    line: u64,
    left: u64,
}

impl BurstCursor {
    fn next(&mut self, rng: &mut ChaCha8Rng, pick_page: impl FnOnce(&mut ChaCha8Rng) -> u64) -> u64 {
        if self.left == 0 {
            let first = pick_page(rng) * self.lines_per_page;
            let span = self.lines_per_page.min(self.lines - first);
            let len = self.burst.min(span);
            self.line = first + rng.random_range(0..=span - len);
            self.left = len;
        }
        self.left -= 1;
        self.line += 1;
        self.line - 1
    }
}

/// Spreads Zipf ranks over the footprint so that hot pages are not all
/// neighbours: `page = (a * rank + b) mod pages` with `a` coprime to `pages`.
struct RankScatter {
    pages: u64,
    a: u64,
    b: u64,
}

impl RankScatter {
    fn new(pages: u64, rng: &mut ChaCha8Rng) -> Self {
        let mut a = ((pages as f64 * 0.618_033_988_75) as u64).max(1);
        while gcd(a, pages) != 1 {
            a += 1;
        }
        Self { pages, a, b: rng.random_range(0..pages) }
    }

    fn page(&self, rank: u64) -> u64 {
        ((self.a as u128 * rank as u128 + self.b as u128) % self.pages as u128) as u64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Read/write pattern with an exact read quota in every block of 1000.
fn op_sequence(len: usize, read_ratio: f64, rng: &mut ChaCha8Rng) -> Vec<Op> {
    let reads_per_block = (read_ratio * QUOTA_BLOCK as f64).round() as usize;
    let mut block: Vec<Op> = (0..QUOTA_BLOCK)
        .map(|k| if k < reads_per_block { Op::Read } else { Op::Write })
        .collect();
    let mut ops = Vec::with_capacity(len);
    while ops.len() < len {
        block.shuffle(rng);
        let take = (len - ops.len()).min(QUOTA_BLOCK);
        ops.extend_from_slice(&block[..take]);
    }
    ops
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::read_ratio;

    #[test]
    fn sequential_covers_footprint_in_order() {
        let spec = TraceSpec::new(GeneratorKind::Sequential, 1.0, 4096, 32);
        let trace = generate_trace(&spec).unwrap();
        assert_eq!(trace.len(), 32);
        let addrs: Vec<u64> = trace.iter().map(|r| r.vaddr).collect();
        assert_eq!(addrs, (0..32).map(|i| i * 128).collect::<Vec<_>>());
        assert!(trace.iter().all(|r| r.op == Op::Read));
    }

    #[test]
    fn betw_read_ratio() {
        let trace = generate_trace(&Workload::Betw.spec(100_000)).unwrap();
        let ratio = read_ratio(&trace);
        assert!((0.97..=0.99).contains(&ratio), "{ratio}");
    }

    #[test]
    fn zero_length_or_footprint_rejected() {
        let spec = TraceSpec::new(GeneratorKind::Sequential, 1.0, 4096, 0);
        assert!(matches!(generate_trace(&spec), Err(TraceError::Spec(_))));
        let spec = TraceSpec::new(GeneratorKind::Sequential, 1.0, 0, 10);
        assert!(matches!(generate_trace(&spec), Err(TraceError::Spec(_))));
        let spec = TraceSpec::new(GeneratorKind::Zipf, 1.5, 4096, 10);
        assert!(generate_trace(&spec).is_err());
    }

    #[test]
    fn mixed_apps_use_disjoint_regions_and_merge_by_cycle() {
        let spec = TraceSpec::default_mixed(5_000, 3);
        let trace = generate_trace(&spec).unwrap();
        assert_eq!(trace.len(), 10_000);
        crate::trace::validate(&trace).unwrap();
        for r in &trace {
            let offset = r.vaddr - r.app_id as u64 * APP_REGION_BYTES;
            assert!(offset < spec.per_app[r.app_id as usize].footprint);
        }
        let back: Vec<_> = trace.iter().filter(|r| r.app_id == 1).collect();
        let ratio = back.iter().filter(|r| r.is_read()).count() as f64 / back.len() as f64;
        assert!((ratio - 0.57).abs() < 0.01);
    }

    #[test]
    fn rank_scatter_is_a_bijection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for pages in [1u64, 2, 12, 384, 1000] {
            let s = RankScatter::new(pages, &mut rng);
            let hit: std::collections::BTreeSet<u64> = (0..pages).map(|r| s.page(r)).collect();
            assert_eq!(hit.len() as u64, pages);
        }
    }

    #[test]
    fn strided_wraps_onto_new_lines() {
        let mut spec = TraceSpec::new(GeneratorKind::Strided, 1.0, 8192, 64);
        spec.stride = 4096;
        let trace = generate_trace(&spec).unwrap();
        let distinct: std::collections::BTreeSet<u64> = trace.iter().map(|r| r.vaddr).collect();
        assert_eq!(distinct.len(), 64);
    }
}
