use std::collections::HashMap;
use std::sync::Mutex;

use zng_core::clock::Clock;
use zng_core::config::{Geometry, PlatformConfig, PlatformKind, SimConfig, Topology, ZTimingConfig};
use zng_core::engine::{run, run_with, MetricsReport, RunOptions};
use zng_core::ftl::dbmt_footprint;
use zng_core::trace::{generate_trace, GeneratorKind, MemoryRequest, TraceSpec, APP_REGION_BYTES};
use zng_core::znand::{service_time, ServiceKind};

fn verdict(id: u32, name: &str, ok: bool, detail: String) {
    println!("{} criterion {id} ({name}): {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

/// Version each read must return: the index + 1 of the latest earlier write
/// to the same 128 B address of the same app, 0 if none.
fn flat_oracle(trace: &[MemoryRequest]) -> Vec<Option<u64>> {
    let mut last: HashMap<(u8, u64), u64> = HashMap::new();
    trace
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.is_read() {
                Some(last.get(&(r.app_id, r.vaddr)).copied().unwrap_or(0))
            } else {
                last.insert((r.app_id, r.vaddr), i as u64 + 1);
                None
            }
        })
        .collect()
}

fn oracle_sim() -> SimConfig {
    let mut sim = SimConfig::table_defaults();
    sim.geometry = Geometry { channels: 2, packages_per_channel: 1, dies: 1, planes: 2, blocks: 64, pages: 16, page_size: 4096 };
    sim.ftl.group_size = 2;
    sim.ftl.over_provision = 0.25;
    sim.l2_sram.capacity_bytes = 6 * 8 * 128 * 16;
    sim.l2_sttmram.capacity_bytes = 6 * 8 * 128 * 64;
    sim
}

fn oracle_case(i: u64) -> (PlatformConfig, Vec<MemoryRequest>) {
    let read_ratio = 0.5 + 0.5 * i as f64 / 100.0;
    let generator = [GeneratorKind::UniformRandom, GeneratorKind::Zipf, GeneratorKind::Strided][i as usize % 3];
    let mut spec = TraceSpec::new(generator, read_ratio, 1 << 20, 100_000).with_seed(1000 + i);
    spec.stride = 4096 + 128 * (i % 7);
    let trace = generate_trace(&spec).unwrap();
    let kinds = PlatformKind::ALL.iter().filter(|k| k.is_flash()).copied().collect::<Vec<_>>();
    let kind = kinds[i as usize % kinds.len()];
    let mut cfg = PlatformConfig::new(kind, oracle_sim());
    if cfg.features.topology != Topology::Baseline {
        cfg.features.topology = Topology::ALL[(i as usize / kinds.len()) % Topology::ALL.len()];
        if cfg.features.topology == Topology::Baseline {
            cfg.features.redirection = false;
        }
    }
    (cfg, trace)
}

#[test]
fn functional_oracle() {
    let start = std::time::Instant::now();
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).min(16);
    let next = Mutex::new(0u64);
    let results = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    if *n == 100 {
                        break;
                    }
                    *n += 1;
                    *n - 1
                };
                let (cfg, trace) = oracle_case(i);
                let out = run_with(&cfg, &trace, RunOptions { record_reads: true, ..Default::default() }).unwrap();
                let expected = flat_oracle(&trace);
                let mismatches = out.reads.iter().filter(|r| expected[r.index] != Some(r.version)).count();
                let missing = trace.iter().filter(|r| r.is_read()).count() - out.reads.len();
                results.lock().unwrap().push((i, mismatches + missing, out.report.gc.len()));
            });
        }
    });
    let results = results.into_inner().unwrap();
    let bad: Vec<_> = results.iter().filter(|r| r.1 > 0).collect();
    let few_gc: Vec<_> = results.iter().filter(|r| r.2 < 10).collect();
    let min_gc = results.iter().map(|r| r.2).min().unwrap_or(0);
    let elapsed = start.elapsed();
    verdict(
        1,
        "functional oracle",
        results.len() == 100 && bad.is_empty() && few_gc.is_empty() && elapsed.as_secs() < 300,
        format!(
            "{} traces x 1e5, {} with mismatches, min GC events {min_gc}, {} below 10, {:.1} s",
            results.len(),
            bad.len(),
            few_gc.len(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn mapping_table_economy() {
    let table = dbmt_footprint(&Geometry::default());
    // Same package layout with enough blocks per plane for 1 TB.
    let mut tb = Geometry::default();
    tb.blocks = ((1u64 << 40) / (tb.total_planes() as u64 * tb.pages as u64 * tb.page_size as u64)) as u32;
    let one_tb = dbmt_footprint(&tb);
    verdict(
        2,
        "mapping-table economy",
        table.dbmt_bytes * 100 <= table.page_table_bytes,
        format!(
            "block table {} B vs page table {} B (ratio {:.1}); 1 TB config: {:.0} KB",
            table.dbmt_bytes,
            table.page_table_bytes,
            table.ratio,
            one_tb.dbmt_bytes as f64 / 1024.0
        ),
    );
}

#[test]
fn prefetch_effect() {
    let cfg = PlatformConfig::preset(PlatformKind::ZngRdopt);
    let cap = cfg.l2().capacity_bytes;
    let spec = TraceSpec::new(GeneratorKind::Sequential, 1.0, 4 * cap, 4 * cap / 128).with_seed(3);
    let trace = generate_trace(&spec).unwrap();
    let on = run(&cfg, &trace).unwrap();
    let mut off_cfg = cfg.clone();
    off_cfg.features.prefetch = false;
    let off = run(&off_cfg, &trace).unwrap();
    let ratio = on.array.reads as f64 / off.array.reads as f64;
    verdict(
        3,
        "prefetch effect",
        ratio <= 0.5 && on.prefetch.accuracy >= 0.9,
        format!(
            "array reads {} with prediction vs {} without (ratio {ratio:.3}), accuracy {:.3}",
            on.array.reads, off.array.reads, on.prefetch.accuracy
        ),
    );
}

/// Write-only Zipf stream confined to the first `pages` pages of one plane.
fn hot_plane_trace(pages: u64, seed: u64) -> Vec<MemoryRequest> {
    let geo = Geometry::default();
    let block_pages = geo.pages as u64;
    let stride = geo.total_planes() as u64 * block_pages;
    let mut spec = TraceSpec::new(GeneratorKind::Zipf, 0.0, pages * 4096, 200_000).with_seed(seed);
    spec.zipf_exponent = 0.8;
    generate_trace(&spec)
        .unwrap()
        .into_iter()
        .map(|mut r| {
            // Consecutive virtual blocks are striped over planes; keep every
            // hot block on plane 0.
            let page = r.vaddr / 4096;
            r.vaddr = ((page / block_pages) * stride + page % block_pages) * 4096 + r.vaddr % 4096;
            r
        })
        .collect()
}

#[test]
fn write_buffer_effect() {
    let trace = hot_plane_trace(768, 7);
    let redundancy = |topology: Topology, redirection: bool| {
        let mut cfg = PlatformConfig::preset(PlatformKind::Zng);
        cfg.features.topology = topology;
        cfg.features.redirection = redirection;
        run(&cfg, &trace).unwrap().write_redundancy
    };
    let base = redundancy(Topology::Baseline, false);
    let nif = redundancy(Topology::Nif, false);
    let redirected = redundancy(Topology::Nif, true);
    verdict(
        4,
        "write-buffer effect",
        nif <= 0.6 * base && redirected <= 2.0,
        format!("mean write redundancy baseline {base:.2}, nif {nif:.2} ({:.3}x), nif+redirection {redirected:.2}", nif / base),
    );
}

fn default_mix() -> Vec<MemoryRequest> {
    generate_trace(&TraceSpec::default_mixed(TraceSpec::DEFAULT_MIX_LENGTH, 1)).unwrap()
}

fn completion(cfg: &PlatformConfig, trace: &[MemoryRequest]) -> f64 {
    run(cfg, trace).unwrap().completion_cycles as f64
}

#[test]
fn ablation_ordering() {
    let trace = default_mix();
    let t = |k| completion(&PlatformConfig::preset(k), &trace);
    let (zng, wr, rd, base) = (t(PlatformKind::Zng), t(PlatformKind::ZngWropt), t(PlatformKind::ZngRdopt), t(PlatformKind::ZngBase));
    verdict(
        5,
        "ablation ordering",
        zng <= wr && wr <= base && zng <= rd && rd <= base && zng <= 0.95 * base,
        format!(
            "completion relative to zng-base: zng {:.3}, zng-wropt {:.3}, zng-rdopt {:.3}",
            zng / base,
            wr / base,
            rd / base
        ),
    );
}

#[test]
fn topology_ordering() {
    let trace = default_mix();
    let t = |topology| {
        let mut cfg = PlatformConfig::preset(PlatformKind::Zng);
        cfg.features.topology = topology;
        completion(&cfg, &trace)
    };
    let (fc, nif, sw, base) = (t(Topology::Fcnet), t(Topology::Nif), t(Topology::Swnet), t(Topology::Baseline));
    // fcnet and nif differ only in the per-plane transit charge; schedules
    // that close are compared with a 1% tie band.
    let ok = fc <= nif * 1.01 && nif <= sw && sw <= base && nif <= fc * 1.10;
    verdict(
        6,
        "topology ordering",
        ok,
        format!("completion relative to fcnet: nif {:.4}, swnet {:.3}, baseline {:.3}", nif / fc, sw / fc, base / fc),
    );
}

#[test]
fn timing_units() {
    let timing = ZTimingConfig::default();
    let clock = Clock::default();
    let ns = |kind, bytes| clock.to_ns(service_time(kind, bytes, &timing, clock));
    let cycle_ns = clock.to_ns(1);
    let cases = [
        ("4 KB transfer", ns(ServiceKind::Transfer, 4096), 640.0),
        ("128 B transfer", ns(ServiceKind::Transfer, 128), 20.0),
        ("array read", ns(ServiceKind::ArrayRead, 0), 3_000.0),
        ("program", ns(ServiceKind::Program, 0), 100_000.0),
    ];
    let ok = cases.iter().all(|&(_, got, want)| got >= want && got - want < cycle_ns + 1e-9);
    let detail = cases.iter().map(|(n, got, _)| format!("{n} {got} ns")).collect::<Vec<_>>().join(", ");
    verdict(7, "timing units", ok, detail);
}

#[test]
fn gc_semantics() {
    let mut sim = SimConfig::table_defaults();
    sim.geometry = Geometry { channels: 4, packages_per_channel: 1, dies: 1, planes: 2, blocks: 64, pages: 16, page_size: 4096 };
    sim.ftl.group_size = 2;
    sim.ftl.over_provision = 0.25;
    sim.l2_sram.capacity_bytes = 6 * 8 * 128 * 16;
    sim.engine.epoch_cycles = 2_000;
    let channels = sim.geometry.channels as u64;
    let block = sim.geometry.block_bytes();
    // App 0 rewrites one block on channel 0 and keeps collecting its group.
    // App 1 only reads, from blocks striped onto the other channels; its
    // first block (on channel 0) is touched once before any collection.
    let writer = TraceSpec::new(GeneratorKind::UniformRandom, 0.5, block, 1_000);
    let reader = TraceSpec::new(GeneratorKind::UniformRandom, 1.0, 28 * block, 400_000);
    let mut trace = generate_trace(&TraceSpec::mixed(vec![writer, reader], 11)).unwrap();
    let base = APP_REGION_BYTES;
    let mut anchored = false;
    for r in trace.iter_mut().filter(|r| r.app_id == 1) {
        let off = r.vaddr - base;
        let b = off / block;
        let remapped = b + b / (channels - 1) + 1;
        r.vaddr = if anchored { base + remapped * block + off % block } else { base };
        anchored = true;
    }
    let cfg = PlatformConfig::new(PlatformKind::ZngBase, sim);
    let out = run_with(&cfg, &trace, RunOptions { record_reads: true, record_completions: true, ..Default::default() }).unwrap();
    let expected = flat_oracle(&trace);
    let mismatches = out.reads.iter().filter(|r| expected[r.index] != Some(r.version)).count();

    let gcs = &out.report.gc;
    let mut owner_inside = 0;
    let mut stalled_other = 0;
    let mut checked = 0;
    for gc in gcs {
        let (s, e) = (gc.start, gc.end);
        owner_inside += out.completions.iter().filter(|c| c.app == gc.app && c.completed > s && c.completed < e).count();
        // Only windows while the other app still has requests to serve.
        let other_last = out.completions.iter().filter(|c| c.app != gc.app).map(|c| c.completed).max().unwrap_or(0);
        if other_last < e {
            continue;
        }
        checked += 1;
        if !out.completions.iter().any(|c| c.app != gc.app && c.completed > s && c.completed < e) {
            stalled_other += 1;
        }
    }
    // The epoch series shows the same thing: epochs inside a window have no
    // owner completions.
    let series = &out.report.time_series;
    let epoch = series.epoch_cycles;
    let col = |app: u8| series.apps.iter().position(|&a| a == app).unwrap();
    let mut series_violations = 0;
    for gc in gcs {
        let first = gc.start.div_ceil(epoch);
        let last = gc.end / epoch;
        for row in first..last {
            if series.completed.get(row as usize).is_some_and(|r| r[col(gc.app)] != 0) {
                series_violations += 1;
            }
        }
    }
    verdict(
        8,
        "GC semantics",
        !gcs.is_empty() && checked > 0 && owner_inside == 0 && stalled_other == 0 && series_violations == 0 && mismatches == 0,
        format!(
            "{} GC windows, owner completions inside {owner_inside}, windows without non-owner progress {stalled_other}/{checked}, \
             epoch rows with owner progress {series_violations}, oracle mismatches {mismatches}",
            gcs.len()
        ),
    );
}

#[test]
fn determinism() {
    let trace = generate_trace(&TraceSpec::default_mixed(30_000, 5)).unwrap();
    let reports = |cfg: &PlatformConfig| -> String { run(cfg, &trace).map(|r: MetricsReport| r.to_json()).unwrap() };
    let mut differing = Vec::new();
    for kind in PlatformKind::ALL {
        let cfg = PlatformConfig::preset(kind);
        if reports(&cfg) != reports(&cfg) {
            differing.push(kind.name());
        }
    }
    verdict(
        9,
        "determinism",
        differing.is_empty(),
        format!("{} platforms replayed twice, differing reports: {:?}", PlatformKind::ALL.len(), differing),
    );
}
