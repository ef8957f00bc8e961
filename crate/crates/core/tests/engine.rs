use std::collections::HashMap;

use zng_core::config::{Geometry, PlatformConfig, PlatformKind, SimConfig};
use zng_core::engine::{histogram_total, run, run_with, RunOptions};
use zng_core::trace::{generate_trace, GeneratorKind, MemoryRequest, TraceSpec};

fn small_sim() -> SimConfig {
    let mut sim = SimConfig::table_defaults();
    sim.geometry = Geometry { channels: 2, packages_per_channel: 1, dies: 1, planes: 2, blocks: 64, pages: 384, page_size: 4096 };
    sim.ftl.group_size = 2;
    sim.ftl.over_provision = 0.25;
    sim.l2_sram.capacity_bytes = 6 * 8 * 128 * 16;
    sim.l2_sttmram.capacity_bytes = 6 * 8 * 128 * 64;
    sim
}

fn oracle_check(cfg: &PlatformConfig, trace: &[MemoryRequest]) -> usize {
    let out = run_with(cfg, trace, RunOptions { record_reads: true, ..Default::default() }).unwrap();
    let mut last: HashMap<(u8, u64), u64> = HashMap::new();
    let mut expected = vec![None; trace.len()];
    for (i, r) in trace.iter().enumerate() {
        let key = (r.app_id, r.vaddr);
        if r.is_read() {
            expected[i] = Some(last.get(&key).copied().unwrap_or(0));
        } else {
            last.insert(key, i as u64 + 1);
        }
    }
    for rec in &out.reads {
        assert_eq!(Some(rec.version), expected[rec.index], "read {} on {}", rec.index, cfg.platform);
    }
    assert_eq!(out.reads.len(), trace.iter().filter(|r| r.is_read()).count());
    out.report.gc.len()
}

#[test]
fn single_read_latency_on_zng_base() {
    let cfg = PlatformConfig::preset(PlatformKind::ZngBase);
    let trace = vec![MemoryRequest::read(0, 0)];
    let r = run(&cfg, &trace).unwrap();
    assert_eq!(r.completion_cycles, 20 + 1 + 20 + 2 + 3600 + 24 + 20);
    assert_eq!(r.array.reads, 1);
}

#[test]
fn empty_trace_gives_zero_report() {
    for kind in PlatformKind::ALL {
        let r = run(&PlatformConfig::preset(kind), &[]).unwrap();
        assert_eq!(r.completion_cycles, 0);
        assert_eq!(r.requests, 0);
    }
}

#[test]
fn all_platforms_return_latest_writes() {
    let spec = TraceSpec::new(GeneratorKind::UniformRandom, 0.7, 1 << 20, 20_000).with_seed(5);
    let trace = generate_trace(&spec).unwrap();
    for kind in PlatformKind::ALL {
        let cfg = PlatformConfig::new(kind, small_sim());
        oracle_check(&cfg, &trace);
    }
}

#[test]
fn oracle_holds_across_gc() {
    let spec = TraceSpec::new(GeneratorKind::Zipf, 0.5, 2 << 20, 60_000).with_seed(9);
    let trace = generate_trace(&spec).unwrap();
    for kind in [PlatformKind::ZngBase, PlatformKind::Zng] {
        let gcs = oracle_check(&PlatformConfig::new(kind, small_sim()), &trace);
        assert!(gcs >= 1, "{kind}: {gcs} collections");
    }
}

#[test]
fn histogram_totals_match_requests() {
    let spec = TraceSpec::new(GeneratorKind::Zipf, 0.8, 1 << 20, 10_000).with_seed(2);
    let trace = generate_trace(&spec).unwrap();
    let r = run(&PlatformConfig::new(PlatformKind::Zng, small_sim()), &trace).unwrap();
    assert_eq!(histogram_total(&r.read_requests_per_page), r.reads);
    assert_eq!(histogram_total(&r.write_requests_per_page), r.writes);
    let b = r.latency_breakdown;
    let sum = b.translation + b.cache + b.network + b.queueing + b.array + b.transfer;
    assert!((sum - r.mean_latency_cycles).abs() < 1.0);
}

#[test]
fn reports_are_deterministic() {
    let trace = generate_trace(&TraceSpec::default_mixed(20_000, 3)).unwrap();
    let cfg = PlatformConfig::preset(PlatformKind::Zng);
    assert_eq!(run(&cfg, &trace).unwrap().to_json(), run(&cfg, &trace).unwrap().to_json());
}
