use std::collections::HashMap;

use proptest::prelude::*;
use zng_core::config::{FtlConfig, Geometry, PlatformConfig, PlatformKind, SimConfig, TlbConfig, Topology};
use zng_core::engine::{run_with, RunOptions};
use zng_core::ftl::{Ftl, Pbn};
use zng_core::trace::{
    generate_trace, load_trace, read_binary, write_binary, write_trace, GeneratorKind, MemoryRequest, Op, TraceSpec,
};
use zng_core::znand::{FlashArray, PageImage};

fn generator() -> impl Strategy<Value = GeneratorKind> {
    prop_oneof![
        Just(GeneratorKind::Sequential),
        Just(GeneratorKind::Strided),
        Just(GeneratorKind::UniformRandom),
        Just(GeneratorKind::Zipf),
    ]
}

fn spec() -> impl Strategy<Value = TraceSpec> {
    (generator(), 0u32..=20, 1u64..64, 1u64..3000, any::<u64>(), 1u32..9).prop_map(|(g, rr, pages, len, seed, burst)| {
        let mut s = TraceSpec::new(g, rr as f64 / 20.0, pages * 4096, len).with_seed(seed);
        s.burst = burst;
        s
    })
}

fn small_sim() -> SimConfig {
    let mut sim = SimConfig::table_defaults();
    sim.geometry = Geometry { channels: 2, packages_per_channel: 1, dies: 1, planes: 2, blocks: 64, pages: 16, page_size: 4096 };
    sim.ftl.group_size = 2;
    sim.ftl.over_provision = 0.25;
    sim.l2_sram.capacity_bytes = 6 * 8 * 128 * 16;
    sim.l2_sttmram.capacity_bytes = 6 * 8 * 128 * 64;
    sim
}

fn latest_writes(trace: &[MemoryRequest]) -> Vec<Option<u64>> {
    let mut last = HashMap::new();
    trace
        .iter()
        .enumerate()
        .map(|(i, r)| match r.op {
            Op::Read => Some(last.get(&(r.app_id, r.vaddr)).copied().unwrap_or(0)),
            Op::Write => {
                last.insert((r.app_id, r.vaddr), i as u64 + 1);
                None
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn binary_round_trip(spec in spec()) {
        let trace = generate_trace(&spec).unwrap();
        let mut buf = Vec::new();
        write_binary(&mut buf, &trace).unwrap();
        prop_assert_eq!(read_binary(buf.as_slice()).unwrap(), trace);
    }

    #[test]
    fn generated_traces_are_aligned_and_reproducible(spec in spec()) {
        let a = generate_trace(&spec).unwrap();
        prop_assert_eq!(a.len() as u64, spec.length);
        prop_assert!(a.iter().all(|r| r.vaddr % 128 == 0));
        prop_assert_eq!(generate_trace(&spec).unwrap(), a);
    }

    #[test]
    fn every_topology_returns_latest_writes(
        spec in spec(),
        topology in prop_oneof![Just(Topology::Baseline), Just(Topology::Swnet), Just(Topology::Nif), Just(Topology::Fcnet)],
        redirection in any::<bool>(),
    ) {
        let trace = generate_trace(&spec).unwrap();
        let mut cfg = PlatformConfig::new(PlatformKind::Zng, small_sim());
        cfg.features.topology = topology;
        cfg.features.redirection = redirection && topology != Topology::Baseline;
        let out = run_with(&cfg, &trace, RunOptions { record_reads: true, ..Default::default() }).unwrap();
        let expected = latest_writes(&trace);
        for r in &out.reads {
            prop_assert_eq!(Some(r.version), expected[r.index]);
        }
    }

    #[test]
    fn tlb_never_changes_translation(vbns in proptest::collection::vec(0u64..48, 1..200), entries in 1usize..16) {
        let geo = small_sim().geometry;
        let fc = FtlConfig { group_size: 2, over_provision: 0.25 };
        let block = geo.block_bytes();
        let mut on = Ftl::new(geo, &fc, &TlbConfig { entries, ..Default::default() });
        let mut off = Ftl::new(geo, &fc, &TlbConfig { enabled: false, ..Default::default() });
        let all: Vec<u64> = (0..48).collect();
        on.map_app_blocks(0, &all, &mut FlashArray::new(geo, &fc)).unwrap();
        off.map_app_blocks(0, &all, &mut FlashArray::new(geo, &fc)).unwrap();
        for (i, vbn) in vbns.into_iter().enumerate() {
            let vaddr = vbn * block + (i as u64 * 128) % block;
            let op = if i % 3 == 0 { Op::Write } else { Op::Read };
            let a = on.translate(vaddr, op, 0).unwrap();
            let b = off.translate(vaddr, op, 0).unwrap();
            prop_assert_eq!(a.addr, b.addr);
            prop_assert_eq!(a.key, b.key);
            prop_assert!(!b.tlb_hit);
        }
    }

    /// A page programs only if it is past every page programmed since the
    /// last erase; erasing starts the block over.
    #[test]
    fn programming_is_in_order(ops in proptest::collection::vec(prop_oneof![(0u16..16).prop_map(Some), Just(None)], 1..80)) {
        let geo = small_sim().geometry;
        let mut flash = FlashArray::new(geo, &FtlConfig { group_size: 2, over_provision: 0.25 });
        let block = Pbn(3);
        let mut next = 0u16;
        for op in ops {
            match op {
                Some(page) => {
                    let ok = flash.program_page(block, page, &PageImage::default()).is_ok();
                    prop_assert_eq!(ok, page >= next);
                    if ok {
                        next = page + 1;
                    }
                }
                None => {
                    flash.erase(block);
                    next = 0;
                }
            }
        }
    }
}

#[test]
fn trace_file_round_trip() {
    let trace = generate_trace(&TraceSpec::default_mixed(5_000, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mix.trace");
    write_trace(&path, &trace).unwrap();
    assert_eq!(load_trace(&path).unwrap(), trace);
}
