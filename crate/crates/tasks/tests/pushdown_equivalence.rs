use std::net::SocketAddr;

use bento_tasks::pushdown::{generate_table, keys_digest, run_scan, spawn_storage_node, Mode, ScanParams, TableSpec};
use proptest::prelude::*;

fn scan(addr: SocketAddr, spec: TableSpec, mode: Mode, s: f64, cores: usize) -> bento_tasks::pushdown::ScanOutcome {
    run_scan(&ScanParams { mode, spec, selectivity: s, dpu_cores: cores, slowdown: 1.0 }, addr).unwrap()
}

/// Reads the table file directly and filters it; independent of the wire path.
fn oracle_keys(path: &std::path::Path, width: usize, t: u64) -> Vec<u64> {
    let bytes = std::fs::read(path).unwrap();
    let mut keys: Vec<u64> =
        bytes.chunks_exact(width).map(|c| u64::from_le_bytes(c[..8].try_into().unwrap())).filter(|&k| k < t).collect();
    keys.sort_unstable();
    keys
}

#[test]
fn table_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TableSpec { tuples: 1000, width: 128, seed: 3 };
    let a = generate_table(&spec, dir.path()).unwrap();
    assert_eq!(std::fs::metadata(&a.path).unwrap().len(), 128_000);
    assert_eq!(oracle_keys(&a.path, 128, 10).len(), 10);
    let b = generate_table(&spec, dir.path()).unwrap();
    assert_eq!(a.digest, b.digest);
    assert_eq!(a.digest, bento_core::fnv1a64(&std::fs::read(&a.path).unwrap()));
}

#[test]
fn baseline_and_pushdown_agree_at_scale() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TableSpec { tuples: 100_000, width: 128, seed: 1 };
    let info = generate_table(&spec, dir.path()).unwrap();
    let node = spawn_storage_node("127.0.0.1:0", dir.path().to_path_buf()).unwrap();
    for (s, expected) in [(0.0, 0u64), (0.01, 1000), (0.5, 50_000), (1.0, 100_000)] {
        let base = scan(node.local_addr(), spec, Mode::Baseline, s, 1);
        let push = scan(node.local_addr(), spec, Mode::Pushdown, s, 4);
        assert_eq!(base.qualifying.len() as u64, expected);
        assert_eq!(push.qualifying.len() as u64, expected);
        assert_eq!(base.digest(), push.digest());
        assert_eq!(push.digest(), keys_digest(&oracle_keys(&info.path, 128, expected)));
        assert_eq!(base.payload_bytes, 100_000 * 128);
        // framing: one 8-byte header per batch plus a terminator per connection
        assert!(push.bytes_transferred <= expected * 128 + 64 + 8 * expected);
        if s == 0.01 {
            assert!(push.payload_bytes * 50 <= base.payload_bytes);
        }
        if s == 0.0 {
            assert_eq!(push.bytes_transferred, 8 * 4);
        }
    }
}

#[test]
fn full_selectivity_ships_the_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TableSpec { tuples: 150_000, width: 64, seed: 9 };
    generate_table(&spec, dir.path()).unwrap();
    let node = spawn_storage_node("127.0.0.1:0", dir.path().to_path_buf()).unwrap();
    let base = scan(node.local_addr(), spec, Mode::Baseline, 1.0, 1);
    let push = scan(node.local_addr(), spec, Mode::Pushdown, 1.0, 1);
    assert_eq!(base.bytes_transferred, push.bytes_transferred);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn any_core_count_gives_the_same_result(n in 1u64..20_000, s in 0.0f64..=1.0, cores in 1usize..8, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let spec = TableSpec { tuples: n, width: 16, seed };
        generate_table(&spec, dir.path()).unwrap();
        let node = spawn_storage_node("127.0.0.1:0", dir.path().to_path_buf()).unwrap();
        let base = scan(node.local_addr(), spec, Mode::Baseline, s, 1);
        let push = scan(node.local_addr(), spec, Mode::Pushdown, s, cores.min(n as usize));
        prop_assert_eq!(&base.qualifying, &push.qualifying);
        prop_assert_eq!(base.qualifying.len() as u64, bento_tasks::pushdown::threshold(s, n));
    }
}
