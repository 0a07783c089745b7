use std::time::Duration;

use bento_core::rng::XorShift64Star;
use bento_tasks::index::{
    audit_history, dump_index, load_index, record_value, run_index_workload, spawn_partition_server, IndexError,
    IndexParams, KeyPattern, OpBudget, PartitionClient, Partitions, Zipfian,
};
use bento_tasks::wire::Server;

fn servers() -> (Server, Server, Partitions) {
    let h = spawn_partition_server("127.0.0.1:0").unwrap();
    let d = spawn_partition_server("127.0.0.1:0").unwrap();
    let parts = Partitions { host: h.local_addr(), dpu: d.local_addr() };
    (h, d, parts)
}

fn params(records: u64, read_fraction: f64, pattern: KeyPattern, split: (u64, u64)) -> IndexParams {
    IndexParams {
        records,
        record_size: 128,
        read_fraction,
        pattern,
        split,
        threads: 2,
        budget: OpBudget::Operations(5000),
        seed: 17,
    }
}

#[test]
fn load_splits_by_boundary() {
    let (_h, _d, parts) = servers();
    // floor(K * 10 / 11) computed independently with integer arithmetic
    for (k, split, host) in [(100_000u64, (10, 1), 90_909u64), (1000, (10, 1), 909), (1000, (1, 0), 1000)] {
        let counts = load_index(&params(k, 1.0, KeyPattern::Uniform, split), parts).unwrap();
        assert_eq!(counts, (host, k - host));
        assert_eq!(host, k * split.0 / (split.0 + split.1));
    }
}

#[test]
fn loaded_values_are_served() {
    let (_h, _d, parts) = servers();
    let p = params(1000, 1.0, KeyPattern::Uniform, (10, 1));
    load_index(&p, parts).unwrap();
    let mut host = PartitionClient::connect(parts.host).unwrap();
    let mut dpu = PartitionClient::connect(parts.dpu).unwrap();
    for k in (0..1000).step_by(37) {
        let c = if k < 909 { &mut host } else { &mut dpu };
        assert_eq!(c.get(k).unwrap(), record_value(17, k, 0, 128).as_slice());
    }
    assert!(matches!(host.get(950), Err(IndexError::RoutingError { key: 950 })));
    assert!(matches!(dpu.get(3), Err(IndexError::RoutingError { key: 3 })));
}

#[test]
fn read_only_run_verifies_every_read() {
    let (_h, _d, parts) = servers();
    let p = params(10_000, 1.0, KeyPattern::Uniform, (10, 1));
    load_index(&p, parts).unwrap();
    let out = run_index_workload(&p, parts).unwrap();
    assert_eq!(out.total_ops(), 10_000);
    assert_eq!(out.total_ops(), out.host_ops() + out.dpu_ops());
    assert_eq!(out.clients.iter().map(|c| c.reads_verified).sum::<u64>(), 10_000);
    assert!(out.dpu_ops() > 0 && out.host_ops() > out.dpu_ops());
}

/// YCSB-style zipfian written out from the published constants.
fn oracle_zipf(n: u64, seed: u64, draws: usize) -> Vec<u64> {
    let theta = 0.99f64;
    let mut zetan = 0.0;
    for i in 0..n {
        zetan += 1.0 / ((i + 1) as f64).powf(theta);
    }
    let zeta2 = 1.0 + 1.0 / 2f64.powf(theta);
    let alpha = 1.0 / (1.0 - theta);
    let eta = (1.0 - (2.0 / n as f64).powf(1.0 - theta)) / (1.0 - zeta2 / zetan);
    let mut rng = XorShift64Star::new(seed);
    (0..draws)
        .map(|_| {
            let u = rng.next_f64();
            let uz = u * zetan;
            if uz < 1.0 {
                0
            } else if uz < 1.0 + 0.5f64.powf(theta) {
                1
            } else {
                ((n as f64 * (eta * u - eta + 1.0).powf(alpha)) as u64).min(n - 1)
            }
        })
        .collect()
}

#[test]
fn zipfian_matches_reference() {
    for n in [100_000u64, 1000] {
        let z = Zipfian::new(n, 0.99);
        let mut rng = XorShift64Star::new(42);
        let got: Vec<u64> = (0..10_000).map(|_| z.next(&mut rng)).collect();
        assert_eq!(got, oracle_zipf(n, 42, 10_000));
    }
}

#[test]
fn mixed_run_passes_history_audit() {
    let (_h, _d, parts) = servers();
    for pattern in [KeyPattern::Uniform, KeyPattern::Zipfian] {
        let mut p = params(2000, 0.5, pattern, (10, 1));
        p.threads = 4;
        p.budget = OpBudget::Duration(Duration::from_millis(200));
        load_index(&p, parts).unwrap();
        let out = run_index_workload(&p, parts).unwrap();
        assert!(out.writes().count() > 0);
        let audit = audit_history(&p, &dump_index(parts).unwrap(), out.writes().copied());
        assert_eq!(audit.keys_checked, 2000);
        assert!(audit.violations.is_empty(), "{:?}", &audit.violations[..audit.violations.len().min(5)]);
    }
}

#[test]
fn tampering_is_detected_by_the_audit() {
    let (_h, _d, parts) = servers();
    let mut p = params(500, 0.5, KeyPattern::Uniform, (10, 1));
    p.budget = OpBudget::Operations(50);
    load_index(&p, parts).unwrap();
    let out = run_index_workload(&p, parts).unwrap();
    let untouched = (0..500).find(|k| out.writes().all(|w| w.key != *k)).unwrap();
    let mut c = PartitionClient::connect(if untouched < 454 { parts.host } else { parts.dpu }).unwrap();
    c.put(untouched, &record_value(17, untouched, 99, 128)).unwrap();
    let audit = audit_history(&p, &dump_index(parts).unwrap(), out.writes().copied());
    assert_eq!(audit.violations.len(), 1);
}

#[test]
fn unreachable_server_is_reported() {
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let parts = Partitions { host: addr, dpu: addr };
    assert!(matches!(
        load_index(&params(10, 1.0, KeyPattern::Uniform, (1, 1)), parts),
        Err(IndexError::ServerUnreachable { .. })
    ));
}
