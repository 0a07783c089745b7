use bento_core::{clean, execute_box, parse_box, RowStatus};
use bento_tasks::builtin_registry;

const SMALL_BOX: &str = r#"{
  "tasks": [
    {"task_name": "compute",
     "parameters": {"data_type": ["int8", "fp64"], "operation": ["add", "div"], "iterations": 100000},
     "metrics": ["throughput"]},
    {"task_name": "compute",
     "parameters": {"string_size": 64, "operation": ["cmp", "xfrm"], "iterations": 20000},
     "metrics": ["throughput"]},
    {"task_name": "memory",
     "parameters": {"operation": ["read", "write"], "object_size": "16KB", "pattern": ["random", "sequential"],
                    "threads": 2, "duration_ms": 20},
     "metrics": ["throughput", "bandwidth"]},
    {"task_name": "storage",
     "parameters": {"io_type": ["read", "write"], "access_size": "8KB", "queue_depth": [1, 4],
                    "file_size": "4MB", "operations": 64},
     "metrics": ["throughput", "avg_latency", "p99"]},
    {"task_name": "net_tcp",
     "parameters": {"message_size": [32, 4096], "connections": 2, "queue_depth": 4, "messages": 500},
     "metrics": ["p50", "p99", "avg_latency", "bandwidth"]},
    {"task_name": "pred_pushdown",
     "parameters": {"mode": ["baseline", "pushdown"], "tuple_count": 20000, "selectivity": 0.01, "dpu_cores": 2},
     "metrics": ["throughput", "bytes_transferred", "qualifying"]},
    {"task_name": "index",
     "parameters": {"record_count": 5000, "op": [1.0, 0.5], "pattern": ["uniform", "zipfian"],
                    "threads": 2, "operations": 500},
     "metrics": ["throughput", "host_throughput", "dpu_throughput"]}
  ]
}"#;

#[test]
fn every_builtin_runs_end_to_end() {
    let ws = tempfile::tempdir().unwrap();
    let mut reg = builtin_registry();
    let mbox = parse_box(SMALL_BOX, &reg).unwrap();
    let report = execute_box(&mbox, ws.path(), &mut reg).unwrap();
    for row in &report.rows {
        assert_eq!(row.status, RowStatus::Ok, "{}#{} {}: {:?}", row.task, row.test_id, row.metric, row.error);
        assert!(row.value.unwrap() >= 0.0);
    }
    let count = |t: &str| {
        report.rows.iter().filter(|r| r.task == t).map(|r| r.test_id).collect::<std::collections::BTreeSet<_>>().len()
    };
    assert_eq!(count("compute"), 6);
    assert_eq!(count("memory"), 4);
    assert_eq!(count("storage"), 4);
    assert_eq!(count("net_tcp"), 2);
    assert_eq!(count("pred_pushdown"), 2);
    assert_eq!(count("index"), 4);

    let qualifying: Vec<f64> =
        report.rows.iter().filter(|r| r.metric == "qualifying").map(|r| r.value.unwrap()).collect();
    assert_eq!(qualifying, [200.0, 200.0]);
    assert!(report.metadata.notes.contains_key("storage.engine"));

    // prepared storage file and pushdown table are artifacts that clean removes
    let artifacts = |task: &str| std::fs::read_dir(ws.path().join(task)).map(|d| d.count()).unwrap_or(0);
    assert!(artifacts("storage") > 0);
    clean(&mut reg, &["storage".into(), "pred_pushdown".into()], ws.path()).unwrap();
    assert_eq!(artifacts("storage"), 0);
    assert_eq!(artifacts("pred_pushdown"), 0);
    assert!(ws.path().join("compute").exists());
}

#[test]
fn invalid_compute_combination_fails_the_task_not_the_run() {
    let ws = tempfile::tempdir().unwrap();
    let mut reg = builtin_registry();
    let text = r#"{"tasks": [{"task_name": "compute", "parameters": {"data_type": "fp64", "operation": "cmp"},
                              "metrics": ["throughput"]},
                             {"task_name": "memory", "parameters": {"operation": "read", "object_size": "16KB",
                              "duration_ms": 5}, "metrics": ["throughput"]}]}"#;
    let mbox = parse_box(text, &reg).unwrap();
    let report = execute_box(&mbox, ws.path(), &mut reg).unwrap();
    assert_eq!(report.rows[0].status, RowStatus::Failed);
    assert!(report.rows[0].error.as_deref().unwrap().contains("cannot be combined"));
    assert_eq!(report.rows[1].status, RowStatus::Ok);
}
