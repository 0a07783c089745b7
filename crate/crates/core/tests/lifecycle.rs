mod common;

use bento_core::runner::REPORT_FILE;
use bento_core::{clean, execute_box, parse_box, CleanError, ParamSpec, Registry, RowStatus, RunReport};
use common::{dir_digest, reference_registry, StubTask, Trace, REFERENCE_BOX};
use regex::Regex;

fn trace_of(trace: &Trace, task: &str) -> String {
    trace
        .lock()
        .unwrap()
        .iter()
        .filter_map(|e| e.strip_prefix(&format!("{task}:")))
        .map(|e| if e.starts_with("run") { "run" } else { e })
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn trace_is_prepare_runs_report() {
    let trace = Trace::default();
    let mut reg = reference_registry(trace.clone());
    let mbox = parse_box(REFERENCE_BOX, &reg).unwrap();
    let ws = tempfile::tempdir().unwrap();
    let report = execute_box(&mbox, ws.path(), &mut reg).unwrap();

    let pattern = |n: usize| Regex::new(&format!("^prepare( run){{{n}}} report$")).unwrap();
    assert!(pattern(8).is_match(&trace_of(&trace, "net_tcp")), "{}", trace_of(&trace, "net_tcp"));
    assert!(pattern(3).is_match(&trace_of(&trace, "pred_pushdown")));
    assert!(!trace.lock().unwrap().iter().any(|e| e.ends_with(":clean")));

    // tests ran in id order
    let runs: Vec<String> = trace.lock().unwrap().iter().filter(|e| e.contains(":run")).cloned().collect();
    let ids: Vec<u64> = runs.iter().map(|e| e.rsplit("run").next().unwrap().parse().unwrap()).collect();
    assert_eq!(ids, (0..11).collect::<Vec<_>>());

    assert_eq!(report.rows.len(), 8 * 3 + 3);
    assert!(!report.has_failures());
    for id in 0..8 {
        assert!(ws.path().join("net_tcp").join(id.to_string()).join("samples.jsonl").is_file());
    }
    let on_disk = RunReport::read_json(&ws.path().join(REPORT_FILE)).unwrap();
    assert_eq!(on_disk, report);
}

#[test]
fn failed_test_is_recorded_and_run_continues() {
    let trace = Trace::default();
    let mut reg = Registry::new();
    reg.register(Box::new(StubTask::new("compute", vec![ParamSpec::int("n", 0, 100)], trace.clone()).failing(&[1])))
        .unwrap();
    let text = r#"{"tasks":[{"task_name":"compute","parameters":{"n":[1,2,3]},"metrics":["value"]}]}"#;
    let mbox = parse_box(text, &reg).unwrap();
    let ws = tempfile::tempdir().unwrap();
    let report = execute_box(&mbox, ws.path(), &mut reg).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.rows[0].status, RowStatus::Ok);
    assert_eq!(report.rows[0].value, Some(1.0));
    assert_eq!(report.rows[1].status, RowStatus::Failed);
    assert!(report.rows[1].error.as_deref().unwrap().contains("injected failure in test 1"));
    assert_eq!(report.rows[2].status, RowStatus::Ok);
    assert_eq!(report.rows[2].value, Some(3.0));
    assert_eq!(trace_of(&trace, "compute"), "prepare run run run report");
}

#[test]
fn panicking_test_does_not_abort_the_box() {
    let trace = Trace::default();
    let mut task = StubTask::new("compute", vec![ParamSpec::int("n", 0, 100)], trace);
    task.panic_tests = vec![0];
    let mut reg = Registry::new();
    reg.register(Box::new(task)).unwrap();
    let text = r#"{"tasks":[{"task_name":"compute","parameters":{"n":[1,2]},"metrics":["value","throughput"]}]}"#;
    let mbox = parse_box(text, &reg).unwrap();
    let ws = tempfile::tempdir().unwrap();
    let report = execute_box(&mbox, ws.path(), &mut reg).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(report.rows[..2].iter().all(|r| r.status == RowStatus::Failed));
    assert!(report.rows[0].error.as_deref().unwrap().contains("stub panic"));
    assert!(report.rows[2..].iter().all(|r| r.status == RowStatus::Ok));
    assert_eq!(report.rows[3].throughput, Some(2.0));
}

#[test]
fn single_test_box() {
    let trace = Trace::default();
    let mut reg = Registry::new();
    reg.register(Box::new(StubTask::new("compute", vec![ParamSpec::int("n", 0, 100)], trace.clone()))).unwrap();
    let text = r#"{"tasks":[{"task_name":"compute","parameters":{"n":[5]},"metrics":["throughput"]}]}"#;
    let mbox = parse_box(text, &reg).unwrap();
    let ws = tempfile::tempdir().unwrap();
    let report = execute_box(&mbox, ws.path(), &mut reg).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(trace_of(&trace, "compute").matches("prepare").count(), 1);
}

#[test]
fn clean_leaves_only_the_report_and_is_idempotent() {
    let trace = Trace::default();
    let mut reg = reference_registry(trace.clone());
    let mbox = parse_box(REFERENCE_BOX, &reg).unwrap();
    let ws = tempfile::tempdir().unwrap();
    execute_box(&mbox, ws.path(), &mut reg).unwrap();

    let external = tempfile::tempdir().unwrap();
    let artifact = external.path().join("table.dat");
    std::fs::write(&artifact, b"x").unwrap();
    bento_core::PhaseContext::new(ws.path(), "pred_pushdown").register_artifact(&artifact).unwrap();

    let names = vec!["net_tcp".to_string(), "pred_pushdown".to_string()];
    clean(&mut reg, &names, ws.path()).unwrap();
    let once = dir_digest(ws.path());
    let entries: Vec<_> = once.iter().map(|(p, _)| p.to_string_lossy().to_string()).collect();
    assert_eq!(entries, vec![REPORT_FILE.to_string()]);
    assert!(!artifact.exists());

    clean(&mut reg, &names, ws.path()).unwrap();
    assert_eq!(dir_digest(ws.path()), once);
    assert_eq!(trace.lock().unwrap().iter().filter(|e| e.ends_with(":clean")).count(), 4);
}

#[test]
fn clean_of_never_prepared_task_is_a_noop() {
    let mut reg = reference_registry(Trace::default());
    let ws = tempfile::tempdir().unwrap();
    clean(&mut reg, &["net_tcp".to_string()], ws.path()).unwrap();
    assert!(dir_digest(ws.path()).is_empty());
}

#[test]
fn clean_one_task_leaves_the_other() {
    let mut reg = reference_registry(Trace::default());
    let mbox = parse_box(REFERENCE_BOX, &reg).unwrap();
    let ws = tempfile::tempdir().unwrap();
    execute_box(&mbox, ws.path(), &mut reg).unwrap();
    clean(&mut reg, &["pred_pushdown".to_string()], ws.path()).unwrap();
    assert!(!ws.path().join("pred_pushdown").exists());
    assert!(ws.path().join("net_tcp").join("prepared.dat").exists());
}

#[test]
fn clean_unknown_task() {
    let mut reg = reference_registry(Trace::default());
    let ws = tempfile::tempdir().unwrap();
    assert!(matches!(
        clean(&mut reg, &["nope".to_string()], ws.path()),
        Err(CleanError::UnknownTask(name)) if name == "nope"
    ));
}
