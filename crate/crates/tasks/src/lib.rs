//! Built-in tasks.
//!
//! Four microbenchmarks (`compute`, `memory`, `storage`, `net_tcp`) and two
//! module benchmarks (`pred_pushdown`, `index`). The networked ones talk to
//! a peer process given by address, or start that peer inside the harness
//! process when the address is `loopback`.

pub mod affinity;
pub mod compute;
pub mod index;
pub mod memory;
pub mod network;
pub mod pushdown;
pub mod storage;
pub mod util;
pub mod wire;

use bento_core::Registry;

/// A registry holding every built-in task.
pub fn builtin_registry() -> Registry {
    let mut r = Registry::new();
    let tasks: Vec<Box<dyn bento_core::Task>> = vec![
        Box::new(compute::ComputeTask::new()),
        Box::new(memory::MemoryTask::new()),
        Box::new(storage::StorageTask::new()),
        Box::new(network::NetworkTask::new()),
        Box::new(pushdown::PushdownTask::new()),
        Box::new(index::IndexTask::new()),
    ];
    for t in tasks {
        r.register(t).expect("built-in names are distinct");
    }
    r
}
