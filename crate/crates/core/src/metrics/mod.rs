//! Sample recording, statistics and reports.

pub mod aggregate;
pub mod report;
pub mod sample;
pub mod stats;

pub use aggregate::{aggregate, aggregate_task, aggregate_test};
pub use stats::{MetricsError, Reservoir};
