//! Measurement boxes: the declarative JSON job format.
//!
//! ```json
//! {"tasks": [
//!   {"task_name": "net_tcp",
//!    "parameters": {"data_size": [8, 8192], "threads": [1, 2, 4, 8]},
//!    "metrics": ["p50", "p99", "bandwidth"]}
//! ]}
//! ```

use std::collections::BTreeMap;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::params::ParamValue;
use crate::registry::Registry;

/// A validated measurement box.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementBox {
    pub tasks: Vec<TaskInvocation>,
}

impl MeasurementBox {
    /// Task names in first-appearance order, without repeats.
    pub fn task_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for inv in &self.tasks {
            if !names.contains(&inv.task_name.as_str()) {
                names.push(&inv.task_name);
            }
        }
        names
    }
}

/// One entry of the `tasks` array.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInvocation {
    pub task_name: String,
    /// Canonical parameter name to the user's values, in the user's order.
    pub parameters: BTreeMap<String, Vec<ParamValue>>,
    pub metrics: Vec<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum BoxError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("box declares no tasks")]
    EmptyTaskList,
    #[error("{path}: {message}")]
    Shape { path: String, message: String },
    #[error("{path}: unknown task {name:?}")]
    UnknownTask { path: String, name: String },
    #[error("{path}: unknown parameter {name:?} for task {task:?}")]
    UnknownParameter { path: String, task: String, name: String },
    #[error("{path}: task {task:?} cannot produce metric {name:?}")]
    UnknownMetric { path: String, task: String, name: String },
    #[error("{path}: invalid value: {reason}")]
    InvalidValue { path: String, reason: String },
    #[error("{path}: required parameter {name:?} missing")]
    MissingParameter { path: String, name: String },
}

impl BoxError {
    fn shape(path: impl Into<String>, message: impl Into<String>) -> Self {
        BoxError::Shape { path: path.into(), message: message.into() }
    }
}

/// Parses and validates a box document against the registered tasks.
pub fn parse_box(text: &str, registry: &Registry) -> Result<MeasurementBox, BoxError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| BoxError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let root = doc.as_object().ok_or_else(|| BoxError::shape("$", "expected an object"))?;
    for key in root.keys() {
        if key != "tasks" {
            return Err(BoxError::shape(format!("$.{key}"), "unexpected key"));
        }
    }
    let tasks = root
        .get("tasks")
        .ok_or_else(|| BoxError::shape("$", "missing key \"tasks\""))?
        .as_array()
        .ok_or_else(|| BoxError::shape("tasks", "expected an array"))?;
    if tasks.is_empty() {
        return Err(BoxError::EmptyTaskList);
    }
    let tasks = tasks
        .iter()
        .enumerate()
        .map(|(i, entry)| parse_invocation(&format!("tasks[{i}]"), entry, registry))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MeasurementBox { tasks })
}

fn parse_invocation(path: &str, entry: &Value, registry: &Registry) -> Result<TaskInvocation, BoxError> {
    let obj = entry.as_object().ok_or_else(|| BoxError::shape(path, "expected an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "task_name" | "parameters" | "metrics") {
            return Err(BoxError::shape(format!("{path}.{key}"), "unexpected key"));
        }
    }
    let name_path = format!("{path}.task_name");
    let task_name = obj
        .get("task_name")
        .ok_or_else(|| BoxError::shape(path, "missing key \"task_name\""))?
        .as_str()
        .ok_or_else(|| BoxError::shape(&name_path, "expected a string"))?;
    let descriptor = registry
        .descriptor(task_name)
        .ok_or_else(|| BoxError::UnknownTask { path: name_path, name: task_name.to_string() })?;

    let empty = Map::new();
    let params_path = format!("{path}.parameters");
    let raw_params = match obj.get("parameters") {
        None => &empty,
        Some(v) => v.as_object().ok_or_else(|| BoxError::shape(&params_path, "expected an object"))?,
    };
    let mut parameters = BTreeMap::new();
    for (name, raw_values) in raw_params {
        let ppath = format!("{params_path}.{name}");
        let spec = descriptor.schema.lookup(name).ok_or_else(|| BoxError::UnknownParameter {
            path: ppath.clone(),
            task: task_name.to_string(),
            name: name.clone(),
        })?;
        // A bare scalar is shorthand for a one-element list.
        let raw_list = match raw_values {
            Value::Array(items) => items.clone(),
            scalar => vec![scalar.clone()],
        };
        if raw_list.is_empty() {
            return Err(BoxError::InvalidValue { path: ppath, reason: "empty value list".into() });
        }
        let mut values = Vec::with_capacity(raw_list.len());
        for (j, raw) in raw_list.iter().enumerate() {
            let value = spec
                .validate(raw)
                .map_err(|reason| BoxError::InvalidValue { path: format!("{ppath}[{j}]"), reason })?;
            values.push(value);
        }
        if parameters.insert(spec.name.clone(), values).is_some() {
            return Err(BoxError::shape(ppath, format!("{:?} given more than once (alias)", spec.name)));
        }
    }
    for spec in descriptor.schema.entries() {
        if spec.required && !parameters.contains_key(&spec.name) {
            return Err(BoxError::MissingParameter { path: params_path, name: spec.name.clone() });
        }
    }

    let metrics_path = format!("{path}.metrics");
    let raw_metrics = obj
        .get("metrics")
        .ok_or_else(|| BoxError::shape(path, "missing key \"metrics\""))?
        .as_array()
        .ok_or_else(|| BoxError::shape(&metrics_path, "expected an array"))?;
    if raw_metrics.is_empty() {
        return Err(BoxError::InvalidValue { path: metrics_path, reason: "empty metric list".into() });
    }
    let mut metrics = Vec::with_capacity(raw_metrics.len());
    for (j, m) in raw_metrics.iter().enumerate() {
        let mpath = format!("{metrics_path}[{j}]");
        let m = m.as_str().ok_or_else(|| BoxError::shape(&mpath, "expected a string"))?;
        if descriptor.metric(m).is_none() {
            return Err(BoxError::UnknownMetric { path: mpath, task: task_name.to_string(), name: m.to_string() });
        }
        if metrics.iter().any(|x: &String| x == m) {
            return Err(BoxError::shape(mpath, format!("metric {m:?} listed twice")));
        }
        metrics.push(m.to_string());
    }

    Ok(TaskInvocation { task_name: task_name.to_string(), parameters, metrics })
}
