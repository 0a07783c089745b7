//! Cross-product expansion of task invocations into concrete tests.

use std::collections::BTreeMap;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::boxfile::{MeasurementBox, TaskInvocation};
use crate::params::{ParamValue, ParameterSchema};

/// One concrete parameter assignment of a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub task_name: String,
    pub test_id: u64,
    pub assignment: BTreeMap<String, ParamValue>,
    pub metrics: Vec<String>,
}

impl TestCase {
    pub fn param(&self, name: &str) -> Option<&ParamValue> {
        self.assignment.get(name)
    }
}

/// Expands one invocation, numbering tests from `first_id`.
///
/// Tests enumerate the cross product of the parameter lists in odometer order
/// over the alphabetically sorted parameter names (the last name varies
/// fastest). Every test carries the invocation's full metric list. Optional
/// parameters the box omits are filled with their schema defaults.
pub fn expand_tests(invocation: &TaskInvocation, schema: &ParameterSchema, first_id: u64) -> Vec<TestCase> {
    let defaults: BTreeMap<&str, &ParamValue> = schema
        .entries()
        .iter()
        .filter(|spec| !invocation.parameters.contains_key(&spec.name))
        .filter_map(|spec| spec.default.as_ref().map(|d| (spec.name.as_str(), d)))
        .collect();

    // BTreeMap iteration is already sorted by name.
    let names: Vec<&String> = invocation.parameters.keys().collect();
    let combos: Vec<Vec<&ParamValue>> = if names.is_empty() {
        vec![Vec::new()]
    } else {
        invocation.parameters.values().map(|vals| vals.iter()).multi_cartesian_product().collect()
    };

    combos
        .into_iter()
        .enumerate()
        .map(|(i, combo)| {
            let mut assignment: BTreeMap<String, ParamValue> =
                defaults.iter().map(|(k, v)| (k.to_string(), (*v).clone())).collect();
            for (name, value) in names.iter().zip(combo) {
                assignment.insert((*name).clone(), value.clone());
            }
            TestCase {
                task_name: invocation.task_name.clone(),
                test_id: first_id + i as u64,
                assignment,
                metrics: invocation.metrics.clone(),
            }
        })
        .collect()
}

/// Expands every invocation of a box; test ids are box-wide ordinals.
pub fn expand_box(mbox: &MeasurementBox, schema_of: impl Fn(&str) -> ParameterSchema) -> Vec<TestCase> {
    let mut tests = Vec::new();
    for inv in &mbox.tasks {
        let schema = schema_of(&inv.task_name);
        let batch = expand_tests(inv, &schema, tests.len() as u64);
        tests.extend(batch);
    }
    tests
}
