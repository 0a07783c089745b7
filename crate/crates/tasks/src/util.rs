//! Typed access to test assignments.

use anyhow::{anyhow, Result};
use bento_core::TestCase;

pub fn opt_u64(test: &TestCase, name: &str) -> Result<Option<u64>> {
    match test.param(name) {
        None => Ok(None),
        Some(v) => {
            v.as_u64().map(Some).ok_or_else(|| anyhow!("parameter {name:?} must be a non-negative integer, got {v}"))
        }
    }
}

pub fn req_u64(test: &TestCase, name: &str) -> Result<u64> {
    opt_u64(test, name)?.ok_or_else(|| anyhow!("parameter {name:?} missing"))
}

pub fn opt_f64(test: &TestCase, name: &str) -> Result<Option<f64>> {
    match test.param(name) {
        None => Ok(None),
        Some(v) => v.as_f64().map(Some).ok_or_else(|| anyhow!("parameter {name:?} must be a number, got {v}")),
    }
}

pub fn req_f64(test: &TestCase, name: &str) -> Result<f64> {
    opt_f64(test, name)?.ok_or_else(|| anyhow!("parameter {name:?} missing"))
}

pub fn opt_str<'a>(test: &'a TestCase, name: &str) -> Result<Option<&'a str>> {
    match test.param(name) {
        None => Ok(None),
        Some(v) => v.as_str().map(Some).ok_or_else(|| anyhow!("parameter {name:?} must be a string, got {v}")),
    }
}

pub fn req_str<'a>(test: &'a TestCase, name: &str) -> Result<&'a str> {
    opt_str(test, name)?.ok_or_else(|| anyhow!("parameter {name:?} missing"))
}

pub fn req_bool(test: &TestCase, name: &str) -> Result<bool> {
    match test.param(name) {
        None => Err(anyhow!("parameter {name:?} missing")),
        Some(v) => v.as_bool().ok_or_else(|| anyhow!("parameter {name:?} must be a boolean, got {v}")),
    }
}

/// Stands for "start a server inside this process" in address parameters.
pub const LOOPBACK: &str = "loopback";
