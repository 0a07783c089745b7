//! Parameter values and per-task parameter schemas.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// A single, validated parameter value.
///
/// Sizes are normalized to [`ParamValue::Int`] byte counts during validation,
/// so `"8KB"` and `8192` produce the same value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        self.as_i64().and_then(|v| u64::try_from(v).ok())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ParamValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("parameter values are always representable")
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Str(s) => f.write_str(s),
        }
    }
}

/// Value kind and constraint of a schema entry.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamKind {
    /// Integer in `[min, max]`, optionally restricted to an explicit set.
    Integer {
        min: i64,
        max: i64,
        allowed: Option<Vec<i64>>,
    },
    /// Floating-point number in `[min, max]`.
    Float {
        min: f64,
        max: f64,
    },
    /// Byte count in `[min, max]`; accepts integers or strings like `"8KB"`.
    Size {
        min: u64,
        max: u64,
    },
    /// One of a fixed set of strings.
    Enum {
        values: Vec<String>,
    },
    Bool,
    /// Free-form string (addresses, paths).
    Text,
    /// `"<host>:<dpu>"` pair of non-negative integers, not both zero.
    Ratio,
}

/// One parameter accepted by a task.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    pub default: Option<ParamValue>,
    /// Alternative names accepted in box files; normalized to `name`.
    pub aliases: Vec<String>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, kind: ParamKind) -> Self {
        Self { name: name.into(), kind, required: false, default: None, aliases: Vec::new() }
    }

    pub fn required(mut self) -> Self {
        self.required = true;
        self
    }

    pub fn default_value(mut self, value: ParamValue) -> Self {
        self.default = Some(value);
        self
    }

    pub fn alias(mut self, alias: impl Into<String>) -> Self {
        self.aliases.push(alias.into());
        self
    }

    pub fn int(name: &str, min: i64, max: i64) -> Self {
        Self::new(name, ParamKind::Integer { min, max, allowed: None })
    }

    pub fn int_set(name: &str, allowed: &[i64]) -> Self {
        let min = allowed.iter().copied().min().unwrap_or(0);
        let max = allowed.iter().copied().max().unwrap_or(0);
        Self::new(name, ParamKind::Integer { min, max, allowed: Some(allowed.to_vec()) })
    }

    pub fn float(name: &str, min: f64, max: f64) -> Self {
        Self::new(name, ParamKind::Float { min, max })
    }

    pub fn size(name: &str, min: u64, max: u64) -> Self {
        Self::new(name, ParamKind::Size { min, max })
    }

    pub fn enumeration(name: &str, values: &[&str]) -> Self {
        Self::new(name, ParamKind::Enum { values: values.iter().map(|s| s.to_string()).collect() })
    }

    pub fn boolean(name: &str) -> Self {
        Self::new(name, ParamKind::Bool)
    }

    pub fn text(name: &str) -> Self {
        Self::new(name, ParamKind::Text)
    }

    pub fn ratio(name: &str) -> Self {
        Self::new(name, ParamKind::Ratio)
    }

    /// Validates a raw JSON value and normalizes it.
    pub fn validate(&self, raw: &Value) -> Result<ParamValue, String> {
        match &self.kind {
            ParamKind::Integer { min, max, allowed } => {
                let v = raw.as_i64().ok_or_else(|| format!("expected an integer, got {raw}"))?;
                if v < *min || v > *max {
                    return Err(format!("{v} outside [{min}, {max}]"));
                }
                if let Some(set) = allowed {
                    if !set.contains(&v) {
                        return Err(format!("{v} not one of {set:?}"));
                    }
                }
                Ok(ParamValue::Int(v))
            }
            ParamKind::Float { min, max } => {
                let v = raw.as_f64().ok_or_else(|| format!("expected a number, got {raw}"))?;
                if !v.is_finite() || v < *min || v > *max {
                    return Err(format!("{v} outside [{min}, {max}]"));
                }
                Ok(ParamValue::Float(v))
            }
            ParamKind::Size { min, max } => {
                let bytes = match raw {
                    Value::Number(n) => n.as_u64().ok_or_else(|| format!("expected a byte count, got {n}"))?,
                    Value::String(s) => parse_size(s).map_err(|e| e.to_string())?,
                    other => return Err(format!("expected a size, got {other}")),
                };
                if bytes < *min || bytes > *max {
                    return Err(format!("{bytes} bytes outside [{min}, {max}]"));
                }
                i64::try_from(bytes)
                    .map(ParamValue::Int)
                    .map_err(|_| format!("{bytes} bytes does not fit a signed 64-bit integer"))
            }
            ParamKind::Enum { values } => {
                let s = raw.as_str().ok_or_else(|| format!("expected a string, got {raw}"))?;
                if values.iter().any(|v| v == s) {
                    Ok(ParamValue::Str(s.to_string()))
                } else {
                    Err(format!("{s:?} not one of {values:?}"))
                }
            }
            ParamKind::Bool => {
                raw.as_bool().map(ParamValue::Bool).ok_or_else(|| format!("expected true or false, got {raw}"))
            }
            ParamKind::Text => raw
                .as_str()
                .map(|s| ParamValue::Str(s.to_string()))
                .ok_or_else(|| format!("expected a string, got {raw}")),
            ParamKind::Ratio => {
                let s = raw.as_str().ok_or_else(|| format!("expected \"a:b\", got {raw}"))?;
                parse_ratio(s).map(|_| ParamValue::Str(s.to_string()))
            }
        }
    }

    fn accepts(&self, name: &str) -> bool {
        self.name == name || self.aliases.iter().any(|a| a == name)
    }
}

/// Ordered list of the parameters a task accepts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSchema {
    entries: Vec<ParamSpec>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("parameter name {0:?} declared twice")]
    DuplicateName(String),
    #[error("default of {name:?} violates its own constraint: {reason}")]
    BadDefault { name: String, reason: String },
}

impl ParameterSchema {
    pub fn new(entries: Vec<ParamSpec>) -> Result<Self, SchemaError> {
        let mut seen = HashSet::new();
        for spec in &entries {
            for name in std::iter::once(&spec.name).chain(&spec.aliases) {
                if !seen.insert(name.clone()) {
                    return Err(SchemaError::DuplicateName(name.clone()));
                }
            }
            if let Some(default) = &spec.default {
                spec.validate(&default.to_json())
                    .map_err(|reason| SchemaError::BadDefault { name: spec.name.clone(), reason })?;
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ParamSpec] {
        &self.entries
    }

    /// Looks a parameter up by its canonical name or one of its aliases.
    pub fn lookup(&self, name: &str) -> Option<&ParamSpec> {
        self.entries.iter().find(|spec| spec.accepts(name))
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid size {input:?}: {reason}")]
pub struct SizeError {
    pub input: String,
    pub reason: &'static str,
}

/// Parses a byte count such as `"512"`, `"8KB"`, `"4 MiB"` or `"1G"`.
///
/// Unit prefixes are binary: `1KB = 1024` bytes.
pub fn parse_size(input: &str) -> Result<u64, SizeError> {
    let err = |reason| SizeError { input: input.to_string(), reason };
    let trimmed = input.trim();
    let split = trimmed.find(|c: char| !c.is_ascii_digit()).unwrap_or(trimmed.len());
    let (digits, unit) = trimmed.split_at(split);
    if digits.is_empty() {
        return Err(err("missing number"));
    }
    let count: u64 = digits.parse().map_err(|_| err("number too large"))?;
    let shift = match unit.trim().to_ascii_uppercase().as_str() {
        "" | "B" => 0,
        "K" | "KB" | "KIB" => 10,
        "M" | "MB" | "MIB" => 20,
        "G" | "GB" | "GIB" => 30,
        "T" | "TB" | "TIB" => 40,
        _ => return Err(err("unknown unit")),
    };
    count.checked_mul(1u64 << shift).ok_or_else(|| err("overflows 64 bits"))
}

/// Parses `"h:d"` into its two shares.
pub fn parse_ratio(input: &str) -> Result<(u64, u64), String> {
    let (a, b) = input.split_once(':').ok_or_else(|| format!("{input:?} is not of the form \"a:b\""))?;
    let a: u64 = a.trim().parse().map_err(|_| format!("bad share {a:?} in {input:?}"))?;
    let b: u64 = b.trim().parse().map_err(|_| format!("bad share {b:?} in {input:?}"))?;
    if a == 0 && b == 0 {
        return Err(format!("{input:?} has no non-zero share"));
    }
    Ok((a, b))
}
