//! Trace comparison: first divergent tick and the fields that differ there.

use serde::Serialize;
use serde_json::Value;
use std::collections::BTreeSet;

use crate::causal::structural_diff;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceDiff {
    pub records_a: usize,
    pub records_b: usize,
    /// Tick of the first record that differs; None when the traces match.
    pub first_divergence: Option<u64>,
    /// Paths differing in the first divergent record.
    pub fields: Vec<String>,
    pub divergent_records: usize,
}

impl TraceDiff {
    pub fn identical(&self) -> bool {
        self.first_divergence.is_none()
    }
}

fn strip(v: &mut Value, ignore: &BTreeSet<&str>) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| !ignore.contains(k.as_str()));
            for x in m.values_mut() {
                strip(x, ignore);
            }
        }
        Value::Array(a) => {
            for x in a {
                strip(x, ignore);
            }
        }
        _ => {}
    }
}

fn parse(text: &str, ignore: &BTreeSet<&str>, which: &str) -> Result<Vec<Value>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut v: Value =
                serde_json::from_str(l).map_err(|e| format!("trace {which} line {}: {e}", i + 1))?;
            strip(&mut v, ignore);
            Ok(v)
        })
        .collect()
}

fn tick_of(v: &Value, fallback: usize) -> u64 {
    v.get("tick").and_then(Value::as_u64).unwrap_or(fallback as u64)
}

/// Compare two JSON Lines traces record by record. Keys named in `ignore` are
/// removed at every depth before comparing.
pub fn diff_traces(a: &str, b: &str, ignore: &[String]) -> Result<TraceDiff, String> {
    let ignore: BTreeSet<&str> = ignore.iter().map(String::as_str).collect();
    let ra = parse(a, &ignore, "a")?;
    let rb = parse(b, &ignore, "b")?;
    let mut first = None;
    let mut fields = Vec::new();
    let mut divergent = 0usize;
    for i in 0..ra.len().max(rb.len()) {
        let (x, y) = (ra.get(i), rb.get(i));
        if x == y {
            continue;
        }
        divergent += 1;
        if first.is_none() {
            first = Some(tick_of(x.or(y).expect("one side present"), i));
            fields = match (x, y) {
                (Some(x), Some(y)) => structural_diff(x, y),
                _ => vec!["<record missing>".to_string()],
            };
        }
    }
    Ok(TraceDiff {
        records_a: ra.len(),
        records_b: rb.len(),
        first_divergence: first,
        fields,
        divergent_records: divergent,
    })
}
