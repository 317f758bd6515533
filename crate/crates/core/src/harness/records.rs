//! Append-only, replayable run records: line-delimited JSON plus a CSV
//! projection for plotting. Wall-clock timings are recorded but excluded
//! from the deterministic payload that replay compares.

use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    /// `None` marks report-only diagnostics (no pass/fail semantics).
    pub passed: Option<bool>,
    pub details: String,
    pub metrics: Vec<(String, f64)>,
}

impl CheckOutcome {
    pub fn report(name: &str, details: String, metrics: Vec<(String, f64)>) -> Self {
        CheckOutcome { name: name.into(), passed: None, details, metrics }
    }

    pub fn gate(name: &str, passed: bool, details: String, metrics: Vec<(String, f64)>) -> Self {
        CheckOutcome { name: name.into(), passed: Some(passed), details, metrics }
    }

    pub fn failed(&self) -> bool {
        self.passed == Some(false)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub checks: Vec<CheckOutcome>,
    pub version: String,
    /// Per-check wall time; informational only.
    pub timings_ms: Vec<(String, u64)>,
}

impl RunRecord {
    pub fn new(config_hash: String, seed: u64, warnings: Vec<String>) -> Self {
        RunRecord {
            config_hash,
            seed,
            warnings,
            checks: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timings_ms: Vec::new(),
        }
    }

    /// The byte-stable projection replay compares (timings excluded).
    pub fn deterministic_payload(&self) -> String {
        #[derive(Serialize)]
        struct Payload<'a> {
            config_hash: &'a str,
            seed: u64,
            warnings: &'a [String],
            checks: &'a [CheckOutcome],
        }
        serde_json::to_string(&Payload {
            config_hash: &self.config_hash,
            seed: self.seed,
            warnings: &self.warnings,
            checks: &self.checks,
        })
        .expect("record serialization")
    }

    pub fn any_failed(&self) -> bool {
        self.checks.iter().any(|c| c.failed())
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{}", serde_json::to_string(self).expect("record serialization"))?;
        Ok(())
    }

    /// Flat CSV projection: check, passed, metric, value.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "check,passed,metric,value")?;
        for c in &self.checks {
            let p = match c.passed {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "report",
            };
            if c.metrics.is_empty() {
                writeln!(w, "{},{},,", c.name, p)?;
            }
            for (k, v) in &c.metrics {
                writeln!(w, "{},{},{},{}", c.name, p, k, v)?;
            }
        }
        Ok(())
    }
}

pub fn read_records(text: &str) -> Result<Vec<RunRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| crate::Error::Parse(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_and_payload_stability() {
        let mut rec = RunRecord::new("abc".into(), 7, vec!["w".into()]);
        rec.checks.push(CheckOutcome::gate("x", true, "ok".into(), vec![("v".into(), 1.5)]));
        rec.timings_ms.push(("x".into(), 12));
        let mut buf = Vec::new();
        rec.write_jsonl(&mut buf).unwrap();
        let loaded = read_records(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].deterministic_payload(), rec.deterministic_payload());
        let mut rec2 = rec.clone();
        rec2.timings_ms.clear();
        assert_eq!(rec.deterministic_payload(), rec2.deterministic_payload());
    }
}
