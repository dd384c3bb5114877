//! JSON run reports with a fixed key order and exact real round-trips.
//!
//! Pass/fail is derived from the tolerances: a tolerance named `<metric>.min`
//! requires `metric >= value`, and `<metric>.max` requires `metric <= value`.
//! [`ExperimentReport::recompute_pass`] re-derives the verdict from a parsed
//! file alone.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Result, SosmError};

pub const REPORT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Text(String),
    Bool(bool),
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Real(v)
    }
}

impl From<usize> for ParamValue {
    fn from(v: usize) -> Self {
        ParamValue::Int(v as i64)
    }
}

impl From<u64> for ParamValue {
    fn from(v: u64) -> Self {
        ParamValue::Int(v as i64)
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(v: String) -> Self {
        ParamValue::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub version: String,
    pub seed: u64,
    pub inputs_digest: String,
    pub params: Vec<(String, ParamValue)>,
    pub metrics: Vec<(String, f64)>,
    pub tolerances: Vec<(String, f64)>,
    pub pass: bool,
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        ExperimentReport {
            name: name.into(),
            version: REPORT_VERSION.to_string(),
            seed,
            inputs_digest: digest(b""),
            params: Vec::new(),
            metrics: Vec::new(),
            tolerances: Vec::new(),
            pass: false,
            runtime_seconds: 0.0,
        }
    }

    pub fn param(&mut self, key: impl Into<String>, value: impl Into<ParamValue>) -> &mut Self {
        self.params.push((key.into(), value.into()));
        self
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.metrics.push((key.into(), value));
        self
    }

    pub fn tolerance(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.tolerances.push((key.into(), value));
        self
    }

    pub fn get_metric(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    pub fn get_param(&self, key: &str) -> Option<&ParamValue> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Verdict implied by the recorded metrics and tolerances.
    pub fn recompute_pass(&self) -> bool {
        self.tolerances.iter().all(|(key, bound)| {
            let bound = *bound;
            let (metric, check) = match key.rsplit_once('.') {
                Some((m, c)) => (m, c),
                None => return true,
            };
            match (self.get_metric(metric), check) {
                (Some(v), "min") => v >= bound,
                (Some(v), "max") => v <= bound,
                (None, "min" | "max") => false,
                _ => true,
            }
        })
    }

    /// Sets `pass` from [`Self::recompute_pass`].
    pub fn finalize(&mut self) -> &mut Self {
        self.pass = self.recompute_pass();
        self
    }

    /// Serialized JSON text.
    pub fn to_json(&self) -> Result<String> {
        let mut out = String::from("{\n");
        let _ = writeln!(out, "  \"name\": {},", quote(&self.name));
        let _ = writeln!(out, "  \"version\": {},", quote(&self.version));
        let _ = writeln!(out, "  \"seed\": {},", self.seed);
        let _ = writeln!(out, "  \"inputs_digest\": {},", quote(&self.inputs_digest));
        out.push_str("  \"params\": ");
        write_object(&mut out, &self.params, |v| match v {
            ParamValue::Int(i) => Ok(i.to_string()),
            ParamValue::Real(x) => real("params", *x),
            ParamValue::Text(s) => Ok(quote(s)),
            ParamValue::Bool(b) => Ok(b.to_string()),
        })?;
        out.push_str(",\n  \"metrics\": ");
        write_object(&mut out, &self.metrics, |v| real("metrics", *v))?;
        out.push_str(",\n  \"tolerances\": ");
        write_object(&mut out, &self.tolerances, |v| real("tolerances", *v))?;
        let _ = write!(out, ",\n  \"pass\": {},\n", self.pass);
        let _ = writeln!(out, "  \"runtime_seconds\": {}", real("runtime_seconds", self.runtime_seconds)?);
        out.push_str("}\n");
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |m: &str| SosmError::Serialization(m.to_string());
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(&e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| bad("report is not an object"))?;
        let field = |k: &str| obj.get(k).ok_or_else(|| bad(&format!("missing key '{k}'")));
        let text_of = |k: &str| -> Result<String> {
            field(k)?.as_str().map(str::to_string).ok_or_else(|| bad(&format!("'{k}' is not a string")))
        };
        let reals = |k: &str| -> Result<Vec<(String, f64)>> {
            let o = field(k)?.as_object().ok_or_else(|| bad(&format!("'{k}' is not an object")))?;
            o.iter()
                .map(|(name, x)| {
                    x.as_f64().map(|f| (name.clone(), f)).ok_or_else(|| bad(&format!("{k}.{name} is not a number")))
                })
                .collect()
        };
        let params = field("params")?
            .as_object()
            .ok_or_else(|| bad("'params' is not an object"))?
            .iter()
            .map(|(name, x)| {
                let value = match x {
                    serde_json::Value::Bool(b) => ParamValue::Bool(*b),
                    serde_json::Value::String(s) => ParamValue::Text(s.clone()),
                    serde_json::Value::Number(n) => match n.as_i64() {
                        Some(i) if !n.to_string().contains(['.', 'e', 'E']) => ParamValue::Int(i),
                        _ => ParamValue::Real(n.as_f64().ok_or_else(|| bad("bad number"))?),
                    },
                    _ => return Err(bad(&format!("params.{name} has unsupported type"))),
                };
                Ok((name.clone(), value))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentReport {
            name: text_of("name")?,
            version: text_of("version")?,
            seed: field("seed")?.as_u64().ok_or_else(|| bad("'seed' is not an unsigned integer"))?,
            inputs_digest: text_of("inputs_digest")?,
            params,
            metrics: reals("metrics")?,
            tolerances: reals("tolerances")?,
            pass: field("pass")?.as_bool().ok_or_else(|| bad("'pass' is not a boolean"))?,
            runtime_seconds: field("runtime_seconds")?.as_f64().ok_or_else(|| bad("bad runtime_seconds"))?,
        })
    }
}

fn quote(s: &str) -> String {
    serde_json::Value::String(s.to_string()).to_string()
}

fn real(section: &str, x: f64) -> Result<String> {
    if x.is_finite() {
        Ok(format!("{x:.16e}"))
    } else {
        Err(SosmError::Serialization(format!("non-finite value {x} in {section}")))
    }
}

fn write_object<T>(out: &mut String, items: &[(String, T)], value: impl Fn(&T) -> Result<String>) -> Result<()> {
    if items.is_empty() {
        out.push_str("{}");
        return Ok(());
    }
    out.push_str("{\n");
    for (n, (k, v)) in items.iter().enumerate() {
        let sep = if n + 1 == items.len() { "" } else { "," };
        let _ = writeln!(out, "    {}: {}{}", quote(k), value(v)?, sep);
    }
    out.push_str("  }");
    Ok(())
}

/// Hex SHA-256 of the given bytes.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a real array, independent of platform formatting.
pub fn digest_reals<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    let text = report.to_json()?;
    std::fs::write(path, text).map_err(|e| SosmError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path).map_err(|e| SosmError::io(path, e))?;
    ExperimentReport::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ExperimentReport {
        let mut r = ExperimentReport::new("sample", 7);
        r.param("k", 8usize).param("penalty", "pairwise").param("sigma", 0.1).param("exact", true);
        r.metric("rho", 0.93).metric("tiny", 1e-300).metric("third", 1.0 / 3.0);
        r.tolerance("rho.min", 0.9);
        r.finalize();
        r
    }

    #[test]
    fn key_order_is_fixed() {
        let text = sample().to_json().unwrap();
        let keys = ["name", "version", "seed", "inputs_digest", "params", "metrics", "tolerances", "pass", "runtime_seconds"];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn round_trip_is_exact() {
        let r = sample();
        assert!(r.pass);
        let back = ExperimentReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn nan_is_rejected() {
        let mut r = sample();
        r.metric("bad", f64::NAN);
        assert!(matches!(r.to_json(), Err(SosmError::Serialization(_))));
    }

    #[test]
    fn verdict_follows_tolerances() {
        let mut r = sample();
        r.tolerance("third.max", 0.3);
        assert!(!r.recompute_pass());
        r.tolerance("missing.min", 0.0);
        assert!(!r.recompute_pass());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = write_report(&sample(), Path::new("/nonexistent-dir/x/report.json")).unwrap_err();
        assert!(matches!(err, SosmError::Io { .. }));
    }

    proptest! {
        #[test]
        fn reals_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let mut r = ExperimentReport::new("p", 0);
            r.metric("x", x).param("y", x);
            let back = ExperimentReport::from_json(&r.to_json().unwrap()).unwrap();
            prop_assert_eq!(back.metrics[0].1.to_bits(), x.to_bits());
            prop_assert_eq!(back.params[0].1.clone(), ParamValue::Real(x));
        }
    }
}
