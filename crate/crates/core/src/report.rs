//! Report types and JSON helpers. All JSON emitted by the crate goes through
//! [`to_json`] so reruns produce identical bytes.

use serde::Serialize;

use crate::error::Result;

/// Version tag embedded in every JSON report.
pub const SCHEMA_VERSION: u32 = 1;

/// Serialize non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod ext_f64 {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct ExtVisitor;

    impl Visitor<'_> for ExtVisitor {
        type Value = f64;
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }
        fn visit_f64<E>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }
        fn visit_i64<E>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_u64<E>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::custom(format!("unexpected float string {v}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(ExtVisitor)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedValue {
    pub name: String,
    #[serde(with = "ext_f64")]
    pub value: f64,
}

/// Outcome of an empirical check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    /// Named scalar results in insertion order.
    pub values: Vec<NamedValue>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), pass: true, values: Vec::new(), notes: Vec::new() }
    }

    pub fn value(&mut self, key: impl Into<String>, v: f64) -> &mut Self {
        self.values.push(NamedValue { name: key.into(), value: v });
        self
    }

    pub fn note(&mut self, msg: impl Into<String>) -> &mut Self {
        self.notes.push(msg.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|nv| nv.name == key).map(|nv| nv.value)
    }
}

/// Wrap a payload with the schema tag.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: u32,
    kind: &'a str,
    #[serde(flatten)]
    payload: &'a T,
}

/// Deterministic pretty JSON with a `"schema"` field.
pub fn to_json<T: Serialize>(kind: &str, payload: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Envelope { schema: SCHEMA_VERSION, kind, payload })?)
}

/// Finite float or its string spelling, for tuple-valued report entries.
pub fn json_f64(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else if v.is_nan() {
        serde_json::json!("nan")
    } else if v > 0.0 {
        serde_json::json!("inf")
    } else {
        serde_json::json!("-inf")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize)]
    struct Holder {
        #[serde(with = "ext_f64")]
        v: f64,
    }

    #[test]
    fn infinite_values_round_trip() {
        let s = serde_json::to_string(&Holder { v: f64::INFINITY }).unwrap();
        assert_eq!(s, r#"{"v":"inf"}"#);
        let h: Holder = serde_json::from_str(&s).unwrap();
        assert!(h.v.is_infinite());
        let h: Holder = serde_json::from_str(r#"{"v":2.5}"#).unwrap();
        assert_eq!(h.v, 2.5);
    }

    #[test]
    fn envelope_carries_schema() {
        let mut r = CheckReport::new("x");
        r.value("a", 1.0);
        let s = to_json("check", &r).unwrap();
        assert!(s.contains("\"schema\": 1"));
        assert!(s.contains("\"kind\": \"check\""));
    }
}
