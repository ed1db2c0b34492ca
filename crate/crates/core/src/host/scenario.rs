//! Scenario files: initial documents, scripted inputs and network responses.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::markup;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    /// Seeds the background scheduler (recording only).
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_prng_seed")]
    pub prng_seed: u64,
    pub duration_ms: u64,
    #[serde(default)]
    pub documents: Vec<DocumentSpec>,
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub network: IndexMap<String, ResponseSpec>,
    #[serde(default)]
    pub resources: IndexMap<String, ResourceSpec>,
}

fn default_prng_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentSpec {
    pub name: String,
    pub markup: String,
    /// Parsed incrementally by the background parser instead of up front.
    #[serde(default)]
    pub streamed: bool,
    /// Bytes consumed per parser step, inclusive range.
    #[serde(default = "default_chunk")]
    pub chunk: [u64; 2],
}

fn default_chunk() -> [u64; 2] {
    [4, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub at: u64,
    pub kind: String,
    /// `#id`, `document:name`, or a tag name.
    pub target: String,
    #[serde(default)]
    pub payload: IndexMap<String, Scalar>,
}

/// Guest-encodable payload value.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Num(f64),
    Str(String),
    Bool(bool),
    Null,
}

// Scalars are plain JSON values in scenario files but need a self-describing
// tag in binary logs, so each format gets its own encoding.
impl Serialize for Scalar {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if s.is_human_readable() {
            match self {
                Scalar::Num(n) => s.serialize_f64(*n),
                Scalar::Str(v) => s.serialize_str(v),
                Scalar::Bool(b) => s.serialize_bool(*b),
                Scalar::Null => s.serialize_unit(),
            }
        } else {
            ScalarRepr::from(self.clone()).serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        if d.is_human_readable() {
            let v = serde_json::Value::deserialize(d)?;
            match v {
                serde_json::Value::Number(n) => Ok(Scalar::Num(n.as_f64().unwrap_or(0.0))),
                serde_json::Value::String(s) => Ok(Scalar::Str(s)),
                serde_json::Value::Bool(b) => Ok(Scalar::Bool(b)),
                serde_json::Value::Null => Ok(Scalar::Null),
                _ => Err(serde::de::Error::custom("payload values must be scalars")),
            }
        } else {
            Ok(ScalarRepr::deserialize(d)?.into())
        }
    }
}

#[derive(Serialize, Deserialize)]
enum ScalarRepr {
    Num(f64),
    Str(String),
    Bool(bool),
    Null,
}

impl From<Scalar> for ScalarRepr {
    fn from(s: Scalar) -> Self {
        match s {
            Scalar::Num(n) => ScalarRepr::Num(n),
            Scalar::Str(v) => ScalarRepr::Str(v),
            Scalar::Bool(b) => ScalarRepr::Bool(b),
            Scalar::Null => ScalarRepr::Null,
        }
    }
}

impl From<ScalarRepr> for Scalar {
    fn from(s: ScalarRepr) -> Self {
        match s {
            ScalarRepr::Num(n) => Scalar::Num(n),
            ScalarRepr::Str(v) => Scalar::Str(v),
            ScalarRepr::Bool(b) => Scalar::Bool(b),
            ScalarRepr::Null => Scalar::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSpec {
    #[serde(default = "default_status")]
    pub status: u32,
    #[serde(default)]
    pub body: String,
    /// Delay after send until headers arrive.
    #[serde(default = "default_headers_ms")]
    pub headers_ms: u64,
    /// Body arrival schedule relative to send; defaults to one chunk.
    #[serde(default)]
    pub chunks: Vec<ChunkSpec>,
}

fn default_status() -> u32 {
    200
}

fn default_headers_ms() -> u64 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkSpec {
    pub after_ms: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSpec {
    pub width: u32,
    pub height: u32,
    pub bytes: u64,
    #[serde(default)]
    pub delay_ms: Option<u64>,
    #[serde(default)]
    pub fail: bool,
}

impl ResourceSpec {
    pub fn delay(&self) -> u64 {
        self.delay_ms.unwrap_or(40 + self.bytes / 64)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported scenario version {0} (expected {SCENARIO_VERSION})")]
    Version(u32),
    #[error("document `{name}`: {error}")]
    Markup { name: String, error: markup::MarkupError },
    #[error("{0}")]
    Invalid(String),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        if self.duration_ms == 0 {
            return Err(ScenarioError::Invalid("duration_ms must be positive".into()));
        }
        let mut names = std::collections::HashSet::new();
        for d in &self.documents {
            if !names.insert(&d.name) {
                return Err(ScenarioError::Invalid(format!("duplicate document `{}`", d.name)));
            }
            markup::validate(&d.markup).map_err(|error| ScenarioError::Markup { name: d.name.clone(), error })?;
            if d.chunk[0] == 0 || d.chunk[0] > d.chunk[1] {
                return Err(ScenarioError::Invalid(format!("document `{}`: bad chunk range", d.name)));
            }
        }
        for i in &self.inputs {
            if i.at > self.duration_ms {
                return Err(ScenarioError::Invalid(format!("input at {} is past the end", i.at)));
            }
            if i.kind.is_empty() || i.target.is_empty() {
                return Err(ScenarioError::Invalid("input needs kind and target".into()));
            }
        }
        for (url, r) in &self.network {
            let mut last = 0;
            for c in &r.chunks {
                if c.after_ms < last {
                    return Err(ScenarioError::Invalid(format!("{url}: chunks out of order")));
                }
                last = c.after_ms;
            }
        }
        Ok(())
    }

    /// Stable 64-bit identity of the scenario content.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let d = Sha256::digest(json.as_bytes());
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_errors() {
        let s = Scenario::from_json(r#"{"version":1,"duration_ms":100}"#).unwrap();
        assert_eq!(s.prng_seed, 1);
        assert!(matches!(Scenario::from_json(r#"{"version":2,"duration_ms":100}"#), Err(ScenarioError::Version(2))));
        assert!(Scenario::from_json(r#"{"version":1,"duration_ms":100,"bogus":1}"#).is_err());
        assert!(Scenario::from_json(r#"{"version":1,"duration_ms":100,"documents":[{"name":"m","markup":"<a>"}]}"#)
            .is_err());
    }

    #[test]
    fn payload_round_trips_in_both_encodings() {
        let s = Scenario::from_json(
            r##"{"version":1,"duration_ms":100,"inputs":[{"at":5,"kind":"click","target":"#b","payload":{"x":3,"k":"a","t":true,"n":null}}]}"##,
        )
        .unwrap();
        let again = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(s, again);
        let bin = bincode::serialize(&s.inputs[0].payload).unwrap();
        let back: IndexMap<String, Scalar> = bincode::deserialize(&bin).unwrap();
        assert_eq!(back, s.inputs[0].payload);
        assert_eq!(s.hash(), again.hash());
    }
}
