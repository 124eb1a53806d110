use crate::ops::{to_json, Outcome};
use crate::spec::Operation;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const REPORT_SCHEMA: &str = "randcvx-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub operation: Operation,
    pub seed: u64,
    pub atoms: Vec<String>,
    pub result: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
    /// SHA-256 of everything above, in canonical JSON.
    pub determinism_hash: String,
    pub timings: Timings,
}

/// Hex SHA-256 of the compact JSON of `v`; object keys are sorted.
pub fn hash_json(v: &Value) -> String {
    hex::encode(Sha256::digest(
        serde_json::to_vec(v).expect("json values serialize"),
    ))
}

impl Report {
    pub fn new(
        operation: Operation,
        seed: u64,
        atoms: Vec<String>,
        outcome: Outcome,
        elapsed_ms: f64,
    ) -> Self {
        let mut r = Report {
            schema: REPORT_SCHEMA.into(),
            operation,
            seed,
            atoms,
            result: outcome.result,
            verdict: outcome.verdict,
            determinism_hash: String::new(),
            timings: Timings { elapsed_ms },
        };
        r.determinism_hash = r.content_hash();
        r
    }

    pub fn content_hash(&self) -> String {
        let mut v = to_json(self);
        let obj = v.as_object_mut().expect("reports are objects");
        obj.remove("determinism_hash");
        obj.remove("timings");
        hash_json(&v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }
}
