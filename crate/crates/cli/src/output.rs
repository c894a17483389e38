use std::io::Write;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::commands::CliError;
use crate::{Common, Format};

/// Effective settings of a run, echoed into every output.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<Value>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signs: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// A finished run: the JSON result plus the rows used for CSV output.
pub struct Outcome {
    pub result: Value,
    pub rows: Vec<Value>,
}

impl Outcome {
    /// Single-row CSV made of the scalar fields of `result`.
    pub fn scalar(result: impl Serialize) -> Result<Self, CliError> {
        let result = serde_json::to_value(result).map_err(CliError::internal)?;
        Ok(Self { rows: vec![result.clone()], result })
    }

    pub fn with_rows(result: impl Serialize, rows: Vec<Value>) -> Result<Self, CliError> {
        Ok(Self { result: serde_json::to_value(result).map_err(CliError::internal)?, rows })
    }
}

fn cell(v: &Value) -> String {
    let text = match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        Value::Bool(_) | Value::Number(_) => v.to_string(),
        _ => v.to_string(),
    };
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text
    }
}

pub fn to_csv(rows: &[Value]) -> String {
    let Some(Value::Object(first)) = rows.first() else {
        return String::new();
    };
    let keys: Vec<&String> = first.keys().collect();
    let mut out = keys.iter().map(|k| cell(&Value::String((*k).clone()))).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = keys.iter().map(|k| cell(row.get(k.as_str()).unwrap_or(&Value::Null))).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn emit(common: &Common, config: &RunConfig, outcome: Outcome, elapsed_ms: u128) -> Result<(), CliError> {
    let text = match common.format {
        Format::Json => {
            let doc = json!({
                "tool": "smallball",
                "tool_version": env!("CARGO_PKG_VERSION"),
                "config": config,
                "seed": config.seed,
                "elapsed_ms": elapsed_ms as u64,
                "result": outcome.result,
            });
            let mut s = serde_json::to_string_pretty(&doc).map_err(CliError::internal)?;
            s.push('\n');
            s
        }
        Format::Csv => to_csv(&outcome.rows),
    };
    match &common.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| CliError::Internal(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_orders_columns() {
        let rows = vec![json!({"a": 1, "b": "x,y"}), json!({"a": 2.5, "b": [1, 2]})];
        assert_eq!(to_csv(&rows), "a,b\n1,\"x,y\"\n2.5,\"[1,2]\"\n");
        assert_eq!(to_csv(&[]), "");
    }
}
