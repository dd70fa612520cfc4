//! Parsers for untrusted oracle replies.
//!
//! Models are told to return bare JSON or a bare label and routinely don't,
//! so extraction skips code fences and surrounding prose.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Deserialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::distribution::RawDistribution;
use crate::schema::{eq_ignore_case, DatasetSchema, FeatureSpec};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseError {
    #[error("no JSON value found in response")]
    NoJsonFound,
    #[error("weight for `{0}` is not a number")]
    NonNumericWeight(String),
    #[error("`{0}` is not one of the listed categories")]
    NotACategory(String),
    #[error("row {row}: missing or non-text value for column `{column}`")]
    SchemaMismatch { row: usize, column: String },
}

/// Parses one JSON value starting at byte `start`, ignoring whatever follows.
fn value_at(text: &str, start: usize) -> Option<Value> {
    let mut de = serde_json::Deserializer::from_str(&text[start..]);
    Value::deserialize(&mut de).ok()
}

/// Every JSON value that begins at an opening brace or bracket, in order.
fn json_candidates<'t>(text: &'t str, openers: &'t [char]) -> impl Iterator<Item = Value> + 't {
    text.char_indices()
        .filter(move |(_, c)| openers.contains(c))
        .filter_map(move |(i, _)| value_at(text, i))
}

pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    json_candidates(text, &['{']).find_map(|v| match v {
        Value::Object(m) => Some(m),
        _ => None,
    })
}

/// First JSON object in `text`, read as a label → weight map.
///
/// Keys are mapped onto `spec`'s categories exactly, then case-insensitively;
/// keys that match nothing are passed through for the validator to reject.
/// An object whose only entry is another object (`{"probabilities": {...}}`)
/// is unwrapped.
pub fn parse_distribution_response(text: &str, spec: &FeatureSpec) -> Result<RawDistribution, ResponseError> {
    let mut obj = extract_json_object(text).ok_or(ResponseError::NoJsonFound)?;
    while obj.len() == 1 && obj.values().all(Value::is_object) {
        let inner = obj.into_iter().next().map(|(_, v)| v);
        match inner {
            Some(Value::Object(m)) => obj = m,
            _ => unreachable!(),
        }
    }
    let mut raw = RawDistribution::new();
    for (key, value) in obj {
        let weight = value
            .as_f64()
            .ok_or_else(|| ResponseError::NonNumericWeight(key.clone()))?;
        let label = match spec.match_label(&key) {
            Some(i) => spec.categories[i].clone(),
            None => key,
        };
        raw.push(label, weight);
    }
    Ok(raw)
}

/// Outcome of parsing a whole-table reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub table: Table,
    pub requested: u64,
}

impl ParsedTable {
    pub fn received(&self) -> usize {
        self.table.len()
    }

    pub fn shortfall(&self) -> u64 {
        self.requested.saturating_sub(self.table.len() as u64)
    }
}

fn rows_of(value: &Value) -> Option<Vec<&Map<String, Value>>> {
    match value {
        Value::Array(items) => items.iter().map(Value::as_object).collect(),
        Value::Object(m) => {
            // A wrapper such as {"records": [...]} holding the row array.
            if m.len() == 1 {
                if let Some(inner @ Value::Array(_)) = m.values().next() {
                    return rows_of(inner);
                }
            }
            None
        }
        _ => None,
    }
}

fn is_column_object(value: &Value) -> bool {
    matches!(value, Value::Object(m) if !m.is_empty() && m.values().all(Value::is_array))
}

fn lookup<'v>(obj: &'v Map<String, Value>, column: &str) -> Option<&'v Value> {
    obj.get(column).or_else(|| {
        obj.iter()
            .find(|(k, _)| eq_ignore_case(k.trim(), column))
            .map(|(_, v)| v)
    })
}

fn cell_text(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses a table reply: an array of row objects, a single-key wrapper around
/// one, or a column name → value array object. Off-list labels are kept and
/// flagged in the returned table.
pub fn parse_table_response(text: &str, schema: &DatasetSchema, requested: u64) -> Result<ParsedTable, ResponseError> {
    let value = json_candidates(text, &['[', '{'])
        .find(|v| (rows_of(v).is_some_and(|r| !r.is_empty() || v.is_array())) || is_column_object(v))
        .ok_or(ResponseError::NoJsonFound)?;
    let features = schema.features();
    let mut table = Table::new(schema.clone());
    let mut labels: Vec<String> = Vec::with_capacity(features.len());
    if let Some(rows) = rows_of(&value) {
        for (r, row) in rows.into_iter().enumerate() {
            labels.clear();
            for f in features {
                let text = lookup(row, &f.name)
                    .and_then(cell_text)
                    .ok_or_else(|| ResponseError::SchemaMismatch {
                        row: r,
                        column: f.name.clone(),
                    })?;
                labels.push(text);
            }
            table.push_row(&labels);
        }
    } else if let Value::Object(cols) = &value {
        let mut columns = Vec::with_capacity(features.len());
        for f in features {
            match lookup(cols, &f.name) {
                Some(Value::Array(items)) => columns.push(items),
                _ => {
                    return Err(ResponseError::SchemaMismatch {
                        row: 0,
                        column: f.name.clone(),
                    })
                }
            }
        }
        let n = columns.iter().map(|c| c.len()).max().unwrap_or(0);
        for r in 0..n {
            labels.clear();
            for (f, col) in features.iter().zip(&columns) {
                let text = col
                    .get(r)
                    .and_then(cell_text)
                    .ok_or_else(|| ResponseError::SchemaMismatch {
                        row: r,
                        column: f.name.clone(),
                    })?;
                labels.push(text);
            }
            table.push_row(&labels);
        }
    }
    Ok(ParsedTable { table, requested })
}

/// Reads a single label: whitespace, quotes, code fences and a trailing
/// period are stripped before matching exactly, then case-insensitively.
pub fn parse_cell_response(text: &str, spec: &FeatureSpec) -> Result<String, ResponseError> {
    let mut s = text.trim();
    if let Some(inner) = s.strip_prefix("```") {
        // Drop an optional language tag on the fence line.
        let inner = match inner.find('\n') {
            Some(nl) => &inner[nl + 1..],
            None => inner,
        };
        s = inner.trim_end().trim_end_matches("```").trim();
    }
    let unquote = |t: &'_ str| -> String {
        t.trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c.is_whitespace())
            .into()
    };
    let candidates = [unquote(s), unquote(s.trim_end_matches('.'))];
    candidates
        .iter()
        .find_map(|c| spec.match_label(c))
        .map(|i| spec.categories[i].clone())
        .ok_or_else(|| ResponseError::NotACategory(text.into()))
}
