//! The TOML document format shared by schemas, fixtures and references.
//!
//! ```toml
//! description = "Residents of California."
//! sample_size = 10000
//!
//! [[feature]]
//! name = "Age Group"
//! kind = "categorical"            # or "numeric_range"
//! categories = ["Children (0-17)", "Adults (18+)"]
//! description = "Age group of the resident."
//! cap = 100                       # closes "N+" labels of numeric ranges
//!
//! [[distribution]]                # fixture answer to a distribution prompt
//! feature = "Age Group"
//! context = "State is California/CA."
//! weights = { "Children (0-17)" = 0.22, "Adults (18+)" = 0.78 }
//! fail_times = 0                  # scripted failures before answering
//! fail_with = "transport"         # or "garbage"
//!
//! [[cell]]                        # fixture answers to cell prompts, cycled
//! feature = "Age Group"
//! context = "State is California/CA."
//! responses = ["Children (0-17)", "Adults (18+)"]
//!
//! [table]                         # fixture answers to whole-table prompts
//! columns = ["State", "Age Group"]
//! rows = [["California/CA", "Children (0-17)"]]
//! max_rows_per_call = 60
//! responses = []                  # raw replies, used instead of rows when present
//! ```

use std::collections::BTreeMap;

use probtab_core::schema::{DatasetSchema, FeatureKind, FeatureSpec, SchemaError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<u64>,
    #[serde(default, rename = "feature", skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<FeatureEntry>,
    #[serde(default, rename = "distribution", skip_serializing_if = "Vec::is_empty")]
    pub distributions: Vec<DistributionEntry>,
    #[serde(default, rename = "cell", skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<CellEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub name: String,
    #[serde(default)]
    pub kind: FeatureKind,
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<i64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailMode {
    #[default]
    Transport,
    /// Reply with prose instead of JSON.
    Garbage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionEntry {
    pub feature: String,
    #[serde(default)]
    pub context: String,
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub fail_times: u32,
    #[serde(default)]
    pub fail_with: FailMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellEntry {
    pub feature: String,
    #[serde(default)]
    pub context: String,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default)]
    pub rows: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rows_per_call: Option<usize>,
    #[serde(default)]
    pub responses: Vec<String>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_document(text: &str) -> Result<Document, ConfigError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })
}

pub fn read_file(path: &std::path::Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Default sample size when a document does not declare one.
pub const DEFAULT_SAMPLE_SIZE: u64 = 1000;

impl Document {
    pub fn schema(&self) -> Result<DatasetSchema, ConfigError> {
        let features = self
            .features
            .iter()
            .map(|f| FeatureSpec {
                name: f.name.clone(),
                kind: f.kind,
                categories: f.categories.clone(),
                description: f.description.clone(),
                cap: f.cap,
            })
            .collect();
        Ok(DatasetSchema::new(
            features,
            self.description.clone(),
            self.sample_size.unwrap_or(DEFAULT_SAMPLE_SIZE),
        )?)
    }

    pub fn from_schema(schema: &DatasetSchema) -> Self {
        Document {
            description: schema.dataset_description.clone(),
            sample_size: Some(schema.sample_size),
            features: schema
                .features()
                .iter()
                .map(|f| FeatureEntry {
                    name: f.name.clone(),
                    kind: f.kind,
                    categories: f.categories.clone(),
                    description: f.description.clone(),
                    cap: f.cap,
                })
                .collect(),
            ..Document::default()
        }
    }
}

/// Parses and validates a schema document; generation order is file order.
pub fn parse_schema(text: &str) -> Result<DatasetSchema, ConfigError> {
    parse_document(text)?.schema()
}

pub fn schema_to_toml(schema: &DatasetSchema) -> String {
    toml::to_string(&Document::from_schema(schema)).expect("schema documents always serialize")
}
