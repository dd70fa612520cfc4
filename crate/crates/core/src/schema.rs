//! Dataset schemas, contexts, and the cache keys derived from them.
//!
//! A [`DatasetSchema`] is an ordered list of features. Generation walks the
//! list front to back, so feature `i` may only condition on features `0..i`.
//! A [`Context`] records the labels already assigned to a row; its rendered
//! form is what the oracle sees and what the distribution cache is keyed on.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("duplicate feature name `{0}`")]
    DuplicateFeature(String),
    #[error("feature `{feature}` lists category `{label}` more than once")]
    DuplicateCategory { feature: String, label: String },
    #[error("feature `{0}` has an empty category list")]
    EmptyCategories(String),
    #[error("feature `{feature}`: cannot parse numeric range `{label}`")]
    UnparsableRange { feature: String, label: String },
    #[error("feature `{feature}`: open range `{label}` needs a cap of at least its lower bound")]
    MissingCap { feature: String, label: String },
    #[error("schema has no features")]
    NoFeatures,
    #[error("sample size must be positive")]
    ZeroSampleSize,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("`{label}` is not a category of feature `{feature}`")]
    UnknownLabel { feature: String, label: String },
    #[error("context assigns `{0}` out of schema order or twice")]
    ContextOrder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Categorical,
    /// Each category label encodes an integer interval, `lo-hi` or `N+`.
    NumericRange,
}

/// Closed integer interval decoded from a numeric-range label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NumericRange {
    pub lo: i64,
    pub hi: i64,
}

impl NumericRange {
    /// Parses `lo-hi` (inclusive) or `N+`, where the open form is closed off
    /// with `cap`. Returns `None` for anything else.
    pub fn parse(label: &str, cap: Option<i64>) -> Option<Self> {
        let s = label.trim();
        if let Some(lo) = s.strip_suffix('+') {
            let lo = lo.trim().parse::<i64>().ok()?;
            let hi = cap?;
            return (lo <= hi).then_some(NumericRange { lo, hi });
        }
        // Skip the first char so a leading minus sign is not taken as the separator.
        let split = s.char_indices().skip(1).find(|&(_, c)| c == '-')?.0;
        let lo = s[..split].trim().parse::<i64>().ok()?;
        let hi = s[split + 1..].trim().parse::<i64>().ok()?;
        (lo <= hi).then_some(NumericRange { lo, hi })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub categories: Vec<String>,
    pub description: String,
    /// Upper bound used to close `N+` labels of numeric-range features.
    pub cap: Option<i64>,
}

impl FeatureSpec {
    pub fn categorical<S: Into<String>>(name: S, categories: &[&str]) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.iter().map(|c| c.to_string()).collect(),
            description: String::new(),
            cap: None,
        }
    }

    pub fn with_description<S: Into<String>>(mut self, description: S) -> Self {
        self.description = description.into();
        self
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.categories.is_empty() {
            return Err(SchemaError::EmptyCategories(self.name.clone()));
        }
        for (i, label) in self.categories.iter().enumerate() {
            if self.categories[..i].contains(label) {
                return Err(SchemaError::DuplicateCategory {
                    feature: self.name.clone(),
                    label: label.clone(),
                });
            }
            if self.kind == FeatureKind::NumericRange {
                self.range_of(label)?;
            }
        }
        Ok(())
    }

    pub fn range_of(&self, label: &str) -> Result<NumericRange, SchemaError> {
        NumericRange::parse(label, self.cap).ok_or_else(|| {
            if label.trim().ends_with('+') {
                SchemaError::MissingCap {
                    feature: self.name.clone(),
                    label: label.into(),
                }
            } else {
                SchemaError::UnparsableRange {
                    feature: self.name.clone(),
                    label: label.into(),
                }
            }
        })
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    /// Exact match first, then a case-insensitive comparison of trimmed text.
    pub fn match_label(&self, text: &str) -> Option<usize> {
        self.index_of(text).or_else(|| {
            let wanted = text.trim();
            self.categories.iter().position(|c| eq_ignore_case(c.trim(), wanted))
        })
    }

    pub fn is_single_category(&self) -> bool {
        self.categories.len() == 1
    }
}

pub(crate) fn eq_ignore_case(a: &str, b: &str) -> bool {
    a.chars()
        .flat_map(char::to_lowercase)
        .eq(b.chars().flat_map(char::to_lowercase))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSchema {
    features: Vec<FeatureSpec>,
    pub dataset_description: String,
    pub sample_size: u64,
}

impl DatasetSchema {
    pub fn new(features: Vec<FeatureSpec>, dataset_description: String, sample_size: u64) -> Result<Self, SchemaError> {
        if features.is_empty() {
            return Err(SchemaError::NoFeatures);
        }
        if sample_size == 0 {
            return Err(SchemaError::ZeroSampleSize);
        }
        for (i, f) in features.iter().enumerate() {
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(SchemaError::DuplicateFeature(f.name.clone()));
            }
            f.validate()?;
        }
        Ok(DatasetSchema {
            features,
            dataset_description,
            sample_size,
        })
    }

    /// Features in generation order.
    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Number of features that need an oracle call to be generated.
    pub fn multi_category_count(&self) -> usize {
        self.features.iter().filter(|f| !f.is_single_category()).count()
    }
}

/// Labels already assigned to a row, in schema order, plus optional opaque
/// seed text that prefixes the rendered context.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Context {
    pub assignments: Vec<(String, String)>,
    pub seed_text: Option<String>,
}

impl Context {
    pub fn empty() -> Self {
        Context::default()
    }

    pub fn seeded<S: Into<String>>(seed_text: S) -> Self {
        Context {
            assignments: Vec::new(),
            seed_text: Some(seed_text.into()),
        }
    }

    /// Returns a copy of this context with one more assignment appended.
    pub fn extended(&self, feature: &str, label: &str) -> Self {
        let mut next = self.clone();
        next.assignments.push((feature.into(), label.into()));
        next
    }

    pub fn validate(&self, schema: &DatasetSchema) -> Result<(), SchemaError> {
        let mut next_allowed = 0;
        for (feature, label) in &self.assignments {
            let pos = schema
                .position(feature)
                .ok_or_else(|| SchemaError::UnknownFeature(feature.clone()))?;
            if pos < next_allowed {
                return Err(SchemaError::ContextOrder(feature.clone()));
            }
            next_allowed = pos + 1;
            if schema.features[pos].index_of(label).is_none() {
                return Err(SchemaError::UnknownLabel {
                    feature: feature.clone(),
                    label: label.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Renders `ctx` as seed text followed by `<feature> is <label>.` clauses,
/// single-space separated, in schema order. The empty context renders to "".
pub fn render_context(ctx: &Context, schema: &DatasetSchema) -> String {
    let mut out = String::new();
    if let Some(seed) = ctx.seed_text.as_deref().filter(|s| !s.is_empty()) {
        out.push_str(seed);
    }
    for feature in schema.features() {
        if let Some((name, label)) = ctx.assignments.iter().find(|(n, _)| *n == feature.name) {
            push_clause(&mut out, name, label);
        }
    }
    out
}

pub(crate) fn push_clause(out: &mut String, feature: &str, label: &str) {
    if !out.is_empty() {
        out.push(' ');
    }
    out.push_str(feature);
    out.push_str(" is ");
    out.push_str(label);
    out.push('.');
}

/// 128-bit digest identifying a (target feature, rendered context) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextKey(pub u128);

impl fmt::Display for ContextKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// XXH3-128 over the length-prefixed feature name followed by the rendered
/// context, so `("ab", "c")` and `("a", "bc")` hash differently.
pub fn context_key(target_feature: &str, rendered: &str) -> ContextKey {
    let mut buf = Vec::with_capacity(8 + target_feature.len() + rendered.len());
    buf.extend_from_slice(&(target_feature.len() as u64).to_le_bytes());
    buf.extend_from_slice(target_feature.as_bytes());
    buf.extend_from_slice(rendered.as_bytes());
    ContextKey(xxh3_128(&buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::california::schema as california;
    use alloc::collections::BTreeSet;
    use alloc::vec;

    #[test]
    fn numeric_range_forms() {
        assert_eq!(
            NumericRange::parse("25-54", None),
            Some(NumericRange { lo: 25, hi: 54 })
        );
        assert_eq!(NumericRange::parse("5-5", None), Some(NumericRange { lo: 5, hi: 5 }));
        assert_eq!(
            NumericRange::parse("65+", Some(100)),
            Some(NumericRange { lo: 65, hi: 100 })
        );
        assert_eq!(NumericRange::parse("-5-3", None), Some(NumericRange { lo: -5, hi: 3 }));
        assert_eq!(NumericRange::parse("65+", None), None);
        assert_eq!(NumericRange::parse("54-25", None), None);
        assert_eq!(NumericRange::parse("adults", None), None);
    }

    #[test]
    fn duplicate_category_rejected() {
        let f = FeatureSpec::categorical("Ethnicity Group", &["White", "Latino", "White"]);
        assert_eq!(
            f.validate(),
            Err(SchemaError::DuplicateCategory {
                feature: "Ethnicity Group".into(),
                label: "White".into()
            })
        );
    }

    #[test]
    fn open_range_without_cap_rejected() {
        let mut f = FeatureSpec::categorical("Age", &["0-17", "65+"]);
        f.kind = FeatureKind::NumericRange;
        assert!(matches!(f.validate(), Err(SchemaError::MissingCap { .. })));
        f.cap = Some(100);
        assert!(f.validate().is_ok());
    }

    #[test]
    fn degenerate_schema_is_valid() {
        let s = DatasetSchema::new(vec![FeatureSpec::categorical("X", &["only"])], String::new(), 1);
        assert!(s.is_ok());
        assert_eq!(s.unwrap().multi_category_count(), 0);
    }

    #[test]
    fn render_golden_strings() {
        let schema = california();
        assert_eq!(render_context(&Context::empty(), &schema), "");
        let c1 = Context::empty().extended("State", "California/CA");
        assert_eq!(render_context(&c1, &schema), "State is California/CA.");
        let c2 = c1.extended("Age Group", "Children (0-17)");
        assert_eq!(
            render_context(&c2, &schema),
            "State is California/CA. Age Group is Children (0-17)."
        );
        let seeded = Context::seeded("Household survey row.").extended("State", "California/CA");
        assert_eq!(
            render_context(&seeded, &schema),
            "Household survey row. State is California/CA."
        );
    }

    #[test]
    fn context_validation() {
        let schema = california();
        let bad_order = Context::empty()
            .extended("Age Group", "Children (0-17)")
            .extended("State", "California/CA");
        assert!(matches!(bad_order.validate(&schema), Err(SchemaError::ContextOrder(_))));
        let bad_label = Context::empty().extended("State", "Nevada/NV");
        assert!(matches!(
            bad_label.validate(&schema),
            Err(SchemaError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn context_keys_distinct_over_california_contexts() {
        let schema = california();
        let state = Context::empty().extended("State", "California/CA");
        let mut rendered = vec![render_context(&state, &schema)];
        for age in &schema.feature("Age Group").unwrap().categories {
            rendered.push(render_context(&state.extended("Age Group", age), &schema));
        }
        assert_eq!(rendered.len(), 6);
        let keys: BTreeSet<_> = rendered.iter().map(|r| context_key("Ethnicity Group", r)).collect();
        assert_eq!(keys.len(), 6);
        // Same rendered text, different target feature.
        for r in &rendered {
            assert_ne!(context_key("Ethnicity Group", r), context_key("Age Group", r));
        }
        assert_ne!(context_key("ab", "c"), context_key("a", "bc"));
    }

    #[test]
    fn context_key_is_deterministic() {
        let first = context_key("Ethnicity Group", "State is California/CA.");
        for _ in 0..1000 {
            assert_eq!(context_key("Ethnicity Group", "State is California/CA."), first);
        }
    }
}
