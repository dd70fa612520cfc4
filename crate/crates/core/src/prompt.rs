//! Prompt builders for the three generation strategies.
//!
//! Template line breaks and trailing spaces are part of the contract: golden
//! tests compare the output byte for byte.

use alloc::format;
use alloc::string::String;

use crate::schema::{DatasetSchema, FeatureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptKind {
    TableWide,
    CellByCell,
    Distribution,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::TableWide => "table_wide",
            PromptKind::CellByCell => "cell_by_cell",
            PromptKind::Distribution => "distribution",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub kind: PromptKind,
}

/// Instruction appended to the distribution template so the expected reply
/// is a probability map rather than a single sampled value.
pub const DISTRIBUTION_RESPONSE_INSTRUCTION: &str =
    "Return a single flat JSON object that maps every category listed above to its probability \
given the context. Use the category names exactly as listed. The probabilities must be \
numbers between 0 and 1 that sum to 1.\n";

/// Python-style list literal, e.g. `['a', 'b']`.
pub fn category_list(categories: &[String]) -> String {
    let mut out = String::from("[");
    for (i, c) in categories.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let quote = if c.contains('\'') && !c.contains('"') {
            '"'
        } else {
            '\''
        };
        out.push(quote);
        for ch in c.chars() {
            if ch == '\\' || ch == quote {
                out.push('\\');
            }
            out.push(ch);
        }
        out.push(quote);
    }
    out.push(']');
    out
}

fn column_list(schema: &DatasetSchema) -> String {
    let names: alloc::vec::Vec<String> = schema.features().iter().map(|f| format!("'{}'", f.name)).collect();
    match names.len() {
        1 => names[0].clone(),
        2 => format!("{} and {}", names[0], names[1]),
        n => format!("{}, and {}", names[..n - 1].join(", "), names[n - 1]),
    }
}

/// Whole-table request for `n` records.
///
/// Single-category features are pinned to their value. Every multi-category
/// feature after the first one is asked to reflect the population of the
/// first single-category feature, when there is one.
pub fn build_table_prompt(schema: &DatasetSchema, n: u64) -> Prompt {
    let mut text = format!(
        "Generate a table with exactly {n} records with columns\n{}.\n\n",
        column_list(schema)
    );
    let anchor = schema.features().iter().find(|f| f.is_single_category());
    let mut seen_multi = false;
    for f in schema.features() {
        if f.is_single_category() {
            text.push_str(&format!(
                "'{}' contains identical values, all set to '{}'.\n\n",
                f.name, f.categories[0]
            ));
            continue;
        }
        text.push_str(&format!(
            "'{}' should be sampled from the categories \n'{}'",
            f.name,
            category_list(&f.categories)
        ));
        match anchor {
            Some(a) if seen_multi => text.push_str(&format!(
                " reflecting \npopulation in '{}' of {}.\n\n",
                a.name, a.categories[0]
            )),
            _ => text.push_str(".\n\n"),
        }
        seen_multi = true;
    }
    text.push_str(
        "Only return the JSON object. Do not include any additional text, \nexplanations, or formatting.\n\n",
    );
    Prompt {
        text,
        kind: PromptKind::TableWide,
    }
}

/// Dataset description followed by the feature's own description.
pub fn describe(feature: &FeatureSpec, schema: &DatasetSchema) -> String {
    match (schema.dataset_description.trim(), feature.description.trim()) {
        ("", f) => f.into(),
        (d, "") => d.into(),
        (d, f) => format!("{d} {f}"),
    }
}

pub fn build_cell_prompt(feature: &FeatureSpec, ctx: &str, schema: &DatasetSchema) -> Prompt {
    let text = format!(
        "Based on the provided context and data description, generate one \n\
random sample for the column {name}.\n\
\n\
Sample from the following categories: {cats}\n\
# Context: {ctx}\n\
# Data Description: {desc}\n\
\n\
The output should be limited strictly to the chosen category \n\
without any additional explanations or formatting.\n\
\n\
# Response:\n",
        name = feature.name,
        cats = category_list(&feature.categories),
        desc = describe(feature, schema),
    );
    Prompt {
        text,
        kind: PromptKind::CellByCell,
    }
}

pub fn build_distribution_prompt(feature: &FeatureSpec, ctx: &str, schema: &DatasetSchema) -> Prompt {
    let text = format!(
        "Based on the provided context and data description, generate one random sample\n\
for the column {name}.\n\
Sample from the provided categories\n\
\n\
# Categories: {cats}\n\
# Context: {ctx}\n\
# Data Description: {desc}\n\
\n\
The output should be limited strictly to the JSON structure without any \n\
additional explanations or formatting.\n\
{DISTRIBUTION_RESPONSE_INSTRUCTION}",
        name = feature.name,
        cats = category_list(&feature.categories),
        desc = describe(feature, schema),
    );
    Prompt {
        text,
        kind: PromptKind::Distribution,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::california;
    use alloc::vec;

    #[test]
    fn python_list_literal() {
        let cats = vec!["a".into(), "it's".into(), "back\\slash".into()];
        assert_eq!(category_list(&cats), "['a', \"it's\", 'back\\\\slash']");
    }

    #[test]
    fn table_prompt_substitutes_sample_size_verbatim() {
        let schema = california::schema();
        let p = build_table_prompt(&schema, 100);
        assert_eq!(p.kind, PromptKind::TableWide);
        assert!(p.text.contains("exactly 100 records"));
        for e in california::ETHNICITY {
            assert!(p.text.contains(e));
        }
        assert!(p
            .text
            .contains("'State' contains identical values, all set to 'California/CA'."));
        assert!(p
            .text
            .contains("with columns\n'State', 'Age Group', and 'Ethnicity Group'."));
        assert!(p.text.contains("reflecting \npopulation in 'State' of California/CA."));
        assert!(build_table_prompt(&schema, 1).text.contains("exactly 1 records"));
        assert_eq!(build_table_prompt(&schema, 100), p);
    }

    #[test]
    fn cell_prompt_shape() {
        let schema = california::schema();
        let f = schema.feature("Ethnicity Group").unwrap();
        let p = build_cell_prompt(f, "State is California/CA. Age Group is Children (0-17).", &schema);
        assert!(p.text.ends_with("# Response:\n"));
        let empty = build_cell_prompt(f, "", &schema);
        assert!(empty.text.contains("\n# Context: \n"));
    }

    #[test]
    fn distribution_prompt_shape() {
        let schema = california::schema();
        let f = schema.feature("Ethnicity Group").unwrap();
        let p = build_distribution_prompt(f, "State is California/CA.", &schema);
        assert_eq!(p.kind, PromptKind::Distribution);
        assert!(p.text.contains("# Categories: ['Latino', "));
        assert!(p.text.contains("limited strictly to the JSON structure"));
        assert!(p.text.ends_with(DISTRIBUTION_RESPONSE_INSTRUCTION));
        assert_eq!(build_distribution_prompt(f, "State is California/CA.", &schema), p);
    }
}
