//! California population case study: the three-column schema and the census
//! ethnicity composition (percent) within each age group, 2023 estimates.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::distribution::CategoricalDistribution;
use crate::schema::{DatasetSchema, FeatureSpec};

pub const STATE: &str = "California/CA";

pub const AGE_GROUPS: [&str; 5] = [
    "Children (0-17)",
    "College-going age (18-24)",
    "Prime-working age (25-54)",
    "Adults (55-64)",
    "65 and older",
];

pub const ETHNICITY: [&str; 6] = [
    "Latino",
    "White",
    "Asian/Pacific Islander",
    "Black",
    "Native American",
    "Multiracial/Other",
];

/// Ethnicity percentages per age group, rows in `AGE_GROUPS` order and
/// columns in `ETHNICITY` order. Rows are as published and do not all sum to
/// exactly 100.
pub const ETHNICITY_BY_AGE: [[f64; 6]; 5] = [
    [51.9, 23.8, 13.4, 5.0, 0.4, 5.5],
    [50.2, 26.4, 13.5, 5.3, 0.4, 4.2],
    [41.7, 31.8, 17.7, 5.9, 0.4, 2.6],
    [32.5, 42.4, 16.7, 6.2, 0.5, 1.7],
    [22.0, 53.0, 17.5, 5.3, 0.5, 1.4],
];

/// Age-group marginal used by the bundled fixture. Not census data: an
/// illustrative split chosen so every group is well represented.
pub const AGE_MARGINAL: [f64; 5] = [0.22, 0.09, 0.41, 0.12, 0.16];

pub const DATASET_DESCRIPTION: &str = "Residents of the US state of California by age group and ethnicity group.";

pub fn ethnicity_feature() -> FeatureSpec {
    FeatureSpec::categorical("Ethnicity Group", &ETHNICITY).with_description("Ethnicity group of the resident.")
}

pub fn schema() -> DatasetSchema {
    DatasetSchema::new(
        vec![
            FeatureSpec::categorical("State", &[STATE]).with_description("US state of residence."),
            FeatureSpec::categorical("Age Group", &AGE_GROUPS).with_description("Age group of the resident."),
            ethnicity_feature(),
        ],
        String::from(DATASET_DESCRIPTION),
        10_000,
    )
    .expect("california schema is valid")
}

fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| String::from(*s)).collect()
}

/// Normalized ethnicity distribution for age group `age` (index into `AGE_GROUPS`).
pub fn ethnicity_given_age(age: usize) -> CategoricalDistribution {
    CategoricalDistribution::from_weights(labels(&ETHNICITY), ETHNICITY_BY_AGE[age].to_vec())
        .expect("published rows are valid weights")
}

pub fn age_marginal() -> CategoricalDistribution {
    CategoricalDistribution::from_weights(labels(&AGE_GROUPS), AGE_MARGINAL.to_vec()).expect("marginal is valid")
}
