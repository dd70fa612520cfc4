//! Categorical distributions: validation of untrusted weights, sampling, and
//! realization of numeric-range categories.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::rng::RngState;
use crate::schema::{FeatureKind, FeatureSpec};

/// Tolerance on `Σ probs = 1` for a valid distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("invalid weight {value} for category `{label}`")]
    InvalidWeight { label: String, value: f64 },
    #[error("all category weights are zero")]
    DegenerateDistribution,
    #[error("cannot parse numeric range `{0}`")]
    UnparsableRange(String),
    #[error("category lists differ")]
    CategoryMismatch,
}

/// Weights exactly as an oracle returned them. Keys may be unknown, repeated,
/// or differently capitalized; nothing is checked until
/// [`validate_and_normalize`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawDistribution {
    pub entries: Vec<(String, f64)>,
}

impl RawDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<S: Into<String>>(&mut self, label: S, weight: f64) {
        self.entries.push((label.into(), weight));
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.entries.iter().find(|(l, _)| l == label).map(|(_, w)| *w)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for RawDistribution {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        RawDistribution {
            entries: iter.into_iter().map(|(l, w)| (l.into(), w)).collect(),
        }
    }
}

/// Probability vector over a feature's categories, in the feature's order.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDistribution {
    categories: Vec<String>,
    probs: Vec<f64>,
}

impl CategoricalDistribution {
    /// Normalizes `weights` (aligned with `categories`) to sum to one.
    pub fn from_weights(categories: Vec<String>, weights: Vec<f64>) -> Result<Self, DistributionError> {
        if categories.len() != weights.len() {
            return Err(DistributionError::CategoryMismatch);
        }
        for (label, &w) in categories.iter().zip(&weights) {
            if !w.is_finite() || w < 0.0 {
                return Err(DistributionError::InvalidWeight {
                    label: label.clone(),
                    value: w,
                });
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(DistributionError::DegenerateDistribution);
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Ok(CategoricalDistribution { categories, probs })
    }

    pub fn uniform(categories: Vec<String>) -> Self {
        let p = 1.0 / categories.len() as f64;
        let probs = vec![p; categories.len()];
        CategoricalDistribution { categories, probs }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, label: &str) -> Option<f64> {
        self.categories.iter().position(|c| c == label).map(|i| self.probs[i])
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index drawn by inverse CDF from one uniform.
    pub fn sample_index(&self, rng: &mut RngState) -> usize {
        inverse_cdf(&self.probs, rng.next_unit())
    }

    pub fn to_raw(&self) -> RawDistribution {
        self.categories
            .iter()
            .cloned()
            .zip(self.probs.iter().copied())
            .collect()
    }
}

/// First index whose running sum exceeds `u`. Falls back to the last index
/// with positive mass when rounding leaves the total just under one.
pub(crate) fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Matches raw labels onto `spec`'s categories and normalizes.
///
/// Unknown labels and negative or non-finite weights are errors. Categories
/// the oracle left out get weight zero. Repeated labels add up.
pub fn validate_and_normalize(
    raw: &RawDistribution,
    spec: &FeatureSpec,
) -> Result<CategoricalDistribution, DistributionError> {
    let mut weights = vec![0.0; spec.categories.len()];
    for (label, w) in &raw.entries {
        let idx = spec
            .match_label(label)
            .ok_or_else(|| DistributionError::UnknownCategory(label.clone()))?;
        if !w.is_finite() || *w < 0.0 {
            return Err(DistributionError::InvalidWeight {
                label: label.clone(),
                value: *w,
            });
        }
        weights[idx] += w;
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 && !(0.5..=1.5).contains(&total) {
        log::warn!("`{}`: renormalizing weights with total {total}", spec.name);
    }
    CategoricalDistribution::from_weights(spec.categories.clone(), weights)
}

pub fn sample<'d>(dist: &'d CategoricalDistribution, rng: &mut RngState) -> &'d str {
    &dist.categories[dist.sample_index(rng)]
}

/// Counts of `n` successive draws, aligned with `dist.categories()`.
pub fn sample_counts(dist: &CategoricalDistribution, n: u64, rng: &mut RngState) -> Vec<u64> {
    let mut counts = vec![0u64; dist.len()];
    for _ in 0..n {
        counts[dist.sample_index(rng)] += 1;
    }
    counts
}

/// Uniform integer inside the interval encoded by `label`.
pub fn realize_numeric_range(label: &str, spec: &FeatureSpec, rng: &mut RngState) -> Result<i64, DistributionError> {
    if spec.kind != FeatureKind::NumericRange {
        return Err(DistributionError::UnparsableRange(label.into()));
    }
    let range = spec
        .range_of(label)
        .map_err(|_| DistributionError::UnparsableRange(label.into()))?;
    Ok(rng.next_in_range(range.lo, range.hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::california;
    use crate::schema::FeatureSpec;

    fn abc() -> FeatureSpec {
        FeatureSpec::categorical("X", &["A", "B", "C"])
    }

    #[test]
    fn census_children_row_passes_through() {
        let spec = california::ethnicity_feature();
        let raw: RawDistribution = california::ETHNICITY
            .iter()
            .zip(california::ETHNICITY_BY_AGE[0])
            .map(|(l, p)| (*l, p / 100.0))
            .collect();
        let dist = validate_and_normalize(&raw, &spec).unwrap();
        assert!((dist.prob("Latino").unwrap() - 0.519).abs() < 1e-12);
        assert!((dist.prob("Native American").unwrap() - 0.004).abs() < 1e-12);
    }

    #[test]
    fn uniform_scaling() {
        let raw: RawDistribution = [("A", 0.3), ("B", 0.3), ("C", 0.3)].into_iter().collect();
        let dist = validate_and_normalize(&raw, &abc()).unwrap();
        for p in dist.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_label_rejected() {
        let spec = FeatureSpec::categorical("X", &["A", "B"]);
        let raw: RawDistribution = [("A", 0.5), ("B", 0.5), ("Z", 0.1)].into_iter().collect();
        assert_eq!(
            validate_and_normalize(&raw, &spec),
            Err(DistributionError::UnknownCategory("Z".into()))
        );
    }

    #[test]
    fn missing_labels_get_zero_and_case_drift_matches() {
        let raw: RawDistribution = [(" a ", 1.0), ("b", 3.0)].into_iter().collect();
        let dist = validate_and_normalize(&raw, &abc()).unwrap();
        assert_eq!(dist.probs(), &[0.25, 0.75, 0.0]);
    }

    #[test]
    fn bad_weights() {
        let raw: RawDistribution = [("A", -0.1), ("B", 1.0)].into_iter().collect();
        assert!(matches!(
            validate_and_normalize(&raw, &abc()),
            Err(DistributionError::InvalidWeight { .. })
        ));
        let raw: RawDistribution = [("A", f64::NAN)].into_iter().collect();
        assert!(matches!(
            validate_and_normalize(&raw, &abc()),
            Err(DistributionError::InvalidWeight { .. })
        ));
        let raw: RawDistribution = [("A", 0.0), ("B", 0.0)].into_iter().collect();
        assert_eq!(
            validate_and_normalize(&raw, &abc()),
            Err(DistributionError::DegenerateDistribution)
        );
        assert_eq!(
            validate_and_normalize(&RawDistribution::new(), &abc()),
            Err(DistributionError::DegenerateDistribution)
        );
    }

    #[test]
    fn degenerate_distribution_always_samples_it() {
        let dist = CategoricalDistribution::uniform(vec!["A".into()]);
        for seed in 0..50 {
            assert_eq!(sample(&dist, &mut RngState::new(seed)), "A");
        }
        assert_eq!(sample_counts(&dist, 10, &mut RngState::new(3)), vec![10]);
    }

    #[test]
    fn zero_mass_never_drawn() {
        let dist = CategoricalDistribution::from_weights(vec!["A".into(), "B".into(), "C".into()], vec![0.0, 1.0, 0.0])
            .unwrap();
        let counts = sample_counts(&dist, 10_000, &mut RngState::new(9));
        assert_eq!(counts, vec![0, 10_000, 0]);
        assert_eq!(inverse_cdf(&[0.5, 0.5 - 1e-12, 0.0], 0.999_999_999_999_9), 1);
    }

    #[test]
    fn fair_coin_frequency() {
        let dist = CategoricalDistribution::uniform(vec!["A".into(), "B".into()]);
        let counts = sample_counts(&dist, 100_000, &mut RngState::new(42));
        let freq = counts[0] as f64 / 100_000.0;
        assert!((0.494..=0.506).contains(&freq), "{freq}");
    }

    #[test]
    fn single_count_matches_single_sample() {
        let dist = CategoricalDistribution::uniform(vec!["A".into(), "B".into()]);
        for seed in 0..20 {
            let counts = sample_counts(&dist, 1, &mut RngState::new(seed));
            let label = sample(&dist, &mut RngState::new(seed));
            let idx = dist.categories().iter().position(|c| c == label).unwrap();
            assert_eq!(counts[idx], 1);
        }
    }

    #[test]
    fn numeric_realization() {
        let mut spec = FeatureSpec::categorical("Age", &["5-5", "25-54", "65+"]);
        spec.kind = FeatureKind::NumericRange;
        spec.cap = Some(100);
        let mut rng = RngState::new(5);
        assert_eq!(realize_numeric_range("5-5", &spec, &mut rng).unwrap(), 5);
        for _ in 0..10_000 {
            let v = realize_numeric_range("65+", &spec, &mut rng).unwrap();
            assert!((65..=100).contains(&v));
        }
        let n = 100_000;
        let mean = (0..n)
            .map(|_| realize_numeric_range("25-54", &spec, &mut rng).unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 39.5).abs() < 0.3, "{mean}");
        let before = rng.draws();
        realize_numeric_range("25-54", &spec, &mut rng).unwrap();
        assert_eq!(rng.draws(), before + 1);
        assert_eq!(
            realize_numeric_range("old", &spec, &mut rng),
            Err(DistributionError::UnparsableRange("old".into()))
        );
    }
}
