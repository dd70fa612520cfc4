//! Deterministic oracle that answers from a fixture document.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use probtab_core::fidelity::{FrequencyTable, ALL_ROWS};
use probtab_core::oracle::{Completion, Oracle, OracleRequest, TransportError};
use probtab_core::prompt::PromptKind;
use probtab_core::{
    render_context, validate_and_normalize, CategoricalDistribution, Context, DatasetSchema, DistributionError,
    FeatureSpec, RawDistribution,
};
use thiserror::Error;

use crate::bundled;
use crate::config::{parse_document, read_file, ConfigError, Document, FailMode, TableEntry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixtureError {
    #[error("fixture has no {kind} entry for feature `{feature}` with context \"{context}\"")]
    FixtureMissingEntry {
        kind: &'static str,
        feature: String,
        context: String,
    },
    #[error("fixture has no [table] section")]
    NoTable,
}

/// Reply used for scripted `garbage` failures.
pub const GARBAGE_REPLY: &str = "I'm sorry, I can't estimate those probabilities right now.";

#[derive(Debug, Default)]
struct State {
    /// Attempts seen per distribution entry, for scripted failures.
    attempts: HashMap<usize, u32>,
    /// Next response index per cell entry.
    cursor: HashMap<usize, usize>,
    table_calls: usize,
    table_row_cursor: usize,
    transport_calls: u64,
}

pub struct FixtureOracle {
    doc: Document,
    dist_index: HashMap<(String, String), usize>,
    cell_index: HashMap<(String, String), usize>,
    state: Mutex<State>,
}

impl FixtureOracle {
    pub fn new(doc: Document) -> Result<Self, ConfigError> {
        let mut dist_index = HashMap::new();
        for (i, d) in doc.distributions.iter().enumerate() {
            if dist_index.insert((d.feature.clone(), d.context.clone()), i).is_some() {
                return Err(ConfigError::Invalid(format!(
                    "duplicate distribution entry for `{}` with context \"{}\"",
                    d.feature, d.context
                )));
            }
        }
        let mut cell_index = HashMap::new();
        for (i, c) in doc.cells.iter().enumerate() {
            if c.responses.is_empty() {
                return Err(ConfigError::Invalid(format!(
                    "cell entry for `{}` has no responses",
                    c.feature
                )));
            }
            cell_index.insert((c.feature.clone(), c.context.clone()), i);
        }
        if let Some(t) = &doc.table {
            if t.responses.is_empty() && (t.rows.is_empty() || t.columns.is_empty()) {
                return Err(ConfigError::Invalid(
                    "[table] needs `responses` or `columns` and `rows`".into(),
                ));
            }
            if t.rows.iter().any(|r| r.len() != t.columns.len()) {
                return Err(ConfigError::Invalid(
                    "[table] rows must match `columns` in width".into(),
                ));
            }
        }
        Ok(FixtureOracle {
            doc,
            dist_index,
            cell_index,
            state: Mutex::new(State::default()),
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::new(parse_document(text)?)
    }

    /// Loads a bundled fixture by name, or else reads `spec` as a path.
    /// A leading `fixture:` is ignored.
    pub fn resolve(spec: &str) -> Result<Self, ConfigError> {
        let spec = spec.strip_prefix("fixture:").unwrap_or(spec);
        match bundled::fixture(spec) {
            Some(text) => Self::parse(text),
            None => Self::parse(&read_file(Path::new(spec))?),
        }
    }

    pub fn document(&self) -> &Document {
        &self.doc
    }

    /// The stored weights for `(feature, context)`, without scripted failures.
    pub fn lookup(&self, feature: &str, context: &str) -> Result<RawDistribution, FixtureError> {
        let i = self
            .dist_index
            .get(&(feature.to_string(), context.to_string()))
            .ok_or_else(|| FixtureError::FixtureMissingEntry {
                kind: "distribution",
                feature: feature.into(),
                context: context.into(),
            })?;
        Ok(self.doc.distributions[*i]
            .weights
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect())
    }

    /// Transport calls answered so far, including scripted failures.
    pub fn transport_calls(&self) -> u64 {
        self.state.lock().unwrap().transport_calls
    }

    fn answer_distribution(&self, state: &mut State, feature: &str, context: &str) -> Result<String, TransportError> {
        let missing = || {
            TransportError::fatal(
                FixtureError::FixtureMissingEntry {
                    kind: "distribution",
                    feature: feature.into(),
                    context: context.into(),
                }
                .to_string(),
            )
        };
        let &i = self
            .dist_index
            .get(&(feature.to_string(), context.to_string()))
            .ok_or_else(missing)?;
        let entry = &self.doc.distributions[i];
        let seen = state.attempts.entry(i).or_insert(0);
        *seen += 1;
        if *seen <= entry.fail_times {
            return match entry.fail_with {
                FailMode::Transport => Err(TransportError::retryable(format!(
                    "scripted failure {} of {}",
                    seen, entry.fail_times
                ))),
                FailMode::Garbage => Ok(GARBAGE_REPLY.to_string()),
            };
        }
        Ok(serde_json::to_string(&entry.weights).expect("weights serialize"))
    }

    fn answer_cell(&self, state: &mut State, feature: &str, context: &str) -> Result<String, TransportError> {
        let &i = self
            .cell_index
            .get(&(feature.to_string(), context.to_string()))
            .ok_or_else(|| {
                TransportError::fatal(
                    FixtureError::FixtureMissingEntry {
                        kind: "cell",
                        feature: feature.into(),
                        context: context.into(),
                    }
                    .to_string(),
                )
            })?;
        let responses = &self.doc.cells[i].responses;
        let k = state.cursor.entry(i).or_insert(0);
        let reply = responses[*k % responses.len()].clone();
        *k += 1;
        Ok(reply)
    }

    fn answer_table(&self, state: &mut State, requested: u64) -> Result<String, TransportError> {
        let table: &TableEntry = self
            .doc
            .table
            .as_ref()
            .ok_or_else(|| TransportError::fatal(FixtureError::NoTable.to_string()))?;
        let call = state.table_calls;
        state.table_calls += 1;
        if !table.responses.is_empty() {
            return Ok(table.responses[call.min(table.responses.len() - 1)].clone());
        }
        let limit = table.max_rows_per_call.unwrap_or(usize::MAX);
        let take = (requested as usize).min(limit);
        let mut rows = Vec::with_capacity(take);
        for _ in 0..take {
            let row = &table.rows[state.table_row_cursor % table.rows.len()];
            state.table_row_cursor += 1;
            let obj: serde_json::Map<String, serde_json::Value> = table
                .columns
                .iter()
                .zip(row)
                .map(|(c, v)| (c.clone(), serde_json::Value::String(v.clone())))
                .collect();
            rows.push(serde_json::Value::Object(obj));
        }
        Ok(serde_json::Value::Array(rows).to_string())
    }
}

impl Oracle for FixtureOracle {
    fn complete(&self, request: &OracleRequest<'_>) -> Result<Completion, TransportError> {
        let mut state = self.state.lock().unwrap();
        state.transport_calls += 1;
        let feature = request.feature.unwrap_or_default();
        let text = match request.kind {
            PromptKind::Distribution => self.answer_distribution(&mut state, feature, request.context)?,
            PromptKind::CellByCell => self.answer_cell(&mut state, feature, request.context)?,
            PromptKind::TableWide => self.answer_table(&mut state, request.requested_rows.unwrap_or(0))?,
        };
        Ok(Completion::instant(text))
    }
}

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error("fixture distribution for `{feature}` at \"{context}\": {source}")]
    Invalid {
        feature: String,
        context: String,
        source: DistributionError,
    },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("more than {0} contexts to enumerate")]
    TooLarge(usize),
}

/// Upper bound on the partial rows enumerated by [`reference_table`].
pub const MAX_REFERENCE_CONTEXTS: usize = 1_000_000;

impl FixtureOracle {
    /// The normalized stored distribution for `spec` at `context`.
    pub fn distribution(&self, spec: &FeatureSpec, context: &str) -> Result<CategoricalDistribution, ReferenceError> {
        let raw = self.lookup(&spec.name, context)?;
        validate_and_normalize(&raw, spec).map_err(|source| ReferenceError::Invalid {
            feature: spec.name.clone(),
            context: context.into(),
            source,
        })
    }
}

/// Exact `target | given` percentages implied by the fixture's conditionals.
///
/// Walks every partial row up to the later of the two features, weighting
/// each by the product of the fixture probabilities along it, the same chain
/// the probability-driven sampler draws from.
pub fn reference_table(
    fixture: &FixtureOracle,
    schema: &DatasetSchema,
    target: &str,
    given: Option<&str>,
) -> Result<FrequencyTable, ReferenceError> {
    let t = schema
        .position(target)
        .ok_or_else(|| ReferenceError::UnknownFeature(target.into()))?;
    let g = match given {
        Some(name) => Some(
            schema
                .position(name)
                .ok_or_else(|| ReferenceError::UnknownFeature(name.into()))?,
        ),
        None => None,
    };
    let last = g.map_or(t, |g| g.max(t));
    let features = schema.features();

    // (context, per-feature category index, probability)
    let mut frontier: Vec<(Context, Vec<usize>, f64)> = vec![(Context::empty(), Vec::new(), 1.0)];
    for feature in &features[..=last] {
        let mut next = Vec::new();
        for (ctx, picks, p) in frontier {
            if feature.is_single_category() {
                let mut picks = picks;
                picks.push(0);
                next.push((ctx.extended(&feature.name, &feature.categories[0]), picks, p));
                continue;
            }
            let rendered = render_context(&ctx, schema);
            let dist = fixture.distribution(feature, &rendered)?;
            for (i, q) in dist.probs().iter().enumerate() {
                if *q > 0.0 {
                    let mut picks = picks.clone();
                    picks.push(i);
                    next.push((ctx.extended(&feature.name, &feature.categories[i]), picks, p * q));
                }
            }
            if next.len() > MAX_REFERENCE_CONTEXTS {
                return Err(ReferenceError::TooLarge(MAX_REFERENCE_CONTEXTS));
            }
        }
        frontier = next;
    }

    let target_spec = &features[t];
    let groups: Vec<String> = match g {
        Some(g) => features[g].categories.clone(),
        None => vec![ALL_ROWS.to_string()],
    };
    let mut mass = vec![vec![0.0; target_spec.categories.len()]; groups.len()];
    for (_, picks, p) in &frontier {
        let row = g.map_or(0, |g| picks[g]);
        mass[row][picks[t]] += p;
    }
    let dists: Vec<Option<CategoricalDistribution>> = mass
        .into_iter()
        .map(|w| CategoricalDistribution::from_weights(target_spec.categories.clone(), w).ok())
        .collect();
    FrequencyTable::from_distributions(target, given, groups, target_spec.categories.clone(), &dists)
        .map_err(|_| unreachable!("shapes agree by construction"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use probtab_core::oracle::{query_distribution, OracleCallLog, OracleError, RetryPolicy};
    use probtab_core::prompt::build_distribution_prompt;
    use probtab_core::{california, context_key};

    #[test]
    fn bundled_fixture_answers_census_rows() {
        let oracle = FixtureOracle::resolve("california_original").unwrap();
        let raw = oracle
            .lookup("Ethnicity Group", "State is California/CA. Age Group is 65 and older.")
            .unwrap();
        assert_eq!(raw.get("White"), Some(0.53));
        let children = oracle
            .lookup(
                "Ethnicity Group",
                "State is California/CA. Age Group is Children (0-17).",
            )
            .unwrap();
        assert_eq!(children.get("Latino"), Some(0.519));
    }

    #[test]
    fn bundled_fixture_matches_core_constants() {
        let oracle = FixtureOracle::resolve("california_original").unwrap();
        for (a, age) in california::AGE_GROUPS.iter().enumerate() {
            let raw = oracle
                .lookup(
                    "Ethnicity Group",
                    &format!("State is California/CA. Age Group is {age}."),
                )
                .unwrap();
            for (e, eth) in california::ETHNICITY.iter().enumerate() {
                assert!((raw.get(eth).unwrap() * 100.0 - california::ETHNICITY_BY_AGE[a][e]).abs() < 1e-9);
            }
        }
        let marginal = oracle.lookup("Age Group", "State is California/CA.").unwrap();
        for (a, age) in california::AGE_GROUPS.iter().enumerate() {
            assert_eq!(marginal.get(age), Some(california::AGE_MARGINAL[a]));
        }
    }

    #[test]
    fn reference_rows_are_normalized_census_rows() {
        let oracle = FixtureOracle::resolve("california_original").unwrap();
        let schema = california::schema();
        let r = reference_table(&oracle, &schema, "Ethnicity Group", Some("Age Group")).unwrap();
        assert_eq!(r.groups, california::AGE_GROUPS);
        for (a, row) in california::ETHNICITY_BY_AGE.iter().enumerate() {
            let total: f64 = row.iter().sum();
            for (e, v) in row.iter().enumerate() {
                assert!((r.percent[a][e].unwrap() - 100.0 * v / total).abs() < 1e-9);
            }
        }
        // Marginal of ethnicity is the age-weighted mixture.
        let m = reference_table(&oracle, &schema, "Ethnicity Group", None).unwrap();
        let mut latino = 0.0;
        for (a, row) in california::ETHNICITY_BY_AGE.iter().enumerate() {
            latino += california::AGE_MARGINAL[a] * 100.0 * row[0] / row.iter().sum::<f64>();
        }
        assert!((m.percent[0][0].unwrap() - latino).abs() < 1e-9);
        // Conditioning the other way round goes through Bayes.
        let b = reference_table(&oracle, &schema, "Age Group", Some("Ethnicity Group")).unwrap();
        assert_eq!(b.groups, california::ETHNICITY);
        let sum: f64 = b.percent[0].iter().map(|v| v.unwrap()).sum();
        assert!((sum - 100.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_context_is_missing_entry() {
        let oracle = FixtureOracle::resolve("california_original").unwrap();
        assert!(matches!(
            oracle.lookup("Ethnicity Group", "State is Nevada/NV."),
            Err(FixtureError::FixtureMissingEntry { .. })
        ));
    }

    fn ask(oracle: &FixtureOracle, log: &mut OracleCallLog) -> Result<(), OracleError> {
        let schema = california::schema();
        let spec = schema.feature("Age Group").unwrap();
        let ctx = "State is California/CA.";
        let prompt = build_distribution_prompt(spec, ctx, &schema);
        query_distribution(
            oracle,
            &prompt,
            spec,
            ctx,
            context_key(&spec.name, ctx),
            &RetryPolicy::default(),
            log,
        )
        .map(|_| ())
    }

    #[test]
    fn scripted_failures_are_retried() {
        for mode in ["transport", "garbage"] {
            let text = format!(
                "[[distribution]]\nfeature = \"Age Group\"\ncontext = \"State is California/CA.\"\nfail_times = 1\nfail_with = \"{mode}\"\nweights = {{ \"65 and older\" = 1.0 }}\n"
            );
            let oracle = FixtureOracle::parse(&text).unwrap();
            let mut log = OracleCallLog::new();
            ask(&oracle, &mut log).unwrap();
            assert_eq!(log.counters().retries, 1, "{mode}");
            assert_eq!(log.counters().distribution_queries, 1);
            assert_eq!(oracle.transport_calls(), 2);
        }
    }

    #[test]
    fn missing_entry_is_not_retried() {
        let oracle = FixtureOracle::parse("").unwrap();
        let mut log = OracleCallLog::new();
        let err = ask(&oracle, &mut log).unwrap_err();
        assert!(
            matches!(err, OracleError::OracleUnavailable { attempts: 1, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("no distribution entry"));
    }
}
