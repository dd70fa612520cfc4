//! The three generation strategies.
//!
//! Probability-driven generation walks the schema in order. For each
//! multi-category feature it asks the oracle for one distribution per
//! distinct context among the rows generated so far, then samples every row
//! locally. The number of oracle calls therefore depends on how many distinct
//! contexts exist, not on the number of rows.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::distribution::CategoricalDistribution;
use crate::oracle::{query_cell, query_distribution, query_table, Oracle, OracleCallLog, OracleError, RetryPolicy};
use crate::prompt::{build_cell_prompt, build_distribution_prompt, build_table_prompt};
use crate::rng::RngState;
use crate::schema::{context_key, render_context, Context, ContextKey, DatasetSchema, FeatureKind};
use crate::table::{FeatureProvenance, ProvenanceContext, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    ProbabilityDriven,
    TableWide,
    CellByCell,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::ProbabilityDriven, Strategy::TableWide, Strategy::CellByCell];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ProbabilityDriven => "probability-driven",
            Strategy::TableWide => "table-wide",
            Strategy::CellByCell => "cell-by-cell",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Strategy::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Distributions keyed by (target feature, rendered context). Entries are
/// never replaced once inserted.
#[derive(Debug, Clone, Default)]
pub struct DistributionCache {
    entries: BTreeMap<ContextKey, CategoricalDistribution>,
}

impl DistributionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &ContextKey) -> Option<&CategoricalDistribution> {
        self.entries.get(key)
    }

    /// Inserts unless the key is present; returns the stored entry.
    pub fn insert(&mut self, key: ContextKey, dist: CategoricalDistribution) -> &CategoricalDistribution {
        self.entries.entry(key).or_insert(dist)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellFailureMode {
    /// Drop the row and count it.
    #[default]
    SkipRow,
    AbortRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOptions {
    pub policy: RetryPolicy,
    /// Maximum number of whole-table requests per table-wide run.
    pub table_batch_cap: u32,
    pub cell_failure: CellFailureMode,
    /// Opaque seed texts assigned to rows round-robin. Empty means every row
    /// starts from the empty context.
    pub seed_texts: Vec<String>,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions {
            policy: RetryPolicy::default(),
            table_batch_cap: 20,
            cell_failure: CellFailureMode::SkipRow,
            seed_texts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowShortfall {
    pub received: u64,
    pub requested: u64,
}

#[derive(Debug, Clone)]
pub struct GenerationRun {
    pub strategy: Strategy,
    pub seed: u64,
    pub requested: u64,
    pub table: Table,
    pub call_log: OracleCallLog,
    pub cache_entries: usize,
    /// Cell-by-cell rows dropped after a cell could not be obtained.
    pub failed_rows: u64,
    /// Table-wide runs that ended below the requested row count.
    pub shortfall: Option<RowShortfall>,
}

impl GenerationRun {
    pub fn invalid_cells(&self) -> usize {
        self.table.invalid_count()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("requested row count must be positive")]
    ZeroRows,
    #[error("feature `{feature}`, context \"{context}\": {source}")]
    Feature {
        feature: String,
        context: String,
        source: OracleError,
    },
    #[error("row {row}, feature `{feature}`: {source}")]
    Cell {
        row: u64,
        feature: String,
        source: OracleError,
    },
    #[error("table request failed: {0}")]
    Table(OracleError),
}

/// A failed run together with the calls it made before failing.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: GenerationError,
    pub call_log: OracleCallLog,
}

pub type RunResult = Result<GenerationRun, RunFailure>;

pub struct Generator<'o, O: ?Sized> {
    oracle: &'o O,
    options: GenerationOptions,
}

impl<'o, O: Oracle + ?Sized> Generator<'o, O> {
    pub fn new(oracle: &'o O) -> Self {
        Generator {
            oracle,
            options: GenerationOptions::default(),
        }
    }

    pub fn with_options(oracle: &'o O, options: GenerationOptions) -> Self {
        Generator { oracle, options }
    }

    pub fn options(&self) -> &GenerationOptions {
        &self.options
    }

    pub fn run(&self, strategy: Strategy, schema: &DatasetSchema, n: u64, seed: u64) -> RunResult {
        match strategy {
            Strategy::ProbabilityDriven => self.probability_driven(schema, n, seed),
            Strategy::TableWide => self.table_wide(schema, n, seed),
            Strategy::CellByCell => self.cell_by_cell(schema, n, seed),
        }
    }

    fn initial_contexts(&self, n: usize) -> (Vec<Context>, Vec<u32>) {
        let seeds = &self.options.seed_texts;
        if seeds.is_empty() {
            return (vec![Context::empty()], vec![0; n]);
        }
        let used = seeds.len().min(n);
        let contexts = seeds[..used].iter().map(|s| Context::seeded(s.clone())).collect();
        let rows = (0..n).map(|r| (r % used) as u32).collect();
        (contexts, rows)
    }

    pub fn probability_driven(&self, schema: &DatasetSchema, n: u64, seed: u64) -> RunResult {
        let mut cache = DistributionCache::new();
        self.probability_driven_with_cache(schema, n, seed, &mut cache)
    }

    /// Probability-driven generation reusing `cache` across calls.
    pub fn probability_driven_with_cache(
        &self,
        schema: &DatasetSchema,
        n: u64,
        seed: u64,
        cache: &mut DistributionCache,
    ) -> RunResult {
        let mut log = OracleCallLog::new();
        if n == 0 {
            return Err(RunFailure {
                error: GenerationError::ZeroRows,
                call_log: log,
            });
        }
        let rows = n as usize;
        let mut rng = RngState::new(seed);
        let (mut contexts, mut row_ctx) = self.initial_contexts(rows);
        let mut codes: Vec<Vec<u32>> = Vec::with_capacity(schema.features().len());
        let mut realized: Vec<(usize, Vec<i64>)> = Vec::new();
        let mut provenance = Vec::with_capacity(schema.features().len());

        for (fi, feature) in schema.features().iter().enumerate() {
            let numeric = feature.kind == FeatureKind::NumericRange;
            let ranges = if numeric {
                feature
                    .categories
                    .iter()
                    .map(|l| feature.range_of(l).expect("validated schema"))
                    .collect()
            } else {
                Vec::new()
            };
            let mut values = Vec::new();

            if feature.is_single_category() {
                codes.push(vec![0; rows]);
                if numeric {
                    values = (0..rows)
                        .map(|_| rng.next_in_range(ranges[0].lo, ranges[0].hi))
                        .collect();
                }
                let label = &feature.categories[0];
                for c in contexts.iter_mut() {
                    c.assignments.push((feature.name.clone(), label.clone()));
                }
                provenance.push(FeatureProvenance::default());
            } else {
                let mut dists = Vec::with_capacity(contexts.len());
                let mut prov = Vec::with_capacity(contexts.len());
                for ctx in &contexts {
                    let rendered = render_context(ctx, schema);
                    let key = context_key(&feature.name, &rendered);
                    let dist = match cache.get(&key) {
                        Some(d) => {
                            log.cache_hit(&feature.name, key);
                            d.clone()
                        }
                        None => {
                            let prompt = build_distribution_prompt(feature, &rendered, schema);
                            let fetched = query_distribution(
                                self.oracle,
                                &prompt,
                                feature,
                                &rendered,
                                key,
                                &self.options.policy,
                                &mut log,
                            );
                            match fetched {
                                Ok((_, d)) => cache.insert(key, d).clone(),
                                Err(source) => {
                                    return Err(RunFailure {
                                        error: GenerationError::Feature {
                                            feature: feature.name.clone(),
                                            context: rendered,
                                            source,
                                        },
                                        call_log: log,
                                    })
                                }
                            }
                        }
                    };
                    dists.push(dist);
                    prov.push(ProvenanceContext { rendered, key });
                }

                let mut column = Vec::with_capacity(rows);
                if numeric {
                    values.reserve(rows);
                }
                for &c in &row_ctx {
                    let idx = dists[c as usize].sample_index(&mut rng);
                    column.push(idx as u32);
                    if numeric {
                        values.push(rng.next_in_range(ranges[idx].lo, ranges[idx].hi));
                    }
                }

                // Extend contexts with the new label, numbering the extended
                // contexts in order of first appearance.
                let drawn_from = row_ctx.clone();
                let ncat = feature.categories.len();
                let mut remap = vec![u32::MAX; contexts.len() * ncat];
                let mut next_contexts = Vec::new();
                for (r, c) in row_ctx.iter_mut().enumerate() {
                    let slot = *c as usize * ncat + column[r] as usize;
                    if remap[slot] == u32::MAX {
                        remap[slot] = next_contexts.len() as u32;
                        next_contexts.push(
                            contexts[*c as usize].extended(&feature.name, &feature.categories[column[r] as usize]),
                        );
                    }
                    *c = remap[slot];
                }
                provenance.push(FeatureProvenance {
                    contexts: prov,
                    row_context: drawn_from,
                });
                contexts = next_contexts;
                codes.push(column);
            }
            if numeric {
                realized.push((fi, values));
            }
        }

        let mut table = Table::from_codes(schema.clone(), codes, rows);
        for (fi, values) in realized {
            table.set_realized(fi, values);
        }
        table.set_provenance(provenance);
        Ok(GenerationRun {
            strategy: Strategy::ProbabilityDriven,
            seed,
            requested: n,
            table,
            call_log: log,
            cache_entries: cache.len(),
            failed_rows: 0,
            shortfall: None,
        })
    }

    /// Whole-table requests, repeated for the remainder until `n` rows have
    /// arrived or the batch cap is reached. Numeric ranges are not realized.
    pub fn table_wide(&self, schema: &DatasetSchema, n: u64, seed: u64) -> RunResult {
        let mut log = OracleCallLog::new();
        if n == 0 {
            return Err(RunFailure {
                error: GenerationError::ZeroRows,
                call_log: log,
            });
        }
        let mut table = Table::new(schema.clone());
        for call in 0..self.options.table_batch_cap.max(1) {
            let received = table.len() as u64;
            if received >= n {
                break;
            }
            let remainder = n - received;
            let prompt = build_table_prompt(schema, remainder);
            match query_table(self.oracle, &prompt, schema, remainder, &self.options.policy, &mut log) {
                Ok(parsed) => {
                    if parsed.table.is_empty() {
                        break;
                    }
                    table.append(&parsed.table);
                }
                Err(e) if call == 0 => {
                    return Err(RunFailure {
                        error: GenerationError::Table(e),
                        call_log: log,
                    })
                }
                Err(e) => {
                    log::warn!("table-wide follow-up request failed: {e}");
                    break;
                }
            }
        }
        let received = table.len() as u64;
        let shortfall = (received < n).then_some(RowShortfall { received, requested: n });
        Ok(GenerationRun {
            strategy: Strategy::TableWide,
            seed,
            requested: n,
            table,
            call_log: log,
            cache_entries: 0,
            failed_rows: 0,
            shortfall,
        })
    }

    /// One oracle call per multi-category cell, each conditioned on the
    /// row's earlier cells.
    pub fn cell_by_cell(&self, schema: &DatasetSchema, n: u64, seed: u64) -> RunResult {
        let mut log = OracleCallLog::new();
        if n == 0 {
            return Err(RunFailure {
                error: GenerationError::ZeroRows,
                call_log: log,
            });
        }
        let mut rng = RngState::new(seed);
        let (seeds, row_seed) = self.initial_contexts(n as usize);
        let mut table = Table::new(schema.clone());
        let mut realized: BTreeMap<usize, Vec<i64>> = BTreeMap::new();
        let mut failed_rows = 0;
        let mut labels: Vec<String> = Vec::with_capacity(schema.features().len());
        let mut values: Vec<(usize, i64)> = Vec::new();

        'rows: for row in 0..n {
            let mut ctx = seeds[row_seed[row as usize] as usize].clone();
            labels.clear();
            values.clear();
            for (fi, feature) in schema.features().iter().enumerate() {
                let label = if feature.is_single_category() {
                    feature.categories[0].clone()
                } else {
                    let rendered = render_context(&ctx, schema);
                    let prompt = build_cell_prompt(feature, &rendered, schema);
                    match query_cell(self.oracle, &prompt, feature, &rendered, &self.options.policy, &mut log) {
                        Ok(label) => label,
                        Err(source) => {
                            let transport = matches!(source, OracleError::OracleUnavailable { .. });
                            if transport || self.options.cell_failure == CellFailureMode::AbortRun {
                                return Err(RunFailure {
                                    error: GenerationError::Cell {
                                        row,
                                        feature: feature.name.clone(),
                                        source,
                                    },
                                    call_log: log,
                                });
                            }
                            failed_rows += 1;
                            continue 'rows;
                        }
                    }
                };
                if feature.kind == FeatureKind::NumericRange {
                    let range = feature.range_of(&label).expect("validated schema");
                    values.push((fi, rng.next_in_range(range.lo, range.hi)));
                }
                ctx = ctx.extended(&feature.name, &label);
                labels.push(label);
            }
            table.push_row(&labels);
            for &(fi, v) in &values {
                realized.entry(fi).or_default().push(v);
            }
        }
        for (fi, v) in realized {
            table.set_realized(fi, v);
        }
        Ok(GenerationRun {
            strategy: Strategy::CellByCell,
            seed,
            requested: n,
            table,
            call_log: log,
            cache_entries: 0,
            failed_rows,
            shortfall: None,
        })
    }
}

pub fn generate_probability_driven<O: Oracle + ?Sized>(
    schema: &DatasetSchema,
    oracle: &O,
    n: u64,
    seed: u64,
) -> RunResult {
    Generator::new(oracle).probability_driven(schema, n, seed)
}

pub fn generate_table_wide<O: Oracle + ?Sized>(schema: &DatasetSchema, oracle: &O, n: u64) -> RunResult {
    Generator::new(oracle).table_wide(schema, n, 0)
}

pub fn generate_cell_by_cell<O: Oracle + ?Sized>(schema: &DatasetSchema, oracle: &O, n: u64, seed: u64) -> RunResult {
    Generator::new(oracle).cell_by_cell(schema, n, seed)
}
