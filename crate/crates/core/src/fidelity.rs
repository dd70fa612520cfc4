//! Frequency tables, distance and goodness-of-fit statistics, multi-run
//! aggregation, and the side-by-side comparison report.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

use crate::distribution::CategoricalDistribution;
use crate::oracle::CallCounters;
use crate::table::Table;

/// Group label used when frequencies are not conditioned on anything.
pub const ALL_ROWS: &str = "⊤";
/// Rendering of a cell with no supporting rows.
pub const EMPTY_CELL: &str = "−";

/// Expected count below which chi-square categories are pooled.
pub const POOLING_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FidelityError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("category sets differ")]
    CategoryMismatch,
    #[error("every category has expected count below 5")]
    AllPooled,
    #[error("observed counts sum to {observed}, expected {n}")]
    TotalMismatch { observed: u64, n: u64 },
    #[error("frequency tables have different shapes")]
    ShapeMismatch,
    #[error("no tables to aggregate")]
    NoRuns,
}

/// Percent of `target` labels within each group of `given`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub target: String,
    pub given: Option<String>,
    pub groups: Vec<String>,
    pub categories: Vec<String>,
    /// `[group][category]` raw counts over valid rows.
    pub counts: Vec<Vec<u64>>,
    /// `[group][category]` percentages; `None` where the group has no rows.
    pub percent: Vec<Vec<Option<f64>>>,
    pub support: Vec<u64>,
    /// Rows excluded because the target or given cell is off-list.
    pub invalid_rows: u64,
    pub total_rows: u64,
}

impl FrequencyTable {
    /// Table built from known conditional distributions, one per group
    /// (`None` renders as empty). Supports are zero.
    pub fn from_distributions(
        target: &str,
        given: Option<&str>,
        groups: Vec<String>,
        categories: Vec<String>,
        dists: &[Option<CategoricalDistribution>],
    ) -> Result<Self, FidelityError> {
        if dists.len() != groups.len() {
            return Err(FidelityError::ShapeMismatch);
        }
        let mut percent = Vec::with_capacity(groups.len());
        for d in dists {
            match d {
                Some(d) if d.categories() == categories.as_slice() => {
                    percent.push(d.probs().iter().map(|p| Some(p * 100.0)).collect())
                }
                Some(_) => return Err(FidelityError::CategoryMismatch),
                None => percent.push(vec![None; categories.len()]),
            }
        }
        Ok(FrequencyTable {
            target: target.into(),
            given: given.map(String::from),
            counts: vec![vec![0; categories.len()]; groups.len()],
            support: vec![0; groups.len()],
            groups,
            categories,
            percent,
            invalid_rows: 0,
            total_rows: 0,
        })
    }

    pub fn invalid_percent(&self) -> f64 {
        if self.total_rows == 0 {
            0.0
        } else {
            100.0 * self.invalid_rows as f64 / self.total_rows as f64
        }
    }

    pub fn group_index(&self, group: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == group)
    }

    /// Row of a group as a distribution, when the group has any mass.
    pub fn distribution(&self, group: usize) -> Option<CategoricalDistribution> {
        let weights: Option<Vec<f64>> = self.percent[group].iter().copied().collect();
        CategoricalDistribution::from_weights(self.categories.clone(), weights?).ok()
    }

    fn same_shape(&self, other: &FrequencyTable) -> bool {
        self.target == other.target
            && self.given == other.given
            && self.groups == other.groups
            && self.categories == other.categories
    }
}

/// Frequencies of `target` within each category of `given` (or over all rows
/// when `given` is `None`). Rows with an off-list label in either column are
/// left out and counted in `invalid_rows`.
pub fn conditional_frequencies(
    table: &Table,
    target: &str,
    given: Option<&str>,
) -> Result<FrequencyTable, FidelityError> {
    let schema = table.schema();
    let t = schema
        .position(target)
        .ok_or_else(|| FidelityError::UnknownFeature(target.into()))?;
    let g = match given {
        Some(name) => Some(
            schema
                .position(name)
                .ok_or_else(|| FidelityError::UnknownFeature(name.into()))?,
        ),
        None => None,
    };
    let categories = schema.features()[t].categories.clone();
    let groups = match g {
        Some(g) => schema.features()[g].categories.clone(),
        None => vec![ALL_ROWS.to_string()],
    };
    let mut counts = vec![vec![0u64; categories.len()]; groups.len()];
    let mut invalid_rows = 0;
    for row in 0..table.len() {
        let group = match g {
            Some(g) => table.code(row, g),
            None => Some(0),
        };
        match (group, table.code(row, t)) {
            (Some(gi), Some(ti)) => counts[gi][ti] += 1,
            _ => invalid_rows += 1,
        }
    }
    let support: Vec<u64> = counts.iter().map(|c| c.iter().sum()).collect();
    let percent = counts
        .iter()
        .zip(&support)
        .map(|(row, &s)| {
            row.iter()
                .map(|&c| (s > 0).then(|| 100.0 * c as f64 / s as f64))
                .collect()
        })
        .collect();
    Ok(FrequencyTable {
        target: target.into(),
        given: given.map(String::from),
        groups,
        categories,
        counts,
        percent,
        support,
        invalid_rows,
        total_rows: table.len() as u64,
    })
}

/// `½ Σ |p_i − q_i|` over a shared category list.
pub fn total_variation(p: &CategoricalDistribution, q: &CategoricalDistribution) -> Result<f64, FidelityError> {
    if p.categories() != q.categories() {
        return Err(FidelityError::CategoryMismatch);
    }
    Ok(0.5
        * p.probs()
            .iter()
            .zip(q.probs())
            .map(|(a, b)| libm::fabs(a - b))
            .sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    /// Categories whose expected count fell below the pooling threshold.
    pub pooled: Vec<String>,
}

/// Pearson's statistic of `observed` against `expected` scaled to `n`.
///
/// Categories with expected count below 5 are merged into one bin. That bin
/// is tested on its own when its combined expectation reaches 5; otherwise it
/// is folded into the smallest remaining category.
pub fn chi_square_gof(
    observed: &[u64],
    expected: &CategoricalDistribution,
    n: u64,
) -> Result<ChiSquare, FidelityError> {
    if observed.len() != expected.len() {
        return Err(FidelityError::CategoryMismatch);
    }
    let total: u64 = observed.iter().sum();
    if total != n {
        return Err(FidelityError::TotalMismatch { observed: total, n });
    }
    let nf = n as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pooled = Vec::new();
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for ((o, p), label) in observed.iter().zip(expected.probs()).zip(expected.categories()) {
        let e = p * nf;
        if e < POOLING_THRESHOLD {
            pool_o += *o as f64;
            pool_e += e;
            pooled.push(label.clone());
        } else {
            bins.push((*o as f64, e));
        }
    }
    if bins.is_empty() {
        return Err(FidelityError::AllPooled);
    }
    if pool_e >= POOLING_THRESHOLD {
        bins.push((pool_o, pool_e));
    } else if !pooled.is_empty() {
        let smallest = bins
            .iter_mut()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("bins is non-empty");
        smallest.0 += pool_o;
        smallest.1 += pool_e;
    }
    let statistic = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    Ok(ChiSquare {
        statistic,
        dof: bins.len() - 1,
        pooled,
    })
}

/// Per-cell mean and sample standard deviation over several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAggregate {
    pub target: String,
    pub given: Option<String>,
    pub groups: Vec<String>,
    pub categories: Vec<String>,
    pub mean: Vec<Vec<Option<f64>>>,
    pub std: Vec<Vec<Option<f64>>>,
    /// Number of runs in which each cell had supporting rows.
    pub presence: Vec<Vec<usize>>,
    pub runs: usize,
    pub mean_invalid_percent: f64,
}

#[derive(Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    fn sample_std(&self) -> Option<f64> {
        match self.n {
            0 => None,
            1 => Some(0.0),
            n => Some(libm::sqrt((self.m2 / (n - 1) as f64).max(0.0))),
        }
    }
}

pub fn aggregate_runs(tables: &[FrequencyTable]) -> Result<RunAggregate, FidelityError> {
    let first = tables.first().ok_or(FidelityError::NoRuns)?;
    if tables.iter().any(|t| !t.same_shape(first)) {
        return Err(FidelityError::ShapeMismatch);
    }
    let (ng, nc) = (first.groups.len(), first.categories.len());
    let mut acc = vec![vec![Welford::default(); nc]; ng];
    for t in tables {
        for (g, row) in t.percent.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    acc[g][c].push(*v);
                }
            }
        }
    }
    let map = |f: &dyn Fn(&Welford) -> Option<f64>| -> Vec<Vec<Option<f64>>> {
        acc.iter().map(|row| row.iter().map(f).collect()).collect()
    };
    Ok(RunAggregate {
        target: first.target.clone(),
        given: first.given.clone(),
        groups: first.groups.clone(),
        categories: first.categories.clone(),
        mean: map(&Welford::mean),
        std: map(&Welford::sample_std),
        presence: acc.iter().map(|row| row.iter().map(|w| w.n).collect()).collect(),
        runs: tables.len(),
        mean_invalid_percent: tables.iter().map(FrequencyTable::invalid_percent).sum::<f64>() / tables.len() as f64,
    })
}

/// One strategy column of a comparison report.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyColumn {
    pub name: String,
    pub aggregate: Option<RunAggregate>,
    /// Counters summed over all runs.
    pub calls: CallCounters,
    /// Runs attempted, including failed ones; divides `calls` in the report.
    pub runs: usize,
    /// Set when the strategy could not produce any run.
    pub failure: Option<String>,
}

/// One bar of a composition panel: `percent` of `category` within `group`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub group: String,
    pub category: String,
    pub percent: f64,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub text: String,
    /// Panels in column order, reference first.
    pub panels: Vec<(String, Vec<PanelRow>)>,
    /// Mean total variation distance from the reference, per strategy.
    pub mean_tv: Vec<(String, Option<f64>)>,
}

fn fmt_cell(mean: Option<f64>, std: Option<f64>, presence: usize, runs: usize) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => {
            let mut out = format!("{m:.1} ± {s:.1}");
            if presence < runs {
                let _ = write!(out, " [{presence}/{runs}]");
            }
            out
        }
        (Some(m), _) => format!("{m:.1}"),
        _ => EMPTY_CELL.to_string(),
    }
}

fn fmt_count(total: u64, runs: usize) -> String {
    let runs = runs.max(1) as u64;
    if total % runs == 0 {
        format!("{}", total / runs)
    } else {
        format!("{:.1}", total as f64 / runs as f64)
    }
}

fn mean_distance(reference: &FrequencyTable, agg: &RunAggregate) -> Option<f64> {
    let mut sum = 0.0;
    let mut groups = 0;
    for g in 0..reference.groups.len() {
        let Some(r) = reference.distribution(g) else { continue };
        let weights: Option<Vec<f64>> = agg.mean[g].iter().copied().collect();
        let Some(q) = weights.and_then(|w| CategoricalDistribution::from_weights(agg.categories.clone(), w).ok())
        else {
            continue;
        };
        sum += total_variation(&r, &q).ok()?;
        groups += 1;
    }
    (groups > 0).then(|| sum / groups as f64)
}

fn push_table(out: &mut String, rows: &[Vec<String>]) {
    let ncol = rows[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    for (i, row) in rows.iter().enumerate() {
        out.push('|');
        for (c, cell) in row.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            let _ = write!(out, " {cell}{} |", " ".repeat(pad));
        }
        out.push('\n');
        if i == 0 {
            out.push('|');
            for w in &widths {
                let _ = write!(out, "{}|", "-".repeat(w + 2));
            }
            out.push('\n');
        }
    }
}

/// Side-by-side table of the reference and each strategy's run aggregate,
/// with mean total variation, oracle call counts, and invalid-label rates.
pub fn comparison_report(
    reference_name: &str,
    reference: &FrequencyTable,
    strategies: &[StrategyColumn],
) -> Result<ComparisonReport, FidelityError> {
    for s in strategies {
        if let Some(a) = &s.aggregate {
            if a.groups != reference.groups || a.categories != reference.categories || a.target != reference.target {
                return Err(FidelityError::ShapeMismatch);
            }
        }
    }
    let group_header = reference.given.clone().unwrap_or_else(|| String::from("Group"));
    let mut rows = Vec::new();
    let mut header = vec![group_header, reference.target.clone(), reference_name.to_string()];
    header.extend(strategies.iter().map(|s| s.name.clone()));
    rows.push(header);

    let mut panels = Vec::with_capacity(strategies.len() + 1);
    let mut ref_panel = Vec::new();
    let mut strat_panels: Vec<Vec<PanelRow>> = vec![Vec::new(); strategies.len()];
    for (g, group) in reference.groups.iter().enumerate() {
        for (c, category) in reference.categories.iter().enumerate() {
            let r = reference.percent[g][c];
            let mut row = vec![
                if c == 0 { group.clone() } else { String::new() },
                category.clone(),
                r.map_or_else(|| EMPTY_CELL.to_string(), |v| format!("{v:.1}")),
            ];
            if let Some(v) = r {
                ref_panel.push(PanelRow {
                    group: group.clone(),
                    category: category.clone(),
                    percent: v,
                    strategy: reference_name.to_string(),
                });
            }
            for (si, s) in strategies.iter().enumerate() {
                match &s.aggregate {
                    Some(a) => {
                        row.push(fmt_cell(a.mean[g][c], a.std[g][c], a.presence[g][c], a.runs));
                        if let Some(m) = a.mean[g][c] {
                            strat_panels[si].push(PanelRow {
                                group: group.clone(),
                                category: category.clone(),
                                percent: m,
                                strategy: s.name.clone(),
                            });
                        }
                    }
                    None => row.push(String::from("failed")),
                }
            }
            rows.push(row);
        }
    }
    panels.push((reference_name.to_string(), ref_panel));
    for (s, p) in strategies.iter().zip(strat_panels) {
        panels.push((s.name.clone(), p));
    }

    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} by {} (%)\n",
        reference.target,
        reference.given.as_deref().unwrap_or("all rows")
    );
    push_table(&mut text, &rows);

    let mut mean_tv = Vec::new();
    text.push_str("\nMean total variation distance from reference\n");
    for s in strategies {
        let tv = s.aggregate.as_ref().and_then(|a| mean_distance(reference, a));
        match (&s.failure, tv) {
            (Some(reason), _) => {
                let _ = writeln!(text, "  {}: failed ({reason})", s.name);
            }
            (None, Some(tv)) => {
                let _ = writeln!(text, "  {}: {tv:.4}", s.name);
            }
            (None, None) => {
                let _ = writeln!(text, "  {}: {EMPTY_CELL}", s.name);
            }
        }
        mean_tv.push((s.name.clone(), tv));
    }

    text.push_str("\nOracle calls per run\n");
    for s in strategies {
        let runs = s.runs;
        let c = &s.calls;
        let _ = writeln!(
            text,
            "  {}: distribution_queries={} cell_queries={} table_queries={} retries={} cache_hits={}",
            s.name,
            fmt_count(c.distribution_queries, runs),
            fmt_count(c.cell_queries, runs),
            fmt_count(c.table_queries, runs),
            fmt_count(c.retries, runs),
            fmt_count(c.cache_hits, runs),
        );
    }

    text.push_str("\nInvalid labels (% of rows)\n");
    for s in strategies {
        match &s.aggregate {
            Some(a) => {
                let _ = writeln!(
                    text,
                    "  {}: {:.1} over {} run(s)",
                    s.name, a.mean_invalid_percent, a.runs
                );
            }
            None => {
                let _ = writeln!(text, "  {}: {EMPTY_CELL}", s.name);
            }
        }
    }

    Ok(ComparisonReport { text, panels, mean_tv })
}
