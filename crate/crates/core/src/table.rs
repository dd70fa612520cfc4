//! Column-major generated tables with per-cell validity flags and per-row
//! provenance.

use alloc::string::String;
use alloc::vec::Vec;

use crate::schema::{ContextKey, DatasetSchema};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell<'a> {
    /// Label from the feature's category list, with its index.
    Valid(usize, &'a str),
    /// Label the oracle produced that is not in the category list.
    Invalid(&'a str),
}

impl<'a> Cell<'a> {
    pub fn label(&self) -> &'a str {
        match *self {
            Cell::Valid(_, l) | Cell::Invalid(l) => l,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Cell::Valid(..))
    }
}

/// Codes below the category count index the category list; larger codes
/// index `extra`, the off-list labels kept verbatim.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Column {
    codes: Vec<u32>,
    extra: Vec<String>,
    realized: Option<Vec<i64>>,
}

/// Context a probability-driven draw was conditioned on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceContext {
    pub rendered: String,
    pub key: ContextKey,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureProvenance {
    pub contexts: Vec<ProvenanceContext>,
    /// Index into `contexts` for each row. Empty when the feature was filled
    /// without sampling.
    pub row_context: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    schema: DatasetSchema,
    columns: Vec<Column>,
    rows: usize,
    provenance: Option<Vec<FeatureProvenance>>,
}

impl Table {
    pub fn new(schema: DatasetSchema) -> Self {
        let columns = schema.features().iter().map(|_| Column::default()).collect();
        Table {
            schema,
            columns,
            rows: 0,
            provenance: None,
        }
    }

    pub(crate) fn from_codes(schema: DatasetSchema, codes: Vec<Vec<u32>>, rows: usize) -> Self {
        let columns = codes
            .into_iter()
            .map(|codes| Column {
                codes,
                ..Column::default()
            })
            .collect();
        Table {
            schema,
            columns,
            rows,
            provenance: None,
        }
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Appends a row of labels in schema order. Labels are matched exactly,
    /// then case-insensitively; anything else is stored as an invalid cell.
    ///
    /// # Panics
    /// If `labels` does not have one entry per feature.
    pub fn push_row<S: AsRef<str>>(&mut self, labels: &[S]) {
        assert_eq!(labels.len(), self.columns.len(), "row width");
        for (i, label) in labels.iter().enumerate() {
            let label = label.as_ref();
            let spec = &self.schema.features()[i];
            let col = &mut self.columns[i];
            let code = match spec.match_label(label) {
                Some(idx) => idx as u32,
                None => {
                    let n = spec.categories.len();
                    let pos = match col.extra.iter().position(|e| e == label) {
                        Some(p) => p,
                        None => {
                            col.extra.push(label.into());
                            col.extra.len() - 1
                        }
                    };
                    (n + pos) as u32
                }
            };
            col.codes.push(code);
        }
        self.rows += 1;
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell<'_> {
        let spec = &self.schema.features()[col];
        let code = self.columns[col].codes[row] as usize;
        match spec.categories.get(code) {
            Some(l) => Cell::Valid(code, l),
            None => Cell::Invalid(&self.columns[col].extra[code - spec.categories.len()]),
        }
    }

    /// Category index of a valid cell.
    pub fn code(&self, row: usize, col: usize) -> Option<usize> {
        let code = self.columns[col].codes[row] as usize;
        (code < self.schema.features()[col].categories.len()).then_some(code)
    }

    pub fn realized(&self, col: usize) -> Option<&[i64]> {
        self.columns[col].realized.as_deref()
    }

    pub fn set_realized(&mut self, col: usize, values: Vec<i64>) {
        self.columns[col].realized = Some(values);
    }

    pub(crate) fn push_realized(&mut self, col: usize, value: i64) {
        self.columns[col].realized.get_or_insert_with(Vec::new).push(value);
    }

    pub fn provenance(&self) -> Option<&[FeatureProvenance]> {
        self.provenance.as_deref()
    }

    pub(crate) fn set_provenance(&mut self, p: Vec<FeatureProvenance>) {
        self.provenance = Some(p);
    }

    /// `(row, column)` of every off-list cell, row-major.
    pub fn flagged_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for row in 0..self.rows {
            for col in 0..self.columns.len() {
                if self.code(row, col).is_none() {
                    out.push((row, col));
                }
            }
        }
        out
    }

    pub fn invalid_count(&self) -> usize {
        self.columns
            .iter()
            .zip(self.schema.features())
            .map(|(c, f)| c.codes.iter().filter(|&&k| k as usize >= f.categories.len()).count())
            .sum()
    }

    /// Appends the rows of `other`, which must share this table's schema.
    pub fn append(&mut self, other: &Table) {
        debug_assert_eq!(self.schema, other.schema);
        for row in 0..other.rows {
            let labels: Vec<&str> = (0..other.columns.len()).map(|c| other.cell(row, c).label()).collect();
            self.push_row(&labels);
            for c in 0..other.columns.len() {
                if let Some(v) = other.realized(c) {
                    self.push_realized(c, v[row]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::california;

    #[test]
    fn invalid_labels_are_kept_and_flagged() {
        let mut t = Table::new(california::schema());
        t.push_row(&["California/CA", "Children (0-17)", "Latino"]);
        t.push_row(&["California/CA", "children (0-17)", "Hispanic"]);
        t.push_row(&["California/CA", "Adults (55-64)", "Hispanic"]);
        assert_eq!(t.len(), 3);
        assert_eq!(t.cell(1, 1), Cell::Valid(0, "Children (0-17)"));
        assert_eq!(t.cell(1, 2), Cell::Invalid("Hispanic"));
        assert_eq!(t.flagged_cells(), alloc::vec![(1, 2), (2, 2)]);
        assert_eq!(t.invalid_count(), 2);
        assert_eq!(t.columns[2].extra.len(), 1);
    }
}
