#![allow(dead_code)]

use std::cell::{Cell, RefCell};

use probtab_core::california::{self, AGE_GROUPS, ETHNICITY, ETHNICITY_BY_AGE};
use probtab_core::oracle::{Completion, Oracle, OracleRequest, TransportError};
use probtab_core::PromptKind;

/// Answers distribution prompts from the census rows and counts every call by kind.
///
/// Cell prompts get `cell_label` for Age Group and a rotating ethnicity;
/// table prompts get up to `rows_per_call` uniform rows, with `bad_label`
/// in place of the ethnicity on every `bad_every`-th row.
pub struct CountingOracle {
    pub distribution: Cell<u64>,
    pub cell: Cell<u64>,
    pub table: Cell<u64>,
    pub rows_per_call: usize,
    pub bad_every: usize,
    pub bad_label: &'static str,
    pub contexts: RefCell<Vec<String>>,
    pub next_row: Cell<usize>,
}

impl Default for CountingOracle {
    fn default() -> Self {
        CountingOracle {
            distribution: Cell::new(0),
            cell: Cell::new(0),
            table: Cell::new(0),
            rows_per_call: usize::MAX,
            bad_every: 0,
            bad_label: "Hispanic",
            contexts: RefCell::new(Vec::new()),
            next_row: Cell::new(0),
        }
    }
}

/// JSON reply for a distribution prompt in the California schema.
pub fn census_reply(feature: &str, context: &str) -> Option<String> {
    let pairs: Vec<(String, f64)> = match feature {
        "Age Group" => AGE_GROUPS
            .iter()
            .zip(california::AGE_MARGINAL)
            .map(|(a, p)| (a.to_string(), p))
            .collect(),
        "Ethnicity Group" => {
            let a = AGE_GROUPS
                .iter()
                .position(|a| context.ends_with(&format!("Age Group is {a}.")))?;
            ETHNICITY
                .iter()
                .zip(ETHNICITY_BY_AGE[a])
                .map(|(e, p)| (e.to_string(), p / 100.0))
                .collect()
        }
        _ => return None,
    };
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("\"{k}\": {v}")).collect();
    Some(format!("{{{}}}", body.join(", ")))
}

impl Oracle for CountingOracle {
    fn complete(&self, request: &OracleRequest<'_>) -> Result<Completion, TransportError> {
        let feature = request.feature.unwrap_or_default();
        match request.kind {
            PromptKind::Distribution => {
                self.distribution.set(self.distribution.get() + 1);
                self.contexts.borrow_mut().push(request.context.to_string());
                census_reply(feature, request.context)
                    .map(Completion::instant)
                    .ok_or_else(|| TransportError::fatal("no such context"))
            }
            PromptKind::CellByCell => {
                let k = self.cell.get();
                self.cell.set(k + 1);
                let label = match feature {
                    "Age Group" => AGE_GROUPS[(k as usize / 2) % AGE_GROUPS.len()],
                    _ => ETHNICITY[(k as usize / 2) % ETHNICITY.len()],
                };
                Ok(Completion::instant(label))
            }
            PromptKind::TableWide => {
                self.table.set(self.table.get() + 1);
                let n = (request.requested_rows.unwrap_or(0) as usize).min(self.rows_per_call);
                let mut rows = Vec::with_capacity(n);
                for _ in 0..n {
                    let i = self.next_row.get();
                    self.next_row.set(i + 1);
                    let eth = if self.bad_every > 0 && i % self.bad_every == self.bad_every - 1 {
                        self.bad_label
                    } else {
                        ETHNICITY[(7 * i) % ETHNICITY.len()]
                    };
                    rows.push(format!(
                        "{{\"State\": \"California/CA\", \"Age Group\": \"{}\", \"Ethnicity Group\": \"{}\"}}",
                        AGE_GROUPS[i % AGE_GROUPS.len()],
                        eth
                    ));
                }
                Ok(Completion::instant(format!("[{}]", rows.join(", "))))
            }
        }
    }
}
