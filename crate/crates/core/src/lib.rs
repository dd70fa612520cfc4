//! Probability-driven synthetic generation of categorical tables.
//!
//! An oracle (usually a language model) estimates one conditional category
//! distribution per distinct context; rows are then drawn locally by
//! ancestral sampling. Table-wide and cell-by-cell baselines and the
//! fidelity metrics used to compare all three live here too.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, HTTP, and the
//! command line live in the `probtab` crate.

#![no_std]

extern crate alloc;

pub mod california;
pub mod distribution;
pub mod fidelity;
pub mod oracle;
pub mod pipeline;
pub mod prompt;
pub mod response;
pub mod rng;
pub mod schema;
pub mod table;

pub use distribution::{
    realize_numeric_range, sample, sample_counts, validate_and_normalize, CategoricalDistribution, DistributionError,
    RawDistribution,
};
pub use oracle::{
    Completion, Message, Oracle, OracleCallLog, OracleError, OracleRequest, RetryPolicy, Role, TransportError,
};
pub use pipeline::{
    generate_cell_by_cell, generate_probability_driven, generate_table_wide, DistributionCache, GenerationError,
    GenerationOptions, GenerationRun, Generator, RunFailure, Strategy,
};
pub use prompt::{Prompt, PromptKind};
pub use rng::RngState;
pub use schema::{
    context_key, render_context, Context, ContextKey, DatasetSchema, FeatureKind, FeatureSpec, SchemaError,
};
pub use table::{Cell, Table};
