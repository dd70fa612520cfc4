//! Command-line front end and file formats for `probtab-core`.

pub mod bundled;
pub mod cli;
pub mod config;
pub mod fixture;
pub mod http;
pub mod io;
