//! Documents compiled into the binary.

pub const CALIFORNIA_SCHEMA: &str = include_str!("../data/california.toml");
/// Census-derived ethnicity-by-age distributions for California.
pub const CALIFORNIA_ORIGINAL: &str = include_str!("../data/california_original.toml");
/// `california_original` plus cell and table scripts, for offline runs of every strategy.
pub const CALIFORNIA_SCRIPTED: &str = include_str!("../data/california_scripted.toml");

pub const FIXTURES: &[(&str, &str)] = &[
    ("california_original", CALIFORNIA_ORIGINAL),
    ("california_scripted", CALIFORNIA_SCRIPTED),
];

pub const SCHEMAS: &[(&str, &str)] = &[("california", CALIFORNIA_SCHEMA)];

/// Looks up a bundled fixture. Accepts `name` or `fixture:name`.
pub fn fixture(spec: &str) -> Option<&'static str> {
    let name = spec.strip_prefix("fixture:").unwrap_or(spec);
    FIXTURES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn schema(name: &str) -> Option<&'static str> {
    SCHEMAS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
