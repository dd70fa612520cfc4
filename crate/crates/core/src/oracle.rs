//! The oracle interface, call accounting, and the retry loop shared by all
//! three query kinds.
//!
//! An [`Oracle`] turns a chat transcript into reply text. Everything else in
//! the crate talks to a model only through [`query_distribution`],
//! [`query_cell`] and [`query_table`], which log one [`CallRecord`] per
//! transport call.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use thiserror::Error;

use crate::distribution::{validate_and_normalize, CategoricalDistribution, DistributionError};
use crate::prompt::{category_list, Prompt, PromptKind};
use crate::response::{
    parse_cell_response, parse_distribution_response, parse_table_response, ParsedTable, ResponseError,
};
use crate::schema::{ContextKey, DatasetSchema, FeatureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user<S: Into<String>>(content: S) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant<S: Into<String>>(content: S) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// One transport call. `feature`, `context` and `requested_rows` describe
/// what the transcript asks for so lookup-based oracles need not parse it.
#[derive(Debug, Clone, Copy)]
pub struct OracleRequest<'a> {
    pub kind: PromptKind,
    pub feature: Option<&'a str>,
    pub context: &'a str,
    pub requested_rows: Option<u64>,
    pub messages: &'a [Message],
    pub temperature: f64,
    /// 1-based attempt number within the current query.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub latency: Duration,
}

impl Completion {
    pub fn instant<S: Into<String>>(text: S) -> Self {
        Completion {
            text: text.into(),
            latency: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct TransportError {
    pub message: String,
    /// False for failures that another attempt cannot fix.
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable<S: Into<String>>(message: S) -> Self {
        TransportError {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal<S: Into<String>>(message: S) -> Self {
        TransportError {
            message: message.into(),
            retryable: false,
        }
    }
}

pub trait Oracle {
    fn complete(&self, request: &OracleRequest<'_>) -> Result<Completion, TransportError>;

    /// Called before retrying after a transport failure. Oracles that talk
    /// to a real service sleep here; the default does nothing.
    fn backoff(&self, _delay: Duration) {}
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn complete(&self, request: &OracleRequest<'_>) -> Result<Completion, TransportError> {
        (**self).complete(request)
    }

    fn backoff(&self, delay: Duration) {
        (**self).backoff(delay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub backoff_factor: u32,
    pub distribution_temperature: f64,
    pub cell_temperature: f64,
    pub table_temperature: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            backoff_base: Duration::from_secs(1),
            backoff_factor: 2,
            distribution_temperature: 0.0,
            cell_temperature: 1.0,
            table_temperature: 1.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): `base * factor^(retry-1)`.
    pub fn backoff_delay(&self, retry: u32) -> Duration {
        let factor = self.backoff_factor.saturating_pow(retry.saturating_sub(1));
        self.backoff_base.saturating_mul(factor)
    }

    fn temperature(&self, kind: PromptKind) -> f64 {
        match kind {
            PromptKind::Distribution => self.distribution_temperature,
            PromptKind::CellByCell => self.cell_temperature,
            PromptKind::TableWide => self.table_temperature,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.distribution_temperature = t;
        self.cell_temperature = t;
        self.table_temperature = t;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallOutcome {
    Ok,
    TransportError,
    ParseError,
    Rejected,
    /// Served from the distribution cache; no transport call was made.
    CacheHit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub kind: PromptKind,
    pub feature: Option<String>,
    pub context_key: Option<ContextKey>,
    pub attempt: u32,
    pub outcome: CallOutcome,
    pub latency: Duration,
}

impl CallRecord {
    pub fn is_transport(&self) -> bool {
        self.outcome != CallOutcome::CacheHit
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounters {
    /// Distinct distribution queries (first attempts).
    pub distribution_queries: u64,
    pub cell_queries: u64,
    pub table_queries: u64,
    /// Transport calls beyond the first attempt of a query.
    pub retries: u64,
    pub cache_hits: u64,
}

impl CallCounters {
    fn count(&mut self, r: &CallRecord) {
        if r.outcome == CallOutcome::CacheHit {
            self.cache_hits += 1;
            return;
        }
        if r.attempt > 1 {
            self.retries += 1;
            return;
        }
        match r.kind {
            PromptKind::Distribution => self.distribution_queries += 1,
            PromptKind::CellByCell => self.cell_queries += 1,
            PromptKind::TableWide => self.table_queries += 1,
        }
    }

    pub fn transport_calls(&self) -> u64 {
        self.distribution_queries + self.cell_queries + self.table_queries + self.retries
    }

    pub fn merge(&mut self, other: &CallCounters) {
        self.distribution_queries += other.distribution_queries;
        self.cell_queries += other.cell_queries;
        self.table_queries += other.table_queries;
        self.retries += other.retries;
        self.cache_hits += other.cache_hits;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleCallLog {
    records: Vec<CallRecord>,
    counters: CallCounters,
}

impl OracleCallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: CallRecord) {
        self.counters.count(&record);
        self.records.push(record);
    }

    pub fn records(&self) -> &[CallRecord] {
        &self.records
    }

    pub fn counters(&self) -> CallCounters {
        self.counters
    }

    /// Counters rebuilt from the records.
    pub fn recount(&self) -> CallCounters {
        let mut c = CallCounters::default();
        for r in &self.records {
            c.count(r);
        }
        c
    }

    pub(crate) fn cache_hit(&mut self, feature: &str, key: ContextKey) {
        self.push(CallRecord {
            kind: PromptKind::Distribution,
            feature: Some(feature.into()),
            context_key: Some(key),
            attempt: 0,
            outcome: CallOutcome::CacheHit,
            latency: Duration::ZERO,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle unavailable after {attempts} attempt(s): {reason}")]
    OracleUnavailable { attempts: u32, reason: TransportError },
    #[error("unusable response after {attempts} attempt(s): {reason}")]
    UnparsableResponse { attempts: u32, reason: ResponseError },
    #[error("distribution rejected after {attempts} attempt(s): {reason}")]
    Rejected { attempts: u32, reason: DistributionError },
}

/// Why a reply could not be used; drives the corrective follow-up.
enum Failure {
    Parse(ResponseError),
    Invalid(DistributionError),
}

impl Failure {
    fn describe(&self) -> String {
        match self {
            Failure::Parse(e) => e.to_string(),
            Failure::Invalid(e) => e.to_string(),
        }
    }
}

struct Query<'a> {
    prompt: &'a Prompt,
    feature: Option<&'a str>,
    context: &'a str,
    key: Option<ContextKey>,
    requested_rows: Option<u64>,
    /// Restates the expected reply shape in corrective follow-ups.
    reminder: String,
}

fn run<O, T>(
    oracle: &O,
    query: Query<'_>,
    policy: &RetryPolicy,
    log: &mut OracleCallLog,
    mut interpret: impl FnMut(&str) -> Result<T, Failure>,
) -> Result<T, OracleError>
where
    O: Oracle + ?Sized,
{
    let mut messages = vec![Message::user(query.prompt.text.clone())];
    let attempts = policy.max_retries + 1;
    let mut last: Option<Result<Failure, TransportError>> = None;
    let mut made = 0;
    for attempt in 1..=attempts {
        made = attempt;
        if attempt > 1 {
            if let Some(Err(_)) = last {
                oracle.backoff(policy.backoff_delay(attempt - 1));
            }
        }
        let request = OracleRequest {
            kind: query.prompt.kind,
            feature: query.feature,
            context: query.context,
            requested_rows: query.requested_rows,
            messages: &messages,
            temperature: policy.temperature(query.prompt.kind),
            attempt,
        };
        let result = oracle.complete(&request);
        let mut record = CallRecord {
            kind: query.prompt.kind,
            feature: query.feature.map(String::from),
            context_key: query.key,
            attempt,
            outcome: CallOutcome::Ok,
            latency: Duration::ZERO,
        };
        match result {
            Err(e) => {
                record.outcome = CallOutcome::TransportError;
                log.push(record);
                let fatal = !e.retryable;
                last = Some(Err(e));
                if fatal {
                    break;
                }
            }
            Ok(completion) => {
                record.latency = completion.latency;
                match interpret(&completion.text) {
                    Ok(value) => {
                        log.push(record);
                        return Ok(value);
                    }
                    Err(failure) => {
                        record.outcome = match failure {
                            Failure::Parse(_) => CallOutcome::ParseError,
                            Failure::Invalid(_) => CallOutcome::Rejected,
                        };
                        log.push(record);
                        // Keep the transcript to the original prompt plus the
                        // latest failed exchange.
                        messages.truncate(1);
                        messages.push(Message::assistant(completion.text));
                        messages.push(Message::user(format!(
                            "Your previous response could not be used: {}. {}",
                            failure.describe(),
                            query.reminder
                        )));
                        last = Some(Ok(failure));
                    }
                }
            }
        }
    }
    let attempts = made;
    Err(match last {
        Some(Err(reason)) => OracleError::OracleUnavailable { attempts, reason },
        Some(Ok(Failure::Parse(reason))) => OracleError::UnparsableResponse { attempts, reason },
        Some(Ok(Failure::Invalid(reason))) => OracleError::Rejected { attempts, reason },
        None => unreachable!("at least one attempt is made"),
    })
}

/// Sends a distribution prompt and returns the first reply that parses and
/// passes validation against `spec`.
pub fn query_distribution<O: Oracle + ?Sized>(
    oracle: &O,
    prompt: &Prompt,
    spec: &FeatureSpec,
    context: &str,
    key: ContextKey,
    policy: &RetryPolicy,
    log: &mut OracleCallLog,
) -> Result<(crate::distribution::RawDistribution, CategoricalDistribution), OracleError> {
    debug_assert_eq!(prompt.kind, PromptKind::Distribution);
    let query = Query {
        prompt,
        feature: Some(&spec.name),
        context,
        key: Some(key),
        requested_rows: None,
        reminder: format!(
            "Reply with only a JSON object mapping each of these categories to its probability: {}",
            category_list(&spec.categories)
        ),
    };
    run(oracle, query, policy, log, |text| {
        let raw = parse_distribution_response(text, spec).map_err(Failure::Parse)?;
        let dist = validate_and_normalize(&raw, spec).map_err(Failure::Invalid)?;
        Ok((raw, dist))
    })
}

pub fn query_cell<O: Oracle + ?Sized>(
    oracle: &O,
    prompt: &Prompt,
    spec: &FeatureSpec,
    context: &str,
    policy: &RetryPolicy,
    log: &mut OracleCallLog,
) -> Result<String, OracleError> {
    let query = Query {
        prompt,
        feature: Some(&spec.name),
        context,
        key: None,
        requested_rows: None,
        reminder: format!(
            "Reply with exactly one of these categories and nothing else: {}",
            category_list(&spec.categories)
        ),
    };
    run(oracle, query, policy, log, |text| {
        parse_cell_response(text, spec).map_err(Failure::Parse)
    })
}

pub fn query_table<O: Oracle + ?Sized>(
    oracle: &O,
    prompt: &Prompt,
    schema: &DatasetSchema,
    requested: u64,
    policy: &RetryPolicy,
    log: &mut OracleCallLog,
) -> Result<ParsedTable, OracleError> {
    let query = Query {
        prompt,
        feature: None,
        context: "",
        key: None,
        requested_rows: Some(requested),
        reminder: "Reply with only a JSON array of row objects keyed by column name.".to_string(),
    };
    run(oracle, query, policy, log, |text| {
        parse_table_response(text, schema, requested).map_err(Failure::Parse)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::california;
    use crate::prompt::build_distribution_prompt;
    use crate::schema::context_key;
    use core::cell::RefCell;

    /// Replies from a script, one entry per call; `None` is a transport failure.
    struct Scripted {
        replies: RefCell<Vec<Option<&'static str>>>,
        seen: RefCell<Vec<Vec<Message>>>,
        delays: RefCell<Vec<Duration>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Option<&'static str>>) -> Self {
            replies.reverse();
            Scripted {
                replies: RefCell::new(replies),
                seen: RefCell::new(Vec::new()),
                delays: RefCell::new(Vec::new()),
            }
        }
    }

    impl Oracle for Scripted {
        fn complete(&self, req: &OracleRequest<'_>) -> Result<Completion, TransportError> {
            self.seen.borrow_mut().push(req.messages.to_vec());
            match self.replies.borrow_mut().pop().flatten() {
                Some(t) => Ok(Completion::instant(t)),
                None => Err(TransportError::retryable("connection reset")),
            }
        }

        fn backoff(&self, delay: Duration) {
            self.delays.borrow_mut().push(delay);
        }
    }

    fn ask(
        oracle: &Scripted,
        policy: &RetryPolicy,
        log: &mut OracleCallLog,
    ) -> Result<CategoricalDistribution, OracleError> {
        let schema = california::schema();
        let spec = schema.feature("Ethnicity Group").unwrap();
        let ctx = "State is California/CA.";
        let prompt = build_distribution_prompt(spec, ctx, &schema);
        query_distribution(oracle, &prompt, spec, ctx, context_key(&spec.name, ctx), policy, log).map(|(_, d)| d)
    }

    #[test]
    fn exhaustion_on_prose() {
        let oracle = Scripted::new(vec![Some("no idea"), Some("still no idea"), Some("sorry")]);
        let mut log = OracleCallLog::new();
        let err = ask(&oracle, &RetryPolicy::default(), &mut log).unwrap_err();
        assert_eq!(
            err,
            OracleError::UnparsableResponse {
                attempts: 3,
                reason: ResponseError::NoJsonFound
            }
        );
        assert_eq!(log.records().len(), 3);
        assert_eq!(log.counters().retries, 2);
        assert_eq!(log.counters().distribution_queries, 1);
        assert_eq!(log.counters(), log.recount());
        // Corrective follow-up carries the failure reason.
        let seen = oracle.seen.borrow();
        assert_eq!(seen[1].len(), 3);
        assert_eq!(seen[1][1].content, "no idea");
        assert!(seen[1][2].content.contains("no JSON value found"));
        assert!(oracle.delays.borrow().is_empty());
    }

    #[test]
    fn transport_failures_back_off_exponentially() {
        let oracle = Scripted::new(vec![None, None, Some(r#"{"Latino": 1}"#)]);
        let mut log = OracleCallLog::new();
        let dist = ask(&oracle, &RetryPolicy::default(), &mut log).unwrap();
        assert_eq!(dist.prob("Latino"), Some(1.0));
        assert_eq!(
            *oracle.delays.borrow(),
            vec![Duration::from_secs(1), Duration::from_secs(2)]
        );
        assert_eq!(log.counters().retries, 2);
    }

    #[test]
    fn transport_exhaustion_is_unavailable() {
        let oracle = Scripted::new(vec![None, None]);
        let mut log = OracleCallLog::new();
        let policy = RetryPolicy {
            max_retries: 1,
            ..RetryPolicy::default()
        };
        assert!(matches!(
            ask(&oracle, &policy, &mut log),
            Err(OracleError::OracleUnavailable { attempts: 2, .. })
        ));
    }

    #[test]
    fn invalid_distribution_is_retried() {
        let oracle = Scripted::new(vec![Some(r#"{"Hispanic": 1}"#), Some(r#"{"White": 2, "Black": 2}"#)]);
        let mut log = OracleCallLog::new();
        let dist = ask(&oracle, &RetryPolicy::default(), &mut log).unwrap();
        assert_eq!(dist.prob("White"), Some(0.5));
        assert_eq!(log.records()[0].outcome, CallOutcome::Rejected);
        assert!(oracle.seen.borrow()[1][2]
            .content
            .contains("unknown category `Hispanic`"));
    }

    #[test]
    fn zero_retries_means_one_attempt() {
        let oracle = Scripted::new(vec![Some("nope")]);
        let mut log = OracleCallLog::new();
        let policy = RetryPolicy {
            max_retries: 0,
            ..RetryPolicy::default()
        };
        assert!(matches!(
            ask(&oracle, &policy, &mut log),
            Err(OracleError::UnparsableResponse { attempts: 1, .. })
        ));
        assert_eq!(log.records().len(), 1);
    }
}
