//! Validity classification of emulated responses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    ParseFailure,
    WrongOperation,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub verdict: Verdict,
    pub reason: Reason,
}

impl ValidationOutcome {
    pub const VALID: Self = Self {
        verdict: Verdict::Valid,
        reason: Reason::None,
    };

    pub fn invalid(reason: Reason) -> Self {
        Self {
            verdict: Verdict::Invalid,
            reason,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.verdict == Verdict::Valid
    }
}

/// Decides whether an emulated response is acceptable in place of the
/// recorded one. A missing response (`None`) is never valid.
pub trait Validator: Sync {
    fn validate(&self, expected: &[u8], emulated: Option<&[u8]>) -> ValidationOutcome;
}

/// Parses `{key:value,key:value,...}`.
///
/// The message must be UTF-8, open with the only `{` and close with the only
/// `}`, and every comma-separated item needs a non-empty key before its first
/// colon. An `op` key is required.
pub fn parse_message(bytes: &[u8]) -> Option<BTreeMap<String, String>> {
    let text = std::str::from_utf8(bytes).ok()?;
    let body = text.strip_prefix('{')?.strip_suffix('}')?;
    if body.contains(['{', '}']) {
        return None;
    }
    let mut fields = BTreeMap::new();
    for item in body.split(',') {
        let (k, v) = item.split_once(':')?;
        if k.is_empty() || fields.insert(k.to_string(), v.to_string()).is_some() {
            return None;
        }
    }
    fields.contains_key("op").then_some(fields)
}

/// The directory protocol validator: payload differences are fine, the
/// operation is not.
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectoryValidator;

impl Validator for DirectoryValidator {
    fn validate(&self, expected: &[u8], emulated: Option<&[u8]>) -> ValidationOutcome {
        directory_validator(expected, emulated)
    }
}

pub fn directory_validator(expected: &[u8], emulated: Option<&[u8]>) -> ValidationOutcome {
    let Some(got) = emulated.and_then(parse_message) else {
        return ValidationOutcome::invalid(Reason::ParseFailure);
    };
    let want = parse_message(expected);
    if want.as_ref().and_then(|w| w.get("op")) != got.get("op") {
        return ValidationOutcome::invalid(Reason::WrongOperation);
    }
    ValidationOutcome::VALID
}
