use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::promptgen::{parse_response, ParsedResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Parsed(ParsedResponse),
    /// The completion came back but had no comment section.
    Unparsable {
        raw: String,
    },
    /// The request itself failed.
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub repetition: usize,
    pub outcome: AttemptOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatOutcome {
    pub attempts: Vec<Attempt>,
}

impl RepeatOutcome {
    pub fn responses(&self) -> impl Iterator<Item = &ParsedResponse> {
        self.attempts.iter().filter_map(|a| match &a.outcome {
            AttemptOutcome::Parsed(p) => Some(p),
            _ => None,
        })
    }

    pub fn failures(&self) -> impl Iterator<Item = &Attempt> {
        self.attempts
            .iter()
            .filter(|a| !matches!(a.outcome, AttemptOutcome::Parsed(_)))
    }

    pub fn all_failed(&self) -> bool {
        self.responses().next().is_none()
    }
}

/// Runs `complete` `repetitions` times and parses each reply.
///
/// Per-attempt failures are recorded. An unreachable service aborts at once,
/// since every later attempt would fail the same way.
pub fn run_repeated<F>(repetitions: usize, mut complete: F) -> Result<RepeatOutcome, GatewayError>
where
    F: FnMut(usize) -> Result<String, GatewayError>,
{
    if repetitions == 0 {
        return Err(GatewayError::InvalidArgument("repetitions must be at least 1".into()));
    }
    let mut attempts = Vec::with_capacity(repetitions);
    for repetition in 0..repetitions {
        let outcome = match complete(repetition) {
            Ok(raw) => match parse_response(&raw) {
                Ok(parsed) => AttemptOutcome::Parsed(parsed),
                Err(e) => AttemptOutcome::Unparsable { raw: e.raw },
            },
            Err(e) if e.is_unreachable() => return Err(e),
            Err(e) => AttemptOutcome::Failed { error: e.to_string() },
        };
        if !matches!(outcome, AttemptOutcome::Parsed(_)) {
            log::warn!("repetition {repetition} failed: {outcome:?}");
        }
        attempts.push(Attempt { repetition, outcome });
    }
    Ok(RepeatOutcome { attempts })
}
