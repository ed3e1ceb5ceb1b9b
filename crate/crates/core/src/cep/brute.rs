//! Exhaustive batch matcher over a complete event log, used as an oracle
//! for the streaming engine.

use thiserror::Error;

use super::{build_detection, within_radius, within_window, Detection, LoggedEvent};
use crate::definition::ResolvedDefinition;
use crate::event::SimpleEvent;

pub const MAX_BRUTE_LOG: usize = 200;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BruteError {
    #[error("log too large for exhaustive matching: {got} events exceeds {limit}")]
    LogTooLarge { got: usize, limit: usize },
}

/// For every unsuppressed initiator `a`, finds the first terminator `b` at or
/// after `a` (only `a` itself when the definition has no supporting specs)
/// that lies inside the window and radius and is preceded, strictly between
/// `a` and `b`, by enough in-radius supporting events. Detections are
/// sorted by interval end, then definition name, with log position breaking
/// the remaining ties.
pub fn match_brute(definitions: &[ResolvedDefinition], log: &[LoggedEvent]) -> Result<Vec<Detection>, BruteError> {
    if log.len() > MAX_BRUTE_LOG {
        return Err(BruteError::LogTooLarge {
            got: log.len(),
            limit: MAX_BRUTE_LOG,
        });
    }
    let mut events: Vec<&SimpleEvent> = log
        .iter()
        .filter(|l| l.suppressed_by.is_none())
        .map(|l| &l.event)
        .collect();
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));

    // (terminator position, definition, initiator position, detection)
    let mut found: Vec<(usize, &str, usize, Detection)> = Vec::new();
    for def in definitions.iter().filter(|d| d.definition.enabled) {
        for (ai, a) in events.iter().enumerate() {
            if !def.initiator.accepts(&a.class_label) {
                continue;
            }
            let mut collected: Vec<Vec<SimpleEvent>> = vec![Vec::new(); def.supporting.len()];
            let first = if def.supporting.is_empty() { ai } else { ai + 1 };
            for (bi, b) in events.iter().enumerate().skip(first) {
                if !within_window(a.timestamp, b.timestamp, def.window()) {
                    break;
                }
                if bi == ai && !def.terminator.accepts(&b.class_label) {
                    continue;
                }
                let near = within_radius(&a.location, &b.location, def.radius());
                let enough = def
                    .supporting
                    .iter()
                    .zip(&collected)
                    .all(|(s, c)| c.len() >= s.min_count as usize);
                if near && enough && def.terminator.accepts(&b.class_label) {
                    found.push((bi, def.name(), ai, build_detection(def, a, b, &collected)));
                    break;
                }
                if near && bi != ai {
                    if let Some(j) = def.supporting.iter().position(|s| s.accepts(&b.class_label)) {
                        collected[j].push((*b).clone());
                    }
                }
            }
        }
    }
    found.sort_by(|x, y| {
        x.3.interval_end
            .total_cmp(&y.3.interval_end)
            .then_with(|| x.0.cmp(&y.0))
            .then_with(|| x.1.cmp(y.1))
            .then_with(|| x.2.cmp(&y.2))
    });
    Ok(found.into_iter().map(|(_, _, _, d)| d).collect())
}
