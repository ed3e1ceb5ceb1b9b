//! Explanations for detections and suppression decisions, rebuilt on demand
//! from the event log and the definition.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cep::{within_radius, within_window, Detection, LoggedEvent};
use crate::definition::{ResolvedDefinition, Role};
use crate::event::Location;
use crate::tellability::RegularMarking;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("dangling constituent: event `{0}` is not in the log")]
    DanglingConstituent(String),
    #[error("unknown definition `{0}`")]
    UnknownDefinition(String),
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("detection `{0}` has no initiator and terminator")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstituentTrace {
    pub event_id: String,
    pub role: Role,
    pub class_label: String,
    pub confidence: f64,
    pub feed_id: String,
    pub partner: String,
    pub timestamp: f64,
    pub location: Location,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    Temporal,
    Spatial,
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstraintCheck {
    pub kind: CheckKind,
    pub actual: f64,
    pub bound: f64,
    pub satisfied: bool,
    /// The constituent (spatial) or matcher (count) the check is about.
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProbabilityTerm {
    pub event_id: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Explanation {
    pub detection_id: String,
    pub definition_name: String,
    pub constituents: Vec<ConstituentTrace>,
    pub constraint_checks: Vec<ConstraintCheck>,
    pub probability_terms: Vec<ProbabilityTerm>,
    pub product: f64,
    pub narrative: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SuppressionTrace {
    pub event_id: String,
    pub marking: RegularMarking,
    pub decided_at: f64,
}

/// Fixed-point with at most six decimals, trailing zeros dropped.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn explain(
    detection: &Detection,
    log: &[LoggedEvent],
    definitions: &[ResolvedDefinition],
) -> Result<Explanation, ExplainError> {
    let def = definitions
        .iter()
        .find(|d| d.name() == detection.definition_name)
        .ok_or_else(|| ExplainError::UnknownDefinition(detection.definition_name.clone()))?;
    let index: HashMap<&str, usize> = log.iter().enumerate().map(|(i, e)| (e.event.id.as_str(), i)).collect();

    let mut constituents = Vec::new();
    let mut positions = Vec::new();
    for r in &detection.constituent_event_ids {
        let &i = index
            .get(r.event_id.as_str())
            .ok_or_else(|| ExplainError::DanglingConstituent(r.event_id.clone()))?;
        let e = &log[i].event;
        positions.push(i);
        constituents.push(ConstituentTrace {
            event_id: e.id.clone(),
            role: r.role,
            class_label: e.class_label.clone(),
            confidence: e.confidence,
            feed_id: e.feed_id.clone(),
            partner: e.partner.clone(),
            timestamp: e.timestamp,
            location: e.location,
        });
    }
    let find = |role: Role| constituents.iter().position(|c| c.role == role);
    let (Some(ii), Some(ti)) = (find(Role::Initiator), find(Role::Terminator)) else {
        return Err(ExplainError::Malformed(detection.id.clone()));
    };
    let init = &constituents[ii];
    let term = &constituents[ti];

    let span = term.timestamp - init.timestamp;
    let mut checks = vec![ConstraintCheck {
        kind: CheckKind::Temporal,
        actual: span,
        bound: def.window(),
        satisfied: span >= 0.0 && within_window(init.timestamp, term.timestamp, def.window()),
        subject: term.event_id.clone(),
    }];
    let mut seen = vec![init.event_id.as_str()];
    for c in &constituents {
        if seen.contains(&c.event_id.as_str()) {
            continue;
        }
        seen.push(&c.event_id);
        checks.push(ConstraintCheck {
            kind: CheckKind::Spatial,
            actual: init.location.distance(&c.location),
            bound: def.radius(),
            satisfied: within_radius(&init.location, &c.location, def.radius()),
            subject: c.event_id.clone(),
        });
    }
    // Qualifying supporting events are those logged strictly between the
    // initiator and terminator, unsuppressed and inside the radius.
    let (lo, hi) = (positions[ii], positions[ti]);
    for spec in &def.supporting {
        let qualifying = log
            .get(lo + 1..hi)
            .unwrap_or_default()
            .iter()
            .filter(|l| {
                l.suppressed_by.is_none()
                    && spec.accepts(&l.event.class_label)
                    && within_radius(&init.location, &l.event.location, def.radius())
            })
            .count();
        checks.push(ConstraintCheck {
            kind: CheckKind::Count,
            actual: qualifying as f64,
            bound: f64::from(spec.min_count),
            satisfied: qualifying >= spec.min_count as usize,
            subject: spec.classes.iter().cloned().collect::<Vec<_>>().join("|"),
        });
    }

    let mut terms: Vec<ProbabilityTerm> = Vec::new();
    for c in &constituents {
        if !terms.iter().any(|t| t.event_id == c.event_id) {
            terms.push(ProbabilityTerm {
                event_id: c.event_id.clone(),
                confidence: c.confidence,
            });
        }
    }
    let product = terms.iter().map(|t| t.confidence).reduce(|a, b| a * b).unwrap_or(0.0);

    let max_distance = checks
        .iter()
        .filter(|c| c.kind == CheckKind::Spatial)
        .map(|c| c.actual)
        .fold(0.0, f64::max);
    let narrative = format!(
        "{} detected: initiated by {} (p={}) at t={}, terminated by {} (p={}) at t={}; Δt={}s ≤ {}s; max distance {}m ≤ {}m; combined probability {}.",
        def.name(),
        init.class_label,
        fmt_num(init.confidence),
        fmt_num(init.timestamp),
        term.class_label,
        fmt_num(term.confidence),
        fmt_num(term.timestamp),
        fmt_num(span),
        fmt_num(def.window()),
        fmt_num(max_distance),
        fmt_num(def.radius()),
        fmt_num(product),
    );

    Ok(Explanation {
        detection_id: detection.id.clone(),
        definition_name: def.name().to_string(),
        constituents,
        constraint_checks: checks,
        probability_terms: terms,
        product,
        narrative,
    })
}

/// Recomputes `explanation` from the log and definitions and reports every
/// field that disagrees, plus any broken explanation invariant.
pub fn verify(
    explanation: &Explanation,
    detection: &Detection,
    log: &[LoggedEvent],
    definitions: &[ResolvedDefinition],
) -> Result<(), Vec<String>> {
    let fresh = explain(detection, log, definitions).map_err(|e| vec![e.to_string()])?;
    let mut problems = Vec::new();
    if fresh.constituents != explanation.constituents {
        problems.push("constituents differ from the log".to_string());
    }
    if fresh.constraint_checks != explanation.constraint_checks {
        problems.push("constraint checks differ from recomputation".to_string());
    }
    if fresh.probability_terms != explanation.probability_terms || fresh.product != explanation.product {
        problems.push("probability terms differ from recomputation".to_string());
    }
    if fresh.narrative != explanation.narrative {
        problems.push("narrative differs from recomputation".to_string());
    }
    if let Some(c) = explanation.constraint_checks.iter().find(|c| !c.satisfied) {
        problems.push(format!("{:?} check on `{}` is not satisfied", c.kind, c.subject));
    }
    if (explanation.product - detection.probability).abs() > 1e-9 {
        problems.push(format!(
            "product {} does not match detection probability {}",
            explanation.product, detection.probability
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

/// The marking that suppressed `event_id` at ingestion, if any.
pub fn explain_suppression(event_id: &str, log: &[LoggedEvent]) -> Result<Option<SuppressionTrace>, ExplainError> {
    let entry = log
        .iter()
        .find(|l| l.event.id == event_id)
        .ok_or_else(|| ExplainError::UnknownEvent(event_id.to_string()))?;
    Ok(entry.suppressed_by.as_ref().map(|m| SuppressionTrace {
        event_id: event_id.to_string(),
        marking: m.clone(),
        decided_at: entry.event.timestamp,
    }))
}
