//! Simple events: single classifier outputs from one feed.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Audio,
    Seismic,
    Text,
}

/// Scene condition. Raw events carry `Day` or `Night`; `Any` only appears
/// in markings and queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    Day,
    Night,
    Any,
}

impl Context {
    /// Whether a marking or query with this context covers `event_context`.
    pub fn covers(self, event_context: Context) -> bool {
        self == Context::Any || self == event_context
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Context::Day => "day",
            Context::Night => "night",
            Context::Any => "any",
        })
    }
}

impl std::str::FromStr for Context {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" => Ok(Context::Day),
            "night" => Ok(Context::Night),
            "any" => Ok(Context::Any),
            other => Err(format!("unknown context `{other}`")),
        }
    }
}

/// Point in the flat local frame, metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimpleEvent {
    pub id: String,
    pub feed_id: String,
    pub modality: Modality,
    pub class_label: String,
    pub confidence: f64,
    pub timestamp: f64,
    pub location: Location,
    pub partner: String,
    pub context: Context,
}

impl SimpleEvent {
    /// Invariant violations, empty when the event is well formed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.is_empty() {
            out.push("id: must be nonempty".to_string());
        }
        if self.feed_id.is_empty() {
            out.push("feedId: must be nonempty".to_string());
        }
        if !crate::definition::is_atom(&self.class_label) {
            out.push(format!(
                "classLabel: `{}` is not a lowercase identifier",
                self.class_label
            ));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            out.push(format!("confidence: {} outside [0,1]", self.confidence));
        }
        if !self.timestamp.is_finite() {
            out.push("timestamp: must be finite".to_string());
        }
        if !(self.location.x.is_finite() && self.location.y.is_finite()) {
            out.push("location: must be finite".to_string());
        }
        if self.context == Context::Any {
            out.push("context: raw events cannot have context `any`".to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn any_covers_everything() {
        assert!(Context::Any.covers(Context::Night));
        assert!(Context::Day.covers(Context::Day));
        assert!(!Context::Day.covers(Context::Night));
    }

    #[test]
    fn distance_is_euclidean() {
        assert_eq!(Location::new(0.0, 0.0).distance(&Location::new(3.0, 4.0)), 5.0);
    }

    #[test]
    fn event_invariants() {
        let mut e = SimpleEvent {
            id: "e1".into(),
            feed_id: "f".into(),
            modality: Modality::Audio,
            class_label: "siren".into(),
            confidence: 0.5,
            timestamp: 1.0,
            location: Location::default(),
            partner: "UK".into(),
            context: Context::Day,
        };
        assert!(e.violations().is_empty());
        e.context = Context::Any;
        e.confidence = 1.5;
        assert_eq!(e.violations().len(), 2);
    }
}
