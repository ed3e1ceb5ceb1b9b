//! Streaming complex-event matcher.
//!
//! Events are consumed in `(timestamp, id)` order. Each event that matches
//! a definition's initiator opens an instance; later events join open
//! instances as supporting constituents, and the earliest qualifying
//! terminator (all supporting minimums met, inside the window and radius)
//! closes the instance and emits a [`Detection`]. Suppressed events are
//! logged and otherwise ignored.

mod brute;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::definition::{
    compile_resolved, resolve, ComplexEventDefinition, ConceptScope, DefinitionError, LogicFragment,
    ResolvedDefinition, Role,
};
use crate::event::{Location, SimpleEvent};
use crate::tellability::{RegularMarking, Tellability, TellabilityError};

pub use brute::{match_brute, BruteError, MAX_BRUTE_LOG};

/// Bumped whenever the snapshot layout changes.
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("out-of-order event `{got_id}` at t={got_t}: engine is at `{last_id}` t={last_t}")]
    OutOfOrder {
        last_t: f64,
        last_id: String,
        got_t: f64,
        got_id: String,
    },
    #[error("invalid event: {}", .0.join("; "))]
    InvalidEvent(Vec<String>),
    #[error("unknown definition `{0}`")]
    UnknownDefinition(String),
    #[error("snapshot version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: String },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Definition(#[from] DefinitionError),
    #[error(transparent)]
    Tellability(#[from] TellabilityError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoleRef {
    pub role: Role,
    pub event_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Detection {
    pub id: String,
    pub definition_name: String,
    pub interval_start: f64,
    pub interval_end: f64,
    pub location: Location,
    pub probability: f64,
    pub constituent_event_ids: Vec<RoleRef>,
    pub emitted_at: f64,
}

impl Detection {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("detection serialization is infallible")
    }
}

/// Renders detections as JSONL, one object per line.
pub fn detections_to_jsonl(detections: &[Detection]) -> String {
    let mut out = String::new();
    for d in detections {
        out.push_str(&d.to_json_line());
        out.push('\n');
    }
    out
}

/// An event as recorded at ingestion, with the marking that suppressed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LoggedEvent {
    pub event: SimpleEvent,
    pub suppressed_by: Option<RegularMarking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OpenInstance {
    pub definition_name: String,
    pub initiator: SimpleEvent,
    /// Collected events, one list per supporting spec.
    pub collected: Vec<Vec<SimpleEvent>>,
    pub opened_at: f64,
    pub deadline: f64,
}

pub(crate) fn within_window(start: f64, t: f64, window: f64) -> bool {
    t - start <= window
}

pub(crate) fn within_radius(anchor: &Location, at: &Location, radius: f64) -> bool {
    anchor.distance(at) <= radius
}

/// The `n` best events by confidence, ties by id.
pub(crate) fn best_n(events: &[SimpleEvent], n: usize) -> Vec<&SimpleEvent> {
    let mut ranked: Vec<&SimpleEvent> = events.iter().collect();
    ranked.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.id.cmp(&b.id)));
    ranked.truncate(n);
    ranked
}

/// Builds the detection for an instance closed by `terminator`, choosing
/// the highest-confidence events for each supporting slot.
pub(crate) fn build_detection(
    def: &ResolvedDefinition,
    initiator: &SimpleEvent,
    terminator: &SimpleEvent,
    collected: &[Vec<SimpleEvent>],
) -> Detection {
    let mut refs = vec![
        RoleRef {
            role: Role::Initiator,
            event_id: initiator.id.clone(),
        },
        RoleRef {
            role: Role::Terminator,
            event_id: terminator.id.clone(),
        },
    ];
    let mut probability = initiator.confidence;
    if terminator.id != initiator.id {
        probability *= terminator.confidence;
    }
    for (spec, events) in def.supporting.iter().zip(collected) {
        for e in best_n(events, spec.min_count as usize) {
            probability *= e.confidence;
            refs.push(RoleRef {
                role: Role::Supporting,
                event_id: e.id.clone(),
            });
        }
    }
    Detection {
        id: format!("{}:{}", def.name(), initiator.id),
        definition_name: def.name().to_string(),
        interval_start: initiator.timestamp,
        interval_end: terminator.timestamp,
        location: initiator.location,
        probability,
        constituent_event_ids: refs,
        emitted_at: terminator.timestamp,
    }
}

fn min_counts_met(def: &ResolvedDefinition, collected: &[Vec<SimpleEvent>]) -> bool {
    def.supporting
        .iter()
        .zip(collected)
        .all(|(spec, events)| events.len() >= spec.min_count as usize)
}

/// Serializable engine state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineState {
    pub format_version: u32,
    pub definitions: Vec<ResolvedDefinition>,
    pub open: Vec<OpenInstance>,
    pub tellability: Tellability,
    pub log: Vec<LoggedEvent>,
    pub detections: Vec<Detection>,
    pub clock: Option<(f64, String)>,
}

impl EngineState {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("engine state serialization is infallible")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EngineError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| EngineError::Corrupt(e.to_string()))?;
        match value.get("formatVersion").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(SNAPSHOT_VERSION) => {}
            other => {
                return Err(EngineError::VersionMismatch {
                    expected: SNAPSHOT_VERSION,
                    found: other.map_or_else(|| "none".to_string(), |v| v.to_string()),
                })
            }
        }
        serde_json::from_value(value).map_err(|e| EngineError::Corrupt(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Engine {
    definitions: BTreeMap<String, ResolvedDefinition>,
    open: BTreeMap<String, Vec<OpenInstance>>,
    tellability: Tellability,
    log: Vec<LoggedEvent>,
    detections: Vec<Detection>,
    clock: Option<(f64, String)>,
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tellability(tellability: Tellability) -> Self {
        Self {
            tellability,
            ..Self::default()
        }
    }

    /// Validates, resolves and installs `def`, replacing any definition of
    /// the same name (its open instances are dropped).
    pub fn add_definition(
        &mut self,
        def: &ComplexEventDefinition,
        scope: Option<ConceptScope<'_>>,
    ) -> Result<LogicFragment, EngineError> {
        let clash = self
            .definitions
            .keys()
            .find(|k| k.to_ascii_lowercase() == def.atom_name() && **k != def.name)
            .cloned();
        if let Some(other) = clash {
            return Err(DefinitionError::Invalid(vec![crate::definition::Violation {
                field: "name".into(),
                rule: format!("`{}` collides with existing definition `{other}`", def.name),
            }])
            .into());
        }
        let resolved = resolve(def, scope)?;
        let fragment = compile_resolved(&resolved);
        self.open.remove(&def.name);
        self.definitions.insert(def.name.clone(), resolved);
        Ok(fragment)
    }

    pub fn remove_definition(&mut self, name: &str) -> Result<ResolvedDefinition, EngineError> {
        self.open.remove(name);
        self.definitions
            .remove(name)
            .ok_or_else(|| EngineError::UnknownDefinition(name.to_string()))
    }

    pub fn definition(&self, name: &str) -> Option<&ResolvedDefinition> {
        self.definitions.get(name)
    }

    pub fn definitions(&self) -> impl Iterator<Item = &ResolvedDefinition> {
        self.definitions.values()
    }

    pub fn tellability(&self) -> &Tellability {
        &self.tellability
    }

    pub fn tellability_mut(&mut self) -> &mut Tellability {
        &mut self.tellability
    }

    pub fn log(&self) -> &[LoggedEvent] {
        &self.log
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn clock(&self) -> Option<f64> {
        self.clock.as_ref().map(|(t, _)| *t)
    }

    pub fn open_instances(&self) -> impl Iterator<Item = &OpenInstance> {
        self.open.values().flatten()
    }

    pub fn open_instance_count(&self) -> usize {
        self.open.values().map(Vec::len).sum()
    }

    /// Processes one event and returns the detections it completes, ordered
    /// by definition name and then by instance age.
    pub fn ingest(&mut self, event: SimpleEvent) -> Result<Vec<Detection>, EngineError> {
        let problems = event.violations();
        if !problems.is_empty() {
            return Err(EngineError::InvalidEvent(problems));
        }
        if let Some((last_t, last_id)) = &self.clock {
            let ordered = event.timestamp > *last_t || (event.timestamp == *last_t && event.id > *last_id);
            if !ordered {
                return Err(EngineError::OutOfOrder {
                    last_t: *last_t,
                    last_id: last_id.clone(),
                    got_t: event.timestamp,
                    got_id: event.id.clone(),
                });
            }
        }
        self.tellability.record(&event)?;
        self.clock = Some((event.timestamp, event.id.clone()));
        let suppressed_by = self.tellability.suppressing_marking(&event).cloned();
        let suppressed = suppressed_by.is_some();
        self.log.push(LoggedEvent {
            event: event.clone(),
            suppressed_by,
        });
        if suppressed {
            return Ok(Vec::new());
        }

        let now = event.timestamp;
        let mut emitted = Vec::new();
        for (name, def) in &self.definitions {
            if !def.definition.enabled {
                continue;
            }
            let open = self.open.entry(name.clone()).or_default();
            open.retain(|inst| within_window(inst.opened_at, now, def.window()));

            let mut i = 0;
            while i < open.len() {
                let inst = &mut open[i];
                let near = within_radius(&inst.initiator.location, &event.location, def.radius());
                if near && def.terminator.accepts(&event.class_label) && min_counts_met(def, &inst.collected) {
                    let inst = open.remove(i);
                    emitted.push(build_detection(def, &inst.initiator, &event, &inst.collected));
                    continue;
                }
                if near {
                    if let Some(j) = def.supporting.iter().position(|s| s.accepts(&event.class_label)) {
                        inst.collected[j].push(event.clone());
                    }
                }
                i += 1;
            }

            if def.initiator.accepts(&event.class_label) {
                let collected = vec![Vec::new(); def.supporting.len()];
                if def.supporting.is_empty() && def.terminator.accepts(&event.class_label) {
                    emitted.push(build_detection(def, &event, &event, &collected));
                } else {
                    open.push(OpenInstance {
                        definition_name: name.clone(),
                        initiator: event.clone(),
                        collected,
                        opened_at: now,
                        deadline: now + def.window(),
                    });
                }
            }
        }
        self.open.retain(|_, v| !v.is_empty());
        self.detections.extend(emitted.iter().cloned());
        Ok(emitted)
    }

    pub fn snapshot(&self) -> EngineState {
        EngineState {
            format_version: SNAPSHOT_VERSION,
            definitions: self.definitions.values().cloned().collect(),
            open: self.open_instances().cloned().collect(),
            tellability: self.tellability.clone(),
            log: self.log.clone(),
            detections: self.detections.clone(),
            clock: self.clock.clone(),
        }
    }

    pub fn restore(state: EngineState) -> Result<Self, EngineError> {
        if state.format_version != SNAPSHOT_VERSION {
            return Err(EngineError::VersionMismatch {
                expected: SNAPSHOT_VERSION,
                found: state.format_version.to_string(),
            });
        }
        let definitions: BTreeMap<_, _> = state
            .definitions
            .into_iter()
            .map(|d| (d.name().to_string(), d))
            .collect();
        let mut open: BTreeMap<String, Vec<OpenInstance>> = BTreeMap::new();
        for inst in state.open {
            let def = definitions
                .get(&inst.definition_name)
                .ok_or_else(|| EngineError::UnknownDefinition(inst.definition_name.clone()))?;
            if inst.collected.len() != def.supporting.len() {
                return Err(EngineError::Corrupt(format!(
                    "instance of `{}` has {} supporting lists, definition has {}",
                    inst.definition_name,
                    inst.collected.len(),
                    def.supporting.len()
                )));
            }
            open.entry(inst.definition_name.clone()).or_default().push(inst);
        }
        Ok(Self {
            definitions,
            open,
            tellability: state.tellability,
            log: state.log,
            detections: state.detections,
            clock: state.clock,
        })
    }

    /// Detections the current definitions would produce over the whole log,
    /// recomputed by exhaustive search.
    pub fn match_brute(&self) -> Result<Vec<Detection>, BruteError> {
        let defs: Vec<ResolvedDefinition> = self.definitions.values().cloned().collect();
        match_brute(&defs, &self.log)
    }
}
