//! Deterministic scenario simulator standing in for classifier services.
//!
//! # Random stream
//!
//! Each feed draws from its own ChaCha8 stream: the 32-byte key is the
//! scenario seed as 8 little-endian bytes followed by 24 zero bytes, the
//! 64-bit stream id is the feed's index in `feeds`, and the block counter
//! starts at 0. Words are consumed as 64-bit values (two consecutive output
//! words, low word first) and turned into uniforms on `[0, 1)` by
//! `(w >> 11) * 2^-53`.
//!
//! Background events for a feed are generated in time order; each one
//! draws, in this order:
//!
//! 1. the inter-arrival gap `-ln(1 - u) / backgroundRate`; generation stops
//!    once the running time reaches `durationSeconds`,
//! 2. the class: the first index whose cumulative weight exceeds
//!    `u * totalWeight`,
//! 3. the confidence `low + u * (high - low)` from the confidence band
//!    (default `[0.55, 0.95]`).
//!
//! Background ids are `{feedId}-{n:06}` with `n` counting from 0 per feed;
//! injected ids are `{feedId}-inj-{k:04}` with `k` the injection's index.
//! The merged output is sorted by `(timestamp, id)`.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::definition::{is_atom, ComplexEventDefinition};
use crate::event::{Context, Location, Modality, SimpleEvent};
use crate::palette::Palette;
use crate::tellability::RegularMarking;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Parse(#[from] crate::JsonError),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WeightedClass {
    pub class_label: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ContextSpan {
    pub from_second: f64,
    pub context: Context,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeedSpec {
    pub feed_id: String,
    pub partner: String,
    pub location: Location,
    pub modality: Modality,
    pub background_rate: f64,
    #[serde(default)]
    pub background_classes: Vec<WeightedClass>,
    pub context_schedule: Vec<ContextSpan>,
}

impl FeedSpec {
    pub fn context_at(&self, t: f64) -> Context {
        self.context_schedule
            .iter()
            .take_while(|s| s.from_second <= t)
            .last()
            .map_or(Context::Day, |s| s.context)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Offset {
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InjectedEvent {
    pub feed_id: String,
    pub class_label: String,
    pub at_second: f64,
    pub confidence: f64,
    #[serde(default)]
    pub offset: Offset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub low: f64,
    pub high: f64,
}

impl Default for ConfidenceBand {
    fn default() -> Self {
        Self { low: 0.55, high: 0.95 }
    }
}

/// A class-to-concept entry carried by a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_seconds: f64,
    pub feeds: Vec<FeedSpec>,
    #[serde(default)]
    pub injections: Vec<InjectedEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_band: Option<ConfidenceBand>,
    /// Definitions installed before a headless run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub definitions: Vec<ComplexEventDefinition>,
    /// Markings applied before a headless run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub markings: Vec<RegularMarking>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub mapping: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<Palette>,
}

impl Scenario {
    pub fn band(&self) -> ConfidenceBand {
        self.confidence_band.unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization is infallible")
    }

    /// Field-level problems; empty when the scenario is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.duration_seconds.is_finite() && self.duration_seconds > 0.0) {
            v.push("durationSeconds: must be positive".to_string());
        }
        let band = self.band();
        if !(0.0..=1.0).contains(&band.low) || !(0.0..=1.0).contains(&band.high) || band.low > band.high {
            v.push("confidenceBand: need 0 <= low <= high <= 1".to_string());
        }
        let mut ids = BTreeSet::new();
        for (i, f) in self.feeds.iter().enumerate() {
            let at = format!("feeds[{i}]");
            if !crate::palette::is_identifier(&f.feed_id) {
                v.push(format!("{at}.feedId: `{}` is not an identifier", f.feed_id));
            }
            if !ids.insert(f.feed_id.as_str()) {
                v.push(format!("{at}.feedId: duplicate feed id `{}`", f.feed_id));
            }
            if !(f.background_rate.is_finite() && f.background_rate >= 0.0) {
                v.push(format!("{at}.backgroundRate: must be non-negative"));
            }
            if f.background_rate > 0.0 && f.background_classes.is_empty() {
                v.push(format!("{at}.backgroundClasses: required when backgroundRate > 0"));
            }
            for (j, c) in f.background_classes.iter().enumerate() {
                if !is_atom(&c.class_label) {
                    v.push(format!(
                        "{at}.backgroundClasses[{j}].classLabel: `{}` is not a class label",
                        c.class_label
                    ));
                }
                if !(c.weight.is_finite() && c.weight > 0.0) {
                    v.push(format!("{at}.backgroundClasses[{j}].weight: must be positive"));
                }
            }
            match f.context_schedule.first() {
                Some(s) if s.from_second == 0.0 => {}
                _ => v.push(format!("{at}.contextSchedule: must start at second 0")),
            }
            for (j, s) in f.context_schedule.iter().enumerate() {
                if s.context == Context::Any {
                    v.push(format!(
                        "{at}.contextSchedule[{j}].context: feeds run in day or night, not any"
                    ));
                }
                if j > 0
                    && s.from_second.partial_cmp(&f.context_schedule[j - 1].from_second)
                        != Some(std::cmp::Ordering::Greater)
                {
                    v.push(format!("{at}.contextSchedule[{j}].fromSecond: must increase"));
                }
            }
        }
        for (i, inj) in self.injections.iter().enumerate() {
            let at = format!("injections[{i}]");
            if !ids.contains(inj.feed_id.as_str()) {
                v.push(format!("{at}.feedId: unknown feed `{}`", inj.feed_id));
            }
            if !is_atom(&inj.class_label) {
                v.push(format!("{at}.classLabel: `{}` is not a class label", inj.class_label));
            }
            if !(inj.at_second >= 0.0 && inj.at_second <= self.duration_seconds) {
                v.push(format!(
                    "{at}.atSecond: {} is outside [0, durationSeconds]",
                    inj.at_second
                ));
            }
            if !(0.0..=1.0).contains(&inj.confidence) {
                v.push(format!("{at}.confidence: must be within [0, 1]"));
            }
        }
        for (i, d) in self.definitions.iter().enumerate() {
            for viol in crate::definition::validate(d) {
                v.push(format!("definitions[{i}].{}: {}", viol.field, viol.rule));
            }
        }
        for viol in crate::definition::validate_all(&self.definitions) {
            v.push(format!("definitions.{}: {}", viol.field, viol.rule));
        }
        v
    }
}

/// Parses and validates a scenario file.
pub fn validate_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = crate::json::from_str(text)?;
    let problems = scenario.violations();
    if problems.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid(problems))
    }
}

/// Uniform stream for one feed, as documented at module level.
pub struct FeedRng(ChaCha8Rng);

impl FeedRng {
    pub fn new(seed: u64, feed_index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(feed_index);
        Self(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn background(scenario: &Scenario, index: usize, feed: &FeedSpec) -> Vec<SimpleEvent> {
    let mut out = Vec::new();
    if feed.background_rate <= 0.0 {
        return out;
    }
    let band = scenario.band();
    let total: f64 = feed.background_classes.iter().map(|c| c.weight).sum();
    let mut rng = FeedRng::new(scenario.seed, index as u64);
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.uniform()).ln() / feed.background_rate;
        if t >= scenario.duration_seconds {
            break;
        }
        let target = rng.uniform() * total;
        let mut cumulative = 0.0;
        let mut class = &feed.background_classes[feed.background_classes.len() - 1];
        for c in &feed.background_classes {
            cumulative += c.weight;
            if target < cumulative {
                class = c;
                break;
            }
        }
        let confidence = band.low + rng.uniform() * (band.high - band.low);
        out.push(SimpleEvent {
            id: format!("{}-{:06}", feed.feed_id, out.len()),
            feed_id: feed.feed_id.clone(),
            modality: feed.modality,
            class_label: class.class_label.clone(),
            confidence,
            timestamp: t,
            location: feed.location,
            partner: feed.partner.clone(),
            context: feed.context_at(t),
        });
    }
    out
}

/// Generates the scenario's event stream. `scenario` must be valid.
pub fn generate(scenario: &Scenario) -> Result<Vec<SimpleEvent>, ScenarioError> {
    let problems = scenario.violations();
    if !problems.is_empty() {
        return Err(ScenarioError::Invalid(problems));
    }
    let feeds: BTreeMap<&str, &FeedSpec> = scenario.feeds.iter().map(|f| (f.feed_id.as_str(), f)).collect();
    let mut events: Vec<SimpleEvent> = scenario
        .feeds
        .iter()
        .enumerate()
        .flat_map(|(i, f)| background(scenario, i, f))
        .collect();
    for (k, inj) in scenario.injections.iter().enumerate() {
        let feed = feeds[inj.feed_id.as_str()];
        events.push(SimpleEvent {
            id: format!("{}-inj-{k:04}", feed.feed_id),
            feed_id: feed.feed_id.clone(),
            modality: feed.modality,
            class_label: inj.class_label.clone(),
            confidence: inj.confidence,
            timestamp: inj.at_second,
            location: Location::new(feed.location.x + inj.offset.dx, feed.location.y + inj.offset.dy),
            partner: feed.partner.clone(),
            context: feed.context_at(inj.at_second),
        });
    }
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
    Ok(events)
}

/// Renders events as JSONL.
pub fn events_to_jsonl(events: &[SimpleEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serialization is infallible"));
        out.push('\n');
    }
    out
}
