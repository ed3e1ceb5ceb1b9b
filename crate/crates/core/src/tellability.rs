//! Operator-to-machine knowledge: per-feed class frequencies, "regular"
//! background markings that suppress downstream matching, and the mapping
//! from classifier labels to palette concepts.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Context, SimpleEvent};
use crate::palette::{Palette, PaletteError};

/// Default retention for frequency recounts, seconds.
pub const DEFAULT_RETENTION_SECONDS: f64 = 3600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TellabilityError {
    #[error("out-of-order timestamp on feed `{feed}`: {got} < {previous}")]
    OutOfOrder { feed: String, previous: f64, got: f64 },
    #[error("unknown feed `{0}`")]
    UnknownFeed(String),
    #[error("no marking for ({feed}, {class}, {context})")]
    NoSuchMarking {
        feed: String,
        class: String,
        context: Context,
    },
    #[error("window must be positive and finite, got {0}")]
    InvalidWindow(f64),
    #[error("window {window}s exceeds the retained history of {retention}s")]
    WindowExceedsRetention { window: f64, retention: f64 },
    #[error(transparent)]
    Palette(#[from] PaletteError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegularMarking {
    pub feed_id: String,
    pub class_label: String,
    pub context: Context,
    pub marked_by: String,
    /// Scenario clock when the marking was made.
    pub marked_at: f64,
}

impl RegularMarking {
    pub fn new(
        feed: impl Into<String>,
        class: impl Into<String>,
        context: Context,
        by: impl Into<String>,
        at: f64,
    ) -> Self {
        Self {
            feed_id: feed.into(),
            class_label: class.into(),
            context,
            marked_by: by.into(),
            marked_at: at,
        }
    }

    pub fn matches(&self, event: &SimpleEvent) -> bool {
        self.feed_id == event.feed_id && self.class_label == event.class_label && self.context.covers(event.context)
    }

    fn key(&self) -> (String, String, Context) {
        (self.feed_id.clone(), self.class_label.clone(), self.context)
    }
}

/// One row of a frequency query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    #[serde(rename = "class")]
    pub class_label: String,
    pub count: u64,
    pub rate: f64,
}

/// Counts over `(now - window_seconds, now]` split by scene context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrequencyTable {
    pub feed_id: String,
    pub window_seconds: f64,
    pub now: f64,
    pub entries: BTreeMap<String, BTreeMap<Context, u64>>,
}

impl FrequencyTable {
    pub fn count(&self, class: &str, context: Context) -> u64 {
        self.entries.get(class).map_or(0, |by_ctx| {
            by_ctx.iter().filter(|(c, _)| context.covers(**c)).map(|(_, n)| n).sum()
        })
    }

    pub fn rate(&self, class: &str, context: Context) -> f64 {
        self.count(class, context) as f64 / self.window_seconds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Sighting {
    timestamp: f64,
    class_label: String,
    context: Context,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct FeedHistory {
    clock: f64,
    recent: VecDeque<Sighting>,
}

/// Partial map from classifier labels to palette concepts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptMapping(BTreeMap<String, String>);

impl ConceptMapping {
    pub fn new() -> Self {
        Self::default()
    }

    /// Maps `class` to `concept`, rejecting concepts absent from `palette`.
    pub fn set(
        &mut self,
        class: impl Into<String>,
        concept: impl Into<String>,
        palette: &Palette,
    ) -> Result<(), PaletteError> {
        let concept = concept.into();
        if !palette.contains(&concept) {
            return Err(PaletteError::UnknownConcept(concept));
        }
        self.0.insert(class.into(), concept);
        Ok(())
    }

    pub fn remove(&mut self, class: &str) -> Option<String> {
        self.0.remove(class)
    }

    pub fn map_class(&self, class: &str) -> Option<&str> {
        self.0.get(class).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Replaces the whole mapping after checking every target concept.
    pub fn replace(&mut self, entries: BTreeMap<String, String>, palette: &Palette) -> Result<(), PaletteError> {
        let missing: Vec<_> = entries.values().filter(|c| !palette.contains(c)).cloned().collect();
        if let Some(first) = missing.into_iter().next() {
            return Err(PaletteError::UnknownConcept(first));
        }
        self.0 = entries;
        Ok(())
    }

    /// Classes whose mapped concept lies at or below `concept`.
    pub fn classes_under(&self, concept: &str, palette: &Palette) -> Result<BTreeSet<String>, PaletteError> {
        if !palette.contains(concept) {
            return Err(PaletteError::UnknownConcept(concept.to_string()));
        }
        let mut out = BTreeSet::new();
        for (class, mapped) in &self.0 {
            if palette.contains(mapped) && palette.is_subconcept(mapped, concept)? {
                out.insert(class.clone());
            }
        }
        Ok(out)
    }

    /// Mapped concepts that `palette` no longer defines.
    pub fn dangling(&self, palette: &Palette) -> Vec<String> {
        self.0.values().filter(|c| !palette.contains(c)).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Tellability {
    retention_seconds: f64,
    feeds: BTreeMap<String, FeedHistory>,
    markings: Vec<RegularMarking>,
    version: u64,
    mapping: ConceptMapping,
}

impl Default for Tellability {
    fn default() -> Self {
        Self::new(DEFAULT_RETENTION_SECONDS)
    }
}

impl Tellability {
    pub fn new(retention_seconds: f64) -> Self {
        Self {
            retention_seconds,
            feeds: BTreeMap::new(),
            markings: Vec::new(),
            version: 0,
            mapping: ConceptMapping::new(),
        }
    }

    /// Bumped on every marking or mapping change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn retention_seconds(&self) -> f64 {
        self.retention_seconds
    }

    pub fn feed_clock(&self, feed: &str) -> Option<f64> {
        self.feeds.get(feed).map(|f| f.clock)
    }

    pub fn feeds(&self) -> impl Iterator<Item = &str> {
        self.feeds.keys().map(String::as_str)
    }

    /// Appends `event` to its feed history. Timestamps must not go
    /// backwards within a feed.
    pub fn record(&mut self, event: &SimpleEvent) -> Result<(), TellabilityError> {
        if let Some(feed) = self.feeds.get(&event.feed_id) {
            if event.timestamp < feed.clock {
                return Err(TellabilityError::OutOfOrder {
                    feed: event.feed_id.clone(),
                    previous: feed.clock,
                    got: event.timestamp,
                });
            }
        }
        let retention = self.retention_seconds;
        let feed = self.feeds.entry(event.feed_id.clone()).or_insert_with(|| FeedHistory {
            clock: event.timestamp,
            recent: VecDeque::new(),
        });
        feed.clock = event.timestamp;
        feed.recent.push_back(Sighting {
            timestamp: event.timestamp,
            class_label: event.class_label.clone(),
            context: event.context,
        });
        while feed
            .recent
            .front()
            .is_some_and(|s| s.timestamp <= feed.clock - retention)
        {
            feed.recent.pop_front();
        }
        Ok(())
    }

    fn check_window(&self, window: f64) -> Result<(), TellabilityError> {
        if !(window.is_finite() && window > 0.0) {
            return Err(TellabilityError::InvalidWindow(window));
        }
        if window > self.retention_seconds {
            return Err(TellabilityError::WindowExceedsRetention {
                window,
                retention: self.retention_seconds,
            });
        }
        Ok(())
    }

    pub fn frequency_table(&self, feed_id: &str, window: f64) -> Result<FrequencyTable, TellabilityError> {
        self.check_window(window)?;
        let feed = self
            .feeds
            .get(feed_id)
            .ok_or_else(|| TellabilityError::UnknownFeed(feed_id.to_string()))?;
        let mut entries: BTreeMap<String, BTreeMap<Context, u64>> = BTreeMap::new();
        for s in feed.recent.iter().rev() {
            if s.timestamp <= feed.clock - window {
                break;
            }
            *entries
                .entry(s.class_label.clone())
                .or_default()
                .entry(s.context)
                .or_default() += 1;
        }
        Ok(FrequencyTable {
            feed_id: feed_id.to_string(),
            window_seconds: window,
            now: feed.clock,
            entries,
        })
    }

    /// Classes seen in the window under `context`, most frequent first,
    /// ties broken by label.
    pub fn top_classes(
        &self,
        feed_id: &str,
        window: f64,
        context: Context,
    ) -> Result<Vec<ClassCount>, TellabilityError> {
        let table = self.frequency_table(feed_id, window)?;
        let mut rows: Vec<ClassCount> = table
            .entries
            .keys()
            .map(|class| ClassCount {
                class_label: class.clone(),
                count: table.count(class, context),
                rate: table.rate(class, context),
            })
            .filter(|r| r.count > 0)
            .collect();
        rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.class_label.cmp(&b.class_label)));
        Ok(rows)
    }

    pub fn markings(&self) -> &[RegularMarking] {
        &self.markings
    }

    /// Stores `marking`, replacing any marking with the same
    /// (feed, class, context). Returns the new version.
    pub fn mark_regular(&mut self, marking: RegularMarking) -> u64 {
        let key = marking.key();
        match self.markings.iter_mut().find(|m| m.key() == key) {
            Some(existing) => *existing = marking,
            None => self.markings.push(marking),
        }
        self.markings.sort_by_key(RegularMarking::key);
        self.version += 1;
        self.version
    }

    pub fn unmark_regular(
        &mut self,
        feed: &str,
        class: &str,
        context: Context,
    ) -> Result<RegularMarking, TellabilityError> {
        let pos = self
            .markings
            .iter()
            .position(|m| m.feed_id == feed && m.class_label == class && m.context == context)
            .ok_or_else(|| TellabilityError::NoSuchMarking {
                feed: feed.to_string(),
                class: class.to_string(),
                context,
            })?;
        self.version += 1;
        Ok(self.markings.remove(pos))
    }

    /// The marking that suppresses `event`, preferring an exact context
    /// match over `any`.
    pub fn suppressing_marking(&self, event: &SimpleEvent) -> Option<&RegularMarking> {
        // markings stay sorted by key and `Any` orders last
        self.markings.iter().find(|m| m.matches(event))
    }

    pub fn is_suppressed(&self, event: &SimpleEvent) -> bool {
        self.suppressing_marking(event).is_some()
    }

    pub fn mapping(&self) -> &ConceptMapping {
        &self.mapping
    }

    pub fn map_class(&self, class: &str) -> Option<&str> {
        self.mapping.map_class(class)
    }

    pub fn set_mapping(&mut self, class: &str, concept: &str, palette: &Palette) -> Result<u64, TellabilityError> {
        self.mapping.set(class, concept, palette)?;
        self.version += 1;
        Ok(self.version)
    }

    pub fn replace_mapping(
        &mut self,
        entries: BTreeMap<String, String>,
        palette: &Palette,
    ) -> Result<u64, TellabilityError> {
        self.mapping.replace(entries, palette)?;
        self.version += 1;
        Ok(self.version)
    }

    /// Drops frequency history while keeping markings and mapping.
    pub fn clear_history(&mut self) {
        self.feeds.clear();
    }
}
