//! One project's in-memory state and the mutations the gateway applies to
//! it. Every mutation works on copies, persists them, and only then swaps
//! them in, returning the stream occurrences it produced.

use std::collections::BTreeMap;

use hakf_core::cep::{Detection, Engine, EngineError, LoggedEvent};
use hakf_core::definition::{ComplexEventDefinition, ConceptScope, DefinitionError, LogicFragment};
use hakf_core::event::Context;
use hakf_core::graph::{GraphError, KnowledgeGraph};
use hakf_core::palette::{Concept, Palette, PaletteError, RelationType};
use hakf_core::sim::{self, Scenario, ScenarioError};
use hakf_core::tellability::{RegularMarking, TellabilityError};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::store::{ProjectFiles, Store, StoreError};

/// Window used for the live frequency payloads on the stream.
pub const STREAM_FREQUENCY_WINDOW: f64 = 60.0;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Palette(#[from] PaletteError),
    #[error(transparent)]
    Definition(#[from] DefinitionError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Tellability(#[from] TellabilityError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// The palette every new project starts with.
pub fn default_palette() -> Palette {
    let build = || -> Result<Palette, PaletteError> {
        Palette::new("hakf")
            .add_concept(Concept::new("Feed", "thing"))?
            .add_concept(Concept::new("SimpleEvent", "thing"))?
            .add_concept(Concept::new("ComplexEvent", "thing"))?
            .add_relation(RelationType::new("observedBy", "SimpleEvent", "Feed"))?
            .add_relation(RelationType::new("constituentOf", "SimpleEvent", "ComplexEvent"))
    };
    build().expect("default palette is well formed")
}

/// Something engine-visible that happened, in the order it happened.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Occurrence {
    pub kind: &'static str,
    pub payload: Value,
}

impl Occurrence {
    fn new(kind: &'static str, payload: Value) -> Self {
        Self { kind, payload }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub events: usize,
    pub suppressed: usize,
    pub detections: usize,
    pub per_definition: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefinitionView {
    pub definition: ComplexEventDefinition,
    pub fragment: String,
}

fn definition_changed(replaced: bool, def: &ComplexEventDefinition, fragment: &LogicFragment) -> Occurrence {
    Occurrence::new(
        "definition_changed",
        json!({
            "action": if replaced { "replaced" } else { "added" },
            "definition": def,
            "fragment": fragment.text,
        }),
    )
}

fn marking_changed(action: &str, marking: &RegularMarking, version: u64) -> Occurrence {
    Occurrence::new(
        "marking_changed",
        json!({ "action": action, "marking": marking, "version": version }),
    )
}

/// Installs a scenario's palette, mapping, markings and definitions into
/// `engine`. Returns the extended palette and the resulting occurrences.
pub fn prepare_scenario(
    engine: &mut Engine,
    palette: &Palette,
    scenario: &Scenario,
) -> Result<(Palette, Vec<Occurrence>), ProjectError> {
    let palette = match &scenario.palette {
        Some(extra) => palette.union(extra)?,
        None => palette.clone(),
    };
    let mut occurrences = Vec::new();
    for (class, concept) in &scenario.mapping {
        engine.tellability_mut().set_mapping(class, concept, &palette)?;
    }
    for marking in &scenario.markings {
        let version = engine.tellability_mut().mark_regular(marking.clone());
        occurrences.push(marking_changed("marked", marking, version));
    }
    let mapping = engine.tellability().mapping().clone();
    for def in &scenario.definitions {
        let replaced = engine.definition(&def.name).is_some();
        let scope = ConceptScope {
            mapping: &mapping,
            palette: &palette,
        };
        let fragment = engine.add_definition(def, Some(scope))?;
        occurrences.push(definition_changed(replaced, def, &fragment));
    }
    Ok((palette, occurrences))
}

/// Generates the scenario stream, `seed` overriding the file's seed.
pub fn scenario_events(
    scenario: &Scenario,
    seed: Option<u64>,
) -> Result<(Scenario, Vec<hakf_core::event::SimpleEvent>), ProjectError> {
    let mut scenario = scenario.clone();
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let events = sim::generate(&scenario)?;
    Ok((scenario, events))
}

fn summarize(scenario: &Scenario, engine: &Engine, events: &[LoggedEvent], detections: &[Detection]) -> RunSummary {
    let mut per_definition: BTreeMap<String, usize> = engine.definitions().map(|d| (d.name().to_string(), 0)).collect();
    for d in detections {
        *per_definition.entry(d.definition_name.clone()).or_default() += 1;
    }
    RunSummary {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        events: events.len(),
        suppressed: events.iter().filter(|e| e.suppressed_by.is_some()).count(),
        detections: detections.len(),
        per_definition,
    }
}

/// Runs a prepared scenario through `engine`, returning the summary and
/// every occurrence in order.
pub fn drive(
    engine: &mut Engine,
    scenario: &Scenario,
    seed: Option<u64>,
) -> Result<(RunSummary, Vec<Occurrence>), ProjectError> {
    let (scenario, events) = scenario_events(scenario, seed)?;
    let first_event = engine.log().len();
    let first_detection = engine.detections().len();
    let mut occurrences = Vec::new();
    for event in events {
        let feed = event.feed_id.clone();
        let detections = engine.ingest(event)?;
        let logged = engine.log().last().expect("ingest logs the event");
        occurrences.push(Occurrence::new("simple_event", json!(logged)));
        let entries = engine
            .tellability()
            .top_classes(&feed, STREAM_FREQUENCY_WINDOW, Context::Any)?;
        occurrences.push(Occurrence::new(
            "frequency_update",
            json!({
                "feedId": feed,
                "windowSeconds": STREAM_FREQUENCY_WINDOW,
                "now": logged.event.timestamp,
                "entries": entries,
            }),
        ));
        for d in detections {
            occurrences.push(Occurrence::new("detection", json!(d)));
        }
    }
    let summary = summarize(
        &scenario,
        engine,
        &engine.log()[first_event..],
        &engine.detections()[first_detection..],
    );
    Ok((summary, occurrences))
}

#[derive(Debug, Clone)]
pub struct Project {
    id: String,
    files: ProjectFiles,
    graph: KnowledgeGraph,
    palette: Palette,
    engine: Engine,
}

impl Project {
    /// Loads (recovering if needed) or initializes the project `id`.
    pub fn open(store: &Store, id: &str) -> Result<Self, StoreError> {
        let files = store.project(id);
        let loaded = files.recover()?;
        let palette = loaded.palette.unwrap_or_else(default_palette);
        let graph = loaded.graph.unwrap_or_else(|| KnowledgeGraph::new(id, &palette));
        Ok(Self {
            id: id.to_string(),
            files,
            graph,
            palette,
            engine: loaded.engine,
        })
    }

    /// Reloads from disk after a failed write.
    pub fn reload(&mut self) -> Result<(), StoreError> {
        let loaded = self.files.recover()?;
        self.palette = loaded.palette.unwrap_or_else(default_palette);
        self.graph = loaded
            .graph
            .unwrap_or_else(|| KnowledgeGraph::new(self.id.as_str(), &self.palette));
        self.engine = loaded.engine;
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn files(&self) -> &ProjectFiles {
        &self.files
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn definition_views(&self) -> Vec<DefinitionView> {
        self.engine
            .definitions()
            .map(|d| DefinitionView {
                definition: d.definition.clone(),
                fragment: hakf_core::definition::compile_resolved(d).text,
            })
            .collect()
    }

    fn commit_config(&self, engine: &Engine) -> Result<(), StoreError> {
        self.files
            .save_engine_config(engine, engine.log().len(), engine.detections().len())
    }

    /// Replaces the graph after checking it against the palette; the stored
    /// graph always refers to the current palette version.
    pub fn put_graph(&mut self, graph: KnowledgeGraph) -> Result<Vec<Occurrence>, ProjectError> {
        graph.validate(&self.palette)?;
        let graph = graph.with_palette_ref(&self.palette);
        self.files.save_graph(&graph)?;
        self.graph = graph;
        Ok(Vec::new())
    }

    pub fn add_concept(&mut self, concept: Concept) -> Result<Vec<Occurrence>, ProjectError> {
        let palette = self.palette.add_concept(concept)?;
        self.set_palette(palette)?;
        Ok(Vec::new())
    }

    fn set_palette(&mut self, palette: Palette) -> Result<(), StoreError> {
        if palette == self.palette {
            return Ok(());
        }
        let graph = self.graph.clone().with_palette_ref(&palette);
        self.files.save_palette(&palette)?;
        self.files.save_graph(&graph)?;
        self.palette = palette;
        self.graph = graph;
        Ok(())
    }

    pub fn add_definition(
        &mut self,
        def: &ComplexEventDefinition,
    ) -> Result<(LogicFragment, Vec<Occurrence>), ProjectError> {
        let mut engine = self.engine.clone();
        let replaced = engine.definition(&def.name).is_some();
        let scope = ConceptScope {
            mapping: self.engine.tellability().mapping(),
            palette: &self.palette,
        };
        let fragment = engine.add_definition(def, Some(scope))?;
        self.commit_config(&engine)?;
        self.engine = engine;
        let occurrence = definition_changed(replaced, def, &fragment);
        Ok((fragment, vec![occurrence]))
    }

    /// Marks a class regular; returns the new tellability version.
    pub fn mark_regular(&mut self, marking: RegularMarking) -> Result<(u64, Vec<Occurrence>), ProjectError> {
        let mut engine = self.engine.clone();
        let version = engine.tellability_mut().mark_regular(marking.clone());
        self.commit_config(&engine)?;
        self.engine = engine;
        Ok((version, vec![marking_changed("marked", &marking, version)]))
    }

    pub fn unmark_regular(
        &mut self,
        feed: &str,
        class: &str,
        context: Context,
    ) -> Result<(u64, Vec<Occurrence>), ProjectError> {
        let mut engine = self.engine.clone();
        let marking = engine.tellability_mut().unmark_regular(feed, class, context)?;
        let version = engine.tellability().version();
        self.commit_config(&engine)?;
        self.engine = engine;
        Ok((version, vec![marking_changed("unmarked", &marking, version)]))
    }

    pub fn replace_mapping(&mut self, entries: BTreeMap<String, String>) -> Result<u64, ProjectError> {
        let mut engine = self.engine.clone();
        let version = engine.tellability_mut().replace_mapping(entries, &self.palette)?;
        self.commit_config(&engine)?;
        self.engine = engine;
        Ok(version)
    }

    /// Installs the scenario's configuration and drives its stream through
    /// the engine. Nothing changes if any step fails.
    pub fn run_scenario(
        &mut self,
        scenario: &Scenario,
        seed: Option<u64>,
    ) -> Result<(RunSummary, Vec<Occurrence>), ProjectError> {
        let violations = scenario.violations();
        if !violations.is_empty() {
            return Err(ScenarioError::Invalid(violations).into());
        }
        let mut engine = self.engine.clone();
        let (palette, mut occurrences) = prepare_scenario(&mut engine, &self.palette, scenario)?;
        let first_event = engine.log().len();
        let first_detection = engine.detections().len();
        let (summary, stream) = drive(&mut engine, scenario, seed)?;
        occurrences.extend(stream);

        self.set_palette(palette)?;
        self.files.save_run(
            &engine,
            &engine.log()[first_event..],
            &engine.detections()[first_detection..],
        )?;
        self.engine = engine;
        Ok((summary, occurrences))
    }
}
