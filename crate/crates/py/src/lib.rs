//! Python bindings. Structured values cross the boundary as JSON strings in
//! the same camelCase shapes the HTTP API uses; engine snapshots cross as
//! bytes.

use std::collections::BTreeMap;
use std::fmt::Display;

use hakf_core::cep::{detections_to_jsonl, Engine as CoreEngine, EngineState};
use hakf_core::definition::{self, ComplexEventDefinition, ConceptScope, FactSet, LogicFragment};
use hakf_core::event::{Context, SimpleEvent};
use hakf_core::explain;
use hakf_core::graph::KnowledgeGraph as CoreGraph;
use hakf_core::palette::{Concept, Palette as CorePalette};
use hakf_core::sim;
use hakf_core::tellability::{ConceptMapping, RegularMarking};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

create_exception!(hakf, HakfError, PyValueError);

fn err(e: impl Display) -> PyErr {
    HakfError::new_err(e.to_string())
}

fn to_json<T: serde::Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("core values are serializable")
}

fn context(name: &str) -> PyResult<Context> {
    match name {
        "day" => Ok(Context::Day),
        "night" => Ok(Context::Night),
        "any" => Ok(Context::Any),
        other => Err(err(format!("unknown context `{other}` (day, night or any)"))),
    }
}

#[pyclass(module = "hakf")]
struct Palette(CorePalette);

#[pymethods]
impl Palette {
    #[new]
    fn new(name: &str) -> Self {
        Self(CorePalette::new(name))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CorePalette::from_json(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name().to_string()
    }

    #[getter]
    fn version(&self) -> u64 {
        self.0.version()
    }

    fn concepts(&self) -> Vec<String> {
        self.0.concepts().map(|c| c.name.clone()).collect()
    }

    /// Returns a new palette version with the concept added.
    fn add_concept(&self, name: &str, parent: &str) -> PyResult<Self> {
        self.0.add_concept(Concept::new(name, parent)).map(Self).map_err(err)
    }

    fn is_subconcept(&self, child: &str, ancestor: &str) -> PyResult<bool> {
        self.0.is_subconcept(child, ancestor).map_err(err)
    }

    fn union(&self, other: &Palette) -> PyResult<Self> {
        self.0.union(&other.0).map(Self).map_err(err)
    }
}

#[pyclass(module = "hakf")]
struct KnowledgeGraph(CoreGraph);

#[pymethods]
impl KnowledgeGraph {
    #[new]
    fn new(project_id: &str, palette: &Palette) -> Self {
        Self(CoreGraph::new(project_id, &palette.0))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CoreGraph::from_json(text).map(Self).map_err(err)
    }

    /// Canonical JSON: byte-identical for equal graphs.
    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn validate(&self, palette: &Palette) -> PyResult<()> {
        self.0.validate(&palette.0).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn query_by_concept(&self, palette: &Palette, concept: &str) -> PyResult<Vec<String>> {
        let nodes = self.0.query_by_concept(&palette.0, concept).map_err(err)?;
        Ok(nodes.into_iter().map(|n| n.id.clone()).collect())
    }
}

fn scope_parts(palette: Option<&Palette>, mapping_json: Option<&str>) -> PyResult<(CorePalette, ConceptMapping)> {
    let palette = palette.map_or_else(|| CorePalette::new("default"), |p| p.0.clone());
    let mut mapping = ConceptMapping::new();
    if let Some(text) = mapping_json {
        let entries: BTreeMap<String, String> = hakf_core::json::from_str(text).map_err(err)?;
        mapping.replace(entries, &palette).map_err(err)?;
    }
    Ok((palette, mapping))
}

/// Compiles a definition (JSON) to its canonical rule text.
#[pyfunction]
#[pyo3(signature = (definition_json, palette = None, mapping_json = None))]
fn compile(definition_json: &str, palette: Option<PyRef<'_, Palette>>, mapping_json: Option<&str>) -> PyResult<String> {
    let def = ComplexEventDefinition::from_json(definition_json).map_err(err)?;
    let (palette, mapping) = scope_parts(palette.as_deref(), mapping_json)?;
    let scope = ConceptScope {
        mapping: &mapping,
        palette: &palette,
    };
    definition::compile(&def, Some(scope)).map(|f| f.text).map_err(err)
}

/// Parses rule text and renders it back canonically.
#[pyfunction]
fn parse_fragment(text: &str) -> PyResult<String> {
    definition::parse_fragment(text).map(|r| r.to_string()).map_err(err)
}

/// Exact probability that `query` is derivable from the rule text and the
/// facts `[{"probability", "label", "time", "location": {"x", "y"}}]`.
#[pyfunction]
fn evaluate_exact(fragment: &str, facts_json: &str, query: &str) -> PyResult<f64> {
    let rules = definition::parse_fragment(fragment).map_err(err)?;
    let fragment = LogicFragment::from_rules(&rules, query);
    let facts: FactSet = hakf_core::json::from_str(facts_json).map_err(err)?;
    definition::evaluate_exact(&fragment, &facts, query).map_err(err)
}

/// Parses and validates a scenario, returning it as canonical JSON.
#[pyfunction]
fn validate_scenario(text: &str) -> PyResult<String> {
    sim::validate_scenario(text).map(|s| s.to_json()).map_err(err)
}

/// Generates a scenario's event stream as JSONL.
#[pyfunction]
#[pyo3(signature = (scenario_json, seed = None))]
fn generate(scenario_json: &str, seed: Option<u64>) -> PyResult<String> {
    let mut scenario = sim::validate_scenario(scenario_json).map_err(err)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    sim::generate(&scenario).map(|e| sim::events_to_jsonl(&e)).map_err(err)
}

#[pyclass(module = "hakf")]
struct Engine(CoreEngine);

#[pymethods]
impl Engine {
    #[new]
    fn new() -> Self {
        Self(CoreEngine::new())
    }

    /// Installs or replaces a definition; returns its rule text.
    #[pyo3(signature = (definition_json, palette = None))]
    fn add_definition(&mut self, definition_json: &str, palette: Option<PyRef<'_, Palette>>) -> PyResult<String> {
        let def = ComplexEventDefinition::from_json(definition_json).map_err(err)?;
        let palette = palette.map_or_else(|| CorePalette::new("default"), |p| p.0.clone());
        let mapping = self.0.tellability().mapping().clone();
        let scope = ConceptScope {
            mapping: &mapping,
            palette: &palette,
        };
        self.0.add_definition(&def, Some(scope)).map(|f| f.text).map_err(err)
    }

    fn remove_definition(&mut self, name: &str) -> PyResult<()> {
        self.0.remove_definition(name).map(drop).map_err(err)
    }

    fn definition_names(&self) -> Vec<String> {
        self.0.definitions().map(|d| d.name().to_string()).collect()
    }

    fn set_mapping(&mut self, class_label: &str, concept: &str, palette: &Palette) -> PyResult<u64> {
        self.0
            .tellability_mut()
            .set_mapping(class_label, concept, &palette.0)
            .map_err(err)
    }

    /// Marks a class regular on a feed; returns the tellability version.
    #[pyo3(signature = (feed_id, class_label, context = "any", marked_by = "operator", marked_at = None))]
    fn mark_regular(
        &mut self,
        feed_id: &str,
        class_label: &str,
        context: &str,
        marked_by: &str,
        marked_at: Option<f64>,
    ) -> PyResult<u64> {
        let at = marked_at.or(self.0.clock()).unwrap_or(0.0);
        let marking = RegularMarking::new(feed_id, class_label, self::context(context)?, marked_by, at);
        Ok(self.0.tellability_mut().mark_regular(marking))
    }

    #[pyo3(signature = (feed_id, class_label, context = "any"))]
    fn unmark_regular(&mut self, feed_id: &str, class_label: &str, context: &str) -> PyResult<u64> {
        let ctx = self::context(context)?;
        self.0
            .tellability_mut()
            .unmark_regular(feed_id, class_label, ctx)
            .map_err(err)?;
        Ok(self.0.tellability().version())
    }

    /// Ingests one event (JSON); returns the detections it completes.
    fn ingest(&mut self, event_json: &str) -> PyResult<Vec<String>> {
        let event: SimpleEvent = hakf_core::json::from_str(event_json).map_err(err)?;
        let detections = self.0.ingest(event).map_err(err)?;
        Ok(detections.iter().map(|d| d.to_json_line()).collect())
    }

    /// Ingests every line of a JSONL stream; returns the new detections as
    /// JSONL.
    fn ingest_jsonl(&mut self, jsonl: &str) -> PyResult<String> {
        let mut out = Vec::new();
        for line in jsonl.lines().filter(|l| !l.trim().is_empty()) {
            let event: SimpleEvent = hakf_core::json::from_str(line).map_err(err)?;
            out.extend(self.0.ingest(event).map_err(err)?);
        }
        Ok(detections_to_jsonl(&out))
    }

    fn detections_jsonl(&self) -> String {
        detections_to_jsonl(self.0.detections())
    }

    fn log_json(&self) -> String {
        to_json(self.0.log())
    }

    fn open_instance_count(&self) -> usize {
        self.0.open_instance_count()
    }

    /// Top classes on a feed over the last `window` seconds, as JSON.
    #[pyo3(signature = (feed_id, window = 60.0, context = "any"))]
    fn frequencies(&self, feed_id: &str, window: f64, context: &str) -> PyResult<String> {
        let rows = self
            .0
            .tellability()
            .top_classes(feed_id, window, self::context(context)?)
            .map_err(err)?;
        Ok(to_json(&rows))
    }

    fn explain(&self, detection_id: &str) -> PyResult<String> {
        let det = self
            .0
            .detections()
            .iter()
            .find(|d| d.id == detection_id)
            .ok_or_else(|| err(format!("unknown detection `{detection_id}`")))?;
        let defs: Vec<_> = self.0.definitions().cloned().collect();
        explain::explain(det, self.0.log(), &defs)
            .map(|e| to_json(&e))
            .map_err(err)
    }

    /// The marking that suppressed an event, as JSON, or None.
    fn explain_suppression(&self, event_id: &str) -> PyResult<Option<String>> {
        let trace = explain::explain_suppression(event_id, self.0.log()).map_err(err)?;
        Ok(trace.map(|t| to_json(&t)))
    }

    fn match_brute(&self) -> PyResult<String> {
        self.0.match_brute().map(|d| detections_to_jsonl(&d)).map_err(err)
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.snapshot().to_bytes())
    }

    #[staticmethod]
    fn restore(snapshot: &[u8]) -> PyResult<Self> {
        let state = EngineState::from_bytes(snapshot).map_err(err)?;
        CoreEngine::restore(state).map(Self).map_err(err)
    }
}

#[pymodule]
fn hakf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HakfError", m.py().get_type::<HakfError>())?;
    m.add_class::<Palette>()?;
    m.add_class::<KnowledgeGraph>()?;
    m.add_class::<Engine>()?;
    m.add_function(wrap_pyfunction!(compile, m)?)?;
    m.add_function(wrap_pyfunction!(parse_fragment, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_exact, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
