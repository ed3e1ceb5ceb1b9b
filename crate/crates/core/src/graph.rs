//! Typed property graph governed by a [`Palette`], with canonical JSON
//! serialization and provenance-preserving coalition merge.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::json::JsonError;
use crate::palette::{Palette, PaletteError, ROOT_CONCEPT};

/// Property keys with this prefix are accepted on any typed node.
pub const EXTENSION_PREFIX: &str = "x-";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("schema violation on `{element}`: {detail}")]
    SchemaViolation { element: String, detail: String },
    #[error("edge `{edge}` has dangling endpoint `{endpoint}`")]
    DanglingEndpoint { edge: String, endpoint: String },
    #[error(transparent)]
    Palette(#[from] PaletteError),
    #[error(transparent)]
    Json(#[from] JsonError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Provenance {
    pub agent: String,
    pub partner: String,
    pub created_at: DateTime<Utc>,
}

impl Provenance {
    pub fn new(agent: impl Into<String>, partner: impl Into<String>, created_at: DateTime<Utc>) -> Self {
        Self {
            agent: agent.into(),
            partner: partner.into(),
            created_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub concept: Option<String>,
    pub label: String,
    #[serde(default)]
    pub properties: BTreeMap<String, Value>,
    pub position: Position,
    pub provenance: Provenance,
}

impl Node {
    pub fn new(id: impl Into<String>, concept: Option<&str>, label: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            id: id.into(),
            concept: concept.map(str::to_string),
            label: label.into(),
            properties: BTreeMap::new(),
            position: Position { x: 0.0, y: 0.0 },
            provenance,
        }
    }

    pub fn with_property(mut self, key: impl Into<String>, value: Value) -> Self {
        self.properties.insert(key.into(), value);
        self
    }

    /// Concept used for subsumption checks; untyped nodes sit at the root.
    pub fn effective_concept(&self) -> &str {
        self.concept.as_deref().unwrap_or(ROOT_CONCEPT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub relation: Option<String>,
    pub source: String,
    pub target: String,
    pub provenance: Provenance,
}

impl Edge {
    pub fn new(
        id: impl Into<String>,
        relation: Option<&str>,
        source: impl Into<String>,
        target: impl Into<String>,
        provenance: Provenance,
    ) -> Self {
        Self {
            id: id.into(),
            relation: relation.map(str::to_string),
            source: source.into(),
            target: target.into(),
            provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteRef {
    pub name: String,
    pub version: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct GraphRepr {
    project_id: String,
    palette: PaletteRef,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    project_id: String,
    palette: PaletteRef,
    nodes: BTreeMap<String, Node>,
    edges: BTreeMap<String, Edge>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(char::is_whitespace)
}

impl KnowledgeGraph {
    pub fn new(project_id: impl Into<String>, palette: &Palette) -> Self {
        Self {
            project_id: project_id.into(),
            palette: PaletteRef {
                name: palette.name().to_string(),
                version: palette.version(),
            },
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
        }
    }

    pub fn project_id(&self) -> &str {
        &self.project_id
    }

    pub fn palette_ref(&self) -> &PaletteRef {
        &self.palette
    }

    /// Points the graph at a newer version of its palette.
    pub fn with_palette_ref(mut self, palette: &Palette) -> Self {
        self.palette = PaletteRef {
            name: palette.name().to_string(),
            version: palette.version(),
        };
        self
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn edge(&self, id: &str) -> Option<&Edge> {
        self.edges.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len() + self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }

    fn id_taken(&self, id: &str) -> bool {
        self.nodes.contains_key(id) || self.edges.contains_key(id)
    }

    fn check_node(node: &Node, palette: &Palette) -> Result<(), GraphError> {
        let violation = |detail: String| GraphError::SchemaViolation {
            element: node.id.clone(),
            detail,
        };
        if !valid_id(&node.id) {
            return Err(violation(format!("invalid id `{}`", node.id)));
        }
        if !(node.position.x.is_finite() && node.position.y.is_finite()) {
            return Err(violation("position must be finite".into()));
        }
        let Some(concept) = node.concept.as_deref() else {
            return Ok(());
        };
        let schema = palette.effective_schema(concept)?;
        for (key, value) in &node.properties {
            if key.starts_with(EXTENSION_PREFIX) {
                continue;
            }
            match schema.get(key) {
                None => {
                    return Err(violation(format!(
                        "property `{key}` is not in the schema of `{concept}`"
                    )))
                }
                Some(kind) if !kind.accepts(value) => {
                    return Err(violation(format!("property `{key}` is not a valid {kind:?}")))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn check_edge(&self, edge: &Edge, palette: &Palette) -> Result<(), GraphError> {
        if !valid_id(&edge.id) {
            return Err(GraphError::SchemaViolation {
                element: edge.id.clone(),
                detail: format!("invalid id `{}`", edge.id),
            });
        }
        let endpoint = |id: &str| {
            self.nodes.get(id).ok_or_else(|| GraphError::DanglingEndpoint {
                edge: edge.id.clone(),
                endpoint: id.to_string(),
            })
        };
        let source = endpoint(&edge.source)?;
        let target = endpoint(&edge.target)?;
        let Some(name) = edge.relation.as_deref() else {
            return Ok(());
        };
        let relation = palette.relation(name).ok_or_else(|| GraphError::SchemaViolation {
            element: edge.id.clone(),
            detail: format!("unknown relation `{name}`"),
        })?;
        if !palette.is_subconcept(source.effective_concept(), &relation.domain)? {
            return Err(GraphError::SchemaViolation {
                element: edge.id.clone(),
                detail: format!(
                    "relation `{name}` needs a `{}` source, got `{}`",
                    relation.domain,
                    source.effective_concept()
                ),
            });
        }
        if !palette.is_subconcept(target.effective_concept(), &relation.range)? {
            return Err(GraphError::SchemaViolation {
                element: edge.id.clone(),
                detail: format!(
                    "relation `{name}` needs a `{}` target, got `{}`",
                    relation.range,
                    target.effective_concept()
                ),
            });
        }
        Ok(())
    }

    pub fn add_node(&self, node: Node, palette: &Palette) -> Result<Self, GraphError> {
        if self.id_taken(&node.id) {
            return Err(GraphError::DuplicateId(node.id));
        }
        Self::check_node(&node, palette)?;
        let mut next = self.clone();
        next.nodes.insert(node.id.clone(), node);
        Ok(next)
    }

    pub fn add_edge(&self, edge: Edge, palette: &Palette) -> Result<Self, GraphError> {
        if self.id_taken(&edge.id) {
            return Err(GraphError::DuplicateId(edge.id));
        }
        self.check_edge(&edge, palette)?;
        let mut next = self.clone();
        next.edges.insert(edge.id.clone(), edge);
        Ok(next)
    }

    /// Full check of every element against `palette`.
    pub fn validate(&self, palette: &Palette) -> Result<(), GraphError> {
        for node in self.nodes.values() {
            Self::check_node(node, palette)?;
        }
        for edge in self.edges.values() {
            if self.nodes.contains_key(&edge.id) {
                return Err(GraphError::DuplicateId(edge.id.clone()));
            }
            self.check_edge(edge, palette)?;
        }
        Ok(())
    }

    /// Nodes whose concept lies at or below `concept`. Untyped nodes only
    /// match the root.
    pub fn query_by_concept(&self, palette: &Palette, concept: &str) -> Result<Vec<&Node>, GraphError> {
        if !palette.contains(concept) {
            return Err(PaletteError::UnknownConcept(concept.to_string()).into());
        }
        let mut out = Vec::new();
        for node in self.nodes.values() {
            let hit = match node.concept.as_deref() {
                None => concept == ROOT_CONCEPT,
                Some(c) => palette.contains(c) && palette.is_subconcept(c, concept)?,
            };
            if hit {
                out.push(node);
            }
        }
        Ok(out)
    }

    /// Canonical JSON: fixed key order, nodes and edges sorted by id,
    /// property keys sorted, no insignificant whitespace.
    pub fn to_json(&self) -> String {
        let repr = GraphRepr {
            project_id: self.project_id.clone(),
            palette: self.palette.clone(),
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.values().cloned().collect(),
        };
        serde_json::to_string(&repr).expect("graph serialization is infallible")
    }

    /// Parses graph JSON and checks id uniqueness and edge endpoints.
    /// Palette conformance is checked separately by [`Self::validate`].
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let repr: GraphRepr = crate::json::from_str(text)?;
        let mut graph = KnowledgeGraph {
            project_id: repr.project_id,
            palette: repr.palette,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
        };
        for (i, node) in repr.nodes.into_iter().enumerate() {
            if !valid_id(&node.id) || graph.nodes.contains_key(&node.id) {
                return Err(JsonError::schema(
                    format!("nodes[{i}].id"),
                    format!("invalid or duplicate id `{}`", node.id),
                )
                .into());
            }
            if !(node.position.x.is_finite() && node.position.y.is_finite()) {
                return Err(JsonError::schema(format!("nodes[{i}].position"), "non-finite coordinate").into());
            }
            graph.nodes.insert(node.id.clone(), node);
        }
        for (i, edge) in repr.edges.into_iter().enumerate() {
            if !valid_id(&edge.id) || graph.id_taken(&edge.id) {
                return Err(JsonError::schema(
                    format!("edges[{i}].id"),
                    format!("invalid or duplicate id `{}`", edge.id),
                )
                .into());
            }
            for (field, endpoint) in [("source", &edge.source), ("target", &edge.target)] {
                if !graph.nodes.contains_key(endpoint) {
                    return Err(
                        JsonError::schema(format!("edges[{i}].{field}"), format!("unknown node `{endpoint}`")).into(),
                    );
                }
            }
            graph.edges.insert(edge.id.clone(), edge);
        }
        Ok(graph)
    }
}

/// Per-partner allow-lists of concept names applied when merging a
/// partner's graph. Listed concepts admit their whole subtree.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SharingPolicy {
    /// Whether partners without an allow-list share everything.
    pub default_allow: bool,
    pub allow: BTreeMap<String, BTreeSet<String>>,
}

impl SharingPolicy {
    pub fn open() -> Self {
        Self {
            default_allow: true,
            allow: BTreeMap::new(),
        }
    }

    pub fn restrict(
        mut self,
        partner: impl Into<String>,
        concepts: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        self.allow
            .insert(partner.into(), concepts.into_iter().map(Into::into).collect());
        self
    }

    fn admits(&self, partner: &str, node: &Node, palette: &Palette) -> Result<bool, PaletteError> {
        let Some(list) = self.allow.get(partner) else {
            return Ok(self.default_allow);
        };
        let concept = node.effective_concept();
        if node.concept.is_none() {
            return Ok(list.contains(ROOT_CONCEPT));
        }
        for allowed in list {
            if palette.contains(allowed) && palette.is_subconcept(concept, allowed)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Merged {
    pub graph: KnowledgeGraph,
    pub palette: Palette,
}

fn namespaced(partner: &str, id: &str) -> String {
    if id.contains('/') {
        id.to_string()
    } else {
        format!("{partner}/{id}")
    }
}

/// Folds `remote` into `local`. Remote ids gain a `partner/` prefix unless
/// already namespaced; elements originating at the remote record
/// `remote_partner` in their provenance while keeping the original agent.
/// Remote nodes outside the partner's allow-list are dropped together with
/// their edges. Local elements are never removed, so merging the same
/// remote again changes nothing.
pub fn merge(
    local: &KnowledgeGraph,
    local_palette: &Palette,
    remote: &KnowledgeGraph,
    remote_palette: &Palette,
    remote_partner: &str,
    policy: &SharingPolicy,
) -> Result<Merged, GraphError> {
    let palette = local_palette.union(remote_palette)?;
    let mut graph = if palette.version() != local_palette.version() {
        local.clone().with_palette_ref(&palette)
    } else {
        local.clone()
    };

    let mut admitted = BTreeSet::new();
    for node in remote.nodes.values() {
        if !policy.admits(remote_partner, node, &palette)? {
            continue;
        }
        let mut node = node.clone();
        if !node.id.contains('/') {
            node.provenance.partner = remote_partner.to_string();
        }
        node.id = namespaced(remote_partner, &node.id);
        admitted.insert(node.id.clone());
        if graph.edges.contains_key(&node.id) {
            return Err(GraphError::DuplicateId(node.id));
        }
        graph.nodes.insert(node.id.clone(), node);
    }
    for edge in remote.edges.values() {
        let source = namespaced(remote_partner, &edge.source);
        let target = namespaced(remote_partner, &edge.target);
        if !admitted.contains(&source) || !admitted.contains(&target) {
            continue;
        }
        let mut edge = edge.clone();
        if !edge.id.contains('/') {
            edge.provenance.partner = remote_partner.to_string();
        }
        edge.id = namespaced(remote_partner, &edge.id);
        edge.source = source;
        edge.target = target;
        if graph.nodes.contains_key(&edge.id) {
            return Err(GraphError::DuplicateId(edge.id));
        }
        graph.edges.insert(edge.id.clone(), edge);
    }
    Ok(Merged { graph, palette })
}
