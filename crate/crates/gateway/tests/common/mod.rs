#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use hakf_core::cep::EngineState;
use hakf_core::definition::{ComplexEventDefinition, ConstituentSpec, Role};
use hakf_core::event::{Context, Location, Modality};
use hakf_core::palette::Concept;
use hakf_core::sim::{ContextSpan, FeedRng, FeedSpec, InjectedEvent, Offset, Scenario, WeightedClass};
use hakf_core::tellability::RegularMarking;
use hakf_gateway::project::{Project, ProjectError};
use hakf_gateway::server::{router, AppState};
use hakf_gateway::store::{KillSwitch, Store, StoreError};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.scenario.json"))
}

pub fn app(dir: &Path) -> Router {
    router(AppState::load(Store::new(dir)).expect("store loads"))
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()))
    };
    (status, value)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

pub fn ied_definition() -> ComplexEventDefinition {
    ComplexEventDefinition::new(
        "IED",
        vec![
            ConstituentSpec::class("explosion", Role::Initiator),
            ConstituentSpec::class("siren", Role::Terminator),
        ],
        300.0,
        500.0,
    )
}

/// A deterministic mutation applied to a project.
#[derive(Debug, Clone)]
pub enum Op {
    AddConcept(String),
    PutGraph(String),
    AddDefinition(ComplexEventDefinition),
    Mark(String),
    Unmark(String),
    Mapping(String, String),
    Run(Box<Scenario>),
}

impl Op {
    pub fn apply(&self, project: &mut Project) -> Result<(), ProjectError> {
        match self {
            Op::AddConcept(name) => project
                .add_concept(Concept::new(name.as_str(), "SimpleEvent"))
                .map(drop),
            Op::PutGraph(text) => project
                .put_graph(hakf_core::graph::KnowledgeGraph::from_json(text)?)
                .map(drop),
            Op::AddDefinition(def) => project.add_definition(def).map(drop),
            Op::Mark(class) => project
                .mark_regular(RegularMarking::new("cam", class.as_str(), Context::Any, "op", 0.0))
                .map(drop),
            Op::Unmark(class) => project.unmark_regular("cam", class, Context::Any).map(drop),
            Op::Mapping(class, concept) => {
                let entries = [(class.clone(), concept.clone())].into_iter().collect();
                project.replace_mapping(entries).map(drop)
            }
            Op::Run(scenario) => project.run_scenario(scenario, None).map(drop),
        }
    }
}

const FUZZ_CLASSES: [&str; 4] = ["shotput", "punch", "siren", "explosion"];

fn graph_json(project: &str, nodes: usize) -> String {
    let nodes: Vec<Value> = (0..nodes)
        .map(|i| {
            serde_json::json!({
                "id": format!("n{i}"),
                "concept": "Feed",
                "label": format!("feed {i}"),
                "properties": {},
                "position": { "x": i as f64, "y": 0.0 },
                "provenance": { "agent": "fuzz", "partner": "UK", "createdAt": "2024-01-01T00:00:00Z" },
            })
        })
        .collect();
    serde_json::json!({
        "projectId": project,
        "palette": { "name": "hakf", "version": 0 },
        "nodes": nodes,
        "edges": [],
    })
    .to_string()
}

fn feed(rate: f64, classes: &[&str]) -> FeedSpec {
    FeedSpec {
        feed_id: "cam".into(),
        partner: "UK".into(),
        location: Location::new(0.0, 0.0),
        modality: Modality::Video,
        background_rate: rate,
        background_classes: classes
            .iter()
            .map(|c| WeightedClass {
                class_label: c.to_string(),
                weight: 1.0,
            })
            .collect(),
        context_schedule: vec![ContextSpan {
            from_second: 0.0,
            context: Context::Night,
        }],
    }
}

/// Random mutation sequence. Scenario runs move strictly forward in time so
/// every run after the first is accepted by the engine.
pub fn random_ops(rng: &mut FeedRng, project: &str) -> Vec<Op> {
    let n = 3 + (rng.next_u64() % 6) as usize;
    let mut clock = 0.0;
    let mut ops = Vec::new();
    for i in 0..n {
        let class = FUZZ_CLASSES[(rng.next_u64() % 4) as usize].to_string();
        let op = match rng.next_u64() % 7 {
            0 => Op::AddConcept(format!("Kind{i}")),
            1 => Op::PutGraph(graph_json(project, 1 + (rng.next_u64() % 3) as usize)),
            2 => {
                let other = FUZZ_CLASSES[(rng.next_u64() % 4) as usize];
                Op::AddDefinition(ComplexEventDefinition::new(
                    format!("Def{}", rng.next_u64() % 3),
                    vec![
                        ConstituentSpec::class(class.as_str(), Role::Initiator),
                        ConstituentSpec::class(other, Role::Terminator),
                    ],
                    30.0 + (rng.next_u64() % 100) as f64,
                    500.0,
                ))
            }
            3 => Op::Mark(class),
            4 => Op::Unmark(class),
            5 => Op::Mapping(class, "SimpleEvent".into()),
            _ => {
                let (start, background) = if clock == 0.0 { (60.0, 0.1) } else { (clock + 1.0, 0.0) };
                let injections: Vec<InjectedEvent> = (0..1 + rng.next_u64() % 4)
                    .map(|k| InjectedEvent {
                        feed_id: "cam".into(),
                        class_label: FUZZ_CLASSES[(rng.next_u64() % 4) as usize].into(),
                        at_second: start + 5.0 * k as f64,
                        confidence: 0.5 + 0.1 * (k % 5) as f64,
                        offset: Offset {
                            dx: 10.0 * k as f64,
                            dy: 0.0,
                        },
                    })
                    .collect();
                let end = injections.last().unwrap().at_second;
                clock = end;
                Op::Run(Box::new(Scenario {
                    name: format!("fuzz{i}"),
                    seed: rng.next_u64(),
                    duration_seconds: end,
                    feeds: vec![feed(background, &FUZZ_CLASSES)],
                    injections,
                    confidence_band: None,
                    definitions: Vec::new(),
                    markings: Vec::new(),
                    mapping: Default::default(),
                    palette: None,
                }))
            }
        };
        ops.push(op);
    }
    ops
}

/// What a recovered project holds, component by component.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub graph: String,
    pub palette: String,
    pub engine: EngineState,
}

pub fn fingerprint(store: &Store, id: &str) -> Fingerprint {
    let p = Project::open(store, id).expect("store recovers");
    Fingerprint {
        graph: p.graph().to_json(),
        palette: p.palette().to_json(),
        engine: p.engine().snapshot(),
    }
}

/// Every `.json` file parses, every `.jsonl` line parses, no temp files.
pub fn check_files(dir: &Path) -> Result<(), String> {
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let text = fs::read_to_string(&path).map_err(|e| e.to_string())?;
        if name.ends_with(".tmp") {
            return Err(format!("stray temp file {name}"));
        } else if name.ends_with(".jsonl") {
            for (i, line) in text.lines().enumerate() {
                serde_json::from_str::<Value>(line).map_err(|e| format!("{name}:{}: {e}", i + 1))?;
            }
            if !text.is_empty() && !text.ends_with('\n') {
                return Err(format!("{name}: partial last line"));
            }
        } else if name.ends_with(".json") {
            serde_json::from_str::<Value>(&text).map_err(|e| format!("{name}: {e}"))?;
        }
    }
    Ok(())
}

pub struct CrashOutcome {
    pub op: usize,
    pub budget: usize,
    pub killed: bool,
}

/// Replays `ops` in a reference store, counting each op's primitive
/// writes. Then replays them in a crash store and kills one writing op
/// (picked by `pick_op`) partway through (`pick_step`). The recovered crash
/// store must parse cleanly and hold, per component, either the state
/// before that op or the state after it.
pub fn crash_case(root: &Path, ops: &[Op], pick_op: u64, pick_step: u64) -> Result<CrashOutcome, String> {
    let id = "fuzz";
    let reference = Store::new(root.join("reference"));
    let counter = KillSwitch::after(usize::MAX);
    let mut states = vec![fingerprint(&reference, id)];
    let mut steps = Vec::new();
    let mut project = Project::open(&reference.clone().with_kill_switch(counter.clone()), id).unwrap();
    for op in ops {
        let left = counter.remaining();
        let _ = op.apply(&mut project);
        steps.push(left - counter.remaining());
        states.push(fingerprint(&reference, id));
    }
    let writers: Vec<usize> = (0..ops.len()).filter(|&i| steps[i] > 0).collect();
    let (k, budget) = if writers.is_empty() {
        ((pick_op % ops.len() as u64) as usize, 0)
    } else {
        let k = writers[(pick_op % writers.len() as u64) as usize];
        (k, (pick_step % steps[k] as u64) as usize)
    };

    let crash_root = root.join("crash");
    let clean = Store::new(&crash_root);
    let mut project = Project::open(&clean, id).unwrap();
    for op in &ops[..k] {
        let _ = op.apply(&mut project);
    }
    drop(project);
    Project::open(&clean, id).unwrap();
    let kill = KillSwitch::after(budget);
    let mut doomed = Project::open(&clean.clone().with_kill_switch(kill), id).unwrap();
    let killed = match ops[k].apply(&mut doomed) {
        Err(ProjectError::Store(StoreError::Killed)) => true,
        Err(ProjectError::Store(e)) => return Err(format!("unexpected store error: {e}")),
        _ => false,
    };
    drop(doomed);

    let recovered = fingerprint(&clean, id);
    let dir = clean.project(id).dir().to_path_buf();
    if dir.exists() {
        check_files(&dir)?;
    }
    let (before, after) = (&states[k], &states[k + 1]);
    if recovered.graph != before.graph && recovered.graph != after.graph {
        return Err(format!("op {k} ({:?}): graph matches neither side", ops[k]));
    }
    if recovered.palette != before.palette && recovered.palette != after.palette {
        return Err(format!("op {k} ({:?}): palette matches neither side", ops[k]));
    }
    if recovered.engine != before.engine && recovered.engine != after.engine {
        return Err(format!("op {k} ({:?}): engine matches neither side", ops[k]));
    }
    if !killed && recovered != *after {
        return Err(format!("op {k} completed but recovered state differs"));
    }
    Ok(CrashOutcome { op: k, budget, killed })
}

/// Runs the crash fuzz over `sequences` random mutation sequences and
/// returns how many were actually interrupted.
pub fn crash_fuzz(root: &Path, sequences: u64) -> Result<usize, String> {
    let mut kills = 0;
    for seq in 0..sequences {
        let mut rng = FeedRng::new(0x5eed, seq);
        let ops = random_ops(&mut rng, "fuzz");
        let dir = root.join(format!("seq{seq}"));
        let outcome =
            crash_case(&dir, &ops, rng.next_u64(), rng.next_u64()).map_err(|e| format!("sequence {seq}: {e}"))?;
        kills += usize::from(outcome.killed);
    }
    Ok(kills)
}
