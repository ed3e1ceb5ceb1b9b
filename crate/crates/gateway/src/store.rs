//! File-backed project store.
//!
//! Layout under `<root>/projects/<id>/`:
//!
//! | file | content |
//! |---|---|
//! | `graph.json`, `palette.json` | canonical graph and palette |
//! | `engine.json` | commit record: engine state plus committed log lengths |
//! | `events.jsonl`, `detections.jsonl` | append-only logs |
//! | `definitions.json`, `markings.json`, `mapping.json` | exports of the engine state |
//!
//! Whole-file writes go to `<name>.tmp` and are renamed into place. A
//! scenario run appends to both logs and then rewrites `engine.json`; the
//! rename of `engine.json` is the commit point. Recovery removes stray temp
//! files, cuts the logs back to the committed lengths and regenerates the
//! exports from `engine.json`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use hakf_core::cep::{Detection, Engine, EngineState, LoggedEvent, SNAPSHOT_VERSION};
use hakf_core::definition::ComplexEventDefinition;
use hakf_core::graph::KnowledgeGraph;
use hakf_core::palette::Palette;
use hakf_core::tellability::RegularMarking;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("killed at an injected crash point")]
    Killed,
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("store values are serializable");
    v.push(b'\n');
    v
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Injected crash: after `budget` primitive steps every further step fails,
/// leaving whatever a real crash at that point would leave on disk (half a
/// temp file, half a log line, an unrenamed temp file).
#[derive(Debug, Clone)]
pub struct KillSwitch(Arc<AtomicUsize>);

impl KillSwitch {
    pub fn after(budget: usize) -> Self {
        Self(Arc::new(AtomicUsize::new(budget)))
    }

    fn fire(&self) -> bool {
        self.0
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_err()
    }

    /// Steps left before the switch fires.
    pub fn remaining(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    pub fn fired(&self) -> bool {
        self.0.load(Ordering::SeqCst) == 0
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    kill: Option<KillSwitch>,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            kill: None,
        }
    }

    pub fn with_kill_switch(mut self, kill: KillSwitch) -> Self {
        self.kill = Some(kill);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn projects_dir(&self) -> PathBuf {
        self.root.join("projects")
    }

    pub fn project(&self, id: &str) -> ProjectFiles {
        ProjectFiles {
            dir: self.projects_dir().join(id),
            kill: self.kill.clone(),
        }
    }

    /// Ids of the projects on disk, sorted.
    pub fn project_ids(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.projects_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io(&dir))? {
            let entry = entry.map_err(io(&dir))?;
            if entry.path().is_dir() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct EngineCommit {
    event_count: usize,
    detection_count: usize,
    /// Engine state with the log and detections left out; those live in
    /// the JSONL files.
    state: EngineState,
}

/// Everything persisted for one project.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub graph: Option<KnowledgeGraph>,
    pub palette: Option<Palette>,
    pub engine: Engine,
}

#[derive(Debug, Clone)]
pub struct ProjectFiles {
    dir: PathBuf,
    kill: Option<KillSwitch>,
}

pub const GRAPH: &str = "graph.json";
pub const PALETTE: &str = "palette.json";
pub const ENGINE: &str = "engine.json";
pub const EVENTS: &str = "events.jsonl";
pub const DETECTIONS: &str = "detections.jsonl";
pub const DEFINITIONS: &str = "definitions.json";
pub const MARKINGS: &str = "markings.json";
pub const MAPPING: &str = "mapping.json";

impl ProjectFiles {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn step(&self) -> Result<(), StoreError> {
        match &self.kill {
            Some(k) if k.fire() => Err(StoreError::Killed),
            _ => Ok(()),
        }
    }

    fn ensure_dir(&self) -> Result<(), StoreError> {
        fs::create_dir_all(&self.dir).map_err(io(&self.dir))
    }

    pub fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        self.ensure_dir()?;
        let path = self.path(name);
        let tmp = self.path(&format!("{name}.tmp"));
        if self.step().is_err() {
            let _ = fs::write(&tmp, &bytes[..bytes.len() / 2]);
            return Err(StoreError::Killed);
        }
        let mut f = File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(bytes).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
        self.step()?;
        fs::rename(&tmp, &path).map_err(io(&path))
    }

    pub fn append_lines(&self, name: &str, lines: &[String]) -> Result<(), StoreError> {
        if lines.is_empty() {
            return Ok(());
        }
        self.ensure_dir()?;
        let path = self.path(name);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io(&path))?;
        for line in lines {
            if self.step().is_err() {
                let _ = f.write_all(&line.as_bytes()[..line.len() / 2]);
                return Err(StoreError::Killed);
            }
            f.write_all(line.as_bytes()).map_err(io(&path))?;
            f.write_all(b"\n").map_err(io(&path))?;
        }
        f.sync_all().map_err(io(&path))
    }

    pub fn save_graph(&self, graph: &KnowledgeGraph) -> Result<(), StoreError> {
        self.write_atomic(GRAPH, graph.to_json().as_bytes())
    }

    pub fn save_palette(&self, palette: &Palette) -> Result<(), StoreError> {
        self.write_atomic(PALETTE, palette.to_json().as_bytes())
    }

    fn export_bytes(engine: &Engine) -> [(&'static str, Vec<u8>); 3] {
        let defs: Vec<&ComplexEventDefinition> = engine.definitions().map(|d| &d.definition).collect();
        let markings: &[RegularMarking] = engine.tellability().markings();
        [
            (DEFINITIONS, pretty(&defs)),
            (MARKINGS, pretty(&markings)),
            (MAPPING, pretty(engine.tellability().mapping())),
        ]
    }

    /// Persists engine configuration (definitions, markings, mapping): the
    /// exports first, then the commit record.
    pub fn save_engine_config(
        &self,
        engine: &Engine,
        event_count: usize,
        detection_count: usize,
    ) -> Result<(), StoreError> {
        for (name, bytes) in Self::export_bytes(engine) {
            self.write_atomic(name, &bytes)?;
        }
        self.commit(engine, event_count, detection_count)
    }

    /// Appends new log entries and commits the engine that produced them.
    pub fn save_run(
        &self,
        engine: &Engine,
        new_events: &[LoggedEvent],
        new_detections: &[Detection],
    ) -> Result<(), StoreError> {
        let events: Vec<String> = new_events
            .iter()
            .map(|e| serde_json::to_string(e).expect("events are serializable"))
            .collect();
        let detections: Vec<String> = new_detections.iter().map(Detection::to_json_line).collect();
        self.append_lines(EVENTS, &events)?;
        self.append_lines(DETECTIONS, &detections)?;
        self.save_engine_config(engine, engine.log().len(), engine.detections().len())
    }

    fn commit(&self, engine: &Engine, event_count: usize, detection_count: usize) -> Result<(), StoreError> {
        let mut state = engine.snapshot();
        state.log.clear();
        state.detections.clear();
        let commit = EngineCommit {
            event_count,
            detection_count,
            state,
        };
        self.write_atomic(ENGINE, &serde_json::to_vec(&commit).expect("serializable"))
    }

    fn read_text(&self, name: &str) -> Result<Option<(PathBuf, String)>, StoreError> {
        let path = self.path(name);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some((path, text))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(StoreError::Io { path, source: e }),
        }
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Option<T>, StoreError> {
        let Some((path, text)) = self.read_text(name)? else {
            return Ok(None);
        };
        hakf_core::json::from_str(&text)
            .map(Some)
            .map_err(|e| StoreError::Corrupt {
                path,
                detail: e.to_string(),
            })
    }

    /// Reads the first `count` lines of a log, cutting the file back to
    /// exactly those lines if anything follows them.
    fn read_log<T: serde::de::DeserializeOwned>(&self, name: &str, count: usize) -> Result<Vec<T>, StoreError> {
        let path = self.path(name);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && count == 0 => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::Io { path, source: e }),
        };
        let mut reader = BufReader::new(file);
        let mut items = Vec::with_capacity(count);
        let mut kept_bytes = 0u64;
        let mut line = String::new();
        while items.len() < count {
            line.clear();
            let n = reader.read_line(&mut line).map_err(io(&path))?;
            if n == 0 || !line.ends_with('\n') {
                return Err(StoreError::Corrupt {
                    path,
                    detail: format!("{} committed entries, found only {}", count, items.len()),
                });
            }
            let item = serde_json::from_str(line.trim_end()).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                detail: format!("line {}: {e}", items.len() + 1),
            })?;
            items.push(item);
            kept_bytes += n as u64;
        }
        let len = fs::metadata(&path).map_err(io(&path))?.len();
        if len > kept_bytes {
            let f = OpenOptions::new().write(true).open(&path).map_err(io(&path))?;
            f.set_len(kept_bytes).map_err(io(&path))?;
            f.sync_all().map_err(io(&path))?;
        }
        Ok(items)
    }

    /// Brings the directory back to its last committed state and loads it.
    pub fn recover(&self) -> Result<Loaded, StoreError> {
        if !self.dir.exists() {
            return Ok(Loaded {
                graph: None,
                palette: None,
                engine: Engine::new(),
            });
        }
        for entry in fs::read_dir(&self.dir).map_err(io(&self.dir))? {
            let path = entry.map_err(io(&self.dir))?.path();
            if path.extension().is_some_and(|e| e == "tmp") {
                fs::remove_file(&path).map_err(io(&path))?;
            }
        }
        let graph = match self.read_text(GRAPH)? {
            Some((path, text)) => Some(KnowledgeGraph::from_json(&text).map_err(|e| StoreError::Corrupt {
                path,
                detail: e.to_string(),
            })?),
            None => None,
        };
        let palette = self.read_json::<Palette>(PALETTE)?;
        let commit = self.read_json::<EngineCommit>(ENGINE)?;
        let (mut state, events, detections) = match commit {
            Some(c) => (c.state, c.event_count, c.detection_count),
            None => (Engine::new().snapshot(), 0, 0),
        };
        if state.format_version != SNAPSHOT_VERSION {
            return Err(StoreError::Corrupt {
                path: self.path(ENGINE),
                detail: format!(
                    "snapshot version {} (expected {SNAPSHOT_VERSION})",
                    state.format_version
                ),
            });
        }
        state.log = self.read_log(EVENTS, events)?;
        state.detections = self.read_log(DETECTIONS, detections)?;
        let engine = Engine::restore(state).map_err(|e| StoreError::Corrupt {
            path: self.path(ENGINE),
            detail: e.to_string(),
        })?;
        for (name, bytes) in Self::export_bytes(&engine) {
            if fs::read(self.path(name)).ok().as_deref() != Some(&bytes[..]) {
                self.write_atomic(name, &bytes)?;
            }
        }
        Ok(Loaded { graph, palette, engine })
    }
}
