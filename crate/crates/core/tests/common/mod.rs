//! Seeded generators and naive oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use hakf_core::cep::{Detection, Engine, LoggedEvent};
use hakf_core::definition::{
    CmpOp, ComplexEventDefinition, ConstituentSpec, Expr, Fact, Literal, ResolvedDefinition, Role, RuleSet,
};
use hakf_core::event::{Context, Location, Modality, SimpleEvent};
use hakf_core::graph::{Edge, KnowledgeGraph, Node, Position, Provenance};
use hakf_core::palette::{Concept, Palette, RelationType, ValueKind};
use hakf_core::sim::FeedRng;
use hakf_core::tellability::RegularMarking;
use serde_json::{json, Value};

pub const CLASSES: [&str; 6] = ["explosion", "siren", "gunshot", "shout", "glass", "engine"];

/// Small seeded helper over the simulator's uniform stream.
pub struct Gen(FeedRng);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Self(FeedRng::new(seed, 0xC0FFEE))
    }

    pub fn unit(&mut self) -> f64 {
        self.0.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.unit() * n as f64) as usize).min(n.saturating_sub(1))
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn coin(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    pub fn real(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.unit() * (hi - lo)
    }
}

// ---- palettes and graphs ----

pub fn random_palette(g: &mut Gen, prefix: &str) -> Palette {
    let mut p = Palette::new("shared");
    let n = g.range(1, 8);
    let mut names = vec!["thing".to_string()];
    for i in 0..n {
        let name = format!("{prefix}C{i}");
        let parent = g.pick(&names).clone();
        let mut c = Concept::new(&name, &parent);
        if g.coin(0.5) {
            let kind = *g.pick(&[
                ValueKind::Text,
                ValueKind::Number,
                ValueKind::Timestamp,
                ValueKind::Geopoint,
            ]);
            c = c.with_property(format!("p{i}"), kind);
        }
        p = p.add_concept(c).unwrap();
        names.push(name);
    }
    for i in 0..g.below(3) {
        let domain = g.pick(&names).clone();
        let range = g.pick(&names).clone();
        p = p
            .add_relation(RelationType::new(format!("{prefix}r{i}"), domain, range))
            .unwrap();
    }
    p
}

fn value_of(g: &mut Gen, kind: ValueKind) -> Value {
    match kind {
        ValueKind::Text => json!(format!("t{}", g.below(1000))),
        ValueKind::Number => json!(g.real(-1e6, 1e6)),
        ValueKind::Timestamp => json!("2024-05-01T12:00:00Z"),
        ValueKind::Geopoint => json!({"lat": g.real(-90.0, 90.0), "lon": g.real(-180.0, 180.0)}),
    }
}

pub fn provenance(g: &mut Gen) -> Provenance {
    let secs = 1_700_000_000 + g.below(10_000_000) as i64;
    let nanos = (g.below(1000) as u32) * 1_000_000;
    Provenance::new(
        format!("agent-{}", g.below(4)),
        g.pick(&["UK", "US", "AU"]).to_string(),
        Utc.timestamp_opt(secs, nanos).unwrap(),
    )
}

/// A schema-valid graph over `palette`, built through the public mutators.
pub fn random_graph(g: &mut Gen, palette: &Palette, id_prefix: &str) -> KnowledgeGraph {
    let mut graph = KnowledgeGraph::new("proj", palette);
    let concepts: Vec<String> = palette.concepts().map(|c| c.name.clone()).collect();
    let n = g.below(9);
    for i in 0..n {
        let concept = if g.coin(0.25) {
            None
        } else {
            Some(g.pick(&concepts).clone())
        };
        let mut node = Node::new(
            format!("{id_prefix}n{i}"),
            concept.as_deref(),
            format!("node {i}"),
            provenance(g),
        );
        node.position = Position {
            x: g.real(-500.0, 500.0),
            y: g.real(-500.0, 500.0),
        };
        match &concept {
            Some(c) => {
                for (key, kind) in palette.effective_schema(c).unwrap() {
                    if g.coin(0.6) {
                        node.properties.insert(key, value_of(g, kind));
                    }
                }
                if g.coin(0.3) {
                    node.properties.insert("x-note".into(), json!("free text"));
                }
            }
            None => {
                if g.coin(0.5) {
                    node.properties.insert("anything".into(), json!([1, "two", null]));
                }
            }
        }
        graph = graph.add_node(node, palette).unwrap();
    }
    let nodes: Vec<Node> = graph.nodes().cloned().collect();
    let relations: Vec<RelationType> = palette.relations().cloned().collect();
    for i in 0..g.below(8) {
        if nodes.is_empty() {
            break;
        }
        let typed = !relations.is_empty() && g.coin(0.5);
        if typed {
            let r = g.pick(&relations).clone();
            let sources: Vec<&Node> = nodes
                .iter()
                .filter(|n| palette.is_subconcept(n.effective_concept(), &r.domain).unwrap())
                .collect();
            let targets: Vec<&Node> = nodes
                .iter()
                .filter(|n| palette.is_subconcept(n.effective_concept(), &r.range).unwrap())
                .collect();
            if sources.is_empty() || targets.is_empty() {
                continue;
            }
            let s = g.pick(&sources).id.clone();
            let t = g.pick(&targets).id.clone();
            let edge = Edge::new(format!("{id_prefix}e{i}"), Some(&r.name), s, t, provenance(g));
            graph = graph.add_edge(edge, palette).unwrap();
        } else {
            let s = g.pick(&nodes).id.clone();
            let t = g.pick(&nodes).id.clone();
            graph = graph
                .add_edge(
                    Edge::new(format!("{id_prefix}e{i}"), None, s, t, provenance(g)),
                    palette,
                )
                .unwrap();
        }
    }
    graph
}

// ---- definitions and streams ----

pub fn random_definition(g: &mut Gen, name: &str, classes: &[&str]) -> ComplexEventDefinition {
    let init = g.pick(classes).to_string();
    let term = if g.coin(0.2) {
        init.clone()
    } else {
        g.pick(classes).to_string()
    };
    let mut constituents = vec![
        ConstituentSpec::class(&init, Role::Initiator),
        ConstituentSpec::class(&term, Role::Terminator),
    ];
    let mut pool: Vec<&str> = classes.to_vec();
    for _ in 0..g.below(3) {
        if pool.is_empty() {
            break;
        }
        let c = pool.remove(g.below(pool.len()));
        constituents.push(ConstituentSpec::class(c, Role::Supporting).times(g.range(1, 2) as u32));
    }
    let window = [5.0, 12.5, 30.0, 60.0, 100.0][g.below(5)];
    let radius = [10.0, 25.0, 50.0, 150.0][g.below(4)];
    ComplexEventDefinition::new(name, constituents, window, radius)
}

pub fn random_definitions(g: &mut Gen, max: usize, classes: &[&str]) -> Vec<ComplexEventDefinition> {
    (0..g.range(1, max))
        .map(|i| random_definition(g, &format!("D{i}"), classes))
        .collect()
}

/// Up to `max` events in processing order. Ties in time are common; no two
/// events share class, time and location.
pub fn random_stream(g: &mut Gen, max: usize, classes: &[&str]) -> Vec<SimpleEvent> {
    let n = g.below(max + 1);
    let feeds = ["mic", "cam", "geo"];
    let mut t = 0.0;
    let mut out: Vec<SimpleEvent> = Vec::with_capacity(n);
    for i in 0..n {
        if !g.coin(0.2) {
            t += [0.5, 1.0, 2.0, 5.0, 10.0][g.below(5)];
        }
        let class = g.pick(classes).to_string();
        let mut loc = Location::new((g.below(9) as f64) * 10.0, (g.below(9) as f64) * 10.0);
        while out
            .iter()
            .any(|e| e.timestamp == t && e.class_label == class && e.location == loc)
        {
            loc.x += 1.0;
        }
        out.push(SimpleEvent {
            id: format!("ev{i:04}"),
            feed_id: g.pick(&feeds).to_string(),
            modality: Modality::Audio,
            class_label: class,
            confidence: (g.range(1, 20) as f64) * 0.05,
            timestamp: t,
            location: loc,
            partner: g.pick(&["UK", "US"]).to_string(),
            context: if g.coin(0.5) { Context::Day } else { Context::Night },
        });
    }
    out
}

pub fn random_markings(g: &mut Gen, classes: &[&str]) -> Vec<RegularMarking> {
    (0..g.below(3))
        .map(|_| {
            RegularMarking::new(
                *g.pick(&["mic", "cam", "geo"]),
                *g.pick(classes),
                *g.pick(&[Context::Day, Context::Night, Context::Any]),
                "op",
                0.0,
            )
        })
        .collect()
}

pub fn run_engine(
    defs: &[ComplexEventDefinition],
    markings: &[RegularMarking],
    events: &[SimpleEvent],
) -> (Engine, Vec<Detection>) {
    let mut engine = Engine::new();
    for d in defs {
        engine.add_definition(d, None).unwrap();
    }
    for m in markings {
        engine.tellability_mut().mark_regular(m.clone());
    }
    let mut detections = Vec::new();
    for e in events {
        detections.extend(engine.ingest(e.clone()).unwrap());
    }
    (engine, detections)
}

pub fn facts_for(detection: &Detection, log: &[LoggedEvent]) -> Vec<Fact> {
    let mut facts: Vec<Fact> = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for r in &detection.constituent_event_ids {
        if seen.contains(&r.event_id.as_str()) {
            continue;
        }
        seen.push(&r.event_id);
        let e = &log.iter().find(|l| l.event.id == r.event_id).unwrap().event;
        facts.push(Fact::new(e.confidence, e.class_label.clone(), e.timestamp, e.location));
    }
    facts
}

pub fn resolved(engine: &Engine) -> Vec<ResolvedDefinition> {
    engine.definitions().cloned().collect()
}

// ---- naive logic oracle ----

#[derive(Clone, Copy)]
enum Bound {
    Time(f64),
    Loc(Location),
}

fn expr_value(e: &Expr, env: &BTreeMap<String, Bound>) -> Option<f64> {
    let time = |v: &str| match env.get(v) {
        Some(Bound::Time(t)) => Some(*t),
        _ => None,
    };
    let loc = |v: &str| match env.get(v) {
        Some(Bound::Loc(l)) => Some(*l),
        _ => None,
    };
    match e {
        Expr::Var(v) => time(v),
        Expr::Num(n) => Some(*n),
        Expr::Diff(a, b) => Some(time(a)? - time(b)?),
        Expr::Dist(a, b) => {
            let (p, q) = (loc(a)?, loc(b)?);
            Some(((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt())
        }
    }
}

/// Tries every assignment of body atoms to facts and evaluates every literal
/// directly. Exponential in the body length; fine for tiny cases.
pub fn naive_derivable(rules: &RuleSet, world: &[&Fact], query: &str) -> bool {
    rules.rules.iter().filter(|r| r.head.name == query).any(|rule| {
        let atoms: Vec<(&String, &String, &String)> = rule
            .body
            .iter()
            .filter_map(|l| match l {
                Literal::Event { label, time, loc } => Some((label, time, loc)),
                _ => None,
            })
            .collect();
        let k = atoms.len();
        let n = world.len();
        if n == 0 {
            return false;
        }
        let total = n.pow(k as u32);
        (0..total).any(|mut code| {
            let mut env: BTreeMap<String, Bound> = BTreeMap::new();
            for (label, tv, lv) in &atoms {
                let f = world[code % n];
                code /= n;
                if &&f.label != label {
                    return false;
                }
                for (var, val) in [(tv, Bound::Time(f.time)), (lv, Bound::Loc(f.location))] {
                    match (env.get(var.as_str()), val) {
                        (None, _) => {
                            env.insert(var.to_string(), val);
                        }
                        (Some(Bound::Time(a)), Bound::Time(b)) if *a == b => {}
                        (Some(Bound::Loc(a)), Bound::Loc(b)) if *a == b => {}
                        _ => return false,
                    }
                }
            }
            rule.body.iter().all(|l| match l {
                Literal::Event { .. } => true,
                Literal::Compare { lhs, op, rhs } => match (expr_value(lhs, &env), expr_value(rhs, &env)) {
                    (Some(a), Some(b)) => match op {
                        CmpOp::Ge => a >= b,
                        CmpOp::Le => a <= b,
                    },
                    _ => false,
                },
                Literal::Distinct { left, right } => {
                    let get = |v: &str| env.get(v).copied();
                    match (get(&left.0), get(&left.1), get(&right.0), get(&right.1)) {
                        (Some(Bound::Time(t1)), Some(Bound::Loc(l1)), Some(Bound::Time(t2)), Some(Bound::Loc(l2))) => {
                            t1 != t2 || l1 != l2
                        }
                        _ => false,
                    }
                }
            })
        })
    })
}

/// Possible-worlds probability by direct enumeration with the naive check.
pub fn naive_probability(rules: &RuleSet, facts: &[Fact], query: &str) -> f64 {
    let n = facts.len();
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        let mut w = 1.0;
        let mut world = Vec::new();
        for (i, f) in facts.iter().enumerate() {
            if mask & (1 << i) != 0 {
                w *= f.probability;
                world.push(f);
            } else {
                w *= 1.0 - f.probability;
            }
        }
        if naive_derivable(rules, &world, query) {
            total += w;
        }
    }
    total
}
