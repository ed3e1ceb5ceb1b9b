//! Exact query probability by enumerating every possible world.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::compile::LogicFragment;
use super::fragment::{fmt_number, CmpOp, Expr, Literal, Rule, SyntaxError};
use crate::event::Location;

/// Enumeration guard: 2^20 worlds.
pub const MAX_FACTS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("too many facts: {got} exceeds the limit of {limit}")]
    TooManyFacts { got: usize, limit: usize },
    #[error("invalid fact set: {0}")]
    InvalidFacts(String),
    #[error("rule for `{rule}` is not range-restricted: {detail}")]
    UnsafeRule { rule: String, detail: String },
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
}

/// `p::simple_event(label, time, loc(x, y))`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub probability: f64,
    pub label: String,
    pub time: f64,
    pub location: Location,
}

impl Fact {
    pub fn new(probability: f64, label: impl Into<String>, time: f64, location: Location) -> Self {
        Self {
            probability,
            label: label.into(),
            time,
            location,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{}::simple_event({}, {}, loc({}, {})).",
            fmt_number(self.probability),
            self.label,
            fmt_number(self.time),
            fmt_number(self.location.x),
            fmt_number(self.location.y)
        )
    }
}

/// Independent probabilistic facts over distinct ground atoms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Fact>", into = "Vec<Fact>")]
pub struct FactSet(Vec<Fact>);

impl TryFrom<Vec<Fact>> for FactSet {
    type Error = ExactError;

    fn try_from(facts: Vec<Fact>) -> Result<Self, Self::Error> {
        Self::new(facts)
    }
}

impl From<FactSet> for Vec<Fact> {
    fn from(f: FactSet) -> Self {
        f.0
    }
}

impl FactSet {
    pub fn new(facts: Vec<Fact>) -> Result<Self, ExactError> {
        let mut seen = BTreeSet::new();
        for f in &facts {
            if !(0.0..=1.0).contains(&f.probability) {
                return Err(ExactError::InvalidFacts(format!(
                    "probability {} outside [0,1]",
                    f.probability
                )));
            }
            let key = (
                f.label.clone(),
                f.time.to_bits(),
                f.location.x.to_bits(),
                f.location.y.to_bits(),
            );
            if !seen.insert(key) {
                return Err(ExactError::InvalidFacts(format!("duplicate atom {}", f.render())));
            }
        }
        Ok(Self(facts))
    }

    pub fn facts(&self) -> &[Fact] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn render(&self) -> String {
        self.0.iter().map(Fact::render).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Time,
    Loc,
}

#[derive(Clone, Copy)]
enum Value {
    Time(f64),
    Loc(Location),
}

enum Operand {
    Time(usize),
    Num(f64),
    Diff(usize, usize),
    Dist(usize, usize),
}

enum Check {
    Compare(Operand, CmpOp, Operand),
    Distinct((usize, usize), (usize, usize)),
}

/// A rule with variables replaced by slot indices and each check attached
/// to the atom after which all of its variables are bound.
struct Plan {
    atoms: Vec<(String, usize, usize)>,
    checks_after: Vec<Vec<Check>>,
    slots: usize,
}

fn plan(rule: &Rule) -> Result<Plan, ExactError> {
    let unsafe_rule = |detail: String| ExactError::UnsafeRule {
        rule: rule.head.name.clone(),
        detail,
    };
    // slot index, kind, atom position at which it becomes bound
    let mut vars: HashMap<&str, (usize, Kind, usize)> = HashMap::new();
    let mut atoms = Vec::new();
    fn bind<'r>(
        vars: &mut HashMap<&'r str, (usize, Kind, usize)>,
        name: &'r str,
        kind: Kind,
        pos: usize,
    ) -> Result<usize, String> {
        let next = vars.len();
        let (slot, k, _) = *vars.entry(name).or_insert((next, kind, pos));
        if k != kind {
            return Err(format!("`{name}` used as both time and location"));
        }
        Ok(slot)
    }
    for lit in &rule.body {
        if let Literal::Event { label, time, loc } = lit {
            let pos = atoms.len();
            let ts = bind(&mut vars, time, Kind::Time, pos).map_err(unsafe_rule)?;
            let ls = bind(&mut vars, loc, Kind::Loc, pos).map_err(unsafe_rule)?;
            atoms.push((label.clone(), ts, ls));
        }
    }
    if atoms.is_empty() {
        return Err(unsafe_rule("no simple_event atoms".into()));
    }
    for v in [&rule.head.start, &rule.head.end] {
        match vars.get(v.as_str()) {
            Some((_, Kind::Time, _)) => {}
            _ => return Err(unsafe_rule(format!("head variable `{v}` is not a bound time"))),
        }
    }
    let lookup = |name: &str, kind: Kind| -> Result<(usize, usize), ExactError> {
        match vars.get(name) {
            Some(&(slot, k, pos)) if k == kind => Ok((slot, pos)),
            Some(_) => Err(unsafe_rule(format!("`{name}` has the wrong kind here"))),
            None => Err(unsafe_rule(format!("`{name}` is not bound by any simple_event"))),
        }
    };
    let operand = |e: &Expr| -> Result<(Operand, usize), ExactError> {
        Ok(match e {
            Expr::Var(v) => {
                let (s, p) = lookup(v, Kind::Time)?;
                (Operand::Time(s), p)
            }
            Expr::Num(n) => (Operand::Num(*n), 0),
            Expr::Diff(a, b) => {
                let (sa, pa) = lookup(a, Kind::Time)?;
                let (sb, pb) = lookup(b, Kind::Time)?;
                (Operand::Diff(sa, sb), pa.max(pb))
            }
            Expr::Dist(a, b) => {
                let (sa, pa) = lookup(a, Kind::Loc)?;
                let (sb, pb) = lookup(b, Kind::Loc)?;
                (Operand::Dist(sa, sb), pa.max(pb))
            }
        })
    };
    let mut checks_after: Vec<Vec<Check>> = (0..atoms.len()).map(|_| Vec::new()).collect();
    for lit in &rule.body {
        match lit {
            Literal::Event { .. } => {}
            Literal::Compare { lhs, op, rhs } => {
                let (l, pl) = operand(lhs)?;
                let (r, pr) = operand(rhs)?;
                checks_after[pl.max(pr)].push(Check::Compare(l, *op, r));
            }
            Literal::Distinct { left, right } => {
                let (t1, p1) = lookup(&left.0, Kind::Time)?;
                let (l1, p2) = lookup(&left.1, Kind::Loc)?;
                let (t2, p3) = lookup(&right.0, Kind::Time)?;
                let (l2, p4) = lookup(&right.1, Kind::Loc)?;
                checks_after[p1.max(p2).max(p3).max(p4)].push(Check::Distinct((t1, l1), (t2, l2)));
            }
        }
    }
    Ok(Plan {
        atoms,
        checks_after,
        slots: vars.len(),
    })
}

fn time(v: &[Option<Value>], s: usize) -> f64 {
    match v[s] {
        Some(Value::Time(t)) => t,
        _ => unreachable!("planned as a bound time"),
    }
}

fn loc(v: &[Option<Value>], s: usize) -> Location {
    match v[s] {
        Some(Value::Loc(l)) => l,
        _ => unreachable!("planned as a bound location"),
    }
}

fn eval(op: &Operand, v: &[Option<Value>]) -> f64 {
    match *op {
        Operand::Time(s) => time(v, s),
        Operand::Num(n) => n,
        Operand::Diff(a, b) => time(v, a) - time(v, b),
        Operand::Dist(a, b) => loc(v, a).distance(&loc(v, b)),
    }
}

fn holds(check: &Check, v: &[Option<Value>]) -> bool {
    match check {
        Check::Compare(l, op, r) => op.holds(eval(l, v), eval(r, v)),
        Check::Distinct((t1, l1), (t2, l2)) => time(v, *t1) != time(v, *t2) || loc(v, *l1) != loc(v, *l2),
    }
}

fn derivable(plan: &Plan, world: &[&Fact]) -> bool {
    fn go(plan: &Plan, world: &[&Fact], i: usize, vals: &mut Vec<Option<Value>>) -> bool {
        if i == plan.atoms.len() {
            return true;
        }
        let (label, ts, ls) = &plan.atoms[i];
        for fact in world.iter().filter(|f| &f.label == label) {
            let saved = (vals[*ts], vals[*ls]);
            let time_ok = match vals[*ts] {
                Some(Value::Time(t)) => t == fact.time,
                _ => {
                    vals[*ts] = Some(Value::Time(fact.time));
                    true
                }
            };
            let loc_ok = time_ok
                && match vals[*ls] {
                    Some(Value::Loc(l)) => l == fact.location,
                    _ => {
                        vals[*ls] = Some(Value::Loc(fact.location));
                        true
                    }
                };
            if loc_ok && plan.checks_after[i].iter().all(|c| holds(c, vals)) && go(plan, world, i + 1, vals) {
                return true;
            }
            vals[*ts] = saved.0;
            vals[*ls] = saved.1;
        }
        false
    }
    let mut vals = vec![None; plan.slots];
    go(plan, world, 0, &mut vals)
}

/// Probability that `query` is derivable: the total weight of the worlds
/// (truth assignments to the independent facts) in which some rule for
/// `query` has a satisfying grounding.
pub fn evaluate_exact(fragment: &LogicFragment, facts: &FactSet, query: &str) -> Result<f64, ExactError> {
    if facts.len() > MAX_FACTS {
        return Err(ExactError::TooManyFacts {
            got: facts.len(),
            limit: MAX_FACTS,
        });
    }
    let query = query.to_ascii_lowercase();
    let rules = fragment.rules()?;
    let plans = rules
        .rules
        .iter()
        .filter(|r| r.head.name == query)
        .map(plan)
        .collect::<Result<Vec<_>, _>>()?;
    if plans.is_empty() {
        return Ok(0.0);
    }
    let all = facts.facts();
    let mut total = 0.0;
    let mut world: Vec<&Fact> = Vec::with_capacity(all.len());
    for mask in 0u32..(1u32 << all.len()) {
        let mut weight = 1.0;
        world.clear();
        for (i, f) in all.iter().enumerate() {
            if mask & (1 << i) != 0 {
                weight *= f.probability;
                world.push(f);
            } else {
                weight *= 1.0 - f.probability;
            }
        }
        if weight == 0.0 {
            continue;
        }
        if plans.iter().any(|p| derivable(p, &world)) {
            total += weight;
        }
    }
    Ok(total)
}
