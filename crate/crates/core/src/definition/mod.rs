//! Complex-event definitions, their compilation to ProbLog-style rule
//! fragments, and exact possible-worlds evaluation of those fragments.

mod compile;
mod exact;
mod fragment;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::palette::{Palette, PaletteError};
use crate::tellability::ConceptMapping;

pub use compile::{compile, compile_resolved, LogicFragment};
pub use exact::{evaluate_exact, ExactError, Fact, FactSet, MAX_FACTS};
pub use fragment::{parse_fragment, CmpOp, Expr, Head, Literal, Rule, RuleSet, SyntaxError};

/// Lowercase identifier usable as a logic atom.
pub fn is_atom(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn is_definition_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Initiator,
    Terminator,
    Supporting,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Initiator => "initiator",
            Role::Terminator => "terminator",
            Role::Supporting => "supporting",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    #[default]
    Class,
    Concept,
}

fn one() -> u32 {
    1
}

fn enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstituentSpec {
    pub matcher: String,
    #[serde(default)]
    pub matcher_kind: MatcherKind,
    pub role: Role,
    #[serde(default = "one")]
    pub min_count: u32,
}

impl ConstituentSpec {
    pub fn class(label: impl Into<String>, role: Role) -> Self {
        Self {
            matcher: label.into(),
            matcher_kind: MatcherKind::Class,
            role,
            min_count: 1,
        }
    }

    pub fn concept(name: impl Into<String>, role: Role) -> Self {
        Self {
            matcher: name.into(),
            matcher_kind: MatcherKind::Concept,
            role,
            min_count: 1,
        }
    }

    pub fn times(mut self, min_count: u32) -> Self {
        self.min_count = min_count;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ComplexEventDefinition {
    pub name: String,
    pub constituents: Vec<ConstituentSpec>,
    /// Longest allowed initiator-to-terminator span.
    pub window_seconds: f64,
    /// Longest allowed distance of any constituent from the initiator.
    pub radius_meters: f64,
    #[serde(default = "enabled")]
    pub enabled: bool,
}

impl ComplexEventDefinition {
    pub fn new(
        name: impl Into<String>,
        constituents: Vec<ConstituentSpec>,
        window_seconds: f64,
        radius_meters: f64,
    ) -> Self {
        Self {
            name: name.into(),
            constituents,
            window_seconds,
            radius_meters,
            enabled: true,
        }
    }

    /// Head atom used in compiled rules.
    pub fn atom_name(&self) -> String {
        self.name.to_ascii_lowercase()
    }

    pub fn initiator(&self) -> Option<&ConstituentSpec> {
        self.constituents.iter().find(|c| c.role == Role::Initiator)
    }

    pub fn terminator(&self) -> Option<&ConstituentSpec> {
        self.constituents.iter().find(|c| c.role == Role::Terminator)
    }

    pub fn supporting(&self) -> impl Iterator<Item = &ConstituentSpec> {
        self.constituents.iter().filter(|c| c.role == Role::Supporting)
    }

    pub fn from_json(text: &str) -> Result<Self, crate::JsonError> {
        crate::json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("definition serialization is infallible")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every structural rule of a single definition.
pub fn validate(def: &ComplexEventDefinition) -> Vec<Violation> {
    let mut out = Vec::new();
    if !is_definition_name(&def.name) {
        out.push(Violation::new("name", format!("`{}` is not an identifier", def.name)));
    }
    if !(def.window_seconds.is_finite() && def.window_seconds > 0.0) {
        out.push(Violation::new("windowSeconds", "must be positive"));
    }
    if !(def.radius_meters.is_finite() && def.radius_meters > 0.0) {
        out.push(Violation::new("radiusMeters", "must be positive"));
    }
    let count = |role| def.constituents.iter().filter(|c| c.role == role).count();
    match count(Role::Initiator) {
        0 => out.push(Violation::new("constituents", "missing initiator")),
        1 => {}
        _ => out.push(Violation::new("constituents", "more than one initiator")),
    }
    match count(Role::Terminator) {
        0 => out.push(Violation::new("constituents", "missing terminator")),
        1 => {}
        _ => out.push(Violation::new("constituents", "more than one terminator")),
    }
    let mut seen_support = BTreeSet::new();
    for (i, c) in def.constituents.iter().enumerate() {
        let field = format!("constituents[{i}]");
        if c.matcher.is_empty() {
            out.push(Violation::new(format!("{field}.matcher"), "must be nonempty"));
        } else {
            match c.matcher_kind {
                MatcherKind::Class if !is_atom(&c.matcher) => out.push(Violation::new(
                    format!("{field}.matcher"),
                    format!("class `{}` is not a lowercase identifier", c.matcher),
                )),
                MatcherKind::Concept if !crate::palette::is_identifier(&c.matcher) => out.push(Violation::new(
                    format!("{field}.matcher"),
                    format!("concept `{}` is not an identifier", c.matcher),
                )),
                _ => {}
            }
        }
        if c.min_count == 0 {
            out.push(Violation::new(format!("{field}.minCount"), "must be positive"));
        } else if c.role != Role::Supporting && c.min_count != 1 {
            out.push(Violation::new(
                format!("{field}.minCount"),
                format!("{} must have minCount 1", c.role),
            ));
        }
        if c.role == Role::Supporting && !seen_support.insert((c.matcher_kind as u8, c.matcher.clone())) {
            out.push(Violation::new(
                format!("{field}.matcher"),
                "duplicate supporting matcher",
            ));
        }
    }
    out
}

/// Validates a collection: each definition plus name uniqueness (case-insensitive,
/// since names compile to lowercase atoms).
pub fn validate_all(defs: &[ComplexEventDefinition]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut names = BTreeSet::new();
    for (i, def) in defs.iter().enumerate() {
        for v in validate(def) {
            out.push(Violation::new(format!("definitions[{i}].{}", v.field), v.rule));
        }
        if !names.insert(def.atom_name()) {
            out.push(Violation::new(
                format!("definitions[{i}].name"),
                format!("duplicate name `{}`", def.name),
            ));
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DefinitionError {
    #[error("invalid definition: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("unmapped concept `{0}`: no classifier label maps to it")]
    UnmappedConcept(String),
    #[error("supporting constituents overlap on class `{0}`")]
    OverlappingSupport(String),
    #[error(transparent)]
    Palette(#[from] PaletteError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Where concept matchers get their concrete class labels from.
#[derive(Debug, Clone, Copy)]
pub struct ConceptScope<'a> {
    pub mapping: &'a ConceptMapping,
    pub palette: &'a Palette,
}

/// A slot of a resolved definition: the concrete labels it accepts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResolvedSpec {
    pub role: Role,
    pub classes: BTreeSet<String>,
    pub min_count: u32,
}

impl ResolvedSpec {
    pub fn accepts(&self, class: &str) -> bool {
        self.classes.contains(class)
    }
}

/// A validated definition with every matcher expanded to concrete class
/// labels. Supporting specs are kept in definition order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResolvedDefinition {
    pub definition: ComplexEventDefinition,
    pub initiator: ResolvedSpec,
    pub terminator: ResolvedSpec,
    pub supporting: Vec<ResolvedSpec>,
}

impl ResolvedDefinition {
    pub fn name(&self) -> &str {
        &self.definition.name
    }

    pub fn window(&self) -> f64 {
        self.definition.window_seconds
    }

    pub fn radius(&self) -> f64 {
        self.definition.radius_meters
    }
}

/// Validates `def` and expands concept matchers through `scope`.
pub fn resolve(
    def: &ComplexEventDefinition,
    scope: Option<ConceptScope<'_>>,
) -> Result<ResolvedDefinition, DefinitionError> {
    let violations = validate(def);
    if !violations.is_empty() {
        return Err(DefinitionError::Invalid(violations));
    }
    let expand = |spec: &ConstituentSpec| -> Result<ResolvedSpec, DefinitionError> {
        let classes = match spec.matcher_kind {
            MatcherKind::Class => BTreeSet::from([spec.matcher.clone()]),
            MatcherKind::Concept => {
                let scope = scope.ok_or_else(|| DefinitionError::UnmappedConcept(spec.matcher.clone()))?;
                let classes = scope.mapping.classes_under(&spec.matcher, scope.palette)?;
                if classes.is_empty() {
                    return Err(DefinitionError::UnmappedConcept(spec.matcher.clone()));
                }
                if let Some(bad) = classes.iter().find(|c| !is_atom(c)) {
                    return Err(DefinitionError::Invalid(vec![Violation::new(
                        "mapping",
                        format!("class `{bad}` is not a lowercase identifier"),
                    )]));
                }
                classes
            }
        };
        Ok(ResolvedSpec {
            role: spec.role,
            classes,
            min_count: spec.min_count,
        })
    };
    let initiator = expand(def.initiator().expect("validated"))?;
    let terminator = expand(def.terminator().expect("validated"))?;
    let supporting = def.supporting().map(expand).collect::<Result<Vec<_>, _>>()?;
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in supporting.iter().enumerate() {
        for c in &s.classes {
            if owner.insert(c, i).is_some() {
                return Err(DefinitionError::OverlappingSupport(c.clone()));
            }
        }
    }
    Ok(ResolvedDefinition {
        definition: def.clone(),
        initiator,
        terminator,
        supporting,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::palette::Concept;

    pub(crate) fn ied() -> ComplexEventDefinition {
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

    #[test]
    fn ied_is_valid() {
        assert!(validate(&ied()).is_empty());
    }

    #[test]
    fn missing_terminator() {
        let mut d = ied();
        d.constituents.pop();
        let v = validate(&d);
        assert_eq!(v, [Violation::new("constituents", "missing terminator")]);
    }

    #[test]
    fn zero_window_and_radius() {
        let mut d = ied();
        d.window_seconds = 0.0;
        d.radius_meters = -1.0;
        let fields: Vec<_> = validate(&d).into_iter().map(|v| v.field).collect();
        assert_eq!(fields, ["windowSeconds", "radiusMeters"]);
    }

    #[test]
    fn min_count_rules() {
        let mut d = ied();
        d.constituents[0].min_count = 2;
        d.constituents
            .push(ConstituentSpec::class("gunshot", Role::Supporting).times(0));
        let rules: Vec<_> = validate(&d).into_iter().map(|v| v.field).collect();
        assert_eq!(rules, ["constituents[0].minCount", "constituents[2].minCount"]);
    }

    #[test]
    fn bad_labels_and_duplicates() {
        let mut d = ied();
        d.constituents.push(ConstituentSpec::class("Gunshot", Role::Supporting));
        d.constituents.push(ConstituentSpec::class("crowd", Role::Supporting));
        d.constituents.push(ConstituentSpec::class("crowd", Role::Supporting));
        assert_eq!(validate(&d).len(), 2);
        let defs = vec![ied(), ied()];
        assert_eq!(validate_all(&defs).len(), 1);
    }

    #[test]
    fn definition_json_shape() {
        let text = r#"{"name":"IED","constituents":[
            {"matcher":"explosion","matcherKind":"class","role":"initiator","minCount":1},
            {"matcher":"siren","matcherKind":"class","role":"terminator"}],
            "windowSeconds":300,"radiusMeters":500,"enabled":true}"#;
        assert_eq!(ComplexEventDefinition::from_json(text).unwrap(), ied());
    }

    #[test]
    fn resolve_concepts_through_mapping() {
        let palette = Palette::new("p")
            .add_concept(Concept::new("ThreatSound", "thing"))
            .unwrap()
            .add_concept(Concept::new("Alarm", "thing"))
            .unwrap();
        let mut mapping = ConceptMapping::new();
        mapping.set("explosion", "ThreatSound", &palette).unwrap();
        mapping.set("gunshot", "ThreatSound", &palette).unwrap();
        let def = ComplexEventDefinition::new(
            "attack",
            vec![
                ConstituentSpec::concept("ThreatSound", Role::Initiator),
                ConstituentSpec::class("siren", Role::Terminator),
            ],
            60.0,
            100.0,
        );
        let scope = ConceptScope {
            mapping: &mapping,
            palette: &palette,
        };
        let r = resolve(&def, Some(scope)).unwrap();
        assert_eq!(r.initiator.classes.len(), 2);
        assert_eq!(
            resolve(&def, None),
            Err(DefinitionError::UnmappedConcept("ThreatSound".into()))
        );
        let mut alarm = def.clone();
        alarm.constituents[0] = ConstituentSpec::concept("Alarm", Role::Initiator);
        assert_eq!(
            resolve(&alarm, Some(scope)),
            Err(DefinitionError::UnmappedConcept("Alarm".into()))
        );
    }
}
