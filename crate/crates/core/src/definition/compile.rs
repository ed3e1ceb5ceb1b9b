//! Definition → rule fragment.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::fragment::{parse_fragment, CmpOp, Expr, Head, Literal, Rule, RuleSet};
use super::{resolve, ComplexEventDefinition, ConceptScope, DefinitionError, ResolvedDefinition};

/// Canonical rule text for one definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogicFragment {
    pub text: String,
    pub source_definition: String,
    pub checksum: String,
}

fn checksum(text: &str) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(text.as_bytes())))
}

impl LogicFragment {
    pub fn from_rules(rules: &RuleSet, source: &str) -> Self {
        let text = rules.to_string();
        Self {
            checksum: checksum(&text),
            text,
            source_definition: source.to_string(),
        }
    }

    pub fn rules(&self) -> Result<RuleSet, super::SyntaxError> {
        parse_fragment(&self.text)
    }

    /// File form: a `%` comment header naming the source and checksum,
    /// then one rule per line.
    pub fn to_file_string(&self) -> String {
        format!(
            "% source: {}\n% checksum: {}\n{}\n",
            self.source_definition, self.checksum, self.text
        )
    }

    /// Reads the file form back, checking the recorded checksum.
    pub fn from_file_str(content: &str) -> Result<Self, String> {
        let mut source = None;
        let mut recorded = None;
        let mut body = Vec::new();
        for line in content.lines() {
            if let Some(rest) = line.strip_prefix('%') {
                let rest = rest.trim();
                if let Some(s) = rest.strip_prefix("source:") {
                    source = Some(s.trim().to_string());
                } else if let Some(c) = rest.strip_prefix("checksum:") {
                    recorded = Some(c.trim().to_string());
                }
            } else if !line.trim().is_empty() {
                body.push(line);
            }
        }
        let rules = parse_fragment(&body.join("\n")).map_err(|e| e.to_string())?;
        let fragment = Self::from_rules(&rules, source.as_deref().unwrap_or_default());
        match recorded {
            Some(c) if c != fragment.checksum => Err(format!(
                "checksum mismatch: header says {c}, content hashes to {}",
                fragment.checksum
            )),
            _ => Ok(fragment),
        }
    }
}

fn var(prefix: char, n: usize) -> String {
    format!("{prefix}{n}")
}

fn cmp(lhs: Expr, op: CmpOp, rhs: Expr) -> Literal {
    Literal::Compare { lhs, op, rhs }
}

/// Nondecreasing `k`-tuples over `items`: the distinct ways to fill `k`
/// interchangeable slots.
fn multisets(items: &[String], k: usize) -> Vec<Vec<String>> {
    fn go(items: &[String], k: usize, from: usize, cur: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in from..items.len() {
            cur.push(items[i].clone());
            go(items, k, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(items, k, 0, &mut Vec::with_capacity(k), &mut out);
    out
}

fn build_rule(def: &ResolvedDefinition, labels: &[String]) -> Rule {
    let window = def.window();
    let radius = def.radius();
    let n = labels.len();
    let t = |i: usize| var('T', i);
    let l = |i: usize| var('L', i);
    let mut body: Vec<Literal> = labels
        .iter()
        .enumerate()
        .map(|(i, label)| Literal::Event {
            label: label.clone(),
            time: t(i + 1),
            loc: l(i + 1),
        })
        .collect();
    body.push(cmp(Expr::Var(t(2)), CmpOp::Ge, Expr::Var(t(1))));
    body.push(cmp(Expr::Diff(t(2), t(1)), CmpOp::Le, Expr::Num(window)));
    body.push(cmp(Expr::Dist(l(1), l(2)), CmpOp::Le, Expr::Num(radius)));
    for k in 3..=n {
        body.push(cmp(Expr::Var(t(1)), CmpOp::Le, Expr::Var(t(k))));
        body.push(cmp(Expr::Var(t(k)), CmpOp::Le, Expr::Var(t(2))));
        body.push(cmp(Expr::Dist(l(1), l(k)), CmpOp::Le, Expr::Num(radius)));
    }
    // Same-label atoms must bind different facts. The initiator may double
    // as terminator only when nothing has to happen in between.
    for i in 1..=n {
        for j in (i + 1)..=n {
            if labels[i - 1] != labels[j - 1] || (i == 1 && j == 2 && n == 2) {
                continue;
            }
            body.push(Literal::Distinct {
                left: (t(i), l(i)),
                right: (t(j), l(j)),
            });
        }
    }
    Rule {
        head: Head {
            name: def.definition.atom_name(),
            start: t(1),
            end: t(2),
        },
        body,
    }
}

/// Compiles an already resolved definition: one rule per combination of
/// concrete class labels across the constituent slots.
pub fn compile_resolved(def: &ResolvedDefinition) -> LogicFragment {
    let mut slot_choices: Vec<Vec<Vec<String>>> = vec![
        def.initiator.classes.iter().map(|c| vec![c.clone()]).collect(),
        def.terminator.classes.iter().map(|c| vec![c.clone()]).collect(),
    ];
    for s in &def.supporting {
        let classes: Vec<String> = s.classes.iter().cloned().collect();
        slot_choices.push(multisets(&classes, s.min_count as usize));
    }
    let mut combos: Vec<Vec<String>> = vec![Vec::new()];
    for choices in &slot_choices {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |choice| {
                    let mut next = prefix.clone();
                    next.extend(choice.iter().cloned());
                    next
                })
            })
            .collect();
    }
    let rules = RuleSet {
        rules: combos.iter().map(|labels| build_rule(def, labels)).collect(),
    };
    LogicFragment::from_rules(&rules, &def.definition.name)
}

/// Validates and compiles `def`. Concept matchers need a `scope`.
pub fn compile(
    def: &ComplexEventDefinition,
    scope: Option<ConceptScope<'_>>,
) -> Result<LogicFragment, DefinitionError> {
    Ok(compile_resolved(&resolve(def, scope)?))
}
