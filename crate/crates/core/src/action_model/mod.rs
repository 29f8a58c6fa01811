//! Action models in a C+-style surface language.
//!
//! A model declares sorts, fluents, actions and subtasks, then states causal
//! laws over them:
//!
//! ```text
//! sort washable = clothes_pants | clothes_shirt.
//! fluent clean(washable), dirty(washable).
//! action wash(character, washable) "Wash 'arg1'".
//! complement clean, dirty.
//! caused clean(O) if true after wash(C, O).
//! inertial clean(O).
//! nonexecutable wash(C, O) if unempty_lh(C) & unempty_rh(C).
//! ```
//!
//! The first parameter of every action is the acting character.

mod ground;
mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::env_graph::EntityId;
use crate::skeleton::SkeletonPlan;

pub use ground::{
    ground_theory, ActionId, CausalAtom, CausalLiteral, CausalRuleInstance, FluentId, GroundAction, GroundAtom,
    GroundCausalTheory, GroundConstraint, GroundDomain, GroundDynamic, GroundNonexec, GroundStatic, GroundingError,
    Head, Layout, RuleOrigin,
};
pub use parser::parse_action_model;

/// Name of the built-in sort containing every entity.
pub const ANY_SORT: &str = "entity";

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: undeclared {what} `{name}`")]
    Undeclared {
        line: usize,
        what: &'static str,
        name: String,
    },
    #[error("line {line}: `{name}` expects {expected} argument(s), found {found}")]
    Arity {
        line: usize,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate declaration of `{name}`")]
    Duplicate { line: usize, name: String },
    #[error("line {line}: unsupported rule shape: {message}")]
    Unsupported { line: usize, message: String },
    #[error("subtask references form a cycle through `{0}`")]
    SubtaskCycle(String),
}

/// A declared fluent or action: name plus parameter sorts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub name: String,
    pub params: Vec<String>,
}

impl Schema {
    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.params.is_empty() {
            write!(f, "({})", self.params.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSchema {
    pub schema: Schema,
    /// Human-readable description, used when listing verbs in prompts.
    pub description: Option<String>,
}

impl ActionSchema {
    /// Number of object arguments (the actor is not counted).
    pub fn object_arity(&self) -> usize {
        self.schema.arity().saturating_sub(1)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Signature {
    /// Declared sort unions. Members are categories or other sorts.
    pub sorts: BTreeMap<String, Vec<String>>,
    pub fluents: BTreeMap<String, Schema>,
    pub actions: BTreeMap<String, ActionSchema>,
    pub subtasks: BTreeMap<String, SkeletonPlan>,
    /// Complementary fluent pairs, in declaration order.
    pub complements: Vec<(String, String)>,
}

impl Signature {
    /// Resolves a sort to the set of categories it covers. `None` means
    /// every category (the built-in `entity` sort). Names that are not
    /// declared sorts denote the category of the same name.
    pub fn categories_of(&self, sort: &str) -> Option<BTreeSet<String>> {
        if sort == ANY_SORT {
            return None;
        }
        let mut out = BTreeSet::new();
        let mut stack = vec![sort.to_string()];
        let mut seen = BTreeSet::new();
        while let Some(s) = stack.pop() {
            if !seen.insert(s.clone()) {
                continue;
            }
            if s == ANY_SORT {
                return None;
            }
            match self.sorts.get(&s) {
                Some(members) => stack.extend(members.iter().cloned()),
                None => {
                    out.insert(s);
                }
            }
        }
        Some(out)
    }

    pub fn sort_admits(&self, sort: &str, category: &str) -> bool {
        match self.categories_of(sort) {
            None => true,
            Some(cats) => cats.contains(category),
        }
    }

    /// Every fluent name declared complementary to `fluent`.
    pub fn complements_of<'a>(&'a self, fluent: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.complements.iter().filter_map(move |(a, b)| {
            if a == fluent {
                Some(b.as_str())
            } else if b == fluent {
                Some(a.as_str())
            } else {
                None
            }
        })
    }
}

/// Argument of an atom in a rule: a variable or a concrete entity id.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arg {
    Var(String),
    Id(EntityId),
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Var(v) => f.write_str(v),
            Arg::Id(id) => write!(f, "{id}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub name: String,
    pub args: Vec<Arg>,
}

impl Atom {
    pub fn new(name: impl Into<String>, args: Vec<Arg>) -> Self {
        Atom {
            name: name.into(),
            args,
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|a| match a {
            Arg::Var(v) => Some(v.as_str()),
            Arg::Id(_) => None,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub positive: bool,
    pub atom: Atom,
}

impl Literal {
    pub fn pos(atom: Atom) -> Self {
        Literal { positive: true, atom }
    }

    pub fn neg(atom: Atom) -> Self {
        Literal { positive: false, atom }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.positive {
            f.write_str("-")?;
        }
        write!(f, "{}", self.atom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleKind {
    Dynamic,
    Static,
    Inertial,
    Nonexecutable,
    Constraint,
}

/// One causal law.
///
/// Timing: `after_part` and `action` refer to the step at which the action
/// happens, `if_part` and `head` to the resulting step (dynamic) or the
/// same step (static, constraint). Nonexecutable laws keep their
/// conditions in `after_part` since they are evaluated together with the
/// action.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalRule {
    pub kind: RuleKind,
    /// Caused fluent; `None` stands for falsity (nonexecutable, constraint).
    pub head: Option<Atom>,
    pub if_part: Vec<Literal>,
    pub action: Option<Atom>,
    pub after_part: Vec<Literal>,
    pub line: usize,
}

impl CausalRule {
    fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.head
            .iter()
            .chain(self.action.iter())
            .chain(self.if_part.iter().map(|l| &l.atom))
            .chain(self.after_part.iter().map(|l| &l.atom))
    }

    /// Distinct variables in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for atom in self.atoms() {
            for v in atom.vars() {
                if !out.iter().any(|o| o == v) {
                    out.push(v.to_string());
                }
            }
        }
        out
    }
}

fn write_conj(f: &mut fmt::Formatter<'_>, lits: &[Literal]) -> fmt::Result {
    if lits.is_empty() {
        return f.write_str("true");
    }
    for (i, l) in lits.iter().enumerate() {
        if i > 0 {
            f.write_str(" & ")?;
        }
        write!(f, "{l}")?;
    }
    Ok(())
}

impl fmt::Display for CausalRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RuleKind::Dynamic => {
                let head = self.head.as_ref().expect("dynamic law has a head");
                write!(f, "caused {head} if ")?;
                write_conj(f, &self.if_part)?;
                write!(f, " after {}", self.action.as_ref().expect("dynamic law has an action"))?;
                for l in &self.after_part {
                    write!(f, " & {l}")?;
                }
                f.write_str(".")
            }
            RuleKind::Static => {
                write!(f, "caused {} if ", self.head.as_ref().expect("static law has a head"))?;
                write_conj(f, &self.if_part)?;
                f.write_str(".")
            }
            RuleKind::Inertial => {
                write!(
                    f,
                    "inertial {}.",
                    self.head.as_ref().expect("inertial law names a fluent")
                )
            }
            RuleKind::Nonexecutable => {
                write!(
                    f,
                    "nonexecutable {}",
                    self.action.as_ref().expect("nonexecutable names an action")
                )?;
                if !self.after_part.is_empty() {
                    f.write_str(" if ")?;
                    write_conj(f, &self.after_part)?;
                }
                f.write_str(".")
            }
            RuleKind::Constraint => {
                f.write_str("constraint ")?;
                write_conj(f, &self.if_part)?;
                f.write_str(".")
            }
        }
    }
}

/// A parsed and validated action model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CausalTheory {
    pub signature: Signature,
    pub rules: Vec<CausalRule>,
    /// Fluents true at step 0 for every sort-valid instance.
    pub initially: Vec<Atom>,
    /// Entity state symbol -> unary fluent.
    pub state_map: Vec<(String, String)>,
    /// Relation kind -> binary fluent.
    pub relation_map: Vec<(String, String)>,
    /// Verbs that count as support actions when pruning by relevance.
    pub support: BTreeSet<String>,
}

impl CausalTheory {
    pub fn rules_of(&self, kind: RuleKind) -> impl Iterator<Item = &CausalRule> {
        self.rules.iter().filter(move |r| r.kind == kind)
    }

    pub fn is_inertial(&self, fluent: &str) -> bool {
        self.rules_of(RuleKind::Inertial)
            .any(|r| r.head.as_ref().is_some_and(|h| h.name == fluent))
    }

    /// Pairs of complementary entity *state symbols*, derived from the
    /// complementary fluents they map to.
    pub fn state_complements(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (a, b) in &self.signature.complements {
            for (sa, fa) in &self.state_map {
                for (sb, fb) in &self.state_map {
                    if fa == a && fb == b {
                        out.push((sa.clone(), sb.clone()));
                    }
                }
            }
        }
        out
    }

    /// Checks every subtask reference resolves and subtasks are acyclic.
    pub fn check_subtasks(&self) -> Result<(), ModelError> {
        fn visit(
            name: &str,
            subtasks: &BTreeMap<String, SkeletonPlan>,
            stack: &mut Vec<String>,
            done: &mut BTreeSet<String>,
        ) -> Result<(), ModelError> {
            if done.contains(name) {
                return Ok(());
            }
            if stack.iter().any(|s| s == name) {
                return Err(ModelError::SubtaskCycle(name.to_string()));
            }
            let Some(plan) = subtasks.get(name) else {
                return Err(ModelError::Undeclared {
                    line: 0,
                    what: "subtask",
                    name: name.to_string(),
                });
            };
            stack.push(name.to_string());
            for child in plan.subtask_refs() {
                visit(&child, subtasks, stack, done)?;
            }
            stack.pop();
            done.insert(name.to_string());
            Ok(())
        }
        let mut done = BTreeSet::new();
        for name in self.signature.subtasks.keys() {
            visit(name, &self.signature.subtasks, &mut Vec::new(), &mut done)?;
        }
        Ok(())
    }
}

impl fmt::Display for CausalTheory {
    /// Prints the model back in the surface language.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sig = &self.signature;
        for (name, members) in &sig.sorts {
            writeln!(f, "sort {name} = {}.", members.join(" | "))?;
        }
        for schema in sig.fluents.values() {
            writeln!(f, "fluent {schema}.")?;
        }
        for action in sig.actions.values() {
            write!(f, "action {}", action.schema)?;
            if let Some(d) = &action.description {
                write!(f, " {d:?}")?;
            }
            writeln!(f, ".")?;
        }
        for (a, b) in &sig.complements {
            writeln!(f, "complement {a}, {b}.")?;
        }
        for (s, fl) in &self.state_map {
            writeln!(f, "state {s} -> {fl}.")?;
        }
        for (k, fl) in &self.relation_map {
            writeln!(f, "relation {k} -> {fl}.")?;
        }
        if !self.support.is_empty() {
            let verbs: Vec<&str> = self.support.iter().map(String::as_str).collect();
            writeln!(f, "support {}.", verbs.join(", "))?;
        }
        for atom in &self.initially {
            writeln!(f, "initially {atom}.")?;
        }
        for (name, plan) in &sig.subtasks {
            let steps: Vec<String> = plan.elements().iter().map(|p| p.to_string()).collect();
            writeln!(f, "subtask {name} = {}.", steps.join("; "))?;
        }
        for rule in &self.rules {
            writeln!(f, "{rule}")?;
        }
        Ok(())
    }
}
