//! Skeleton plans: representation, parsing of plan text and model
//! responses, the grammar verifier, and trajectory satisfaction.
//!
//! Step syntax, one step per line:
//!
//! ```text
//! [putin] <clothes_pants> <washing_machine>   action step
//! ?clean(clothes_pants) & -on(washing_machine) fluent specification
//! @load_machine                               subtask
//! ```
//!
//! Action and fluent arguments are categories or entity ids. Within one
//! plan every occurrence of a category refers to the same entity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_model::{GroundAtom, GroundDomain, Signature};
use crate::env_graph::EntityId;
use crate::planner::{State, Trajectory};

/// Category -> entity choice made while matching a plan.
pub type Binding = BTreeMap<String, EntityId>;

#[derive(Debug, Error, PartialEq)]
pub enum SkeletonError {
    #[error("{0}")]
    Parse(String),
    #[error("unknown subtask `{0}`")]
    UnknownSubtask(String),
    #[error("subtask references form a cycle through `{0}`")]
    SubtaskCycle(String),
    #[error("undeclared {0} `{1}`")]
    Undeclared(&'static str, String),
    #[error("invalid skeleton line {index}: {message}")]
    InvalidLine { index: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepArg {
    Category(String),
    Id(EntityId),
}

impl StepArg {
    fn parse(text: &str) -> StepArg {
        let text = text.trim();
        match text.parse() {
            Ok(id) => StepArg::Id(id),
            Err(_) => StepArg::Category(text.to_string()),
        }
    }
}

impl fmt::Display for StepArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepArg::Category(c) => f.write_str(c),
            StepArg::Id(id) => write!(f, "{id}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionStep {
    pub verb: String,
    pub args: Vec<StepArg>,
}

impl fmt::Display for ActionStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.verb)?;
        for a in &self.args {
            write!(f, " <{a}>")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FluentPattern {
    pub name: String,
    pub args: Vec<StepArg>,
}

impl fmt::Display for FluentPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.args.is_empty() {
            let args: Vec<String> = self.args.iter().map(ToString::to_string).collect();
            write!(f, "({})", args.join(", "))?;
        }
        Ok(())
    }
}

/// Propositional formula over fluent patterns.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    True,
    Atom(FluentPattern),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    fn patterns<'a>(&'a self, out: &mut Vec<&'a FluentPattern>) {
        match self {
            Formula::True => {}
            Formula::Atom(p) => out.push(p),
            Formula::Not(f) => f.patterns(out),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| f.patterns(out)),
        }
    }

    fn map_args(&mut self, f: &mut impl FnMut(&mut StepArg)) {
        match self {
            Formula::True => {}
            Formula::Atom(p) => p.args.iter_mut().for_each(&mut *f),
            Formula::Not(x) => x.map_args(f),
            Formula::And(xs) | Formula::Or(xs) => xs.iter_mut().for_each(|x| x.map_args(f)),
        }
    }

    /// Disjunctive normal form: a list of conjunctions of literals. An empty
    /// conjunction is true; an empty list is false.
    pub fn dnf(&self) -> Vec<Vec<(bool, FluentPattern)>> {
        fn go(f: &Formula, positive: bool) -> Vec<Vec<(bool, FluentPattern)>> {
            match (f, positive) {
                (Formula::True, true) => vec![Vec::new()],
                (Formula::True, false) => Vec::new(),
                (Formula::Atom(p), pos) => vec![vec![(pos, p.clone())]],
                (Formula::Not(x), pos) => go(x, !pos),
                (Formula::And(xs), true) | (Formula::Or(xs), false) => {
                    let mut acc = vec![Vec::new()];
                    for x in xs {
                        let part = go(x, positive);
                        let mut next = Vec::new();
                        for a in &acc {
                            for b in &part {
                                let mut c: Vec<(bool, FluentPattern)> = a.clone();
                                c.extend(b.iter().cloned());
                                next.push(c);
                            }
                        }
                        acc = next;
                    }
                    acc
                }
                (Formula::Or(xs), true) | (Formula::And(xs), false) => {
                    xs.iter().flat_map(|x| go(x, positive)).collect()
                }
            }
        }
        go(self, true)
    }

    fn eval(&self, holds: &impl Fn(&FluentPattern) -> bool) -> bool {
        match self {
            Formula::True => true,
            Formula::Atom(p) => holds(p),
            Formula::Not(x) => !x.eval(holds),
            Formula::And(xs) => xs.iter().all(|x| x.eval(holds)),
            Formula::Or(xs) => xs.iter().any(|x| x.eval(holds)),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => f.write_str("true"),
            Formula::Atom(p) => p.fmt(f),
            Formula::Not(x) => match **x {
                Formula::And(_) | Formula::Or(_) => write!(f, "-({x})"),
                _ => write!(f, "-{x}"),
            },
            Formula::And(xs) | Formula::Or(xs) => {
                let sep = if matches!(self, Formula::And(_)) { " & " } else { " | " };
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    match x {
                        Formula::And(_) | Formula::Or(_) => write!(f, "({x})")?,
                        _ => write!(f, "{x}")?,
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SkeletonPlan {
    Action(ActionStep),
    Fluent(Formula),
    Subtask(String),
    Seq(Vec<SkeletonPlan>),
}

/// A step of a plan after subtasks and nested sequences are expanded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Element {
    Action(ActionStep),
    Fluent(Formula),
}

impl Element {
    pub fn is_action(&self) -> bool {
        matches!(self, Element::Action(_))
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Action(a) => a.fmt(f),
            Element::Fluent(x) => write!(f, "?{x}"),
        }
    }
}

impl fmt::Display for SkeletonPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkeletonPlan::Action(a) => a.fmt(f),
            SkeletonPlan::Fluent(x) => write!(f, "?{x}"),
            SkeletonPlan::Subtask(s) => write!(f, "@{s}"),
            SkeletonPlan::Seq(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    x.fmt(f)?;
                }
                Ok(())
            }
        }
    }
}

impl SkeletonPlan {
    pub fn empty() -> Self {
        SkeletonPlan::Seq(Vec::new())
    }

    /// Top-level steps: the members of a sequence, or the plan itself.
    pub fn elements(&self) -> Vec<&SkeletonPlan> {
        match self {
            SkeletonPlan::Seq(xs) => xs.iter().collect(),
            other => vec![other],
        }
    }

    /// Subtask names referenced directly (not through other subtasks).
    pub fn subtask_refs(&self) -> Vec<String> {
        match self {
            SkeletonPlan::Subtask(s) => vec![s.clone()],
            SkeletonPlan::Seq(xs) => xs.iter().flat_map(SkeletonPlan::subtask_refs).collect(),
            _ => Vec::new(),
        }
    }

    /// Expands subtasks and nested sequences into a flat list of elements.
    pub fn flatten(&self, library: &BTreeMap<String, SkeletonPlan>) -> Result<Vec<Element>, SkeletonError> {
        fn go(
            p: &SkeletonPlan,
            lib: &BTreeMap<String, SkeletonPlan>,
            stack: &mut Vec<String>,
            out: &mut Vec<Element>,
        ) -> Result<(), SkeletonError> {
            match p {
                SkeletonPlan::Action(a) => out.push(Element::Action(a.clone())),
                SkeletonPlan::Fluent(f) => out.push(Element::Fluent(f.clone())),
                SkeletonPlan::Seq(xs) => {
                    for x in xs {
                        go(x, lib, stack, out)?;
                    }
                }
                SkeletonPlan::Subtask(name) => {
                    if stack.contains(name) {
                        return Err(SkeletonError::SubtaskCycle(name.clone()));
                    }
                    let body = lib
                        .get(name)
                        .ok_or_else(|| SkeletonError::UnknownSubtask(name.clone()))?;
                    stack.push(name.clone());
                    go(body, lib, stack, out)?;
                    stack.pop();
                }
            }
            Ok(())
        }
        let mut out = Vec::new();
        go(self, library, &mut Vec::new(), &mut out)?;
        Ok(out)
    }

    /// Categories mentioned anywhere in the plan (not inside subtasks).
    pub fn categories(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_args(&mut |a| {
            if let StepArg::Category(c) = a {
                out.insert(c.clone());
            }
        });
        out
    }

    fn visit_args(&self, f: &mut impl FnMut(&StepArg)) {
        match self {
            SkeletonPlan::Action(a) => a.args.iter().for_each(&mut *f),
            SkeletonPlan::Fluent(x) => {
                let mut ps = Vec::new();
                x.patterns(&mut ps);
                ps.iter().flat_map(|p| p.args.iter()).for_each(&mut *f);
            }
            SkeletonPlan::Subtask(_) => {}
            SkeletonPlan::Seq(xs) => xs.iter().for_each(|x| x.visit_args(f)),
        }
    }

    /// Applies `f` to every argument in place.
    pub fn map_args(&mut self, f: &mut impl FnMut(&mut StepArg)) {
        match self {
            SkeletonPlan::Action(a) => a.args.iter_mut().for_each(&mut *f),
            SkeletonPlan::Fluent(x) => x.map_args(f),
            SkeletonPlan::Subtask(_) => {}
            SkeletonPlan::Seq(xs) => xs.iter_mut().for_each(|x| x.map_args(f)),
        }
    }

    /// Checks verbs, fluents and subtask names against a signature.
    pub fn check_names(&self, sig: &Signature) -> Result<(), (&'static str, String)> {
        match self {
            SkeletonPlan::Action(a) => match sig.actions.get(&a.verb) {
                None => Err(("action", a.verb.clone())),
                Some(s) if a.args.len() > s.object_arity() => Err(("action arity of", a.verb.clone())),
                Some(_) => Ok(()),
            },
            SkeletonPlan::Fluent(x) => {
                let mut ps = Vec::new();
                x.patterns(&mut ps);
                for p in ps {
                    match sig.fluents.get(&p.name) {
                        Some(s) if s.arity() == p.args.len() => {}
                        Some(_) => return Err(("fluent arity of", p.name.clone())),
                        None => return Err(("fluent", p.name.clone())),
                    }
                }
                Ok(())
            }
            SkeletonPlan::Subtask(s) if sig.subtasks.contains_key(s) => Ok(()),
            SkeletonPlan::Subtask(s) => Err(("subtask", s.clone())),
            SkeletonPlan::Seq(xs) => xs.iter().try_for_each(|x| x.check_names(sig)),
        }
    }

    /// Validates the plan against a signature, including acyclicity of
    /// the subtasks it reaches.
    pub fn validate(&self, sig: &Signature) -> Result<(), SkeletonError> {
        self.check_names(sig)
            .map_err(|(what, name)| SkeletonError::Undeclared(what, name))?;
        self.flatten(&sig.subtasks).map(|_| ())
    }
}

/// Parses one step in the text syntax.
pub fn parse_step(text: &str) -> Result<SkeletonPlan, String> {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix('@') {
        let name = rest.trim();
        if is_ident(name) {
            return Ok(SkeletonPlan::Subtask(name.to_string()));
        }
        return Err(format!("bad subtask name `{name}`"));
    }
    if let Some(rest) = text.strip_prefix('?') {
        let mut p = FormulaParser { src: rest, pos: 0 };
        let f = p.disjunction()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(format!("unexpected `{}` in fluent specification", &p.src[p.pos..]));
        }
        return Ok(SkeletonPlan::Fluent(f));
    }
    let line = parse_plan_line(text)?;
    Ok(SkeletonPlan::Action(ActionStep {
        verb: line.verb,
        args: line.targets.iter().map(|t| StepArg::parse(t)).collect(),
    }))
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct FormulaParser<'a> {
    src: &'a str,
    pos: usize,
}

impl FormulaParser<'_> {
    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn disjunction(&mut self) -> Result<Formula, String> {
        let mut xs = vec![self.conjunction()?];
        while self.eat('|') {
            xs.push(self.conjunction()?);
        }
        Ok(if xs.len() == 1 {
            xs.pop().unwrap()
        } else {
            Formula::Or(xs)
        })
    }

    fn conjunction(&mut self) -> Result<Formula, String> {
        let mut xs = vec![self.unary()?];
        while self.eat('&') {
            xs.push(self.unary()?);
        }
        Ok(if xs.len() == 1 {
            xs.pop().unwrap()
        } else {
            Formula::And(xs)
        })
    }

    fn unary(&mut self) -> Result<Formula, String> {
        if self.eat('-') || self.eat('!') {
            return Ok(Formula::Not(Box::new(self.unary()?)));
        }
        if self.eat('(') {
            let f = self.disjunction()?;
            if !self.eat(')') {
                return Err("expected `)`".into());
            }
            return Ok(f);
        }
        let name = self.word();
        if name.is_empty() || !is_ident(&name) {
            return Err(format!("expected a fluent name at `{}`", &self.src[self.pos..]));
        }
        if name == "true" {
            return Ok(Formula::True);
        }
        let mut args = Vec::new();
        if self.eat('(') {
            loop {
                let w = self.word();
                if w.is_empty() {
                    return Err(format!("expected an argument at `{}`", &self.src[self.pos..]));
                }
                args.push(StepArg::parse(&w));
                if !self.eat(',') {
                    break;
                }
            }
            if !self.eat(')') {
                return Err("expected `)`".into());
            }
        }
        Ok(Formula::Atom(FluentPattern { name, args }))
    }

    fn word(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.src[self.pos..].starts_with(|c: char| c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        self.src[start..self.pos].to_string()
    }
}

/// One `[verb] <target1> <target2>` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanLine {
    pub verb: String,
    pub targets: Vec<String>,
}

impl fmt::Display for PlanLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.verb)?;
        for t in &self.targets {
            write!(f, " <{t}>")?;
        }
        Ok(())
    }
}

/// Parses `[verb] <t1> <t2>`; any number of targets is accepted here,
/// arity is the verifier's concern.
pub fn parse_plan_line(text: &str) -> Result<PlanLine, String> {
    let malformed = || format!("\"{text}\" is not in the format \"[verb] <target1> <target2>\"");
    let rest = text.trim().strip_prefix('[').ok_or_else(malformed)?;
    let close = rest.find(']').ok_or_else(malformed)?;
    let verb = rest[..close].trim().to_lowercase();
    if !is_ident(&verb) {
        return Err(malformed());
    }
    let mut rest = rest[close + 1..].trim_start();
    let mut targets = Vec::new();
    while !rest.is_empty() {
        let inner = rest.strip_prefix('<').ok_or_else(malformed)?;
        let end = inner.find('>').ok_or_else(malformed)?;
        let target = inner[..end].trim();
        if target.is_empty() || target.contains('<') {
            return Err(malformed());
        }
        targets.push(target.to_string());
        rest = inner[end + 1..].trim_start();
    }
    Ok(PlanLine { verb, targets })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResponseError {
    #[error("response is not parseable JSON")]
    NotJson,
    #[error("response has no \"actions\" list")]
    MissingActions,
}

#[derive(Deserialize)]
struct ResponseShape {
    actions: Option<Vec<serde_json::Value>>,
}

/// Finds the first balanced JSON object in `text`.
fn first_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &text[open..=i];
                        if serde_json::from_str::<serde_json::Value>(candidate).is_ok() {
                            return Some(candidate);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

/// Extracts the `actions` lines from a model response. Text around the
/// JSON object is ignored.
pub fn parse_llm_response(text: &str) -> Result<Vec<String>, ResponseError> {
    let obj = first_json_object(text).ok_or(ResponseError::NotJson)?;
    let shape: ResponseShape = serde_json::from_str(obj).map_err(|_| ResponseError::NotJson)?;
    let actions = shape.actions.ok_or(ResponseError::MissingActions)?;
    Ok(actions
        .into_iter()
        .map(|v| match v {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        })
        .collect())
}

/// Skeleton file: `{"actions": [...]}`, one step per entry in the full
/// step syntax.
#[derive(Serialize, Deserialize)]
pub struct SkeletonFile {
    pub actions: Vec<String>,
}

pub fn parse_skeleton_json(text: &str) -> Result<SkeletonPlan, SkeletonError> {
    let lines = parse_llm_response(text).map_err(|e| SkeletonError::Parse(e.to_string()))?;
    let steps = lines
        .iter()
        .enumerate()
        .map(|(index, l)| parse_step(l).map_err(|message| SkeletonError::InvalidLine { index, message }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SkeletonPlan::Seq(steps))
}

pub fn skeleton_to_json(plan: &SkeletonPlan) -> String {
    let file = SkeletonFile {
        actions: plan.elements().iter().map(|p| p.to_string()).collect(),
    };
    serde_json::to_string_pretty(&file).expect("skeleton serialization cannot fail")
}

/// Verb -> number of object arguments.
pub type VerbTable = BTreeMap<String, usize>;

pub fn verb_table(sig: &Signature) -> VerbTable {
    sig.actions
        .iter()
        .map(|(name, a)| (name.clone(), a.object_arity()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnknownVerb,
    Arity,
    Response,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierError {
    pub line: usize,
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub valid: bool,
    pub errors: Vec<VerifierError>,
}

impl VerifierReport {
    fn from_errors(errors: Vec<VerifierError>) -> Self {
        VerifierReport {
            valid: errors.is_empty(),
            errors,
        }
    }

    /// A report for a response that could not be read at all.
    pub fn response_error(err: &ResponseError) -> Self {
        Self::from_errors(vec![VerifierError {
            line: 0,
            code: ErrorCode::Response,
            message: err.to_string(),
        }])
    }

    /// The error text fed back to the model.
    pub fn feedback(&self) -> String {
        self.errors
            .iter()
            .map(|e| e.message.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Checks plan lines against the verb table. Categories are not checked.
pub fn grammar_verify(lines: &[String], verbs: &VerbTable) -> VerifierReport {
    let mut errors = Vec::new();
    for (i, text) in lines.iter().enumerate() {
        let line = match parse_plan_line(text) {
            Ok(l) => l,
            Err(message) => {
                errors.push(VerifierError {
                    line: i,
                    code: ErrorCode::Malformed,
                    message: format!("Step {}: {message}.", i + 1),
                });
                continue;
            }
        };
        match verbs.get(&line.verb) {
            None => errors.push(VerifierError {
                line: i,
                code: ErrorCode::UnknownVerb,
                message: format!(
                    "Unknown action \"{}\". Please use only the permissible actions.",
                    line.verb
                ),
            }),
            Some(&n) if n != line.targets.len() => errors.push(VerifierError {
                line: i,
                code: ErrorCode::Arity,
                message: format!(
                    "Invalid argument number. Please check action format of \"{}\".",
                    line.verb
                ),
            }),
            Some(_) => {}
        }
    }
    VerifierReport::from_errors(errors)
}

/// Turns verified plan lines into a sequence of action steps.
pub fn to_skeleton(lines: &[String]) -> Result<SkeletonPlan, SkeletonError> {
    lines
        .iter()
        .enumerate()
        .map(|(index, l)| {
            parse_plan_line(l)
                .map(|pl| {
                    SkeletonPlan::Action(ActionStep {
                        verb: pl.verb,
                        args: pl.targets.iter().map(|t| StepArg::parse(t)).collect(),
                    })
                })
                .map_err(|message| SkeletonError::InvalidLine { index, message })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(SkeletonPlan::Seq)
}

/// Where a plan element was matched: an action index or a state index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Position {
    Action(usize),
    State(usize),
}

/// Evidence that a trajectory satisfies a plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    /// One position per flattened element, in order.
    pub positions: Vec<Position>,
    pub binding: Binding,
}

impl Witness {
    /// Split indices of the flattened sequence: element `k` lies in the
    /// trajectory segment `splits[k]..=splits[k+1]` of state indices.
    pub fn splits(&self, horizon: usize) -> Vec<usize> {
        let mut out = vec![0];
        for p in &self.positions {
            out.push(match *p {
                Position::Action(i) => i + 1,
                Position::State(j) => j,
            });
        }
        out.push(horizon);
        out
    }
}

/// Earliest step index an element may use, given its predecessor.
pub(crate) fn lower_bound(prev: Option<Position>) -> usize {
    match prev {
        None => 0,
        Some(Position::Action(i)) => i + 1,
        Some(Position::State(j)) => j,
    }
}

/// Extends `binding` so that `step` matches `action`, if possible.
pub(crate) fn match_action(dom: &GroundDomain, step: &ActionStep, action: usize, binding: &Binding) -> Option<Binding> {
    let act = &dom.actions[action];
    if act.verb() != step.verb || step.args.len() > act.objects().len() {
        return None;
    }
    let mut b = binding.clone();
    for (arg, &obj) in step.args.iter().zip(act.objects()) {
        match arg {
            StepArg::Id(id) if *id == obj => {}
            StepArg::Id(_) => return None,
            StepArg::Category(c) => match b.get(c) {
                Some(&bound) if bound == obj => {}
                Some(_) => return None,
                None if dom.category_of(obj) == Some(c.as_str()) => {
                    b.insert(c.clone(), obj);
                }
                None => return None,
            },
        }
    }
    Some(b)
}

fn resolve_pattern(dom: &GroundDomain, p: &FluentPattern, binding: &Binding) -> Option<usize> {
    let args = p
        .args
        .iter()
        .map(|a| match a {
            StepArg::Id(id) => Some(*id),
            StepArg::Category(c) => binding.get(c).copied(),
        })
        .collect::<Option<Vec<_>>>()?;
    dom.fluent_id(&GroundAtom::new(p.name.clone(), args))
}

/// Every extension of `binding` over the formula's categories under which
/// the formula holds in `state`, in ascending order.
pub(crate) fn match_formula(dom: &GroundDomain, f: &Formula, state: &State, binding: &Binding) -> Vec<Binding> {
    let mut ps = Vec::new();
    f.patterns(&mut ps);
    let mut free: Vec<&str> = ps
        .iter()
        .flat_map(|p| p.args.iter())
        .filter_map(|a| match a {
            StepArg::Category(c) if !binding.contains_key(c) => Some(c.as_str()),
            _ => None,
        })
        .collect();
    free.sort_unstable();
    free.dedup();
    let choices: Vec<Vec<EntityId>> = free
        .iter()
        .map(|c| dom.entities().filter(|(_, cat)| cat == c).map(|(id, _)| id).collect())
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; free.len()];
    if choices.iter().any(Vec::is_empty) {
        return out;
    }
    loop {
        let mut b = binding.clone();
        for (k, c) in free.iter().enumerate() {
            b.insert(c.to_string(), choices[k][idx[k]]);
        }
        let holds = |p: &FluentPattern| resolve_pattern(dom, p, &b).is_some_and(|id| state.contains(id));
        if f.eval(&holds) {
            out.push(b);
        }
        let mut k = free.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Decides whether `tr` satisfies `plan`, returning a witness if so.
///
/// Elements are matched in order; each action element is matched to a
/// later action than its predecessor, each fluent element to a state no
/// earlier than the predecessor's. Categories are bound consistently,
/// starting from the trajectory's own binding.
pub fn satisfies(
    dom: &GroundDomain,
    tr: &Trajectory,
    plan: &SkeletonPlan,
    library: &BTreeMap<String, SkeletonPlan>,
) -> Result<Option<Witness>, SkeletonError> {
    let elements = plan.flatten(library)?;
    let mut positions = Vec::with_capacity(elements.len());
    Ok(search(dom, tr, &elements, None, &tr.binding, &mut positions))
}

fn search(
    dom: &GroundDomain,
    tr: &Trajectory,
    elements: &[Element],
    prev: Option<Position>,
    binding: &Binding,
    positions: &mut Vec<Position>,
) -> Option<Witness> {
    let Some((first, rest)) = elements.split_first() else {
        return Some(Witness {
            positions: positions.clone(),
            binding: binding.clone(),
        });
    };
    let lo = lower_bound(prev);
    // For a fixed binding the earliest match dominates later ones, so only
    // the first position per distinct binding is explored.
    let mut tried: BTreeSet<Binding> = BTreeSet::new();
    match first {
        Element::Action(step) => {
            for (i, &a) in tr.actions.iter().enumerate().skip(lo) {
                let Some(b) = match_action(dom, step, a, binding) else {
                    continue;
                };
                if !tried.insert(b.clone()) {
                    continue;
                }
                positions.push(Position::Action(i));
                if let Some(w) = search(dom, tr, rest, Some(Position::Action(i)), &b, positions) {
                    return Some(w);
                }
                positions.pop();
            }
        }
        Element::Fluent(f) => {
            for (j, state) in tr.states.iter().enumerate().skip(lo) {
                for b in match_formula(dom, f, state, binding) {
                    if !tried.insert(b.clone()) {
                        continue;
                    }
                    positions.push(Position::State(j));
                    if let Some(w) = search(dom, tr, rest, Some(Position::State(j)), &b, positions) {
                        return Some(w);
                    }
                    positions.pop();
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_model::parse_action_model;
    use crate::env_graph::parse_graph;
    use proptest::prelude::*;

    fn steps(lines: &[&str]) -> SkeletonPlan {
        SkeletonPlan::Seq(lines.iter().map(|l| parse_step(l).unwrap()).collect())
    }

    #[test]
    fn parses_llm_response() {
        let r = r#"{"thoughts":"...","actions":["[find] <detergent>","[switchon] <washing_machine>"]}"#;
        let lines = parse_llm_response(r).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            parse_plan_line(&lines[0]).unwrap(),
            PlanLine {
                verb: "find".into(),
                targets: vec!["detergent".into()]
            }
        );
        assert!(parse_llm_response(r#"{"thoughts":"...","actions":[]}"#)
            .unwrap()
            .is_empty());
        assert_eq!(parse_llm_response("I cannot help"), Err(ResponseError::NotJson));
        assert_eq!(ResponseError::NotJson.to_string(), "response is not parseable JSON");
        assert_eq!(parse_llm_response(r#"{"plan":[]}"#), Err(ResponseError::MissingActions));
    }

    #[test]
    fn json_embedded_in_prose() {
        let r = "Sure! Here it is: {\"actions\": [\"[walk] <kitchen>\"], \"note\": \"a } b\"} hope it helps";
        assert_eq!(parse_llm_response(r).unwrap(), vec!["[walk] <kitchen>"]);
    }

    fn verbs() -> VerbTable {
        [("grab", 1), ("walk", 1), ("putin", 2)]
            .into_iter()
            .map(|(v, n)| (v.to_string(), n))
            .collect()
    }

    #[test]
    fn verifier_messages() {
        let r = grammar_verify(&["[grab]".to_string()], &verbs());
        assert!(!r.valid);
        assert!(r.errors[0]
            .message
            .contains("Invalid argument number. Please check action format of \"grab\""));
        let r = grammar_verify(&["[fly] <sofa>".to_string()], &verbs());
        assert_eq!(r.errors[0].code, ErrorCode::UnknownVerb);
        let r = grammar_verify(&["walk to kitchen".to_string()], &verbs());
        assert_eq!(r.errors[0].code, ErrorCode::Malformed);
        let r = grammar_verify(
            &["[walk] <kitchen>".to_string(), "[putin] <cup> <sink>".to_string()],
            &verbs(),
        );
        assert!(r.valid && r.errors.is_empty());
    }

    #[test]
    fn verifier_ignores_categories() {
        let r = grammar_verify(&["[grab] <unicorn>".to_string()], &verbs());
        assert!(r.valid);
    }

    #[test]
    fn to_skeleton_shapes() {
        let four: Vec<String> = [
            "[walk] <laundry_room>",
            "[putin] <clothes_pants> <washing_machine>",
            "[putin] <detergent> <washing_machine>",
            "[switchon] <washing_machine>",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        match to_skeleton(&four).unwrap() {
            SkeletonPlan::Seq(xs) => {
                assert_eq!(xs.len(), 4);
                assert!(xs.iter().all(|x| matches!(x, SkeletonPlan::Action(_))));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(to_skeleton(&four[..1]).unwrap().elements().len(), 1);
        assert_eq!(to_skeleton(&[]).unwrap(), SkeletonPlan::empty());
    }

    #[test]
    fn step_syntax_round_trip() {
        for s in [
            "[putin] <clothes_pants> <washing_machine>",
            "[wash] <7>",
            "?clean(clothes_pants) & -on(7)",
            "?(a | b) & -(c & d)",
            "@load",
        ] {
            let p = parse_step(s).unwrap();
            assert_eq!(p.to_string(), s);
            assert_eq!(parse_step(&p.to_string()).unwrap(), p);
        }
    }

    #[test]
    fn dnf_of_formula() {
        let SkeletonPlan::Fluent(f) = parse_step("?(a | b) & -c").unwrap() else {
            panic!()
        };
        let d = f.dnf();
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|c| c.len() == 2 && !c[1].0));
        let SkeletonPlan::Fluent(f) = parse_step("?-(a & b)").unwrap() else {
            panic!()
        };
        assert_eq!(f.dnf().len(), 2);
    }

    const TOY: &str = "
        fluent dirty(entity), clean(entity), found(character, entity).
        action find(character, entity), wash(character, entity).
        subtask prepare = [find] <cloth>.
        subtask loop = @loop.
    ";

    fn toy() -> (GroundDomain, BTreeMap<String, SkeletonPlan>) {
        let t = parse_action_model(&TOY.replace("subtask loop = @loop.", "")).unwrap();
        let g = parse_graph(
            r#"{"entities":[{"id":1,"category":"character"},{"id":7,"category":"cloth"},
                            {"id":8,"category":"cloth"}],"relations":[]}"#,
        )
        .unwrap();
        let d = GroundDomain::new(&t, &g).unwrap();
        (d, t.signature.subtasks)
    }

    fn traj(d: &GroundDomain, acts: &[&str], s0: &[&str]) -> Trajectory {
        let id = |s: &str| {
            d.actions
                .iter()
                .position(|a| a.to_string() == s)
                .unwrap_or_else(|| panic!("no action {s}"))
        };
        let mut first = State::empty(d.num_fluents());
        for f in s0 {
            first.insert(d.fluents.iter().position(|x| x.to_string() == *f).unwrap());
        }
        let mut states = vec![first];
        for _ in acts {
            states.push(State::empty(d.num_fluents()));
        }
        Trajectory {
            states,
            actions: acts.iter().map(|a| id(a)).collect(),
            binding: Binding::new(),
        }
    }

    #[test]
    fn single_action_base_case() {
        let (d, lib) = toy();
        let tr = traj(&d, &["wash(1, 7)"], &[]);
        let w = satisfies(&d, &tr, &steps(&["[wash]"]), &lib).unwrap().unwrap();
        assert_eq!(w.positions, vec![Position::Action(0)]);
    }

    #[test]
    fn order_matters() {
        let (d, lib) = toy();
        let tr = traj(&d, &["find(1, 7)", "wash(1, 7)"], &[]);
        assert!(satisfies(&d, &tr, &steps(&["[wash]", "[find]"]), &lib)
            .unwrap()
            .is_none());
        assert!(satisfies(&d, &tr, &steps(&["[find]", "[wash]"]), &lib)
            .unwrap()
            .is_some());
    }

    #[test]
    fn fluent_spec_at_first_state() {
        let (d, lib) = toy();
        let tr = traj(&d, &["wash(1, 7)"], &["dirty(7)"]);
        assert!(satisfies(&d, &tr, &steps(&["?dirty(7)"]), &lib).unwrap().is_some());
        assert!(satisfies(&d, &tr, &steps(&["?dirty(8)"]), &lib).unwrap().is_none());
    }

    #[test]
    fn category_binding_is_consistent() {
        let (d, lib) = toy();
        let tr = traj(&d, &["find(1, 7)", "wash(1, 8)"], &[]);
        let plan = steps(&["[find] <cloth>", "[wash] <cloth>"]);
        assert!(satisfies(&d, &tr, &plan, &lib).unwrap().is_none());
        let tr = traj(&d, &["find(1, 8)", "find(1, 7)", "wash(1, 7)"], &[]);
        let w = satisfies(&d, &tr, &plan, &lib).unwrap().unwrap();
        assert_eq!(w.binding["cloth"], 7);
        assert_eq!(w.positions, vec![Position::Action(1), Position::Action(2)]);
    }

    #[test]
    fn subtask_expansion() {
        let (d, lib) = toy();
        let tr = traj(&d, &["find(1, 7)", "wash(1, 7)"], &[]);
        let plan = steps(&["@prepare", "[wash] <cloth>"]);
        assert!(satisfies(&d, &tr, &plan, &lib).unwrap().is_some());
        assert_eq!(
            satisfies(&d, &tr, &steps(&["@nope"]), &lib),
            Err(SkeletonError::UnknownSubtask("nope".into()))
        );
    }

    #[test]
    fn cyclic_subtasks_rejected_by_model() {
        assert!(parse_action_model(TOY).is_err());
    }

    #[test]
    fn sequencing_witness_gives_prefix() {
        let (d, lib) = toy();
        let tr = traj(&d, &["find(1, 7)", "find(1, 8)", "wash(1, 7)"], &[]);
        let plan = steps(&["[find]", "[wash]"]);
        let w = satisfies(&d, &tr, &plan, &lib).unwrap().unwrap();
        let cut = w.splits(tr.actions.len())[1];
        let prefix = Trajectory {
            states: tr.states[..=cut].to_vec(),
            actions: tr.actions[..cut].to_vec(),
            binding: Binding::new(),
        };
        assert!(satisfies(&d, &prefix, &steps(&["[find]"]), &lib).unwrap().is_some());
    }

    proptest! {
        #[test]
        fn empty_plan_always_satisfied(acts in proptest::collection::vec(0usize..4, 0..6)) {
            let (d, lib) = toy();
            let names: Vec<String> = acts.iter().map(|&i| d.actions[i].to_string()).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let tr = traj(&d, &refs, &[]);
            prop_assert!(satisfies(&d, &tr, &SkeletonPlan::empty(), &lib).unwrap().is_some());
        }

        #[test]
        fn verifier_is_total(lines in proptest::collection::vec(".*", 0..5)) {
            let r = grammar_verify(&lines, &verbs());
            prop_assert_eq!(r.valid, r.errors.is_empty());
        }

        #[test]
        fn response_parser_is_total(text in ".*") {
            let _ = parse_llm_response(&text);
        }
    }
}
