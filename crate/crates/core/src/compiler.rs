//! Translation of an action model, a scene and a skeleton into a
//! time-indexed ASP program, and decoding of its answer sets.
//!
//! Emitted blocks: `base` for facts and choices that do not depend on
//! time, `state(t)` for laws evaluated within one state, `step(t)` for
//! laws linking state `t` to `t+1`, and `check(t)` for the goal query.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::action_model::{
    ActionId, Arg, Atom, CausalRule, CausalTheory, GroundAtom, GroundDomain, GroundingError, Literal, RuleKind,
    ANY_SORT,
};
use crate::asp::{
    ground_statements, parse_program, AspAtom, AspProgram, AspRule, BodyLit, ChoiceElem, GroundError, Head, Section,
    Statement, Symbol, Term,
};
use crate::env_graph::{EntityId, EnvGraph};
use crate::planner::{related_actions, State, Trajectory};
use crate::skeleton::{ActionStep, Binding, Element, FluentPattern, SkeletonError, SkeletonPlan, StepArg};
use crate::stable::{answer_sets, AtomSet, GroundProgram, StableError};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("`{0}` is not a valid ASP constant")]
    BadConstant(String),
    #[error("emitted program does not parse: {0}")]
    Reparse(String),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Stable(#[from] StableError),
    #[error("answer set does not describe a trajectory: {0}")]
    Decode(String),
}

/// A compiled program plus what is needed to read its answer sets.
#[derive(Clone, Debug)]
pub struct Compilation {
    pub program: AspProgram,
    pub domain: GroundDomain,
    pub elements: Vec<Element>,
    pub actions: Vec<ActionId>,
    pub horizon: usize,
}

fn ident_ok(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_lowercase()) && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn cst(s: &str) -> Result<Term, CompileError> {
    if ident_ok(s) {
        Ok(Term::cst(s))
    } else {
        Err(CompileError::BadConstant(s.to_string()))
    }
}

fn id(e: EntityId) -> Term {
    Term::Int(e as i64)
}

fn atom(pred: &str, args: Vec<Term>) -> AspAtom {
    AspAtom::new(pred, args)
}

fn arg_term(a: &Arg) -> Term {
    match a {
        Arg::Var(v) => Term::var(v),
        Arg::Id(e) => id(*e),
    }
}

fn model_term(a: &Atom) -> Term {
    Term::func(&a.name, a.args.iter().map(arg_term).collect())
}

fn ground_term(a: &GroundAtom) -> Term {
    Term::func(&a.name, a.args.iter().map(|&e| id(e)).collect())
}

/// `h(f(..), t+offset)`.
fn holds(f: Term, offset: i64) -> AspAtom {
    atom("h", vec![f, Term::time(offset)])
}

/// `occurs(C, verb(objects), t)` for an action atom whose first argument
/// is the actor.
fn occurs(a: &Atom) -> AspAtom {
    let actor = arg_term(&a.args[0]);
    let action = Term::func(&a.name, a.args[1..].iter().map(arg_term).collect());
    atom("occurs", vec![actor, action, Term::time(0)])
}

fn lit(l: &Literal, offset: i64) -> BodyLit {
    let a = holds(model_term(&l.atom), offset);
    if l.positive {
        BodyLit::pos(a)
    } else {
        BodyLit::neg(a)
    }
}

/// Sort constraints on the variables of one rule.
struct Positions<'a> {
    theory: &'a CausalTheory,
    positive: BTreeMap<String, Vec<String>>,
    all: BTreeMap<String, Vec<String>>,
    order: Vec<String>,
}

impl<'a> Positions<'a> {
    fn new(theory: &'a CausalTheory) -> Self {
        Positions {
            theory,
            positive: BTreeMap::new(),
            all: BTreeMap::new(),
            order: Vec::new(),
        }
    }

    fn add(&mut self, a: &Atom, params: &[String], positive: bool) {
        for (arg, sort) in a.args.iter().zip(params) {
            if let Arg::Var(v) = arg {
                if !self.all.contains_key(v) {
                    self.order.push(v.clone());
                }
                let all = self.all.entry(v.clone()).or_default();
                if !all.contains(sort) {
                    all.push(sort.clone());
                }
                if positive {
                    self.positive.entry(v.clone()).or_default().push(sort.clone());
                }
            }
        }
    }

    fn fluent(&mut self, a: &Atom, positive: bool) {
        let params = self.theory.signature.fluents[&a.name].params.clone();
        self.add(a, &params, positive);
    }

    fn action(&mut self, a: &Atom) {
        let params = self.theory.signature.actions[&a.name].schema.params.clone();
        self.add(a, &params, true);
    }

    /// `has_sort(V, s)` for every position sort `s` of `V` that no
    /// positive occurrence already implies.
    fn guards(&self, used: &mut BTreeSet<String>) -> Vec<BodyLit> {
        let sig = &self.theory.signature;
        let within = |b: &str, s: &str| match (sig.categories_of(b), sig.categories_of(s)) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(cb), Some(cs)) => cb.is_subset(&cs),
        };
        let mut out = Vec::new();
        for v in &self.order {
            let pos = self.positive.get(v).map(Vec::as_slice).unwrap_or_default();
            for s in &self.all[v] {
                if s == ANY_SORT && !pos.is_empty() {
                    continue;
                }
                if pos.iter().any(|b| within(b, s)) {
                    continue;
                }
                used.insert(s.clone());
                out.push(BodyLit::pos(atom("has_sort", vec![Term::var(v), Term::cst(s)])));
            }
        }
        out
    }
}

fn with_guards(mut body: Vec<BodyLit>, pos: &Positions, used: &mut BTreeSet<String>) -> Vec<BodyLit> {
    body.extend(pos.guards(used));
    body
}

fn compile_rule(
    theory: &CausalTheory,
    rule: &CausalRule,
    used: &mut BTreeSet<String>,
    state: &mut Vec<AspRule>,
    step: &mut Vec<AspRule>,
) {
    let mut pos = Positions::new(theory);
    match rule.kind {
        RuleKind::Dynamic => {
            let head = rule.head.as_ref().expect("dynamic law has a head");
            let action = rule.action.as_ref().expect("dynamic law has an action");
            pos.action(action);
            rule.after_part.iter().for_each(|l| pos.fluent(&l.atom, l.positive));
            rule.if_part.iter().for_each(|l| pos.fluent(&l.atom, l.positive));
            pos.fluent(head, false);
            let mut body = vec![BodyLit::pos(occurs(action))];
            body.extend(rule.after_part.iter().map(|l| lit(l, 0)));
            body.extend(rule.if_part.iter().map(|l| lit(l, 1)));
            step.push(AspRule::new(holds(model_term(head), 1), with_guards(body, &pos, used)));
        }
        RuleKind::Static => {
            let head = rule.head.as_ref().expect("static law has a head");
            rule.if_part.iter().for_each(|l| pos.fluent(&l.atom, l.positive));
            pos.fluent(head, false);
            let body = rule.if_part.iter().map(|l| lit(l, 0)).collect();
            state.push(AspRule::new(holds(model_term(head), 0), with_guards(body, &pos, used)));
        }
        RuleKind::Inertial => {
            let head = rule.head.as_ref().expect("inertial law names a fluent");
            pos.fluent(head, true);
            let term = model_term(head);
            let mut body = vec![BodyLit::pos(holds(term.clone(), 0))];
            for comp in theory.signature.complements_of(&head.name) {
                body.push(BodyLit::neg(holds(Term::func(comp, term_args(&term)), 1)));
            }
            step.push(AspRule::new(holds(term, 1), body));
        }
        RuleKind::Nonexecutable => {
            let action = rule.action.as_ref().expect("nonexecutable law names an action");
            pos.action(action);
            rule.after_part.iter().for_each(|l| pos.fluent(&l.atom, l.positive));
            let mut body = vec![BodyLit::pos(occurs(action))];
            body.extend(rule.after_part.iter().map(|l| lit(l, 0)));
            step.push(AspRule::constraint(with_guards(body, &pos, used)));
        }
        RuleKind::Constraint => {
            rule.if_part.iter().for_each(|l| pos.fluent(&l.atom, l.positive));
            let body = rule.if_part.iter().map(|l| lit(l, 0)).collect();
            state.push(AspRule::constraint(with_guards(body, &pos, used)));
        }
    }
}

fn term_args(t: &Term) -> Vec<Term> {
    match t {
        Term::Func(_, args) => args.clone(),
        _ => Vec::new(),
    }
}

/// Variables named after the initials of `sorts`, numbered on collision.
fn sort_vars(sorts: &[String]) -> Vec<Term> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    sorts
        .iter()
        .map(|s| {
            let initial = s.chars().next().map_or('X', |c| c.to_ascii_uppercase()).to_string();
            let n = seen.entry(initial.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                Term::Var(initial)
            } else {
                Term::Var(format!("{initial}{n}"))
            }
        })
        .collect()
}

/// Rules of the action model, split into the per-state and per-step
/// blocks. Returns the sorts used in guards.
pub fn compile_theory(theory: &CausalTheory) -> (Section, BTreeSet<String>) {
    let mut used = BTreeSet::new();
    let mut state = Vec::new();
    let mut step = Vec::new();
    for rule in &theory.rules {
        compile_rule(theory, rule, &mut used, &mut state, &mut step);
    }
    for (a, b) in &theory.signature.complements {
        let vars = sort_vars(&theory.signature.fluents[a].params);
        state.push(AspRule::constraint(vec![
            BodyLit::pos(holds(Term::func(a, vars.clone()), 0)),
            BodyLit::pos(holds(Term::func(b, vars), 0)),
        ]));
    }
    let mut sec = Section::new("action model");
    sec.block("state", Some("t"));
    state.into_iter().for_each(|r| sec.rule(r));
    sec.block("step", Some("t"));
    step.into_iter().for_each(|r| sec.rule(r));
    (sec, used)
}

/// Scene facts and the initial fluents.
pub fn compile_initial_state(graph: &EnvGraph, dom: &GroundDomain) -> Result<Section, CompileError> {
    let mut sec = Section::new("initial state");
    sec.block("base", None);
    for e in graph.entities() {
        sec.rule(AspRule::fact(atom("is", vec![id(e.id), cst(&e.category)?])));
    }
    for e in graph.entities() {
        for s in &e.states {
            sec.rule(AspRule::fact(atom("state", vec![id(e.id), cst(s)?])));
        }
    }
    for r in graph.relations() {
        sec.rule(AspRule::fact(atom(
            "relation",
            vec![cst(&r.kind)?, id(r.from), id(r.to)],
        )));
    }
    for &f in &dom.initial {
        sec.rule(AspRule::fact(atom(
            "h",
            vec![ground_term(&dom.fluents[f]), Term::Int(0)],
        )));
    }
    Ok(sec)
}

fn category_vars(elements: &[Element]) -> BTreeMap<String, String> {
    let mut cats = BTreeSet::new();
    let mut note = |a: &StepArg| {
        if let StepArg::Category(c) = a {
            cats.insert(c.clone());
        }
    };
    for e in elements {
        match e {
            Element::Action(s) => s.args.iter().for_each(&mut note),
            Element::Fluent(f) => f
                .dnf()
                .iter()
                .flatten()
                .for_each(|(_, p)| p.args.iter().for_each(&mut note)),
        }
    }
    cats.into_iter()
        .enumerate()
        .map(|(i, c)| (c, format!("X{}", i + 1)))
        .collect()
}

struct ArgTerms<'a> {
    vars: &'a BTreeMap<String, String>,
    binds: Vec<BodyLit>,
}

impl ArgTerms<'_> {
    fn term(&mut self, a: &StepArg) -> Result<Term, CompileError> {
        Ok(match a {
            StepArg::Id(e) => id(*e),
            StepArg::Category(c) => {
                let v = Term::var(&self.vars[c]);
                let b = BodyLit::pos(atom("bind", vec![cst(c)?, v.clone()]));
                if !self.binds.contains(&b) {
                    self.binds.push(b);
                }
                v
            }
        })
    }
}

/// `occurs(C, verb(..), t)` for a step, with the `bind` atoms its
/// categories need. Omitted trailing arguments become fresh variables.
fn action_milestone(
    theory: &CausalTheory,
    step: &ActionStep,
    vars: &BTreeMap<String, String>,
    fresh: &mut usize,
) -> Result<Vec<BodyLit>, CompileError> {
    let mut at = ArgTerms {
        vars,
        binds: Vec::new(),
    };
    let mut args = step.args.iter().map(|a| at.term(a)).collect::<Result<Vec<_>, _>>()?;
    let arity = theory
        .signature
        .actions
        .get(&step.verb)
        .map_or(step.args.len(), |a| a.object_arity());
    while args.len() < arity {
        *fresh += 1;
        args.push(Term::Var(format!("Y{fresh}")));
    }
    let mut body = vec![BodyLit::pos(atom(
        "occurs",
        vec![Term::var("C"), Term::func(&step.verb, args), Term::time(0)],
    ))];
    body.extend(at.binds);
    Ok(body)
}

fn pattern_atom(p: &FluentPattern, at: &mut ArgTerms) -> Result<AspAtom, CompileError> {
    let args = p.args.iter().map(|a| at.term(a)).collect::<Result<Vec<_>, _>>()?;
    Ok(holds(Term::func(&p.name, args), 0))
}

fn reached(k: usize, offset: i64) -> AspAtom {
    atom("reached", vec![Term::Int(k as i64), Term::time(offset)])
}

/// Milestone rules tracking progress through the flattened skeleton, the
/// binding and action choices, and the relevant-action facts.
pub fn compile_skeleton(
    theory: &CausalTheory,
    dom: &GroundDomain,
    elements: &[Element],
    actions: &[ActionId],
) -> Result<Section, CompileError> {
    let vars = category_vars(elements);
    let mut sec = Section::new("skeleton");
    sec.block("base", None);
    for a in actions {
        let act = &dom.actions[*a];
        let term = Term::func(act.verb(), act.objects().iter().map(|&e| id(e)).collect());
        sec.rule(AspRule::fact(atom("related_action", vec![term])));
    }
    for cat in vars.keys() {
        sec.rule(AspRule {
            head: Head::Choice {
                lower: 1,
                upper: 1,
                elems: vec![ChoiceElem {
                    atom: atom("bind", vec![cst(cat)?, Term::var("X")]),
                    condition: vec![atom("is", vec![Term::var("X"), cst(cat)?])],
                }],
            },
            body: Vec::new(),
        });
    }

    let mut state_rules = Vec::new();
    let mut step_rules = vec![AspRule {
        head: Head::Choice {
            lower: 1,
            upper: 1,
            elems: vec![ChoiceElem {
                atom: atom("occurs", vec![Term::var("C"), Term::var("A"), Term::time(0)]),
                condition: vec![
                    atom("action_of", vec![Term::var("C"), Term::var("A")]),
                    atom("related_action", vec![Term::var("A")]),
                ],
            }],
        },
        body: vec![BodyLit::pos(atom("is", vec![Term::var("C"), Term::cst("character")]))],
    }];
    let mut fresh = 0;
    for (i, e) in elements.iter().enumerate() {
        let k = i + 1;
        let prev = if i == 0 {
            None
        } else {
            let off = if elements[i - 1].is_action() { -1 } else { 0 };
            Some(BodyLit::pos(reached(k - 1, off)))
        };
        match e {
            Element::Action(step) => {
                let mut body = action_milestone(theory, step, &vars, &mut fresh)?;
                body.extend(prev);
                step_rules.push(AspRule::new(reached(k, 0), body));
            }
            Element::Fluent(f) => {
                for conj in f.dnf() {
                    let mut at = ArgTerms {
                        vars: &vars,
                        binds: Vec::new(),
                    };
                    let mut lits = Vec::new();
                    for (positive, p) in &conj {
                        let a = pattern_atom(p, &mut at)?;
                        lits.push(if *positive { BodyLit::pos(a) } else { BodyLit::neg(a) });
                    }
                    lits.sort_by_key(|l| !l.positive);
                    let mut body = lits;
                    body.extend(at.binds);
                    body.extend(prev.clone());
                    state_rules.push(AspRule::new(reached(k, 0), body));
                }
            }
        }
    }
    for k in 1..=elements.len() {
        step_rules.push(AspRule::new(reached(k, 1), vec![BodyLit::pos(reached(k, 0))]));
    }
    sec.block("state", Some("t"));
    state_rules.into_iter().for_each(|r| sec.rule(r));
    sec.block("step", Some("t"));
    step_rules.into_iter().for_each(|r| sec.rule(r));
    Ok(sec)
}

fn compile_check(elements: &[Element]) -> Section {
    let mut sec = Section::new("check");
    sec.block("check", Some("t"));
    let query = atom("query", vec![Term::cst("t")]);
    sec.push(Statement::External(query.clone()));
    if !elements.is_empty() {
        sec.rule(AspRule::constraint(vec![
            BodyLit::pos(query),
            BodyLit::neg(reached(elements.len(), 0)),
        ]));
    }
    sec
}

/// Compiles a theory, scene and skeleton for exactly `horizon` steps.
pub fn compile(
    theory: &CausalTheory,
    graph: &EnvGraph,
    plan: &SkeletonPlan,
    horizon: usize,
) -> Result<Compilation, CompileError> {
    if horizon == 0 {
        return Err(CompileError::ZeroHorizon);
    }
    let dom = GroundDomain::new(theory, graph)?;
    let elements = plan.flatten(&theory.signature.subtasks)?;
    let actions = {
        let mut a = related_actions(&dom, graph, theory, &elements);
        a.sort_by(|&x, &y| dom.actions[x].atom.cmp(&dom.actions[y].atom));
        a
    };
    let (model, used) = compile_theory(theory);

    let mut decl = Section::new("declarations");
    decl.push(Statement::Const {
        name: "horizon".into(),
        value: horizon as i64,
    });
    decl.block("base", None);
    for sort in &used {
        for e in graph.entities() {
            if theory.signature.sort_admits(sort, &e.category) {
                decl.rule(AspRule::fact(atom("has_sort", vec![id(e.id), cst(sort)?])));
            }
        }
    }
    for act in &dom.actions {
        let term = Term::func(act.verb(), act.objects().iter().map(|&e| id(e)).collect());
        decl.rule(AspRule::fact(atom("action_of", vec![id(act.actor()), term])));
    }

    let program = AspProgram {
        sections: vec![
            decl,
            model,
            compile_initial_state(graph, &dom)?,
            compile_skeleton(theory, &dom, &elements, &actions)?,
            compile_check(&elements),
        ],
    };
    Ok(Compilation {
        program,
        domain: dom,
        elements,
        actions,
        horizon,
    })
}

fn entity(s: &Symbol) -> Result<EntityId, CompileError> {
    s.as_int()
        .and_then(|i| EntityId::try_from(i).ok())
        .ok_or_else(|| CompileError::Decode(format!("`{s}` is not an entity id")))
}

fn ground_atom_of(s: &Symbol, actor: Option<EntityId>) -> Result<GroundAtom, CompileError> {
    let mut args: Vec<EntityId> = actor.into_iter().collect();
    for a in s.args() {
        args.push(entity(a)?);
    }
    Ok(GroundAtom::new(s.name(), args))
}

impl Compilation {
    pub fn text(&self) -> String {
        self.program.emit_text()
    }

    /// Grounds the emitted text, going through the parser so that what
    /// is solved is exactly what is written out.
    pub fn ground(&self) -> Result<GroundProgram, CompileError> {
        let stmts = parse_program(&self.text()).map_err(|e| CompileError::Reparse(e.to_string()))?;
        Ok(ground_statements(&stmts, Some(self.horizon))?)
    }

    /// Reads the trajectory and binding out of one answer set.
    pub fn decode(&self, prog: &GroundProgram, set: &AtomSet) -> Result<Trajectory, CompileError> {
        let dom = &self.domain;
        let n = self.horizon;
        let mut actions: Vec<Option<ActionId>> = vec![None; n];
        let mut states = vec![State::empty(dom.num_fluents()); n + 1];
        let mut binding = Binding::new();
        for &i in set {
            let s = &prog.atoms[i];
            let args = s.args();
            match (s.name(), args.len()) {
                ("occurs", 3) => {
                    let t = args[2].as_int().map(|t| t as usize).filter(|&t| t < n);
                    let t = t.ok_or_else(|| CompileError::Decode(format!("bad time in `{s}`")))?;
                    let atom = ground_atom_of(&args[1], Some(entity(&args[0])?))?;
                    let a = dom
                        .action_id(&atom)
                        .ok_or_else(|| CompileError::Decode(format!("unknown action `{s}`")))?;
                    if actions[t].replace(a).is_some() {
                        return Err(CompileError::Decode(format!("two actions at step {t}")));
                    }
                }
                ("h", 2) => {
                    let t = args[1].as_int().map(|t| t as usize).filter(|&t| t <= n);
                    let t = t.ok_or_else(|| CompileError::Decode(format!("bad time in `{s}`")))?;
                    if let Some(f) = dom.fluent_id(&ground_atom_of(&args[0], None)?) {
                        states[t].insert(f);
                    }
                }
                ("bind", 2) => {
                    binding.insert(args[0].to_string(), entity(&args[1])?);
                }
                _ => {}
            }
        }
        let actions = actions
            .into_iter()
            .enumerate()
            .map(|(t, a)| a.ok_or_else(|| CompileError::Decode(format!("no action at step {t}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Trajectory {
            states,
            actions,
            binding,
        })
    }

    /// Every trajectory described by an answer set, via the brute-force
    /// oracle.
    pub fn solve(&self, bound: usize) -> Result<Vec<Trajectory>, CompileError> {
        let prog = self.ground()?;
        let sets = answer_sets(&prog, bound)?;
        let mut out = sets
            .iter()
            .map(|s| self.decode(&prog, s))
            .collect::<Result<Vec<_>, _>>()?;
        out.sort_by(|a, b| (&a.actions, &a.binding).cmp(&(&b.actions, &b.binding)));
        Ok(out)
    }
}
