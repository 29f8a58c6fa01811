//! Instantiation of an action model over the entities of a scene.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use super::{Arg, Atom, CausalRule, CausalTheory, Literal, RuleKind, Signature};
use crate::env_graph::{EntityId, EnvGraph};

pub type FluentId = usize;
pub type ActionId = usize;

/// Upper bound on ground fluents or actions, to fail fast on sort mistakes
/// that would otherwise blow up memory.
const MAX_INSTANCES: usize = 1 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum GroundingError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("too many ground {what}: {count}")]
    TooLarge { what: &'static str, count: usize },
}

/// A variable-free fluent or action atom.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundAtom {
    pub name: String,
    pub args: Vec<EntityId>,
}

impl GroundAtom {
    pub fn new(name: impl Into<String>, args: Vec<EntityId>) -> Self {
        GroundAtom {
            name: name.into(),
            args,
        }
    }
}

impl fmt::Display for GroundAtom {
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

/// A ground action. The actor is `atom.args[0]`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundAction {
    pub atom: GroundAtom,
}

impl GroundAction {
    pub fn actor(&self) -> EntityId {
        self.atom.args[0]
    }

    pub fn verb(&self) -> &str {
        &self.atom.name
    }

    pub fn objects(&self) -> &[EntityId] {
        &self.atom.args[1..]
    }

    /// The action term without the actor, as written inside `occurs/3`.
    pub fn term(&self) -> GroundAtom {
        GroundAtom::new(self.atom.name.clone(), self.objects().to_vec())
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.atom.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundDynamic {
    pub action: ActionId,
    pub head: FluentId,
    /// Conditions on the state the action is executed in.
    pub after: Vec<(FluentId, bool)>,
    /// Conditions on the resulting state.
    pub if_part: Vec<FluentId>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundStatic {
    pub head: FluentId,
    pub body: Vec<FluentId>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundNonexec {
    pub action: ActionId,
    pub conds: Vec<(FluentId, bool)>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundConstraint {
    pub body: Vec<(FluentId, bool)>,
    pub line: usize,
}

/// An action model instantiated over one scene, without time stamps.
#[derive(Clone, Debug)]
pub struct GroundDomain {
    pub fluents: Vec<GroundAtom>,
    pub actions: Vec<GroundAction>,
    fluent_index: HashMap<GroundAtom, FluentId>,
    action_index: HashMap<GroundAtom, ActionId>,
    pub dynamics: Vec<GroundDynamic>,
    pub statics: Vec<GroundStatic>,
    pub nonexecs: Vec<GroundNonexec>,
    pub constraints: Vec<GroundConstraint>,
    /// Complementary fluent pairs.
    pub complements: Vec<(FluentId, FluentId)>,
    /// Complements of each fluent.
    pub complement_of: Vec<Vec<FluentId>>,
    pub inertial: Vec<bool>,
    /// Fluents asserted at step 0, before static closure.
    pub initial: Vec<FluentId>,
    dynamics_by_action: Vec<Vec<usize>>,
    nonexecs_by_action: Vec<Vec<usize>>,
    categories: BTreeMap<EntityId, String>,
    pub warnings: Vec<String>,
}

fn sort_domain(sig: &Signature, sort: &str, graph: &EnvGraph) -> Vec<EntityId> {
    graph
        .entities()
        .filter(|e| sig.sort_admits(sort, &e.category))
        .map(|e| e.id)
        .collect()
}

fn cartesian(domains: &[Vec<EntityId>], mut emit: impl FnMut(&[EntityId])) {
    if domains.iter().any(Vec::is_empty) {
        return;
    }
    let mut idx = vec![0usize; domains.len()];
    let mut cur: Vec<EntityId> = domains.iter().map(|d| d[0]).collect();
    loop {
        emit(&cur);
        let mut k = domains.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < domains[k].len() {
                cur[k] = domains[k][idx[k]];
                break;
            }
            idx[k] = 0;
            cur[k] = domains[k][0];
        }
    }
}

impl GroundDomain {
    pub fn new(theory: &CausalTheory, graph: &EnvGraph) -> Result<Self, GroundingError> {
        let sig = &theory.signature;
        let mut warnings = Vec::new();
        let mut domains: BTreeMap<String, Vec<EntityId>> = BTreeMap::new();
        let mut domain_of = |sort: &str| -> Vec<EntityId> {
            domains
                .entry(sort.to_string())
                .or_insert_with(|| sort_domain(sig, sort, graph))
                .clone()
        };

        let mut fluents = Vec::new();
        for schema in sig.fluents.values() {
            let ds: Vec<Vec<EntityId>> = schema.params.iter().map(|p| domain_of(p)).collect();
            cartesian(&ds, |args| {
                fluents.push(GroundAtom::new(schema.name.clone(), args.to_vec()))
            });
            if fluents.len() > MAX_INSTANCES {
                return Err(GroundingError::TooLarge {
                    what: "fluents",
                    count: fluents.len(),
                });
            }
        }
        let mut actions = Vec::new();
        for a in sig.actions.values() {
            let ds: Vec<Vec<EntityId>> = a.schema.params.iter().map(|p| domain_of(p)).collect();
            cartesian(&ds, |args| {
                actions.push(GroundAction {
                    atom: GroundAtom::new(a.schema.name.clone(), args.to_vec()),
                })
            });
            if actions.len() > MAX_INSTANCES {
                return Err(GroundingError::TooLarge {
                    what: "actions",
                    count: actions.len(),
                });
            }
        }
        let fluent_index: HashMap<GroundAtom, FluentId> =
            fluents.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
        let action_index: HashMap<GroundAtom, ActionId> =
            actions.iter().enumerate().map(|(i, a)| (a.atom.clone(), i)).collect();

        let mut complement_of = vec![Vec::new(); fluents.len()];
        let mut complements = Vec::new();
        for (a, b) in &sig.complements {
            for (i, f) in fluents.iter().enumerate() {
                if &f.name != a {
                    continue;
                }
                let twin = GroundAtom::new(b.clone(), f.args.clone());
                if let Some(&j) = fluent_index.get(&twin) {
                    complements.push((i, j));
                    complement_of[i].push(j);
                    complement_of[j].push(i);
                }
            }
        }

        let mut inertial = vec![false; fluents.len()];
        let mut dom = GroundDomain {
            fluents,
            actions,
            fluent_index,
            action_index,
            dynamics: Vec::new(),
            statics: Vec::new(),
            nonexecs: Vec::new(),
            constraints: Vec::new(),
            complements,
            complement_of,
            inertial: Vec::new(),
            initial: Vec::new(),
            dynamics_by_action: Vec::new(),
            nonexecs_by_action: Vec::new(),
            categories: graph.entities().map(|e| (e.id, e.category.clone())).collect(),
            warnings: Vec::new(),
        };

        for rule in &theory.rules {
            let vars = rule.variables();
            let mut var_domains = Vec::with_capacity(vars.len());
            for v in &vars {
                let mut d: Option<Vec<EntityId>> = None;
                for sort in var_sorts(sig, rule, v) {
                    let sd = domain_of(&sort);
                    d = Some(match d {
                        None => sd,
                        Some(prev) => prev.into_iter().filter(|x| sd.contains(x)).collect(),
                    });
                }
                let d = d.unwrap_or_else(|| graph.entities().map(|e| e.id).collect());
                if d.is_empty() {
                    log::debug!(
                        "line {}: variable {v} of `{rule}` has no instances in the scene",
                        rule.line
                    );
                }
                var_domains.push(d);
            }
            let mut subs = Vec::new();
            cartesian(&var_domains, |vals| subs.push(vals.to_vec()));
            for vals in subs {
                let env: HashMap<&str, EntityId> = vars.iter().map(String::as_str).zip(vals).collect();
                dom.instantiate(rule, &env, &mut inertial);
            }
        }
        dom.inertial = inertial;

        for atom in &theory.initially {
            let ds: Vec<Vec<EntityId>> = match sig.fluents.get(&atom.name) {
                Some(schema) => atom
                    .args
                    .iter()
                    .zip(&schema.params)
                    .map(|(a, sort)| match a {
                        Arg::Id(id) => vec![*id],
                        Arg::Var(_) => domain_of(sort),
                    })
                    .collect(),
                None => continue,
            };
            let mut found = Vec::new();
            cartesian(&ds, |args| {
                if let Some(&f) = dom.fluent_index.get(&GroundAtom::new(atom.name.clone(), args.to_vec())) {
                    found.push(f);
                }
            });
            dom.initial.extend(found);
        }
        for e in graph.entities() {
            for s in &e.states {
                let mut mapped = false;
                for (sym, fl) in &theory.state_map {
                    if sym == s {
                        if let Some(&f) = dom.fluent_index.get(&GroundAtom::new(fl.clone(), vec![e.id])) {
                            dom.initial.push(f);
                            mapped = true;
                        }
                    }
                }
                if !mapped {
                    warnings.push(format!("state `{s}` of entity {} has no fluent mapping; skipped", e.id));
                }
            }
        }
        for r in graph.relations() {
            let mut mapped = false;
            for (kind, fl) in &theory.relation_map {
                if kind == &r.kind {
                    if let Some(&f) = dom.fluent_index.get(&GroundAtom::new(fl.clone(), vec![r.from, r.to])) {
                        dom.initial.push(f);
                        mapped = true;
                    }
                }
            }
            if !mapped {
                warnings.push(format!(
                    "relation {}({}, {}) has no fluent mapping; skipped",
                    r.kind, r.from, r.to
                ));
            }
        }
        dom.initial.sort_unstable();
        dom.initial.dedup();

        dom.dynamics_by_action = vec![Vec::new(); dom.actions.len()];
        for (i, d) in dom.dynamics.iter().enumerate() {
            dom.dynamics_by_action[d.action].push(i);
        }
        dom.nonexecs_by_action = vec![Vec::new(); dom.actions.len()];
        for (i, n) in dom.nonexecs.iter().enumerate() {
            dom.nonexecs_by_action[n.action].push(i);
        }
        warnings.iter().for_each(|w| log::warn!("{w}"));
        dom.warnings = warnings;
        Ok(dom)
    }

    fn ground_atom(atom: &Atom, env: &HashMap<&str, EntityId>) -> GroundAtom {
        GroundAtom::new(
            atom.name.clone(),
            atom.args
                .iter()
                .map(|a| match a {
                    Arg::Id(id) => *id,
                    Arg::Var(v) => env[v.as_str()],
                })
                .collect(),
        )
    }

    fn ground_lits(&self, lits: &[Literal], env: &HashMap<&str, EntityId>) -> Option<Vec<(FluentId, bool)>> {
        lits.iter()
            .map(|l| {
                self.fluent_index
                    .get(&Self::ground_atom(&l.atom, env))
                    .map(|&f| (f, l.positive))
            })
            .collect()
    }

    fn instantiate(&mut self, rule: &CausalRule, env: &HashMap<&str, EntityId>, inertial: &mut [bool]) {
        let head = rule
            .head
            .as_ref()
            .map(|h| self.fluent_index.get(&Self::ground_atom(h, env)).copied());
        let action = rule
            .action
            .as_ref()
            .map(|a| self.action_index.get(&Self::ground_atom(a, env)).copied());
        if matches!(head, Some(None)) || matches!(action, Some(None)) {
            return;
        }
        let (head, action) = (head.flatten(), action.flatten());
        let Some(if_part) = self.ground_lits(&rule.if_part, env) else {
            return;
        };
        let Some(after) = self.ground_lits(&rule.after_part, env) else {
            return;
        };
        let line = rule.line;
        match rule.kind {
            RuleKind::Dynamic => self.dynamics.push(GroundDynamic {
                action: action.expect("dynamic law action"),
                head: head.expect("dynamic law head"),
                after,
                if_part: if_part.into_iter().map(|(f, _)| f).collect(),
                line,
            }),
            RuleKind::Static => self.statics.push(GroundStatic {
                head: head.expect("static law head"),
                body: if_part.into_iter().map(|(f, _)| f).collect(),
                line,
            }),
            RuleKind::Inertial => inertial[head.expect("inertial fluent")] = true,
            RuleKind::Nonexecutable => self.nonexecs.push(GroundNonexec {
                action: action.expect("nonexecutable action"),
                conds: after,
                line,
            }),
            RuleKind::Constraint => self.constraints.push(GroundConstraint { body: if_part, line }),
        }
    }

    pub fn fluent_id(&self, atom: &GroundAtom) -> Option<FluentId> {
        self.fluent_index.get(atom).copied()
    }

    pub fn action_id(&self, atom: &GroundAtom) -> Option<ActionId> {
        self.action_index.get(atom).copied()
    }

    pub fn num_fluents(&self) -> usize {
        self.fluents.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn dynamics_of(&self, action: ActionId) -> impl Iterator<Item = &GroundDynamic> {
        self.dynamics_by_action[action].iter().map(|&i| &self.dynamics[i])
    }

    pub fn nonexecs_of(&self, action: ActionId) -> impl Iterator<Item = &GroundNonexec> {
        self.nonexecs_by_action[action].iter().map(|&i| &self.nonexecs[i])
    }

    pub fn category_of(&self, id: EntityId) -> Option<&str> {
        self.categories.get(&id).map(String::as_str)
    }

    pub fn entities(&self) -> impl Iterator<Item = (EntityId, &str)> {
        self.categories.iter().map(|(id, c)| (*id, c.as_str()))
    }

    /// Entities of category `character`, ascending.
    pub fn characters(&self) -> Vec<EntityId> {
        self.entities()
            .filter(|(_, c)| *c == "character")
            .map(|(id, _)| id)
            .collect()
    }

    /// Builds the time-stamped causal theory for horizon `n` over the given
    /// actions (all actions when `None`).
    pub fn causal_theory(&self, n: usize, actions: Option<&[ActionId]>) -> Result<GroundCausalTheory, GroundingError> {
        if n == 0 {
            return Err(GroundingError::ZeroHorizon);
        }
        let all: Vec<ActionId> = (0..self.actions.len()).collect();
        let acts = actions.unwrap_or(&all);
        let layout = Layout {
            horizon: n,
            fluents: self.fluents.len(),
            actions: self.actions.len(),
        };
        let mut atoms = Vec::with_capacity(layout.len());
        for t in 0..=n {
            for f in &self.fluents {
                atoms.push(format!("{f}_{t}"));
            }
        }
        for t in 0..n {
            for a in &self.actions {
                atoms.push(format!("{a}_{t}"));
            }
        }
        let fl = |f: FluentId, t: usize, positive: bool| CausalLiteral {
            atom: layout.fluent_atom(f, t),
            positive,
        };
        let ac = |a: ActionId, t: usize, positive: bool| CausalLiteral {
            atom: layout.action_atom(a, t),
            positive,
        };
        let in_scope: Vec<bool> = {
            let mut v = vec![false; self.actions.len()];
            for &a in acts {
                v[a] = true;
            }
            v
        };
        let mut rules = Vec::new();
        let mut push = |origin, body, head| rules.push(CausalRuleInstance { body, head, origin });

        for t in 0..n {
            for d in &self.dynamics {
                if !in_scope[d.action] {
                    continue;
                }
                let mut body = vec![ac(d.action, t, true)];
                body.extend(d.after.iter().map(|&(f, p)| fl(f, t, p)));
                body.extend(d.if_part.iter().map(|&f| fl(f, t + 1, true)));
                push(
                    RuleOrigin::Law(RuleKind::Dynamic),
                    body,
                    Head::Lit(fl(d.head, t + 1, true)),
                );
            }
        }
        for t in 0..=n {
            for s in &self.statics {
                let body = s.body.iter().map(|&f| fl(f, t, true)).collect();
                push(RuleOrigin::Law(RuleKind::Static), body, Head::Lit(fl(s.head, t, true)));
            }
        }
        for t in 0..n {
            for (f, &inert) in self.inertial.iter().enumerate() {
                if inert {
                    let mut body = vec![fl(f, t, true)];
                    body.extend(self.complement_of[f].iter().map(|&g| fl(g, t + 1, false)));
                    push(RuleOrigin::Law(RuleKind::Inertial), body, Head::Lit(fl(f, t + 1, true)));
                }
            }
        }
        for t in 0..n {
            for x in &self.nonexecs {
                if !in_scope[x.action] {
                    continue;
                }
                let mut body = vec![ac(x.action, t, true)];
                body.extend(x.conds.iter().map(|&(f, p)| fl(f, t, p)));
                push(RuleOrigin::Law(RuleKind::Nonexecutable), body, Head::False);
            }
        }
        for t in 0..=n {
            for c in &self.constraints {
                let body = c.body.iter().map(|&(f, p)| fl(f, t, p)).collect();
                push(RuleOrigin::Law(RuleKind::Constraint), body, Head::False);
            }
            for &(a, b) in &self.complements {
                push(
                    RuleOrigin::Complement,
                    vec![fl(a, t, true), fl(b, t, true)],
                    Head::False,
                );
            }
        }
        for &f in &self.initial {
            push(RuleOrigin::Initial, Vec::new(), Head::Lit(fl(f, 0, true)));
        }
        for t in 0..=n {
            for f in 0..self.fluents.len() {
                push(RuleOrigin::Default, vec![fl(f, t, false)], Head::Lit(fl(f, t, false)));
            }
        }
        let mut by_actor: BTreeMap<EntityId, Vec<ActionId>> = BTreeMap::new();
        for &a in acts {
            by_actor.entry(self.actions[a].actor()).or_default().push(a);
        }
        for t in 0..n {
            for (a, &scoped) in in_scope.iter().enumerate() {
                if scoped {
                    push(RuleOrigin::Exogenous, vec![ac(a, t, true)], Head::Lit(ac(a, t, true)));
                }
                push(RuleOrigin::Exogenous, vec![ac(a, t, false)], Head::Lit(ac(a, t, false)));
            }
            for group in by_actor.values() {
                for (i, &a) in group.iter().enumerate() {
                    for &b in &group[i + 1..] {
                        push(RuleOrigin::Unique, vec![ac(a, t, true), ac(b, t, true)], Head::False);
                    }
                }
                push(
                    RuleOrigin::Unique,
                    group.iter().map(|&a| ac(a, t, false)).collect(),
                    Head::False,
                );
            }
        }
        Ok(GroundCausalTheory {
            atoms,
            rules,
            layout: Some(layout),
        })
    }
}

/// Every sort constraining variable `v` in `rule`, from the declared
/// parameter sorts of the atoms it occurs in.
fn var_sorts(sig: &Signature, rule: &CausalRule, v: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut scan = |atom: &Atom, params: Option<&Vec<String>>| {
        if let Some(params) = params {
            for (arg, sort) in atom.args.iter().zip(params) {
                if matches!(arg, Arg::Var(x) if x == v) {
                    out.push(sort.clone());
                }
            }
        }
    };
    for atom in rule
        .head
        .iter()
        .chain(rule.if_part.iter().map(|l| &l.atom))
        .chain(rule.after_part.iter().map(|l| &l.atom))
    {
        scan(atom, sig.fluents.get(&atom.name).map(|s| &s.params));
    }
    if let Some(a) = &rule.action {
        scan(a, sig.actions.get(&a.name).map(|s| &s.schema.params));
    }
    out
}

/// Grounds `theory` over `graph` for horizon `n`, with every action.
pub fn ground_theory(theory: &CausalTheory, graph: &EnvGraph, n: usize) -> Result<GroundCausalTheory, GroundingError> {
    if n == 0 {
        return Err(GroundingError::ZeroHorizon);
    }
    GroundDomain::new(theory, graph)?.causal_theory(n, None)
}

/// Index of a propositional atom in a [`GroundCausalTheory`].
pub type CausalAtom = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CausalLiteral {
    pub atom: CausalAtom,
    pub positive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Head {
    Lit(CausalLiteral),
    False,
}

/// Where a ground causal rule came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleOrigin {
    Law(RuleKind),
    Complement,
    Initial,
    /// Fluents are false unless caused otherwise.
    Default,
    /// Actions are exogenous: `a ⇒ a` and `¬a ⇒ ¬a`.
    Exogenous,
    /// Exactly one action per character and step.
    Unique,
}

/// A ground causal rule `body ⇒ head`. An empty body stands for truth.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalRuleInstance {
    pub body: Vec<CausalLiteral>,
    pub head: Head,
    pub origin: RuleOrigin,
}

/// Position of time-stamped fluent and action atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
    pub fluents: usize,
    pub actions: usize,
}

impl Layout {
    pub fn fluent_atom(&self, f: FluentId, t: usize) -> CausalAtom {
        t * self.fluents + f
    }

    pub fn action_atom(&self, a: ActionId, t: usize) -> CausalAtom {
        (self.horizon + 1) * self.fluents + t * self.actions + a
    }

    pub fn len(&self) -> usize {
        (self.horizon + 1) * self.fluents + self.horizon * self.actions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A propositional causal theory over named atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundCausalTheory {
    pub atoms: Vec<String>,
    pub rules: Vec<CausalRuleInstance>,
    pub layout: Option<Layout>,
}

impl GroundCausalTheory {
    /// A theory over explicit atoms, for hand-built examples.
    pub fn from_rules(atoms: Vec<String>, rules: Vec<(Vec<CausalLiteral>, Head)>) -> Self {
        GroundCausalTheory {
            atoms,
            rules: rules
                .into_iter()
                .map(|(body, head)| CausalRuleInstance {
                    body,
                    head,
                    origin: RuleOrigin::Law(RuleKind::Static),
                })
                .collect(),
            layout: None,
        }
    }

    pub fn laws(&self, kind: RuleKind) -> impl Iterator<Item = &CausalRuleInstance> {
        self.rules.iter().filter(move |r| r.origin == RuleOrigin::Law(kind))
    }

    pub fn render_literal(&self, l: CausalLiteral) -> String {
        if l.positive {
            self.atoms[l.atom].clone()
        } else {
            format!("¬{}", self.atoms[l.atom])
        }
    }

    pub fn render(&self, rule: &CausalRuleInstance) -> String {
        let body = if rule.body.is_empty() {
            "⊤".to_string()
        } else {
            rule.body
                .iter()
                .map(|&l| self.render_literal(l))
                .collect::<Vec<_>>()
                .join(" ∧ ")
        };
        let head = match rule.head {
            Head::Lit(l) => self.render_literal(l),
            Head::False => "⊥".to_string(),
        };
        format!("{body} ⇒ {head}")
    }
}
