//! Native search for trajectories that obey an action model and satisfy a
//! skeleton plan.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use fixedbitset::FixedBitSet;
use thiserror::Error;

use crate::action_model::{ActionId, CausalTheory, FluentId, GroundDomain, GroundingError};
use crate::env_graph::{EntityId, EnvGraph};
use crate::skeleton::{self, Binding, Element, SkeletonError, SkeletonPlan, StepArg};

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

/// Undecided inertia choices tolerated in one transition before giving up.
const MAX_UNDECIDED: usize = 12;

/// Fluents true at one time step; everything else is false.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State(FixedBitSet);

impl State {
    pub fn empty(fluents: usize) -> Self {
        State(FixedBitSet::with_capacity(fluents))
    }

    pub fn contains(&self, f: FluentId) -> bool {
        self.0.contains(f)
    }

    pub fn insert(&mut self, f: FluentId) {
        self.0.insert(f);
    }

    pub fn iter(&self) -> impl Iterator<Item = FluentId> + '_ {
        self.0.ones()
    }

    pub fn len(&self) -> usize {
        self.0.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_clear()
    }

    fn holds(&self, lits: &[(FluentId, bool)]) -> bool {
        lits.iter().all(|&(f, p)| self.contains(f) == p)
    }
}

/// ⟨s0, a0, s1, …, a(n−1), sn⟩ plus the category binding that makes it
/// satisfy the skeleton.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub actions: Vec<ActionId>,
    pub binding: Binding,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// `occurs(C, a(args), t)` lines with time counted from `base`.
    pub fn occurs_lines(&self, dom: &GroundDomain, base: usize) -> Vec<String> {
        self.actions
            .iter()
            .enumerate()
            .map(|(t, &a)| {
                let act = &dom.actions[a];
                format!("occurs({}, {}, {})", act.actor(), act.term(), t + base)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Inapplicable {
    /// A nonexecutable law fired; carries its source line.
    Nonexecutable { line: usize, action: String },
    /// Every candidate successor violates a constraint.
    Violation(String),
    /// Too many undecided inertia choices.
    Ambiguous,
    /// More than one successor state.
    Nondeterministic(usize),
}

impl fmt::Display for Inapplicable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inapplicable::Nonexecutable { line, action } => {
                write!(f, "{action} is not executable here (law at line {line})")
            }
            Inapplicable::Violation(why) => write!(f, "resulting state violates {why}"),
            Inapplicable::Ambiguous => f.write_str("too many undecided inertia choices"),
            Inapplicable::Nondeterministic(n) => write!(f, "{n} possible successor states"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("the planner needs exactly one character in the scene, found {0}")]
    Characters(usize),
    #[error("initial state is inconsistent: {0}")]
    InitialState(String),
    #[error("search budget of {0} expanded nodes exceeded")]
    BudgetExceeded(usize),
}

/// A grounded planning problem.
#[derive(Clone, Debug)]
pub struct Planner {
    pub domain: GroundDomain,
    pub elements: Vec<Element>,
    /// Actions the search may use, in canonical order.
    pub actions: Vec<ActionId>,
    pub initial: State,
    pub node_budget: usize,
    static_watch: Vec<Vec<usize>>,
    unsatisfiable_binding: bool,
}

/// Relevance filter: actions whose objects are all mentioned in the plan,
/// and support actions over mentioned entities and what contains them.
/// A plan that mentions no entity keeps every action.
pub fn related_actions(
    dom: &GroundDomain,
    graph: &EnvGraph,
    theory: &CausalTheory,
    elements: &[Element],
) -> Vec<ActionId> {
    let mut mentioned: BTreeSet<EntityId> = BTreeSet::new();
    let mut add = |arg: &StepArg| match arg {
        StepArg::Id(id) => {
            mentioned.insert(*id);
        }
        StepArg::Category(c) => mentioned.extend(graph.instances_of(c)),
    };
    let mut any = false;
    for e in elements {
        match e {
            Element::Action(a) => a.args.iter().for_each(|x| {
                any = true;
                add(x)
            }),
            Element::Fluent(f) => {
                for conj in f.dnf() {
                    for (_, p) in conj {
                        p.args.iter().for_each(|x| {
                            any = true;
                            add(x)
                        });
                    }
                }
            }
        }
    }
    if !any {
        return (0..dom.num_actions()).collect();
    }
    let mut extended = mentioned.clone();
    for &id in &mentioned {
        extended.extend(graph.ancestors(id));
    }
    (0..dom.num_actions())
        .filter(|&a| {
            let act = &dom.actions[a];
            let objs = act.objects();
            objs.iter().all(|o| mentioned.contains(o))
                || (theory.support.contains(act.verb()) && objs.iter().all(|o| extended.contains(o)))
        })
        .collect()
}

/// Canonical action order: by verb, then arguments ascending.
fn canonical(dom: &GroundDomain, mut acts: Vec<ActionId>) -> Vec<ActionId> {
    acts.sort_by(|&a, &b| dom.actions[a].atom.cmp(&dom.actions[b].atom));
    acts
}

/// Partial progress through the flattened plan.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Config {
    matched: usize,
    binding: Binding,
}

type Configs = BTreeSet<Config>;

impl Planner {
    pub fn new(theory: &CausalTheory, graph: &EnvGraph, plan: &SkeletonPlan) -> Result<Self, PlanError> {
        let domain = GroundDomain::new(theory, graph)?;
        let elements = plan.flatten(&theory.signature.subtasks)?;
        let chars = domain.characters().len();
        if chars != 1 {
            return Err(PlanError::Characters(chars));
        }
        let actions = canonical(&domain, related_actions(&domain, graph, theory, &elements));
        Self::from_parts(domain, elements, actions)
    }

    /// Builds a planner over an explicit action set.
    pub fn from_parts(domain: GroundDomain, elements: Vec<Element>, actions: Vec<ActionId>) -> Result<Self, PlanError> {
        let mut static_watch = vec![Vec::new(); domain.num_fluents()];
        for (i, s) in domain.statics.iter().enumerate() {
            for &b in &s.body {
                static_watch[b].push(i);
            }
        }
        let unsatisfiable_binding = elements
            .iter()
            .flat_map(|e| match e {
                Element::Action(a) => a.args.clone(),
                Element::Fluent(f) => f.dnf().into_iter().flatten().flat_map(|(_, p)| p.args).collect(),
            })
            .any(|arg| match arg {
                StepArg::Category(c) => !domain.entities().any(|(_, cat)| cat == c),
                StepArg::Id(_) => false,
            });
        let mut p = Planner {
            initial: State::empty(domain.num_fluents()),
            domain,
            elements,
            actions,
            node_budget: DEFAULT_NODE_BUDGET,
            static_watch,
            unsatisfiable_binding,
        };
        let init = p.closure(&p.domain.initial, &[]);
        if let Some(why) = p.violation(&init) {
            return Err(PlanError::InitialState(why));
        }
        p.initial = init;
        Ok(p)
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.node_budget = budget;
        self
    }

    /// Least set containing `facts` and closed under static laws and the
    /// given extra rules `(head, body)`.
    fn closure(&self, facts: &[FluentId], extra: &[(FluentId, &[FluentId])]) -> State {
        let dom = &self.domain;
        let mut s = State::empty(dom.num_fluents());
        let mut missing: Vec<usize> = dom.statics.iter().map(|r| r.body.len()).collect();
        let mut queue: Vec<FluentId> = Vec::new();
        let add = |s: &mut State, f: FluentId, queue: &mut Vec<FluentId>| {
            if !s.contains(f) {
                s.insert(f);
                queue.push(f);
            }
        };
        for &f in facts {
            add(&mut s, f, &mut queue);
        }
        for r in &dom.statics {
            if r.body.is_empty() {
                add(&mut s, r.head, &mut queue);
            }
        }
        let mut extra_done = vec![false; extra.len()];
        loop {
            while let Some(f) = queue.pop() {
                for &i in &self.static_watch[f] {
                    missing[i] -= 1;
                    if missing[i] == 0 {
                        add(&mut s, dom.statics[i].head, &mut queue);
                    }
                }
            }
            let mut progressed = false;
            for (k, (head, body)) in extra.iter().enumerate() {
                if !extra_done[k] && body.iter().all(|&b| s.contains(b)) {
                    extra_done[k] = true;
                    progressed = true;
                    add(&mut s, *head, &mut queue);
                }
            }
            if !progressed {
                return s;
            }
        }
    }

    /// Describes the first complement pair or constraint violated by `s`.
    fn violation(&self, s: &State) -> Option<String> {
        let dom = &self.domain;
        for &(a, b) in &dom.complements {
            if s.contains(a) && s.contains(b) {
                return Some(format!(
                    "complementary fluents {} and {}",
                    dom.fluents[a], dom.fluents[b]
                ));
            }
        }
        for c in &dom.constraints {
            if s.holds(&c.body) {
                return Some(format!("the constraint at line {}", c.line));
            }
        }
        None
    }

    /// Every successor of `s` under `a`, in canonical order.
    pub fn successors(&self, s: &State, a: ActionId) -> Result<Vec<State>, Inapplicable> {
        let dom = &self.domain;
        if let Some(x) = dom.nonexecs_of(a).find(|x| s.holds(&x.conds)) {
            return Err(Inapplicable::Nonexecutable {
                line: x.line,
                action: dom.actions[a].to_string(),
            });
        }
        let mut facts = Vec::new();
        let mut extra: Vec<(FluentId, &[FluentId])> = Vec::new();
        for d in dom.dynamics_of(a) {
            if s.holds(&d.after) {
                if d.if_part.is_empty() {
                    facts.push(d.head);
                } else {
                    extra.push((d.head, &d.if_part));
                }
            }
        }
        // Inertia: f persists unless one of its complements becomes true.
        let carried: Vec<FluentId> = s.iter().filter(|&f| dom.inertial[f]).collect();
        let fire = |fired: &[bool]| -> State {
            let mut all = facts.clone();
            all.extend(carried.iter().zip(fired).filter(|(_, &x)| x).map(|(&f, _)| f));
            self.closure(&all, &extra)
        };
        let blocked = |f: FluentId, m: &State| dom.complement_of[f].iter().any(|&g| m.contains(g));

        // Alternating fixpoint: `lower` under-approximates every stable
        // model, `upper` over-approximates.
        let mut lower = fire(&vec![false; carried.len()]);
        let mut upper;
        loop {
            let allowed: Vec<bool> = carried.iter().map(|&f| !blocked(f, &lower)).collect();
            upper = fire(&allowed);
            let sure: Vec<bool> = carried.iter().map(|&f| !blocked(f, &upper)).collect();
            let next = fire(&sure);
            if next == lower {
                break;
            }
            lower = next;
        }
        let undecided: Vec<usize> = (0..carried.len())
            .filter(|&i| blocked(carried[i], &upper) && !blocked(carried[i], &lower))
            .collect();
        if undecided.len() > MAX_UNDECIDED {
            return Err(Inapplicable::Ambiguous);
        }
        let base: Vec<bool> = carried.iter().map(|&f| !blocked(f, &upper)).collect();
        let mut models = BTreeSet::new();
        for mask in 0u32..(1 << undecided.len()) {
            let mut fired = base.clone();
            for (bit, &i) in undecided.iter().enumerate() {
                fired[i] = mask & (1 << bit) != 0;
            }
            let m = fire(&fired);
            let stable = carried.iter().zip(&fired).all(|(&f, &x)| x == !blocked(f, &m));
            if stable {
                models.insert(m);
            }
        }
        let mut first_violation = None;
        let out: Vec<State> = models
            .into_iter()
            .filter(|m| match self.violation(m) {
                Some(why) => {
                    first_violation.get_or_insert(why);
                    false
                }
                None => true,
            })
            .collect();
        match (out.is_empty(), first_violation) {
            (true, Some(why)) => Err(Inapplicable::Violation(why)),
            (true, None) => Err(Inapplicable::Violation("stability".into())),
            _ => Ok(out),
        }
    }

    /// The unique successor of `s` under `a`.
    pub fn transition(&self, s: &State, a: ActionId) -> Result<State, Inapplicable> {
        let mut succ = self.successors(s, a)?;
        if succ.len() > 1 {
            return Err(Inapplicable::Nondeterministic(succ.len()));
        }
        Ok(succ.pop().expect("nonempty successor list"))
    }

    fn start_configs(&self) -> Configs {
        let mut c = Configs::new();
        c.insert(Config {
            matched: 0,
            binding: Binding::new(),
        });
        self.advance_fluents(c, &self.initial)
    }

    /// Matches fluent elements against a newly reached state.
    fn advance_fluents(&self, configs: Configs, s: &State) -> Configs {
        let mut out = Configs::new();
        let mut stack: Vec<Config> = configs.into_iter().collect();
        while let Some(c) = stack.pop() {
            if !out.insert(c.clone()) {
                continue;
            }
            if let Some(Element::Fluent(f)) = self.elements.get(c.matched) {
                for b in skeleton::match_formula(&self.domain, f, s, &c.binding) {
                    stack.push(Config {
                        matched: c.matched + 1,
                        binding: b,
                    });
                }
            }
        }
        prune(out)
    }

    fn advance_action(&self, configs: &Configs, a: ActionId) -> Configs {
        let mut out = configs.clone();
        for c in configs {
            if let Some(Element::Action(step)) = self.elements.get(c.matched) {
                if let Some(b) = skeleton::match_action(&self.domain, step, a, &c.binding) {
                    out.insert(Config {
                        matched: c.matched + 1,
                        binding: b,
                    });
                }
            }
        }
        prune(out)
    }

    fn complete<'a>(&self, configs: &'a Configs) -> Option<&'a Config> {
        configs.iter().find(|c| c.matched == self.elements.len())
    }

    /// Breadth-first search for a shortest trajectory of length 1 to
    /// `max_horizon` satisfying the plan.
    pub fn solve(&self, max_horizon: usize) -> Result<Option<Trajectory>, PlanError> {
        if self.unsatisfiable_binding {
            return Ok(None);
        }
        struct Node {
            state: State,
            configs: Configs,
            parent: usize,
            action: ActionId,
            depth: usize,
        }
        let root = Node {
            state: self.initial.clone(),
            configs: self.start_configs(),
            parent: usize::MAX,
            action: usize::MAX,
            depth: 0,
        };
        let mut nodes = vec![root];
        let mut seen: HashMap<(State, Configs), ()> = HashMap::new();
        seen.insert((nodes[0].state.clone(), nodes[0].configs.clone()), ());
        let mut queue = VecDeque::from([0usize]);
        let mut expanded = 0usize;
        while let Some(idx) = queue.pop_front() {
            if nodes[idx].depth >= max_horizon {
                continue;
            }
            expanded += 1;
            if expanded > self.node_budget {
                return Err(PlanError::BudgetExceeded(self.node_budget));
            }
            for &a in &self.actions {
                let Ok(succ) = self.successors(&nodes[idx].state, a) else {
                    continue;
                };
                let after_action = self.advance_action(&nodes[idx].configs, a);
                for s in succ {
                    let configs = self.advance_fluents(after_action.clone(), &s);
                    let node = Node {
                        state: s,
                        configs,
                        parent: idx,
                        action: a,
                        depth: nodes[idx].depth + 1,
                    };
                    if let Some(done) = self.complete(&node.configs) {
                        let binding = done.binding.clone();
                        nodes.push(node);
                        return Ok(Some(self.rebuild(&nodes, nodes.len() - 1, binding, |n| {
                            (n.parent, n.action, &n.state)
                        })));
                    }
                    let key = (node.state.clone(), node.configs.clone());
                    if seen.insert(key, ()).is_none() {
                        nodes.push(node);
                        queue.push_back(nodes.len() - 1);
                    }
                }
            }
        }
        Ok(None)
    }

    fn rebuild<N>(
        &self,
        nodes: &[N],
        mut idx: usize,
        binding: Binding,
        parts: impl Fn(&N) -> (usize, ActionId, &State),
    ) -> Trajectory {
        let mut states = Vec::new();
        let mut actions = Vec::new();
        loop {
            let (parent, action, state) = parts(&nodes[idx]);
            states.push(state.clone());
            if parent == usize::MAX {
                break;
            }
            actions.push(action);
            idx = parent;
        }
        states.reverse();
        actions.reverse();
        Trajectory {
            states,
            actions,
            binding,
        }
    }

    /// Every trajectory of exactly `horizon` steps that satisfies the plan,
    /// sorted by action sequence then states.
    pub fn solve_all(&self, horizon: usize) -> Result<Vec<Trajectory>, PlanError> {
        if self.unsatisfiable_binding {
            return Ok(Vec::new());
        }
        let mut out = BTreeMap::new();
        let mut states = vec![self.initial.clone()];
        let mut actions = Vec::new();
        let mut expanded = 0usize;
        self.dfs(
            horizon,
            &self.start_configs(),
            &mut states,
            &mut actions,
            &mut expanded,
            &mut out,
        )?;
        Ok(out.into_values().collect())
    }

    fn dfs(
        &self,
        horizon: usize,
        configs: &Configs,
        states: &mut Vec<State>,
        actions: &mut Vec<ActionId>,
        expanded: &mut usize,
        out: &mut BTreeMap<(Vec<ActionId>, Vec<State>), Trajectory>,
    ) -> Result<(), PlanError> {
        if actions.len() == horizon {
            if let Some(done) = self.complete(configs) {
                out.entry((actions.clone(), states.clone()))
                    .or_insert_with(|| Trajectory {
                        states: states.clone(),
                        actions: actions.clone(),
                        binding: done.binding.clone(),
                    });
            }
            return Ok(());
        }
        *expanded += 1;
        if *expanded > self.node_budget {
            return Err(PlanError::BudgetExceeded(self.node_budget));
        }
        let cur = states.last().expect("nonempty state list").clone();
        for &a in &self.actions {
            let Ok(succ) = self.successors(&cur, a) else {
                continue;
            };
            let after_action = self.advance_action(configs, a);
            for s in succ {
                let next = self.advance_fluents(after_action.clone(), &s);
                states.push(s);
                actions.push(a);
                self.dfs(horizon, &next, states, actions, expanded, out)?;
                states.pop();
                actions.pop();
            }
        }
        Ok(())
    }

    /// Re-checks each step of a trajectory against the transition relation.
    pub fn check_legal(&self, tr: &Trajectory) -> Result<(), (usize, Inapplicable)> {
        if tr.states.first() != Some(&self.initial) || tr.states.len() != tr.actions.len() + 1 {
            return Err((0, Inapplicable::Violation("trajectory shape".into())));
        }
        for (t, &a) in tr.actions.iter().enumerate() {
            let succ = self.successors(&tr.states[t], a).map_err(|e| (t, e))?;
            if !succ.contains(&tr.states[t + 1]) {
                return Err((t, Inapplicable::Violation("an unreachable successor state".into())));
            }
        }
        Ok(())
    }

    /// Total interpretation of the timed causal theory for `tr`.
    pub fn interpretation(&self, tr: &Trajectory, layout: &crate::action_model::Layout) -> Vec<bool> {
        let mut i = vec![false; layout.len()];
        for (t, s) in tr.states.iter().enumerate() {
            for f in s.iter() {
                i[layout.fluent_atom(f, t)] = true;
            }
        }
        for (t, &a) in tr.actions.iter().enumerate() {
            i[layout.action_atom(a, t)] = true;
        }
        i
    }
}

/// Drops configurations dominated by one with the same binding that has
/// matched more elements.
fn prune(configs: Configs) -> Configs {
    let mut best: BTreeMap<Binding, usize> = BTreeMap::new();
    for c in &configs {
        let e = best.entry(c.binding.clone()).or_insert(c.matched);
        *e = (*e).max(c.matched);
    }
    configs.into_iter().filter(|c| best[&c.binding] == c.matched).collect()
}

/// Convenience wrapper: ground, search, return the shortest trajectory.
pub fn solve(
    theory: &CausalTheory,
    graph: &EnvGraph,
    plan: &SkeletonPlan,
    max_horizon: usize,
) -> Result<Option<(Planner, Trajectory)>, PlanError> {
    let planner = Planner::new(theory, graph, plan)?;
    let found = planner.solve(max_horizon)?;
    Ok(found.map(|t| (planner, t)))
}

pub fn solve_all(
    theory: &CausalTheory,
    graph: &EnvGraph,
    plan: &SkeletonPlan,
    horizon: usize,
) -> Result<Vec<Trajectory>, PlanError> {
    Planner::new(theory, graph, plan)?.solve_all(horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_model::{parse_action_model, GroundAtom};
    use crate::env_graph::parse_graph;
    use crate::skeleton::{parse_step, satisfies};

    const HANDS: &str = "
        sort washable = clothes_pants.
        fluent clean(washable), dirty(washable), found(character, entity),
               empty_lh(character), unempty_lh(character), empty_rh(character), unempty_rh(character),
               holds_lh(character, washable), on(entity), off(entity), plugged_in(entity), plugged_out(entity).
        action wash(character, washable), switchon(character, entity), plugin(character, entity),
               grab(character, washable).
        complement clean, dirty.
        complement empty_lh, unempty_lh.
        complement empty_rh, unempty_rh.
        complement on, off.
        complement plugged_in, plugged_out.
        state dirty -> dirty. state clean -> clean. state on -> on. state off -> off.
        state plugged_in -> plugged_in. state plugged_out -> plugged_out.
        inertial clean(O), dirty(O), found(C, O), empty_lh(C), empty_rh(C), unempty_rh(C), holds_lh(C, O),
                 on(O), off(O), plugged_in(O), plugged_out(O).
        caused clean(O) if true after wash(C, O).
        caused unempty_lh(C) if holds_lh(C, O).
        caused holds_lh(C, O) if true after grab(C, O).
        caused on(O) if true after switchon(C, O).
        caused plugged_in(O) if true after plugin(C, O).
        nonexecutable wash(C, O) if unempty_lh(C) & unempty_rh(C).
        nonexecutable switchon(C, O) if plugged_out(O).
    ";

    fn scene(extra_states: &str) -> EnvGraph {
        parse_graph(&format!(
            r#"{{"entities":[{{"id":1,"category":"character"}},
                            {{"id":5,"category":"washing_machine","states":["off","plugged_out"]}},
                            {{"id":7,"category":"clothes_pants","states":["dirty"{extra_states}]}}],
                "relations":[]}}"#
        ))
        .unwrap()
    }

    fn planner(lines: &[&str], init: &[&str]) -> Planner {
        let mut theory = parse_action_model(HANDS).unwrap();
        for atom in init {
            theory.initially.push(crate::action_model::Atom::new(
                atom.split('(').next().unwrap(),
                atom.trim_end_matches(')')
                    .split('(')
                    .nth(1)
                    .map(|a| {
                        a.split(',')
                            .map(|x| crate::action_model::Arg::Id(x.trim().parse().unwrap()))
                            .collect()
                    })
                    .unwrap_or_default(),
            ));
        }
        let plan = SkeletonPlan::Seq(lines.iter().map(|l| parse_step(l).unwrap()).collect());
        Planner::new(&theory, &scene(""), &plan).unwrap()
    }

    fn act(p: &Planner, s: &str) -> ActionId {
        p.domain.actions.iter().position(|a| a.to_string() == s).unwrap()
    }

    fn fl(p: &Planner, name: &str, args: &[EntityId]) -> FluentId {
        p.domain.fluent_id(&GroundAtom::new(name, args.to_vec())).unwrap()
    }

    #[test]
    fn wash_makes_clean() {
        let p = planner(&[], &["empty_lh(1)", "empty_rh(1)", "found(1, 7)"]);
        let s2 = p.transition(&p.initial, act(&p, "wash(1, 7)")).unwrap();
        assert!(s2.contains(fl(&p, "clean", &[7])));
        assert!(!s2.contains(fl(&p, "dirty", &[7])));
        assert!(s2.contains(fl(&p, "found", &[1, 7])));
    }

    #[test]
    fn wash_blocked_with_full_hands() {
        let p = planner(&[], &["unempty_lh(1)", "unempty_rh(1)"]);
        assert!(matches!(
            p.transition(&p.initial, act(&p, "wash(1, 7)")),
            Err(Inapplicable::Nonexecutable { .. })
        ));
    }

    #[test]
    fn switchon_blocked_when_unplugged() {
        let p = planner(&[], &[]);
        assert!(p.initial.contains(fl(&p, "plugged_out", &[5])));
        let err = p.transition(&p.initial, act(&p, "switchon(1, 5)")).unwrap_err();
        assert!(matches!(err, Inapplicable::Nonexecutable { .. }));
        let s = p.transition(&p.initial, act(&p, "plugin(1, 5)")).unwrap();
        let s = p.transition(&s, act(&p, "switchon(1, 5)")).unwrap();
        assert!(s.contains(fl(&p, "on", &[5])));
        assert!(!s.contains(fl(&p, "off", &[5])));
    }

    #[test]
    fn static_law_closes_state() {
        let p = planner(&[], &["empty_lh(1)"]);
        let s = p.transition(&p.initial, act(&p, "grab(1, 7)")).unwrap();
        assert!(s.contains(fl(&p, "unempty_lh", &[1])));
        assert!(!s.contains(fl(&p, "empty_lh", &[1])));
    }

    #[test]
    fn solve_orders_plugin_before_switchon() {
        let p = planner(&["[switchon] <washing_machine>"], &[]);
        let tr = p.solve(4).unwrap().unwrap();
        let lines = tr.occurs_lines(&p.domain, 1);
        assert_eq!(lines, vec!["occurs(1, plugin(5), 1)", "occurs(1, switchon(5), 2)"]);
        let lib = BTreeMap::new();
        let plan = SkeletonPlan::Seq(vec![parse_step("[switchon] <washing_machine>").unwrap()]);
        assert!(satisfies(&p.domain, &tr, &plan, &lib).unwrap().is_some());
        assert!(p.check_legal(&tr).is_ok());
    }

    #[test]
    fn impossible_without_plugin() {
        let src = HANDS.replace("caused plugged_in(O) if true after plugin(C, O).", "");
        let theory = parse_action_model(&src).unwrap();
        let plan = SkeletonPlan::Seq(vec![parse_step("[switchon] <washing_machine>").unwrap()]);
        let p = Planner::new(&theory, &scene(""), &plan).unwrap();
        assert_eq!(p.solve(4), Ok(None));
    }

    #[test]
    fn budget_is_reported() {
        let p = planner(&["[switchon] <washing_machine>"], &[]).with_budget(1);
        assert_eq!(p.solve(4), Err(PlanError::BudgetExceeded(1)));
    }

    #[test]
    fn solve_all_single_action() {
        let p = planner(&["[plugin] <washing_machine>"], &[]);
        let all = p.solve_all(1).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].occurs_lines(&p.domain, 0), vec!["occurs(1, plugin(5), 0)"]);
        assert!(planner(&["[switchon] <washing_machine>"], &[])
            .solve_all(1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn two_instances_two_bindings() {
        let theory = parse_action_model(HANDS).unwrap();
        let g = parse_graph(
            r#"{"entities":[{"id":1,"category":"character"},
                            {"id":7,"category":"clothes_pants","states":["dirty"]},
                            {"id":8,"category":"clothes_pants","states":["dirty"]}],"relations":[]}"#,
        )
        .unwrap();
        let plan = SkeletonPlan::Seq(vec![parse_step("[wash] <clothes_pants>").unwrap()]);
        let all = solve_all(&theory, &g, &plan, 1).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].binding["clothes_pants"], 7);
        assert_eq!(all[1].binding["clothes_pants"], 8);
    }

    #[test]
    fn deterministic() {
        let a = planner(&["[switchon] <washing_machine>"], &[]).solve(4).unwrap();
        let b = planner(&["[switchon] <washing_machine>"], &[]).solve(4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn needs_one_character() {
        let theory = parse_action_model(HANDS).unwrap();
        let g = parse_graph(r#"{"entities":[{"id":7,"category":"clothes_pants"}],"relations":[]}"#).unwrap();
        assert!(matches!(
            Planner::new(&theory, &g, &SkeletonPlan::empty()),
            Err(PlanError::Characters(0))
        ));
    }

    #[test]
    fn household_laundry_demo() {
        let theory = parse_action_model(crate::assets::HOUSEHOLD_MODEL).unwrap();
        let g = parse_graph(crate::assets::LAUNDRY_SCENE).unwrap();
        let plan = crate::skeleton::parse_skeleton_json(crate::assets::WASH_CLOTHES_SKELETON).unwrap();
        let p = Planner::new(&theory, &g, &plan).unwrap();
        let tr = p.solve(20).unwrap().unwrap();
        assert!(p.check_legal(&tr).is_ok());
        let last = tr.states.last().unwrap();
        assert!(last.contains(fl(&p, "on", &[5])));
        assert!(last.contains(fl(&p, "clean", &[7])));
        assert!(satisfies(&p.domain, &tr, &plan, &theory.signature.subtasks)
            .unwrap()
            .is_some());
        eprintln!("{}", tr.occurs_lines(&p.domain, 1).join("\n"));
    }
}
