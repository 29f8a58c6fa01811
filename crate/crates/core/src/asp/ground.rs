//! A small bottom-up grounder for the emitted fragment.
//!
//! Blocks are instantiated on a fixed schedule for horizon `n`: `base`
//! once, `state(t)` for `t = 0..=n`, `step(t)` for `t = 0..n`, and
//! `check(t)` for `t = n` with its external atoms set true.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use super::{AspAtom, BinOp, BodyLit, Head, Statement, Term};
use crate::stable::GroundProgram;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroundError {
    #[error("program uses blocks with a time parameter but no horizon is set")]
    NoHorizon,
    #[error("unknown program block `{0}`")]
    UnknownBlock(String),
    #[error("unsafe variable `{var}` in `{rule}`")]
    Unsafe { var: String, rule: String },
    #[error("only 1{{...}}1 choice rules are supported: `{0}`")]
    UnsupportedChoice(String),
    #[error("arithmetic on non-integers in `{0}`")]
    Arithmetic(String),
}

/// A ground term.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Int(i64),
    Sym(String),
    Func(String, Vec<Symbol>),
}

impl Symbol {
    pub fn atom(pred: &str, args: Vec<Symbol>) -> Symbol {
        if args.is_empty() {
            Symbol::Sym(pred.to_string())
        } else {
            Symbol::Func(pred.to_string(), args)
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Symbol::Int(_) => "",
            Symbol::Sym(s) | Symbol::Func(s, _) => s,
        }
    }

    pub fn args(&self) -> &[Symbol] {
        match self {
            Symbol::Func(_, a) => a,
            _ => &[],
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Symbol::Int(i) => Some(*i),
            _ => None,
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Int(i) => write!(f, "{i}"),
            Symbol::Sym(s) => f.write_str(s),
            Symbol::Func(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

type Subst = HashMap<String, Symbol>;

/// Rule template after block parameters are fixed.
#[derive(Clone, Debug)]
struct Template {
    head: Head,
    body: Vec<BodyLit>,
    text: String,
}

fn subst_consts(t: &Term, consts: &HashMap<String, i64>) -> Term {
    match t {
        Term::Const(c) => match consts.get(c) {
            Some(v) => Term::Int(*v),
            None => t.clone(),
        },
        Term::Func(n, args) => Term::Func(n.clone(), args.iter().map(|a| subst_consts(a, consts)).collect()),
        Term::Bin(a, op, b) => Term::Bin(
            Box::new(subst_consts(a, consts)),
            *op,
            Box::new(subst_consts(b, consts)),
        ),
        _ => t.clone(),
    }
}

fn subst_atom(a: &AspAtom, consts: &HashMap<String, i64>) -> AspAtom {
    AspAtom {
        pred: a.pred.clone(),
        args: a.args.iter().map(|t| subst_consts(t, consts)).collect(),
    }
}

/// Evaluates a term under `s`. `Ok(None)` when a variable is unbound.
fn eval(t: &Term, s: &Subst) -> Result<Option<Symbol>, ()> {
    Ok(Some(match t {
        Term::Int(i) => Symbol::Int(*i),
        Term::Const(c) => Symbol::Sym(c.clone()),
        Term::Var(v) => match s.get(v) {
            Some(x) => x.clone(),
            None => return Ok(None),
        },
        Term::Func(n, args) => {
            let mut out = Vec::with_capacity(args.len());
            for a in args {
                match eval(a, s)? {
                    Some(x) => out.push(x),
                    None => return Ok(None),
                }
            }
            Symbol::Func(n.clone(), out)
        }
        Term::Bin(a, op, b) => {
            let (Some(x), Some(y)) = (eval(a, s)?, eval(b, s)?) else {
                return Ok(None);
            };
            let (Some(x), Some(y)) = (x.as_int(), y.as_int()) else {
                return Err(());
            };
            Symbol::Int(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
            })
        }
    }))
}

fn ground_atom(a: &AspAtom, s: &Subst) -> Result<Option<Symbol>, ()> {
    let mut args = Vec::with_capacity(a.args.len());
    for t in &a.args {
        match eval(t, s)? {
            Some(x) => args.push(x),
            None => return Ok(None),
        }
    }
    Ok(Some(Symbol::atom(&a.pred, args)))
}

/// Unifies a pattern with a ground term, extending `s`.
fn unify(p: &Term, v: &Symbol, s: &mut Subst) -> bool {
    match (p, v) {
        (Term::Var(x), _) if x == "_" => true,
        (Term::Var(x), _) => match s.get(x) {
            Some(bound) => bound == v,
            None => {
                s.insert(x.clone(), v.clone());
                true
            }
        },
        (Term::Int(i), Symbol::Int(j)) => i == j,
        (Term::Const(c), Symbol::Sym(d)) => c == d,
        (Term::Func(n, args), Symbol::Func(m, vals)) => {
            n == m && args.len() == vals.len() && args.iter().zip(vals).all(|(a, b)| unify(a, b, s))
        }
        (Term::Bin(..), _) => matches!(eval(p, s), Ok(Some(x)) if &x == v),
        _ => false,
    }
}

#[derive(Default)]
struct Facts {
    set: HashSet<Symbol>,
    by_pred: HashMap<(String, usize), Vec<Symbol>>,
}

impl Facts {
    fn insert(&mut self, a: Symbol) -> bool {
        if self.set.insert(a.clone()) {
            self.by_pred
                .entry((a.name().to_string(), a.args().len()))
                .or_default()
                .push(a);
            true
        } else {
            false
        }
    }

    fn candidates(&self, a: &AspAtom) -> &[Symbol] {
        self.by_pred
            .get(&(a.pred.clone(), a.args.len()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// All substitutions making every atom of `pos` a member of `facts`.
fn matches(pos: &[&AspAtom], facts: &Facts, s: Subst, out: &mut Vec<Subst>) {
    let Some((first, rest)) = pos.split_first() else {
        out.push(s);
        return;
    };
    for cand in facts.candidates(first) {
        let mut s2 = s.clone();
        if first.args.iter().zip(cand.args()).all(|(p, v)| unify(p, v, &mut s2)) {
            matches(rest, facts, s2, out);
        }
    }
}

fn vars_of(t: &Term, out: &mut BTreeSet<String>) {
    match t {
        Term::Var(v) if v != "_" => {
            out.insert(v.clone());
        }
        Term::Func(_, args) => args.iter().for_each(|a| vars_of(a, out)),
        Term::Bin(a, _, b) => {
            vars_of(a, out);
            vars_of(b, out);
        }
        _ => {}
    }
}

fn atom_vars(a: &AspAtom) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    a.args.iter().for_each(|t| vars_of(t, &mut out));
    out
}

impl Template {
    fn positives(&self) -> Vec<&AspAtom> {
        self.body.iter().filter(|l| l.positive).map(|l| &l.atom).collect()
    }

    fn check_safety(&self) -> Result<(), GroundError> {
        let mut bound = BTreeSet::new();
        for a in self.positives() {
            bound.extend(atom_vars(a));
        }
        let mut need = BTreeSet::new();
        for l in self.body.iter().filter(|l| !l.positive) {
            need.extend(atom_vars(&l.atom));
        }
        match &self.head {
            Head::Atom(a) => need.extend(atom_vars(a)),
            Head::Choice { elems, .. } => {
                for e in elems {
                    let mut local = bound.clone();
                    for c in &e.condition {
                        local.extend(atom_vars(c));
                    }
                    if let Some(v) = atom_vars(&e.atom).difference(&local).next() {
                        return Err(GroundError::Unsafe {
                            var: v.clone(),
                            rule: self.text.clone(),
                        });
                    }
                }
            }
            Head::None => {}
        }
        match need.difference(&bound).next() {
            Some(v) => Err(GroundError::Unsafe {
                var: v.clone(),
                rule: self.text.clone(),
            }),
            None => Ok(()),
        }
    }
}

const FALSITY: &str = "__falsity";

/// Grounds a parsed program into a normal ground program. Constraints
/// become `f :- body, not f` over one fresh atom `f`; `1{...}1` choices
/// become one rule per element blocked by every other element.
pub fn ground_statements(stmts: &[Statement], horizon: Option<usize>) -> Result<GroundProgram, GroundError> {
    let mut consts: HashMap<String, i64> = HashMap::new();
    let mut blocks: BTreeMap<String, (Option<String>, Vec<Statement>)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut current = "base".to_string();
    blocks.insert(current.clone(), (None, Vec::new()));
    order.push(current.clone());
    for st in stmts {
        match st {
            Statement::Const { name, value } => {
                consts.entry(name.clone()).or_insert(*value);
            }
            Statement::Program { name, params } => {
                if params.len() > 1 {
                    return Err(GroundError::UnknownBlock(name.clone()));
                }
                current = name.clone();
                if !blocks.contains_key(name) {
                    order.push(name.clone());
                }
                blocks
                    .entry(name.clone())
                    .or_insert_with(|| (params.first().cloned(), Vec::new()));
            }
            Statement::Comment(_) => {}
            other => blocks.get_mut(&current).expect("current block").1.push(other.clone()),
        }
    }
    let n = match horizon {
        Some(n) => Some(n as i64),
        None => consts.get("horizon").copied(),
    };

    let mut templates = Vec::new();
    let mut facts = Facts::default();
    for name in &order {
        let (param, body) = &blocks[name];
        let steps: Vec<i64> = match (name.as_str(), param) {
            (_, None) => vec![0],
            ("state", Some(_)) => (0..=n.ok_or(GroundError::NoHorizon)?).collect(),
            ("step", Some(_)) => (0..n.ok_or(GroundError::NoHorizon)?).collect(),
            ("check", Some(_)) => vec![n.ok_or(GroundError::NoHorizon)?],
            (other, Some(_)) => return Err(GroundError::UnknownBlock(other.to_string())),
        };
        for t in steps {
            let mut c = consts.clone();
            if let Some(p) = param {
                c.insert(p.clone(), t);
            }
            for st in body {
                match st {
                    Statement::Rule(r) => {
                        let head = match &r.head {
                            Head::Atom(a) => Head::Atom(subst_atom(a, &c)),
                            Head::None => Head::None,
                            Head::Choice { lower, upper, elems } => Head::Choice {
                                lower: *lower,
                                upper: *upper,
                                elems: elems
                                    .iter()
                                    .map(|e| super::ChoiceElem {
                                        atom: subst_atom(&e.atom, &c),
                                        condition: e.condition.iter().map(|a| subst_atom(a, &c)).collect(),
                                    })
                                    .collect(),
                            },
                        };
                        let body = r
                            .body
                            .iter()
                            .map(|l| BodyLit {
                                positive: l.positive,
                                atom: subst_atom(&l.atom, &c),
                            })
                            .collect();
                        let tpl = Template {
                            head,
                            body,
                            text: r.to_string(),
                        };
                        tpl.check_safety()?;
                        templates.push(tpl);
                    }
                    Statement::External(a) if name == "check" => {
                        let g = ground_atom(&subst_atom(a, &c), &Subst::new())
                            .map_err(|_| GroundError::Arithmetic(a.to_string()))?
                            .ok_or_else(|| GroundError::Unsafe {
                                var: "?".into(),
                                rule: a.to_string(),
                            })?;
                        templates.push(Template {
                            head: Head::Atom(AspAtom {
                                pred: g.name().to_string(),
                                args: g.args().iter().map(symbol_term).collect(),
                            }),
                            body: Vec::new(),
                            text: a.to_string(),
                        });
                    }
                    _ => {}
                }
            }
        }
    }

    // Possible atoms: least model ignoring negation.
    loop {
        let mut changed = false;
        for tpl in &templates {
            let mut subs = Vec::new();
            matches(&tpl.positives(), &facts, Subst::new(), &mut subs);
            for s in subs {
                for h in heads(tpl, &s, &facts)? {
                    changed |= facts.insert(h);
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut prog = GroundProgram::default();
    let mut seen = HashSet::new();
    for tpl in &templates {
        let mut subs = Vec::new();
        matches(&tpl.positives(), &facts, Subst::new(), &mut subs);
        for s in subs {
            let arith = |_| GroundError::Arithmetic(tpl.text.clone());
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for l in &tpl.body {
                let g = ground_atom(&l.atom, &s).map_err(arith)?.expect("safe rule");
                if l.positive {
                    pos.push(g);
                } else if facts.set.contains(&g) {
                    neg.push(g);
                }
            }
            match &tpl.head {
                Head::Atom(a) => {
                    let h = ground_atom(a, &s).map_err(arith)?.expect("safe rule");
                    if seen.insert((h.clone(), pos.clone(), neg.clone())) {
                        prog.add_rule(h, pos, neg);
                    }
                }
                Head::None => {
                    let f = Symbol::Sym(FALSITY.into());
                    neg.push(f.clone());
                    if seen.insert((f.clone(), pos.clone(), neg.clone())) {
                        prog.add_rule(f, pos, neg);
                    }
                }
                Head::Choice { lower, upper, .. } => {
                    if (*lower, *upper) != (1, 1) {
                        return Err(GroundError::UnsupportedChoice(tpl.text.clone()));
                    }
                    let elems = heads(tpl, &s, &facts)?;
                    if elems.is_empty() {
                        let f = Symbol::Sym(FALSITY.into());
                        let mut neg = neg.clone();
                        neg.push(f.clone());
                        prog.add_rule(f, pos.clone(), neg);
                    }
                    for (i, e) in elems.iter().enumerate() {
                        let mut n2 = neg.clone();
                        n2.extend(
                            elems
                                .iter()
                                .enumerate()
                                .filter(|(j, _)| *j != i)
                                .map(|(_, x)| x.clone()),
                        );
                        if seen.insert((e.clone(), pos.clone(), n2.clone())) {
                            prog.add_rule(e.clone(), pos.clone(), n2);
                        }
                    }
                }
            }
        }
    }
    Ok(prog)
}

fn symbol_term(s: &Symbol) -> Term {
    match s {
        Symbol::Int(i) => Term::Int(*i),
        Symbol::Sym(c) => Term::Const(c.clone()),
        Symbol::Func(n, a) => Term::Func(n.clone(), a.iter().map(symbol_term).collect()),
    }
}

/// Ground head atoms of `tpl` under `s`; for choices, every element whose
/// condition holds, in a canonical order.
fn heads(tpl: &Template, s: &Subst, facts: &Facts) -> Result<Vec<Symbol>, GroundError> {
    let arith = |_| GroundError::Arithmetic(tpl.text.clone());
    match &tpl.head {
        Head::Atom(a) => Ok(vec![ground_atom(a, s).map_err(arith)?.expect("safe rule")]),
        Head::None => Ok(Vec::new()),
        Head::Choice { elems, .. } => {
            let mut out = BTreeSet::new();
            for e in elems {
                let conds: Vec<&AspAtom> = e.condition.iter().collect();
                let mut subs = Vec::new();
                matches(&conds, facts, s.clone(), &mut subs);
                for s2 in subs {
                    out.insert(ground_atom(&e.atom, &s2).map_err(arith)?.expect("safe choice element"));
                }
            }
            Ok(out.into_iter().collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asp::parse_program;

    fn ground(src: &str) -> GroundProgram {
        ground_statements(&parse_program(src).unwrap(), None).unwrap()
    }

    #[test]
    fn instantiates_blocks() {
        let p = ground(
            "#const horizon = 2.
             #program base.
             f(a).
             #program state(t).
             h(X, t) :- f(X).
             #program step(t).
             g(X, t+1) :- h(X, t).
             #program check(t).
             #external query(t).
             done(t) :- query(t), g(a, t).",
        );
        let names: BTreeSet<String> = p.atoms.iter().map(|a| a.to_string()).collect();
        for want in [
            "f(a)", "h(a, 0)", "h(a, 2)", "g(a, 1)", "g(a, 2)", "query(2)", "done(2)",
        ] {
            assert!(names.contains(want), "missing {want}");
        }
        assert!(!names.contains("g(a, 3)"));
    }

    #[test]
    fn choice_elimination() {
        let p = ground("d(1). d(2). 1{p(X): d(X)}1.");
        assert_eq!(p.rules.iter().filter(|r| r.neg.len() == 1).count(), 2);
    }

    #[test]
    fn drops_impossible_negatives() {
        let p = ground("a :- not b.");
        assert_eq!(p.rules.len(), 1);
        assert!(p.rules[0].neg.is_empty());
    }

    #[test]
    fn rejects_unsafe() {
        let err = ground_statements(&parse_program("a(X) :- not b(X).").unwrap(), None).unwrap_err();
        assert!(matches!(err, GroundError::Unsafe { .. }));
    }

    #[test]
    fn needs_horizon_for_timed_blocks() {
        let err = ground_statements(&parse_program("#program step(t). a(t).").unwrap(), None).unwrap_err();
        assert_eq!(err, GroundError::NoHorizon);
    }
}
