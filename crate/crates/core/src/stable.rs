//! Reference semantics used as a brute-force oracle: answer sets of ground
//! normal programs and causal models of ground causal theories.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::action_model::{CausalLiteral, GroundCausalTheory, Head};
use crate::asp::{ground_statements, parse_program, Symbol};

pub const DEFAULT_BOUND: usize = 22;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StableError {
    #[error("{count} atoms to enumerate exceed the brute-force bound of {bound}")]
    TooLarge { count: usize, bound: usize },
    #[error("{0}")]
    Input(String),
}

/// `head :- pos, not neg.`
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundRule {
    pub head: usize,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundProgram {
    pub atoms: Vec<Symbol>,
    index: HashMap<Symbol, usize>,
    pub rules: Vec<GroundRule>,
}

/// A set of atoms, by index into [`GroundProgram::atoms`].
pub type AtomSet = BTreeSet<usize>;

impl GroundProgram {
    pub fn atom(&mut self, s: Symbol) -> usize {
        if let Some(&i) = self.index.get(&s) {
            return i;
        }
        self.atoms.push(s.clone());
        self.index.insert(s, self.atoms.len() - 1);
        self.atoms.len() - 1
    }

    pub fn lookup(&self, s: &Symbol) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn add_rule(&mut self, head: Symbol, pos: Vec<Symbol>, neg: Vec<Symbol>) {
        let head = self.atom(head);
        let pos = pos.into_iter().map(|a| self.atom(a)).collect();
        let neg = neg.into_iter().map(|a| self.atom(a)).collect();
        self.rules.push(GroundRule { head, pos, neg });
    }

    /// Adds `:- pos, not neg` as `x :- pos, not neg, not x` over a fresh
    /// atom `x`.
    pub fn add_constraint(&mut self, pos: Vec<Symbol>, mut neg: Vec<Symbol>) {
        let fresh = Symbol::Sym(format!("__c{}", self.rules.len()));
        neg.push(fresh.clone());
        self.add_rule(fresh, pos, neg);
    }

    /// Parses and grounds program text (facts, rules, constraints, choice
    /// rules and program blocks).
    pub fn parse(text: &str) -> Result<GroundProgram, StableError> {
        let stmts = parse_program(text).map_err(|e| StableError::Input(e.to_string()))?;
        ground_statements(&stmts, None).map_err(|e| StableError::Input(e.to_string()))
    }

    pub fn names(&self, s: &AtomSet) -> BTreeSet<String> {
        s.iter().map(|&i| self.atoms[i].to_string()).collect()
    }

    /// Atoms occurring in some negative body.
    pub fn negative_atoms(&self) -> AtomSet {
        self.rules.iter().flat_map(|r| r.neg.iter().copied()).collect()
    }

    pub fn is_positive(&self) -> bool {
        self.rules.iter().all(|r| r.neg.is_empty())
    }

    pub fn is_model(&self, s: &AtomSet) -> bool {
        self.rules.iter().all(|r| {
            !(r.pos.iter().all(|a| s.contains(a)) && r.neg.iter().all(|a| !s.contains(a))) || s.contains(&r.head)
        })
    }
}

/// Deletes rules with a negative atom in `s` and strips the remaining
/// negative bodies.
pub fn gl_reduct(p: &GroundProgram, s: &AtomSet) -> GroundProgram {
    GroundProgram {
        atoms: p.atoms.clone(),
        index: p.index.clone(),
        rules: p
            .rules
            .iter()
            .filter(|r| r.neg.iter().all(|a| !s.contains(a)))
            .map(|r| GroundRule {
                head: r.head,
                pos: r.pos.clone(),
                neg: Vec::new(),
            })
            .collect(),
    }
}

/// Least model of a positive program. Negative bodies, if any, are
/// ignored.
pub fn minimal_model(p: &GroundProgram) -> AtomSet {
    least_model(p, |_| true)
}

/// Least model of the rules admitted by `keep`, by unit propagation.
fn least_model(p: &GroundProgram, keep: impl Fn(&GroundRule) -> bool) -> AtomSet {
    let n = p.atoms.len();
    let mut watch: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut missing = vec![0usize; p.rules.len()];
    let mut model = vec![false; n];
    let mut queue = Vec::new();
    for (i, r) in p.rules.iter().enumerate() {
        if !keep(r) {
            missing[i] = usize::MAX;
            continue;
        }
        let distinct: BTreeSet<usize> = r.pos.iter().copied().collect();
        missing[i] = distinct.len();
        for a in distinct {
            watch[a].push(i);
        }
        if missing[i] == 0 && !model[r.head] {
            model[r.head] = true;
            queue.push(r.head);
        }
    }
    while let Some(a) = queue.pop() {
        for &i in &watch[a] {
            if missing[i] == usize::MAX {
                continue;
            }
            missing[i] -= 1;
            if missing[i] == 0 {
                let h = p.rules[i].head;
                if !model[h] {
                    model[h] = true;
                    queue.push(h);
                }
            }
        }
    }
    (0..n).filter(|&a| model[a]).collect()
}

/// Answer sets by enumeration. A candidate is fixed by its intersection
/// with the atoms that occur negatively, so only those are enumerated;
/// `bound` limits their number.
pub fn answer_sets(p: &GroundProgram, bound: usize) -> Result<Vec<AtomSet>, StableError> {
    let neg: Vec<usize> = p.negative_atoms().into_iter().collect();
    if neg.len() > bound {
        return Err(StableError::TooLarge {
            count: neg.len(),
            bound,
        });
    }
    let mut out = Vec::new();
    let mut guess = vec![false; p.atoms.len()];
    for mask in 0u64..(1u64 << neg.len()) {
        for (bit, &a) in neg.iter().enumerate() {
            guess[a] = mask & (1 << bit) != 0;
        }
        let m = least_model(p, |r| r.neg.iter().all(|&a| !guess[a]));
        if neg.iter().all(|&a| m.contains(&a) == guess[a]) {
            out.push(m);
        }
    }
    sort_canonical(p, &mut out);
    Ok(out)
}

/// Answer sets by checking every subset of the whole atom universe against
/// the definition. Exponential in the universe; for cross-checks only.
pub fn answer_sets_naive(p: &GroundProgram, bound: usize) -> Result<Vec<AtomSet>, StableError> {
    let n = p.atoms.len();
    if n > bound {
        return Err(StableError::TooLarge { count: n, bound });
    }
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << n) {
        let s: AtomSet = (0..n).filter(|&a| mask & (1 << a) != 0).collect();
        if minimal_model(&gl_reduct(p, &s)) == s {
            out.push(s);
        }
    }
    sort_canonical(p, &mut out);
    Ok(out)
}

fn sort_canonical(p: &GroundProgram, sets: &mut [AtomSet]) {
    sets.sort_by_cached_key(|s| p.names(s).into_iter().collect::<Vec<_>>());
}

/// Total interpretation of a causal theory: truth value per atom.
pub type Interpretation = [bool];

fn lit_holds(i: &Interpretation, l: CausalLiteral) -> bool {
    i[l.atom] == l.positive
}

/// T^I: heads of the rules whose bodies `i` satisfies, deduplicated.
pub fn causal_reduction(t: &GroundCausalTheory, i: &Interpretation) -> Vec<Head> {
    let heads: BTreeSet<Head> = t
        .rules
        .iter()
        .filter(|r| r.body.iter().all(|&l| lit_holds(i, l)))
        .map(|r| r.head)
        .collect();
    heads.into_iter().collect()
}

/// Whether `i` is the unique model of T^I. Since every head is a literal
/// or falsity, T^I has exactly one model iff it is consistent, free of
/// falsity and mentions every atom; that model is then `i` iff `i`
/// satisfies it.
pub fn is_causal_model(t: &GroundCausalTheory, i: &Interpretation) -> bool {
    let mut decided = vec![false; t.atoms.len()];
    for h in causal_reduction(t, i) {
        match h {
            Head::False => return false,
            Head::Lit(l) => {
                if !lit_holds(i, l) {
                    return false;
                }
                decided[l.atom] = true;
            }
        }
    }
    decided.into_iter().all(|d| d)
}

/// The same test by enumerating every interpretation of the universe.
pub fn is_causal_model_naive(t: &GroundCausalTheory, i: &Interpretation, bound: usize) -> Result<bool, StableError> {
    let n = t.atoms.len();
    if n > bound {
        return Err(StableError::TooLarge { count: n, bound });
    }
    let reduct = causal_reduction(t, i);
    let mut models = 0usize;
    let mut i_is_model = false;
    let mut cand = vec![false; n];
    for mask in 0u64..(1u64 << n) {
        for (a, c) in cand.iter_mut().enumerate() {
            *c = mask & (1 << a) != 0;
        }
        let ok = reduct.iter().all(|h| match h {
            Head::False => false,
            Head::Lit(l) => lit_holds(&cand, *l),
        });
        if ok {
            models += 1;
            if cand == i {
                i_is_model = true;
            }
        }
    }
    Ok(models == 1 && i_is_model)
}
