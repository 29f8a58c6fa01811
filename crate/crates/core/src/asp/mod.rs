//! Abstract syntax and text emission for the ASP fragment produced by the
//! compiler: normal rules, constraints, unit-cardinality choice rules,
//! `#program`, `#external` and `#const` directives.

mod ground;
mod parser;

use std::fmt;

pub use ground::{ground_statements, GroundError, Symbol};
pub use parser::{parse_program, ParseError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Int(i64),
    /// Lowercase symbolic constant.
    Const(String),
    Var(String),
    Func(String, Vec<Term>),
    Bin(Box<Term>, BinOp, Box<Term>),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.to_string())
    }

    pub fn cst(name: &str) -> Term {
        Term::Const(name.to_string())
    }

    /// `t+k` / `t-k` relative to the block parameter `t`.
    pub fn time(offset: i64) -> Term {
        match offset {
            0 => Term::cst("t"),
            k if k > 0 => Term::Bin(Box::new(Term::cst("t")), BinOp::Add, Box::new(Term::Int(k))),
            k => Term::Bin(Box::new(Term::cst("t")), BinOp::Sub, Box::new(Term::Int(-k))),
        }
    }

    pub fn func(name: &str, args: Vec<Term>) -> Term {
        if args.is_empty() {
            Term::Const(name.to_string())
        } else {
            Term::Func(name.to_string(), args)
        }
    }
}

fn write_args(f: &mut fmt::Formatter<'_>, args: &[Term]) -> fmt::Result {
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{a}")?;
    }
    Ok(())
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Int(i) => write!(f, "{i}"),
            Term::Const(c) | Term::Var(c) => f.write_str(c),
            Term::Func(name, args) => {
                write!(f, "{name}(")?;
                write_args(f, args)?;
                f.write_str(")")
            }
            Term::Bin(a, op, b) => {
                let op = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                };
                write!(f, "{a}{op}{b}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AspAtom {
    pub pred: String,
    pub args: Vec<Term>,
}

impl AspAtom {
    pub fn new(pred: &str, args: Vec<Term>) -> Self {
        AspAtom {
            pred: pred.to_string(),
            args,
        }
    }
}

impl fmt::Display for AspAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pred)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            write_args(f, &self.args)?;
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BodyLit {
    pub positive: bool,
    pub atom: AspAtom,
}

impl BodyLit {
    pub fn pos(atom: AspAtom) -> Self {
        BodyLit { positive: true, atom }
    }

    pub fn neg(atom: AspAtom) -> Self {
        BodyLit { positive: false, atom }
    }
}

impl fmt::Display for BodyLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.positive {
            f.write_str("not ")?;
        }
        self.atom.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChoiceElem {
    pub atom: AspAtom,
    pub condition: Vec<AspAtom>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Head {
    Atom(AspAtom),
    Choice {
        lower: u32,
        upper: u32,
        elems: Vec<ChoiceElem>,
    },
    /// Integrity constraint.
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AspRule {
    pub head: Head,
    pub body: Vec<BodyLit>,
}

impl AspRule {
    pub fn fact(atom: AspAtom) -> Self {
        AspRule {
            head: Head::Atom(atom),
            body: Vec::new(),
        }
    }

    pub fn new(head: AspAtom, body: Vec<BodyLit>) -> Self {
        AspRule {
            head: Head::Atom(head),
            body,
        }
    }

    pub fn constraint(body: Vec<BodyLit>) -> Self {
        AspRule { head: Head::None, body }
    }
}

impl fmt::Display for AspRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.head {
            Head::Atom(a) => write!(f, "{a}")?,
            Head::Choice { lower, upper, elems } => {
                write!(f, "{lower}{{")?;
                for (i, e) in elems.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write!(f, "{}", e.atom)?;
                    if !e.condition.is_empty() {
                        f.write_str(": ")?;
                        for (j, c) in e.condition.iter().enumerate() {
                            if j > 0 {
                                f.write_str(", ")?;
                            }
                            write!(f, "{c}")?;
                        }
                    }
                }
                write!(f, "}}{upper}")?;
            }
            Head::None => {}
        }
        if !self.body.is_empty() {
            if matches!(self.head, Head::None) {
                f.write_str(":- ")?;
            } else {
                f.write_str(" :- ")?;
            }
            for (i, l) in self.body.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{l}")?;
            }
        } else if matches!(self.head, Head::None) {
            f.write_str(":-")?;
        }
        f.write_str(".")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Statement {
    Rule(AspRule),
    Program { name: String, params: Vec<String> },
    External(AspAtom),
    Const { name: String, value: i64 },
    Comment(String),
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Rule(r) => r.fmt(f),
            Statement::Program { name, params } if params.is_empty() => write!(f, "#program {name}."),
            Statement::Program { name, params } => write!(f, "#program {name}({}).", params.join(", ")),
            Statement::External(a) => write!(f, "#external {a}."),
            Statement::Const { name, value } => write!(f, "#const {name} = {value}."),
            Statement::Comment(c) => write!(f, "% {c}"),
        }
    }
}

/// A titled group of statements.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Section {
    pub title: String,
    pub statements: Vec<Statement>,
}

impl Section {
    pub fn new(title: &str) -> Self {
        Section {
            title: title.to_string(),
            statements: Vec::new(),
        }
    }

    pub fn block(&mut self, name: &str, param: Option<&str>) {
        self.statements.push(Statement::Program {
            name: name.to_string(),
            params: param.map(|p| vec![p.to_string()]).unwrap_or_default(),
        });
    }

    pub fn rule(&mut self, r: AspRule) {
        self.statements.push(Statement::Rule(r));
    }

    pub fn push(&mut self, s: Statement) {
        self.statements.push(s);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AspProgram {
    pub sections: Vec<Section>,
}

impl AspProgram {
    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.sections.iter().flat_map(|s| s.statements.iter())
    }

    pub fn rules(&self) -> impl Iterator<Item = &AspRule> {
        self.statements().filter_map(|s| match s {
            Statement::Rule(r) => Some(r),
            _ => None,
        })
    }

    /// Deterministic program text: one statement per line, each section
    /// introduced by a comment line with its title.
    pub fn emit_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("% {}\n", s.title));
            for st in &s.statements {
                out.push_str(&st.to_string());
                out.push('\n');
            }
        }
        out
    }
}

impl fmt::Display for AspProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.emit_text())
    }
}
