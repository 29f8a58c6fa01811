//! Parser for the ASP fragment the compiler emits.

use thiserror::Error;

use super::{AspAtom, AspRule, BinOp, BodyLit, ChoiceElem, Head, Statement, Term};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("ASP parse error at line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_program(text: &str) -> Result<Vec<Statement>, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        line: 1,
    };
    let mut out = Vec::new();
    loop {
        p.skip_ws();
        if p.pos >= p.src.len() {
            return Ok(out);
        }
        out.push(p.statement()?);
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
}

impl Parser<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line: self.line,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c == b'\n' {
                self.line += 1;
                self.pos += 1;
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if c == b'%' {
                while let Some(c) = self.peek() {
                    if c == b'\n' {
                        break;
                    }
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(s.as_bytes()) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn word(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn statement(&mut self) -> Result<Statement, ParseError> {
        if self.eat("#program") {
            let name = self.word();
            let mut params = Vec::new();
            if self.eat("(") {
                loop {
                    params.push(self.word());
                    if !self.eat(",") {
                        break;
                    }
                }
                self.expect(")")?;
            }
            self.expect(".")?;
            return Ok(Statement::Program { name, params });
        }
        if self.eat("#external") {
            let a = self.atom()?;
            self.expect(".")?;
            return Ok(Statement::External(a));
        }
        if self.eat("#const") {
            let name = self.word();
            self.expect("=")?;
            let value = self.int()?;
            self.expect(".")?;
            return Ok(Statement::Const { name, value });
        }
        let head = if self.eat(":-") {
            let body = self.body()?;
            self.expect(".")?;
            return Ok(Statement::Rule(AspRule::constraint(body)));
        } else {
            self.head()?
        };
        let body = if self.eat(":-") { self.body()? } else { Vec::new() };
        self.expect(".")?;
        Ok(Statement::Rule(AspRule { head, body }))
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        self.skip_ws();
        let neg = self.eat("-");
        let w = self.word();
        match w.parse::<i64>() {
            Ok(v) => Ok(if neg { -v } else { v }),
            Err(_) => self.err(format!("expected an integer, found `{w}`")),
        }
    }

    fn head(&mut self) -> Result<Head, ParseError> {
        self.skip_ws();
        if self.peek().is_some_and(|c| c.is_ascii_digit()) || self.peek() == Some(b'{') {
            let lower = if self.peek() == Some(b'{') {
                0
            } else {
                self.int()? as u32
            };
            self.expect("{")?;
            let mut elems = Vec::new();
            loop {
                let atom = self.atom()?;
                let mut condition = Vec::new();
                if self.eat(":") {
                    loop {
                        condition.push(self.atom()?);
                        if !self.eat(",") {
                            break;
                        }
                    }
                }
                elems.push(ChoiceElem { atom, condition });
                if !self.eat(";") {
                    break;
                }
            }
            self.expect("}")?;
            self.skip_ws();
            let upper = if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.int()? as u32
            } else {
                u32::MAX
            };
            return Ok(Head::Choice { lower, upper, elems });
        }
        Ok(Head::Atom(self.atom()?))
    }

    fn body(&mut self) -> Result<Vec<BodyLit>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            let save = (self.pos, self.line);
            let positive = if self.word() == "not" {
                false
            } else {
                (self.pos, self.line) = save;
                true
            };
            out.push(BodyLit {
                positive,
                atom: self.atom()?,
            });
            if !self.eat(",") {
                return Ok(out);
            }
        }
    }

    fn atom(&mut self) -> Result<AspAtom, ParseError> {
        let pred = self.word();
        if pred.is_empty() || !pred.as_bytes()[0].is_ascii_lowercase() {
            return self.err(format!("expected a predicate, found `{pred}`"));
        }
        let mut args = Vec::new();
        if self.eat("(") {
            args = self.terms()?;
            self.expect(")")?;
        }
        Ok(AspAtom { pred, args })
    }

    fn terms(&mut self) -> Result<Vec<Term>, ParseError> {
        let mut out = vec![self.term()?];
        while self.eat(",") {
            out.push(self.term()?);
        }
        Ok(out)
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let mut t = self.simple_term()?;
        loop {
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(t);
            };
            let rhs = self.simple_term()?;
            t = Term::Bin(Box::new(t), op, Box::new(rhs));
        }
    }

    fn simple_term(&mut self) -> Result<Term, ParseError> {
        self.skip_ws();
        let w = self.word();
        let Some(&first) = w.as_bytes().first() else {
            return self.err("expected a term");
        };
        if first.is_ascii_digit() {
            return match w.parse() {
                Ok(v) => Ok(Term::Int(v)),
                Err(_) => self.err(format!("bad integer `{w}`")),
            };
        }
        if first.is_ascii_uppercase() || first == b'_' {
            return Ok(Term::Var(w));
        }
        if self.eat("(") {
            let args = self.terms()?;
            self.expect(")")?;
            return Ok(Term::Func(w, args));
        }
        Ok(Term::Const(w))
    }
}
