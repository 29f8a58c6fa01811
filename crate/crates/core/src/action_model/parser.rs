//! Recursive-descent parser for the action-model language.

use std::collections::BTreeSet;

use super::{ActionSchema, Arg, Atom, CausalRule, CausalTheory, Literal, ModelError, RuleKind, Schema, ANY_SORT};
use crate::skeleton::{parse_step, SkeletonPlan};

/// Parses and validates an action model.
pub fn parse_action_model(text: &str) -> Result<CausalTheory, ModelError> {
    let mut p = Parser::new(text);
    let mut theory = CausalTheory::default();
    let mut declared: BTreeSet<String> = BTreeSet::new();

    loop {
        p.skip_trivia();
        if p.at_end() {
            break;
        }
        let line = p.line;
        let keyword = p.ident()?;
        match keyword.as_str() {
            "sort" => {
                let name = p.ident()?;
                p.expect('=')?;
                let mut members = vec![p.ident()?];
                while p.eat('|') {
                    members.push(p.ident()?);
                }
                p.expect('.')?;
                if name == ANY_SORT || theory.signature.sorts.insert(name.clone(), members).is_some() {
                    return Err(ModelError::Duplicate { line, name });
                }
            }
            "fluent" => {
                loop {
                    let schema = p.schema()?;
                    if !declared.insert(schema.name.clone()) {
                        return Err(ModelError::Duplicate {
                            line,
                            name: schema.name,
                        });
                    }
                    theory.signature.fluents.insert(schema.name.clone(), schema);
                    if !p.eat(',') {
                        break;
                    }
                }
                p.expect('.')?;
            }
            "action" => {
                loop {
                    let schema = p.schema()?;
                    if schema.params.is_empty() {
                        return Err(p.error_at(line, "an action takes at least the acting character"));
                    }
                    p.skip_trivia();
                    let description = if p.peek() == Some('"') { Some(p.string()?) } else { None };
                    if !declared.insert(schema.name.clone()) {
                        return Err(ModelError::Duplicate {
                            line,
                            name: schema.name,
                        });
                    }
                    theory
                        .signature
                        .actions
                        .insert(schema.name.clone(), ActionSchema { schema, description });
                    if !p.eat(',') {
                        break;
                    }
                }
                p.expect('.')?;
            }
            "complement" => {
                let a = p.ident()?;
                p.expect(',')?;
                let b = p.ident()?;
                p.expect('.')?;
                theory.signature.complements.push((a, b));
            }
            "state" | "relation" => {
                let from = p.ident()?;
                p.expect_str("->")?;
                let to = p.ident()?;
                p.expect('.')?;
                if keyword == "state" {
                    theory.state_map.push((from, to));
                } else {
                    theory.relation_map.push((from, to));
                }
            }
            "support" => {
                loop {
                    theory.support.insert(p.ident()?);
                    if !p.eat(',') {
                        break;
                    }
                }
                p.expect('.')?;
            }
            "initially" => {
                loop {
                    theory.initially.push(p.atom()?);
                    if !p.eat(',') {
                        break;
                    }
                }
                p.expect('.')?;
            }
            "subtask" => {
                let name = p.ident()?;
                p.expect('=')?;
                let body = p.raw_until('.')?;
                p.expect('.')?;
                let mut steps = Vec::new();
                for part in body.split(';') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    let step = parse_step(part).map_err(|e| ModelError::Syntax {
                        line,
                        column: 1,
                        message: format!("in subtask `{name}`: {e}"),
                    })?;
                    steps.push(step);
                }
                if !declared.insert(name.clone()) {
                    return Err(ModelError::Duplicate { line, name });
                }
                theory.signature.subtasks.insert(name, SkeletonPlan::Seq(steps));
            }
            "caused" => {
                let head = p.atom()?;
                p.skip_trivia();
                if p.peek() == Some('|') {
                    return Err(ModelError::Unsupported {
                        line,
                        message: "disjunctive heads are not supported".into(),
                    });
                }
                let mut if_part = Vec::new();
                let mut after = None;
                if p.eat_keyword("if") {
                    if_part = p.conjunction()?;
                }
                if p.eat_keyword("after") {
                    after = Some(p.conjunction()?);
                }
                p.expect('.')?;
                let (kind, action, after_part) = match after {
                    Some(lits) => {
                        let (action, rest) = split_action(&theory, lits, line)?;
                        (RuleKind::Dynamic, Some(action), rest)
                    }
                    None => (RuleKind::Static, None, Vec::new()),
                };
                theory.rules.push(CausalRule {
                    kind,
                    head: Some(head),
                    if_part,
                    action,
                    after_part,
                    line,
                });
            }
            "inertial" => {
                loop {
                    let atom = p.atom()?;
                    theory.rules.push(CausalRule {
                        kind: RuleKind::Inertial,
                        head: Some(atom),
                        if_part: Vec::new(),
                        action: None,
                        after_part: Vec::new(),
                        line,
                    });
                    if !p.eat(',') {
                        break;
                    }
                }
                p.expect('.')?;
            }
            "nonexecutable" => {
                let action = p.atom()?;
                let conds = if p.eat_keyword("if") {
                    p.conjunction()?
                } else {
                    Vec::new()
                };
                p.expect('.')?;
                theory.rules.push(CausalRule {
                    kind: RuleKind::Nonexecutable,
                    head: None,
                    if_part: Vec::new(),
                    action: Some(action),
                    after_part: conds,
                    line,
                });
            }
            "constraint" => {
                let body = p.conjunction()?;
                p.expect('.')?;
                theory.rules.push(CausalRule {
                    kind: RuleKind::Constraint,
                    head: None,
                    if_part: body,
                    action: None,
                    after_part: Vec::new(),
                    line,
                });
            }
            other => {
                return Err(p.error_at(line, &format!("unknown statement `{other}`")));
            }
        }
    }

    validate(&theory)?;
    Ok(theory)
}

/// Separates the single action atom of an `after` part from its fluent
/// literals. Declarations may follow the rule, so unknown names are
/// resolved later by `validate`; here only the shape is checked.
fn split_action(theory: &CausalTheory, lits: Vec<Literal>, line: usize) -> Result<(Atom, Vec<Literal>), ModelError> {
    let _ = theory;
    let mut action = None;
    let mut rest = Vec::new();
    for lit in lits {
        // The action is the first positive literal; `validate` checks it
        // really names an action and that the remaining ones are fluents.
        if action.is_none() && lit.positive {
            action = Some(lit.atom);
        } else {
            rest.push(lit);
        }
    }
    match action {
        Some(a) => Ok((a, rest)),
        None => Err(ModelError::Unsupported {
            line,
            message: "`after` part must mention an action".into(),
        }),
    }
}

fn check_atom(theory: &CausalTheory, atom: &Atom, line: usize, want_action: bool) -> Result<(), ModelError> {
    let sig = &theory.signature;
    let expected = if want_action {
        sig.actions.get(&atom.name).map(|a| a.schema.arity())
    } else {
        sig.fluents.get(&atom.name).map(Schema::arity)
    };
    match expected {
        None => Err(ModelError::Undeclared {
            line,
            what: if want_action { "action" } else { "fluent" },
            name: atom.name.clone(),
        }),
        Some(n) if n != atom.args.len() => Err(ModelError::Arity {
            line,
            name: atom.name.clone(),
            expected: n,
            found: atom.args.len(),
        }),
        Some(_) => Ok(()),
    }
}

fn validate(theory: &CausalTheory) -> Result<(), ModelError> {
    let sig = &theory.signature;
    for rule in &theory.rules {
        let line = rule.line;
        if let Some(h) = &rule.head {
            check_atom(theory, h, line, false)?;
        }
        if let Some(a) = &rule.action {
            check_atom(theory, a, line, true)?;
        }
        for lit in rule.if_part.iter().chain(&rule.after_part) {
            check_atom(theory, &lit.atom, line, false)?;
        }
        match rule.kind {
            RuleKind::Dynamic | RuleKind::Static => {
                if rule.if_part.iter().any(|l| !l.positive) {
                    return Err(ModelError::Unsupported {
                        line,
                        message: "negated conditions are only allowed in `after` parts, \
                                  nonexecutable laws and constraints"
                            .into(),
                    });
                }
            }
            RuleKind::Inertial => {
                let head = rule.head.as_ref().expect("inertial head");
                let mut seen = BTreeSet::new();
                for arg in &head.args {
                    match arg {
                        Arg::Var(v) if seen.insert(v.clone()) => {}
                        _ => {
                            return Err(ModelError::Unsupported {
                                line,
                                message: format!(
                                    "inertial `{}` must name the fluent schema with distinct variables",
                                    head.name
                                ),
                            })
                        }
                    }
                }
            }
            RuleKind::Nonexecutable | RuleKind::Constraint => {}
        }
    }
    for atom in &theory.initially {
        check_atom(theory, atom, 0, false)?;
    }
    for (a, b) in &sig.complements {
        for name in [a, b] {
            if !sig.fluents.contains_key(name) {
                return Err(ModelError::Undeclared {
                    line: 0,
                    what: "fluent",
                    name: name.clone(),
                });
            }
        }
        let (na, nb) = (sig.fluents[a].arity(), sig.fluents[b].arity());
        if na != nb {
            return Err(ModelError::Arity {
                line: 0,
                name: b.clone(),
                expected: na,
                found: nb,
            });
        }
    }
    for (map, arity) in [(&theory.state_map, 1usize), (&theory.relation_map, 2)] {
        for (_, fluent) in map {
            match sig.fluents.get(fluent) {
                None => {
                    return Err(ModelError::Undeclared {
                        line: 0,
                        what: "fluent",
                        name: fluent.clone(),
                    })
                }
                Some(s) if s.arity() != arity => {
                    return Err(ModelError::Arity {
                        line: 0,
                        name: fluent.clone(),
                        expected: arity,
                        found: s.arity(),
                    })
                }
                Some(_) => {}
            }
        }
    }
    for verb in &theory.support {
        if !sig.actions.contains_key(verb) {
            return Err(ModelError::Undeclared {
                line: 0,
                what: "action",
                name: verb.clone(),
            });
        }
    }
    for plan in sig.subtasks.values() {
        plan.check_names(sig)
            .map_err(|(what, name)| ModelError::Undeclared { line: 0, what, name })?;
    }
    theory.check_subtasks()
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '%' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn error(&self, message: &str) -> ModelError {
        ModelError::Syntax {
            line: self.line,
            column: self.col,
            message: message.to_string(),
        }
    }

    fn error_at(&self, line: usize, message: &str) -> ModelError {
        ModelError::Syntax {
            line,
            column: 1,
            message: message.to_string(),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_trivia();
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ModelError> {
        if self.eat(c) {
            Ok(())
        } else {
            let found = self.peek().map_or("end of input".to_string(), |f| format!("`{f}`"));
            Err(self.error(&format!("expected `{c}`, found {found}")))
        }
    }

    fn expect_str(&mut self, s: &str) -> Result<(), ModelError> {
        self.skip_trivia();
        if self.src[self.pos..].starts_with(s) {
            for _ in s.chars() {
                self.bump();
            }
            Ok(())
        } else {
            Err(self.error(&format!("expected `{s}`")))
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        self.skip_trivia();
        let rest = &self.src[self.pos..];
        if let Some(tail) = rest.strip_prefix(kw) {
            let after = tail.chars().next();
            if !after.is_some_and(|c| c.is_alphanumeric() || c == '_') {
                for _ in kw.chars() {
                    self.bump();
                }
                return true;
            }
        }
        false
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' {
                self.bump();
            } else {
                break;
            }
        }
        self.src[start..self.pos].to_string()
    }

    /// Lowercase identifier.
    fn ident(&mut self) -> Result<String, ModelError> {
        self.skip_trivia();
        match self.peek() {
            Some(c) if c.is_lowercase() || c == '_' => Ok(self.word()),
            _ => Err(self.error("expected an identifier")),
        }
    }

    fn string(&mut self) -> Result<String, ModelError> {
        self.expect('"')?;
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error("unterminated string")),
                Some('"') => return Ok(out),
                Some('\\') => match self.bump() {
                    Some(c) => out.push(c),
                    None => return Err(self.error("unterminated string")),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn raw_until(&mut self, stop: char) -> Result<String, ModelError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == stop {
                return Ok(self.src[start..self.pos].to_string());
            }
            self.bump();
        }
        Err(self.error(&format!("expected `{stop}`")))
    }

    fn schema(&mut self) -> Result<Schema, ModelError> {
        let name = self.ident()?;
        let mut params = Vec::new();
        if self.eat('(') {
            loop {
                params.push(self.ident()?);
                if !self.eat(',') {
                    break;
                }
            }
            self.expect(')')?;
        }
        Ok(Schema { name, params })
    }

    fn arg(&mut self) -> Result<Arg, ModelError> {
        self.skip_trivia();
        match self.peek() {
            Some(c) if c.is_uppercase() => Ok(Arg::Var(self.word())),
            Some(c) if c.is_ascii_digit() => {
                let w = self.word();
                w.parse()
                    .map(Arg::Id)
                    .map_err(|_| self.error(&format!("bad entity id `{w}`")))
            }
            _ => Err(self.error("expected a variable or an entity id")),
        }
    }

    fn atom(&mut self) -> Result<Atom, ModelError> {
        let name = self.ident()?;
        let mut args = Vec::new();
        if self.eat('(') {
            loop {
                args.push(self.arg()?);
                if !self.eat(',') {
                    break;
                }
            }
            self.expect(')')?;
        }
        Ok(Atom { name, args })
    }

    fn conjunction(&mut self) -> Result<Vec<Literal>, ModelError> {
        if self.eat_keyword("true") {
            let mut out = Vec::new();
            while self.eat('&') {
                out.push(self.literal()?);
            }
            return Ok(out);
        }
        let mut out = vec![self.literal()?];
        while self.eat('&') {
            if self.eat_keyword("true") {
                continue;
            }
            out.push(self.literal()?);
        }
        Ok(out)
    }

    fn literal(&mut self) -> Result<Literal, ModelError> {
        let positive = !self.eat('-');
        let atom = self.atom()?;
        Ok(Literal { positive, atom })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "
        sort washable = clothes_pants | clothes_shirt.
        fluent clean(washable), empty_lh(character), unempty_lh(character),
               unempty_rh(character), holds_lh(character, washable).
        action wash(character, washable).
    ";

    fn model(body: &str) -> Result<CausalTheory, ModelError> {
        parse_action_model(&format!("{HEADER}\n{body}"))
    }

    #[test]
    fn dynamic_law() {
        let t = model("caused clean(O) if true after wash(C, O).").unwrap();
        let r = &t.rules[0];
        assert_eq!(r.kind, RuleKind::Dynamic);
        assert_eq!(r.head.as_ref().unwrap().to_string(), "clean(O)");
        assert_eq!(r.action.as_ref().unwrap().to_string(), "wash(C, O)");
        assert!(r.if_part.is_empty() && r.after_part.is_empty());
    }

    #[test]
    fn inertial_law() {
        let t = model("inertial empty_lh(C).").unwrap();
        assert_eq!(t.rules[0].kind, RuleKind::Inertial);
        assert_eq!(t.rules[0].head.as_ref().unwrap().name, "empty_lh");
    }

    #[test]
    fn nonexecutable_law() {
        let t = model("nonexecutable wash(C, O) if unempty_lh(C) & unempty_rh(C).").unwrap();
        let r = &t.rules[0];
        assert_eq!(r.kind, RuleKind::Nonexecutable);
        assert_eq!(r.after_part.len(), 2);
        assert!(r.head.is_none());
    }

    #[test]
    fn static_law_and_constraint() {
        let t = model(
            "caused unempty_lh(C) if holds_lh(C, O).\n\
             constraint empty_lh(C) & unempty_lh(C).",
        )
        .unwrap();
        assert_eq!(t.rules[0].kind, RuleKind::Static);
        assert_eq!(t.rules[1].kind, RuleKind::Constraint);
        assert_eq!(t.rules[1].if_part.len(), 2);
    }

    #[test]
    fn rejects_undeclared_and_arity() {
        assert!(matches!(
            model("caused dry(O) if true after wash(C, O)."),
            Err(ModelError::Undeclared { name, .. }) if name == "dry"
        ));
        assert!(matches!(
            model("caused clean(O, O) if true after wash(C, O)."),
            Err(ModelError::Arity {
                expected: 1,
                found: 2,
                ..
            })
        ));
        assert!(matches!(
            model("caused clean(O) if true after fly(C, O)."),
            Err(ModelError::Undeclared { what: "action", .. })
        ));
    }

    #[test]
    fn rejects_duplicates() {
        let err = parse_action_model("fluent a. fluent a.").unwrap_err();
        assert!(matches!(err, ModelError::Duplicate { name, .. } if name == "a"));
        let err = parse_action_model("fluent a. action a(character).").unwrap_err();
        assert!(matches!(err, ModelError::Duplicate { .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_action_model("fluent a.\ncaused a if\n.").unwrap_err();
        match err {
            ModelError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disjunctive_head_rejected() {
        let err = model("caused clean(O) | empty_lh(C) if true.").unwrap_err();
        assert!(matches!(err, ModelError::Unsupported { .. }));
    }

    #[test]
    fn negated_static_condition_rejected() {
        let err = model("caused unempty_lh(C) if -empty_lh(C).").unwrap_err();
        assert!(matches!(err, ModelError::Unsupported { .. }));
    }

    #[test]
    fn comments_and_descriptions() {
        let t = parse_action_model(
            "% a comment\nfluent found(character, entity). % trailing\n\
             action find(character, entity) \"Find 'arg1'.\".",
        )
        .unwrap();
        assert_eq!(t.signature.actions["find"].description.as_deref(), Some("Find 'arg1'."));
    }

    #[test]
    fn subtask_cycle_rejected() {
        let err = parse_action_model(
            "fluent f(character). action go(character).\n\
             subtask a = [go]; @b.\nsubtask b = @a.",
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::SubtaskCycle(_)));
    }

    #[test]
    fn print_then_parse_is_identity() {
        let src = crate::assets::HOUSEHOLD_MODEL;
        let t = parse_action_model(src).unwrap();
        let printed = t.to_string();
        let back = parse_action_model(&printed).unwrap();
        // Line numbers differ after reprinting; compare everything else.
        let strip = |t: &CausalTheory| {
            let mut t = t.clone();
            for r in &mut t.rules {
                r.line = 0;
            }
            t
        };
        assert_eq!(strip(&back), strip(&t));
    }
}
