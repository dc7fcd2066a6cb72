//! Instance files.
//!
//! ```text
//! instance <name> {
//!   domain = <sysadmin | game_of_life | academic_advising>;
//!   objects { <type> : {o1, ..., on}; };
//!   non-fluents { <name>(<args>) = <value>; ... };
//!   init-state { <fluent>(<obj>) = <value>; ... };
//!   horizon = <int>;
//!   discount = <real>;
//!   params { <key> = <real>; ... };
//! }
//! ```
//!
//! Sections appear in this order; `params` is optional and the `;` after a
//! closing section brace may be omitted. Values are numbers or
//! `true`/`false`. Unlisted fluents and non-fluents are 0. Binary non-fluent
//! entries fill the adjacency matrix and are symmetrized for SysAdmin and
//! Game of Life.

use std::collections::HashSet;

use super::lexer::{tokenize, Token, TokenKind};
use super::{InstanceError, ParseError};
use crate::domains::DomainParams;
use crate::mdp::{Adjacency, DomainId, Matrix, ProblemInstance};

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, tok: &Token, expected: &[&str]) -> InstanceError {
        InstanceError::Parse(ParseError {
            line: tok.line,
            column: tok.column,
            message: format!(
                "expected {}, found {}",
                expected.join(" or "),
                tok.kind.describe()
            ),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn expect(&mut self, kind: TokenKind, shown: &str) -> Result<Token, InstanceError> {
        if self.peek().kind == kind {
            Ok(self.advance())
        } else {
            Err(self.error(self.peek(), &[shown]))
        }
    }

    fn keyword(&mut self, word: &str) -> Result<Token, InstanceError> {
        match &self.peek().kind {
            TokenKind::Ident(s) if s == word => Ok(self.advance()),
            _ => Err(self.error(self.peek(), &[word])),
        }
    }

    fn at_keyword(&self, word: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Ident(s) if s == word)
    }

    fn ident(&mut self, what: &str) -> Result<(String, Token), InstanceError> {
        match &self.peek().kind {
            TokenKind::Ident(s) => {
                let s = s.clone();
                Ok((s, self.advance()))
            }
            _ => Err(self.error(self.peek(), &[what])),
        }
    }

    fn number(&mut self) -> Result<(f64, Token), InstanceError> {
        let tok = self.peek().clone();
        let v = match &tok.kind {
            TokenKind::Number(s) => s
                .parse::<f64>()
                .map_err(|_| semantic(&tok, format!("malformed number `{s}`")))?,
            TokenKind::Ident(s) if s == "true" => 1.0,
            TokenKind::Ident(s) if s == "false" => 0.0,
            _ => return Err(self.error(&tok, &["number"])),
        };
        self.advance();
        Ok((v, tok))
    }

    fn optional_semi(&mut self) {
        if self.peek().kind == TokenKind::Semi {
            self.advance();
        }
    }
}

fn semantic(tok: &Token, message: String) -> InstanceError {
    InstanceError::Semantic {
        line: tok.line,
        column: tok.column,
        message,
    }
}

/// One `name(args) = value;` entry.
struct Assignment {
    name: String,
    args: Vec<String>,
    value: f64,
    at: Token,
}

fn parse_assignments(p: &mut Parser) -> Result<Vec<Assignment>, InstanceError> {
    p.expect(TokenKind::LBrace, "`{`")?;
    let mut out = Vec::new();
    while p.peek().kind != TokenKind::RBrace {
        let (name, at) = p.ident("predicate name or `}`")?;
        p.expect(TokenKind::LParen, "`(`")?;
        let mut args = vec![p.ident("object name")?.0];
        while p.peek().kind == TokenKind::Comma {
            p.advance();
            args.push(p.ident("object name")?.0);
        }
        p.expect(TokenKind::RParen, "`)`")?;
        p.expect(TokenKind::Equals, "`=`")?;
        let (value, _) = p.number()?;
        p.expect(TokenKind::Semi, "`;`")?;
        out.push(Assignment {
            name,
            args,
            value,
            at,
        });
    }
    p.advance();
    p.optional_semi();
    Ok(out)
}

pub fn parse_instance(text: &str) -> Result<ProblemInstance, InstanceError> {
    let mut p = Parser {
        tokens: tokenize(text).map_err(InstanceError::Parse)?,
        pos: 0,
    };
    p.keyword("instance")?;
    let (name, _) = p.ident("instance name")?;
    p.expect(TokenKind::LBrace, "`{`")?;

    p.keyword("domain")?;
    p.expect(TokenKind::Equals, "`=`")?;
    let (domain_name, dtok) = p.ident("domain name")?;
    let domain = DomainId::from_name(&domain_name)
        .ok_or_else(|| semantic(&dtok, format!("unknown domain `{domain_name}`")))?;
    p.expect(TokenKind::Semi, "`;`")?;

    p.keyword("objects")?;
    p.expect(TokenKind::LBrace, "`{`")?;
    p.ident("object type")?;
    p.expect(TokenKind::Colon, "`:`")?;
    p.expect(TokenKind::LBrace, "`{`")?;
    let mut objects: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    loop {
        let (o, tok) = p.ident("object name")?;
        if !seen.insert(o.clone()) {
            return Err(semantic(&tok, format!("duplicate object `{o}`")));
        }
        objects.push(o);
        if p.peek().kind == TokenKind::Comma {
            p.advance();
        } else {
            break;
        }
    }
    p.expect(TokenKind::RBrace, "`,` or `}`")?;
    p.expect(TokenKind::Semi, "`;`")?;
    p.expect(TokenKind::RBrace, "`}`")?;
    p.optional_semi();

    let index = |o: &str, at: &Token| -> Result<usize, InstanceError> {
        objects
            .iter()
            .position(|x| x == o)
            .ok_or_else(|| semantic(at, format!("unknown object `{o}`")))
    };
    let n = objects.len();

    p.keyword("non-fluents")?;
    let nf = parse_assignments(&mut p)?;
    p.keyword("init-state")?;
    let init = parse_assignments(&mut p)?;

    p.keyword("horizon")?;
    p.expect(TokenKind::Equals, "`=`")?;
    let (h, htok) = p.number()?;
    if h < 1.0 || h.fract() != 0.0 {
        return Err(semantic(&htok, format!("horizon must be a positive integer, got {h}")));
    }
    p.expect(TokenKind::Semi, "`;`")?;

    p.keyword("discount")?;
    p.expect(TokenKind::Equals, "`=`")?;
    let (discount, disc_tok) = p.number()?;
    if !(discount > 0.0 && discount <= 1.0) {
        return Err(semantic(&disc_tok, format!("discount {discount} outside (0, 1]")));
    }
    p.expect(TokenKind::Semi, "`;`")?;

    let mut params = DomainParams::defaults(domain);
    if p.at_keyword("params") {
        p.advance();
        p.expect(TokenKind::LBrace, "`{`")?;
        let mut keys = HashSet::new();
        while p.peek().kind != TokenKind::RBrace {
            let (key, ktok) = p.ident("parameter name or `}`")?;
            p.expect(TokenKind::Equals, "`=`")?;
            let (value, _) = p.number()?;
            p.expect(TokenKind::Semi, "`;`")?;
            if !keys.insert(key.clone()) {
                return Err(semantic(&ktok, format!("duplicate parameter `{key}`")));
            }
            params
                .set(&key, value)
                .map_err(|e| semantic(&ktok, e.to_string()))?;
        }
        p.advance();
        p.optional_semi();
    }
    p.expect(TokenKind::RBrace, "`params` or `}`")?;
    p.expect(TokenKind::Eof, "end of input")?;

    let mut unary = Matrix::zeros(n, domain.unary_nonfluents().len());
    let mut adjacency = Adjacency::empty(n);
    let mut assigned = HashSet::new();
    for a in &nf {
        if !assigned.insert((a.name.clone(), a.args.clone())) {
            return Err(semantic(&a.at, format!("duplicate assignment to `{}`", a.name)));
        }
        if a.name == domain.binary_nonfluent() {
            if a.args.len() != 2 {
                return Err(semantic(&a.at, format!("`{}` takes two objects", a.name)));
            }
            let (i, j) = (index(&a.args[0], &a.at)?, index(&a.args[1], &a.at)?);
            if i == j {
                return Err(semantic(&a.at, format!("self-loop `{}({0}, {0})`", a.args[0])));
            }
            let on = boolean(a)?;
            adjacency.set(i, j, on);
            if domain.symmetric() && on {
                adjacency.set(j, i, true);
            }
        } else if let Some(col) = domain.unary_nonfluents().iter().position(|x| *x == a.name) {
            if a.args.len() != 1 {
                return Err(semantic(&a.at, format!("`{}` takes one object", a.name)));
            }
            unary.set(index(&a.args[0], &a.at)?, col, a.value);
        } else {
            return Err(semantic(&a.at, format!("unknown non-fluent `{}` for {domain}", a.name)));
        }
    }

    let mut fluents = Matrix::zeros(n, domain.fluents().len());
    assigned.clear();
    for a in &init {
        if !assigned.insert((a.name.clone(), a.args.clone())) {
            return Err(semantic(&a.at, format!("duplicate assignment to `{}`", a.name)));
        }
        let col = domain
            .fluents()
            .iter()
            .position(|x| *x == a.name)
            .ok_or_else(|| semantic(&a.at, format!("unknown fluent `{}` for {domain}", a.name)))?;
        if a.args.len() != 1 {
            return Err(semantic(&a.at, format!("`{}` takes one object", a.name)));
        }
        let on = boolean(a)?;
        fluents.set(index(&a.args[0], &a.at)?, col, if on { 1.0 } else { 0.0 });
    }

    let instance = ProblemInstance {
        name,
        domain,
        objects,
        unary_nonfluents: unary,
        binary_nonfluent: adjacency,
        initial_fluents: fluents,
        horizon: h as usize,
        discount,
        params,
    };
    instance.params.validate().map_err(|e| InstanceError::Invalid(e.to_string()))?;
    instance.validate().map_err(|e| InstanceError::Invalid(e.to_string()))?;
    Ok(instance)
}

fn boolean(a: &Assignment) -> Result<bool, InstanceError> {
    match a.value {
        v if v == 0.0 => Ok(false),
        v if v == 1.0 => Ok(true),
        v => Err(semantic(&a.at, format!("`{}` is boolean, got {v}", a.name))),
    }
}

/// Canonical text: objects in declaration order, assignments sorted by
/// object index, zero entries omitted, parameters sorted by key.
pub fn write_instance(instance: &ProblemInstance) -> String {
    let d = instance.domain;
    let o = &instance.objects;
    let mut s = String::new();
    s.push_str(&format!("instance {} {{\n", instance.name));
    s.push_str(&format!("  domain = {};\n", d.name()));
    s.push_str(&format!(
        "  objects {{\n    {} : {{{}}};\n  }};\n",
        d.object_type(),
        o.join(", ")
    ));

    s.push_str("  non-fluents {\n");
    for (col, name) in d.unary_nonfluents().iter().enumerate() {
        for (i, obj) in o.iter().enumerate() {
            let v = instance.unary_nonfluents.get(i, col);
            if v != 0.0 {
                s.push_str(&format!("    {name}({obj}) = {v};\n"));
            }
        }
    }
    let adj = &instance.binary_nonfluent;
    for i in 0..o.len() {
        for j in 0..o.len() {
            if adj.get(i, j) && (!d.symmetric() || i < j) {
                s.push_str(&format!("    {}({}, {}) = 1;\n", d.binary_nonfluent(), o[i], o[j]));
            }
        }
    }
    s.push_str("  };\n");

    s.push_str("  init-state {\n");
    for (col, name) in d.fluents().iter().enumerate() {
        for (i, obj) in o.iter().enumerate() {
            if instance.initial_fluents.get(i, col) != 0.0 {
                s.push_str(&format!("    {name}({obj}) = 1;\n"));
            }
        }
    }
    s.push_str("  };\n");

    s.push_str(&format!("  horizon = {};\n", instance.horizon));
    s.push_str(&format!("  discount = {};\n", instance.discount));
    s.push_str("  params {\n");
    for (k, v) in instance.params.entries() {
        s.push_str(&format!("    {k} = {v};\n"));
    }
    s.push_str("  };\n}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "instance tiny {
  domain = sysadmin;
  objects { computer : {c1, c2, c3}; };
  non-fluents { connected(c1,c2) = 1; };
  init-state { running(c1) = 1; running(c2) = true; };
  horizon = 20;
  discount = 0.9;
}";

    #[test]
    fn parses_three_computers() {
        let inst = parse_instance(THREE).unwrap();
        assert_eq!(inst.objects, vec!["c1", "c2", "c3"]);
        assert!(inst.binary_nonfluent.get(0, 1));
        assert!(inst.binary_nonfluent.get(1, 0));
        assert_eq!(inst.binary_nonfluent.edge_count(), 2);
        assert_eq!(inst.initial_fluents.data(), &[1.0, 1.0, 0.0]);
        assert_eq!(inst.horizon, 20);
        assert_eq!(inst.params, DomainParams::defaults(DomainId::SysAdmin));
    }

    #[test]
    fn missing_horizon_names_it() {
        let text = THREE.replace("horizon = 20;", "");
        match parse_instance(&text) {
            Err(InstanceError::Parse(e)) => {
                assert!(e.expected.contains(&"horizon".to_string()));
                assert!(e.message.contains("horizon"));
                assert_eq!(e.line, 7);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn semantic_errors() {
        let unknown = THREE.replace("connected(c1,c2)", "connected(c1,c9)");
        assert!(matches!(parse_instance(&unknown), Err(InstanceError::Semantic { .. })));
        let self_loop = THREE.replace("connected(c1,c2)", "connected(c2,c2)");
        assert!(matches!(parse_instance(&self_loop), Err(InstanceError::Semantic { .. })));
        let dup = THREE.replace("running(c2) = true", "running(c1) = 0");
        assert!(matches!(parse_instance(&dup), Err(InstanceError::Semantic { .. })));
    }

    #[test]
    fn directed_prereqs_are_kept_directed() {
        let text = "instance a {
  domain = academic_advising;
  objects { course : {a, b}; };
  non-fluents { prereq(a, b) = 1; program_requirement(b) = 1; };
  init-state { };
  horizon = 5;
  discount = 1;
  params { incomplete_penalty = -3; };
}";
        let inst = parse_instance(text).unwrap();
        assert!(inst.binary_nonfluent.get(0, 1));
        assert!(!inst.binary_nonfluent.get(1, 0));
        assert_eq!(inst.unary_nonfluents.data(), &[0.0, 1.0]);
        let DomainParams::AcademicAdvising(p) = &inst.params else { panic!() };
        assert_eq!(p.incomplete_penalty, -3.0);
    }

    #[test]
    fn writer_is_canonical() {
        let mut inst = parse_instance(THREE).unwrap();
        inst.binary_nonfluent = Adjacency::empty(3);
        let text = write_instance(&inst);
        assert!(text.contains("  non-fluents {\n  };"));
        assert!(text.contains("computer : {c1, c2, c3};"));
        assert_eq!(parse_instance(&text).unwrap(), inst);
        assert_eq!(write_instance(&parse_instance(&text).unwrap()), text);
    }
}
