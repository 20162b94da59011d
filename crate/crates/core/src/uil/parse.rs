use std::collections::BTreeSet;

use thiserror::Error;

use super::{BinOp, Definition, Ident, Operand, Program, Relation, Rhs, Statement, Test};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    col: usize,
}

#[derive(Debug, Clone)]
enum Sexp {
    Atom(String, Pos),
    List(Vec<Sexp>, Pos),
}

impl Sexp {
    fn pos(&self) -> Pos {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }
}

fn err<T>(pos: Pos, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line: pos.line, col: pos.col, message: message.into() })
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    pos: Pos,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader { chars: text.chars().peekable(), pos: Pos { line: 1, col: 1 } }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.pos.line += 1;
            self.pos.col = 1;
        } else {
            self.pos.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c == ';' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn read(&mut self) -> Result<Option<Sexp>, ParseError> {
        self.skip_trivia();
        let start = self.pos;
        match self.chars.peek().copied() {
            None => Ok(None),
            Some(')') => err(start, "unexpected `)`"),
            Some('(') => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_trivia();
                    match self.chars.peek() {
                        None => return err(start, "unclosed `(`"),
                        Some(')') => {
                            self.bump();
                            return Ok(Some(Sexp::List(items, start)));
                        }
                        Some(_) => items.push(self.read()?.expect("peeked a token")),
                    }
                }
            }
            Some(_) => {
                let mut atom = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    atom.push(c);
                    self.bump();
                }
                Ok(Some(Sexp::Atom(atom, start)))
            }
        }
    }
}

const KEYWORDS: &[&str] = &["letrec", "lambda", "set!", "mset!", "mref", "if", "begin", "return"];

fn ident(s: &Sexp) -> Result<Ident, ParseError> {
    match s {
        Sexp::Atom(a, p) => {
            let first = a.chars().next().unwrap_or('0');
            if first.is_ascii_digit() || first == '-' || first == '+' {
                return err(*p, format!("expected identifier, found `{a}`"));
            }
            if KEYWORDS.contains(&a.as_str()) {
                return err(*p, format!("keyword `{a}` used as identifier"));
            }
            if !a.chars().all(|c| c.is_alphanumeric() || "_!?*<>=/-+.".contains(c)) {
                return err(*p, format!("invalid identifier `{a}`"));
            }
            Ok(Ident::new(a))
        }
        Sexp::List(_, p) => err(*p, "expected identifier, found list"),
    }
}

fn operand(s: &Sexp) -> Result<Operand, ParseError> {
    match s {
        Sexp::Atom(a, p) => {
            let looks_numeric = a.starts_with(|c: char| c.is_ascii_digit()) || (a.len() > 1 && (a.starts_with('-') || a.starts_with('+')));
            if looks_numeric {
                a.parse::<i64>().map(Operand::Imm).or_else(|_| err(*p, format!("integer literal `{a}` does not fit a 64-bit word")))
            } else {
                ident(s).map(Operand::Var)
            }
        }
        Sexp::List(_, p) => err(*p, "nested expressions are not allowed here"),
    }
}

fn list<'s>(s: &'s Sexp, what: &str) -> Result<(&'s [Sexp], Pos), ParseError> {
    match s {
        Sexp::List(items, p) => Ok((items, *p)),
        Sexp::Atom(a, p) => err(*p, format!("expected {what}, found `{a}`")),
    }
}

fn head(items: &[Sexp]) -> Option<&str> {
    match items.first() {
        Some(Sexp::Atom(a, _)) => Some(a.as_str()),
        _ => None,
    }
}

fn arity(items: &[Sexp], pos: Pos, n: usize, form: &str) -> Result<(), ParseError> {
    if items.len() != n {
        return err(pos, format!("malformed `{form}`: expected {} operand(s), found {}", n - 1, items.len() - 1));
    }
    Ok(())
}

fn call(items: &[Sexp]) -> Result<(Ident, Vec<Operand>), ParseError> {
    let callee = ident(&items[0])?;
    let args = items[1..].iter().map(operand).collect::<Result<_, _>>()?;
    Ok((callee, args))
}

fn rhs(s: &Sexp) -> Result<Rhs, ParseError> {
    let (items, pos) = match s {
        Sexp::Atom(..) => return operand(s).map(Rhs::Operand),
        Sexp::List(items, pos) => (items.as_slice(), *pos),
    };
    let op = match head(items) {
        Some("+") => Some(BinOp::Add),
        Some("-") => Some(BinOp::Sub),
        Some("*") => Some(BinOp::Mul),
        _ => None,
    };
    if let Some(op) = op {
        arity(items, pos, 3, op.symbol())?;
        return Ok(Rhs::BinOp(op, operand(&items[1])?, operand(&items[2])?));
    }
    match head(items) {
        Some("mref") => {
            arity(items, pos, 3, "mref")?;
            Ok(Rhs::MemRead { base: operand(&items[1])?, index: operand(&items[2])? })
        }
        Some(_) => {
            let (callee, args) = call(items)?;
            Ok(Rhs::Call { callee, args })
        }
        None => err(pos, "malformed right-hand side"),
    }
}

fn test(s: &Sexp) -> Result<Test, ParseError> {
    let (items, pos) = list(s, "test")?;
    let rel = match head(items) {
        Some("<") => Relation::Lt,
        Some("<=") => Relation::Le,
        Some("=") => Relation::Eq,
        Some(">=") => Relation::Ge,
        Some(">") => Relation::Gt,
        _ => return err(pos, "test must be a comparison `(rel a b)` with rel one of < <= = >= >"),
    };
    arity(items, pos, 3, rel.symbol())?;
    Ok(Test { rel, a: operand(&items[1])?, b: operand(&items[2])? })
}

fn begin(s: &Sexp) -> Result<Vec<Statement>, ParseError> {
    let (items, pos) = list(s, "`(begin ...)`")?;
    if head(items) != Some("begin") {
        return err(pos, "if branches must be `(begin stmt ...)`");
    }
    items[1..].iter().map(statement).collect()
}

fn statement(s: &Sexp) -> Result<Statement, ParseError> {
    let (items, pos) = list(s, "statement")?;
    match head(items) {
        Some("set!") => {
            arity(items, pos, 3, "set!")?;
            Ok(Statement::Assign { dst: ident(&items[1])?, rhs: rhs(&items[2])? })
        }
        Some("mset!") => {
            arity(items, pos, 4, "mset!")?;
            Ok(Statement::MemWrite { base: operand(&items[1])?, index: operand(&items[2])?, src: operand(&items[3])? })
        }
        Some("if") => {
            arity(items, pos, 4, "if")?;
            Ok(Statement::If { test: test(&items[1])?, then_branch: begin(&items[2])?, else_branch: begin(&items[3])? })
        }
        Some("return") => {
            arity(items, pos, 2, "return")?;
            Ok(Statement::Return(operand(&items[1])?))
        }
        Some(k) if KEYWORDS.contains(&k) => err(pos, format!("`{k}` is not a statement")),
        Some(_) => {
            let (callee, args) = call(items)?;
            Ok(Statement::Call { callee, args })
        }
        None => err(pos, "malformed statement"),
    }
}

fn definition(s: &Sexp) -> Result<Definition, ParseError> {
    let (items, pos) = list(s, "definition")?;
    if items.len() != 2 {
        return err(pos, "definition must be `(name (lambda (params ...) stmt ...))`");
    }
    let name = ident(&items[0])?;
    let (lam, lpos) = list(&items[1], "lambda")?;
    if head(lam) != Some("lambda") || lam.len() < 2 {
        return err(lpos, "expected `(lambda (params ...) stmt ...)`");
    }
    let (params, _) = list(&lam[1], "parameter list")?;
    let params = params.iter().map(ident).collect::<Result<_, _>>()?;
    let body = lam[2..].iter().map(statement).collect::<Result<_, _>>()?;
    Ok(Definition { name, params, body })
}

/// Parse a `.uil` program. Comments run from `;` to end of line.
pub fn parse(text: &str) -> Result<Program, ParseError> {
    let mut reader = Reader::new(text);
    let top = match reader.read()? {
        Some(t) => t,
        None => return err(reader.pos, "empty input"),
    };
    if let Some(extra) = reader.read()? {
        return err(extra.pos(), "trailing input after program");
    }
    let (items, pos) = list(&top, "`(letrec ...)`")?;
    if head(items) != Some("letrec") || items.len() < 2 {
        return err(pos, "program must be `(letrec (definitions ...) stmt ...)`");
    }
    let (defs, _) = list(&items[1], "definition list")?;
    let mut seen = BTreeSet::new();
    let mut definitions = Vec::with_capacity(defs.len());
    for d in defs {
        let def = definition(d)?;
        if !seen.insert(def.name.clone()) {
            return err(d.pos(), format!("duplicate definition `{}`", def.name));
        }
        definitions.push(def);
    }
    let body = items[2..].iter().map(statement).collect::<Result<_, _>>()?;
    Ok(Program { definitions, body })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_program() {
        let p = parse("(letrec () (set! x 0) (return x))").unwrap();
        assert!(p.definitions.is_empty());
        assert_eq!(p.body, vec![Statement::Assign { dst: "x".into(), rhs: Rhs::Operand(Operand::Imm(0)) }, Statement::Return("x".into()),]);
    }

    #[test]
    fn liveness_example_ends_in_tail_call() {
        let p = parse("(letrec () (set! x 0) (set! y (+ x 1)) (set! z (+ y 2)) (f x z))").unwrap();
        assert_eq!(p.body.len(), 4);
        assert_eq!(p.body[3], Statement::Call { callee: "f".into(), args: vec!["x".into(), "z".into()] });
        assert_eq!(p.body[1], Statement::Assign { dst: "y".into(), rhs: Rhs::BinOp(BinOp::Add, "x".into(), Operand::Imm(1)) });
    }

    #[test]
    fn identity_procedure() {
        let p = parse("(letrec ((f (lambda (x) (return x)))) (f 1))").unwrap();
        assert_eq!(p.definitions.len(), 1);
        assert_eq!(p.definitions[0].params, vec![Ident::new("x")]);
        assert_eq!(p.body, vec![Statement::Call { callee: "f".into(), args: vec![Operand::Imm(1)] }]);
    }

    #[test]
    fn comments_and_negative_literals() {
        let p = parse("; header\n(letrec () ; defs\n (set! x -5) (return x))").unwrap();
        assert_eq!(p.body[0], Statement::Assign { dst: "x".into(), rhs: Rhs::Operand(Operand::Imm(-5)) });
    }

    #[test]
    fn syntax_error_reports_position() {
        let e = parse("(letrec ()\n  (set! x))").unwrap_err();
        assert_eq!((e.line, e.col), (2, 3));
        let e = parse("(letrec () (return 1)").unwrap_err();
        assert_eq!((e.line, e.col), (1, 1));
        assert!(e.message.contains("unclosed"));
    }

    #[test]
    fn duplicate_definition_rejected() {
        let e = parse("(letrec ((f (lambda () (return 0))) (f (lambda () (return 1)))) (f))").unwrap_err();
        assert!(e.message.contains("duplicate definition `f`"), "{e}");
        assert_eq!((e.line, e.col), (1, 37));
    }

    #[test]
    fn malformed_statements() {
        for src in [
            "(letrec () (if (< x 1) (set! y 1) (begin)) (return 0))",
            "(letrec () (set! x (+ 1 (+ 2 3))) (return x))",
            "(letrec () (mref x y) (return 0))",
            "(letrec () (if (!= x 1) (begin) (begin)) (return 0))",
            "(letrec () (set! 3 x) (return 0))",
            "(letrec () (return 99999999999999999999))",
        ] {
            assert!(parse(src).is_err(), "{src}");
        }
    }

    #[test]
    fn result_binding_sugar() {
        let p = parse("(letrec ((g (lambda () (return 2)))) (set! x (g)) (return x))").unwrap();
        assert_eq!(p.body[0], Statement::Assign { dst: "x".into(), rhs: Rhs::Call { callee: "g".into(), args: vec![] } });
    }
}
