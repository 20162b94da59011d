//! Canonical pretty-printer: one statement per line, two-space indent.

use super::{Operand, Program, Rhs, Statement, Test};

fn ops(xs: &[Operand]) -> String {
    xs.iter().map(|o| format!(" {o}")).collect()
}

fn rhs(r: &Rhs) -> String {
    match r {
        Rhs::Operand(o) => o.to_string(),
        Rhs::BinOp(op, a, b) => format!("({} {a} {b})", op.symbol()),
        Rhs::MemRead { base, index } => format!("(mref {base} {index})"),
        Rhs::Call { callee, args } => format!("({callee}{})", ops(args)),
    }
}

fn test(t: &Test) -> String {
    format!("({} {} {})", t.rel.symbol(), t.a, t.b)
}

/// Single-line rendering; `if` shows only its test.
pub(super) fn statement_head(s: &Statement) -> String {
    match s {
        Statement::Assign { dst, rhs: r } => format!("(set! {dst} {})", rhs(r)),
        Statement::MemWrite { base, index, src } => format!("(mset! {base} {index} {src})"),
        Statement::If { test: t, .. } => format!("(if {} ...)", test(t)),
        Statement::Call { callee, args } => format!("({callee}{})", ops(args)),
        Statement::Return(v) => format!("(return {v})"),
    }
}

struct Lines(Vec<String>);

impl Lines {
    fn push(&mut self, depth: usize, text: String) {
        self.0.push(format!("{}{text}", "  ".repeat(depth)));
    }

    fn close(&mut self) {
        if let Some(last) = self.0.last_mut() {
            last.push(')');
        }
    }
}

fn block(out: &mut Lines, stmts: &[Statement], depth: usize) {
    for s in stmts {
        statement(out, s, depth);
    }
}

fn statement(out: &mut Lines, s: &Statement, depth: usize) {
    match s {
        Statement::If { test: t, then_branch, else_branch } => {
            out.push(depth, format!("(if {}", test(t)));
            for branch in [then_branch, else_branch] {
                if branch.is_empty() {
                    out.push(depth + 1, "(begin)".into());
                } else {
                    out.push(depth + 1, "(begin".into());
                    block(out, branch, depth + 2);
                    out.close();
                }
            }
            out.close();
        }
        other => out.push(depth, statement_head(other)),
    }
}

pub(super) fn program_to_string(p: &Program) -> String {
    let mut out = Lines(Vec::new());
    if p.definitions.is_empty() {
        out.push(0, "(letrec ()".into());
    } else {
        out.push(0, "(letrec (".into());
        for d in &p.definitions {
            let params: Vec<_> = d.params.iter().map(|x| x.to_string()).collect();
            out.push(1, format!("({} (lambda ({})", d.name, params.join(" ")));
            block(&mut out, &d.body, 2);
            out.close();
            out.close();
        }
        out.close();
    }
    block(&mut out, &p.body, 1);
    out.close();
    let mut text = out.0.join("\n");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use crate::uil::parse;

    #[test]
    fn canonical_layout() {
        let src = "(letrec ((f (lambda (a b) (set! c (+ a b)) (return c))))
                     (set! x 0)
                     (if (< x 1) (begin (set! y 1)) (begin))
                     (f x 1))";
        let p = parse(src).unwrap();
        let expected = "\
(letrec (
  (f (lambda (a b)
    (set! c (+ a b))
    (return c))))
  (set! x 0)
  (if (< x 1)
    (begin
      (set! y 1))
    (begin))
  (f x 1))
";
        assert_eq!(p.to_string(), expected);
        assert_eq!(parse(expected).unwrap(), p);
    }

    #[test]
    fn empty_definitions() {
        let p = parse("(letrec () (return 7))").unwrap();
        assert_eq!(p.to_string(), "(letrec ()\n  (return 7))\n");
    }
}
