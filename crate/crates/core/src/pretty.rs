//! Pretty printer whose output parses back to the same tree.

use std::fmt::Write;

use crate::ast::{BinOp, Command, Expr, UnOp};
use crate::value::Value;

const PREC_OR: u8 = 1;
const PREC_AND: u8 = 2;
const PREC_NOT: u8 = 3;
const PREC_CMP: u8 = 4;
const PREC_ADD: u8 = 5;
const PREC_MUL: u8 = 6;
const PREC_NEG: u8 = 7;
const PREC_ATOM: u8 = 8;

fn binop_info(op: BinOp) -> (&'static str, u8) {
    match op {
        BinOp::Or => ("||", PREC_OR),
        BinOp::And => ("&&", PREC_AND),
        BinOp::Eq => ("=", PREC_CMP),
        BinOp::Lt => ("<", PREC_CMP),
        BinOp::Le => ("<=", PREC_CMP),
        BinOp::Add => ("+", PREC_ADD),
        BinOp::Sub => ("-", PREC_ADD),
        BinOp::Mul => ("*", PREC_MUL),
        BinOp::Div => ("/", PREC_MUL),
        BinOp::Mod => ("%", PREC_MUL),
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Const(Value::Int(n)) if n.sign() == dashu_base::Sign::Negative => PREC_NEG,
        Expr::Const(Value::Rat(q)) if q.sign() == dashu_base::Sign::Negative => PREC_NEG,
        Expr::Const(_) | Expr::Var(_) => PREC_ATOM,
        Expr::Unary(UnOp::Not, _) => PREC_NOT,
        Expr::Unary(UnOp::Neg, _) => PREC_NEG,
        Expr::Unary(..) => PREC_ATOM,
        Expr::Binary(op, ..) => binop_info(*op).1,
    }
}

fn wrap(out: &mut String, e: &Expr, parens: bool) {
    if parens {
        out.push('(');
        expr_into(out, e);
        out.push(')');
    } else {
        expr_into(out, e);
    }
}

fn expr_into(out: &mut String, e: &Expr) {
    match e {
        Expr::Const(v) => {
            write!(out, "{v}").unwrap();
        }
        Expr::Var(x) => out.push_str(x),
        Expr::Unary(UnOp::Not, a) => {
            out.push('!');
            wrap(out, a, prec(a) < PREC_NOT);
        }
        Expr::Unary(UnOp::Neg, a) => {
            out.push('-');
            // Parenthesise numbers so the minus does not fuse with them.
            let parens = prec(a) < PREC_ATOM || matches!(**a, Expr::Const(_));
            wrap(out, a, parens);
        }
        Expr::Unary(op, a) => {
            out.push_str(op.call_name().unwrap());
            out.push('(');
            expr_into(out, a);
            out.push(')');
        }
        Expr::Binary(op, a, b) => {
            let (sym, p) = binop_info(*op);
            // Comparisons do not chain, everything else associates left.
            let left_parens = if p == PREC_CMP { prec(a) <= p } else { prec(a) < p };
            wrap(out, a, left_parens);
            write!(out, " {sym} ").unwrap();
            wrap(out, b, prec(b) <= p);
        }
    }
}

pub fn pretty_expr(e: &Expr) -> String {
    let mut out = String::new();
    expr_into(&mut out, e);
    out
}

fn flip_target(c: &Command) -> Option<&crate::value::Ident> {
    if let Command::Choice(_, a, b) = c {
        if let (Command::Assign(x, ea), Command::Assign(y, eb)) = (&**a, &**b) {
            if x == y && *ea == Expr::bool(true) && *eb == Expr::bool(false) {
                return Some(x);
            }
        }
    }
    None
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn block(out: &mut String, c: &Command, level: usize) {
    out.push_str("{\n");
    program(out, c, level + 1);
    out.push('\n');
    indent(out, level);
    out.push('}');
}

fn program(out: &mut String, c: &Command, level: usize) {
    match c {
        Command::Seq(a, b) => {
            if let Command::Seq(..) = **a {
                indent(out, level);
                block(out, a, level);
            } else {
                program(out, a, level);
            }
            out.push_str(";\n");
            program(out, b, level);
        }
        _ => {
            indent(out, level);
            stmt(out, c, level);
        }
    }
}

fn stmt(out: &mut String, c: &Command, level: usize) {
    match c {
        Command::Skip => out.push_str("skip"),
        Command::Assign(x, e) => {
            write!(out, "{x} <- {}", pretty_expr(e)).unwrap();
        }
        Command::Observe(e) => {
            write!(out, "observe {}", pretty_expr(e)).unwrap();
        }
        Command::Ite(e, a, b) => {
            write!(out, "if {} ", pretty_expr(e)).unwrap();
            block(out, a, level);
            out.push_str(" else ");
            block(out, b, level);
        }
        Command::Choice(p, a, b) => {
            if let Some(x) = flip_target(c) {
                write!(out, "flip {x} {}", pretty_expr(p)).unwrap();
                return;
            }
            write!(out, "choice {} ", pretty_expr(p)).unwrap();
            block(out, a, level);
            out.push(' ');
            block(out, b, level);
        }
        Command::Uniform(n, x, body) => {
            write!(out, "uniform {} as {x} ", pretty_expr(n)).unwrap();
            block(out, body, level);
        }
        Command::While(e, body) => {
            write!(out, "while {} ", pretty_expr(e)).unwrap();
            block(out, body, level);
        }
        Command::Seq(..) => block(out, c, level),
    }
}

/// Render a command in the concrete syntax.
pub fn pretty_print(c: &Command) -> String {
    let mut out = String::new();
    program(&mut out, c, 0);
    out.push('\n');
    out
}

/// Render a program with `#param` header lines.
pub fn pretty_source(params: &[(&str, Expr)], body: &Command) -> String {
    let mut out = String::new();
    for (name, default) in params {
        writeln!(out, "#param {name} = {}", pretty_expr(default)).unwrap();
    }
    out.push_str(&pretty_print(body));
    out
}
