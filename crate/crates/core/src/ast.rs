//! Expressions, commands and their evaluation over states.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use dashu_base::{Abs, RemEuclid};
use dashu_int::IBig;
use dashu_ratio::RBig;

use crate::error::{Error, Result};
use crate::value::{is_prime, Ident, Rational, State, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Lt,
    Le,
    And,
    Or,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Not,
    Neg,
    Floor,
    Abs,
    IsPrime,
    IsEven,
}

impl UnOp {
    /// Name used in call syntax, if the operator is written as a call.
    pub fn call_name(self) -> Option<&'static str> {
        match self {
            UnOp::Floor => Some("floor"),
            UnOp::Abs => Some("abs"),
            UnOp::IsPrime => Some("is_prime"),
            UnOp::IsEven => Some("is_even"),
            UnOp::Not | UnOp::Neg => None,
        }
    }

    pub fn from_call_name(name: &str) -> Option<UnOp> {
        Some(match name {
            "floor" => UnOp::Floor,
            "abs" => UnOp::Abs,
            "is_prime" => UnOp::IsPrime,
            "is_even" => UnOp::IsEven,
            _ => return None,
        })
    }
}

/// Expression over program states. Children are shared so clones are cheap.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Const(Value),
    Var(Ident),
    Unary(UnOp, Arc<Expr>),
    Binary(BinOp, Arc<Expr>, Arc<Expr>),
}

/// A conditional probabilistic guarded command.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    Skip,
    Assign(Ident, Expr),
    Seq(Arc<Command>, Arc<Command>),
    Observe(Expr),
    Ite(Expr, Arc<Command>, Arc<Command>),
    /// Left branch with the given probability, right branch otherwise.
    Choice(Expr, Arc<Command>, Arc<Command>),
    /// Bind the variable to a uniform draw from `0..n` and run the body.
    Uniform(Expr, Ident, Arc<Command>),
    While(Expr, Arc<Command>),
}

fn type_error(what: &str, v: &Value) -> Error {
    Error::TypeError(format!("{what} expects {}, got {} `{v}`", expected(what), v.type_name()))
}

fn expected(what: &str) -> &'static str {
    match what {
        "not" | "and" | "or" | "guard" | "observe" | "if" => "bool",
        "mod" | "is_prime" | "is_even" | "uniform" => "int",
        _ => "a number",
    }
}

fn numeric(what: &str, v: &Value) -> Result<Rational> {
    v.as_rational().ok_or_else(|| type_error(what, v))
}

fn integral(what: &str, v: &Value) -> Result<IBig> {
    match v {
        Value::Int(n) => Ok(n.clone()),
        Value::Rat(q) if q.is_int() => Ok(q.numerator().clone()),
        _ => Err(type_error(what, v)),
    }
}

fn boolean(what: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| type_error(what, v))
}

fn arith(op: BinOp, a: &Value, b: &Value) -> Result<Value> {
    let name = match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        _ => "/",
    };
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        return Ok(match op {
            BinOp::Add => Value::Int(x + y),
            BinOp::Sub => Value::Int(x - y),
            BinOp::Mul => Value::Int(x * y),
            _ => {
                if y == &IBig::ZERO {
                    return Err(Error::DivisionByZero);
                }
                Value::Rat(RBig::from(x.clone()) / RBig::from(y.clone()))
            }
        });
    }
    let x = numeric(name, a)?;
    let y = numeric(name, b)?;
    Ok(Value::Rat(match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        _ => {
            if y.is_zero() {
                return Err(Error::DivisionByZero);
            }
            x / y
        }
    }))
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(Ident::from(name))
    }

    pub fn int(n: i64) -> Expr {
        Expr::Const(Value::int(n))
    }

    pub fn rat(num: i64, den: u64) -> Expr {
        Expr::Const(Value::rat(num, den))
    }

    pub fn rational(q: Rational) -> Expr {
        Expr::Const(Value::Rat(q))
    }

    pub fn bool(b: bool) -> Expr {
        Expr::Const(Value::Bool(b))
    }

    pub fn unary(op: UnOp, e: Expr) -> Expr {
        Expr::Unary(op, Arc::new(e))
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Arc::new(a), Arc::new(b))
    }

    pub fn eval(&self, s: &State) -> Result<Value> {
        match self {
            Expr::Const(v) => Ok(v.clone()),
            Expr::Var(x) => Ok(s.lookup(x)),
            Expr::Unary(op, e) => {
                let v = e.eval(s)?;
                match op {
                    UnOp::Not => Ok(Value::Bool(!boolean("not", &v)?)),
                    UnOp::Neg => match v {
                        Value::Int(n) => Ok(Value::Int(-n)),
                        Value::Rat(q) => Ok(Value::Rat(-q)),
                        Value::Bool(_) => Err(type_error("negation", &v)),
                    },
                    UnOp::Floor => match v {
                        Value::Int(_) => Ok(v),
                        Value::Rat(q) => Ok(Value::Int(q.floor())),
                        Value::Bool(_) => Err(type_error("floor", &v)),
                    },
                    UnOp::Abs => match v {
                        Value::Int(n) => Ok(Value::Int(n.abs())),
                        Value::Rat(q) => Ok(Value::Rat(q.abs())),
                        Value::Bool(_) => Err(type_error("abs", &v)),
                    },
                    UnOp::IsPrime => Ok(Value::Bool(is_prime(&integral("is_prime", &v)?))),
                    UnOp::IsEven => {
                        let n = integral("is_even", &v)?;
                        Ok(Value::Bool(n % IBig::from(2) == IBig::ZERO))
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                match op {
                    BinOp::And => {
                        return Ok(Value::Bool(
                            boolean("and", &a.eval(s)?)? && boolean("and", &b.eval(s)?)?,
                        ))
                    }
                    BinOp::Or => {
                        return Ok(Value::Bool(
                            boolean("or", &a.eval(s)?)? || boolean("or", &b.eval(s)?)?,
                        ))
                    }
                    _ => {}
                }
                let x = a.eval(s)?;
                let y = b.eval(s)?;
                match op {
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => arith(*op, &x, &y),
                    BinOp::Mod => {
                        let m = integral("mod", &y)?;
                        if m == IBig::ZERO {
                            return Err(Error::DivisionByZero);
                        }
                        Ok(Value::Int(IBig::from(integral("mod", &x)?.rem_euclid(m))))
                    }
                    BinOp::Eq => match (&x, &y) {
                        (Value::Bool(p), Value::Bool(q)) => Ok(Value::Bool(p == q)),
                        (Value::Bool(_), _) | (_, Value::Bool(_)) => Err(Error::TypeError(
                            format!("cannot compare {} `{x}` with {} `{y}`", x.type_name(), y.type_name()),
                        )),
                        (Value::Int(p), Value::Int(q)) => Ok(Value::Bool(p == q)),
                        _ => Ok(Value::Bool(numeric("=", &x)? == numeric("=", &y)?)),
                    },
                    BinOp::Lt | BinOp::Le => {
                        let ord = match (&x, &y) {
                            (Value::Int(p), Value::Int(q)) => p.cmp(q),
                            _ => numeric("<", &x)?.cmp(&numeric("<", &y)?),
                        };
                        Ok(Value::Bool(if *op == BinOp::Lt { ord.is_lt() } else { ord.is_le() }))
                    }
                    BinOp::And | BinOp::Or => unreachable!(),
                }
            }
        }
    }

    pub fn eval_bool(&self, s: &State, what: &str) -> Result<bool> {
        boolean(what, &self.eval(s)?)
    }

    /// Evaluate a choice bias, which must lie in `[0, 1]`.
    pub fn eval_prob(&self, s: &State) -> Result<Rational> {
        let v = self.eval(s)?;
        let p = numeric("choice", &v)?;
        if p < RBig::ZERO || p > RBig::ONE {
            return Err(Error::ChoiceOutOfRange(v.to_string()));
        }
        Ok(p)
    }

    /// Evaluate a uniform bound, which must be a positive integer.
    pub fn eval_uniform_bound(&self, s: &State) -> Result<IBig> {
        let v = self.eval(s)?;
        if let Value::Bool(_) = v {
            return Err(type_error("uniform", &v));
        }
        match integral("uniform", &v) {
            Ok(n) if n > IBig::ZERO => Ok(n),
            _ => Err(Error::UniformNonPositive(v.to_string())),
        }
    }

    /// Replace variables by expressions.
    pub fn substitute(&self, sub: &HashMap<Ident, Expr>) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(x) => sub.get(x).cloned().unwrap_or_else(|| self.clone()),
            Expr::Unary(op, e) => Expr::unary(*op, e.substitute(sub)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.substitute(sub), b.substitute(sub)),
        }
    }

    pub fn free_vars(&self, out: &mut BTreeSet<Ident>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(x) => {
                out.insert(x.clone());
            }
            Expr::Unary(_, e) => e.free_vars(out),
            Expr::Binary(_, a, b) => {
                a.free_vars(out);
                b.free_vars(out);
            }
        }
    }
}

macro_rules! expr_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl std::ops::$trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::binary($op, self, rhs)
            }
        }
    };
}

expr_binop!(Add, add, BinOp::Add);
expr_binop!(Sub, sub, BinOp::Sub);
expr_binop!(Mul, mul, BinOp::Mul);
expr_binop!(Div, div, BinOp::Div);
expr_binop!(Rem, rem, BinOp::Mod);

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::unary(UnOp::Neg, self)
    }
}

impl std::ops::Not for Expr {
    type Output = Expr;
    fn not(self) -> Expr {
        Expr::unary(UnOp::Not, self)
    }
}

/// Short constructors for the non-overloadable operators.
pub mod build {
    use super::*;

    pub fn eq(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Eq, a, b)
    }
    pub fn lt(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Lt, a, b)
    }
    pub fn le(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Le, a, b)
    }
    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::And, a, b)
    }
    pub fn or(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Or, a, b)
    }
    pub fn floor(a: Expr) -> Expr {
        Expr::unary(UnOp::Floor, a)
    }
    pub fn abs(a: Expr) -> Expr {
        Expr::unary(UnOp::Abs, a)
    }
    pub fn is_prime(a: Expr) -> Expr {
        Expr::unary(UnOp::IsPrime, a)
    }
    pub fn is_even(a: Expr) -> Expr {
        Expr::unary(UnOp::IsEven, a)
    }
    pub fn var(x: &str) -> Expr {
        Expr::var(x)
    }
    pub fn int(n: i64) -> Expr {
        Expr::int(n)
    }

    pub fn skip() -> Command {
        Command::Skip
    }
    pub fn assign(x: &str, e: Expr) -> Command {
        Command::Assign(Ident::from(x), e)
    }
    pub fn observe(e: Expr) -> Command {
        Command::Observe(e)
    }
    pub fn ite(e: Expr, a: Command, b: Command) -> Command {
        Command::Ite(e, Arc::new(a), Arc::new(b))
    }
    pub fn choice(p: Expr, a: Command, b: Command) -> Command {
        Command::Choice(p, Arc::new(a), Arc::new(b))
    }
    pub fn uniform(n: Expr, x: &str, body: Command) -> Command {
        Command::Uniform(n, Ident::from(x), Arc::new(body))
    }
    pub fn while_(e: Expr, body: Command) -> Command {
        Command::While(e, Arc::new(body))
    }
    /// `x` becomes true with probability `p`.
    pub fn flip(x: &str, p: Expr) -> Command {
        choice(p, assign(x, Expr::bool(true)), assign(x, Expr::bool(false)))
    }
    /// Right-nested sequence; an empty list is `skip`.
    pub fn seq(cs: Vec<Command>) -> Command {
        let mut it = cs.into_iter().rev();
        let Some(mut acc) = it.next() else { return Command::Skip };
        for c in it {
            acc = Command::Seq(Arc::new(c), Arc::new(acc));
        }
        acc
    }
}

impl Command {
    /// Replace free variables by expressions. Assignment targets and
    /// binders are left alone.
    pub fn substitute(&self, sub: &HashMap<Ident, Expr>) -> Command {
        let rec = |c: &Arc<Command>| Arc::new(c.substitute(sub));
        match self {
            Command::Skip => Command::Skip,
            Command::Assign(x, e) => Command::Assign(x.clone(), e.substitute(sub)),
            Command::Seq(a, b) => Command::Seq(rec(a), rec(b)),
            Command::Observe(e) => Command::Observe(e.substitute(sub)),
            Command::Ite(e, a, b) => Command::Ite(e.substitute(sub), rec(a), rec(b)),
            Command::Choice(p, a, b) => Command::Choice(p.substitute(sub), rec(a), rec(b)),
            Command::Uniform(n, x, body) => {
                let inner = if sub.contains_key(x) {
                    let mut shadowed = sub.clone();
                    shadowed.remove(x);
                    Arc::new(body.substitute(&shadowed))
                } else {
                    rec(body)
                };
                Command::Uniform(n.substitute(sub), x.clone(), inner)
            }
            Command::While(e, body) => Command::While(e.substitute(sub), rec(body)),
        }
    }

    /// Rename variables everywhere, including assignment targets and binders.
    pub fn rename(&self, map: &HashMap<Ident, Ident>) -> Command {
        let sub: HashMap<Ident, Expr> =
            map.iter().map(|(k, v)| (k.clone(), Expr::Var(v.clone()))).collect();
        self.rename_with(map, &sub)
    }

    fn rename_with(&self, map: &HashMap<Ident, Ident>, sub: &HashMap<Ident, Expr>) -> Command {
        let name = |x: &Ident| map.get(x).cloned().unwrap_or_else(|| x.clone());
        let rec = |c: &Arc<Command>| Arc::new(c.rename_with(map, sub));
        match self {
            Command::Skip => Command::Skip,
            Command::Assign(x, e) => Command::Assign(name(x), e.substitute(sub)),
            Command::Seq(a, b) => Command::Seq(rec(a), rec(b)),
            Command::Observe(e) => Command::Observe(e.substitute(sub)),
            Command::Ite(e, a, b) => Command::Ite(e.substitute(sub), rec(a), rec(b)),
            Command::Choice(p, a, b) => Command::Choice(p.substitute(sub), rec(a), rec(b)),
            Command::Uniform(n, x, body) => Command::Uniform(n.substitute(sub), name(x), rec(body)),
            Command::While(e, body) => Command::While(e.substitute(sub), rec(body)),
        }
    }

    /// Variables that are written: assignment targets and uniform binders.
    pub fn written_vars(&self, out: &mut BTreeSet<Ident>) {
        match self {
            Command::Skip | Command::Observe(_) => {}
            Command::Assign(x, _) => {
                out.insert(x.clone());
            }
            Command::Seq(a, b) | Command::Ite(_, a, b) | Command::Choice(_, a, b) => {
                a.written_vars(out);
                b.written_vars(out);
            }
            Command::Uniform(_, x, body) => {
                out.insert(x.clone());
                body.written_vars(out);
            }
            Command::While(_, body) => body.written_vars(out),
        }
    }

    /// Every variable mentioned anywhere in the command.
    pub fn all_vars(&self, out: &mut BTreeSet<Ident>) {
        self.written_vars(out);
        self.visit_exprs(&mut |e| e.free_vars(out));
    }

    pub fn visit_exprs(&self, f: &mut dyn FnMut(&Expr)) {
        match self {
            Command::Skip => {}
            Command::Assign(_, e) | Command::Observe(e) => f(e),
            Command::Seq(a, b) => {
                a.visit_exprs(f);
                b.visit_exprs(f);
            }
            Command::Ite(e, a, b) | Command::Choice(e, a, b) => {
                f(e);
                a.visit_exprs(f);
                b.visit_exprs(f);
            }
            Command::Uniform(e, _, body) | Command::While(e, body) => {
                f(e);
                body.visit_exprs(f);
            }
        }
    }

    pub fn contains_loop(&self) -> bool {
        match self {
            Command::While(..) => true,
            Command::Skip | Command::Assign(..) | Command::Observe(_) => false,
            Command::Seq(a, b) | Command::Ite(_, a, b) | Command::Choice(_, a, b) => {
                a.contains_loop() || b.contains_loop()
            }
            Command::Uniform(_, _, body) => body.contains_loop(),
        }
    }
}
