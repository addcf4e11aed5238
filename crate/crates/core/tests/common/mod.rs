//! Random program generators shared by the property and acceptance suites.
#![allow(dead_code)]

use std::sync::Arc;

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use zar_core::ast::build::*;
use zar_core::ast::{BinOp, Command, Expr, UnOp};
use zar_core::value::{State, Value};

/// Variables every generated program starts with.
pub fn init_state() -> State {
    State::from_pairs([
        ("x", Value::int(0)),
        ("y", Value::int(0)),
        ("b", Value::Bool(false)),
        ("c", Value::Bool(false)),
    ])
}

pub fn int_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        Just(var("x")),
        Just(var("y")),
        Just(var("u")),
        (-3i64..=3).prop_map(int),
    ];
    leaf.prop_recursive(2, 8, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), 0i64..=2).prop_map(|(a, k)| a * int(k)),
            inner.clone().prop_map(abs),
            inner.prop_map(|a| -a),
        ]
    })
}

pub fn bool_expr() -> impl Strategy<Value = Expr> {
    let atom = prop_oneof![
        Just(var("b")),
        Just(var("c")),
        any::<bool>().prop_map(Expr::bool),
        (int_expr(), int_expr()).prop_map(|(a, b)| lt(a, b)),
        (int_expr(), int_expr()).prop_map(|(a, b)| le(a, b)),
        (int_expr(), -2i64..=2).prop_map(|(a, k)| eq(a, int(k))),
        int_expr().prop_map(is_even),
    ];
    atom.prop_recursive(1, 4, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| !a),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| or(a, b)),
        ]
    })
}

/// Rational probability `n/d` with `d <= 12`.
pub fn prob() -> impl Strategy<Value = Expr> {
    (1u64..=12).prop_flat_map(|d| (0..=d as i64).prop_map(move |n| Expr::rat(n, d)))
}

/// Well-typed loop-free commands over the variables of [`init_state`].
pub fn loop_free() -> impl Strategy<Value = Command> {
    let leaf = prop_oneof![
        3 => Just(skip()),
        4 => int_expr().prop_map(|e| assign("x", e)),
        2 => int_expr().prop_map(|e| assign("y", e)),
        3 => bool_expr().prop_map(|e| assign("b", e)),
        3 => prob().prop_map(|p| flip("c", p)),
        1 => bool_expr().prop_map(observe),
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        prop_oneof![
            3 => (inner.clone(), inner.clone()).prop_map(|(a, b)| seq(vec![a, b])),
            2 => (bool_expr(), inner.clone(), inner.clone()).prop_map(|(e, a, b)| ite(e, a, b)),
            2 => (prob(), inner.clone(), inner.clone()).prop_map(|(p, a, b)| choice(p, a, b)),
            1 => (1i64..=5, inner).prop_map(|(n, body)| uniform(int(n), "u", body)),
        ]
    })
}

/// A terminating loop: `flip b q; while b { body; flip b p }` with a
/// loop-free body, optionally followed by more loop-free code.
pub fn with_loop() -> impl Strategy<Value = Command> {
    (prob(), loop_free(), 1u64..=6, loop_free()).prop_map(|(q, body, p8, rest)| {
        let p = Expr::rat(p8 as i64, 8);
        seq(vec![flip("b", q), while_(var("b"), seq(vec![body, flip("b", p)])), rest])
    })
}

/// Point indicators and boolean queries suited to the generated programs.
pub fn queries() -> Vec<Expr> {
    let mut qs: Vec<Expr> = (-3..=3).map(|k| eq(var("x"), int(k))).collect();
    qs.push(var("b"));
    qs.push(var("c"));
    qs.push(lt(var("y"), var("x")));
    qs
}

/// Any expression, typed or not, for syntax round trips.
pub fn any_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        "[a-z][a-z0-9_]{0,3}".prop_filter("keyword", |s| !is_keyword(s)).prop_map(|s| var(&s)),
        (-50i64..50).prop_map(int),
        (-20i64..20, 2u64..9).prop_map(|(n, d)| Expr::rat(n, d)),
        any::<bool>().prop_map(Expr::bool),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let un = prop_oneof![
            Just(UnOp::Not),
            Just(UnOp::Neg),
            Just(UnOp::Floor),
            Just(UnOp::Abs),
            Just(UnOp::IsPrime),
            Just(UnOp::IsEven),
        ];
        let bin = prop_oneof![
            Just(BinOp::Add),
            Just(BinOp::Sub),
            Just(BinOp::Mul),
            Just(BinOp::Div),
            Just(BinOp::Mod),
            Just(BinOp::Eq),
            Just(BinOp::Lt),
            Just(BinOp::Le),
            Just(BinOp::And),
            Just(BinOp::Or),
        ];
        prop_oneof![
            (un, inner.clone()).prop_map(|(op, e)| Expr::unary(op, e)),
            (bin, inner.clone(), inner).prop_map(|(op, a, b)| Expr::binary(op, a, b)),
        ]
    })
}

fn is_keyword(s: &str) -> bool {
    matches!(
        s,
        "skip" | "if" | "else" | "while" | "observe" | "choice" | "uniform" | "as" | "flip" | "true" | "false"
            | "floor" | "abs" | "is_prime" | "is_even" | "mod" | "param"
    )
}

/// Any command, including loops and left-nested sequences.
pub fn any_command() -> impl Strategy<Value = Command> {
    let name = "[a-z][a-z0-9_]{0,3}".prop_filter("keyword", |s| !is_keyword(s));
    let leaf = prop_oneof![
        Just(skip()),
        (name.clone(), any_expr()).prop_map(|(x, e)| assign(&x, e)),
        any_expr().prop_map(observe),
    ];
    leaf.prop_recursive(4, 24, 2, move |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Command::Seq(Arc::new(a), Arc::new(b))),
            (any_expr(), inner.clone(), inner.clone()).prop_map(|(e, a, b)| ite(e, a, b)),
            (any_expr(), inner.clone(), inner.clone()).prop_map(|(e, a, b)| choice(e, a, b)),
            (any_expr(), name.clone(), inner.clone()).prop_map(|(n, x, b)| uniform(n, &x, b)),
            (any_expr(), inner).prop_map(|(e, b)| while_(e, b)),
        ]
    })
}

/// `n` values drawn deterministically from `strategy` under `seed`.
pub fn draw<S: Strategy>(strategy: S, n: usize, seed: u8) -> Vec<S::Value> {
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]);
    let mut runner = TestRunner::new_with_rng(Config::default(), rng);
    (0..n).map(|_| strategy.new_tree(&mut runner).expect("strategy").current()).collect()
}
