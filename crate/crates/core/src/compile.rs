//! Compilation of commands to CF trees.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use dashu_int::IBig;

use crate::ast::{Command, Expr};
use crate::cftree::{leaf_kont, tree_bind, CfTree, Kont};
use crate::error::{Error, Result};
use crate::value::{half, Ident, State, Value};

/// Variable carrying a uniform outcome out of `uniform_tree`.
pub const UNIFORM_VAR: &str = "__u";
/// Variable carrying a coin outcome out of `bernoulli_tree`.
pub const BERNOULLI_VAR: &str = "__b";
/// Loop flag of the rejection loops built for uniforms and coins.
pub const LOOPBACK_VAR: &str = "__lb";

/// Leaf label of a slot tree: an outcome index or a rejected draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Outcome(u64),
    Loopback,
}

enum SlotTree {
    Leaf(Slot),
    Node(Box<SlotTree>, Box<SlotTree>),
}

/// Perfect binary tree over `2^depth` slots where the first `count` slots
/// are outcomes. Subtrees made only of rejected slots are merged into one
/// leaf, so a rejected draw stops consuming bits as early as possible.
fn slot_tree(lo: u64, depth: u32, count: u64) -> SlotTree {
    if lo >= count {
        return SlotTree::Leaf(Slot::Loopback);
    }
    if depth == 0 {
        return SlotTree::Leaf(Slot::Outcome(lo));
    }
    let half = 1u64 << (depth - 1);
    SlotTree::Node(
        Box::new(slot_tree(lo, depth - 1, count)),
        Box::new(slot_tree(lo + half, depth - 1, count)),
    )
}

fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

fn label(t: &SlotTree, outcome: &dyn Fn(u64) -> State, loopback: &State) -> CfTree {
    match t {
        SlotTree::Leaf(Slot::Outcome(i)) => CfTree::Leaf(outcome(*i)),
        SlotTree::Leaf(Slot::Loopback) => CfTree::Leaf(loopback.clone()),
        SlotTree::Node(l, r) => CfTree::choice(half(), label(l, outcome, loopback), label(r, outcome, loopback)),
    }
}

/// Draw one of `count` outcomes uniformly from fair coins, rejecting and
/// retrying when the draw lands beyond `count`.
fn rejection_tree(count: u64, outcome: &dyn Fn(u64) -> State) -> CfTree {
    let depth = ceil_log2(count);
    let slots = slot_tree(0, depth, count);
    if count == 1u64 << depth {
        return label(&slots, outcome, &State::new());
    }
    let lb = Ident::from(LOOPBACK_VAR);
    let again = State::new().set(&lb, Value::Bool(true));
    let done = |i| outcome(i).set(&lb, Value::Bool(false));
    let body = label(&slots, &done, &again);
    CfTree::fix(again, Expr::Var(lb), Arc::new(move |_| Ok(body.clone())), leaf_kont())
}

type Cache = Mutex<HashMap<(u64, u64), CfTree>>;

fn cached(key: (u64, u64), build: impl FnOnce() -> CfTree) -> CfTree {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(t) = cache.lock().unwrap().get(&key) {
        return t.clone();
    }
    let t = build();
    let mut guard = cache.lock().unwrap();
    if guard.len() > 4096 {
        guard.clear();
    }
    guard.insert(key, t.clone());
    t
}

fn small(n: &IBig, what: &str) -> Result<u64> {
    u64::try_from(n).map_err(|_| Error::Invalid(format!("{what} {n} is too large to sample")))
}

/// Uniform distribution over `0..n` as an unbiased tree; the outcome is
/// bound to [`UNIFORM_VAR`] in the leaf state.
pub fn uniform_tree(n: &IBig) -> Result<CfTree> {
    if *n <= IBig::ZERO {
        return Err(Error::UniformNonPositive(n.to_string()));
    }
    let n = small(n, "uniform bound")?;
    let u = Ident::from(UNIFORM_VAR);
    Ok(cached((0, n), || {
        rejection_tree(n, &|i| State::new().set(&u, Value::Int(IBig::from(i))))
    }))
}

pub(crate) fn uniform_outcome(s: &State) -> Value {
    s.lookup(UNIFORM_VAR)
}

/// Compile `c` started in state `s`.
pub fn compile(c: &Command, s: &State) -> Result<CfTree> {
    match c {
        Command::Skip => Ok(CfTree::Leaf(s.clone())),
        Command::Assign(x, e) => Ok(CfTree::Leaf(s.set(x, e.eval(s)?))),
        Command::Observe(e) => Ok(if e.eval_bool(s, "observe")? { CfTree::Leaf(s.clone()) } else { CfTree::Fail }),
        Command::Ite(e, a, b) => {
            if e.eval_bool(s, "if")? {
                compile(a, s)
            } else {
                compile(b, s)
            }
        }
        Command::Seq(a, b) => {
            let b = b.clone();
            let k: Kont = Arc::new(move |t| compile(&b, t));
            tree_bind(&compile(a, s)?, &k)
        }
        Command::Choice(p, a, b) => Ok(CfTree::choice(p.eval_prob(s)?, compile(a, s)?, compile(b, s)?)),
        Command::Uniform(n, x, body) => {
            let n = n.eval_uniform_bound(s)?;
            let (base, x, body) = (s.clone(), x.clone(), body.clone());
            let k: Kont = Arc::new(move |t| compile(&body, &base.set(&x, uniform_outcome(t))));
            tree_bind(&uniform_tree(&n)?, &k)
        }
        Command::While(e, body) => {
            let body = body.clone();
            Ok(CfTree::fix(s.clone(), e.clone(), Arc::new(move |t| compile(&body, t)), leaf_kont()))
        }
    }
}

pub(crate) fn bernoulli_cached(num: u64, den: u64) -> CfTree {
    let b = Ident::from(BERNOULLI_VAR);
    cached((num, den), || {
        rejection_tree(den, &|i| State::new().set(&b, Value::Bool(i < num)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::build::*;
    use crate::cftree::{tcwp, twp};
    use crate::dist::IterConfig;
    use crate::parser::parse_program;
    use crate::semantics::cwp;
    use crate::value::rat;
    use dashu_ratio::RBig;

    #[test]
    fn uniform_one_is_a_leaf() {
        let t = uniform_tree(&IBig::from(1)).unwrap();
        assert!(matches!(t, CfTree::Leaf(_)));
    }

    #[test]
    fn uniform_power_of_two_needs_no_loop() {
        let t = uniform_tree(&IBig::from(4)).unwrap();
        assert_eq!(t.fix_count(), 0);
        assert_eq!(t.choice_count(), 3);
    }

    #[test]
    fn uniform_six_is_exact() {
        let t = uniform_tree(&IBig::from(6)).unwrap();
        assert_eq!(t.fix_count(), 1);
        let cfg = IterConfig::default();
        for i in 0..6 {
            let f = eq(var(UNIFORM_VAR), int(i));
            assert_eq!(twp(false, &t, &f, &cfg).unwrap().value, rat(1, 6));
        }
    }

    #[test]
    fn rejected_runs_are_merged() {
        // 5 outcomes in 8 slots: slots 5..8 reject, and 6..8 collapse.
        let t = slot_tree(0, 3, 5);
        fn leaves(t: &SlotTree) -> usize {
            match t {
                SlotTree::Leaf(_) => 1,
                SlotTree::Node(l, r) => leaves(l) + leaves(r),
            }
        }
        assert_eq!(leaves(&t), 7);
    }

    #[test]
    fn compiled_primes_matches_semantics() {
        let c = parse_program("flip b 2/3; while b { h <- h + 1; flip b 2/3 }; observe is_prime(h)").unwrap();
        let cfg = IterConfig::default();
        let f = eq(var("h"), int(2));
        let t = compile(&c, &State::new()).unwrap();
        let a = tcwp(&t, &f, &cfg).unwrap();
        let b = cwp(&c, &f, &State::new(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.value_f64() - 0.468_219_826_665_39).abs() < 1e-8);
    }

    #[test]
    fn uniform_binds_variable() {
        let c = parse_program("uniform 3 as m { x <- m * 2 }").unwrap();
        let t = compile(&c, &State::new()).unwrap();
        let f = eq(var("x"), int(4));
        assert_eq!(tcwp(&t, &f, &IterConfig::default()).unwrap().value, rat(1, 3));
        let g = eq(var("m"), int(2));
        assert_eq!(tcwp(&t, &g, &IterConfig::default()).unwrap().value, rat(1, 3));
        assert_ne!(tcwp(&t, &g, &IterConfig::default()).unwrap().value, RBig::ZERO);
    }
}
