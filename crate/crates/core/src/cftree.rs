//! Choice-fix trees: finite trees of binary choices whose loop nodes hold
//! generator functions instead of unfolded subtrees.

use std::fmt::Write;
use std::sync::Arc;

use dashu_ratio::RBig;

use crate::ast::Expr;
use crate::dist::{cwp_of, run_loop, wlp_of, wp_of, Estimate, IterConfig, SubDist};
use crate::error::Result;
use crate::pretty::pretty_expr;
use crate::value::{fmt_rational_short, Rational, State};

/// State-indexed tree generator.
pub type Kont = Arc<dyn Fn(&State) -> Result<CfTree> + Send + Sync>;

pub struct FixNode {
    pub init: State,
    pub guard: Expr,
    /// Loop body, run while the guard holds.
    pub body: Kont,
    /// What happens after the loop exits.
    pub cont: Kont,
}

#[derive(Clone)]
pub enum CfTree {
    Leaf(State),
    Fail,
    /// Left with the given probability.
    Choice(Rational, Arc<CfTree>, Arc<CfTree>),
    Fix(Arc<FixNode>),
}

impl CfTree {
    pub fn choice(p: Rational, left: CfTree, right: CfTree) -> CfTree {
        CfTree::Choice(p, Arc::new(left), Arc::new(right))
    }

    pub fn fix(init: State, guard: Expr, body: Kont, cont: Kont) -> CfTree {
        CfTree::Fix(Arc::new(FixNode { init, guard, body, cont }))
    }

    /// Structural equality; loop nodes compare by identity since their
    /// generators are opaque.
    pub fn same_as(&self, other: &CfTree) -> bool {
        match (self, other) {
            (CfTree::Leaf(a), CfTree::Leaf(b)) => a == b,
            (CfTree::Fail, CfTree::Fail) => true,
            (CfTree::Choice(p, l1, r1), CfTree::Choice(q, l2, r2)) => {
                p == q
                    && (Arc::ptr_eq(l1, l2) || l1.same_as(l2))
                    && (Arc::ptr_eq(r1, r2) || r1.same_as(r2))
            }
            (CfTree::Fix(a), CfTree::Fix(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }

    /// Number of choice nodes outside loop generators.
    pub fn choice_count(&self) -> usize {
        match self {
            CfTree::Choice(_, l, r) => 1 + l.choice_count() + r.choice_count(),
            _ => 0,
        }
    }

    /// Number of loop nodes outside loop generators.
    pub fn fix_count(&self) -> usize {
        match self {
            CfTree::Fix(_) => 1,
            CfTree::Choice(_, l, r) => l.fix_count() + r.fix_count(),
            _ => 0,
        }
    }
}

/// Monadic bind: graft `k(s)` onto every leaf `s`.
pub fn tree_bind(t: &CfTree, k: &Kont) -> Result<CfTree> {
    match t {
        CfTree::Leaf(s) => k(s),
        CfTree::Fail => Ok(CfTree::Fail),
        CfTree::Choice(p, l, r) => Ok(CfTree::Choice(
            p.clone(),
            Arc::new(tree_bind(l, k)?),
            Arc::new(tree_bind(r, k)?),
        )),
        CfTree::Fix(node) => {
            let cont = node.cont.clone();
            let k = k.clone();
            Ok(CfTree::fix(
                node.init.clone(),
                node.guard.clone(),
                node.body.clone(),
                Arc::new(move |s| tree_bind(&cont(s)?, &k)),
            ))
        }
    }
}

pub fn leaf_kont() -> Kont {
    Arc::new(|s| Ok(CfTree::Leaf(s.clone())))
}

/// Exact sub-distribution of terminal states, unrolling loops under `cfg`.
pub fn tree_dist(t: &CfTree, cfg: &IterConfig) -> Result<SubDist> {
    match t {
        CfTree::Leaf(s) => Ok(SubDist::point(s.clone())),
        CfTree::Fail => Ok(SubDist::failure()),
        CfTree::Choice(p, l, r) => {
            let mut out = SubDist::default();
            if !p.is_zero() {
                out.add_scaled(&tree_dist(l, cfg)?, p);
            }
            let q = RBig::ONE - p;
            if !q.is_zero() {
                out.add_scaled(&tree_dist(r, cfg)?, &q);
            }
            Ok(out)
        }
        CfTree::Fix(node) => {
            let exits = run_loop(&node.init, &node.guard, cfg, &mut |s| tree_dist(&(node.body)(s)?, cfg))?;
            let mut out = SubDist { mass: Default::default(), ..exits.clone() };
            for (s, m) in &exits.mass {
                out.add_scaled(&tree_dist(&(node.cont)(s)?, cfg)?, m);
            }
            Ok(out)
        }
    }
}

pub fn twp(fail_value: bool, t: &CfTree, f: &Expr, cfg: &IterConfig) -> Result<Estimate> {
    wp_of(&tree_dist(t, cfg)?, f, fail_value)
}

pub fn twlp(fail_value: bool, t: &CfTree, f: &Expr, cfg: &IterConfig) -> Result<Estimate> {
    wlp_of(&tree_dist(t, cfg)?, f, fail_value)
}

pub fn tcwp(t: &CfTree, f: &Expr, cfg: &IterConfig) -> Result<Estimate> {
    cwp_of(&tree_dist(t, cfg)?, f)
}

/// Textual dump. Loop nodes are expanded at their initial state, up to
/// `depth` levels of nesting.
pub fn dump(t: &CfTree, depth: usize) -> String {
    let mut out = String::new();
    dump_into(&mut out, t, depth, 0);
    out
}

fn dump_into(out: &mut String, t: &CfTree, depth: usize, level: usize) {
    let pad = "  ".repeat(level);
    match t {
        CfTree::Leaf(s) => {
            writeln!(out, "{pad}leaf {{{s}}}").unwrap();
        }
        CfTree::Fail => {
            writeln!(out, "{pad}fail").unwrap();
        }
        CfTree::Choice(p, l, r) => {
            writeln!(out, "{pad}choice {}", fmt_rational_short(p)).unwrap();
            dump_into(out, l, depth, level + 1);
            dump_into(out, r, depth, level + 1);
        }
        CfTree::Fix(node) => {
            writeln!(out, "{pad}fix {{{}}} while {}", node.init, pretty_expr(&node.guard)).unwrap();
            if depth == 0 {
                writeln!(out, "{pad}  ...").unwrap();
                return;
            }
            writeln!(out, "{pad}  body:").unwrap();
            match (node.body)(&node.init) {
                Ok(b) => dump_into(out, &b, depth - 1, level + 2),
                Err(e) => writeln!(out, "{pad}    <error: {e}>").unwrap(),
            }
            writeln!(out, "{pad}  exit:").unwrap();
            match (node.cont)(&node.init) {
                Ok(k) => dump_into(out, &k, depth - 1, level + 2),
                Err(e) => writeln!(out, "{pad}    <error: {e}>").unwrap(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::build::*;
    use crate::value::{rat, Ident, Value};

    fn leaf(pairs: &[(&str, i64)]) -> CfTree {
        CfTree::Leaf(State::from_pairs(pairs.iter().map(|(k, v)| (*k, Value::int(*v)))))
    }

    fn incr() -> Kont {
        Arc::new(|s: &State| {
            let x = s.lookup("x").as_rational().unwrap() + RBig::ONE;
            Ok(CfTree::Leaf(s.set(&Ident::from("x"), Value::Int(x.numerator().clone()))))
        })
    }

    #[test]
    fn bind_left_identity_and_fail() {
        let s = State::from_pairs([("x", Value::int(1))]);
        let k = incr();
        let bound = tree_bind(&CfTree::Leaf(s.clone()), &k).unwrap();
        assert!(bound.same_as(&k(&s).unwrap()));
        assert!(tree_bind(&CfTree::Fail, &k).unwrap().same_as(&CfTree::Fail));
    }

    #[test]
    fn bind_right_identity() {
        let t = CfTree::choice(rat(1, 3), leaf(&[("x", 1)]), CfTree::choice(rat(1, 2), CfTree::Fail, leaf(&[("x", 2)])));
        assert!(tree_bind(&t, &leaf_kont()).unwrap().same_as(&t));
    }

    #[test]
    fn twp_of_finite_tree() {
        let t = CfTree::choice(rat(1, 3), leaf(&[("x", 1)]), CfTree::Fail);
        let cfg = IterConfig::default();
        let f = eq(var("x"), int(1));
        assert_eq!(twp(false, &t, &f, &cfg).unwrap().value, rat(1, 3));
        assert_eq!(twp(true, &t, &f, &cfg).unwrap().value, RBig::ONE);
        assert_eq!(tcwp(&t, &f, &cfg).unwrap().value, RBig::ONE);
    }

    #[test]
    fn fix_unrolls_with_continuation() {
        // while x < 3 { x <- x + 1 } then fail if x is odd
        let t = CfTree::fix(
            State::new(),
            lt(var("x"), int(3)),
            incr(),
            Arc::new(|s: &State| {
                Ok(if s.lookup("x") == Value::int(3) { CfTree::Fail } else { CfTree::Leaf(s.clone()) })
            }),
        );
        let d = tree_dist(&t, &IterConfig::default()).unwrap();
        assert_eq!(d.fail, RBig::ONE);
        assert_eq!(d.iterations, 3);
    }

    #[test]
    fn dump_shows_structure() {
        let t = CfTree::choice(rat(2, 3), leaf(&[("x", 1)]), CfTree::Fail);
        assert_eq!(dump(&t, 1), "choice 2/3\n  leaf {x <- 1}\n  fail\n");
    }
}
