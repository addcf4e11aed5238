//! Removal of degenerate choices and reduction of biased choices to fair
//! coin flips.

use std::sync::Arc;

use dashu_ratio::RBig;

use crate::cftree::{tree_bind, CfTree, Kont};
use crate::compile::{bernoulli_cached, BERNOULLI_VAR};
use crate::error::{Error, Result};
use crate::value::{fmt_rational_short, half, Rational, State, Value};

/// A coin with bias `p` built from fair flips; the outcome is bound to
/// [`BERNOULLI_VAR`] in the leaf state.
pub fn bernoulli_tree(p: &Rational) -> Result<CfTree> {
    if *p < RBig::ZERO || *p > RBig::ONE {
        return Err(Error::ChoiceOutOfRange(fmt_rational_short(p)));
    }
    let too_big = || Error::Invalid(format!("bias {} has too large a denominator", fmt_rational_short(p)));
    let num = u64::try_from(p.numerator()).map_err(|_| too_big())?;
    let den = u64::try_from(p.denominator()).map_err(|_| too_big())?;
    if num == 0 || num == den {
        let b = crate::value::Ident::from(BERNOULLI_VAR);
        return Ok(CfTree::Leaf(State::new().set(&b, Value::Bool(num != 0))));
    }
    Ok(bernoulli_cached(num, den))
}

fn coin_outcome(s: &State) -> bool {
    s.lookup(BERNOULLI_VAR) == Value::Bool(true)
}

fn map_fix(t: &CfTree, f: fn(&CfTree) -> Result<CfTree>) -> CfTree {
    let CfTree::Fix(node) = t else { unreachable!() };
    let (body, cont) = (node.body.clone(), node.cont.clone());
    CfTree::fix(
        node.init.clone(),
        node.guard.clone(),
        Arc::new(move |s| f(&body(s)?)),
        Arc::new(move |s| f(&cont(s)?)),
    )
}

/// Drop choices with probability 0 or 1 and choices whose branches are
/// identical.
pub fn elim_choices(t: &CfTree) -> Result<CfTree> {
    Ok(match t {
        CfTree::Leaf(_) | CfTree::Fail => t.clone(),
        CfTree::Choice(p, l, r) => {
            if p.is_zero() {
                return elim_choices(r);
            }
            if *p == RBig::ONE {
                return elim_choices(l);
            }
            let l = elim_choices(l)?;
            let r = elim_choices(r)?;
            if l.same_as(&r) {
                l
            } else {
                CfTree::choice(p.clone(), l, r)
            }
        }
        CfTree::Fix(_) => map_fix(t, elim_choices),
    })
}

/// Replace every biased choice by a fair-coin construction with the same
/// distribution.
pub fn debias(t: &CfTree) -> Result<CfTree> {
    Ok(match t {
        CfTree::Leaf(_) | CfTree::Fail => t.clone(),
        CfTree::Choice(p, l, r) => {
            let l = debias(l)?;
            let r = debias(r)?;
            if *p == half() {
                return Ok(CfTree::choice(p.clone(), l, r));
            }
            let k: Kont = Arc::new(move |s| Ok(if coin_outcome(s) { l.clone() } else { r.clone() }));
            tree_bind(&bernoulli_tree(p)?, &k)?
        }
        CfTree::Fix(_) => map_fix(t, debias),
    })
}

/// True if every choice reachable without entering a loop is fair, and the
/// same holds for loop bodies and continuations expanded at the loop's
/// initial state, at `probes`, and at states the body reaches, down to
/// `depth` levels of loops.
pub fn is_unbiased(t: &CfTree, probes: &[State], depth: usize) -> bool {
    let h = half();
    let mut stack = vec![(t.clone(), depth)];
    let mut visited = 0usize;
    while let Some((t, d)) = stack.pop() {
        visited += 1;
        if visited > 100_000 {
            break;
        }
        match &t {
            CfTree::Leaf(_) | CfTree::Fail => {}
            CfTree::Choice(p, l, r) => {
                if *p != h {
                    return false;
                }
                stack.push(((**l).clone(), d));
                stack.push(((**r).clone(), d));
            }
            CfTree::Fix(node) => {
                if d == 0 {
                    continue;
                }
                let mut states = vec![node.init.clone()];
                states.extend(probes.iter().cloned());
                if let Ok(b) = (node.body)(&node.init) {
                    collect_leaves(&b, &mut states, 16);
                }
                for s in states {
                    // Probe states may not suit this loop; skip those that error.
                    if let Ok(b) = (node.body)(&s) {
                        stack.push((b, d - 1));
                    }
                    if let Ok(k) = (node.cont)(&s) {
                        stack.push((k, d - 1));
                    }
                }
            }
        }
    }
    true
}

fn collect_leaves(t: &CfTree, out: &mut Vec<State>, limit: usize) {
    let mut stack = vec![t];
    let mut found = 0;
    while let Some(t) = stack.pop() {
        match t {
            CfTree::Leaf(s) => {
                out.push(s.clone());
                found += 1;
                if found >= limit {
                    return;
                }
            }
            CfTree::Choice(_, l, r) => {
                stack.push(l);
                stack.push(r);
            }
            _ => {}
        }
    }
}
