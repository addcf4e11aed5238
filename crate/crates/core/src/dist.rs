//! Exact finite sub-distributions over states and the loop iterator shared by
//! the command semantics and the CF-tree semantics.
//!
//! A loop is unrolled forward: the running mass is split by the guard, exits
//! are collected and the rest is pushed through the body. After `n` body
//! expansions the collected mass is exactly the `n`-th Kleene iterate of the
//! loop's characteristic functional, so the same counts give identical
//! answers no matter which representation is being iterated.

use std::collections::HashMap;
use std::sync::Arc;

use dashu_ratio::RBig;

use crate::ast::Expr;
use crate::error::{Error, Result};
use crate::value::{fmt_rational_short, rat, to_f64, Rational, State, Value};

/// Stopping rule for loop iteration.
#[derive(Clone, Debug)]
pub struct IterConfig {
    /// Stop once the mass still inside a loop is at most this much.
    /// Zero means iterate until `max_iters` or exact termination.
    pub tolerance: Rational,
    /// Body expansions allowed per loop entry.
    pub max_iters: u64,
}

impl Default for IterConfig {
    fn default() -> Self {
        IterConfig { tolerance: rat(1, 1_000_000_000), max_iters: 10_000 }
    }
}

impl IterConfig {
    /// Exactly `n` expansions per loop unless the loop finishes sooner.
    pub fn fixed(n: u64) -> Self {
        IterConfig { tolerance: RBig::ZERO, max_iters: n }
    }
}

/// Result of running a program fragment from one state with unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct SubDist {
    /// Terminal states.
    pub mass: HashMap<State, Rational>,
    /// Mass rejected by `observe`.
    pub fail: Rational,
    /// Mass known to run forever.
    pub diverged: Rational,
    /// Mass still inside a loop when iteration stopped.
    pub pending: Rational,
    /// False if some loop hit `max_iters` above tolerance.
    pub converged: bool,
    /// Loop body expansions performed.
    pub iterations: u64,
}

impl Default for SubDist {
    fn default() -> Self {
        SubDist {
            mass: HashMap::new(),
            fail: RBig::ZERO,
            diverged: RBig::ZERO,
            pending: RBig::ZERO,
            converged: true,
            iterations: 0,
        }
    }
}

impl SubDist {
    pub fn point(s: State) -> Self {
        let mut d = SubDist::default();
        d.mass.insert(s, RBig::ONE);
        d
    }

    pub fn failure() -> Self {
        SubDist { fail: RBig::ONE, ..SubDist::default() }
    }

    pub fn add_state(&mut self, s: State, m: Rational) {
        if m.is_zero() {
            return;
        }
        match self.mass.get_mut(&s) {
            Some(acc) => *acc += m,
            None => {
                self.mass.insert(s, m);
            }
        }
    }

    /// `self += w * other`
    pub fn add_scaled(&mut self, other: &SubDist, w: &Rational) {
        for (s, m) in &other.mass {
            self.add_state(s.clone(), w * m);
        }
        if !other.fail.is_zero() {
            self.fail += w * &other.fail;
        }
        if !other.diverged.is_zero() {
            self.diverged += w * &other.diverged;
        }
        if !other.pending.is_zero() {
            self.pending += w * &other.pending;
        }
        self.converged &= other.converged;
        self.iterations += other.iterations;
    }

    pub fn terminated_mass(&self) -> Rational {
        self.mass.values().fold(RBig::ZERO, |acc, m| acc + m)
    }

    /// Total mass including failure, divergence and pending; exactly one
    /// for any unit-mass run.
    pub fn total(&self) -> Rational {
        self.terminated_mass() + &self.fail + &self.diverged + &self.pending
    }

    fn same_outcome(&self, other: &SubDist) -> bool {
        self.fail == other.fail
            && self.diverged == other.diverged
            && self.pending == other.pending
            && self.mass == other.mass
    }

    /// Expected value of `f` over terminal states.
    pub fn expect(&self, f: &Expr) -> Result<Rational> {
        let mut acc = RBig::ZERO;
        for (s, m) in &self.mass {
            acc += m * expectation_value(f, s)?;
        }
        Ok(acc)
    }

    /// Push terminal states through a function of the state.
    pub fn map_states(&self, f: impl Fn(&State) -> Result<State>) -> Result<SubDist> {
        let mut out = SubDist {
            mass: HashMap::with_capacity(self.mass.len()),
            fail: self.fail.clone(),
            diverged: self.diverged.clone(),
            pending: self.pending.clone(),
            converged: self.converged,
            iterations: self.iterations,
        };
        for (s, m) in &self.mass {
            out.add_state(f(s)?, m.clone());
        }
        Ok(out)
    }

    /// Marginal over one variable's value.
    pub fn marginal(&self, var: &str) -> HashMap<Value, Rational> {
        let mut out: HashMap<Value, Rational> = HashMap::new();
        for (s, m) in &self.mass {
            *out.entry(s.lookup(var)).or_insert(RBig::ZERO) += m;
        }
        out
    }
}

/// Value of an expectation at a state: booleans count as indicators and
/// numbers must be non-negative.
pub fn expectation_value(f: &Expr, s: &State) -> Result<Rational> {
    match f.eval(s)? {
        Value::Bool(b) => Ok(if b { RBig::ONE } else { RBig::ZERO }),
        v => {
            let q = v.as_rational().unwrap();
            if q < RBig::ZERO {
                return Err(Error::NegativeExpectation(format!("{v} at {{{s}}}")));
            }
            Ok(q)
        }
    }
}

/// Iterate `while guard { body }` from `init`, returning exit states.
pub(crate) fn run_loop(
    init: &State,
    guard: &Expr,
    cfg: &IterConfig,
    body: &mut dyn FnMut(&State) -> Result<SubDist>,
) -> Result<SubDist> {
    let mut out = SubDist::default();
    let mut running: HashMap<State, Rational> = HashMap::from([(init.clone(), RBig::ONE)]);
    let mut memo: HashMap<State, Arc<SubDist>> = HashMap::new();
    let mut rounds = 0u64;
    loop {
        let mut inside: Vec<(State, Rational)> = Vec::new();
        let mut inside_mass = RBig::ZERO;
        for (s, m) in running.drain() {
            if guard.eval_bool(&s, "guard")? {
                inside_mass += &m;
                inside.push((s, m));
            } else {
                out.add_state(s, m);
            }
        }
        if inside.is_empty() {
            return Ok(out);
        }
        if !cfg.tolerance.is_zero() && inside_mass <= cfg.tolerance {
            out.pending += inside_mass;
            return Ok(out);
        }
        if rounds >= cfg.max_iters {
            out.pending += inside_mass;
            out.converged = false;
            return Ok(out);
        }
        let mut steps = Vec::with_capacity(inside.len());
        for (s, m) in inside {
            let d = match memo.get(&s) {
                Some(d) => d.clone(),
                None => {
                    let d = Arc::new(body(&s)?);
                    memo.insert(s.clone(), d.clone());
                    d
                }
            };
            steps.push((s, m, d));
        }
        rounds += 1;
        out.iterations += 1;
        if let Some(done) = geometric_closure(&steps, &inside_mass, guard)? {
            out.add_scaled(&done, &RBig::ONE);
            return Ok(out);
        }
        for (_, m, d) in &steps {
            for (s, dm) in &d.mass {
                let w = m * dm;
                match running.get_mut(s) {
                    Some(acc) => *acc += w,
                    None => {
                        running.insert(s.clone(), w);
                    }
                }
            }
            if !d.fail.is_zero() {
                out.fail += m * &d.fail;
            }
            if !d.diverged.is_zero() {
                out.diverged += m * &d.diverged;
            }
            if !d.pending.is_zero() {
                out.pending += m * &d.pending;
            }
            out.converged &= d.converged;
            out.iterations += d.iterations;
        }
    }
}

/// Closed form for loops whose body has the same outcome from every running
/// state and re-enters only states already running: each round then keeps
/// the same fraction `r` of the mass, so the rest is a geometric series.
fn geometric_closure(
    steps: &[(State, Rational, Arc<SubDist>)],
    inside_mass: &Rational,
    guard: &Expr,
) -> Result<Option<SubDist>> {
    let first = &steps[0].2;
    if !steps.iter().all(|(_, _, d)| Arc::ptr_eq(d, first) || d.same_outcome(first)) {
        return Ok(None);
    }
    let mut stay = RBig::ZERO;
    let mut exits = SubDist { pending: first.pending.clone(), ..SubDist::default() };
    exits.fail = first.fail.clone();
    exits.diverged = first.diverged.clone();
    exits.converged = first.converged;
    exits.iterations = first.iterations;
    for (s, m) in &first.mass {
        if guard.eval_bool(s, "guard")? {
            if !steps.iter().any(|(r, _, _)| r == s) {
                return Ok(None);
            }
            stay += m;
        } else {
            exits.add_state(s.clone(), m.clone());
        }
    }
    let mut out = SubDist::default();
    if stay == RBig::ONE {
        out.diverged = inside_mass.clone();
        return Ok(Some(out));
    }
    let factor = inside_mass / (RBig::ONE - stay);
    out.add_scaled(&exits, &factor);
    Ok(Some(out))
}

/// `|wp_b f + wlp_{not b} (1 - f) - 1|` read off one run; zero whenever `f`
/// is bounded by one.
pub fn invariant_sum_of(d: &SubDist, f: &Expr, fail_value: bool) -> Result<Rational> {
    let wp = wp_of(d, f, fail_value)?.value;
    // wlp of the complement, evaluated pointwise so boolean `f` works too.
    let mut wlp = d.diverged.clone() + &d.pending;
    if !fail_value {
        wlp += &d.fail;
    }
    for (t, m) in &d.mass {
        let v = expectation_value(f, t)?;
        if v > RBig::ONE {
            return Err(Error::BoundError(fmt_rational_short(&v)));
        }
        wlp += m * (RBig::ONE - v);
    }
    let diff = wp + wlp - RBig::ONE;
    Ok(if diff < RBig::ZERO { -diff } else { diff })
}

/// A one-sided or two-sided estimate produced by finite iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    /// The iterate itself.
    pub value: Rational,
    /// Certain lower bound on the limit.
    pub lower: Rational,
    /// Certain upper bound on the limit, when one is known.
    pub upper: Option<Rational>,
    pub converged: bool,
    pub iterations: u64,
}

impl Estimate {
    pub fn value_f64(&self) -> f64 {
        to_f64(&self.value)
    }

    pub fn is_exact(&self) -> bool {
        self.upper.as_ref() == Some(&self.lower)
    }
}

/// Weakest pre-expectation read off a sub-distribution; `fail_value`
/// decides whether failed runs count.
pub fn wp_of(d: &SubDist, f: &Expr, fail_value: bool) -> Result<Estimate> {
    let mut value = d.expect(f)?;
    if fail_value {
        value += &d.fail;
    }
    let upper = if d.pending.is_zero() { Some(value.clone()) } else { None };
    Ok(Estimate { lower: value.clone(), value, upper, converged: d.converged, iterations: d.iterations })
}

/// Weakest liberal pre-expectation; `f` must be bounded by one.
pub fn wlp_of(d: &SubDist, f: &Expr, fail_value: bool) -> Result<Estimate> {
    let mut lower = RBig::ZERO;
    for (s, m) in &d.mass {
        let v = expectation_value(f, s)?;
        if v > RBig::ONE {
            return Err(Error::BoundError(format!("{} at {{{s}}}", crate::value::fmt_rational_short(&v))));
        }
        lower += m * v;
    }
    if fail_value {
        lower += &d.fail;
    }
    lower += &d.diverged;
    let value = &lower + &d.pending;
    Ok(Estimate { value: value.clone(), lower, upper: Some(value), converged: d.converged, iterations: d.iterations })
}

/// Conditional expectation: failed runs are discarded, divergent ones kept
/// in the normaliser.
pub fn cwp_of(d: &SubDist, f: &Expr) -> Result<Estimate> {
    let num = d.expect(f)?;
    let settled = d.terminated_mass() + &d.diverged;
    let den = &settled + &d.pending;
    if den.is_zero() {
        return Err(Error::ZeroDenominator);
    }
    let value = &num / &den;
    if d.pending.is_zero() {
        return Ok(Estimate {
            lower: value.clone(),
            upper: Some(value.clone()),
            value,
            converged: d.converged,
            iterations: d.iterations,
        });
    }
    // Pending mass could still terminate anywhere or fail; for expectations
    // bounded by one that pins the limit between these two ratios.
    let bounded = d
        .mass
        .keys()
        .map(|s| expectation_value(f, s))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .all(|v| *v <= RBig::ONE);
    let upper = if bounded && !settled.is_zero() {
        let hi = (num + &d.pending) / settled;
        Some(if hi > RBig::ONE { RBig::ONE } else { hi })
    } else {
        None
    };
    Ok(Estimate { lower: value.clone(), value, upper, converged: d.converged, iterations: d.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::build::*;
    use crate::value::Ident;

    fn flip_body(p: Rational) -> impl FnMut(&State) -> Result<SubDist> {
        move |s: &State| {
            let mut d = SubDist::default();
            d.add_state(s.set(&Ident::from("b"), Value::Bool(true)), p.clone());
            d.add_state(s.set(&Ident::from("b"), Value::Bool(false)), RBig::ONE - &p);
            Ok(d)
        }
    }

    #[test]
    fn iid_loop_is_closed_exactly() {
        let init = State::from_pairs([("b", Value::Bool(true))]);
        let d = run_loop(&init, &var("b"), &IterConfig::default(), &mut flip_body(rat(2, 3))).unwrap();
        assert_eq!(d.terminated_mass(), RBig::ONE);
        assert!(d.pending.is_zero());
        assert_eq!(d.iterations, 1);
    }

    #[test]
    fn certain_loop_diverges_exactly() {
        let init = State::new();
        let d = run_loop(&init, &Expr::bool(true), &IterConfig::default(), &mut |s: &State| {
            Ok(SubDist::point(s.clone()))
        })
        .unwrap();
        assert_eq!(d.diverged, RBig::ONE);
        assert!(d.converged);
    }

    #[test]
    fn counting_loop_truncates() {
        // while b { h <- h + 1; flip b 1/2 }
        let init = State::from_pairs([("b", Value::Bool(true))]);
        let mut body = |s: &State| {
            let h = s.lookup("h").as_rational().unwrap() + RBig::ONE;
            let s = s.set(&Ident::from("h"), Value::Int(h.numerator().clone()));
            flip_body(rat(1, 2))(&s)
        };
        let d = run_loop(&init, &var("b"), &IterConfig::fixed(5), &mut body).unwrap();
        assert_eq!(d.pending, rat(1, 32));
        assert!(!d.converged);
        assert_eq!(d.iterations, 5);
        let wlp = wlp_of(&d, &Expr::bool(true), false).unwrap();
        let wp = wp_of(&d, &Expr::bool(true), false).unwrap();
        assert_eq!(wlp.value - wp.value, rat(1, 32));
    }
}
