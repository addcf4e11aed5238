//! Expectation-transformer semantics of commands, computed exactly by
//! running the command forward as a sub-distribution transformer.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use dashu_int::IBig;
use dashu_ratio::RBig;

use crate::ast::{Command, Expr};
use crate::dist::{cwp_of, invariant_sum_of, run_loop, wlp_of, wp_of, Estimate, IterConfig, SubDist};
use crate::error::Result;
use crate::value::{Ident, Rational, State, Value};

/// Run `c` from `s` with unit mass.
pub fn exec(c: &Command, s: &State, cfg: &IterConfig) -> Result<SubDist> {
    match c {
        Command::Skip => Ok(SubDist::point(s.clone())),
        Command::Assign(x, e) => Ok(SubDist::point(s.set(x, e.eval(s)?))),
        Command::Observe(e) => Ok(if e.eval_bool(s, "observe")? {
            SubDist::point(s.clone())
        } else {
            SubDist::failure()
        }),
        Command::Ite(e, a, b) => {
            if e.eval_bool(s, "if")? {
                exec(a, s, cfg)
            } else {
                exec(b, s, cfg)
            }
        }
        Command::Seq(a, b) => {
            let first = exec(a, s, cfg)?;
            let mut out = SubDist { mass: Default::default(), ..first.clone() };
            for (t, m) in &first.mass {
                out.add_scaled(&exec(b, t, cfg)?, m);
            }
            Ok(out)
        }
        Command::Choice(p, a, b) => {
            let p = p.eval_prob(s)?;
            let mut out = SubDist::default();
            if !p.is_zero() {
                out.add_scaled(&exec(a, s, cfg)?, &p);
            }
            let q = RBig::ONE - &p;
            if !q.is_zero() {
                out.add_scaled(&exec(b, s, cfg)?, &q);
            }
            Ok(out)
        }
        Command::Uniform(n, x, body) => {
            let n = n.eval_uniform_bound(s)?;
            let w = RBig::ONE / RBig::from(n.clone());
            let mut out = SubDist::default();
            let mut i = IBig::ZERO;
            while i < n {
                out.add_scaled(&exec(body, &s.set(x, Value::Int(i.clone())), cfg)?, &w);
                i += IBig::ONE;
            }
            Ok(out)
        }
        Command::While(e, body) => run_loop(s, e, cfg, &mut |t| exec(body, t, cfg)),
    }
}

/// Weakest pre-expectation; `fail_value` is what a failed observation is
/// worth.
pub fn wp(fail_value: bool, c: &Command, f: &Expr, s: &State, cfg: &IterConfig) -> Result<Estimate> {
    wp_of(&exec(c, s, cfg)?, f, fail_value)
}

/// Weakest liberal pre-expectation; `f` must be bounded by one.
pub fn wlp(fail_value: bool, c: &Command, f: &Expr, s: &State, cfg: &IterConfig) -> Result<Estimate> {
    wlp_of(&exec(c, s, cfg)?, f, fail_value)
}

/// Conditional weakest pre-expectation.
pub fn cwp(c: &Command, f: &Expr, s: &State, cfg: &IterConfig) -> Result<Estimate> {
    cwp_of(&exec(c, s, cfg)?, f)
}

/// `|wp_b c f + wlp_{not b} c (1 - f) - 1|`, which is zero whenever `f` is
/// bounded by one.
pub fn invariant_sum_check(
    c: &Command,
    f: &Expr,
    s: &State,
    fail_value: bool,
    cfg: &IterConfig,
) -> Result<Rational> {
    invariant_sum_of(&exec(c, s, cfg)?, f, fail_value)
}

type VarSet = BTreeSet<Ident>;

/// Command annotated with the variables still needed at sequencing points
/// and loop heads.
enum Live {
    Skip,
    Assign(Ident, Expr),
    Observe(Expr),
    Ite(Expr, Box<Live>, Box<Live>),
    /// Variables needed after the first part.
    Seq(Box<Live>, Arc<VarSet>, Box<Live>),
    Choice(Expr, Box<Live>, Box<Live>),
    Uniform(Expr, Ident, Box<Live>),
    /// Variables needed at the loop head and after the loop, and the head
    /// variables the loop reads or writes. The rest pass through untouched.
    While { guard: Expr, head: Arc<VarSet>, body: Box<Live>, after: Arc<VarSet>, touched: Arc<VarSet> },
}

fn with_expr(mut set: VarSet, e: &Expr) -> VarSet {
    e.free_vars(&mut set);
    set
}

/// Annotate `c` given the variables needed after it; also returns the
/// variables needed before it.
fn annotate(c: &Command, after: &VarSet) -> (Live, VarSet) {
    match c {
        Command::Skip => (Live::Skip, after.clone()),
        Command::Assign(x, e) => {
            let mut before = after.clone();
            before.remove(x);
            (Live::Assign(x.clone(), e.clone()), with_expr(before, e))
        }
        Command::Observe(e) => (Live::Observe(e.clone()), with_expr(after.clone(), e)),
        Command::Ite(e, a, b) => {
            let (la, va) = annotate(a, after);
            let (lb, vb) = annotate(b, after);
            let before = with_expr(va.union(&vb).cloned().collect(), e);
            (Live::Ite(e.clone(), Box::new(la), Box::new(lb)), before)
        }
        Command::Choice(p, a, b) => {
            let (la, va) = annotate(a, after);
            let (lb, vb) = annotate(b, after);
            let before = with_expr(va.union(&vb).cloned().collect(), p);
            (Live::Choice(p.clone(), Box::new(la), Box::new(lb)), before)
        }
        Command::Seq(a, b) => {
            let (lb, mid) = annotate(b, after);
            let (la, before) = annotate(a, &mid);
            (Live::Seq(Box::new(la), Arc::new(mid), Box::new(lb)), before)
        }
        Command::Uniform(n, x, body) => {
            let (lbody, mut before) = annotate(body, after);
            before.remove(x);
            (Live::Uniform(n.clone(), x.clone(), Box::new(lbody)), with_expr(before, n))
        }
        Command::While(e, body) => {
            let mut head = with_expr(after.clone(), e);
            loop {
                let (lbody, before) = annotate(body, &head);
                if before.is_subset(&head) {
                    let mut touched = VarSet::new();
                    c.all_vars(&mut touched);
                    touched.retain(|x| head.contains(x));
                    let live = Live::While {
                        guard: e.clone(),
                        head: Arc::new(head.clone()),
                        body: Box::new(lbody),
                        after: Arc::new(after.clone()),
                        touched: Arc::new(touched),
                    };
                    return (live, head);
                }
                head.extend(before);
            }
        }
    }
}

/// Loop results shared across entries, keyed by loop node and the touched
/// part of the entry state.
struct Ctx<'a> {
    cfg: &'a IterConfig,
    loops: RefCell<HashMap<(usize, State), Arc<SubDist>>>,
}

fn exec_live(c: &Live, s: &State, cx: &Ctx) -> Result<SubDist> {
    match c {
        Live::Skip => Ok(SubDist::point(s.clone())),
        Live::Assign(x, e) => Ok(SubDist::point(s.set(x, e.eval(s)?))),
        Live::Observe(e) => Ok(if e.eval_bool(s, "observe")? {
            SubDist::point(s.clone())
        } else {
            SubDist::failure()
        }),
        Live::Ite(e, a, b) => {
            if e.eval_bool(s, "if")? {
                exec_live(a, s, cx)
            } else {
                exec_live(b, s, cx)
            }
        }
        Live::Seq(a, mid, b) => {
            let first = exec_live(a, s, cx)?.map_states(|t| Ok(t.project(mid)))?;
            let mut out = SubDist { mass: Default::default(), ..first.clone() };
            for (t, m) in &first.mass {
                out.add_scaled(&exec_live(b, t, cx)?, m);
            }
            Ok(out)
        }
        Live::Choice(p, a, b) => {
            let p = p.eval_prob(s)?;
            let mut out = SubDist::default();
            if !p.is_zero() {
                out.add_scaled(&exec_live(a, s, cx)?, &p);
            }
            let q = RBig::ONE - &p;
            if !q.is_zero() {
                out.add_scaled(&exec_live(b, s, cx)?, &q);
            }
            Ok(out)
        }
        Live::Uniform(n, x, body) => {
            let n = n.eval_uniform_bound(s)?;
            let w = RBig::ONE / RBig::from(n.clone());
            let mut out = SubDist::default();
            let mut i = IBig::ZERO;
            while i < n {
                out.add_scaled(&exec_live(body, &s.set(x, Value::Int(i.clone())), cx)?, &w);
                i += IBig::ONE;
            }
            Ok(out)
        }
        Live::While { guard, head, body, after, touched } => {
            let (key, frame) = s.project(head).split(touched);
            let id = (c as *const Live as usize, key);
            let cached = cx.loops.borrow().get(&id).cloned();
            let exits = match cached {
                Some(d) => d,
                None => {
                    let d = run_loop(&id.1, guard, cx.cfg, &mut |t| {
                        exec_live(body, t, cx)?.map_states(|u| Ok(u.project(head)))
                    })?;
                    let d = Arc::new(d.map_states(|t| Ok(t.project(after)))?);
                    cx.loops.borrow_mut().insert(id, d.clone());
                    d
                }
            };
            let frame = frame.project(after);
            if frame.is_empty() {
                return Ok((*exits).clone());
            }
            exits.map_states(|t| Ok(t.merge(&frame)))
        }
    }
}

/// Forward run of `c` whose final states keep only the variables in
/// `keep`. Variables that can no longer influence `keep` are dropped as the
/// run goes, so runs differing only in dead scratch variables merge. Any
/// expectation over `keep` matches [`exec`] in the limit, though iterates
/// cut off by `cfg` can be closer to it.
pub fn exec_projected(c: &Command, s: &State, keep: &BTreeSet<Ident>, cfg: &IterConfig) -> Result<SubDist> {
    let (live, before) = annotate(c, keep);
    let cx = Ctx { cfg, loops: RefCell::new(HashMap::new()) };
    exec_live(&live, &s.project(&before), &cx)?.map_states(|t| Ok(t.project(keep)))
}

/// Conditional expectation of `f` computed with [`exec_projected`].
pub fn cwp_projected(c: &Command, f: &Expr, s: &State, cfg: &IterConfig) -> Result<Estimate> {
    let mut keep = BTreeSet::new();
    f.free_vars(&mut keep);
    cwp_of(&exec_projected(c, s, &keep, cfg)?, f)
}
