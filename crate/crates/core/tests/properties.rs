mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use dashu_base::{Gcd, UnsignedAbs};
use dashu_ratio::RBig;
use proptest::prelude::*;

use common::*;
use zar_core::ast::build::*;
use zar_core::ast::{Command, Expr};
use zar_core::cftree::{leaf_kont, tcwp, tree_bind, tree_dist, twp, CfTree, Kont};
use zar_core::compile::{compile, uniform_tree, BERNOULLI_VAR, UNIFORM_VAR};
use zar_core::debias::{bernoulli_tree, debias, elim_choices, is_unbiased};
use zar_core::dist::{Estimate, IterConfig};
use zar_core::parser::{parse_expr, parse_program};
use zar_core::pretty::{pretty_expr, pretty_print};
use zar_core::sampler::{enumerate_paths, prepare_from, sample, sample_many, CountingSource, SamplerConfig, SeededBits};
use zar_core::semantics::{cwp, exec, exec_projected, invariant_sum_check, wlp, wp};
use zar_core::stats::{kl_divergence, smape, tv_distance, FiniteDist};
use zar_core::stdlib::Stdlib;
use zar_core::value::{rat, to_f64, Ident, Rational, State, Value};

fn exact() -> IterConfig {
    IterConfig::default()
}

fn same_estimate(a: &zar_core::error::Result<Estimate>, b: &zar_core::error::Result<Estimate>) -> bool {
    match (a, b) {
        (Ok(a), Ok(b)) => a.value == b.value,
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

fn close_estimate(a: &zar_core::error::Result<Estimate>, b: &zar_core::error::Result<Estimate>, tol: f64) -> bool {
    match (a, b) {
        (Ok(a), Ok(b)) => to_f64(&(&a.value - &b.value)).abs() <= tol,
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

fn finite_dist() -> impl Strategy<Value = FiniteDist> {
    prop::collection::vec(0.01f64..1.0, 1..8).prop_map(|ws| {
        let total: f64 = ws.iter().sum();
        ws.iter().enumerate().map(|(i, w)| (Value::int(i as i64), w / total)).collect()
    })
}

fn kont_of(c: Command) -> Kont {
    Arc::new(move |s: &State| compile(&c, s))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 96, ..ProptestConfig::default() })]

    #[test]
    fn expressions_round_trip(e in any_expr()) {
        let text = pretty_expr(&e);
        prop_assert_eq!(parse_expr(&text).unwrap(), e, "{}", text);
    }

    #[test]
    fn commands_round_trip(c in any_command()) {
        let text = pretty_print(&c);
        prop_assert_eq!(parse_program(&text).unwrap(), c, "{}", text);
    }

    #[test]
    fn evaluation_is_deterministic(e in any_expr()) {
        let s = init_state();
        let a = e.eval(&s).map_err(|e| e.to_string());
        let b = e.eval(&s).map_err(|e| e.to_string());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn updates_do_not_interfere(v in -100i64..100, w in -100i64..100) {
        let s = init_state().set(&Ident::from("x"), Value::int(w));
        let t = s.set(&Ident::from("y"), Value::int(v));
        prop_assert_eq!(t.lookup("x"), s.lookup("x"));
        prop_assert_eq!(t.lookup("b"), s.lookup("b"));
        prop_assert_eq!(t.lookup("y"), Value::int(v));
    }

    #[test]
    fn rationals_stay_reduced(a in -500i64..500, b in 1u64..500, c in -500i64..500, d in 1u64..500) {
        let (p, q) = (rat(a, b), rat(c, d));
        for r in [&p + &q, &p - &q, &p * &q] {
            let (n, m) = r.clone().into_parts();
            let g = n.clone().unsigned_abs().gcd(&m);
            prop_assert!(g == dashu_int::UBig::ONE || n == dashu_int::IBig::ZERO);
        }
    }

    #[test]
    fn metrics_vanish_on_equal_inputs(p in finite_dist()) {
        prop_assert!(tv_distance(&p, &p).unwrap().abs() < 1e-12);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
        prop_assert!(smape(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn tv_is_symmetric_and_bounded(p in finite_dist(), q in finite_dist()) {
        let (a, b) = (tv_distance(&p, &q).unwrap(), tv_distance(&q, &p).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
        let kl = kl_divergence(&p, &q).unwrap();
        prop_assert!(kl >= -1e-12);
    }

    #[test]
    fn compilation_preserves_cwp_on_loop_free_programs(c in loop_free()) {
        let s = init_state();
        let t = compile(&c, &s).unwrap();
        for f in queries() {
            prop_assert!(same_estimate(&tcwp(&t, &f, &exact()), &cwp(&c, &f, &s, &exact())), "{} / {:?}", pretty_print(&c), f);
        }
    }

    #[test]
    fn compilation_matches_at_matched_iterations(c in with_loop(), k in 1u64..6) {
        let s = init_state();
        let t = compile(&c, &s).unwrap();
        let cfg = IterConfig::fixed(k);
        for f in queries() {
            prop_assert!(close_estimate(&tcwp(&t, &f, &cfg), &cwp(&c, &f, &s, &cfg), 1e-9));
        }
    }

    #[test]
    fn elim_and_debias_preserve_cwp(c in loop_free()) {
        let t = compile(&c, &init_state()).unwrap();
        let e = elim_choices(&t).unwrap();
        let d = debias(&e).unwrap();
        prop_assert!(is_unbiased(&d, &[], 2));
        for f in queries() {
            let base = tcwp(&t, &f, &exact());
            prop_assert!(same_estimate(&base, &tcwp(&e, &f, &exact())));
            prop_assert!(same_estimate(&base, &tcwp(&d, &f, &exact())));
        }
    }

    #[test]
    fn debias_preserves_cwp_with_loops(c in with_loop(), k in 1u64..5) {
        let t = compile(&c, &init_state()).unwrap();
        let d = debias(&elim_choices(&t).unwrap()).unwrap();
        prop_assert!(is_unbiased(&d, &[], 3));
        let cfg = IterConfig::fixed(k);
        for f in queries() {
            prop_assert!(close_estimate(&tcwp(&t, &f, &cfg), &tcwp(&d, &f, &cfg), 1e-9));
        }
    }

    #[test]
    fn bernoulli_trees_are_exact(d in 1u64..1000, n in 0u64..1000) {
        let p = rat((n % (d + 1)) as i64, d);
        let t = bernoulli_tree(&p).unwrap();
        let got = twp(false, &t, &var(BERNOULLI_VAR), &exact()).unwrap();
        prop_assert!(got.is_exact());
        prop_assert_eq!(got.value, p);
    }

    #[test]
    fn uniform_trees_are_exact(n in 1u64..300, k in 0u64..300) {
        let t = uniform_tree(&dashu_int::IBig::from(n)).unwrap();
        let f = eq(var(UNIFORM_VAR), int((k % n) as i64));
        let got = twp(false, &t, &f, &exact()).unwrap();
        prop_assert_eq!(got.value, rat(1, n));
    }

    #[test]
    fn bind_is_a_monad(c1 in loop_free(), c2 in loop_free()) {
        let s = init_state();
        let t = compile(&c1, &s).unwrap();
        // Separately built loop nodes never compare equal, so the laws are
        // checked through the distributions. Right identity:
        let bound = tree_bind(&t, &leaf_kont()).unwrap();
        prop_assert_eq!(tree_dist(&bound, &exact()).unwrap(), tree_dist(&t, &exact()).unwrap());
        // Left identity.
        let k2 = kont_of(c2.clone());
        let bound = tree_bind(&CfTree::Leaf(s.clone()), &k2).unwrap();
        prop_assert_eq!(tree_dist(&bound, &exact()).unwrap(), tree_dist(&k2(&s).unwrap(), &exact()).unwrap());
        // Associativity, compared through the distributions.
        let k1 = kont_of(c2.clone());
        let k3 = kont_of(c1.clone());
        let left = tree_bind(&tree_bind(&t, &k1).unwrap(), &k3).unwrap();
        let (k1b, k3b) = (k1.clone(), k3.clone());
        let nested: Kont = Arc::new(move |s: &State| tree_bind(&k1b(s)?, &k3b));
        let right = tree_bind(&t, &nested).unwrap();
        prop_assert_eq!(tree_dist(&left, &exact()).unwrap(), tree_dist(&right, &exact()).unwrap());
    }

    #[test]
    fn wp_is_linear_on_loop_free_trees(c in loop_free(), a in 0i64..5) {
        let t = compile(&c, &init_state()).unwrap();
        let f = abs(var("x"));
        let g = abs(var("y") - int(1));
        let combined = int(a) * f.clone() + g.clone();
        let lhs = twp(false, &t, &combined, &exact()).unwrap().value;
        let rhs = rat(a, 1) * twp(false, &t, &f, &exact()).unwrap().value + twp(false, &t, &g, &exact()).unwrap().value;
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn success_and_failure_mass_sum_to_one(c in loop_free()) {
        let t = compile(&c, &init_state()).unwrap();
        let ok = twp(false, &t, &Expr::bool(true), &exact()).unwrap().value;
        let failed = twp(true, &t, &Expr::bool(false), &exact()).unwrap().value;
        prop_assert_eq!(ok + failed, RBig::ONE);
    }

    #[test]
    fn loop_free_results_ignore_the_iteration_budget(c in loop_free()) {
        let s = init_state();
        for f in queries() {
            let a = wp(false, &c, &f, &s, &IterConfig::fixed(1)).unwrap();
            let b = wp(false, &c, &f, &s, &exact()).unwrap();
            prop_assert!(a.is_exact());
            prop_assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn cwp_is_wp_without_observations(c in loop_free()) {
        prop_assume!(!has_observe(&c));
        let s = init_state();
        for f in queries() {
            prop_assert_eq!(cwp(&c, &f, &s, &exact()).unwrap().value, wp(false, &c, &f, &s, &exact()).unwrap().value);
        }
    }

    #[test]
    fn wp_is_below_wlp(c in with_loop(), k in 1u64..6, b in any::<bool>()) {
        let s = init_state();
        let cfg = IterConfig::fixed(k);
        for f in queries() {
            let lo = wp(b, &c, &f, &s, &cfg).unwrap().value;
            let hi = wlp(b, &c, &f, &s, &cfg).unwrap().value;
            prop_assert!(lo <= hi);
        }
    }

    #[test]
    fn iterates_are_monotone(c in with_loop()) {
        let s = init_state();
        for f in queries() {
            let mut prev: Option<(Rational, Rational)> = None;
            for k in 1..6 {
                let cfg = IterConfig::fixed(k);
                let lo = wp(false, &c, &f, &s, &cfg).unwrap().value;
                let hi = wlp(false, &c, &f, &s, &cfg).unwrap().value;
                if let Some((plo, phi)) = &prev {
                    prop_assert!(plo <= &lo, "wp went down at {k}");
                    prop_assert!(phi >= &hi, "wlp went up at {k}");
                }
                prev = Some((lo, hi));
            }
        }
    }

    #[test]
    fn invariant_sum_is_one(c in with_loop(), k in 1u64..6, b in any::<bool>()) {
        let s = init_state();
        for f in queries().into_iter().chain([Expr::rat(1, 2), Expr::bool(false)]) {
            let gap = invariant_sum_check(&c, &f, &s, b, &IterConfig::fixed(k)).unwrap();
            prop_assert_eq!(gap, RBig::ZERO);
        }
    }

    #[test]
    fn projection_agrees_with_full_runs(c in loop_free()) {
        let s = init_state();
        let keep = BTreeSet::from([Ident::from("x")]);
        let full = exec(&c, &s, &exact()).unwrap();
        let proj = exec_projected(&c, &s, &keep, &exact()).unwrap();
        prop_assert_eq!(full.marginal("x"), proj.marginal("x"));
        prop_assert_eq!(full.fail, proj.fail);
    }

    #[test]
    fn enumeration_brackets_tree_semantics(c in with_loop(), budget in 4u32..12) {
        let t = debias(&elim_choices(&compile(&c, &init_state()).unwrap()).unwrap()).unwrap();
        let d = enumerate_paths(&t, budget).unwrap();
        let reference = tree_dist(&t, &exact()).unwrap();
        let gap_budget = &d.pending + &d.diverged;
        for (v, m) in d.marginal("x") {
            let f = eq(var("x"), Expr::Const(v.clone()));
            let full = reference.expect(&f).unwrap() + &reference.pending;
            prop_assert!(m <= full);
            prop_assert!(&full - &m <= &gap_budget + &reference.pending);
        }
    }

    #[test]
    fn sampling_is_reproducible_and_counts_bits(c in loop_free(), seed in any::<u64>()) {
        let s = init_state();
        let t = tree_dist(&compile(&c, &s).unwrap(), &exact()).unwrap();
        prop_assume!(!t.terminated_mass().is_zero());
        let it = prepare_from(&c, &s).unwrap();
        let cfg = SamplerConfig::default();
        let a = sample_many(&it, 50, seed, &cfg).unwrap();
        prop_assert_eq!(&a, &sample_many(&it, 50, seed, &cfg).unwrap());
        let mut src = CountingSource::new(SeededBits::new(seed));
        let mut used = 0;
        for _ in 0..20 {
            used += sample(&it, &mut src, &cfg).unwrap().bits;
        }
        prop_assert_eq!(src.count, used);
    }
}

fn has_observe(c: &Command) -> bool {
    match c {
        Command::Observe(_) => true,
        Command::Seq(a, b) | Command::Ite(_, a, b) | Command::Choice(_, a, b) => has_observe(a) || has_observe(b),
        Command::Uniform(_, _, b) | Command::While(_, b) => has_observe(b),
        _ => false,
    }
}

#[test]
fn stdlib_scratch_variables_are_fresh_per_use() {
    let lib = Stdlib::new();
    let a = lib.discrete_laplace("out", int(2), int(1));
    let b = lib.discrete_gaussian("g", int(0), int(1));
    let (mut wa, mut wb) = (BTreeSet::new(), BTreeSet::new());
    a.written_vars(&mut wa);
    b.written_vars(&mut wb);
    let shared: Vec<_> = wa.intersection(&wb).collect();
    assert!(shared.is_empty(), "{shared:?}");
    let shared_lib = Stdlib::shared();
    let (mut sa, mut sb) = (BTreeSet::new(), BTreeSet::new());
    shared_lib.bernoulli_exponential("o1", Expr::rat(1, 2)).written_vars(&mut sa);
    shared_lib.bernoulli_exponential("o2", Expr::rat(1, 2)).written_vars(&mut sb);
    assert!(sa.intersection(&sb).count() > 0, "opt-in sharing reuses names");
}

#[test]
fn every_stdlib_program_compiles_to_an_unbiased_sampler() {
    for entry in zar_core::stdlib::catalog() {
        let c = (entry.build)();
        let s = params_state(&entry.params);
        let t = debias(&elim_choices(&compile(&c, &s).unwrap()).unwrap()).unwrap();
        assert!(is_unbiased(&t, &[], 3), "{}", entry.name);
        let text = pretty_print(&c);
        assert_eq!(parse_program(&text).unwrap(), c, "{}", entry.name);
    }
}

fn params_state(params: &[(&str, Expr)]) -> State {
    let mut s = State::new();
    for (k, e) in params {
        s = s.set(&Ident::from(*k), e.eval(&s).unwrap());
    }
    s
}
