//! Library of example programs and reusable sampling subroutines.
//!
//! Subroutines write their result to a caller-chosen variable and use
//! scratch variables of their own. By default each instantiation gets fresh
//! scratch names (`k'3`, `a'3`, ...) so two uses in one program never
//! interfere; [`Stdlib::shared`] keeps the plain names instead.

use std::cell::Cell;

use crate::ast::build::*;
use crate::ast::{Command, Expr};

pub struct Stdlib {
    next: Cell<u32>,
    hygienic: bool,
}

impl Default for Stdlib {
    fn default() -> Self {
        Self::new()
    }
}

/// Scratch-name generator for one instantiation.
struct Scope {
    id: Option<u32>,
}

impl Scope {
    fn name(&self, base: &str) -> String {
        match self.id {
            Some(id) => format!("{base}'{id}"),
            None => base.to_string(),
        }
    }

    fn var(&self, base: &str) -> Expr {
        Expr::var(&self.name(base))
    }
}

fn sq(e: Expr) -> Expr {
    e.clone() * e
}

impl Stdlib {
    pub fn new() -> Self {
        Stdlib { next: Cell::new(1), hygienic: true }
    }

    /// Scratch variables keep their plain names, so nested uses clobber
    /// each other's scratch state.
    pub fn shared() -> Self {
        Stdlib { next: Cell::new(1), hygienic: false }
    }

    fn scope(&self) -> Scope {
        if !self.hygienic {
            return Scope { id: None };
        }
        let id = self.next.get();
        self.next.set(id + 1);
        Scope { id: Some(id) }
    }

    /// `out` becomes true with probability `exp(-gamma)`, for `gamma` in
    /// `[0, 1]`.
    pub fn bernoulli_exponential_0_1(&self, out: &str, gamma: Expr) -> Command {
        let sc = self.scope();
        let (k, a) = (sc.name("k"), sc.name("a"));
        seq(vec![
            assign(&k, int(0)),
            assign(&a, Expr::bool(true)),
            while_(
                var(&a),
                choice(
                    gamma / (var(&k) + int(1)),
                    assign(&k, var(&k) + int(1)),
                    assign(&a, Expr::bool(false)),
                ),
            ),
            ite(is_even(var(&k)), assign(out, Expr::bool(true)), assign(out, Expr::bool(false))),
        ])
    }

    /// `out` becomes true with probability `exp(-gamma)` for any
    /// non-negative `gamma`.
    pub fn bernoulli_exponential(&self, out: &str, gamma: Expr) -> Command {
        let sc = self.scope();
        let (i, b) = (sc.name("i"), sc.name("b"));
        let small = self.bernoulli_exponential_0_1(out, gamma.clone());
        let unit = self.bernoulli_exponential_0_1(&b, int(1));
        let rest = self.bernoulli_exponential_0_1(out, gamma.clone() - floor(gamma.clone()));
        ite(
            le(gamma.clone(), int(1)),
            small,
            seq(vec![
                assign(&i, int(1)),
                assign(&b, Expr::bool(true)),
                while_(and(var(&b), le(var(&i), gamma)), seq(vec![unit, assign(&i, var(&i) + int(1))])),
                ite(var(&b), rest, assign(out, Expr::bool(false))),
            ]),
        )
    }

    /// Discrete Laplace with scale `t/s` on the integers.
    pub fn discrete_laplace(&self, out: &str, s: Expr, t: Expr) -> Command {
        let sc = self.scope();
        let n = |x: &str| sc.name(x);
        let accept_u = self.bernoulli_exponential(&n("d"), sc.var("u") / t.clone());
        let first_coin = self.bernoulli_exponential(&n("il"), int(1));
        let next_coin = self.bernoulli_exponential(&n("il"), int(1));
        let body = uniform(
            t.clone(),
            &n("u"),
            seq(vec![
                accept_u,
                ite(
                    sc.var("d"),
                    seq(vec![
                        assign(&n("v"), int(0)),
                        first_coin,
                        while_(sc.var("il"), seq(vec![assign(&n("v"), sc.var("v") + int(1)), next_coin])),
                        assign(&n("x"), sc.var("u") + t * sc.var("v")),
                        assign(&n("y"), floor(sc.var("x") / s)),
                        flip(&n("c"), Expr::rat(1, 2)),
                        ite(
                            and(sc.var("c"), eq(sc.var("y"), int(0))),
                            skip(),
                            seq(vec![
                                assign(&n("lp"), Expr::bool(false)),
                                ite(sc.var("c"), assign(out, -sc.var("y")), assign(out, sc.var("y"))),
                            ]),
                        ),
                    ]),
                    skip(),
                ),
            ]),
        );
        seq(vec![assign(&n("lp"), Expr::bool(true)), while_(sc.var("lp"), body)])
    }

    /// Discrete Gaussian centred at zero with scale `sigma`.
    pub fn discrete_gaussian_0(&self, out: &str, sigma: Expr) -> Command {
        let sc = self.scope();
        let (t, ok) = (sc.name("t"), sc.name("ol"));
        let sigma_sq = sq(sigma.clone());
        let gamma = sq(abs(var(out)) - sigma_sq.clone() / var(&t)) / (int(2) * sigma_sq);
        seq(vec![
            assign(&t, floor(sigma) + int(1)),
            assign(&ok, Expr::bool(false)),
            while_(
                !var(&ok),
                seq(vec![
                    self.discrete_laplace(out, int(1), var(&t)),
                    self.bernoulli_exponential(&ok, gamma),
                ]),
            ),
        ])
    }

    /// Discrete Gaussian centred at `mu` with scale `sigma`.
    pub fn discrete_gaussian(&self, out: &str, mu: Expr, sigma: Expr) -> Command {
        seq(vec![self.discrete_gaussian_0(out, sigma), assign(out, var(out) + mu)])
    }

    /// Hare and tortoise race conditioned on `event`.
    pub fn hare_tortoise(&self, event: Expr) -> Command {
        seq(vec![
            uniform(int(10), "n", assign("t0", var("n"))),
            assign("tortoise", var("t0")),
            assign("hare", int(0)),
            assign("time", int(0)),
            while_(
                lt(var("hare"), var("tortoise")),
                seq(vec![
                    assign("time", var("time") + int(1)),
                    assign("tortoise", var("tortoise") + int(1)),
                    choice(
                        Expr::rat(2, 5),
                        seq(vec![
                            self.discrete_gaussian("jump", int(4), int(2)),
                            assign("hare", var("hare") + var("jump")),
                        ]),
                        skip(),
                    ),
                ]),
            ),
            observe(event),
        ])
    }
}

/// Two coins of bias `p` are flipped until they differ; `a` is then fair.
pub fn dueling_coins(p: Expr) -> Command {
    seq(vec![
        assign("a", Expr::bool(false)),
        assign("b", Expr::bool(false)),
        while_(eq(var("a"), var("b")), seq(vec![flip("a", p.clone()), flip("b", p)])),
    ])
}

/// Count heads of a `p`-coin before the first tail, conditioned on the
/// count being prime.
pub fn geometric_primes(p: Expr) -> Command {
    seq(vec![
        assign("h", int(0)),
        flip("b", p.clone()),
        while_(var("b"), seq(vec![assign("h", var("h") + int(1)), flip("b", p)])),
        observe(is_prime(var("h"))),
    ])
}

/// Fair `n`-sided die with faces `1..=n` in `x`.
pub fn die(n: Expr) -> Command {
    uniform(n, "m", assign("x", var("m") + int(1)))
}

pub fn bernoulli_exponential(out: &str, gamma: Expr) -> Command {
    Stdlib::new().bernoulli_exponential(out, gamma)
}

pub fn discrete_laplace(out: &str, s: Expr, t: Expr) -> Command {
    Stdlib::new().discrete_laplace(out, s, t)
}

pub fn discrete_gaussian(out: &str, mu: Expr, sigma: Expr) -> Command {
    Stdlib::new().discrete_gaussian(out, mu, sigma)
}

pub fn hare_tortoise(event: Expr) -> Command {
    Stdlib::new().hare_tortoise(event)
}

/// A named program with parameter defaults, as shipped in `programs/`.
pub struct Entry {
    pub name: &'static str,
    /// Variable whose distribution is of interest.
    pub output: &'static str,
    pub params: Vec<(&'static str, Expr)>,
    /// Build the program with parameters left as free variables.
    pub build: fn() -> Command,
}

/// Programs shipped as source files, built with parameters as variables.
pub fn catalog() -> Vec<Entry> {
    vec![
        Entry { name: "dueling_coins", output: "a", params: vec![("p", Expr::rat(2, 3))], build: || dueling_coins(var("p")) },
        Entry { name: "primes", output: "h", params: vec![("p", Expr::rat(1, 2))], build: || geometric_primes(var("p")) },
        Entry { name: "die", output: "x", params: vec![("n", int(6))], build: || die(var("n")) },
        Entry {
            name: "bernoulli_exponential",
            output: "out",
            params: vec![("gamma", Expr::rat(1, 2))],
            build: || bernoulli_exponential("out", var("gamma")),
        },
        Entry {
            name: "laplace",
            output: "out",
            params: vec![("s", int(2)), ("t", int(1))],
            build: || discrete_laplace("out", var("s"), var("t")),
        },
        Entry {
            name: "gaussian",
            output: "out",
            params: vec![("mu", int(0)), ("sigma", int(1))],
            build: || discrete_gaussian("out", var("mu"), var("sigma")),
        },
        Entry { name: "hare_tortoise", output: "t0", params: vec![("event", Expr::bool(true))], build: || hare_tortoise(var("event")) },
    ]
}
