//! Random-bit samplers: interaction trees built from unbiased CF trees,
//! bit sources, and exhaustive enumeration of bit strings.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use dashu_ratio::RBig;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::ast::Command;
use crate::cftree::{CfTree, FixNode, Kont};
use crate::dist::SubDist;
use crate::error::{Error, Result};
use crate::pretty::pretty_print;
use crate::value::{fmt_rational_short, half, Rational, State, Value};

/// A stream of fair bits.
pub trait BitSource {
    fn next_bit(&mut self) -> Result<bool>;
}

/// ChaCha8 keyed by a 64-bit seed; each 64-bit word is consumed from the
/// most significant bit down.
pub struct SeededBits {
    rng: ChaCha8Rng,
    word: u64,
    left: u32,
}

impl SeededBits {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream `stream` under the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        SeededBits { rng, word: 0, left: 0 }
    }
}

impl BitSource for SeededBits {
    fn next_bit(&mut self) -> Result<bool> {
        if self.left == 0 {
            self.word = self.rng.next_u64();
            self.left = 64;
        }
        self.left -= 1;
        Ok((self.word >> self.left) & 1 == 1)
    }
}

/// Bits from a fixed list, optionally repeated forever.
#[derive(Clone, Debug)]
pub struct FixedStream {
    bits: Vec<bool>,
    pos: usize,
    cyclic: bool,
}

impl FixedStream {
    pub fn new(bits: Vec<bool>) -> Self {
        FixedStream { bits, pos: 0, cyclic: false }
    }

    pub fn cyclic(bits: Vec<bool>) -> Self {
        FixedStream { bits, pos: 0, cyclic: true }
    }

    /// Parse a string of `0` and `1` characters.
    pub fn parse(text: &str) -> Result<Self> {
        let bits = text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Invalid(format!("bit string contains `{c}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(bits))
    }
}

impl BitSource for FixedStream {
    fn next_bit(&mut self) -> Result<bool> {
        if self.pos >= self.bits.len() {
            if !self.cyclic || self.bits.is_empty() {
                return Err(Error::Exhausted);
            }
            self.pos = 0;
        }
        self.pos += 1;
        Ok(self.bits[self.pos - 1])
    }
}

/// Counts the bits drawn through it.
pub struct CountingSource<S> {
    pub inner: S,
    pub count: u64,
}

impl<S: BitSource> CountingSource<S> {
    pub fn new(inner: S) -> Self {
        CountingSource { inner, count: 0 }
    }
}

impl<S: BitSource> BitSource for CountingSource<S> {
    fn next_bit(&mut self) -> Result<bool> {
        self.count += 1;
        self.inner.next_bit()
    }
}

/// Interaction tree obtained by unfolding a CF tree. Unfolding is lazy:
/// loop nodes are entered on demand while running. An open tree stops on
/// failure; a tied one restarts from the root.
#[derive(Clone)]
pub struct ITree {
    root: CfTree,
    tied: bool,
    unfolded: Arc<Unfolded>,
}

/// Loop bodies and continuations already generated, keyed by loop node and
/// state. Generators are pure, so replaying a cached subtree is the same as
/// regenerating it. Each entry holds its node so the address stays unique.
#[derive(Default)]
struct Unfolded {
    map: Mutex<HashMap<UnfoldKey, (Arc<FixNode>, CfTree)>>,
}

/// Node address, body (true) or continuation (false), and state.
type UnfoldKey = (usize, bool, State);

/// Entries kept per tree; later generations are not cached.
const UNFOLD_CACHE: usize = 1 << 14;

impl Unfolded {
    fn get(&self, node: &Arc<FixNode>, body: bool, s: &State) -> Result<CfTree> {
        let key = (Arc::as_ptr(node) as usize, body, s.clone());
        if let Some((_, t)) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(t.clone());
        }
        let k: &Kont = if body { &node.body } else { &node.cont };
        let t = k(s)?;
        let mut map = self.map.lock().expect("cache lock");
        if map.len() < UNFOLD_CACHE {
            map.insert(key, (node.clone(), t.clone()));
        }
        Ok(t)
    }
}

impl ITree {
    pub fn is_tied(&self) -> bool {
        self.tied
    }
}

pub fn to_itree_open(t: CfTree) -> ITree {
    ITree { root: t, tied: false, unfolded: Arc::default() }
}

/// Close the tree under restart-on-failure.
pub fn tie(it: ITree) -> ITree {
    ITree { tied: true, ..it }
}

/// Full pipeline from a program to a sampler: compile from the empty state,
/// drop degenerate choices, debias, unfold and tie.
pub fn prepare(c: &Command) -> Result<ITree> {
    prepare_from(c, &State::new())
}

/// [`prepare`] starting from `init`.
pub fn prepare_from(c: &Command, init: &State) -> Result<ITree> {
    let t = crate::compile::compile(c, init)?;
    let t = crate::debias::debias(&crate::debias::elim_choices(&t)?)?;
    Ok(tie(to_itree_open(t)))
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    /// Node visits allowed per attempt.
    pub max_steps: u64,
    /// Attempts allowed per sample; `None` retries forever.
    pub max_restarts: Option<u64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { max_steps: 10_000_000, max_restarts: None }
    }
}

/// One attempt: `Some(state)` on termination, `None` on failure. Also
/// returns the bits consumed.
pub fn run_open(it: &ITree, src: &mut dyn BitSource, max_steps: u64) -> Result<(Option<State>, u64)> {
    let fair = half();
    let mut frames: Vec<Arc<FixNode>> = Vec::new();
    let mut t = it.root.clone();
    let mut bits = 0u64;
    let mut steps = 0u64;
    loop {
        steps += 1;
        if steps > max_steps {
            return Err(Error::StepBudgetExceeded(max_steps));
        }
        t = match t {
            CfTree::Leaf(s) => match frames.last() {
                None => return Ok((Some(s), bits)),
                Some(node) => {
                    if node.guard.eval_bool(&s, "guard")? {
                        it.unfolded.get(node, true, &s)?
                    } else {
                        let node = frames.pop().unwrap();
                        it.unfolded.get(&node, false, &s)?
                    }
                }
            },
            CfTree::Fail => return Ok((None, bits)),
            CfTree::Choice(p, l, r) => {
                if p != fair {
                    return Err(Error::NotUnbiased(fmt_rational_short(&p)));
                }
                bits += 1;
                if src.next_bit()? {
                    (*l).clone()
                } else {
                    (*r).clone()
                }
            }
            CfTree::Fix(node) => {
                let start = CfTree::Leaf(node.init.clone());
                frames.push(node);
                start
            }
        };
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub state: State,
    /// Bits consumed, including those of rejected attempts.
    pub bits: u64,
    pub restarts: u64,
}

/// Draw one sample from a tied tree.
pub fn sample(it: &ITree, src: &mut dyn BitSource, cfg: &SamplerConfig) -> Result<SampleRecord> {
    if !it.tied {
        return Err(Error::Invalid("sampling requires a tied tree".into()));
    }
    let mut bits = 0;
    let mut restarts = 0;
    loop {
        let (out, used) = run_open(it, src, cfg.max_steps)?;
        bits += used;
        if let Some(state) = out {
            return Ok(SampleRecord { state, bits, restarts });
        }
        restarts += 1;
        if let Some(limit) = cfg.max_restarts {
            if restarts >= limit {
                return Err(Error::RestartBudgetExceeded(limit));
            }
        }
    }
}

/// Samples per independently seeded chunk.
pub const CHUNK: usize = 4096;

/// Draw `n` samples. Chunk `i` of [`CHUNK`] samples reads ChaCha8 stream `i`
/// under `seed`, so results do not depend on how many threads run.
pub fn sample_many(it: &ITree, n: usize, seed: u64, cfg: &SamplerConfig) -> Result<Vec<SampleRecord>> {
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<Vec<SampleRecord>>> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut src = SeededBits::with_stream(seed, i as u64);
            let len = CHUNK.min(n - i * CHUNK);
            (0..len).map(|_| sample(it, &mut src, cfg)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

type Configs = SubDistWithBits;

#[derive(Default)]
struct SubDistWithBits {
    leaves: HashMap<(State, u32), Rational>,
    fail: Rational,
    pending: Rational,
}

impl SubDistWithBits {
    fn add(&mut self, other: &SubDistWithBits, w: &Rational) {
        for (k, m) in &other.leaves {
            *self.leaves.entry(k.clone()).or_insert(RBig::ZERO) += w * m;
        }
        if !other.fail.is_zero() {
            self.fail += w * &other.fail;
        }
        if !other.pending.is_zero() {
            self.pending += w * &other.pending;
        }
    }
}

/// Loop rounds followed per loop entry while enumerating; loops that spin
/// without consuming bits are cut off here and counted as unresolved.
pub const ENUM_LOOP_CAP: u64 = 100_000;

/// Follow every bit string of length at most `budget` through an unbiased
/// tree. Terminal masses are exact; strings that would need more bits are
/// reported as pending.
pub fn enumerate_paths(t: &CfTree, budget: u32) -> Result<SubDist> {
    let fair = half();
    let c = enum_tree(t, 0, budget, &fair)?;
    let mut out = SubDist { fail: c.fail, pending: c.pending, ..SubDist::default() };
    for ((s, _), m) in c.leaves {
        out.add_state(s, m);
    }
    out.converged = out.pending.is_zero();
    Ok(out)
}

fn enum_tree(t: &CfTree, used: u32, budget: u32, fair: &Rational) -> Result<Configs> {
    let mut out = Configs::default();
    match t {
        CfTree::Leaf(s) => {
            out.leaves.insert((s.clone(), used), RBig::ONE);
        }
        CfTree::Fail => out.fail = RBig::ONE,
        CfTree::Choice(p, l, r) => {
            if p != fair {
                return Err(Error::NotUnbiased(fmt_rational_short(p)));
            }
            if used >= budget {
                out.pending = RBig::ONE;
            } else {
                out.add(&enum_tree(l, used + 1, budget, fair)?, fair);
                out.add(&enum_tree(r, used + 1, budget, fair)?, fair);
            }
        }
        CfTree::Fix(node) => {
            let mut running: HashMap<(State, u32), Rational> = HashMap::from([((node.init.clone(), used), RBig::ONE)]);
            let mut exits: HashMap<(State, u32), Rational> = HashMap::new();
            let mut memo: HashMap<(State, u32), Arc<Configs>> = HashMap::new();
            let mut rounds = 0;
            while !running.is_empty() {
                if rounds >= ENUM_LOOP_CAP {
                    for m in running.values() {
                        out.pending += m;
                    }
                    break;
                }
                rounds += 1;
                let mut next: HashMap<(State, u32), Rational> = HashMap::new();
                for ((s, b), m) in running.drain() {
                    if !node.guard.eval_bool(&s, "guard")? {
                        *exits.entry((s, b)).or_insert(RBig::ZERO) += m;
                        continue;
                    }
                    let key = (s, b);
                    let step = match memo.get(&key) {
                        Some(c) => c.clone(),
                        None => {
                            let c = Arc::new(enum_tree(&(node.body)(&key.0)?, b, budget, fair)?);
                            memo.insert(key, c.clone());
                            c
                        }
                    };
                    for (k, dm) in &step.leaves {
                        *next.entry(k.clone()).or_insert(RBig::ZERO) += &m * dm;
                    }
                    if !step.fail.is_zero() {
                        out.fail += &m * &step.fail;
                    }
                    if !step.pending.is_zero() {
                        out.pending += &m * &step.pending;
                    }
                }
                running = next;
            }
            for ((s, b), m) in exits {
                out.add(&enum_tree(&(node.cont)(&s)?, b, budget, fair)?, &m);
            }
        }
    }
    Ok(out)
}

/// Interval for each value of `var` conditioned on not failing, accounting
/// for mass that is still unresolved.
pub fn conditional_dist(d: &SubDist, var: &str) -> Result<BTreeMap<Value, (Rational, Rational)>> {
    let unresolved = &d.pending + &d.diverged;
    let settled = d.terminated_mass();
    if settled.is_zero() {
        return Err(Error::AllMassFails);
    }
    let not_failed = d.total() - &d.fail;
    let surely_ok = &not_failed - &unresolved;
    let mut out = BTreeMap::new();
    for (v, m) in d.marginal(var) {
        let lo = &m / &not_failed;
        let hi = if surely_ok > RBig::ZERO {
            let hi = (&m + &unresolved) / &surely_ok;
            if hi > RBig::ONE { RBig::ONE } else { hi }
        } else {
            RBig::ONE
        };
        out.insert(v, (lo, hi));
    }
    Ok(out)
}

/// Short content hash of a program's printed form.
pub fn program_hash(c: &Command) -> String {
    let digest = Sha256::digest(pretty_print(c).as_bytes());
    hex::encode(&digest[..8])
}

/// Write samples as a header line followed by `value<TAB>bits<TAB>restarts`
/// lines. With `var`, only that variable's value is written.
pub fn write_samples(
    out: &mut dyn Write,
    program: &Command,
    seed: u64,
    var: Option<&str>,
    samples: &[SampleRecord],
) -> io::Result<()> {
    writeln!(out, "# program={} seed={seed}", program_hash(program))?;
    for r in samples {
        match var {
            Some(x) => writeln!(out, "{}\t{}\t{}", r.state.lookup(x), r.bits, r.restarts)?,
            None => writeln!(out, "{{{}}}\t{}\t{}", r.state, r.bits, r.restarts)?,
        }
    }
    Ok(())
}
