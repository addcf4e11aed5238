//! Runtime values, program states and exact rational helpers.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use dashu_int::{IBig, UBig};
use dashu_ratio::RBig;

pub type Rational = RBig;
pub type Ident = Arc<str>;

/// Prefix reserved for variables introduced by the compiler itself.
pub const RESERVED_PREFIX: &str = "__";

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Value {
    Bool(bool),
    Int(IBig),
    Rat(Rational),
}

impl Value {
    pub fn int(n: i64) -> Self {
        Value::Int(IBig::from(n))
    }

    pub fn rat(num: i64, den: u64) -> Self {
        Value::Rat(rat(num, den))
    }

    /// Numeric view of the value; `None` for booleans.
    pub fn as_rational(&self) -> Option<Rational> {
        match self {
            Value::Bool(_) => None,
            Value::Int(n) => Some(RBig::from(n.clone())),
            Value::Rat(q) => Some(q.clone()),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn to_f64(&self) -> Option<f64> {
        match self {
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            Value::Int(n) => Some(n.to_f64().value()),
            Value::Rat(q) => Some(to_f64(q)),
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Rat(_) => "rat",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Value::Bool(_) => 0,
            Value::Int(_) => 1,
            Value::Rat(_) => 2,
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::int(n)
    }
}

impl From<Rational> for Value {
    fn from(q: Rational) -> Self {
        Value::Rat(q)
    }
}

// Booleans sort first, numbers by magnitude; an Int sorts before a Rat of
// the same magnitude so that the order agrees with structural equality.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Bool(_), _) => Ordering::Less,
            (_, Value::Bool(_)) => Ordering::Greater,
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            _ => {
                let (a, b) = (self.as_rational().unwrap(), other.as_rational().unwrap());
                a.cmp(&b).then(self.tag().cmp(&other.tag()))
            }
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Rat(q) => write!(f, "{}", fmt_rational(q)),
        }
    }
}

/// `n/d` with the denominator always present, so the text re-reads as a
/// rational literal.
pub fn fmt_rational(q: &Rational) -> String {
    format!("{}/{}", q.numerator(), q.denominator())
}

/// Human-oriented form: integers print without a denominator.
pub fn fmt_rational_short(q: &Rational) -> String {
    if q.is_int() {
        q.numerator().to_string()
    } else {
        fmt_rational(q)
    }
}

pub fn rat(num: i64, den: u64) -> Rational {
    assert!(den != 0, "zero denominator");
    RBig::from_parts(IBig::from(num), UBig::from(den))
}

pub fn rat_big(num: IBig, den: UBig) -> Rational {
    RBig::from_parts(num, den)
}

pub fn to_f64(q: &Rational) -> f64 {
    q.to_f64().value()
}

pub fn half() -> Rational {
    rat(1, 2)
}

/// Deterministic primality test.
pub fn is_prime(n: &IBig) -> bool {
    if *n < IBig::from(2) {
        return false;
    }
    match u64::try_from(n) {
        Ok(small) => is_prime_u64(small),
        Err(_) => is_prime_big(n),
    }
}

const SMALL_PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in SMALL_PRIMES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    let mul = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let pow = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        b %= n;
        while e > 0 {
            if e & 1 == 1 {
                acc = mul(acc, b);
            }
            b = mul(b, b);
            e >>= 1;
        }
        acc
    };
    // These witnesses are sufficient for every 64-bit input.
    'witness: for a in SMALL_PRIMES {
        let mut x = pow(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

// Beyond 64 bits: Miller-Rabin with a fixed witness set. Probabilistic in
// principle, but no counterexample to these 12 bases is known below 3.3e24.
fn is_prime_big(n: &IBig) -> bool {
    let one = IBig::ONE;
    let two = IBig::from(2);
    for p in SMALL_PRIMES {
        if (n % IBig::from(p)) == IBig::ZERO {
            return false;
        }
    }
    let n_minus_1 = n - &one;
    let mut d = n_minus_1.clone();
    let mut s = 0;
    while (&d % &two) == IBig::ZERO {
        d /= &two;
        s += 1;
    }
    let pow = |b: &IBig, e: &IBig| {
        let mut acc = IBig::ONE;
        let mut base = b % n;
        let mut e = e.clone();
        while e > IBig::ZERO {
            if (&e % &two) == one {
                acc = (&acc * &base) % n;
            }
            base = (&base * &base) % n;
            e /= &two;
        }
        acc
    };
    'witness: for a in SMALL_PRIMES {
        let mut x = pow(&IBig::from(a), &d);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// A finite map from variables to values. Cheap to clone; updates copy.
///
/// Entries are kept sorted by name so equal states hash equally.
#[derive(Clone, Default, Eq, PartialOrd, Ord)]
pub struct State(Arc<Vec<(Ident, Value)>>);

impl PartialEq for State {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

// Hashes the entries, consistent with `eq`.
impl std::hash::Hash for State {
    fn hash<H: std::hash::Hasher>(&self, h: &mut H) {
        self.0.hash(h);
    }
}

impl State {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Value)>,
        S: AsRef<str>,
    {
        let mut s = State::new();
        for (k, v) in pairs {
            s = s.set(&Ident::from(k.as_ref()), v);
        }
        s
    }

    fn position(&self, x: &str) -> Result<usize, usize> {
        self.0.binary_search_by(|(k, _)| (**k).cmp(x))
    }

    pub fn get(&self, x: &str) -> Option<&Value> {
        self.position(x).ok().map(|i| &self.0[i].1)
    }

    /// Unbound variables read as integer zero.
    pub fn lookup(&self, x: &str) -> Value {
        self.get(x).cloned().unwrap_or_else(|| Value::int(0))
    }

    #[must_use]
    pub fn set(&self, x: &Ident, v: Value) -> State {
        let mut entries = Vec::with_capacity(self.0.len() + 1);
        match self.position(x) {
            Ok(i) => {
                entries.extend_from_slice(&self.0);
                entries[i].1 = v;
            }
            Err(i) => {
                entries.extend_from_slice(&self.0[..i]);
                entries.push((x.clone(), v));
                entries.extend_from_slice(&self.0[i..]);
            }
        }
        State(Arc::new(entries))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ident, &Value)> {
        self.0.iter().map(|(k, v)| (k, v))
    }

    /// Restriction to the variables in `keep`.
    pub fn project(&self, keep: &BTreeSet<Ident>) -> State {
        if self.0.iter().all(|(k, _)| keep.contains(k)) {
            return self.clone();
        }
        State(Arc::new(self.0.iter().filter(|(k, _)| keep.contains(k)).cloned().collect()))
    }

    /// Splits into the part on `keys` and the rest.
    pub fn split(&self, keys: &BTreeSet<Ident>) -> (State, State) {
        let (inside, outside): (Vec<_>, Vec<_>) = self.0.iter().cloned().partition(|(k, _)| keys.contains(k));
        (State(Arc::new(inside)), State(Arc::new(outside)))
    }

    /// Union of two states; `self` wins where both bind a variable.
    #[must_use]
    pub fn merge(&self, other: &State) -> State {
        if other.is_empty() {
            return self.clone();
        }
        let mut entries: Vec<(Ident, Value)> = Vec::with_capacity(self.len() + other.len());
        let (mut a, mut b) = (self.0.iter().peekable(), other.0.iter().peekable());
        loop {
            let next = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) if x.0 == y.0 => {
                    b.next();
                    a.next()
                }
                (Some(x), Some(y)) => {
                    if x.0 < y.0 {
                        a.next()
                    } else {
                        b.next()
                    }
                }
                (Some(_), None) => a.next(),
                (None, Some(_)) => b.next(),
                (None, None) => break,
            };
            entries.push(next.unwrap().clone());
        }
        State(Arc::new(entries))
    }

    /// Copy without compiler-reserved variables.
    pub fn user_visible(&self) -> State {
        if !self.0.iter().any(|(k, _)| k.starts_with(RESERVED_PREFIX)) {
            return self.clone();
        }
        let kept = self
            .0
            .iter()
            .filter(|(k, _)| !k.starts_with(RESERVED_PREFIX))
            .cloned()
            .collect();
        State(Arc::new(kept))
    }
}

// Rendered as a sequence of assignments so the text parses back as a program.
impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "skip");
        }
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{k} <- {v}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{self}}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primes_small() {
        let listed: Vec<u64> = (0..60).filter(|n| is_prime(&IBig::from(*n))).collect();
        assert_eq!(
            listed,
            vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]
        );
        assert!(!is_prime(&IBig::from(-7)));
    }

    #[test]
    fn primes_agree_with_trial_division() {
        let trial = |n: u64| n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d));
        for n in 0..5000u64 {
            assert_eq!(is_prime_u64(n), trial(n), "{n}");
        }
        assert!(is_prime_u64(18_446_744_073_709_551_557));
        assert!(!is_prime_u64(3_215_031_751));
    }

    #[test]
    fn primes_beyond_u64() {
        // 2^89 - 1 is a Mersenne prime, 2^67 - 1 is not.
        let m89 = IBig::from(2).pow(89) - IBig::ONE;
        let m67 = IBig::from(2).pow(67) - IBig::ONE;
        assert!(is_prime(&m89));
        assert!(!is_prime(&m67));
    }

    #[test]
    fn state_updates_are_persistent() {
        let s0 = State::new();
        let s1 = s0.set(&Ident::from("x"), Value::int(1));
        let s2 = s1.set(&Ident::from("a"), Value::Bool(true));
        assert_eq!(s0.lookup("x"), Value::int(0));
        assert_eq!(s1.lookup("x"), Value::int(1));
        assert_eq!(s2.to_string(), "a <- true; x <- 1");
        let s3 = s2.set(&Ident::from("x"), Value::int(2));
        assert_eq!(s2.lookup("x"), Value::int(1));
        assert_eq!(s3.lookup("x"), Value::int(2));
    }

    #[test]
    fn split_then_merge_round_trips() {
        let s = State::from_pairs([("a", Value::int(1)), ("b", Value::int(2)), ("c", Value::Bool(true))]);
        let keys = BTreeSet::from([Ident::from("b")]);
        let (inside, outside) = s.split(&keys);
        assert_eq!(inside, State::from_pairs([("b", Value::int(2))]));
        assert_eq!(outside.len(), 2);
        assert_eq!(inside.merge(&outside), s);
        assert_eq!(outside.merge(&inside), s);
        let other = State::from_pairs([("b", Value::int(9))]);
        assert_eq!(s.merge(&other), s);
    }

    #[test]
    fn value_order_is_total_and_consistent() {
        let vs = [
            Value::Bool(false),
            Value::Bool(true),
            Value::int(-1),
            Value::rat(-1, 2),
            Value::int(0),
            Value::Rat(rat(0, 1)),
            Value::rat(1, 3),
        ];
        for w in vs.windows(2) {
            assert!(w[0] < w[1], "{:?} < {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn rational_formatting() {
        assert_eq!(Value::rat(4, 6).to_string(), "2/3");
        assert_eq!(Value::rat(-3, 1).to_string(), "-3/1");
        assert_eq!(fmt_rational_short(&rat(6, 3)), "2");
    }
}
