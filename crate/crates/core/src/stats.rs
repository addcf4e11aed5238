//! Distances between finite distributions, summary statistics and the
//! sampling experiment harness.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Serialize, Serializer};

use crate::ast::Command;
use crate::dist::IterConfig;
use crate::error::{Error, Result};
use crate::sampler::{prepare_from, sample_many, SampleRecord, SamplerConfig};
use crate::semantics::exec_projected;
use crate::value::{to_f64, Ident, State, Value};

/// Finite distribution over values with floating-point weights.
pub type FiniteDist = BTreeMap<Value, f64>;

const NORMALIZATION_SLACK: f64 = 1e-12;

fn check_normalized(p: &FiniteDist, which: &str) -> Result<()> {
    let total: f64 = p.values().sum();
    if (total - 1.0).abs() > NORMALIZATION_SLACK || p.values().any(|&w| w < 0.0) {
        return Err(Error::NotNormalized(format!("{which} sums to {total}")));
    }
    Ok(())
}

/// Pairs of weights over the union of both supports.
fn cells<'a>(p: &'a FiniteDist, q: &'a FiniteDist) -> impl Iterator<Item = (f64, f64)> + 'a {
    let only_q = q.iter().filter(|(v, _)| !p.contains_key(v)).map(|(_, &w)| (0.0, w));
    p.iter().map(|(v, &w)| (w, q.get(v).copied().unwrap_or(0.0))).chain(only_q)
}

pub fn tv_distance(p: &FiniteDist, q: &FiniteDist) -> Result<f64> {
    check_normalized(p, "first distribution")?;
    check_normalized(q, "second distribution")?;
    Ok(0.5 * cells(p, q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `KL(empirical || reference)` in nats; infinite when the empirical side
/// puts mass where the reference has none.
pub fn kl_divergence(empirical: &FiniteDist, reference: &FiniteDist) -> Result<f64> {
    check_normalized(empirical, "empirical distribution")?;
    check_normalized(reference, "reference distribution")?;
    let mut acc = 0.0;
    for (a, b) in cells(empirical, reference) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            acc += a * (a / b).ln();
        }
    }
    Ok(acc.max(0.0))
}

/// Mean per-cell symmetric percentage error over the union support,
/// skipping cells where both sides are zero.
pub fn smape(p: &FiniteDist, q: &FiniteDist) -> Result<f64> {
    check_normalized(p, "first distribution")?;
    check_normalized(q, "second distribution")?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (a, b) in cells(p, q) {
        if a == 0.0 && b == 0.0 {
            continue;
        }
        sum += (a - b).abs() / ((a + b) / 2.0);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Population standard deviation.
pub fn stddev(xs: &[f64]) -> Result<f64> {
    let m = mean(xs)?;
    Ok((xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt())
}

pub fn empirical(values: &[Value]) -> Result<FiniteDist> {
    if values.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut counts: BTreeMap<Value, u64> = BTreeMap::new();
    for v in values {
        *counts.entry(v.clone()).or_default() += 1;
    }
    let n = values.len() as f64;
    Ok(counts.into_iter().map(|(v, c)| (v, c as f64 / n)).collect())
}

/// Rescale non-negative weights to sum to one, dropping zero cells.
pub fn normalize(weights: impl IntoIterator<Item = (Value, f64)>) -> Result<FiniteDist> {
    let mut out: FiniteDist = BTreeMap::new();
    for (v, w) in weights {
        if w < 0.0 || !w.is_finite() {
            return Err(Error::NotNormalized(format!("weight {w} for {v}")));
        }
        if w > 0.0 {
            *out.entry(v).or_default() += w;
        }
    }
    let total: f64 = out.values().sum();
    if total <= 0.0 {
        return Err(Error::NotNormalized("no positive weight".into()));
    }
    out.values_mut().for_each(|w| *w /= total);
    Ok(out)
}

/// Posterior of `var` computed by the exact semantics; loops are cut off
/// under `cfg` and the truncated result renormalized.
pub fn oracle_dist(c: &Command, init: &State, var: &str, cfg: &IterConfig) -> Result<FiniteDist> {
    let keep = BTreeSet::from([Ident::from(var)]);
    let d = exec_projected(c, init, &keep, cfg)?;
    let z = d.terminated_mass();
    if z.is_zero() {
        return Err(Error::ZeroDenominator);
    }
    normalize(d.marginal(var).into_iter().map(|(v, m)| (v, to_f64(&(m / &z)))))
}

/// Where the reference distribution of an experiment comes from.
#[derive(Clone, Debug)]
pub enum Reference {
    /// Computed from the program by the exact semantics.
    Oracle(IterConfig),
    /// Supplied by the caller, e.g. an analytic pmf.
    Given(FiniteDist),
}

fn serialize_kl<S: Serializer>(kl: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if kl.is_finite() {
        s.serialize_f64(*kl)
    } else {
        s.serialize_none()
    }
}

/// Outcome of one sampling experiment. Infinite KL is written as `null`.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Report {
    pub param: String,
    pub mean: f64,
    pub stddev: f64,
    pub tv: f64,
    #[serde(serialize_with = "serialize_kl")]
    pub kl: f64,
    pub smape: f64,
    pub bit_mean: f64,
    pub bit_stddev: f64,
    pub n: usize,
    pub seed: u64,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report fields serialize")
    }
}

/// Everything an experiment produced, for callers that need more than the
/// summary.
pub struct Experiment {
    pub report: Report,
    pub samples: Vec<SampleRecord>,
    pub empirical: FiniteDist,
    pub reference: FiniteDist,
}

/// Draw `n` samples of `program` from `init`, project `var` and compare
/// against `reference`.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    program: &Command,
    init: &State,
    var: &str,
    n: usize,
    seed: u64,
    param: &str,
    reference: &Reference,
    cfg: &SamplerConfig,
) -> Result<Experiment> {
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let (reference, source) = match reference {
        Reference::Oracle(iter) => (oracle_dist(program, init, var, iter)?, "oracle"),
        Reference::Given(d) => (d.clone(), "given"),
    };
    let it = prepare_from(program, init)?;
    let samples = sample_many(&it, n, seed, cfg)?;
    let values: Vec<Value> = samples.iter().map(|r| r.state.lookup(var)).collect();
    let numeric: Vec<f64> = values
        .iter()
        .map(|v| v.to_f64().ok_or_else(|| Error::TypeError(format!("`{var}` is not numeric"))))
        .collect::<Result<_>>()?;
    let bits: Vec<f64> = samples.iter().map(|r| r.bits as f64).collect();
    let emp = empirical(&values)?;
    let report = Report {
        param: if param.is_empty() { format!("reference={source}") } else { format!("{param}; reference={source}") },
        mean: mean(&numeric)?,
        stddev: stddev(&numeric)?,
        tv: tv_distance(&emp, &reference)?,
        kl: kl_divergence(&emp, &reference)?,
        smape: smape(&emp, &reference)?,
        bit_mean: mean(&bits)?,
        bit_stddev: stddev(&bits)?,
        n,
        seed,
    };
    Ok(Experiment { report, samples, empirical: emp, reference })
}

/// Width of the acceptance band for a binomial frequency.
pub fn four_sigma(p: f64, n: usize) -> f64 {
    4.0 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Acceptance thresholds for comparing samples against a reference.
#[derive(Clone, Debug)]
pub struct Tolerance {
    pub max_tv: f64,
    /// Outcomes with at least this reference mass are checked
    /// individually against a 4-sigma band.
    pub min_cell: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { max_tv: 1e-2, min_cell: 1e-3 }
    }
}

/// Reasons the empirical distribution falls outside tolerance; empty when
/// it passes.
pub fn check(emp: &FiniteDist, reference: &FiniteDist, n: usize, tol: &Tolerance) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let tv = tv_distance(emp, reference)?;
    if tv > tol.max_tv {
        problems.push(format!("tv {tv:.3e} exceeds {:.3e}", tol.max_tv));
    }
    for (v, &q) in reference.iter().filter(|(_, &q)| q >= tol.min_cell) {
        let f = emp.get(v).copied().unwrap_or(0.0);
        let band = four_sigma(q, n);
        if (f - q).abs() > band {
            problems.push(format!("frequency of {v} is {f:.5}, expected {q:.5} +/- {band:.5}"));
        }
    }
    Ok(problems)
}

/// Write reports as CSV with one row per report.
pub fn write_csv<W: std::io::Write>(out: W, reports: &[Report]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r).map_err(|e| Error::Invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Invalid(e.to_string()))
}

/// Closed-form reference distributions for the library programs. Infinite
/// supports are cut where the remaining mass drops below 1e-16.
pub mod analytic {
    use super::{normalize, FiniteDist};
    use crate::error::Result;
    use crate::value::{is_prime, Value};
    use dashu_int::IBig;

    const TAIL: f64 = 1e-16;

    pub fn bernoulli(p: f64) -> Result<FiniteDist> {
        normalize([(Value::Bool(true), p), (Value::Bool(false), 1.0 - p)])
    }

    /// Faces `1..=n`.
    pub fn die(n: u64) -> Result<FiniteDist> {
        normalize((1..=n).map(|i| (Value::int(i as i64), 1.0)))
    }

    /// Heads before the first tail of a `p`-coin, given the count is prime.
    pub fn geometric_primes(p: f64) -> Result<FiniteDist> {
        let mut cells = Vec::new();
        let mut w = 1.0 - p;
        let mut h = 0i64;
        while w > TAIL {
            if is_prime(&IBig::from(h)) {
                cells.push((Value::int(h), w));
            }
            w *= p;
            h += 1;
        }
        normalize(cells)
    }

    /// Integer-valued weights `exp(-log_weight(x))` summed outward from
    /// `centre` until both tails are negligible.
    fn symmetric(centre: i64, log_weight: impl Fn(i64) -> f64) -> Result<FiniteDist> {
        let mut cells = vec![(Value::int(centre), (-log_weight(centre)).exp())];
        let mut r = 1;
        loop {
            let lo = (-log_weight(centre - r)).exp();
            let hi = (-log_weight(centre + r)).exp();
            cells.push((Value::int(centre - r), lo));
            cells.push((Value::int(centre + r), hi));
            if lo.max(hi) < TAIL && r > 2 {
                break;
            }
            r += 1;
        }
        normalize(cells)
    }

    /// Discrete Laplace with scale `b`: mass proportional to `exp(-|x|/b)`.
    pub fn discrete_laplace(b: f64) -> Result<FiniteDist> {
        symmetric(0, |x| x.unsigned_abs() as f64 / b)
    }

    /// Discrete Gaussian: mass proportional to `exp(-(x-mu)^2 / (2 sigma^2))`.
    pub fn discrete_gaussian(mu: i64, sigma: f64) -> Result<FiniteDist> {
        symmetric(mu, |x| ((x - mu) as f64).powi(2) / (2.0 * sigma * sigma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(cells: &[(&str, f64)]) -> FiniteDist {
        cells.iter().map(|(k, w)| (Value::int(k.len() as i64), *w)).collect()
    }

    #[test]
    fn tv_examples() {
        let p = d(&[("a", 1.0)]);
        let q = d(&[("a", 0.5), ("bb", 0.5)]);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert!((tv_distance(&p, &q).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(tv_distance(&p, &d(&[("bb", 1.0)])).unwrap(), 1.0);
    }

    #[test]
    fn kl_examples() {
        let p = d(&[("a", 1.0)]);
        let q = d(&[("a", 0.5), ("bb", 0.5)]);
        assert!((kl_divergence(&p, &q).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(kl_divergence(&p, &d(&[("bb", 1.0)])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn smape_examples() {
        let p = d(&[("a", 1.0)]);
        assert_eq!(smape(&p, &d(&[("bb", 1.0)])).unwrap(), 2.0);
        let p = d(&[("a", 0.75), ("bb", 0.25)]);
        let q = d(&[("a", 0.25), ("bb", 0.75)]);
        assert!((smape(&p, &q).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let p = d(&[("a", 0.9)]);
        assert!(matches!(tv_distance(&p, &p), Err(Error::NotNormalized(_))));
        assert!(matches!(kl_divergence(&p, &p), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn infinite_kl_serializes_as_null() {
        let r = Report {
            param: "p=1/2".into(),
            mean: 0.5,
            stddev: 0.5,
            tv: 0.0,
            kl: f64::INFINITY,
            smape: 0.0,
            bit_mean: 1.0,
            bit_stddev: 0.0,
            n: 1,
            seed: 7,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(v["kl"].is_null());
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys.len(), 10);
    }

    fn moments(d: &FiniteDist) -> (f64, f64) {
        let m: f64 = d.iter().map(|(v, w)| v.to_f64().unwrap() * w).sum();
        let var: f64 = d.iter().map(|(v, w)| (v.to_f64().unwrap() - m).powi(2) * w).sum();
        (m, var.sqrt())
    }

    #[test]
    fn analytic_references_match_oracle_values() {
        let g = analytic::discrete_gaussian(0, 1.0).unwrap();
        assert!((g[&Value::int(0)] - 0.398_942_278_266_861_6).abs() < 1e-12);
        assert!((moments(&g).1 - 0.999_999_89).abs() < 1e-7);
        let l = analytic::discrete_laplace(0.5).unwrap();
        assert!((l[&Value::int(0)] - 0.761_594_155_955_765).abs() < 1e-12);
        assert!((moments(&l).1 - 0.601_689_98).abs() < 1e-7);
        for (p, mu, sd, h2) in [
            (0.5, 2.63591, 1.0876, 0.602_870_856_766_446_4),
            (2.0 / 3.0, 3.23223, 1.9116, 0.468_219_826_665_39),
            (0.2, 2.18671, 0.4437, 0.827_594_974_256_838_3),
        ] {
            let d = analytic::geometric_primes(p).unwrap();
            let (m, s) = moments(&d);
            assert!((m - mu).abs() < 1e-4 && (s - sd).abs() < 1e-3, "p={p}: {m} {s}");
            assert!((d[&Value::int(2)] - h2).abs() < 1e-12);
        }
    }

    #[test]
    fn population_stddev() {
        assert_eq!(stddev(&[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(mean(&[]), Err(Error::EmptySamples));
    }
}
