//! AGMS sketches, multi-join size estimation and the sketch-based
//! sensitivity bound.
//!
//! Each join predicate owns a family of four-wise independent ±1 variables
//! per estimator. A relation's counter sums, over its rows, the product of
//! the variables of every predicate it takes part in; the product of all
//! relations' counters estimates the join size without bias.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::querymodel::JoinQuery;
use crate::relstore::{Database, Relation, Value};
use crate::seeds;
use crate::smoothbounds::{
    for_each_composition, smooth_max, DistancePartition, Method, SensitivityReport, SketchBudget, SmoothingParams,
};

const MERSENNE_61: u64 = (1 << 61) - 1;

fn mod_p(x: u128) -> u64 {
    let lo = (x & MERSENNE_61 as u128) as u64;
    let hi = (x >> 61) as u64;
    let mut r = lo + (hi & MERSENNE_61) + (hi >> 61);
    while r >= MERSENNE_61 {
        r -= MERSENNE_61;
    }
    r
}

/// Domain key of a value: integers map to themselves, strings through FNV-1a.
pub fn value_key(v: &Value) -> u64 {
    match v {
        Value::Int(i) => *i as u64,
        Value::Str(s) => {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for b in s.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
            h
        }
    }
}

/// A ±1 family: a random cubic polynomial over GF(2^61 − 1), read through its
/// low bit. Cubic polynomials with random coefficients are four-wise
/// independent over the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct XiFamily {
    coeffs: [u64; 4],
}

impl XiFamily {
    /// Family for estimator `(t, s)` of predicate `family_id` under `master_seed`.
    pub fn new(master_seed: u64, t: usize, s: usize, family_id: usize) -> Self {
        let mut coeffs = [0u64; 4];
        for (j, c) in coeffs.iter_mut().enumerate() {
            *c = seeds::derive(master_seed, &[t as u64, s as u64, family_id as u64, j as u64]) % MERSENNE_61;
        }
        XiFamily { coeffs }
    }

    pub fn xi_key(&self, key: u64) -> i64 {
        let x = mod_p(key as u128);
        let mut h = self.coeffs[3];
        for &c in self.coeffs[..3].iter().rev() {
            h = mod_p(h as u128 * x as u128 + c as u128);
        }
        1 - 2 * (h & 1) as i64
    }

    pub fn xi(&self, v: &Value) -> i64 {
        self.xi_key(value_key(v))
    }
}

/// `±1` for value `v` under `family`.
pub fn xi_value(family: &XiFamily, v: &Value) -> i64 {
    family.xi(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceVariant {
    /// `|counter| + k_j`, monotone in `k_j`.
    Conservative,
    /// `counter + k_j` as written for the distance-k sketch.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionSearch {
    /// Every split of `k` over the private relations.
    Exhaustive,
    /// Gives every private relation the whole `k` at once; never smaller than
    /// the exhaustive maximum under the conservative variant, cheaper, looser.
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchParams {
    pub s1: usize,
    pub s2: usize,
    pub tau: f64,
    pub eta: f64,
    pub variant: DistanceVariant,
    pub partition_search: PartitionSearch,
}

impl Default for SketchParams {
    fn default() -> Self {
        SketchParams {
            s1: 1000,
            s2: 1,
            tau: 0.05,
            eta: 0.05,
            variant: DistanceVariant::Conservative,
            partition_search: PartitionSearch::Exhaustive,
        }
    }
}

impl SketchParams {
    pub fn validate(&self) -> Result<()> {
        if self.s1 == 0 {
            return Err(Error::param("s1 must be at least 1"));
        }
        if self.s2 == 0 || self.s2.is_multiple_of(2) {
            return Err(Error::param(format!("s2 must be odd, got {}", self.s2)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::param(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::param(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        Ok(())
    }
}

/// Counters of one relation, `s2 × s1`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgmsSketch {
    pub relation: String,
    pub fingerprint: String,
    pub master_seed: u64,
    pub s1: usize,
    pub s2: usize,
    /// `(predicate id, column)` pairs whose families multiply into each row.
    pub families: Vec<(usize, usize)>,
    pub counters: Vec<i64>,
}

impl AgmsSketch {
    pub fn counter(&self, t: usize, s: usize) -> i64 {
        self.counters[t * self.s1 + s]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    /// Loads a sketch, refusing one built for a different query.
    pub fn load(path: impl AsRef<Path>, q: &JoinQuery) -> Result<Self> {
        let sk: AgmsSketch = serde_json::from_slice(&std::fs::read(path)?)?;
        if sk.fingerprint != q.fingerprint() {
            return Err(Error::Sketch(format!(
                "sketch for {} was built for query {}, not {}",
                sk.relation,
                sk.fingerprint,
                q.fingerprint()
            )));
        }
        Ok(sk)
    }
}

/// Sketches one relation of the query.
pub fn build_sketch(rel: &Relation, q: &JoinQuery, params: &SketchParams, master_seed: u64) -> Result<AgmsSketch> {
    params.validate()?;
    let i = q
        .index_of(rel.name())
        .ok_or_else(|| Error::query(format!("relation {} is not part of the query", rel.name())))?;
    let families: Vec<(usize, usize)> = q
        .incident(i)
        .iter()
        .map(|&k| (k, q.predicates()[k].side(i).expect("incident").col))
        .collect();
    // distinct values per family column, and row combinations over them
    let mut dicts: Vec<HashMap<&Value, u32>> = vec![HashMap::new(); families.len()];
    let mut values: Vec<Vec<&Value>> = vec![Vec::new(); families.len()];
    let mut combos: HashMap<Vec<u32>, i64> = HashMap::new();
    for row in rel.rows() {
        let key: Vec<u32> = families
            .iter()
            .enumerate()
            .map(|(f, &(_, col))| {
                let v = &row[col];
                *dicts[f].entry(v).or_insert_with(|| {
                    values[f].push(v);
                    (values[f].len() - 1) as u32
                })
            })
            .collect();
        *combos.entry(key).or_default() += 1;
    }
    let mut combos: Vec<(Vec<u32>, i64)> = combos.into_iter().collect();
    combos.sort();
    let keys: Vec<Vec<u64>> = values
        .iter()
        .map(|vs| vs.iter().map(|v| value_key(v)).collect())
        .collect();
    let counters: Vec<i64> = (0..params.s2 * params.s1)
        .into_par_iter()
        .map(|e| {
            let (t, s) = (e / params.s1, e % params.s1);
            let tables: Vec<Vec<i64>> = families
                .iter()
                .zip(&keys)
                .map(|(&(k, _), ks)| {
                    let fam = XiFamily::new(master_seed, t, s, k);
                    ks.iter().map(|&x| fam.xi_key(x)).collect()
                })
                .collect();
            combos
                .iter()
                .map(|(key, n)| {
                    n * key
                        .iter()
                        .zip(&tables)
                        .map(|(&v, tab)| tab[v as usize])
                        .product::<i64>()
                })
                .sum()
        })
        .collect();
    Ok(AgmsSketch {
        relation: rel.name().to_string(),
        fingerprint: q.fingerprint().to_string(),
        master_seed,
        s1: params.s1,
        s2: params.s2,
        families,
        counters,
    })
}

/// One sketch per query relation, in query order.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchSet {
    pub params: SketchParams,
    pub sketches: Vec<AgmsSketch>,
    moments: Vec<PivotMoments>,
}

/// Per-pivot expansion of the conservative product: for every subset `A` of
/// the other relations, `coef[t][A]` is the mean over `s` of
/// `∏_{j ∉ A} |counter_j|`, so that the boosted row mean of
/// `∏ (|counter_j| + k_j)` is `Σ_A coef[t][A] ∏_{j ∈ A} k_j`.
#[derive(Clone, Debug, PartialEq)]
struct PivotMoments {
    others: Vec<usize>,
    coef: Vec<Vec<f64>>,
}

fn pivot_moments(sketches: &[AgmsSketch], pivot: usize) -> PivotMoments {
    let others: Vec<usize> = (0..sketches.len()).filter(|&j| j != pivot).collect();
    let (s1, s2) = (sketches[0].s1, sketches[0].s2);
    let masks = 1usize << others.len();
    let coef = (0..s2)
        .map(|t| {
            let mut row = vec![0.0; masks];
            for e in 0..s1 {
                let abs: Vec<f64> = others
                    .iter()
                    .map(|&j| sketches[j].counter(t, e).unsigned_abs() as f64)
                    .collect();
                for (mask, slot) in row.iter_mut().enumerate() {
                    *slot += abs
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| mask & (1 << b) == 0)
                        .map(|(_, a)| a)
                        .product::<f64>();
                }
            }
            row.iter_mut().for_each(|v| *v /= s1 as f64);
            row
        })
        .collect();
    PivotMoments { others, coef }
}

fn with_moments(params: SketchParams, sketches: Vec<AgmsSketch>) -> SketchSet {
    let moments = (0..sketches.len()).map(|i| pivot_moments(&sketches, i)).collect();
    SketchSet {
        params,
        sketches,
        moments,
    }
}

impl SketchSet {
    pub fn build(db: &Database, q: &JoinQuery, params: SketchParams, master_seed: u64) -> Result<Self> {
        let sketches = (0..q.n())
            .map(|i| build_sketch(q.relation(db, i)?, q, &params, master_seed))
            .collect::<Result<_>>()?;
        Ok(with_moments(params, sketches))
    }

    /// Reassembles a set from individually loaded sketches.
    pub fn from_sketches(q: &JoinQuery, params: SketchParams, mut sketches: Vec<AgmsSketch>) -> Result<Self> {
        let mut ordered = Vec::with_capacity(q.n());
        for i in 0..q.n() {
            let pos = sketches
                .iter()
                .position(|s| s.relation == q.relation_name(i))
                .ok_or_else(|| Error::Sketch(format!("no sketch for {}", q.relation_name(i))))?;
            ordered.push(sketches.swap_remove(pos));
        }
        check_compatible(&ordered.iter().collect::<Vec<_>>())?;
        if ordered.iter().any(|s| s.fingerprint != q.fingerprint()) {
            return Err(Error::Sketch("sketch built for a different query".into()));
        }
        let first = &ordered[0];
        if (first.s1, first.s2) != (params.s1, params.s2) {
            return Err(Error::Sketch(format!(
                "sketches are {}x{}, parameters ask for {}x{}",
                first.s2, first.s1, params.s2, params.s1
            )));
        }
        Ok(with_moments(params, ordered))
    }

    pub fn counters(&self) -> usize {
        self.sketches.iter().map(|s| s.counters.len()).sum()
    }
}

fn check_compatible(sketches: &[&AgmsSketch]) -> Result<()> {
    let Some(first) = sketches.first() else {
        return Err(Error::Sketch("no sketches given".into()));
    };
    for s in sketches {
        if s.master_seed != first.master_seed {
            return Err(Error::Sketch(format!(
                "sketches of {} and {} use different master seeds",
                first.relation, s.relation
            )));
        }
        if s.fingerprint != first.fingerprint {
            return Err(Error::Sketch(format!(
                "sketches of {} and {} belong to different queries",
                first.relation, s.relation
            )));
        }
        if (s.s1, s.s2) != (first.s1, first.s2) {
            return Err(Error::Sketch("sketch shapes differ".into()));
        }
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Boosted estimate: median over `s2` rows of the mean over `s1` of the
/// counter products.
fn boosted(s1: usize, s2: usize, atom: impl Fn(usize, usize) -> f64) -> f64 {
    median(
        (0..s2)
            .map(|t| (0..s1).map(|s| atom(t, s)).sum::<f64>() / s1 as f64)
            .collect(),
    )
}

/// Join-size estimate from one sketch per relation.
pub fn estimate_join(sketches: &[&AgmsSketch]) -> Result<f64> {
    check_compatible(sketches)?;
    let (s1, s2) = (sketches[0].s1, sketches[0].s2);
    Ok(boosted(s1, s2, |t, s| {
        sketches.iter().map(|sk| sk.counter(t, s) as f64).product()
    }))
}

/// Averaging width implied by the sizing bound for a relative error `tau`
/// with probability `1 − eta`, given a join-size lower bound `l`, self-join
/// bounds and join-attribute domain sizes. Advisory only.
pub fn sketch_size_advisor(l: f64, self_join_bounds: &[f64], tau: f64, eta: f64, domains: &[u64]) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::param(format!("join-size lower bound must be positive, got {l}")));
    }
    if !(tau > 0.0 && tau < 1.0 && eta > 0.0 && eta < 1.0) {
        return Err(Error::param("tau and eta must lie in (0, 1)"));
    }
    let n = domains.len() as i32;
    let u: f64 = self_join_bounds.iter().product();
    let logs: f64 = domains.iter().map(|&d| (d.max(2) as f64).log2()).sum();
    Ok((4f64.powi(n) * u * (1.0 / eta).ln() / (l * l * tau * tau) * logs).ceil())
}

fn distance_factor(c: i64, k: usize, variant: DistanceVariant) -> f64 {
    match variant {
        DistanceVariant::Conservative => c.unsigned_abs() as f64 + k as f64,
        DistanceVariant::Literal => c as f64 + k as f64,
    }
}

/// Sketch bound on the local sensitivity at distance `k` for pivot `i` and
/// split `s` of `k`: the boosted mean of `|∏_{j≠i} (counter_j + s_j)|`
/// divided by `1 − τ`.
pub fn sks_ls_at_k(set: &SketchSet, q: &JoinQuery, pivot: usize, s: &DistancePartition) -> Result<f64> {
    if !q.private().contains(pivot) {
        return Err(Error::param(format!("pivot {} is not private", q.relation_name(pivot))));
    }
    if s.s.len() != q.n() || s.s[pivot] != 0 || s.s.iter().enumerate().any(|(j, &v)| v > 0 && !q.private().contains(j))
    {
        return Err(Error::param(
            "partition must sit on private relations other than the pivot",
        ));
    }
    set.params.validate()?;
    Ok(match set.params.variant {
        DistanceVariant::Conservative => from_moments(set, pivot, s),
        DistanceVariant::Literal => direct(set, pivot, s, DistanceVariant::Literal),
    })
}

/// Evaluates the estimator counter by counter.
fn direct(set: &SketchSet, pivot: usize, s: &DistancePartition, variant: DistanceVariant) -> f64 {
    let p = &set.params;
    let est = boosted(p.s1, p.s2, |t, e| {
        (0..set.sketches.len())
            .filter(|&j| j != pivot)
            .map(|j| distance_factor(set.sketches[j].counter(t, e), s.s[j], variant))
            .product::<f64>()
            .abs()
    });
    est / (1.0 - p.tau)
}

/// Conservative estimator through the precomputed moments; cost is
/// independent of `s1`.
fn from_moments(set: &SketchSet, pivot: usize, s: &DistancePartition) -> f64 {
    let m = &set.moments[pivot];
    let rows = m
        .coef
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(mask, c)| {
                    let w: f64 = m
                        .others
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| mask & (1 << b) != 0)
                        .map(|(_, &j)| s.s[j] as f64)
                        .product();
                    c * w
                })
                .sum()
        })
        .collect();
    median(rows) / (1.0 - set.params.tau)
}

fn sks_envelope(set: &SketchSet, q: &JoinQuery, k: usize) -> f64 {
    let mut best = 0.0f64;
    for i in q.private().iter() {
        let slots: Vec<usize> = q.private().without(i).iter().collect();
        match set.params.partition_search {
            PartitionSearch::Relaxed => {
                let mut s = DistancePartition::zeros(q.n());
                for &j in &slots {
                    s.s[j] = k;
                }
                best = best.max(from_moments(set, i, &s));
            }
            PartitionSearch::Exhaustive if slots.is_empty() => {
                best = best.max(sks_ls_at_k(set, q, i, &DistancePartition::zeros(q.n())).expect("valid partition"));
            }
            PartitionSearch::Exhaustive => for_each_composition(&slots, k, q.n(), &mut |s| {
                best = best.max(sks_ls_at_k(set, q, i, s).expect("valid partition"));
            }),
        }
    }
    best
}

/// When every private slot receives the whole distance (the relaxed search,
/// or at most one slot per pivot) the conservative row means are univariate
/// polynomials in `k`. Returns their coefficients per pivot and row, lowest
/// degree first.
fn forced_split_polys(set: &SketchSet, q: &JoinQuery) -> Option<Vec<Vec<Vec<f64>>>> {
    if set.params.variant != DistanceVariant::Conservative {
        return None;
    }
    let relaxed = set.params.partition_search == PartitionSearch::Relaxed;
    let mut polys = Vec::new();
    for i in q.private().iter() {
        let m = &set.moments[i];
        let private: Vec<bool> = m.others.iter().map(|&j| q.private().contains(j)).collect();
        if !relaxed && private.iter().filter(|&&p| p).count() > 1 {
            return None;
        }
        let rows = m
            .coef
            .iter()
            .map(|row| {
                let mut poly = vec![0.0; m.others.len() + 1];
                for (mask, c) in row.iter().enumerate() {
                    // masks touching a public relation carry a zero weight
                    if (0..m.others.len()).all(|b| mask & (1 << b) == 0 || private[b]) {
                        poly[mask.count_ones() as usize] += c;
                    }
                }
                poly
            })
            .collect();
        polys.push(rows);
    }
    Some(polys)
}

fn eval_polys(polys: &[Vec<Vec<f64>>], k: f64) -> f64 {
    let horner = |p: &Vec<f64>| p.iter().rev().fold(0.0, |acc, c| acc * k + c);
    polys
        .iter()
        .map(|rows| match rows.as_slice() {
            [one] => horner(one),
            _ => median(rows.iter().map(horner).collect()),
        })
        .fold(0.0, f64::max)
}

/// Sketch-based smooth sensitivity: the smoothed maximum over pivots and
/// splits of [`sks_ls_at_k`].
pub fn sketching_sensitivity(set: &SketchSet, q: &JoinQuery, params: SmoothingParams) -> Result<SensitivityReport> {
    set.params.validate()?;
    check_compatible(&set.sketches.iter().collect::<Vec<_>>())?;
    if set.sketches.len() != q.n() || set.sketches.iter().any(|s| s.fingerprint != q.fingerprint()) {
        return Err(Error::Sketch("sketch set does not match the query".into()));
    }
    let degree = q.private().len().saturating_sub(1);
    let s = match forced_split_polys(set, q) {
        Some(polys) => smooth_max(
            |k| eval_polys(&polys, k as f64) / (1.0 - set.params.tau),
            params.beta,
            degree,
        )?,
        None => smooth_max(|k| sks_envelope(set, q, k), params.beta, degree)?,
    };
    let mut report = SensitivityReport::from_smooth(Method::SketchSe, params, s);
    report.diagnostics.sketch = Some(SketchBudget {
        s1: set.params.s1,
        s2: set.params.s2,
        counters: set.counters(),
    });
    Ok(report)
}
