//! Smooth upper bounds on local sensitivity: the shared smoothing scan,
//! elastic sensitivity from per-relation maximum frequencies and residual
//! sensitivity from maximum-boundary tables.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{MaxBoundaryTable, TableRow};
use crate::querymodel::{JoinQuery, RelSet};
use crate::relstore::{Database, FrequencyStats};

/// Privacy parameters and the smoothing rate derived from them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothingParams {
    pub epsilon: f64,
    /// Set for Laplace-style release, `β = ε / (2 ln(2/δ))`.
    pub delta: Option<f64>,
    /// Set for General Cauchy release, `β = ε / (2(γ + 1))`.
    pub gamma: Option<f64>,
    pub beta: f64,
}

impl SmoothingParams {
    pub fn laplace(epsilon: f64, delta: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(SmoothingParams {
            epsilon,
            delta: Some(delta),
            gamma: None,
            beta: epsilon / (2.0 * (2.0 / delta).ln()),
        })
    }

    pub fn general_cauchy(epsilon: f64, gamma: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(Error::param(format!("gamma must exceed 1, got {gamma}")));
        }
        Ok(SmoothingParams {
            epsilon,
            delta: None,
            gamma: Some(gamma),
            beta: epsilon / (2.0 * (gamma + 1.0)),
        })
    }

    /// Explicit β, for tests and sweeps that bypass a mechanism.
    pub fn with_beta(beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::param(format!("beta must be positive, got {beta}")));
        }
        Ok(SmoothingParams {
            epsilon: f64::NAN,
            delta: None,
            gamma: None,
            beta,
        })
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub k: usize,
    pub bound: f64,
    pub smoothed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothMax {
    pub value: f64,
    pub k_star: usize,
    pub curve: Vec<CurvePoint>,
}

/// Largest `k` the smoothing scan visits for a polynomial envelope of degree
/// `degree`: past `degree / β` every term `e^{-βk} k^j` is decreasing.
pub fn scan_limit(beta: f64, degree: usize) -> usize {
    (degree as f64 / beta).ceil() as usize + 1
}

/// `max_k e^{-βk} f(k)` over `k ∈ [0, scan_limit(β, degree)]`.
pub fn smooth_max(f: impl Fn(usize) -> f64 + Sync, beta: f64, degree: usize) -> Result<SmoothMax> {
    if !(beta > 0.0) {
        return Err(Error::param(format!("beta must be positive, got {beta}")));
    }
    smooth_max_to(f, beta, scan_limit(beta, degree))
}

pub(crate) fn smooth_max_to(f: impl Fn(usize) -> f64 + Sync, beta: f64, k_max: usize) -> Result<SmoothMax> {
    let point = |k: usize| {
        let bound = f(k);
        CurvePoint {
            k,
            bound,
            smoothed: (-beta * k as f64).exp() * bound,
        }
    };
    // short scans cost less than handing work to the pool
    let curve: Vec<CurvePoint> = if k_max < 4096 {
        (0..=k_max).map(point).collect()
    } else {
        (0..=k_max).into_par_iter().map(point).collect()
    };
    let best = curve
        .iter()
        .fold(&curve[0], |b, p| if p.smoothed > b.smoothed { p } else { b });
    Ok(SmoothMax {
        value: best.smoothed,
        k_star: best.k,
        curve,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "ES")]
    Es,
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "SamplingSE")]
    SamplingSe,
    #[serde(rename = "SketchSE")]
    SketchSe,
    #[serde(rename = "LocalOracle")]
    LocalOracle,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "es" | "elastic" => Ok(Method::Es),
            "rs" | "residual" => Ok(Method::Rs),
            "samplingse" | "sampling" => Ok(Method::SamplingSe),
            "sketchse" | "sketch" | "sketching" => Ok(Method::SketchSe),
            "localoracle" | "ls" | "oracle" => Ok(Method::LocalOracle),
            _ => Err(Error::param(format!("unknown method `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Es => "ES",
            Method::Rs => "RS",
            Method::SamplingSe => "SamplingSE",
            Method::SketchSe => "SketchSE",
            Method::LocalOracle => "LocalOracle",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SketchBudget {
    pub s1: usize,
    pub s2: usize,
    pub counters: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub curve: Vec<CurvePoint>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<TableRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gs_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walks: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sketch: Option<SketchBudget>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SensitivityReport {
    pub method: Method,
    pub value: f64,
    pub k_star: usize,
    pub params: SmoothingParams,
    pub diagnostics: Diagnostics,
}

impl SensitivityReport {
    pub(crate) fn from_smooth(method: Method, params: SmoothingParams, s: SmoothMax) -> Self {
        SensitivityReport {
            method,
            value: s.value,
            k_star: s.k_star,
            params,
            diagnostics: Diagnostics {
                curve: s.curve,
                ..Diagnostics::default()
            },
        }
    }
}

/// Per-pivot attribute sets for elastic sensitivity: for pivot `i`, every
/// other relation `j` contributes the columns it shares with its parent in a
/// breadth-first spanning tree rooted at `i`. Cyclic queries drop the
/// non-tree predicates, which only loosens the bound.
pub fn elastic_attribute_sets(q: &JoinQuery, pivot: usize) -> Result<Vec<(usize, Vec<usize>)>> {
    let plan = q.walk_plan(q.all(), pivot)?;
    Ok(plan
        .steps
        .iter()
        .map(|s| {
            let parent = plan.order[s.parent];
            let mut cols: Vec<usize> = q
                .predicates()
                .iter()
                .filter_map(|p| match (p.side(s.relation), p.other(s.relation)) {
                    (Some(me), Some(o)) if o.rel == parent => Some(me.col),
                    _ => None,
                })
                .collect();
            cols.sort();
            cols.dedup();
            (s.relation, cols)
        })
        .collect())
}

/// Records every frequency statistic elastic sensitivity needs.
pub fn elastic_stats(db: &Database, q: &JoinQuery) -> Result<FrequencyStats> {
    let mut stats = FrequencyStats::default();
    for i in q.private().iter() {
        for (j, cols) in elastic_attribute_sets(q, i)? {
            stats.record(q.relation(db, j)?, &cols);
        }
    }
    Ok(stats)
}

/// Per-pivot lists of `(is_private, mf_j)` factors.
fn elastic_factors(q: &JoinQuery, stats: &FrequencyStats) -> Result<Vec<Vec<(bool, f64)>>> {
    q.private()
        .iter()
        .map(|i| {
            elastic_attribute_sets(q, i)?
                .into_iter()
                .map(|(j, cols)| {
                    let attrs: Vec<String> = cols.iter().map(|&c| q.attributes(j)[c].clone()).collect();
                    let stat = stats.get(q.relation_name(j), &attrs).ok_or_else(|| {
                        Error::MissingStatistic(format!("max frequency of {}({})", q.relation_name(j), attrs.join(",")))
                    })?;
                    Ok((q.private().contains(j), stat.max_frequency as f64))
                })
                .collect()
        })
        .collect()
}

fn elastic_eval(factors: &[Vec<(bool, f64)>], k: usize) -> f64 {
    factors
        .iter()
        .map(|fs| {
            fs.iter()
                .map(|&(private, mf)| if private { mf + k as f64 } else { mf })
                .product::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Elastic upper bound on local sensitivity at distance `k`.
pub fn elastic_ls_at_k(q: &JoinQuery, stats: &FrequencyStats, k: usize) -> Result<f64> {
    Ok(elastic_eval(&elastic_factors(q, stats)?, k))
}

/// Elastic sensitivity: the smoothed elastic bound.
pub fn elastic_sensitivity(
    q: &JoinQuery,
    stats: &FrequencyStats,
    params: SmoothingParams,
) -> Result<SensitivityReport> {
    let factors = elastic_factors(q, stats)?;
    let degree = q.private().len().saturating_sub(1);
    let s = smooth_max(|k| elastic_eval(&factors, k), params.beta, degree)?;
    Ok(SensitivityReport::from_smooth(Method::Es, params, s))
}

/// Per-relation distance split `s_1..s_n`; public relations stay at 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistancePartition {
    pub s: Vec<usize>,
}

impl DistancePartition {
    pub fn zeros(n: usize) -> Self {
        DistancePartition { s: vec![0; n] }
    }

    pub fn total(&self) -> usize {
        self.s.iter().sum()
    }

    fn support(&self) -> RelSet {
        RelSet::of(
            &self
                .s
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0)
                .map(|(i, _)| i)
                .collect::<Vec<_>>(),
        )
    }
}

/// `Σ_{E' ⊆ E} T_{E − E'} · ∏_{i ∈ E'} s_i`.
pub fn t_hat(set: RelSet, s: &DistancePartition, table: &MaxBoundaryTable) -> Result<f64> {
    let mut total = 0.0;
    for sub in set.intersect(s.support()).subsets() {
        let weight: f64 = sub.iter().map(|i| s.s[i] as f64).product();
        total += table.value(set.minus(sub))? * weight;
    }
    Ok(total)
}

/// Calls `visit` with every way of writing `k` as an ordered sum over `slots`.
pub(crate) fn for_each_composition(slots: &[usize], k: usize, n: usize, visit: &mut impl FnMut(&DistancePartition)) {
    fn rec(slots: &[usize], left: usize, part: &mut DistancePartition, visit: &mut impl FnMut(&DistancePartition)) {
        match slots {
            [] => {
                if left == 0 {
                    visit(part)
                }
            }
            [last] => {
                part.s[*last] = left;
                visit(part);
                part.s[*last] = 0;
            }
            [first, rest @ ..] => {
                for v in 0..=left {
                    part.s[*first] = v;
                    rec(rest, left - v, part, visit);
                }
                part.s[*first] = 0;
            }
        }
    }
    let mut part = DistancePartition::zeros(n);
    rec(slots, k, &mut part, visit);
}

/// Residual upper bound on local sensitivity at distance `k`: the largest
/// `T̂_{[n]−{i}, s}` over private `i` and splits `s` of `k` over the private
/// relations other than `i`.
pub fn residual_ls_at_k(q: &JoinQuery, table: &MaxBoundaryTable, k: usize) -> Result<f64> {
    let mut best = 0.0f64;
    for i in q.private().iter() {
        let e = q.all().without(i);
        let slots: Vec<usize> = q.private().without(i).iter().collect();
        if slots.is_empty() {
            best = best.max(table.value(e)?);
            continue;
        }
        let mut err = None;
        for_each_composition(&slots, k, q.n(), &mut |s| match t_hat(e, s, table) {
            Ok(v) => best = best.max(v),
            Err(e) => err = Some(e),
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(best)
}

/// Residual sensitivity: the smoothed residual bound, optionally capped.
pub fn residual_sensitivity(
    q: &JoinQuery,
    table: &MaxBoundaryTable,
    params: SmoothingParams,
    gs_cap: Option<f64>,
) -> Result<SensitivityReport> {
    smoothed_residual(q, table, params, gs_cap, Method::Rs)
}

pub(crate) fn smoothed_residual(
    q: &JoinQuery,
    table: &MaxBoundaryTable,
    params: SmoothingParams,
    gs_cap: Option<f64>,
    method: Method,
) -> Result<SensitivityReport> {
    for (_, e) in q.residual_pairs() {
        table.value(e)?;
    }
    let cap = gs_cap.unwrap_or(f64::INFINITY);
    let degree = q.private().len().saturating_sub(1);
    let s = smooth_max(
        |k| residual_ls_at_k(q, table, k).expect("table checked").min(cap),
        params.beta,
        degree,
    )?;
    let mut report = SensitivityReport::from_smooth(method, params, s);
    report.diagnostics.table = table.rows(q);
    report.diagnostics.gs_cap = gs_cap;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{self, exact_table, InsertionDomain, Provenance, DEFAULT_ORACLE_BUDGET};
    use crate::querymodel::QuerySpec;
    use crate::relstore::{Relation, Value};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain_db(rows: [&[(i64, i64)]; 3]) -> Database {
        let mk = |name: &str, attrs: &[&str], r: &[(i64, i64)]| {
            Relation::from_rows(name, attrs, r.iter().map(|&(a, b)| [Value::Int(a), Value::Int(b)])).unwrap()
        };
        Database::new()
            .with(mk("R1", &["A", "B"], rows[0]))
            .with(mk("R2", &["B", "C"], rows[1]))
            .with(mk("R3", &["C", "D"], rows[2]))
    }

    fn chain_query(db: &Database) -> JoinQuery {
        QuerySpec::new(&["R1", "R2", "R3"])
            .join("R1.B", "R2.B")
            .join("R2.C", "R3.C")
            .all_private()
            .resolve(db)
            .unwrap()
    }

    fn random_chain(rng: &mut ChaCha8Rng, rows: usize, dom: i64) -> Database {
        let mut r = || -> Vec<(i64, i64)> {
            (0..rows)
                .map(|_| (rng.random_range(0..dom), rng.random_range(0..dom)))
                .collect()
        };
        let (a, b, c) = (r(), r(), r());
        chain_db([&a, &b, &c])
    }

    #[test]
    fn params_derive_beta() {
        let p = SmoothingParams::laplace(1.0, 1e-6).unwrap();
        assert!((p.beta - 1.0 / (2.0 * 2e6f64.ln())).abs() < 1e-15);
        let g = SmoothingParams::general_cauchy(1.0, 4.0).unwrap();
        assert!((g.beta - 0.1).abs() < 1e-15);
        assert!(SmoothingParams::laplace(0.0, 0.1).is_err());
        assert!(SmoothingParams::laplace(1.0, 1.0).is_err());
        assert!(SmoothingParams::general_cauchy(1.0, 1.0).is_err());
    }

    #[test]
    fn smooth_max_examples() {
        let c = smooth_max(|_| 7.0, 0.3, 0).unwrap();
        assert_eq!((c.value, c.k_star), (7.0, 0));
        // f(k) = k, β = 1: scan {0, e^-1, 2e^-2}
        let lin = smooth_max(|k| k as f64, 1.0, 1).unwrap();
        let scan = [0.0, (-1.0f64).exp(), 2.0 * (-2.0f64).exp()];
        assert_eq!(lin.curve.len(), 3);
        assert_eq!(lin.value, scan.iter().cloned().fold(0.0, f64::max));
        assert_eq!(lin.k_star, 1);
        let steep = smooth_max(|k| (1 + k * k) as f64, 50.0, 2).unwrap();
        assert_eq!(steep.k_star, 0);
        assert!(smooth_max(|_| 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn smooth_max_stable_when_doubling_scan() {
        for (beta, deg) in [(0.05, 2usize), (0.3, 3), (1.0, 1)] {
            let f = |k: usize| (1.0 + k as f64).powi(deg as i32) * 3.0 + k as f64;
            let a = smooth_max(f, beta, deg).unwrap();
            let b = smooth_max_to(f, beta, 2 * scan_limit(beta, deg)).unwrap();
            assert_eq!(a.value, b.value);
            assert_eq!(a.k_star, b.k_star);
        }
    }

    #[test]
    fn elastic_pivot_products_match_fig1() {
        // mf(R1.B)=2, mf(R2.B)=3, mf(R2.C)=1, mf(R3.C)=2
        let db = chain_db([
            &[(1, 10), (2, 10), (3, 11)],
            &[(10, 20), (10, 21), (10, 22)],
            &[(20, 1), (20, 2), (21, 3)],
        ]);
        let q = chain_query(&db);
        let stats = elastic_stats(&db, &q).unwrap();
        let pairs = [2.0 * 1.0, 2.0 * 2.0, 3.0 * 2.0];
        assert_eq!(
            elastic_ls_at_k(&q, &stats, 0).unwrap(),
            pairs.iter().cloned().fold(0.0, f64::max)
        );
        let sets = elastic_attribute_sets(&q, 0).unwrap();
        assert_eq!(sets, vec![(1, vec![0]), (2, vec![0])]);
        let mut prev = 0.0;
        for k in 0..5 {
            let v = elastic_ls_at_k(&q, &stats, k).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn elastic_single_relation_and_missing_stat() {
        let db = Database::new().with(Relation::from_rows("R", &["x"], [[Value::Int(1)]]).unwrap());
        let q = QuerySpec::new(&["R"]).all_private().resolve(&db).unwrap();
        let stats = elastic_stats(&db, &q).unwrap();
        assert_eq!(elastic_ls_at_k(&q, &stats, 0).unwrap(), 1.0);
        let db = chain_db([&[(1, 1)], &[(1, 1)], &[(1, 1)]]);
        let q = chain_query(&db);
        assert!(matches!(
            elastic_ls_at_k(&q, &FrequencyStats::default(), 0),
            Err(Error::MissingStatistic(_))
        ));
    }

    #[test]
    fn elastic_all_ones_envelope() {
        let db = chain_db([&[(1, 1)], &[(1, 1)], &[(1, 1)]]);
        let q = chain_query(&db);
        let stats = elastic_stats(&db, &q).unwrap();
        let r = elastic_sensitivity(&q, &stats, SmoothingParams::with_beta(1.0).unwrap()).unwrap();
        assert_eq!(r.k_star, 1);
        assert!((r.value - 4.0 * (-1.0f64).exp()).abs() < 1e-12);
        let huge = elastic_sensitivity(&q, &stats, SmoothingParams::with_beta(1e3).unwrap()).unwrap();
        assert_eq!(huge.value, elastic_ls_at_k(&q, &stats, 0).unwrap());
    }

    fn toy_table() -> MaxBoundaryTable {
        let mut t = MaxBoundaryTable::new();
        t.insert(RelSet::of(&[0, 1]), 5.0, Provenance::Exact);
        t.insert(RelSet::single(0), 2.0, Provenance::Exact);
        t.insert(RelSet::single(1), 3.0, Provenance::Exact);
        t
    }

    #[test]
    fn t_hat_substitution() {
        let t = toy_table();
        let e = RelSet::of(&[0, 1]);
        assert_eq!(t_hat(e, &DistancePartition { s: vec![1, 2, 0] }, &t).unwrap(), 14.0);
        assert_eq!(t_hat(e, &DistancePartition::zeros(3), &t).unwrap(), 5.0);
        // s_1 only: T_12 + s_1 T_2
        assert_eq!(
            t_hat(e, &DistancePartition { s: vec![4, 0, 0] }, &t).unwrap(),
            5.0 + 4.0 * 3.0
        );
        let missing = MaxBoundaryTable::new();
        assert!(t_hat(e, &DistancePartition::zeros(3), &missing).is_err());
    }

    proptest! {
        #[test]
        fn t_hat_monotone_in_each_slot(s0 in 0usize..6, s1 in 0usize..6, bump in 0usize..2) {
            let t = toy_table();
            let e = RelSet::of(&[0, 1]);
            let base = DistancePartition { s: vec![s0, s1, 0] };
            let mut up = base.clone();
            up.s[bump] += 1;
            prop_assert!(t_hat(e, &up, &t).unwrap() >= t_hat(e, &base, &t).unwrap());
            // multilinear: value is affine in s0 with the other slot fixed
            let at = |v: usize| t_hat(e, &DistancePartition { s: vec![v, s1, 0] }, &t).unwrap();
            prop_assert!((at(s0 + 2) - 2.0 * at(s0 + 1) + at(s0)).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_k0_and_unit_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let db = random_chain(&mut rng, 8, 3);
        let q = chain_query(&db);
        let t = exact_table(&db, &q).unwrap();
        let k0 = residual_ls_at_k(&q, &t, 0).unwrap();
        let pivots = (0..3).map(|i| t.value(q.all().without(i)).unwrap()).fold(0.0, f64::max);
        assert_eq!(k0, pivots);
        // S^1: one unit on a private relation other than the pivot
        let mut brute = 0.0f64;
        for i in 0..3 {
            let e = q.all().without(i);
            for j in e.iter() {
                let mut s = DistancePartition::zeros(3);
                s.s[j] = 1;
                brute = brute.max(t_hat(e, &s, &t).unwrap());
            }
        }
        assert_eq!(residual_ls_at_k(&q, &t, 1).unwrap(), brute);
        let mut prev = 0.0;
        for k in 0..6 {
            let v = residual_ls_at_k(&q, &t, k).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn residual_cap_and_large_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let db = random_chain(&mut rng, 10, 3);
        let q = chain_query(&db);
        let t = exact_table(&db, &q).unwrap();
        let p = SmoothingParams::with_beta(0.2).unwrap();
        let capped = residual_sensitivity(&q, &t, p, Some(0.5)).unwrap();
        assert_eq!((capped.value, capped.k_star), (0.5, 0));
        let huge = residual_sensitivity(&q, &t, SmoothingParams::with_beta(1e3).unwrap(), None).unwrap();
        assert_eq!(huge.value, residual_ls_at_k(&q, &t, 0).unwrap());
        assert_eq!(huge.diagnostics.table.len(), t.len());
    }

    #[test]
    fn es_ge_rs_ge_oracle_on_random_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..12 {
            let rows = rng.random_range(1..=6);
            let db = random_chain(&mut rng, rows, 3);
            let q = chain_query(&db);
            let p = SmoothingParams::laplace(1.0, 1e-3).unwrap();
            let es = elastic_sensitivity(&q, &elastic_stats(&db, &q).unwrap(), p)
                .unwrap()
                .value;
            let rs = residual_sensitivity(&q, &exact_table(&db, &q).unwrap(), p, None)
                .unwrap()
                .value;
            let dom = InsertionDomain::active(&db, &q).unwrap();
            let ls = exact::local_sensitivity_oracle(&db, &q, &dom, DEFAULT_ORACLE_BUDGET).unwrap() as f64;
            assert!(es >= rs - 1e-9, "es {es} rs {rs}");
            assert!(rs >= ls - 1e-9, "rs {rs} ls {ls}");
        }
    }

    /// Every neighbour of `db` by one deletion or one candidate insertion
    /// on a private relation.
    fn neighbours(db: &Database, q: &JoinQuery) -> Vec<Database> {
        let dom = InsertionDomain::active(db, q).unwrap();
        let mut out = Vec::new();
        for i in q.private().iter() {
            let rel = q.relation(db, i).unwrap();
            let attrs: Vec<&str> = rel.attributes().iter().map(String::as_str).collect();
            let rows: Vec<Vec<Value>> = rel.rows().map(<[Value]>::to_vec).collect();
            for r in 0..rows.len() {
                let mut v = rows.clone();
                v.remove(r);
                let mut d = db.clone();
                d.insert(Relation::from_rows(rel.name(), &attrs, v).unwrap());
                out.push(d);
            }
            for t in dom.tuples(i) {
                let mut v = rows.clone();
                v.push(t);
                let mut d = db.clone();
                d.insert(Relation::from_rows(rel.name(), &attrs, v).unwrap());
                out.push(d);
            }
        }
        out
    }

    #[test]
    fn es_and_rs_are_beta_smooth() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p = SmoothingParams::with_beta(0.4).unwrap();
        for _ in 0..4 {
            let db = random_chain(&mut rng, 4, 2);
            let q = chain_query(&db);
            let es = |d: &Database| {
                elastic_sensitivity(&q, &elastic_stats(d, &q).unwrap(), p)
                    .unwrap()
                    .value
            };
            let rs = |d: &Database| {
                residual_sensitivity(&q, &exact_table(d, &q).unwrap(), p, None)
                    .unwrap()
                    .value
            };
            let (es0, rs0) = (es(&db), rs(&db));
            let bound = p.beta.exp() * (1.0 + 1e-12);
            for n in neighbours(&db, &q) {
                assert!(es0 <= bound * es(&n));
                assert!(rs0 <= bound * rs(&n));
            }
        }
    }

    #[test]
    fn public_relations_do_not_grow_with_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let db = random_chain(&mut rng, 10, 3);
        let q = chain_query(&db).with_private(RelSet::of(&[0, 2]));
        let stats = elastic_stats(&db, &q).unwrap();
        let t = exact_table(&db, &q).unwrap();
        // pivot R1: R2 public (fixed mf), R3 private (+k)
        let mf2 = db.get("R2").unwrap().max_frequency(&["B"]).unwrap() as f64;
        let mf3 = db.get("R3").unwrap().max_frequency(&["C"]).unwrap() as f64;
        let mf2c = db.get("R2").unwrap().max_frequency(&["C"]).unwrap() as f64;
        let mf1 = db.get("R1").unwrap().max_frequency(&["B"]).unwrap() as f64;
        let k = 3.0;
        assert_eq!(
            elastic_ls_at_k(&q, &stats, 3).unwrap(),
            (mf2 * (mf3 + k)).max(mf2c * (mf1 + k))
        );
        assert!(residual_ls_at_k(&q, &t, 3).unwrap() <= elastic_ls_at_k(&q, &stats, 3).unwrap());
    }
}
