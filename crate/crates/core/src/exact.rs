//! Exact join counts, exact maximum boundaries and brute-force local
//! sensitivity for small instances.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::querymodel::{Col, JoinQuery, RelSet};
use crate::relstore::{ColumnLookup, Database, Relation, Value};

/// Join result cardinality.
pub type Count = u128;

type Partial = HashMap<Vec<Option<Value>>, Count>;

/// Join counts of the relations in `set`, grouped by the `group` columns (in
/// the given order). Disconnected sets count the cross product of their
/// components. An empty set is the empty join with a single result.
pub fn grouped_counts(db: &Database, q: &JoinQuery, set: RelSet, group: &[Col]) -> Result<HashMap<Vec<Value>, Count>> {
    let rels = query_relations(db, q)?;
    grouped_counts_in(&rels, q, set, group)
}

/// `COUNT(*)` of the full join.
pub fn exact_join_count(db: &Database, q: &JoinQuery) -> Result<Count> {
    join_count(db, q, q.all())
}

/// `COUNT(*)` of the join restricted to `set`.
pub fn join_count(db: &Database, q: &JoinQuery, set: RelSet) -> Result<Count> {
    let rels = query_relations(db, q)?;
    Ok(count_in(&rels, q, set))
}

/// Maximum over boundary-value combinations of the join count of `set`
/// (`T_E`). Disconnected sets multiply their components; `T_∅ = 1`.
pub fn exact_max_boundary(db: &Database, q: &JoinQuery, set: RelSet) -> Result<Count> {
    let rels = query_relations(db, q)?;
    Ok(max_boundary_in(&rels, q, set))
}

pub(crate) fn query_relations<'a>(db: &'a Database, q: &JoinQuery) -> Result<Vec<&'a Relation>> {
    (0..q.n()).map(|i| q.relation(db, i)).collect()
}

fn count_in(rels: &[&Relation], q: &JoinQuery, set: RelSet) -> Count {
    grouped_counts_in(rels, q, set, &[])
        .expect("no group columns")
        .values()
        .sum()
}

fn max_boundary_in(rels: &[&Relation], q: &JoinQuery, set: RelSet) -> Count {
    q.components(set)
        .into_iter()
        .map(|comp| {
            let boundary = q.boundary_attributes(comp);
            grouped_counts_in(rels, q, comp, &boundary)
                .expect("boundary columns lie in the component")
                .into_values()
                .max()
                .unwrap_or(0)
        })
        .product()
}

pub(crate) fn grouped_counts_in(
    rels: &[&Relation],
    q: &JoinQuery,
    set: RelSet,
    group: &[Col],
) -> Result<HashMap<Vec<Value>, Count>> {
    if let Some(c) = group.iter().find(|c| !set.contains(c.rel)) {
        return Err(Error::query(format!(
            "group column {} outside {set}",
            q.attribute_name(*c)
        )));
    }
    let mut acc: Partial = HashMap::from([(vec![None; group.len()], 1)]);
    for comp in q.components(set) {
        let part = if q.internal_predicates(comp).len() + 1 == comp.len() {
            tree_counts(rels, q, comp, group)
        } else {
            enumerate_counts(rels, q, comp, group)
        };
        acc = cross(&acc, &part);
        if acc.is_empty() {
            break;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(k, c)| (k.into_iter().map(|v| v.expect("every group slot bound")).collect(), c))
        .collect())
}

fn cross(a: &Partial, b: &Partial) -> Partial {
    let mut out = Partial::with_capacity(a.len() * b.len());
    for (ka, ca) in a {
        for (kb, cb) in b {
            let key = ka
                .iter()
                .zip(kb)
                .map(|(x, y)| x.clone().or_else(|| y.clone()))
                .collect();
            *out.entry(key).or_default() += ca * cb;
        }
    }
    out
}

fn group_root(comp: RelSet, group: &[Col]) -> usize {
    comp.iter()
        .max_by_key(|&r| (group.iter().filter(|c| c.rel == r).count(), std::cmp::Reverse(r)))
        .expect("non-empty component")
}

fn base_key(row: &[Value], rel: usize, group: &[Col]) -> Vec<Option<Value>> {
    group
        .iter()
        .map(|c| (c.rel == rel).then(|| row[c.col].clone()))
        .collect()
}

/// Bottom-up message passing over an acyclic component.
fn tree_counts(rels: &[&Relation], q: &JoinQuery, comp: RelSet, group: &[Col]) -> Partial {
    let root = group_root(comp, group);
    let plan = q.walk_plan(comp, root).expect("component is connected");
    let mut messages: Vec<Option<HashMap<Value, Partial>>> = vec![None; plan.len()];
    let mut result = Partial::new();
    for p in (0..plan.len()).rev() {
        let rel_idx = plan.order[p];
        let children: Vec<(usize, usize)> = plan
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.parent == p)
            .map(|(k, s)| (k + 1, s.from.col))
            .collect();
        let mut out: HashMap<Value, Partial> = HashMap::new();
        'rows: for row in rels[rel_idx].rows() {
            let mut acc: Partial = HashMap::from([(base_key(row, rel_idx, group), 1)]);
            for &(child, col) in &children {
                match messages[child].as_ref().expect("children first").get(&row[col]) {
                    Some(m) => acc = cross(&acc, m),
                    None => continue 'rows,
                }
            }
            let target = if p == 0 {
                &mut result
            } else {
                out.entry(row[plan.steps[p - 1].to.col].clone()).or_default()
            };
            for (k, c) in acc {
                *target.entry(k).or_default() += c;
            }
        }
        for &(child, _) in &children {
            messages[child] = None;
        }
        if p > 0 {
            messages[p] = Some(out);
        }
    }
    result
}

/// Backtracking enumeration for components with cycles.
fn enumerate_counts(rels: &[&Relation], q: &JoinQuery, comp: RelSet, group: &[Col]) -> Partial {
    let root = group_root(comp, group);
    let plan = q.walk_plan(comp, root).expect("component is connected");
    let lookups: Vec<ColumnLookup> = plan.steps.iter().map(|s| rels[s.relation].lookup(s.to.col)).collect();
    let mut bound = vec![0u32; plan.len()];
    let mut result = Partial::new();

    struct Ctx<'a> {
        rels: &'a [&'a Relation],
        plan: &'a crate::querymodel::WalkPlan,
        lookups: &'a [ColumnLookup<'a>],
        group: &'a [Col],
    }

    fn row<'a>(ctx: &Ctx<'a>, bound: &[u32], pos: usize) -> &'a [Value] {
        ctx.rels[ctx.plan.order[pos]].row(bound[pos] as usize)
    }

    fn go(ctx: &Ctx, bound: &mut [u32], p: usize, result: &mut Partial) {
        if p == ctx.plan.len() {
            let key = ctx
                .group
                .iter()
                .map(|c| Some(row(ctx, bound, ctx.plan.position[c.rel])[c.col].clone()))
                .collect();
            *result.entry(key).or_default() += 1;
            return;
        }
        let ok = |bound: &[u32]| {
            ctx.plan
                .checks
                .iter()
                .filter(|c| c.ready_at == p)
                .all(|c| row(ctx, bound, c.left_pos)[c.left.col] == row(ctx, bound, c.right_pos)[c.right.col])
        };
        if p == 0 {
            for id in 0..ctx.rels[ctx.plan.order[0]].len() {
                bound[0] = id as u32;
                if ok(bound) {
                    go(ctx, bound, 1, result);
                }
            }
        } else {
            let step = &ctx.plan.steps[p - 1];
            let v = &row(ctx, bound, step.parent)[step.from.col];
            for &id in ctx.lookups[p - 1].rows(v) {
                bound[p] = id;
                if ok(bound) {
                    go(ctx, bound, p + 1, result);
                }
            }
        }
    }

    let ctx = Ctx {
        rels,
        plan: &plan,
        lookups: &lookups,
        group,
    };
    go(&ctx, &mut bound, 0, &mut result);
    result
}

/// Upper bound on `T_E` for a component whose joins all land on declared
/// keys: rooted at the relation holding every boundary column, each root
/// tuple joins at most one tuple per relation, so the maximum group count is
/// bounded by the root's maximum frequency on the boundary.
pub fn fk_reduced_bound(db: &Database, q: &JoinQuery, comp: RelSet) -> Result<Option<Count>> {
    let rels = query_relations(db, q)?;
    Ok(fk_reduced_in(&rels, q, comp))
}

fn fk_reduced_in(rels: &[&Relation], q: &JoinQuery, comp: RelSet) -> Option<Count> {
    if q.keys().is_empty() || comp.len() < 2 || q.internal_predicates(comp).len() + 1 != comp.len() {
        return None;
    }
    let boundary = q.boundary_attributes(comp);
    for j in comp.iter() {
        if boundary.iter().any(|c| c.rel != j) {
            continue;
        }
        let plan = q.walk_plan(comp, j).ok()?;
        if plan.steps.iter().all(|s| q.keys().contains(&s.to)) {
            let cols: Vec<usize> = boundary.iter().map(|c| c.col).collect();
            return Some(rels[j].max_frequency_cols(&cols) as Count);
        }
    }
    None
}

/// How a maximum-boundary entry was obtained.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Exact,
    /// Key/foreign-key reduction to a single-relation frequency (upper bound).
    Reduced,
    Sampled {
        tau: f64,
        converged: bool,
        walks: u64,
        /// Grouping coarser than the boundary tuple (upper bound).
        coarsened: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryEntry {
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub relations: Vec<String>,
    pub value: f64,
    pub provenance: Provenance,
}

/// `E → T_E` for the residual subsets of a query.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaxBoundaryTable {
    entries: BTreeMap<RelSet, BoundaryEntry>,
}

impl MaxBoundaryTable {
    pub fn new() -> Self {
        let mut t = MaxBoundaryTable::default();
        t.insert(RelSet::EMPTY, 1.0, Provenance::Exact);
        t
    }

    pub fn insert(&mut self, set: RelSet, value: f64, provenance: Provenance) {
        assert!(value >= 0.0, "maximum boundaries are non-negative");
        self.entries.insert(set, BoundaryEntry { value, provenance });
    }

    pub fn get(&self, set: RelSet) -> Option<&BoundaryEntry> {
        self.entries.get(&set)
    }

    /// `T_E`, erroring when the entry was never computed.
    pub fn value(&self, set: RelSet) -> Result<f64> {
        self.entries
            .get(&set)
            .map(|e| e.value)
            .ok_or_else(|| Error::MissingStatistic(format!("maximum boundary for {set}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (RelSet, &BoundaryEntry)> {
        self.entries.iter().map(|(s, e)| (*s, e))
    }

    pub fn rows(&self, q: &JoinQuery) -> Vec<TableRow> {
        self.iter()
            .map(|(s, e)| TableRow {
                relations: s.iter().map(|i| q.relation_name(i).to_string()).collect(),
                value: e.value,
                provenance: e.provenance.clone(),
            })
            .collect()
    }
}

/// Exact (or key-reduced) `T_E` for every residual subset of the query.
pub fn exact_table(db: &Database, q: &JoinQuery) -> Result<MaxBoundaryTable> {
    let rels = query_relations(db, q)?;
    let sets: Vec<RelSet> = q.residual_set().into_iter().collect();
    let values: Vec<(RelSet, Count, Provenance)> = sets
        .par_iter()
        .map(|&e| {
            let comps = q.components(e);
            let reduced: Option<Vec<Count>> = comps.iter().map(|&c| fk_reduced_in(&rels, q, c)).collect();
            match reduced {
                Some(parts) if !e.is_empty() => (e, parts.into_iter().product(), Provenance::Reduced),
                _ => (e, max_boundary_in(&rels, q, e), Provenance::Exact),
            }
        })
        .collect();
    let mut t = MaxBoundaryTable::new();
    for (e, v, p) in values {
        t.insert(e, v as f64, p);
    }
    Ok(t)
}

/// Candidate values for inserted tuples, per query relation and column.
///
/// Columns joined (transitively) through predicates share one candidate list:
/// the union of their active values plus one fresh token. Join counts only
/// depend on which values match, so this finite domain covers every distinct
/// insertion effect. Unjoined columns get a single fresh token.
#[derive(Clone, Debug)]
pub struct InsertionDomain {
    columns: Vec<Vec<Vec<Value>>>,
}

impl InsertionDomain {
    pub fn active(db: &Database, q: &JoinQuery) -> Result<Self> {
        let rels = query_relations(db, q)?;
        let mut parent: HashMap<Col, Col> = HashMap::new();
        fn find(parent: &mut HashMap<Col, Col>, c: Col) -> Col {
            let p = *parent.entry(c).or_insert(c);
            if p == c {
                c
            } else {
                let r = find(parent, p);
                parent.insert(c, r);
                r
            }
        }
        for p in q.predicates() {
            let (a, b) = (find(&mut parent, p.left), find(&mut parent, p.right));
            if a != b {
                parent.insert(a, b);
            }
        }
        let mut classes: BTreeMap<Col, BTreeSet<Value>> = BTreeMap::new();
        let joined: Vec<Col> = parent.keys().copied().collect();
        for c in &joined {
            let root = find(&mut parent, *c);
            let vals = classes.entry(root).or_default();
            vals.extend(rels[c.rel].rows().map(|r| r[c.col].clone()));
        }
        let all_active: HashSet<Value> = classes.values().flatten().cloned().collect();
        let fresh = |tag: String| {
            let mut tok = format!("\u{22a5}{tag}");
            while all_active.contains(&Value::str(&tok)) {
                tok.push('\'');
            }
            Value::str(&tok)
        };
        let mut class_values: BTreeMap<Col, Vec<Value>> = BTreeMap::new();
        for (k, (root, vals)) in classes.iter().enumerate() {
            let mut v: Vec<Value> = vals.iter().cloned().collect();
            v.push(fresh(format!("j{k}")));
            class_values.insert(*root, v);
        }
        let columns = (0..q.n())
            .map(|i| {
                (0..q.attributes(i).len())
                    .map(|col| {
                        let c = Col::new(i, col);
                        if parent.contains_key(&c) {
                            class_values[&find(&mut parent, c)].clone()
                        } else {
                            vec![fresh(format!("{i}.{col}"))]
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(InsertionDomain { columns })
    }

    /// Explicit candidate lists, `columns[relation][column]`.
    pub fn from_columns(columns: Vec<Vec<Vec<Value>>>) -> Self {
        InsertionDomain { columns }
    }

    pub fn candidates(&self, rel: usize, col: usize) -> &[Value] {
        &self.columns[rel][col]
    }

    /// Number of candidate tuples for relation `rel`.
    pub fn size(&self, rel: usize) -> u128 {
        self.columns[rel].iter().map(|c| c.len() as u128).product()
    }

    /// Every candidate tuple for relation `rel`.
    pub fn tuples(&self, rel: usize) -> Vec<Vec<Value>> {
        let mut out: Vec<Vec<Value>> = vec![Vec::new()];
        for col in &self.columns[rel] {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    col.iter().map(move |v| {
                        let mut t = prefix.clone();
                        t.push(v.clone());
                        t
                    })
                })
                .collect();
        }
        out
    }
}

/// Default brute-force budget (number of join recomputations).
pub const DEFAULT_ORACLE_BUDGET: u128 = 2_000_000;

type Instance = Vec<Vec<Vec<Value>>>;

fn instance_of(rels: &[&Relation]) -> Instance {
    rels.iter()
        .map(|r| {
            let mut rows: Vec<Vec<Value>> = r.rows().map(<[Value]>::to_vec).collect();
            rows.sort();
            rows
        })
        .collect()
}

fn materialize(q: &JoinQuery, inst: &Instance) -> Vec<Relation> {
    inst.iter()
        .enumerate()
        .map(|(i, rows)| {
            let attrs: Vec<&str> = q.attributes(i).iter().map(String::as_str).collect();
            Relation::from_rows(q.relation_name(i), &attrs, rows.iter().cloned()).expect("arity preserved")
        })
        .collect()
}

fn instance_count(q: &JoinQuery, inst: &Instance) -> Count {
    let owned = materialize(q, inst);
    let rels: Vec<&Relation> = owned.iter().collect();
    count_in(&rels, q, q.all())
}

fn ls_cost(q: &JoinQuery, inst: &Instance, domain: &InsertionDomain) -> u128 {
    q.private().iter().map(|i| inst[i].len() as u128 + domain.size(i)).sum()
}

fn instance_ls(q: &JoinQuery, inst: &Instance, domain: &InsertionDomain) -> Count {
    let base = instance_count(q, inst);
    let mut best: Count = 0;
    let mut work = inst.clone();
    for i in q.private().iter() {
        for r in 0..inst[i].len() {
            let removed = work[i].remove(r);
            best = best.max(base.abs_diff(instance_count(q, &work)));
            work[i].insert(r, removed);
        }
        for t in domain.tuples(i) {
            work[i].push(t);
            best = best.max(base.abs_diff(instance_count(q, &work)));
            work[i].pop();
        }
    }
    best
}

/// Local sensitivity by recomputing the join after every single-tuple
/// deletion from, and every candidate insertion into, a private relation.
pub fn local_sensitivity_oracle(db: &Database, q: &JoinQuery, domain: &InsertionDomain, budget: u128) -> Result<Count> {
    let rels = query_relations(db, q)?;
    let inst = instance_of(&rels);
    let estimate = ls_cost(q, &inst, domain);
    if estimate > budget {
        return Err(Error::DomainTooLarge { estimate, budget });
    }
    Ok(instance_ls(q, &inst, domain))
}

/// Local sensitivity as the largest maximum boundary of `[n] − {i}` over
/// private `i`: the most results one tuple of `R_i` can join with.
pub fn local_sensitivity_by_pivot(db: &Database, q: &JoinQuery) -> Result<Count> {
    let rels = query_relations(db, q)?;
    Ok(q.private()
        .iter()
        .map(|i| max_boundary_in(&rels, q, q.all().without(i)))
        .max()
        .unwrap_or(0))
}

/// Largest local sensitivity over every instance within `k` single-tuple
/// edits (on private relations) of the database. Instances are deduplicated
/// as row multisets, so edit order never matters.
pub fn local_sensitivity_at_k_oracle(
    db: &Database,
    q: &JoinQuery,
    domain: &InsertionDomain,
    k: usize,
    budget: u128,
) -> Result<Count> {
    let rels = query_relations(db, q)?;
    let start = instance_of(&rels);
    let mut seen: HashSet<Instance> = HashSet::from([start.clone()]);
    let mut frontier = vec![start];
    let mut spent: u128 = 0;
    for _ in 0..k {
        let mut next = Vec::new();
        for inst in &frontier {
            spent += ls_cost(q, inst, domain);
            if spent > budget {
                return Err(Error::DomainTooLarge {
                    estimate: spent,
                    budget,
                });
            }
            for i in q.private().iter() {
                for r in 0..inst[i].len() {
                    if r > 0 && inst[i][r] == inst[i][r - 1] {
                        continue;
                    }
                    let mut n = inst.clone();
                    n[i].remove(r);
                    if seen.insert(n.clone()) {
                        next.push(n);
                    }
                }
                for t in domain.tuples(i) {
                    let mut n = inst.clone();
                    let at = n[i].partition_point(|x| *x < t);
                    n[i].insert(at, t);
                    if seen.insert(n.clone()) {
                        next.push(n);
                    }
                }
            }
        }
        frontier = next;
    }
    let per_state: u128 = seen.iter().map(|s| ls_cost(q, s, domain)).sum();
    if per_state > budget.saturating_mul(4) {
        return Err(Error::DomainTooLarge {
            estimate: per_state,
            budget,
        });
    }
    let states: Vec<Instance> = seen.into_iter().collect();
    Ok(states.par_iter().map(|s| instance_ls(q, s, domain)).max().unwrap_or(0))
}
