//! Sampling-based sensitivity estimation.
//!
//! Maximum boundaries are estimated with wander-join random walks: for each
//! boundary group, walks start uniformly among the tuples carrying the group
//! value, and the product of fan-outs along a successful walk is an unbiased
//! estimate of the group's join size. Groups whose upper confidence bound
//! falls below the leader's lower bound are dropped, and a residual query
//! retires once every surviving group's interval is narrow enough. The upper
//! end of the leader's interval becomes `T_E`.
//!
//! Three drivers share the machinery: one residual query at a time
//! ([`Mode::PerQuery`]), walk sharing where one walk also feeds the suffix
//! sub-queries it passes through ([`Mode::Improved`]), and a filtered variant
//! that first restricts candidate groups to those seen on unrestricted walks
//! ([`Mode::WithFilter`]).

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{query_relations, MaxBoundaryTable, Provenance};
use crate::querymodel::{Col, JoinQuery, RelSet, WalkPlan};
use crate::relstore::{ColumnLookup, Database, Relation, Value};
use crate::seeds;
use crate::smoothbounds::{smoothed_residual, Method, SensitivityReport, SmoothingParams};

/// Confidence half-width on the normalized scale after `m` samples, for `g`
/// groups and failure probability `eta`. `ln ln m` is floored at 0, which
/// only widens the interval for the first few samples; `m = 0` is unbounded.
pub fn tau_bound(m: u64, g: usize, eta: f64) -> f64 {
    if m == 0 {
        return f64::INFINITY;
    }
    let m = m as f64;
    let lnln = m.ln().ln().max(0.0);
    ((2.0 * lnln + ((g as f64 + 1.0) * PI * PI / (6.0 * eta)).ln()) / (2.0 * m)).sqrt()
}

/// Folds the `m`-th sample `x` into running mean `c`; returns the new mean
/// and the half-width after `m` samples.
pub fn update_estimate(x: f64, m: u64, c: f64, g: usize, eta: f64) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::param("update_estimate needs m >= 1"));
    }
    let mf = m as f64;
    Ok(((mf - 1.0) / mf * c + x / mf, tau_bound(m, g, eta)))
}

/// Where a walk starts.
#[derive(Clone, Copy, Debug)]
pub enum StartSet<'s> {
    /// Uniform over every row of the start relation.
    All,
    /// Uniform over the given row ids of the start relation.
    Rows(&'s [u32]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkOutcome {
    pub success: bool,
    /// Product of fan-outs on success, 0 otherwise.
    pub estimate: f64,
    /// Chosen row per plan position (`None` past a dead end).
    pub rows: Vec<Option<u32>>,
    /// Candidate count per plan position; position 0 is the start-set size.
    pub fanouts: Vec<usize>,
}

/// Random walks over one [`WalkPlan`].
pub struct Walker<'a> {
    rels: Vec<&'a Relation>,
    plan: WalkPlan,
    lookups: Vec<ColumnLookup<'a>>,
    /// Plan positions in the subtree rooted at each position.
    subtrees: Vec<Vec<usize>>,
}

impl<'a> Walker<'a> {
    pub fn new(db: &'a Database, q: &JoinQuery, plan: WalkPlan) -> Result<Self> {
        let rels = query_relations(db, q)?;
        Ok(Self::from_relations(rels, plan))
    }

    fn from_relations(rels: Vec<&'a Relation>, plan: WalkPlan) -> Self {
        let lookups = plan.steps.iter().map(|s| rels[s.relation].lookup(s.to.col)).collect();
        let mut subtrees: Vec<Vec<usize>> = (0..plan.len()).map(|p| vec![p]).collect();
        for p in (1..plan.len()).rev() {
            let parent = plan.steps[p - 1].parent;
            let sub = subtrees[p].clone();
            subtrees[parent].extend(sub);
        }
        Walker {
            rels,
            plan,
            lookups,
            subtrees,
        }
    }

    pub fn plan(&self) -> &WalkPlan {
        &self.plan
    }

    fn row(&self, pos: usize, id: u32) -> &'a [Value] {
        self.rels[self.plan.order[pos]].row(id as usize)
    }

    /// One walk. Every step whose parent is bound is attempted, so a dead end
    /// in one branch leaves the others sampled.
    pub fn walk(&self, start: StartSet, rng: &mut impl Rng) -> WalkOutcome {
        let len = self.plan.len();
        let mut rows = vec![None; len];
        let mut fanouts = vec![0usize; len];
        let n0 = match start {
            StartSet::All => self.rels[self.plan.start()].len(),
            StartSet::Rows(r) => r.len(),
        };
        fanouts[0] = n0;
        if n0 > 0 {
            let pick = rng.random_range(0..n0);
            rows[0] = Some(match start {
                StartSet::All => pick as u32,
                StartSet::Rows(r) => r[pick],
            });
        }
        for p in 1..len {
            let step = &self.plan.steps[p - 1];
            let Some(parent) = rows[step.parent] else { continue };
            let candidates = self.lookups[p - 1].rows(&self.row(step.parent, parent)[step.from.col]);
            fanouts[p] = candidates.len();
            if !candidates.is_empty() {
                rows[p] = Some(candidates[rng.random_range(0..candidates.len())]);
            }
        }
        let bound = rows.iter().all(Option::is_some);
        let success = bound && self.checks_pass(&rows, None);
        let estimate = if success {
            fanouts.iter().map(|&f| f as f64).product()
        } else {
            0.0
        };
        WalkOutcome {
            success,
            estimate,
            rows,
            fanouts,
        }
    }

    fn checks_pass(&self, rows: &[Option<u32>], within: Option<&[usize]>) -> bool {
        self.plan.checks.iter().all(|c| {
            if let Some(set) = within {
                if !(set.contains(&c.left_pos) && set.contains(&c.right_pos)) {
                    return true;
                }
            }
            match (rows[c.left_pos], rows[c.right_pos]) {
                (Some(a), Some(b)) => self.row(c.left_pos, a)[c.left.col] == self.row(c.right_pos, b)[c.right.col],
                _ => false,
            }
        })
    }

    /// Estimate for the sub-walk rooted at plan position `p`, read as a walk
    /// that started uniformly among the rows of `order[p]` matching the value
    /// it was entered with. `None` when the walk never reached `p`.
    pub fn suffix_estimate(&self, out: &WalkOutcome, p: usize) -> Option<f64> {
        out.rows[p]?;
        let sub = &self.subtrees[p];
        if sub.iter().any(|&s| out.rows[s].is_none()) || !self.checks_pass(&out.rows, Some(sub)) {
            return Some(0.0);
        }
        Some(sub.iter().map(|&s| out.fanouts[s] as f64).product())
    }

    fn subtree_relations(&self, p: usize) -> RelSet {
        RelSet::of(&self.subtrees[p].iter().map(|&s| self.plan.order[s]).collect::<Vec<_>>())
    }
}

/// Stopping tolerance for a residual query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Tolerance {
    /// Half-width on the normalized (count / join size) scale.
    Normalized(f64),
    /// Half-width in counts.
    Absolute(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PerQuery,
    Improved,
    WithFilter,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "pere" | "perquery" | "rqe" => Ok(Mode::PerQuery),
            "improved" | "improvedrqe" | "shared" => Ok(Mode::Improved),
            "withfilter" | "filter" => Ok(Mode::WithFilter),
            _ => Err(Error::param(format!("unknown sampling mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplingConfig {
    pub tau0: Tolerance,
    pub eta: f64,
    /// Initial walks per group.
    pub m0: u64,
    /// Walks a single residual query may issue before it stops unconverged.
    pub walk_cap: u64,
    /// When set, each residual query issues at most `r · Ĵ_E` walks after
    /// its initial round, where `Ĵ_E` is the join-size estimate at that point.
    pub sample_rate: Option<f64>,
    pub mode: Mode,
    /// Unrestricted walks drawn by [`Mode::WithFilter`] before restricting.
    pub filter_walks: u64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            tau0: Tolerance::Normalized(0.01),
            eta: 0.05,
            m0: 10,
            walk_cap: 10_000_000,
            sample_rate: None,
            mode: Mode::Improved,
            filter_walks: 1000,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let t = match self.tau0 {
            Tolerance::Normalized(t) | Tolerance::Absolute(t) => t,
        };
        if !(t > 0.0) {
            return Err(Error::param(format!("tau0 must be positive, got {t}")));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::param(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.m0 == 0 || self.walk_cap == 0 {
            return Err(Error::param("m0 and walk_cap must be at least 1"));
        }
        if let Some(r) = self.sample_rate {
            if !(r > 0.0) {
                return Err(Error::param(format!("sample rate must be positive, got {r}")));
            }
        }
        if self.mode == Mode::WithFilter && self.filter_walks == 0 {
            return Err(Error::param("filter_walks must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupEstimate {
    pub key: Vec<Value>,
    pub mean: f64,
    pub walks: u64,
    /// Half-width in counts.
    pub half_width: f64,
    pub active: bool,
}

/// Per-round view of one residual query, passed to observers.
#[derive(Clone, Debug)]
pub struct RoundSnapshot {
    pub set: RelSet,
    pub round: u64,
    pub join_estimate: f64,
    pub groups: Vec<GroupEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RqeResult {
    pub set: RelSet,
    /// `max_{i ∈ G}(C_i + τ_i)` at termination.
    pub value: f64,
    pub converged: bool,
    /// Walks this residual query issued (shared updates excluded).
    pub walks: u64,
    /// Samples it received, shared ones included.
    pub samples: u64,
    pub rounds: u64,
    pub join_estimate: f64,
    /// Grouped by the start relation's boundary columns only.
    pub coarsened: bool,
    pub groups: Vec<GroupEstimate>,
    /// `(round, group)` removal events in order.
    pub removed: Vec<(u64, usize)>,
}

impl RqeResult {
    /// Group index with the largest surviving upper bound.
    pub fn leader(&self) -> Option<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.active)
            .max_by(|a, b| (a.1.mean + a.1.half_width).total_cmp(&(b.1.mean + b.1.half_width)))
            .map(|(i, _)| i)
    }

    /// Half-width of the leading group.
    pub fn tau(&self) -> f64 {
        self.leader().map(|i| self.groups[i].half_width).unwrap_or(0.0)
    }
}

struct Target<'a> {
    set: RelSet,
    walker: Walker<'a>,
    coarsened: bool,
    keys: Vec<Vec<Value>>,
    starts: Vec<Vec<u32>>,
    index: HashMap<Vec<Value>, usize>,
    rngs: Vec<ChaCha8Rng>,
    /// `(plan position, target id)` of sub-queries fed by this target's walks.
    shares: Vec<(usize, usize)>,
    /// Group count used in the half-width (the initial group set size).
    g: usize,
    c: Vec<f64>,
    m: Vec<u64>,
    active: Vec<bool>,
    /// Indices of active groups, ascending.
    live: Vec<usize>,
    /// Running `Σ c_i`.
    c_sum: f64,
    n: u64,
    walks: u64,
    rounds: u64,
    budget: Option<u64>,
    j_fixed: Option<(f64, u64)>,
    retired: bool,
    converged: bool,
    removed: Vec<(u64, usize)>,
}

fn target_rng(seed: u64, set: RelSet, group: usize, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[set.0, group as u64, tag]))
}

const GROUP_STREAM: u64 = 1;
const FILTER_STREAM: u64 = 2;

impl<'a> Target<'a> {
    fn new(rels: &[&'a Relation], q: &JoinQuery, set: RelSet, seed: u64) -> Result<Self> {
        let boundary = q.boundary_attributes(set);
        let start = set
            .iter()
            .max_by_key(|&r| (boundary.iter().filter(|c| c.rel == r).count(), std::cmp::Reverse(r)))
            .ok_or_else(|| Error::query("empty residual query"))?;
        let group_cols: Vec<usize> = boundary.iter().filter(|c| c.rel == start).map(|c| c.col).collect();
        let coarsened = group_cols.len() != boundary.len();
        let plan = q.walk_plan(set, start)?;
        let walker = Walker::from_relations(rels.to_vec(), plan);
        let (keys, starts): (Vec<Vec<Value>>, Vec<Vec<u32>>) = match (
            group_cols.as_slice(),
            group_cols.first().and_then(|&c| rels[start].index(c)),
        ) {
            // same order and row lists as the general path below
            ([_], Some(idx)) => idx
                .values()
                .iter()
                .map(|v| (vec![v.clone()], idx.rows(v).to_vec()))
                .unzip(),
            _ => {
                let mut grouped: BTreeMap<Vec<Value>, Vec<u32>> = BTreeMap::new();
                for (id, row) in rels[start].rows().enumerate() {
                    grouped
                        .entry(group_cols.iter().map(|&c| row[c].clone()).collect())
                        .or_default()
                        .push(id as u32);
                }
                grouped.into_iter().unzip()
            }
        };
        let g = keys.len();
        let index = keys.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        Ok(Target {
            set,
            walker,
            coarsened,
            keys,
            starts,
            index,
            rngs: (0..g).map(|i| target_rng(seed, set, i, GROUP_STREAM)).collect(),
            shares: Vec::new(),
            g,
            c: vec![0.0; g],
            m: vec![0; g],
            active: vec![true; g],
            live: (0..g).collect(),
            c_sum: 0.0,
            n: 0,
            walks: 0,
            rounds: 0,
            budget: None,
            j_fixed: None,
            retired: g == 0,
            converged: g == 0,
            removed: Vec::new(),
        })
    }

    fn record(&mut self, group: usize, x: f64) {
        self.m[group] += 1;
        self.n += 1;
        let m = self.m[group] as f64;
        let delta = (x - self.c[group]) / m;
        self.c[group] += delta;
        self.c_sum += delta;
    }

    fn restrict(&mut self, keep: Vec<bool>) {
        self.live = (0..keep.len()).filter(|&i| keep[i]).collect();
        self.active = keep;
    }

    fn join_estimate(&self, eta: f64) -> (f64, f64) {
        match self.j_fixed {
            Some((j, n)) => (j, tau_bound(n, self.g, eta)),
            None => (self.c_sum, tau_bound(self.n, self.g, eta)),
        }
    }

    fn scale(&self, eta: f64) -> f64 {
        let (j, tj) = self.join_estimate(eta);
        j + tj
    }

    fn half_width(&self, i: usize, scale: f64, eta: f64) -> f64 {
        let t = tau_bound(self.m[i], self.g, eta);
        if t.is_infinite() {
            f64::INFINITY
        } else {
            t * scale
        }
    }

    fn half_widths(&self, eta: f64) -> Vec<f64> {
        let scale = self.scale(eta);
        (0..self.m.len()).map(|i| self.half_width(i, scale, eta)).collect()
    }

    /// Prunes dominated groups and decides whether the query is done.
    fn evaluate(&mut self, cfg: &SamplingConfig) {
        if self.retired {
            return;
        }
        let scale = self.scale(cfg.eta);
        // live groups mostly share a sample count, so reuse the last bound
        let mut memo = (0u64, f64::INFINITY);
        let mut bound = |m: u64| {
            if memo.0 != m {
                memo = (m, tau_bound(m, self.g, cfg.eta));
            }
            memo.1
        };
        let taus: Vec<f64> = self.live.iter().map(|&i| bound(self.m[i]) * scale).collect();
        let floor = self
            .live
            .iter()
            .zip(&taus)
            .map(|(&i, t)| self.c[i] - t)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut kept = Vec::with_capacity(self.live.len());
        let mut kept_taus = Vec::with_capacity(self.live.len());
        for (&i, &t) in self.live.iter().zip(&taus) {
            if self.c[i] + t < floor {
                self.active[i] = false;
                self.removed.push((self.rounds, i));
            } else {
                kept.push(i);
                kept_taus.push(t);
            }
        }
        self.live = kept;
        let narrow = self.live.iter().zip(&kept_taus).all(|(&i, &t)| match cfg.tau0 {
            Tolerance::Normalized(t0) => bound(self.m[i]) <= t0,
            Tolerance::Absolute(t0) => t <= t0,
        });
        if narrow || self.budget.is_some_and(|b| self.walks >= b) {
            self.retired = true;
            self.converged = true;
        } else if self.walks >= cfg.walk_cap {
            self.retired = true;
        }
    }

    fn set_budget(&mut self, cfg: &SamplingConfig) {
        if let (Some(r), None) = (cfg.sample_rate, self.budget) {
            if self.m.iter().all(|&m| m >= cfg.m0) {
                let (j, _) = self.join_estimate(cfg.eta);
                self.budget = Some(self.walks + (r * j).ceil() as u64);
            }
        }
    }

    fn snapshot(&self, eta: f64) -> Vec<GroupEstimate> {
        let taus = self.half_widths(eta);
        (0..self.g)
            .map(|i| GroupEstimate {
                key: self.keys[i].clone(),
                mean: self.c[i],
                walks: self.m[i],
                half_width: taus[i],
                active: self.active[i],
            })
            .collect()
    }

    fn result(&self, eta: f64) -> RqeResult {
        let groups = self.snapshot(eta);
        let value = groups
            .iter()
            .filter(|g| g.active)
            .map(|g| g.mean + g.half_width)
            .fold(0.0, f64::max);
        RqeResult {
            set: self.set,
            value,
            converged: self.converged,
            walks: self.walks,
            samples: self.n,
            rounds: self.rounds,
            join_estimate: self.join_estimate(eta).0,
            coarsened: self.coarsened,
            groups,
            removed: self.removed.clone(),
        }
    }

    /// Walks for one round: `max(1, m0 − m_i)` per active group.
    fn round_walks(&mut self, m0: u64) -> Vec<(usize, WalkOutcome)> {
        let work: Vec<(usize, u64)> = self
            .live
            .iter()
            .map(|&i| (i, m0.saturating_sub(self.m[i]).max(1)))
            .collect();
        let walker = &self.walker;
        let starts = &self.starts;
        // disjoint borrows of the live groups' streams
        let mut selected: Vec<(usize, u64, &mut ChaCha8Rng)> = Vec::with_capacity(work.len());
        let mut rest: &mut [ChaCha8Rng] = &mut self.rngs;
        let mut offset = 0;
        for &(gi, k) in &work {
            let (_, tail) = std::mem::take(&mut rest).split_at_mut(gi - offset);
            let (rng, tail) = tail.split_first_mut().expect("live group has a stream");
            selected.push((gi, k, rng));
            rest = tail;
            offset = gi + 1;
        }
        let run = |(gi, k, rng): (usize, u64, &mut ChaCha8Rng)| -> Vec<(usize, WalkOutcome)> {
            (0..k)
                .map(|_| (gi, walker.walk(StartSet::Rows(&starts[gi]), rng)))
                .collect()
        };
        let total: u64 = work.iter().map(|w| w.1).sum();
        self.rounds += 1;
        if total >= 4096 && rayon::current_num_threads() > 1 {
            let outs: Vec<Vec<(usize, WalkOutcome)>> = selected.into_par_iter().map(run).collect();
            outs.into_iter().flatten().collect()
        } else {
            let mut outs = Vec::with_capacity(total as usize);
            for (gi, k, rng) in selected {
                outs.extend((0..k).map(|_| (gi, walker.walk(StartSet::Rows(&starts[gi]), rng))));
            }
            outs
        }
    }
}

struct Engine<'a> {
    targets: Vec<Target<'a>>,
    sharing: bool,
}

impl<'a> Engine<'a> {
    fn new(rels: &[&'a Relation], q: &JoinQuery, sets: &[RelSet], cfg: &SamplingConfig, sharing: bool) -> Result<Self> {
        let mut targets = sets
            .iter()
            .map(|&s| Target::new(rels, q, s, cfg.seed))
            .collect::<Result<Vec<_>>>()?;
        if sharing {
            let by_set: HashMap<RelSet, usize> = targets.iter().enumerate().map(|(i, t)| (t.set, i)).collect();
            for t in targets.iter_mut() {
                let plan = t.walker.plan().clone();
                for p in 1..plan.len() {
                    if let Some(&tid) = by_set.get(&t.walker.subtree_relations(p)) {
                        t.shares.push((p, tid));
                    }
                }
            }
            // keep only sub-queries grouped exactly by the entry column
            let meta: Vec<(usize, Option<usize>, bool)> = targets
                .iter()
                .map(|t| {
                    let start = t.walker.plan().start();
                    let cols = q.boundary_attributes(t.set);
                    let single = (cols.len() == 1 && cols[0].rel == start).then(|| cols[0].col);
                    (start, single, t.coarsened)
                })
                .collect();
            for t in targets.iter_mut() {
                let plan = t.walker.plan().clone();
                t.shares.retain(|&(p, tid)| {
                    let entry: Col = plan.steps[p - 1].to;
                    let (start, single, coarsened) = meta[tid];
                    !coarsened && start == entry.rel && single == Some(entry.col)
                });
            }
        }
        Ok(Engine { targets, sharing })
    }

    fn run(&mut self, cfg: &SamplingConfig, observer: &mut Option<&mut dyn FnMut(&RoundSnapshot)>) {
        loop {
            let pick = self
                .targets
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.retired)
                .max_by_key(|(_, t)| (t.set.len(), std::cmp::Reverse(t.set)))
                .map(|(i, _)| i);
            let Some(ti) = pick else { break };
            let outs = self.targets[ti].round_walks(cfg.m0);
            let mut shared: Vec<(usize, usize, f64)> = Vec::new();
            {
                let t = &self.targets[ti];
                if self.sharing {
                    for (_, out) in &outs {
                        for &(p, tid) in &t.shares {
                            let Some(x) = t.walker.suffix_estimate(out, p) else {
                                continue;
                            };
                            let step = &t.walker.plan().steps[p - 1];
                            let row = t.walker.row(p, out.rows[p].expect("reached"));
                            let key = vec![row[step.to.col].clone()];
                            if let Some(&gid) = self.targets[tid].index.get(&key) {
                                shared.push((tid, gid, x));
                            }
                        }
                    }
                }
            }
            let t = &mut self.targets[ti];
            t.walks += outs.len() as u64;
            for (gi, out) in &outs {
                t.record(*gi, out.estimate);
            }
            let mut touched = vec![ti];
            for (tid, gid, x) in shared {
                self.targets[tid].record(gid, x);
                if !touched.contains(&tid) {
                    touched.push(tid);
                }
            }
            for &tid in &touched {
                let t = &mut self.targets[tid];
                if tid == ti {
                    t.set_budget(cfg);
                }
                t.evaluate(cfg);
                if let Some(obs) = observer.as_mut() {
                    let (j, _) = t.join_estimate(cfg.eta);
                    obs(&RoundSnapshot {
                        set: t.set,
                        round: t.rounds,
                        join_estimate: j,
                        groups: t.snapshot(cfg.eta),
                    });
                }
            }
        }
    }

    fn results(&self, eta: f64) -> Vec<RqeResult> {
        self.targets.iter().map(|t| t.result(eta)).collect()
    }
}

fn check_target(q: &JoinQuery, set: RelSet) -> Result<()> {
    if set.is_empty() || !set.is_subset(q.all()) {
        return Err(Error::query(format!("{set} is not a non-empty subset of the query")));
    }
    if q.components(set).len() != 1 {
        return Err(Error::query(format!("{set} is not connected; estimate each component")));
    }
    Ok(())
}

/// Estimates `T_E` for one connected residual query.
pub fn rqe(db: &Database, q: &JoinQuery, set: RelSet, cfg: &SamplingConfig) -> Result<RqeResult> {
    rqe_observed(db, q, set, cfg, None)
}

/// [`rqe`] with a callback after every pruning round.
pub fn rqe_observed(
    db: &Database,
    q: &JoinQuery,
    set: RelSet,
    cfg: &SamplingConfig,
    observer: Option<&mut dyn FnMut(&RoundSnapshot)>,
) -> Result<RqeResult> {
    cfg.validate()?;
    check_target(q, set)?;
    let rels = query_relations(db, q)?;
    let mut engine = Engine::new(&rels, q, &[set], cfg, false)?;
    let mut observer = observer;
    engine.run(cfg, &mut observer);
    Ok(engine.results(cfg.eta).remove(0))
}

/// Walk-sharing estimation of several connected residual queries at once:
/// the largest active query walks, and each walk also updates the suffix
/// sub-queries it passes through.
pub fn improved_rqe(db: &Database, q: &JoinQuery, sets: &[RelSet], cfg: &SamplingConfig) -> Result<Vec<RqeResult>> {
    cfg.validate()?;
    for &s in sets {
        check_target(q, s)?;
    }
    let rels = query_relations(db, q)?;
    let mut engine = Engine::new(&rels, q, sets, cfg, true)?;
    engine.run(cfg, &mut None);
    Ok(engine.results(cfg.eta))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilteredResult {
    pub result: RqeResult,
    /// Unrestricted walks drawn before restricting.
    pub filter_walks: u64,
    pub candidates: usize,
    /// Every filter walk failed and the full group set was used.
    pub fell_back: bool,
}

impl FilteredResult {
    pub fn total_walks(&self) -> u64 {
        self.filter_walks + self.result.walks
    }
}

/// Draws `filter_walks` unrestricted walks, keeps only the groups those
/// walks succeeded through, and runs the pruning loop on that candidate set.
/// The join-size scale comes from the unrestricted walks.
pub fn rqe_with_filter(db: &Database, q: &JoinQuery, set: RelSet, cfg: &SamplingConfig) -> Result<FilteredResult> {
    cfg.validate()?;
    check_target(q, set)?;
    let rels = query_relations(db, q)?;
    let mut engine = Engine::new(&rels, q, &[set], cfg, false)?;
    let t = &mut engine.targets[0];
    let mut rng = target_rng(cfg.seed, set, 0, FILTER_STREAM);
    let f = cfg.filter_walks.max(1);
    let start_rel = t.walker.plan().start();
    let boundary = q.boundary_attributes(set);
    let group_cols: Vec<usize> = boundary.iter().filter(|c| c.rel == start_rel).map(|c| c.col).collect();
    let mut seen = vec![false; t.g];
    let mut sum = 0.0;
    for _ in 0..f {
        let out = t.walker.walk(StartSet::All, &mut rng);
        sum += out.estimate;
        if out.success {
            let row = t.walker.row(0, out.rows[0].expect("start bound"));
            let key: Vec<Value> = group_cols.iter().map(|&c| row[c].clone()).collect();
            if let Some(&gi) = t.index.get(&key) {
                seen[gi] = true;
            }
        }
    }
    let candidates = seen.iter().filter(|&&s| s).count();
    let fell_back = candidates == 0;
    if !fell_back {
        t.restrict(seen);
        t.g = candidates;
        t.j_fixed = Some((sum / f as f64, f));
    }
    engine.run(cfg, &mut None);
    let result = engine.results(cfg.eta).remove(0);
    Ok(FilteredResult {
        result,
        filter_walks: f,
        candidates: if fell_back { result_groups(&engine) } else { candidates },
        fell_back,
    })
}

fn result_groups(engine: &Engine) -> usize {
    engine.targets[0].g
}

/// Walk accounting for a sampled table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SamplingStats {
    pub walks: u64,
    pub converged: bool,
    pub residual_queries: usize,
}

/// Fills the maximum-boundary table for every residual subset, estimating
/// connected multi-relation components by sampling and single relations by
/// their exact maximum frequency.
pub fn sampled_table(db: &Database, q: &JoinQuery, cfg: &SamplingConfig) -> Result<(MaxBoundaryTable, SamplingStats)> {
    cfg.validate()?;
    let rels = query_relations(db, q)?;
    let sets: Vec<RelSet> = q.residual_set().into_iter().collect();
    let mut comps: Vec<RelSet> = sets
        .iter()
        .flat_map(|&e| q.components(e))
        .filter(|c| c.len() > 1)
        .collect();
    comps.sort();
    comps.dedup();
    let results: Vec<(RelSet, f64, f64, bool, u64, bool)> = match cfg.mode {
        Mode::Improved => improved_rqe(db, q, &comps, cfg)?
            .into_iter()
            .map(|r| (r.set, r.value, r.tau(), r.converged, r.walks, r.coarsened))
            .collect(),
        Mode::PerQuery => comps
            .par_iter()
            .map(|&c| rqe(db, q, c, cfg).map(|r| (r.set, r.value, r.tau(), r.converged, r.walks, r.coarsened)))
            .collect::<Result<_>>()?,
        Mode::WithFilter => comps
            .par_iter()
            .map(|&c| {
                rqe_with_filter(db, q, c, cfg).map(|f| {
                    let r = &f.result;
                    (r.set, r.value, r.tau(), r.converged, f.total_walks(), r.coarsened)
                })
            })
            .collect::<Result<_>>()?,
    };
    let sampled: HashMap<RelSet, (f64, f64, bool, u64, bool)> = results
        .into_iter()
        .map(|(s, v, t, c, w, co)| (s, (v, t, c, w, co)))
        .collect();
    let mut table = MaxBoundaryTable::new();
    let mut stats = SamplingStats {
        walks: sampled.values().map(|v| v.3).sum(),
        converged: sampled.values().all(|v| v.2),
        residual_queries: sampled.len(),
    };
    for e in sets {
        if e.is_empty() {
            continue;
        }
        let mut value = 1.0;
        let mut prov: Option<(f64, bool, u64, bool)> = None;
        for c in q.components(e) {
            if let Some(&(v, tau, conv, walks, co)) = sampled.get(&c) {
                value *= v;
                let p = prov.get_or_insert((0.0, true, 0, false));
                *p = (p.0.max(tau), p.1 && conv, p.2 + walks, p.3 || co);
            } else {
                let i = c.iter().next().expect("singleton");
                let cols: Vec<usize> = q.boundary_attributes(c).iter().map(|b| b.col).collect();
                value *= rels[i].max_frequency_cols(&cols) as f64;
            }
        }
        let provenance = match prov {
            Some((tau, converged, walks, coarsened)) => Provenance::Sampled {
                tau,
                converged,
                walks,
                coarsened,
            },
            None => Provenance::Exact,
        };
        table.insert(e, value, provenance);
    }
    stats.converged &= stats.residual_queries > 0 || stats.walks == 0;
    Ok((table, stats))
}

/// Residual sensitivity computed on an estimated (or any) table.
pub fn sensitivity_from_table(
    q: &JoinQuery,
    table: &MaxBoundaryTable,
    params: SmoothingParams,
    gs_cap: Option<f64>,
) -> Result<SensitivityReport> {
    smoothed_residual(q, table, params, gs_cap, Method::SamplingSe)
}

/// Sampling-based sensitivity: estimate the table, then smooth.
pub fn sampling_se(
    db: &Database,
    q: &JoinQuery,
    cfg: &SamplingConfig,
    params: SmoothingParams,
    gs_cap: Option<f64>,
) -> Result<SensitivityReport> {
    let (table, stats) = sampled_table(db, q, cfg)?;
    let mut report = sensitivity_from_table(q, &table, params, gs_cap)?;
    report.diagnostics.walks = Some(stats.walks);
    report.diagnostics.converged = Some(stats.converged);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{exact_join_count, exact_max_boundary, exact_table, grouped_counts};
    use crate::querymodel::QuerySpec;
    use crate::smoothbounds::residual_sensitivity;

    fn rel(name: &str, attrs: &[&str], rows: &[(i64, i64)]) -> Relation {
        Relation::from_rows(name, attrs, rows.iter().map(|&(a, b)| [Value::Int(a), Value::Int(b)])).unwrap()
    }

    /// The walk of the worked example: `a1` joins three `R2` tuples, the
    /// chosen one joins two `R3` tuples.
    fn fig3() -> (Database, JoinQuery) {
        let db = Database::new()
            .with(rel("R1", &["A", "B"], &[(1, 1)]))
            .with(rel("R2", &["B", "C"], &[(1, 10), (1, 11), (1, 12)]))
            .with(rel(
                "R3",
                &["C", "D"],
                &[(10, 0), (10, 1), (11, 0), (11, 1), (12, 0), (12, 1)],
            ));
        let q = QuerySpec::new(&["R1", "R2", "R3"])
            .join("R1.B", "R2.B")
            .join("R2.C", "R3.C")
            .all_private()
            .resolve(&db)
            .unwrap();
        (db, q)
    }

    fn skewed_chain(seed: u64) -> (Database, JoinQuery) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |n: usize, skew: bool| -> Vec<(i64, i64)> {
            (0..n)
                .map(|_| {
                    let a = rng.random_range(0..6);
                    let b = if skew && rng.random_bool(0.6) {
                        0
                    } else {
                        rng.random_range(0..6)
                    };
                    (a, b)
                })
                .collect()
        };
        let (a, b, c) = (r(30, true), r(30, false), r(30, false));
        let db = Database::new()
            .with(rel("R1", &["A", "B"], &a))
            .with(rel("R2", &["B", "C"], &b))
            .with(rel("R3", &["C", "D"], &c))
            .indexed();
        let q = QuerySpec::new(&["R1", "R2", "R3"])
            .join("R1.B", "R2.B")
            .join("R2.C", "R3.C")
            .all_private()
            .resolve(&db)
            .unwrap();
        (db, q)
    }

    #[test]
    fn tau_closed_form() {
        assert!((tau_bound(1000, 3, 0.05) - 0.066125).abs() < 5e-6);
        assert!(tau_bound(0, 3, 0.05).is_infinite());
        for m in 3..2000 {
            assert!(tau_bound(m + 1, 3, 0.05) < tau_bound(m, 3, 0.05));
        }
    }

    #[test]
    fn update_of_first_sample_is_the_sample() {
        let (c, t) = update_estimate(7.5, 1, 123.0, 2, 0.1).unwrap();
        assert_eq!(c, 7.5);
        assert_eq!(t, tau_bound(1, 2, 0.1));
        assert!(update_estimate(1.0, 0, 0.0, 1, 0.1).is_err());
        let (c, _) = update_estimate(4.0, 2, 2.0, 1, 0.1).unwrap();
        assert_eq!(c, 3.0);
    }

    #[test]
    fn worked_walk_estimates() {
        let (db, q) = fig3();
        let walker = Walker::new(&db, &q, q.walk_plan(q.all(), 0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = walker.walk(StartSet::All, &mut rng);
        assert!(out.success);
        assert_eq!(out.fanouts, [1, 3, 2]);
        assert_eq!(out.estimate, 6.0);
        // the sub-walk from R2 alone: one R2 tuple joined to R3
        let suffix_from_tuple: f64 = out.fanouts[2] as f64;
        assert_eq!(suffix_from_tuple, 2.0);
        // grouped by the entry value R2.B = 1, three tuples share it
        assert_eq!(walker.suffix_estimate(&out, 1), Some(6.0));
        assert_eq!(walker.suffix_estimate(&out, 2), Some(2.0));
    }

    #[test]
    fn dead_end_estimates_zero() {
        let db = Database::new()
            .with(rel("R1", &["A", "B"], &[(1, 1)]))
            .with(rel("R2", &["B", "C"], &[(1, 5)]))
            .with(rel("R3", &["C", "D"], &[(6, 0)]));
        let q = QuerySpec::new(&["R1", "R2", "R3"])
            .join("R1.B", "R2.B")
            .join("R2.C", "R3.C")
            .resolve(&db)
            .unwrap();
        let walker = Walker::new(&db, &q, q.walk_plan(q.all(), 0).unwrap()).unwrap();
        let out = walker.walk(StartSet::All, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(!out.success);
        assert_eq!(out.estimate, 0.0);
        assert_eq!(out.rows[2], None);
    }

    #[test]
    fn walk_mean_is_unbiased() {
        let (db, q) = skewed_chain(3);
        let exact = exact_join_count(&db, &q).unwrap() as f64;
        let walker = Walker::new(&db, &q, q.walk_plan(q.all(), 0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| walker.walk(StartSet::All, &mut rng).estimate).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} exact {exact} se {se}");
    }

    #[test]
    fn triangle_walks_are_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut edges = |name: &str, attrs: &[&str]| {
            let rows: Vec<(i64, i64)> = (0..40)
                .map(|_| (rng.random_range(0..4), rng.random_range(0..4)))
                .collect();
            rel(name, attrs, &rows)
        };
        let db = Database::new()
            .with(edges("E1", &["a", "b"]))
            .with(edges("E2", &["b", "c"]))
            .with(edges("E3", &["c", "a"]));
        let q = QuerySpec::new(&["E1", "E2", "E3"])
            .join("E1.b", "E2.b")
            .join("E2.c", "E3.c")
            .join("E3.a", "E1.a")
            .resolve(&db)
            .unwrap();
        let exact = exact_join_count(&db, &q).unwrap() as f64;
        let walker = Walker::new(&db, &q, q.walk_plan(q.all(), 0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| walker.walk(StartSet::All, &mut rng).estimate).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - exact).abs() <= 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn deterministic_walks_converge_to_truth_plus_tau() {
        // key-key chain: every value joins exactly one tuple
        let rows: Vec<(i64, i64)> = (0..5).map(|i| (i, i)).collect();
        let db = Database::new()
            .with(rel("R1", &["A", "B"], &rows))
            .with(rel("R2", &["B", "C"], &rows))
            .with(rel("R3", &["C", "D"], &rows));
        let q = QuerySpec::new(&["R1", "R2", "R3"])
            .join("R1.B", "R2.B")
            .join("R2.C", "R3.C")
            .all_private()
            .resolve(&db)
            .unwrap();
        let cfg = SamplingConfig {
            tau0: Tolerance::Normalized(0.2),
            ..SamplingConfig::default()
        };
        let set = RelSet::of(&[0, 1]);
        let r = rqe(&db, &q, set, &cfg).unwrap();
        assert!(r.converged);
        let truth = exact_max_boundary(&db, &q, set).unwrap() as f64;
        let leader = &r.groups[r.leader().unwrap()];
        assert_eq!(leader.mean, truth);
        assert_eq!(r.value, truth + leader.half_width);
    }

    #[test]
    fn small_group_is_pruned() {
        let mut r1: Vec<(i64, i64)> = (0..100).map(|i| (i, 1)).collect();
        r1.push((0, 2));
        let db = Database::new()
            .with(rel("R1", &["A", "B"], &r1))
            .with(rel("R2", &["B", "C"], &[(1, 7), (2, 8)]));
        let q = QuerySpec::new(&["R1", "R2"])
            .join("R1.B", "R2.B")
            .all_private()
            .resolve(&db)
            .unwrap();
        let cfg = SamplingConfig {
            tau0: Tolerance::Normalized(0.05),
            ..SamplingConfig::default()
        };
        // E = {R1} grouped by R1.B: one walk per group is exact, so the
        // single-tuple group drops out as soon as intervals separate
        let r = rqe(&db, &q, RelSet::single(0), &cfg).unwrap();
        assert_eq!(r.groups.len(), 2);
        assert!(r.removed.iter().any(|&(_, g)| r.groups[g].key == vec![Value::Int(2)]));
        assert!(r.groups.iter().find(|g| g.key == vec![Value::Int(1)]).unwrap().active);
        assert!(r.value >= 100.0);
    }

    #[test]
    fn removed_groups_stay_removed() {
        let (db, q) = skewed_chain(8);
        let cfg = SamplingConfig {
            tau0: Tolerance::Normalized(0.05),
            seed: 4,
            ..SamplingConfig::default()
        };
        let mut seen_inactive: Vec<bool> = Vec::new();
        let mut ok = true;
        let mut obs = |s: &RoundSnapshot| {
            if seen_inactive.is_empty() {
                seen_inactive = vec![false; s.groups.len()];
            }
            for (i, g) in s.groups.iter().enumerate() {
                if seen_inactive[i] && g.active {
                    ok = false;
                }
                seen_inactive[i] |= !g.active;
            }
        };
        rqe_observed(&db, &q, RelSet::of(&[0, 1]), &cfg, Some(&mut obs)).unwrap();
        assert!(ok);
    }

    #[test]
    fn improved_single_set_matches_rqe() {
        let (db, q) = skewed_chain(9);
        let cfg = SamplingConfig {
            tau0: Tolerance::Normalized(0.05),
            seed: 21,
            ..SamplingConfig::default()
        };
        let set = RelSet::of(&[1, 2]);
        let a = rqe(&db, &q, set, &cfg).unwrap();
        let b = improved_rqe(&db, &q, &[set], &cfg).unwrap().remove(0);
        assert_eq!(a, b);
    }

    #[test]
    fn shared_walks_feed_suffix_queries() {
        let (db, q) = fig3();
        let cfg = SamplingConfig {
            tau0: Tolerance::Normalized(0.3),
            ..SamplingConfig::default()
        };
        // {R1,R2,R3} is not a residual query, but {R2,R3} is fed by walks of {R1,R2,R3}
        let sets = [q.all(), RelSet::of(&[1, 2])];
        let rels = query_relations(&db, &q).unwrap();
        let engine = Engine::new(&rels, &q, &sets, &cfg, true).unwrap();
        assert_eq!(engine.targets[0].shares, vec![(1, 1)]);
        let res = improved_rqe(&db, &q, &sets, &cfg).unwrap();
        assert!(res[1].samples > res[1].walks);
    }

    #[test]
    fn filter_saturated_matches_groups() {
        let (db, q) = skewed_chain(10);
        let set = RelSet::of(&[0, 1]);
        let cfg = SamplingConfig {
            tau0: Tolerance::Normalized(0.05),
            filter_walks: 5000,
            seed: 3,
            ..SamplingConfig::default()
        };
        let f = rqe_with_filter(&db, &q, set, &cfg).unwrap();
        let nonzero = grouped_counts(&db, &q, set, &q.boundary_attributes(set))
            .unwrap()
            .values()
            .filter(|&&c| c > 0)
            .count();
        assert_eq!(f.candidates, nonzero);
        assert!(f.result.value >= exact_max_boundary(&db, &q, set).unwrap() as f64);
    }

    #[test]
    fn exact_table_plumbing_identity() {
        let (db, q) = skewed_chain(12);
        let t = exact_table(&db, &q).unwrap();
        let p = SmoothingParams::laplace(0.8, 1e-7).unwrap();
        let a = residual_sensitivity(&q, &t, p, None).unwrap();
        let b = sensitivity_from_table(&q, &t, p, None).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.k_star, b.k_star);
        assert_eq!(b.method, Method::SamplingSe);
    }

    #[test]
    fn sampling_se_usually_covers_rs() {
        let (db, q) = skewed_chain(13);
        let p = SmoothingParams::laplace(0.8, 1e-7).unwrap();
        let rs = residual_sensitivity(&q, &exact_table(&db, &q).unwrap(), p, None)
            .unwrap()
            .value;
        let runs = 40;
        let mut below = 0;
        for seed in 0..runs {
            let cfg = SamplingConfig {
                tau0: Tolerance::Normalized(0.1),
                seed,
                ..SamplingConfig::default()
            };
            let r = sampling_se(&db, &q, &cfg, p, None).unwrap();
            assert_eq!(r.diagnostics.converged, Some(true));
            if r.value < rs {
                below += 1;
            }
        }
        assert!(below as f64 <= 0.05 * runs as f64 + 3.0 * (0.05f64 * 0.95 * runs as f64).sqrt());
    }

    #[test]
    fn sample_rate_budget_stops_early() {
        let (db, q) = skewed_chain(14);
        let base = SamplingConfig {
            tau0: Tolerance::Normalized(1e-4),
            seed: 2,
            mode: Mode::PerQuery,
            ..SamplingConfig::default()
        };
        let set = RelSet::of(&[0, 1]);
        let small = rqe(
            &db,
            &q,
            set,
            &SamplingConfig {
                sample_rate: Some(0.01),
                ..base.clone()
            },
        )
        .unwrap();
        let large = rqe(
            &db,
            &q,
            set,
            &SamplingConfig {
                sample_rate: Some(1.0),
                ..base
            },
        )
        .unwrap();
        assert!(small.walks < large.walks);
        assert!(small.converged && large.converged);
    }

    #[test]
    fn walk_cap_flags_non_convergence() {
        let (db, q) = skewed_chain(15);
        let cfg = SamplingConfig {
            tau0: Tolerance::Normalized(1e-6),
            walk_cap: 500,
            ..SamplingConfig::default()
        };
        let r = rqe(&db, &q, RelSet::of(&[0, 1]), &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.value >= exact_max_boundary(&db, &q, RelSet::of(&[0, 1])).unwrap() as f64 * 0.5);
    }

    #[test]
    fn config_validation() {
        let bad = SamplingConfig {
            eta: 0.0,
            ..SamplingConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(Mode::parse("with-filter").unwrap(), Mode::WithFilter);
        assert!(Mode::parse("bogus").is_err());
    }
}
