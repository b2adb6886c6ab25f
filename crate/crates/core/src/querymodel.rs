//! Multi-way equi-join counting queries.
//!
//! A [`QuerySpec`] is the serialized form (relation names and dotted
//! attribute references). Resolving it against a [`Database`] yields a
//! [`JoinQuery`] whose predicates refer to column positions. Relation subsets
//! are [`RelSet`] bitmasks over the query's relation order.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::relstore::{Database, Relation};

/// A subset of the query's relations, as a bitmask over relation positions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelSet(pub u64);

impl RelSet {
    pub const EMPTY: RelSet = RelSet(0);

    pub fn full(n: usize) -> RelSet {
        assert!(n <= 64, "at most 64 relations");
        if n == 64 {
            RelSet(u64::MAX)
        } else {
            RelSet((1u64 << n) - 1)
        }
    }

    pub fn single(i: usize) -> RelSet {
        RelSet(1 << i)
    }

    pub fn of(items: &[usize]) -> RelSet {
        items.iter().fold(RelSet::EMPTY, |s, &i| s.with(i))
    }

    pub fn contains(self, i: usize) -> bool {
        i < 64 && self.0 & (1 << i) != 0
    }

    pub fn with(self, i: usize) -> RelSet {
        RelSet(self.0 | (1 << i))
    }

    pub fn without(self, i: usize) -> RelSet {
        RelSet(self.0 & !(1 << i))
    }

    pub fn union(self, o: RelSet) -> RelSet {
        RelSet(self.0 | o.0)
    }

    pub fn intersect(self, o: RelSet) -> RelSet {
        RelSet(self.0 & o.0)
    }

    pub fn minus(self, o: RelSet) -> RelSet {
        RelSet(self.0 & !o.0)
    }

    pub fn is_subset(self, o: RelSet) -> bool {
        self.0 & !o.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    /// Every subset, including the empty set and `self`.
    pub fn subsets(self) -> impl Iterator<Item = RelSet> {
        let full = self.0;
        let mut sub = full;
        let mut done = false;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            let out = RelSet(sub);
            if sub == 0 {
                done = true;
            } else {
                sub = (sub - 1) & full;
            }
            Some(out)
        })
    }
}

impl fmt::Display for RelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

/// A `Relation.attribute` reference.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeRef {
    pub relation: String,
    pub attribute: String,
}

impl AttributeRef {
    pub fn parse(dotted: &str) -> Result<Self> {
        let (r, a) = dotted.split_once('.').ok_or_else(|| {
            Error::query(format!(
                "attribute reference `{dotted}` is not of the form Relation.attribute"
            ))
        })?;
        if r.is_empty() || a.is_empty() {
            return Err(Error::query(format!("malformed attribute reference `{dotted}`")));
        }
        Ok(AttributeRef {
            relation: r.to_string(),
            attribute: a.to_string(),
        })
    }
}

impl fmt::Display for AttributeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.relation, self.attribute)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateSpec {
    pub left: String,
    pub right: String,
}

/// Serialized query: `{"relations": [...], "predicates": [{"left": "R1.B", "right": "R2.B"}], "private": [...]}`.
///
/// `keys` optionally lists attributes that are unique in their relation
/// (primary keys); maximum-boundary computation uses them to reduce
/// key/foreign-key residual queries to single-relation frequencies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub relations: Vec<String>,
    #[serde(default)]
    pub predicates: Vec<PredicateSpec>,
    #[serde(default)]
    pub private: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keys: Vec<String>,
}

impl QuerySpec {
    pub fn new<S: AsRef<str>>(relations: &[S]) -> Self {
        QuerySpec {
            relations: relations.iter().map(|s| s.as_ref().to_string()).collect(),
            predicates: Vec::new(),
            private: Vec::new(),
            keys: Vec::new(),
        }
    }

    pub fn join(mut self, left: &str, right: &str) -> Self {
        self.predicates.push(PredicateSpec {
            left: left.into(),
            right: right.into(),
        });
        self
    }

    pub fn private<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.private = names.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    /// Marks every relation private.
    pub fn all_private(mut self) -> Self {
        self.private = self.relations.clone();
        self
    }

    pub fn key(mut self, attr: &str) -> Self {
        self.keys.push(attr.into());
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("query spec serializes")
    }

    /// Resolves names against the database schema.
    pub fn resolve(&self, db: &Database) -> Result<JoinQuery> {
        JoinQuery::resolve(self, db)
    }
}

/// A resolved column: relation position in the query and column position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Col {
    pub rel: usize,
    pub col: usize,
}

impl Col {
    pub fn new(rel: usize, col: usize) -> Self {
        Col { rel, col }
    }
}

/// An equi-join predicate between two distinct relations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub left: Col,
    pub right: Col,
}

impl Predicate {
    /// The endpoint on `rel`, if the predicate touches it.
    pub fn side(&self, rel: usize) -> Option<Col> {
        if self.left.rel == rel {
            Some(self.left)
        } else if self.right.rel == rel {
            Some(self.right)
        } else {
            None
        }
    }

    /// The endpoint opposite to `rel`.
    pub fn other(&self, rel: usize) -> Option<Col> {
        if self.left.rel == rel {
            Some(self.right)
        } else if self.right.rel == rel {
            Some(self.left)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryKind {
    Chain,
    Acyclic,
    Cyclic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GraphSummary {
    pub kind: QueryKind,
    pub relations: usize,
    pub predicates: usize,
    pub private: usize,
}

/// `COUNT(*)` over the equi-join of `relations`, with a private subset.
#[derive(Clone, Debug)]
pub struct JoinQuery {
    relations: Vec<String>,
    attributes: Vec<Vec<String>>,
    predicates: Vec<Predicate>,
    private: RelSet,
    keys: BTreeSet<Col>,
    adjacency: Vec<Vec<usize>>,
    fingerprint: String,
}

impl JoinQuery {
    pub fn resolve(spec: &QuerySpec, db: &Database) -> Result<Self> {
        if spec.relations.is_empty() {
            return Err(Error::query("empty relation list"));
        }
        if spec.relations.len() > 64 {
            return Err(Error::query("at most 64 relations are supported"));
        }
        let mut attributes = Vec::with_capacity(spec.relations.len());
        for (i, name) in spec.relations.iter().enumerate() {
            if spec.relations[..i].contains(name) {
                return Err(Error::query(format!("relation {name} listed twice")));
            }
            attributes.push(db.get(name)?.attributes().to_vec());
        }
        let position = |name: &str| {
            spec.relations
                .iter()
                .position(|r| r == name)
                .ok_or_else(|| Error::query(format!("relation {name} is not part of the query")))
        };
        let resolve_col = |dotted: &str| -> Result<Col> {
            let a = AttributeRef::parse(dotted)?;
            let rel = position(&a.relation)?;
            let col = attributes[rel]
                .iter()
                .position(|x| *x == a.attribute)
                .ok_or_else(|| Error::query(format!("dangling attribute {a}")))?;
            Ok(Col { rel, col })
        };
        let mut predicates = Vec::with_capacity(spec.predicates.len());
        for p in &spec.predicates {
            let (left, right) = (resolve_col(&p.left)?, resolve_col(&p.right)?);
            if left.rel == right.rel {
                return Err(Error::query(format!(
                    "predicate {} = {} joins a relation with itself",
                    p.left, p.right
                )));
            }
            predicates.push(Predicate { left, right });
        }
        let mut private = RelSet::EMPTY;
        for name in &spec.private {
            private = private.with(position(name)?);
        }
        let keys = spec
            .keys
            .iter()
            .map(|k| resolve_col(k))
            .collect::<Result<BTreeSet<_>>>()?;
        Ok(Self::from_parts(
            spec.relations.clone(),
            attributes,
            predicates,
            private,
            keys,
        ))
    }

    fn from_parts(
        relations: Vec<String>,
        attributes: Vec<Vec<String>>,
        predicates: Vec<Predicate>,
        private: RelSet,
        keys: BTreeSet<Col>,
    ) -> Self {
        let mut adjacency = vec![Vec::new(); relations.len()];
        for (k, p) in predicates.iter().enumerate() {
            adjacency[p.left.rel].push(k);
            adjacency[p.right.rel].push(k);
        }
        let mut q = JoinQuery {
            relations,
            attributes,
            predicates,
            private,
            keys,
            adjacency,
            fingerprint: String::new(),
        };
        q.fingerprint = q.compute_fingerprint();
        q
    }

    /// Copy of the query with a different private set.
    pub fn with_private(&self, private: RelSet) -> Self {
        let mut q = self.clone();
        q.private = private.intersect(RelSet::full(self.n()));
        q
    }

    pub fn n(&self) -> usize {
        self.relations.len()
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }

    pub fn relation_name(&self, i: usize) -> &str {
        &self.relations[i]
    }

    pub fn attribute_name(&self, c: Col) -> String {
        format!("{}.{}", self.relations[c.rel], self.attributes[c.rel][c.col])
    }

    pub fn attributes(&self, i: usize) -> &[String] {
        &self.attributes[i]
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    pub fn private(&self) -> RelSet {
        self.private
    }

    pub fn all(&self) -> RelSet {
        RelSet::full(self.n())
    }

    pub fn keys(&self) -> &BTreeSet<Col> {
        &self.keys
    }

    /// Predicate ids touching relation `i`.
    pub fn incident(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn relation<'a>(&self, db: &'a Database, i: usize) -> Result<&'a Relation> {
        db.get(&self.relations[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name)
    }

    /// Columns of relation `i` that appear in some predicate (`JA(R_i)`).
    pub fn join_columns(&self, i: usize) -> Vec<Col> {
        let mut cols: Vec<Col> = self.adjacency[i]
            .iter()
            .filter_map(|&k| self.predicates[k].side(i))
            .collect();
        cols.sort();
        cols.dedup();
        cols
    }

    /// Checks connectivity and classifies the join graph.
    pub fn validate(&self) -> Result<GraphSummary> {
        if self.n() == 0 {
            return Err(Error::query("empty relation list"));
        }
        if self.components(self.all()).len() != 1 {
            return Err(Error::query("join graph is disconnected"));
        }
        let tree = self.predicates.len() == self.n() - 1;
        let max_degree = self.adjacency.iter().map(Vec::len).max().unwrap_or(0);
        let kind = match (tree, max_degree <= 2) {
            (true, true) => QueryKind::Chain,
            (true, false) => QueryKind::Acyclic,
            (false, _) => QueryKind::Cyclic,
        };
        Ok(GraphSummary {
            kind,
            relations: self.n(),
            predicates: self.predicates.len(),
            private: self.private.len(),
        })
    }

    /// Connected components of the subgraph induced by `set`, each sorted by
    /// lowest relation index.
    pub fn components(&self, set: RelSet) -> Vec<RelSet> {
        let mut seen = RelSet::EMPTY;
        let mut out = Vec::new();
        for start in set.iter() {
            if seen.contains(start) {
                continue;
            }
            let mut comp = RelSet::single(start);
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &k in &self.adjacency[u] {
                    let v = self.predicates[k].other(u).expect("incident").rel;
                    if set.contains(v) && !comp.contains(v) {
                        comp = comp.with(v);
                        queue.push_back(v);
                    }
                }
            }
            seen = seen.union(comp);
            out.push(comp);
        }
        out
    }

    /// Predicates with both endpoints inside `set`.
    pub fn internal_predicates(&self, set: RelSet) -> Vec<usize> {
        (0..self.predicates.len())
            .filter(|&k| {
                let p = &self.predicates[k];
                set.contains(p.left.rel) && set.contains(p.right.rel)
            })
            .collect()
    }

    /// Attributes of relations in `set` joined to relations outside it, sorted.
    pub fn boundary_attributes(&self, set: RelSet) -> Vec<Col> {
        let mut out: Vec<Col> = Vec::new();
        for p in &self.predicates {
            for (inside, outside) in [(p.left, p.right), (p.right, p.left)] {
                if set.contains(inside.rel) && !set.contains(outside.rel) {
                    out.push(inside);
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// `(i, E)` for every private `i` and every `E ⊆ [n] − {i}`.
    pub fn residual_pairs(&self) -> Vec<(usize, RelSet)> {
        let all = self.all();
        self.private
            .iter()
            .flat_map(|i| all.without(i).subsets().map(move |e| (i, e)))
            .collect()
    }

    /// Distinct residual subsets needed across all private relations.
    pub fn residual_set(&self) -> BTreeSet<RelSet> {
        self.residual_pairs().into_iter().map(|(_, e)| e).collect()
    }

    /// BFS traversal plan over `set` from `start`. Tree predicates become
    /// walk steps, every other internal predicate a check.
    pub fn walk_plan(&self, set: RelSet, start: usize) -> Result<WalkPlan> {
        if !set.contains(start) {
            return Err(Error::query(format!("start relation {start} not in {set}")));
        }
        let mut order = vec![start];
        let mut position = vec![usize::MAX; self.n()];
        position[start] = 0;
        let mut steps = Vec::new();
        let mut tree_edges = BTreeSet::new();
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &k in &self.adjacency[u] {
                let p = &self.predicates[k];
                let from = p.side(u).expect("incident");
                let to = p.other(u).expect("incident");
                if set.contains(to.rel) && position[to.rel] == usize::MAX {
                    position[to.rel] = order.len();
                    order.push(to.rel);
                    tree_edges.insert(k);
                    steps.push(WalkStep {
                        relation: to.rel,
                        parent: position[u],
                        from,
                        to,
                        predicate: k,
                    });
                }
            }
        }
        if order.len() != set.len() {
            return Err(Error::query(format!(
                "relations {set} are not connected from {start}; plan each component separately"
            )));
        }
        let checks = self
            .internal_predicates(set)
            .into_iter()
            .filter(|k| !tree_edges.contains(k))
            .map(|k| {
                let p = self.predicates[k];
                let (a, b) = (position[p.left.rel], position[p.right.rel]);
                CheckEdge {
                    predicate: k,
                    left: p.left,
                    right: p.right,
                    left_pos: a,
                    right_pos: b,
                    ready_at: a.max(b),
                }
            })
            .collect();
        Ok(WalkPlan {
            relations: set,
            order,
            position,
            steps,
            checks,
        })
    }

    /// Stable digest of relations, schemas and predicate order. Sketch
    /// families are keyed by predicate position, so two queries with the same
    /// fingerprint share them.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, attrs) in self.relations.iter().zip(&self.attributes) {
            h.update(name.as_bytes());
            h.update(b"(");
            h.update(attrs.join(",").as_bytes());
            h.update(b");");
        }
        for p in &self.predicates {
            h.update(format!("{}={};", self.attribute_name(p.left), self.attribute_name(p.right)).as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// One traversal step: bind `relation` through `predicate`, matching the
/// already-bound `from` column against `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkStep {
    pub relation: usize,
    /// Position in the plan order of the relation holding `from`.
    pub parent: usize,
    pub from: Col,
    pub to: Col,
    pub predicate: usize,
}

/// A non-tree predicate verified once both sides are bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckEdge {
    pub predicate: usize,
    pub left: Col,
    pub right: Col,
    pub left_pos: usize,
    pub right_pos: usize,
    /// Plan position after which the check can be evaluated.
    pub ready_at: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkPlan {
    pub relations: RelSet,
    /// Relations in traversal order; `order[0]` is the start.
    pub order: Vec<usize>,
    /// Plan position by relation index (`usize::MAX` outside the plan).
    pub position: Vec<usize>,
    /// `steps[p - 1]` binds `order[p]`.
    pub steps: Vec<WalkStep>,
    pub checks: Vec<CheckEdge>,
}

impl WalkPlan {
    pub fn start(&self) -> usize {
        self.order[0]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}
