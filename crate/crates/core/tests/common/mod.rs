#![allow(dead_code)]

use joinsens::exact::InsertionDomain;
use joinsens::harness::{generate, GenParams};
use joinsens::{Database, JoinQuery, QuerySpec, Relation, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel(name: &str, attrs: &[&str], rows: &[(i64, i64)]) -> Relation {
    Relation::from_rows(name, attrs, rows.iter().map(|&(a, b)| [Value::Int(a), Value::Int(b)])).unwrap()
}

pub fn chain_db(r1: &[(i64, i64)], r2: &[(i64, i64)], r3: &[(i64, i64)]) -> Database {
    Database::new()
        .with(rel("R1", &["A", "B"], r1))
        .with(rel("R2", &["B", "C"], r2))
        .with(rel("R3", &["C", "D"], r3))
        .indexed()
}

/// `R1(A,B) ⋈ R2(B,C) ⋈ R3(C,D)` with the given private relations.
pub fn chain_query(db: &Database, private: &[&str]) -> JoinQuery {
    QuerySpec::new(&["R1", "R2", "R3"])
        .join("R1.B", "R2.B")
        .join("R2.C", "R3.C")
        .private(private)
        .resolve(db)
        .unwrap()
}

/// A random 3-chain with 1..=`max_rows` rows per relation over `0..domain`.
pub fn tiny_chain(seed: u64, max_rows: usize, domain: i64) -> Database {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = || -> Vec<(i64, i64)> {
        let n = rng.random_range(1..=max_rows);
        (0..n)
            .map(|_| (rng.random_range(0..domain), rng.random_range(0..domain)))
            .collect()
    };
    let (a, b, c) = (rows(), rows(), rows());
    chain_db(&a, &b, &c)
}

/// Fixed skewed chain. Grouped by `R2.B`, `{R2, R3}` has counts
/// 7, 6, 4 and 3: the two largest groups are close and the leader's walks
/// have high variance.
pub fn skewed_chain() -> Database {
    chain_db(
        &[(1, 1), (2, 1), (3, 2), (4, 3), (5, 4)],
        &[(1, 1), (1, 3), (1, 3), (1, 3), (2, 1), (2, 2), (3, 2), (3, 3), (4, 1)],
        &[(1, 0), (1, 1), (1, 2), (1, 3), (2, 0), (2, 1), (3, 0)],
    )
}

/// Generated Zipf edge relations `R1..R{relations}(from, to)`, indexed.
pub fn zipf_db(size: usize, relations: usize, seed: u64) -> Database {
    let mut db = Database::new();
    for r in generate(&GenParams {
        size,
        skew: 1.5,
        relations,
        seed,
        ..GenParams::default()
    })
    .unwrap()
    {
        db.insert(r);
    }
    db.indexed()
}

/// Every database one deletion or one candidate insertion away from `db`,
/// on the private relations of `q`.
pub fn neighbours(db: &Database, q: &JoinQuery) -> Vec<Database> {
    let dom = InsertionDomain::active(db, q).unwrap();
    let mut out = Vec::new();
    for i in q.private().iter() {
        let rel = q.relation(db, i).unwrap();
        let attrs: Vec<&str> = rel.attributes().iter().map(String::as_str).collect();
        let rows: Vec<Vec<Value>> = rel.rows().map(<[Value]>::to_vec).collect();
        let mut with = |v: Vec<Vec<Value>>| {
            let mut d = db.clone();
            d.insert(Relation::from_rows(rel.name(), &attrs, v).unwrap().build_all_indexes());
            out.push(d);
        };
        for r in 0..rows.len() {
            let mut v = rows.clone();
            v.remove(r);
            with(v);
        }
        for t in dom.tuples(i) {
            let mut v = rows.clone();
            v.push(t);
            with(v);
        }
    }
    out
}

pub fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
