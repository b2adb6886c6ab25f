//! Brute-force local sensitivity at distance k on a desk-scale instance,
//! compared with the residual bound that upper-bounds it.
//!
//! ```text
//! cargo run --example local_sensitivity_oracle
//! ```

use joinsens::exact::{exact_table, local_sensitivity_at_k_oracle, local_sensitivity_by_pivot, InsertionDomain};
use joinsens::smoothbounds::residual_ls_at_k;
use joinsens::{Database, QuerySpec, Relation, Value};

fn rel(name: &str, attrs: &[&str], rows: &[(i64, i64)]) -> Relation {
    Relation::from_rows(name, attrs, rows.iter().map(|&(a, b)| [Value::Int(a), Value::Int(b)])).unwrap()
}

fn main() -> joinsens::Result<()> {
    let db = Database::new()
        .with(rel("R1", &["A", "B"], &[(1, 1), (2, 1), (3, 2)]))
        .with(rel("R2", &["B", "C"], &[(1, 1), (2, 1)]))
        .with(rel("R3", &["C", "D"], &[(1, 5), (2, 5)]))
        .indexed();
    let q = QuerySpec::new(&["R1", "R2", "R3"])
        .join("R1.B", "R2.B")
        .join("R2.C", "R3.C")
        .all_private()
        .resolve(&db)?;

    let domain = InsertionDomain::active(&db, &q)?;
    for i in 0..q.n() {
        println!("{}: {} candidate insertions", q.relation_name(i), domain.size(i));
    }
    println!("LS via pivots {}", local_sensitivity_by_pivot(&db, &q)?);

    let table = exact_table(&db, &q)?;
    println!("{:>3} {:>8} {:>8}", "k", "oracle", "RS");
    for k in 0..3 {
        let oracle = local_sensitivity_at_k_oracle(&db, &q, &domain, k, 1 << 26)?;
        println!("{k:>3} {oracle:>8} {:>8}", residual_ls_at_k(&q, &table, k)?);
    }
    Ok(())
}
