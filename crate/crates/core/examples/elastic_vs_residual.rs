//! Elastic and residual sensitivity of a three-way chain, next to the true
//! local sensitivity.
//!
//! ```text
//! cargo run --example elastic_vs_residual
//! ```

use joinsens::exact::{exact_join_count, exact_table, local_sensitivity_oracle, InsertionDomain};
use joinsens::smoothbounds::{
    elastic_ls_at_k, elastic_sensitivity, elastic_stats, residual_ls_at_k, residual_sensitivity, SmoothingParams,
};
use joinsens::{Database, QuerySpec, Relation, Value};

fn rel(name: &str, attrs: &[&str], rows: &[(i64, i64)]) -> Relation {
    Relation::from_rows(name, attrs, rows.iter().map(|&(a, b)| [Value::Int(a), Value::Int(b)])).unwrap()
}

fn main() -> joinsens::Result<()> {
    let db = Database::new()
        .with(rel("R1", &["A", "B"], &[(1, 1), (2, 1), (3, 1), (4, 2)]))
        .with(rel("R2", &["B", "C"], &[(1, 1), (1, 2), (2, 2), (2, 3)]))
        .with(rel("R3", &["C", "D"], &[(1, 9), (2, 9), (2, 8), (3, 7)]))
        .indexed();
    let q = QuerySpec::new(&["R1", "R2", "R3"])
        .join("R1.B", "R2.B")
        .join("R2.C", "R3.C")
        .all_private()
        .resolve(&db)?;

    let stats = elastic_stats(&db, &q)?;
    let table = exact_table(&db, &q)?;
    println!("join size {}", exact_join_count(&db, &q)?);
    println!("{:>3} {:>10} {:>10}", "k", "ES LS^k", "RS LS^k");
    for k in 0..6 {
        println!(
            "{k:>3} {:>10} {:>10}",
            elastic_ls_at_k(&q, &stats, k)?,
            residual_ls_at_k(&q, &table, k)?
        );
    }

    let ls = local_sensitivity_oracle(&db, &q, &InsertionDomain::active(&db, &q)?, 1 << 20)?;
    let params = SmoothingParams::laplace(1.0, 1e-6)?;
    let es = elastic_sensitivity(&q, &stats, params)?;
    let rs = residual_sensitivity(&q, &table, params, None)?;
    println!("local sensitivity {ls}");
    println!("smooth ES {:.3} (k* = {})", es.value, es.k_star);
    println!("smooth RS {:.3} (k* = {})", rs.value, rs.k_star);
    Ok(())
}
