//! AGMS sketches per relation: join-size estimates and the sketch-based
//! sensitivity bound, against the exact answer and residual sensitivity.
//!
//! ```text
//! cargo run --release --example sketch_se
//! ```

use joinsens::exact::{exact_join_count, exact_table};
use joinsens::harness::{generate, shipped_query, GenParams};
use joinsens::sketchse::{estimate_join, sketching_sensitivity, SketchParams, SketchSet};
use joinsens::smoothbounds::{residual_sensitivity, SmoothingParams};
use joinsens::Database;

fn main() -> joinsens::Result<()> {
    let mut db = Database::new();
    for r in generate(&GenParams {
        size: 20_000,
        relations: 3,
        ..GenParams::default()
    })? {
        db.insert(r);
    }
    let db = db.indexed();
    let q = shipped_query("chain3")?.resolve(&db)?;
    let params = SmoothingParams::laplace(0.8, 1e-7)?;
    println!("exact join size {}", exact_join_count(&db, &q)?);
    println!(
        "RS {:.4e}",
        residual_sensitivity(&q, &exact_table(&db, &q)?, params, None)?.value
    );

    for s1 in [100, 1000, 10_000] {
        let set = SketchSet::build(
            &db,
            &q,
            SketchParams {
                s1,
                ..SketchParams::default()
            },
            7,
        )?;
        let est = estimate_join(&set.sketches.iter().collect::<Vec<_>>())?;
        let sks = sketching_sensitivity(&set, &q, params)?;
        println!(
            "s1 {s1:>6}: join estimate {est:.4e}, SKS {:.4e} (k* = {})",
            sks.value, sks.k_star
        );
    }
    Ok(())
}
