//! Sampling-based residual sensitivity on a skewed chain: the estimated
//! maximum-boundary table against the exact one.
//!
//! ```text
//! cargo run --release --example sampling_se
//! ```

use joinsens::exact::exact_table;
use joinsens::harness::{generate, shipped_query, GenParams};
use joinsens::samplingse::{sampled_table, sensitivity_from_table, SamplingConfig, Tolerance};
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

    let exact = exact_table(&db, &q)?;
    let cfg = SamplingConfig {
        tau0: Tolerance::Normalized(0.01),
        seed: 1,
        ..SamplingConfig::default()
    };
    let (est, stats) = sampled_table(&db, &q, &cfg)?;
    println!("{} walks, converged {}", stats.walks, stats.converged);
    println!("{:<12} {:>12} {:>14}", "set", "exact", "estimate");
    for (set, e) in exact.iter() {
        println!("{:<12} {:>12} {:>14.1}", set.to_string(), e.value, est.value(set)?);
    }

    let params = SmoothingParams::laplace(0.8, 1e-7)?;
    println!(
        "RS          {:.4e}",
        residual_sensitivity(&q, &exact, params, None)?.value
    );
    println!(
        "Sampling-SE {:.4e}",
        sensitivity_from_table(&q, &est, params, None)?.value
    );
    Ok(())
}
