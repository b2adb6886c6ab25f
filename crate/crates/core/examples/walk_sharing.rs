//! Walks needed to estimate every residual query of a four-way chain, with
//! each query sampled on its own, with sub-walks shared between queries, and
//! with a filtering pass before group pruning.
//!
//! ```text
//! cargo run --release --example walk_sharing
//! ```

use joinsens::harness::{generate, shipped_query, GenParams};
use joinsens::samplingse::{rqe, rqe_with_filter, sampled_table, Mode, SamplingConfig, Tolerance};
use joinsens::{Database, RelSet};

fn main() -> joinsens::Result<()> {
    let mut db = Database::new();
    for r in generate(&GenParams {
        size: 20_000,
        relations: 4,
        ..GenParams::default()
    })? {
        db.insert(r);
    }
    let db = db.indexed();
    let q = shipped_query("chain4")?.resolve(&db)?;

    for mode in [Mode::PerQuery, Mode::Improved] {
        let cfg = SamplingConfig {
            tau0: Tolerance::Normalized(0.05),
            mode,
            seed: 3,
            ..SamplingConfig::default()
        };
        let (_, stats) = sampled_table(&db, &q, &cfg)?;
        println!(
            "{mode:?}: {} walks over {} residual queries",
            stats.walks, stats.residual_queries
        );
    }

    let set = RelSet::of(&[1, 2, 3]);
    let cfg = SamplingConfig {
        tau0: Tolerance::Normalized(0.02),
        mode: Mode::PerQuery,
        seed: 3,
        ..SamplingConfig::default()
    };
    let plain = rqe(&db, &q, set, &cfg)?;
    println!("{set} plain: {} walks, bound {:.1}", plain.walks, plain.value);
    let filtered = rqe_with_filter(&db, &q, set, &cfg)?;
    println!(
        "{set} filtered: {} walks ({} candidate groups), bound {:.1}",
        filtered.total_walks(),
        filtered.candidates,
        filtered.result.value
    );
    Ok(())
}
