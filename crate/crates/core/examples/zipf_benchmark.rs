//! All four sensitivity methods on a generated Zipf chain through the same
//! session the command line tool uses: median deviation and online time.
//!
//! ```text
//! cargo run --release --example zipf_benchmark -- 100000
//! ```

use joinsens::harness::config::Config;
use joinsens::harness::{generate, shipped_query, GenParams, Session};
use joinsens::smoothbounds::Method;
use joinsens::Database;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> joinsens::Result<()> {
    let size = std::env::args()
        .nth(1)
        .map_or(Ok(20_000), |s| s.parse())
        .expect("size is an integer");
    let mut db = Database::new();
    for r in generate(&GenParams {
        size,
        relations: 3,
        ..GenParams::default()
    })? {
        db.insert(r);
    }
    let db = db.indexed();
    let q = shipped_query("chain3")?.resolve(&db)?;
    let mut session = Session::new(&db, "chain3", q, Config::default())?;
    session.build_sketches(1)?;
    println!("{size} rows per relation, join size {}", session.true_answer());

    println!(
        "{:<12} {:>14} {:>14} {:>12}",
        "method", "sensitivity", "deviation", "time (ms)"
    );
    for method in [Method::Es, Method::Rs, Method::SamplingSe, Method::SketchSe] {
        let (mut s, mut d, mut t) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..10 {
            let r = session.run(session.options(method, 0.8, seed)?)?;
            s.push(r.sensitivity);
            d.push(r.deviation);
            t.push(r.wall_time_ms);
        }
        println!(
            "{:<12} {:>14.4e} {:>14.4e} {:>12.3}",
            method.name(),
            median(s),
            median(d),
            median(t)
        );
    }
    Ok(())
}
