//! Data generators, configuration, single runs and benchmark suites.

pub mod bench;
pub mod config;
pub mod gen;
pub mod plot;
pub mod run;

use std::path::Path;

use crate::error::{Error, Result};
use crate::querymodel::QuerySpec;

pub use bench::{run_suite, BenchRow, Suite, SuiteOutput};
pub use config::Config;
pub use gen::{generate, write_dataset, DataKind, GenParams};
pub use run::{RunOptions, RunRecord, Session};

/// Names of the built-in query specs.
pub const SHIPPED_QUERIES: [&str; 4] = ["chain3", "chain4", "star", "triangle"];

/// Built-in queries over edge relations `R1..R4(from, to)`.
///
/// `chain3` keeps the middle relation public; the others treat every
/// relation as private.
pub fn shipped_query(id: &str) -> Result<QuerySpec> {
    Ok(match id {
        "chain3" => QuerySpec::new(&["R1", "R2", "R3"])
            .join("R1.to", "R2.from")
            .join("R2.to", "R3.from")
            .private(&["R1", "R3"]),
        "chain4" => QuerySpec::new(&["R1", "R2", "R3", "R4"])
            .join("R1.to", "R2.from")
            .join("R2.to", "R3.from")
            .join("R3.to", "R4.from")
            .all_private(),
        "star" => QuerySpec::new(&["R1", "R2", "R3"])
            .join("R1.from", "R2.from")
            .join("R1.from", "R3.from")
            .all_private(),
        "triangle" => QuerySpec::new(&["R1", "R2", "R3"])
            .join("R1.to", "R2.from")
            .join("R2.to", "R3.from")
            .join("R3.to", "R1.from")
            .all_private(),
        _ => {
            return Err(Error::Config(format!(
                "unknown query `{id}`; built-in queries are {}",
                SHIPPED_QUERIES.join(", ")
            )))
        }
    })
}

/// A built-in query id, or a path to a JSON query spec.
pub fn resolve_query_arg(arg: &str) -> Result<(String, QuerySpec)> {
    if SHIPPED_QUERIES.contains(&arg) {
        return Ok((arg.to_string(), shipped_query(arg)?));
    }
    let path = Path::new(arg);
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or(arg).to_string();
    Ok((id, QuerySpec::load(path)?))
}
