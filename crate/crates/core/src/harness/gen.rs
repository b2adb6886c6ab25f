//! Synthetic datasets: skewed edge relations and uniform key/foreign-key
//! chains, written as CSV.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relstore::{write_csv, Relation, Value};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// `R_j(from, to)` with both endpoints drawn from a Zipf law.
    ZipfEdges,
    /// `R_j(from, to)` where `to` is a key `0..size` and `from` a uniform
    /// reference into the previous table's keys.
    UniformTables,
}

impl DataKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zipf-edges" | "zipf" => Ok(DataKind::ZipfEdges),
            "uniform-tables" | "uniform" => Ok(DataKind::UniformTables),
            _ => Err(Error::param(format!("unknown dataset kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub kind: DataKind,
    /// Rows per relation.
    pub size: usize,
    /// Zipf exponent; 0 is uniform.
    pub skew: f64,
    pub relations: usize,
    /// Endpoint domain for edges; defaults to `max(size / 10, 10)`.
    pub domain: Option<usize>,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            kind: DataKind::ZipfEdges,
            size: 1000,
            skew: 1.5,
            relations: 3,
            domain: None,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn domain(&self) -> usize {
        self.domain.unwrap_or((self.size / 10).max(10))
    }

    fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::param("size must be at least 1"));
        }
        if self.relations == 0 {
            return Err(Error::param("need at least one relation"));
        }
        if !(self.skew >= 0.0) || !self.skew.is_finite() {
            return Err(Error::param(format!(
                "skew must be a finite non-negative number, got {}",
                self.skew
            )));
        }
        if self.domain == Some(0) {
            return Err(Error::param("domain must be at least 1"));
        }
        Ok(())
    }
}

/// Relations `R1..R{relations}`, each from its own seeded stream.
pub fn generate(p: &GenParams) -> Result<Vec<Relation>> {
    p.validate()?;
    (0..p.relations)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(p.seed, &[j as u64]));
            let rows: Vec<[Value; 2]> = match p.kind {
                DataKind::ZipfEdges => {
                    let zipf = Zipf::new(p.domain() as f64, p.skew).map_err(|e| Error::param(e.to_string()))?;
                    (0..p.size)
                        .map(|_| {
                            let a = zipf.sample(&mut rng) as i64;
                            let b = zipf.sample(&mut rng) as i64;
                            [Value::Int(a), Value::Int(b)]
                        })
                        .collect()
                }
                DataKind::UniformTables => (0..p.size)
                    .map(|id| [Value::Int(rng.random_range(0..p.size as i64)), Value::Int(id as i64)])
                    .collect(),
            };
            Relation::from_rows(format!("R{}", j + 1), &["from", "to"], rows)
        })
        .collect()
}

/// Writes one `<name>.csv` per relation into `dir`, creating it if needed.
pub fn write_dataset(rels: &[Relation], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    rels.iter()
        .map(|r| {
            let path = dir.join(format!("{}.csv", r.name()));
            write_csv(r, &path)?;
            Ok(path)
        })
        .collect()
}
