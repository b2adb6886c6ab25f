//! Benchmark suites: a grid of queries × methods × mechanisms × ε (× sample
//! rate for Sampling-SE) × repetitions, aggregated into one CSV row per grid
//! point.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dprelease::Mechanism;
use crate::error::{Error, Result};
use crate::harness::config::Config;
use crate::harness::gen::GenParams;
use crate::harness::resolve_query_arg;
use crate::harness::run::{RunOptions, RunRecord, Session};
use crate::relstore::Database;
use crate::seeds;
use crate::smoothbounds::Method;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Suite {
    /// Built-in query ids or paths to JSON query specs.
    pub queries: Vec<String>,
    pub methods: Vec<String>,
    /// Empty means the configured mechanism.
    pub mechanisms: Vec<String>,
    pub epsilons: Vec<f64>,
    /// Sample rates swept for Sampling-SE; empty means the configured one.
    pub sample_rates: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    /// Directory of CSV relations.
    pub data: Option<PathBuf>,
    /// Generate the data in memory instead of reading `data`.
    pub generate: Option<GenParams>,
    /// Run grid points concurrently. Timings are cleaner when off.
    pub parallel: bool,
}

impl Default for Suite {
    fn default() -> Self {
        Suite {
            queries: vec!["chain3".into()],
            methods: vec!["es".into(), "rs".into(), "sampling-se".into(), "sketch-se".into()],
            mechanisms: Vec::new(),
            epsilons: vec![0.8],
            sample_rates: Vec::new(),
            repetitions: 10,
            seed: 0,
            data: None,
            generate: None,
            parallel: true,
        }
    }
}

impl Suite {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Relations named by `data`, or generated from `generate`.
    pub fn database(&self) -> Result<Database> {
        match (&self.generate, &self.data) {
            (Some(g), _) => {
                let mut db = Database::new();
                for r in crate::harness::gen::generate(g)? {
                    db.insert(r);
                }
                Ok(db.indexed())
            }
            (None, Some(dir)) => Database::load_dir(dir),
            (None, None) => Err(Error::Config("suite names neither `data` nor `generate`".into())),
        }
    }
}

/// Aggregate of one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub query: String,
    pub method: String,
    pub mechanism: String,
    pub epsilon: f64,
    pub sample_rate: Option<f64>,
    pub runs: usize,
    pub true_answer: f64,
    pub median_sensitivity: f64,
    pub median_deviation: f64,
    pub median_walks: Option<f64>,
    pub converged_fraction: Option<f64>,
    pub time_p50_ms: f64,
    pub time_p90_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOutput {
    pub records: Vec<RunRecord>,
    pub rows: Vec<BenchRow>,
}

impl SuiteOutput {
    /// Writes `bench.csv` and `runs.jsonl` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join("bench.csv");
        let mut w = csv::Writer::from_path(&csv_path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        let jsonl = dir.join("runs.jsonl");
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&r.to_json());
            text.push('\n');
        }
        std::fs::write(&jsonl, text)?;
        Ok((csv_path, jsonl))
    }
}

/// `q`-quantile by nearest rank.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

#[derive(Clone, Copy)]
struct Point {
    query: usize,
    method: Method,
    mechanism: Mechanism,
    epsilon: f64,
    sample_rate: Option<f64>,
}

fn grid(suite: &Suite, config: &Config) -> Result<Vec<Point>> {
    let methods: Vec<Method> = suite.methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?;
    let mechanisms: Vec<Mechanism> = if suite.mechanisms.is_empty() {
        vec![Mechanism::parse(&config.mechanism)?]
    } else {
        suite
            .mechanisms
            .iter()
            .map(|m| Mechanism::parse(m))
            .collect::<Result<_>>()?
    };
    let mut points = Vec::new();
    for query in 0..suite.queries.len() {
        for &mechanism in &mechanisms {
            for &method in &methods {
                for &epsilon in &suite.epsilons {
                    let rates: Vec<Option<f64>> = if method == Method::SamplingSe && !suite.sample_rates.is_empty() {
                        suite.sample_rates.iter().map(|&r| Some(r)).collect()
                    } else {
                        vec![None]
                    };
                    for sample_rate in rates {
                        points.push(Point {
                            query,
                            method,
                            mechanism,
                            epsilon,
                            sample_rate,
                        });
                    }
                }
            }
        }
    }
    Ok(points)
}

/// Runs the suite. Repetition `r` uses seed `derive(suite.seed, [r])` for
/// every method, so methods are compared on the same noise streams.
pub fn run_suite(db: &Database, suite: &Suite, config: &Config) -> Result<SuiteOutput> {
    if suite.queries.is_empty() || suite.methods.is_empty() || suite.epsilons.is_empty() || suite.repetitions == 0 {
        return Err(Error::Config(
            "empty suite: need queries, methods, epsilons and repetitions".into(),
        ));
    }
    let points = grid(suite, config)?;
    let needs_sketches = points.iter().any(|p| p.method == Method::SketchSe);
    let sessions: Vec<Session> = suite
        .queries
        .iter()
        .enumerate()
        .map(|(qi, arg)| {
            let (id, spec) = resolve_query_arg(arg)?;
            let mut s = Session::new(db, id, spec.resolve(db)?, config.clone())?;
            if needs_sketches {
                s.build_sketches(seeds::derive(suite.seed, &[qi as u64, 0x5c]))?;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..suite.repetitions).map(move |r| (p, r)))
        .collect();
    let one = |&(p, r): &(usize, usize)| -> Result<RunRecord> {
        let pt = points[p];
        sessions[pt.query].run(RunOptions {
            method: pt.method,
            mechanism: pt.mechanism,
            epsilon: pt.epsilon,
            seed: seeds::derive(suite.seed, &[r as u64]),
            sample_rate: pt.sample_rate,
        })
    };
    let records: Vec<RunRecord> = if suite.parallel {
        jobs.par_iter().map(one).collect::<Result<_>>()?
    } else {
        jobs.iter().map(one).collect::<Result<_>>()?
    };
    let mut by_point: BTreeMap<usize, Vec<&RunRecord>> = BTreeMap::new();
    for (&(p, _), rec) in jobs.iter().zip(&records) {
        by_point.entry(p).or_default().push(rec);
    }
    let rows = by_point
        .into_iter()
        .map(|(p, recs)| {
            let pt = points[p];
            let col = |f: &dyn Fn(&RunRecord) -> f64| recs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let times = col(&|r| r.wall_time_ms);
            let walks: Vec<f64> = recs.iter().filter_map(|r| r.walks.map(|w| w as f64)).collect();
            let conv: Vec<bool> = recs.iter().filter_map(|r| r.converged).collect();
            BenchRow {
                query: sessions[pt.query].query_id.clone(),
                method: pt.method.name().into(),
                mechanism: pt.mechanism.name().into(),
                epsilon: pt.epsilon,
                sample_rate: pt.sample_rate,
                runs: recs.len(),
                true_answer: recs[0].true_answer,
                median_sensitivity: quantile(&col(&|r| r.sensitivity), 0.5),
                median_deviation: quantile(&col(&|r| r.deviation), 0.5),
                median_walks: (!walks.is_empty()).then(|| quantile(&walks, 0.5)),
                converged_fraction: (!conv.is_empty())
                    .then(|| conv.iter().filter(|&&c| c).count() as f64 / conv.len() as f64),
                time_p50_ms: quantile(&times, 0.5),
                time_p90_ms: quantile(&times, 0.9),
            }
        })
        .collect();
    Ok(SuiteOutput { records, rows })
}
