use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use joinsens::exact::exact_table;
use joinsens::harness::config::Config;
use joinsens::harness::plot::{read_rows, render, Axis};
use joinsens::harness::{generate, resolve_query_arg, run_suite, write_dataset, DataKind, GenParams, Session, Suite};
use joinsens::relstore::FrequencyStats;
use joinsens::sketchse::{AgmsSketch, SketchSet};
use joinsens::smoothbounds::{elastic_stats, Method};
use joinsens::{Database, Error, JoinQuery};

#[derive(Parser)]
#[command(
    name = "joinsens",
    version,
    about = "Sensitivity and private release of multi-way join counts"
)]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config; JOINSENS_* variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset as CSV files.
    GenData {
        #[arg(long, default_value = "zipf-edges")]
        kind: String,
        #[arg(long, default_value_t = 100_000)]
        size: usize,
        #[arg(long, default_value_t = 1.5)]
        skew: f64,
        #[arg(long, default_value_t = 3)]
        relations: usize,
        #[arg(long)]
        domain: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a CSV directory, check it, and cache per-attribute statistics.
    Ingest {
        #[arg(long)]
        data: PathBuf,
    },
    /// Frequency statistics and the exact maximum-boundary table of a query.
    Stats {
        #[command(flatten)]
        target: Target,
        /// Skip the exact table.
        #[arg(long)]
        no_table: bool,
    },
    /// Build and persist one AGMS sketch per query relation.
    SketchBuild {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        s1: Option<usize>,
        #[arg(long)]
        s2: Option<usize>,
    },
    /// Compute a sensitivity, release a noised answer, print one JSON line.
    Run {
        #[command(flatten)]
        target: Target,
        /// es, rs, sampling-se, sketch-se or local-oracle.
        #[arg(long)]
        method: String,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        /// laplace, cauchy or global.
        #[arg(long)]
        mechanism: Option<String>,
        #[arg(long)]
        sample_rate: Option<f64>,
        /// Directory written by sketch-build.
        #[arg(long)]
        sketches: Option<PathBuf>,
    },
    /// Run a benchmark suite and write bench.csv and runs.jsonl.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also render deviation-vs-epsilon figures.
        #[arg(long)]
        plot: bool,
    },
    /// Render SVG figures from a bench CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "epsilon")]
        x: String,
        #[arg(long, default_value = "deviation")]
        y: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Target {
    /// Directory of CSV relations.
    #[arg(long)]
    data: PathBuf,
    /// Built-in query id (chain3, chain4, star, triangle) or JSON spec path.
    #[arg(long)]
    query: String,
}

impl Target {
    fn load(&self) -> joinsens::Result<(Database, String, JoinQuery)> {
        if !self.data.is_dir() {
            return Err(Error::Schema(format!(
                "data directory {} not found",
                self.data.display()
            )));
        }
        let db = Database::load_dir(&self.data)?;
        let (id, spec) = resolve_query_arg(&self.query)?;
        let q = spec.resolve(&db)?;
        Ok((db, id, q))
    }
}

enum Outcome {
    Ok,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: sampling did not converge; result flagged");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Param(_) | Error::Config(_) => 1,
                _ => 2,
            })
        }
    }
}

fn dispatch(cli: Cli) -> joinsens::Result<Outcome> {
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    match cli.cmd {
        Cmd::GenData {
            kind,
            size,
            skew,
            relations,
            domain,
            out,
        } => {
            let p = GenParams {
                kind: DataKind::parse(&kind)?,
                size,
                skew,
                relations,
                domain,
                seed: config.seed,
            };
            for path in write_dataset(&generate(&p)?, &out)? {
                println!("{}", path.display());
            }
        }
        Cmd::Ingest { data } => {
            let db = Database::load_dir(&data)?;
            if db.is_empty() {
                return Err(Error::Schema(format!("no CSV files in {}", data.display())));
            }
            let mut stats = FrequencyStats::default();
            for r in db.relations() {
                for c in 0..r.arity() {
                    stats.record(r, &[c]);
                }
                println!(
                    "{}: {} rows, attributes {}",
                    r.name(),
                    r.len(),
                    r.attributes().join(",")
                );
            }
            let path = data.join("stats.json");
            std::fs::write(&path, serde_json::to_string_pretty(&stats)?)?;
            println!("statistics: {}", path.display());
        }
        Cmd::Stats { target, no_table } => {
            let (db, id, q) = target.load()?;
            let mut out = serde_json::json!({
                "query": id,
                "fingerprint": q.fingerprint(),
                "summary": format!("{:?}", q.validate()?),
                "frequencies": elastic_stats(&db, &q)?,
            });
            if !no_table {
                out["maxBoundary"] = serde_json::to_value(exact_table(&db, &q)?.rows(&q))?;
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Cmd::SketchBuild { target, out, s1, s2 } => {
            let (db, _, q) = target.load()?;
            let mut params = config.sketch_params();
            params.s1 = s1.unwrap_or(params.s1);
            params.s2 = s2.unwrap_or(params.s2);
            let set = SketchSet::build(&db, &q, params, config.seed)?;
            std::fs::create_dir_all(&out)?;
            for sk in &set.sketches {
                let path = out.join(format!("{}.sketch.json", sk.relation));
                sk.save(&path)?;
                println!("{}", path.display());
            }
        }
        Cmd::Run {
            target,
            method,
            epsilon,
            delta,
            mechanism,
            sample_rate,
            sketches,
        } => {
            if let Some(d) = delta {
                config.delta = d;
            }
            if let Some(m) = mechanism {
                config.mechanism = m;
            }
            let method = Method::parse(&method)?;
            let epsilon = epsilon.unwrap_or(config.epsilon);
            let seed = config.seed;
            let (db, id, q) = target.load()?;
            let mut session = Session::new(&db, id, q, config)?;
            if let Some(dir) = sketches {
                let set = load_sketches(&dir, &session)?;
                session = session.with_sketches(set);
            }
            let mut opts = session.options(method, epsilon, seed)?;
            opts.sample_rate = sample_rate;
            let rec = session.run(opts)?;
            println!("{}", rec.to_json());
            if rec.converged == Some(false) {
                return Ok(Outcome::NotConverged);
            }
        }
        Cmd::Bench { suite, out, plot } => {
            let mut suite = Suite::load(&suite)?;
            if let Some(s) = cli.seed {
                suite.seed = s;
            }
            let db = suite.database()?;
            let output = run_suite(&db, &suite, &config)?;
            let (csv_path, jsonl) = output.write(&out)?;
            println!("{}\n{}", csv_path.display(), jsonl.display());
            if plot {
                for f in render(&output.rows, Axis::Epsilon, Axis::Deviation, &out)? {
                    println!("{}", f.display());
                }
            }
            if output.records.iter().any(|r| r.converged == Some(false)) {
                return Ok(Outcome::NotConverged);
            }
        }
        Cmd::Plot { csv, x, y, out } => {
            let rows = read_rows(&csv)?;
            for f in render(&rows, Axis::parse(&x)?, Axis::parse(&y)?, &out)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(Outcome::Ok)
}

fn load_sketches(dir: &Path, session: &Session) -> joinsens::Result<SketchSet> {
    let q = &session.query;
    let sketches = (0..q.n())
        .map(|i| AgmsSketch::load(dir.join(format!("{}.sketch.json", q.relation_name(i))), q))
        .collect::<joinsens::Result<Vec<_>>>()?;
    let mut params = session.config.sketch_params();
    params.s1 = sketches[0].s1;
    params.s2 = sketches[0].s2;
    SketchSet::from_sketches(q, params, sketches)
}
