//! One query, one method, one release.

use std::time::Instant;

use serde::Serialize;

use crate::dprelease::{release_general_cauchy, release_global, release_smooth_laplace, Mechanism, NoisyAnswer};
use crate::error::{Error, Result};
use crate::exact::{exact_join_count, exact_table, local_sensitivity_oracle, InsertionDomain};
use crate::harness::config::Config;
use crate::querymodel::JoinQuery;
use crate::relstore::{Database, FrequencyStats};
use crate::samplingse::sampling_se;
use crate::seeds;
use crate::sketchse::{sketching_sensitivity, SketchSet};
use crate::smoothbounds::{
    elastic_sensitivity, elastic_stats, residual_sensitivity, Diagnostics, Method, SensitivityReport, SmoothingParams,
};

/// One line of run output.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunRecord {
    pub query_id: String,
    pub method: Method,
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<f64>,
    pub true_answer: f64,
    pub sensitivity: f64,
    pub k_star: usize,
    pub scale: f64,
    pub noisy_value: f64,
    pub deviation: f64,
    /// Sensitivity computation plus release; offline statistics and
    /// sketches are excluded.
    pub wall_time_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walks: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub method: Method,
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub seed: u64,
    /// Overrides the configured sample rate for Sampling-SE.
    pub sample_rate: Option<f64>,
}

/// A query bound to a database, with the offline state every run shares:
/// elastic frequency statistics, the exact answer and, optionally, sketches.
pub struct Session<'a> {
    pub db: &'a Database,
    pub query_id: String,
    pub query: JoinQuery,
    pub config: Config,
    stats: FrequencyStats,
    true_answer: f64,
    sketches: Option<SketchSet>,
}

impl<'a> Session<'a> {
    pub fn new(db: &'a Database, query_id: impl Into<String>, query: JoinQuery, config: Config) -> Result<Self> {
        query.validate()?;
        let stats = elastic_stats(db, &query)?;
        let true_answer = exact_join_count(db, &query)? as f64;
        Ok(Session {
            db,
            query_id: query_id.into(),
            query,
            config,
            stats,
            true_answer,
            sketches: None,
        })
    }

    pub fn with_sketches(mut self, set: SketchSet) -> Self {
        self.sketches = Some(set);
        self
    }

    /// Builds sketches with the configured parameters; offline.
    pub fn build_sketches(&mut self, master_seed: u64) -> Result<()> {
        self.sketches = Some(SketchSet::build(
            self.db,
            &self.query,
            self.config.sketch_params(),
            master_seed,
        )?);
        Ok(())
    }

    pub fn sketches(&self) -> Option<&SketchSet> {
        self.sketches.as_ref()
    }

    pub fn true_answer(&self) -> f64 {
        self.true_answer
    }

    pub fn mechanism(&self) -> Result<Mechanism> {
        Mechanism::parse(&self.config.mechanism)
    }

    pub fn options(&self, method: Method, epsilon: f64, seed: u64) -> Result<RunOptions> {
        Ok(RunOptions {
            method,
            mechanism: self.mechanism()?,
            epsilon,
            seed,
            sample_rate: None,
        })
    }

    /// Smoothing rate matched to the mechanism.
    pub fn smoothing(&self, mechanism: Mechanism, epsilon: f64) -> Result<SmoothingParams> {
        match mechanism {
            Mechanism::LaplaceSmooth => SmoothingParams::laplace(epsilon, self.config.delta),
            Mechanism::GeneralCauchy => SmoothingParams::general_cauchy(epsilon, self.config.gamma),
            Mechanism::LaplaceGlobal => Err(Error::param("global release has no smoothing rate")),
        }
    }

    /// The online phase: sensitivity by `method`.
    pub fn sensitivity(
        &self,
        method: Method,
        params: SmoothingParams,
        seed: u64,
        sample_rate: Option<f64>,
    ) -> Result<SensitivityReport> {
        let q = &self.query;
        match method {
            Method::Es => elastic_sensitivity(q, &self.stats, params),
            Method::Rs => residual_sensitivity(q, &exact_table(self.db, q)?, params, self.config.gs_cap),
            Method::SamplingSe => {
                let mut cfg = self.config.sampling_config(seeds::derive(seed, &[0x5a]))?;
                if sample_rate.is_some() {
                    cfg.sample_rate = sample_rate;
                }
                sampling_se(self.db, q, &cfg, params, self.config.gs_cap)
            }
            Method::SketchSe => {
                let set = self
                    .sketches
                    .as_ref()
                    .ok_or_else(|| Error::Config("sketch-se needs sketches; run sketch-build first".into()))?;
                sketching_sensitivity(set, q, params)
            }
            Method::LocalOracle => {
                let dom = InsertionDomain::active(self.db, q)?;
                let ls = local_sensitivity_oracle(self.db, q, &dom, self.config.oracle_budget as u128)?;
                Ok(SensitivityReport {
                    method,
                    value: ls as f64,
                    k_star: 0,
                    params,
                    diagnostics: Diagnostics::default(),
                })
            }
        }
    }

    /// Global sensitivity of the count: 0 with no private relation, 1 for a
    /// single private relation without joins, unbounded otherwise.
    pub fn global_sensitivity(&self) -> f64 {
        let q = &self.query;
        if q.private().is_empty() {
            0.0
        } else if q.n() == 1 {
            1.0
        } else {
            f64::INFINITY
        }
    }

    pub fn run(&self, opts: RunOptions) -> Result<RunRecord> {
        let start = Instant::now();
        let (answer, report): (NoisyAnswer, Option<SensitivityReport>) = match opts.mechanism {
            Mechanism::LaplaceGlobal => {
                if opts.method != Method::Es && opts.method != Method::Rs {
                    return Err(Error::Config(format!(
                        "global release does not use {}; choose es or rs",
                        opts.method.name()
                    )));
                }
                (
                    release_global(self.true_answer, self.global_sensitivity(), opts.epsilon, opts.seed)?,
                    None,
                )
            }
            Mechanism::LaplaceSmooth => {
                let params = self.smoothing(opts.mechanism, opts.epsilon)?;
                let r = self.sensitivity(opts.method, params, opts.seed, opts.sample_rate)?;
                let a = release_smooth_laplace(self.true_answer, &r, opts.epsilon, self.config.delta, opts.seed)?;
                (a, Some(r))
            }
            Mechanism::GeneralCauchy => {
                let params = self.smoothing(opts.mechanism, opts.epsilon)?;
                let r = self.sensitivity(opts.method, params, opts.seed, opts.sample_rate)?;
                let a = release_general_cauchy(self.true_answer, &r, opts.epsilon, self.config.gamma, opts.seed)?;
                (a, Some(r))
            }
        };
        let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        let params = report.as_ref().map(|r| r.params);
        Ok(RunRecord {
            query_id: self.query_id.clone(),
            method: opts.method,
            mechanism: opts.mechanism,
            epsilon: opts.epsilon,
            delta: params.and_then(|p| p.delta),
            gamma: params.and_then(|p| p.gamma),
            seed: opts.seed,
            sample_rate: (opts.method == Method::SamplingSe)
                .then(|| opts.sample_rate.or(self.config.sampling.sample_rate))
                .flatten(),
            true_answer: answer.true_answer,
            sensitivity: answer.sensitivity,
            k_star: report.as_ref().map_or(0, |r| r.k_star),
            scale: answer.scale,
            noisy_value: answer.noisy_value,
            deviation: answer.deviation(),
            wall_time_ms,
            walks: report.as_ref().and_then(|r| r.diagnostics.walks),
            converged: report.as_ref().and_then(|r| r.diagnostics.converged),
        })
    }
}
