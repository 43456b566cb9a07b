//! Replicated studies over scenario-by-estimator grids.
//!
//! Each (cell, replication) pair owns a derived seed, so results do not
//! depend on scheduling, on the worker count, or on which estimators are
//! requested alongside. Estimator failures are recorded, not fatal: a study
//! is a distribution over fits and a separation in one replication must not
//! kill the grid.
//!
//! Replications run in parallel when the `parallel` feature is enabled and
//! `workers != 1`; the sequential path produces identical records.

use crate::error::{Error, Result};
use crate::estimators::{fit_estimator, EstimatorKind, FitContext};
use crate::glm::OptimOptions;
use crate::mla::{nondifferential_variant, JointModelSpec};
use crate::rng::derive_seed;
use crate::simulate::{generate, Scenario, ScenarioConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub grid: Vec<ScenarioConfig>,
    pub estimators: Vec<EstimatorKind>,
    pub replications: usize,
    pub master_seed: u64,
    /// worker hint: 0 = all cores, 1 = sequential
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_mi_imputations")]
    pub mi_imputations: usize,
    /// fit the joint estimator with the nondifferential error model
    #[serde(default)]
    pub mla_nondifferential: bool,
}

fn default_mi_imputations() -> usize {
    200
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::BadConfig("study grid is empty".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::BadConfig("no estimators requested".into()));
        }
        if self.replications == 0 {
            return Err(Error::BadConfig("need at least one replication".into()));
        }
        Ok(())
    }
}

/// One row per (replication, estimator, term). Failed fits keep their rows
/// with the estimate fields empty and `converged = false`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub cell: usize,
    pub scenario: Scenario,
    pub n_obs: usize,
    pub n_annotated: usize,
    pub target_accuracy: f64,
    pub systematic_coefficient: f64,
    pub p_x_intercept: f64,
    pub zx_coefficient: f64,
    pub r_squared: f64,
    pub sigma2_extra: f64,
    pub binary_z: bool,
    pub error_model: ErrorModelKind,
    pub replication: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub term: String,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub true_value: f64,
    pub covered: Option<bool>,
    pub converged: bool,
    pub fit_millis: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorModelKind {
    Differential,
    Nondifferential,
}

/// Run every cell x replication x estimator, stream records through `sink`
/// as they are produced, and return them in canonical order.
pub fn run_study<F>(config: &StudyConfig, sink: F) -> Result<Vec<ReplicationRecord>>
where
    F: Fn(&ReplicationRecord) + Send + Sync,
{
    config.validate()?;
    let tasks: Vec<(usize, usize)> = (0..config.grid.len())
        .flat_map(|cell| (0..config.replications).map(move |rep| (cell, rep)))
        .collect();

    let run_one = |&(cell, rep): &(usize, usize)| -> Result<Vec<ReplicationRecord>> {
        let records = run_replication(config, cell, rep)?;
        for r in &records {
            sink(r);
        }
        Ok(records)
    };

    let nested = map_tasks(&tasks, config.workers, run_one)?;
    Ok(nested.into_iter().flatten().collect())
}

#[cfg(feature = "parallel")]
fn map_tasks<T, R, F>(tasks: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Send + Sync,
{
    use rayon::prelude::*;
    if workers == 1 {
        return tasks.iter().map(&f).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::BadConfig(format!("cannot build worker pool: {e}")))?;
    pool.install(|| tasks.par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
fn map_tasks<T, R, F>(tasks: &[T], _workers: usize, f: F) -> Result<Vec<R>>
where
    F: Fn(&T) -> Result<R>,
{
    tasks.iter().map(|t| f(t)).collect()
}

fn run_replication(
    config: &StudyConfig,
    cell: usize,
    rep: usize,
) -> Result<Vec<ReplicationRecord>> {
    let mut scenario_cfg = config.grid[cell];
    scenario_cfg.seed = derive_seed(config.master_seed, cell as u64, rep as u64);
    let data = generate(&scenario_cfg)?;

    let mut spec = JointModelSpec::from_model(data.frame.spec.clone(), scenario_cfg.family())?;
    if config.mla_nondifferential {
        spec = nondifferential_variant(&spec);
    }
    let error_model = if config.mla_nondifferential {
        ErrorModelKind::Nondifferential
    } else {
        ErrorModelKind::Differential
    };

    let options = OptimOptions::default();
    let terms: Vec<String> = std::iter::once("(Intercept)".to_string())
        .chain(data.frame.spec.terms.iter().cloned())
        .collect();

    let mut records = Vec::with_capacity(config.estimators.len() * terms.len());
    for &estimator in &config.estimators {
        let ctx = FitContext {
            frame: &data.frame,
            spec: &spec,
            options: &options,
            mi_imputations: config.mi_imputations,
            seed: scenario_cfg.seed,
        };
        let start = Instant::now();
        let fit = fit_estimator(estimator, &ctx);
        let fit_millis = start.elapsed().as_millis() as u64;

        for term in &terms {
            let true_value = scenario_cfg.true_value(term).unwrap_or(f64::NAN);
            let mut record = ReplicationRecord {
                cell,
                scenario: scenario_cfg.scenario,
                n_obs: scenario_cfg.n_obs,
                n_annotated: scenario_cfg.n_annotated,
                target_accuracy: scenario_cfg.target_accuracy,
                systematic_coefficient: scenario_cfg.systematic_coefficient,
                p_x_intercept: scenario_cfg.p_x_intercept,
                zx_coefficient: scenario_cfg.zx_coefficient,
                r_squared: scenario_cfg.r_squared,
                sigma2_extra: scenario_cfg.sigma2_extra,
                binary_z: scenario_cfg.binary_z,
                error_model,
                replication: rep,
                seed: scenario_cfg.seed,
                estimator,
                term: term.clone(),
                estimate: None,
                std_error: None,
                ci_low: None,
                ci_high: None,
                true_value,
                covered: None,
                converged: false,
                fit_millis,
            };
            if let Ok(fit) = &fit {
                if let Some(k) = fit.term_names.iter().position(|t| t == term) {
                    record.estimate = Some(fit.estimates[k]);
                    record.std_error = Some(fit.std_errors[k]);
                    record.ci_low = Some(fit.ci_low[k]);
                    record.ci_high = Some(fit.ci_high[k]);
                    record.covered =
                        Some(fit.ci_low[k] <= true_value && true_value <= fit.ci_high[k]);
                    record.converged = fit.converged;
                }
            }
            records.push(record);
        }
    }
    Ok(records)
}

/// Per-(cell, estimator, term) study statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: usize,
    pub scenario: Scenario,
    pub n_obs: usize,
    pub n_annotated: usize,
    pub target_accuracy: f64,
    pub systematic_coefficient: f64,
    pub sigma2_extra: f64,
    pub zx_coefficient: f64,
    pub p_x_intercept: f64,
    pub estimator: EstimatorKind,
    pub term: String,
    pub true_value: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub sd_estimate: f64,
    pub q025: f64,
    pub q975: f64,
    pub coverage: f64,
    pub mean_ci_width: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub schema: u32,
    pub rows: Vec<SummaryRow>,
}

impl StudySummary {
    pub fn row(&self, cell: usize, estimator: EstimatorKind, term: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.cell == cell && r.estimator == estimator && r.term == term)
    }
}

/// Group records and compute bias/efficiency/coverage statistics.
///
/// Records are sorted into canonical order first, so any input permutation
/// produces identical output. Failed fits count toward `n_failed` and are
/// excluded from the moments.
pub fn summarize(records: &[ReplicationRecord]) -> Result<StudySummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted: Vec<&ReplicationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (a.cell, a.estimator.as_str(), &a.term, a.replication).cmp(&(
            b.cell,
            b.estimator.as_str(),
            &b.term,
            b.replication,
        ))
    });

    let mut rows = Vec::new();
    let mut group: Vec<&ReplicationRecord> = Vec::new();
    let same_group = |a: &ReplicationRecord, b: &ReplicationRecord| {
        a.cell == b.cell && a.estimator == b.estimator && a.term == b.term
    };
    for record in sorted {
        if let Some(first) = group.first() {
            if !same_group(first, record) {
                rows.push(summarize_group(&group));
                group.clear();
            }
        }
        group.push(record);
    }
    if !group.is_empty() {
        rows.push(summarize_group(&group));
    }
    Ok(StudySummary { schema: 1, rows })
}

fn summarize_group(group: &[&ReplicationRecord]) -> SummaryRow {
    let first = group[0];
    let ok: Vec<&ReplicationRecord> = group
        .iter()
        .copied()
        .filter(|r| r.converged && r.estimate.is_some())
        .collect();
    let n_ok = ok.len();
    let n_failed = group.len() - n_ok;

    let mut estimates: Vec<f64> = ok.iter().filter_map(|r| r.estimate).collect();
    let mean_estimate = mean(&estimates);
    let sd_estimate = sd(&estimates, mean_estimate);
    estimates.sort_by(f64::total_cmp);
    let q025 = quantile_type7(&estimates, 0.025);
    let q975 = quantile_type7(&estimates, 0.975);
    let coverage = mean(
        &ok.iter()
            .filter_map(|r| r.covered.map(f64::from))
            .collect::<Vec<f64>>(),
    );
    let mean_ci_width = mean(
        &ok.iter()
            .filter_map(|r| Some(r.ci_high? - r.ci_low?))
            .collect::<Vec<f64>>(),
    );

    SummaryRow {
        cell: first.cell,
        scenario: first.scenario,
        n_obs: first.n_obs,
        n_annotated: first.n_annotated,
        target_accuracy: first.target_accuracy,
        systematic_coefficient: first.systematic_coefficient,
        sigma2_extra: first.sigma2_extra,
        zx_coefficient: first.zx_coefficient,
        p_x_intercept: first.p_x_intercept,
        estimator: first.estimator,
        term: first.term.clone(),
        true_value: first.true_value,
        n_ok,
        n_failed,
        mean_estimate,
        bias: mean_estimate - first.true_value,
        sd_estimate,
        q025,
        q975,
        coverage,
        mean_ci_width,
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64], mean: f64) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Type-7 quantile (linear interpolation between order statistics) on a
/// sorted slice.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Incremental CSV writer for replication records, fixed header order.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(writer: W) -> RecordWriter<W> {
        RecordWriter {
            inner: csv::Writer::from_writer(writer),
        }
    }

    pub fn write(&mut self, record: &ReplicationRecord) -> Result<()> {
        self.inner
            .serialize(record)
            .map_err(|e| Error::Header(e.to_string()))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|source| Error::Io {
            path: "<records>".into(),
            source,
        })
    }
}

pub fn write_records_csv<W: Write>(writer: W, records: &[ReplicationRecord]) -> Result<()> {
    let mut w = RecordWriter::new(writer);
    for r in records {
        w.write(r)?;
    }
    w.flush()
}

pub fn read_records_csv<R: std::io::Read>(reader: R) -> Result<Vec<ReplicationRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Header(e.to_string())))
        .collect()
}

pub fn write_summary_csv<W: Write>(writer: W, summary: &StudySummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in &summary.rows {
        w.serialize(row).map_err(|e| Error::Header(e.to_string()))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<summary>".into(),
        source,
    })
}

/// JSON document keyed cell -> estimator -> term, `schema: 1`.
pub fn summary_json(summary: &StudySummary) -> serde_json::Value {
    let mut cells: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    for row in &summary.rows {
        let cell = cells.entry(row.cell.to_string()).or_insert_with(|| {
            serde_json::json!({
                "scenario": row.scenario,
                "n_obs": row.n_obs,
                "n_annotated": row.n_annotated,
                "target_accuracy": row.target_accuracy,
                "systematic_coefficient": row.systematic_coefficient,
                "sigma2_extra": row.sigma2_extra,
                "zx_coefficient": row.zx_coefficient,
                "p_x_intercept": row.p_x_intercept,
                "estimators": {},
            })
        });
        let estimators = cell
            .get_mut("estimators")
            .and_then(|v| v.as_object_mut())
            .expect("estimators object");
        let entry = estimators
            .entry(row.estimator.to_string())
            .or_insert_with(|| serde_json::json!({}));
        entry.as_object_mut().expect("terms object").insert(
            row.term.clone(),
            serde_json::json!({
                "true_value": row.true_value,
                "n_ok": row.n_ok,
                "n_failed": row.n_failed,
                "mean_estimate": row.mean_estimate,
                "bias": row.bias,
                "sd_estimate": row.sd_estimate,
                "q025": row.q025,
                "q975": row.q975,
                "coverage": row.coverage,
                "mean_ci_width": row.mean_ci_width,
            }),
        );
    }
    serde_json::json!({ "schema": 1, "cells": cells })
}
