//! Replication planning, scenario execution and study orchestration.
//!
//! Every replication draws its data from streams derived from
//! `(master_seed, scenario_id, replication, purpose)`, so records do not depend
//! on the number of workers or on scheduling. A method failure produces a
//! record with `converged = false` and the failing stage; it is never retried.

use std::collections::BTreeMap;
use std::time::Instant;

use chrono::Utc;
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_dataset, sample_coefficients, CoefficientSet, Dataset, Role, ScenarioSpec};
use crate::error::{domain, Error, Result};
use crate::filter::ScenarioFilter;
use crate::math::snapped_ceil;
use crate::metrics::{compute_metrics, squared_error_variance, MetricSet};
use crate::models::{
    predict_proba, FailureStage, FitFailure, FittedPredictor, MethodId, MethodStreams, TrainingContext,
};
use crate::protocol::StudyProtocol;
use crate::records::{RecordMetrics, RecordSink, ReplicationRecord, SeedInfo};
use crate::rng::{derive_stream, Purpose};

/// Failure proportions above this are flagged in reports.
pub const FAILURE_FLAG_THRESHOLD: f64 = 0.10;

pub const SOFTWARE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// `ceil(V / (n_test * target_mcse^2))`.
pub fn compute_required_replications(v: f64, n_test: usize, target_mcse: f64) -> Result<usize> {
    if v == 0.0 {
        return Err(Error::ZeroVariance);
    }
    if !(v > 0.0) || n_test == 0 || !(target_mcse > 0.0) || !v.is_finite() || !target_mcse.is_finite() {
        return Err(domain(format!(
            "replication sizing needs positive inputs, got V={v}, n_test={n_test}, target_mcse={target_mcse}"
        )));
    }
    let b = snapped_ceil(v / (n_test as f64 * target_mcse * target_mcse));
    if b > usize::MAX as f64 {
        return Err(domain("required replication count overflows"));
    }
    Ok(b as usize)
}

/// Rounds a positive number up to one significant digit (0.25 becomes 0.3).
pub fn round_up_one_significant(v: f64) -> f64 {
    if !(v > 0.0) || !v.is_finite() {
        return v;
    }
    let e = v.log10().floor() as i32;
    let digit = snapped_ceil(v / 10f64.powi(e));
    if e < 0 {
        digit / 10f64.powi(-e)
    } else {
        digit * 10f64.powi(e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// Rounded bound.
    pub v: f64,
    /// Largest per-record variance before rounding.
    pub raw_max: f64,
    pub records_used: usize,
    /// `(scenario, method)` groups left out for having fewer than two converged records.
    pub skipped_groups: Vec<String>,
}

pub fn estimate_worst_case_variance_detailed(pilot: &[ReplicationRecord]) -> Result<VarianceEstimate> {
    if pilot.is_empty() {
        return Err(domain("pilot contains no records"));
    }
    let mut groups: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in pilot {
        let entry = groups.entry((&r.scenario_id, &r.method)).or_default();
        if let Some(v) = r.metrics.as_ref().filter(|_| r.converged).and_then(|m| m.bs_sqerr_var) {
            entry.push(v);
        }
    }
    let mut raw_max: Option<f64> = None;
    let mut used = 0;
    let mut skipped = Vec::new();
    for ((s, m), vals) in &groups {
        if vals.len() < 2 {
            skipped.push(format!("{s}/{m}"));
            continue;
        }
        used += vals.len();
        for v in vals {
            raw_max = Some(raw_max.map_or(*v, |x: f64| x.max(*v)));
        }
    }
    let raw_max = raw_max.ok_or_else(|| domain("no (scenario, method) group has two converged pilot records"))?;
    Ok(VarianceEstimate {
        v: round_up_one_significant(raw_max),
        raw_max,
        records_used: used,
        skipped_groups: skipped,
    })
}

/// Largest per-record variance of `(y - p)^2`, rounded up to one significant digit.
pub fn estimate_worst_case_variance(pilot: &[ReplicationRecord]) -> Result<f64> {
    estimate_worst_case_variance_detailed(pilot).map(|e| e.v)
}

/// Probabilities produced by a method plus any notes worth keeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MethodOutput {
    pub probs: Vec<f64>,
    pub flags: Vec<String>,
}

/// Everything a method may look at for one replication.
pub struct MethodJob<'a> {
    pub scenario: &'a ScenarioSpec,
    pub replication: usize,
    pub train: &'a Dataset,
    pub test_x: ArrayView2<'a, f64>,
    ctx: &'a TrainingContext<'a>,
}

impl MethodJob<'_> {
    /// Fits a built-in method, sharing auxiliary fits with the other methods
    /// of the same replication.
    pub fn fit_builtin(&self, method: MethodId) -> std::result::Result<FittedPredictor, FitFailure> {
        self.ctx.fit(method)
    }
}

pub trait PredictionMethod: Send + Sync {
    fn name(&self) -> String;
    fn fit_predict(&self, job: &MethodJob<'_>) -> std::result::Result<MethodOutput, FitFailure>;
}

impl PredictionMethod for MethodId {
    fn name(&self) -> String {
        self.as_str().to_string()
    }

    fn fit_predict(&self, job: &MethodJob<'_>) -> std::result::Result<MethodOutput, FitFailure> {
        let fitted = job.fit_builtin(*self)?;
        let probs = predict_proba(&fitted, job.test_x)
            .map_err(|e| FitFailure::new(FailureStage::Predict, e.to_string()))?;
        let mut flags = Vec::new();
        if fitted.cv_restricted() {
            flags.push("cv_restricted".to_string());
        }
        Ok(MethodOutput { probs, flags })
    }
}

/// Data and streams of one replication.
pub struct ReplicationData {
    pub coefficients: CoefficientSet,
    pub train: Dataset,
    pub test: Dataset,
    pub streams: MethodStreams,
    pub seeds: SeedInfo,
}

pub fn replication_data(scenario: &ScenarioSpec, protocol: &StudyProtocol, b: usize) -> Result<ReplicationData> {
    let seed = protocol.seed;
    let id = scenario.scenario_id.as_str();
    let coef_b = if protocol.plan.fixed_coefficients { 0 } else { b as u64 };
    let coef_stream = derive_stream(seed, id, coef_b, Purpose::Coefficients);
    let train_stream = derive_stream(seed, id, b as u64, Purpose::Train);
    let test_stream = derive_stream(seed, id, b as u64, Purpose::Test);
    let streams = MethodStreams {
        fold_split: derive_stream(seed, id, b as u64, Purpose::FoldSplit),
        forest: derive_stream(seed, id, b as u64, Purpose::Forest),
    };
    let coefficients = sample_coefficients(&coef_stream, scenario, protocol.tweak.as_ref())?;
    let train = generate_dataset(scenario, &coefficients, &train_stream, scenario.n, Role::Train)?;
    let test = generate_dataset(scenario, &coefficients, &test_stream, protocol.grid.n_test, Role::Test)?;
    let seeds = SeedInfo {
        master_seed: seed,
        coefficients: coef_stream.fingerprint(),
        train: train_stream.fingerprint(),
        test: test_stream.fingerprint(),
        fold_split: streams.fold_split.fingerprint(),
        forest: streams.forest.fingerprint(),
    };
    Ok(ReplicationData {
        coefficients,
        train,
        test,
        streams,
        seeds,
    })
}

fn score(test: &Dataset, probs: &[f64], oracle: &MetricSet) -> std::result::Result<RecordMetrics, FitFailure> {
    if probs.len() != test.n() {
        return Err(FitFailure::new(
            FailureStage::Predict,
            format!("expected {} predictions, got {}", test.n(), probs.len()),
        ));
    }
    let m = compute_metrics(&test.y, probs).map_err(|e| FitFailure::new(FailureStage::Metric, e.to_string()))?;
    let v = squared_error_variance(&test.y, probs).ok().filter(|v| v.is_finite());
    Ok(RecordMetrics::new(&m, oracle, v))
}

/// Runs every method on replication `b` and returns one record per method.
pub fn run_replication(
    scenario: &ScenarioSpec,
    protocol: &StudyProtocol,
    roster: &[&dyn PredictionMethod],
    b: usize,
    timing: bool,
) -> Result<Vec<ReplicationRecord>> {
    let data = replication_data(scenario, protocol, b)?;
    let oracle = compute_metrics(&data.test.y, &data.test.oracle_prob)?;
    let config = protocol.methods.config();
    let ctx = TrainingContext::new(&data.train, &data.streams, &config);
    let job = MethodJob {
        scenario,
        replication: b,
        train: &data.train,
        test_x: data.test.x.view(),
        ctx: &ctx,
    };
    let mut out = Vec::with_capacity(roster.len());
    for method in roster {
        let start = Instant::now();
        let result = if data.train.n() < 2 {
            Err(FitFailure::new(FailureStage::Fit, "training set needs at least two rows"))
        } else {
            method
                .fit_predict(&job)
                .and_then(|o| score(&data.test, &o.probs, &oracle).map(|m| (m, o.flags)))
        };
        let wall_time = timing.then(|| start.elapsed().as_secs_f64());
        let rec = match result {
            Ok((metrics, flags)) => ReplicationRecord {
                scenario_id: scenario.scenario_id.clone(),
                replication: b,
                method: method.name(),
                converged: true,
                failure_stage: None,
                failure_message: None,
                metrics: Some(metrics),
                flags,
                seeds: data.seeds.clone(),
                wall_time,
            },
            Err(f) => ReplicationRecord {
                scenario_id: scenario.scenario_id.clone(),
                replication: b,
                method: method.name(),
                converged: false,
                failure_stage: Some(f.stage),
                failure_message: Some(f.message),
                metrics: None,
                flags: Vec::new(),
                seeds: data.seeds.clone(),
                wall_time,
            },
        };
        out.push(rec);
    }
    Ok(out)
}

/// Failure bookkeeping for one `(scenario, method)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub scenario_id: String,
    pub method: String,
    pub replications: usize,
    pub failed: usize,
    pub proportion: f64,
    /// More than 10% of the replications failed.
    pub flagged: bool,
    pub fit_failures: usize,
    pub cv_failures: usize,
    pub predict_failures: usize,
    pub metric_failures: usize,
}

pub fn failure_summary(records: &[ReplicationRecord]) -> Vec<FailureSummary> {
    let mut groups: BTreeMap<(&str, &str), Vec<&ReplicationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.scenario_id, &r.method)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((s, m), rs)| {
            let stage = |st: FailureStage| rs.iter().filter(|r| r.failure_stage == Some(st)).count();
            let failed = rs.iter().filter(|r| !r.converged).count();
            let proportion = failed as f64 / rs.len() as f64;
            FailureSummary {
                scenario_id: s.to_string(),
                method: m.to_string(),
                replications: rs.len(),
                failed,
                proportion,
                flagged: proportion > FAILURE_FLAG_THRESHOLD,
                fit_failures: stage(FailureStage::Fit),
                cv_failures: stage(FailureStage::Cv),
                predict_failures: stage(FailureStage::Predict),
                metric_failures: stage(FailureStage::Metric),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub replications: usize,
    /// Sorted by `(replication, method)`.
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<FailureSummary>,
}

impl ScenarioResult {
    pub fn flagged(&self) -> impl Iterator<Item = &FailureSummary> {
        self.failures.iter().filter(|f| f.flagged)
    }
}

fn builtin_roster(protocol: &StudyProtocol) -> Vec<&dyn PredictionMethod> {
    protocol
        .methods
        .roster
        .iter()
        .map(|m| m as &dyn PredictionMethod)
        .collect()
}

/// Runs replications `0..B` of one scenario with the protocol's methods.
pub fn run_scenario(
    scenario: &ScenarioSpec,
    protocol: &StudyProtocol,
    sink: &dyn RecordSink,
) -> Result<ScenarioResult> {
    run_scenario_with(scenario, protocol, &builtin_roster(protocol), sink, false)
}

/// [`run_scenario`] with an explicit method roster.
pub fn run_scenario_with(
    scenario: &ScenarioSpec,
    protocol: &StudyProtocol,
    roster: &[&dyn PredictionMethod],
    sink: &dyn RecordSink,
    timing: bool,
) -> Result<ScenarioResult> {
    let b = protocol.plan()?.b;
    let mut records: Vec<ReplicationRecord> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let recs = run_replication(scenario, protocol, roster, rep, timing)?;
            for r in &recs {
                sink.append(r)?;
            }
            Ok(recs)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    crate::records::sort_records(&mut records);
    let failures = failure_summary(&records);
    Ok(ScenarioResult {
        scenario_id: scenario.scenario_id.clone(),
        replications: b,
        records,
        failures,
    })
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
    pub scenarios: Option<ScenarioFilter>,
    pub timing: bool,
}

/// Study-level metadata for the reproducibility ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub protocol_hash: String,
    pub master_seed: u64,
    pub software_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub replications: usize,
    pub methods: Vec<String>,
    pub scenarios: Vec<String>,
    pub records: usize,
    pub failures: Vec<FailureSummary>,
}

impl StudyResult {
    pub fn flagged(&self) -> impl Iterator<Item = &FailureSummary> {
        self.failures.iter().filter(|f| f.flagged)
    }
}

/// Scenarios of the protocol's grid that pass the optional filter.
pub fn selected_scenarios(protocol: &StudyProtocol, filter: Option<&ScenarioFilter>) -> Result<Vec<ScenarioSpec>> {
    let all = protocol.scenarios()?;
    let chosen: Vec<ScenarioSpec> = match filter {
        Some(f) => all.into_iter().filter(|s| f.matches(s)).collect(),
        None => all,
    };
    if chosen.is_empty() {
        return Err(Error::EmptyDesign);
    }
    Ok(chosen)
}

pub fn run_study(protocol: &StudyProtocol, sink: &dyn RecordSink, opts: &RunOptions) -> Result<StudyResult> {
    protocol.validate()?;
    let scenarios = selected_scenarios(protocol, opts.scenarios.as_ref())?;
    let b = protocol.plan()?.b;
    let started_at = Utc::now().to_rfc3339();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| domain(format!("thread pool: {e}")))?;
    let roster = builtin_roster(protocol);
    let results: Vec<ScenarioResult> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| run_scenario_with(s, protocol, &roster, sink, opts.timing))
            .collect::<Result<Vec<_>>>()
    })?;
    sink.flush()?;
    let mut failures = Vec::new();
    let mut n_records = 0;
    for r in &results {
        n_records += r.records.len();
        failures.extend(r.failures.iter().cloned());
    }
    Ok(StudyResult {
        protocol_hash: protocol.hash(),
        master_seed: protocol.seed,
        software_version: SOFTWARE_VERSION.to_string(),
        started_at,
        finished_at: Utc::now().to_rfc3339(),
        replications: b,
        methods: roster.iter().map(|m| m.name()).collect(),
        scenarios: scenarios.iter().map(|s| s.scenario_id.clone()).collect(),
        records: n_records,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizing_examples() {
        assert_eq!(compute_required_replications(0.2, 10_000, 0.0001).unwrap(), 2000);
        assert_eq!(compute_required_replications(0.2, 10_000, 0.0002).unwrap(), 500);
        assert_eq!(compute_required_replications(0.25, 10_000, 0.0001).unwrap(), 2500);
        assert!(matches!(compute_required_replications(0.0, 10_000, 0.0001), Err(Error::ZeroVariance)));
        assert!(compute_required_replications(-1.0, 10_000, 0.0001).is_err());
        assert!(compute_required_replications(0.2, 0, 0.0001).is_err());
        assert!(compute_required_replications(0.2, 10, 0.0).is_err());
    }

    #[test]
    fn one_significant_digit() {
        assert_eq!(round_up_one_significant(0.25), 0.3);
        assert_eq!(round_up_one_significant(0.2), 0.2);
        assert_eq!(round_up_one_significant(0.1812), 0.2);
        assert_eq!(round_up_one_significant(0.03001), 0.04);
        assert_eq!(round_up_one_significant(12.0), 20.0);
        assert_eq!(round_up_one_significant(0.0), 0.0);
    }
}
