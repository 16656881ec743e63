//! Questionable research practices as explicit, audited operations.
//!
//! Each operation returns a new value together with an audit trail; inputs are
//! never modified. Codes: `E2` altered data-generating process, `E3` removed
//! competitor, `E7` optional stopping, `E8` seed hunting, `R2` selective
//! reporting.

use std::collections::{BTreeMap, BTreeSet};

use chrono::Utc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::t_quantile;
use crate::datagen::{tweak_dgp, ScenarioSpec, TweakConfig};
use crate::engine::{replication_data, run_scenario_with, PredictionMethod};
use crate::error::{domain, Error, Result};
use crate::filter::ScenarioFilter;
use crate::math::{mean, sample_sd};
use crate::metrics::compute_metrics;
use crate::models::{fit_method, predict_proba, MethodId};
use crate::protocol::StudyProtocol;
use crate::records::{AuditEntry, Estimand, Measure, MemorySink, ReplicationRecord};

/// A value and the practices applied to produce it, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audited<T> {
    pub value: T,
    pub audit: Vec<AuditEntry>,
}

impl<T> Audited<T> {
    /// A value with an empty trail.
    pub fn clean(value: T) -> Self {
        Audited { value, audit: Vec::new() }
    }

    fn then(&self, value: T, entry: AuditEntry) -> Self {
        let mut audit = self.audit.clone();
        audit.push(entry);
        Audited { value, audit }
    }
}

pub fn audit_entry(kind: &str, code: &str, description: impl Into<String>) -> AuditEntry {
    AuditEntry {
        kind: kind.to_string(),
        code: code.to_string(),
        description: description.into(),
        timestamp: Utc::now().to_rfc3339(),
    }
}

/// Copy of `protocol` with `tweak` attached (E2).
pub fn apply_alter_dgp(protocol: &Audited<StudyProtocol>, tweak: TweakConfig) -> Result<Audited<StudyProtocol>> {
    let tweak = tweak_dgp(tweak)?;
    let mut p = protocol.value.clone();
    p.tweak = Some(tweak);
    p.validate()?;
    let desc = format!(
        "data-generating process altered: sparsity {}, quadratic effect {} (scale {}); protocol hash {} -> {}",
        tweak.sparsity,
        if tweak.nonlinear { "on" } else { "off" },
        tweak.nonlinear_scale,
        protocol.value.hash(),
        p.hash()
    );
    Ok(protocol.then(p, audit_entry("alter_dgp", "E2", desc)))
}

/// Drops the records of `methods` from the reported set (E3).
pub fn apply_remove_competitor(
    records: &Audited<Vec<ReplicationRecord>>,
    methods: &[String],
    baseline: &str,
) -> Result<Audited<Vec<ReplicationRecord>>> {
    let present: BTreeSet<&str> = records.value.iter().map(|r| r.method.as_str()).collect();
    let mut remove = BTreeSet::new();
    for m in methods {
        let name = present
            .iter()
            .find(|p| p.eq_ignore_ascii_case(m.trim()))
            .ok_or_else(|| Error::UnknownMethod(m.clone()))?;
        if name.eq_ignore_ascii_case(baseline) {
            return Err(domain(format!("the baseline {baseline} cannot be removed")));
        }
        remove.insert(*name);
    }
    let kept: Vec<ReplicationRecord> = records
        .value
        .iter()
        .filter(|r| !remove.contains(r.method.as_str()))
        .cloned()
        .collect();
    let names: Vec<&str> = remove.iter().copied().collect();
    let desc = if names.is_empty() {
        "no competitor removed".to_string()
    } else {
        format!(
            "competitor(s) {} removed from reporting ({} records hidden)",
            names.join(", "),
            records.value.len() - kept.len()
        )
    };
    Ok(records.then(kept, audit_entry("remove_competitor", "E3", desc)))
}

/// Keeps only scenarios satisfying `predicate` (R2).
pub fn apply_selective_report(
    records: &Audited<Vec<ReplicationRecord>>,
    predicate: &ScenarioFilter,
) -> Result<Audited<Vec<ReplicationRecord>>> {
    let mut verdict: BTreeMap<&str, bool> = BTreeMap::new();
    for r in &records.value {
        if !verdict.contains_key(r.scenario_id.as_str()) {
            let s = ScenarioSpec::from_id(&r.scenario_id)?;
            verdict.insert(&r.scenario_id, predicate.matches(&s));
        }
    }
    let kept_scenarios = verdict.values().filter(|v| **v).count();
    if kept_scenarios == 0 {
        return Err(Error::EmptyReport(format!("no scenario satisfies `{predicate}`")));
    }
    let kept: Vec<ReplicationRecord> = records
        .value
        .iter()
        .filter(|r| verdict[r.scenario_id.as_str()])
        .cloned()
        .collect();
    let desc = format!(
        "only scenarios with `{predicate}` reported: {kept_scenarios} kept, {} suppressed",
        verdict.len() - kept_scenarios
    );
    Ok(records.then(kept, audit_entry("selective_report", "R2", desc)))
}

fn paired_mean(records: &[ReplicationRecord], measure: Measure, a: &str, b: &str) -> Option<f64> {
    let diffs = paired_values(records, measure, a, b);
    let v: Vec<f64> = diffs.into_values().collect();
    (!v.is_empty()).then(|| mean(&v))
}

fn paired_values(records: &[ReplicationRecord], measure: Measure, a: &str, b: &str) -> BTreeMap<usize, f64> {
    let mut va = BTreeMap::new();
    let mut vb = BTreeMap::new();
    for r in records {
        if let Some(v) = r.value(measure) {
            if r.method == a {
                va.insert(r.replication, v);
            } else if r.method == b {
                vb.insert(r.replication, v);
            }
        }
    }
    va.into_iter()
        .filter_map(|(k, x)| vb.get(&k).map(|y| (k, x - y)))
        .collect()
}

/// Mean paired Brier difference AINET minus EN.
pub fn default_seed_objective(records: &[ReplicationRecord]) -> Option<f64> {
    paired_mean(records, Measure::raw(Estimand::Brier), "AINET", "EN")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTrial {
    pub seed: u64,
    pub objective: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedHunt {
    /// One entry per candidate, in candidate order.
    pub trace: Vec<SeedTrial>,
    pub best_seed: Option<u64>,
    pub audit: Vec<AuditEntry>,
}

/// Runs `scenario` with `small_b` replications under each candidate master
/// seed and reports the seed minimizing `objective` (E8), plus the full trace.
pub fn seed_hunt(
    scenario: &ScenarioSpec,
    protocol: &StudyProtocol,
    small_b: usize,
    candidates: &[u64],
    objective: &(dyn Fn(&[ReplicationRecord]) -> Option<f64> + Sync),
) -> Result<SeedHunt> {
    if small_b < 2 {
        return Err(domain("seed hunting needs at least two replications per seed"));
    }
    if candidates.is_empty() {
        return Err(domain("seed hunting needs at least one candidate seed"));
    }
    let roster: Vec<&dyn PredictionMethod> = protocol
        .methods
        .roster
        .iter()
        .map(|m| m as &dyn PredictionMethod)
        .collect();
    let mut trace = Vec::with_capacity(candidates.len());
    for &seed in candidates {
        let mut p = protocol.clone();
        p.seed = seed;
        p.plan.replications = Some(small_b);
        let sink = MemorySink::new();
        let res = run_scenario_with(scenario, &p, &roster, &sink, false)?;
        trace.push(SeedTrial {
            seed,
            objective: objective(&res.records),
        });
    }
    let best_seed = trace
        .iter()
        .filter_map(|t| t.objective.map(|o| (o, t.seed)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, s)| s);
    let desc = format!(
        "{} candidate seeds tried on {} with B = {small_b}; best seed {}",
        candidates.len(),
        scenario.scenario_id,
        best_seed.map_or("none".to_string(), |s| s.to_string())
    );
    Ok(SeedHunt {
        trace,
        best_seed,
        audit: vec![audit_entry("seed_hunt", "E8", desc)],
    })
}

/// What optional stopping monitors, one value per replication.
#[derive(Clone, Debug, PartialEq)]
pub enum StoppingObjective {
    /// `measure(minuend) - measure(subtrahend)` on the same replication.
    PairedDifference {
        measure: Measure,
        minuend: MethodId,
        subtrahend: MethodId,
    },
    /// One method scored on the first half of the test set minus the second
    /// half; the true mean difference is exactly zero.
    SplitTestNull { measure: Measure, method: MethodId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingPoint {
    pub b: usize,
    pub n_used: usize,
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub excludes_zero: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingTrace {
    /// First B at which the unadjusted 95% interval excluded zero.
    pub b_stop: Option<usize>,
    pub trace: Vec<StoppingPoint>,
    pub note: String,
    pub audit: Vec<AuditEntry>,
}

pub const STOPPING_NOTE: &str =
    "BIASED PRACTICE: stopping when the interval first excludes zero inflates the type I error; the full trace is reported";

/// Optional stopping over precomputed per-replication values.
pub fn stopping_trace_from_values(values: &[Option<f64>], step: usize, max_b: usize) -> Result<StoppingTrace> {
    if step == 0 {
        return Err(domain("step must be at least 1"));
    }
    if max_b < step {
        return Err(domain(format!("max_B ({max_b}) must be at least step ({step})")));
    }
    if values.len() < max_b {
        return Err(domain("fewer values than max_B"));
    }
    let mut trace = Vec::with_capacity(max_b / step);
    let mut b_stop = None;
    for k in 1..=max_b / step {
        let b = k * step;
        let used: Vec<f64> = values[..b].iter().flatten().copied().collect();
        let n = used.len();
        let m = (n > 0).then(|| mean(&used));
        let (lo, hi) = if n >= 2 {
            let h = t_quantile(0.975, (n - 1) as f64) * sample_sd(&used) / (n as f64).sqrt();
            let m = m.expect("n >= 2");
            (Some(m - h), Some(m + h))
        } else {
            (None, None)
        };
        let excludes_zero = matches!((lo, hi), (Some(l), Some(h)) if l > 0.0 || h < 0.0);
        if excludes_zero && b_stop.is_none() {
            b_stop = Some(b);
        }
        trace.push(StoppingPoint {
            b,
            n_used: n,
            mean: m,
            ci_low: lo,
            ci_high: hi,
            excludes_zero,
        });
    }
    Ok(StoppingTrace {
        b_stop,
        trace,
        note: STOPPING_NOTE.to_string(),
        audit: Vec::new(),
    })
}

fn split_null_value(scenario: &ScenarioSpec, protocol: &StudyProtocol, b: usize, measure: Measure, method: MethodId) -> Result<Option<f64>> {
    let data = replication_data(scenario, protocol, b)?;
    let config = protocol.methods.config();
    let Ok(fitted) = fit_method(method, &data.train, &data.streams, &config) else {
        return Ok(None);
    };
    let probs = predict_proba(&fitted, data.test.x.view())?;
    let half = data.test.n() / 2;
    if half < 2 {
        return Err(domain("the test set is too small to split"));
    }
    let y = &data.test.y;
    let score = |lo: usize, hi: usize| -> Option<f64> {
        let m = compute_metrics(&y[lo..hi], &probs[lo..hi]).ok()?;
        let set = crate::records::RecordMetrics::new(&m, &m, None);
        set.get(Measure::raw(measure.estimand))
    };
    Ok(match (score(0, half), score(half, 2 * half)) {
        (Some(a), Some(c)) => Some(a - c),
        _ => None,
    })
}

/// Grows the replication set by `step` up to `max_b` under a fixed master seed
/// and reports when the unadjusted 95% interval of `objective` first excludes
/// zero (E7). Earlier replications are reused as B grows.
pub fn optional_stopping_trace(
    scenario: &ScenarioSpec,
    protocol: &StudyProtocol,
    step: usize,
    max_b: usize,
    objective: &StoppingObjective,
) -> Result<StoppingTrace> {
    if step == 0 || max_b < step {
        return stopping_trace_from_values(&[], step, max_b);
    }
    let values: Vec<Option<f64>> = match objective {
        StoppingObjective::PairedDifference {
            measure,
            minuend,
            subtrahend,
        } => {
            let mut p = protocol.clone();
            p.plan.replications = Some(max_b);
            let roster: Vec<&dyn PredictionMethod> = vec![minuend, subtrahend];
            let res = run_scenario_with(scenario, &p, &roster, &MemorySink::new(), false)?;
            let by_rep = paired_values(&res.records, *measure, minuend.as_str(), subtrahend.as_str());
            (0..max_b).map(|b| by_rep.get(&b).copied()).collect()
        }
        StoppingObjective::SplitTestNull { measure, method } => (0..max_b)
            .into_par_iter()
            .map(|b| split_null_value(scenario, protocol, b, *measure, *method))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut out = stopping_trace_from_values(&values, step, max_b)?;
    let what = match objective {
        StoppingObjective::PairedDifference {
            measure,
            minuend,
            subtrahend,
        } => format!("{measure} {minuend} - {subtrahend}"),
        StoppingObjective::SplitTestNull { measure, method } => format!("{measure} {method} split-test null"),
    };
    out.audit.push(audit_entry(
        "optional_stopping",
        "E7",
        format!(
            "{what} on {} monitored every {step} replications up to {max_b}; stopped at {}",
            scenario.scenario_id,
            out.b_stop.map_or("never".to_string(), |b| format!("B = {b}"))
        ),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_length_and_domain() {
        let vals: Vec<Option<f64>> = (0..25).map(|i| Some(i as f64)).collect();
        let t = stopping_trace_from_values(&vals, 10, 25).unwrap();
        assert_eq!(t.trace.len(), 2);
        assert_eq!(t.trace[1].b, 20);
        assert!(stopping_trace_from_values(&vals, 10, 5).is_err());
        assert!(stopping_trace_from_values(&vals, 0, 5).is_err());
    }

    #[test]
    fn stops_on_clear_signal() {
        let vals: Vec<Option<f64>> = (0..40).map(|i| Some(1.0 + (i % 3) as f64 * 0.1)).collect();
        let t = stopping_trace_from_values(&vals, 10, 40).unwrap();
        assert_eq!(t.b_stop, Some(10));
        assert!(t.note.starts_with("BIASED PRACTICE"));
    }
}
