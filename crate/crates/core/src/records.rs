//! Replication records, record sinks and file formats.
//!
//! Records are stored as NDJSON: an optional header line
//! `{"header": {...}}` followed by one self-contained record per line.
//! Line order carries no meaning. Tables are written as CSV preceded by
//! `# key: value` comment lines naming the configuration they came from.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::datagen::TweakConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::models::FailureStage;

/// Which version of an estimand a value refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// The method's own value.
    Raw,
    /// The oracle predictor's value on the same test set.
    Oracle,
    /// Method minus oracle.
    Corrected,
}

/// The six estimands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "bs")]
    Brier,
    #[serde(rename = "bs_scaled")]
    ScaledBrier,
    #[serde(rename = "ls")]
    LogScore,
    #[serde(rename = "auc")]
    Auc,
    #[serde(rename = "calib_a")]
    CalibIntercept,
    #[serde(rename = "calib_b")]
    CalibSlope,
}

impl Estimand {
    pub const ALL: [Estimand; 6] = [
        Estimand::Brier,
        Estimand::ScaledBrier,
        Estimand::LogScore,
        Estimand::Auc,
        Estimand::CalibIntercept,
        Estimand::CalibSlope,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Estimand::Brier => "bs",
            Estimand::ScaledBrier => "bs_scaled",
            Estimand::LogScore => "ls",
            Estimand::Auc => "auc",
            Estimand::CalibIntercept => "calib_a",
            Estimand::CalibSlope => "calib_b",
        }
    }

    fn pick(self, m: &MetricSet) -> Option<f64> {
        match self {
            Estimand::Brier => m.brier,
            Estimand::ScaledBrier => m.brier_scaled,
            Estimand::LogScore => m.log_score,
            Estimand::Auc => m.auc,
            Estimand::CalibIntercept => m.calib_intercept,
            Estimand::CalibSlope => m.calib_slope,
        }
    }
}

/// An estimand together with the version of it, e.g. `bs` or `bs_corrected`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Measure {
    pub estimand: Estimand,
    pub kind: MetricKind,
}

impl Measure {
    pub const fn raw(estimand: Estimand) -> Self {
        Measure {
            estimand,
            kind: MetricKind::Raw,
        }
    }

    pub const fn corrected(estimand: Estimand) -> Self {
        Measure {
            estimand,
            kind: MetricKind::Corrected,
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            MetricKind::Raw => self.estimand.key().to_string(),
            MetricKind::Oracle => format!("{}_oracle", self.estimand.key()),
            MetricKind::Corrected => format!("{}_corrected", self.estimand.key()),
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (base, kind) = if let Some(b) = s.strip_suffix("_corrected") {
            (b, MetricKind::Corrected)
        } else if let Some(b) = s.strip_suffix("_oracle") {
            (b, MetricKind::Oracle)
        } else {
            (s, MetricKind::Raw)
        };
        let estimand = Estimand::ALL
            .into_iter()
            .find(|e| e.key() == base)
            .ok_or_else(|| crate::error::domain(format!("unknown estimand `{s}`")))?;
        Ok(Measure { estimand, kind })
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

/// Flat metric block of one record. `None` marks an undefined estimand.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub bs: Option<f64>,
    pub bs_scaled: Option<f64>,
    pub ls: Option<f64>,
    pub auc: Option<f64>,
    pub calib_a: Option<f64>,
    pub calib_b: Option<f64>,
    pub bs_oracle: Option<f64>,
    pub bs_scaled_oracle: Option<f64>,
    pub ls_oracle: Option<f64>,
    pub auc_oracle: Option<f64>,
    pub calib_a_oracle: Option<f64>,
    pub calib_b_oracle: Option<f64>,
    pub bs_corrected: Option<f64>,
    pub bs_scaled_corrected: Option<f64>,
    pub ls_corrected: Option<f64>,
    pub auc_corrected: Option<f64>,
    pub calib_a_corrected: Option<f64>,
    pub calib_b_corrected: Option<f64>,
    /// Sample variance of `(y - p)^2` over the test set.
    pub bs_sqerr_var: Option<f64>,
}

impl RecordMetrics {
    pub fn new(method: &MetricSet, oracle: &MetricSet, sqerr_var: Option<f64>) -> Self {
        let c = crate::metrics::oracle_correct(method, oracle);
        RecordMetrics {
            bs: method.brier,
            bs_scaled: method.brier_scaled,
            ls: method.log_score,
            auc: method.auc,
            calib_a: method.calib_intercept,
            calib_b: method.calib_slope,
            bs_oracle: oracle.brier,
            bs_scaled_oracle: oracle.brier_scaled,
            ls_oracle: oracle.log_score,
            auc_oracle: oracle.auc,
            calib_a_oracle: oracle.calib_intercept,
            calib_b_oracle: oracle.calib_slope,
            bs_corrected: c.brier,
            bs_scaled_corrected: c.brier_scaled,
            ls_corrected: c.log_score,
            auc_corrected: c.auc,
            calib_a_corrected: c.calib_intercept,
            calib_b_corrected: c.calib_slope,
            bs_sqerr_var: sqerr_var,
        }
    }

    pub fn set(&self, kind: MetricKind) -> MetricSet {
        let (a, b, c, d, e, f) = match kind {
            MetricKind::Raw => (self.bs, self.bs_scaled, self.ls, self.auc, self.calib_a, self.calib_b),
            MetricKind::Oracle => (
                self.bs_oracle,
                self.bs_scaled_oracle,
                self.ls_oracle,
                self.auc_oracle,
                self.calib_a_oracle,
                self.calib_b_oracle,
            ),
            MetricKind::Corrected => (
                self.bs_corrected,
                self.bs_scaled_corrected,
                self.ls_corrected,
                self.auc_corrected,
                self.calib_a_corrected,
                self.calib_b_corrected,
            ),
        };
        MetricSet {
            brier: a,
            brier_scaled: b,
            log_score: c,
            auc: d,
            calib_intercept: e,
            calib_slope: f,
        }
    }

    pub fn get(&self, measure: Measure) -> Option<f64> {
        measure.estimand.pick(&self.set(measure.kind))
    }
}

/// Identifiers of the streams used for one replication.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub master_seed: u64,
    pub coefficients: String,
    pub train: String,
    pub test: String,
    pub fold_split: String,
    pub forest: String,
}

/// Outcome of one method on one replication of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub scenario_id: String,
    pub replication: usize,
    pub method: String,
    pub converged: bool,
    pub failure_stage: Option<FailureStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_message: Option<String>,
    pub metrics: Option<RecordMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    pub seeds: SeedInfo,
    /// Seconds spent fitting and scoring; only filled when timing is requested,
    /// so that record files stay reproducible byte for byte.
    pub wall_time: Option<f64>,
}

impl ReplicationRecord {
    pub fn value(&self, measure: Measure) -> Option<f64> {
        if !self.converged {
            return None;
        }
        self.metrics.as_ref()?.get(measure)
    }

    /// Sort key `(scenario, replication, method)`.
    pub fn key(&self) -> (&str, usize, &str) {
        (&self.scenario_id, self.replication, &self.method)
    }
}

pub fn sort_records(records: &mut [ReplicationRecord]) {
    records.sort_by(|a, b| a.key().cmp(&b.key()));
}

/// One entry of a questionable-research-practice audit trail.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// `alter_dgp`, `remove_competitor`, `selective_report`, `seed_hunt` or `optional_stopping`.
    pub kind: String,
    /// Short practice code, e.g. `E3`.
    pub code: String,
    pub description: String,
    pub timestamp: String,
}

/// First line of a record file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub protocol_hash: String,
    pub master_seed: u64,
    /// Deviations from the protocol file, e.g. a reduced replication count.
    pub overrides: BTreeMap<String, String>,
    pub software_version: String,
    pub tweak: Option<TweakConfig>,
    #[serde(default)]
    pub audit: Vec<AuditEntry>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: RunHeader,
}

/// Destination for records; must accept appends from several threads.
pub trait RecordSink: Sync {
    fn append(&self, record: &ReplicationRecord) -> Result<()>;

    fn flush(&self) -> Result<()> {
        Ok(())
    }
}

#[derive(Default)]
pub struct MemorySink {
    records: Mutex<Vec<ReplicationRecord>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    /// The records appended so far, sorted.
    pub fn records(&self) -> Vec<ReplicationRecord> {
        let mut v = self.records.lock().expect("sink lock").clone();
        sort_records(&mut v);
        v
    }

    pub fn into_records(self) -> Vec<ReplicationRecord> {
        let mut v = self.records.into_inner().expect("sink lock");
        sort_records(&mut v);
        v
    }
}

impl RecordSink for MemorySink {
    fn append(&self, record: &ReplicationRecord) -> Result<()> {
        self.records.lock().expect("sink lock").push(record.clone());
        Ok(())
    }
}

/// Discards records; useful when only summaries are wanted.
pub struct NullSink;

impl RecordSink for NullSink {
    fn append(&self, _record: &ReplicationRecord) -> Result<()> {
        Ok(())
    }
}

pub struct NdjsonSink {
    out: Mutex<BufWriter<File>>,
}

impl NdjsonSink {
    /// Creates (truncating) `path` and writes the header line.
    pub fn create(path: &Path, header: &RunHeader) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &HeaderLine { header: header.clone() })?;
        w.write_all(b"\n")?;
        Ok(NdjsonSink { out: Mutex::new(w) })
    }
}

impl RecordSink for NdjsonSink {
    fn append(&self, record: &ReplicationRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        let mut w = self.out.lock().map_err(|_| Error::Sink("poisoned lock".into()))?;
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::Sink(e.to_string()))
    }

    fn flush(&self) -> Result<()> {
        let mut w = self.out.lock().map_err(|_| Error::Sink("poisoned lock".into()))?;
        w.flush().map_err(|e| Error::Sink(e.to_string()))
    }
}

/// Writes a complete record file with lines in canonical sorted order.
pub fn write_ndjson(path: &Path, header: &RunHeader, records: &[ReplicationRecord]) -> Result<()> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let sink = NdjsonSink::create(path, header)?;
    for r in &sorted {
        sink.append(r)?;
    }
    sink.flush()
}

/// Reads a record file. Blank lines are skipped; the header is optional.
pub fn read_ndjson(path: &Path) -> Result<(Option<RunHeader>, Vec<ReplicationRecord>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t.starts_with("{\"header\"") {
            let h: HeaderLine = serde_json::from_str(t)?;
            header = Some(h.header);
            continue;
        }
        let r: ReplicationRecord = serde_json::from_str(t)
            .map_err(|e| crate::error::domain(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(r);
    }
    Ok((header, records))
}

/// Key/value lines written above every CSV table.
pub fn metadata_lines(header: &RunHeader) -> Vec<(String, String)> {
    let mut m = vec![
        ("protocol_hash".to_string(), header.protocol_hash.clone()),
        ("master_seed".to_string(), header.master_seed.to_string()),
        ("software_version".to_string(), header.software_version.clone()),
    ];
    for (k, v) in &header.overrides {
        m.push((format!("override.{k}"), v.clone()));
    }
    if let Some(t) = &header.tweak {
        m.push(("tweak".to_string(), serde_json::to_string(t).unwrap_or_default()));
    }
    for a in &header.audit {
        m.push((format!("audit.{}", a.code), a.description.clone()));
    }
    m
}

pub fn write_csv<T: Serialize>(path: &Path, meta: &[(String, String)], rows: &[T]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for (k, v) in meta {
        writeln!(f, "# {k}: {}", v.replace('\n', " "))?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut f);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(b: usize, method: &str) -> ReplicationRecord {
        ReplicationRecord {
            scenario_id: "n00100_epv1_rho0_prev0.1".into(),
            replication: b,
            method: method.into(),
            converged: true,
            failure_stage: None,
            failure_message: None,
            metrics: Some(RecordMetrics {
                bs: Some(0.1 + b as f64 / 3.0),
                ..RecordMetrics::default()
            }),
            flags: vec![],
            seeds: SeedInfo {
                master_seed: 1,
                coefficients: "a".into(),
                train: "b".into(),
                test: "c".into(),
                fold_split: "d".into(),
                forest: "e".into(),
            },
            wall_time: None,
        }
    }

    #[test]
    fn measure_names_round_trip() {
        for e in Estimand::ALL {
            for kind in [MetricKind::Raw, MetricKind::Oracle, MetricKind::Corrected] {
                let m = Measure { estimand: e, kind };
                assert_eq!(m.name().parse::<Measure>().unwrap(), m);
            }
        }
        assert!("brier".parse::<Measure>().is_err());
    }

    #[test]
    fn ndjson_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ndjson");
        let recs = vec![record(1, "EN"), record(0, "GLM"), record(0, "AINET")];
        let header = RunHeader {
            protocol_hash: "abc".into(),
            master_seed: 9,
            ..RunHeader::default()
        };
        write_ndjson(&path, &header, &recs).unwrap();
        let (h, back) = read_ndjson(&path).unwrap();
        assert_eq!(h.unwrap(), header);
        let mut sorted = recs.clone();
        sort_records(&mut sorted);
        assert_eq!(back, sorted);
        assert_eq!(back[2].metrics.unwrap().bs, Some(0.1 + 1.0 / 3.0));
    }

    #[test]
    fn failed_record_hides_values() {
        let mut r = record(0, "EN");
        assert_eq!(r.value(Measure::raw(Estimand::Brier)), Some(0.1));
        r.converged = false;
        assert_eq!(r.value(Measure::raw(Estimand::Brier)), None);
    }
}
