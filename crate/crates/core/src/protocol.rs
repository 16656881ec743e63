//! Study protocols as TOML documents.
//!
//! Missing keys take the default study values; unknown keys are rejected, all
//! of them at once. The protocol hash is the SHA-256 of the canonical
//! re-serialization, so comments, key order and whitespace do not affect it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{build_scenario_grid, tweak_dgp, GridDesign, ScenarioSpec, TweakConfig};
use crate::engine::compute_required_replications;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::models::{CvRule, MethodConfig, MethodId};
use crate::records::Estimand;

pub const SCHEMA_VERSION: u32 = 1;

/// The full-size study shipped with the crate.
pub const BUNDLED_PROTOCOL: &str = include_str!("../protocols/full_study.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodsSection {
    pub roster: Vec<MethodId>,
    pub alphas: Vec<f64>,
    pub n_lambda: usize,
    pub cv_folds: usize,
    pub cv_rule: CvRule,
    pub gamma: f64,
    pub forest: ForestParams,
}

impl Default for MethodsSection {
    fn default() -> Self {
        let c = MethodConfig::default();
        MethodsSection {
            roster: MethodId::ALL.to_vec(),
            alphas: c.alphas,
            n_lambda: c.n_lambda,
            cv_folds: c.cv_folds,
            cv_rule: c.cv_rule,
            gamma: c.gamma,
            forest: c.forest,
        }
    }
}

impl MethodsSection {
    pub fn config(&self) -> MethodConfig {
        MethodConfig {
            alphas: self.alphas.clone(),
            n_lambda: self.n_lambda,
            cv_folds: self.cv_folds,
            cv_rule: self.cv_rule,
            gamma: self.gamma,
            forest: self.forest.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanSection {
    /// Fixed replication count; when absent it follows from the variance bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    pub worst_case_variance: f64,
    pub target_mcse: f64,
    pub pilot_replications: usize,
    /// Draw the true coefficients once per scenario instead of once per replication.
    pub fixed_coefficients: bool,
}

impl Default for PlanSection {
    fn default() -> Self {
        PlanSection {
            replications: None,
            worst_case_variance: 0.2,
            target_mcse: 1e-4,
            pilot_replications: 100,
            fixed_coefficients: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSection {
    pub primary_estimand: Estimand,
    pub estimands: Vec<Estimand>,
    pub baseline: MethodId,
    pub significance_level: f64,
    pub adjustment_draws: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            primary_estimand: Estimand::Brier,
            estimands: Estimand::ALL.to_vec(),
            baseline: MethodId::Ainet,
            significance_level: 0.05,
            adjustment_draws: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyProtocol {
    pub schema_version: u32,
    pub seed: u64,
    pub grid: GridDesign,
    pub methods: MethodsSection,
    pub plan: PlanSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tweak: Option<TweakConfig>,
    pub report: ReportSection,
}

impl Default for StudyProtocol {
    fn default() -> Self {
        StudyProtocol {
            schema_version: SCHEMA_VERSION,
            seed: 20_240_101,
            grid: GridDesign::default(),
            methods: MethodsSection::default(),
            plan: PlanSection::default(),
            tweak: None,
            report: ReportSection::default(),
        }
    }
}

/// The replication plan of a protocol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationPlan {
    pub b: usize,
    pub v: f64,
    pub n_test: usize,
    pub target_mcse: f64,
    pub pilot_b: usize,
}

const TOP_KEYS: &[&str] = &["schema_version", "seed", "grid", "methods", "plan", "tweak", "report"];
const GRID_KEYS: &[&str] = &[
    "sample_sizes",
    "epv_values",
    "correlations",
    "prevalences",
    "p_min",
    "p_max",
    "n_test",
];
const METHOD_KEYS: &[&str] = &["roster", "alphas", "n_lambda", "cv_folds", "cv_rule", "gamma", "forest"];
const FOREST_KEYS: &[&str] = &["n_trees", "mtry", "min_node_size", "max_depth"];
const PLAN_KEYS: &[&str] = &[
    "replications",
    "worst_case_variance",
    "target_mcse",
    "pilot_replications",
    "fixed_coefficients",
];
const TWEAK_KEYS: &[&str] = &["sparsity", "nonlinear", "nonlinear_scale"];
const REPORT_KEYS: &[&str] = &[
    "primary_estimand",
    "estimands",
    "baseline",
    "significance_level",
    "adjustment_draws",
];

fn unknown_keys(doc: &toml::Table) -> Vec<String> {
    fn walk(prefix: &str, table: &toml::Table, allowed: &[&str], out: &mut Vec<String>) {
        for k in table.keys() {
            if !allowed.contains(&k.as_str()) {
                out.push(format!("unknown key `{prefix}{k}`"));
            }
        }
    }
    let mut out = Vec::new();
    walk("", doc, TOP_KEYS, &mut out);
    let sections: [(&str, &[&str]); 5] = [
        ("grid", GRID_KEYS),
        ("methods", METHOD_KEYS),
        ("plan", PLAN_KEYS),
        ("tweak", TWEAK_KEYS),
        ("report", REPORT_KEYS),
    ];
    for (name, keys) in sections {
        if let Some(toml::Value::Table(t)) = doc.get(name) {
            walk(&format!("{name}."), t, keys, &mut out);
            if name == "methods" {
                if let Some(toml::Value::Table(f)) = t.get("forest") {
                    walk("methods.forest.", f, FOREST_KEYS, &mut out);
                }
            }
        }
    }
    out
}

impl StudyProtocol {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Protocol(vec![e.to_string()]))?;
        let unknown = unknown_keys(&doc);
        if !unknown.is_empty() {
            return Err(Error::Protocol(unknown));
        }
        let protocol: StudyProtocol = toml::from_str(text).map_err(|e| Error::Protocol(vec![e.to_string()]))?;
        protocol.validate()?;
        Ok(protocol)
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_PROTOCOL).expect("bundled protocol is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.seed > i64::MAX as u64 {
            errs.push("seed must fit in a signed 64-bit integer".into());
        }
        if let Err(Error::Protocol(e)) = self.grid.validate() {
            errs.extend(e);
        }
        let m = &self.methods;
        if m.roster.is_empty() {
            errs.push("methods.roster must not be empty".into());
        }
        let mut seen = m.roster.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != m.roster.len() {
            errs.push("methods.roster lists a method twice".into());
        }
        if m.alphas.is_empty() || m.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            errs.push("methods.alphas must be non-empty values in [0, 1]".into());
        }
        if m.n_lambda < 2 {
            errs.push("methods.n_lambda must be at least 2".into());
        }
        if m.cv_folds < 2 {
            errs.push("methods.cv_folds must be at least 2".into());
        }
        if !(m.gamma >= 0.0) {
            errs.push("methods.gamma must be nonnegative".into());
        }
        if m.forest.n_trees == 0 || m.forest.min_node_size == 0 {
            errs.push("methods.forest needs n_trees >= 1 and min_node_size >= 1".into());
        }
        let p = &self.plan;
        if p.replications == Some(0) {
            errs.push("plan.replications must be positive".into());
        }
        if !(p.worst_case_variance > 0.0) || !(p.target_mcse > 0.0) {
            errs.push("plan.worst_case_variance and plan.target_mcse must be positive".into());
        }
        if p.pilot_replications < 2 {
            errs.push("plan.pilot_replications must be at least 2".into());
        }
        if let Some(t) = &self.tweak {
            if let Err(e) = tweak_dgp(*t) {
                errs.push(e.to_string());
            }
        }
        let r = &self.report;
        if r.primary_estimand != Estimand::Brier {
            errs.push("report.primary_estimand must be `bs`".into());
        }
        if !r.estimands.contains(&Estimand::Brier) {
            errs.push("report.estimands must include `bs`".into());
        }
        if !m.roster.contains(&r.baseline) {
            errs.push(format!("report.baseline {} is not in methods.roster", r.baseline));
        }
        if !(r.significance_level > 0.0 && r.significance_level < 1.0) {
            errs.push("report.significance_level must lie in (0, 1)".into());
        }
        if r.adjustment_draws < 1000 {
            errs.push("report.adjustment_draws must be at least 1000".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Protocol(errs))
        }
    }

    /// Canonical TOML text; the hash is computed from it.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("protocol serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn scenarios(&self) -> Result<Vec<ScenarioSpec>> {
        build_scenario_grid(&self.grid)
    }

    pub fn plan(&self) -> Result<ReplicationPlan> {
        let b = match self.plan.replications {
            Some(b) => b,
            None => compute_required_replications(
                self.plan.worst_case_variance,
                self.grid.n_test,
                self.plan.target_mcse,
            )?,
        };
        Ok(ReplicationPlan {
            b,
            v: self.plan.worst_case_variance,
            n_test: self.grid.n_test,
            target_mcse: self.plan.target_mcse,
            pilot_b: self.plan.pilot_replications,
        })
    }
}

pub fn parse_protocol(path: &Path) -> Result<StudyProtocol> {
    let text = std::fs::read_to_string(path)?;
    StudyProtocol::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_sections() {
        let p = StudyProtocol::from_toml_str("seed = 5\n").unwrap();
        assert_eq!(p.seed, 5);
        assert_eq!(p.grid, GridDesign::default());
        assert_eq!(p.plan().unwrap().b, 2000);
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let text = "samplesize = 3\n[grid]\nn_tests = 5\n[methods.forest]\ntrees = 4\n";
        match StudyProtocol::from_toml_str(text) {
            Err(Error::Protocol(errs)) => {
                assert_eq!(errs.len(), 3, "{errs:?}");
                assert!(errs.iter().any(|e| e.contains("`samplesize`")));
                assert!(errs.iter().any(|e| e.contains("`grid.n_tests`")));
                assert!(errs.iter().any(|e| e.contains("`methods.forest.trees`")));
            }
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    #[test]
    fn canonical_form_round_trips() {
        let p = StudyProtocol::bundled();
        let again = StudyProtocol::from_toml_str(&p.canonical()).unwrap();
        assert_eq!(again, p);
        assert_eq!(again.hash(), p.hash());
    }

    #[test]
    fn comments_do_not_change_the_hash() {
        let a = StudyProtocol::from_toml_str("seed = 7\n[plan]\nreplications = 3\n").unwrap();
        let b = StudyProtocol::from_toml_str("# note\n[plan]\nreplications   = 3 # small\n\nseed=7\n")
            .unwrap_err();
        // a bare key after a table header belongs to that table
        assert!(matches!(b, Error::Protocol(_)));
        let c = StudyProtocol::from_toml_str("# note\nseed=7\n\n[plan]\nreplications   = 3 # small\n").unwrap();
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn invalid_values_are_collected() {
        let err = StudyProtocol::from_toml_str("[grid]\nn_test = 0\n[methods]\nalphas = [2.0]\n").unwrap_err();
        match err {
            Error::Protocol(e) => assert_eq!(e.len(), 2, "{e:?}"),
            e => panic!("{e}"),
        }
    }
}
