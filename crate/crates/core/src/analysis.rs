//! Performance summaries and baseline-versus-competitor contrasts.
//!
//! Contrasts are paired over replications in which both methods produced a
//! value. Within a scenario the family of competitor contrasts is adjusted by
//! the single-step max-|t| method: the critical value and the adjusted p-values
//! come from Monte Carlo draws of a multivariate t vector whose correlation is
//! the empirical correlation of the per-replication differences.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::{ChiSquared, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::datagen::ScenarioSpec;
use crate::error::{domain, Error, Result};
use crate::filter::ScenarioFilter;
use crate::math::{mean, quantile_sorted, sample_sd};
use crate::models::MethodId;
use crate::records::{Estimand, Measure, ReplicationRecord};
use crate::rng::{derive_stream, Purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub method: String,
    pub estimand: String,
    pub n_records: usize,
    pub n_converged: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub sd: Option<f64>,
    pub iqr: Option<f64>,
    pub ci95_low: Option<f64>,
    pub ci95_high: Option<f64>,
    /// Fewer than two values, or no spread at all.
    pub flagged: bool,
}

/// Quantile `p` of the Student-t distribution with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .map(|t| t.inverse_cdf(p))
        .unwrap_or(f64::NAN)
}

/// Canonical method order: baseline-independent, built-ins first.
fn method_rank(name: &str) -> (usize, String) {
    match name.parse::<MethodId>() {
        Ok(m) => (MethodId::ALL.iter().position(|x| *x == m).unwrap_or(0), String::new()),
        Err(_) => (MethodId::ALL.len(), name.to_string()),
    }
}

fn sorted_methods<'a>(names: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut v: Vec<String> = names
        .into_iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    v.sort_by_key(|m| method_rank(m));
    v
}

pub fn summarize(records: &[ReplicationRecord], measure: Measure) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<(usize, Option<f64>)>>> = BTreeMap::new();
    for r in records {
        groups
            .entry(&r.scenario_id)
            .or_default()
            .entry(&r.method)
            .or_default()
            .push((r.replication, r.value(measure)));
    }
    let mut rows = Vec::new();
    for (scenario, by_method) in groups {
        for method in sorted_methods(by_method.keys().copied()) {
            let mut entries = by_method[method.as_str()].clone();
            // replication order makes the floating-point sums order independent
            entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.unwrap_or(f64::NAN).total_cmp(&b.1.unwrap_or(f64::NAN))));
            let vals: Vec<f64> = entries.iter().filter_map(|e| e.1).collect();
            let k = vals.len();
            let constant = k > 0 && vals.iter().all(|v| *v == vals[0]);
            let mut sorted = vals.clone();
            sorted.sort_by(f64::total_cmp);
            let (m, sd) = if constant {
                (Some(vals[0]), if k >= 2 { Some(0.0) } else { None })
            } else if k > 0 {
                (Some(mean(&vals)), (k >= 2).then(|| sample_sd(&vals)))
            } else {
                (None, None)
            };
            let (lo, hi) = match (m, sd) {
                (Some(m), Some(sd)) => {
                    let h = t_quantile(0.975, (k - 1) as f64) * sd / (k as f64).sqrt();
                    (Some(m - h), Some(m + h))
                }
                _ => (None, None),
            };
            rows.push(SummaryRow {
                scenario_id: scenario.to_string(),
                method: method.clone(),
                estimand: measure.name(),
                n_records: entries.len(),
                n_converged: k,
                mean: m,
                median: (k > 0).then(|| quantile_sorted(&sorted, 0.5)),
                sd,
                iqr: (k > 0).then(|| quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)),
                ci95_low: lo,
                ci95_high: hi,
                flagged: k < 2 || constant,
            });
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub scenario_id: String,
    pub baseline: String,
    pub competitor: String,
    pub estimand: String,
    /// Baseline minus competitor.
    pub mean_diff: Option<f64>,
    pub se_diff: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub n_pairs: usize,
    /// Simultaneous critical value used for the interval.
    pub critical_value: Option<f64>,
    /// Fewer than three pairs, or a degenerate difference distribution.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastOptions {
    pub baseline: String,
    pub draws: usize,
    /// Seed of the analysis stream.
    pub seed: u64,
    pub level: f64,
}

impl Default for ContrastOptions {
    fn default() -> Self {
        ContrastOptions {
            baseline: MethodId::Ainet.as_str().to_string(),
            draws: 100_000,
            seed: 0,
            level: 0.95,
        }
    }
}

struct Diffs {
    competitor: String,
    by_rep: BTreeMap<usize, f64>,
}

/// Draws of `max_j |T_j|` for a multivariate t with correlation `corr` and `df`.
fn max_abs_t_draws(corr: &DMatrix<f64>, df: f64, draws: usize, stream_seed: u64, scenario_id: &str) -> Vec<f64> {
    let k = corr.nrows();
    let mut shrink = 0.0;
    let chol = loop {
        let m = corr * (1.0 - shrink) + DMatrix::<f64>::identity(k, k) * shrink;
        if let Some(c) = Cholesky::new(m) {
            break c.l();
        }
        shrink = if shrink == 0.0 { 1e-8 } else { shrink * 10.0 };
        if shrink > 1.0 {
            break DMatrix::<f64>::identity(k, k);
        }
    };
    let mut rng = derive_stream(stream_seed, scenario_id, 0, Purpose::Analysis).rng();
    let chi = ChiSquared::new(df).expect("df > 0");
    let mut z = vec![0.0; k];
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let w: f64 = rng.sample(chi);
        let scale = (w / df).sqrt();
        let mut mx: f64 = 0.0;
        for i in 0..k {
            let mut s = 0.0;
            for j in 0..=i {
                s += chol[(i, j)] * z[j];
            }
            mx = mx.max((s / scale).abs());
        }
        out.push(mx);
    }
    out.sort_by(f64::total_cmp);
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 3 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let r = sab / (saa * sbb).sqrt();
    r.is_finite().then_some(r.clamp(-1.0, 1.0))
}

fn scenario_contrasts(
    scenario_id: &str,
    records: &[&ReplicationRecord],
    measure: Measure,
    opts: &ContrastOptions,
) -> Vec<ContrastRow> {
    let mut by_method: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in records {
        if let Some(v) = r.value(measure) {
            by_method.entry(&r.method).or_default().insert(r.replication, v);
        }
        by_method.entry(&r.method).or_default();
    }
    let Some(base) = by_method.get(opts.baseline.as_str()) else {
        return Vec::new();
    };
    let competitors = sorted_methods(by_method.keys().copied().filter(|m| *m != opts.baseline));
    let diffs: Vec<Diffs> = competitors
        .iter()
        .map(|c| Diffs {
            competitor: c.clone(),
            by_rep: by_method[c.as_str()]
                .iter()
                .filter_map(|(b, v)| base.get(b).map(|bv| (*b, bv - v)))
                .collect(),
        })
        .collect();

    struct Stat {
        n: usize,
        mean: Option<f64>,
        se: Option<f64>,
    }
    let stats: Vec<Stat> = diffs
        .iter()
        .map(|d| {
            let v: Vec<f64> = d.by_rep.values().copied().collect();
            let n = v.len();
            Stat {
                n,
                mean: (n > 0).then(|| mean(&v)),
                se: (n >= 2).then(|| {
                    if v.iter().all(|x| *x == v[0]) {
                        0.0
                    } else {
                        sample_sd(&v) / (n as f64).sqrt()
                    }
                }),
            }
        })
        .collect();

    // contrasts entering the joint adjustment
    let joint: Vec<usize> = (0..diffs.len())
        .filter(|&i| stats[i].n >= 3 && stats[i].se.is_some_and(|s| s > 0.0))
        .collect();
    let k = joint.len();
    let (draws, crit) = if k > 0 {
        let df = joint.iter().map(|&i| stats[i].n).min().unwrap_or(3) as f64 - 1.0;
        let mut corr = DMatrix::<f64>::identity(k, k);
        for a in 0..k {
            for b in (a + 1)..k {
                let (da, db) = (&diffs[joint[a]].by_rep, &diffs[joint[b]].by_rep);
                let (xs, ys): (Vec<f64>, Vec<f64>) =
                    da.iter().filter_map(|(r, x)| db.get(r).map(|y| (*x, *y))).unzip();
                let r = pearson(&xs, &ys).unwrap_or(0.0);
                corr[(a, b)] = r;
                corr[(b, a)] = r;
            }
        }
        let draws = max_abs_t_draws(&corr, df, opts.draws, opts.seed, scenario_id);
        let sim = quantile_sorted(&draws, opts.level);
        let marginal = t_quantile(0.5 + opts.level / 2.0, df);
        (draws, Some(sim.max(marginal)))
    } else {
        (Vec::new(), None)
    };

    diffs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let s = &stats[i];
            let mut row = ContrastRow {
                scenario_id: scenario_id.to_string(),
                baseline: opts.baseline.clone(),
                competitor: d.competitor.clone(),
                estimand: measure.name(),
                mean_diff: s.mean,
                se_diff: s.se,
                ci_low: None,
                ci_high: None,
                p_adjusted: None,
                n_pairs: s.n,
                critical_value: None,
                flagged: s.n < 3,
            };
            match (s.mean, s.se) {
                (Some(m), Some(se)) if se > 0.0 && joint.contains(&i) => {
                    let c = crit.expect("critical value for joint family");
                    let t = (m / se).abs();
                    // draws are sorted: count those >= t
                    let first = draws.partition_point(|v| *v < t);
                    row.p_adjusted = Some((draws.len() - first) as f64 / draws.len() as f64);
                    row.ci_low = Some(m - c * se);
                    row.ci_high = Some(m + c * se);
                    row.critical_value = Some(c);
                }
                (Some(m), Some(se)) if se == 0.0 => {
                    // every pair differs by the same amount
                    row.p_adjusted = Some(if m == 0.0 { 1.0 } else { 0.0 });
                    row.ci_low = Some(m);
                    row.ci_high = Some(m);
                    row.flagged = true;
                }
                _ => row.flagged = true,
            }
            row
        })
        .collect()
}

pub fn pairwise_contrasts(records: &[ReplicationRecord], measure: Measure, opts: &ContrastOptions) -> Vec<ContrastRow> {
    let mut by_scenario: BTreeMap<&str, Vec<&ReplicationRecord>> = BTreeMap::new();
    for r in records {
        by_scenario.entry(&r.scenario_id).or_default().push(r);
    }
    by_scenario
        .into_iter()
        .flat_map(|(s, rs)| scenario_contrasts(s, &rs, measure, opts))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedContrast {
    pub rank: usize,
    pub scenario_id: String,
    pub competitor: String,
    pub estimand: String,
    pub mean_diff: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub significant: bool,
}

/// Ascending adjusted p-value; rows without a p-value come last.
pub fn rank_by_pvalue(contrasts: &[ContrastRow], level: f64) -> Vec<RankedContrast> {
    let mut v: Vec<&ContrastRow> = contrasts.iter().collect();
    v.sort_by(|a, b| {
        let pa = a.p_adjusted.unwrap_or(f64::INFINITY);
        let pb = b.p_adjusted.unwrap_or(f64::INFINITY);
        pa.total_cmp(&pb)
            .then_with(|| a.scenario_id.cmp(&b.scenario_id))
            .then_with(|| method_rank(&a.competitor).cmp(&method_rank(&b.competitor)))
            .then_with(|| a.estimand.cmp(&b.estimand))
    });
    v.into_iter()
        .enumerate()
        .map(|(i, r)| RankedContrast {
            rank: i + 1,
            scenario_id: r.scenario_id.clone(),
            competitor: r.competitor.clone(),
            estimand: r.estimand.clone(),
            mean_diff: r.mean_diff,
            p_adjusted: r.p_adjusted,
            significant: r.p_adjusted.is_some_and(|p| p < level),
        })
        .collect()
}

/// One dot-and-interval row of the difference plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceRow {
    pub label: String,
    pub scenario_id: String,
    pub n: usize,
    pub epv: f64,
    pub competitor: String,
    pub mean_diff: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub n_pairs: usize,
}

/// Brier differences with adjusted intervals for the scenarios selected by
/// `condition`, ordered by `n`, then decreasing EPV, then `competitors`.
pub fn difference_table(
    records: &[ReplicationRecord],
    condition: &ScenarioFilter,
    competitors: &[String],
    opts: &ContrastOptions,
) -> Result<Vec<DifferenceRow>> {
    if competitors.is_empty() {
        return Err(domain("competitor list is empty"));
    }
    let mut specs: BTreeMap<String, ScenarioSpec> = BTreeMap::new();
    for r in records {
        if !specs.contains_key(&r.scenario_id) {
            let s = ScenarioSpec::from_id(&r.scenario_id)?;
            specs.insert(r.scenario_id.clone(), s);
        }
    }
    let kept: BTreeSet<&str> = specs
        .iter()
        .filter(|(_, s)| condition.matches(s))
        .map(|(id, _)| id.as_str())
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyReport(format!("no scenario satisfies `{condition}`")));
    }
    let subset: Vec<ReplicationRecord> = records
        .iter()
        .filter(|r| kept.contains(r.scenario_id.as_str()))
        .cloned()
        .collect();
    let rows = pairwise_contrasts(&subset, Measure::raw(Estimand::Brier), opts);
    let mut out: Vec<DifferenceRow> = rows
        .into_iter()
        .filter(|r| competitors.iter().any(|c| c.eq_ignore_ascii_case(&r.competitor)))
        .map(|r| {
            let s = &specs[&r.scenario_id];
            DifferenceRow {
                label: s.label(),
                scenario_id: r.scenario_id,
                n: s.n,
                epv: s.epv,
                competitor: r.competitor,
                mean_diff: r.mean_diff,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                p_adjusted: r.p_adjusted,
                n_pairs: r.n_pairs,
            }
        })
        .collect();
    let pos = |c: &str| competitors.iter().position(|x| x.eq_ignore_ascii_case(c)).unwrap_or(usize::MAX);
    out.sort_by(|a, b| {
        a.n.cmp(&b.n)
            .then(b.epv.total_cmp(&a.epv))
            .then(a.scenario_id.cmp(&b.scenario_id))
            .then(pos(&a.competitor).cmp(&pos(&b.competitor)))
    });
    Ok(out)
}
