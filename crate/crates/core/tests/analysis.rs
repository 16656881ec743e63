mod common;

use qrpsim::analysis::*;
use qrpsim::filter::ScenarioFilter;
use qrpsim::records::{Measure, ReplicationRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::synthetic_record;

const SCENARIO: &str = "n00500_epv1_rho0.95_prev0.05";
const COMPETITORS: [&str; 4] = ["GLM", "EN", "AEN", "RF"];

/// Baseline around 0.1; competitor `k` equals baseline + `shift[k]` + noise,
/// with a shared per-replication component so the differences are exchangeable.
fn paired_records(seed: u64, b: usize, shift: [f64; 4], noise: f64) -> Vec<ReplicationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Normal::new(0.1, 0.02).unwrap();
    let eps = Normal::new(0.0, noise).unwrap();
    let mut out = Vec::new();
    for rep in 0..b {
        let v = base.sample(&mut rng);
        let shared = eps.sample(&mut rng);
        out.push(synthetic_record(SCENARIO, "AINET", rep, v));
        for (k, m) in COMPETITORS.iter().enumerate() {
            let e = eps.sample(&mut rng);
            out.push(synthetic_record(SCENARIO, m, rep, v + shift[k] + shared + e));
        }
    }
    out
}

fn opts(draws: usize) -> ContrastOptions {
    ContrastOptions {
        draws,
        seed: 4,
        ..ContrastOptions::default()
    }
}

#[test]
fn constructed_effect_is_detected() {
    let recs = paired_records(1, 200, [0.05, 0.0, 0.0, 0.0], 0.01);
    let rows = pairwise_contrasts(&recs, Measure::raw(qrpsim::records::Estimand::Brier), &opts(100_000));
    assert_eq!(rows.len(), 4);
    let glm = rows.iter().find(|r| r.competitor == "GLM").unwrap();
    assert!(glm.p_adjusted.unwrap() < 0.05);
    assert!(glm.ci_high.unwrap() < 0.0);
    assert!((glm.mean_diff.unwrap() + 0.05).abs() < 0.005);
    assert_eq!(glm.n_pairs, 200);
    let ranked = rank_by_pvalue(&rows, 0.05);
    assert_eq!(ranked[0].competitor, "GLM");
    assert!(ranked[0].significant);
}

#[test]
fn adjusted_intervals_are_wider_than_marginal_ones() {
    let recs = paired_records(2, 60, [0.01, -0.005, 0.0, 0.002], 0.01);
    let rows = pairwise_contrasts(&recs, Measure::raw(qrpsim::records::Estimand::Brier), &opts(50_000));
    for r in &rows {
        let half = (r.ci_high.unwrap() - r.ci_low.unwrap()) / 2.0;
        let marginal = t_quantile(0.975, r.n_pairs as f64 - 1.0) * r.se_diff.unwrap();
        assert!(half >= marginal - 1e-12, "{}: {half} < {marginal}", r.competitor);
    }
}

#[test]
fn simultaneous_coverage_of_known_differences() {
    let shift = [0.004, -0.003, 0.0, 0.01];
    let mut covered = 0;
    for rep in 0..200u64 {
        let recs = paired_records(100 + rep, 40, shift, 0.01);
        let rows = pairwise_contrasts(&recs, Measure::raw(qrpsim::records::Estimand::Brier), &opts(20_000));
        let all = rows.iter().all(|r| {
            let k = COMPETITORS.iter().position(|c| *c == r.competitor).unwrap();
            let delta = -shift[k];
            r.ci_low.unwrap() <= delta && delta <= r.ci_high.unwrap()
        });
        covered += usize::from(all);
    }
    assert!(covered >= 180, "joint coverage {covered} of 200");
}

#[test]
fn record_order_does_not_matter() {
    let recs = paired_records(3, 30, [0.01, 0.0, -0.01, 0.0], 0.01);
    let mut shuffled = recs.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let m = Measure::raw(qrpsim::records::Estimand::Brier);
    assert_eq!(summarize(&recs, m), summarize(&shuffled, m));
    let a = pairwise_contrasts(&recs, m, &opts(5_000));
    let b = pairwise_contrasts(&shuffled, m, &opts(5_000));
    assert_eq!(a, b);
    assert_eq!(rank_by_pvalue(&a, 0.05), rank_by_pvalue(&b, 0.05));
}

#[test]
fn summary_statistics_by_hand() {
    let recs: Vec<ReplicationRecord> = [1.0, 2.0, 3.0, 4.0]
        .iter()
        .enumerate()
        .map(|(i, v)| synthetic_record(SCENARIO, "EN", i, *v))
        .collect();
    let rows = summarize(&recs, Measure::raw(qrpsim::records::Estimand::Brier));
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.mean, r.median, r.iqr), (Some(2.5), Some(2.5), Some(1.5)));
    let sd = (5.0f64 / 3.0).sqrt();
    assert!((r.sd.unwrap() - sd).abs() < 1e-12);
    let half = t_quantile(0.975, 3.0) * sd / 2.0;
    assert!((r.ci95_high.unwrap() - 2.5 - half).abs() < 1e-12);

    // failed records count but do not contribute
    let mut with_failure = recs.clone();
    let mut bad = synthetic_record(SCENARIO, "EN", 9, 100.0);
    bad.converged = false;
    with_failure.push(bad);
    let r2 = &summarize(&with_failure, Measure::raw(qrpsim::records::Estimand::Brier))[0];
    assert_eq!((r2.n_records, r2.n_converged, r2.mean), (5, 4, Some(2.5)));
}

#[test]
fn difference_rows_follow_the_condition_and_competitors() {
    let mut recs = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cells = [
        "n00100_epv1_rho0.95_prev0.05",
        "n00500_epv10_rho0.95_prev0.05",
        "n00500_epv0.5_rho0.95_prev0.05",
        "n00500_epv1_rho0.6_prev0.05",
    ];
    for s in cells {
        for rep in 0..10 {
            for m in ["AINET", "GLM", "EN", "RF"] {
                recs.push(synthetic_record(s, m, rep, 0.1 + 0.01 * rng.random::<f64>()));
            }
        }
    }
    let cond: ScenarioFilter = "rho=0.95,prev=0.05".parse().unwrap();
    let comps = vec!["GLM".to_string(), "RF".to_string()];
    let rows = difference_table(&recs, &cond, &comps, &opts(2_000)).unwrap();
    assert_eq!(rows.len(), 3 * 2);
    assert!(rows.iter().all(|r| r.competitor != "EN"));
    let order: Vec<(usize, f64)> = rows.iter().step_by(2).map(|r| (r.n, r.epv)).collect();
    assert_eq!(order, vec![(100, 1.0), (500, 10.0), (500, 0.5)]);
    assert!(difference_table(&recs, &cond, &[], &opts(2_000)).is_err());
    let none: ScenarioFilter = "n=5000".parse().unwrap();
    assert!(difference_table(&recs, &none, &comps, &opts(2_000)).is_err());
}
