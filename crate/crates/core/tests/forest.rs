use ndarray::Array2;
use qrpsim::forest::*;
use qrpsim::math::expit;
use qrpsim::rng::RngStream;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Column 0 drives the outcome, columns 1..=5 are noise.
fn strong_signal(seed: u64, n: usize) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, 6), |_| rng.sample::<f64, _>(StandardNormal));
    let y = x
        .rows()
        .into_iter()
        .map(|r| if rng.random::<f64>() < expit(2.0 * r[0]) { 1.0 } else { 0.0 })
        .collect();
    (x, y)
}

#[test]
fn strong_predictor_has_largest_importance() {
    let params = ForestParams::default();
    let mut hits = 0;
    for seed in 0..100u64 {
        let (x, y) = strong_signal(seed, 500);
        let forest = fit_random_forest(x.view(), &y, &RngStream::from_seed(seed), &params).unwrap();
        let imp = gini_importance(&forest);
        let best = imp
            .raw
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
            .unwrap();
        hits += usize::from(best == 0);
        assert!(imp.clamped.iter().all(|v| *v >= 0.0));
    }
    assert!(hits >= 95, "strong predictor ranked first in {hits} of 100 fits");
}

#[test]
fn unused_variable_has_zero_importance() {
    let (mut x, y) = strong_signal(7, 200);
    x.column_mut(3).fill(1.5);
    let params = ForestParams {
        n_trees: 50,
        ..ForestParams::default()
    };
    let forest = fit_random_forest(x.view(), &y, &RngStream::from_seed(1), &params).unwrap();
    assert_eq!(gini_importance(&forest).raw[3], 0.0);
}

#[test]
fn forest_is_deterministic_and_bounded() {
    let (x, y) = strong_signal(11, 150);
    let params = ForestParams {
        n_trees: 40,
        ..ForestParams::default()
    };
    let s = RngStream::from_seed(99);
    let a = fit_random_forest(x.view(), &y, &s, &params).unwrap();
    let b = fit_random_forest(x.view(), &y, &s, &params).unwrap();
    assert_eq!(a, b);
    let (x_new, _) = strong_signal(12, 300);
    let pa = predict_forest(&a, x_new.view()).unwrap();
    assert_eq!(pa, predict_forest(&b, x_new.view()).unwrap());
    assert!(pa.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(predict_forest(&a, x_new.slice(ndarray::s![.., ..5])).is_err());
}

#[test]
fn single_class_outcome_gives_constant_forest() {
    let (x, _) = strong_signal(5, 60);
    let y = vec![1.0; 60];
    let params = ForestParams {
        n_trees: 10,
        ..ForestParams::default()
    };
    let f = fit_random_forest(x.view(), &y, &RngStream::from_seed(2), &params).unwrap();
    assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    assert!(predict_forest(&f, x.view()).unwrap().iter().all(|p| *p == 1.0));
}
