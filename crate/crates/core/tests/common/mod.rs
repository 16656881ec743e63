//! Test-only oracles, independent of the library's solvers.
#![allow(dead_code)]

use ndarray::Array2;
use qrpsim::math::expit;

/// Population-sd standardization, column by column.
pub fn standardize(x: &Array2<f64>) -> Array2<f64> {
    let (n, p) = x.dim();
    let mut z = x.clone();
    for j in 0..p {
        let m = x.column(j).sum() / n as f64;
        let v = x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        let s = v.sqrt();
        for i in 0..n {
            z[[i, j]] = if s > 1e-12 { (x[[i, j]] - m) / s } else { 0.0 };
        }
    }
    z
}

pub fn objective(z: &Array2<f64>, y: &[f64], b0: f64, beta: &[f64], lambda: f64, alpha: f64, w: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mut nll = 0.0;
    for (i, row) in z.rows().into_iter().enumerate() {
        let eta = b0 + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        nll += (1.0 + eta.exp()).ln() - y[i] * eta;
    }
    let l1: f64 = beta.iter().zip(w).map(|(b, w)| if *b == 0.0 { 0.0 } else { w * b.abs() }).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    nll / n + lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)
}

/// Accelerated proximal gradient (FISTA with restarts) on the standardized problem.
/// Returns `(b0, beta, objective)`.
pub fn brute_force(z: &Array2<f64>, y: &[f64], lambda: f64, alpha: f64, w: &[f64], iters: usize) -> (f64, Vec<f64>, f64) {
    let (n, p) = z.dim();
    let nf = n as f64;
    // Lipschitz bound: trace of [1 Z]'[1 Z] / (4n) plus the ridge part
    let trace = 1.0 + z.iter().map(|v| v * v).sum::<f64>() / nf;
    let lip = 0.25 * trace + lambda * (1.0 - alpha);
    let t = 1.0 / lip;
    let grad = |b0: f64, beta: &[f64]| -> (f64, Vec<f64>) {
        let mut g0 = 0.0;
        let mut g = vec![0.0; p];
        for (i, row) in z.rows().into_iter().enumerate() {
            let eta = b0 + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
            let r = expit(eta) - y[i];
            g0 += r;
            for j in 0..p {
                g[j] += r * row[j];
            }
        }
        for j in 0..p {
            g[j] = g[j] / nf + lambda * (1.0 - alpha) * beta[j];
        }
        (g0 / nf, g)
    };
    let prox = |v: f64, thr: f64| {
        if thr.is_infinite() {
            0.0
        } else if v > thr {
            v - thr
        } else if v < -thr {
            v + thr
        } else {
            0.0
        }
    };
    let mut b0 = 0.0;
    let mut beta = vec![0.0; p];
    let mut yb0 = b0;
    let mut ybeta = beta.clone();
    let mut tk: f64 = 1.0;
    let mut fold = objective(z, y, b0, &beta, lambda, alpha, w);
    for _ in 0..iters {
        let (g0, g) = grad(yb0, &ybeta);
        let nb0 = yb0 - t * g0;
        let nbeta: Vec<f64> = (0..p).map(|j| prox(ybeta[j] - t * g[j], t * lambda * alpha * w[j])).collect();
        let fnew = objective(z, y, nb0, &nbeta, lambda, alpha, w);
        let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        if fnew > fold {
            // adaptive restart
            tk = 1.0;
            yb0 = b0;
            ybeta = beta.clone();
            continue;
        }
        let mom = (tk - 1.0) / tn;
        yb0 = nb0 + mom * (nb0 - b0);
        ybeta = (0..p).map(|j| nbeta[j] + mom * (nbeta[j] - beta[j])).collect();
        b0 = nb0;
        beta = nbeta;
        tk = tn;
        fold = fnew;
    }
    (b0, beta, fold)
}

/// Max KKT violation on the standardized scale.
pub fn kkt_residual(z: &Array2<f64>, y: &[f64], b0: f64, beta: &[f64], lambda: f64, alpha: f64, w: &[f64]) -> f64 {
    let (n, p) = z.dim();
    let mut g = vec![0.0; p];
    let mut g0 = 0.0;
    for (i, row) in z.rows().into_iter().enumerate() {
        let eta = b0 + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        let r = expit(eta) - y[i];
        g0 += r;
        for j in 0..p {
            g[j] += r * row[j];
        }
    }
    let mut worst = (g0 / n as f64).abs();
    for j in 0..p {
        if w[j].is_infinite() {
            continue;
        }
        let gj = g[j] / n as f64 + lambda * (1.0 - alpha) * beta[j];
        let bound = lambda * alpha * w[j];
        let v = if beta[j] != 0.0 {
            (gj + bound * beta[j].signum()).abs()
        } else {
            (gj.abs() - bound).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Random logistic instance with standard-normal covariates.
pub fn random_instance(seed: u64, n: usize, p: usize, scale: f64) -> (Array2<f64>, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal) * 1.5 + 0.3);
    let beta: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
    let y = x
        .rows()
        .into_iter()
        .map(|r| {
            let eta = -0.3 + r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            if rng.random::<f64>() < expit(eta) { 1.0 } else { 0.0 }
        })
        .collect();
    (x, y)
}

/// A converged record whose raw Brier score is `bs`.
pub fn synthetic_record(scenario_id: &str, method: &str, replication: usize, bs: f64) -> qrpsim::records::ReplicationRecord {
    let metrics = qrpsim::records::RecordMetrics {
        bs: Some(bs),
        ..Default::default()
    };
    qrpsim::records::ReplicationRecord {
        scenario_id: scenario_id.to_string(),
        replication,
        method: method.to_string(),
        converged: true,
        failure_stage: None,
        failure_message: None,
        metrics: Some(metrics),
        flags: Vec::new(),
        seeds: qrpsim::records::SeedInfo {
            master_seed: 0,
            coefficients: String::new(),
            train: String::new(),
            test: String::new(),
            fold_split: String::new(),
            forest: String::new(),
        },
        wall_time: None,
    }
}
