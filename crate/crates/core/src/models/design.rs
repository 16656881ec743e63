use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// Column means and (population) standard deviations used to standardize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    /// Maps standardized-scale coefficients back to the original covariate scale.
    pub fn destandardize(&self, b0: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let mut intercept = b0;
        let coefs = beta
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(b, (m, s))| {
                if *s > 0.0 {
                    intercept -= b * m / s;
                    b / s
                } else {
                    0.0
                }
            })
            .collect();
        (intercept, coefs)
    }

    pub fn standardize_coefs(&self, b0: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let mut intercept = b0;
        let coefs = beta
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(b, (m, s))| {
                intercept += b * m;
                b * s
            })
            .collect();
        (intercept, coefs)
    }
}

/// Column-major standardized copy of a design matrix. Constant columns are
/// stored as zeros and flagged so that solvers keep their coefficient at 0.
#[derive(Clone, Debug)]
pub(crate) struct StdDesign {
    pub cols: Vec<Vec<f64>>,
    pub constant: Vec<bool>,
    pub scale: Standardization,
    pub n: usize,
}

const CONSTANT_SD: f64 = 1e-12;

impl StdDesign {
    pub fn new(x: ArrayView2<'_, f64>) -> Self {
        Self::from_rows(x, None)
    }

    /// Standardizes the given subset of rows (in the given order).
    pub fn from_rows(x: ArrayView2<'_, f64>, rows: Option<&[usize]>) -> Self {
        let p = x.ncols();
        let n = rows.map_or(x.nrows(), |r| r.len());
        let mut cols = Vec::with_capacity(p);
        let mut mean = Vec::with_capacity(p);
        let mut sd = Vec::with_capacity(p);
        let mut constant = Vec::with_capacity(p);
        for j in 0..p {
            let col = x.column(j);
            let mut c: Vec<f64> = match rows {
                Some(r) => r.iter().map(|&i| col[i]).collect(),
                None => col.to_vec(),
            };
            let m = c.iter().sum::<f64>() / n as f64;
            let v = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = v.sqrt();
            if s > CONSTANT_SD {
                c.iter_mut().for_each(|v| *v = (*v - m) / s);
                constant.push(false);
                sd.push(s);
            } else {
                c.iter_mut().for_each(|v| *v = 0.0);
                constant.push(true);
                sd.push(0.0);
            }
            mean.push(m);
            cols.push(c);
        }
        StdDesign {
            cols,
            constant,
            scale: Standardization { mean, sd },
            n,
        }
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }

    /// `b0 + X beta` on the standardized scale.
    pub fn linear_predictor(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.n];
        for (col, b) in self.cols.iter().zip(beta) {
            if *b != 0.0 {
                for (e, x) in eta.iter_mut().zip(col) {
                    *e += b * x;
                }
            }
        }
        eta
    }
}
