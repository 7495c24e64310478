use super::SimError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfKnot {
    pub error: f64,
    pub prob: f64,
}

/// Error statistics of a set of position-error vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub bias: Vec<f64>,
    pub bias_norm: f64,
    pub rmse: f64,
    pub mae: f64,
    pub max: f64,
    pub cdf: Vec<CdfKnot>,
}

impl ErrorStats {
    /// Empirical CDF at `x`.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let below = self.cdf.partition_point(|k| k.error <= x);
        if below == 0 {
            0.0
        } else {
            self.cdf[below - 1].prob
        }
    }

    /// Smallest error whose empirical CDF reaches `p`.
    pub fn percentile(&self, p: f64) -> f64 {
        self.cdf
            .iter()
            .find(|k| k.prob >= p)
            .or(self.cdf.last())
            .map_or(0.0, |k| k.error)
    }
}

/// Bias (mean error vector), RMSE, MAE and the CDF of error norms.
pub fn compute_metrics(errors: &[Vec<f64>]) -> Result<ErrorStats, SimError> {
    let first = errors.first().ok_or(SimError::EmptyMetrics)?;
    let dims = first.len();
    if dims == 0 || errors.iter().any(|e| e.len() != dims) {
        return Err(SimError::Validation("error vectors must share a non-zero dimension".into()));
    }
    let n = errors.len() as f64;
    let mut bias = vec![0.0; dims];
    let mut norms = Vec::with_capacity(errors.len());
    for e in errors {
        for (b, v) in bias.iter_mut().zip(e) {
            *b += v;
        }
        norms.push(e.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    bias.iter_mut().for_each(|b| *b /= n);
    let bias_norm = bias.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rmse = (norms.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let mae = norms.iter().sum::<f64>() / n;
    norms.sort_by(f64::total_cmp);
    let cdf = norms
        .iter()
        .enumerate()
        .map(|(i, d)| CdfKnot {
            error: *d,
            prob: (i + 1) as f64 / n,
        })
        .collect();
    Ok(ErrorStats {
        count: errors.len(),
        bias,
        bias_norm,
        rmse,
        mae,
        max: *norms.last().expect("non-empty"),
        cdf,
    })
}
