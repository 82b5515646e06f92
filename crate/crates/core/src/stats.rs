//! Monte Carlo summaries.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl McEstimate {
    /// Mean and `sd / sqrt(n)` with the unbiased variance. A single sample has
    /// infinite standard error.
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len();
        if n == 0 {
            return McEstimate {
                mean: f64::NAN,
                std_err: f64::INFINITY,
                samples: 0,
            };
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let std_err = if n < 2 {
            f64::INFINITY
        } else {
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        McEstimate {
            mean,
            std_err,
            samples: n,
        }
    }

    /// `|mean - target| <= z * std_err`, with exact agreement always accepted.
    pub fn within(&self, target: f64, z: f64) -> bool {
        self.mean == target || (self.mean - target).abs() <= z * self.std_err
    }
}
