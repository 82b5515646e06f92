//! Two-index coefficient schemes `beta_{i,j}` (row `i >= 0`, lag `j >= 1`).

use serde::{Deserialize, Serialize};

use super::{ModelError, Sequence, TailEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaScheme {
    /// Explicit table: `beta_{i,j} = rows[i][j - 1]`, zero outside the table.
    General {
        rows: Vec<Vec<f64>>,
    },
    /// `beta_{i,j} = sequence[i + j]`.
    SumForm {
        sequence: Sequence,
    },
    /// `beta_{i,j} = sequence[j]`; `sequence[0]` is never read.
    ColumnForm {
        sequence: Sequence,
    },
    ConstantOne,
    Zero,
    /// Finitely dependent equations: the outer expansion stops at lag `m - 1`
    /// and `beta_{i,j} = rows[i][j - 1]` is read only for `i + j < m`.
    FiniteLag {
        m: usize,
        rows: Vec<Vec<f64>>,
    },
}

impl BetaScheme {
    pub fn sum_form(sequence: Sequence) -> Self {
        BetaScheme::SumForm { sequence }
    }

    pub fn column_form(sequence: Sequence) -> Self {
        BetaScheme::ColumnForm { sequence }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            BetaScheme::General { rows } | BetaScheme::FiniteLag { rows, .. } => {
                if rows.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(ModelError::InvalidScheme("beta table entries must be finite".into()));
                }
                Ok(())
            }
            BetaScheme::SumForm { sequence } | BetaScheme::ColumnForm { sequence } => sequence.validate(),
            BetaScheme::ConstantOne | BetaScheme::Zero => Ok(()),
        }
    }

    /// `beta_{i,j}`; lag `j = 0` does not exist.
    pub fn beta_at(&self, i: usize, j: usize) -> Result<f64, ModelError> {
        if j == 0 {
            return Err(ModelError::ZeroLag);
        }
        Ok(self.at(i, j))
    }

    /// Unchecked `beta_{i,j}` for `j >= 1`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j >= 1);
        match self {
            BetaScheme::General { rows } => table(rows, i, j),
            BetaScheme::SumForm { sequence } => sequence.at(i + j),
            BetaScheme::ColumnForm { sequence } => sequence.at(j),
            BetaScheme::ConstantOne => 1.0,
            BetaScheme::Zero => 0.0,
            BetaScheme::FiniteLag { m, rows } => {
                if i + j < *m {
                    table(rows, i, j)
                } else {
                    0.0
                }
            }
        }
    }

    /// `bar_beta_j = max_{0 <= i < j} |beta_{i, j - i}|`.
    pub fn bar_beta(&self, j: usize) -> f64 {
        match self {
            BetaScheme::SumForm { sequence } => sequence.at(j).abs(),
            BetaScheme::ColumnForm { sequence } => sequence.materialize(j + 1)[1..]
                .iter()
                .fold(0.0, |m, v| f64::max(m, v.abs())),
            BetaScheme::ConstantOne => {
                if j >= 1 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => (0..j).fold(0.0, |m, i| f64::max(m, self.at(i, j - i).abs())),
        }
    }

    /// Lag bound of the outer expansion: `g_{t-k,t} = 0` for `k >= m`.
    pub fn lag_bound(&self) -> Option<usize> {
        match self {
            BetaScheme::FiniteLag { m, .. } => Some(*m),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            BetaScheme::Zero => true,
            BetaScheme::General { rows } | BetaScheme::FiniteLag { rows, .. } => {
                rows.iter().flatten().all(|v| *v == 0.0)
            }
            BetaScheme::SumForm { sequence } => sequence.support().is_some_and(|s| s <= 1),
            BetaScheme::ColumnForm { sequence } => sequence.support().is_some_and(|s| s <= 1),
            BetaScheme::ConstantOne => false,
        }
    }

    /// Row energy `sum_{j >= 1} beta_{i,j}^2`.
    pub fn row_energy(&self, i: usize) -> TailEstimate {
        match self {
            BetaScheme::General { rows } => {
                TailEstimate::exact(rows.get(i).map_or(0.0, |r| r.iter().map(|v| v * v).sum()))
            }
            BetaScheme::FiniteLag { m, rows } => TailEstimate::exact(
                rows.get(i)
                    .map_or(0.0, |r| r.iter().take(m.saturating_sub(i + 1)).map(|v| v * v).sum()),
            ),
            BetaScheme::SumForm { sequence } => sequence.sq_tail(i + 1),
            BetaScheme::ColumnForm { sequence } => sequence.sq_tail(1),
            BetaScheme::ConstantOne => TailEstimate::divergent(f64::INFINITY),
            BetaScheme::Zero => TailEstimate::exact(0.0),
        }
    }

    /// `B^2_k = sum_{j >= k} beta_j^2` for the one-index forms, with `k >= 1`.
    pub fn tail_energy(&self, k: usize) -> Option<TailEstimate> {
        match self {
            BetaScheme::SumForm { sequence } | BetaScheme::ColumnForm { sequence } => Some(sequence.sq_tail(k.max(1))),
            BetaScheme::ConstantOne => Some(TailEstimate::divergent(f64::INFINITY)),
            BetaScheme::Zero => Some(TailEstimate::exact(0.0)),
            _ => None,
        }
    }

    /// `B^2` of the one-index forms.
    pub fn b2(&self) -> Option<TailEstimate> {
        self.tail_energy(1)
    }

    /// Rows `0..rows` with lags `1..=max_lag`, as an explicit table.
    pub fn materialize(&self, rows: usize, max_lag: usize) -> BetaScheme {
        BetaScheme::General {
            rows: (0..rows)
                .map(|i| (1..=max_lag).map(|j| self.at(i, j)).collect())
                .collect(),
        }
    }
}

fn table(rows: &[Vec<f64>], i: usize, j: usize) -> f64 {
    rows.get(i).and_then(|r| r.get(j - 1)).copied().unwrap_or(0.0)
}
