use serde::{Deserialize, Serialize};

use super::{BetaScheme, Kernel, ModelError, Sequence};

/// A projective equation: family tag, mean, kernel and coefficient schemes.
///
/// Every family except `Larch` is solved by its own coefficient recursion.
/// `Larch` is sugar for a `FamilyI` equation, see [`EquationSpec::normalized`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum EquationSpec {
    /// `g_{t-k,t} = Q(alpha_k + sum_{i<k} beta_{i,k-i} zeta_{t-i} g_{t-i,t})`.
    FamilyI {
        mu: f64,
        kernel: Kernel,
        alpha: Sequence,
        beta: BetaScheme,
    },
    /// `g_{t-k,t} = alpha_k Q(sum_{i<k} beta_{i,k-i} zeta_{t-i} g_{t-i,t})`.
    #[serde(rename = "family_ii")]
    FamilyII {
        mu: f64,
        kernel: Kernel,
        alpha: Sequence,
        beta: BetaScheme,
    },
    /// As `FamilyI` but the inner sum reads the previous time's coefficients.
    Lagged {
        mu: f64,
        kernel: Kernel,
        alpha: Sequence,
        beta: BetaScheme,
    },
    /// Fractional integration with state-dependent memory `d(x)`.
    TvArfima {
        #[serde(default)]
        mu: f64,
        memory: Kernel,
        d_bar: f64,
    },
    /// `sigma_t = alpha + sum_{j>=1} beta_j sigma_{t-j} zeta_{t-j}`; `beta[0]` is ignored.
    Larch { alpha: f64, beta: Sequence },
}

impl EquationSpec {
    pub fn family_i(mu: f64, kernel: Kernel, alpha: Sequence, beta: BetaScheme) -> Self {
        EquationSpec::FamilyI {
            mu,
            kernel,
            alpha,
            beta,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            EquationSpec::FamilyI { .. } => "family_i",
            EquationSpec::FamilyII { .. } => "family_ii",
            EquationSpec::Lagged { .. } => "lagged",
            EquationSpec::TvArfima { .. } => "tv_arfima",
            EquationSpec::Larch { .. } => "larch",
        }
    }

    pub fn mu(&self) -> f64 {
        match self {
            EquationSpec::FamilyI { mu, .. }
            | EquationSpec::FamilyII { mu, .. }
            | EquationSpec::Lagged { mu, .. }
            | EquationSpec::TvArfima { mu, .. } => *mu,
            EquationSpec::Larch { alpha, .. } => *alpha,
        }
    }

    /// Kernel, alpha and beta of the recursion families.
    pub fn parts(&self) -> Option<(&Kernel, &Sequence, &BetaScheme)> {
        match self {
            EquationSpec::FamilyI {
                kernel, alpha, beta, ..
            }
            | EquationSpec::FamilyII {
                kernel, alpha, beta, ..
            }
            | EquationSpec::Lagged {
                kernel, alpha, beta, ..
            } => Some((kernel, alpha, beta)),
            _ => None,
        }
    }

    /// Rewrites `Larch` as the equivalent `FamilyI` equation: identity kernel,
    /// mean `alpha`, `alpha_j = alpha * beta_j` for `j >= 1`, `alpha_0 = 0` and
    /// column-form beta. Other families are returned unchanged.
    pub fn normalized(&self) -> EquationSpec {
        match self {
            EquationSpec::Larch { alpha, beta } => EquationSpec::FamilyI {
                mu: *alpha,
                kernel: Kernel::identity(),
                alpha: Sequence::Scaled {
                    factor: *alpha,
                    from: 1,
                    base: Box::new(beta.clone()),
                },
                beta: BetaScheme::ColumnForm { sequence: beta.clone() },
            },
            other => other.clone(),
        }
    }

    /// Structural checks plus the constants each family needs.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.mu().is_finite() {
            return Err(ModelError::InvalidSpec("mu must be finite".into()));
        }
        match self {
            EquationSpec::FamilyI {
                kernel, alpha, beta, ..
            }
            | EquationSpec::Lagged {
                kernel, alpha, beta, ..
            } => {
                alpha.validate()?;
                beta.validate()?;
                // Kernels without a dominating constant (threshold kernels with
                // Q(0) != 0) are admitted only for finitely dependent equations.
                if kernel.c_q().is_none() && beta.lag_bound().is_none() {
                    return Err(ModelError::MissingConstant {
                        family: self.family_name(),
                        constant: "c_q",
                    });
                }
                Ok(())
            }
            EquationSpec::FamilyII {
                kernel, alpha, beta, ..
            } => {
                alpha.validate()?;
                beta.validate()?;
                if kernel.c0_c1().is_none() {
                    return Err(ModelError::MissingConstant {
                        family: "family_ii",
                        constant: "c0/c1",
                    });
                }
                Ok(())
            }
            EquationSpec::TvArfima { memory, d_bar, .. } => {
                if !(*d_bar >= 0.0 && *d_bar < 0.5) {
                    return Err(ModelError::InvalidSpec(format!(
                        "d_bar must lie in [0, 1/2), got {d_bar}"
                    )));
                }
                match memory.sup_abs() {
                    Some(s) if s <= *d_bar => Ok(()),
                    Some(s) => Err(ModelError::InvalidSpec(format!(
                        "sup |d(x)| = {s} exceeds d_bar = {d_bar}"
                    ))),
                    None => Err(ModelError::InvalidSpec("memory function d(x) must be bounded".into())),
                }
            }
            EquationSpec::Larch { alpha, beta } => {
                if !alpha.is_finite() {
                    return Err(ModelError::InvalidSpec("LARCH alpha must be finite".into()));
                }
                beta.validate()
            }
        }
    }

    /// True when the spec is the constant process `X_t = mu`.
    pub fn is_trivial(&self) -> bool {
        match self.normalized() {
            EquationSpec::FamilyI { kernel, alpha, .. } | EquationSpec::Lagged { kernel, alpha, .. } => {
                alpha.is_zero() && kernel.apply(0.0) == 0.0
            }
            EquationSpec::FamilyII { alpha, .. } => alpha.is_zero(),
            _ => false,
        }
    }
}
