//! Mirror descent on the scalar price of the budget constraint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest value the multiplicative (negative-entropy) update may reach.
pub const ENTROPY_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceFunction {
    /// `psi(l) = l^2 / 2`.
    #[default]
    SquaredEuclidean,
    /// `psi(l) = l ln l - l`.
    NegativeEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    pub eta: f64,
    pub ref_fn: ReferenceFunction,
    pub floor: f64,
}

impl DualState {
    pub fn new(lambda: f64, eta: f64, ref_fn: ReferenceFunction) -> Result<Self> {
        Self::with_floor(lambda, eta, ref_fn, ENTROPY_FLOOR)
    }

    /// Under negative entropy the initial value is raised to `floor`.
    pub fn with_floor(lambda: f64, eta: f64, ref_fn: ReferenceFunction, floor: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("dual variable must be finite and nonnegative, got {lambda}")));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
        }
        if ref_fn == ReferenceFunction::NegativeEntropy && !(floor > 0.0) {
            return Err(Error::InvalidArgument(format!("entropy floor must be positive, got {floor}")));
        }
        let lambda = match ref_fn {
            ReferenceFunction::SquaredEuclidean => lambda,
            ReferenceFunction::NegativeEntropy => lambda.max(floor),
        };
        Ok(Self { lambda, eta, ref_fn, floor })
    }
}

/// One prox step on `eta * (h_rho - consumed) * l + D(l, lambda)` over
/// `l >= 0` (`l >= floor` under negative entropy).
pub fn dual_update(state: DualState, h_rho: f64, consumed: f64) -> DualState {
    let w = h_rho - consumed;
    let lambda = match state.ref_fn {
        ReferenceFunction::SquaredEuclidean => (state.lambda - state.eta * w).max(0.0),
        ReferenceFunction::NegativeEntropy => (state.lambda * (-state.eta * w).exp()).max(state.floor),
    };
    DualState { lambda, ..state }
}

/// `1 / (rho H sqrt(T))`.
pub fn default_step_size(rho: f64, horizon: usize, episodes: usize) -> Result<f64> {
    if !(rho > 0.0) || horizon == 0 || episodes == 0 {
        return Err(Error::InvalidArgument(format!(
            "step size needs positive rho, H and T, got ({rho}, {horizon}, {episodes})"
        )));
    }
    Ok(1.0 / (rho * horizon as f64 * (episodes as f64).sqrt()))
}

/// `D(l, prev) = psi(l) - psi(prev) - psi'(prev) (l - prev)`.
pub fn bregman(ref_fn: ReferenceFunction, lambda: f64, prev: f64) -> Result<f64> {
    match ref_fn {
        ReferenceFunction::SquaredEuclidean => Ok(0.5 * (lambda - prev) * (lambda - prev)),
        ReferenceFunction::NegativeEntropy => {
            if !(lambda > 0.0 && prev > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "negative entropy is defined on positive values, got ({lambda}, {prev})"
                )));
            }
            Ok(lambda * (lambda / prev).ln() - lambda + prev)
        }
    }
}
