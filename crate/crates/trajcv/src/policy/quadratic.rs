//! Quadratic-in-action scalar models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A per-state quadratic-in-action model
/// `q(a) = q0 + gᵀ(a − m) + ½ (a − m)ᵀ H (a − m)`.
#[derive(Debug, Clone)]
pub struct QuadraticQ {
    pub q0: f64,
    pub g: DVector<f64>,
    pub h: DMatrix<f64>,
    /// Expansion center (usually the policy mean at the state).
    pub m: DVector<f64>,
}

impl QuadraticQ {
    pub fn new(q0: f64, g: DVector<f64>, h: DMatrix<f64>, m: DVector<f64>) -> Result<Self> {
        let d = m.len();
        if g.len() != d || h.nrows() != d || h.ncols() != d {
            return Err(Error::invalid("quadratic model dimension mismatch"));
        }
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::invalid(format!(
                "quadratic model Hessian is not symmetric (max asymmetry {asym})"
            )));
        }
        Ok(QuadraticQ { q0, g, h, m })
    }

    /// A constant model (zero linear and quadratic parts).
    pub fn constant(q0: f64, dim: usize) -> Self {
        QuadraticQ {
            q0,
            g: DVector::zeros(dim),
            h: DMatrix::zeros(dim, dim),
            m: DVector::zeros(dim),
        }
    }

    pub fn eval(&self, a: &DVector<f64>) -> f64 {
        let d = a - &self.m;
        self.q0 + self.g.dot(&d) + 0.5 * d.dot(&(&self.h * &d))
    }

    pub fn action_dim(&self) -> usize {
        self.m.len()
    }
}

/// Sensitivity of a [`QuadraticQ`]'s coefficients to its expansion center,
/// for the full chain-rule gradient mode when the center tracks the policy
/// mean. Both fields are zero when coefficients are treated as constants.
#[derive(Debug, Clone)]
pub struct CenterSensitivity {
    /// `∂q0/∂m`.
    pub dq0_dm: DVector<f64>,
    /// `∂ tr(H) / ∂m`.
    pub dtrace_h_dm: DVector<f64>,
}

impl CenterSensitivity {
    pub fn zeros(dim: usize) -> Self {
        CenterSensitivity {
            dq0_dm: DVector::zeros(dim),
            dtrace_h_dm: DVector::zeros(dim),
        }
    }
}
