//! Numerical pathology detection for weighting and correlation matrices:
//! near-singularity, negative variance estimates, and sensitivity of the
//! causal estimate to a ridge adjustment of the correlation diagonal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CorrelationMatrix, SummarySet};

/// Condition number above which a matrix is flagged near-singular.
pub const NEAR_SINGULAR_CONDITION: f64 = 1e6;
/// Condition number above which inverse-based results are flagged unreliable.
pub const UNRELIABLE_CONDITION: f64 = 1e12;

/// Stable warning codes consumed by the CLI report.
pub mod codes {
    pub const NEAR_SINGULAR: &str = "NEAR_SINGULAR";
    pub const UNRELIABLE_CONDITION: &str = "UNRELIABLE_CONDITION";
    pub const SINGULAR: &str = "SINGULAR";
    pub const NOT_POSITIVE_DEFINITE: &str = "NOT_POSITIVE_DEFINITE";
    pub const NEG_VARIANCE: &str = "NEG_VARIANCE";
    pub const RIDGE_SENSITIVE: &str = "RIDGE_SENSITIVE";
    pub const NEGATIVE_EIGENVALUE: &str = "NEGATIVE_EIGENVALUE";
    pub const DEGENERATE_COVARIANCE: &str = "DEGENERATE_COVARIANCE";
    pub const ROUNDED_SE_ZERO: &str = "ROUNDED_SE_ZERO";
    pub const MONOMORPHIC: &str = "MONOMORPHIC";
}

/// Summary of the numerical state of a symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub determinant: f64,
    /// Natural log of |determinant|; finite where the plain determinant
    /// under- or overflows.
    pub log_abs_determinant: f64,
    pub condition_number: f64,
    /// Largest |element| of the inverse; absent when the matrix is not
    /// positive definite.
    pub max_abs_inverse_element: Option<f64>,
    pub min_eigenvalue: f64,
    pub variance_valid: bool,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn empty() -> Self {
        Self {
            determinant: f64::NAN,
            log_abs_determinant: f64::NAN,
            condition_number: f64::NAN,
            max_abs_inverse_element: None,
            min_eigenvalue: f64::NAN,
            variance_valid: true,
            warnings: Vec::new(),
        }
    }

    pub fn push_warning(&mut self, code: &str) {
        if !self.warnings.iter().any(|w| w == code) {
            self.warnings.push(code.to_string());
        }
    }
}

/// Assesses a symmetric matrix: determinant (accumulated in log space),
/// spectral condition number, minimum eigenvalue, and the largest absolute
/// element of the explicit inverse (positive definite matrices only).
pub fn assess(matrix: &DMatrix<f64>) -> Result<DiagnosticsReport> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "assess() needs a square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEigenvalues);
    }
    let eigen = matrix.clone().symmetric_eigen();
    let eigs: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    if eigs.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFiniteEigenvalues);
    }
    let min_eig = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let max_abs = eigs.iter().map(|e| e.abs()).fold(0.0f64, f64::max);
    let min_abs = eigs.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);

    let mut report = DiagnosticsReport::empty();
    report.min_eigenvalue = min_eig;
    report.condition_number = if min_abs == 0.0 {
        f64::INFINITY
    } else {
        max_abs / min_abs
    };

    if min_abs == 0.0 {
        report.determinant = 0.0;
        report.log_abs_determinant = f64::NEG_INFINITY;
        report.push_warning(codes::SINGULAR);
    } else {
        let log_abs: f64 = eigs.iter().map(|e| e.abs().ln()).sum();
        let sign = if eigs.iter().filter(|e| **e < 0.0).count() % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        report.log_abs_determinant = log_abs;
        report.determinant = sign * log_abs.exp();
    }

    if min_eig > 0.0 {
        // explicit inverse via the eigendecomposition
        let inv_vals = DVector::from_iterator(eigs.len(), eigs.iter().map(|e| 1.0 / e));
        let q = &eigen.eigenvectors;
        let inv = q * DMatrix::from_diagonal(&inv_vals) * q.transpose();
        report.max_abs_inverse_element =
            Some(inv.iter().map(|v| v.abs()).fold(0.0f64, f64::max));
    } else if min_eig <= 0.0 && min_abs != 0.0 {
        report.push_warning(codes::NOT_POSITIVE_DEFINITE);
    }

    if report.condition_number > UNRELIABLE_CONDITION {
        report.push_warning(codes::UNRELIABLE_CONDITION);
        report.push_warning(codes::NEAR_SINGULAR);
    } else if report.condition_number > NEAR_SINGULAR_CONDITION {
        report.push_warning(codes::NEAR_SINGULAR);
    }
    Ok(report)
}

/// A correlation matrix with epsilon added to the diagonal. The unit-diagonal
/// invariant is deliberately waived; the matrix is only valid as a weighting
/// input and is marked as adjusted.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgedCorrelation {
    pub ids: Vec<String>,
    pub values: DMatrix<f64>,
    pub epsilon: f64,
}

/// Adds `epsilon` to each diagonal entry of the correlation matrix.
pub fn ridge_adjust(corr: &CorrelationMatrix, epsilon: f64) -> Result<RidgedCorrelation> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!(
            "ridge epsilon must be positive, got {epsilon}"
        )));
    }
    let mut values = corr.values().clone();
    for d in 0..values.nrows() {
        values[(d, d)] += epsilon;
    }
    Ok(RidgedCorrelation {
        ids: corr.ids().to_vec(),
        values,
        epsilon,
    })
}

/// Before/after comparison of the causal estimate under a ridge adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeSensitivity {
    pub epsilon: f64,
    pub estimate_before: f64,
    pub se_before: Option<f64>,
    pub estimate_after: f64,
    pub se_after: Option<f64>,
    /// |shift| measured in units of the pre-adjustment standard error, when
    /// that standard error is defined.
    pub shift_in_se_units: Option<f64>,
    /// Set when the estimate moved by more than one pre-adjustment SE,
    /// indicating near-singular behaviour.
    pub flagged: bool,
}

/// Runs the correlated IVW estimate with and without the ridge adjustment and
/// reports how far the estimate moved.
pub fn ridge_sensitivity(
    summary: &SummarySet,
    corr: &CorrelationMatrix,
    epsilon: f64,
) -> Result<RidgeSensitivity> {
    let before = crate::estimators::ivw_correlated(summary, corr)?;
    let ridged = ridge_adjust(corr, epsilon)?;
    let after = crate::estimators::ivw_correlated_with_matrix(summary, &ridged.values)?;
    let shift = (after.estimate - before.estimate).abs();
    let shift_in_se_units = before.se_fixed.map(|se| shift / se);
    let flagged = shift_in_se_units.map_or(true, |s| s > 1.0);
    Ok(RidgeSensitivity {
        epsilon,
        estimate_before: before.estimate,
        se_before: before.se_fixed,
        estimate_after: after.estimate,
        se_after: after.se_fixed,
        shift_in_se_units,
        flagged,
    })
}

/// Proportion of risk-factor variance explained per variant, computed as
/// beta_x^2 * MAF * (1 - MAF) with beta_x in standard-deviation units.
pub fn variance_explained(summary: &SummarySet) -> Result<Vec<f64>> {
    let missing: Vec<String> = summary
        .variants()
        .iter()
        .filter(|v| v.maf.is_none())
        .map(|v| v.variant_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingMaf(missing));
    }
    Ok(summary
        .variants()
        .iter()
        .map(|v| {
            let maf = v.maf.unwrap();
            v.beta_x * v.beta_x * maf * (1.0 - maf)
        })
        .collect())
}
