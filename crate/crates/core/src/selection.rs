//! Instrument selection: stepwise pruning at a correlation threshold,
//! stepwise conditional selection from summarized statistics, and the
//! principal-component count used by the PCA estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{CorrelationMatrix, SummarySet, WeightKind, WeightMatrix};

/// Condition-number gate for candidate correlation submatrices in the
/// conditional step; candidates beyond it are skipped with a trace note.
pub const CONDITIONAL_CONDITION_GATE: f64 = 1e8;

/// Floor on the residual variance of the standardized joint solve, as a
/// fraction of the (unit) phenotypic variance.
pub const RESIDUAL_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMethod {
    Pruning,
    Conditional,
    Pca,
}

/// One step of a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub chosen: Option<String>,
    /// The decision statistic at this step (a p-value for pruning and
    /// conditional selection).
    pub statistic: f64,
    pub removed: Vec<String>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    /// Selection order is preserved.
    pub selected_ids: Vec<String>,
    pub parameters: BTreeMap<String, f64>,
    pub trace: Vec<TraceStep>,
}

/// Two-sided p-value from a standard normal z statistic.
pub fn two_sided_p(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * n.cdf(-z.abs())
}

fn check_aligned(summary: &SummarySet, corr: &CorrelationMatrix) -> Result<()> {
    if summary.ids() != corr.ids() {
        return Err(Error::DimensionMismatch(
            "summary set and correlation matrix are not aligned; call align() first".into(),
        ));
    }
    Ok(())
}

/// Stepwise pruning: repeatedly select the remaining variant with the
/// smallest marginal p-value and remove every remaining variant whose
/// correlation with it exceeds `rho_threshold` in magnitude.
///
/// Ties on the p-value break by lexicographic variant id.
pub fn prune(
    summary: &SummarySet,
    corr: &CorrelationMatrix,
    rho_threshold: f64,
) -> Result<SelectionResult> {
    check_aligned(summary, corr)?;
    if !(rho_threshold > 0.0 && rho_threshold < 1.0) {
        return Err(Error::Config(format!(
            "pruning threshold must be in (0, 1), got {rho_threshold}"
        )));
    }
    let j = summary.len();
    let ids = summary.ids();
    let pvals: Vec<f64> = summary
        .variants()
        .iter()
        .map(|v| two_sided_p(v.beta_x / v.se_x))
        .collect();

    let mut remaining: Vec<usize> = (0..j).collect();
    let mut selected = Vec::new();
    let mut trace = Vec::new();
    let mut step = 0;
    while !remaining.is_empty() {
        step += 1;
        let &best = remaining
            .iter()
            .min_by(|&&a, &&b| {
                pvals[a]
                    .partial_cmp(&pvals[b])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| ids[a].cmp(&ids[b]))
            })
            .expect("non-empty");
        let removed: Vec<String> = remaining
            .iter()
            .filter(|&&i| i != best && corr.get(best, i).abs() > rho_threshold)
            .map(|&i| ids[i].clone())
            .collect();
        remaining.retain(|&i| i != best && corr.get(best, i).abs() <= rho_threshold);
        selected.push(ids[best].clone());
        trace.push(TraceStep {
            step,
            chosen: Some(ids[best].clone()),
            statistic: pvals[best],
            removed,
            note: None,
        });
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("rho_threshold".to_string(), rho_threshold);
    Ok(SelectionResult {
        method: SelectionMethod::Pruning,
        selected_ids: selected,
        parameters,
        trace,
    })
}

struct ConditionalFit {
    /// Standardized joint coefficient of the candidate (last position).
    coefficient: f64,
    p_value: f64,
}

/// Joint solve on the standardized scale for the subset `members` with the
/// candidate in the last position.
fn conditional_fit(
    b_std: &[f64],
    corr: &CorrelationMatrix,
    members: &[usize],
    sample_size: f64,
) -> Option<ConditionalFit> {
    let k = members.len();
    let r = DMatrix::from_fn(k, k, |a, b| corr.get(members[a], members[b]));
    let eigen = r.symmetric_eigen();
    let max_e = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min_e = eigen
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(min_e > 0.0) || max_e / min_e >= CONDITIONAL_CONDITION_GATE {
        return None;
    }
    let b = nalgebra::DVector::from_iterator(k, members.iter().map(|&i| b_std[i]));
    // gamma = R^-1 b via the eigendecomposition
    let vt_b = eigen.eigenvectors.transpose() * &b;
    let scaled = nalgebra::DVector::from_iterator(
        k,
        vt_b.iter().zip(eigen.eigenvalues.iter()).map(|(v, e)| v / e),
    );
    let gamma = &eigen.eigenvectors * scaled;
    let resid_var = (1.0 - b.dot(&gamma)).max(RESIDUAL_VARIANCE_FLOOR);
    // (R^-1)_{kk} for the candidate position
    let last = k - 1;
    let rinv_ll: f64 = (0..k)
        .map(|i| {
            let v = eigen.eigenvectors[(last, i)];
            v * v / eigen.eigenvalues[i]
        })
        .sum();
    let se = (resid_var * rinv_ll / sample_size).sqrt();
    if !(se > 0.0) {
        return None;
    }
    let z = gamma[last] / se;
    Some(ConditionalFit {
        coefficient: gamma[last],
        p_value: two_sided_p(z),
    })
}

/// Forward stepwise conditional selection from summarized statistics.
///
/// Marginal betas are converted to the standardized (correlation) scale with
/// `b = beta_x / (se_x * sqrt(n))`; joint coefficients for a candidate set
/// come from solving the correlation submatrix against the standardized
/// betas, with the conditional standard error taken from the corresponding
/// diagonal of the inverse scaled by the residual variance. Selection stops
/// when the smallest conditional p-value reaches `p_threshold`.
pub fn stepwise_conditional(
    summary: &SummarySet,
    corr: &CorrelationMatrix,
    p_threshold: f64,
    sample_size: f64,
) -> Result<SelectionResult> {
    check_aligned(summary, corr)?;
    if !(p_threshold > 0.0 && p_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "p-value threshold must be in (0, 1], got {p_threshold}"
        )));
    }
    if !(sample_size > 1.0) {
        return Err(Error::Config(format!(
            "conditional selection needs a sample size > 1, got {sample_size}"
        )));
    }
    let j = summary.len();
    let ids = summary.ids();
    let sqrt_n = sample_size.sqrt();
    let b_std: Vec<f64> = summary
        .variants()
        .iter()
        .map(|v| v.beta_x / (v.se_x * sqrt_n))
        .collect();

    let mut selected_idx: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut step = 0;
    loop {
        step += 1;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut skipped = Vec::new();
        for cand in 0..j {
            if selected_idx.contains(&cand) {
                continue;
            }
            let mut members = selected_idx.clone();
            members.push(cand);
            match conditional_fit(&b_std, corr, &members, sample_size) {
                Some(fit) => {
                    let better = match &best {
                        None => true,
                        Some((p, idx, _)) => {
                            fit.p_value < *p || (fit.p_value == *p && ids[cand] < ids[*idx])
                        }
                    };
                    if better {
                        best = Some((fit.p_value, cand, fit.coefficient));
                    }
                }
                None => skipped.push(ids[cand].clone()),
            }
        }
        let note = if skipped.is_empty() {
            None
        } else {
            Some(format!(
                "skipped ill-conditioned candidates: {}",
                skipped.join(", ")
            ))
        };
        match best {
            Some((p, idx, _)) if p < p_threshold => {
                selected_idx.push(idx);
                trace.push(TraceStep {
                    step,
                    chosen: Some(ids[idx].clone()),
                    statistic: p,
                    removed: Vec::new(),
                    note,
                });
            }
            Some((p, _, _)) => {
                trace.push(TraceStep {
                    step,
                    chosen: None,
                    statistic: p,
                    removed: Vec::new(),
                    note: Some(match note {
                        Some(n) => format!("stopped: minimum conditional p >= threshold; {n}"),
                        None => "stopped: minimum conditional p >= threshold".to_string(),
                    }),
                });
                break;
            }
            None => {
                trace.push(TraceStep {
                    step,
                    chosen: None,
                    statistic: f64::NAN,
                    removed: Vec::new(),
                    note: Some(match note {
                        Some(n) => format!("stopped: no evaluable candidate; {n}"),
                        None => "stopped: no evaluable candidate".to_string(),
                    }),
                });
                break;
            }
        }
        if selected_idx.len() == j {
            break;
        }
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("p_threshold".to_string(), p_threshold);
    parameters.insert("sample_size".to_string(), sample_size);
    Ok(SelectionResult {
        method: SelectionMethod::Conditional,
        selected_ids: selected_idx.iter().map(|&i| ids[i].clone()).collect(),
        parameters,
        trace,
    })
}

/// Eigen spectrum of Psi and the retained component count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    pub cumulative_shares: Vec<f64>,
    pub k: usize,
    pub warnings: Vec<String>,
}

/// Eigendecomposes Psi and returns the smallest k whose cumulative
/// eigenvalue share strictly exceeds `variance_threshold` (k = J when no
/// prefix does), together with the J x k loading matrix.
pub fn pca_components(
    psi: &WeightMatrix,
    variance_threshold: f64,
) -> Result<(usize, DMatrix<f64>, EigenReport)> {
    if psi.kind != WeightKind::Psi {
        return Err(Error::Config(format!(
            "pca_components expects a Psi weighting matrix, got {:?}",
            psi.kind
        )));
    }
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "variance threshold must be in (0, 1], got {variance_threshold}"
        )));
    }
    let j = psi.values.nrows();
    let eigen = psi.values.clone().symmetric_eigen();
    if eigen.eigenvalues.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFiniteEigenvalues);
    }
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eigen.eigenvalues[i]).collect();
    let lambda1 = eigenvalues[0];
    let mut warnings = Vec::new();
    if eigenvalues.iter().any(|&e| e < -1e-8 * lambda1.abs()) {
        warnings.push(crate::diagnostics::codes::NEGATIVE_EIGENVALUE.to_string());
    }
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedEstimate(
            "Psi has nonpositive total variance".into(),
        ));
    }
    let mut cumulative_shares = Vec::with_capacity(j);
    let mut acc = 0.0;
    for e in &eigenvalues {
        acc += e;
        cumulative_shares.push(acc / total);
    }
    let k = cumulative_shares
        .iter()
        .position(|&s| s > variance_threshold)
        .map(|i| i + 1)
        .unwrap_or(j);
    let loadings = DMatrix::from_fn(j, k, |r, c| eigen.eigenvectors[(r, order[c])]);
    Ok((
        k,
        loadings,
        EigenReport {
            eigenvalues,
            cumulative_shares,
            k,
            warnings,
        },
    ))
}
