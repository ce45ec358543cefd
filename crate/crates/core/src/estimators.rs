//! Causal effect estimators: inverse-variance weighted combinations of
//! summarized associations (uncorrelated, correlated, Cholesky-weighted,
//! principal components) and the individual-level 2SLS / allele-score
//! estimators used as oracles for them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, codes, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::model::{build_omega, build_psi, CorrelationMatrix, SummarySet};
use crate::selection::{pca_components, EigenReport};

/// A causal estimate with fixed- and random-effects standard errors.
///
/// Standard errors are `None` when the variance estimate was negative or the
/// weighting matrix made them undefined; the estimate itself is still
/// reported, mirrored by `diagnostics.variance_valid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEstimate {
    /// Outcome units per unit of the risk factor.
    pub estimate: f64,
    pub se_fixed: Option<f64>,
    pub se_random: Option<f64>,
    /// Residual standard error of the weighted regression (0 at J = 1).
    pub residual_sigma: f64,
    pub n_instruments: usize,
    pub diagnostics: DiagnosticsReport,
}

impl CausalEstimate {
    /// Standard error under the requested effects model.
    pub fn se(&self, random_effects: bool) -> Option<f64> {
        if random_effects {
            self.se_random
        } else {
            self.se_fixed
        }
    }
}

/// Individual-level data for the 2SLS oracle.
#[derive(Debug, Clone)]
pub struct IndividualData {
    genotypes: DMatrix<f64>,
    risk_factor: DVector<f64>,
    outcome: DVector<f64>,
}

impl IndividualData {
    pub fn new(
        genotypes: DMatrix<f64>,
        risk_factor: DVector<f64>,
        outcome: DVector<f64>,
    ) -> Result<Self> {
        let (n, j) = (genotypes.nrows(), genotypes.ncols());
        if risk_factor.len() != n || outcome.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "genotypes have {n} rows but risk factor has {} and outcome {}",
                risk_factor.len(),
                outcome.len()
            )));
        }
        if n <= j {
            return Err(Error::DimensionMismatch(format!(
                "need more individuals than variants (N={n}, J={j})"
            )));
        }
        for c in 0..j {
            let col = genotypes.column(c);
            let mean = col.sum() / n as f64;
            if col.iter().all(|v| (v - mean).abs() < 1e-12) {
                return Err(Error::ZeroVarianceColumn(format!("g{}", c + 1)));
            }
        }
        Ok(Self {
            genotypes,
            risk_factor,
            outcome,
        })
    }

    pub fn n(&self) -> usize {
        self.genotypes.nrows()
    }

    pub fn n_variants(&self) -> usize {
        self.genotypes.ncols()
    }

    pub fn genotypes(&self) -> &DMatrix<f64> {
        &self.genotypes
    }

    pub fn risk_factor(&self) -> &DVector<f64> {
        &self.risk_factor
    }

    pub fn outcome(&self) -> &DVector<f64> {
        &self.outcome
    }
}

fn centered_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows() as f64;
    for c in 0..m.ncols() {
        let mean = m.column(c).sum() / n;
        for r in 0..m.nrows() {
            out[(r, c)] -= mean;
        }
    }
    out
}

fn centered_vector(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.sum() / v.len() as f64;
    v.map(|x| x - mean)
}

/// Inverse-variance weighted estimate for uncorrelated variants (fixed-effect
/// meta-analysis of the per-variant ratio estimates).
pub fn ivw_uncorrelated(summary: &SummarySet) -> Result<CausalEstimate> {
    let j = summary.len();
    let bx = summary.beta_x();
    let by = summary.beta_y();
    let sy = summary.se_y();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..j {
        let w = 1.0 / (sy[i] * sy[i]);
        num += by[i] * bx[i] * w;
        den += bx[i] * bx[i] * w;
    }
    if den <= 0.0 {
        return Err(Error::UndefinedEstimate(
            "all risk-factor associations are zero".into(),
        ));
    }
    let estimate = num / den;
    let se_fixed = 1.0 / den.sqrt();
    let sigma = if j > 1 {
        let ss: f64 = (0..j)
            .map(|i| {
                let r = by[i] - estimate * bx[i];
                r * r / (sy[i] * sy[i])
            })
            .sum();
        (ss / (j as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    let se_random = if j > 1 {
        se_fixed * sigma.max(1.0)
    } else {
        se_fixed
    };
    let omega = DMatrix::from_diagonal(&sy.map(|s| s * s));
    let diagnostics = diagnostics::assess(&omega)?;
    Ok(CausalEstimate {
        estimate,
        se_fixed: Some(se_fixed),
        se_random: Some(se_random),
        residual_sigma: sigma,
        n_instruments: j,
        diagnostics,
    })
}

/// Generalized weighted regression of the outcome associations on the
/// risk-factor associations using an explicit weighting matrix.
/// Condition numbers at or beyond this are indistinguishable from exact
/// singularity in double precision.
const SINGULAR_CONDITION_LIMIT: f64 = 1e15;

fn ivw_with_omega(
    bx: &DVector<f64>,
    by: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<CausalEstimate> {
    let j = bx.len();
    let mut diagnostics = diagnostics::assess(omega)?;
    // The LU solve below does not reject singular input; it returns garbage
    // with finite entries. Treat matrices conditioned at or beyond the
    // reciprocal machine precision as exactly singular; anything better
    // conditioned is solved as-is, however unreliable the result.
    if diagnostics.determinant == 0.0
        || !diagnostics.condition_number.is_finite()
        || diagnostics.condition_number > SINGULAR_CONDITION_LIMIT
    {
        return Err(Error::SingularWeightMatrix);
    }
    let lu = omega.clone().lu();
    let a = lu.solve(bx).ok_or(Error::SingularWeightMatrix)?;
    let b = lu.solve(by).ok_or(Error::SingularWeightMatrix)?;
    let den = bx.dot(&a);
    let num = bx.dot(&b);
    if den == 0.0 || !den.is_finite() || !num.is_finite() {
        return Err(Error::SingularWeightMatrix);
    }
    let estimate = num / den;
    if !estimate.is_finite() {
        return Err(Error::SingularWeightMatrix);
    }
    let (se_fixed, se_random, sigma);
    if den > 0.0 {
        let sf = 1.0 / den.sqrt();
        let resid = by - bx * estimate;
        let rw = lu.solve(&resid).ok_or(Error::SingularWeightMatrix)?;
        let s2 = resid.dot(&rw);
        sigma = if j > 1 {
            (s2.max(0.0) / (j as f64 - 1.0)).sqrt()
        } else {
            0.0
        };
        se_fixed = Some(sf);
        se_random = Some(if j > 1 { sf * sigma.max(1.0) } else { sf });
    } else {
        // Negative variance: report the estimate, mark the SE undefined.
        diagnostics.variance_valid = false;
        diagnostics.push_warning(codes::NEG_VARIANCE);
        se_fixed = None;
        se_random = None;
        sigma = f64::NAN;
    }
    Ok(CausalEstimate {
        estimate,
        se_fixed,
        se_random,
        residual_sigma: sigma,
        n_instruments: j,
        diagnostics,
    })
}

/// Inverse-variance weighted estimate accounting for correlation between
/// variants, via the weighting matrix Omega.
pub fn ivw_correlated(summary: &SummarySet, corr: &CorrelationMatrix) -> Result<CausalEstimate> {
    let omega = build_omega(summary, corr)?;
    ivw_with_omega(&summary.beta_x(), &summary.beta_y(), &omega.values)
}

/// Variant of [`ivw_correlated`] over a correlation-like matrix whose
/// unit-diagonal invariant may have been waived (ridge-adjusted input).
pub fn ivw_correlated_with_matrix(
    summary: &SummarySet,
    corr_values: &DMatrix<f64>,
) -> Result<CausalEstimate> {
    let j = summary.len();
    if corr_values.nrows() != j || corr_values.ncols() != j {
        return Err(Error::DimensionMismatch(format!(
            "correlation values are {}x{} for {} variants",
            corr_values.nrows(),
            corr_values.ncols(),
            j
        )));
    }
    let sy = summary.se_y();
    let omega = DMatrix::from_fn(j, j, |r, c| sy[r] * sy[c] * corr_values[(r, c)]);
    ivw_with_omega(&summary.beta_x(), &summary.beta_y(), &omega)
}

/// Correlated IVW computed through the Cholesky factor of Omega: transforms
/// both association vectors by the inverse of the lower factor, then runs
/// unweighted through-the-origin regression. Must agree with
/// [`ivw_correlated`] whenever Omega is positive definite.
pub fn ivw_correlated_cholesky(
    summary: &SummarySet,
    corr: &CorrelationMatrix,
) -> Result<CausalEstimate> {
    let omega = build_omega(summary, corr)?;
    let diagnostics = diagnostics::assess(&omega.values)?;
    let chol = omega
        .values
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let cx = l
        .solve_lower_triangular(&summary.beta_x())
        .ok_or(Error::NotPositiveDefinite)?;
    let cy = l
        .solve_lower_triangular(&summary.beta_y())
        .ok_or(Error::NotPositiveDefinite)?;
    let den = cx.dot(&cx);
    if den <= 0.0 {
        return Err(Error::UndefinedEstimate(
            "all risk-factor associations are zero".into(),
        ));
    }
    let j = summary.len();
    let estimate = cx.dot(&cy) / den;
    let se_fixed = 1.0 / den.sqrt();
    let sigma = if j > 1 {
        let r = &cy - &cx * estimate;
        (r.dot(&r) / (j as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    let se_random = if j > 1 {
        se_fixed * sigma.max(1.0)
    } else {
        se_fixed
    };
    Ok(CausalEstimate {
        estimate,
        se_fixed: Some(se_fixed),
        se_random: Some(se_random),
        residual_sigma: sigma,
        n_instruments: j,
        diagnostics,
    })
}

/// Eigen spectrum and component count backing a PCA-IVW estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    pub eigenvalues: Vec<f64>,
    pub cumulative_shares: Vec<f64>,
    pub k: usize,
    pub warnings: Vec<String>,
}

impl From<&EigenReport> for PcaReport {
    fn from(e: &EigenReport) -> Self {
        PcaReport {
            eigenvalues: e.eigenvalues.clone(),
            cumulative_shares: e.cumulative_shares.clone(),
            k: e.k,
            warnings: e.warnings.clone(),
        }
    }
}

/// IVW estimate on principal components of the weighted correlation matrix
/// Psi. Components are retained until their cumulative eigenvalue share
/// strictly exceeds `variance_threshold`.
pub fn pca_ivw(
    summary: &SummarySet,
    corr: &CorrelationMatrix,
    variance_threshold: f64,
) -> Result<(CausalEstimate, PcaReport)> {
    let psi = build_psi(summary, corr)?;
    let (k, loadings, eigen) = pca_components(&psi, variance_threshold)?;
    let omega = build_omega(summary, corr)?;
    let tb_x = loadings.transpose() * summary.beta_x();
    let tb_y = loadings.transpose() * summary.beta_y();
    let t_omega = loadings.transpose() * &omega.values * &loadings;
    let mut est = ivw_with_omega(&tb_x, &tb_y, &t_omega)?;
    est.n_instruments = k;
    for w in &eigen.warnings {
        est.diagnostics.push_warning(w);
    }
    Ok((est, PcaReport::from(&eigen)))
}

fn collinear_column_names(z: &DMatrix<f64>) -> Vec<String> {
    // exact pairwise collinearity on centered columns
    let mut names = std::collections::BTreeSet::new();
    let j = z.ncols();
    for a in 0..j {
        for b in (a + 1)..j {
            let ca = z.column(a);
            let cb = z.column(b);
            let dot = ca.dot(&cb);
            let na = ca.norm();
            let nb = cb.norm();
            if na > 0.0 && nb > 0.0 && (dot.abs() / (na * nb) - 1.0).abs() < 1e-12 {
                names.insert(format!("g{}", a + 1));
                names.insert(format!("g{}", b + 1));
            }
        }
    }
    names.into_iter().collect()
}

/// Two-stage least squares with intercepts absorbed by mean-centring all
/// columns. Standard error from the second stage under homoscedasticity.
pub fn two_stage_least_squares(data: &IndividualData) -> Result<CausalEstimate> {
    let n = data.n();
    let j = data.n_variants();
    let z = centered_columns(data.genotypes());
    let x = centered_vector(data.risk_factor());
    let y = centered_vector(data.outcome());
    let ztz = z.transpose() * &z;
    let diagnostics = diagnostics::assess(&ztz)?;
    let ztx = z.transpose() * &x;
    let zty = z.transpose() * &y;
    let lu = ztz.clone().lu();
    let wx = lu.solve(&ztx).ok_or_else(|| Error::SingularSystem {
        collinear: collinear_column_names(&z),
    })?;
    let x_pz_x = ztx.dot(&wx);
    let x_pz_y = wx.dot(&zty);
    if x_pz_x <= 0.0 || !x_pz_x.is_finite() {
        return Err(Error::SingularSystem {
            collinear: collinear_column_names(&z),
        });
    }
    let estimate = x_pz_y / x_pz_x;
    // second-stage residuals use the observed risk factor
    let resid = &y - &x * estimate;
    let dof = (n as f64 - 2.0).max(1.0);
    let sigma2 = resid.dot(&resid) / dof;
    let se = (sigma2 / x_pz_x).sqrt();
    Ok(CausalEstimate {
        estimate,
        se_fixed: Some(se),
        se_random: Some(se),
        residual_sigma: sigma2.sqrt(),
        n_instruments: j,
        diagnostics,
    })
}

/// Per-variant univariable association estimates plus the sample genotype
/// correlation matrix, computed from the same individuals.
///
/// Slopes come from simple regressions with an intercept. Standard errors use
/// the residual standard error of the joint (multivariable) regression scaled
/// by each variant's genotype variance, which keeps the summarized-data IVW
/// estimate algebraically identical to 2SLS on the same data.
pub fn summarize(data: &IndividualData) -> Result<(SummarySet, CorrelationMatrix)> {
    let n = data.n();
    let j = data.n_variants();
    if n <= j + 1 {
        return Err(Error::DimensionMismatch(format!(
            "need N > J + 1 for residual degrees of freedom (N={n}, J={j})"
        )));
    }
    let z = centered_columns(data.genotypes());
    let x = centered_vector(data.risk_factor());
    let y = centered_vector(data.outcome());
    let ztz = z.transpose() * &z;
    let lu = ztz.clone().lu();
    let ztx = z.transpose() * &x;
    let zty = z.transpose() * &y;
    let coef_x = lu.solve(&ztx).ok_or_else(|| Error::SingularSystem {
        collinear: collinear_column_names(&z),
    })?;
    let coef_y = lu.solve(&zty).ok_or_else(|| Error::SingularSystem {
        collinear: collinear_column_names(&z),
    })?;
    let dof = (n - j - 1) as f64;
    let rx = &x - &z * &coef_x;
    let ry = &y - &z * &coef_y;
    let sigma_x = (rx.dot(&rx) / dof).sqrt();
    let sigma_y = (ry.dot(&ry) / dof).sqrt();

    let mut variants = Vec::with_capacity(j);
    for c in 0..j {
        let szz = ztz[(c, c)];
        let beta_x = ztx[c] / szz;
        let beta_y = zty[c] / szz;
        let se_x = sigma_x / szz.sqrt();
        let se_y = sigma_y / szz.sqrt();
        let p = data.genotypes().column(c).sum() / (2.0 * n as f64);
        let maf = if p > 0.0 && p < 1.0 {
            Some(p.min(1.0 - p).min(0.5))
        } else {
            None
        };
        variants.push(crate::model::VariantSummary::new(
            format!("g{}", c + 1),
            "A",
            "G",
            beta_x,
            se_x,
            beta_y,
            se_y,
            maf,
        )?);
    }
    let summary = SummarySet::new(variants)?;
    let corr = CorrelationMatrix::from_panel(summary.ids(), data.genotypes())?;
    Ok((summary, corr))
}

/// Collapses the variants into a weighted allele score and uses the score as
/// the single instrument in 2SLS.
pub fn allele_score_estimate(data: &IndividualData, weights: &[f64]) -> Result<CausalEstimate> {
    let j = data.n_variants();
    if weights.len() != j {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {j} variants",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Config("allele score weights must be finite".into()));
    }
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::Config("allele score weights are all zero".into()));
    }
    let w = DVector::from_column_slice(weights);
    let score = data.genotypes() * w;
    let mean = score.sum() / score.len() as f64;
    if score.iter().all(|v| (v - mean).abs() < 1e-12) {
        return Err(Error::ZeroVarianceScore);
    }
    let scored = IndividualData::new(
        DMatrix::from_column_slice(score.len(), 1, score.as_slice()),
        data.risk_factor().clone(),
        data.outcome().clone(),
    )?;
    two_stage_least_squares(&scored)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::VariantSummary;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn summary_from(bx: &[f64], by: &[f64], sy: &[f64]) -> SummarySet {
        let vs: Vec<VariantSummary> = bx
            .iter()
            .zip(by)
            .zip(sy)
            .enumerate()
            .map(|(i, ((&bx, &by), &sy))| {
                VariantSummary::new(format!("v{i}"), "A", "G", bx, 0.05, by, sy, None).unwrap()
            })
            .collect();
        SummarySet::new(vs).unwrap()
    }

    #[test]
    fn single_variant_ratio_estimate() {
        let s = summary_from(&[2.0], &[1.0], &[0.5]);
        let est = ivw_uncorrelated(&s).unwrap();
        assert!((est.estimate - 0.5).abs() < 1e-14);
        assert!((est.se_fixed.unwrap() - 0.25).abs() < 1e-14);
        assert_eq!(est.se_random, est.se_fixed);
    }

    #[test]
    fn equal_weight_mean() {
        let s = summary_from(&[1.0, 1.0], &[1.0, 3.0], &[1.0, 1.0]);
        let est = ivw_uncorrelated(&s).unwrap();
        assert!((est.estimate - 2.0).abs() < 1e-14);
    }

    #[test]
    fn all_zero_beta_x_is_undefined() {
        let s = summary_from(&[0.0, 0.0], &[1.0, 2.0], &[1.0, 1.0]);
        assert!(matches!(
            ivw_uncorrelated(&s),
            Err(Error::UndefinedEstimate(_))
        ));
    }

    #[test]
    fn matches_meta_analysis_of_ratio_estimates() {
        // fixed-effect meta-analysis of per-variant ratios with weights (se_y/beta_x)^-2
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let j = 5;
            let bx: Vec<f64> = (0..j).map(|_| rng.gen_range(0.2..1.5)).collect();
            let by: Vec<f64> = (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sy: Vec<f64> = (0..j).map(|_| rng.gen_range(0.1..0.8)).collect();
            let s = summary_from(&bx, &by, &sy);
            let est = ivw_uncorrelated(&s).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..j {
                let ratio = by[i] / bx[i];
                let w = (bx[i] / sy[i]).powi(2);
                num += ratio * w;
                den += w;
            }
            let meta = num / den;
            assert!((est.estimate - meta).abs() / meta.abs().max(1e-12) < 1e-12);
            let meta_se = 1.0 / den.sqrt();
            assert!((est.se_fixed.unwrap() - meta_se).abs() / meta_se < 1e-12);
        }
    }

    #[test]
    fn correlated_reduces_to_uncorrelated_with_identity() {
        let s = summary_from(&[0.5, 1.2, -0.7], &[0.2, 0.9, -0.4], &[0.3, 0.4, 0.2]);
        let corr = CorrelationMatrix::identity(s.ids()).unwrap();
        let a = ivw_uncorrelated(&s).unwrap();
        let b = ivw_correlated(&s, &corr).unwrap();
        assert!((a.estimate - b.estimate).abs() / a.estimate.abs() < 1e-12);
        let (sa, sb) = (a.se_fixed.unwrap(), b.se_fixed.unwrap());
        assert!((sa - sb).abs() / sa < 1e-12);
        assert!((a.residual_sigma - b.residual_sigma).abs() < 1e-10);
    }

    #[test]
    fn duplicated_variants_with_unit_correlation_are_singular() {
        let s = summary_from(&[0.5, 0.5], &[0.2, 0.2], &[0.3, 0.3]);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let corr = CorrelationMatrix::new(s.ids(), m).unwrap();
        assert!(matches!(
            ivw_correlated(&s, &corr),
            Err(Error::SingularWeightMatrix)
        ));
    }

    #[test]
    fn cholesky_identity_reduces_to_through_origin_regression() {
        let s = summary_from(&[0.5, 1.2, -0.7], &[0.2, 0.9, -0.4], &[1.0, 1.0, 1.0]);
        let corr = CorrelationMatrix::identity(s.ids()).unwrap();
        let est = ivw_correlated_cholesky(&s, &corr).unwrap();
        let bx = s.beta_x();
        let by = s.beta_y();
        let slope = bx.dot(&by) / bx.dot(&bx);
        assert!((est.estimate - slope).abs() < 1e-14);
    }

    #[test]
    fn cholesky_agrees_with_generalized_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let j = rng.gen_range(2..7usize);
            let bx: Vec<f64> = (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let by: Vec<f64> = (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sy: Vec<f64> = (0..j).map(|_| rng.gen_range(0.1..1.0)).collect();
            if bx.iter().all(|v| v.abs() < 0.05) {
                continue;
            }
            let s = summary_from(&bx, &by, &sy);
            let corr = random_pd_correlation(j, &mut rng);
            let a = ivw_correlated(&s, &corr).unwrap();
            let b = ivw_correlated_cholesky(&s, &corr).unwrap();
            assert!((a.estimate - b.estimate).abs() / a.estimate.abs().max(1e-9) < 1e-10);
            let (sa, sb) = (a.se_fixed.unwrap(), b.se_fixed.unwrap());
            assert!((sa - sb).abs() / sa < 1e-10);
            // the generalized-residual sigma equals the Cholesky-transformed one
            assert!((a.residual_sigma - b.residual_sigma).abs() < 1e-8);
        }
    }

    #[test]
    fn cholesky_near_singular_pair_fails_or_flags() {
        let s = summary_from(&[0.5, 0.5001], &[0.2, 0.2001], &[0.3, 0.3]);
        let rho = 0.999999;
        let m = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let corr = CorrelationMatrix::new(s.ids(), m).unwrap();
        match ivw_correlated_cholesky(&s, &corr) {
            Err(Error::NotPositiveDefinite) => {}
            Ok(est) => {
                assert!(est.diagnostics.condition_number > 1e5);
            }
            Err(e) => panic!("unexpected error {e:?}"),
        }
    }

    pub(crate) fn random_pd_correlation(j: usize, rng: &mut ChaCha8Rng) -> CorrelationMatrix {
        // random factor structure plus a diagonal bump keeps things PD
        let f = DMatrix::from_fn(j, j + 2, |_, _| {
            let v: f64 = rng.sample(StandardNormal);
            v
        });
        let mut c = &f * f.transpose();
        for d in 0..j {
            c[(d, d)] += 0.5;
        }
        let sd: Vec<f64> = (0..j).map(|i| c[(i, i)].sqrt()).collect();
        let m = DMatrix::from_fn(j, j, |r, cc| c[(r, cc)] / (sd[r] * sd[cc]));
        let ids: Vec<String> = (0..j).map(|i| format!("v{i}")).collect();
        CorrelationMatrix::new(ids, m).unwrap()
    }

    #[test]
    fn permutation_invariance_of_correlated_ivw() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let j = 5;
        let bx: Vec<f64> = (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let by: Vec<f64> = (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sy: Vec<f64> = (0..j).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s = summary_from(&bx, &by, &sy);
        let corr = random_pd_correlation(j, &mut rng);
        let a = ivw_correlated(&s, &corr).unwrap();
        let mut perm: Vec<String> = s.ids();
        perm.reverse();
        let (s2, c2, _) = crate::model::align(&s.subset(&perm).unwrap(), &corr).unwrap();
        let b = ivw_correlated(&s2, &c2).unwrap();
        assert!((a.estimate - b.estimate).abs() / a.estimate.abs() < 1e-12);
    }

    #[test]
    fn scaling_se_y_scales_se_not_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let j = 4;
        let bx: Vec<f64> = (0..j).map(|_| rng.gen_range(0.2..1.0)).collect();
        let by: Vec<f64> = (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sy: Vec<f64> = (0..j).map(|_| rng.gen_range(0.1..1.0)).collect();
        let c = 2.5;
        let sy_scaled: Vec<f64> = sy.iter().map(|s| s * c).collect();
        let corr = random_pd_correlation(j, &mut rng);
        let a = ivw_correlated(&summary_from(&bx, &by, &sy), &corr).unwrap();
        let b = ivw_correlated(&summary_from(&bx, &by, &sy_scaled), &corr).unwrap();
        assert!((a.estimate - b.estimate).abs() / a.estimate.abs() < 1e-12);
        let (sa, sb) = (a.se_fixed.unwrap(), b.se_fixed.unwrap());
        assert!((sb / sa - c).abs() < 1e-12);
    }

    #[test]
    fn pca_rank_one_keeps_single_component() {
        // all pairwise correlations 1: one causal signal, k = 1 at any threshold
        let s = summary_from(&[0.5, 0.5, 0.5], &[0.2, 0.2, 0.2], &[0.3, 0.3, 0.3]);
        let m = DMatrix::from_element(3, 3, 1.0);
        let corr = CorrelationMatrix::new(s.ids(), m).unwrap();
        let (_, report) = pca_ivw(&s, &corr, 0.99).unwrap();
        assert_eq!(report.k, 1);
        assert!((report.cumulative_shares[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pca_full_rank_equals_correlated_ivw() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let j = rng.gen_range(2..6usize);
            let bx: Vec<f64> = (0..j).map(|_| rng.gen_range(0.2..1.0)).collect();
            let by: Vec<f64> = (0..j).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sy: Vec<f64> = (0..j).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s = summary_from(&bx, &by, &sy);
            let corr = random_pd_correlation(j, &mut rng);
            let a = ivw_correlated(&s, &corr).unwrap();
            let (b, report) = pca_ivw(&s, &corr, 1.0).unwrap();
            assert_eq!(report.k, j);
            assert!((a.estimate - b.estimate).abs() / a.estimate.abs().max(1e-9) < 1e-8);
        }
    }

    #[test]
    fn pca_threshold_rule_is_strict() {
        // eigenvalue shares [0.90, 0.095, 0.005] with threshold 0.99 -> k = 2;
        // identity correlation makes Psi diagonal with entries (beta_x/se_y)^2
        let shares = [0.90f64, 0.095, 0.005];
        let bx: Vec<f64> = shares.iter().map(|s| s.sqrt()).collect();
        let s = summary_from(&bx, &[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]);
        let corr = CorrelationMatrix::identity(s.ids()).unwrap();
        let psi = crate::model::build_psi(&s, &corr).unwrap();
        let (k, _, eigen) = crate::selection::pca_components(&psi, 0.99).unwrap();
        assert_eq!(k, 2);
        assert!((eigen.cumulative_shares[1] - 0.995).abs() < 1e-12);
    }

    fn simulated_data(seed: u64, j: usize, n: usize, theta: f64) -> IndividualData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = DMatrix::zeros(n, j);
        for c in 0..j {
            let maf = rng.gen_range(0.2..0.5);
            for r in 0..n {
                let a = (rng.gen::<f64>() < maf) as i32 + (rng.gen::<f64>() < maf) as i32;
                g[(r, c)] = a as f64;
            }
        }
        let beta: Vec<f64> = (0..j).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        for r in 0..n {
            let gx: f64 = (0..j).map(|c| g[(r, c)] * beta[c]).sum();
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            x[r] = gx + e1;
            y[r] = theta * x[r] + e2;
        }
        IndividualData::new(g, x, y).unwrap()
    }

    #[test]
    fn single_binary_instrument_is_wald_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 500;
        let mut g = DMatrix::zeros(n, 1);
        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        for r in 0..n {
            let gi = (rng.gen::<f64>() < 0.4) as i32 as f64;
            g[(r, 0)] = gi;
            x[r] = 0.8 * gi + rng.sample::<f64, _>(StandardNormal);
            y[r] = 0.5 * x[r] + rng.sample::<f64, _>(StandardNormal);
        }
        let data = IndividualData::new(g.clone(), x.clone(), y.clone()).unwrap();
        let est = two_stage_least_squares(&data).unwrap();
        let (mut y1, mut y0, mut x1, mut x0, mut n1, mut n0) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for r in 0..n {
            if g[(r, 0)] > 0.5 {
                y1 += y[r];
                x1 += x[r];
                n1 += 1.0;
            } else {
                y0 += y[r];
                x0 += x[r];
                n0 += 1.0;
            }
        }
        let wald = (y1 / n1 - y0 / n0) / (x1 / n1 - x0 / n0);
        assert!((est.estimate - wald).abs() < 1e-10);
    }

    #[test]
    fn null_effect_is_near_zero() {
        let mut covered = 0;
        let total = 100;
        for seed in 0..total {
            let data = simulated_data(seed, 3, 2000, 0.0);
            let est = two_stage_least_squares(&data).unwrap();
            if est.estimate.abs() < 4.0 * est.se_fixed.unwrap() {
                covered += 1;
            }
        }
        assert!(covered >= 99, "only {covered}/{total} within 4 SE of zero");
    }

    #[test]
    fn summarize_slopes_match_scalar_regression_loop() {
        let data = simulated_data(17, 4, 800, 0.3);
        let (summary, _) = summarize(&data).unwrap();
        let n = data.n();
        for c in 0..4 {
            let col = data.genotypes().column(c);
            let gm = col.sum() / n as f64;
            let xm = data.risk_factor().sum() / n as f64;
            let mut sgx = 0.0;
            let mut sgg = 0.0;
            for r in 0..n {
                sgx += (col[r] - gm) * (data.risk_factor()[r] - xm);
                sgg += (col[r] - gm) * (col[r] - gm);
            }
            let slope = sgx / sgg;
            assert!((summary.variants()[c].beta_x - slope).abs() < 1e-12);
        }
    }

    #[test]
    fn summarize_duplicated_columns_have_unit_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let mut g = DMatrix::zeros(n, 2);
        for r in 0..n {
            let v = rng.gen_range(0..3) as f64;
            g[(r, 0)] = v;
            g[(r, 1)] = v;
        }
        let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = IndividualData::new(g, x, y).unwrap();
        let corr = CorrelationMatrix::from_panel(
            vec!["a".into(), "b".into()],
            data.genotypes(),
        )
        .unwrap();
        assert_eq!(corr.get(0, 1), 1.0);
    }

    #[test]
    fn ivw_on_summarized_data_matches_2sls() {
        for seed in 0..10 {
            let data = simulated_data(100 + seed, 4, 2000, 0.25);
            let t = two_stage_least_squares(&data).unwrap();
            let (summary, corr) = summarize(&data).unwrap();
            let iv = ivw_correlated(&summary, &corr).unwrap();
            assert!(
                (iv.estimate - t.estimate).abs() / t.estimate.abs() < 1e-6,
                "seed {seed}: {} vs {}",
                iv.estimate,
                t.estimate
            );
        }
    }

    #[test]
    fn allele_score_projection_weight() {
        let data = simulated_data(23, 3, 1000, 0.2);
        let full = {
            let g1 = DMatrix::from_column_slice(
                data.n(),
                1,
                data.genotypes().column(0).as_slice(),
            );
            let single =
                IndividualData::new(g1, data.risk_factor().clone(), data.outcome().clone())
                    .unwrap();
            two_stage_least_squares(&single).unwrap()
        };
        let scored = allele_score_estimate(&data, &[1.0, 0.0, 0.0]).unwrap();
        assert!((scored.estimate - full.estimate).abs() < 1e-10);
    }

    #[test]
    fn allele_score_conditional_weights_match_full_2sls() {
        for seed in 0..10 {
            let data = simulated_data(300 + seed, 4, 2000, 0.3);
            let z = centered_columns(data.genotypes());
            let x = centered_vector(data.risk_factor());
            let ztz = z.transpose() * &z;
            let w = ztz.lu().solve(&(z.transpose() * &x)).unwrap();
            let full = two_stage_least_squares(&data).unwrap();
            let scored = allele_score_estimate(&data, w.as_slice()).unwrap();
            assert!(
                (scored.estimate - full.estimate).abs() / full.estimate.abs() < 1e-8,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn allele_score_rejects_bad_weights() {
        let data = simulated_data(31, 3, 500, 0.2);
        assert!(allele_score_estimate(&data, &[0.0, 0.0, 0.0]).is_err());
        assert!(allele_score_estimate(&data, &[f64::NAN, 1.0, 0.0]).is_err());
    }
}
