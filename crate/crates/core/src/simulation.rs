//! Monte-Carlo experiment harness: variant-subset resampling, bootstrap of
//! the reference correlation matrix, and direct multivariate-normal
//! simulation of summarized associations (with optional rounding), plus the
//! haplotype genotype simulator used by the individual-level oracle tests.
//!
//! Iterations are independent and run data-parallel. Each iteration draws
//! from its own ChaCha stream (`set_stream(iteration + 1)` on the config
//! seed), so results do not depend on scheduling or thread count.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::codes;
use crate::error::{Error, Result};
use crate::estimators::{ivw_correlated, pca_ivw, CausalEstimate};
use crate::model::{build_omega, build_omega_x, CorrelationMatrix, SummarySet, VariantSummary};
use crate::selection::{prune, stepwise_conditional};

/// 97.5% standard normal quantile used for the 95% confidence interval.
pub const Z_95: f64 = 1.959964;

/// How each iteration perturbs the base data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    /// Random subsets of the variants, without replacement.
    SubsetResample { subset_size: usize },
    /// Bootstrap of the reference panel individuals; the correlation matrix
    /// is recomputed each iteration.
    BootstrapCorrelation,
    /// Associations drawn from multivariate normal distributions around the
    /// base values.
    DirectMvn,
}

/// A selection method plus its parameters, applied before estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SelectionSpec {
    /// No selection: correlated IVW on all variants.
    All,
    Prune { rho: f64 },
    Conditional { p_threshold: f64, sample_size: f64 },
    Pca { variance_threshold: f64 },
}

impl SelectionSpec {
    pub fn label(&self) -> String {
        match self {
            SelectionSpec::All => "all".to_string(),
            SelectionSpec::Prune { rho } => format!("prune_rho_{rho}"),
            SelectionSpec::Conditional { p_threshold, .. } => {
                format!("conditional_p_{p_threshold}")
            }
            SelectionSpec::Pca { variance_threshold } => {
                format!("pca_var_{variance_threshold}")
            }
        }
    }
}

/// Reference genotype panel with column identifiers.
#[derive(Debug, Clone)]
pub struct Panel {
    pub ids: Vec<String>,
    pub genotypes: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub design: Design,
    pub iterations: usize,
    pub seed: u64,
    pub causal_effect: f64,
    pub rounding_decimals: Option<u32>,
    pub selection_specs: Vec<SelectionSpec>,
    pub base_summary: SummarySet,
    pub base_corr: CorrelationMatrix,
    pub reference_panel: Option<Panel>,
}

/// Per-spec aggregate over all iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecResult {
    pub label: String,
    /// Mean and SD over iterations with a defined estimate.
    pub mean_estimate: f64,
    pub sd_estimate: f64,
    /// Mean over iterations with a defined standard error.
    pub mean_se: f64,
    /// Fraction of iterations rejecting the null at 95%; undefined iterations
    /// count as non-rejections.
    pub empirical_power: f64,
    /// Iterations where the estimate existed but its SE was undefined.
    pub undefined_se_count: usize,
    /// Iterations where estimation failed outright.
    pub failed_count: usize,
    pub n_estimates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub iterations: usize,
    pub specs: Vec<SpecResult>,
}

/// Outcome of one spec in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IterationOutcome {
    Estimate { estimate: f64, se: Option<f64> },
    Failed { code: String },
}

fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration + 1);
    rng
}

struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn new() -> Self {
        Kahan { sum: 0.0, c: 0.0 }
    }
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

fn estimate_for_spec(
    spec: &SelectionSpec,
    summary: &SummarySet,
    corr: &CorrelationMatrix,
) -> Result<CausalEstimate> {
    match spec {
        SelectionSpec::All => ivw_correlated(summary, corr),
        SelectionSpec::Prune { rho } => {
            let sel = prune(summary, corr, *rho)?;
            let sub_s = summary.subset(&sel.selected_ids)?;
            let sub_c = corr.subset(&sel.selected_ids)?;
            ivw_correlated(&sub_s, &sub_c)
        }
        SelectionSpec::Conditional {
            p_threshold,
            sample_size,
        } => {
            let sel = stepwise_conditional(summary, corr, *p_threshold, *sample_size)?;
            if sel.selected_ids.is_empty() {
                return Err(Error::UndefinedEstimate("empty selection".into()));
            }
            let sub_s = summary.subset(&sel.selected_ids)?;
            let sub_c = corr.subset(&sel.selected_ids)?;
            ivw_correlated(&sub_s, &sub_c)
        }
        SelectionSpec::Pca { variance_threshold } => {
            pca_ivw(summary, corr, *variance_threshold).map(|(est, _)| est)
        }
    }
}

fn run_specs(
    specs: &[SelectionSpec],
    summary: &SummarySet,
    corr: &CorrelationMatrix,
) -> Vec<IterationOutcome> {
    specs
        .iter()
        .map(|spec| match estimate_for_spec(spec, summary, corr) {
            Ok(est) => IterationOutcome::Estimate {
                estimate: est.estimate,
                se: est.se_fixed,
            },
            Err(e) => IterationOutcome::Failed {
                code: error_code(&e),
            },
        })
        .collect()
}

fn error_code(e: &Error) -> String {
    match e {
        Error::SingularWeightMatrix => codes::SINGULAR.to_string(),
        Error::NotPositiveDefinite => codes::NOT_POSITIVE_DEFINITE.to_string(),
        other => format!("FAILED:{other}"),
    }
}

fn aggregate(
    specs: &[SelectionSpec],
    per_iteration: &[Vec<IterationOutcome>],
    seed: u64,
) -> ExperimentResult {
    let iterations = per_iteration.len();
    let specs_out = specs
        .iter()
        .enumerate()
        .map(|(si, spec)| {
            let mut est_sum = Kahan::new();
            let mut est_sq = Kahan::new();
            let mut se_sum = Kahan::new();
            let mut n_est = 0usize;
            let mut n_se = 0usize;
            let mut undefined_se = 0usize;
            let mut failed = 0usize;
            let mut rejections = 0usize;
            for row in per_iteration {
                match &row[si] {
                    IterationOutcome::Estimate { estimate, se } => {
                        est_sum.add(*estimate);
                        est_sq.add(estimate * estimate);
                        n_est += 1;
                        match se {
                            Some(se) => {
                                se_sum.add(*se);
                                n_se += 1;
                                if estimate.abs() > Z_95 * se {
                                    rejections += 1;
                                }
                            }
                            None => undefined_se += 1,
                        }
                    }
                    IterationOutcome::Failed { .. } => {
                        failed += 1;
                        undefined_se += 1;
                    }
                }
            }
            let mean = if n_est > 0 {
                est_sum.sum / n_est as f64
            } else {
                f64::NAN
            };
            let sd = if n_est > 1 {
                ((est_sq.sum - n_est as f64 * mean * mean) / (n_est as f64 - 1.0))
                    .max(0.0)
                    .sqrt()
            } else {
                f64::NAN
            };
            SpecResult {
                label: spec.label(),
                mean_estimate: mean,
                sd_estimate: sd,
                mean_se: if n_se > 0 {
                    se_sum.sum / n_se as f64
                } else {
                    f64::NAN
                },
                empirical_power: rejections as f64 / iterations as f64,
                undefined_se_count: undefined_se,
                failed_count: failed,
                n_estimates: n_est,
            }
        })
        .collect();
    ExperimentResult {
        seed,
        iterations,
        specs: specs_out,
    }
}

fn validate_common(config: &ExperimentConfig) -> Result<()> {
    if config.iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    if config.selection_specs.is_empty() {
        return Err(Error::Config("at least one selection spec required".into()));
    }
    if config.base_summary.ids() != config.base_corr.ids() {
        return Err(Error::Config(
            "base summary and correlation matrix are not aligned".into(),
        ));
    }
    Ok(())
}

/// Dispatches on the configured design.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentResult> {
    match config.design {
        Design::SubsetResample { .. } => subset_resample(config),
        Design::BootstrapCorrelation => bootstrap_correlation(config),
        Design::DirectMvn => direct_mvn(config),
    }
}

/// Repeats the analysis on random variant subsets drawn without replacement.
pub fn subset_resample(config: &ExperimentConfig) -> Result<ExperimentResult> {
    validate_common(config)?;
    let Design::SubsetResample { subset_size } = config.design else {
        return Err(Error::Config("design is not subset_resample".into()));
    };
    let total = config.base_summary.len();
    if subset_size == 0 || subset_size > total {
        return Err(Error::Config(format!(
            "subset size {subset_size} out of range for {total} variants"
        )));
    }
    let ids = config.base_summary.ids();
    let per_iteration: Vec<Vec<IterationOutcome>> = (0..config.iterations as u64)
        .into_par_iter()
        .map(|it| {
            let mut rng = iteration_rng(config.seed, it);
            let mut idx = rand::seq::index::sample(&mut rng, total, subset_size).into_vec();
            idx.sort_unstable();
            let chosen: Vec<String> = idx.iter().map(|&i| ids[i].clone()).collect();
            let summary = config
                .base_summary
                .subset(&chosen)
                .expect("subset ids come from the base set");
            let corr = config
                .base_corr
                .subset(&chosen)
                .expect("subset ids come from the base set");
            run_specs(&config.selection_specs, &summary, &corr)
        })
        .collect();
    Ok(aggregate(&config.selection_specs, &per_iteration, config.seed))
}

/// Repeats the analysis with correlation matrices recomputed from bootstrap
/// samples of the reference panel. Variants monomorphic in a bootstrap draw
/// are dropped for that iteration.
pub fn bootstrap_correlation(config: &ExperimentConfig) -> Result<ExperimentResult> {
    validate_common(config)?;
    let panel = config
        .reference_panel
        .as_ref()
        .ok_or_else(|| Error::Config("bootstrap design requires a reference panel".into()))?;
    if panel.ids != config.base_summary.ids() {
        return Err(Error::Config(
            "panel columns do not match the base summary variants".into(),
        ));
    }
    let n = panel.genotypes.nrows();
    if n < 2 {
        return Err(Error::Config("panel needs at least two individuals".into()));
    }
    let per_iteration: Vec<Vec<IterationOutcome>> = (0..config.iterations as u64)
        .into_par_iter()
        .map(|it| {
            let mut rng = iteration_rng(config.seed, it);
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let resampled = DMatrix::from_fn(n, panel.genotypes.ncols(), |r, c| {
                panel.genotypes[(rows[r], c)]
            });
            // drop columns that became monomorphic in this draw
            let mut kept = Vec::new();
            for c in 0..resampled.ncols() {
                let col = resampled.column(c);
                let first = col[0];
                if col.iter().any(|v| (v - first).abs() > 1e-12) {
                    kept.push(c);
                }
            }
            if kept.is_empty() {
                return config
                    .selection_specs
                    .iter()
                    .map(|_| IterationOutcome::Failed {
                        code: codes::MONOMORPHIC.to_string(),
                    })
                    .collect();
            }
            let kept_ids: Vec<String> = kept.iter().map(|&c| panel.ids[c].clone()).collect();
            let sub_panel = DMatrix::from_fn(n, kept.len(), |r, c| resampled[(r, kept[c])]);
            let corr = match CorrelationMatrix::from_panel(kept_ids.clone(), &sub_panel) {
                Ok(c) => c,
                Err(_) => {
                    return config
                        .selection_specs
                        .iter()
                        .map(|_| IterationOutcome::Failed {
                            code: codes::MONOMORPHIC.to_string(),
                        })
                        .collect()
                }
            };
            let summary = config
                .base_summary
                .subset(&kept_ids)
                .expect("kept ids come from the base set");
            run_specs(&config.selection_specs, &summary, &corr)
        })
        .collect();
    Ok(aggregate(&config.selection_specs, &per_iteration, config.seed))
}

/// Multivariate normal sampler with an eigenvalue floor for positive
/// semi-definite but degenerate covariance matrices.
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    pub floored: bool,
}

impl MvnSampler {
    /// Eigenvalues below 1e-10 of the largest are floored there (real LD
    /// matrices are routinely rank-deficient); eigenvalues below
    /// -1e-8 of the largest are a fatal input error.
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let j = mean.len();
        if cov.nrows() != j || cov.ncols() != j {
            return Err(Error::DimensionMismatch(
                "covariance does not match mean length".into(),
            ));
        }
        let eigen = cov.clone().symmetric_eigen();
        if eigen.eigenvalues.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFiniteEigenvalues);
        }
        let lambda1 = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        if lambda1 <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        let min_e = eigen
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_e < -1e-8 * lambda1 {
            return Err(Error::NotPositiveDefinite);
        }
        let floor = 1e-10 * lambda1;
        let floored = eigen.eigenvalues.iter().any(|&e| e < floor);
        let sqrt_vals = DVector::from_iterator(
            j,
            eigen.eigenvalues.iter().map(|&e| e.max(floor).sqrt()),
        );
        let factor = &eigen.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
        Ok(Self {
            mean,
            factor,
            floored,
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample(StandardNormal));
        &self.mean + &self.factor * z
    }
}

/// Rounds all associations and standard errors half-away-from-zero to the
/// given number of decimals. Variants whose standard errors round to zero
/// are excluded and returned in the second element.
pub fn round_summaries(summary: &SummarySet, decimals: u32) -> Result<(SummarySet, Vec<String>)> {
    let scale = 10f64.powi(decimals as i32);
    let rnd = |v: f64| (v * scale).round() / scale;
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for v in summary.variants() {
        let se_x = rnd(v.se_x);
        let se_y = rnd(v.se_y);
        if se_x == 0.0 || se_y == 0.0 {
            excluded.push(v.variant_id.clone());
            continue;
        }
        let mut out = v.clone();
        out.beta_x = rnd(v.beta_x);
        out.beta_y = rnd(v.beta_y);
        out.se_x = se_x;
        out.se_y = se_y;
        kept.push(out);
    }
    if kept.is_empty() {
        return Err(Error::UndefinedEstimate(
            "all standard errors rounded to zero".into(),
        ));
    }
    let mut out = SummarySet::new(kept)?;
    out.source_meta = summary.source_meta.clone();
    Ok((out, excluded))
}

/// Draws summarized associations directly: beta_x around the base values
/// with covariance Omega_X, beta_y around `causal_effect * beta_x` with
/// covariance Omega, optionally rounding before estimation.
pub fn direct_mvn(config: &ExperimentConfig) -> Result<ExperimentResult> {
    validate_common(config)?;
    if !matches!(config.design, Design::DirectMvn) {
        return Err(Error::Config("design is not direct_mvn".into()));
    }
    let omega = build_omega(&config.base_summary, &config.base_corr)?;
    let omega_x = build_omega_x(&config.base_summary, &config.base_corr)?;
    let base_bx = config.base_summary.beta_x();
    let mean_y = &base_bx * config.causal_effect;
    let sampler_x = MvnSampler::new(base_bx, &omega_x.values)?;
    let sampler_y = MvnSampler::new(mean_y, &omega.values)?;
    let per_iteration: Vec<Vec<IterationOutcome>> = (0..config.iterations as u64)
        .into_par_iter()
        .map(|it| {
            let mut rng = iteration_rng(config.seed, it);
            let bx = sampler_x.sample(&mut rng);
            let by = sampler_y.sample(&mut rng);
            let variants: Vec<VariantSummary> = config
                .base_summary
                .variants()
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut out = v.clone();
                    out.beta_x = bx[i];
                    out.beta_y = by[i];
                    out
                })
                .collect();
            let summary = SummarySet::new(variants).expect("base ids stay unique");
            let (summary, corr) = match config.rounding_decimals {
                None => (summary, config.base_corr.clone()),
                Some(d) => match round_summaries(&summary, d) {
                    Ok((rounded, excluded)) => {
                        if excluded.is_empty() {
                            (rounded, config.base_corr.clone())
                        } else {
                            let ids = rounded.ids();
                            let corr = config
                                .base_corr
                                .subset(&ids)
                                .expect("rounded ids come from the base set");
                            (rounded, corr)
                        }
                    }
                    Err(_) => {
                        return config
                            .selection_specs
                            .iter()
                            .map(|_| IterationOutcome::Failed {
                                code: codes::ROUNDED_SE_ZERO.to_string(),
                            })
                            .collect()
                    }
                },
            };
            run_specs(&config.selection_specs, &summary, &corr)
        })
        .collect();
    Ok(aggregate(&config.selection_specs, &per_iteration, config.seed))
}

/// Simulates diploid genotypes as sums of two haplotypes drawn independently
/// from the given pool.
pub fn simulate_genotypes(
    n: usize,
    haplotypes: &[(Vec<u8>, f64)],
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    if haplotypes.is_empty() {
        return Err(Error::Config("haplotype pool is empty".into()));
    }
    let j = haplotypes[0].0.len();
    if haplotypes.iter().any(|(h, _)| h.len() != j) {
        return Err(Error::Config("haplotype vectors differ in length".into()));
    }
    if haplotypes.iter().any(|(_, f)| !(*f > 0.0)) {
        return Err(Error::Config("haplotype frequencies must be positive".into()));
    }
    let total: f64 = haplotypes.iter().map(|(_, f)| f).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "haplotype frequencies sum to {total}, expected 1"
        )));
    }
    let mut cum = Vec::with_capacity(haplotypes.len());
    let mut acc = 0.0;
    for (_, f) in haplotypes {
        acc += f;
        cum.push(acc);
    }
    let draw = |rng: &mut dyn RngCore| {
        let u: f64 = rng.gen();
        cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
    };
    let mut g = DMatrix::zeros(n, j);
    for r in 0..n {
        let h1 = draw(rng);
        let h2 = draw(rng);
        for c in 0..j {
            g[(r, c)] = (haplotypes[h1].0[c] + haplotypes[h2].0[c]) as f64;
        }
    }
    Ok(g)
}

/// Analytic genotype correlation implied by a haplotype pool (the population
/// limit of [`simulate_genotypes`] followed by sample correlation).
pub fn haplotype_correlation(haplotypes: &[(Vec<u8>, f64)]) -> Result<DMatrix<f64>> {
    if haplotypes.is_empty() {
        return Err(Error::Config("haplotype pool is empty".into()));
    }
    let j = haplotypes[0].0.len();
    let mut mean = vec![0.0f64; j];
    for (h, f) in haplotypes {
        for c in 0..j {
            mean[c] += h[c] as f64 * f;
        }
    }
    let mut cov = DMatrix::zeros(j, j);
    for (h, f) in haplotypes {
        for a in 0..j {
            for b in 0..j {
                cov[(a, b)] += f * (h[a] as f64 - mean[a]) * (h[b] as f64 - mean[b]);
            }
        }
    }
    // genotype = sum of two independent haplotypes, so covariance doubles
    cov *= 2.0;
    let sd: Vec<f64> = (0..j).map(|i| cov[(i, i)].sqrt()).collect();
    if sd.iter().any(|s| *s <= 0.0) {
        return Err(Error::Config(
            "haplotype pool implies a monomorphic variant".into(),
        ));
    }
    let mut rho = DMatrix::from_fn(j, j, |a, b| cov[(a, b)] / (sd[a] * sd[b]));
    for d in 0..j {
        rho[(d, d)] = 1.0;
    }
    Ok(rho)
}
