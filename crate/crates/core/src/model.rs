//! Shared data model: per-variant summary statistics, genetic correlation
//! matrices, and the weighting matrices built from them.
//!
//! All types are immutable after construction; operations are pure functions,
//! so values can be shared freely across threads.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for symmetry of an ingested correlation matrix.
/// Matrices passing the check are symmetrized as (M + M^T)/2.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Marginal association estimates for one genetic variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant_id: String,
    pub effect_allele: String,
    pub other_allele: String,
    /// Association with the risk factor, per effect allele.
    pub beta_x: f64,
    pub se_x: f64,
    /// Association with the outcome (log odds or outcome units), per effect allele.
    pub beta_y: f64,
    pub se_y: f64,
    /// Minor allele frequency in (0, 0.5], when known.
    pub maf: Option<f64>,
}

impl VariantSummary {
    pub fn new(
        variant_id: impl Into<String>,
        effect_allele: impl Into<String>,
        other_allele: impl Into<String>,
        beta_x: f64,
        se_x: f64,
        beta_y: f64,
        se_y: f64,
        maf: Option<f64>,
    ) -> Result<Self> {
        let variant_id = variant_id.into();
        let effect_allele = effect_allele.into().to_ascii_uppercase();
        let other_allele = other_allele.into().to_ascii_uppercase();
        if !(se_x > 0.0) || !(se_y > 0.0) {
            return Err(Error::InvalidSummary(format!(
                "{variant_id}: standard errors must be positive (se_x={se_x}, se_y={se_y})"
            )));
        }
        if effect_allele == other_allele {
            return Err(Error::InvalidSummary(format!(
                "{variant_id}: effect and other allele are identical ({effect_allele})"
            )));
        }
        if !beta_x.is_finite() || !beta_y.is_finite() {
            return Err(Error::InvalidSummary(format!(
                "{variant_id}: non-finite association estimate"
            )));
        }
        if let Some(m) = maf {
            if !(m > 0.0 && m <= 0.5) {
                return Err(Error::InvalidSummary(format!(
                    "{variant_id}: maf {m} outside (0, 0.5]"
                )));
            }
        }
        Ok(Self {
            variant_id,
            effect_allele,
            other_allele,
            beta_x,
            se_x,
            beta_y,
            se_y,
            maf,
        })
    }

    /// Whether the allele pair is strand-ambiguous (A/T or C/G).
    pub fn is_palindromic(&self) -> bool {
        matches!(
            (self.effect_allele.as_str(), self.other_allele.as_str()),
            ("A", "T") | ("T", "A") | ("C", "G") | ("G", "C")
        )
    }
}

/// An ordered collection of variant summaries with unique identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySet {
    variants: Vec<VariantSummary>,
    /// Free-form provenance (input paths, sample sizes, and the like).
    pub source_meta: BTreeMap<String, String>,
}

impl SummarySet {
    pub fn new(variants: Vec<VariantSummary>) -> Result<Self> {
        if variants.is_empty() {
            return Err(Error::InvalidSummary("summary set is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &variants {
            if !seen.insert(v.variant_id.as_str()) {
                return Err(Error::DuplicateVariant(v.variant_id.clone()));
            }
        }
        Ok(Self {
            variants,
            source_meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, meta: BTreeMap<String, String>) -> Self {
        self.source_meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    pub fn variants(&self) -> &[VariantSummary] {
        &self.variants
    }

    pub fn ids(&self) -> Vec<String> {
        self.variants.iter().map(|v| v.variant_id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant_id == id)
    }

    pub fn beta_x(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.variants.iter().map(|v| v.beta_x))
    }

    pub fn se_x(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.variants.iter().map(|v| v.se_x))
    }

    pub fn beta_y(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.variants.iter().map(|v| v.beta_y))
    }

    pub fn se_y(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.variants.iter().map(|v| v.se_y))
    }

    /// New set restricted to the given ids, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<SummarySet> {
        let variants: Vec<VariantSummary> = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidSummary(format!("unknown variant id: {id}")))
            })
            .collect::<Result<_>>()?;
        let mut out = SummarySet::new(variants)?;
        out.source_meta = self.source_meta.clone();
        Ok(out)
    }
}

/// Signed pairwise genetic correlations, symmetric with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    ids: Vec<String>,
    values: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Validates symmetry (within [`SYMMETRY_TOLERANCE`]) and range, then
    /// symmetrizes as (M + M^T)/2 and forces the diagonal to 1.
    pub fn new(ids: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let j = ids.len();
        if values.nrows() != j || values.ncols() != j {
            return Err(Error::DimensionMismatch(format!(
                "correlation matrix is {}x{} but {} ids given",
                values.nrows(),
                values.ncols(),
                j
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateVariant(id.clone()));
            }
        }
        let mut max_asym = 0.0f64;
        for r in 0..j {
            for c in (r + 1)..j {
                max_asym = max_asym.max((values[(r, c)] - values[(c, r)]).abs());
            }
        }
        if max_asym > SYMMETRY_TOLERANCE {
            return Err(Error::Asymmetric {
                tolerance: SYMMETRY_TOLERANCE,
                max_asymmetry: max_asym,
            });
        }
        let mut m = DMatrix::zeros(j, j);
        for r in 0..j {
            for c in 0..j {
                let v = 0.5 * (values[(r, c)] + values[(c, r)]);
                if !v.is_finite() || v.abs() > 1.0 + SYMMETRY_TOLERANCE {
                    return Err(Error::CorrelationOutOfRange {
                        row: r,
                        col: c,
                        value: v,
                    });
                }
                m[(r, c)] = v.clamp(-1.0, 1.0);
            }
        }
        for d in 0..j {
            m[(d, d)] = 1.0;
        }
        Ok(Self { ids, values: m })
    }

    pub fn identity(ids: Vec<String>) -> Result<Self> {
        let j = ids.len();
        Self::new(ids, DMatrix::identity(j, j))
    }

    /// Sample Pearson correlations of the columns of a genotype (or dosage)
    /// panel. Errors on a zero-variance column.
    pub fn from_panel(ids: Vec<String>, panel: &DMatrix<f64>) -> Result<Self> {
        let (n, j) = (panel.nrows(), panel.ncols());
        if j != ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "panel has {j} columns but {} ids given",
                ids.len()
            )));
        }
        if n < 2 {
            return Err(Error::DimensionMismatch(
                "panel needs at least two individuals".into(),
            ));
        }
        let mut centered = panel.clone();
        let mut norms = vec![0.0f64; j];
        for c in 0..j {
            let mean = panel.column(c).sum() / n as f64;
            for r in 0..n {
                centered[(r, c)] -= mean;
            }
            let ss: f64 = centered.column(c).iter().map(|v| v * v).sum();
            if ss <= 0.0 {
                return Err(Error::ZeroVarianceColumn(ids[c].clone()));
            }
            norms[c] = ss.sqrt();
        }
        let mut m = DMatrix::identity(j, j);
        for a in 0..j {
            for b in (a + 1)..j {
                let dot: f64 = centered.column(a).dot(&centered.column(b));
                let r = (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
                m[(a, b)] = r;
                m[(b, a)] = r;
            }
        }
        Ok(Self { ids, values: m })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    /// Restriction to the given ids, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<CorrelationMatrix> {
        let idx: Vec<usize> = ids
            .iter()
            .map(|id| {
                self.index_of(id)
                    .ok_or_else(|| Error::InvalidSummary(format!("unknown variant id: {id}")))
            })
            .collect::<Result<_>>()?;
        let k = idx.len();
        let values = DMatrix::from_fn(k, k, |r, c| self.values[(idx[r], idx[c])]);
        Ok(CorrelationMatrix {
            ids: ids.to_vec(),
            values,
        })
    }
}

/// Which weighting matrix a [`WeightMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// Outcome-association covariance: se_y(j1) se_y(j2) rho.
    Omega,
    /// Risk-factor-association covariance: se_x(j1) se_x(j2) rho.
    OmegaX,
    /// Weighted correlation matrix for the principal-component construction.
    Psi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub values: DMatrix<f64>,
    pub kind: WeightKind,
}

fn require_aligned(summary: &SummarySet, corr: &CorrelationMatrix) -> Result<()> {
    if summary.ids() != corr.ids() {
        return Err(Error::DimensionMismatch(
            "summary set and correlation matrix are not aligned; call align() first".into(),
        ));
    }
    Ok(())
}

/// Omega_{j1 j2} = se_y(j1) se_y(j2) rho_{j1 j2}.
pub fn build_omega(summary: &SummarySet, corr: &CorrelationMatrix) -> Result<WeightMatrix> {
    require_aligned(summary, corr)?;
    let se = summary.se_y();
    Ok(WeightMatrix {
        values: scaled_correlation(&se, corr),
        kind: WeightKind::Omega,
    })
}

/// Omega_X analogue built from the risk-factor standard errors.
pub fn build_omega_x(summary: &SummarySet, corr: &CorrelationMatrix) -> Result<WeightMatrix> {
    require_aligned(summary, corr)?;
    let se = summary.se_x();
    Ok(WeightMatrix {
        values: scaled_correlation(&se, corr),
        kind: WeightKind::OmegaX,
    })
}

/// Psi_{j1 j2} = beta_x(j1) beta_x(j2) rho_{j1 j2} / (se_y(j1) se_y(j2)).
///
/// The diagonal holds each variant's single-variant inverse-variance weight.
pub fn build_psi(summary: &SummarySet, corr: &CorrelationMatrix) -> Result<WeightMatrix> {
    require_aligned(summary, corr)?;
    let j = summary.len();
    let bx = summary.beta_x();
    let sy = summary.se_y();
    let d: Vec<f64> = (0..j).map(|i| bx[i] / sy[i]).collect();
    let values = DMatrix::from_fn(j, j, |r, c| d[r] * d[c] * corr.get(r, c));
    Ok(WeightMatrix {
        values,
        kind: WeightKind::Psi,
    })
}

fn scaled_correlation(se: &DVector<f64>, corr: &CorrelationMatrix) -> DMatrix<f64> {
    let j = se.len();
    DMatrix::from_fn(j, j, |r, c| se[r] * se[c] * corr.get(r, c))
}

/// Variants dropped while intersecting summary and correlation inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignWarnings {
    pub dropped_from_summary: Vec<String>,
    pub dropped_from_corr: Vec<String>,
}

impl AlignWarnings {
    pub fn is_clean(&self) -> bool {
        self.dropped_from_summary.is_empty() && self.dropped_from_corr.is_empty()
    }
}

/// Reorders both inputs to the summary set's variant order, dropping variants
/// missing from either side.
pub fn align(
    summary: &SummarySet,
    corr: &CorrelationMatrix,
) -> Result<(SummarySet, CorrelationMatrix, AlignWarnings)> {
    let corr_ids: std::collections::BTreeSet<&str> =
        corr.ids().iter().map(|s| s.as_str()).collect();
    let common: Vec<String> = summary
        .ids()
        .into_iter()
        .filter(|id| corr_ids.contains(id.as_str()))
        .collect();
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let common_set: std::collections::BTreeSet<&str> =
        common.iter().map(|s| s.as_str()).collect();
    let warnings = AlignWarnings {
        dropped_from_summary: summary
            .ids()
            .into_iter()
            .filter(|id| !common_set.contains(id.as_str()))
            .collect(),
        dropped_from_corr: corr
            .ids()
            .iter()
            .filter(|id| !common_set.contains(id.as_str()))
            .cloned()
            .collect(),
    };
    Ok((summary.subset(&common)?, corr.subset(&common)?, warnings))
}

/// Why a variant was dropped during harmonization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    NotInPanel,
    AlleleMismatch,
    Palindromic,
}

/// Record of the sign flips and drops applied by [`harmonize`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HarmonizeRecord {
    pub flipped: Vec<String>,
    pub dropped: Vec<(String, DropReason)>,
}

/// Reorients summary associations onto the reference panel's allele coding.
///
/// Where the effect/other alleles are swapped relative to the panel, beta_x
/// and beta_y are negated. Strand-ambiguous (A/T, C/G) variants are dropped
/// unless `keep_palindromic` is set; pairs matching in neither orientation
/// are dropped and recorded.
pub fn harmonize(
    summary: &SummarySet,
    panel_alleles: &BTreeMap<String, (String, String)>,
    keep_palindromic: bool,
) -> Result<(SummarySet, HarmonizeRecord)> {
    let mut record = HarmonizeRecord::default();
    let mut out = Vec::new();
    for v in summary.variants() {
        if v.is_palindromic() && !keep_palindromic {
            record
                .dropped
                .push((v.variant_id.clone(), DropReason::Palindromic));
            continue;
        }
        let Some((panel_eff, panel_oth)) = panel_alleles.get(&v.variant_id) else {
            record
                .dropped
                .push((v.variant_id.clone(), DropReason::NotInPanel));
            continue;
        };
        let panel_eff = panel_eff.to_ascii_uppercase();
        let panel_oth = panel_oth.to_ascii_uppercase();
        if v.effect_allele == panel_eff && v.other_allele == panel_oth {
            out.push(v.clone());
        } else if v.effect_allele == panel_oth && v.other_allele == panel_eff {
            let mut flipped = v.clone();
            flipped.effect_allele = panel_eff;
            flipped.other_allele = panel_oth;
            flipped.beta_x = -flipped.beta_x;
            flipped.beta_y = -flipped.beta_y;
            // minor allele frequency is orientation-free, keep as-is
            record.flipped.push(v.variant_id.clone());
            out.push(flipped);
        } else {
            record
                .dropped
                .push((v.variant_id.clone(), DropReason::AlleleMismatch));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidSummary(
            "no variants survived harmonization".into(),
        ));
    }
    let mut harmonized = SummarySet::new(out)?;
    harmonized.source_meta = summary.source_meta.clone();
    Ok((harmonized, record))
}
