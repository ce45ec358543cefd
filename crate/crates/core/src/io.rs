//! File formats: tab-separated tables for summary statistics, correlation
//! matrices, genotype panels, selection results and experiment results, plus
//! a JSON experiment configuration.
//!
//! Floating-point values are written with the shortest representation that
//! round-trips, so write-then-read is lossless. Correlation matrices expect
//! signed r, not r squared.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CorrelationMatrix, SummarySet, VariantSummary};
use crate::selection::{SelectionMethod, SelectionResult, TraceStep};
use crate::simulation::{
    Design, ExperimentConfig, ExperimentResult, Panel, SelectionSpec, SpecResult,
};

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_f64(field: &str, context: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{context}: cannot parse '{field}' as a number")))
}

fn parse_opt_f64(field: &str, context: &str) -> Result<Option<f64>> {
    match field {
        "" | "-" | "NA" | "na" | "." => Ok(None),
        other => parse_f64(other, context).map(Some),
    }
}

fn split_lines(text: &str) -> Vec<&str> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .collect()
}

// ---------------------------------------------------------------------------
// summary statistics

pub const SUMMARY_COLUMNS: [&str; 7] = [
    "variant_id",
    "effect_allele",
    "other_allele",
    "beta_x",
    "se_x",
    "beta_y",
    "se_y",
];

pub fn format_summary(summary: &SummarySet) -> String {
    let has_maf = summary.variants().iter().any(|v| v.maf.is_some());
    let mut header: Vec<&str> = SUMMARY_COLUMNS.to_vec();
    if has_maf {
        header.push("maf");
    }
    let mut out = String::new();
    out.push_str(&header.join("\t"));
    out.push('\n');
    for v in summary.variants() {
        let mut fields = vec![
            v.variant_id.clone(),
            v.effect_allele.clone(),
            v.other_allele.clone(),
            fmt_f64(v.beta_x),
            fmt_f64(v.se_x),
            fmt_f64(v.beta_y),
            fmt_f64(v.se_y),
        ];
        if has_maf {
            fields.push(v.maf.map(fmt_f64).unwrap_or_else(|| "-".to_string()));
        }
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

pub fn parse_summary(text: &str) -> Result<SummarySet> {
    let lines = split_lines(text);
    let header = lines
        .first()
        .ok_or_else(|| Error::Parse("summary file is empty".into()))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| cols.iter().position(|c| *c == name);
    let mut required = Vec::with_capacity(SUMMARY_COLUMNS.len());
    for name in SUMMARY_COLUMNS {
        required.push(col(name).ok_or_else(|| {
            Error::Parse(format!("summary header missing required column '{name}'"))
        })?);
    }
    let maf_col = col("maf");
    let n_x_col = col("n_x");
    let n_y_col = col("n_y");
    let mut variants = Vec::new();
    let mut meta = BTreeMap::new();
    for (lineno, line) in lines.iter().enumerate().skip(1) {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let ctx = format!("summary line {}", lineno + 1);
        let get = |i: usize| -> Result<&str> {
            fields
                .get(i)
                .copied()
                .ok_or_else(|| Error::Parse(format!("{ctx}: too few fields")))
        };
        let maf = match maf_col {
            Some(i) => parse_opt_f64(get(i).unwrap_or(""), &ctx)?,
            None => None,
        };
        variants.push(VariantSummary::new(
            get(required[0])?,
            get(required[1])?,
            get(required[2])?,
            parse_f64(get(required[3])?, &ctx)?,
            parse_f64(get(required[4])?, &ctx)?,
            parse_f64(get(required[5])?, &ctx)?,
            parse_f64(get(required[6])?, &ctx)?,
            maf,
        )?);
        // sample sizes are kept as provenance; estimation takes them as
        // explicit arguments
        if lineno == 1 {
            if let Some(i) = n_x_col {
                if let Some(n) = parse_opt_f64(get(i).unwrap_or(""), &ctx)? {
                    meta.insert("n_x".to_string(), fmt_f64(n));
                }
            }
            if let Some(i) = n_y_col {
                if let Some(n) = parse_opt_f64(get(i).unwrap_or(""), &ctx)? {
                    meta.insert("n_y".to_string(), fmt_f64(n));
                }
            }
        }
    }
    Ok(SummarySet::new(variants)?.with_meta(meta))
}

pub fn read_summary(path: &Path) -> Result<SummarySet> {
    let text = std::fs::read_to_string(path)?;
    let mut summary = parse_summary(&text)?;
    summary
        .source_meta
        .insert("summary_path".to_string(), path.display().to_string());
    Ok(summary)
}

pub fn write_summary(path: &Path, summary: &SummarySet) -> Result<()> {
    Ok(std::fs::write(path, format_summary(summary))?)
}

// ---------------------------------------------------------------------------
// correlation matrices (signed r; first row and column carry variant ids)

pub fn format_correlation(corr: &CorrelationMatrix) -> String {
    let ids = corr.ids();
    let mut out = String::from("variant_id\t");
    out.push_str(&ids.join("\t"));
    out.push('\n');
    for (r, id) in ids.iter().enumerate() {
        out.push_str(id);
        for c in 0..ids.len() {
            out.push('\t');
            out.push_str(&fmt_f64(corr.get(r, c)));
        }
        out.push('\n');
    }
    out
}

pub fn parse_correlation(text: &str) -> Result<CorrelationMatrix> {
    let lines = split_lines(text);
    let header = lines
        .first()
        .ok_or_else(|| Error::Parse("correlation file is empty".into()))?;
    let ids: Vec<String> = header
        .split('\t')
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let j = ids.len();
    if j == 0 {
        return Err(Error::Parse("correlation header has no variant ids".into()));
    }
    if lines.len() != j + 1 {
        return Err(Error::Parse(format!(
            "correlation matrix has {} data rows, expected {j}",
            lines.len() - 1
        )));
    }
    let mut values = DMatrix::zeros(j, j);
    for (r, line) in lines.iter().skip(1).enumerate() {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != j + 1 {
            return Err(Error::Parse(format!(
                "correlation row {} has {} fields, expected {}",
                r + 2,
                fields.len(),
                j + 1
            )));
        }
        if fields[0] != ids[r] {
            return Err(Error::Parse(format!(
                "correlation row label '{}' does not match header id '{}'",
                fields[0], ids[r]
            )));
        }
        for c in 0..j {
            values[(r, c)] = parse_f64(fields[c + 1], &format!("correlation row {}", r + 2))?;
        }
    }
    CorrelationMatrix::new(ids, values)
}

pub fn read_correlation(path: &Path) -> Result<CorrelationMatrix> {
    parse_correlation(&std::fs::read_to_string(path)?)
}

pub fn write_correlation(path: &Path, corr: &CorrelationMatrix) -> Result<()> {
    Ok(std::fs::write(path, format_correlation(corr))?)
}

// ---------------------------------------------------------------------------
// genotype panels (rows = individuals, header = variant_id:ea:oa)

pub fn format_panel(panel: &Panel, alleles: &BTreeMap<String, (String, String)>) -> String {
    let mut out = String::new();
    let header: Vec<String> = panel
        .ids
        .iter()
        .map(|id| match alleles.get(id) {
            Some((ea, oa)) => format!("{id}:{ea}:{oa}"),
            None => format!("{id}:A:G"),
        })
        .collect();
    out.push_str(&header.join("\t"));
    out.push('\n');
    for r in 0..panel.genotypes.nrows() {
        let row: Vec<String> = (0..panel.genotypes.ncols())
            .map(|c| fmt_f64(panel.genotypes[(r, c)]))
            .collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

/// Parses a panel; returns the dosage matrix, the column ids, and the allele
/// pairs declared in the header.
pub fn parse_panel(text: &str) -> Result<(Panel, BTreeMap<String, (String, String)>)> {
    let lines = split_lines(text);
    let header = lines
        .first()
        .ok_or_else(|| Error::Parse("panel file is empty".into()))?;
    let mut ids = Vec::new();
    let mut alleles = BTreeMap::new();
    for field in header.split('\t') {
        let parts: Vec<&str> = field.trim().split(':').collect();
        if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Parse(format!(
                "panel header field '{field}' is not variant_id:effect_allele:other_allele"
            )));
        }
        ids.push(parts[0].to_string());
        alleles.insert(
            parts[0].to_string(),
            (parts[1].to_uppercase(), parts[2].to_uppercase()),
        );
    }
    let j = ids.len();
    let n = lines.len() - 1;
    if n == 0 {
        return Err(Error::Parse("panel has no individuals".into()));
    }
    let mut genotypes = DMatrix::zeros(n, j);
    for (r, line) in lines.iter().skip(1).enumerate() {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != j {
            return Err(Error::Parse(format!(
                "panel row {} has {} fields, expected {j}",
                r + 2,
                fields.len()
            )));
        }
        for c in 0..j {
            let v = parse_f64(fields[c], &format!("panel row {}", r + 2))?;
            if !(0.0..=2.0).contains(&v) {
                return Err(Error::Parse(format!(
                    "panel row {}: dosage {v} outside [0, 2]",
                    r + 2
                )));
            }
            genotypes[(r, c)] = v;
        }
    }
    Ok((Panel { ids, genotypes }, alleles))
}

pub fn read_panel(path: &Path) -> Result<(Panel, BTreeMap<String, (String, String)>)> {
    parse_panel(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// selection results

fn method_name(method: &SelectionMethod) -> &'static str {
    match method {
        SelectionMethod::Pruning => "pruning",
        SelectionMethod::Conditional => "conditional",
        SelectionMethod::Pca => "pca",
    }
}

fn method_from_name(name: &str) -> Result<SelectionMethod> {
    match name {
        "pruning" => Ok(SelectionMethod::Pruning),
        "conditional" => Ok(SelectionMethod::Conditional),
        "pca" => Ok(SelectionMethod::Pca),
        other => Err(Error::Parse(format!("unknown selection method '{other}'"))),
    }
}

pub fn format_selection(result: &SelectionResult) -> String {
    let mut out = String::new();
    out.push_str(&format!("# method\t{}\n", method_name(&result.method)));
    for (k, v) in &result.parameters {
        out.push_str(&format!("# parameter\t{k}\t{}\n", fmt_f64(*v)));
    }
    out.push_str("# selected");
    for id in &result.selected_ids {
        out.push('\t');
        out.push_str(id);
    }
    out.push('\n');
    out.push_str("step\tchosen\tstatistic\tremoved\tnote\n");
    for step in &result.trace {
        let chosen = step.chosen.clone().unwrap_or_else(|| "-".to_string());
        let removed = if step.removed.is_empty() {
            "-".to_string()
        } else {
            step.removed.join(",")
        };
        let note = step.note.clone().unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            step.step,
            chosen,
            fmt_f64(step.statistic),
            removed,
            note
        ));
    }
    out
}

pub fn parse_selection(text: &str) -> Result<SelectionResult> {
    let mut method = None;
    let mut parameters = BTreeMap::new();
    let mut selected_ids = Vec::new();
    let mut trace = Vec::new();
    let mut in_trace = false;
    for line in split_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "# method" => method = Some(method_from_name(fields.get(1).copied().unwrap_or(""))?),
            "# parameter" => {
                if fields.len() != 3 {
                    return Err(Error::Parse("malformed parameter line".into()));
                }
                parameters.insert(fields[1].to_string(), parse_f64(fields[2], "parameter")?);
            }
            "# selected" => {
                selected_ids = fields[1..].iter().map(|s| s.to_string()).collect();
            }
            "step" => in_trace = true,
            _ if in_trace => {
                if fields.len() != 5 {
                    return Err(Error::Parse("malformed trace line".into()));
                }
                trace.push(TraceStep {
                    step: fields[0]
                        .parse()
                        .map_err(|_| Error::Parse("bad trace step index".into()))?,
                    chosen: match fields[1] {
                        "-" => None,
                        id => Some(id.to_string()),
                    },
                    statistic: parse_f64(fields[2], "trace")?,
                    removed: match fields[3] {
                        "-" => Vec::new(),
                        list => list.split(',').map(str::to_string).collect(),
                    },
                    note: match fields[4] {
                        "-" => None,
                        n => Some(n.to_string()),
                    },
                });
            }
            other => return Err(Error::Parse(format!("unexpected line '{other}'"))),
        }
    }
    Ok(SelectionResult {
        method: method.ok_or_else(|| Error::Parse("selection file missing method".into()))?,
        selected_ids,
        parameters,
        trace,
    })
}

// ---------------------------------------------------------------------------
// experiment results

pub fn format_experiment_result(
    result: &ExperimentResult,
    annotations: &BTreeMap<String, String>,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("# seed\t{}\n", result.seed));
    out.push_str(&format!("# iterations\t{}\n", result.iterations));
    for (k, v) in annotations {
        out.push_str(&format!("# {k}\t{v}\n"));
    }
    out.push_str(
        "label\tmean_estimate\tsd_estimate\tmean_se\tempirical_power\tundefined_se_count\tfailed_count\tn_estimates\n",
    );
    for s in &result.specs {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            s.label,
            fmt_f64(s.mean_estimate),
            fmt_f64(s.sd_estimate),
            fmt_f64(s.mean_se),
            fmt_f64(s.empirical_power),
            s.undefined_se_count,
            s.failed_count,
            s.n_estimates
        ));
    }
    out
}

pub fn parse_experiment_result(text: &str) -> Result<ExperimentResult> {
    let mut seed = None;
    let mut iterations = None;
    let mut specs = Vec::new();
    let mut in_table = false;
    for line in split_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] == "# seed" {
            seed = Some(
                fields
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse("bad seed line".into()))?,
            );
        } else if fields[0] == "# iterations" {
            iterations = Some(
                fields
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse("bad iterations line".into()))?,
            );
        } else if fields[0].starts_with('#') {
            continue;
        } else if fields[0] == "label" {
            in_table = true;
        } else if in_table {
            if fields.len() != 8 {
                return Err(Error::Parse("malformed result row".into()));
            }
            let count = |f: &str| -> Result<usize> {
                f.parse()
                    .map_err(|_| Error::Parse(format!("bad count '{f}'")))
            };
            specs.push(SpecResult {
                label: fields[0].to_string(),
                mean_estimate: parse_f64(fields[1], "result")?,
                sd_estimate: parse_f64(fields[2], "result")?,
                mean_se: parse_f64(fields[3], "result")?,
                empirical_power: parse_f64(fields[4], "result")?,
                undefined_se_count: count(fields[5])?,
                failed_count: count(fields[6])?,
                n_estimates: count(fields[7])?,
            });
        } else {
            return Err(Error::Parse(format!("unexpected line '{}'", fields[0])));
        }
    }
    Ok(ExperimentResult {
        seed: seed.ok_or_else(|| Error::Parse("result file missing seed".into()))?,
        iterations: iterations
            .ok_or_else(|| Error::Parse("result file missing iterations".into()))?,
        specs,
    })
}

// ---------------------------------------------------------------------------
// experiment configuration (JSON; data files referenced by path)

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfigFile {
    pub design: Design,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default)]
    pub causal_effect: f64,
    #[serde(default)]
    pub rounding_decimals: Option<u32>,
    pub selection_specs: Vec<SelectionSpec>,
    pub summary: PathBuf,
    pub correlation: Option<PathBuf>,
    #[serde(default)]
    pub panel: Option<PathBuf>,
}

/// Loads a JSON experiment configuration and the data files it references.
/// Relative paths resolve against the configuration file's directory. When
/// no correlation file is given, one is computed from the panel.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let file: ExperimentConfigFile =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    let base_summary = read_summary(&resolve(&file.summary))?;
    let reference_panel = match &file.panel {
        Some(p) => Some(read_panel(&resolve(p))?.0),
        None => None,
    };
    let base_corr = match &file.correlation {
        Some(c) => read_correlation(&resolve(c))?,
        None => {
            let panel = reference_panel
                .as_ref()
                .ok_or_else(|| Error::Config("config needs a correlation file or a panel".into()))?;
            CorrelationMatrix::from_panel(panel.ids.clone(), &panel.genotypes)?
        }
    };
    Ok(ExperimentConfig {
        design: file.design,
        iterations: file.iterations,
        seed: file.seed,
        causal_effect: file.causal_effect,
        rounding_decimals: file.rounding_decimals,
        selection_specs: file.selection_specs,
        base_summary,
        base_corr,
        reference_panel,
    })
}
