//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 numerical failure
//! (singular or non-positive-definite weighting); numerical failures print a
//! machine-readable code on standard error as `error[CODE]: message`.
//!
//! Correlation inputs are signed r (not r squared).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use finemr::diagnostics::{assess, ridge_sensitivity, DiagnosticsReport, RidgeSensitivity};
use finemr::estimators::{
    ivw_correlated, ivw_uncorrelated, pca_ivw, two_stage_least_squares, CausalEstimate,
    IndividualData,
};
use finemr::io;
use finemr::model::{align, build_omega, build_psi, harmonize, CorrelationMatrix, SummarySet};
use finemr::selection::{pca_components, prune, stepwise_conditional, SelectionResult};
use finemr::simulation::{run as run_experiment, Panel, Z_95};
use finemr::Error;

#[derive(Parser)]
#[command(name = "finemr", version, about = "Mendelian randomization with correlated instruments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Causal estimate from summary statistics (or individual-level data for 2sls)
    Estimate(EstimateArgs),
    /// Instrument selection by pruning or stepwise conditional analysis
    Select(SelectArgs),
    /// Eigen report and principal-component loadings of the weighted correlation
    Pca(PcaArgs),
    /// Numerical diagnostics for the correlation and weighting matrices
    Diagnose(InputArgs),
    /// Correlation matrix from a reference genotype panel
    Correlate(CorrelateArgs),
    /// Run a simulation experiment from a JSON configuration
    Simulate(SimulateArgs),
    /// Per-variant scatter records plus the fitted slope
    Plotdata(PlotdataArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Summary statistics TSV
    #[arg(long)]
    summary: PathBuf,
    /// Correlation matrix TSV (signed r)
    #[arg(long)]
    correlation: Option<PathBuf>,
    /// Reference genotype panel TSV (used when no correlation file is given)
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Keep strand-ambiguous (A/T, C/G) variants when harmonizing to a panel
    #[arg(long, default_value_t = false)]
    keep_palindromic: bool,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Method {
    Ivw,
    IvwCorr,
    PcaIvw,
    #[value(name = "2sls")]
    Tsls,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Ivw => "ivw",
            Method::IvwCorr => "ivw-corr",
            Method::PcaIvw => "pca-ivw",
            Method::Tsls => "2sls",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Effects {
    Fixed,
    Random,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: EstimateInput,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long, value_enum, default_value = "fixed")]
    effects: Effects,
    /// Ridge epsilon added to the correlation diagonal (ivw-corr only)
    #[arg(long)]
    ridge: Option<f64>,
    /// Cumulative eigenvalue share retained by pca-ivw
    #[arg(long, default_value_t = 0.99)]
    variance: f64,
    /// Selection result TSV; estimation is restricted to the listed variants
    #[arg(long)]
    selection: Option<PathBuf>,
    /// Machine-readable JSON report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateInput {
    /// Summary statistics TSV (all methods except 2sls)
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    correlation: Option<PathBuf>,
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Individual-level phenotype TSV with columns x and y (2sls)
    #[arg(long)]
    phenotypes: Option<PathBuf>,
    #[arg(long, default_value_t = false)]
    keep_palindromic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectMethod {
    Prune,
    Conditional,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum)]
    method: SelectMethod,
    /// Correlation magnitude threshold for pruning
    #[arg(long)]
    rho: Option<f64>,
    /// Conditional p-value threshold
    #[arg(long)]
    pvalue: Option<f64>,
    /// Risk-factor sample size for conditional selection
    #[arg(long)]
    n: Option<f64>,
    /// Selection result TSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PcaArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Cumulative eigenvalue share to retain
    #[arg(long)]
    variance: f64,
    /// Eigen report JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Reference genotype panel TSV
    #[arg(long)]
    panel: PathBuf,
    /// Output correlation TSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment configuration JSON
    #[arg(long)]
    config: PathBuf,
    /// Override the configuration seed
    #[arg(long)]
    seed: Option<u64>,
    /// Result table TSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotdataArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Selection result TSV; listed variants are flagged and the slope is
    /// fitted on them alone
    #[arg(long)]
    selection: Option<PathBuf>,
    /// Output TSV
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with successful exit
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    if let Ok(threads) = std::env::var("FINEMR_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Select(args) => cmd_select(args),
        Command::Pca(args) => cmd_pca(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Correlate(args) => cmd_correlate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Plotdata(args) => cmd_plotdata(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, exit) = error_code(&e);
            eprintln!("error[{code}]: {e}");
            ExitCode::from(exit)
        }
    }
}

/// Machine-readable code and exit status for each failure class.
fn error_code(e: &Error) -> (&'static str, u8) {
    match e {
        Error::SingularWeightMatrix => ("SINGULAR", 2),
        Error::NotPositiveDefinite => ("NOT_POSITIVE_DEFINITE", 2),
        Error::SingularSystem { .. } => ("SINGULAR_SYSTEM", 2),
        Error::NonFiniteEigenvalues => ("NON_FINITE_EIGENVALUES", 2),
        Error::UndefinedEstimate(_) => ("UNDEFINED_ESTIMATE", 2),
        Error::ZeroVarianceScore => ("ZERO_VARIANCE_SCORE", 2),
        Error::ZeroVarianceColumn(_) => ("ZERO_VARIANCE_COLUMN", 2),
        Error::Io(_) => ("IO", 1),
        _ => ("USAGE", 1),
    }
}

fn sha256_hex(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Serialize)]
struct Provenance {
    tool_version: String,
    seed: Option<u64>,
    /// sha256 digest per input path
    inputs: BTreeMap<String, String>,
}

impl Provenance {
    fn new(paths: &[&Path], seed: Option<u64>) -> Result<Self, Error> {
        let mut inputs = BTreeMap::new();
        for p in paths {
            inputs.insert(p.display().to_string(), sha256_hex(p)?);
        }
        Ok(Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            inputs,
        })
    }
}

#[derive(Serialize)]
struct AnalysisReport {
    method: String,
    effects: String,
    n_variants: usize,
    estimate: f64,
    /// Undefined when the weighted variance came out non-positive.
    se: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    selection: Option<SelectionResult>,
    causal: CausalEstimate,
    ridge: Option<RidgeSensitivity>,
    warnings: Vec<String>,
    provenance: Provenance,
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt3_opt(v: Option<f64>) -> String {
    v.map(fmt3).unwrap_or_else(|| "-".to_string())
}

/// Loaded summary + correlation, aligned, with provenance paths and any
/// ingestion warnings.
struct LoadedInputs {
    summary: SummarySet,
    corr: CorrelationMatrix,
    paths: Vec<PathBuf>,
    warnings: Vec<String>,
    /// Selection restricting the analysis, when `--selection` was given.
    selection: Option<SelectionResult>,
}

/// Restricts the loaded inputs to the variants named by a selection file.
fn apply_selection(mut loaded: LoadedInputs, path: Option<&Path>) -> Result<LoadedInputs, Error> {
    let Some(path) = path else {
        return Ok(loaded);
    };
    let text = std::fs::read_to_string(path)?;
    let selection = io::parse_selection(&text)?;
    loaded.summary = loaded.summary.subset(&selection.selected_ids)?;
    loaded.corr = loaded.corr.subset(&selection.selected_ids)?;
    loaded.paths.push(path.to_path_buf());
    loaded.selection = Some(selection);
    Ok(loaded)
}

fn load_inputs(
    summary_path: &Path,
    correlation: Option<&Path>,
    panel: Option<&Path>,
    keep_palindromic: bool,
) -> Result<LoadedInputs, Error> {
    let summary = io::read_summary(summary_path)?;
    let mut warnings = Vec::new();
    let mut paths = vec![summary_path.to_path_buf()];
    let (summary, corr) = match (correlation, panel) {
        (Some(cp), _) => {
            paths.push(cp.to_path_buf());
            (summary, io::read_correlation(cp)?)
        }
        (None, Some(pp)) => {
            paths.push(pp.to_path_buf());
            let (panel, alleles) = io::read_panel(pp)?;
            let (harmonized, record) = harmonize(&summary, &alleles, keep_palindromic)?;
            for id in &record.flipped {
                warnings.push(format!("flipped to panel allele coding: {id}"));
            }
            for (id, reason) in &record.dropped {
                warnings.push(format!("dropped {id}: {reason:?}"));
            }
            let (panel, monomorphic) = drop_monomorphic(panel);
            if !monomorphic.is_empty() {
                warnings.push(format!(
                    "monomorphic in the reference data: {}",
                    monomorphic.join(", ")
                ));
            }
            let corr = CorrelationMatrix::from_panel(panel.ids.clone(), &panel.genotypes)?;
            (harmonized, corr)
        }
        (None, None) => {
            return Err(Error::Config(
                "either --correlation or --panel is required".into(),
            ))
        }
    };
    let (summary, corr, align_warnings) = align(&summary, &corr)?;
    for id in &align_warnings.dropped_from_summary {
        warnings.push(format!("no correlation entry, dropped: {id}"));
    }
    Ok(LoadedInputs {
        summary,
        corr,
        paths,
        warnings,
        selection: None,
    })
}

fn drop_monomorphic(panel: Panel) -> (Panel, Vec<String>) {
    let mut kept_cols = Vec::new();
    let mut dropped = Vec::new();
    for c in 0..panel.genotypes.ncols() {
        let col = panel.genotypes.column(c);
        let first = col[0];
        if col.iter().any(|v| (v - first).abs() > 1e-12) {
            kept_cols.push(c);
        } else {
            dropped.push(panel.ids[c].clone());
        }
    }
    let kept = Panel {
        ids: kept_cols.iter().map(|&c| panel.ids[c].clone()).collect(),
        genotypes: DMatrix::from_fn(panel.genotypes.nrows(), kept_cols.len(), |r, c| {
            panel.genotypes[(r, kept_cols[c])]
        }),
    };
    (kept, dropped)
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<(), Error> {
    match out {
        Some(p) => Ok(std::fs::write(p, content)?),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), Error> {
    if args.method == Method::Tsls {
        return cmd_estimate_tsls(args);
    }
    let summary_path = args.input.summary.as_deref().ok_or_else(|| {
        Error::Config("--summary is required for summary-data methods".into())
    })?;
    let (loaded, ridge);
    let estimate: CausalEstimate;
    let mut selection = None;
    match args.method {
        Method::Ivw => {
            // no correlation needed; read the summary directly
            let summary = io::read_summary(summary_path)?;
            let base = LoadedInputs {
                corr: CorrelationMatrix::identity(summary.ids())?,
                summary,
                paths: vec![summary_path.to_path_buf()],
                warnings: Vec::new(),
                selection: None,
            };
            loaded = apply_selection(base, args.selection.as_deref())?;
            estimate = ivw_uncorrelated(&loaded.summary)?;
            ridge = None;
        }
        Method::IvwCorr => {
            loaded = apply_selection(
                load_inputs(
                    summary_path,
                    args.input.correlation.as_deref(),
                    args.input.panel.as_deref(),
                    args.input.keep_palindromic,
                )?,
                args.selection.as_deref(),
            )?;
            match args.ridge {
                Some(eps) => {
                    let sens = ridge_sensitivity(&loaded.summary, &loaded.corr, eps)?;
                    let ridged = finemr::diagnostics::ridge_adjust(&loaded.corr, eps)?;
                    estimate = finemr::estimators::ivw_correlated_with_matrix(
                        &loaded.summary,
                        &ridged.values,
                    )?;
                    ridge = Some(sens);
                }
                None => {
                    estimate = ivw_correlated(&loaded.summary, &loaded.corr)?;
                    ridge = None;
                }
            }
        }
        Method::PcaIvw => {
            loaded = apply_selection(
                load_inputs(
                    summary_path,
                    args.input.correlation.as_deref(),
                    args.input.panel.as_deref(),
                    args.input.keep_palindromic,
                )?,
                args.selection.as_deref(),
            )?;
            let (est, pca) = pca_ivw(&loaded.summary, &loaded.corr, args.variance)?;
            estimate = est;
            let mut parameters = BTreeMap::new();
            parameters.insert("variance_threshold".to_string(), args.variance);
            parameters.insert("k".to_string(), pca.k as f64);
            selection = Some(SelectionResult {
                method: finemr::selection::SelectionMethod::Pca,
                selected_ids: loaded.summary.ids(),
                parameters,
                trace: Vec::new(),
            });
            ridge = None;
        }
        Method::Tsls => unreachable!(),
    }
    let random = matches!(args.effects, Effects::Random);
    finish_estimate(&args, &loaded, estimate, selection, ridge, random)
}

fn cmd_estimate_tsls(args: EstimateArgs) -> Result<(), Error> {
    let panel_path = args
        .input
        .panel
        .as_deref()
        .ok_or_else(|| Error::Config("--method 2sls requires --panel".into()))?;
    let pheno_path = args
        .input
        .phenotypes
        .as_deref()
        .ok_or_else(|| Error::Config("--method 2sls requires --phenotypes".into()))?;
    let (panel, _) = io::read_panel(panel_path)?;
    let (x, y) = read_phenotypes(pheno_path)?;
    let data = IndividualData::new(panel.genotypes, x, y)?;
    let estimate = two_stage_least_squares(&data)?;
    let loaded = LoadedInputs {
        summary: placeholder_summary(&panel.ids)?,
        corr: CorrelationMatrix::identity(panel.ids.clone())?,
        paths: vec![panel_path.to_path_buf(), pheno_path.to_path_buf()],
        warnings: Vec::new(),
        selection: None,
    };
    let random = matches!(args.effects, Effects::Random);
    finish_estimate(&args, &loaded, estimate, None, None, random)
}

/// Minimal stand-in so the report plumbing has a variant count; 2sls reports
/// are driven by the individual-level data alone.
fn placeholder_summary(ids: &[String]) -> Result<SummarySet, Error> {
    let variants = ids
        .iter()
        .map(|id| {
            finemr::model::VariantSummary::new(id.clone(), "A", "G", 0.0, 1.0, 0.0, 1.0, None)
        })
        .collect::<Result<Vec<_>, _>>()?;
    SummarySet::new(variants)
}

fn read_phenotypes(path: &Path) -> Result<(DVector<f64>, DVector<f64>), Error> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse("phenotype file is empty".into()))?
        .split('\t')
        .map(str::trim)
        .collect();
    let xi = header
        .iter()
        .position(|c| *c == "x")
        .ok_or_else(|| Error::Parse("phenotype header needs an 'x' column".into()))?;
    let yi = header
        .iter()
        .position(|c| *c == "y")
        .ok_or_else(|| Error::Parse("phenotype header needs a 'y' column".into()))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let get = |i: usize| -> Result<f64, Error> {
            fields
                .get(i)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::Parse(format!("phenotype line {}: bad field", lineno + 2)))
        };
        xs.push(get(xi)?);
        ys.push(get(yi)?);
    }
    Ok((DVector::from_vec(xs), DVector::from_vec(ys)))
}

fn finish_estimate(
    args: &EstimateArgs,
    loaded: &LoadedInputs,
    estimate: CausalEstimate,
    selection: Option<SelectionResult>,
    ridge: Option<RidgeSensitivity>,
    random: bool,
) -> Result<(), Error> {
    let se = estimate.se(random);
    let mut warnings = loaded.warnings.clone();
    warnings.extend(estimate.diagnostics.warnings.iter().cloned());
    if ridge.as_ref().is_some_and(|r| r.flagged) {
        warnings.push(finemr::diagnostics::codes::RIDGE_SENSITIVE.to_string());
    }
    let paths: Vec<&Path> = loaded.paths.iter().map(PathBuf::as_path).collect();
    let report = AnalysisReport {
        method: args.method.name().to_string(),
        effects: if random { "random" } else { "fixed" }.to_string(),
        n_variants: estimate.n_instruments,
        estimate: estimate.estimate,
        se,
        ci_low: se.map(|s| estimate.estimate - Z_95 * s),
        ci_high: se.map(|s| estimate.estimate + Z_95 * s),
        selection: selection.or_else(|| loaded.selection.clone()),
        causal: estimate,
        ridge,
        warnings,
        provenance: Provenance::new(&paths, None)?,
    };

    println!("method\teffects\tn\testimate\tse\tci_low\tci_high");
    println!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        report.method,
        report.effects,
        report.n_variants,
        fmt3(report.estimate),
        fmt3_opt(report.se),
        fmt3_opt(report.ci_low),
        fmt3_opt(report.ci_high),
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Config(format!("serialization: {e}")))?;
        std::fs::write(out, json + "\n")?;
    }
    Ok(())
}

fn cmd_select(args: SelectArgs) -> Result<(), Error> {
    let loaded = load_inputs(
        &args.input.summary,
        args.input.correlation.as_deref(),
        args.input.panel.as_deref(),
        args.input.keep_palindromic,
    )?;
    let result = match args.method {
        SelectMethod::Prune => {
            let rho = args
                .rho
                .ok_or_else(|| Error::Config("--method prune requires --rho".into()))?;
            prune(&loaded.summary, &loaded.corr, rho)?
        }
        SelectMethod::Conditional => {
            let p = args
                .pvalue
                .ok_or_else(|| Error::Config("--method conditional requires --pvalue".into()))?;
            let n = match args.n {
                Some(n) => n,
                None => loaded
                    .summary
                    .source_meta
                    .get("n_x")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| {
                        Error::Config(
                            "--method conditional requires --n (or an n_x summary column)".into(),
                        )
                    })?,
            };
            stepwise_conditional(&loaded.summary, &loaded.corr, p, n)?
        }
    };
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    println!("selected ({}): {}", result.selected_ids.len(), result.selected_ids.join(", "));
    for step in &result.trace {
        println!(
            "step {}: chosen {} p {} removed [{}]{}",
            step.step,
            step.chosen.as_deref().unwrap_or("-"),
            fmt3(step.statistic),
            step.removed.join(", "),
            step.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default(),
        );
    }
    write_or_print(args.out.as_deref(), &io::format_selection(&result))
}

#[derive(Serialize)]
struct PcaOutput {
    k: usize,
    eigenvalues: Vec<f64>,
    cumulative_shares: Vec<f64>,
    warnings: Vec<String>,
    variant_ids: Vec<String>,
    /// Row j holds variant j's loading on each retained component.
    loadings: Vec<Vec<f64>>,
    provenance: Provenance,
}

fn cmd_pca(args: PcaArgs) -> Result<(), Error> {
    let loaded = load_inputs(
        &args.input.summary,
        args.input.correlation.as_deref(),
        args.input.panel.as_deref(),
        args.input.keep_palindromic,
    )?;
    let psi = build_psi(&loaded.summary, &loaded.corr)?;
    let (k, loadings, eigen) = pca_components(&psi, args.variance)?;
    let paths: Vec<&Path> = loaded.paths.iter().map(PathBuf::as_path).collect();
    let output = PcaOutput {
        k,
        eigenvalues: eigen.eigenvalues.clone(),
        cumulative_shares: eigen.cumulative_shares.clone(),
        warnings: eigen.warnings.clone(),
        variant_ids: loaded.summary.ids(),
        loadings: (0..loadings.nrows())
            .map(|r| (0..k).map(|c| loadings[(r, c)]).collect())
            .collect(),
        provenance: Provenance::new(&paths, None)?,
    };
    println!("components retained: {k} of {}", loaded.summary.len());
    println!(
        "cumulative shares: {}",
        eigen
            .cumulative_shares
            .iter()
            .map(|s| fmt3(*s))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&output)
            .map_err(|e| Error::Config(format!("serialization: {e}")))?;
        std::fs::write(out, json + "\n")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseOutput {
    correlation: DiagnosticsReport,
    omega: DiagnosticsReport,
    provenance: Provenance,
}

fn cmd_diagnose(args: InputArgs) -> Result<(), Error> {
    let loaded = load_inputs(
        &args.summary,
        args.correlation.as_deref(),
        args.panel.as_deref(),
        args.keep_palindromic,
    )?;
    let omega = build_omega(&loaded.summary, &loaded.corr)?;
    let rep_corr = assess(loaded.corr.values())?;
    let rep_omega = assess(&omega.values)?;
    for (name, rep) in [("correlation", &rep_corr), ("omega", &rep_omega)] {
        println!(
            "{name}: determinant {:.3e}, condition {:.3e}, min eigenvalue {:.3e}, warnings [{}]",
            rep.determinant,
            rep.condition_number,
            rep.min_eigenvalue,
            rep.warnings.join(", ")
        );
    }
    let paths: Vec<&Path> = loaded.paths.iter().map(PathBuf::as_path).collect();
    let output = DiagnoseOutput {
        correlation: rep_corr,
        omega: rep_omega,
        provenance: Provenance::new(&paths, None)?,
    };
    let json = serde_json::to_string_pretty(&output)
        .map_err(|e| Error::Config(format!("serialization: {e}")))?;
    println!("{json}");
    Ok(())
}

fn cmd_correlate(args: CorrelateArgs) -> Result<(), Error> {
    let (panel, _) = io::read_panel(&args.panel)?;
    let (panel, monomorphic) = drop_monomorphic(panel);
    if !monomorphic.is_empty() {
        eprintln!(
            "warning: monomorphic in the reference data: {}",
            monomorphic.join(", ")
        );
    }
    if panel.ids.is_empty() {
        return Err(Error::ZeroVarianceColumn("all panel columns".into()));
    }
    let corr = CorrelationMatrix::from_panel(panel.ids.clone(), &panel.genotypes)?;
    io::write_correlation(&args.out, &corr)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let mut config = io::load_experiment_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let result = run_experiment(&config)?;
    let mut annotations = BTreeMap::new();
    annotations.insert("config_digest".to_string(), sha256_hex(&args.config)?);
    annotations.insert(
        "tool_version".to_string(),
        env!("CARGO_PKG_VERSION").to_string(),
    );
    let table = io::format_experiment_result(&result, &annotations);
    write_or_print(args.out.as_deref(), &table)
}

fn cmd_plotdata(args: PlotdataArgs) -> Result<(), Error> {
    let loaded = load_inputs(
        &args.input.summary,
        args.input.correlation.as_deref(),
        args.input.panel.as_deref(),
        args.input.keep_palindromic,
    )?;
    let selected_ids: Vec<String> = match &args.selection {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            io::parse_selection(&text)?.selected_ids
        }
        None => loaded.summary.ids(),
    };
    let (fit_summary, fit_corr) = if selected_ids.len() == loaded.summary.len() {
        (loaded.summary.clone(), loaded.corr.clone())
    } else {
        (
            loaded.summary.subset(&selected_ids)?,
            loaded.corr.subset(&selected_ids)?,
        )
    };
    let estimate = ivw_correlated(&fit_summary, &fit_corr)?;
    let mut out = String::new();
    out.push_str(&format!("# slope\t{}\n", estimate.estimate));
    out.push_str("variant_id\tbeta_x\tse_x\tbeta_y\tse_y\tci_half_x\tci_half_y\tselected\n");
    for v in loaded.summary.variants() {
        let selected = selected_ids.iter().any(|id| id == &v.variant_id);
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            v.variant_id,
            v.beta_x,
            v.se_x,
            v.beta_y,
            v.se_y,
            Z_95 * v.se_x,
            Z_95 * v.se_y,
            selected as u8,
        ));
    }
    std::fs::write(&args.out, out)?;
    println!("slope {}", fmt3(estimate.estimate));
    Ok(())
}
