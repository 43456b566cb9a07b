//! Command-line surface.
//!
//! Exit codes: 0 success, 1 usage/data error, 2 numerical failure. Every
//! error prints one `error[CODE]: message` line to standard error. All
//! randomness is pinned by `--seed`, so repeated invocations produce
//! identical payloads (record files may differ in row order under parallel
//! execution, and in the wall-clock `fit_millis` column).

use crate::data::{build_frame, load_csv, write_csv, AnalysisFrame, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{
    confusion_summary, diagnose_systematic, fit_estimator, fit_feasible, fit_naive, EstimatorKind,
    FitContext,
};
use crate::formula::parse_formula;
use crate::glm::{Family, FitResult, OptimOptions};
use crate::mla::JointModelSpec;
use crate::montecarlo::{
    read_records_csv, run_study, summarize, summary_json, write_summary_csv, RecordWriter,
    StudyConfig, StudySummary,
};
use crate::simulate::{generate, Scenario, ScenarioConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

#[derive(Parser)]
#[command(
    name = "misclass",
    version,
    about = "Regression with a misclassified binary variable: correction methods and study harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a CSV dataset with the chosen estimator
    Fit(FitArgs),
    /// Confusion summary and systematic-misclassification test
    Diagnose(DiagnoseArgs),
    /// Generate one synthetic dataset plus a metadata sidecar
    Simulate(SimulateArgs),
    /// Run a replicated study preset or config file
    Study(StudyArgs),
    /// Recompute a study summary from a records CSV
    Summarize(SummarizeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Binomial,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Gaussian => Family::GaussianIdentity,
            FamilyArg::Binomial => Family::BernoulliLogit,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Model formula, e.g. "y ~ x || w + z" or "y || w ~ x + z"
    #[arg(long)]
    formula: String,
    /// Input CSV (header row, numeric cells, empty = missing)
    #[arg(long)]
    data: PathBuf,
    /// Annotated rows in a second CSV, stacked below --data by row order
    #[arg(long)]
    data2: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// naive | feasible | mla | pl | gmm | mi
    #[arg(long)]
    method: String,
    /// Error-model terms, comma separated (default: truth, outcome, covariates)
    #[arg(long)]
    error_terms: Option<String>,
    /// Exposure-model terms, comma separated (default: covariates; proxied covariate only)
    #[arg(long)]
    exposure_terms: Option<String>,
    /// Number of imputations for --method mi
    #[arg(long, default_value_t = 200)]
    mi_m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the fit as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    formula: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    data2: Option<PathBuf>,
    /// Main-model family (sets the default error-model terms)
    #[arg(long, value_enum, default_value = "gaussian")]
    family: FamilyArg,
    /// Significance threshold for flagging systematic misclassification
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// s1a | s1b | s2a | s2b
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    n: usize,
    /// Number of annotated rows
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; metadata goes to "<out>.meta"
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    target_accuracy: Option<f64>,
    #[arg(long)]
    systematic: Option<f64>,
    #[arg(long)]
    b_x: Option<f64>,
    #[arg(long)]
    b_z: Option<f64>,
    #[arg(long)]
    p_x_intercept: Option<f64>,
    #[arg(long)]
    zx_coefficient: Option<f64>,
    #[arg(long)]
    r_squared: Option<f64>,
    #[arg(long)]
    sigma2_extra: Option<f64>,
    #[arg(long, default_value_t = false)]
    binary_z: bool,
}

#[derive(Args)]
struct StudyArgs {
    /// sim1a | sim1b | sim2a | sim2b | robustness-accuracy |
    /// robustness-imbalance | robustness-systematic |
    /// robustness-correlation | robustness-nonnormal | robustness-misspec
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Study configuration as JSON (same schema as the presets)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replications per cell
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for records.csv, summary.csv, summary.json
    #[arg(long)]
    out: PathBuf,
    /// Worker hint: 0 = all cores, 1 = sequential
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Override the preset's estimator set, comma separated
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    mi_m: Option<usize>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// records.csv produced by `study`
    #[arg(long)]
    records: PathBuf,
    /// Output directory (default: alongside the records file)
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            eprintln!("error[E_USAGE]: invalid command line");
            return 1;
        }
    };
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Study(args) => cmd_study(args),
        Command::Summarize(args) => cmd_summarize(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            e.exit_code()
        }
    }
}

fn load_frame(formula: &str, data: &Path, data2: Option<&Path>) -> Result<AnalysisFrame> {
    let spec = parse_formula(formula)?;
    let mut dataset: Dataset = load_csv(data)?;
    if let Some(extra) = data2 {
        let annotated = load_csv(extra)?;
        dataset = dataset.stack(&annotated)?;
    }
    build_frame(dataset, spec)
}

fn joint_spec_from(
    args_error: Option<&str>,
    args_exposure: Option<&str>,
    frame: &AnalysisFrame,
    family: Family,
) -> Result<JointModelSpec> {
    let mut spec = JointModelSpec::from_model(frame.spec.clone(), family)?;
    if let Some(terms) = args_error {
        spec = spec.with_error_terms(split_terms(terms))?;
    }
    if let Some(terms) = args_exposure {
        spec = spec.with_exposure_terms(split_terms(terms))?;
    }
    Ok(spec)
}

fn split_terms(s: &str) -> Vec<String> {
    s.split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn cmd_fit(args: FitArgs) -> Result<i32> {
    let frame = load_frame(&args.formula, &args.data, args.data2.as_deref())?;
    let family: Family = args.family.into();
    let method = EstimatorKind::from_str(&args.method)?;
    let options = OptimOptions::default();

    let fit = match method {
        EstimatorKind::Naive => fit_naive(&frame, family, &options)?,
        EstimatorKind::Feasible => fit_feasible(&frame, family, &options)?,
        _ => {
            let spec = joint_spec_from(
                args.error_terms.as_deref(),
                args.exposure_terms.as_deref(),
                &frame,
                family,
            )?;
            if frame.n_annotated < 50 {
                eprintln!(
                    "note: only {} annotated rows; corrected estimates may be unstable",
                    frame.n_annotated
                );
            }
            let ctx = FitContext {
                frame: &frame,
                spec: &spec,
                options: &options,
                mi_imputations: args.mi_m,
                seed: args.seed,
            };
            fit_estimator(method, &ctx)?
        }
    };

    print_fit_table(&fit, method, &args.formula);
    if let Some(path) = &args.out {
        let doc = fit_json(&fit, method, &args.formula, family);
        write_text(path, &format!("{:#}\n", doc))?;
    }
    Ok(if fit.converged { 0 } else { 2 })
}

fn print_fit_table(fit: &FitResult, method: EstimatorKind, formula: &str) {
    println!("method: {method}");
    println!("model:  {formula}");
    println!(
        "{:<14}{:>12}{:>12}{:>12}{:>12}",
        "term", "estimate", "std.error", "ci95.low", "ci95.high"
    );
    for k in 0..fit.term_names.len() {
        println!(
            "{:<14}{:>12.6}{:>12.6}{:>12.6}{:>12.6}",
            fit.term_names[k], fit.estimates[k], fit.std_errors[k], fit.ci_low[k], fit.ci_high[k]
        );
    }
    if let Some(ll) = fit.log_likelihood {
        println!("log-likelihood: {ll:.6}");
    }
    println!(
        "converged: {} ({} iterations, {} observations)",
        fit.converged, fit.n_iterations, fit.n_obs_used
    );
}

fn fit_json(
    fit: &FitResult,
    method: EstimatorKind,
    formula: &str,
    family: Family,
) -> serde_json::Value {
    let terms: Vec<serde_json::Value> = (0..fit.term_names.len())
        .map(|k| {
            serde_json::json!({
                "term": fit.term_names[k],
                "estimate": fit.estimates[k],
                "std_error": fit.std_errors[k],
                "ci_low": fit.ci_low[k],
                "ci_high": fit.ci_high[k],
            })
        })
        .collect();
    serde_json::json!({
        "schema": 1,
        "method": method,
        "formula": formula,
        "family": family.as_str(),
        "terms": terms,
        "log_likelihood": fit.log_likelihood,
        "converged": fit.converged,
        "n_iterations": fit.n_iterations,
        "n_obs_used": fit.n_obs_used,
    })
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<i32> {
    let frame = load_frame(&args.formula, &args.data, args.data2.as_deref())?;
    let family: Family = args.family.into();
    let spec = JointModelSpec::from_model(frame.spec.clone(), family)?;
    if frame.n_annotated < 30 {
        eprintln!(
            "note: only {} annotated rows; the test is underpowered below 30",
            frame.n_annotated
        );
    }

    let confusion = confusion_summary(&frame)?;
    println!("annotated rows: {}", frame.n_annotated);
    println!(
        "confusion: tp={} fp={} tn={} fn={}",
        confusion.tp, confusion.fp, confusion.tn, confusion.fn_
    );
    println!(
        "accuracy={:.4} ppv={:.4} npv={:.4} fpr={:.4} fnr={:.4}",
        confusion.accuracy, confusion.ppv, confusion.npv, confusion.fpr, confusion.fnr
    );

    let diagnosis = diagnose_systematic(&frame, &spec, &OptimOptions::default(), args.alpha)?;
    println!(
        "lr_statistic={:.6} df={} p_value={:.6}",
        diagnosis.lr_statistic, diagnosis.df, diagnosis.p_value
    );
    println!(
        "systematic misclassification {} (alpha = {})",
        if diagnosis.systematic {
            "DETECTED"
        } else {
            "not detected"
        },
        args.alpha
    );
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let scenario = Scenario::from_str(&args.scenario)?;
    let mut config = ScenarioConfig::new(scenario, args.n, args.m, args.seed);
    if let Some(v) = args.target_accuracy {
        config.target_accuracy = v;
    }
    if let Some(v) = args.systematic {
        config.systematic_coefficient = v;
    }
    if let Some(v) = args.b_x {
        config.b_x = v;
    }
    if let Some(v) = args.b_z {
        config.b_z = v;
    }
    if let Some(v) = args.p_x_intercept {
        config.p_x_intercept = v;
    }
    if let Some(v) = args.zx_coefficient {
        config.zx_coefficient = v;
    }
    if let Some(v) = args.r_squared {
        config.r_squared = v;
    }
    if let Some(v) = args.sigma2_extra {
        config.sigma2_extra = v;
    }
    config.binary_z = args.binary_z;

    let data = generate(&config)?;
    let file = create_file(&args.out)?;
    write_csv(file, &data.frame.dataset, &["y", "w", "z", "x"])?;

    let meta_path = sidecar_path(&args.out);
    let mut meta = String::new();
    let a = &data.achieved;
    meta.push_str(&format!("scenario={}\n", config.scenario));
    meta.push_str(&format!("n_obs={}\n", config.n_obs));
    meta.push_str(&format!("n_annotated={}\n", config.n_annotated));
    meta.push_str(&format!("seed={}\n", config.seed));
    meta.push_str(&format!("b_x={}\n", config.b_x));
    meta.push_str(&format!("b_z={}\n", config.b_z));
    meta.push_str(&format!("p_x_intercept={}\n", config.p_x_intercept));
    meta.push_str(&format!("zx_coefficient={}\n", config.zx_coefficient));
    meta.push_str(&format!("target_accuracy={}\n", config.target_accuracy));
    meta.push_str(&format!(
        "systematic_coefficient={}\n",
        config.systematic_coefficient
    ));
    meta.push_str(&format!("r_squared_target={}\n", config.r_squared));
    meta.push_str(&format!("sigma2_extra={}\n", config.sigma2_extra));
    meta.push_str(&format!("binary_z={}\n", config.binary_z));
    meta.push_str(&format!("noise_scale={:.10}\n", a.noise_scale));
    meta.push_str(&format!("accuracy={:.6}\n", a.accuracy));
    meta.push_str(&format!("rho_xz={:.6}\n", a.rho_xz));
    if let Some(v) = a.rho_err_resid {
        meta.push_str(&format!("rho_err_resid={v:.6}\n"));
    }
    if let Some(v) = a.rho_err_x {
        meta.push_str(&format!("rho_err_x={v:.6}\n"));
    }
    if let Some(v) = a.r_squared {
        meta.push_str(&format!("r_squared_achieved={v:.6}\n"));
    }
    write_text(&meta_path, &meta)?;
    eprintln!(
        "wrote {} and {} (accuracy {:.3})",
        args.out.display(),
        meta_path.display(),
        a.accuracy
    );
    Ok(0)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".meta");
    PathBuf::from(name)
}

fn cmd_study(args: StudyArgs) -> Result<i32> {
    let mut config = match (&args.preset, &args.config) {
        (Some(name), None) => preset_config(name, args.seed)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            let mut c: StudyConfig = serde_json::from_str(&text)
                .map_err(|e| Error::BadConfig(format!("{}: {e}", path.display())))?;
            c.master_seed = args.seed;
            c
        }
        _ => {
            return Err(Error::Usage(
                "study needs exactly one of --preset or --config".into(),
            ))
        }
    };
    if let Some(reps) = args.reps {
        config.replications = reps;
    }
    if let Some(m) = args.mi_m {
        config.mi_imputations = m;
    }
    if let Some(estimators) = &args.estimators {
        config.estimators = split_terms(estimators)
            .iter()
            .map(|s| EstimatorKind::from_str(s))
            .collect::<Result<_>>()?;
    }
    config.workers = args.workers;

    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.display().to_string(),
        source,
    })?;
    let records_path = args.out.join("records.csv");
    let writer = Mutex::new(RecordWriter::new(create_file(&records_path)?));

    let records = run_study(&config, |record| {
        let mut w = writer.lock().expect("record writer");
        // sink errors surface at flush time
        let _ = w.write(record);
    })?;
    writer.lock().expect("record writer").flush()?;

    let summary = summarize(&records)?;
    write_summary_outputs(&args.out, &summary)?;
    eprintln!(
        "study complete: {} records, {} summary rows -> {}",
        records.len(),
        summary.rows.len(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_summarize(args: SummarizeArgs) -> Result<i32> {
    let file = std::fs::File::open(&args.records).map_err(|source| Error::Io {
        path: args.records.display().to_string(),
        source,
    })?;
    let records = read_records_csv(file)?;
    let summary = summarize(&records)?;
    let out_dir = match &args.out {
        Some(dir) => dir.clone(),
        None => args
            .records
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    write_summary_outputs(&out_dir, &summary)?;
    eprintln!(
        "summarized {} records -> {}",
        records.len(),
        out_dir.display()
    );
    Ok(0)
}

fn write_summary_outputs(dir: &Path, summary: &StudySummary) -> Result<()> {
    write_summary_csv(create_file(&dir.join("summary.csv"))?, summary)?;
    let json = summary_json(summary);
    write_text(&dir.join("summary.json"), &format!("{json:#}\n"))
}

fn create_file(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create_file(path)?;
    f.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Built-in study presets. Each preset fixes its grid and estimator set; the
/// replication count defaults to 500 and can be overridden with `--reps`.
pub fn preset_config(name: &str, master_seed: u64) -> Result<StudyConfig> {
    let iv_estimators = EstimatorKind::ALL.to_vec();
    let dv_estimators = vec![
        EstimatorKind::Naive,
        EstimatorKind::Feasible,
        EstimatorKind::Mla,
        EstimatorKind::Pl,
        EstimatorKind::Mi,
    ];
    let main_grid = |scenario: Scenario| -> Vec<ScenarioConfig> {
        let mut grid = Vec::new();
        for n_obs in [1000usize, 5000, 10000] {
            for n_annotated in [100usize, 200, 400] {
                grid.push(ScenarioConfig::new(scenario, n_obs, n_annotated, 0));
            }
        }
        grid
    };
    let desk = |scenario: Scenario| ScenarioConfig::new(scenario, 5000, 200, 0);

    let (grid, estimators, mla_nondifferential) = match name {
        "sim1a" => (main_grid(Scenario::S1a), iv_estimators, false),
        "sim1b" => (main_grid(Scenario::S1b), iv_estimators, false),
        "sim2a" => (main_grid(Scenario::S2a), dv_estimators, false),
        "sim2b" => (main_grid(Scenario::S2b), dv_estimators, false),
        "robustness-accuracy" => {
            let grid = [0.60, 0.70, 0.80, 0.90, 0.95]
                .iter()
                .map(|&acc| {
                    let mut c = desk(Scenario::S1a);
                    c.target_accuracy = acc;
                    c
                })
                .collect();
            (grid, iv_estimators, false)
        }
        "robustness-imbalance" => {
            // logit(0.5), logit(0.8), logit(0.9), logit(0.95) on the exposure
            let mut grid = Vec::new();
            for scenario in [Scenario::S1a, Scenario::S2a] {
                for &g0 in &[0.0, 1.386294, 2.197225, 2.944439] {
                    let mut c = desk(scenario);
                    c.p_x_intercept = g0;
                    grid.push(c);
                }
            }
            (grid, dv_estimators, false)
        }
        "robustness-systematic" => {
            let mut grid = Vec::new();
            for &mult in &[0.5, 1.0, 2.0] {
                let mut c = ScenarioConfig::new(Scenario::S1b, 1000, 100, 0);
                c.systematic_coefficient *= mult;
                grid.push(c);
                let mut c = ScenarioConfig::new(Scenario::S2b, 1000, 100, 0);
                c.systematic_coefficient *= mult;
                grid.push(c);
            }
            (grid, dv_estimators, false)
        }
        "robustness-correlation" => {
            let grid = [0.0, 0.5, 1.0, 2.0, 4.0]
                .iter()
                .map(|&g1| {
                    let mut c = desk(Scenario::S1b);
                    c.zx_coefficient = g1;
                    c
                })
                .collect();
            (grid, iv_estimators, false)
        }
        "robustness-nonnormal" => {
            // the pseudo-likelihood fit is unstable at a high signal-to-noise
            // ratio, so it stays out of this preset
            let estimators = vec![
                EstimatorKind::Naive,
                EstimatorKind::Feasible,
                EstimatorKind::Mla,
                EstimatorKind::Gmm,
                EstimatorKind::Mi,
            ];
            let mut grid = Vec::new();
            for scenario in [Scenario::S1a, Scenario::S1b] {
                for &s2 in &[0.0, 0.25, 0.5, 1.0] {
                    let mut c = desk(scenario);
                    c.sigma2_extra = s2;
                    grid.push(c);
                }
            }
            (grid, estimators, false)
        }
        "robustness-misspec" => {
            let estimators = vec![
                EstimatorKind::Naive,
                EstimatorKind::Feasible,
                EstimatorKind::Mla,
            ];
            (
                vec![desk(Scenario::S1b), desk(Scenario::S2b)],
                estimators,
                true,
            )
        }
        other => {
            return Err(Error::Usage(format!("unknown study preset `{other}`")));
        }
    };

    Ok(StudyConfig {
        grid,
        estimators,
        replications: 500,
        master_seed,
        workers: 0,
        mi_imputations: 200,
        mla_nondifferential,
    })
}
