//! `audit`: command-line front end for the fairness significance suite.
//!
//! Exit codes: 0 the audit ran, 1 a violation was found under
//! `--fail-on-violation`, 2 input or usage error, 3 internal failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use fairsig::audit::{audit_dataset, audit_predictions, AuditConfig, DEFAULT_FOLDS};
use fairsig::calibration::DEFAULT_BINS;
use fairsig::cv::FoldStrategy;
use fairsig::data::{load_dataset, save_dataset, Dataset, GroupLabels, Schema};
use fairsig::model::{load_external_predictions, save_predictions, DEFAULT_THRESHOLD};
use fairsig::report::{render_markdown, write_json, AuditReport};
use fairsig::stats::DEFAULT_ALPHA;
use fairsig::synth::{generate, inject_bias, BiasMechanism, SynthConfig};
use fairsig::Error;

#[derive(Parser)]
#[command(name = "audit", version, about = "Significance tests for group fairness metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate the built-in model (or read external predictions) and test all metrics.
    Run(RunArgs),
    /// Check a dataset or prediction file against its schema without auditing.
    Validate(ValidateArgs),
    /// Write a synthetic dataset and its schema.
    Synth(SynthArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Delimited data file described by --schema.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Prediction file (row_id, fold_id, y_true, y_pred, score, group).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// TOML schema for --data; also supplies group labels for --predictions.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Score bins for the calibration tests.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score at or above which the prediction is unfavorable.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Use the group attribute as a model feature.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    include_race: bool,
    /// Zero the trained group coefficient (group-blind scoring with the feature present).
    #[arg(long)]
    zero_race_weight: bool,
    /// Balance outcome classes across folds.
    #[arg(long)]
    stratified: bool,
    /// Skip nearest-neighbor matching.
    #[arg(long)]
    skip_matching: bool,
    /// Exit with status 1 when any metric reports a violation.
    #[arg(long)]
    fail_on_violation: bool,
    /// Model name recorded for external predictions.
    #[arg(long, default_value = "external_model")]
    model_id: String,
    /// Report directory.
    #[arg(long, env = "AUDIT_REPORT_DIR", default_value = "audit-report")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Comma-separated feature coefficients on the log-odds of the unfavorable outcome.
    #[arg(long, value_delimiter = ',', default_values_t = SynthConfig::default().coefficients)]
    coefficients: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    intercept: f64,
    /// Log-odds shift toward the unfavorable outcome for the protected group.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    shift: f64,
    /// Fraction of protected rows.
    #[arg(long, default_value_t = 0.5)]
    mix: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Post-hoc bias: outcome_shift or label_noise_on_protected.
    #[arg(long)]
    bias: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    magnitude: f64,
    /// Output data file.
    #[arg(long)]
    out: PathBuf,
    /// Output schema file; defaults to the data path with a .toml extension.
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Input(format!("cannot write {}: {e}", path.display()))
}

fn load_labels(schema: Option<&Path>) -> Result<(Option<Schema>, GroupLabels), Failure> {
    match schema {
        Some(p) => {
            let s = Schema::load(p)?;
            let labels = s.group_labels();
            Ok((Some(s), labels))
        }
        None => Ok((None, GroupLabels::default())),
    }
}

fn load_data(path: &Path, schema: Option<&Schema>) -> Result<Dataset, Failure> {
    let schema = schema.ok_or_else(|| Failure::Input("--data needs --schema".into()))?;
    let (dataset, summary) = load_dataset(path, schema)?;
    if summary.dropped() > 0 {
        eprintln!(
            "note: dropped {} of {} rows ({} unknown outcome, {} unknown group, {} missing values)",
            summary.dropped(),
            summary.raw_rows,
            summary.dropped_outcome,
            summary.dropped_group,
            summary.dropped_missing
        );
    }
    Ok(dataset)
}

fn run(args: RunArgs, out: &mut dyn Write) -> Result<bool, Failure> {
    let (schema, labels) = load_labels(args.input.schema.as_deref())?;
    let config = AuditConfig {
        k: args.k,
        alpha: args.alpha,
        bins: args.bins,
        seed: args.seed,
        threshold: args.threshold,
        include_group: args.include_race,
        zero_group_weight: args.zero_race_weight,
        fold_strategy: if args.stratified {
            FoldStrategy::Stratified
        } else {
            FoldStrategy::Shuffle
        },
        skip_matching: args.skip_matching,
        ..AuditConfig::default()
    };
    let dataset = match &args.input.data {
        Some(p) => Some(load_data(p, schema.as_ref())?),
        None => None,
    };
    let outcome = match (&args.input.predictions, &dataset) {
        (Some(p), _) => {
            let records = load_external_predictions(p, &labels)?;
            audit_predictions(&args.model_id, records, &labels, dataset.as_ref(), &config)?
        }
        (None, Some(d)) => audit_dataset(d, &config)?,
        (None, None) => return Err(Failure::Input("give --data (with --schema) or --predictions".into())),
    };
    let mut report: AuditReport = outcome.report;
    report.timestamp = Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true);

    std::fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    write_json(&report, args.out.join("report.json"))?;
    let md_path = args.out.join("report.md");
    std::fs::write(&md_path, render_markdown(&report)).map_err(|e| io_failure(&md_path, e))?;
    save_predictions(&outcome.predictions, &labels, args.out.join("predictions.csv"))?;

    let mut summary = format!("{}\n", report.accuracy_line());
    for v in &report.verdicts {
        summary.push_str(&format!("  {:<28} {}\n", v.id.name(), v.verdict));
    }
    summary.push_str(&format!("reports written to {}\n", args.out.display()));
    emit(out, &summary);
    Ok(args.fail_on_violation && report.violations() > 0)
}

fn validate(args: ValidateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (schema, labels) = load_labels(args.input.schema.as_deref())?;
    if args.input.data.is_none() && args.input.predictions.is_none() {
        return Err(Failure::Input("give --data (with --schema) and/or --predictions".into()));
    }
    if let Some(p) = &args.input.data {
        let d = load_data(p, schema.as_ref())?;
        emit(out, &format!(
            "data ok: {} rows, {} features, {} `{}`, {} `{}`\n",
            d.len(),
            d.feature_dim(),
            d.group_count(fairsig::data::Group::Protected),
            labels.protected,
            d.group_count(fairsig::data::Group::Unprotected),
            labels.unprotected
        ));
    }
    if let Some(p) = &args.input.predictions {
        let records = load_external_predictions(p, &labels)?;
        let folds: std::collections::BTreeSet<usize> = records.iter().map(|r| r.fold_id).collect();
        emit(out, &format!("predictions ok: {} rows across {} folds\n", records.len(), folds.len()));
    }
    Ok(())
}

fn synth(args: SynthArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let config = SynthConfig {
        n: args.n,
        coefficients: args.coefficients,
        intercept: args.intercept,
        group_shift: args.shift,
        group_mix: args.mix,
        seed: args.seed,
    };
    let mut dataset = generate(&config)?;
    if let Some(name) = &args.bias {
        let mechanism: BiasMechanism = name.parse()?;
        dataset = inject_bias(&dataset, mechanism, args.magnitude, args.seed.wrapping_add(1))?;
    }
    save_dataset(&dataset, &args.out)?;
    let schema_path = args.schema_out.unwrap_or_else(|| args.out.with_extension("toml"));
    std::fs::write(&schema_path, dataset.schema().to_toml_string()).map_err(|e| io_failure(&schema_path, e))?;
    emit(out, &format!(
        "wrote {} rows to {} (schema {})\n",
        dataset.len(),
        args.out.display(),
        schema_path.display()
    ));
    Ok(())
}

fn emit(out: &mut dyn Write, text: &str) {
    // a closed stdout is not worth failing an audit that already wrote its files
    let _ = out.write_all(text.as_bytes());
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status.
fn execute<I, T>(args: I, out: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| match cli.command {
        Command::Run(a) => run(a, out),
        Command::Validate(a) => validate(a, out).map(|_| false),
        Command::Synth(a) => synth(a, out).map(|_| false),
    }));
    match result {
        Ok(Ok(false)) => 0,
        Ok(Ok(true)) => 1,
        Ok(Err(Failure::Input(msg))) => {
            eprintln!("error: {msg}");
            2
        }
        Ok(Err(Failure::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            3
        }
        Err(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = execute(std::env::args_os(), &mut std::io::stdout().lock());
    ExitCode::from(code)
}

#[cfg(test)]
mod tests;
