//! `hdpbnc`: train, apply, evaluate and compare Bayesian network classifiers.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use hdpbnc::data::read_schema_sidecar;
use hdpbnc::eval::{compare, repeated_cv, rmse, subsample, zero_one_loss};
use hdpbnc::model::train;
use hdpbnc::{
    load_csv_with, open_csv_with, ColumnRef, CsvOptions, Dataset, Error, EstimatorKind, Instance, PipelineConfig,
    StructureKind, TrainedModel, Tying,
};

#[derive(Parser, Debug)]
#[command(
    name = "hdpbnc",
    version,
    about = "Bayesian network classifiers with HDP parameter smoothing"
)]
struct Cli {
    /// More log output (-v info, -vv debug). `HDPBNC_LOG` overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a model and write it as JSON.
    Train {
        data: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the training report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Class posteriors for every row of a CSV file.
    Predict {
        #[arg(short, long)]
        model: PathBuf,
        data: PathBuf,
        /// Output CSV; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Repeated stratified cross-validation, one CSV row per fold.
    Eval {
        data: PathBuf,
        /// Output CSV; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 2)]
        reps: usize,
        /// Evaluate on a seeded fraction of the rows.
        #[arg(long)]
        subsample: Option<f64>,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Win/draw/loss of pipeline A against B over several datasets.
    Compare {
        #[arg(required = true)]
        data: Vec<PathBuf>,
        /// Pipeline A as STRUCTURE/ESTIMATOR, e.g. `kdb:5/hdp`.
        #[arg(long)]
        a: String,
        /// Pipeline B, e.g. `kdb:5/m`.
        #[arg(long)]
        b: String,
        /// W-D-L table; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Mean metrics per dataset.
        #[arg(long)]
        per_dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 2)]
        reps: usize,
        #[arg(long)]
        subsample: Option<f64>,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Class column: header name, position, or -1 for the last column.
    #[arg(long, default_value = "-1", allow_hyphen_values = true)]
    class: String,
    /// Column kinds sidecar; `<data>.schema` is used when present.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Stream the file on every pass instead of loading it.
    #[arg(long)]
    disk: bool,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long, default_value = "kdb")]
    structure: String,
    /// Parent limit for kdb and skdb; 5 when absent.
    #[arg(long)]
    k: Option<usize>,
    /// mle, m, m:VALUE or hdp.
    #[arg(long, default_value = "hdp")]
    estimator: String,
    /// Fixed m for the m-estimate; selected on a holdout otherwise.
    #[arg(long)]
    m: Option<f64>,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SamplerArgs {
    /// Gibbs iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Discarded iterations; a tenth of --iters by default.
    #[arg(long)]
    burnin: Option<usize>,
    /// single, level or parent.
    #[arg(long)]
    tying: Option<Tying>,
    /// Half-width of the pseudo-count proposal window.
    #[arg(long)]
    window: Option<usize>,
    /// Check tree invariants after every sweep.
    #[arg(long)]
    audit: bool,
}

impl SamplerArgs {
    fn given(&self) -> bool {
        self.iters.is_some() || self.burnin.is_some() || self.tying.is_some() || self.window.is_some() || self.audit
    }

    fn apply(&self, config: &mut PipelineConfig) {
        let s = &mut config.sampler;
        if let Some(v) = self.iters {
            s.iterations = v;
        }
        if self.burnin.is_some() {
            s.burn_in = self.burnin;
        }
        if let Some(v) = self.tying {
            s.tying = v;
        }
        if let Some(v) = self.window {
            s.window = v;
        }
        s.audit |= self.audit;
    }
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::InvalidArgument(_)) => 1,
            Failure::Core(Error::Invariant(_) | Error::Capacity { .. }) => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(msg) => write!(f, "usage error: {msg}"),
            Failure::Core(e) => {
                write!(f, "{e}")?;
                let mut source = std::error::Error::source(e);
                while let Some(s) = source {
                    write!(f, ": {s}")?;
                    source = s.source();
                }
                Ok(())
            }
        }
    }
}

const DEFAULT_K: usize = 5;

type CliResult<T> = std::result::Result<T, Failure>;

fn pipeline(args: &PipelineArgs) -> CliResult<PipelineConfig> {
    let k = match (args.structure.to_ascii_lowercase().as_str(), args.k) {
        ("kdb" | "skdb", None) => Some(DEFAULT_K),
        (_, k) => k,
    };
    let structure = StructureKind::from_parts(&args.structure, k).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut estimator: EstimatorKind = args
        .estimator
        .parse()
        .map_err(|e: Error| Failure::Usage(e.to_string()))?;
    if let Some(m) = args.m {
        if !matches!(estimator, EstimatorKind::M(_)) {
            return Err(Failure::Usage("--m applies to the m-estimate only".into()));
        }
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Failure::Usage(format!("--m {m} must be nonnegative")));
        }
        estimator = EstimatorKind::M(Some(m));
    }
    let mut config = PipelineConfig::new(structure, estimator).with_seed(args.seed);
    if estimator == EstimatorKind::Hdp {
        args.sampler.apply(&mut config);
        config.sampler.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    } else if args.sampler.given() {
        warn!("sampler flags are ignored by the {estimator} estimator");
    }
    Ok(config)
}

fn csv_options(data: &Path, input: &InputArgs) -> CliResult<CsvOptions> {
    let class: ColumnRef = input.class.parse()?;
    let mut options = CsvOptions::new(class);
    let sidecar = match &input.schema {
        Some(p) => Some(p.clone()),
        None => Some(data.with_extension("schema")).filter(|p| p.is_file()),
    };
    if let Some(p) = sidecar {
        info!("column kinds from {}", p.display());
        options.kinds = read_schema_sidecar(&p)?;
    }
    Ok(options)
}

fn open(data: &Path, input: &InputArgs) -> CliResult<Dataset> {
    let options = csv_options(data, input)?;
    let ds = if input.disk {
        open_csv_with(data, &options)?
    } else {
        load_csv_with(data, &options)?
    };
    info!(
        "{}: {} rows, {} attributes",
        data.display(),
        ds.len(),
        ds.schema().n_attributes()
    );
    Ok(ds)
}

fn emit(output: Option<&Path>, text: &str) -> CliResult<()> {
    match output {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn maybe_subsample(ds: Dataset, fraction: Option<f64>, seed: u64) -> CliResult<Dataset> {
    match fraction {
        Some(f) => {
            let sub = subsample(&ds, f, seed).map_err(|e| Failure::Usage(e.to_string()))?;
            info!("subsampled {} of {} rows", sub.len(), ds.len());
            Ok(sub)
        }
        None => Ok(ds),
    }
}

fn check_cv(folds: usize, reps: usize) -> CliResult<()> {
    if folds < 2 || reps == 0 {
        return Err(Failure::Usage("need --folds >= 2 and --reps >= 1".into()));
    }
    Ok(())
}

fn cmd_train(
    data: &Path,
    output: &Path,
    report_path: Option<&Path>,
    input: &InputArgs,
    args: &PipelineArgs,
) -> CliResult<()> {
    let config = pipeline(args)?;
    let ds = open(data, input)?;
    let (model, report) = train(&ds, &config)?;
    model.save(output)?;
    if let Some(p) = report_path {
        fs::write(p, serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n")?;
    }
    info!("trained {} in {:.2}s", config.label(), report.seconds);
    println!("passes: {}", report.passes);
    println!("peak nodes: {}", report.peak_nodes);
    println!("model: {}", output.display());
    Ok(())
}

fn cmd_predict(model_path: &Path, data: &Path, output: Option<&Path>) -> CliResult<()> {
    let model = TrainedModel::load(model_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(data)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Open {
                path: data.to_path_buf(),
                source,
            },
            other => Error::Parse {
                row: 0,
                msg: format!("{other:?}"),
            },
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(Error::from)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let encoder = model.schema.encoder(&headers, true)?;
    let labels = &model.schema.class.labels;

    let mut out = String::from("row,predicted");
    for l in labels {
        out.push_str(&format!(",p:{l}"));
    }
    if encoder.has_class() {
        out.push_str(",actual");
    }
    out.push('\n');

    let mut inst = Instance::default();
    let mut posts = Vec::new();
    let mut truth = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(Error::from)?;
        encoder.encode(&record, row + 2, &mut inst)?;
        let p = model.predict_posterior(&inst.x)?;
        let best = hdpbnc::eval::argmax(&p) as usize;
        out.push_str(&format!("{row},{}", labels[best]));
        for v in &p {
            out.push_str(&format!(",{v}"));
        }
        if encoder.has_class() {
            let actual = record
                .get(headers.iter().position(|h| *h == model.schema.class.name).unwrap())
                .unwrap_or("");
            out.push_str(&format!(",{}", actual.trim()));
            if inst.y != hdpbnc::data::UNKNOWN {
                truth.push(inst.y);
                posts.push(p);
            }
        }
        out.push('\n');
    }
    emit(output, &out)?;
    if !truth.is_empty() {
        let predicted: Vec<u32> = posts.iter().map(|p| hdpbnc::eval::argmax(p)).collect();
        eprintln!(
            "{} labelled rows: 0-1 loss {:.4}, RMSE {:.4}",
            truth.len(),
            zero_one_loss(&predicted, &truth)?,
            rmse(&posts, &truth)?
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    data: &Path,
    output: Option<&Path>,
    folds: usize,
    reps: usize,
    fraction: Option<f64>,
    input: &InputArgs,
    args: &PipelineArgs,
) -> CliResult<()> {
    check_cv(folds, reps)?;
    let config = pipeline(args)?;
    let ds = maybe_subsample(open(data, input)?, fraction, args.seed)?;
    let report = repeated_cv(&ds, &config, folds, reps, args.seed)?;
    emit(output, &report.to_csv())?;
    eprintln!("{}", report.summary());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(
    data: &[PathBuf],
    a: &str,
    b: &str,
    output: Option<&Path>,
    per_dataset: Option<&Path>,
    folds: usize,
    reps: usize,
    fraction: Option<f64>,
    input: &InputArgs,
    sampler: &SamplerArgs,
    seed: u64,
) -> CliResult<()> {
    check_cv(folds, reps)?;
    let configure = |spec: &str| -> CliResult<PipelineConfig> {
        let mut c = PipelineConfig::parse(spec)
            .map_err(|e| Failure::Usage(e.to_string()))?
            .with_seed(seed);
        if c.estimator == EstimatorKind::Hdp {
            sampler.apply(&mut c);
            c.sampler.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        }
        Ok(c)
    };
    let (ca, cb) = (configure(a)?, configure(b)?);
    let datasets = data
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, maybe_subsample(open(p, input)?, fraction, seed)?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = compare(&datasets, &ca, &cb, folds, reps, seed)?;
    if let Some(p) = per_dataset {
        fs::write(p, report.datasets_csv())?;
    }
    emit(output, &report.wdl_csv())?;
    eprintln!(
        "{} vs {}: 0-1 loss {} (p = {:.4}), RMSE {} (p = {:.4})",
        report.label_a,
        report.label_b,
        report.zero_one,
        report.zero_one.p_value(),
        report.rmse,
        report.rmse.p_value()
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Train {
            data,
            output,
            report,
            input,
            pipeline,
        } => cmd_train(data, output, report.as_deref(), input, pipeline),
        Command::Predict { model, data, output } => cmd_predict(model, data, output.as_deref()),
        Command::Eval {
            data,
            output,
            folds,
            reps,
            subsample,
            input,
            pipeline,
        } => cmd_eval(data, output.as_deref(), *folds, *reps, *subsample, input, pipeline),
        Command::Compare {
            data,
            a,
            b,
            output,
            per_dataset,
            folds,
            reps,
            subsample,
            input,
            sampler,
            seed,
        } => cmd_compare(
            data,
            a,
            b,
            output.as_deref(),
            per_dataset.as_deref(),
            *folds,
            *reps,
            *subsample,
            input,
            sampler,
            *seed,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HDPBNC_LOG", level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
