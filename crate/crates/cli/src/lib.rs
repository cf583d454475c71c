//! Command-line orchestration: cohort generation, training, leave-one-out
//! evaluation, phantom assembly with anatomy correction, reporting and file
//! validation.

pub mod summary;
mod validate;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use phantom_core::aic::{self, AicConfig, AicError};
use phantom_core::cohort::io::{read_cohort, write_cohort, COHORT_CSV};
use phantom_core::cohort::synth::{gen_synthetic_cohort, SynthConfig};
use phantom_core::cohort::{Cohort, PatientId, Task};
use phantom_core::evaluation::{self, EvalContext, LoocvConfig, Method};
use phantom_core::gp::{Budget, ImsConfig};
use phantom_core::pipeline::{self, train_bundle, CohortTables, ModelBundle, PhantomProvenance};
use phantom_core::regressors::{Fitted, FitSettings, Hyper, ModelKind, RegressionModel};

pub use summary::{feature_summary, FeatureSummary};
pub use validate::{validate_path, Validated};

/// Default soft-tissue value written over resected organs.
pub const DEFAULT_FILL_HU: i16 = 78;
pub const CORRECTION_LOG: &str = "correction_log.json";
pub const RUN_CONFIG: &str = "run_config.json";
pub const BUNDLE: &str = "bundle.json";
pub const SYNTH_CONFIG: &str = "synth_config.json";

#[derive(Debug, Parser)]
#[command(name = "phantomgen", version, about = "Patient-specific CT phantoms from patient features")]
pub struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "PHANTOM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort and print its feature summary.
    GenCohort(GenCohortArgs),
    /// Fit the nine models on a cohort and save them as a bundle.
    Train(TrainArgs),
    /// Patient-wise leave-one-out evaluation with tables and statistics.
    Loocv(LoocvArgs),
    /// Build a phantom for one patient from the rest of the cohort.
    Assemble(AssembleArgs),
    /// Score a saved bundle on held-out patients.
    Evaluate(EvaluateArgs),
    /// Rebuild tables, curves and statistics from a results file.
    Report(ReportArgs),
    /// Check emitted files against their formats.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct GenCohortArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub patients: usize,
    #[arg(long)]
    pub seed: u64,
    /// No position or shape noise on top of the planted laws.
    #[arg(long)]
    pub noiseless: bool,
    /// Coarse 6 mm grid for quick runs.
    #[arg(long)]
    pub small: bool,
}

#[derive(Debug, Args, Clone)]
pub struct FitArgs {
    /// Nominal GP budget per model, seconds.
    #[arg(long, default_value_t = 60.0)]
    pub gp_seconds: f64,
    /// Trees per random forest.
    #[arg(long, default_value_t = phantom_core::regressors::DEFAULT_TREES)]
    pub trees: usize,
}

impl FitArgs {
    pub fn settings(&self) -> Result<FitSettings> {
        if !(self.gp_seconds.is_finite() && self.gp_seconds > 0.0) {
            bail!("--gp-seconds must be positive, got {}", self.gp_seconds);
        }
        Ok(FitSettings {
            ims: ImsConfig::with_budget(Budget::nominal_seconds(self.gp_seconds), 0),
            n_trees: self.trees,
            ..FitSettings::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Bundle file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "GPGOMEA", value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long)]
    pub seed: u64,
    /// Leave this patient out of training.
    #[arg(long)]
    pub exclude: Option<u32>,
    #[arg(long, default_value_t = 5.0)]
    pub tau: f64,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct LoocvArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated learners and baselines.
    #[arg(long, value_delimiter = ',', value_parser = parse_method,
          default_value = "LARS,LASSO,RF,GPTrad,GPGOMEA,HC1,HC2,RAND,SCT")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10)]
    pub rand_repeats: usize,
    #[arg(long, default_value_t = 5.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args, Clone)]
pub struct AicArgs {
    #[arg(long, default_value_t = 0.25)]
    pub min_volume_scale: f64,
    #[arg(long, default_value_t = 1.25)]
    pub max_volume_scale: f64,
    #[arg(long, default_value_t = 10.0)]
    pub max_shift_mm: f64,
    #[arg(long, default_value_t = 50)]
    pub aic_population: usize,
    #[arg(long, default_value_t = 20_000)]
    pub aic_max_evaluations: usize,
}

impl AicArgs {
    fn config(&self, tau: f64, seed: u64) -> AicConfig {
        AicConfig {
            min_volume_scale: self.min_volume_scale,
            max_volume_scale: self.max_volume_scale,
            max_shift_mm: self.max_shift_mm,
            tau,
            population: self.aic_population,
            max_evaluations: self.aic_max_evaluations,
            seed,
            ..AicConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Patient to build the phantom for; excluded from the database.
    #[arg(long)]
    pub test: u32,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "GPGOMEA", value_parser = parse_model)]
    pub model: ModelKind,
    /// Use a saved bundle instead of training one.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FILL_HU)]
    pub fill_hu: i16,
    #[arg(long, default_value_t = 5.0)]
    pub tau: f64,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub aic: AicArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Held-out patients to score.
    #[arg(long, value_delimiter = ',', required = true)]
    pub test: Vec<u32>,
    #[arg(long, default_value_t = 5.0)]
    pub tau: f64,
    /// JSON file for the errors; printed only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Files or directories.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::from_name(s).ok_or_else(|| format!("unknown model {s:?}"))
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::from_name(s.trim()).ok_or_else(|| format!("unknown method {s:?}"))
}

/// An input path that does not exist; maps to exit code 2.
#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} does not exist", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<MissingInput>()) {
        2
    } else {
        1
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(MissingInput(path.to_path_buf()).into());
    }
    Ok(())
}

pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    require(dir)?;
    require(&dir.join(COHORT_CSV))?;
    read_cohort(dir).with_context(|| format!("reading cohort {}", dir.display()))
}

/// Parameters a run's outputs depend on. Thread count and output location are
/// left out so outputs compare across machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub cohort: String,
    pub seed: u64,
    pub tau: f64,
    pub fill_hu: Option<i16>,
    pub gp_seconds: Option<f64>,
    pub repeats: Option<usize>,
    pub methods: Vec<String>,
    pub aic: Option<AicConfig>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Runs a command on a pool of `cli.threads` workers.
pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("starting worker pool")?;
    pool.install(|| match cli.command {
        Command::GenCohort(a) => cmd_gen_cohort(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Loocv(a) => cmd_loocv(&a),
        Command::Assemble(a) => cmd_assemble(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Validate(a) => cmd_validate(&a),
    })
}

pub fn cmd_gen_cohort(a: &GenCohortArgs) -> Result<()> {
    let mut cfg = if a.small { SynthConfig::small(a.patients, a.seed) } else { SynthConfig::new(a.patients, a.seed) };
    if a.noiseless {
        cfg = cfg.noiseless();
    }
    let cohort = gen_synthetic_cohort(&cfg)?;
    write_cohort(&a.out, &cohort).with_context(|| format!("writing cohort to {}", a.out.display()))?;
    write_json(&a.out.join(SYNTH_CONFIG), &cfg)?;
    print!("{}", summary::render(&feature_summary(&cohort)));
    Ok(())
}

fn train_on(cohort: &Cohort, exclude: Option<PatientId>, kind: ModelKind, fit: &FitSettings, tau: f64, seed: u64) -> Result<ModelBundle> {
    let tables = CohortTables::compute(cohort, tau)?;
    let datasets = match exclude {
        Some(id) => tables.without_patient(id),
        None => tables.datasets.clone(),
    };
    Ok(train_bundle(&datasets, kind, fit, seed)?)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cohort = load_cohort(&a.cohort)?;
    let exclude = a.exclude.map(PatientId);
    if let Some(id) = exclude {
        if cohort.get(id).is_none() {
            bail!("patient {id} is not in the cohort");
        }
    }
    let bundle = train_on(&cohort, exclude, a.model, &a.fit.settings()?, a.tau, a.seed)?;
    write_json(&a.out, &bundle)?;
    for m in &bundle.models {
        println!("{}", describe(m));
    }
    Ok(())
}

/// One-line description of a fitted model.
pub fn describe(m: &RegressionModel) -> String {
    let body = match (&m.fitted, &m.hyper) {
        (Fitted::Expr { text, .. }, _) => text.clone(),
        (Fitted::Linear(_), Hyper::Lambda(l)) => format!("linear, lambda = {l}"),
        (Fitted::Linear(_), _) => "linear".into(),
        (Fitted::Forest(_), Hyper::Forest { n_trees, mtry, min_node_size }) => {
            format!("{n_trees} trees, mtry = {mtry}, min node size = {min_node_size}")
        }
        (Fitted::Forest(_), _) => "forest".into(),
    };
    format!("{} {}: {}", m.task.name(), m.kind.name(), body)
}

pub fn cmd_loocv(a: &LoocvArgs) -> Result<()> {
    let cohort = load_cohort(&a.cohort)?;
    let cfg = LoocvConfig {
        methods: a.methods.clone(),
        tau: a.tau,
        repeats: a.repeats,
        rand_repeats: a.rand_repeats,
        fit: a.fit.settings()?,
        seed: a.seed,
    };
    let folds = evaluation::loocv(&cohort, &cfg)?;
    let stats = evaluation::write_report(&a.out, &folds, a.alpha)?;
    write_json(
        &a.out.join(RUN_CONFIG),
        &RunConfig {
            command: "loocv".into(),
            cohort: a.cohort.display().to_string(),
            seed: a.seed,
            tau: a.tau,
            fill_hu: None,
            gp_seconds: Some(a.fit.gp_seconds),
            repeats: Some(a.repeats),
            methods: a.methods.iter().map(|m| m.name().to_string()).collect(),
            aic: None,
        },
    )?;
    for b in &stats.significance.best {
        let names: Vec<&str> = b.best.iter().map(|m| m.name()).collect();
        println!("{}: best {}", b.metric.name(), names.join(", "));
    }
    Ok(())
}

pub fn cmd_assemble(a: &AssembleArgs) -> Result<()> {
    let cohort = load_cohort(&a.cohort)?;
    let test_id = PatientId(a.test);
    let test = cohort.get(test_id).with_context(|| format!("patient {test_id} is not in the cohort"))?;
    let bundle = match &a.bundle {
        Some(p) => {
            require(p)?;
            serde_json::from_str::<ModelBundle>(&fs::read_to_string(p)?).with_context(|| format!("reading {}", p.display()))?
        }
        None => train_on(&cohort, Some(test_id), a.model, &a.fit.settings()?, a.tau, a.seed)?,
    };
    let db = cohort.others(test_id);
    let ph = pipeline::assemble(&bundle, Some(test_id), &test.features, &db, a.fill_hu)?;
    let aic_cfg = a.aic.config(a.tau, a.seed);
    let fixed = match aic::correct(&ph, &aic_cfg) {
        Ok(c) => c,
        Err(AicError::NoFeasibleSolution { best_violation, evaluations }) => {
            let initial = aic::check(&ph, &aic_cfg)?;
            bail!(
                "no feasible correction found after {evaluations} evaluations (best violation {best_violation} voxels); \
                 initial violations: {}",
                serde_json::to_string(&initial)?
            );
        }
        Err(e) => return Err(e.into()),
    };
    let models = bundle.models.iter().map(describe).collect();
    let prov = PhantomProvenance::new(&fixed.phantom, models, a.seed);
    pipeline::write_phantom(&a.out, &fixed.phantom, &prov)?;
    write_json(&a.out.join(CORRECTION_LOG), &fixed.log)?;
    write_json(&a.out.join(BUNDLE), &bundle)?;
    write_json(
        &a.out.join(RUN_CONFIG),
        &RunConfig {
            command: "assemble".into(),
            cohort: a.cohort.display().to_string(),
            seed: a.seed,
            tau: a.tau,
            fill_hu: Some(a.fill_hu),
            gp_seconds: a.bundle.is_none().then_some(a.fit.gp_seconds),
            repeats: None,
            methods: vec![a.model.name().to_string()],
            aic: Some(aic_cfg),
        },
    )?;
    println!(
        "receiver {}, liver donor {}, spleen donor {}; initial violations {}, correction {}",
        prov.plan.receiver,
        prov.plan.oars[0].donor,
        prov.plan.oars[1].donor,
        fixed.log.initial.total,
        if fixed.log.applied { "applied" } else { "not needed" }
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientErrors {
    pub test: PatientId,
    pub errors: Vec<(String, f64)>,
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let cohort = load_cohort(&a.cohort)?;
    require(&a.bundle)?;
    let bundle: ModelBundle = serde_json::from_str(&fs::read_to_string(&a.bundle)?)
        .with_context(|| format!("reading {}", a.bundle.display()))?;
    let ctx = EvalContext::new(&cohort, a.tau)?;
    let mut out = Vec::new();
    for &t in &a.test {
        let id = PatientId(t);
        let rec = cohort.get(id).with_context(|| format!("patient {id} is not in the cohort"))?;
        let e = ctx.bundle_errors(&bundle, rec, &cohort.others(id))?;
        out.push(PatientErrors { test: id, errors: Task::ALL.iter().zip(e).map(|(t, v)| (t.name().to_string(), v)).collect() });
    }
    match &a.out {
        Some(p) => write_json(p, &out)?,
        None => {
            for p in &out {
                let cells: Vec<String> = p.errors.iter().map(|(t, v)| format!("{t} {v:.3}")).collect();
                println!("{}: {}", p.test, cells.join("  "));
            }
        }
    }
    Ok(())
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    require(&a.results)?;
    let folds = evaluation::read_results_csv(&a.results)?;
    let stats = evaluation::write_report(&a.out, &folds, a.alpha)?;
    println!("{} folds, {} methods", stats.folds, stats.methods.len());
    Ok(())
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let mut n = 0;
    for p in &a.paths {
        require(p)?;
        for v in validate_path(p)? {
            println!("ok {} ({})", v.path.display(), v.kind);
            n += 1;
        }
    }
    println!("{n} files valid");
    Ok(())
}
