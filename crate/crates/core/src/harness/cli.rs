//! Argument parsing and dispatch for the `reprog` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 gate failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use super::{
    check_compatible, load_task, reprogram_loaded, resolve_host, run_eval, run_matrix, write_json, write_ppm,
    ExperimentSpec, HostDataSource, MatrixHost, MatrixSpec, TaskSpec,
};
use crate::error::Error;
use crate::gradcheck::{run_gradcheck, GradcheckConfig};
use crate::host::{init_random_scaled, train_host, AdversarialTraining, FGSM_EPSILON};
use crate::io::write_atomic;
use crate::nn::{save_model, Provenance};
use crate::reprogram::{adv_image, embed, load_program, LabelMap, TaskKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_GATE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "reprog", version, about = "Adversarial reprogramming of frozen classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train (or randomly initialize) a host classifier and save it.
    TrainHost(TrainHostArgs),
    /// Learn an adversarial program for a task against a frozen host.
    Reprogram(ReprogramArgs),
    /// Evaluate a saved program.
    Eval(EvalArgs),
    /// Write a program (and optionally one adversarial image) as PPM.
    ExportProgram(ExportArgs),
    /// Run the host x task grid and write a CSV table.
    Matrix(MatrixArgs),
    /// Finite-difference check of all analytic gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Default, Args)]
pub struct HostArgs {
    /// Host model file (ARPM).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use a randomly initialized host instead of a model file.
    #[arg(long)]
    pub random: bool,
    #[arg(long)]
    pub arch: Option<String>,
    /// Seed of a random host.
    #[arg(long)]
    pub host_seed: Option<u64>,
    /// Multiplier on the random-host weight standard deviation.
    #[arg(long)]
    pub init_scale: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct TaskArgs {
    /// counting, mnist or cifar10.
    #[arg(long)]
    pub task: Option<String>,
    /// MNIST or CIFAR-10 directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed of generated evaluation images.
    #[arg(long)]
    pub task_seed: Option<u64>,
    /// Test examples to evaluate on.
    #[arg(long, alias = "samples")]
    pub eval_samples: Option<usize>,
    /// Training examples used for the reported train accuracy.
    #[arg(long)]
    pub train_eval_samples: Option<usize>,
    /// Label map, e.g. `0,1,2+5`.
    #[arg(long)]
    pub label_map: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainHostArgs {
    /// JSON experiment spec; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    /// CIFAR-10 binary directory; the built-in shapes task is used without it.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// none or fgsm.
    #[arg(long)]
    pub adversarial: Option<String>,
    /// FGSM step in [-1, 1] pixel units.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Skip training and write a randomly initialized model.
    #[arg(long)]
    pub random: bool,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Generated shapes images to train on.
    #[arg(long)]
    pub train_samples: Option<usize>,
    /// Generated shapes images held out for accuracy.
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReprogramArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub host: HostArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub steps_per_decay: Option<usize>,
    #[arg(long)]
    pub epochs_per_decay: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub host: HostArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub program: PathBuf,
    /// Also report accuracy on training examples.
    #[arg(long)]
    pub train: bool,
    /// Write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub program: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one adversarial image built from a test example.
    #[arg(long)]
    pub sample_out: Option<PathBuf>,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Test example used for `--sample-out`.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    /// JSON matrix spec; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated tasks.
    #[arg(long)]
    pub tasks: Option<String>,
    /// Trained host file (trained on the fly when absent).
    #[arg(long)]
    pub trained_model: Option<PathBuf>,
    /// Adversarially trained host file (trained on the fly when absent).
    #[arg(long)]
    pub adv_model: Option<PathBuf>,
    /// Comma-separated random-host seeds.
    #[arg(long)]
    pub random_seeds: Option<String>,
    /// Leave out the adversarially trained host.
    #[arg(long)]
    pub no_adv: bool,
    /// Leave out the trained host.
    #[arg(long)]
    pub no_trained: bool,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[arg(long)]
    pub train_eval_samples: Option<usize>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Check the trend gates; exit 3 when they fail.
    #[arg(long)]
    pub gate: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Comma-separated seeds of the small models.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub coordinates: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
    Gate(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Gate(_) => EXIT_GATE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
            CliError::Gate(m) => write!(f, "gate failed: {m}"),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult {
    match command {
        Command::TrainHost(a) => cmd_train_host(a),
        Command::Reprogram(a) => cmd_reprogram(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportProgram(a) => cmd_export(a),
        Command::Matrix(a) => cmd_matrix(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn base_spec(config: Option<&Path>) -> CliResult<ExperimentSpec> {
    match config {
        Some(path) => ExperimentSpec::from_file(path).map_err(|e| usage(format!("--config: {e}"))),
        None => Ok(ExperimentSpec::default()),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| usage(format!("{flag}: cannot parse `{v}`")))
        })
        .collect()
}

fn apply_host_args(spec: &mut ExperimentSpec, a: &HostArgs) -> CliResult {
    if a.model.is_some() && a.random {
        return Err(usage("--model and --random are mutually exclusive"));
    }
    if let Some(m) = &a.model {
        spec.host.model_path = Some(m.clone());
    }
    if a.random {
        spec.host.model_path = None;
        spec.host.provenance = Some(Provenance::Random);
    }
    if let Some(arch) = &a.arch {
        spec.host.arch = arch.clone();
    }
    if let Some(s) = a.host_seed {
        spec.host.seed = s;
    }
    if let Some(s) = a.init_scale {
        spec.host.init_scale = s;
    }
    if spec.host.model_path.is_none() && spec.host.provenance.is_none() {
        return Err(usage("a host is required: pass --model <file> or --random"));
    }
    Ok(())
}

fn apply_task_args(spec: &mut ExperimentSpec, a: &TaskArgs) -> CliResult {
    if let Some(t) = &a.task {
        spec.task.kind = t.parse().map_err(|e: Error| usage(e.to_string()))?;
    }
    if let Some(d) = &a.data {
        spec.task.data_dir = Some(d.clone());
    }
    if let Some(s) = a.task_seed {
        spec.task.seed = s;
    }
    if let Some(n) = a.eval_samples {
        spec.task.eval_samples = n;
    }
    if let Some(n) = a.train_eval_samples {
        spec.task.train_eval_samples = n;
    }
    if let Some(m) = &a.label_map {
        spec.label_map = Some(m.parse().map_err(|e: Error| usage(e.to_string()))?);
    }
    Ok(())
}

fn cmd_train_host(a: TrainHostArgs) -> CliResult {
    let mut spec = base_spec(a.config.as_deref())?;
    let cfg = &mut spec.host_train;
    if let Some(v) = &a.arch {
        spec.host.arch = v.clone();
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
        spec.host.seed = v;
    }
    if let Some(v) = a.max_steps {
        cfg.max_steps = Some(v);
    }
    if let Some(v) = a.train_samples {
        spec.host_train_samples = v;
    }
    if let Some(v) = a.test_samples {
        spec.host_test_samples = v;
    }
    if let Some(v) = a.init_scale {
        spec.host.init_scale = v;
    }
    if let Some(d) = &a.data {
        spec.host_data_dir = Some(d.clone());
    }
    match (a.adversarial.as_deref(), a.epsilon) {
        (Some("none"), Some(_)) => return Err(usage("--epsilon requires --adversarial fgsm")),
        (Some("none"), None) => cfg.adversarial = AdversarialTraining::None,
        (Some("fgsm"), eps) | (None, eps @ Some(_)) => {
            cfg.adversarial = AdversarialTraining::Fgsm {
                epsilon: eps.unwrap_or(FGSM_EPSILON),
            }
        }
        (Some(other), _) => return Err(usage(format!("unknown --adversarial `{other}`"))),
        (None, None) => {}
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let out = a
        .out
        .clone()
        .or_else(|| spec.host.model_path.clone())
        .or_else(|| spec.output_dir.as_ref().map(|d| d.join("host.arpm")))
        .ok_or_else(|| usage("--out is required"))?;

    let model = if a.random {
        init_random_scaled(&spec.host.arch, spec.host.seed, spec.host.init_scale)?
    } else {
        let source = HostDataSource::detect(
            spec.host_data_dir.as_deref(),
            spec.host_train_samples,
            spec.host_test_samples,
            1,
        );
        info!("host data: {source:?}");
        let (train, held_out) = source.load()?;
        let (model, report) = train_host(&spec.host.arch, &train, &held_out, &spec.host_train)?;
        let mut lines = Vec::new();
        for (i, loss) in report.losses.iter().enumerate() {
            lines.extend(serde_json::to_vec(&serde_json::json!({"step": i + 1, "loss": loss})).map_err(Error::from)?);
            lines.push(b'\n');
        }
        write_atomic(&out.with_extension("metrics.jsonl"), &lines)?;
        println!("held_out_acc={:.4}", report.held_out_accuracy);
        if let Some(r) = report.held_out_fgsm_accuracy {
            println!("held_out_fgsm_acc={r:.4}");
        }
        model
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        super::create_dir(dir)?;
    }
    save_model(&model, &out)?;
    write_json(&spec, &out.with_extension("config.json"))?;
    println!("provenance={} model={}", model.provenance(), out.display());
    Ok(())
}

fn cmd_reprogram(a: ReprogramArgs) -> CliResult {
    let mut spec = base_spec(a.config.as_deref())?;
    apply_host_args(&mut spec, &a.host)?;
    apply_task_args(&mut spec, &a.task)?;
    let r = &mut spec.reprogram;
    macro_rules! over {
        ($($flag:ident => $field:ident),*) => {$(if a.$flag.is_some() { r.$field = a.$flag; })*};
    }
    over!(steps => total_steps, lambda => lambda, lr => lr0, decay => decay,
          steps_per_decay => steps_per_decay, epochs_per_decay => epochs_per_decay,
          batch_size => batch_size, seed => seed, eval_every => eval_every);
    if let Some(d) = &a.out_dir {
        spec.output_dir = Some(d.clone());
    }
    let out_dir = spec.output_dir.clone().ok_or_else(|| usage("--out-dir is required"))?;

    let model = resolve_host(&spec.host)?;
    let task = load_task(&spec.task)?;
    let map = spec
        .label_map
        .clone()
        .unwrap_or_else(|| LabelMap::identity(task.num_classes()));
    check_compatible(&model, task.side(), task.num_classes(), &map)?;
    let cfg = spec
        .reprogram
        .resolve(task.kind, task.train.epoch_len())
        .map_err(|e| usage(e.to_string()))?;
    println!(
        "config: task={} host={} lambda={} lr={} decay={} steps_per_decay={} batch_size={} steps={} seed={} label_map={}",
        task.kind,
        model.provenance(),
        cfg.lambda,
        cfg.lr0,
        cfg.decay,
        cfg.steps_per_decay,
        cfg.batch_size,
        cfg.total_steps,
        cfg.seed,
        map
    );
    let (_, _, summary) = reprogram_loaded(
        &model,
        &spec.host,
        &spec.task,
        &task,
        &spec.reprogram,
        Some(&map),
        Some(&out_dir),
    )?;
    println!(
        "train_acc={:.4} test_acc={:.4} gap={:.4} n_test={}",
        summary.train_acc, summary.test_acc, summary.train_test_gap, summary.n_test
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let mut spec = base_spec(a.config.as_deref())?;
    apply_host_args(&mut spec, &a.host)?;
    apply_task_args(&mut spec, &a.task)?;
    let model = resolve_host(&spec.host)?;
    let program = load_program(&a.program)?;
    let mut task_spec: TaskSpec = spec.task.clone();
    if !a.train {
        task_spec.train_eval_samples = 1;
    }
    let task = load_task(&task_spec)?;
    let report = run_eval(&model, &program, &task, spec.label_map.as_ref(), a.train)?;
    let json = serde_json::to_string(&report).map_err(Error::from)?;
    println!("{json}");
    if let Some(out) = &a.out {
        write_json(&report, out)?;
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> CliResult {
    let program = load_program(&a.program)?;
    let p = program.squash();
    write_ppm(&p, &a.out)?;
    println!("program image: {}", a.out.display());
    if let Some(sample_out) = &a.sample_out {
        let mut spec = ExperimentSpec::default();
        apply_task_args(&mut spec, &a.task)?;
        spec.task.train_eval_samples = 1;
        spec.task.eval_samples = spec.task.eval_samples.max(a.index + 1);
        let task = load_task(&spec.task)?;
        if a.index >= task.test.len() {
            return Err(usage(format!("--index {} out of range", a.index)));
        }
        let x = embed(&task.test.image(a.index), &program.geometry())?;
        write_ppm(&adv_image(&x, &p)?, sample_out)?;
        println!("adversarial image: {}", sample_out.display());
    }
    Ok(())
}

fn cmd_matrix(a: MatrixArgs) -> CliResult {
    let mut spec = match &a.config {
        Some(path) => MatrixSpec::from_file(path).map_err(|e| usage(format!("--config: {e}")))?,
        None => MatrixSpec::default(),
    };
    if let Some(d) = &a.out_dir {
        spec.output_dir = d.clone();
    }
    if let Some(t) = &a.tasks {
        let kinds: Vec<TaskKind> = parse_list(t, "--tasks")?;
        spec.tasks = kinds
            .into_iter()
            .map(|kind| {
                let mut task = TaskSpec::new(kind);
                task.data_dir = a.data.clone();
                task
            })
            .collect();
    } else if let Some(d) = &a.data {
        for task in &mut spec.tasks {
            task.data_dir = Some(d.clone());
        }
    }
    for task in &mut spec.tasks {
        if let Some(n) = a.eval_samples {
            task.eval_samples = n;
        }
        if let Some(n) = a.train_eval_samples {
            task.train_eval_samples = n;
        }
    }
    let arch = a.arch.clone();
    let with_arch = |mut h: MatrixHost| {
        if let Some(arch) = &arch {
            h.arch = arch.clone();
        }
        h
    };
    if let Some(seeds) = &a.random_seeds {
        let seeds: Vec<u64> = parse_list(seeds, "--random-seeds")?;
        spec.hosts.retain(|h| h.provenance != Provenance::Random);
        spec.hosts.extend(seeds.into_iter().map(|seed| MatrixHost {
            name: format!("random-{seed}"),
            provenance: Provenance::Random,
            seed,
            ..Default::default()
        }));
    }
    for (flag, provenance, path) in [
        (a.no_trained, Provenance::Trained, &a.trained_model),
        (a.no_adv, Provenance::AdversariallyTrained, &a.adv_model),
    ] {
        if flag {
            spec.hosts.retain(|h| h.provenance != provenance);
        } else if let Some(path) = path {
            for h in spec.hosts.iter_mut().filter(|h| h.provenance == provenance) {
                h.model_path = Some(path.clone());
            }
        }
    }
    spec.hosts = spec.hosts.drain(..).map(with_arch).collect();
    if a.steps.is_some() {
        spec.reprogram.total_steps = a.steps;
    }
    if a.batch_size.is_some() {
        spec.reprogram.batch_size = a.batch_size;
    }
    if a.seed.is_some() {
        spec.reprogram.seed = a.seed;
    }
    if a.gate && spec.gate.is_none() {
        spec.gate = Some(Default::default());
    }

    let outcome = run_matrix(&spec)?;
    print!("{}", outcome.csv);
    for g in &outcome.gate {
        println!(
            "gate {} {}: {} ({})",
            g.task,
            g.name,
            if g.passed { "PASS" } else { "FAIL" },
            g.detail
        );
    }
    if spec.gate.is_some() && !outcome.gate_passed() {
        return Err(CliError::Gate("matrix trend gates".into()));
    }
    if outcome.any_failed() {
        return Err(CliError::Runtime(Error::Config(
            "one or more matrix cells FAILED".into(),
        )));
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult {
    let mut cfg = GradcheckConfig::default();
    if let Some(s) = &a.seeds {
        cfg.model_seeds = parse_list(s, "--seeds")?;
    }
    if let Some(n) = a.coordinates {
        cfg.coordinates = n;
    }
    let report = run_gradcheck(&cfg)?;
    for c in &report.checks {
        println!(
            "{:<8} seed {:>4}: {} coordinates, {} skipped at kinks, max rel error {:.3e} {}",
            c.name,
            c.model_seed,
            c.coordinates,
            c.skipped_kinks,
            c.max_rel_error,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = &a.out {
        write_json(&report, out)?;
    }
    if report.passed() {
        println!("gradcheck passed ({} coordinates)", report.total_coordinates());
        Ok(())
    } else {
        Err(CliError::Gate("gradient check".into()))
    }
}
