//! Experiment plumbing behind the `reprog` command line: experiment specs,
//! dataset resolution, reprogramming/evaluation runs with their on-disk
//! artifacts, the host x task matrix, and PPM export.

pub mod cli;
mod matrix;
mod ppm;

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

pub use matrix::{run_matrix, GateCheck, GateSpec, MatrixHost, MatrixOutcome, MatrixRow, MatrixSpec};
pub use ppm::{decode_ppm, dequantize, encode_ppm, quantize, read_ppm, write_ppm};

use crate::data::{
    gen_counting, gen_shapes, load_cifar10, load_mnist, CountingConfig, CountingTask, ImageSet, ShapesConfig,
    TaskSource,
};
use crate::error::{Error, Result};
use crate::host::{init_random_scaled, HostTrainConfig, DESK_CONV};
use crate::io::write_atomic;
use crate::nn::{load_model, HostModel, Provenance};
use crate::reprogram::{
    evaluate_program, save_program, train_program, AdversarialProgram, LabelMap, ReprogramConfig, TaskKind,
    TrainMetrics,
};

/// Environment variable naming the MNIST IDX directory.
pub const MNIST_DIR_ENV: &str = "ARP_MNIST_DIR";
/// Environment variable naming the CIFAR-10 binary batch directory.
pub const CIFAR_DIR_ENV: &str = "ARP_CIFAR_DIR";

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// Host images are task images upscaled by this factor (32 -> 64).
pub const HOST_UPSCALE: usize = 2;
pub const HOST_TEST_SAMPLES: usize = 2_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HostSpec {
    pub arch: String,
    /// Expected provenance; a random host needs no model file.
    pub provenance: Option<Provenance>,
    pub model_path: Option<PathBuf>,
    /// Seed and weight scale for random hosts.
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for HostSpec {
    fn default() -> Self {
        HostSpec {
            arch: DESK_CONV.to_string(),
            provenance: None,
            model_path: None,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// MNIST / CIFAR-10 directory; falls back to the environment.
    pub data_dir: Option<PathBuf>,
    /// Seed of generated (counting) evaluation sets.
    pub seed: u64,
    /// Test examples used for the reported test accuracy.
    pub eval_samples: usize,
    /// Training examples used for the reported train accuracy.
    pub train_eval_samples: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: TaskKind::Mnist,
            data_dir: None,
            seed: 0,
            eval_samples: 10_000,
            train_eval_samples: 10_000,
        }
    }
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        TaskSpec {
            kind,
            ..Default::default()
        }
    }
}

/// Per-field overrides of the task's default [`ReprogramConfig`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReprogramOverrides {
    pub lambda: Option<f64>,
    pub lr0: Option<f64>,
    pub decay: Option<f64>,
    pub steps_per_decay: Option<usize>,
    /// Used to derive `steps_per_decay` when that is not given.
    pub epochs_per_decay: Option<usize>,
    pub batch_size: Option<usize>,
    pub total_steps: Option<usize>,
    pub seed: Option<u64>,
    pub eval_every: Option<usize>,
    pub train_eval_samples: Option<usize>,
    pub val_eval_samples: Option<usize>,
}

pub fn default_epochs_per_decay(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Counting | TaskKind::Mnist => 2,
        TaskKind::Cifar10 => 4,
    }
}

impl ReprogramOverrides {
    /// Task preset with these overrides applied. `steps_per_decay` is
    /// recomputed from the epoch length and batch size unless given.
    pub fn resolve(&self, kind: TaskKind, epoch_len: usize) -> Result<ReprogramConfig> {
        let mut cfg = ReprogramConfig::for_task(kind);
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { cfg.$field = v; })*};
        }
        set!(
            lambda,
            lr0,
            decay,
            batch_size,
            total_steps,
            seed,
            eval_every,
            train_eval_samples,
            val_eval_samples
        );
        cfg.steps_per_decay = match self.steps_per_decay {
            Some(s) => s,
            None => ReprogramConfig::steps_per_decay_for(
                self.epochs_per_decay.unwrap_or(default_epochs_per_decay(kind)),
                epoch_len,
                cfg.batch_size.max(1),
            ),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fields set in `other` win.
    pub fn merged(&self, other: &ReprogramOverrides) -> ReprogramOverrides {
        macro_rules! pick {
            ($($field:ident),*) => {
                ReprogramOverrides { $($field: other.$field.or(self.$field)),* }
            };
        }
        pick!(
            lambda,
            lr0,
            decay,
            steps_per_decay,
            epochs_per_decay,
            batch_size,
            total_steps,
            seed,
            eval_every,
            train_eval_samples,
            val_eval_samples
        )
    }
}

/// One experiment, as read from `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub host: HostSpec,
    pub task: TaskSpec,
    pub reprogram: ReprogramOverrides,
    /// Defaults to the identity map over the task's classes.
    pub label_map: Option<LabelMap>,
    pub output_dir: Option<PathBuf>,
    /// Used by `train-host`.
    pub host_train: HostTrainConfig,
    pub host_data_dir: Option<PathBuf>,
    pub host_train_samples: usize,
    /// Held-out shapes images for host training.
    pub host_test_samples: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            host: HostSpec::default(),
            task: TaskSpec::default(),
            reprogram: ReprogramOverrides::default(),
            label_map: None,
            output_dir: None,
            host_train: HostTrainConfig::default(),
            host_data_dir: None,
            host_train_samples: 10_000,
            host_test_samples: HOST_TEST_SAMPLES,
        }
    }
}

impl ExperimentSpec {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = crate::io::read_file(path.as_ref())?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Loaded adversarial-task data.
pub struct TaskData {
    pub kind: TaskKind,
    pub train: Box<dyn TaskSource>,
    pub train_eval: ImageSet,
    pub test: ImageSet,
}

impl TaskData {
    pub fn side(&self) -> usize {
        self.train.side()
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }
}

fn data_dir(explicit: Option<&Path>, env: &str, fallback: &str) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(env).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

pub fn mnist_dir(explicit: Option<&Path>) -> PathBuf {
    data_dir(explicit, MNIST_DIR_ENV, "data/mnist")
}

pub fn cifar_dir(explicit: Option<&Path>) -> PathBuf {
    data_dir(explicit, CIFAR_DIR_ENV, "data/cifar-10-batches-bin")
}

pub fn load_mnist_dir(dir: &Path) -> Result<(ImageSet, ImageSet)> {
    let [ti, tl, vi, vl] = MNIST_FILES.map(|f| dir.join(f));
    Ok((load_mnist(ti, tl)?, load_mnist(vi, vl)?))
}

pub fn load_cifar_dir(dir: &Path) -> Result<(ImageSet, ImageSet)> {
    let train: Vec<PathBuf> = CIFAR_TRAIN_FILES.iter().map(|f| dir.join(f)).collect();
    Ok((load_cifar10(&train)?, load_cifar10(&[dir.join(CIFAR_TEST_FILE)])?))
}

fn counting_eval_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt)
}

pub fn load_task(spec: &TaskSpec) -> Result<TaskData> {
    let (train, train_eval, test): (Box<dyn TaskSource>, ImageSet, ImageSet) = match spec.kind {
        TaskKind::Counting => {
            let cfg = CountingConfig::with_seed(spec.seed);
            let train_eval = gen_counting(
                &CountingConfig::with_seed(counting_eval_seed(spec.seed, 1)),
                spec.train_eval_samples.max(1),
            )?;
            let test = gen_counting(
                &CountingConfig::with_seed(counting_eval_seed(spec.seed, 2)),
                spec.eval_samples.max(1),
            )?;
            (Box::new(CountingTask::new(cfg)?), train_eval, test)
        }
        TaskKind::Mnist | TaskKind::Cifar10 => {
            let (train, test) = if spec.kind == TaskKind::Mnist {
                load_mnist_dir(&mnist_dir(spec.data_dir.as_deref()))?
            } else {
                load_cifar_dir(&cifar_dir(spec.data_dir.as_deref()))?
            };
            let train_eval = train.head(spec.train_eval_samples.max(1));
            (Box::new(train), train_eval, test.head(spec.eval_samples.max(1)))
        }
    };
    Ok(TaskData {
        kind: spec.kind,
        train,
        train_eval,
        test,
    })
}

/// Where host-training images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HostDataSource {
    Cifar10 {
        dir: PathBuf,
    },
    /// Procedural 10-class shapes, used when no CIFAR-10 files are present.
    Shapes {
        train_samples: usize,
        test_samples: usize,
        seed: u64,
    },
}

impl HostDataSource {
    /// CIFAR-10 when `dir` (or `ARP_CIFAR_DIR`) holds the binary batches,
    /// otherwise the built-in shapes task.
    pub fn detect(dir: Option<&Path>, train_samples: usize, test_samples: usize, seed: u64) -> Self {
        let dir = cifar_dir(dir);
        if dir.join(CIFAR_TEST_FILE).is_file() {
            HostDataSource::Cifar10 { dir }
        } else {
            HostDataSource::Shapes {
                train_samples,
                test_samples,
                seed,
            }
        }
    }

    /// `(train, held_out)` at host resolution.
    pub fn load(&self) -> Result<(ImageSet, ImageSet)> {
        let (train, test) = match self {
            HostDataSource::Cifar10 { dir } => load_cifar_dir(dir)?,
            HostDataSource::Shapes {
                train_samples,
                test_samples,
                seed,
            } => {
                let cfg = |seed| ShapesConfig {
                    seed,
                    ..Default::default()
                };
                (
                    gen_shapes(&cfg(*seed), *train_samples)?,
                    gen_shapes(&cfg(seed.wrapping_add(1)), *test_samples)?,
                )
            }
        };
        Ok((train.upscale(HOST_UPSCALE), test.upscale(HOST_UPSCALE)))
    }
}

/// Loads the host named by `spec`, or builds a random one.
pub fn resolve_host(spec: &HostSpec) -> Result<HostModel> {
    let model = match (&spec.model_path, spec.provenance) {
        (Some(path), _) => load_model(path)?,
        (None, None | Some(Provenance::Random)) => init_random_scaled(&spec.arch, spec.seed, spec.init_scale)?,
        (None, Some(p)) => {
            return Err(Error::Config(format!("a {p} host needs a model file")));
        }
    };
    if let Some(p) = spec.provenance {
        if p != model.provenance() {
            return Err(Error::Config(format!(
                "host provenance is {}, expected {p}",
                model.provenance()
            )));
        }
    }
    Ok(model)
}

/// Rejects task/host combinations that cannot be reprogrammed.
pub fn check_compatible(model: &HostModel, task_side: usize, task_classes: usize, map: &LabelMap) -> Result<()> {
    if task_side >= model.side() {
        return Err(Error::Geometry(format!(
            "task images are {task_side}x{task_side} but the host input is {0}x{0}; no room for a program",
            model.side()
        )));
    }
    if task_classes > model.num_labels() {
        return Err(Error::Config(format!(
            "task has {task_classes} classes, host only {} labels",
            model.num_labels()
        )));
    }
    if map.num_classes() < task_classes {
        return Err(Error::LabelMap(format!(
            "label map covers {} classes, task has {task_classes}",
            map.num_classes()
        )));
    }
    map.validate_for(model.num_labels())
}

/// Fully resolved configuration written beside every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub host: HostSpec,
    pub host_arch: String,
    pub host_provenance: Provenance,
    pub task: TaskSpec,
    pub reprogram: ReprogramConfig,
    pub label_map: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub host_provenance: Provenance,
    pub task: TaskKind,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_test_gap: f64,
    pub n_train_eval: usize,
    pub n_test: usize,
    pub clamp_events: usize,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains a program for an already loaded host and task, writing
/// `config.json`, `metrics.jsonl`, `program.arpg` and `result.json` into
/// `out_dir` when given.
pub fn reprogram_loaded(
    model: &HostModel,
    host: &HostSpec,
    task_spec: &TaskSpec,
    task: &TaskData,
    overrides: &ReprogramOverrides,
    label_map: Option<&LabelMap>,
    out_dir: Option<&Path>,
) -> Result<(AdversarialProgram, TrainMetrics, RunSummary)> {
    let map = label_map
        .cloned()
        .unwrap_or_else(|| LabelMap::identity(task.num_classes()));
    check_compatible(model, task.side(), task.num_classes(), &map)?;
    let cfg = overrides.resolve(task.kind, task.train.epoch_len())?;
    let resolved = ResolvedRun {
        host: host.clone(),
        host_arch: model.arch().to_string(),
        host_provenance: model.provenance(),
        task: task_spec.clone(),
        reprogram: cfg.clone(),
        label_map: map.to_string(),
    };
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_json(&resolved, &dir.join("config.json"))?;
    }
    info!(
        "reprogramming {} host for {}: lambda={} lr={} decay={} steps_per_decay={} batch={} steps={}",
        model.provenance(),
        task.kind,
        cfg.lambda,
        cfg.lr0,
        cfg.decay,
        cfg.steps_per_decay,
        cfg.batch_size,
        cfg.total_steps
    );
    let (program, metrics) = train_program(model, task.train.as_ref(), Some(&task.test), &map, &cfg)?;
    let train_acc = evaluate_program(model, &program, &map, &task.train_eval)?;
    let test_acc = evaluate_program(model, &program, &map, &task.test)?;
    let summary = RunSummary {
        host_provenance: model.provenance(),
        task: task.kind,
        steps: cfg.total_steps,
        final_loss: metrics.records.last().map(|r| r.loss),
        train_acc,
        test_acc,
        train_test_gap: train_acc - test_acc,
        n_train_eval: task.train_eval.len(),
        n_test: task.test.len(),
        clamp_events: metrics.clamp_events,
    };
    if let Some(dir) = out_dir {
        save_program(&program, dir.join("program.arpg"))?;
        write_atomic(&dir.join("metrics.jsonl"), &metrics.to_jsonl())?;
        write_json(&summary, &dir.join("result.json"))?;
    }
    Ok((program, metrics, summary))
}

pub fn run_reprogram(spec: &ExperimentSpec) -> Result<RunSummary> {
    let model = resolve_host(&spec.host)?;
    let task = load_task(&spec.task)?;
    let (_, _, summary) = reprogram_loaded(
        &model,
        &spec.host,
        &spec.task,
        &task,
        &spec.reprogram,
        spec.label_map.as_ref(),
        spec.output_dir.as_deref(),
    )?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub train_acc: Option<f64>,
    pub test_acc: f64,
    pub n_samples: usize,
}

/// Accuracy of a saved program; train accuracy only when
/// `include_train` is set.
pub fn run_eval(
    model: &HostModel,
    program: &AdversarialProgram,
    task: &TaskData,
    label_map: Option<&LabelMap>,
    include_train: bool,
) -> Result<EvalReport> {
    let map = label_map
        .cloned()
        .unwrap_or_else(|| LabelMap::identity(task.num_classes()));
    check_compatible(model, task.side(), task.num_classes(), &map)?;
    let train_acc = if include_train {
        Some(evaluate_program(model, program, &map, &task.train_eval)?)
    } else {
        None
    };
    Ok(EvalReport {
        train_acc,
        test_acc: evaluate_program(model, program, &map, &task.test)?,
        n_samples: task.test.len(),
    })
}
