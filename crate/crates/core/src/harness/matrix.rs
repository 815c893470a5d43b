//! Host provenance x task grid of reprogramming runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use log::{error, info, warn};
use serde::{Deserialize, Serialize};

use super::{
    create_dir, load_task, reprogram_loaded, resolve_host, write_json, HostDataSource, HostSpec, ReprogramOverrides,
    TaskSpec,
};
use crate::error::{Error, Result};
use crate::host::{train_host, AdversarialTraining, HostTrainConfig, DESK_CONV, FGSM_EPSILON};
use crate::io::write_atomic;
use crate::nn::{load_model, save_model, HostModel, Provenance};
use crate::reprogram::{LabelMap, TaskKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixHost {
    pub name: String,
    pub provenance: Provenance,
    pub arch: String,
    pub seed: u64,
    pub init_scale: f64,
    /// Existing model file. Trained hosts without one are trained and
    /// cached under `<output_dir>/hosts/`.
    pub model_path: Option<PathBuf>,
}

impl Default for MatrixHost {
    fn default() -> Self {
        MatrixHost {
            name: "trained".into(),
            provenance: Provenance::Trained,
            arch: DESK_CONV.into(),
            seed: 0,
            init_scale: 1.0,
            model_path: None,
        }
    }
}

/// Trend gates checked over the finished grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateSpec {
    /// Trained accuracy must beat each random host by this much...
    pub min_random_margin: f64,
    /// ...except for at most this many random hosts.
    pub max_random_exceptions: usize,
    /// Adversarially trained hosts must land within this of the trained one.
    pub adversarial_tolerance: f64,
}

impl Default for GateSpec {
    fn default() -> Self {
        GateSpec {
            min_random_margin: 0.10,
            max_random_exceptions: 1,
            adversarial_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixSpec {
    pub hosts: Vec<MatrixHost>,
    pub tasks: Vec<TaskSpec>,
    pub reprogram: ReprogramOverrides,
    /// Per-task overrides, keyed by task name, applied over `reprogram`.
    pub task_overrides: BTreeMap<String, ReprogramOverrides>,
    pub label_map: Option<LabelMap>,
    pub host_train: HostTrainConfig,
    pub host_data_dir: Option<PathBuf>,
    pub host_train_samples: usize,
    pub host_test_samples: usize,
    pub output_dir: PathBuf,
    pub gate: Option<GateSpec>,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        let random = |seed: u64| MatrixHost {
            name: format!("random-{seed}"),
            provenance: Provenance::Random,
            seed,
            ..Default::default()
        };
        MatrixSpec {
            hosts: vec![
                MatrixHost::default(),
                MatrixHost {
                    name: "adv-trained".into(),
                    provenance: Provenance::AdversariallyTrained,
                    ..Default::default()
                },
                random(1),
                random(2),
                random(3),
            ],
            tasks: vec![TaskSpec::new(TaskKind::Counting), TaskSpec::new(TaskKind::Mnist)],
            reprogram: ReprogramOverrides::default(),
            task_overrides: BTreeMap::new(),
            label_map: None,
            host_train: HostTrainConfig::default(),
            host_data_dir: None,
            host_train_samples: 10_000,
            host_test_samples: super::HOST_TEST_SAMPLES,
            output_dir: PathBuf::from("matrix-out"),
            gate: None,
        }
    }
}

impl MatrixSpec {
    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let bytes = crate::io::read_file(path.as_ref())?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub host: String,
    pub provenance: Provenance,
    pub seed: u64,
    pub task: TaskKind,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub error: Option<String>,
}

impl MatrixRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateCheck {
    pub task: TaskKind,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutcome {
    pub rows: Vec<MatrixRow>,
    pub csv: String,
    pub gate: Vec<GateCheck>,
}

impl MatrixOutcome {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(MatrixRow::failed)
    }

    pub fn gate_passed(&self) -> bool {
        self.gate.iter().all(|g| g.passed)
    }
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

pub fn matrix_csv(rows: &[MatrixRow]) -> String {
    let mut csv = String::from("host,provenance,seed,task,train_acc,test_acc,status\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.host,
            r.provenance,
            r.seed,
            r.task,
            fmt_acc(r.train_acc),
            fmt_acc(r.test_acc),
            if r.failed() { "FAILED" } else { "ok" }
        );
    }
    csv
}

fn obtain_host(spec: &MatrixSpec, host: &MatrixHost) -> Result<HostModel> {
    if let Some(path) = &host.model_path {
        return load_model(path);
    }
    if host.provenance == Provenance::Random {
        return resolve_host(&HostSpec {
            arch: host.arch.clone(),
            provenance: Some(Provenance::Random),
            model_path: None,
            seed: host.seed,
            init_scale: host.init_scale,
        });
    }
    let cached = spec.output_dir.join("hosts").join(format!("{}.arpm", host.name));
    if cached.is_file() {
        info!("using cached host {}", cached.display());
        return load_model(&cached);
    }
    let mut cfg = spec.host_train.clone();
    cfg.seed = host.seed;
    if host.provenance == Provenance::AdversariallyTrained && cfg.adversarial == AdversarialTraining::None {
        cfg.adversarial = AdversarialTraining::Fgsm { epsilon: FGSM_EPSILON };
    }
    if host.provenance == Provenance::Trained {
        cfg.adversarial = AdversarialTraining::None;
    }
    let source = HostDataSource::detect(
        spec.host_data_dir.as_deref(),
        spec.host_train_samples,
        spec.host_test_samples,
        1,
    );
    let (train, held_out) = source.load()?;
    let (model, _) = train_host(&host.arch, &train, &held_out, &cfg)?;
    create_dir(cached.parent().unwrap())?;
    save_model(&model, &cached)?;
    Ok(model)
}

fn gate_checks(rows: &[MatrixRow], gate: &GateSpec) -> Vec<GateCheck> {
    let mut checks = Vec::new();
    let mut tasks: Vec<TaskKind> = rows.iter().map(|r| r.task).collect();
    tasks.dedup();
    for task in tasks {
        let of = |p: Provenance| -> Vec<&MatrixRow> {
            rows.iter().filter(|r| r.task == task && r.provenance == p).collect()
        };
        let Some(trained) = of(Provenance::Trained).into_iter().find_map(|r| r.test_acc) else {
            checks.push(GateCheck {
                task,
                name: "trained".into(),
                passed: false,
                detail: "no successful trained-host cell".into(),
            });
            continue;
        };
        let random = of(Provenance::Random);
        if !random.is_empty() {
            let beaten = random
                .iter()
                .filter(|r| r.test_acc.is_some_and(|a| trained - a >= gate.min_random_margin))
                .count();
            let needed = random.len().saturating_sub(gate.max_random_exceptions).max(1);
            checks.push(GateCheck {
                task,
                name: "trained_beats_random".into(),
                passed: beaten >= needed,
                detail: format!(
                    "trained {trained:.4} beats {beaten}/{} random hosts by >= {:.2} (need {needed})",
                    random.len(),
                    gate.min_random_margin
                ),
            });
        }
        for adv in of(Provenance::AdversariallyTrained) {
            let diff = adv.test_acc.map(|a| (a - trained).abs());
            checks.push(GateCheck {
                task,
                name: format!("adversarial_close:{}", adv.host),
                passed: diff.is_some_and(|d| d <= gate.adversarial_tolerance),
                detail: format!(
                    "|{} - trained| = {} (tolerance {:.2})",
                    adv.host,
                    diff.map(|d| format!("{d:.4}")).unwrap_or_else(|| "FAILED".into()),
                    gate.adversarial_tolerance
                ),
            });
        }
    }
    checks
}

/// Runs every host x task cell. A failing cell is recorded and the rest of
/// the grid still runs. Writes `results.csv`, `rows.json` and (with a gate)
/// `gate.json` into the output directory.
pub fn run_matrix(spec: &MatrixSpec) -> Result<MatrixOutcome> {
    if spec.hosts.is_empty() || spec.tasks.is_empty() {
        return Err(Error::Config("matrix needs at least one host and one task".into()));
    }
    create_dir(&spec.output_dir)?;
    write_json(spec, &spec.output_dir.join("config.json"))?;

    let hosts: Vec<Result<HostModel>> = spec.hosts.iter().map(|h| obtain_host(spec, h)).collect();
    let mut rows = Vec::new();
    for task_spec in &spec.tasks {
        let task = load_task(task_spec);
        if let Err(e) = &task {
            error!("task {} unavailable: {e}", task_spec.kind);
        }
        let overrides = match spec.task_overrides.get(task_spec.kind.as_str()) {
            Some(o) => spec.reprogram.merged(o),
            None => spec.reprogram.clone(),
        };
        for (host, model) in spec.hosts.iter().zip(&hosts) {
            let cell_dir = spec.output_dir.join(format!("{}-{}", host.name, task_spec.kind));
            let result = match (model, &task) {
                (Ok(model), Ok(task)) => {
                    let host_spec = HostSpec {
                        arch: host.arch.clone(),
                        provenance: Some(host.provenance),
                        model_path: host.model_path.clone(),
                        seed: host.seed,
                        init_scale: host.init_scale,
                    };
                    if model.provenance() != host.provenance {
                        Err(Error::Config(format!(
                            "host {} has provenance {}, expected {}",
                            host.name,
                            model.provenance(),
                            host.provenance
                        )))
                    } else {
                        reprogram_loaded(
                            model,
                            &host_spec,
                            task_spec,
                            task,
                            &overrides,
                            spec.label_map.as_ref(),
                            Some(&cell_dir),
                        )
                        .map(|(_, _, s)| s)
                    }
                }
                (Err(e), _) | (_, Err(e)) => Err(Error::Config(format!("cell prerequisites: {e}"))),
            };
            let row = match result {
                Ok(s) => {
                    info!("{} x {}: test accuracy {:.4}", host.name, task_spec.kind, s.test_acc);
                    MatrixRow {
                        host: host.name.clone(),
                        provenance: host.provenance,
                        seed: host.seed,
                        task: task_spec.kind,
                        train_acc: Some(s.train_acc),
                        test_acc: Some(s.test_acc),
                        error: None,
                    }
                }
                Err(e) => {
                    warn!("{} x {} FAILED: {e}", host.name, task_spec.kind);
                    MatrixRow {
                        host: host.name.clone(),
                        provenance: host.provenance,
                        seed: host.seed,
                        task: task_spec.kind,
                        train_acc: None,
                        test_acc: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            rows.push(row);
        }
    }

    let csv = matrix_csv(&rows);
    write_atomic(&spec.output_dir.join("results.csv"), csv.as_bytes())?;
    write_json(&rows, &spec.output_dir.join("rows.json"))?;
    let gate = spec.gate.as_ref().map(|g| gate_checks(&rows, g)).unwrap_or_default();
    if spec.gate.is_some() {
        write_json(&gate, &spec.output_dir.join("gate.json"))?;
    }
    Ok(MatrixOutcome { rows, csv, gate })
}
