//! One function per experiment kind. Each writes its outputs under `out`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use phantomnet::continual::{continual_step, evaluate_blocks, naive_sequential, ContinualConfig, ContinualState};
use phantomnet::data::LabeledDataset;
use phantomnet::gan::{checkpoint_path, GanModel};
use phantomnet::nn::Classifier;
use phantomnet::sites::{evaluate, load_classifier, save_classifier, train_base, BaseConfig, BroadcastBundle, Evaluation};
use phantomnet::{Error, Result};

use crate::config::{data_root, read_config, DatasetSpec, IncrementSettings};
use crate::experiment::{check_membrane, load_test, run_method, run_sweep, IncrementInputs, Method, SweepConfig};
use crate::gradients::{gradient_suite, GradientSuiteConfig};
use crate::report::{merge_reports, summarize, write_json, write_rows_csv, write_summary_csv, ResultRow, RowsReport};

/// Old-class exemplars explicitly allowed across the membrane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Relaxation {
    pub per_class: usize,
}

impl std::str::FromStr for Relaxation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let n = s
            .strip_prefix("p=")
            .ok_or_else(|| format!("expected p=<n>, got `{s}`"))?;
        let per_class = n.parse().map_err(|e| format!("bad exemplar count `{n}`: {e}"))?;
        Ok(Self { per_class })
    }
}

pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub relaxation: Option<Relaxation>,
    pub quiet: bool,
}

impl RunOptions {
    fn progress(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn out_path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.out.join(name)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report values serialise")
}

fn write_evaluation(opts: &RunOptions, name: &str, eval: &Evaluation) -> Result<()> {
    write_text(&opts.out_path(format!("{name}.txt")), &eval.confusion.to_string())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseTrainConfig {
    pub train: DatasetSpec,
    #[serde(default)]
    pub test: Vec<DatasetSpec>,
    pub base: BaseConfig,
    /// GAN epochs to checkpoint besides the last one.
    #[serde(default)]
    pub gan_checkpoints: Vec<u32>,
}

pub fn base_train(opts: &RunOptions) -> Result<()> {
    let mut cfg: BaseTrainConfig = read_config(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.base.seed = seed;
    }
    let root = data_root();
    let (train, provenance) = cfg.train.load(&root)?;
    let gan_dir = opts.out_path("gan");
    create_dir(&gan_dir)?;
    let mut checkpoints = Vec::new();
    let out = train_base(&train, &cfg.base, |g: &GanModel| {
        let e = g.epochs_trained();
        if cfg.gan_checkpoints.contains(&e) || e == cfg.base.gan_epochs {
            let checksum = g.save(checkpoint_path(&gan_dir, e), cfg.base.seed)?;
            checkpoints.push(json!({ "epoch": e, "file": checkpoint_path("gan", e), "checksum": checksum }));
            opts.progress(&format!("saved GAN checkpoint at epoch {e}"));
        }
        Ok(())
    })?;
    let classifier_checksum = save_classifier(
        opts.out_path("classifier.pnc"),
        &out.classifier,
        cfg.base.seed,
        vec![provenance],
    )?;
    let mut report = json!({
        "kind": "base-train",
        "config": to_value(&cfg),
        "classifier": { "file": "classifier.pnc", "checksum": classifier_checksum },
        "gan_checkpoints": checkpoints,
        "classifier_log": to_value(&out.classifier_log),
        "gan_log": to_value(&out.gan_log),
    });
    if !cfg.test.is_empty() {
        let j = out.classifier.num_classes();
        let test = load_test(&cfg.test, &root, usize::MAX)?
            .filter(|l| l < j)
            .with_label_range(0..j)?;
        let eval = evaluate(&out.classifier, &test, j)?;
        opts.progress(&format!("base accuracy {:.4}", eval.accuracy));
        write_evaluation(opts, "confusion", &eval)?;
        report["evaluation"] = to_value(&eval);
    }
    write_json(&opts.out_path("report.json"), &report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BroadcastConfig {
    pub classifier: PathBuf,
    pub gan: PathBuf,
    #[serde(default = "default_bundle")]
    pub bundle: PathBuf,
}

fn default_bundle() -> PathBuf {
    PathBuf::from("bundle.pnc")
}

pub fn broadcast(opts: &RunOptions) -> Result<()> {
    let cfg: BroadcastConfig = read_config(&opts.config)?;
    let (classifier, meta) = load_classifier(&cfg.classifier)?;
    let (gan, _) = GanModel::load(&cfg.gan)?;
    let seed = opts.seed.unwrap_or(meta.seed);
    let mut bundle = BroadcastBundle::new(classifier, gan, seed, meta.sources)?;
    let path = opts.out_path(&cfg.bundle);
    let checksum = bundle.broadcast(&path)?;
    let size = fs::metadata(&path).map_err(io_err(&path))?.len();
    opts.progress(&format!("bundle {} ({size} bytes)", path.display()));
    write_json(
        &opts.out_path("report.json"),
        &json!({
            "kind": "broadcast",
            "config": to_value(&cfg),
            "checksum": checksum,
            "size_bytes": size,
            "metadata": to_value(&bundle.metadata),
        }),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Gan,
    Noise,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarSpec {
    pub data: DatasetSpec,
    pub per_class: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementConfig {
    pub bundle: PathBuf,
    pub data: DatasetSpec,
    pub test: Vec<DatasetSpec>,
    /// Defaults to one past the largest increment label.
    #[serde(default)]
    pub total_classes: Option<usize>,
    pub increment: IncrementSettings,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub exemplars: Option<ExemplarSpec>,
    pub seed: u64,
}

/// Runs an increment site: `increment`, `baseline-naive` or `baseline-exemplar`.
pub fn increment(opts: &RunOptions, kind: &str) -> Result<()> {
    let mut cfg: IncrementConfig = read_config(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let method = match (kind, cfg.sampler) {
        ("baseline-naive", _) => Method::Naive,
        ("baseline-exemplar", _) => Method::Exemplar,
        (_, SamplerKind::Gan) => Method::Phantom,
        (_, SamplerKind::Noise) => Method::Noise,
    };
    let bundle = BroadcastBundle::load(&cfg.bundle)?;
    let root = data_root();
    let (data, provenance) = cfg.data.load(&root)?;
    if let Err(e) = check_membrane(&bundle.metadata.base_sources, &provenance) {
        if opts.relaxation.is_none() {
            return Err(e);
        }
        opts.progress(&format!("membrane relaxed: {e}"));
    }
    let exemplars: Option<LabeledDataset> = match method {
        Method::Exemplar => {
            let spec = cfg
                .exemplars
                .as_ref()
                .ok_or_else(|| Error::Config("baseline-exemplar needs an `exemplars` section".into()))?;
            match opts.relaxation {
                Some(r) if r.per_class == spec.per_class => {}
                _ => {
                    return Err(Error::Membrane(format!(
                        "transmitting {} old-class samples per class requires --allow-relaxation p={}",
                        spec.per_class, spec.per_class
                    )))
                }
            }
            if spec.per_class == 0 {
                return Err(Error::Config("p = 0 is the naive baseline; use baseline-naive".into()));
            }
            let (ex, _) = spec.data.load(&root)?;
            Some(ex.sample_per_class(
                spec.per_class,
                phantomnet::derive_seed(cfg.seed, phantomnet::sites::streams::EXEMPLARS),
            ))
        }
        _ => None,
    };
    let j = bundle.metadata.base_class_count;
    let total = cfg.total_classes.unwrap_or_else(|| data.label_range().end.max(j));
    let inputs = IncrementInputs {
        base: &bundle.classifier,
        gan: Some(&bundle.gan),
        data: &data,
        exemplars: exemplars.as_ref(),
        total_classes: total,
        settings: &cfg.increment,
        seed: cfg.seed,
    };
    let out = run_method(method, &inputs)?;
    let test = load_test(&cfg.test, &root, total)?;
    let eval = evaluate(&out.classifier, &test, j)?;
    let row = ResultRow {
        method: method.name().to_string(),
        p: exemplars.as_ref().map_or(0, |_| cfg.exemplars.as_ref().map_or(0, |e| e.per_class)),
        gan_epochs: (method == Method::Phantom).then_some(bundle.metadata.gan_epoch),
        temperature: matches!(method, Method::Phantom | Method::Noise).then_some(out.plan.temperature),
        seed: cfg.seed,
        combined: eval.accuracy,
        old_block: eval.old_block,
        new_block: eval.new_block,
    };
    opts.progress(&row.describe());
    save_classifier(opts.out_path("classifier.pnc"), &out.classifier, cfg.seed, vec![provenance])?;
    write_evaluation(opts, "confusion", &eval)?;
    write_rows_csv(&opts.out_path("accuracy.csv"), std::slice::from_ref(&row))?;
    write_json(
        &opts.out_path("report.json"),
        &json!({
            "kind": kind,
            "config": to_value(&cfg),
            "bundle_checksum": bundle.checksum,
            "plan": to_value(&out.plan),
            "log": to_value(&out.log),
            "evaluation": to_value(&eval),
            "old_classes": j,
            "total_classes": total,
            "rows": [to_value(&row)],
            "membrane_violation": out.log.membrane_violation,
        }),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinualRunConfig {
    pub data: DatasetSpec,
    pub test: Vec<DatasetSpec>,
    pub continual: ContinualConfig,
    #[serde(default = "yes")]
    pub naive_baseline: bool,
}

fn yes() -> bool {
    true
}

fn block_data(data: &LabeledDataset, block: &std::ops::Range<usize>) -> Result<LabeledDataset> {
    data.filter(|l| block.contains(&l)).with_label_range(block.clone())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinualSummary {
    pub combined: f64,
    pub blocks: Vec<Option<f64>>,
    pub naive_combined: Option<f64>,
    pub naive_blocks: Option<Vec<Option<f64>>>,
    pub evaluation: Evaluation,
}

/// Runs every scheduled increment, and the naive sequential baseline.
pub fn run_continual(
    cfg: &ContinualRunConfig,
    root: &Path,
    mut on_step: impl FnMut(usize, &serde_json::Value) -> Result<()>,
) -> Result<ContinualSummary> {
    let schedule = cfg.continual.schedule.clone();
    let (data, _) = cfg.data.load(root)?;
    let total = schedule.last().map_or(0, |b| b.end);
    let test = load_test(&cfg.test, root, total)?;
    let increments: Vec<LabeledDataset> = schedule.iter().map(|b| block_data(&data, b)).collect::<Result<_>>()?;
    let mut state = ContinualState::new(schedule.clone())?;
    for (i, inc) in increments.iter().enumerate() {
        let metrics = continual_step(&mut state, inc, &cfg.continual)?;
        let net = state.classifier().expect("a step trains the classifier");
        let seen = 0..schedule[i].end;
        let seen_test = test.filter(|l| seen.contains(&l)).with_label_range(seen.clone())?;
        let (eval, blocks) = evaluate_blocks(net, &seen_test, &schedule[..=i])?;
        on_step(
            i,
            &json!({
                "step": i,
                "classes": to_value(&schedule[i]),
                "metrics": to_value(&metrics),
                "accuracy": eval.accuracy,
                "blocks": blocks,
                "evaluation": to_value(&eval),
            }),
        )?;
    }
    let net = state.classifier().expect("schedule is non-empty");
    let (evaluation, blocks) = evaluate_blocks(net, &test, &schedule)?;
    let (naive_combined, naive_blocks) = if cfg.naive_baseline {
        let naive: Classifier<f32> = naive_sequential(&increments, &cfg.continual)?;
        let (e, b) = evaluate_blocks(&naive, &test, &schedule)?;
        (Some(e.accuracy), Some(b))
    } else {
        (None, None)
    };
    Ok(ContinualSummary {
        combined: evaluation.accuracy,
        blocks,
        naive_combined,
        naive_blocks,
        evaluation,
    })
}

pub fn continual(opts: &RunOptions) -> Result<()> {
    let mut cfg: ContinualRunConfig = read_config(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.continual.seed = seed;
    }
    let summary = run_continual(&cfg, &data_root(), |i, step| {
        opts.progress(&format!("increment {i}: accuracy {}", step["accuracy"]));
        write_json(&opts.out_path(format!("increment-{i}.json")), step)
    })?;
    write_evaluation(opts, "confusion", &summary.evaluation)?;
    write_json(
        &opts.out_path("report.json"),
        &json!({ "kind": "continual", "config": to_value(&cfg), "summary": to_value(&summary) }),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    /// A broadcast bundle or a classifier checkpoint.
    pub model: PathBuf,
    pub test: Vec<DatasetSpec>,
    #[serde(default)]
    pub old_classes: Option<usize>,
}

pub fn evaluate_model(opts: &RunOptions) -> Result<()> {
    let cfg: EvaluateConfig = read_config(&opts.config)?;
    let classifier = match load_classifier(&cfg.model) {
        Ok((c, _)) => c,
        Err(Error::Format { .. }) => BroadcastBundle::load(&cfg.model)?.classifier,
        Err(e) => return Err(e),
    };
    let c = classifier.num_classes();
    let test = load_test(&cfg.test, &data_root(), c)?;
    let eval = evaluate(&classifier, &test, cfg.old_classes.unwrap_or(c))?;
    opts.progress(&format!("accuracy {:.4}", eval.accuracy));
    write_evaluation(opts, "confusion", &eval)?;
    write_json(
        &opts.out_path("report.json"),
        &json!({ "kind": "evaluate", "config": to_value(&cfg), "evaluation": to_value(&eval) }),
    )
}

pub fn gradient_check(opts: &RunOptions) -> Result<()> {
    let mut cfg: GradientSuiteConfig = read_config(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let report = gradient_suite(&cfg)?;
    opts.progress(&format!(
        "{} nets, max relative error {:.3e}",
        report.trials.len(),
        report.max_relative_error
    ));
    let value = json!({ "kind": "gradient-check", "config": to_value(&cfg), "result": to_value(&report) });
    write_json(&opts.out_path("report.json"), &value)?;
    if report.max_relative_error >= cfg.tolerance {
        return Err(Error::NonFinite(format!(
            "gradient mismatch {:.3e} above tolerance {:.1e}",
            report.max_relative_error, cfg.tolerance
        )));
    }
    Ok(())
}

pub fn sweep(opts: &RunOptions) -> Result<()> {
    let mut cfg: SweepConfig = read_config(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(p) = cfg.max_exemplars() {
        match opts.relaxation {
            Some(r) if r.per_class >= p => {}
            _ => {
                return Err(Error::Membrane(format!(
                    "the exemplar baseline transmits up to {p} samples per class; pass --allow-relaxation p={p}"
                )))
            }
        }
    }
    let result = run_sweep(&cfg, &data_root(), |m| opts.progress(m))?;
    let rows = result.rows();
    let summary = summarize(&rows);
    write_rows_csv(&opts.out_path("accuracy.csv"), &rows)?;
    write_summary_csv(&opts.out_path("summary.csv"), &summary)?;
    write_json(
        &opts.out_path("report.json"),
        &json!({
            "kind": "sweep",
            "config": to_value(&cfg),
            "old_classes": result.old_classes,
            "total_classes": result.total_classes,
            "base_accuracy": to_value(&result.base_accuracy),
            "rows": to_value(&rows),
            "summary": to_value(&summary),
            "evaluations": to_value(&result.entries),
        }),
    )
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Run reports or the directories holding them.
    pub runs: Vec<PathBuf>,
}

/// Merges run reports into one table with per-group median and range.
pub fn report(opts: &RunOptions, extra_runs: &[PathBuf]) -> Result<()> {
    let mut cfg: ReportConfig = if opts.config.as_os_str().is_empty() {
        ReportConfig::default()
    } else {
        read_config(&opts.config)?
    };
    cfg.runs.extend(extra_runs.iter().cloned());
    let reports: Vec<RowsReport> = cfg
        .runs
        .iter()
        .map(|p| {
            let path = if p.is_dir() { p.join("report.json") } else { p.clone() };
            read_config::<RowsReport>(&path)
        })
        .collect::<Result<_>>()?;
    let (old, total, rows) = merge_reports(&reports)?;
    let summary = summarize(&rows);
    write_rows_csv(&opts.out_path("merged.csv"), &rows)?;
    write_summary_csv(&opts.out_path("summary.csv"), &summary)?;
    write_json(
        &opts.out_path("report.json"),
        &json!({
            "kind": "report",
            "config": to_value(&cfg),
            "old_classes": old,
            "total_classes": total,
            "rows": to_value(&rows),
            "summary": to_value(&summary),
        }),
    )
}
