//! The `contrario` command-line interface: dataset generation, training,
//! probing, evaluation, run comparison, and plot emission.
//!
//! Each experiment lives in one directory under the artifact root and is
//! guarded by a lock file; stages record completion in the manifest, so
//! re-invoking a finished stage is a no-op without `--force`. Failures exit
//! non-zero (1 user error, 2 internal error) with a machine-readable error
//! record on stderr and in `error.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use contrario_core::histogram::{histogram_report, HistogramReport};
use contrario_core::ndb::ndb_score;
use contrario_core::pairing::PairingKind;

use crate::checkpoint::Snapshot;
use crate::config::{
    ensure_config_snapshot, ExperimentConfig, ExperimentLock, ExperimentManifest, StageStatus,
};
use crate::data::{load_dataset, save_dataset, Condition, Dataset};
use crate::eval::{
    eval_depth_scores, eval_i2l_scores, eval_l2i_scores, image_patches, label_accuracy,
    MetricRecord,
};
use crate::nets::Task;
use crate::nn::Mode;
use crate::plot::{kind_color, render_curves, render_histogram, Series};
use crate::probe::{collect_responses, constant_condition_probe, ConstCondition, ProbeMode};
use crate::rng::stream;
use crate::synth::train_probe_classifier;
use crate::trainer::{
    finetune_optimal_discriminator_from, generate_for, train, Objective, RunArtifacts, TrainConfig,
};
use crate::{Error, Result};

#[derive(Parser)]
#[command(name = "contrario", version, about = "Conditional adversarial training lab")]
struct Cli {
    /// Artifact root directory (overrides CONTRARIO_ARTIFACTS and the config).
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the experiment dataset.
    MakeData {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train a run (objective and seed can override the config).
    Train {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Collect discriminator responses and build the histogram report.
    Probe {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fine-tune the discriminator to optimality before probing.
        #[arg(long)]
        optimal: bool,
        /// Probe with dropout and batch statistics active.
        #[arg(long)]
        train_mode: bool,
        #[arg(long)]
        at_epoch: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Compute configured metrics for a trained run.
    Eval {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ndb: bool,
        #[arg(long)]
        label_acc: bool,
        #[arg(long)]
        force: bool,
    },
    /// Side-by-side report for two runs of the same experiment.
    Compare {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        run_a: String,
        #[arg(long)]
        run_b: String,
        /// First-crossing quality threshold for the time-to-threshold field.
        #[arg(long, default_value_t = 0.5)]
        quality_threshold: f64,
        #[arg(long)]
        force: bool,
    },
    /// Render curve and histogram plots for a run.
    Plot {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
}

pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!(
                "{}",
                serde_json::json!({
                    "error": { "code": code, "kind": error_kind(&e), "message": e.to_string() }
                })
            );
            code
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. }
        | Error::Serde(_)
        | Error::NonFinite { .. }
        | Error::ShapeMismatch { .. }
        | Error::CheckpointFormat(_) => 2,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Core(_) => "core",
        Error::ShapeMismatch { .. } => "shape-mismatch",
        Error::InvalidSpec(_) => "invalid-spec",
        Error::InvalidConfig(_) => "invalid-config",
        Error::Dataset(_) => "dataset",
        Error::NonFinite { .. } => "non-finite",
        Error::MissingCheckpoint { .. } => "missing-checkpoint",
        Error::CheckpointFormat(_) => "checkpoint-format",
        Error::Locked(..) => "locked",
        Error::StageComplete(_) => "stage-complete",
        Error::ClassifierBelowFloor { .. } => "classifier-below-floor",
        Error::Io { .. } => "io",
        Error::Serde(_) => "serde",
    }
}

struct Workspace {
    cfg: ExperimentConfig,
    dir: PathBuf,
    manifest: ExperimentManifest,
    _lock: ExperimentLock,
}

impl Workspace {
    fn open(config_path: &Path, root: Option<&Path>) -> Result<Self> {
        let cfg = ExperimentConfig::load(config_path)?;
        let dir = cfg.experiment_dir(root);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let lock = ExperimentLock::acquire(&dir, &cfg.experiment.id)?;
        ensure_config_snapshot(&dir, &cfg)?;
        let manifest = ExperimentManifest::load_or_new(&dir, &cfg.experiment.id)?;
        Ok(Self { cfg, dir, manifest, _lock: lock })
    }

    /// Run a stage unless it is already complete; failures leave the stage
    /// marked incomplete and an `error.json` behind.
    fn stage(
        &mut self,
        name: &str,
        force: bool,
        f: impl FnOnce(&ExperimentConfig, &Path) -> Result<Vec<String>>,
    ) -> Result<()> {
        if self.manifest.is_complete(name) && !force {
            println!("stage {name}: already complete, skipping (use --force to redo)");
            return Ok(());
        }
        self.manifest.mark(name, StageStatus::Incomplete, Vec::new());
        self.manifest.save(&self.dir)?;
        match f(&self.cfg, &self.dir) {
            Ok(artifacts) => {
                for a in &artifacts {
                    if !self.dir.join(a).exists() {
                        return Err(Error::Dataset(format!(
                            "stage {name} reported missing artifact {a}"
                        )));
                    }
                }
                self.manifest.mark(name, StageStatus::Complete, artifacts);
                self.manifest.save(&self.dir)?;
                println!("stage {name}: complete");
                Ok(())
            }
            Err(e) => {
                self.manifest.save(&self.dir)?;
                let record = serde_json::json!({
                    "stage": name,
                    "error": { "kind": error_kind(&e), "message": e.to_string() }
                });
                let _ = fs::write(self.dir.join("error.json"), record.to_string());
                Err(e)
            }
        }
    }
}

fn parse_objective(s: &str) -> Result<Objective> {
    match s {
        "baseline" => Ok(Objective::Baseline),
        "acontrario-bce" | "a-contrario-bce" => Ok(Objective::AContrarioBce),
        "acontrario-hinge" | "a-contrario-hinge" => Ok(Objective::AContrarioHinge),
        other => Err(Error::InvalidConfig(format!("unknown objective '{other}'"))),
    }
}

fn objective_slug(o: Objective) -> &'static str {
    match o {
        Objective::Baseline => "baseline",
        Objective::AContrarioBce => "acontrario-bce",
        Objective::AContrarioHinge => "acontrario-hinge",
    }
}

fn effective_train(
    cfg: &ExperimentConfig,
    objective: Option<&str>,
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut t = cfg.train.clone();
    if let Some(o) = objective {
        t.objective = parse_objective(o)?;
    }
    if let Some(s) = seed {
        t.seed = s;
    }
    Ok(t)
}

fn run_name(t: &TrainConfig) -> String {
    format!("{}-s{}", objective_slug(t.objective), t.seed)
}

fn load_experiment_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<Dataset> {
    let data_dir = dir.join("data");
    if !data_dir.join("manifest.json").exists() {
        return Err(Error::Dataset(format!(
            "dataset missing at {}; run `contrario make-data` first",
            data_dir.display()
        )));
    }
    let ds = load_dataset(&data_dir)?;
    let _ = cfg;
    Ok(ds)
}

fn fmt_csv_row(fields: &[String]) -> String {
    fields.join(",")
}

fn write_run_files(dir: &Path, name: &str, artifacts: &RunArtifacts) -> Result<Vec<String>> {
    let run_dir = dir.join("runs").join(name);
    let ckpt_dir = run_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;

    let effective = toml::to_string_pretty(&artifacts.config).map_err(|e| Error::Serde(e.to_string()))?;
    let cfg_path = run_dir.join("config.toml");
    fs::write(&cfg_path, effective).map_err(|e| Error::io(&cfg_path, e))?;

    let mut rel_paths = vec![format!("runs/{name}/config.toml")];
    for ck in &artifacts.checkpoints {
        let g = ckpt_dir.join(format!("epoch_{:03}.g.ckpt", ck.epoch));
        let d = ckpt_dir.join(format!("epoch_{:03}.d.ckpt", ck.epoch));
        ck.generator.save(&g)?;
        ck.discriminator.save(&d)?;
        rel_paths.push(format!("runs/{name}/checkpoints/epoch_{:03}.g.ckpt", ck.epoch));
        rel_paths.push(format!("runs/{name}/checkpoints/epoch_{:03}.d.ckpt", ck.epoch));
    }

    let mut curves = String::from(
        "step,epoch,real_conditional,generated_conditional,real_acontrario,generated_acontrario,d_weighted_total,g_adv,g_l1,lr\n",
    );
    for s in &artifacts.steps {
        curves.push_str(&fmt_csv_row(&[
            s.step.to_string(),
            s.epoch.to_string(),
            s.d_per_kind.real_conditional.to_string(),
            s.d_per_kind.generated_conditional.to_string(),
            s.d_per_kind.real_acontrario.to_string(),
            s.d_per_kind.generated_acontrario.to_string(),
            s.d_weighted_total.to_string(),
            s.g_adv.to_string(),
            s.g_l1.to_string(),
            s.lr.to_string(),
        ]));
        curves.push('\n');
    }
    let curves_path = run_dir.join("curves.csv");
    fs::write(&curves_path, curves).map_err(|e| Error::io(&curves_path, e))?;
    rel_paths.push(format!("runs/{name}/curves.csv"));

    let mut grads = String::from("step,g_mean_abs_grad,d_mean_abs_grad\n");
    for g in &artifacts.grads {
        grads.push_str(&fmt_csv_row(&[
            g.step.to_string(),
            g.g_mean_abs_grad.to_string(),
            g.d_mean_abs_grad.to_string(),
        ]));
        grads.push('\n');
    }
    let grads_path = run_dir.join("grads.csv");
    fs::write(&grads_path, grads).map_err(|e| Error::io(&grads_path, e))?;
    rel_paths.push(format!("runs/{name}/grads.csv"));

    let mut lines = String::new();
    for m in &artifacts.metrics {
        let record = MetricRecord {
            run: name.to_string(),
            stage: "train".into(),
            step: Some(m.step),
            name: m.name.clone(),
            value: m.value,
        };
        lines.push_str(&record.to_json_line());
        lines.push('\n');
    }
    let metrics_path = run_dir.join("metrics.jsonl");
    fs::write(&metrics_path, lines).map_err(|e| Error::io(&metrics_path, e))?;
    rel_paths.push(format!("runs/{name}/metrics.jsonl"));
    Ok(rel_paths)
}

fn checkpoint_epochs(run_dir: &Path) -> Result<Vec<usize>> {
    let ckpt_dir = run_dir.join("checkpoints");
    let mut epochs = Vec::new();
    let entries = fs::read_dir(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&ckpt_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("epoch_").and_then(|r| r.strip_suffix(".g.ckpt")) {
            if let Ok(e) = num.parse::<usize>() {
                epochs.push(e);
            }
        }
    }
    epochs.sort_unstable();
    if epochs.is_empty() {
        return Err(Error::MissingCheckpoint { epoch: 0 });
    }
    Ok(epochs)
}

fn load_run_snapshots(run_dir: &Path, epoch: usize) -> Result<(Snapshot, Snapshot)> {
    let g = run_dir.join("checkpoints").join(format!("epoch_{epoch:03}.g.ckpt"));
    let d = run_dir.join("checkpoints").join(format!("epoch_{epoch:03}.d.ckpt"));
    if !g.exists() || !d.exists() {
        return Err(Error::MissingCheckpoint { epoch });
    }
    Ok((Snapshot::load(&g)?, Snapshot::load(&d)?))
}

fn parse_const_probe(s: &str) -> Result<ConstCondition> {
    if s == "empty" {
        return Ok(ConstCondition::Empty);
    }
    if let Some(k) = s.strip_prefix("uniform:") {
        let k: usize = k
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad constant probe '{s}'")))?;
        return Ok(ConstCondition::UniformClass(k));
    }
    Err(Error::InvalidConfig(format!("bad constant probe '{s}' (use 'uniform:<k>' or 'empty')")))
}

fn write_histogram_csv(report: &HistogramReport, path: &Path) -> Result<()> {
    let mut out = String::from("bin_lo,bin_hi");
    for kh in &report.kinds {
        out.push(',');
        out.push_str(kh.kind.label());
    }
    out.push('\n');
    let bins = report.edges.len() - 1;
    for b in 0..bins {
        out.push_str(&format!("{},{}", report.edges[b], report.edges[b + 1]));
        for kh in &report.kinds {
            out.push_str(&format!(",{}", kh.counts[b]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn append_metrics(run_dir: &Path, records: &[MetricRecord]) -> Result<()> {
    use std::io::Write;
    let path = run_dir.join("metrics.jsonl");
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    for r in records {
        writeln!(f, "{}", r.to_json_line()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let root = cli.root.as_deref();
    match cli.cmd {
        Cmd::MakeData { config, force } => {
            let mut ws = Workspace::open(&config, root)?;
            ws.stage("make-data", force, |cfg, dir| {
                let ds = cfg.data.generate()?;
                save_dataset(&ds, &dir.join("data"))?;
                println!(
                    "dataset '{}': {} train / {} val at {}px",
                    cfg.data.generator,
                    ds.train.len(),
                    ds.val.len(),
                    ds.meta.image_size
                );
                Ok(vec!["data/manifest.json".into()])
            })
        }
        Cmd::Train { config, objective, seed, force } => {
            let mut ws = Workspace::open(&config, root)?;
            let tcfg = effective_train(&ws.cfg, objective.as_deref(), seed)?;
            let name = run_name(&tcfg);
            ws.stage(&format!("train:{name}"), force, |cfg, dir| {
                let ds = load_experiment_dataset(cfg, dir)?;
                let artifacts = train(&tcfg, &ds)?;
                let paths = write_run_files(dir, &name, &artifacts)?;
                println!(
                    "run {name}: {} steps, final D loss {:.4}",
                    artifacts.steps.len(),
                    artifacts.steps.last().map_or(f64::NAN, |s| s.d_weighted_total)
                );
                Ok(paths)
            })
        }
        Cmd::Probe { config, objective, seed, optimal, train_mode, at_epoch, force } => {
            let mut ws = Workspace::open(&config, root)?;
            let tcfg = effective_train(&ws.cfg, objective.as_deref(), seed)?;
            let name = run_name(&tcfg);
            ws.stage(&format!("probe:{name}"), force, |cfg, dir| {
                let ds = load_experiment_dataset(cfg, dir)?;
                let run_dir = dir.join("runs").join(&name);
                let epochs = checkpoint_epochs(&run_dir)?;
                let epoch = at_epoch
                    .or(cfg.probe.at_epoch)
                    .unwrap_or(*epochs.last().expect("non-empty"));
                let (g_snap, d_snap) = load_run_snapshots(&run_dir, epoch)?;
                let probe_dir = dir.join("probe").join(&name);
                fs::create_dir_all(&probe_dir).map_err(|e| Error::io(&probe_dir, e))?;

                let use_optimal = optimal || cfg.probe.optimal;
                let mut rel = Vec::new();
                let (d_snap, d_loss_before, d_loss_after) = if use_optimal {
                    let ft = finetune_optimal_discriminator_from(
                        &tcfg,
                        &ds,
                        &g_snap,
                        &d_snap,
                        epoch,
                        cfg.probe.extra_epochs,
                    )?;
                    let p = probe_dir.join("optimal_d.ckpt");
                    ft.discriminator.save(&p)?;
                    rel.push(format!("probe/{name}/optimal_d.ckpt"));
                    (ft.discriminator, Some(ft.d_loss_before), Some(ft.d_loss_after))
                } else {
                    (d_snap, None, None)
                };
                let mut disc = d_snap.discriminator()?;
                let mut gen = g_snap.generator()?;
                let mode = if train_mode || cfg.probe.train_mode {
                    ProbeMode::TrainingBehavior
                } else {
                    ProbeMode::Inference
                };
                let n = cfg.probe.n.min(ds.val.len());
                let mut rng = stream(tcfg.seed, "probe-collect");
                let source = format!("{name}@epoch{epoch}{}", if use_optimal { "+optimal" } else { "" });
                let samples = collect_responses(
                    &mut disc,
                    &mut gen,
                    &ds.val,
                    &PairingKind::ALL,
                    n,
                    &mut rng,
                    mode,
                    &source,
                )?;
                let report = histogram_report(&samples, cfg.probe.bins, cfg.probe.threshold)
                    .map_err(Error::Core)?;
                write_histogram_csv(&report, &probe_dir.join("histogram.csv"))?;
                rel.push(format!("probe/{name}/histogram.csv"));

                let mut constant = BTreeMap::new();
                for spec in &cfg.probe.constant_probes {
                    let cc = parse_const_probe(spec)?;
                    let rate = constant_condition_probe(&mut disc, &ds.val, cc, mode)?;
                    constant.insert(spec.clone(), rate);
                }
                let rates: BTreeMap<&str, f64> = report
                    .kinds
                    .iter()
                    .map(|k| (k.kind.label(), k.stats.rate_true))
                    .collect();
                println!("probe {source}:");
                for (k, v) in &rates {
                    println!("  rate[{k}] = {v:.4}");
                }
                for (k, v) in &constant {
                    println!("  constant[{k}] = {v:.4}");
                }
                let summary = serde_json::json!({
                    "run": name,
                    "source": source,
                    "at_epoch": epoch,
                    "optimal": use_optimal,
                    "train_mode": mode == ProbeMode::TrainingBehavior,
                    "threshold": cfg.probe.threshold,
                    "rates": rates,
                    "constant_probes": constant,
                    "report": report,
                    "d_loss_before": d_loss_before,
                    "d_loss_after": d_loss_after,
                });
                let report_path = probe_dir.join("report.json");
                fs::write(
                    &report_path,
                    serde_json::to_string_pretty(&summary).map_err(|e| Error::Serde(e.to_string()))?,
                )
                .map_err(|e| Error::io(&report_path, e))?;
                rel.push(format!("probe/{name}/report.json"));
                Ok(rel)
            })
        }
        Cmd::Eval { config, objective, seed, ndb, label_acc, force } => {
            let mut ws = Workspace::open(&config, root)?;
            let tcfg = effective_train(&ws.cfg, objective.as_deref(), seed)?;
            let name = run_name(&tcfg);
            ws.stage(&format!("eval:{name}"), force, |cfg, dir| {
                let ds = load_experiment_dataset(cfg, dir)?;
                let run_dir = dir.join("runs").join(&name);
                let epochs = checkpoint_epochs(&run_dir)?;
                let (g_snap, _) = load_run_snapshots(&run_dir, *epochs.last().unwrap())?;
                let mut gen = g_snap.generator()?;
                let eval_dir = dir.join("eval").join(&name);
                fs::create_dir_all(&eval_dir).map_err(|e| Error::io(&eval_dir, e))?;
                let mut rel = Vec::new();
                let mut records = Vec::new();
                let mk = |metric: &str, value: f64| MetricRecord {
                    run: name.clone(),
                    stage: "eval".into(),
                    step: None,
                    name: metric.into(),
                    value,
                };

                if cfg.eval.quality {
                    match ds.meta.task {
                        Task::Label2Image { n_classes } => {
                            let s = eval_l2i_scores(&mut gen, &ds.val, &ds.meta.palette, n_classes, 16)?;
                            records.push(mk("miou", s.mean_iou));
                            records.push(mk("pixel_accuracy", s.pixel_accuracy));
                            records.push(mk("mean_accuracy", s.mean_accuracy));
                            records.push(mk("freq_weighted_accuracy", s.freq_weighted_accuracy));
                        }
                        Task::Image2Depth => {
                            let s = eval_depth_scores(&mut gen, &ds.val, 16)?;
                            records.push(mk("rmse_log", s.rmse_log));
                            records.push(mk("silog", s.silog));
                            records.push(mk("log10", s.log10));
                            records.push(mk("abs_rel", s.abs_rel));
                        }
                        Task::Image2Label { n_classes } => {
                            let s = eval_i2l_scores(&mut gen, &ds.val, n_classes, 16)?;
                            records.push(mk("miou", s.mean_iou));
                            records.push(mk("pixel_accuracy", s.pixel_accuracy));
                        }
                        Task::SingleLabel2Image { .. } => {}
                    }
                }
                if label_acc || cfg.eval.label_acc {
                    if !matches!(ds.meta.task, Task::SingleLabel2Image { .. }) {
                        return Err(Error::InvalidConfig(
                            "label accuracy needs the single-label task".into(),
                        ));
                    }
                    let (mut cls, real_acc) = train_probe_classifier(&ds, 0.95, cfg.eval.seed)?;
                    let intended: Vec<usize> = ds
                        .val
                        .iter()
                        .map(|s| match s.condition {
                            Condition::Class { id, .. } => id as usize,
                            _ => unreachable!("single-label conditions"),
                        })
                        .collect();
                    let mut gen_rng = stream(cfg.eval.seed, "eval-label-acc");
                    let images =
                        generate_for(&mut gen, &ds.val, 16, Mode::TrainFrozen, &mut gen_rng)?;
                    let stacked = crate::data::stack3(&images);
                    let acc = label_accuracy(&mut cls, &stacked, &intended)?;
                    records.push(mk("label_accuracy", acc));
                    records.push(mk("classifier_real_accuracy", real_acc));
                }
                if ndb || cfg.eval.ndb {
                    let n = cfg.eval.ndb_samples.min(ds.val.len());
                    let subset = &ds.val[..n];
                    let mut gen_rng = stream(cfg.eval.seed, "eval-ndb");
                    let generated =
                        generate_for(&mut gen, subset, 16, Mode::Eval, &mut gen_rng)?;
                    let real: Vec<_> = subset.iter().map(|s| s.target.clone()).collect();
                    let real_feats = image_patches(&real, cfg.eval.ndb_patch);
                    let gen_feats = image_patches(&generated, cfg.eval.ndb_patch);
                    let mut krng = stream(cfg.eval.seed, "ndb-kmeans");
                    let report = ndb_score(
                        &real_feats,
                        &gen_feats,
                        cfg.eval.ndb_k,
                        cfg.eval.ndb_alpha,
                        &mut krng,
                    )
                    .map_err(Error::Core)?;
                    let ndb_path = eval_dir.join("ndb.json");
                    fs::write(
                        &ndb_path,
                        serde_json::to_string_pretty(&report)
                            .map_err(|e| Error::Serde(e.to_string()))?,
                    )
                    .map_err(|e| Error::io(&ndb_path, e))?;
                    rel.push(format!("eval/{name}/ndb.json"));
                    records.push(mk("ndb", report.ndb as f64));
                    records.push(mk("ndb_over_k", report.ndb_over_k));
                }
                append_metrics(&run_dir, &records)?;
                let quality_path = eval_dir.join("metrics.json");
                fs::write(
                    &quality_path,
                    serde_json::to_string_pretty(&records).map_err(|e| Error::Serde(e.to_string()))?,
                )
                .map_err(|e| Error::io(&quality_path, e))?;
                rel.push(format!("eval/{name}/metrics.json"));
                for r in &records {
                    println!("  {} = {}", r.name, r.value);
                }
                Ok(rel)
            })
        }
        Cmd::Compare { config, run_a, run_b, quality_threshold, force } => {
            let mut ws = Workspace::open(&config, root)?;
            let stage_name = format!("compare:{run_a}:{run_b}");
            ws.stage(&stage_name, force, |_cfg, dir| {
                let summary = compare_runs(dir, &run_a, &run_b, quality_threshold)?;
                let out_dir = dir.join("compare");
                fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
                let out = out_dir.join(format!("{run_a}__vs__{run_b}.json"));
                fs::write(
                    &out,
                    serde_json::to_string_pretty(&summary).map_err(|e| Error::Serde(e.to_string()))?,
                )
                .map_err(|e| Error::io(&out, e))?;
                println!("{summary:#}");
                Ok(vec![format!("compare/{run_a}__vs__{run_b}.json")])
            })
        }
        Cmd::Plot { config, objective, seed, force } => {
            let mut ws = Workspace::open(&config, root)?;
            let tcfg = effective_train(&ws.cfg, objective.as_deref(), seed)?;
            let name = run_name(&tcfg);
            ws.stage(&format!("plot:{name}"), force, |cfg, dir| {
                let run_dir = dir.join("runs").join(&name);
                let plots_dir = dir.join("plots").join(&name);
                fs::create_dir_all(&plots_dir).map_err(|e| Error::io(&plots_dir, e))?;
                let mut rel = Vec::new();

                let curves = read_curves_csv(&run_dir.join("curves.csv"))?;
                let mut series = Vec::new();
                for (i, kind) in PairingKind::ALL.iter().enumerate() {
                    series.push(Series {
                        name: kind.label().into(),
                        color: kind_color(*kind),
                        points: curves.iter().map(|row| (row[0], row[2 + i])).collect(),
                    });
                }
                render_curves(&series, &plots_dir.join("d_losses.png"))?;
                rel.push(format!("plots/{name}/d_losses.png"));

                let metric_points = read_metric_lines(&run_dir.join("metrics.jsonl"))?;
                if !metric_points.is_empty() {
                    let series = vec![Series {
                        name: metric_points[0].0.clone(),
                        color: [20, 20, 20],
                        points: metric_points.iter().map(|(_, s, v)| (*s, *v)).collect(),
                    }];
                    render_curves(&series, &plots_dir.join("metric.png"))?;
                    rel.push(format!("plots/{name}/metric.png"));
                }

                let hist_csv = dir.join("probe").join(&name).join("histogram.csv");
                if hist_csv.exists() {
                    let report_json = dir.join("probe").join(&name).join("report.json");
                    let text = fs::read_to_string(&report_json)
                        .map_err(|e| Error::io(&report_json, e))?;
                    let value: serde_json::Value =
                        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
                    let report: HistogramReport =
                        serde_json::from_value(value["report"].clone())
                            .map_err(|e| Error::Serde(e.to_string()))?;
                    render_histogram(&report, &plots_dir.join("histogram.png"))?;
                    rel.push(format!("plots/{name}/histogram.png"));
                }
                let _ = cfg;
                Ok(rel)
            })
        }
    }
}

fn read_curves_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| Error::Serde(format!("bad csv value: {e}"))))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!("{} has no data rows", path.display())));
    }
    Ok(rows)
}

fn read_metric_lines(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let r: MetricRecord = serde_json::from_str(line).map_err(|e| Error::Serde(e.to_string()))?;
        if r.stage == "train" {
            out.push((r.name, r.step.unwrap_or(0) as f64, r.value));
        }
    }
    Ok(out)
}

fn compare_runs(
    dir: &Path,
    run_a: &str,
    run_b: &str,
    quality_threshold: f64,
) -> Result<serde_json::Value> {
    let mut out = serde_json::Map::new();
    out.insert("runs".into(), serde_json::json!([run_a, run_b]));
    out.insert("quality_threshold".into(), serde_json::json!(quality_threshold));
    for name in [run_a, run_b] {
        let run_dir = dir.join("runs").join(name);
        if !run_dir.exists() {
            return Err(Error::Dataset(format!("run '{name}' not found under {}", dir.display())));
        }
        let mut entry = serde_json::Map::new();
        let curves = read_curves_csv(&run_dir.join("curves.csv"))?;
        let tail = (curves.len() / 10).max(1);
        let tail_mean = |col: usize| -> f64 {
            curves[curves.len() - tail..].iter().map(|r| r[col]).sum::<f64>() / tail as f64
        };
        entry.insert(
            "ac_loss_tail".into(),
            serde_json::json!({
                "real_acontrario": tail_mean(4),
                "generated_acontrario": tail_mean(5),
            }),
        );
        let metrics = read_metric_lines(&run_dir.join("metrics.jsonl"))?;
        if let Some((name_m, _, last)) = metrics.last() {
            entry.insert("final_quality".into(), serde_json::json!({ name_m: last }));
        }
        let crossing = metrics
            .iter()
            .find(|(_, _, v)| *v >= quality_threshold)
            .map(|(_, s, _)| *s);
        entry.insert("steps_to_quality_threshold".into(), serde_json::json!(crossing));
        let probe_report = dir.join("probe").join(name).join("report.json");
        if probe_report.exists() {
            let text = fs::read_to_string(&probe_report).map_err(|e| Error::io(&probe_report, e))?;
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
            entry.insert("rates".into(), v["rates"].clone());
            entry.insert("constant_probes".into(), v["constant_probes"].clone());
        }
        out.insert(name.to_string(), serde_json::Value::Object(entry));
    }
    // Headline gap: how often each run's discriminator accepts mismatched
    // real pairs.
    let rate = |run: &str| -> Option<f64> {
        out.get(run)?.get("rates")?.get("real_acontrario")?.as_f64()
    };
    if let (Some(a), Some(b)) = (rate(run_a), rate(run_b)) {
        out.insert(
            "real_acontrario_rate_gap".into(),
            serde_json::json!({ run_a: a, run_b: b, "gap": a - b }),
        );
    }
    Ok(serde_json::Value::Object(out))
}
