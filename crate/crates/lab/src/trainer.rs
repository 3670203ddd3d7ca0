//! Seeded alternating-step adversarial training with full-run monitoring.
//!
//! One step processes one batch: the generator runs forward once, the four
//! data pairings are assembled with a shared derangement, the discriminator
//! takes its step on the weighted loss (kinds with zero weight are evaluated
//! for monitoring but never backpropagated), then the generator takes its
//! step on the conditional adversarial term plus the auxiliary L1.
//!
//! Everything is driven by named RNG streams derived from the config seed,
//! so runs are bitwise reproducible, and a zero-weighted term leaves the
//! computation identical to a run that never had it.

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use contrario_core::loss::{
    d_loss_scores, g_loss_scores, l1_with_grad, AdversarialFamily, LossWeights,
};
use contrario_core::pairing::{derange_indices, PairingKind, PerKind};

use crate::checkpoint::{ArchDesc, Snapshot};
use crate::data::{gather_batch, stack3, Condition, Dataset, Sample};
use crate::eval::{eval_depth_rmse_log, eval_i2l_scores, eval_l2i_miou};
use crate::nets::{
    build_discriminator, build_generator, patch_discriminator_spec, Fusion, PatchDiscriminator,
    Task, UnetGenerator,
};
use crate::nn::adam::lr_decay_factor;
use crate::nn::{Adam, FwdCtx, Mode, Module};
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Baseline,
    AContrarioBce,
    AContrarioHinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Term weights and generator mode; ignored for `Baseline`, which always
    /// trains on `(1, 1, 0, 0)`.
    pub weights: LossWeights,
    pub aux_l1_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Epoch at which the linear decay to zero begins; equal to `epochs`
    /// disables decay.
    pub decay_start_epoch: usize,
    pub seed: u64,
    pub jitter: bool,
    pub jitter_pad: usize,
    pub ngf: usize,
    pub ndf: usize,
    /// Validation-metric cadence in steps; 0 disables.
    pub eval_every_steps: usize,
    pub eval_samples: usize,
    /// Gradient-norm monitoring cadence in steps.
    pub grad_log_every: usize,
    pub checkpoint_every: usize,
    pub d_steps_per_g: usize,
    /// Keep conditions disjoint between the real-conditional and
    /// generated-conditional sub-batches (split-halves variant).
    pub disjoint_conditional_halves: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Baseline,
            weights: LossWeights::equal(),
            aux_l1_weight: 10.0,
            epochs: 8,
            batch_size: 16,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            decay_start_epoch: 8,
            seed: 0,
            jitter: false,
            jitter_pad: 8,
            ngf: 8,
            ndf: 8,
            eval_every_steps: 0,
            eval_samples: 64,
            grad_log_every: 100,
            checkpoint_every: 1,
            d_steps_per_g: 1,
            disjoint_conditional_halves: false,
        }
    }
}

impl TrainConfig {
    pub fn new(objective: Objective, seed: u64) -> Self {
        Self { objective, seed, ..Self::default() }
    }

    pub fn family(&self) -> AdversarialFamily {
        match self.objective {
            Objective::AContrarioHinge => AdversarialFamily::Hinge,
            _ => AdversarialFamily::Bce,
        }
    }

    /// The weights actually trained with.
    pub fn effective_weights(&self) -> LossWeights {
        match self.objective {
            Objective::Baseline => LossWeights::baseline().with_g_mode(self.weights.g_mode),
            _ => self.weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if self.decay_start_epoch > self.epochs {
            return Err(Error::InvalidConfig("decay_start_epoch must be <= epochs".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch_size must be at least 2 (a-contrario pairing needs a derangement)".into(),
            ));
        }
        if self.disjoint_conditional_halves && self.batch_size < 4 {
            return Err(Error::InvalidConfig("split-halves mode needs batch_size >= 4".into()));
        }
        if self.d_steps_per_g == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("cadence values must be positive".into()));
        }
        if !(self.aux_l1_weight >= 0.0 && self.aux_l1_weight.is_finite()) {
            return Err(Error::InvalidConfig("aux_l1_weight must be non-negative".into()));
        }
        self.effective_weights().validate().map_err(Error::Core)?;
        Ok(())
    }
}

/// Per-step loss log. Per-kind values are the unweighted monitored losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub d_per_kind: PerKind<f64>,
    pub d_weighted_total: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradRecord {
    pub step: u64,
    pub g_mean_abs_grad: f64,
    pub d_mean_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub step: u64,
    pub epoch: usize,
    pub name: String,
    pub value: f64,
}

pub struct EpochCheckpoint {
    pub epoch: usize,
    pub generator: Snapshot,
    pub discriminator: Snapshot,
}

pub struct RunArtifacts {
    pub config: TrainConfig,
    pub steps: Vec<StepRecord>,
    pub grads: Vec<GradRecord>,
    pub metrics: Vec<MetricPoint>,
    pub checkpoints: Vec<EpochCheckpoint>,
}

impl RunArtifacts {
    pub fn checkpoint_at(&self, epoch: usize) -> Result<&EpochCheckpoint> {
        self.checkpoints
            .iter()
            .find(|c| c.epoch == epoch)
            .ok_or(Error::MissingCheckpoint { epoch })
    }

    pub fn last_epoch(&self) -> usize {
        self.config.epochs - 1
    }

    /// Monitored loss curve for one pairing kind, step-ordered.
    pub fn kind_curve(&self, kind: PairingKind) -> Vec<f64> {
        self.steps.iter().map(|s| *s.d_per_kind.get(kind)).collect()
    }

    /// First step at which the named metric reaches `threshold` (at or above).
    pub fn first_metric_step(&self, name: &str, threshold: f64) -> Option<u64> {
        self.metrics.iter().find(|m| m.name == name && m.value >= threshold).map(|m| m.step)
    }
}

/// Mean of the trailing `frac` of a curve (at least one element).
pub fn tail_mean(curve: &[f64], frac: f64) -> f64 {
    assert!(!curve.is_empty());
    let n = ((curve.len() as f64 * frac).ceil() as usize).clamp(1, curve.len());
    curve[curve.len() - n..].iter().sum::<f64>() / n as f64
}

fn generator_arch(cfg: &TrainConfig, task: Task, size: usize) -> ArchDesc {
    ArchDesc::Generator { task, size, ngf: cfg.ngf }
}

fn discriminator_arch(cfg: &TrainConfig, task: Task) -> ArchDesc {
    ArchDesc::Discriminator {
        cond_channels: task.cond_channels(),
        target_channels: task.target_channels(),
        spec: patch_discriminator_spec(cfg.ndf),
        fusion: Fusion::EarlyConcat,
    }
}

/// Wrap non-finite score errors from the loss layer with step context; a
/// NaN anywhere in the forward pass surfaces here first.
fn loss_err(step: u64, epoch: usize, what: &str, e: contrario_core::Error) -> Error {
    match e {
        contrario_core::Error::NonFinite(_) => Error::NonFinite {
            step,
            epoch,
            diagnostics: format!("{what}: {e}"),
        },
        other => Error::Core(other),
    }
}

/// Build fresh seeded networks and train on the dataset's train split.
pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<RunArtifacts> {
    cfg.validate()?;
    let task = ds.meta.task;
    let g = build_generator(task, ds.meta.image_size, cfg.ngf, &mut stream(cfg.seed, "init-g"))?;
    let d = build_discriminator(
        task.cond_channels(),
        task.target_channels(),
        &patch_discriminator_spec(cfg.ndf),
        Fusion::EarlyConcat,
        &mut stream(cfg.seed, "init-d"),
    )?;
    train_from(cfg, ds, g, d)
}

fn flat_f64(t: &Array4<f32>) -> Vec<f64> {
    t.iter().map(|&v| f64::from(v)).collect()
}

fn grad_to_array(grad: &[f64], like: &Array4<f32>) -> Array4<f32> {
    let data: Vec<f32> = grad.iter().map(|&v| v as f32).collect();
    Array4::from_shape_vec(like.raw_dim(), data).expect("gradient shape")
}

fn permute_batch(x: &Array4<f32>, perm: &[usize]) -> Array4<f32> {
    let views: Vec<_> = perm.iter().map(|&j| x.index_axis(Axis(0), j).insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("permuted batch")
}

fn half_slices(x: &Array4<f32>, first: bool) -> Array4<f32> {
    let n = x.shape()[0];
    let range = if first { 0..n / 2 } else { n / 2..n };
    x.slice_axis(Axis(0), ndarray::Slice::from(range)).to_owned()
}

struct EvalHook<'a> {
    task: Task,
    samples: &'a [Sample],
    palette: &'a [[f32; 3]],
    n_classes: usize,
}

impl EvalHook<'_> {
    fn run(&self, g: &mut UnetGenerator) -> Result<Option<(String, f64)>> {
        if self.samples.is_empty() {
            return Ok(None);
        }
        Ok(match self.task {
            Task::Label2Image { .. } => Some((
                "miou".into(),
                eval_l2i_miou(g, self.samples, self.palette, self.n_classes, 16)?,
            )),
            Task::Image2Depth => {
                Some(("rmse_log".into(), eval_depth_rmse_log(g, self.samples, 16)?))
            }
            Task::Image2Label { n_classes } => Some((
                "miou".into(),
                eval_i2l_scores(g, self.samples, n_classes, 16)?.mean_iou,
            )),
            Task::SingleLabel2Image { .. } => None,
        })
    }
}

/// Train provided networks in place (entry point shared by `train`, the
/// optimal-discriminator fine-tune, and tests that need to poison weights).
pub fn train_from(
    cfg: &TrainConfig,
    ds: &Dataset,
    mut gen: UnetGenerator,
    mut disc: PatchDiscriminator,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(Error::Dataset("empty train split".into()));
    }
    if ds.train.len() < cfg.batch_size {
        return Err(Error::Dataset("train split smaller than one batch".into()));
    }
    let task = ds.meta.task;
    let weights = cfg.effective_weights();
    let family = cfg.family();

    let mut shuffle_rng = stream(cfg.seed, "shuffle");
    let mut derange_rng = stream(cfg.seed, "derange");
    let mut g_rng = stream(cfg.seed, "g-stochastic");
    let mut jitter_rng = stream(cfg.seed, "jitter");

    let mut adam_g = Adam::new(cfg.beta1, cfg.beta2);
    let mut adam_d = Adam::new(cfg.beta1, cfg.beta2);

    let eval_hook = EvalHook {
        task,
        samples: &ds.val[..cfg.eval_samples.min(ds.val.len())],
        palette: &ds.meta.palette,
        n_classes: ds.meta.n_classes,
    };

    let mut steps = Vec::new();
    let mut grads = Vec::new();
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * lr_decay_factor(epoch, cfg.epochs, cfg.decay_start_epoch);
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks_exact(cfg.batch_size) {
            step += 1;
            let (x, y) = if cfg.jitter {
                let jittered: Vec<Sample> = chunk
                    .iter()
                    .map(|&i| {
                        jitter_augment(
                            &ds.train[i],
                            &mut jitter_rng,
                            ds.meta.image_size,
                            cfg.jitter_pad,
                        )
                    })
                    .collect::<Result<_>>()?;
                let idx: Vec<usize> = (0..jittered.len()).collect();
                gather_batch(&jittered, &idx)
            } else {
                gather_batch(&ds.train, chunk)
            };

            // Generator forward (training behaviour: dropout active).
            let (y_g, g_caches) = gen.forward(&x, &mut FwdCtx::train(&mut g_rng))?;

            // One shared derangement per batch for both a-contrario kinds.
            let perm = derange_indices(cfg.batch_size, &mut derange_rng).map_err(Error::Core)?;
            let x_tilde = permute_batch(&x, &perm);

            // Discriminator step(s): forward all four pairings, losses and
            // monitored values from the core, backward only weighted terms.
            let mut d_per_kind = PerKind::<f64>::default();
            let mut d_weighted_total = 0.0;
            let mut d_grad_norm = None;
            for _ in 0..cfg.d_steps_per_g {
                disc.zero_grads();
                let mut responses = Vec::with_capacity(4);
                for kind in PairingKind::ALL {
                    let (cond, target): (&Array4<f32>, &Array4<f32>) = match kind {
                        PairingKind::RealConditional => (&x, &y),
                        PairingKind::GeneratedConditional => (&x, &y_g),
                        PairingKind::RealAContrario => (&x_tilde, &y),
                        PairingKind::GeneratedAContrario => (&x_tilde, &y_g),
                    };
                    let (cond, target) = if cfg.disjoint_conditional_halves {
                        match kind {
                            PairingKind::RealConditional => {
                                (half_slices(cond, true), half_slices(target, true))
                            }
                            PairingKind::GeneratedConditional => {
                                (half_slices(cond, false), half_slices(target, false))
                            }
                            _ => (cond.clone(), target.clone()),
                        }
                    } else {
                        (cond.clone(), target.clone())
                    };
                    let mut ctx = FwdCtx { mode: Mode::Train, rng: None };
                    let (resp, caches) = disc.forward(&cond, &target, &mut ctx)?;
                    responses.push((kind, resp, caches));
                }
                let flats: Vec<Vec<f64>> =
                    responses.iter().map(|(_, resp, _)| resp.flat_f64()).collect();
                let scores = PerKind {
                    real_conditional: flats[0].as_slice(),
                    generated_conditional: flats[1].as_slice(),
                    real_acontrario: flats[2].as_slice(),
                    generated_acontrario: flats[3].as_slice(),
                };
                let breakdown = d_loss_scores(family, &scores, &weights)
                    .map_err(|e| loss_err(step, epoch, "discriminator scores", e))?;
                for (kind, resp, caches) in &responses {
                    if weights.lambda(*kind) > 0.0 {
                        let grad = grad_to_array(breakdown.grads.get(*kind), &resp.raw);
                        disc.backward(caches, &grad, false)?;
                    }
                }
                d_per_kind = breakdown.per_kind;
                d_weighted_total = breakdown.weighted_total;
                if cfg.grad_log_every > 0 && step % cfg.grad_log_every as u64 == 0 {
                    d_grad_norm = Some(disc.mean_abs_grad());
                }
                adam_d.step(&mut disc, lr);
            }

            // Generator step: conditional adversarial term through the
            // updated discriminator, plus the auxiliary L1.
            disc.zero_grads();
            let mut ctx = FwdCtx { mode: Mode::Train, rng: None };
            let (resp_g, d_caches_g) = disc.forward(&x, &y_g, &mut ctx)?;
            let g_vg = g_loss_scores(family, &resp_g.flat_f64(), weights.g_mode)
                .map_err(|e| loss_err(step, epoch, "generator scores", e))?;
            let dscore = grad_to_array(&g_vg.grad, &resp_g.raw);
            let mut dy_g = disc
                .backward(&d_caches_g, &dscore, true)?
                .expect("target gradient requested");
            disc.zero_grads();
            let l1 = l1_with_grad(&flat_f64(&y_g), &flat_f64(&y), cfg.aux_l1_weight)
                .map_err(|e| loss_err(step, epoch, "l1 inputs", e))?;
            dy_g += &grad_to_array(&l1.grad, &y_g);
            gen.zero_grads();
            gen.backward(&g_caches, &dy_g)?;
            if let Some(d_norm) = d_grad_norm {
                grads.push(GradRecord {
                    step,
                    g_mean_abs_grad: gen.mean_abs_grad(),
                    d_mean_abs_grad: d_norm,
                });
            }
            adam_g.step(&mut gen, lr);

            let record = StepRecord {
                step,
                epoch,
                d_per_kind,
                d_weighted_total,
                g_adv: g_vg.value,
                g_l1: l1.value,
                lr,
            };
            let finite = [record.d_weighted_total, record.g_adv, record.g_l1]
                .iter()
                .all(|v| v.is_finite())
                && PairingKind::ALL.iter().all(|&k| record.d_per_kind.get(k).is_finite());
            if !finite {
                return Err(Error::NonFinite {
                    step,
                    epoch,
                    diagnostics: format!(
                        "d={:?} g_adv={} l1={} (weights {:?})",
                        record.d_per_kind, record.g_adv, record.g_l1, weights.lambdas
                    ),
                });
            }
            steps.push(record);

            if cfg.eval_every_steps > 0 && step % cfg.eval_every_steps as u64 == 0 {
                if let Some((name, value)) = eval_hook.run(&mut gen)? {
                    metrics.push(MetricPoint { step, epoch, name, value });
                }
            }
        }
        if (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs {
            checkpoints.push(EpochCheckpoint {
                epoch,
                generator: Snapshot::capture(
                    generator_arch(cfg, task, ds.meta.image_size),
                    &mut gen,
                ),
                discriminator: Snapshot::capture(discriminator_arch(cfg, task), &mut disc),
            });
        }
    }
    Ok(RunArtifacts { config: cfg.clone(), steps, grads, metrics, checkpoints })
}

pub struct FinetuneResult {
    pub generator: Snapshot,
    pub discriminator: Snapshot,
    pub d_loss_curve: Vec<f64>,
    pub d_loss_before: f64,
    pub d_loss_after: f64,
}

/// Freeze the generator at a checkpoint and train the discriminator alone on
/// its own objective for `extra_epochs` (one epoch is the default protocol),
/// returning the converged discriminator snapshot. The generator weights are
/// untouched (same digest before and after).
pub fn finetune_optimal_discriminator(
    cfg: &TrainConfig,
    ds: &Dataset,
    run: &RunArtifacts,
    at_epoch: usize,
    extra_epochs: usize,
) -> Result<FinetuneResult> {
    let ck = run.checkpoint_at(at_epoch)?;
    finetune_optimal_discriminator_from(cfg, ds, &ck.generator, &ck.discriminator, at_epoch, extra_epochs)
}

/// Snapshot-level variant used when checkpoints come from files rather than
/// an in-memory run.
pub fn finetune_optimal_discriminator_from(
    cfg: &TrainConfig,
    ds: &Dataset,
    g_snap: &Snapshot,
    d_snap: &Snapshot,
    at_epoch: usize,
    extra_epochs: usize,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    let mut gen = g_snap.generator()?;
    let mut disc = d_snap.discriminator()?;
    let g_digest_before = g_snap.digest();
    let weights = cfg.effective_weights();
    let family = cfg.family();
    let label = format!("finetune/{at_epoch}");
    let mut adam_d = Adam::new(cfg.beta1, cfg.beta2);

    let pass = |gen: &mut UnetGenerator,
                    disc: &mut PatchDiscriminator,
                    adam: Option<&mut Adam>,
                    shuffle: bool,
                    stream_label: &str|
     -> Result<Vec<f64>> {
        let mut shuffle_rng = stream(cfg.seed, &format!("{label}/{stream_label}/shuffle"));
        let mut derange_rng = stream(cfg.seed, &format!("{label}/{stream_label}/derange"));
        let mut g_rng = stream(cfg.seed, &format!("{label}/{stream_label}/g"));
        let mut losses = Vec::new();
        let mut adam = adam;
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        if shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        for chunk in order.chunks_exact(cfg.batch_size) {
            let (x, y) = gather_batch(&ds.train, chunk);
            let (y_g, _) = gen.forward(&x, &mut FwdCtx::with_mode(Mode::TrainFrozen, &mut g_rng))?;
            let perm = derange_indices(cfg.batch_size, &mut derange_rng).map_err(Error::Core)?;
            let x_tilde = permute_batch(&x, &perm);
            let updating = adam.is_some();
            disc.zero_grads();
            let mut responses = Vec::with_capacity(4);
            for kind in PairingKind::ALL {
                let (cond, target): (&Array4<f32>, &Array4<f32>) = match kind {
                    PairingKind::RealConditional => (&x, &y),
                    PairingKind::GeneratedConditional => (&x, &y_g),
                    PairingKind::RealAContrario => (&x_tilde, &y),
                    PairingKind::GeneratedAContrario => (&x_tilde, &y_g),
                };
                let mode = if updating { Mode::Train } else { Mode::TrainFrozen };
                let mut ctx = FwdCtx { mode, rng: None };
                let (resp, caches) = disc.forward(cond, target, &mut ctx)?;
                responses.push((kind, resp, caches));
            }
            let flats: Vec<Vec<f64>> =
                responses.iter().map(|(_, resp, _)| resp.flat_f64()).collect();
            let scores = PerKind {
                real_conditional: flats[0].as_slice(),
                generated_conditional: flats[1].as_slice(),
                real_acontrario: flats[2].as_slice(),
                generated_acontrario: flats[3].as_slice(),
            };
            let breakdown = d_loss_scores(family, &scores, &weights).map_err(Error::Core)?;
            losses.push(breakdown.weighted_total);
            if let Some(adam) = adam.as_deref_mut() {
                for (kind, resp, caches) in &responses {
                    if weights.lambda(*kind) > 0.0 {
                        let grad = grad_to_array(breakdown.grads.get(*kind), &resp.raw);
                        disc.backward(caches, &grad, false)?;
                    }
                }
                adam.step(disc, cfg.lr);
            }
        }
        Ok(losses)
    };

    let before = pass(&mut gen, &mut disc, None, false, "eval-before")?;
    let mut curve = Vec::new();
    for e in 0..extra_epochs {
        curve.extend(pass(&mut gen, &mut disc, Some(&mut adam_d), true, &format!("train{e}"))?);
    }
    let after = pass(&mut gen, &mut disc, None, false, "eval-after")?;

    let g_snapshot = Snapshot::capture(g_snap.arch.clone(), &mut gen);
    debug_assert_eq!(g_snapshot.digest(), g_digest_before, "generator must stay frozen");
    Ok(FinetuneResult {
        generator: g_snapshot,
        discriminator: Snapshot::capture(d_snap.arch.clone(), &mut disc),
        d_loss_curve: curve,
        d_loss_before: before.iter().sum::<f64>() / before.len().max(1) as f64,
        d_loss_after: after.iter().sum::<f64>() / after.len().max(1) as f64,
    })
}

// --- jitter augmentation -----------------------------------------------------

fn upscale_nearest_u8(map: &ndarray::Array2<u8>, new: usize) -> ndarray::Array2<u8> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    ndarray::Array2::from_shape_fn((new, new), |(y, x)| map[[y * h / new, x * w / new]])
}

fn upscale_nearest_f32(t: &ndarray::Array3<f32>, new: usize) -> ndarray::Array3<f32> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    ndarray::Array3::from_shape_fn((c, new, new), |(ch, y, x)| t[[ch, y * h / new, x * w / new]])
}

fn crop_u8(map: &ndarray::Array2<u8>, oy: usize, ox: usize, size: usize) -> ndarray::Array2<u8> {
    ndarray::Array2::from_shape_fn((size, size), |(y, x)| map[[y + oy, x + ox]])
}

fn crop_f32(t: &ndarray::Array3<f32>, oy: usize, ox: usize, size: usize) -> ndarray::Array3<f32> {
    let c = t.shape()[0];
    ndarray::Array3::from_shape_fn((c, size, size), |(ch, y, x)| t[[ch, y + oy, x + ox]])
}

/// Random-jitter augmentation: upscale condition and target to `base + pad`
/// (nearest neighbour) and crop back to `base` with one shared offset, so
/// pixel alignment between the pair is preserved. `pad = 0` is the identity.
pub fn jitter_augment(
    sample: &Sample,
    rng: &mut ChaCha8Rng,
    base: usize,
    pad: usize,
) -> Result<Sample> {
    if pad == 0 {
        return Ok(sample.clone());
    }
    let up = base + pad;
    let oy = rng.gen_range(0..=pad);
    let ox = rng.gen_range(0..=pad);
    let condition = match &sample.condition {
        Condition::LabelMap { n_classes, map } => Condition::LabelMap {
            n_classes: *n_classes,
            map: crop_u8(&upscale_nearest_u8(map, up), oy, ox, base),
        },
        Condition::Spatial(t) => {
            Condition::Spatial(crop_f32(&upscale_nearest_f32(t, up), oy, ox, base))
        }
        c @ Condition::Class { .. } => c.clone(),
    };
    let target = crop_f32(&upscale_nearest_f32(&sample.target, up), oy, ox, base);
    Ok(Sample::new(condition, target, sample.sample_id.clone()))
}

/// Generate targets for a slice of samples with a frozen generator.
pub fn generate_for(
    gen: &mut UnetGenerator,
    samples: &[Sample],
    batch: usize,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ndarray::Array3<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in (0..samples.len()).collect::<Vec<_>>().chunks(batch.max(1)) {
        let conds: Vec<ndarray::Array3<f32>> =
            chunk.iter().map(|&i| samples[i].condition.to_tensor()).collect();
        let x = stack3(&conds);
        let mut ctx = FwdCtx { mode, rng: Some(rng) };
        let (y, _) = gen.forward(&x, &mut ctx)?;
        for i in 0..y.shape()[0] {
            out.push(y.index_axis(Axis(0), i).to_owned());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_shapes_l2i, ShapesSceneSpec};

    fn tiny_dataset() -> Dataset {
        let mut spec = ShapesSceneSpec::desk_default(99);
        spec.image_size = 32;
        gen_shapes_l2i(&spec, 32, 8).unwrap()
    }

    fn tiny_config(objective: Objective, seed: u64) -> TrainConfig {
        TrainConfig {
            objective,
            epochs: 1,
            batch_size: 8,
            ngf: 2,
            ndf: 2,
            decay_start_epoch: 1,
            eval_every_steps: 2,
            eval_samples: 4,
            grad_log_every: 2,
            seed,
            ..TrainConfig::default()
        }
    }

    fn records_bits(run: &RunArtifacts) -> Vec<u64> {
        run.steps
            .iter()
            .flat_map(|s| {
                let mut v = vec![
                    s.d_weighted_total.to_bits(),
                    s.g_adv.to_bits(),
                    s.g_l1.to_bits(),
                ];
                for k in PairingKind::ALL {
                    v.push(s.d_per_kind.get(k).to_bits());
                }
                v
            })
            .collect()
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let ds = tiny_dataset();
        let cfg = tiny_config(Objective::AContrarioBce, 5);
        let a = train(&cfg, &ds).unwrap();
        let b = train(&cfg, &ds).unwrap();
        assert_eq!(records_bits(&a), records_bits(&b));
        assert_eq!(
            a.checkpoints.last().unwrap().generator.digest(),
            b.checkpoints.last().unwrap().generator.digest()
        );
        assert_eq!(
            a.checkpoints.last().unwrap().discriminator.digest(),
            b.checkpoints.last().unwrap().discriminator.digest()
        );
        let mut other = cfg;
        other.seed = 6;
        let c = train(&other, &ds).unwrap();
        assert_ne!(records_bits(&a), records_bits(&c));
    }

    #[test]
    fn zero_weighted_acontrario_reproduces_baseline_bit_for_bit() {
        let ds = tiny_dataset();
        let baseline = train(&tiny_config(Objective::Baseline, 7), &ds).unwrap();
        let mut cfg = tiny_config(Objective::AContrarioBce, 7);
        cfg.weights = LossWeights::custom([1.0, 1.0, 0.0, 0.0]).unwrap();
        let reduced = train(&cfg, &ds).unwrap();
        assert_eq!(records_bits(&baseline), records_bits(&reduced));
        assert_eq!(
            baseline.checkpoints.last().unwrap().generator.digest(),
            reduced.checkpoints.last().unwrap().generator.digest()
        );
        assert_eq!(
            baseline.checkpoints.last().unwrap().discriminator.digest(),
            reduced.checkpoints.last().unwrap().discriminator.digest()
        );
    }

    #[test]
    fn hinge_objective_trains_with_finite_losses() {
        let ds = tiny_dataset();
        let run = train(&tiny_config(Objective::AContrarioHinge, 3), &ds).unwrap();
        assert!(!run.steps.is_empty());
        assert!(run.steps.iter().all(|s| s.d_weighted_total.is_finite()));
        assert!(!run.grads.is_empty());
        assert!(run.grads.iter().all(|g| g.g_mean_abs_grad > 0.0 && g.d_mean_abs_grad > 0.0));
    }

    #[test]
    fn split_halves_variant_trains() {
        let ds = tiny_dataset();
        let mut cfg = tiny_config(Objective::AContrarioBce, 4);
        cfg.disjoint_conditional_halves = true;
        let run = train(&cfg, &ds).unwrap();
        assert!(!run.steps.is_empty());
    }

    #[test]
    fn poisoned_weights_abort_with_diagnostics() {
        let ds = tiny_dataset();
        let cfg = tiny_config(Objective::AContrarioBce, 8);
        let task = ds.meta.task;
        let gen = build_generator(task, ds.meta.image_size, cfg.ngf, &mut stream(8, "init-g"))
            .unwrap();
        let mut disc = build_discriminator(
            task.cond_channels(),
            task.target_channels(),
            &patch_discriminator_spec(cfg.ndf),
            Fusion::EarlyConcat,
            &mut stream(8, "init-d"),
        )
        .unwrap();
        disc.visit_params("", &mut |p| {
            if p.name.ends_with("conv.w") {
                p.value[0] = f32::NAN;
            }
        });
        match train_from(&cfg, &ds, gen, disc) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected NonFinite, got {other:?}", other = other.map(|_| ())),
        }
    }

    #[test]
    fn finetune_freezes_generator_and_reduces_d_loss() {
        let ds = tiny_dataset();
        let cfg = tiny_config(Objective::AContrarioBce, 9);
        let run = train(&cfg, &ds).unwrap();
        let at = run.last_epoch();
        let g_before = run.checkpoint_at(at).unwrap().generator.digest();
        let ft = finetune_optimal_discriminator(&cfg, &ds, &run, at, 1).unwrap();
        assert_eq!(ft.generator.digest(), g_before);
        assert_ne!(ft.discriminator.digest(), run.checkpoint_at(at).unwrap().discriminator.digest());
        assert!(
            ft.d_loss_after <= ft.d_loss_before,
            "after {} vs before {}",
            ft.d_loss_after,
            ft.d_loss_before
        );
        assert!(matches!(
            finetune_optimal_discriminator(&cfg, &ds, &run, 77, 1),
            Err(Error::MissingCheckpoint { epoch: 77 })
        ));
    }

    #[test]
    fn jitter_identity_and_alignment() {
        use ndarray::{Array2, Array3};
        let mut map = Array2::zeros((16, 16));
        map[[5, 9]] = 3u8;
        let mut target = Array3::from_elem((3, 16, 16), -1.0f32);
        target[[0, 5, 9]] = 1.0;
        let s = Sample::new(Condition::LabelMap { n_classes: 4, map }, target, "m");
        let mut rng = stream(0, "jitter-test");

        let id = jitter_augment(&s, &mut rng, 16, 0).unwrap();
        assert_eq!(&id.condition, &s.condition);
        assert_eq!(id.target, s.target);

        // Marker-pixel alignment: wherever the marker class ends up, the
        // bright target pixel is at the same coordinates.
        for _ in 0..20 {
            let j = jitter_augment(&s, &mut rng, 16, 4).unwrap();
            let Condition::LabelMap { map, .. } = &j.condition else { unreachable!() };
            let cond_marks: Vec<(usize, usize)> = (0..16)
                .flat_map(|y| (0..16).map(move |x| (y, x)))
                .filter(|&(y, x)| map[[y, x]] == 3)
                .collect();
            let target_marks: Vec<(usize, usize)> = (0..16)
                .flat_map(|y| (0..16).map(move |x| (y, x)))
                .filter(|&(y, x)| j.target[[0, y, x]] > 0.0)
                .collect();
            assert_eq!(cond_marks, target_marks);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.decay_start_epoch = cfg.epochs + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.disjoint_conditional_halves = true;
        cfg.batch_size = 2;
        assert!(cfg.validate().is_err());
    }
}
