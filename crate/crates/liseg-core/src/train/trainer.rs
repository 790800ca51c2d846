//! Dual-network co-training loop: balanced labeled/unlabeled batches,
//! identical augmented inputs to both networks, per-epoch checkpoints,
//! a CSV loss log, and per-epoch validation.
//!
//! Randomness is split into per-purpose streams (network init, labeled and
//! unlabeled sampling, labeled and unlabeled augmentation), re-derived from
//! (seed, epoch) at each epoch start. Stream isolation is what makes a
//! lambda=0 run reproduce the single-network supervised trajectory bitwise,
//! and per-epoch derivation is what lets a resumed run continue the exact
//! uninterrupted trajectory from an epoch-boundary checkpoint.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    mirror_augment, sample_patch, spatial_augment, zscore_normalize, AugmentConfig, Manifest,
    Sample, Split, DEFAULT_FOREGROUND_PROB, PAD_MULTIPLE,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, CaseMetrics, EvalOptions, HdMode};
use crate::net::{
    build_stunet, forward, load_adam, load_network, save_adam, save_network, stage_network,
    ModelScaleConfig, NetworkParams, StagedNet,
};
use crate::rng::{
    case_seed, named_rng, STREAM_AUGMENT_LABELED, STREAM_AUGMENT_UNLABELED, STREAM_INIT_NET1,
    STREAM_INIT_NET2, STREAM_SAMPLE_LABELED, STREAM_SAMPLE_UNLABELED,
};
use crate::tensor::{AdamState, Tape, Tensor, TensorId};

use super::losses::{cps_loss, lambda_schedule, supervised_loss, LossBreakdown};

pub const LOSS_CSV_HEADER: &str = "step,epoch,lambda,l_sup,l_cps_labeled,l_cps_unlabeled,total";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Dual networks, supervised loss only (the co-training weight is 0).
    Supervised,
    /// Full cross pseudo supervision.
    Cps,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(TrainMode::Supervised),
            "cps" => Ok(TrainMode::Cps),
            other => Err(Error::InvalidArgument(format!(
                "unknown training mode {other:?} (expected supervised|cps)"
            ))),
        }
    }
}

/// Rampup length covering the first 20% of a run, rounded up.
pub fn default_rampup(max_epochs: usize) -> usize {
    max_epochs.div_ceil(5)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scale: ModelScaleConfig,
    pub mode: TrainMode,
    pub lr: f64,
    /// Patches per step, split half labeled / half unlabeled.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub steps_per_epoch: usize,
    pub lambda_max: f64,
    pub lambda_rampup_epochs: usize,
    pub patch: [usize; 3],
    pub foreground_prob: f64,
    pub augment: AugmentConfig,
    /// Validate every this many epochs (0 = final epoch only).
    pub val_interval: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(scale: ModelScaleConfig, mode: TrainMode, seed: u64) -> Self {
        let max_epochs = 36;
        TrainConfig {
            scale,
            mode,
            lr: 1e-3,
            batch_size: 4,
            max_epochs,
            steps_per_epoch: 10,
            lambda_max: 1.0,
            lambda_rampup_epochs: default_rampup(max_epochs),
            patch: [32; 3],
            foreground_prob: DEFAULT_FOREGROUND_PROB,
            augment: AugmentConfig::default(),
            val_interval: 1,
            seed,
        }
    }

    /// Labeled patches per step.
    pub fn labeled_per_step(&self) -> usize {
        (self.batch_size / 2).max(1)
    }

    /// Unlabeled patches per step.
    pub fn unlabeled_per_step(&self) -> usize {
        self.batch_size - self.labeled_per_step()
    }

    pub fn lambda_at(&self, epoch: usize) -> f64 {
        match self.mode {
            TrainMode::Supervised => 0.0,
            TrainMode::Cps => lambda_schedule(epoch, self.lambda_max, self.lambda_rampup_epochs),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        self.augment.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, max_epochs, steps_per_epoch must be positive".into(),
            ));
        }
        if !(self.lambda_max.is_finite() && self.lambda_max >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_max {} must be non-negative",
                self.lambda_max
            )));
        }
        if self.patch.iter().any(|&p| p == 0 || p % PAD_MULTIPLE != 0) {
            return Err(Error::InvalidConfig(format!(
                "patch {:?} must be positive multiples of {PAD_MULTIPLE}",
                self.patch
            )));
        }
        if !(0.0..=1.0).contains(&self.foreground_prob) {
            return Err(Error::InvalidConfig(format!(
                "foreground_prob {} outside [0, 1]",
                self.foreground_prob
            )));
        }
        Ok(())
    }
}

/// Per-purpose generator for one epoch: every epoch re-derives its streams
/// from (seed, stream name, epoch).
fn epoch_stream(seed: u64, name: &str, epoch: usize) -> ChaCha8Rng {
    named_rng(case_seed(seed, name, epoch), name)
}

/// Draw `n` augmented patches from a pool into one [n,1,D,H,W] batch.
/// Per patch: case index and patch position come from `sample_rng`, the
/// augmentation draws from `augment_rng`, and the same augmented sample
/// feeds every consumer of the batch.
fn assemble_batch(
    pool: &[Sample],
    n: usize,
    cfg: &TrainConfig,
    sample_rng: &mut ChaCha8Rng,
    augment_rng: &mut ChaCha8Rng,
    want_labels: bool,
) -> Result<(Tensor, Vec<u8>)> {
    let [pd, ph, pw] = cfg.patch;
    let voxels = pd * ph * pw;
    let mut data = Vec::with_capacity(n * voxels);
    let mut labels = Vec::with_capacity(if want_labels { n * voxels } else { 0 });
    for _ in 0..n {
        let case = &pool[sample_rng.gen_range(0..pool.len())];
        let augmented = spatial_augment(case, augment_rng, &cfg.augment);
        let augmented = mirror_augment(&augmented, augment_rng);
        let patch = sample_patch(&augmented, cfg.patch, cfg.foreground_prob, sample_rng)?;
        data.extend_from_slice(&patch.data);
        if want_labels {
            let l = patch.labels.ok_or_else(|| {
                Error::Dataset(format!("case {} has no mask", case.volume.case_id))
            })?;
            labels.extend_from_slice(&l);
        }
    }
    Ok((Tensor::new(vec![n, 1, pd, ph, pw], data)?, labels))
}

fn normalize_pool(pool: Vec<Sample>) -> Result<Vec<Sample>> {
    pool.into_iter()
        .map(|s| {
            let volume = zscore_normalize(&s.volume)?;
            Sample::new(volume, s.mask)
        })
        .collect()
}

fn collect_grads(
    tape: &Tape,
    staged: &StagedNet,
) -> Result<std::collections::BTreeMap<String, Vec<f64>>> {
    staged
        .param_ids()
        .map(|(name, id)| {
            let g = tape.grad(id).ok_or_else(|| {
                Error::InvalidArgument(format!("no gradient recorded for {name}"))
            })?;
            Ok((name.to_string(), g.to_vec()))
        })
        .collect()
}

fn forward_probs(tape: &mut Tape, net: &StagedNet, input: TensorId) -> Result<TensorId> {
    let logits = forward(tape, net, input)?;
    tape.softmax_channels(logits)
}

/// Two networks, their optimizers, and the preprocessed training pools.
/// `epoch` counts completed epochs and names the next one to run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net1: NetworkParams,
    pub net2: NetworkParams,
    pub opt1: AdamState,
    pub opt2: AdamState,
    pub epoch: usize,
    labeled: Vec<Sample>,
    unlabeled: Vec<Sample>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, manifest: &Manifest) -> Result<Self> {
        let classes = cfg.scale.num_classes;
        let labeled = manifest
            .labeled_in(Split::Train)
            .map(|c| manifest.load_sample(c, classes))
            .collect::<Result<Vec<_>>>()?;
        let unlabeled = match cfg.mode {
            TrainMode::Supervised => Vec::new(),
            TrainMode::Cps => manifest
                .unlabeled_in(Split::Train)
                .map(|c| manifest.load_sample(c, classes))
                .collect::<Result<Vec<_>>>()?,
        };
        Trainer::from_pools(cfg, labeled, unlabeled)
    }

    /// Build from in-memory samples (normalization applied here).
    pub fn from_pools(
        cfg: TrainConfig,
        labeled: Vec<Sample>,
        unlabeled: Vec<Sample>,
    ) -> Result<Self> {
        cfg.validate()?;
        if labeled.is_empty() {
            return Err(Error::Dataset("no labeled training cases".into()));
        }
        if labeled.iter().any(|s| s.mask.is_none()) {
            return Err(Error::Dataset("labeled pool contains unmasked samples".into()));
        }
        let net1 = build_stunet(&cfg.scale, &mut named_rng(cfg.seed, STREAM_INIT_NET1))?;
        let net2 = build_stunet(&cfg.scale, &mut named_rng(cfg.seed, STREAM_INIT_NET2))?;
        let opt1 = AdamState::new(cfg.lr);
        let opt2 = AdamState::new(cfg.lr);
        Ok(Trainer {
            labeled: normalize_pool(labeled)?,
            unlabeled: normalize_pool(unlabeled)?,
            cfg,
            net1,
            net2,
            opt1,
            opt2,
            epoch: 0,
        })
    }

    /// One optimization step. Both networks see the identical labeled batch
    /// (and, with lambda > 0, the identical unlabeled batch); the total loss
    /// is assembled on one tape and each network takes one Adam step from
    /// its own gradients. With lambda == 0 the co-training terms are not
    /// computed at all and are logged as 0.
    pub fn train_step(
        &mut self,
        step: u64,
        lambda: f64,
        labeled: Tensor,
        gt: &[u8],
        unlabeled: Option<Tensor>,
    ) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let staged1 = stage_network(&mut tape, &self.net1, true);
        let staged2 = stage_network(&mut tape, &self.net2, true);

        let lab = tape.leaf(labeled);
        let p1 = forward_probs(&mut tape, &staged1, lab)?;
        let p2 = forward_probs(&mut tape, &staged2, lab)?;
        let l_sup = supervised_loss(&mut tape, p1, p2, gt)?;

        let (total, cps_l, cps_u) = if lambda > 0.0 {
            let cps_l = cps_loss(&mut tape, p1, p2)?;
            let (cps, cps_u_value) = match unlabeled {
                Some(u) => {
                    let unl = tape.leaf(u);
                    let q1 = forward_probs(&mut tape, &staged1, unl)?;
                    let q2 = forward_probs(&mut tape, &staged2, unl)?;
                    let cps_u = cps_loss(&mut tape, q1, q2)?;
                    (tape.add(cps_l, cps_u)?, tape.value(cps_u).item())
                }
                None => (cps_l, 0.0),
            };
            let weighted = tape.scale(cps, lambda)?;
            let total = tape.add(l_sup, weighted)?;
            (total, tape.value(cps_l).item(), cps_u_value)
        } else {
            (l_sup, 0.0, 0.0)
        };

        let breakdown = LossBreakdown::new(tape.value(l_sup).item(), cps_l, cps_u, lambda);
        debug_assert_eq!(
            breakdown.total.to_bits(),
            tape.value(total).item().to_bits(),
            "logged total must be the tape's total"
        );
        if !breakdown.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!(
                    "non-finite loss: l_sup={} l_cps_labeled={} l_cps_unlabeled={} lambda={}",
                    breakdown.l_sup, breakdown.l_cps_labeled, breakdown.l_cps_unlabeled, lambda
                ),
            });
        }

        tape.backward(total)?;
        let grads1 = collect_grads(&tape, &staged1)?;
        let grads2 = collect_grads(&tape, &staged2)?;
        drop(tape);
        // A non-finite gradient with a finite loss is still a divergence;
        // Adam refuses it before mutating anything.
        let diverged = |e| match e {
            Error::NonFinite { context } => Error::Diverged { step, detail: context },
            other => other,
        };
        self.opt1.step(&mut self.net1.params, &grads1).map_err(diverged)?;
        self.opt2.step(&mut self.net2.params, &grads2).map_err(diverged)?;
        Ok(breakdown)
    }

    /// Run one epoch of steps with freshly derived streams; `epoch`
    /// advances on success.
    pub fn run_epoch(&mut self) -> Result<Vec<LossBreakdown>> {
        let e = self.epoch;
        let cfg = self.cfg.clone();
        let lambda = cfg.lambda_at(e);
        let mut sample_lab = epoch_stream(cfg.seed, STREAM_SAMPLE_LABELED, e);
        let mut augment_lab = epoch_stream(cfg.seed, STREAM_AUGMENT_LABELED, e);
        let mut sample_unl = epoch_stream(cfg.seed, STREAM_SAMPLE_UNLABELED, e);
        let mut augment_unl = epoch_stream(cfg.seed, STREAM_AUGMENT_UNLABELED, e);
        let use_unlabeled =
            lambda > 0.0 && !self.unlabeled.is_empty() && cfg.unlabeled_per_step() > 0;

        let mut losses = Vec::with_capacity(cfg.steps_per_epoch);
        for i in 0..cfg.steps_per_epoch {
            let step = (e * cfg.steps_per_epoch + i) as u64;
            let (lab, gt) = assemble_batch(
                &self.labeled,
                cfg.labeled_per_step(),
                &cfg,
                &mut sample_lab,
                &mut augment_lab,
                true,
            )?;
            let unl = if use_unlabeled {
                let (u, _) = assemble_batch(
                    &self.unlabeled,
                    cfg.unlabeled_per_step(),
                    &cfg,
                    &mut sample_unl,
                    &mut augment_unl,
                    false,
                )?;
                Some(u)
            } else {
                None
            };
            losses.push(self.train_step(step, lambda, lab, &gt, unl)?);
        }
        self.epoch += 1;
        Ok(losses)
    }

    fn save_checkpoints(&self, dir: &Path, tag: &str) -> Result<()> {
        save_network(&dir.join(format!("net1-{tag}.ckpt")), &self.net1, self.cfg.seed)?;
        save_network(&dir.join(format!("net2-{tag}.ckpt")), &self.net2, self.cfg.seed)?;
        save_adam(&dir.join(format!("net1-{tag}.adam")), &self.opt1)?;
        save_adam(&dir.join(format!("net2-{tag}.adam")), &self.opt2)?;
        Ok(())
    }

    fn load_checkpoints(&mut self, dir: &Path, tag: &str) -> Result<()> {
        let (net1, _) = load_network(&dir.join(format!("net1-{tag}.ckpt")))?;
        let (net2, _) = load_network(&dir.join(format!("net2-{tag}.ckpt")))?;
        for net in [&net1, &net2] {
            if net.config != self.cfg.scale {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint scale {:?} does not match configured {:?}",
                    net.config, self.cfg.scale
                )));
            }
        }
        self.net1 = net1;
        self.net2 = net2;
        self.opt1 = load_adam(&dir.join(format!("net1-{tag}.adam")))?;
        self.opt2 = load_adam(&dir.join(format!("net2-{tag}.adam")))?;
        Ok(())
    }
}

/// Single-network supervised reference: identical labeled batches and
/// init-net1 initialization, so a lambda=0 dual run must reproduce this
/// parameter trajectory bitwise.
pub struct SingleTrainer {
    pub cfg: TrainConfig,
    pub net: NetworkParams,
    pub opt: AdamState,
    pub epoch: usize,
    labeled: Vec<Sample>,
}

impl SingleTrainer {
    pub fn from_pool(cfg: TrainConfig, labeled: Vec<Sample>) -> Result<Self> {
        cfg.validate()?;
        if labeled.is_empty() {
            return Err(Error::Dataset("no labeled training cases".into()));
        }
        let net = build_stunet(&cfg.scale, &mut named_rng(cfg.seed, STREAM_INIT_NET1))?;
        let opt = AdamState::new(cfg.lr);
        Ok(SingleTrainer {
            labeled: normalize_pool(labeled)?,
            net,
            opt,
            epoch: 0,
            cfg,
        })
    }

    /// One epoch of plain cross-entropy steps; returns per-step CE values.
    pub fn run_epoch(&mut self) -> Result<Vec<f64>> {
        let e = self.epoch;
        let cfg = self.cfg.clone();
        let mut sample_lab = epoch_stream(cfg.seed, STREAM_SAMPLE_LABELED, e);
        let mut augment_lab = epoch_stream(cfg.seed, STREAM_AUGMENT_LABELED, e);
        let mut losses = Vec::with_capacity(cfg.steps_per_epoch);
        for i in 0..cfg.steps_per_epoch {
            let step = (e * cfg.steps_per_epoch + i) as u64;
            let (x, y) = assemble_batch(
                &self.labeled,
                cfg.labeled_per_step(),
                &cfg,
                &mut sample_lab,
                &mut augment_lab,
                true,
            )?;
            let mut tape = Tape::new();
            let staged = stage_network(&mut tape, &self.net, true);
            let input = tape.leaf(x);
            let probs = forward_probs(&mut tape, &staged, input)?;
            let loss = tape.cross_entropy(probs, &y)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("non-finite supervised loss {value}"),
                });
            }
            tape.backward(loss)?;
            let grads = collect_grads(&tape, &staged)?;
            drop(tape);
            self.opt.step(&mut self.net.params, &grads)?;
            losses.push(value);
        }
        self.epoch += 1;
        Ok(losses)
    }
}

/// Progress snapshot persisted beside the checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub epoch: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub best_dsc: Option<f64>,
}

impl TrainerState {
    fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

/// One epoch's validation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochValidation {
    pub epoch: usize,
    pub mean_dsc: f64,
    pub mean_hd: Option<f64>,
    pub per_case: Vec<CaseMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub steps_logged: usize,
    pub best_epoch: Option<usize>,
    pub best_dsc: Option<f64>,
    pub final_validation: Option<EpochValidation>,
    pub latest_net1: PathBuf,
    pub best_net1: Option<PathBuf>,
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Drop log lines belonging to epochs ≥ `epoch_limit` (loss.csv rows have
/// the epoch in column 2, val.jsonl entries in the "epoch" field).
fn truncate_log(path: &Path, epoch_limit: usize, epoch_of: impl Fn(&str) -> Option<usize>) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let kept: Vec<&str> = body
        .lines()
        .filter(|l| epoch_of(l).map_or(true, |e| e < epoch_limit))
        .collect();
    fs::write(path, kept.join("\n") + "\n").map_err(|e| Error::io(path, e))
}

fn csv_epoch(line: &str) -> Option<usize> {
    line.split(',').nth(1)?.parse().ok()
}

fn jsonl_epoch(line: &str) -> Option<usize> {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()?
        .get("epoch")?
        .as_u64()
        .map(|e| e as usize)
}

fn validate_epoch(
    trainer: &Trainer,
    manifest: &Manifest,
    epoch: usize,
) -> Result<EpochValidation> {
    let options = EvalOptions {
        patch: trainer.cfg.patch,
        hd_mode: HdMode::Full,
    };
    let report = evaluate_dataset(
        &trainer.net1,
        manifest,
        Split::Val,
        &options,
        &format!("net1@epoch{epoch}"),
    )?;
    Ok(EpochValidation {
        epoch,
        mean_dsc: report.aggregates.mean_dsc,
        mean_hd: report.aggregates.mean_hd,
        per_case: report.per_case,
    })
}

/// Full training run under `run_dir`: checkpoints/, logs/loss.csv,
/// logs/val.jsonl. With `resume` the run continues from the latest
/// epoch-boundary checkpoint and reproduces the uninterrupted trajectory.
pub fn train_loop(
    cfg: &TrainConfig,
    manifest: &Manifest,
    run_dir: &Path,
    resume: bool,
) -> Result<TrainSummary> {
    let ckpt_dir = run_dir.join("checkpoints");
    let log_dir = run_dir.join("logs");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    fs::create_dir_all(&log_dir).map_err(|e| Error::io(&log_dir, e))?;
    let loss_csv = log_dir.join("loss.csv");
    let val_jsonl = log_dir.join("val.jsonl");
    let state_path = ckpt_dir.join("trainer-state.json");

    let mut trainer = Trainer::new(cfg.clone(), manifest)?;
    let mut best: Option<(usize, f64)> = None;
    if resume {
        let state = TrainerState::load(&state_path)?;
        if state.seed != cfg.seed {
            return Err(Error::InvalidConfig(format!(
                "resume seed {} does not match checkpoint seed {}",
                cfg.seed, state.seed
            )));
        }
        trainer.load_checkpoints(&ckpt_dir, "latest")?;
        trainer.epoch = state.epoch;
        best = state.best_epoch.zip(state.best_dsc);
        truncate_log(&loss_csv, state.epoch, csv_epoch)?;
        truncate_log(&val_jsonl, state.epoch, jsonl_epoch)?;
    } else {
        fs::write(&loss_csv, format!("{LOSS_CSV_HEADER}\n")).map_err(|e| Error::io(&loss_csv, e))?;
        if val_jsonl.exists() {
            fs::remove_file(&val_jsonl).map_err(|e| Error::io(&val_jsonl, e))?;
        }
    }

    let has_val = manifest.labeled_in(Split::Val).next().is_some();
    let mut steps_logged = trainer.epoch * cfg.steps_per_epoch;
    let mut final_validation = None;
    while trainer.epoch < cfg.max_epochs {
        let epoch = trainer.epoch;
        let losses = trainer.run_epoch().map_err(|e| match e {
            Error::Diverged { step, detail } if epoch > 0 => Error::Diverged {
                step,
                detail: format!(
                    "{detail}; last checkpoint {}",
                    ckpt_dir.join("net1-latest.ckpt").display()
                ),
            },
            other => other,
        })?;
        for (i, l) in losses.iter().enumerate() {
            let step = epoch * cfg.steps_per_epoch + i;
            append_line(
                &loss_csv,
                &format!(
                    "{step},{epoch},{},{},{},{},{}",
                    l.lambda, l.l_sup, l.l_cps_labeled, l.l_cps_unlabeled, l.total
                ),
            )?;
        }
        steps_logged += losses.len();

        let last_epoch = trainer.epoch == cfg.max_epochs;
        let due = cfg.val_interval > 0 && trainer.epoch % cfg.val_interval == 0;
        if has_val && (due || last_epoch) {
            let val = validate_epoch(&trainer, manifest, epoch)?;
            append_line(&val_jsonl, &serde_json::to_string(&val)?)?;
            if best.is_none_or(|(_, b)| val.mean_dsc > b) {
                best = Some((epoch, val.mean_dsc));
                trainer.save_checkpoints(&ckpt_dir, "best")?;
            }
            final_validation = Some(val);
        }

        trainer.save_checkpoints(&ckpt_dir, "latest")?;
        TrainerState {
            epoch: trainer.epoch,
            seed: cfg.seed,
            best_epoch: best.map(|(e, _)| e),
            best_dsc: best.map(|(_, d)| d),
        }
        .save(&state_path)?;
    }

    Ok(TrainSummary {
        epochs_run: trainer.epoch,
        steps_logged,
        best_epoch: best.map(|(e, _)| e),
        best_dsc: best.map(|(_, d)| d),
        final_validation,
        latest_net1: ckpt_dir.join("net1-latest.ckpt"),
        best_net1: best.map(|_| ckpt_dir.join("net1-best.ckpt")),
    })
}
