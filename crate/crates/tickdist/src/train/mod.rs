//! Training pipeline: configuration, the Adam loop, and the three
//! strategies — scratch baseline, attention transfer (AT), and attention
//! transfer with label-smoothing regularization (AT + LSR, the two-student
//! protocol).
//!
//! Determinism: every random decision derives from (config seed, epoch,
//! sample id), cross-sample reductions run in fixed order, and the
//! data-loading pool never feeds more than one training worker, so a fixed
//! seed reproduces bit-identical parameters regardless of worker count. In
//! deterministic mode the worker pool is forced to one and wall-clock
//! columns are zeroed so run artifacts are byte-identical.

mod adam;
mod augment;
mod split;
mod teacher;

pub use adam::{AdamParams, AdamState};
pub use augment::{augment, augment_with, sample_params, AugmentConfig, AugmentParams};
pub use split::{kfold, split_dataset, stratified_subset};
pub use teacher::{teacher_records, FileTeacher, ModelTeacher, Teacher, TeacherTable};

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageStore;
use crate::distill::{generate_soft_labels, LossWeights, SoftLabelRecord, PROB_CLAMP};
use crate::error::{Error, Result};
use crate::metrics::{self, ScoredSample};
use crate::model::{build_lighter_cnn, Model, ParamTensor, Profile};
use crate::tensor::{Graph, Scalar, Tensor};

/// How the attention loss is reduced over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtReduction {
    Mean,
    Sum,
}

/// Training hyperparameters. Defaults are the published protocol: Adam at
/// 1e-3, batch 64, up to 256 epochs, loss weights (beta1, beta2, T) =
/// (1, 2, 5), plus engineering knobs the protocol leaves open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-epoch multiplicative decay of the learning rate; 1.0 keeps it
    /// constant (the protocol states only an initial rate).
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weights: LossWeights,
    /// Fraction of the training set used for the first student.
    pub subset_fraction: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub profile: Profile,
    pub dropout_rate: f64,
    /// Early stopping on validation loss; `None` trains the full epoch
    /// budget (paper-faithful mode).
    pub patience: Option<usize>,
    /// Return the parameters of the best-validation-loss epoch instead of
    /// the last one (whenever a validation set is present).
    pub restore_best: bool,
    pub kfold_k: usize,
    /// Data-loading pool width; the training worker is always single.
    pub workers: usize,
    pub deterministic: bool,
    pub at_reduction: AtReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            batch_size: 64,
            max_epochs: 256,
            weights: LossWeights::default(),
            subset_fraction: 0.5,
            seed: 0,
            augment: AugmentConfig::default(),
            profile: Profile::Reduced,
            dropout_rate: 0.25,
            patience: Some(20),
            restore_best: true,
            kfold_k: 3,
            workers: 1,
            deterministic: false,
            at_reduction: AtReduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.lr_decay <= 0.0 || !self.lr_decay.is_finite() {
            return Err(Error::Config(format!(
                "lr_decay must be positive, got {}",
                self.lr_decay
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size and max epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.subset_fraction) || self.subset_fraction == 0.0 {
            return Err(Error::Config(format!(
                "subset fraction must be in (0, 1], got {}",
                self.subset_fraction
            )));
        }
        if self.kfold_k < 2 {
            return Err(Error::Config("kfold_k must be at least 2".into()));
        }
        self.weights.validate()
    }

    /// Effective data-loading pool width (deterministic mode forces one).
    pub fn effective_workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers.max(1)
        }
    }

    /// Parse a UTF-8 TOML key-value config file; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Learning rate in effect for a 1-based epoch index.
    pub fn epoch_lr(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch.saturating_sub(1) as i32)
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_roc_auc: Option<f64>,
    pub val_pr_auc: Option<f64>,
    pub seconds: f64,
    /// Mean attention loss over the epoch's training batches, when an AT
    /// term is part of the objective.
    pub mean_at_loss: Option<f64>,
    /// Digest of the epoch's RNG stream seed.
    pub rng_digest: String,
}

/// Per-epoch training trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// CSV columns: epoch,train_loss,val_loss,val_accuracy,val_roc_auc,
    /// val_pr_auc,seconds. Missing validation cells are left empty.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("epoch,train_loss,val_loss,val_accuracy,val_roc_auc,val_pr_auc,seconds\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{},{},{},{},{:.3}\n",
                e.epoch,
                e.train_loss,
                fmt(e.val_loss),
                fmt(e.val_accuracy),
                fmt(e.val_roc_auc),
                fmt(e.val_pr_auc),
                e.seconds
            ));
        }
        out
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Training inputs: an image store plus (id, label) item lists.
pub struct TrainData<'a> {
    pub store: &'a ImageStore,
    pub items: Vec<(u32, u8)>,
    /// Validation view used for the history metrics and early stopping;
    /// may be empty.
    pub val_items: Vec<(u32, u8)>,
}

enum Objective<'o, E: Scalar> {
    HardLabels,
    AttentionTransfer {
        teacher: &'o TeacherTable<E>,
    },
    SoftCombined {
        soft: &'o HashMap<u32, f64>,
        teacher: &'o TeacherTable<E>,
    },
}

pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Assemble a batch tensor, optionally augmenting each sample with an RNG
/// derived from (seed, epoch, sample id) so results do not depend on the
/// pool width.
fn assemble_batch<E: Scalar>(
    store: &ImageStore,
    ids: &[u32],
    augment_cfg: Option<&AugmentConfig>,
    seed: u64,
    epoch: u64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Tensor<E>> {
    let (h, w) = store.resolution();
    let plane = 3 * h * w;
    let mut out = Tensor::zeros(&[ids.len(), 3, h, w]);
    let fill = |(slot, dst): (usize, &mut [E])| -> Result<()> {
        let id = ids[slot];
        let img = store.image(id)?;
        let copy_from = |dst: &mut [E], src: &Tensor<f32>| {
            for (o, &v) in dst.iter_mut().zip(src.data()) {
                *o = E::from_f64(v as f64);
            }
        };
        match augment_cfg {
            Some(cfg) if cfg.any_enabled() => {
                let mut rng =
                    ChaCha20Rng::seed_from_u64(mix_seed(mix_seed(seed, epoch), id as u64 + 1));
                let augmented = augment(img, cfg, &mut rng)?;
                copy_from(dst, &augmented);
            }
            _ => copy_from(dst, img),
        }
        Ok(())
    };
    match pool {
        Some(pool) => pool.install(|| {
            use rayon::prelude::*;
            out.data_mut()
                .par_chunks_mut(plane)
                .enumerate()
                .try_for_each(fill)
        })?,
        None => out.data_mut().chunks_mut(plane).enumerate().try_for_each(fill)?,
    }
    Ok(out)
}

/// Eval-mode scores for a list of items.
pub fn score_items<E: Scalar>(
    model: &Model<E>,
    store: &ImageStore,
    items: &[(u32, u8)],
    batch_size: usize,
) -> Result<Vec<ScoredSample>> {
    let mut scores = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size.max(1)) {
        let ids: Vec<u32> = chunk.iter().map(|&(id, _)| id).collect();
        let batch = store.batch::<E>(&ids)?;
        let probs = model.predict_proba(&batch)?;
        for (&(id, label), p) in chunk.iter().zip(probs) {
            scores.push(ScoredSample::new(id, p, label));
        }
    }
    Ok(scores)
}

fn bce_from_scores(scores: &[ScoredSample]) -> f64 {
    let mut total = 0.0;
    for s in scores {
        let p = s.score.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= if s.label == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    total / scores.len() as f64
}

fn fit<E: Scalar>(
    model: &mut Model<E>,
    data: &TrainData,
    objective: Objective<E>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.items.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let workers = cfg.effective_workers();
    let pool = if workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };
    let augment_cfg = cfg.augment.any_enabled().then_some(&cfg.augment);
    let mut opt = AdamState::new(model.params());
    let at_eps = E::from_f64(crate::distill::AT_EPSILON);
    let mean_at = matches!(cfg.at_reduction, AtReduction::Mean);

    let mut history = TrainHistory::default();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    // snapshot of the best-validation-loss parameters and batch-norm state
    let mut best_state: Option<(Vec<ParamTensor<E>>, Vec<crate::model::BatchNormState<E>>)> = None;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let hp = AdamParams {
            learning_rate: cfg.epoch_lr(epoch),
            ..AdamParams::default()
        };
        let epoch_seed = mix_seed(cfg.seed, epoch as u64);
        let mut epoch_rng = ChaCha20Rng::seed_from_u64(epoch_seed);
        let mut order: Vec<usize> = (0..data.items.len()).collect();
        order.shuffle(&mut epoch_rng);

        let mut loss_sum = 0.0f64;
        let mut at_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let ids: Vec<u32> = chunk.iter().map(|&i| data.items[i].0).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| data.items[i].1).collect();
            let batch = assemble_batch::<E>(
                data.store,
                &ids,
                augment_cfg,
                cfg.seed,
                epoch as u64,
                pool.as_ref(),
            )?;
            let mut g = Graph::new();
            let pass = model.forward_train(&mut g, &batch, cfg.dropout_rate, &mut epoch_rng)?;

            let targets: Vec<E> = match &objective {
                Objective::SoftCombined { soft, .. } => ids
                    .iter()
                    .map(|id| {
                        soft.get(id).copied().map(E::from_f64).ok_or_else(|| {
                            Error::Data(format!("no soft label for sample {id}"))
                        })
                    })
                    .collect::<Result<_>>()?,
                _ => labels.iter().map(|&l| E::from_usize(l as usize)).collect(),
            };
            let bce = g.bce_with_logits(pass.logits, &targets)?;

            let (total, at_node) = match &objective {
                Objective::HardLabels => (bce, None),
                Objective::AttentionTransfer { teacher } => {
                    let maps = g.channel_abs_sum(pass.attention)?;
                    let target_maps = teacher.batch_maps(&ids)?;
                    let at = g.attention_loss(maps, &target_maps, at_eps, mean_at)?;
                    let at_scaled = g.scale(at, E::from_f64(1.0 / cfg.weights.beta2))?;
                    (g.add(bce, at_scaled)?, Some(at))
                }
                Objective::SoftCombined { teacher, .. } => {
                    let maps = g.channel_abs_sum(pass.attention)?;
                    let target_maps = teacher.batch_maps(&ids)?;
                    let at = g.attention_loss(maps, &target_maps, at_eps, mean_at)?;
                    let at_scaled = g.scale(at, E::from_f64(1.0 / cfg.weights.beta2))?;
                    let ce_scaled = g.scale(bce, E::from_f64(1.0 / cfg.weights.beta1))?;
                    (g.add(ce_scaled, at_scaled)?, Some(at))
                }
            };
            loss_sum += g.value(total).item()?.as_f64();
            if let Some(at) = at_node {
                at_sum += g.value(at).item()?.as_f64();
            }
            batches += 1;

            g.backward(total)?;
            let grads: Vec<Option<Tensor<E>>> = pass
                .param_nodes
                .iter()
                .map(|&n| g.take_grad(n))
                .collect();
            opt.step(model.params_mut(), &grads, &hp)?;
        }

        let (val_loss, val_accuracy, val_roc, val_pr) = if data.val_items.is_empty() {
            (None, None, None, None)
        } else {
            let scores = score_items(model, data.store, &data.val_items, cfg.batch_size)?;
            let loss = bce_from_scores(&scores);
            let acc = metrics::accuracy(&scores, metrics::DEFAULT_THRESHOLD).ok();
            let roc = metrics::roc_auc(&scores).ok();
            let pr = metrics::pr_auc(&scores).ok();
            (Some(loss), acc, roc, pr)
        };

        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_accuracy,
            val_roc_auc: val_roc,
            val_pr_auc: val_pr,
            seconds: if cfg.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
            mean_at_loss: matches!(
                objective,
                Objective::AttentionTransfer { .. } | Objective::SoftCombined { .. }
            )
            .then(|| at_sum / batches as f64),
            rng_digest: format!("{epoch_seed:016x}"),
        });

        if let Some(val) = val_loss {
            if val < best_val - 1e-12 {
                best_val = val;
                since_best = 0;
                if cfg.restore_best {
                    best_state = Some((model.params().to_vec(), model.bn_states().to_vec()));
                }
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best > p) {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((params, bn_states)) = best_state {
        model.restore(params, bn_states)?;
    }
    Ok(history)
}

/// Strategy 1: train from scratch on hard labels with binary cross-entropy.
pub fn train_baseline<E: Scalar>(
    model: &mut Model<E>,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    fit(model, data, Objective::HardLabels, cfg)
}

/// Strategy 2: hard-label cross-entropy plus the attention-transfer term
/// `(1/beta2) * L_AT` against a frozen teacher.
pub fn train_at<E: Scalar>(
    student: &mut Model<E>,
    teacher: &dyn Teacher<E>,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    let student_res = student.spec().attention_resolution()?;
    let teacher_res = teacher.attention_resolution()?;
    if student_res != teacher_res {
        return Err(Error::Contract(format!(
            "attention resolution mismatch: student {student_res:?} vs teacher {teacher_res:?}"
        )));
    }
    let ids: Vec<u32> = data.items.iter().map(|&(id, _)| id).collect();
    let table = teacher.table(data.store, &ids, cfg.batch_size)?;
    fit(student, data, Objective::AttentionTransfer { teacher: &table }, cfg)
}

/// Everything the two-student pipeline produces.
pub struct DistillOutcome<E: Scalar> {
    pub student1: Model<E>,
    pub student1_history: TrainHistory,
    pub soft_labels: Vec<SoftLabelRecord>,
    pub student2: Model<E>,
    pub student2_history: TrainHistory,
}

/// Strategy 3 (AT + LSR): train student one with AT on a stratified subset,
/// generate soft labels over the entire training set, then train student
/// two with the combined soft-label/attention objective.
pub fn train_at_lsr<E: Scalar>(
    teacher: &dyn Teacher<E>,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<DistillOutcome<E>> {
    cfg.validate()?;
    let mut student1 = build_lighter_cnn::<E>(cfg.profile, mix_seed(cfg.seed, 0x51))?;
    let subset = stratified_subset(&data.items, cfg.subset_fraction, mix_seed(cfg.seed, 0x5b))?;
    let subset_data = TrainData {
        store: data.store,
        items: subset,
        val_items: data.val_items.clone(),
    };
    let student1_history = train_at(&mut student1, teacher, &subset_data, cfg)?;

    let soft_labels = generate_soft_labels(
        &student1,
        &data.items,
        |ids| data.store.batch::<E>(ids),
        cfg.batch_size,
        cfg.weights.temperature,
        crate::distill::REPLACEMENT_TRUE_CLASS_PROB,
    )?;
    let soft: HashMap<u32, f64> = soft_labels.iter().map(|r| (r.id, r.p1)).collect();

    let mut student2 = build_lighter_cnn::<E>(cfg.profile, mix_seed(cfg.seed, 0x52))?;
    let ids: Vec<u32> = data.items.iter().map(|&(id, _)| id).collect();
    let table = teacher.table(data.store, &ids, cfg.batch_size)?;
    let student2_history = fit(
        &mut student2,
        data,
        Objective::SoftCombined {
            soft: &soft,
            teacher: &table,
        },
        cfg,
    )?;
    Ok(DistillOutcome {
        student1,
        student1_history,
        soft_labels,
        student2,
        student2_history,
    })
}
