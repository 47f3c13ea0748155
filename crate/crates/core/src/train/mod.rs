//! Pair-constrained training, evaluation and dataset handling.

mod manifest;
mod metrics;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channelrep::{ChannelRep, ColorPlanes, Domain};
use crate::model::{reps_to_tensor, Model, ModelError, UcnetConfig};
use crate::nn::{softmax_cross_entropy, BnMode};

pub use manifest::{
    format_manifest, load_image, load_pair, parse_manifest, read_manifest, LoadedPair, PairRecord,
};
pub use metrics::{p_e, ItemScore, Metrics};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("manifest {0} lists no pairs")]
    EmptyManifest(PathBuf),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// A batch holds `2 * batch_pairs` images.
    pub batch_pairs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// The learning rate is multiplied by `lr_decay` every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
    pub seed: u64,
    pub eval_fraction: f64,
    /// Threads used for residual preprocessing.
    pub workers: usize,
    /// Seeded flip / quarter-turn, identical for both members of a pair.
    pub augment: bool,
    /// Training batches used to re-estimate BN statistics after each epoch;
    /// 0 keeps the running averages.
    pub bn_recalibration_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_pairs: 8,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay: 0.1,
            lr_step: 8,
            seed: 0,
            eval_fraction: 0.2,
            workers: 1,
            augment: false,
            bn_recalibration_batches: 8,
        }
    }
}

impl TrainConfig {
    /// Default schedule per domain. The JPEG signal is weaker and the
    /// network overfits 160 pairs quickly, so that branch trains longer with
    /// flip/rotation augmentation.
    pub fn for_domain(domain: Domain) -> Self {
        match domain {
            Domain::SpatialRgb => Self::default(),
            Domain::JpegYcbcr => Self {
                epochs: 20,
                lr_step: 12,
                augment: true,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return bad("eval_fraction must lie in (0, 1)");
        }
        if self.epochs == 0 || self.batch_pairs == 0 || self.lr_step == 0 || self.workers == 0 {
            return bad("epochs, batch_pairs, lr_step and workers must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.lr_decay > 0.0) || self.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1), lr_decay > 0, weight_decay >= 0");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_step) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_p_e: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation P_E.
    pub model: Model<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Channel representations of `items`, in order, using up to `workers` threads.
pub fn compute_reps(
    model: &Model<f32>,
    items: &[&ColorPlanes],
    workers: usize,
) -> Result<Vec<ChannelRep>, TrainError> {
    if workers <= 1 || items.len() < 2 {
        return items
            .iter()
            .map(|p| model.preprocess(p).map_err(TrainError::from))
            .collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|p| model.preprocess(p).map_err(TrainError::from))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("preprocessing worker panicked")?);
        }
        Ok(out)
    })
}

/// Stego-class probabilities for `items`, batched.
pub fn score_items(
    model: &Model<f32>,
    items: &[&ColorPlanes],
    batch: usize,
    workers: usize,
) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::with_capacity(items.len());
    for part in items.chunks(batch.max(1)) {
        let reps = compute_reps(model, part, workers)?;
        let refs: Vec<&ChannelRep> = reps.iter().collect();
        let x = reps_to_tensor::<f32>(&refs)?;
        out.extend(model.stego_scores(&x)?.into_iter().map(f64::from));
    }
    Ok(out)
}

fn augment_pair(pair: &LoadedPair, rng: &mut ChaCha8Rng) -> LoadedPair {
    let flip = rng.random_bool(0.5);
    // quarter turns would mix shapes inside a batch of non-square images
    let turns = if pair.cover.height() == pair.cover.width() {
        rng.random_range(0..4)
    } else {
        2 * rng.random_range(0..2)
    };
    let f = |cp: &ColorPlanes| {
        cp.map_planes(|p| {
            let mut q = if flip { p.flip_horizontal() } else { p.clone() };
            for _ in 0..turns {
                q = q.rot90();
            }
            q
        })
    };
    LoadedPair {
        cover: f(&pair.cover),
        stego: f(&pair.stego),
    }
}

/// Item order for one batch: each cover immediately followed by its stego.
pub fn pair_batch_order(pair_indices: &[usize]) -> Vec<(usize, usize)> {
    pair_indices
        .iter()
        .flat_map(|&p| [(p, 0), (p, 1)])
        .collect()
}

fn val_metrics(
    model: &Model<f32>,
    pairs: &[LoadedPair],
    val: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, f64), TrainError> {
    let items: Vec<&ColorPlanes> = val
        .iter()
        .flat_map(|&i| [&pairs[i].cover, &pairs[i].stego])
        .collect();
    let scores = score_items(model, &items, 2 * cfg.batch_pairs, cfg.workers)?;
    let labelled = scores
        .iter()
        .enumerate()
        .map(|(i, &score)| ItemScore {
            path: String::new(),
            label: (i % 2) as u8,
            score,
        })
        .collect();
    let m = Metrics::from_scores(labelled)?;
    Ok((m.accuracy, m.p_e))
}

/// Trains on in-memory pairs. `on_epoch` sees every history record as it
/// is produced.
pub fn train_pairs(
    pairs: &[LoadedPair],
    cfg: &TrainConfig,
    model_cfg: &UcnetConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(TrainError::Config(format!(
            "need at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    if let Some(p) = pairs.iter().find(|p| p.cover.domain() != model_cfg.domain) {
        return Err(TrainError::Config(format!(
            "pair in domain {} but model is configured for {}",
            p.cover.domain(),
            model_cfg.domain
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((pairs.len() as f64 * cfg.eval_fraction).round() as usize).clamp(1, pairs.len() - 1);
    let val_indices = order[..n_val].to_vec();
    let train_indices = order[n_val..].to_vec();

    let mut model = Model::<f32>::build(model_cfg, cfg.seed)?;
    let mut velocity: Vec<Vec<f32>> = model.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Model<f32>)> = None;
    let mut epoch_order = train_indices.clone();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch) as f32;
        epoch_order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in epoch_order.chunks(cfg.batch_pairs) {
            let augmented: Vec<LoadedPair>;
            let batch_pairs: Vec<&LoadedPair> = if cfg.augment {
                augmented = chunk.iter().map(|&i| augment_pair(&pairs[i], &mut rng)).collect();
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &pairs[i]).collect()
            };
            let local: Vec<usize> = (0..batch_pairs.len()).collect();
            let items: Vec<&ColorPlanes> = pair_batch_order(&local)
                .into_iter()
                .map(|(p, s)| if s == 0 { &batch_pairs[p].cover } else { &batch_pairs[p].stego })
                .collect();
            let labels: Vec<usize> = (0..items.len()).map(|i| i % 2).collect();

            let reps = compute_reps(&model, &items, cfg.workers)?;
            let refs: Vec<&ChannelRep> = reps.iter().collect();
            let x = reps_to_tensor::<f32>(&refs)?;
            let (logits, cache) = model.forward_cached(&x, BnMode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels).map_err(ModelError::from)?;
            let grads = model.backward(&cache, &grad)?;
            sgd_step(&mut model, &mut velocity, &grads, lr, cfg);
            loss_sum += f64::from(loss);
            batches += 1;
        }
        if cfg.bn_recalibration_batches > 0 {
            let mut inputs = Vec::new();
            for chunk in epoch_order.chunks(cfg.batch_pairs).take(cfg.bn_recalibration_batches) {
                let items: Vec<&ColorPlanes> = chunk
                    .iter()
                    .flat_map(|&i| [&pairs[i].cover, &pairs[i].stego])
                    .collect();
                let reps = compute_reps(&model, &items, cfg.workers)?;
                let refs: Vec<&ChannelRep> = reps.iter().collect();
                inputs.push(reps_to_tensor::<f32>(&refs)?);
            }
            model.recalibrate_bn(&inputs)?;
        }
        let (val_accuracy, val_p_e) = val_metrics(&model, pairs, &val_indices, cfg)?;
        let rec = EpochRecord {
            epoch: epoch + 1,
            lr: f64::from(lr),
            train_loss: loss_sum / batches as f64,
            val_accuracy,
            val_p_e,
        };
        on_epoch(&rec);
        // lowest P_E; ties go to the higher accuracy, then the earlier epoch
        if best
            .as_ref()
            .is_none_or(|(pe, acc, _, _)| val_p_e < *pe || (val_p_e == *pe && val_accuracy > *acc))
        {
            best = Some((val_p_e, val_accuracy, rec.epoch, model.clone()));
        }
        history.push(rec);
    }
    let (_, _, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        train_indices,
        val_indices,
    })
}

/// `v = m v + g + wd p; p -= lr v`; weight decay skips BN and biases.
fn sgd_step(
    model: &mut Model<f32>,
    velocity: &mut [Vec<f32>],
    grads: &[Vec<f32>],
    lr: f32,
    cfg: &TrainConfig,
) {
    let decays: Vec<bool> = model
        .params()
        .iter()
        .map(|(n, _)| n.ends_with("weight"))
        .collect();
    let m = cfg.momentum as f32;
    let wd = cfg.weight_decay as f32;
    for (((p, v), g), decay) in model
        .params_mut()
        .into_iter()
        .zip(velocity.iter_mut())
        .zip(grads)
        .zip(decays)
    {
        let wd = if decay { wd } else { 0.0 };
        for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = m * *vi + gi + wd * *pi;
            *pi -= lr * *vi;
        }
    }
}

/// Loads every pair listed in the manifest.
pub fn load_manifest_pairs(records: &[PairRecord]) -> Result<Vec<LoadedPair>, TrainError> {
    records.iter().map(load_pair).collect()
}

pub fn train(
    manifest: &Path,
    cfg: &TrainConfig,
    model_cfg: &UcnetConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    let records = read_manifest(manifest)?;
    let pairs = load_manifest_pairs(&records)?;
    train_pairs(&pairs, cfg, model_cfg, on_epoch)
}

/// Scores every cover (label 0) and stego (label 1) in the manifest.
pub fn evaluate(
    model: &Model<f32>,
    records: &[PairRecord],
    workers: usize,
) -> Result<Metrics, TrainError> {
    if records.is_empty() {
        return Err(TrainError::Metrics("empty manifest".into()));
    }
    let mut items = Vec::with_capacity(records.len() * 2);
    for r in records {
        if r.domain != model.config().domain {
            return Err(TrainError::Config(format!(
                "manifest entry in domain {} but model was trained for {}",
                r.domain,
                model.config().domain
            )));
        }
        let pair = load_pair(r)?;
        for (path, label, planes) in [(&r.cover_path, 0u8, pair.cover), (&r.stego_path, 1, pair.stego)] {
            let score = score_items(model, &[&planes], 1, workers)?[0];
            items.push(ItemScore {
                path: path.display().to_string(),
                label,
                score,
            });
        }
    }
    Metrics::from_scores(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_order_keeps_pairs_adjacent() {
        assert_eq!(pair_batch_order(&[3, 1]), vec![(3, 0), (3, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn jpeg_schedule_is_longer_and_augmented() {
        let s = TrainConfig::for_domain(Domain::SpatialRgb);
        let j = TrainConfig::for_domain(Domain::JpegYcbcr);
        assert_eq!(s, TrainConfig::default());
        assert!(j.augment && j.epochs == 20 && j.lr_step == 12);
        assert!(j.validate().is_ok());
    }

    #[test]
    fn lr_schedule_steps() {
        let cfg = TrainConfig {
            lr: 0.1,
            lr_decay: 0.5,
            lr_step: 2,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 0.1);
        assert_eq!(cfg.lr_at(1), 0.1);
        assert_eq!(cfg.lr_at(2), 0.05);
        assert_eq!(cfg.lr_at(5), 0.025);
    }

    #[test]
    fn config_checks() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { lr: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { eval_fraction: 1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { eval_fraction: 0.0, ..ok }.validate().is_err());
    }
}
