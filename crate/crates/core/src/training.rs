//! Smooth-L1 regression with Adam, k-fold cross-validation and fold reports.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_folds, DatasetEntry, Manifest};
use crate::error::{Error, Result};
use crate::evaluation::{mse, pearson, spearman};
use crate::frontend::{
    normalize_pair, pair_spectrograms, GammatoneConfig, GammatoneFrontend, PairedInput, Spectrogram,
};
use crate::model::{batch_tensor, Checkpoint, Model, ModelSpec, TrainingMetadata};
use crate::nn::Parameterized;

/// Per-band standardisation statistics shared by both input channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Two-pass per-band mean and population standard deviation over every
/// frame of both channels of every pair.
pub fn compute_norm_stats<'a>(
    pairs: impl IntoIterator<Item = &'a PairedInput>,
) -> Result<NormStats> {
    let pairs: Vec<&PairedInput> = pairs.into_iter().collect();
    let first = pairs
        .first()
        .ok_or_else(|| Error::Argument("normalization statistics need at least one pair".into()))?;
    let [_, bands, frames] = first.shape();
    if let Some(p) = pairs.iter().find(|p| p.shape() != first.shape()) {
        return Err(Error::Shape(format!(
            "pairs of shape {:?} and {:?}",
            first.shape(),
            p.shape()
        )));
    }
    if pairs.iter().any(|p| p.is_normalized()) {
        return Err(Error::State(
            "statistics must be computed on unnormalized pairs".into(),
        ));
    }
    let band_rows = |b: usize| {
        pairs.iter().flat_map(move |p| {
            (0..2).flat_map(move |c| {
                let start = (c * bands + b) * frames;
                p.data()[start..start + frames]
                    .iter()
                    .map(|&v| f64::from(v))
            })
        })
    };
    let count = (pairs.len() * 2 * frames) as f64;
    let mut mean = Vec::with_capacity(bands);
    let mut std = Vec::with_capacity(bands);
    for b in 0..bands {
        let m = band_rows(b).sum::<f64>() / count;
        let var = band_rows(b).map(|v| (v - m) * (v - m)).sum::<f64>() / count;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(NormStats { mean, std })
}

/// Batch-averaged smooth-L1 loss.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> f64 {
    assert_eq!(
        pred.len(),
        target.len(),
        "prediction/target length mismatch"
    );
    assert!(beta > 0.0, "smooth-L1 beta must be positive");
    if pred.is_empty() {
        return 0.0;
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = (p - t).abs();
            if d < beta {
                0.5 * d * d / beta
            } else {
                d - 0.5 * beta
            }
        })
        .sum();
    total / pred.len() as f64
}

/// Gradient of [`smooth_l1`] with respect to each prediction.
pub fn smooth_l1_grad(pred: &[f64], target: &[f64], beta: f64) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            let g = if d.abs() < beta { d / beta } else { d.signum() };
            g / n
        })
        .collect()
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Applies one update from the gradients currently held by `model`.
    pub fn step(&mut self, model: &mut impl Parameterized<f32>) {
        self.t += 1;
        let mut params: Vec<_> = model
            .params_mut()
            .into_iter()
            .filter(|(_, p)| p.trainable)
            .collect();
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(_, p)| (vec![0.0; p.len()], vec![0.0; p.len()]))
                .collect();
        }
        assert_eq!(
            self.moments.len(),
            params.len(),
            "optimizer bound to a different model"
        );
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let lr = self.learning_rate as f32;
        let (c1, c2, eps) = ((1.0 / bc1) as f32, (1.0 / bc2) as f32, self.eps as f32);
        params
            .par_iter_mut()
            .zip(self.moments.par_iter_mut())
            .for_each(|((_, p), (m, v))| {
                for (((w, &g), m), v) in p
                    .value
                    .iter_mut()
                    .zip(&p.grad)
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
                }
            });
    }
}

fn default_learning_rate() -> f64 {
    4e-5
}
fn default_batch_size() -> usize {
    32
}
fn default_epochs() -> usize {
    50
}
fn default_beta() -> f64 {
    1.0
}
fn default_k_folds() -> usize {
    5
}
fn default_dropout() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_beta")]
    pub smooth_l1_beta: f64,
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Branch width of a narrowed network; `None` trains the full-size model.
    #[serde(default)]
    pub width: Option<usize>,
    /// Restricts training to these fold indices.
    #[serde(default)]
    pub folds: Option<Vec<usize>>,
    /// Upper bound on optimizer steps per fold.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub gammatone: GammatoneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            smooth_l1_beta: default_beta(),
            k_folds: default_k_folds(),
            seed: 0,
            dropout: default_dropout(),
            width: None,
            folds: None,
            max_steps: None,
            gammatone: GammatoneConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be at least 1".into());
        }
        if self.smooth_l1_beta.is_nan() || self.smooth_l1_beta <= 0.0 {
            return bad(format!(
                "smooth-L1 beta {} must be positive",
                self.smooth_l1_beta
            ));
        }
        if self.k_folds < 2 {
            return bad(format!("{} folds; need at least 2", self.k_folds));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.width == Some(0) {
            return bad("width must be positive".into());
        }
        if let Some(f) = self
            .folds
            .as_ref()
            .and_then(|f| f.iter().find(|&&i| i >= self.k_folds))
        {
            return bad(format!("fold {f} out of range for {} folds", self.k_folds));
        }
        self.gammatone.validate(crate::audio::SAMPLE_RATE)
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = match self.width {
            Some(w) => ModelSpec::reduced(w),
            None => ModelSpec::standard(),
        };
        spec.dropout = self.dropout;
        spec
    }
}

/// SplitMix64-style seed derivation for independent deterministic streams.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut z = base;
    for &s in stream {
        z = z
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(s.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Scores normalised pairs in inference mode without clamping, in chunks.
pub fn predict_raw(model: &Model<f32>, pairs: &[&PairedInput]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(32) {
        out.extend(
            model
                .infer(&batch_tensor(chunk)?)?
                .into_iter()
                .map(f64::from),
        );
    }
    Ok(out)
}

/// One optimizer step at a time over normalised pairs.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model<f32>,
    adam: Adam,
    beta: f64,
}

impl Trainer {
    pub fn new(model: Model<f32>, learning_rate: f64, smooth_l1_beta: f64) -> Self {
        Self {
            model,
            adam: Adam::new(learning_rate),
            beta: smooth_l1_beta,
        }
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model<f32> {
        &mut self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.adam.steps() as usize
    }

    /// Training-mode forward, backward and update; returns the batch loss
    /// before the update.
    pub fn step(&mut self, batch: &[&PairedInput], labels: &[f64]) -> Result<f64> {
        if batch.len() != labels.len() {
            return Err(Error::Argument(format!(
                "{} pairs but {} labels",
                batch.len(),
                labels.len()
            )));
        }
        if batch.iter().any(|p| !p.is_normalized()) {
            return Err(Error::State("training pairs must be normalized".into()));
        }
        let scores = self.model.forward(&batch_tensor(batch)?)?;
        let preds: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
        let loss = smooth_l1(&preds, labels, self.beta);
        let grad: Vec<f32> = smooth_l1_grad(&preds, labels, self.beta)
            .into_iter()
            .map(|g| g as f32)
            .collect();
        self.model.zero_grad();
        self.model.backward(&grad);
        self.adam.step(&mut self.model);
        Ok(loss)
    }

    /// Inference-mode loss on unclamped scores.
    pub fn loss(&self, pairs: &[&PairedInput], labels: &[f64]) -> Result<f64> {
        Ok(smooth_l1(
            &predict_raw(&self.model, pairs)?,
            labels,
            self.beta,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mse: f64,
    pub val_rp: Option<f64>,
    pub val_rs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutPrediction {
    pub entry: DatasetEntry,
    /// Clamped inference score.
    pub prediction: f64,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold_index: usize,
    pub epochs: Vec<EpochMetrics>,
    pub steps: usize,
    pub val_mse: f64,
    pub val_rp: Option<f64>,
    pub val_rs: Option<f64>,
    pub train_excerpts: BTreeSet<String>,
    pub val_excerpts: BTreeSet<String>,
    pub predictions: Vec<HeldOutPrediction>,
    pub checkpoint: Checkpoint,
    pub checkpoint_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldFailure {
    pub fold_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingReport {
    pub folds: Vec<FoldResult>,
    pub failures: Vec<FoldFailure>,
}

/// Hooks into the data path; indices refer to manifest entries.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    NormStats {
        fold: usize,
        entries: &'a [usize],
    },
    Batch {
        fold: usize,
        epoch: usize,
        entries: &'a [usize],
    },
    Epoch {
        fold: usize,
        metrics: &'a EpochMetrics,
    },
}

/// Computes the raw (unnormalised) pair for every entry, sharing
/// spectrograms between entries that reference the same file. Failures are
/// kept per entry.
pub fn load_pairs(
    entries: &[DatasetEntry],
    frontend: &GammatoneFrontend,
) -> Vec<Result<PairedInput, String>> {
    let mut paths: Vec<&Path> = entries
        .iter()
        .flat_map(|e| [e.ref_path.as_path(), e.deg_path.as_path()])
        .collect();
    paths.sort();
    paths.dedup();
    let specs: HashMap<&Path, Result<Arc<Spectrogram>, String>> = paths
        .par_iter()
        .map(|&p| {
            (
                p,
                frontend
                    .compute_file(p)
                    .map(Arc::new)
                    .map_err(|e| e.to_string()),
            )
        })
        .collect();
    entries
        .iter()
        .map(|e| {
            let r = specs[e.ref_path.as_path()].clone()?;
            let d = specs[e.deg_path.as_path()].clone()?;
            pair_spectrograms(&r, &d).map_err(|err| format!("{}: {err}", e.deg_path.display()))
        })
        .collect()
}

fn val_metrics(preds: &[f64], labels: &[f64], beta: f64) -> (f64, f64, Option<f64>, Option<f64>) {
    let loss = smooth_l1(preds, labels, beta);
    let m = mse(preds, labels).unwrap_or(f64::NAN);
    (
        loss,
        m,
        pearson(preds, labels).ok(),
        spearman(preds, labels).ok(),
    )
}

fn clamp_scores(raw: &[f64], spec: &ModelSpec) -> Vec<f64> {
    raw.iter()
        .map(|s| s.clamp(spec.output_clamp[0], spec.output_clamp[1]))
        .collect()
}

struct FoldData<'a> {
    index: usize,
    manifest: &'a Manifest,
    pairs: &'a [Result<PairedInput, String>],
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
}

fn gather<'a>(
    pairs: &'a [Result<PairedInput, String>],
    idx: &[usize],
) -> Result<Vec<&'a PairedInput>> {
    idx.iter()
        .map(|&i| {
            pairs[i]
                .as_ref()
                .map_err(|e| Error::State(format!("entry {i} unusable: {e}")))
        })
        .collect()
}

fn run_fold(
    fold: &FoldData<'_>,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    observer: &mut dyn FnMut(&TrainEvent<'_>),
) -> Result<FoldResult> {
    let train_raw = gather(fold.pairs, &fold.train_idx)?;
    let val_raw = gather(fold.pairs, &fold.val_idx)?;
    if train_raw.is_empty() || val_raw.is_empty() {
        return Err(Error::State(format!(
            "fold {} has an empty split",
            fold.index
        )));
    }
    observer(&TrainEvent::NormStats {
        fold: fold.index,
        entries: &fold.train_idx,
    });
    let stats = compute_norm_stats(train_raw.iter().copied())?;
    let norm = |v: &[&PairedInput]| -> Result<Vec<PairedInput>> {
        v.iter().map(|p| normalize_pair(p, &stats)).collect()
    };
    let train_pairs = norm(&train_raw)?;
    let val_pairs = norm(&val_raw)?;
    let entries = &fold.manifest.entries;
    let train_labels: Vec<f64> = fold.train_idx.iter().map(|&i| entries[i].label).collect();
    let val_labels: Vec<f64> = fold.val_idx.iter().map(|&i| entries[i].label).collect();
    let val_refs: Vec<&PairedInput> = val_pairs.iter().collect();

    let spec = config.model_spec();
    let model_seed = derive_seed(config.seed, &[fold.index as u64, 0]);
    let mut model = Model::<f32>::new(&spec, model_seed)?;
    model.reseed_dropout(derive_seed(config.seed, &[fold.index as u64, 1]));
    let mut trainer = Trainer::new(model, config.learning_rate, config.smooth_l1_beta);

    let max_steps = config.max_steps.unwrap_or(usize::MAX);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if trainer.steps() >= max_steps {
            break;
        }
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            &[fold.index as u64, 2, epoch as u64],
        )));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            if trainer.steps() >= max_steps {
                break;
            }
            let manifest_idx: Vec<usize> = batch.iter().map(|&i| fold.train_idx[i]).collect();
            observer(&TrainEvent::Batch {
                fold: fold.index,
                epoch,
                entries: &manifest_idx,
            });
            let x: Vec<&PairedInput> = batch.iter().map(|&i| &train_pairs[i]).collect();
            let y: Vec<f64> = batch.iter().map(|&i| train_labels[i]).collect();
            loss_sum += trainer.step(&x, &y)? * batch.len() as f64;
            seen += batch.len();
        }
        let preds = clamp_scores(&predict_raw(trainer.model(), &val_refs)?, &spec);
        let (val_loss, val_mse, val_rp, val_rs) =
            val_metrics(&preds, &val_labels, config.smooth_l1_beta);
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            train_loss: if seen > 0 {
                loss_sum / seen as f64
            } else {
                f64::NAN
            },
            val_loss,
            val_mse,
            val_rp,
            val_rs,
        };
        log::info!(
            "fold {} epoch {}: train {:.4} val {:.4} mse {:.4}",
            fold.index,
            metrics.epoch,
            metrics.train_loss,
            metrics.val_loss,
            metrics.val_mse
        );
        observer(&TrainEvent::Epoch {
            fold: fold.index,
            metrics: &metrics,
        });
        epochs.push(metrics);
    }

    let steps = trainer.steps();
    let model = trainer.into_model();
    let preds = clamp_scores(&predict_raw(&model, &val_refs)?, &spec);
    let (_, val_mse, val_rp, val_rs) = val_metrics(&preds, &val_labels, config.smooth_l1_beta);
    let checkpoint = Checkpoint::from_model(
        &model,
        stats,
        config.gammatone.clone(),
        TrainingMetadata {
            seed: config.seed,
            epochs: epochs.len(),
            fold: Some(fold.index),
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            smooth_l1_beta: config.smooth_l1_beta,
            steps,
        },
    );
    let checkpoint_path = match out_dir {
        Some(dir) => {
            let p = dir.join(format!("fold{}.ckpt", fold.index));
            checkpoint.save(&p)?;
            Some(p)
        }
        None => None,
    };
    let excerpts = |idx: &[usize]| idx.iter().map(|&i| entries[i].excerpt_id.clone()).collect();
    Ok(FoldResult {
        fold_index: fold.index,
        steps,
        val_mse,
        val_rp,
        val_rs,
        train_excerpts: excerpts(&fold.train_idx),
        val_excerpts: excerpts(&fold.val_idx),
        predictions: fold
            .val_idx
            .iter()
            .zip(&preds)
            .map(|(&i, &prediction)| HeldOutPrediction {
                entry: entries[i].clone(),
                prediction,
            })
            .collect(),
        epochs,
        checkpoint,
        checkpoint_path,
    })
}

/// k-fold cross-validated training. Checkpoints, fold reports and held-out
/// predictions are written to `out_dir` when given.
pub fn train(
    manifest: &Manifest,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainingReport> {
    train_observed(manifest, config, out_dir, &mut |_| {})
}

/// [`train`] with a callback observing which entries feed statistics and updates.
pub fn train_observed(
    manifest: &Manifest,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    observer: &mut dyn FnMut(&TrainEvent<'_>),
) -> Result<TrainingReport> {
    config.validate()?;
    if manifest.is_empty() {
        return Err(Error::Argument("empty manifest".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let splits = split_folds(manifest, config.k_folds, config.seed)?;
    let frontend = GammatoneFrontend::new(config.gammatone.clone())?;
    let pairs = load_pairs(&manifest.entries, &frontend);
    for (e, p) in manifest.entries.iter().zip(&pairs) {
        if let Err(msg) = p {
            log::warn!("{}: {msg}", e.deg_path.display());
        }
    }

    let mut report = TrainingReport::default();
    for split in &splits {
        if config
            .folds
            .as_ref()
            .is_some_and(|f| !f.contains(&split.fold_index))
        {
            continue;
        }
        let select = |ids: &BTreeSet<String>| -> Vec<usize> {
            (0..manifest.len())
                .filter(|&i| pairs[i].is_ok() && ids.contains(&manifest.entries[i].excerpt_id))
                .collect()
        };
        let fold = FoldData {
            index: split.fold_index,
            manifest,
            pairs: &pairs,
            train_idx: select(&split.train_ids),
            val_idx: select(&split.val_ids),
        };
        match run_fold(&fold, config, out_dir, observer) {
            Ok(r) => report.folds.push(r),
            Err(e) => {
                log::error!("fold {} failed: {e}", split.fold_index);
                report.failures.push(FoldFailure {
                    fold_index: split.fold_index,
                    error: e.to_string(),
                });
            }
        }
    }
    if let Some(dir) = out_dir {
        write_reports(&report, config, dir)?;
    }
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:.6}"))
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `fold_report.csv` (per fold and epoch, plus the mean over folds
/// at each epoch under fold `mean`), `heldout_predictions.csv` and `summary.txt`.
pub fn write_reports(report: &TrainingReport, config: &TrainConfig, dir: &Path) -> Result<()> {
    let path = dir.join("fold_report.csv");
    let err = csv_err(&path);
    let mut w = csv::Writer::from_path(&path).map_err(&err)?;
    w.write_record([
        "fold",
        "epoch",
        "train_loss",
        "val_loss",
        "val_mse",
        "val_rp",
        "val_rs",
    ])
    .map_err(&err)?;
    for f in &report.folds {
        for e in &f.epochs {
            w.write_record([
                f.fold_index.to_string(),
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                format!("{:.6}", e.val_loss),
                format!("{:.6}", e.val_mse),
                opt(e.val_rp),
                opt(e.val_rs),
            ])
            .map_err(&err)?;
        }
    }
    let max_epochs = report
        .folds
        .iter()
        .map(|f| f.epochs.len())
        .max()
        .unwrap_or(0);
    for epoch in 0..max_epochs {
        let at = || report.folds.iter().filter_map(move |f| f.epochs.get(epoch));
        w.write_record([
            "mean".to_string(),
            (epoch + 1).to_string(),
            opt(mean_of(at().map(|e| Some(e.train_loss)))),
            opt(mean_of(at().map(|e| Some(e.val_loss)))),
            opt(mean_of(at().map(|e| Some(e.val_mse)))),
            opt(mean_of(at().map(|e| e.val_rp))),
            opt(mean_of(at().map(|e| e.val_rs))),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("heldout_predictions.csv");
    let err = csv_err(&path);
    let mut w = csv::Writer::from_path(&path).map_err(&err)?;
    w.write_record([
        "fold",
        "deg_path",
        "excerpt_id",
        "codec",
        "bitrate_kbps",
        "label",
        "prediction",
    ])
    .map_err(&err)?;
    for f in &report.folds {
        for p in &f.predictions {
            w.write_record([
                f.fold_index.to_string(),
                p.entry.deg_path.display().to_string(),
                p.entry.excerpt_id.clone(),
                p.entry.codec.clone(),
                p.entry
                    .bitrate_kbps
                    .map(|b| b.to_string())
                    .unwrap_or_default(),
                format!("{}", p.entry.label),
                format!("{:.6}", p.prediction),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("summary.txt");
    std::fs::write(&path, summary(report, config)).map_err(|e| Error::io(&path, e))
}

/// Human-readable run summary.
pub fn summary(report: &TrainingReport, config: &TrainConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "folds {} | lr {} | batch {} | epochs {} | beta {} | seed {} | width {}",
        config.k_folds,
        config.learning_rate,
        config.batch_size,
        config.epochs,
        config.smooth_l1_beta,
        config.seed,
        config
            .width
            .map_or_else(|| "full".to_string(), |w| w.to_string())
    );
    let _ = writeln!(
        s,
        "{:>5} {:>7} {:>10} {:>10} {:>10}",
        "fold", "steps", "val_mse", "val_rp", "val_rs"
    );
    for f in &report.folds {
        let _ = writeln!(
            s,
            "{:>5} {:>7} {:>10.4} {:>10} {:>10}",
            f.fold_index,
            f.steps,
            f.val_mse,
            opt(f.val_rp),
            opt(f.val_rs)
        );
    }
    let _ = writeln!(
        s,
        " mean {:>7} {:>10} {:>10} {:>10}",
        "",
        opt(mean_of(report.folds.iter().map(|f| Some(f.val_mse)))),
        opt(mean_of(report.folds.iter().map(|f| f.val_rp))),
        opt(mean_of(report.folds.iter().map(|f| f.val_rs)))
    );
    for fail in &report.failures {
        let _ = writeln!(s, "fold {} FAILED: {}", fail.fold_index, fail.error);
    }
    let _ = writeln!(
        s,
        "Results are reproducible for a fixed seed on one platform; other CPUs or \
         BLAS kernels may change low-order float bits."
    );
    s
}
