//! Minibatch training with best-by-validation checkpointing, plus batched
//! evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{cross_entropy_l2, Tape};
use crate::bayes::{mc_predict, McConfig, McPrediction};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{roc_auc, subset_breakdown, MetricsReport, Subset};
use crate::model::{DpiModel, ModelConfig};
use crate::nn::{Dropout, Fwd};
use crate::optim::Adam;
use crate::tensor::Tensor;

/// Pairs per inference chunk.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    pub patience: usize,
    /// MC passes for per-epoch validation; 0 uses one deterministic pass.
    pub val_mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.001,
            batch_size: 32,
            lambda: 0.001,
            seed: 0,
            patience: 20,
            val_mc_samples: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.epochs > 200 {
            return Err(Error::Config(format!("epochs must be in 1..=200, got {}", self.epochs)));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch size and patience must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("learning rate and L2 coefficient must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of (summed loss / batch size).
    pub train_loss: f64,
    pub val_roc_auc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from `best_epoch`.
    pub model: DpiModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_roc_auc: f64,
}

/// Derived RNG seeds so init, shuffling and dropout never share a stream.
fn sub_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt
}

pub fn train(model_cfg: &ModelConfig, cfg: &TrainConfig, data: &Dataset, split: &Split) -> Result<TrainOutcome> {
    let model = DpiModel::new(model_cfg.clone(), sub_seed(cfg.seed, 1))?;
    train_model(model, cfg, data, split)
}

/// Trains `model` in place from its current weights.
pub fn train_model(mut model: DpiModel, cfg: &TrainConfig, data: &Dataset, split: &Split) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() || split.valid.is_empty() {
        return Err(Error::Data("training and validation sets must be nonempty".into()));
    }
    if data.protein_dim() != model.config.protein_dim {
        return Err(Error::Config(format!(
            "dataset protein width {} does not match model width {}",
            data.protein_dim(),
            model.config.protein_dim
        )));
    }
    let val_labels = data.labels(&split.valid);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 2));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 3));
    let dropout = Dropout::train(model.config.dropout)?;
    let mut adam = Adam::new(cfg.lr);
    let mut order = split.train.clone();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, crate::autodiff::ParamStore)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let graphs = data.graph_batch(chunk)?;
            let labels = data.labels(chunk);
            let mut tape = Tape::new();
            let mut f = Fwd::new(&mut tape, &model.store, dropout, &mut dropout_rng);
            let x = f.tape.input(data.protein_matrix(chunk)?);
            let p = model.forward(&mut f, &graphs, x)?;
            let bound = f.bound();
            let loss = cross_entropy_l2(f.tape, p, &labels, &model.store, &bound, cfg.lambda)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: batches,
                    records: chunk.to_vec(),
                });
            }
            tape.backward_into(loss, &mut model.store)?;
            adam.step(&mut model.store)?;
            loss_sum += value / chunk.len() as f64;
            batches += 1;
        }
        let scores = if cfg.val_mc_samples == 0 {
            predict_plain(&model, data, &split.valid, None)?
        } else {
            let mc = McConfig {
                samples: cfg.val_mc_samples,
                dropout_rate: model.config.dropout,
                seed: sub_seed(cfg.seed, 4),
            };
            mc_scores(&predict_mc(&model, data, &split.valid, &mc, None)?)
        };
        // single-class validation sets cannot rank; treat as chance
        let val = roc_auc(&scores, &val_labels).unwrap_or(0.5);
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_roc_auc: val,
        });
        if best.as_ref().is_none_or(|b| val > b.1) {
            best = Some((epoch, val, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_roc_auc, store) = best.expect("at least one epoch ran");
    model.store = store;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_roc_auc,
    })
}

/// Additive perturbation of the pooled protein vectors, one row per
/// evaluated pair.
pub type ProteinNoise<'a> = Option<&'a Tensor>;

fn protein_rows(data: &Dataset, chunk: &[usize], noise: ProteinNoise, offset: usize) -> Result<Tensor> {
    let mut x = data.protein_matrix(chunk)?;
    if let Some(z) = noise {
        let d = x.cols();
        if z.cols() != d || z.rows() < offset + chunk.len() {
            return Err(Error::shape("protein noise", z.shape(), x.shape()));
        }
        let zs = &z.data()[offset * d..(offset + chunk.len()) * d];
        for (a, b) in x.data_mut().iter_mut().zip(zs) {
            *a += b;
        }
    }
    Ok(x)
}

/// Class-1 probability from one dropout-free pass.
pub fn predict_plain(model: &DpiModel, data: &Dataset, idx: &[usize], noise: ProteinNoise) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(idx.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (c, chunk) in idx.chunks(EVAL_CHUNK).enumerate() {
        let graphs = data.graph_batch(chunk)?;
        let x = protein_rows(data, chunk, noise, c * EVAL_CHUNK)?;
        let p = model.predict(&graphs, &x, Dropout::OFF, &mut rng)?;
        out.extend((0..chunk.len()).map(|i| p.get2(i, 1)));
    }
    Ok(out)
}

/// MC-dropout predictions, chunk by chunk. Chunk `c` uses seed
/// `mc.seed + c` so results do not depend on anything but the pair order.
pub fn predict_mc(
    model: &DpiModel,
    data: &Dataset,
    idx: &[usize],
    mc: &McConfig,
    noise: ProteinNoise,
) -> Result<Vec<McPrediction>> {
    let mut out = Vec::with_capacity(idx.len());
    for (c, chunk) in idx.chunks(EVAL_CHUNK).enumerate() {
        let graphs = data.graph_batch(chunk)?;
        let x = protein_rows(data, chunk, noise, c * EVAL_CHUNK)?;
        let cfg = McConfig {
            seed: mc.seed.wrapping_add(c as u64),
            ..*mc
        };
        out.extend(mc_predict(model, &graphs, &x, &cfg)?);
    }
    Ok(out)
}

pub fn mc_scores(preds: &[McPrediction]) -> Vec<f64> {
    preds.iter().map(|p| p.mean[1]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetReport {
    pub subset: Subset,
    #[serde(flatten)]
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub overall: MetricsReport,
    pub subsets: Vec<SubsetReport>,
    pub mc_samples: usize,
}

/// Metrics on `idx` with seen/unseen membership taken from the training
/// keys.
pub fn evaluate(
    scores: &[f64],
    data: &Dataset,
    idx: &[usize],
    train_proteins: &std::collections::HashSet<String>,
    train_drugs: &std::collections::HashSet<String>,
    mc_samples: usize,
) -> Result<Evaluation> {
    let labels = data.labels(idx);
    let overall = MetricsReport::compute(scores, &labels)?;
    let parts = subset_breakdown(
        idx.iter()
            .map(|&i| (data.records[i].protein.as_str(), data.records[i].smiles.as_str())),
        train_proteins,
        train_drugs,
    );
    let subsets = Subset::ALL
        .iter()
        .zip(parts)
        .map(|(&subset, part)| {
            let metrics = if part.is_empty() {
                None
            } else {
                let s: Vec<f64> = part.iter().map(|&k| scores[k]).collect();
                let l: Vec<u8> = part.iter().map(|&k| labels[k]).collect();
                Some(MetricsReport::compute(&s, &l)?)
            };
            Ok(SubsetReport { subset, metrics })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        overall,
        subsets,
        mc_samples,
    })
}
