//! Noise robustness, training-size and confidence–accuracy analyses.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::bayes::{uncertainty, confidence_score, McConfig, McPrediction, UncertaintyKind};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, roc_auc};
use crate::model::{DpiModel, ModelConfig};
use crate::tensor::Tensor;
use crate::train::{mc_scores, predict_mc, predict_plain, train, TrainConfig};

pub const DEFAULT_SIGMAS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_FRACTIONS: [f64; 3] = [1.0, 0.5, 0.25];
/// The smallest training fraction must still fill this many batches.
pub const MIN_BATCHES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub roc_auc_mc: f64,
    pub roc_auc_plain: f64,
}

/// One standard-normal draw per (pair, feature), shared by every σ so the
/// sweep only varies the scale.
pub fn noise_field(rows: usize, dim: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(vec![rows, dim], data)
}

/// Test-time Gaussian noise on the pooled protein embeddings. σ = 0 skips
/// the perturbation entirely.
pub fn noise_sweep(
    model: &DpiModel,
    data: &Dataset,
    test: &[usize],
    sigmas: &[f64],
    mc: &McConfig,
    noise_seed: u64,
) -> Result<Vec<NoiseRow>> {
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("noise level {s} must be finite and non-negative")));
    }
    let labels = data.labels(test);
    let z = noise_field(test.len(), data.protein_dim(), noise_seed)?;
    sigmas
        .iter()
        .map(|&sigma| {
            let scaled = (sigma > 0.0).then(|| z.map(|v| v * sigma));
            let noise = scaled.as_ref();
            let plain = predict_plain(model, data, test, noise)?;
            let mcp = predict_mc(model, data, test, mc, noise)?;
            Ok(NoiseRow {
                sigma,
                roc_auc_mc: roc_auc(&mc_scores(&mcp), &labels)?,
                roc_auc_plain: roc_auc(&plain, &labels)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeRow {
    pub fraction: f64,
    pub train_pairs: usize,
    pub epistemic: f64,
    pub aleatoric: f64,
    pub test_roc_auc: f64,
}

/// Mean uncertainty traces over a prediction set.
pub fn mean_traces(preds: &[McPrediction]) -> (f64, f64) {
    let n = preds.len() as f64;
    let e = preds.iter().map(|p| uncertainty(p, UncertaintyKind::Epistemic)).sum::<f64>();
    let a = preds.iter().map(|p| uncertainty(p, UncertaintyKind::Aleatoric)).sum::<f64>();
    (e / n, a / n)
}

/// Trains one model per fraction on nested prefixes of one seeded shuffle
/// of the training set; validation and test sets stay fixed.
pub fn size_sweep(
    data: &Dataset,
    split: &Split,
    fractions: &[f64],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mc: &McConfig,
) -> Result<Vec<SizeRow>> {
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::Config("fractions must lie in (0, 1]".into()));
    }
    let mut order = split.train.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(train_cfg.seed));
    let min_pairs = MIN_BATCHES * train_cfg.batch_size;
    let labels = data.labels(&split.test);
    fractions
        .iter()
        .map(|&fraction| {
            let n = ((order.len() as f64 * fraction).round() as usize).min(order.len());
            if n < min_pairs {
                return Err(Error::Data(format!(
                    "fraction {fraction} leaves {n} training pairs, fewer than {MIN_BATCHES} batches of {}",
                    train_cfg.batch_size
                )));
            }
            let sub = Split {
                train: order[..n].to_vec(),
                valid: split.valid.clone(),
                test: split.test.clone(),
            };
            let out = train(model_cfg, train_cfg, data, &sub)?;
            let preds = predict_mc(&out.model, data, &split.test, mc, None)?;
            let (epistemic, aleatoric) = mean_traces(&preds);
            Ok(SizeRow {
                fraction,
                train_pairs: n,
                epistemic,
                aleatoric,
                test_roc_auc: roc_auc(&mc_scores(&preds), &labels)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub kind: UncertaintyKind,
    pub percentile: u32,
    pub accuracy: f64,
}

/// Accuracy over the top-p% most confident points for p = 10, 20, ..., 100.
/// Ties keep input order.
pub fn confidence_curve(preds: &[McPrediction], labels: &[u8], kind: UncertaintyKind) -> Result<Vec<CurvePoint>> {
    if preds.is_empty() {
        return Err(Error::Data("confidence curve needs a nonempty test set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Metric(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let conf: Vec<f64> = preds.iter().map(|p| confidence_score(p, kind)).collect();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]));
    let n = preds.len();
    (1..=10)
        .map(|k| {
            let percentile = 10 * k as u32;
            let take = ((n * k).div_ceil(10)).max(1);
            let s: Vec<f64> = order[..take].iter().map(|&i| preds[i].mean[1]).collect();
            let l: Vec<u8> = order[..take].iter().map(|&i| labels[i]).collect();
            Ok(CurvePoint {
                kind,
                percentile,
                accuracy: accuracy(&s, &l, 0.5)?,
            })
        })
        .collect()
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut s = String::from("sigma,roc_auc_mc,roc_auc_plain\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.sigma, r.roc_auc_mc, r.roc_auc_plain);
    }
    s
}

pub fn size_csv(rows: &[SizeRow]) -> String {
    let mut s = String::from("fraction,epistemic,aleatoric,train_pairs,test_roc_auc\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.fraction, r.epistemic, r.aleatoric, r.train_pairs, r.test_roc_auc
        );
    }
    s
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("kind,percentile,accuracy\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.kind.name(), p.percentile, p.accuracy);
    }
    s
}
