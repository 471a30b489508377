//! Classification metrics.

use serde::Serialize;

use crate::error::{Error, Result};

/// Mann–Whitney AUC from mid-ranks; tied positive/negative pairs count ½.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("ROC-AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 2·rank keeps every quantity an exact integer.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share the midrank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                twice_rank_sum += twice_mid;
            }
        }
        i = j + 1;
    }
    let p = pos as u64;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * neg as u64) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    /// `None` when nothing is predicted positive.
    pub precision: Option<f64>,
    /// `None` when there are no positives.
    pub recall: Option<f64>,
    pub accuracy: f64,
}

pub fn precision_recall_accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Prf> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Metric("no predictions".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(Prf {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        accuracy: (tp + tn) as f64 / scores.len() as f64,
    })
}

/// Fraction correct at `threshold`.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    precision_recall_accuracy(scores, labels, threshold).map(|p| p.accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    SeenProteinSeenDrug,
    SeenProteinUnseenDrug,
    UnseenProteinSeenDrug,
    UnseenProteinUnseenDrug,
}

impl Subset {
    pub const ALL: [Subset; 4] = [
        Self::SeenProteinSeenDrug,
        Self::SeenProteinUnseenDrug,
        Self::UnseenProteinSeenDrug,
        Self::UnseenProteinUnseenDrug,
    ];

    pub fn classify(protein_seen: bool, drug_seen: bool) -> Self {
        match (protein_seen, drug_seen) {
            (true, true) => Self::SeenProteinSeenDrug,
            (true, false) => Self::SeenProteinUnseenDrug,
            (false, true) => Self::UnseenProteinSeenDrug,
            (false, false) => Self::UnseenProteinUnseenDrug,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SeenProteinSeenDrug => "seen_protein_seen_drug",
            Self::SeenProteinUnseenDrug => "seen_protein_unseen_drug",
            Self::UnseenProteinSeenDrug => "unseen_protein_seen_drug",
            Self::UnseenProteinUnseenDrug => "unseen_protein_unseen_drug",
        }
    }
}

/// Partitions test positions by whether their protein and drug keys occur
/// in the training keys. Returns index lists in `Subset::ALL` order.
pub fn subset_breakdown<'a>(
    test: impl IntoIterator<Item = (&'a str, &'a str)>,
    train_proteins: &std::collections::HashSet<String>,
    train_drugs: &std::collections::HashSet<String>,
) -> [Vec<usize>; 4] {
    let mut out: [Vec<usize>; 4] = Default::default();
    for (i, (p, d)) in test.into_iter().enumerate() {
        let s = Subset::classify(train_proteins.contains(p), train_drugs.contains(d));
        out[s as usize].push(i);
    }
    out
}

/// Everything reported for one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: usize,
    pub positives: usize,
    /// `None` when only one class is present.
    pub roc_auc: Option<f64>,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<Self> {
        let prf = precision_recall_accuracy(scores, labels, 0.5)?;
        let roc_auc = match roc_auc(scores, labels) {
            Ok(v) => Some(v),
            Err(Error::Metric(m)) if m.contains("both classes") => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            n: scores.len(),
            positives: labels.iter().filter(|&&l| l == 1).count(),
            roc_auc,
            accuracy: prf.accuracy,
            precision: prf.precision,
            recall: prf.recall,
        })
    }
}
