//! MC-dropout predictive mean and the epistemic/aleatoric split.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphnet::GraphBatch;
use crate::model::DpiModel;
use crate::nn::Dropout;
use crate::tensor::Tensor;

pub type Mat2 = [[f64; 2]; 2];

/// Rows of a sample matrix must sum to one within this.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 30,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("MC sample count must be at least 1".into()));
        }
        crate::autodiff::check_rate(self.dropout_rate)
    }

    /// Independent mask stream for pass `t`.
    pub fn stream(&self, t: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McPrediction {
    pub samples: Vec<[f64; 2]>,
    pub mean: [f64; 2],
    pub epistemic: Mat2,
    pub aleatoric: Mat2,
}

impl McPrediction {
    pub fn from_samples(samples: Vec<[f64; 2]>) -> Result<Self> {
        let (epistemic, aleatoric) = decompose_variance(&samples)?;
        let mean = sample_mean(&samples);
        Ok(Self {
            samples,
            mean,
            epistemic,
            aleatoric,
        })
    }
}

fn sample_mean(samples: &[[f64; 2]]) -> [f64; 2] {
    let t = samples.len() as f64;
    let mut m = [0.0; 2];
    for s in samples {
        m[0] += s[0];
        m[1] += s[1];
    }
    [m[0] / t, m[1] / t]
}

/// `epistemic = (1/T) Σ (ŷ - ȳ)(ŷ - ȳ)ᵀ`, `aleatoric = (1/T) Σ diag(ŷ) - ŷŷᵀ`.
pub fn decompose_variance(samples: &[[f64; 2]]) -> Result<(Mat2, Mat2)> {
    if samples.is_empty() {
        return Err(Error::Data("no MC samples to decompose".into()));
    }
    for (t, s) in samples.iter().enumerate() {
        if !s.iter().all(|v| v.is_finite()) || (s[0] + s[1] - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Data(format!(
                "sample {t} is not a probability pair: {s:?}"
            )));
        }
    }
    let t = samples.len() as f64;
    let mean = sample_mean(samples);
    let mut epi = [[0.0; 2]; 2];
    let mut ale = [[0.0; 2]; 2];
    for s in samples {
        let d = [s[0] - mean[0], s[1] - mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                epi[i][j] += d[i] * d[j];
                let diag = if i == j { s[i] } else { 0.0 };
                ale[i][j] += diag - s[i] * s[j];
            }
        }
    }
    for row in epi.iter_mut().chain(ale.iter_mut()) {
        for v in row.iter_mut() {
            *v /= t;
        }
    }
    Ok((epi, ale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Epistemic,
    Aleatoric,
    Total,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 3] = [Self::Epistemic, Self::Aleatoric, Self::Total];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Epistemic => "epistemic",
            Self::Aleatoric => "aleatoric",
            Self::Total => "total",
        }
    }
}

impl std::str::FromStr for UncertaintyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epistemic" => Ok(Self::Epistemic),
            "aleatoric" => Ok(Self::Aleatoric),
            "total" => Ok(Self::Total),
            _ => Err(Error::Config(format!("unknown uncertainty kind {s:?}"))),
        }
    }
}

pub fn trace(m: &Mat2) -> f64 {
    m[0][0] + m[1][1]
}

pub fn uncertainty(p: &McPrediction, kind: UncertaintyKind) -> f64 {
    match kind {
        UncertaintyKind::Epistemic => trace(&p.epistemic),
        UncertaintyKind::Aleatoric => trace(&p.aleatoric),
        UncertaintyKind::Total => trace(&p.epistemic) + trace(&p.aleatoric),
    }
}

/// Higher is more confident; only the ordering is meaningful.
pub fn confidence_score(p: &McPrediction, kind: UncertaintyKind) -> f64 {
    -uncertainty(p, kind)
}

/// Runs `T` stochastic passes over the batch. Pass `t` draws its masks from
/// stream `(seed, t)`, and per-pair means are summed in pass order.
pub fn mc_predict(
    model: &DpiModel,
    graphs: &GraphBatch,
    proteins: &Tensor,
    cfg: &McConfig,
) -> Result<Vec<McPrediction>> {
    cfg.validate()?;
    let dropout = Dropout::mc(cfg.dropout_rate)?;
    let b = graphs.n_graphs;
    let mut samples: Vec<Vec<[f64; 2]>> = vec![Vec::with_capacity(cfg.samples); b];
    for t in 0..cfg.samples {
        let mut rng = cfg.stream(t);
        let p = model.predict(graphs, proteins, dropout, &mut rng)?;
        for (i, s) in samples.iter_mut().enumerate() {
            let r = p.row(i);
            s.push([r[0], r[1]]);
        }
    }
    samples.into_iter().map(McPrediction::from_samples).collect()
}
