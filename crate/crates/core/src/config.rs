//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::bayes::McConfig;
use crate::error::{Error, Result};
use crate::experiments::{DEFAULT_FRACTIONS, DEFAULT_SIGMAS};
use crate::model::ModelConfig;
use crate::protein::StubEmbedder;
use crate::train::TrainConfig;

/// Parses `key = value` lines; `#` starts a comment line. Duplicate keys
/// are rejected.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got {line:?}", i + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| num::<f64>(key, s.trim()))
        .collect::<Result<Vec<_>>>()
        .and_then(|l| {
            if l.is_empty() {
                Err(Error::Config(format!("{key} needs at least one value")))
            } else {
                Ok(l)
            }
        })
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Every tunable in one place.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(skip)]
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mc_samples: usize,
    pub mc_dropout_rate: f64,
    /// Defaults to `train.seed`.
    pub mc_seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub stub_seed: u64,
    pub noise_seed: u64,
    pub sigmas: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mc_samples: 30,
            mc_dropout_rate: 0.1,
            mc_seed: None,
            split_seed: None,
            stub_seed: 0,
            noise_seed: 0,
            sigmas: DEFAULT_SIGMAS.to_vec(),
            fractions: DEFAULT_FRACTIONS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_kv(text)? {
            c.set(&k, &v)?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "protein_dim" => m.protein_dim = num(key, v)?,
            "protein_channels" => m.protein_channels = num(key, v)?,
            "protein_kernel" => m.protein_kernel = num(key, v)?,
            "graph_layers" => m.graph_layers = num(key, v)?,
            "graph_hidden" => m.graph_hidden = num(key, v)?,
            "head_layers" => m.head_layers = num(key, v)?,
            "head_hidden" => m.head_hidden = num(key, v)?,
            "dropout" => m.dropout = num(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "lambda" => t.lambda = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "val_mc_samples" => t.val_mc_samples = num(key, v)?,
            "mc_samples" => self.mc_samples = num(key, v)?,
            "mc_dropout_rate" => self.mc_dropout_rate = num(key, v)?,
            "mc_seed" => self.mc_seed = Some(num(key, v)?),
            "split_seed" => self.split_seed = Some(num(key, v)?),
            "stub_seed" => self.stub_seed = num(key, v)?,
            "noise_seed" => self.noise_seed = num(key, v)?,
            "sigmas" => self.sigmas = list(key, v)?,
            "fractions" => self.fractions = list(key, v)?,
            "residue_conv" => {
                if num::<bool>(key, v)? {
                    return Err(Error::Config(
                        "residue-axis convolution is not implemented; only feature-axis convolution is available".into(),
                    ));
                }
            }
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.mc().validate()
    }

    pub fn mc(&self) -> McConfig {
        McConfig {
            samples: self.mc_samples,
            dropout_rate: self.mc_dropout_rate,
            seed: self.mc_seed.unwrap_or(self.train.seed),
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.train.seed)
    }

    pub fn stub(&self) -> StubEmbedder {
        StubEmbedder {
            dim: self.model.protein_dim,
            seed: self.stub_seed,
        }
    }

    /// Canonical text form; `from_text(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("protein_dim", m.protein_dim.to_string());
        kv("protein_channels", m.protein_channels.to_string());
        kv("protein_kernel", m.protein_kernel.to_string());
        kv("graph_layers", m.graph_layers.to_string());
        kv("graph_hidden", m.graph_hidden.to_string());
        kv("head_layers", m.head_layers.to_string());
        kv("head_hidden", m.head_hidden.to_string());
        kv("dropout", m.dropout.to_string());
        kv("epochs", t.epochs.to_string());
        kv("lr", t.lr.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lambda", t.lambda.to_string());
        kv("seed", t.seed.to_string());
        kv("patience", t.patience.to_string());
        kv("val_mc_samples", t.val_mc_samples.to_string());
        kv("mc_samples", self.mc_samples.to_string());
        kv("mc_dropout_rate", self.mc_dropout_rate.to_string());
        if let Some(v) = self.mc_seed {
            kv("mc_seed", v.to_string());
        }
        if let Some(v) = self.split_seed {
            kv("split_seed", v.to_string());
        }
        kv("stub_seed", self.stub_seed.to_string());
        kv("noise_seed", self.noise_seed.to_string());
        kv("sigmas", join(&self.sigmas));
        kv("fractions", join(&self.fractions));
        s
    }
}
