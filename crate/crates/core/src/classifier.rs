//! Pair features and the fully-connected softmax head.

use rand::Rng;

use crate::autodiff::{ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{Fwd, Linear};

/// `[x_p, x_d]` with the protein vector first.
pub fn concat_features(x_p: &[f64], x_d: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(x_p.len() + x_d.len());
    x.extend_from_slice(x_p);
    x.extend_from_slice(x_d);
    x
}

/// Hidden layers use ReLU then dropout; the output layer feeds softmax
/// directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierHead {
    pub layers: Vec<Linear>,
}

impl ClassifierHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input: usize,
        hidden: usize,
        n_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_layers == 0 || hidden == 0 || input == 0 {
            return Err(Error::Config("classifier head needs positive widths and depth".into()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut fan_in = input;
        for l in 0..n_layers {
            let out = if l + 1 == n_layers { 2 } else { hidden };
            layers.push(Linear::new(store, &format!("head.{l}"), fan_in, out, rng));
            fan_in = out;
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    /// `[B × input]` pair features to `[B × 2]` logits.
    pub fn logits(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let w = f.tape.value(x).cols();
        if w != self.input_dim() {
            return Err(Error::shape("classifier", &[w], &[self.input_dim()]));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(f, h)?;
            if l < last {
                h = f.tape.relu(h);
                h = f.dropout(h)?;
            }
        }
        Ok(h)
    }

    /// Softmax probabilities `[B × 2]`.
    pub fn predict(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let z = self.logits(f, x)?;
        f.tape.softmax_rows(z)
    }
}
