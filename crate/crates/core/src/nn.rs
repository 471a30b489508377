//! Layer plumbing shared by the encoders and the head.

use rand::{Rng, RngCore};

use crate::autodiff::{check_rate, DropoutMode, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Dropout mode plus the Bernoulli rate it runs at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub mode: DropoutMode,
    pub rate: f64,
}

impl Dropout {
    pub const OFF: Dropout = Dropout {
        mode: DropoutMode::Off,
        rate: 0.0,
    };

    pub fn new(mode: DropoutMode, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self { mode, rate })
    }

    pub fn train(rate: f64) -> Result<Self> {
        Self::new(DropoutMode::Train, rate)
    }

    pub fn mc(rate: f64) -> Result<Self> {
        Self::new(DropoutMode::McSample, rate)
    }

    pub fn is_active(&self) -> bool {
        self.mode != DropoutMode::Off && self.rate > 0.0
    }
}

/// Everything a forward pass needs besides the inputs: the tape, the
/// parameters bound onto it (indexed by `ParamId`), the dropout setting and
/// the mask RNG.
pub struct Fwd<'a> {
    pub tape: &'a mut Tape,
    pub params: Vec<Var>,
    pub dropout: Dropout,
    pub rng: &'a mut dyn RngCore,
}

impl<'a> Fwd<'a> {
    /// Binds every parameter in `store` onto `tape`.
    pub fn new(
        tape: &'a mut Tape,
        store: &ParamStore,
        dropout: Dropout,
        rng: &'a mut dyn RngCore,
    ) -> Self {
        let params = store.iter().map(|(id, _)| tape.param(store, id)).collect();
        Self {
            tape,
            params,
            dropout,
            rng,
        }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        if !self.dropout.is_active() {
            return Ok(x);
        }
        let Dropout { mode, rate } = self.dropout;
        self.tape.dropout_sampled(x, rate, mode, &mut *self.rng)
    }

    /// `(ParamId, Var)` pairs for the L2 penalty.
    pub fn bound(&self) -> Vec<(ParamId, Var)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, &v)| (ParamId(i), v))
            .collect()
    }
}

/// Uniform Kaiming init: U(-b, b) with b = sqrt(6 / fan_in), i.e. standard
/// deviation sqrt(2 / fan_in).
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            kaiming_uniform(&[fan_in, fan_out], fan_in, rng),
            true,
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]), false);
        Self {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let (w, b) = (f.p(self.w), f.p(self.b));
        f.tape.linear(x, w, b)
    }
}
