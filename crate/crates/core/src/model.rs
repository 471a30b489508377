//! The full drug–protein network: protein CNN, GraphNet, concat, head.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::classifier::ClassifierHead;
use crate::error::{Error, Result};
use crate::graphnet::{GraphBatch, GraphNet};
use crate::nn::{Dropout, Fwd};
use crate::protein::ProteinEncoder;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub protein_dim: usize,
    pub protein_channels: usize,
    pub protein_kernel: usize,
    pub graph_layers: usize,
    pub graph_hidden: usize,
    pub head_layers: usize,
    pub head_hidden: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            protein_dim: 64,
            protein_channels: 8,
            protein_kernel: 3,
            graph_layers: 3,
            graph_hidden: 256,
            head_layers: 3,
            head_hidden: 512,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        crate::autodiff::check_rate(self.dropout)?;
        let dims = [
            self.protein_dim,
            self.protein_channels,
            self.graph_layers,
            self.graph_hidden,
            self.head_layers,
            self.head_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions and depths must be positive".into()));
        }
        if self.protein_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "protein kernel size must be odd, got {}",
                self.protein_kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DpiModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub protein: ProteinEncoder,
    pub graph: GraphNet,
    pub head: ClassifierHead,
}

impl DpiModel {
    /// Fresh weights drawn from a ChaCha stream seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let protein = ProteinEncoder::new(
            &mut store,
            config.protein_dim,
            config.protein_channels,
            config.protein_kernel,
            &mut rng,
        )?;
        let graph = GraphNet::new(&mut store, config.graph_layers, config.graph_hidden, &mut rng)?;
        let head = ClassifierHead::new(
            &mut store,
            config.protein_dim + graph.out_dim(),
            config.head_hidden,
            config.head_layers,
            &mut rng,
        )?;
        Ok(Self {
            config,
            store,
            protein,
            graph,
            head,
        })
    }

    /// Class probabilities `[B × 2]` for `B` (drug, protein) pairs.
    pub fn forward(&self, f: &mut Fwd, graphs: &GraphBatch, proteins: Var) -> Result<Var> {
        let b = f.tape.value(proteins).rows();
        if b != graphs.n_graphs {
            return Err(Error::shape("pair batch", &[graphs.n_graphs], &[b]));
        }
        let x_p = self.protein.forward(f, proteins)?;
        let x_d = self.graph.encode(f, graphs)?;
        let x = f.tape.concat_cols(&[x_p, x_d])?;
        self.head.predict(f, x)
    }

    /// One forward pass outside of training.
    pub fn predict(
        &self,
        graphs: &GraphBatch,
        proteins: &Tensor,
        dropout: Dropout,
        rng: &mut dyn RngCore,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut f = Fwd::new(&mut tape, &self.store, dropout, rng);
        let x = f.tape.input(proteins.clone());
        let p = self.forward(&mut f, graphs, x)?;
        Ok(tape.value(p).clone())
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}
