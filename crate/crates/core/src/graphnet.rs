//! Edge-then-node message passing over molecular graphs.
//!
//! A batch of molecules is laid out as one disjoint graph so every layer is
//! a handful of gathers, scatters and matrix products. Edge states are per
//! directed edge; node `i` aggregates the states of its outgoing edges.

use rand::Rng;

use crate::autodiff::{ParamStore, Var};
use crate::error::{Error, Result};
use crate::featurize::{MolGraph, EDGE_DIM, NODE_DIM};
use crate::nn::{Fwd, Linear};
use crate::tensor::Tensor;

/// Disjoint union of several molecular graphs.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub node_feats: Tensor,
    /// `None` when no molecule in the batch has a bond.
    pub edge_feats: Option<Tensor>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Graph index of each node.
    pub node_graph: Vec<usize>,
    /// `1 / out-degree` per node, 0 for isolated nodes.
    pub inv_out_degree: Vec<f64>,
    /// `1 / atom count` per node's graph.
    pub inv_graph_size: Vec<f64>,
}

impl GraphBatch {
    pub fn new(graphs: &[&MolGraph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Data("empty graph batch".into()));
        }
        let n_nodes: usize = graphs.iter().map(|g| g.n).sum();
        let mut node_feats = Vec::with_capacity(n_nodes * NODE_DIM);
        let mut edge_feats = Vec::new();
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        let mut node_graph = Vec::with_capacity(n_nodes);
        let mut out_degree = vec![0usize; n_nodes];
        let mut inv_graph_size = Vec::with_capacity(n_nodes);
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.n == 0 {
                return Err(Error::Data(format!("graph {gi} has no atoms")));
            }
            node_feats.extend_from_slice(&g.node_feats);
            edge_feats.extend_from_slice(&g.edge_feats);
            for &(i, j) in &g.edges {
                src.push(offset + i);
                dst.push(offset + j);
                out_degree[offset + i] += 1;
            }
            node_graph.extend(std::iter::repeat_n(gi, g.n));
            inv_graph_size.extend(std::iter::repeat_n(1.0 / g.n as f64, g.n));
            offset += g.n;
        }
        let edge_feats = if src.is_empty() {
            None
        } else {
            Some(Tensor::new(vec![src.len(), EDGE_DIM], edge_feats)?)
        };
        Ok(Self {
            n_graphs: graphs.len(),
            n_nodes,
            node_feats: Tensor::new(vec![n_nodes, NODE_DIM], node_feats)?,
            edge_feats,
            src,
            dst,
            node_graph,
            inv_out_degree: out_degree
                .iter()
                .map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
                .collect(),
            inv_graph_size,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }
}

/// Node and edge states flowing between layers.
#[derive(Debug, Clone, Copy)]
pub struct GraphState {
    pub nodes: Var,
    pub edges: Option<Var>,
}

impl GraphState {
    pub fn initial(f: &mut Fwd, batch: &GraphBatch) -> Self {
        Self {
            nodes: f.tape.input(batch.node_feats.clone()),
            edges: batch.edge_feats.as_ref().map(|e| f.tape.input(e.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphNetLayer {
    pub edge: Linear,
    pub node: Linear,
}

impl GraphNetLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_v: usize,
        d_e: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            edge: Linear::new(store, &format!("{name}.edge"), d_e + 2 * d_v, d_h, rng),
            node: Linear::new(store, &format!("{name}.node"), d_v + d_h, d_h, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.edge.fan_out
    }

    /// `e'_ij = relu([e_ij, v_i, v_j] W_e + b_e)`, all edges from the same
    /// snapshot of `state`.
    pub fn edge_update(&self, f: &mut Fwd, batch: &GraphBatch, state: GraphState) -> Result<Option<Var>> {
        let Some(e) = state.edges else {
            return Ok(None);
        };
        let vi = f.tape.gather_rows(state.nodes, &batch.src)?;
        let vj = f.tape.gather_rows(state.nodes, &batch.dst)?;
        let x = f.tape.concat_cols(&[e, vi, vj])?;
        let z = self.edge.forward(f, x)?;
        Ok(Some(f.tape.relu(z)))
    }

    /// `v'_i = relu([v_i, Σ_j e'_ij] W_v + b_v)`; isolated nodes get a zero
    /// message.
    pub fn node_update(
        &self,
        f: &mut Fwd,
        batch: &GraphBatch,
        nodes: Var,
        new_edges: Option<Var>,
    ) -> Result<Var> {
        let msg = match new_edges {
            Some(e) => f.tape.scatter_add_rows(e, &batch.src, batch.n_nodes)?,
            None => f.tape.constant(Tensor::zeros(&[batch.n_nodes, self.hidden()])),
        };
        let x = f.tape.concat_cols(&[nodes, msg])?;
        let z = self.node.forward(f, x)?;
        Ok(f.tape.relu(z))
    }

    /// Edge update, node update, then dropout on both state sets.
    pub fn forward(&self, f: &mut Fwd, batch: &GraphBatch, state: GraphState) -> Result<GraphState> {
        let edges = self.edge_update(f, batch, state)?;
        let nodes = self.node_update(f, batch, state.nodes, edges)?;
        let nodes = f.dropout(nodes)?;
        let edges = edges.map(|e| f.dropout(e)).transpose()?;
        Ok(GraphState { nodes, edges })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNet {
    pub layers: Vec<GraphNetLayer>,
    pub hidden: usize,
}

impl GraphNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, n_layers: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if n_layers == 0 || hidden == 0 {
            return Err(Error::Config("graphnet needs at least one layer and a nonzero width".into()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (d_v, d_e) = if l == 0 { (NODE_DIM, EDGE_DIM) } else { (hidden, hidden) };
            layers.push(GraphNetLayer::new(store, &format!("graph.{l}"), d_v, d_e, hidden, rng));
        }
        Ok(Self { layers, hidden })
    }

    /// Width of the drug vector.
    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    /// `x_d = mean_i [v_i, ē_i]` per graph, where `ē_i` averages the
    /// outgoing edge states of node `i`.
    pub fn readout(&self, f: &mut Fwd, batch: &GraphBatch, state: GraphState) -> Result<Var> {
        let ebar = match state.edges {
            Some(e) => {
                let s = f.tape.scatter_add_rows(e, &batch.src, batch.n_nodes)?;
                f.tape.scale_rows(s, &batch.inv_out_degree)?
            }
            None => {
                let w = f.tape.value(state.nodes).cols();
                f.tape.constant(Tensor::zeros(&[batch.n_nodes, w]))
            }
        };
        let h = f.tape.concat_cols(&[state.nodes, ebar])?;
        let h = f.tape.scale_rows(h, &batch.inv_graph_size)?;
        f.tape.scatter_add_rows(h, &batch.node_graph, batch.n_graphs)
    }

    /// Drug vectors `[n_graphs × 2·hidden]`.
    pub fn encode(&self, f: &mut Fwd, batch: &GraphBatch) -> Result<Var> {
        let mut state = GraphState::initial(f, batch);
        for layer in &self.layers {
            state = layer.forward(f, batch, state)?;
        }
        self.readout(f, batch, state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::featurize::featurize_smiles;
    use crate::nn::Dropout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_layer(store: &mut ParamStore, we: Vec<f64>, wv: Vec<f64>, d_v: usize, d_e: usize) -> GraphNetLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = GraphNetLayer::new(store, "t", d_v, d_e, 1, &mut rng);
        store.set_value(l.edge.w, Tensor::new(vec![we.len(), 1], we).unwrap()).unwrap();
        store.set_value(l.node.w, Tensor::new(vec![wv.len(), 1], wv).unwrap()).unwrap();
        l
    }

    fn toy_batch(n: usize, edges: &[(usize, usize)]) -> GraphBatch {
        let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let mut deg = vec![0; n];
        for &s in &src {
            deg[s] += 1;
        }
        GraphBatch {
            n_graphs: 1,
            n_nodes: n,
            node_feats: Tensor::zeros(&[n, NODE_DIM]),
            edge_feats: None,
            src,
            dst: edges.iter().map(|e| e.1).collect(),
            node_graph: vec![0; n],
            inv_out_degree: deg.iter().map(|&d: &usize| if d == 0 { 0.0 } else { 1.0 / d as f64 }).collect(),
            inv_graph_size: vec![1.0 / n as f64; n],
        }
    }

    #[test]
    fn single_edge_hand_arithmetic() {
        let mut store = ParamStore::new();
        let l = toy_layer(&mut store, vec![1.0, 1.0, 1.0], vec![1.0, 1.0], 1, 1);
        let batch = toy_batch(2, &[(0, 1)]);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Fwd::new(&mut tape, &store, Dropout::OFF, &mut rng);
        let nodes = f.tape.input(Tensor::new(vec![2, 1], vec![2.0, 3.0]).unwrap());
        let edges = Some(f.tape.input(Tensor::new(vec![1, 1], vec![1.0]).unwrap()));
        let e = l.edge_update(&mut f, &batch, GraphState { nodes, edges }).unwrap().unwrap();
        assert_eq!(f.tape.value(e).data(), &[6.0]);
        // node 0 receives 6 and keeps 2; node 1 has no outgoing edge
        let v = l.node_update(&mut f, &batch, nodes, Some(e)).unwrap();
        assert_eq!(f.tape.value(v).data(), &[8.0, 3.0]);
    }

    #[test]
    fn zero_edge_weights_zero_states() {
        let mut store = ParamStore::new();
        let l = toy_layer(&mut store, vec![0.0; 3], vec![1.0, 0.0], 1, 1);
        let batch = toy_batch(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Fwd::new(&mut tape, &store, Dropout::OFF, &mut rng);
        let nodes = f.tape.input(Tensor::new(vec![3, 1], vec![0.5, 1.5, 0.0]).unwrap());
        let edges = Some(f.tape.input(Tensor::new(vec![4, 1], vec![1.0, -2.0, 3.0, 4.0]).unwrap()));
        let e = l.edge_update(&mut f, &batch, GraphState { nodes, edges }).unwrap().unwrap();
        assert!(f.tape.value(e).data().iter().all(|&x| x == 0.0));
        // identity block on v, zero messages: non-negative v passes through
        let v = l.node_update(&mut f, &batch, nodes, Some(e)).unwrap();
        assert_eq!(f.tape.value(v).data(), &[0.5, 1.5, 0.0]);
    }

    #[test]
    fn single_atom_readout() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = GraphNet::new(&mut store, 3, 4, &mut rng).unwrap();
        let g = featurize_smiles("C").unwrap();
        let batch = GraphBatch::new(&[&g]).unwrap();
        let mut tape = Tape::new();
        let mut f = Fwd::new(&mut tape, &store, Dropout::OFF, &mut rng);
        let mut state = GraphState::initial(&mut f, &batch);
        for l in &net.layers {
            state = l.forward(&mut f, &batch, state).unwrap();
        }
        let v = f.tape.value(state.nodes).data().to_vec();
        let x = net.readout(&mut f, &batch, state).unwrap();
        let x = f.tape.value(x).data();
        assert_eq!(&x[..4], &v[..]);
        assert_eq!(&x[4..], &[0.0; 4]);
    }

    #[test]
    fn batching_matches_individual_encoding() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = GraphNet::new(&mut store, 3, 6, &mut rng).unwrap();
        let gs: Vec<MolGraph> = ["CCO", "c1ccccc1", "N", "CC(=O)N"]
            .iter()
            .map(|s| featurize_smiles(s).unwrap())
            .collect();
        let refs: Vec<&MolGraph> = gs.iter().collect();
        let mut tape = Tape::new();
        let mut f = Fwd::new(&mut tape, &store, Dropout::OFF, &mut rng);
        let all = net.encode(&mut f, &GraphBatch::new(&refs).unwrap()).unwrap();
        let all = f.tape.value(all).clone();
        for (k, g) in gs.iter().enumerate() {
            let one = net.encode(&mut f, &GraphBatch::new(&[g]).unwrap()).unwrap();
            for (a, b) in f.tape.value(one).data().iter().zip(all.row(k)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mc_mode_is_stochastic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = GraphNet::new(&mut store, 3, 8, &mut rng).unwrap();
        let g = featurize_smiles("CCOc1ccccc1").unwrap();
        let batch = GraphBatch::new(&[&g]).unwrap();
        let mut tape = Tape::new();
        let mut f = Fwd::new(&mut tape, &store, Dropout::mc(0.3).unwrap(), &mut rng);
        let a = net.encode(&mut f, &batch).unwrap();
        let b = net.encode(&mut f, &batch).unwrap();
        assert_ne!(f.tape.value(a), f.tape.value(b));
    }
}
