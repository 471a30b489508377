//! Numeric molecular graphs.
//!
//! Node layout (36): element {B,C,N,O,F,P,S,Cl,Br,I,other} | degree 0-5 |
//! formal charge -2..+2 | total H 0-4 | hybridization {sp,sp2,sp3,other} |
//! aromatic | in ring | in 3/4/5-ring.
//!
//! Edge layout (8): order {single,double,triple,aromatic} | conjugated |
//! in ring | in 5/6-ring.

use crate::error::{Error, Result};
use crate::smiles::{BondOrder, Element, Hybridization, Molecule};

pub const NODE_DIM: usize = 36;
pub const EDGE_DIM: usize = 8;
pub const MAX_DEGREE: usize = 5;

const ELEMENTS: [Element; 10] = [
    Element::B,
    Element::C,
    Element::N,
    Element::O,
    Element::F,
    Element::P,
    Element::S,
    Element::CL,
    Element::BR,
    Element::I,
];

/// Offsets of each one-hot block inside a node vector.
pub mod node_block {
    pub const ELEMENT: usize = 0;
    pub const DEGREE: usize = 11;
    pub const CHARGE: usize = 17;
    pub const HYDROGENS: usize = 22;
    pub const HYBRIDIZATION: usize = 27;
    pub const AROMATIC: usize = 31;
    pub const IN_RING: usize = 32;
    pub const RING_SIZE: usize = 33;
}

pub mod edge_block {
    pub const ORDER: usize = 0;
    pub const CONJUGATED: usize = 4;
    pub const IN_RING: usize = 5;
    pub const RING_SIZE: usize = 6;
}

/// Featurized molecule: node vectors, directed edges with their vectors,
/// and outgoing adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct MolGraph {
    pub n: usize,
    /// Row-major `n × NODE_DIM`.
    pub node_feats: Vec<f64>,
    /// Directed edges; bond `k` contributes `2k` = (a, b) and `2k+1` = (b, a).
    pub edges: Vec<(usize, usize)>,
    /// Row-major `edges.len() × EDGE_DIM`.
    pub edge_feats: Vec<f64>,
    /// `neighbors[i]` lists `j` for every directed edge (i, j).
    pub neighbors: Vec<Vec<usize>>,
}

impl MolGraph {
    pub fn node(&self, i: usize) -> &[f64] {
        &self.node_feats[i * NODE_DIM..(i + 1) * NODE_DIM]
    }

    pub fn edge(&self, k: usize) -> &[f64] {
        &self.edge_feats[k * EDGE_DIM..(k + 1) * EDGE_DIM]
    }

    pub fn edge_feature(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.edges
            .iter()
            .position(|&e| e == (i, j))
            .map(|k| self.edge(k))
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

fn one_hot(out: &mut [f64], index: Option<usize>) {
    if let Some(i) = index.filter(|&i| i < out.len()) {
        out[i] = 1.0;
    }
}

pub fn featurize(m: &Molecule) -> Result<MolGraph> {
    let n = m.atoms.len();
    if n == 0 {
        return Err(Error::Featurize("molecule has no atoms".into()));
    }
    let mut node_feats = vec![0.0; n * NODE_DIM];
    for (i, atom) in m.atoms.iter().enumerate() {
        if atom.degree > MAX_DEGREE {
            return Err(Error::Featurize(format!(
                "atom {i} ({}) has degree {} > {MAX_DEGREE}",
                atom.element, atom.degree
            )));
        }
        let v = &mut node_feats[i * NODE_DIM..(i + 1) * NODE_DIM];
        use node_block::*;
        let el = ELEMENTS.iter().position(|&e| e == atom.element).unwrap_or(10);
        one_hot(&mut v[ELEMENT..DEGREE], Some(el));
        one_hot(&mut v[DEGREE..CHARGE], Some(atom.degree));
        let charge = (atom.formal_charge as i32 + 2).try_into().ok();
        one_hot(&mut v[CHARGE..HYDROGENS], charge);
        one_hot(&mut v[HYDROGENS..HYBRIDIZATION], Some(atom.total_h() as usize));
        let hyb = match m.hybridization(i) {
            Hybridization::Sp => 0,
            Hybridization::Sp2 => 1,
            Hybridization::Sp3 => 2,
            Hybridization::Other => 3,
        };
        one_hot(&mut v[HYBRIDIZATION..AROMATIC], Some(hyb));
        v[AROMATIC] = f64::from(u8::from(atom.aromatic));
        let sizes = m.atom_ring_sizes(i);
        v[IN_RING] = f64::from(u8::from(!sizes.is_empty()));
        for (slot, size) in (3..=5).enumerate() {
            v[RING_SIZE + slot] = f64::from(u8::from(sizes.contains(&size)));
        }
    }

    let mut edges = Vec::with_capacity(2 * m.bonds.len());
    let mut edge_feats = Vec::with_capacity(2 * m.bonds.len() * EDGE_DIM);
    let mut neighbors = vec![Vec::new(); n];
    for (k, bond) in m.bonds.iter().enumerate() {
        let mut e = [0.0; EDGE_DIM];
        use edge_block::*;
        let order = match bond.order {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        };
        e[ORDER + order] = 1.0;
        e[CONJUGATED] = f64::from(u8::from(bond.conjugated));
        e[IN_RING] = f64::from(u8::from(bond.in_ring));
        let sizes = m.bond_ring_sizes(k);
        e[RING_SIZE] = f64::from(u8::from(sizes.contains(&5)));
        e[RING_SIZE + 1] = f64::from(u8::from(sizes.contains(&6)));
        for (i, j) in [(bond.a, bond.b), (bond.b, bond.a)] {
            edges.push((i, j));
            edge_feats.extend_from_slice(&e);
            neighbors[i].push(j);
        }
    }
    Ok(MolGraph {
        n,
        node_feats,
        edges,
        edge_feats,
        neighbors,
    })
}

/// Parses and featurizes in one step.
pub fn featurize_smiles(s: &str) -> Result<MolGraph> {
    let m = crate::smiles::parse_smiles(s)?;
    featurize(&m)
}
