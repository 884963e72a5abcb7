use super::{DataError, Role, SyntheticComplex};
use crate::autodiff::DenseArray;

/// Inclusive range accepted for both neighbor thresholds, Å.
pub const COVALENT_RANGE: (f64, f64) = (1.2, 5.9);

/// Undirected edge, `a < b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub dist: f64,
}

/// Atom graph. Node features are one-hot element, a ligand flag, and
/// coordinates divided by the box size.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGraph {
    pub node_features: DenseArray<f64>,
    pub roles: Vec<Role>,
    pub covalent_edges: Vec<Edge>,
    pub noncovalent_edges: Vec<Edge>,
}

impl ComplexGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_features.shape()[0]
    }

    pub fn feature_width(&self) -> usize {
        self.node_features.shape()[1]
    }

    /// Checks the structural invariants; used on untrusted inputs.
    pub fn validate(&self, cov: f64, noncov: f64) -> Result<(), DataError> {
        let n = self.n_nodes();
        if self.roles.len() != n {
            return Err(DataError::InvalidParams("role list length differs from node count".into()));
        }
        for (edges, limit, cross) in [(&self.covalent_edges, cov, false), (&self.noncovalent_edges, noncov, true)] {
            for e in edges.iter() {
                if e.a >= n || e.b >= n || e.a == e.b {
                    return Err(DataError::InvalidParams(format!("bad edge {e:?}")));
                }
                if !(e.dist <= limit) || ((self.roles[e.a] != self.roles[e.b]) != cross) {
                    return Err(DataError::InvalidParams(format!("edge {e:?} violates its type")));
                }
            }
        }
        Ok(())
    }
}

pub fn build_graph(c: &SyntheticComplex, cov_thresh: f64, noncov_thresh: f64, box_size: f64) -> Result<ComplexGraph, DataError> {
    for t in [cov_thresh, noncov_thresh] {
        if !(COVALENT_RANGE.0..=COVALENT_RANGE.1).contains(&t) {
            return Err(DataError::InvalidParams(format!("neighbor threshold {t} outside {COVALENT_RANGE:?}")));
        }
    }
    if !(box_size > 0.0) {
        return Err(DataError::InvalidParams("box size must be positive".into()));
    }
    let elements = c.meta.params.elements;
    let width = elements + 4;
    let n = c.atoms.len();
    if n == 0 {
        return Err(DataError::InvalidParams("complex has no atoms".into()));
    }
    let mut feats = vec![0.0; n * width];
    for (i, a) in c.atoms.iter().enumerate() {
        if a.element >= elements {
            return Err(DataError::InvalidParams(format!("element {} outside [0, {elements})", a.element)));
        }
        let row = &mut feats[i * width..(i + 1) * width];
        row[a.element] = 1.0;
        row[elements] = if a.role == Role::Ligand { 1.0 } else { 0.0 };
        for d in 0..3 {
            row[elements + 1 + d] = a.pos[d] / box_size;
        }
    }
    let mut covalent_edges = Vec::new();
    let mut noncovalent_edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (p, q) = (&c.atoms[i], &c.atoms[j]);
            let d = ((p.pos[0] - q.pos[0]).powi(2) + (p.pos[1] - q.pos[1]).powi(2) + (p.pos[2] - q.pos[2]).powi(2)).sqrt();
            if p.role == q.role {
                if d <= cov_thresh {
                    covalent_edges.push(Edge { a: i, b: j, dist: d });
                }
            } else if d <= noncov_thresh {
                noncovalent_edges.push(Edge { a: i, b: j, dist: d });
            }
        }
    }
    Ok(ComplexGraph {
        node_features: DenseArray::new(vec![n, width], feats).map_err(|e| DataError::InvalidParams(e.to_string()))?,
        roles: c.atoms.iter().map(|a| a.role).collect(),
        covalent_edges,
        noncovalent_edges,
    })
}
