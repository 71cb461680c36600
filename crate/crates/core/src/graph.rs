//! Adjacency matrices and verification instances.
//!
//! `A[u][v] = 1` means node `u` sends a message to node `v`, so the
//! in-neighborhood of `v` is column `v` of the matrix. The diagonal is
//! always zero: the self contribution of a node lives in `w_self`.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense binary adjacency matrix with a structurally zero diagonal.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    /// Builds a matrix from an edge list. Undirected edges set both entries.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], directed: bool) -> Result<Self> {
        let mut adj = Self::empty(n);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            adj.set(u, v, true);
            if !directed {
                adj.set(v, u, true);
            }
        }
        Ok(adj)
    }

    /// Builds a matrix from numeric rows, rejecting anything that is not 0 or 1.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut adj = Self::empty(n);
        for (u, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "adjacency row {u} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (v, &value) in row.iter().enumerate() {
                if value == 1.0 {
                    adj.set(u, v, true);
                } else if value != 0.0 {
                    return Err(Error::NonBinaryAdjacency {
                        row: u,
                        col: v,
                        value,
                    });
                }
            }
        }
        Ok(adj)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Whether the edge `u -> v` exists.
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.n + v]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.bits[u * self.n + v] = value;
    }

    /// Sets `u -> v` and `v -> u` together.
    pub fn set_pair(&mut self, u: usize, v: usize, value: bool) {
        self.set(u, v, value);
        self.set(v, u, value);
    }

    /// Sources of messages into `v`.
    pub fn in_neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&u| self.get(u, v))
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_neighbors(v).count()
    }

    /// All ordered pairs `(u, v)` with `A[u][v] = 1`, row-major.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for v in 0..self.n {
                if self.get(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Number of nonzero entries.
    pub fn nnz(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|u| (u + 1..self.n).all(|v| self.get(u, v) == self.get(v, u)))
    }

    pub fn check_zero_diagonal(&self) -> Result<()> {
        match (0..self.n).find(|&v| self.get(v, v)) {
            Some(v) => Err(Error::SelfLoop(v)),
            None => Ok(()),
        }
    }

    /// `||self - other||_0`.
    pub fn hamming(&self, other: &Adjacency) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// `||self_v - other_v||_0` for column `v`.
    pub fn column_changes(&self, other: &Adjacency, v: usize) -> usize {
        (0..self.n)
            .filter(|&u| self.get(u, v) != other.get(u, v))
            .count()
    }

    /// Entries that differ from `other`, row-major.
    pub fn diff(&self, other: &Adjacency) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for v in 0..self.n {
                if self.get(u, v) != other.get(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn(
            (self.n, self.n),
            |(u, v)| {
                if self.get(u, v) {
                    1.0
                } else {
                    0.0
                }
            },
        )
    }
}

impl fmt::Debug for Adjacency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Adjacency({} nodes, edges {:?})", self.n, self.edges())
    }
}

/// What the classifier is asked about: one node's label or the whole graph's.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Node(usize),
    Graph,
}

/// A graph with fixed input features, the predicted label and the attack label.
#[derive(Clone, Debug)]
pub struct GraphInstance {
    pub features: Array2<f64>,
    pub adjacency: Adjacency,
    pub directed: bool,
    pub target: Target,
    pub label_true: usize,
    pub label_attack: usize,
}

impl GraphInstance {
    pub fn new(
        features: Array2<f64>,
        adjacency: Adjacency,
        directed: bool,
        target: Target,
        label_true: usize,
        label_attack: usize,
    ) -> Result<Self> {
        let n = adjacency.n();
        if features.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {n} nodes",
                features.nrows()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGraph("non-finite feature".into()));
        }
        adjacency.check_zero_diagonal()?;
        if !directed && !adjacency.is_symmetric() {
            return Err(Error::InvalidGraph(
                "undirected graph with asymmetric adjacency".into(),
            ));
        }
        if let Target::Node(t) = target {
            if t >= n {
                return Err(Error::InvalidGraph(format!(
                    "target node {t} out of range for {n} nodes"
                )));
            }
        }
        if label_true == label_attack {
            return Err(Error::InvalidClass(format!(
                "label_true and label_attack are both {label_true}"
            )));
        }
        Ok(Self {
            features,
            adjacency,
            directed,
            target,
            label_true,
            label_attack,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    /// Number of edges: unordered pairs when undirected, ordered entries otherwise.
    pub fn num_edges(&self) -> usize {
        let nnz = self.adjacency.nnz();
        if self.directed {
            nnz
        } else {
            nnz / 2
        }
    }

    /// Same instance with a different adjacency (used for perturbed evaluations).
    pub fn with_adjacency(&self, adjacency: Adjacency) -> Self {
        Self {
            adjacency,
            ..self.clone()
        }
    }
}
