//! Message-passing network definition and exact forward evaluation.
//!
//! A message-passing layer computes, for every node `v`,
//!
//! ```text
//! x_v' = act( sum_u A[u][v] * x_u W_neigh  +  x_v W_self  +  b )
//! ```
//!
//! with SUM aggregation and one shared neighbor weight per layer. Graph
//! classifiers add-pool the last node representations and feed the pooled
//! vector through a dense head; dense layers are layers with `W_neigh = 0`
//! evaluated on a single node.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    None,
    Add,
}

/// One layer. Weight matrices are stored `d_in x d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct MpnnLayer {
    pub w_self: Array2<f64>,
    pub w_neigh: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl MpnnLayer {
    pub fn new(
        w_self: Array2<f64>,
        w_neigh: Array2<f64>,
        bias: Array1<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if w_self.dim() != w_neigh.dim() {
            return Err(Error::DimensionMismatch(format!(
                "w_self is {:?} but w_neigh is {:?}",
                w_self.dim(),
                w_neigh.dim()
            )));
        }
        if bias.len() != w_self.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "bias has {} entries for {} outputs",
                bias.len(),
                w_self.ncols()
            )));
        }
        let finite = w_self
            .iter()
            .chain(w_neigh.iter())
            .chain(bias.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidModel("non-finite weight".into()));
        }
        Ok(Self {
            w_self,
            w_neigh,
            bias,
            activation,
        })
    }

    /// Dense layer: `w_neigh` is all zeros.
    pub fn dense(w: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        let w_neigh = Array2::zeros(w.dim());
        Self::new(w, w_neigh, bias, activation)
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.w_self.nrows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.w_self.ncols()
    }

    /// True when the layer ignores neighbors.
    pub fn has_no_messages(&self) -> bool {
        self.w_neigh.iter().all(|&w| w == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpnnModel {
    pub mp_layers: Vec<MpnnLayer>,
    pub pooling: Pooling,
    pub dense_head: Vec<MpnnLayer>,
}

impl MpnnModel {
    pub fn new(
        mp_layers: Vec<MpnnLayer>,
        pooling: Pooling,
        dense_head: Vec<MpnnLayer>,
    ) -> Result<Self> {
        if mp_layers.is_empty() {
            return Err(Error::InvalidModel("no message-passing layers".into()));
        }
        if !dense_head.is_empty() && pooling != Pooling::Add {
            return Err(Error::InvalidModel(
                "a dense head requires add pooling".into(),
            ));
        }
        for stack in [&mp_layers, &dense_head] {
            for pair in stack.windows(2) {
                if pair[0].out_dim() != pair[1].in_dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "layer output {} feeds input {}",
                        pair[0].out_dim(),
                        pair[1].in_dim()
                    )));
                }
            }
            if stack.len() > 1
                && stack[..stack.len() - 1]
                    .iter()
                    .any(|l| l.activation != Activation::Relu)
            {
                return Err(Error::InvalidModel(
                    "only the last layer of a stack may be identity".into(),
                ));
            }
        }
        if let Some(first) = dense_head.first() {
            let mp_out = mp_layers.last().map(MpnnLayer::out_dim).unwrap_or(0);
            if first.in_dim() != mp_out {
                return Err(Error::DimensionMismatch(format!(
                    "dense head expects {} inputs, pooling yields {mp_out}",
                    first.in_dim()
                )));
            }
            if dense_head.iter().any(|l| !l.has_no_messages()) {
                return Err(Error::InvalidModel(
                    "dense layers must have w_neigh = 0".into(),
                ));
            }
        }
        Ok(Self {
            mp_layers,
            pooling,
            dense_head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mp_layers[0].in_dim()
    }

    /// Number of output classes `C`.
    pub fn num_classes(&self) -> usize {
        self.dense_head
            .last()
            .or(self.mp_layers.last())
            .map(MpnnLayer::out_dim)
            .unwrap_or(0)
    }

    pub fn num_mp_layers(&self) -> usize {
        self.mp_layers.len()
    }

    /// Whether the model produces a graph-level output.
    pub fn is_graph_level(&self) -> bool {
        self.pooling == Pooling::Add
    }

    /// Evaluates every intermediate value at `(features, adjacency)`.
    pub fn trace(&self, features: &Array2<f64>, adjacency: &Adjacency) -> Result<Trace> {
        let n = adjacency.n();
        if features.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {n} nodes",
                features.nrows()
            )));
        }
        if features.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} input features, model expects {}",
                features.ncols(),
                self.input_dim()
            )));
        }
        adjacency.check_zero_diagonal()?;

        let a = adjacency.to_array();
        let mut x = features.clone();
        let mut mp = Vec::with_capacity(self.mp_layers.len());
        for layer in &self.mp_layers {
            let aggregated = a.t().dot(&x);
            let pre = aggregated.dot(&layer.w_neigh) + x.dot(&layer.w_self) + &layer.bias;
            let post = pre.mapv(|z| layer.activation.apply(z));
            x = post.clone();
            mp.push(LayerValues { pre, post });
        }

        let mut pooled = None;
        let mut dense = Vec::new();
        if self.pooling == Pooling::Add {
            let mut h = x.sum_axis(ndarray::Axis(0));
            pooled = Some(h.clone());
            for layer in &self.dense_head {
                let pre = h.dot(&layer.w_self) + &layer.bias;
                let post = pre.mapv(|z| layer.activation.apply(z));
                h = post.clone();
                dense.push(VectorValues { pre, post });
            }
        }
        Ok(Trace { mp, pooled, dense })
    }

    /// Exact value of `f(X, A)`.
    pub fn forward(&self, features: &Array2<f64>, adjacency: &Adjacency) -> Result<Logits> {
        Ok(self.trace(features, adjacency)?.logits())
    }

    /// `f_{c_star} - f_c` at a single point, for the node `t` or the graph.
    pub fn margin(
        &self,
        features: &Array2<f64>,
        adjacency: &Adjacency,
        c_star: usize,
        c: usize,
        target: Target,
    ) -> Result<f64> {
        self.check_classes(c_star, c)?;
        let logits = self.forward(features, adjacency)?;
        let row = logits.for_target(target)?;
        Ok(row[c_star] - row[c])
    }

    pub fn check_classes(&self, c_star: usize, c: usize) -> Result<()> {
        let classes = self.num_classes();
        if c_star == c {
            return Err(Error::InvalidClass(format!(
                "true and attack class are both {c}"
            )));
        }
        if c_star >= classes || c >= classes {
            return Err(Error::InvalidClass(format!(
                "classes ({c_star}, {c}) out of range for {classes} outputs"
            )));
        }
        Ok(())
    }

    pub fn check_target(&self, target: Target, n: usize) -> Result<()> {
        match (target, self.is_graph_level()) {
            (Target::Graph, true) => Ok(()),
            (Target::Node(t), false) if t < n => Ok(()),
            (Target::Node(t), false) => Err(Error::InvalidGraph(format!(
                "target node {t} out of range for {n} nodes"
            ))),
            (Target::Graph, false) => Err(Error::InvalidModel(
                "graph target needs a pooled model".into(),
            )),
            (Target::Node(_), true) => Err(Error::InvalidModel(
                "node target needs a model without pooling".into(),
            )),
        }
    }
}

/// Attack label convention: `(c_star + 1) mod C`.
pub fn default_attack_label(c_star: usize, num_classes: usize) -> usize {
    (c_star + 1) % num_classes
}

#[derive(Clone, Debug)]
pub struct LayerValues {
    pub pre: Array2<f64>,
    pub post: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct VectorValues {
    pub pre: Array1<f64>,
    pub post: Array1<f64>,
}

/// All intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub mp: Vec<LayerValues>,
    pub pooled: Option<Array1<f64>>,
    pub dense: Vec<VectorValues>,
}

impl Trace {
    pub fn logits(&self) -> Logits {
        if let Some(last) = self.dense.last() {
            Logits::Graph(last.post.clone())
        } else if let Some(pooled) = &self.pooled {
            Logits::Graph(pooled.clone())
        } else {
            Logits::Node(self.mp.last().expect("at least one layer").post.clone())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Logits {
    Node(Array2<f64>),
    Graph(Array1<f64>),
}

impl Logits {
    pub fn for_target(&self, target: Target) -> Result<ArrayView1<'_, f64>> {
        match (self, target) {
            (Logits::Node(m), Target::Node(t)) if t < m.nrows() => Ok(m.row(t)),
            (Logits::Graph(v), Target::Graph) => Ok(v.view()),
            _ => Err(Error::InvalidModel(format!(
                "target {target:?} does not match model output"
            ))),
        }
    }
}
