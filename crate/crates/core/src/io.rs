//! JSON file formats for models, graphs, perturbation specs and reports.
//!
//! Model:
//!
//! ```json
//! {"layers": [{"w_self": [[..]], "w_neigh": [[..]], "bias": [..], "activation": "relu"}],
//!  "pooling": "none", "dense": []}
//! ```
//!
//! Graph:
//!
//! ```json
//! {"n": 3, "directed": false, "features": [[1.0], [-2.0], [3.0]], "edges": [[0, 1], [1, 2]],
//!  "target": {"node": 0}, "label_true": 0, "label_attack": 1}
//! ```
//!
//! Spec, with either explicit local budgets or the degree rule:
//!
//! ```json
//! {"mode": "p1", "global_budget": 1, "local_budgets": [1, 1, 1]}
//! {"mode": "p2", "global_budget": 2, "local_rule": {"strength": 2}}
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bnb::{Status, Verdict};
use crate::bounds::{BoundsTable, Interval, Strategy};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, GraphInstance, Target};
use crate::model::{Activation, MpnnLayer, MpnnModel, Pooling};
use crate::perturbation::{degrees, local_budget_from_degree, PerturbationMode, PerturbationSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub w_self: Vec<Vec<f64>>,
    /// Optional for dense layers, where it must be zero anyway.
    #[serde(default)]
    pub w_neigh: Option<Vec<Vec<f64>>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub layers: Vec<LayerFile>,
    pub pooling: Pooling,
    #[serde(default)]
    pub dense: Vec<LayerFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub directed: bool,
    pub features: Vec<Vec<f64>>,
    pub edges: Vec<[usize; 2]>,
    pub target: Target,
    pub label_true: usize,
    pub label_attack: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalRule {
    pub strength: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecFile {
    pub mode: PerturbationMode,
    pub global_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_budgets: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_rule: Option<LocalRule>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tight_root_budget: bool,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(format!("ragged {what}")));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat())
        .map_err(|e| Error::DimensionMismatch(format!("{what}: {e}")))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

impl LayerFile {
    fn build(&self, dense: bool) -> Result<MpnnLayer> {
        let w_self = matrix(&self.w_self, "w_self")?;
        let bias = Array1::from(self.bias.clone());
        match (&self.w_neigh, dense) {
            (None, true) => MpnnLayer::dense(w_self, bias, self.activation),
            (None, false) => Err(Error::InvalidModel(
                "message-passing layer without w_neigh".into(),
            )),
            (Some(w), _) => MpnnLayer::new(w_self, matrix(w, "w_neigh")?, bias, self.activation),
        }
    }

    fn from_layer(layer: &MpnnLayer) -> Self {
        Self {
            w_self: rows(&layer.w_self),
            w_neigh: Some(rows(&layer.w_neigh)),
            bias: layer.bias.to_vec(),
            activation: layer.activation,
        }
    }
}

impl ModelFile {
    pub fn build(&self) -> Result<MpnnModel> {
        let mp = self
            .layers
            .iter()
            .map(|l| l.build(false))
            .collect::<Result<_>>()?;
        let dense = self
            .dense
            .iter()
            .map(|l| l.build(true))
            .collect::<Result<_>>()?;
        MpnnModel::new(mp, self.pooling, dense)
    }

    pub fn from_model(model: &MpnnModel) -> Self {
        Self {
            layers: model.mp_layers.iter().map(LayerFile::from_layer).collect(),
            pooling: model.pooling,
            dense: model.dense_head.iter().map(LayerFile::from_layer).collect(),
        }
    }
}

impl GraphFile {
    pub fn build(&self) -> Result<GraphInstance> {
        let features = matrix(&self.features, "features")?;
        if features.nrows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for n = {}",
                features.nrows(),
                self.n
            )));
        }
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let adjacency = Adjacency::from_edges(self.n, &edges, self.directed)?;
        GraphInstance::new(
            features,
            adjacency,
            self.directed,
            self.target,
            self.label_true,
            self.label_attack,
        )
    }

    /// Undirected graphs list each edge once, as `[u, v]` with `u < v`.
    pub fn from_instance(instance: &GraphInstance) -> Self {
        let edges = instance
            .adjacency
            .edges()
            .into_iter()
            .filter(|&(u, v)| instance.directed || u < v)
            .map(|(u, v)| [u, v])
            .collect();
        Self {
            n: instance.n(),
            directed: instance.directed,
            features: rows(&instance.features),
            edges,
            target: instance.target,
            label_true: instance.label_true,
            label_attack: instance.label_attack,
        }
    }
}

impl SpecFile {
    /// Resolves the local budgets against `instance`.
    pub fn build(&self, instance: &GraphInstance) -> Result<PerturbationSpec> {
        let local = match (&self.local_budgets, self.local_rule) {
            (Some(q), None) => q.clone(),
            (None, Some(rule)) => {
                local_budget_from_degree(&degrees(&instance.adjacency), rule.strength)
            }
            _ => {
                return Err(Error::InvalidSpec(
                    "give exactly one of local_budgets and local_rule".into(),
                ))
            }
        };
        let spec = PerturbationSpec::new(self.mode, self.global_budget, local)
            .with_tight_root_budget(self.tight_root_budget);
        spec.validate_for(instance)?;
        Ok(spec)
    }

    pub fn from_spec(spec: &PerturbationSpec) -> Self {
        Self {
            mode: spec.mode,
            global_budget: spec.global_budget,
            local_budgets: Some(spec.local_budgets.clone()),
            local_rule: None,
            tight_root_budget: spec.tight_root_budget,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MpnnModel> {
    read_json::<ModelFile>(path)?.build()
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<GraphInstance> {
    read_json::<GraphFile>(path)?.build()
}

pub fn load_spec(path: impl AsRef<Path>, instance: &GraphInstance) -> Result<PerturbationSpec> {
    read_json::<SpecFile>(path)?.build(instance)
}

/// Search settings echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportConfig {
    pub strategy: Strategy,
    pub time_limit: f64,
    pub node_limit: usize,
    pub branching: crate::bnb::Branching,
    pub node_selection: crate::bnb::NodeSelection,
    pub seed: u64,
    pub attack_restarts: usize,
    pub portfolio: bool,
}

impl ReportConfig {
    pub fn new(config: &crate::bnb::SearchConfig, portfolio: bool) -> Self {
        Self {
            strategy: config.strategy,
            time_limit: config.time_limit.as_secs_f64(),
            node_limit: config.node_limit,
            branching: config.branching,
            node_selection: config.node_selection,
            seed: config.seed,
            attack_restarts: config.attack_restarts,
            portfolio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub status: Status,
    pub certified_bound: Option<f64>,
    /// All edges of the witness matrix, as ordered entries.
    pub witness_edges: Vec<[usize; 2]>,
    pub nodes_explored: usize,
    pub max_depth: usize,
    pub time_seconds: f64,
    pub strategy: Strategy,
    pub config: ReportConfig,
}

impl VerifyReport {
    pub fn new(verdict: &Verdict, config: ReportConfig) -> Self {
        Self {
            status: verdict.status,
            certified_bound: verdict.certified_bound,
            witness_edges: verdict
                .witness
                .as_ref()
                .map(|w| w.edges().into_iter().map(|(u, v)| [u, v]).collect())
                .unwrap_or_default(),
            nodes_explored: verdict.stats.nodes_explored,
            max_depth: verdict.stats.max_depth,
            time_seconds: verdict.stats.time_seconds,
            strategy: verdict.stats.strategy,
            config,
        }
    }
}

/// One entry of the `bounds` output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsRecord {
    pub layer: usize,
    pub node: usize,
    pub feature: usize,
    pub pre: [f64; 2],
    pub post: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub strategy: Strategy,
    pub margin: [f64; 2],
    pub records: Vec<BoundsRecord>,
}

fn pair(i: Interval) -> [f64; 2] {
    [i.lo, i.hi]
}

impl BoundsReport {
    /// Message-passing layers only; layers are numbered from 1.
    pub fn new(table: &BoundsTable) -> Self {
        let records = table
            .mp
            .iter()
            .enumerate()
            .flat_map(|(l, b)| {
                b.pre.iter().map(move |(node, feature, pre)| BoundsRecord {
                    layer: l + 1,
                    node,
                    feature,
                    pre: pair(pre),
                    post: pair(b.post.get(node, feature)),
                })
            })
            .collect();
        Self {
            strategy: table.strategy,
            margin: pair(table.margin),
            records,
        }
    }
}
