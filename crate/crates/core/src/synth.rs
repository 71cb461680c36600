//! Small hand-built fixtures and seeded random instance generators.
//!
//! The random generators back the oracle suites in the tests and the
//! runnable examples; the star/tree generator mimics 2-hop neighborhoods
//! of citation graphs under remove-only attacks.

use ndarray::{array, Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Adjacency, GraphInstance, Target};
use crate::model::{default_attack_label, Activation, Logits, MpnnLayer, MpnnModel, Pooling};
use crate::perturbation::{PerturbationMode, PerturbationSpec};

/// A complete verification problem.
#[derive(Clone, Debug)]
pub struct Case {
    pub model: MpnnModel,
    pub instance: GraphInstance,
    pub spec: PerturbationSpec,
}

/// Path `0 - 1 - 2` with features `(1, -2, 3)` and a unit ReLU layer.
/// The second layer reads node 0 only, so the margin at node 0 is
/// `1.5 - relu(x̄_0)`: removing `{0, 1}` keeps it positive, adding `{0, 2}`
/// makes it `-0.5`. Budgets are `Q = 1`, `q = (1, 1, 1)`.
pub fn path_fixture() -> Case {
    let adjacency = Adjacency::from_edges(3, &[(0, 1), (1, 2)], false).expect("valid edges");
    let instance = GraphInstance::new(
        array![[1.0], [-2.0], [3.0]],
        adjacency,
        false,
        Target::Node(0),
        0,
        1,
    )
    .expect("valid instance");
    let hidden = MpnnLayer::new(array![[1.0]], array![[1.0]], array![0.0], Activation::Relu)
        .expect("valid layer");
    let head = MpnnLayer::new(
        array![[-0.5, 0.5]],
        array![[0.0, 0.0]],
        array![1.5, 0.0],
        Activation::Identity,
    )
    .expect("valid layer");
    let model = MpnnModel::new(vec![hidden, head], Pooling::None, vec![]).expect("valid model");
    let spec = PerturbationSpec::new(PerturbationMode::UndirectedFlip, 1, vec![1, 1, 1]);
    Case {
        model,
        instance,
        spec,
    }
}

/// Model whose logits are the constant `(1.0, 0.5)`.
pub fn constant_model(input_dim: usize) -> MpnnModel {
    let layer = MpnnLayer::new(
        Array2::zeros((input_dim, 2)),
        Array2::zeros((input_dim, 2)),
        array![1.0, 0.5],
        Activation::Identity,
    )
    .expect("valid layer");
    MpnnModel::new(vec![layer], Pooling::None, vec![]).expect("valid model")
}

/// Knobs for [`random_case`].
#[derive(Clone, Debug)]
pub struct RandomConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Bounds on the input and hidden widths.
    pub min_width: usize,
    pub max_width: usize,
    pub min_mp_layers: usize,
    pub max_mp_layers: usize,
    pub min_global_budget: usize,
    pub max_global_budget: usize,
    pub min_local_budget: usize,
    pub max_local_budget: usize,
    pub edge_probability: f64,
    /// Probability of a pooled graph-level model instead of a node task.
    pub graph_task_probability: f64,
    /// Probability of P2 instead of P1.
    pub remove_only_probability: f64,
    /// When set, the attack class's output bias is shifted so that the
    /// unperturbed margin is uniform in `[0, m)`: instances sit close to the
    /// decision boundary instead of being decided by a wide margin.
    pub calibrate_margin: Option<f64>,
}

impl Default for RandomConfig {
    fn default() -> Self {
        Self {
            min_nodes: 2,
            max_nodes: 8,
            min_width: 1,
            max_width: 3,
            min_mp_layers: 1,
            max_mp_layers: 2,
            min_global_budget: 0,
            max_global_budget: 2,
            min_local_budget: 0,
            max_local_budget: 2,
            edge_probability: 0.35,
            graph_task_probability: 0.5,
            remove_only_probability: 0.5,
            calibrate_margin: None,
        }
    }
}

impl RandomConfig {
    /// The suite used to compare strategies against enumeration: `N` in
    /// 5..=8, widths 2..=3, nonzero budgets, margins close to the boundary.
    /// Narrow layers and tiny graphs are left out because they are mostly
    /// decided at the root by every strategy.
    pub fn oracle_suite() -> Self {
        Self {
            min_nodes: 5,
            min_width: 2,
            min_global_budget: 1,
            min_local_budget: 1,
            calibrate_margin: Some(2.0),
            ..Self::default()
        }
    }
}

fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn uniform_vector(rng: &mut impl Rng, len: usize) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.gen_range(-1.0..1.0))
}

fn random_layer(rng: &mut impl Rng, d_in: usize, d_out: usize, act: Activation) -> MpnnLayer {
    MpnnLayer::new(
        uniform_matrix(rng, d_in, d_out),
        uniform_matrix(rng, d_in, d_out),
        uniform_vector(rng, d_out),
        act,
    )
    .expect("consistent shapes")
}

fn random_dense(rng: &mut impl Rng, d_in: usize, d_out: usize, act: Activation) -> MpnnLayer {
    MpnnLayer::dense(
        uniform_matrix(rng, d_in, d_out),
        uniform_vector(rng, d_out),
        act,
    )
    .expect("consistent shapes")
}

/// Predicted class at the unperturbed graph; ties go to the lower index.
pub fn predicted_label(
    model: &MpnnModel,
    features: &Array2<f64>,
    adj: &Adjacency,
    target: Target,
) -> usize {
    let logits = model.forward(features, adj).expect("consistent instance");
    let row = match (&logits, target) {
        (Logits::Node(m), Target::Node(t)) => m.row(t).to_owned(),
        (Logits::Graph(v), _) => v.clone(),
        _ => unreachable!("target matches model"),
    };
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

/// Random model, graph and budgets. The true label is the predicted one and
/// the attack label is the next class.
pub fn random_case(rng: &mut impl Rng, cfg: &RandomConfig) -> Case {
    let n = rng.gen_range(cfg.min_nodes..=cfg.max_nodes);
    let graph_task = rng.gen_bool(cfg.graph_task_probability);
    let remove_only = rng.gen_bool(cfg.remove_only_probability);
    let directed = remove_only && rng.gen_bool(0.5);
    let layers = rng.gen_range(cfg.min_mp_layers..=cfg.max_mp_layers);
    let d0 = rng.gen_range(cfg.min_width..=cfg.max_width);
    let classes = rng.gen_range(2..=cfg.max_width.max(2));

    let mut mp = Vec::with_capacity(layers);
    let mut d_in = d0;
    for l in 0..layers {
        let last = l + 1 == layers;
        let (d_out, act) = if last && !graph_task {
            (classes, Activation::Identity)
        } else {
            (
                rng.gen_range(cfg.min_width..=cfg.max_width),
                Activation::Relu,
            )
        };
        mp.push(random_layer(rng, d_in, d_out, act));
        d_in = d_out;
    }
    let (pooling, dense) = if graph_task {
        (
            Pooling::Add,
            vec![random_dense(rng, d_in, classes, Activation::Identity)],
        )
    } else {
        (Pooling::None, vec![])
    };
    let mut model = MpnnModel::new(mp, pooling, dense).expect("consistent model");

    let mut adjacency = Adjacency::empty(n);
    for u in 0..n {
        for v in 0..n {
            if u == v || (!directed && v < u) {
                continue;
            }
            if rng.gen_bool(cfg.edge_probability) {
                if directed {
                    adjacency.set(u, v, true);
                } else {
                    adjacency.set_pair(u, v, true);
                }
            }
        }
    }
    let features = uniform_matrix(rng, n, d0);
    let target = if graph_task {
        Target::Graph
    } else {
        Target::Node(rng.gen_range(0..n))
    };
    let c_star = predicted_label(&model, &features, &adjacency, target);
    let c = default_attack_label(c_star, classes);
    if let Some(m) = cfg.calibrate_margin {
        let current = model
            .margin(&features, &adjacency, c_star, c, target)
            .expect("consistent instance");
        let wanted = rng.gen_range(0.0..m);
        // the output layer is linear, so its bias moves the margin one to one
        let out = match model.dense_head.last_mut() {
            Some(layer) => layer,
            None => model.mp_layers.last_mut().expect("at least one layer"),
        };
        out.bias[c] += current - wanted;
    }
    let instance =
        GraphInstance::new(features, adjacency, directed, target, c_star, c).expect("valid");

    let mode = if remove_only {
        PerturbationMode::DirectedRemoveOnly
    } else {
        PerturbationMode::UndirectedFlip
    };
    let global = rng.gen_range(cfg.min_global_budget..=cfg.max_global_budget);
    let local = (0..n)
        .map(|_| rng.gen_range(cfg.min_local_budget..=cfg.max_local_budget))
        .collect();
    Case {
        model,
        instance,
        spec: PerturbationSpec::new(mode, global, local),
    }
}

/// Seeded stream of random cases.
pub fn random_cases(seed: u64, count: usize, cfg: &RandomConfig) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_case(&mut rng, cfg)).collect()
}

/// Knobs for [`star_tree_case`].
#[derive(Clone, Debug)]
pub struct StarTreeConfig {
    pub children: usize,
    pub grandchildren: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub global_budget: usize,
    pub local_budget: usize,
}

impl Default for StarTreeConfig {
    fn default() -> Self {
        Self {
            children: 4,
            grandchildren: 2,
            input_dim: 8,
            hidden: 32,
            classes: 4,
            global_budget: 10,
            local_budget: 5,
        }
    }
}

/// A 2-hop tree around node 0 with edges stored in both directions, a
/// two-layer node classifier and remove-only budgets.
pub fn star_tree_case(rng: &mut impl Rng, cfg: &StarTreeConfig) -> Case {
    let children = rng.gen_range(1..=cfg.children);
    let mut edges = Vec::new();
    let mut next = 1;
    for _ in 0..children {
        let child = next;
        next += 1;
        edges.push((child, 0));
        edges.push((0, child));
        for _ in 0..rng.gen_range(0..=cfg.grandchildren) {
            edges.push((next, child));
            edges.push((child, next));
            next += 1;
        }
    }
    let n = next;
    let adjacency = Adjacency::from_edges(n, &edges, true).expect("tree edges");

    // Scale so that sums over a handful of neighbors stay O(1).
    let scale1 = 1.0 / (cfg.input_dim as f64).sqrt();
    let scale2 = 1.0 / (cfg.hidden as f64).sqrt();
    let l1 = MpnnLayer::new(
        uniform_matrix(rng, cfg.input_dim, cfg.hidden) * scale1,
        uniform_matrix(rng, cfg.input_dim, cfg.hidden) * scale1,
        uniform_vector(rng, cfg.hidden) * 0.1,
        Activation::Relu,
    )
    .expect("shapes");
    let l2 = MpnnLayer::new(
        uniform_matrix(rng, cfg.hidden, cfg.classes) * scale2,
        uniform_matrix(rng, cfg.hidden, cfg.classes) * scale2,
        uniform_vector(rng, cfg.classes) * 0.1,
        Activation::Identity,
    )
    .expect("shapes");
    let model = MpnnModel::new(vec![l1, l2], Pooling::None, vec![]).expect("model");

    let mut features = Array2::zeros((n, cfg.input_dim));
    for mut row in features.rows_mut() {
        let mut idx: Vec<usize> = (0..cfg.input_dim).collect();
        idx.shuffle(rng);
        for &f in idx.iter().take(2.min(cfg.input_dim)) {
            row[f] = 1.0;
        }
    }
    let target = Target::Node(0);
    let c_star = predicted_label(&model, &features, &adjacency, target);
    let c = default_attack_label(c_star, cfg.classes);
    let instance = GraphInstance::new(features, adjacency, true, target, c_star, c).expect("valid");
    let spec = PerturbationSpec::new(
        PerturbationMode::DirectedRemoveOnly,
        cfg.global_budget,
        vec![cfg.local_budget; n],
    );
    Case {
        model,
        instance,
        spec,
    }
}
