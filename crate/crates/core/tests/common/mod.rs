//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library's forward pass, enumeration or MIP code: each
//! helper recomputes its answer from the raw weights and matrices.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use gnncert::bounds::BoundsTable;
use gnncert::graph::{Adjacency, GraphInstance, Target};
use gnncert::model::{Activation, MpnnModel, Pooling};
use gnncert::perturbation::flip_candidates;
use gnncert::perturbation::{Fixings, PerturbationMode, PerturbationSpec};
use gnncert::synth::Case;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Every intermediate value of one forward pass, as plain nested vectors.
#[derive(Clone, Debug)]
pub struct NaiveTrace {
    /// `[layer][node][feature]`
    pub pre: Vec<Vec<Vec<f64>>>,
    pub post: Vec<Vec<Vec<f64>>>,
    pub pooled: Option<Vec<f64>>,
    /// `[dense layer][feature]`
    pub dense_pre: Vec<Vec<f64>>,
    pub dense_post: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Identity => z,
    }
}

/// Forward pass by edge-list aggregation: every edge `u -> v` adds `h_u` to
/// the message sum of `v`.
pub fn naive_trace(model: &MpnnModel, inst: &GraphInstance, adj: &Adjacency) -> NaiveTrace {
    let n = adj.n();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if adj.get(u, v) {
                edges.push((u, v));
            }
        }
    }
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|v| inst.features.row(v).iter().copied().collect())
        .collect();
    let mut pre_all = Vec::new();
    let mut post_all = Vec::new();
    for layer in &model.mp_layers {
        let d_in = layer.w_self.nrows();
        let d_out = layer.w_self.ncols();
        let mut msg = vec![vec![0.0; d_in]; n];
        for &(u, v) in &edges {
            for k in 0..d_in {
                msg[v][k] += h[u][k];
            }
        }
        let mut pre = vec![vec![0.0; d_out]; n];
        for v in 0..n {
            for f in 0..d_out {
                let mut z = layer.bias[f];
                for k in 0..d_in {
                    z += h[v][k] * layer.w_self[[k, f]] + msg[v][k] * layer.w_neigh[[k, f]];
                }
                pre[v][f] = z;
            }
        }
        let post: Vec<Vec<f64>> = pre
            .iter()
            .map(|row| row.iter().map(|&z| act(layer.activation, z)).collect())
            .collect();
        h = post.clone();
        pre_all.push(pre);
        post_all.push(post);
    }
    let mut pooled = None;
    let mut dense_pre = Vec::new();
    let mut dense_post = Vec::new();
    let logits = match inst.target {
        Target::Node(t) => h[t].clone(),
        Target::Graph => {
            assert_eq!(model.pooling, Pooling::Add);
            let width = h[0].len();
            let mut g: Vec<f64> = (0..width).map(|f| (0..n).map(|v| h[v][f]).sum()).collect();
            pooled = Some(g.clone());
            for layer in &model.dense_head {
                let d_out = layer.w_self.ncols();
                let p: Vec<f64> = (0..d_out)
                    .map(|f| {
                        layer.bias[f]
                            + (0..g.len())
                                .map(|k| g[k] * layer.w_self[[k, f]])
                                .sum::<f64>()
                    })
                    .collect();
                let q: Vec<f64> = p.iter().map(|&z| act(layer.activation, z)).collect();
                dense_pre.push(p);
                dense_post.push(q.clone());
                g = q;
            }
            g
        }
    };
    NaiveTrace {
        pre: pre_all,
        post: post_all,
        pooled,
        dense_pre,
        dense_post,
        logits,
    }
}

pub fn naive_margin(model: &MpnnModel, inst: &GraphInstance, adj: &Adjacency) -> f64 {
    let logits = naive_trace(model, inst, adj).logits;
    logits[inst.label_true] - logits[inst.label_attack]
}

/// Checks the perturbation constraints entry by entry.
pub fn naive_admissible(adj: &Adjacency, base: &Adjacency, spec: &PerturbationSpec) -> bool {
    let n = base.n();
    if adj.n() != n {
        return false;
    }
    let mut total = 0;
    for v in 0..n {
        if adj.get(v, v) {
            return false;
        }
        let mut column = 0;
        for u in 0..n {
            let (a, b) = (adj.get(u, v), base.get(u, v));
            if a != b {
                if spec.mode == PerturbationMode::DirectedRemoveOnly && a {
                    return false;
                }
                column += 1;
            }
        }
        if column > spec.local_budgets[v] {
            return false;
        }
        total += column;
    }
    if spec.mode == PerturbationMode::UndirectedFlip {
        for u in 0..n {
            for v in 0..n {
                if adj.get(u, v) != adj.get(v, u) {
                    return false;
                }
            }
        }
    }
    let entry_budget = match spec.mode {
        PerturbationMode::UndirectedFlip => 2 * spec.global_budget,
        PerturbationMode::DirectedRemoveOnly => spec.global_budget,
    };
    total <= entry_budget
}

/// Every admissible matrix, by growing sets of toggles and filtering with
/// [`naive_admissible`]. Toggles are unordered pairs under P1 and existing
/// directed edges under P2.
pub fn naive_admissible_set(base: &Adjacency, spec: &PerturbationSpec) -> Vec<Adjacency> {
    let n = base.n();
    let toggles: Vec<(usize, usize)> = match spec.mode {
        PerturbationMode::UndirectedFlip => (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect(),
        PerturbationMode::DirectedRemoveOnly => (0..n)
            .flat_map(|u| (0..n).map(move |v| (u, v)))
            .filter(|&(u, v)| base.get(u, v))
            .collect(),
    };
    let mut out = Vec::new();
    fn grow(
        start: usize,
        current: &mut Adjacency,
        toggles: &[(usize, usize)],
        base: &Adjacency,
        spec: &PerturbationSpec,
        out: &mut Vec<Adjacency>,
    ) {
        if !naive_admissible(current, base, spec) {
            // every superset changes at least as many entries
            return;
        }
        out.push(current.clone());
        for i in start..toggles.len() {
            let (u, v) = toggles[i];
            let value = !current.get(u, v);
            current.set(u, v, value);
            if spec.mode == PerturbationMode::UndirectedFlip {
                current.set(v, u, value);
            }
            grow(i + 1, current, toggles, base, spec, out);
            current.set(u, v, !value);
            if spec.mode == PerturbationMode::UndirectedFlip {
                current.set(v, u, !value);
            }
        }
    }
    let mut current = base.clone();
    grow(0, &mut current, &toggles, base, spec, &mut out);
    out
}

/// Minimum margin over the perturbation set and one minimizer.
pub fn oracle_min_margin(case: &Case) -> (f64, Adjacency) {
    naive_admissible_set(&case.instance.adjacency, &case.spec)
        .into_iter()
        .map(|a| (naive_margin(&case.model, &case.instance, &a), a))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .expect("the base is always admissible")
}

pub fn agrees_with(adj: &Adjacency, fixings: &Fixings) -> bool {
    fixings.fixed_zero.iter().all(|&(u, v)| !adj.get(u, v))
        && fixings.fixed_one.iter().all(|&(u, v)| adj.get(u, v))
}

/// Fixes the first `k` toggles of `order` to their value in `target`.
pub fn fixings_towards(
    target: &Adjacency,
    order: &[(usize, usize)],
    k: usize,
    mode: PerturbationMode,
) -> Fixings {
    let mut f = Fixings::new();
    for &(u, v) in order.iter().take(k) {
        f.fix(mode, u, v, target.get(u, v));
    }
    f
}

/// Tolerance for enclosure checks.
pub const TOL: f64 = 1e-9;

/// First value of the trace that falls outside `table`, if any.
pub fn escape(table: &BoundsTable, tr: &NaiveTrace, margin: f64) -> Option<String> {
    for (l, layer) in table.mp.iter().enumerate() {
        for v in 0..layer.pre.rows() {
            for f in 0..layer.pre.cols() {
                if !layer.pre.get(v, f).contains(tr.pre[l][v][f], TOL) {
                    return Some(format!("pre l={l} v={v} f={f}"));
                }
                if !layer.post.get(v, f).contains(tr.post[l][v][f], TOL) {
                    return Some(format!("post l={l} v={v} f={f}"));
                }
            }
        }
    }
    if let (Some(bounds), Some(values)) = (&table.pooled, &tr.pooled) {
        for (b, x) in bounds.iter().zip(values) {
            if !b.contains(*x, TOL) {
                return Some("pooled".into());
            }
        }
    }
    for (k, layer) in table.dense.iter().enumerate() {
        for f in 0..layer.pre.cols() {
            if !layer.pre.get(0, f).contains(tr.dense_pre[k][f], TOL)
                || !layer.post.get(0, f).contains(tr.dense_post[k][f], TOL)
            {
                return Some(format!("dense {k} f={f}"));
            }
        }
    }
    (!table.margin.contains(margin, TOL)).then(|| "margin".into())
}

pub fn random_fixing_chain(case: &Case, rng: &mut ChaCha8Rng, all: &[Adjacency]) -> Vec<Fixings> {
    let target = &all[rng.gen_range(0..all.len())];
    let mut order = flip_candidates(&case.instance.adjacency, &case.spec);
    order.shuffle(rng);
    (0..=order.len())
        .map(|k| fixings_towards(target, &order, k, case.spec.mode))
        .collect()
}

// ---------------------------------------------------------------------------
// LP text

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(f64, String)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Lp {
    pub objective: Vec<(f64, String)>,
    pub rows: Vec<Row>,
    /// Bounds of every variable; binaries get `[0, 1]`.
    pub bounds: BTreeMap<String, (f64, f64)>,
    pub binaries: BTreeSet<String>,
}

fn parse_terms(tokens: &[&str]) -> Vec<(f64, String)> {
    assert!(
        tokens.len() % 3 == 0,
        "terms come as sign, coefficient, name: {tokens:?}"
    );
    tokens
        .chunks(3)
        .map(|t| {
            let c: f64 = t[1].parse().expect("coefficient");
            let c = match t[0] {
                "+" => c,
                "-" => -c,
                s => panic!("bad sign {s}"),
            };
            (c, t[2].to_string())
        })
        .collect()
}

/// Parses the subset of the CPLEX LP format the exporter writes.
pub fn parse_lp(text: &str) -> Lp {
    let mut lp = Lp::default();
    let mut section = "";
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('\\') || trimmed.is_empty() {
            continue;
        }
        match trimmed {
            "Minimize" | "Subject To" | "Bounds" | "Binaries" | "End" => {
                section = match trimmed {
                    "Minimize" => "obj",
                    "Subject To" => "rows",
                    "Bounds" => "bounds",
                    "Binaries" => "bin",
                    _ => "end",
                };
                continue;
            }
            _ => {}
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        match section {
            "obj" => {
                assert_eq!(tokens[0], "obj:");
                lp.objective = parse_terms(&tokens[1..]);
            }
            "rows" => {
                let name = tokens[0].trim_end_matches(':').to_string();
                let k = tokens.len();
                let cmp = match tokens[k - 2] {
                    "<=" => Cmp::Le,
                    ">=" => Cmp::Ge,
                    "=" => Cmp::Eq,
                    s => panic!("bad sense {s}"),
                };
                let rhs: f64 = tokens[k - 1].parse().expect("rhs");
                let body = &tokens[1..k - 2];
                // an empty row is written as `0 name`
                let terms = if body.len() == 2 {
                    vec![(body[0].parse().expect("coefficient"), body[1].to_string())]
                } else {
                    parse_terms(body)
                };
                lp.rows.push(Row {
                    name,
                    terms,
                    cmp,
                    rhs,
                });
            }
            "bounds" => {
                assert_eq!(tokens.len(), 5, "bound line {trimmed}");
                assert_eq!((tokens[1], tokens[3]), ("<=", "<="));
                let lo: f64 = tokens[0].parse().expect("lower");
                let hi: f64 = tokens[4].parse().expect("upper");
                lp.bounds.insert(tokens[2].to_string(), (lo, hi));
            }
            "bin" => {
                lp.binaries.insert(tokens[0].to_string());
                lp.bounds.insert(tokens[0].to_string(), (0.0, 1.0));
            }
            _ => panic!("text after End: {trimmed}"),
        }
    }
    lp
}

/// Every row and bound holds within `tol` at `values` (looked up by name).
pub fn lp_feasible(lp: &Lp, values: &HashMap<String, f64>, tol: f64) -> Result<(), String> {
    for (name, &(lo, hi)) in &lp.bounds {
        let x = *values
            .get(name)
            .ok_or_else(|| format!("no value for {name}"))?;
        if x < lo - tol || x > hi + tol {
            return Err(format!("{name} = {x} outside [{lo}, {hi}]"));
        }
        if lp.binaries.contains(name) && (x - x.round()).abs() > tol {
            return Err(format!("{name} = {x} is not integral"));
        }
    }
    for row in &lp.rows {
        let lhs: f64 = row.terms.iter().map(|(c, v)| c * values[v]).sum();
        let ok = match row.cmp {
            Cmp::Le => lhs <= row.rhs + tol,
            Cmp::Ge => lhs >= row.rhs - tol,
            Cmp::Eq => (lhs - row.rhs).abs() <= tol,
        };
        if !ok {
            return Err(format!("{} violated: {lhs} vs {}", row.name, row.rhs));
        }
    }
    Ok(())
}

pub fn lp_objective(lp: &Lp, values: &HashMap<String, f64>) -> f64 {
    lp.objective.iter().map(|(c, v)| c * values[v]).sum()
}

/// Values of every variable name the exporter can use, from a naive
/// forward pass at `adj`. Indicators are 1 exactly for positive
/// preactivations.
pub fn named_assignment(
    model: &MpnnModel,
    inst: &GraphInstance,
    adj: &Adjacency,
) -> HashMap<String, f64> {
    let tr = naive_trace(model, inst, adj);
    let n = adj.n();
    let mut m = HashMap::new();
    let bit = |b: bool| if b { 1.0 } else { 0.0 };
    for u in 0..n {
        for v in 0..n {
            m.insert(format!("A_{u}_{v}"), bit(adj.get(u, v)));
        }
    }
    for (i, layer) in model.mp_layers.iter().enumerate() {
        let l = i + 1;
        let d_in = layer.w_self.nrows();
        for u in 0..n {
            for v in 0..n {
                for k in 0..d_in {
                    let x = if i == 0 {
                        inst.features[[u, k]]
                    } else {
                        tr.post[i - 1][u][k]
                    };
                    m.insert(
                        format!("y_{l}_{u}_{v}_{k}"),
                        if adj.get(u, v) { x } else { 0.0 },
                    );
                }
            }
        }
        for v in 0..n {
            for f in 0..layer.w_self.ncols() {
                let z = tr.pre[i][v][f];
                m.insert(format!("xb_{l}_{v}_{f}"), z);
                m.insert(format!("x_{l}_{v}_{f}"), tr.post[i][v][f]);
                m.insert(format!("s_{l}_{v}_{f}"), bit(z > 0.0));
            }
        }
    }
    if let Some(p) = &tr.pooled {
        for (f, x) in p.iter().enumerate() {
            m.insert(format!("p_{f}"), *x);
        }
    }
    for (i, (p, q)) in tr.dense_pre.iter().zip(&tr.dense_post).enumerate() {
        let k = i + 1;
        for f in 0..p.len() {
            m.insert(format!("db_{k}_{f}"), p[f]);
            m.insert(format!("d_{k}_{f}"), q[f]);
            m.insert(format!("ds_{k}_{f}"), bit(p[f] > 0.0));
        }
    }
    m
}

type IndexedRow = (Vec<(f64, usize)>, Cmp, f64);

/// The rows of an [`Lp`] over variable indices, for bound propagation.
pub struct Propagator {
    pub names: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<IndexedRow>,
    is_binary: Vec<bool>,
    /// Binaries in branching order: adjacency variables first, then by name.
    binaries: Vec<usize>,
    objective: Vec<(f64, usize)>,
    start: Vec<(f64, f64)>,
}

impl Propagator {
    pub fn new(lp: &Lp) -> Self {
        let names: Vec<String> = lp.bounds.keys().cloned().collect();
        let index: HashMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let rows = lp
            .rows
            .iter()
            .map(|r| {
                (
                    r.terms.iter().map(|(c, v)| (*c, index[v])).collect(),
                    r.cmp,
                    r.rhs,
                )
            })
            .collect();
        let mut bin: Vec<&String> = lp.binaries.iter().collect();
        bin.sort_by_key(|n| (!n.starts_with("A_"), n.to_string()));
        Self {
            binaries: bin.iter().map(|n| index[*n]).collect(),
            is_binary: names.iter().map(|n| lp.binaries.contains(n)).collect(),
            objective: lp.objective.iter().map(|(c, v)| (*c, index[v])).collect(),
            start: lp.bounds.values().copied().collect(),
            rows,
            names,
            index,
        }
    }

    /// Tightens `b` through every row until nothing changes. Binaries are
    /// rounded inward. Returns `false` on an empty domain.
    pub fn propagate(&self, b: &mut [(f64, f64)]) -> bool {
        let lo_of = |c: f64, (l, h): (f64, f64)| if c >= 0.0 { c * l } else { c * h };
        let hi_of = |c: f64, (l, h): (f64, f64)| if c >= 0.0 { c * h } else { c * l };
        for _ in 0..500 {
            let mut changed = false;
            for (terms, cmp, rhs) in &self.rows {
                for &(c, i) in terms {
                    if c == 0.0 {
                        continue;
                    }
                    let rest_lo: f64 = terms
                        .iter()
                        .filter(|t| t.1 != i)
                        .map(|&(c, j)| lo_of(c, b[j]))
                        .sum();
                    let rest_hi: f64 = terms
                        .iter()
                        .filter(|t| t.1 != i)
                        .map(|&(c, j)| hi_of(c, b[j]))
                        .sum();
                    let (mut lo, mut hi) = b[i];
                    if matches!(cmp, Cmp::Le | Cmp::Eq) {
                        let cap = (rhs - rest_lo) / c;
                        if c > 0.0 {
                            hi = hi.min(cap);
                        } else {
                            lo = lo.max(cap);
                        }
                    }
                    if matches!(cmp, Cmp::Ge | Cmp::Eq) {
                        let floor = (rhs - rest_hi) / c;
                        if c > 0.0 {
                            lo = lo.max(floor);
                        } else {
                            hi = hi.min(floor);
                        }
                    }
                    if self.is_binary[i] {
                        lo = (lo - 1e-9).ceil();
                        hi = (hi + 1e-9).floor();
                    }
                    if lo > hi + 1e-9 {
                        return false;
                    }
                    let hi = hi.max(lo);
                    if lo > b[i].0 + 1e-12 || hi < b[i].1 - 1e-12 {
                        changed = true;
                        b[i] = (lo.max(b[i].0), hi.min(b[i].1));
                    }
                }
            }
            if !changed {
                break;
            }
        }
        true
    }

    /// Domains after fixing `fixed` and propagating, or `None` when that is
    /// infeasible.
    pub fn pinned(&self, fixed: &HashMap<String, f64>) -> Option<HashMap<String, (f64, f64)>> {
        let mut b = self.start.clone();
        for (name, &x) in fixed {
            if let Some(&i) = self.index.get(name) {
                b[i] = (x, x);
            }
        }
        self.propagate(&mut b)
            .then(|| self.names.iter().cloned().zip(b).collect())
    }

    /// Exact optimum: depth-first over the binaries with propagation at
    /// every node. `None` when infeasible.
    pub fn minimum(&self) -> Option<f64> {
        let mut best = None;
        self.search(self.start.clone(), &mut best);
        best
    }

    fn search(&self, mut b: Vec<(f64, f64)>, best: &mut Option<f64>) {
        if !self.propagate(&mut b) {
            return;
        }
        match self.binaries.iter().find(|&&i| b[i].0 != b[i].1) {
            Some(&i) => {
                for value in [0.0, 1.0] {
                    let mut child = b.clone();
                    child[i] = (value, value);
                    self.search(child, best);
                }
            }
            None => {
                // with every binary fixed the rows pin the continuous values
                let lo: f64 = self
                    .objective
                    .iter()
                    .map(|&(c, i)| if c >= 0.0 { c * b[i].0 } else { c * b[i].1 })
                    .sum();
                let hi: f64 = self
                    .objective
                    .iter()
                    .map(|&(c, i)| if c >= 0.0 { c * b[i].1 } else { c * b[i].0 })
                    .sum();
                assert!(hi - lo < 1e-6, "objective not pinned: [{lo}, {hi}]");
                if best.map_or(true, |v| lo < v) {
                    *best = Some(lo);
                }
            }
        }
    }
}
