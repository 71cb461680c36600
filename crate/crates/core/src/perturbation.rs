//! Admissible edge perturbations, budget accounting and the enumeration oracle.
//!
//! Two perturbation sets are supported:
//!
//! * `UndirectedFlip` (P1): symmetric `A`, at most `2Q` changed entries in
//!   total and at most `q_v` changed entries in column `v`. An undirected
//!   flip `{u, v}` changes two entries and uses one unit of `q_u` and `q_v`.
//! * `DirectedRemoveOnly` (P2): `A <= A*` entry-wise, at most `Q` changed
//!   entries, at most `q_v` per column.

use std::collections::{BTreeSet, VecDeque};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, GraphInstance, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerturbationMode {
    #[serde(rename = "p1")]
    UndirectedFlip,
    #[serde(rename = "p2")]
    DirectedRemoveOnly,
}

impl PerturbationMode {
    pub fn name(self) -> &'static str {
        match self {
            PerturbationMode::UndirectedFlip => "p1",
            PerturbationMode::DirectedRemoveOnly => "p2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerturbationSpec {
    pub mode: PerturbationMode,
    /// `Q`.
    pub global_budget: usize,
    /// `q_v`, one per node.
    pub local_budgets: Vec<usize>,
    /// Caps the P1 global term at the number of remaining undirected flips
    /// instead of remaining entry changes. Off by default.
    pub tight_root_budget: bool,
}

impl PerturbationSpec {
    pub fn new(mode: PerturbationMode, global_budget: usize, local_budgets: Vec<usize>) -> Self {
        Self {
            mode,
            global_budget,
            local_budgets,
            tight_root_budget: false,
        }
    }

    pub fn with_tight_root_budget(mut self, on: bool) -> Self {
        self.tight_root_budget = on;
        self
    }

    /// Checks the spec against the instance it will be applied to.
    pub fn validate_for(&self, instance: &GraphInstance) -> Result<()> {
        if self.local_budgets.len() != instance.n() {
            return Err(Error::InvalidSpec(format!(
                "{} local budgets for {} nodes",
                self.local_budgets.len(),
                instance.n()
            )));
        }
        if self.mode == PerturbationMode::UndirectedFlip && instance.directed {
            return Err(Error::InvalidSpec(
                "p1 perturbations need an undirected graph".into(),
            ));
        }
        Ok(())
    }

    /// Budget on changed adjacency entries: `2Q` for P1, `Q` for P2.
    pub fn entry_budget(&self) -> usize {
        match self.mode {
            PerturbationMode::UndirectedFlip => 2 * self.global_budget,
            PerturbationMode::DirectedRemoveOnly => self.global_budget,
        }
    }

    /// Whether entry `(u, v)` may differ from the base at all.
    pub fn may_flip(&self, base: &Adjacency, u: usize, v: usize) -> bool {
        u != v
            && match self.mode {
                PerturbationMode::UndirectedFlip => true,
                PerturbationMode::DirectedRemoveOnly => base.get(u, v),
            }
    }
}

/// Budget rule used by the experiments on benchmark graphs:
/// `q_v = max(0, d_v - max_u d_u + s)`.
pub fn local_budget_from_degree(degrees: &[usize], strength: i64) -> Vec<usize> {
    let max_degree = degrees.iter().copied().max().unwrap_or(0) as i64;
    degrees
        .iter()
        .map(|&d| (d as i64 - max_degree + strength).max(0) as usize)
        .collect()
}

/// In-degree of every node.
pub fn degrees(adjacency: &Adjacency) -> Vec<usize> {
    (0..adjacency.n()).map(|v| adjacency.in_degree(v)).collect()
}

/// Membership test for `P1(A*)` / `P2(A*)`.
pub fn is_admissible(
    adjacency: &Adjacency,
    base: &Adjacency,
    spec: &PerturbationSpec,
) -> Result<bool> {
    let n = base.n();
    if adjacency.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} x {0} matrix against {n} x {n} base",
            adjacency.n()
        )));
    }
    if spec.local_budgets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} local budgets for {n} nodes",
            spec.local_budgets.len()
        )));
    }
    adjacency.check_zero_diagonal()?;
    base.check_zero_diagonal()?;

    match spec.mode {
        PerturbationMode::UndirectedFlip => {
            if !adjacency.is_symmetric() {
                return Ok(false);
            }
        }
        PerturbationMode::DirectedRemoveOnly => {
            let adds = (0..n).any(|u| (0..n).any(|v| adjacency.get(u, v) && !base.get(u, v)));
            if adds {
                return Ok(false);
            }
        }
    }
    if adjacency.hamming(base) > spec.entry_budget() {
        return Ok(false);
    }
    Ok((0..n).all(|v| adjacency.column_changes(base, v) <= spec.local_budgets[v]))
}

/// Edge variables decided in a branch-and-bound node.
///
/// Under P1 both orientations of a pair are always stored together.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Fixings {
    pub fixed_zero: BTreeSet<(usize, usize)>,
    pub fixed_one: BTreeSet<(usize, usize)>,
}

impl Fixings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed_zero.is_empty() && self.fixed_one.is_empty()
    }

    pub fn len(&self) -> usize {
        self.fixed_zero.len() + self.fixed_one.len()
    }

    pub fn get(&self, u: usize, v: usize) -> Option<bool> {
        if self.fixed_one.contains(&(u, v)) {
            Some(true)
        } else if self.fixed_zero.contains(&(u, v)) {
            Some(false)
        } else {
            None
        }
    }

    /// Fixes `A[u][v]`, and `A[v][u]` too under P1.
    pub fn fix(&mut self, mode: PerturbationMode, u: usize, v: usize, value: bool) {
        self.fix_entry(u, v, value);
        if mode == PerturbationMode::UndirectedFlip {
            self.fix_entry(v, u, value);
        }
    }

    fn fix_entry(&mut self, u: usize, v: usize, value: bool) {
        if value {
            self.fixed_zero.remove(&(u, v));
            self.fixed_one.insert((u, v));
        } else {
            self.fixed_one.remove(&(u, v));
            self.fixed_zero.insert((u, v));
        }
    }

    pub fn with(mut self, mode: PerturbationMode, u: usize, v: usize, value: bool) -> Self {
        self.fix(mode, u, v, value);
        self
    }

    /// Whether every fixing in `other` also appears here with the same value.
    pub fn extends(&self, other: &Fixings) -> bool {
        other.fixed_zero.is_subset(&self.fixed_zero) && other.fixed_one.is_subset(&self.fixed_one)
    }

    /// The matrix that agrees with the fixings and with `base` elsewhere.
    pub fn complete_with(&self, base: &Adjacency) -> Adjacency {
        let mut adj = base.clone();
        for &(u, v) in &self.fixed_zero {
            adj.set(u, v, false);
        }
        for &(u, v) in &self.fixed_one {
            adj.set(u, v, true);
        }
        adj
    }

    /// Rejects overlapping, asymmetric (P1), adding (P2) or over-budget fixings.
    pub fn validate(&self, base: &Adjacency, spec: &PerturbationSpec) -> Result<()> {
        let n = base.n();
        if let Some(p) = self.fixed_zero.intersection(&self.fixed_one).next() {
            return Err(Error::InconsistentFixings(format!(
                "{p:?} fixed to both 0 and 1"
            )));
        }
        for &(u, v) in self.fixed_zero.iter().chain(&self.fixed_one) {
            if u >= n || v >= n {
                return Err(Error::InconsistentFixings(format!(
                    "({u}, {v}) out of range"
                )));
            }
            if u == v {
                return Err(Error::InconsistentFixings(format!(
                    "diagonal entry ({u}, {u}) fixed"
                )));
            }
        }
        match spec.mode {
            PerturbationMode::UndirectedFlip => {
                let asym = self
                    .fixed_zero
                    .iter()
                    .any(|&(u, v)| !self.fixed_zero.contains(&(v, u)))
                    || self
                        .fixed_one
                        .iter()
                        .any(|&(u, v)| !self.fixed_one.contains(&(v, u)));
                if asym {
                    return Err(Error::InconsistentFixings(
                        "p1 fixings must be symmetric".into(),
                    ));
                }
            }
            PerturbationMode::DirectedRemoveOnly => {
                if let Some(&(u, v)) = self.fixed_one.iter().find(|&&(u, v)| !base.get(u, v)) {
                    return Err(Error::InconsistentFixings(format!(
                        "({u}, {v}) fixed to 1 but p2 cannot add edges"
                    )));
                }
            }
        }
        let state = BudgetState::from_fixings(base, self);
        if state.total_spent() > spec.entry_budget() {
            return Err(Error::InconsistentFixings(format!(
                "{} entries changed, budget {}",
                state.total_spent(),
                spec.entry_budget()
            )));
        }
        for v in 0..n {
            if state.spent(v) > spec.local_budgets[v] {
                return Err(Error::InconsistentFixings(format!(
                    "column {v} changed {} times, budget {}",
                    state.spent(v),
                    spec.local_budgets[v]
                )));
            }
        }
        Ok(())
    }
}

/// Budget already consumed by a set of fixings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BudgetState {
    /// `e_r(v)`: original in-neighbors of `v` fixed to 0.
    pub removed_per_node: Vec<usize>,
    /// `e_a(v)`: non-neighbors of `v` fixed to 1.
    pub added_per_node: Vec<usize>,
}

impl BudgetState {
    pub fn from_fixings(base: &Adjacency, fixings: &Fixings) -> Self {
        let n = base.n();
        let mut removed = vec![0; n];
        let mut added = vec![0; n];
        for &(u, v) in &fixings.fixed_zero {
            if base.get(u, v) {
                removed[v] += 1;
            }
        }
        for &(u, v) in &fixings.fixed_one {
            if !base.get(u, v) {
                added[v] += 1;
            }
        }
        Self {
            removed_per_node: removed,
            added_per_node: added,
        }
    }

    pub fn spent(&self, v: usize) -> usize {
        self.removed_per_node[v] + self.added_per_node[v]
    }

    pub fn total_spent(&self) -> usize {
        self.removed_per_node.iter().sum::<usize>() + self.added_per_node.iter().sum::<usize>()
    }
}

/// Remaining number of entry changes available to column `v`:
/// `min(q_v - e_r(v) - e_a(v), G - sum e_r - sum e_a)`, clamped at zero,
/// where `G` is `2Q` for P1 and `Q` for P2.
pub fn remaining_local_budget(spec: &PerturbationSpec, state: &BudgetState, v: usize) -> usize {
    let local = spec.local_budgets[v] as i64 - state.spent(v) as i64;
    let global_left = spec.entry_budget() as i64 - state.total_spent() as i64;
    let global = if spec.tight_root_budget && spec.mode == PerturbationMode::UndirectedFlip {
        // every flip touching column v spends two entries
        global_left.div_euclid(2)
    } else {
        global_left
    };
    local.min(global).max(0) as usize
}

/// Decision variables a perturbation may change: unordered pairs `(u < v)`
/// under P1, existing ordered edges under P2.
pub fn flip_candidates(base: &Adjacency, spec: &PerturbationSpec) -> Vec<(usize, usize)> {
    let n = base.n();
    match spec.mode {
        PerturbationMode::UndirectedFlip => (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect(),
        PerturbationMode::DirectedRemoveOnly => base.edges(),
    }
}

/// Result of cutting a k-hop neighborhood out of a larger graph.
#[derive(Clone, Debug)]
pub struct KhopExtraction {
    pub graph: GraphInstance,
    /// `mapping[new_id] = old_id`, ascending in old ids.
    pub mapping: Vec<usize>,
}

impl KhopExtraction {
    /// Restricts per-node budgets to the extracted nodes.
    pub fn restrict_spec(&self, spec: &PerturbationSpec) -> PerturbationSpec {
        PerturbationSpec {
            local_budgets: self
                .mapping
                .iter()
                .map(|&old| spec.local_budgets[old])
                .collect(),
            ..spec.clone()
        }
    }
}

/// Induced subgraph on the nodes that reach `t` along at most `k` edges.
///
/// Only meaningful for remove-only perturbations, where the neighborhood of
/// `t` can shrink but never grow.
pub fn extract_khop(
    graph: &GraphInstance,
    mode: PerturbationMode,
    t: usize,
    k: usize,
) -> Result<KhopExtraction> {
    if mode != PerturbationMode::DirectedRemoveOnly {
        return Err(Error::ModeMismatch {
            expected: "p2 (remove-only)",
        });
    }
    let n = graph.n();
    if t >= n {
        return Err(Error::InvalidGraph(format!("target {t} out of range")));
    }
    let mut dist = vec![usize::MAX; n];
    dist[t] = 0;
    let mut queue = VecDeque::from([t]);
    while let Some(v) = queue.pop_front() {
        if dist[v] == k {
            continue;
        }
        for u in graph.adjacency.in_neighbors(v) {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    let mapping: Vec<usize> = (0..n).filter(|&v| dist[v] != usize::MAX).collect();
    let mut new_id = vec![usize::MAX; n];
    for (i, &old) in mapping.iter().enumerate() {
        new_id[old] = i;
    }
    let m = mapping.len();
    let mut adj = Adjacency::empty(m);
    for (i, &ou) in mapping.iter().enumerate() {
        for (j, &ov) in mapping.iter().enumerate() {
            if graph.adjacency.get(ou, ov) {
                adj.set(i, j, true);
            }
        }
    }
    let features = graph.features.select(ndarray::Axis(0), &mapping);
    let sub = GraphInstance::new(
        features,
        adj,
        graph.directed,
        Target::Node(new_id[t]),
        graph.label_true,
        graph.label_attack,
    )?;
    Ok(KhopExtraction {
        graph: sub,
        mapping,
    })
}

/// Lazily yields every matrix of the perturbation set exactly once, starting
/// with the base. Yields `Err(CapExceeded)` once more than `cap` matrices
/// would be produced, then stops.
pub fn enumerate_admissible(
    base: &Adjacency,
    spec: &PerturbationSpec,
    cap: usize,
) -> AdmissibleIter {
    let candidates = flip_candidates(base, spec);
    let max_flips = spec.global_budget.min(candidates.len());
    let mode = spec.mode;
    let combos: Box<dyn Iterator<Item = Vec<(usize, usize)>>> =
        Box::new((0..=max_flips).flat_map(move |k| candidates.clone().into_iter().combinations(k)));
    AdmissibleIter {
        base: base.clone(),
        local: spec.local_budgets.clone(),
        mode,
        combos,
        cap,
        yielded: 0,
        done: false,
    }
}

pub struct AdmissibleIter {
    base: Adjacency,
    local: Vec<usize>,
    mode: PerturbationMode,
    combos: Box<dyn Iterator<Item = Vec<(usize, usize)>>>,
    cap: usize,
    yielded: usize,
    done: bool,
}

impl Iterator for AdmissibleIter {
    type Item = Result<Adjacency>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let n = self.base.n();
        for flips in self.combos.by_ref() {
            let mut per_column = vec![0usize; n];
            for &(u, v) in &flips {
                per_column[v] += 1;
                if self.mode == PerturbationMode::UndirectedFlip {
                    per_column[u] += 1;
                }
            }
            if per_column.iter().zip(&self.local).any(|(c, q)| c > q) {
                continue;
            }
            if self.yielded == self.cap {
                self.done = true;
                return Some(Err(Error::CapExceeded(self.cap)));
            }
            let mut adj = self.base.clone();
            for &(u, v) in &flips {
                let value = !self.base.get(u, v);
                match self.mode {
                    PerturbationMode::UndirectedFlip => adj.set_pair(u, v, value),
                    PerturbationMode::DirectedRemoveOnly => adj.set(u, v, value),
                }
            }
            self.yielded += 1;
            return Some(Ok(adj));
        }
        self.done = true;
        None
    }
}
