//! Complete robustness decision by branch-and-bound over edge variables.
//!
//! Every search node carries a set of fixed adjacency entries. Its dual
//! bound is the lower end of the margin interval computed by the bounds
//! engine under those fixings:
//!
//! * `Basic`: fixed entries are substituted, free entries range over
//!   `{0, 1}`, and every layer is intersected with the root table.
//! * `Sbt`: the topology-based rule with fixed entries substituted and the
//!   root budgets kept for the free entries, intersected with the root
//!   table. Budgets are not re-derived.
//! * `Abt`: full topology-based recomputation with the remaining budgets.
//!
//! The search stops as soon as a matrix with negative margin is found
//! (non-robust) or every open node has a nonnegative dual bound (robust).
//! A margin of exactly zero counts as robust.

mod attack;
mod oracle;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::time::{Duration, Instant};

use serde::Serialize;

pub use attack::attack_search;
pub use oracle::brute_force_verdict;

use crate::bounds::{BoundsEngine, BoundsTable, ContributionCache, Strategy};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, GraphInstance, Target};
use crate::model::MpnnModel;
use crate::perturbation::{
    flip_candidates, BudgetState, Fixings, PerturbationMode, PerturbationSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Robust,
    NonRobust,
    Timeout,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Robust => "robust",
            Status::NonRobust => "nonrobust",
            Status::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branching {
    /// Largest total layer-1 bound change `|Δ_lb| + |Δ_ub|` first.
    MaxImpact,
    /// First free pair in lexicographic order.
    InputOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeSelection {
    BestBound,
    DepthFirst,
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchConfig {
    pub strategy: Strategy,
    pub time_limit: Duration,
    pub node_limit: usize,
    pub branching: Branching,
    pub node_selection: NodeSelection,
    pub seed: u64,
    /// Restarts of the greedy attack run before the tree search.
    pub attack_restarts: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Abt,
            time_limit: Duration::from_secs(7200),
            node_limit: 10_000_000,
            branching: Branching::MaxImpact,
            node_selection: NodeSelection::BestBound,
            seed: 0,
            attack_restarts: 2,
        }
    }
}

impl SearchConfig {
    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchStats {
    pub nodes_explored: usize,
    pub max_depth: usize,
    pub time_seconds: f64,
    pub strategy: Strategy,
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub status: Status,
    /// Admissible matrix with negative margin, for non-robust instances.
    pub witness: Option<Adjacency>,
    /// Proven lower bound on the minimum margin.
    pub certified_bound: Option<f64>,
    pub stats: SearchStats,
}

/// A subproblem of the search tree.
#[derive(Clone, Debug)]
pub struct BBNode {
    pub fixings: Fixings,
    pub depth: usize,
    /// Lower bound on the margin over this node's matrices.
    pub dual_bound: f64,
    pub budget_state: BudgetState,
}

/// Precomputed per-instance state shared by all nodes of one search.
pub struct Verifier<'a> {
    model: &'a MpnnModel,
    instance: &'a GraphInstance,
    spec: &'a PerturbationSpec,
    engine: BoundsEngine<'a>,
    strategy: Strategy,
    root: BoundsTable,
    /// Branching variables that can influence the objective.
    decisions: Vec<(usize, usize)>,
    /// Irrelevant decisions, pinned to their base value.
    pinned: Vec<(usize, usize)>,
    impact: Vec<f64>,
}

impl<'a> Verifier<'a> {
    pub fn new(
        model: &'a MpnnModel,
        instance: &'a GraphInstance,
        spec: &'a PerturbationSpec,
        strategy: Strategy,
    ) -> Result<Self> {
        let engine = BoundsEngine::new(model, instance, spec)?;
        let root = engine.root(strategy);
        let relevant = relevant_columns(model, instance, spec);
        let (decisions, pinned): (Vec<_>, Vec<_>) = flip_candidates(&instance.adjacency, spec)
            .into_iter()
            .partition(|&(u, v)| {
                relevant[v] || (spec.mode == PerturbationMode::UndirectedFlip && relevant[u])
            });
        let impact = layer1_impact(model, instance, spec, &decisions, &relevant)?;
        Ok(Self {
            model,
            instance,
            spec,
            engine,
            strategy,
            root,
            decisions,
            pinned,
            impact,
        })
    }

    pub fn root_table(&self) -> &BoundsTable {
        &self.root
    }

    /// Decision variables the search branches on.
    pub fn decisions(&self) -> &[(usize, usize)] {
        &self.decisions
    }

    fn base(&self) -> &Adjacency {
        &self.instance.adjacency
    }

    /// Lower bound on the margin over all admissible matrices that agree
    /// with `fixings`.
    pub fn node_bound(&self, fixings: &Fixings) -> Result<f64> {
        let table = match self.strategy {
            Strategy::Abt => self.engine.abt(fixings)?,
            Strategy::Basic => self.engine.substituted(fixings, Some(&self.root))?,
            Strategy::Sbt => self.engine.sbt_substituted(fixings, &self.root)?,
        };
        Ok(table.margin.lo)
    }

    /// Margin at the matrix that follows `fixings` and equals `A*` elsewhere.
    pub fn completion_margin(&self, fixings: &Fixings) -> Result<(f64, Adjacency)> {
        let adj = fixings.complete_with(self.base());
        let m = self.margin(&adj)?;
        Ok((m, adj))
    }

    fn margin(&self, adj: &Adjacency) -> Result<f64> {
        self.model.margin(
            &self.instance.features,
            adj,
            self.instance.label_true,
            self.instance.label_attack,
            self.instance.target,
        )
    }

    /// Adds the fixings implied by the budgets: a free decision whose flip
    /// no longer fits is pinned to `A*`, as are decisions that cannot reach
    /// the objective.
    pub fn propagate_domains(&self, mut fixings: Fixings) -> Fixings {
        let base = self.base();
        let mode = self.spec.mode;
        for &(u, v) in &self.pinned {
            if fixings.get(u, v).is_none() {
                fixings.fix(mode, u, v, base.get(u, v));
            }
        }
        let state = BudgetState::from_fixings(base, &fixings);
        let entries_left = self.spec.entry_budget() as i64 - state.total_spent() as i64;
        let local_left = |w: usize| self.spec.local_budgets[w] as i64 - state.spent(w) as i64;
        for &(u, v) in &self.decisions {
            if fixings.get(u, v).is_some() {
                continue;
            }
            let fits = match mode {
                PerturbationMode::UndirectedFlip => {
                    entries_left >= 2 && local_left(u) >= 1 && local_left(v) >= 1
                }
                PerturbationMode::DirectedRemoveOnly => entries_left >= 1 && local_left(v) >= 1,
            };
            if !fits {
                fixings.fix(mode, u, v, base.get(u, v));
            }
        }
        fixings
    }

    fn free_decisions<'s>(
        &'s self,
        fixings: &'s Fixings,
    ) -> impl Iterator<Item = (usize, (usize, usize))> + 's {
        self.decisions
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, (u, v))| fixings.get(*u, *v).is_none())
    }

    /// Splits `node` on one free decision into a 0-child and a 1-child.
    pub fn branch(&self, node: &BBNode, rule: Branching) -> Result<((usize, usize), [BBNode; 2])> {
        let chosen = match rule {
            Branching::InputOrder => self.free_decisions(&node.fixings).next(),
            Branching::MaxImpact => {
                self.free_decisions(&node.fixings)
                    .fold(None, |best, cand| match best {
                        Some((i, _)) if self.impact[i] >= self.impact[cand.0] => best,
                        _ => Some(cand),
                    })
            }
        };
        let (_, (u, v)) = chosen.ok_or(Error::NoBranchCandidate)?;
        let child = |value: bool| {
            let fixings = node.fixings.clone().with(self.spec.mode, u, v, value);
            BBNode {
                budget_state: BudgetState::from_fixings(self.base(), &fixings),
                fixings,
                depth: node.depth + 1,
                dual_bound: node.dual_bound,
            }
        };
        Ok(((u, v), [child(false), child(true)]))
    }

    /// Runs the tree search. Time is measured from here, after the root
    /// bounds were built.
    pub fn search(&self, config: &SearchConfig, cancel: Option<&AtomicBool>) -> Result<Verdict> {
        let start = Instant::now();
        let mut stats = SearchStats {
            nodes_explored: 0,
            max_depth: 0,
            time_seconds: 0.0,
            strategy: self.strategy,
        };
        let finish = |status, witness, certified_bound, mut stats: SearchStats| {
            stats.time_seconds = start.elapsed().as_secs_f64();
            Ok(Verdict {
                status,
                witness,
                certified_bound,
                stats,
            })
        };

        if let Some(w) = attack_search(
            self.model,
            self.instance,
            self.spec,
            config.attack_restarts,
            config.seed,
        )? {
            return finish(Status::NonRobust, Some(w), None, stats);
        }

        let mut pool = Pool::new(config.node_selection);
        let root_fixings = self.propagate_domains(Fixings::new());
        pool.push(BBNode {
            budget_state: BudgetState::from_fixings(self.base(), &root_fixings),
            fixings: root_fixings,
            depth: 0,
            dual_bound: f64::NEG_INFINITY,
        });
        let mut certified = f64::INFINITY;

        while let Some(mut node) = pool.pop() {
            let cancelled = cancel.is_some_and(|c| c.load(AtomicOrdering::Relaxed));
            if cancelled
                || stats.nodes_explored >= config.node_limit
                || start.elapsed() > config.time_limit
            {
                let open = pool.min_bound().min(node.dual_bound);
                return finish(Status::Timeout, None, Some(certified.min(open)), stats);
            }
            stats.nodes_explored += 1;
            stats.max_depth = stats.max_depth.max(node.depth);

            let (m, completion) = self.completion_margin(&node.fixings)?;
            if m < 0.0 {
                return finish(Status::NonRobust, Some(completion), None, stats);
            }
            if self.free_decisions(&node.fixings).next().is_none() {
                certified = certified.min(m);
                continue;
            }
            let bound = self.node_bound(&node.fixings)?;
            if bound >= 0.0 {
                certified = certified.min(bound);
                continue;
            }
            node.dual_bound = bound;
            let (_, children) = self.branch(&node, config.branching)?;
            let [zero, one] = children;
            let ordered = match config.node_selection {
                // both pools hand out the 1-child first
                NodeSelection::DepthFirst => [zero, one],
                NodeSelection::BestBound => [one, zero],
            };
            for mut child in ordered {
                child.fixings = self.propagate_domains(child.fixings);
                child.budget_state = BudgetState::from_fixings(self.base(), &child.fixings);
                pool.push(child);
            }
        }
        finish(Status::Robust, None, Some(certified), stats)
    }
}

/// Columns whose edges can change the objective. For a node target these
/// are the nodes within reach of `t` through layers that pass messages, in
/// the largest graph the perturbation allows.
fn relevant_columns(
    model: &MpnnModel,
    instance: &GraphInstance,
    spec: &PerturbationSpec,
) -> Vec<bool> {
    let n = instance.n();
    let Target::Node(t) = instance.target else {
        return vec![true; n];
    };
    let base = &instance.adjacency;
    let mut influence = vec![false; n];
    influence[t] = true;
    let mut relevant = vec![false; n];
    for layer in model.mp_layers.iter().rev() {
        if layer.has_no_messages() {
            continue;
        }
        let mut next = influence.clone();
        for v in (0..n).filter(|&v| influence[v]) {
            relevant[v] = true;
            for u in 0..n {
                if spec.may_flip(base, u, v) || base.get(u, v) {
                    next[u] = true;
                }
            }
        }
        influence = next;
    }
    relevant
}

/// `sum_f' |Δ_lb| + |Δ_ub|` of the first layer for every decision, over the
/// relevant columns it touches.
fn layer1_impact(
    model: &MpnnModel,
    instance: &GraphInstance,
    spec: &PerturbationSpec,
    decisions: &[(usize, usize)],
    relevant: &[bool],
) -> Result<Vec<f64>> {
    let layer = &model.mp_layers[0];
    let input = crate::bounds::IntervalMatrix::points(&instance.features);
    let caches = (0..layer.out_dim())
        .map(|f| ContributionCache::new(layer.w_neigh.column(f), &input))
        .collect::<Result<Vec<_>>>()?;
    let base = &instance.adjacency;
    let entry = |u: usize, v: usize| -> f64 {
        if !relevant[v] {
            return 0.0;
        }
        caches
            .iter()
            .map(|c| c.delta_lb(base, u, v).abs() + c.delta_ub(base, u, v).abs())
            .sum()
    };
    Ok(decisions
        .iter()
        .map(|&(u, v)| match spec.mode {
            PerturbationMode::UndirectedFlip => entry(u, v) + entry(v, u),
            PerturbationMode::DirectedRemoveOnly => entry(u, v),
        })
        .collect())
}

/// Ordered by dual bound, then by insertion.
struct Keyed {
    bound: f64,
    seq: u64,
    node: BBNode,
}

impl PartialEq for Keyed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Keyed {}

impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Keyed {
    // BinaryHeap is a max-heap: the smallest bound and oldest node win.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

enum Pool {
    BestBound { heap: BinaryHeap<Keyed>, seq: u64 },
    DepthFirst(Vec<BBNode>),
}

impl Pool {
    fn new(selection: NodeSelection) -> Self {
        match selection {
            NodeSelection::BestBound => Pool::BestBound {
                heap: BinaryHeap::new(),
                seq: 0,
            },
            NodeSelection::DepthFirst => Pool::DepthFirst(Vec::new()),
        }
    }

    fn push(&mut self, node: BBNode) {
        match self {
            Pool::BestBound { heap, seq } => {
                heap.push(Keyed {
                    bound: node.dual_bound,
                    seq: *seq,
                    node,
                });
                *seq += 1;
            }
            Pool::DepthFirst(stack) => stack.push(node),
        }
    }

    fn pop(&mut self) -> Option<BBNode> {
        match self {
            Pool::BestBound { heap, .. } => heap.pop().map(|k| k.node),
            Pool::DepthFirst(stack) => stack.pop(),
        }
    }

    fn min_bound(&self) -> f64 {
        match self {
            Pool::BestBound { heap, .. } => heap.peek().map_or(f64::INFINITY, |k| k.bound),
            Pool::DepthFirst(stack) => stack
                .iter()
                .map(|n| n.dual_bound)
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Decides robustness of `instance` against `spec`.
pub fn verify(
    model: &MpnnModel,
    instance: &GraphInstance,
    spec: &PerturbationSpec,
    config: &SearchConfig,
) -> Result<Verdict> {
    Verifier::new(model, instance, spec, config.strategy)?.search(config, None)
}

/// Sound lower bound on the margin under `fixings` for one strategy.
pub fn node_bound(
    model: &MpnnModel,
    instance: &GraphInstance,
    spec: &PerturbationSpec,
    fixings: &Fixings,
    strategy: Strategy,
) -> Result<f64> {
    Verifier::new(model, instance, spec, strategy)?.node_bound(fixings)
}

/// Runs Sbt and Abt side by side and keeps whichever finishes first.
pub fn verify_portfolio(
    model: &MpnnModel,
    instance: &GraphInstance,
    spec: &PerturbationSpec,
    config: &SearchConfig,
) -> Result<Verdict> {
    let stop = AtomicBool::new(false);
    let run = |strategy: Strategy| -> Result<Verdict> {
        let verdict = Verifier::new(model, instance, spec, strategy)?
            .search(&config.clone().with_strategy(strategy), Some(&stop))?;
        if verdict.status != Status::Timeout {
            stop.store(true, AtomicOrdering::Relaxed);
        }
        Ok(verdict)
    };
    let (a, b) = std::thread::scope(|s| {
        let sbt = s.spawn(|| run(Strategy::Sbt));
        let abt = run(Strategy::Abt);
        (sbt.join().expect("sbt worker panicked"), abt)
    });
    let (a, b) = (a?, b?);
    Ok(match (a.status, b.status) {
        (Status::Timeout, _) => b,
        (_, Status::Timeout) => a,
        _ if b.stats.time_seconds < a.stats.time_seconds => b,
        _ => a,
    })
}
