//! Interval bounds for every variable of the verification encoding.
//!
//! Three strategies bound the pre-activation `x̄_{v,f'}` of a message-passing
//! layer:
//!
//! * **Basic** ignores the graph and the budgets: every off-diagonal entry of
//!   column `v` is free in `{0, 1}`, so each neighbor contributes
//!   `min(0, lb_u)` to the lower bound.
//! * **Sbt** (static, topology-based) starts from the original in-neighbors
//!   `N*(v)` and then applies the `q` most harmful changes, where a change is
//!   removing a neighbor (`Δ = -lb_u`) or adding a non-neighbor (`Δ = +lb_u`).
//!   With point inputs this is the exact optimum of the single-column
//!   problem.
//! * **Abt** (aggressive) is Sbt inside a branch-and-bound node: fixed
//!   entries are substituted, only free entries are candidates, and the
//!   budget is what the fixings left over.
//!
//! Upper bounds mirror every rule with the most positive `Δ_ub`. Weights are
//! shared across edges, so the one-node contribution `lb_u` does not depend
//! on the receiving node.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Adjacency, GraphInstance, Target};
use crate::model::{Activation, MpnnLayer, MpnnModel};
use crate::perturbation::{remaining_local_budget, BudgetState, Fixings, PerturbationSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        self.lo - tol <= x && x <= self.hi + tol
    }

    /// `self ⊆ other` up to `tol` on both ends.
    pub fn is_within(&self, other: &Interval, tol: f64) -> bool {
        other.lo - tol <= self.lo && self.hi <= other.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Intersection of two sound enclosures of the same quantity. Rounding can
    /// leave them disjoint by a few ulps; the gap collapses to its midpoint.
    pub fn meet(&self, other: &Interval) -> Interval {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo <= hi {
            Interval { lo, hi }
        } else {
            Interval::point(0.5 * (lo + hi))
        }
    }

    fn plus(self, other: Interval) -> Interval {
        Interval {
            lo: self.lo + other.lo,
            hi: self.hi + other.hi,
        }
    }
}

/// Bounds of `x_{u→v,f} = A_{u,v} · x_{u,f}`: the interval widened to contain 0.
pub fn aux_interval(x: Interval) -> Interval {
    Interval::new(x.lo.min(0.0), x.hi.max(0.0))
}

pub fn relu_interval(pre: Interval) -> Interval {
    Interval::new(pre.lo.max(0.0), pre.hi.max(0.0))
}

pub fn activation_interval(activation: Activation, pre: Interval) -> Interval {
    match activation {
        Activation::Relu => relu_interval(pre),
        Activation::Identity => pre,
    }
}

/// Tight bounds of `sum_f w_f x_f` over a box, by sign split.
pub fn contribution(weights: ArrayView1<'_, f64>, bounds: &[Interval]) -> Result<(f64, f64)> {
    if weights.len() != bounds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights against {} bounds",
            weights.len(),
            bounds.len()
        )));
    }
    Ok(sign_split(weights, bounds))
}

#[inline]
fn sign_split(weights: ArrayView1<'_, f64>, bounds: &[Interval]) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (&w, b) in weights.iter().zip(bounds) {
        if w >= 0.0 {
            lo += w * b.lo;
            hi += w * b.hi;
        } else {
            lo += w * b.hi;
            hi += w * b.lo;
        }
    }
    (lo, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Basic,
    Sbt,
    Abt,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Basic => "basic",
            Strategy::Sbt => "sbt",
            Strategy::Abt => "abt",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Strategy::Basic),
            "sbt" => Ok(Strategy::Sbt),
            "abt" => Ok(Strategy::Abt),
            other => Err(Error::InvalidSpec(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Row-major `rows x cols` matrix of intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Interval>,
}

impl IntervalMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Interval) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn points(values: &ndarray::Array2<f64>) -> Self {
        Self::from_fn(values.nrows(), values.ncols(), |r, c| {
            Interval::point(values[[r, c]])
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Interval {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: Interval) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[Interval] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Interval)> + '_ {
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &b)| (i / self.cols, i % self.cols, b))
    }
}

/// Pre- and post-activation bounds of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerBounds {
    pub pre: IntervalMatrix,
    pub post: IntervalMatrix,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PropagationStats {
    /// One-node contribution bounds computed (each costs `d_{l-1}` products).
    pub contribution_evals: usize,
    /// Partial selections of the most harmful changes.
    pub selections: usize,
}

/// Bounds for every variable of the encoding.
#[derive(Clone, Debug)]
pub struct BoundsTable {
    pub strategy: Strategy,
    /// `N x d0` input boxes.
    pub input: IntervalMatrix,
    /// One entry per message-passing layer, `N x d_l` each.
    pub mp: Vec<LayerBounds>,
    /// Add-pooled representation, for graph-level models.
    pub pooled: Option<Vec<Interval>>,
    /// Dense head layers as `1 x d` matrices.
    pub dense: Vec<LayerBounds>,
    /// Enclosure of `f_{c*} - f_c`.
    pub margin: Interval,
    pub stats: PropagationStats,
}

impl BoundsTable {
    /// Output bounds of layer `l` (0 = input features, 1..=L message passing).
    pub fn node_post(&self, l: usize) -> &IntervalMatrix {
        if l == 0 {
            &self.input
        } else {
            &self.mp[l - 1].post
        }
    }

    /// Bounds of the auxiliary variable `x_{u→v,f}` feeding layer `l` (1-based).
    /// They do not depend on the receiving node `v`.
    pub fn aux(&self, l: usize, u: usize, f: usize) -> Interval {
        aux_interval(self.node_post(l - 1).get(u, f))
    }

    /// Whether `self ⊆ other` for every pre-/post-activation and the margin.
    pub fn is_within(&self, other: &BoundsTable, tol: f64) -> bool {
        let layers_ok = |a: &[LayerBounds], b: &[LayerBounds]| {
            a.iter().zip(b).all(|(x, y)| {
                x.pre
                    .data
                    .iter()
                    .zip(&y.pre.data)
                    .all(|(p, q)| p.is_within(q, tol))
                    && x.post
                        .data
                        .iter()
                        .zip(&y.post.data)
                        .all(|(p, q)| p.is_within(q, tol))
            })
        };
        let pooled_ok = match (&self.pooled, &other.pooled) {
            (Some(a), Some(b)) => a.iter().zip(b).all(|(p, q)| p.is_within(q, tol)),
            (None, None) => true,
            _ => false,
        };
        layers_ok(&self.mp, &other.mp)
            && layers_ok(&self.dense, &other.dense)
            && pooled_ok
            && self.margin.is_within(&other.margin, tol)
    }
}

/// Per-node contribution bounds of one weight column, `lb_u` and `ub_u`,
/// together with the change `Δ` caused by toggling the edge `u -> v`.
#[derive(Clone, Debug)]
pub struct ContributionCache {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl ContributionCache {
    pub fn new(weights: ArrayView1<'_, f64>, prev: &IntervalMatrix) -> Result<Self> {
        let mut lb = Vec::with_capacity(prev.rows());
        let mut ub = Vec::with_capacity(prev.rows());
        for u in 0..prev.rows() {
            let (l, h) = contribution(weights, prev.row(u))?;
            lb.push(l);
            ub.push(h);
        }
        Ok(Self { lb, ub })
    }

    /// Caches for every column of `weights` at once. Walks the weight
    /// matrix row by row; the sums run in the same order as `new`, so the
    /// results are identical.
    pub fn for_columns(weights: ArrayView2<'_, f64>, prev: &IntervalMatrix) -> Result<Vec<Self>> {
        if weights.nrows() != prev.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight rows against {} bound columns",
                weights.nrows(),
                prev.cols()
            )));
        }
        let (n, d_out) = (prev.rows(), weights.ncols());
        let mut caches = vec![
            Self {
                lb: vec![0.0; n],
                ub: vec![0.0; n],
            };
            d_out
        ];
        let mut lo = vec![0.0; d_out];
        let mut hi = vec![0.0; d_out];
        for u in 0..n {
            lo.fill(0.0);
            hi.fill(0.0);
            for (b, w_row) in prev.row(u).iter().zip(weights.rows()) {
                for (f, &w) in w_row.iter().enumerate() {
                    if w >= 0.0 {
                        lo[f] += w * b.lo;
                        hi[f] += w * b.hi;
                    } else {
                        lo[f] += w * b.hi;
                        hi[f] += w * b.lo;
                    }
                }
            }
            for (f, cache) in caches.iter_mut().enumerate() {
                cache.lb[u] = lo[f];
                cache.ub[u] = hi[f];
            }
        }
        Ok(caches)
    }

    /// `Δ_lb` for toggling `u -> v`: removal when `u ∈ N*(v)`, addition otherwise.
    pub fn delta_lb(&self, base: &Adjacency, u: usize, v: usize) -> f64 {
        if base.get(u, v) {
            -self.lb[u]
        } else {
            self.lb[u]
        }
    }

    pub fn delta_ub(&self, base: &Adjacency, u: usize, v: usize) -> f64 {
        if base.get(u, v) {
            -self.ub[u]
        } else {
            self.ub[u]
        }
    }
}

/// State of one adjacency entry while bounding the column it belongs to.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Entry {
    Fixed(bool),
    /// Free to change; carries the value in `A*`.
    Free(bool),
}

/// Entry states for every column, indexed `[v * n + u]`. Entries the
/// perturbation can never change are fixed to `A*` when `structural` is set
/// and free otherwise.
fn entry_states(
    base: &Adjacency,
    spec: &PerturbationSpec,
    fixings: &Fixings,
    structural: bool,
) -> Vec<Entry> {
    let n = base.n();
    let mut states = Vec::with_capacity(n * n);
    for v in 0..n {
        for u in 0..n {
            let member = base.get(u, v);
            states.push(match fixings.get(u, v) {
                Some(value) => Entry::Fixed(value),
                None if u != v && (!structural || spec.may_flip(base, u, v)) => Entry::Free(member),
                None => Entry::Fixed(member),
            });
        }
    }
    states
}

/// How the free entries of one column are treated while bounding it.
#[derive(Clone, Copy)]
enum ColumnRule {
    /// Free entries range over `{0, 1}`.
    Substitution,
    /// Free entries stay at `A*` except for at most `budget` changes.
    Budgeted(usize),
}

struct ColumnCtx<'a> {
    lb: &'a [f64],
    ub: &'a [f64],
}

/// Sum of the `k` most extreme values, which all share one sign. Ties are
/// broken by node index so the selected set is deterministic.
fn select_extreme(candidates: &mut Vec<(f64, usize)>, k: usize, most_negative: bool) -> f64 {
    let k = k.min(candidates.len());
    if k == 0 {
        return 0.0;
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        let ord = a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if most_negative {
            ord
        } else {
            a.0.total_cmp(&b.0).reverse().then(a.1.cmp(&b.1))
        }
    };
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, cmp);
        candidates.truncate(k);
    }
    candidates.sort_by(cmp);
    candidates.iter().map(|c| c.0).sum()
}

/// Bounds `self_term + sum_u A_uv * [lb_u, ub_u]` over the column's
/// admissible entries; `column` holds the states of column `v`.
fn bound_column(
    ctx: &ColumnCtx<'_>,
    rule: ColumnRule,
    column: &[Entry],
    v: usize,
    self_term: Interval,
    stats: &mut PropagationStats,
) -> Interval {
    let mut lo = self_term.lo;
    let mut hi = self_term.hi;
    let entries = column.iter().enumerate().filter(|&(u, _)| u != v);
    match rule {
        ColumnRule::Substitution => {
            for (u, &entry) in entries {
                match entry {
                    Entry::Fixed(true) => {
                        lo += ctx.lb[u];
                        hi += ctx.ub[u];
                    }
                    Entry::Fixed(false) => {}
                    Entry::Free(_) => {
                        lo += ctx.lb[u].min(0.0);
                        hi += ctx.ub[u].max(0.0);
                    }
                }
            }
        }
        ColumnRule::Budgeted(budget) => {
            let mut harm_lo = Vec::new();
            let mut harm_hi = Vec::new();
            for (u, &entry) in entries {
                let (member, free) = match entry {
                    Entry::Fixed(value) => (value, false),
                    Entry::Free(member) => (member, true),
                };
                if member {
                    lo += ctx.lb[u];
                    hi += ctx.ub[u];
                }
                if free && budget > 0 {
                    let (d_lo, d_hi) = if member {
                        (-ctx.lb[u], -ctx.ub[u])
                    } else {
                        (ctx.lb[u], ctx.ub[u])
                    };
                    if d_lo < 0.0 {
                        harm_lo.push((d_lo, u));
                    }
                    if d_hi > 0.0 {
                        harm_hi.push((d_hi, u));
                    }
                }
            }
            stats.selections += 2;
            lo += select_extreme(&mut harm_lo, budget, true);
            hi += select_extreme(&mut harm_hi, budget, false);
        }
    }
    Interval { lo, hi }
}

fn self_term(w_self: ArrayView1<'_, f64>, bias: f64, own: &[Interval]) -> Interval {
    let (lo, hi) = sign_split(w_self, own);
    Interval {
        lo: lo + bias,
        hi: hi + bias,
    }
}

/// Basic bound of `x̄_{v,f'}` over all binary columns.
pub fn basic_preact_bounds(
    layer: &MpnnLayer,
    v: usize,
    f_out: usize,
    prev: &IntervalMatrix,
) -> Result<Interval> {
    let n = prev.rows();
    let empty = Fixings::new();
    let base = Adjacency::empty(n);
    let spec = PerturbationSpec::new(
        crate::perturbation::PerturbationMode::UndirectedFlip,
        0,
        vec![0; n],
    );
    let states = entry_states(&base, &spec, &empty, false);
    preact_with_rule(layer, v, f_out, prev, &states, ColumnRule::Substitution)
}

/// Static topology-based bound: original neighbors plus the root budget's
/// worth of harmful changes.
pub fn sbt_preact_bounds(
    layer: &MpnnLayer,
    v: usize,
    f_out: usize,
    prev: &IntervalMatrix,
    base: &Adjacency,
    spec: &PerturbationSpec,
) -> Result<Interval> {
    abt_preact_bounds(layer, v, f_out, prev, base, spec, &Fixings::new())
}

/// Topology-based bound inside a branch-and-bound node.
pub fn abt_preact_bounds(
    layer: &MpnnLayer,
    v: usize,
    f_out: usize,
    prev: &IntervalMatrix,
    base: &Adjacency,
    spec: &PerturbationSpec,
    fixings: &Fixings,
) -> Result<Interval> {
    fixings.validate(base, spec)?;
    let state = BudgetState::from_fixings(base, fixings);
    let budget = remaining_local_budget(spec, &state, v);
    let states = entry_states(base, spec, fixings, true);
    preact_with_rule(layer, v, f_out, prev, &states, ColumnRule::Budgeted(budget))
}

fn preact_with_rule(
    layer: &MpnnLayer,
    v: usize,
    f_out: usize,
    prev: &IntervalMatrix,
    states: &[Entry],
    rule: ColumnRule,
) -> Result<Interval> {
    if prev.cols() != layer.in_dim() || f_out >= layer.out_dim() || v >= prev.rows() {
        return Err(Error::DimensionMismatch(format!(
            "layer {}x{} against {}x{} bounds, node {v}, feature {f_out}",
            layer.in_dim(),
            layer.out_dim(),
            prev.rows(),
            prev.cols()
        )));
    }
    let cache = ContributionCache::new(layer.w_neigh.column(f_out), prev)?;
    let ctx = ColumnCtx {
        lb: &cache.lb,
        ub: &cache.ub,
    };
    let n = prev.rows();
    let own = self_term(layer.w_self.column(f_out), layer.bias[f_out], prev.row(v));
    let column = &states[v * n..(v + 1) * n];
    Ok(bound_column(
        &ctx,
        rule,
        column,
        v,
        own,
        &mut PropagationStats::default(),
    ))
}

/// Which rule a full propagation applies and what it is clipped against.
#[derive(Clone, Copy)]
enum Mode<'a> {
    Basic,
    Budgeted(&'a Fixings),
    Substituted {
        fixings: &'a Fixings,
        clip: Option<&'a BoundsTable>,
        /// Apply the root budgets to the free entries instead of letting
        /// them range over `{0, 1}`.
        root_budget: bool,
    },
}

/// Layer-by-layer bound propagation for one instance.
pub struct BoundsEngine<'a> {
    model: &'a MpnnModel,
    instance: &'a GraphInstance,
    spec: &'a PerturbationSpec,
    input: IntervalMatrix,
    /// First-layer neighbor and self contributions, which only depend on
    /// the input box.
    first: (Vec<ContributionCache>, Vec<ContributionCache>),
}

fn layer_caches(
    layer: &MpnnLayer,
    prev: &IntervalMatrix,
) -> Result<(Vec<ContributionCache>, Vec<ContributionCache>)> {
    Ok((
        ContributionCache::for_columns(layer.w_neigh.view(), prev)?,
        ContributionCache::for_columns(layer.w_self.view(), prev)?,
    ))
}

impl<'a> BoundsEngine<'a> {
    pub fn new(
        model: &'a MpnnModel,
        instance: &'a GraphInstance,
        spec: &'a PerturbationSpec,
    ) -> Result<Self> {
        model.check_classes(instance.label_true, instance.label_attack)?;
        model.check_target(instance.target, instance.n())?;
        spec.validate_for(instance)?;
        if instance.features.ncols() != model.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} input features, model expects {}",
                instance.features.ncols(),
                model.input_dim()
            )));
        }
        let input = IntervalMatrix::points(&instance.features);
        let first = layer_caches(&model.mp_layers[0], &input)?;
        Ok(Self {
            model,
            instance,
            spec,
            input,
            first,
        })
    }

    /// Replaces the degenerate input boxes with general ones.
    pub fn with_input_box(mut self, input: IntervalMatrix) -> Result<Self> {
        if input.rows() != self.instance.n() || input.cols() != self.model.input_dim() {
            return Err(Error::DimensionMismatch("input box shape".into()));
        }
        self.first = layer_caches(&self.model.mp_layers[0], &input)?;
        self.input = input;
        Ok(self)
    }

    /// Root bounds for `strategy`; Abt at the root coincides with Sbt.
    pub fn root(&self, strategy: Strategy) -> BoundsTable {
        let empty = Fixings::new();
        let mut table = match strategy {
            Strategy::Basic => self.run(Mode::Basic),
            Strategy::Sbt | Strategy::Abt => self.run(Mode::Budgeted(&empty)),
        };
        table.strategy = strategy;
        table
    }

    /// Abt bounds under `fixings`.
    pub fn abt(&self, fixings: &Fixings) -> Result<BoundsTable> {
        fixings.validate(&self.instance.adjacency, self.spec)?;
        let mut table = self.run(Mode::Budgeted(fixings));
        table.strategy = Strategy::Abt;
        Ok(table)
    }

    /// Basic bounds with fixed entries substituted, each layer intersected
    /// with `clip` (typically the root table). Like the Basic rule it ignores
    /// the graph: every entry without a fixing ranges over `{0, 1}`, even one
    /// the perturbation can never switch on.
    pub fn substituted(
        &self,
        fixings: &Fixings,
        clip: Option<&BoundsTable>,
    ) -> Result<BoundsTable> {
        fixings.validate(&self.instance.adjacency, self.spec)?;
        let mut table = self.run(Mode::Substituted {
            fixings,
            clip,
            root_budget: false,
        });
        table.strategy = clip.map(|c| c.strategy).unwrap_or(Strategy::Basic);
        Ok(table)
    }

    /// Sbt bounds with fixed entries substituted. Free entries still get the
    /// root budgets, which the fixings may already have used up, so this
    /// contains the Abt table for the same fixings. Each layer is
    /// intersected with `root`.
    pub fn sbt_substituted(&self, fixings: &Fixings, root: &BoundsTable) -> Result<BoundsTable> {
        fixings.validate(&self.instance.adjacency, self.spec)?;
        let mut table = self.run(Mode::Substituted {
            fixings,
            clip: Some(root),
            root_budget: true,
        });
        table.strategy = Strategy::Sbt;
        Ok(table)
    }

    fn run(&self, mode: Mode<'_>) -> BoundsTable {
        let base = &self.instance.adjacency;
        let n = self.instance.n();
        let mut stats = PropagationStats::default();
        let empty = Fixings::new();

        let (fixings, structural, budgets, clip) = match mode {
            Mode::Basic => (&empty, false, None, None),
            Mode::Budgeted(f) => {
                let state = BudgetState::from_fixings(base, f);
                let budgets: Vec<usize> = (0..n)
                    .map(|v| remaining_local_budget(self.spec, &state, v))
                    .collect();
                (f, true, Some(budgets), None)
            }
            Mode::Substituted {
                fixings,
                clip,
                root_budget,
            } => {
                let budgets = root_budget.then(|| {
                    let state = BudgetState::from_fixings(base, &empty);
                    (0..n)
                        .map(|v| remaining_local_budget(self.spec, &state, v))
                        .collect()
                });
                (fixings, root_budget, budgets, clip)
            }
        };
        let states = if structural {
            entry_states(base, self.spec, fixings, true)
        } else {
            entry_states(&Adjacency::empty(n), self.spec, fixings, false)
        };
        let rule_for = |v: usize| match &budgets {
            Some(b) => ColumnRule::Budgeted(b[v]),
            None => ColumnRule::Substitution,
        };
        let column = |v: usize| &states[v * n..(v + 1) * n];

        let mut mp: Vec<LayerBounds> = Vec::with_capacity(self.model.num_mp_layers());
        for (l, layer) in self.model.mp_layers.iter().enumerate() {
            let prev = mp.last().map(|b| &b.post).unwrap_or(&self.input);
            let d_out = layer.out_dim();
            stats.contribution_evals += n * d_out;
            let later;
            let (caches, own_terms) = if l == 0 {
                (&self.first.0, &self.first.1)
            } else {
                later = layer_caches(layer, prev).expect("layer dimensions validated");
                (&later.0, &later.1)
            };
            let mut pre = Vec::with_capacity(n * d_out);
            for v in 0..n {
                for (f, cache) in caches.iter().enumerate() {
                    let ctx = ColumnCtx {
                        lb: &cache.lb,
                        ub: &cache.ub,
                    };
                    let own = Interval {
                        lo: own_terms[f].lb[v] + layer.bias[f],
                        hi: own_terms[f].ub[v] + layer.bias[f],
                    };
                    let mut b = bound_column(&ctx, rule_for(v), column(v), v, own, &mut stats);
                    if let Some(c) = clip {
                        b = b.meet(&c.mp[l].pre.get(v, f));
                    }
                    pre.push(b);
                }
            }
            let pre = IntervalMatrix {
                rows: n,
                cols: d_out,
                data: pre,
            };
            let post = IntervalMatrix {
                rows: n,
                cols: d_out,
                data: pre
                    .data
                    .iter()
                    .map(|&b| activation_interval(layer.activation, b))
                    .collect(),
            };
            mp.push(LayerBounds { pre, post });
        }

        let c_star = self.instance.label_true;
        let c = self.instance.label_attack;
        let last_mp = self.model.mp_layers.last().expect("validated");
        let penultimate = if mp.len() >= 2 {
            &mp[mp.len() - 2].post
        } else {
            &self.input
        };
        let diff = |layer: &MpnnLayer| -> (Array1<f64>, Array1<f64>, f64) {
            (
                &layer.w_self.column(c_star) - &layer.w_self.column(c),
                &layer.w_neigh.column(c_star) - &layer.w_neigh.column(c),
                layer.bias[c_star] - layer.bias[c],
            )
        };
        // Margin of node `v` when the last message-passing layer is linear:
        // one more column bound with the difference weights.
        let node_margin = |v: usize, stats: &mut PropagationStats| -> Interval {
            let (ws, wn, b) = diff(last_mp);
            let cache = ContributionCache::new(wn.view(), penultimate).expect("validated");
            stats.contribution_evals += n;
            let ctx = ColumnCtx {
                lb: &cache.lb,
                ub: &cache.ub,
            };
            let own = self_term(ws.view(), b, penultimate.row(v));
            bound_column(&ctx, rule_for(v), column(v), v, own, stats)
        };

        let final_post = &mp.last().expect("validated").post;
        let mut pooled = None;
        let mut dense: Vec<LayerBounds> = Vec::new();
        let mut margin = match self.instance.target {
            Target::Node(t) => {
                if last_mp.activation == Activation::Identity {
                    node_margin(t, &mut stats)
                } else {
                    interval_diff(final_post.get(t, c_star), final_post.get(t, c))
                }
            }
            Target::Graph => {
                let width = final_post.cols();
                let sums: Vec<Interval> = (0..width)
                    .map(|f| {
                        (0..n).fold(Interval::point(0.0), |acc, v| {
                            acc.plus(final_post.get(v, f))
                        })
                    })
                    .collect();
                pooled = Some(sums.clone());
                let mut h = IntervalMatrix {
                    rows: 1,
                    cols: width,
                    data: sums,
                };
                for layer in &self.model.dense_head {
                    let pre = IntervalMatrix::from_fn(1, layer.out_dim(), |_, f| {
                        self_term(layer.w_self.column(f), layer.bias[f], h.row(0))
                    });
                    let post = IntervalMatrix::from_fn(1, layer.out_dim(), |_, f| {
                        activation_interval(layer.activation, pre.get(0, f))
                    });
                    dense.push(LayerBounds {
                        pre,
                        post: post.clone(),
                    });
                    h = post;
                }
                match self.model.dense_head.last() {
                    Some(last) if last.activation == Activation::Identity => {
                        let (ws, _, b) = diff(last);
                        let input = if dense.len() >= 2 {
                            dense[dense.len() - 2].post.row(0).to_vec()
                        } else {
                            pooled.clone().expect("pooled")
                        };
                        self_term(ws.view(), b, &input)
                    }
                    Some(_) => interval_diff(h.get(0, c_star), h.get(0, c)),
                    None if last_mp.activation == Activation::Identity => (0..n)
                        .fold(Interval::point(0.0), |acc, v| {
                            acc.plus(node_margin(v, &mut stats))
                        }),
                    None => interval_diff(h.get(0, c_star), h.get(0, c)),
                }
            }
        };
        if let Some(c) = clip {
            margin = margin.meet(&c.margin);
        }

        BoundsTable {
            strategy: Strategy::Basic,
            input: self.input.clone(),
            mp,
            pooled,
            dense,
            margin,
            stats,
        }
    }
}

fn interval_diff(a: Interval, b: Interval) -> Interval {
    Interval {
        lo: a.lo - b.hi,
        hi: a.hi - b.lo,
    }
}

/// Full propagation. `Abt` needs the node's fixings; Basic and Sbt ignore them.
pub fn propagate(
    model: &MpnnModel,
    instance: &GraphInstance,
    spec: &PerturbationSpec,
    strategy: Strategy,
    fixings: Option<&Fixings>,
) -> Result<BoundsTable> {
    let engine = BoundsEngine::new(model, instance, spec)?;
    match (strategy, fixings) {
        (Strategy::Abt, Some(f)) => engine.abt(f),
        (Strategy::Abt, None) => Err(Error::InconsistentFixings(
            "abt propagation needs the node's fixings".into(),
        )),
        (s, _) => Ok(engine.root(s)),
    }
}
