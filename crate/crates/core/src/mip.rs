//! Big-M mixed-integer encoding of the verification problem and an LP-format
//! writer.
//!
//! The input features are constants, so the first layer's products
//! `A_{u,v} x_{u,f}` are linear in `A`. They still get auxiliary variables,
//! which keeps every layer's rows uniform. All big-M constants are read from
//! a [`BoundsTable`]; the encoder never recomputes bounds.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::Path;

use crate::bounds::{aux_interval, BoundsTable, Interval};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, GraphInstance, Target};
use crate::model::{Activation, MpnnLayer, MpnnModel};
use crate::perturbation::{PerturbationMode, PerturbationSpec};

/// A MIP variable. Layers are 1-based; `Aux(l, u, v, f)` is the message
/// `A_{u,v} x_{u,f}` entering layer `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarRef {
    Adjacency(usize, usize),
    Aux(usize, usize, usize, usize),
    PreAct(usize, usize, usize),
    PostAct(usize, usize, usize),
    ReluIndicator(usize, usize, usize),
    Pooled(usize),
    DensePre(usize, usize),
    DensePost(usize, usize),
    DenseIndicator(usize, usize),
}

impl VarRef {
    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            VarRef::Adjacency(u, v) => write!(f, "A_{u}_{v}"),
            VarRef::Aux(l, u, v, k) => write!(f, "y_{l}_{u}_{v}_{k}"),
            VarRef::PreAct(l, v, k) => write!(f, "xb_{l}_{v}_{k}"),
            VarRef::PostAct(l, v, k) => write!(f, "x_{l}_{v}_{k}"),
            VarRef::ReluIndicator(l, v, k) => write!(f, "s_{l}_{v}_{k}"),
            VarRef::Pooled(k) => write!(f, "p_{k}"),
            VarRef::DensePre(l, k) => write!(f, "db_{l}_{k}"),
            VarRef::DensePost(l, k) => write!(f, "d_{l}_{k}"),
            VarRef::DenseIndicator(l, k) => write!(f, "ds_{l}_{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64, tol: f64) -> bool {
        match self {
            Sense::Le => lhs <= rhs + tol,
            Sense::Ge => lhs >= rhs - tol,
            Sense::Eq => (lhs - rhs).abs() <= tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(f64, VarRef)>,
    pub sense: Sense,
    pub rhs: f64,
    /// Row family, e.g. `aux` or `relu`.
    pub tag: &'static str,
}

impl LinearConstraint {
    pub fn lhs(&self, value: impl Fn(&VarRef) -> f64) -> f64 {
        self.terms.iter().map(|(c, v)| c * value(v)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub var: VarRef,
    pub bounds: Interval,
    pub binary: bool,
}

/// Minimization problem. Constraints are kept sorted by tag, stable within
/// a tag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MIPModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<LinearConstraint>,
    pub objective: Vec<(f64, VarRef)>,
}

impl MIPModel {
    pub fn variable(&self, var: &VarRef) -> Option<&Variable> {
        self.variables.iter().find(|v| v.var == *var)
    }

    pub fn count_vars(&self, pred: impl Fn(&VarRef) -> bool) -> usize {
        self.variables.iter().filter(|v| pred(&v.var)).count()
    }

    pub fn count_rows(&self, tag: &str) -> usize {
        self.constraints.iter().filter(|c| c.tag == tag).count()
    }

    pub fn objective_value(&self, assignment: &HashMap<VarRef, f64>) -> Result<f64> {
        self.objective
            .iter()
            .map(|(c, v)| {
                assignment
                    .get(v)
                    .map(|x| c * x)
                    .ok_or_else(|| Error::MissingVariable(v.name()))
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Under P1, one variable per unordered pair instead of two ordered
    /// variables tied by symmetry rows.
    pub merge_symmetric: bool,
    /// ReLU units whose preactivation does not cross zero become equalities.
    pub eliminate_stable: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            merge_symmetric: false,
            eliminate_stable: true,
        }
    }
}

/// Affine expression `Σ c·var + constant`.
#[derive(Clone, Debug, Default)]
struct Expr {
    terms: BTreeMap<VarRef, f64>,
    constant: f64,
}

impl Expr {
    fn var(v: VarRef) -> Self {
        Self::default().plus(1.0, v)
    }

    fn constant(c: f64) -> Self {
        Self {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    fn plus(mut self, coef: f64, v: VarRef) -> Self {
        *self.terms.entry(v).or_insert(0.0) += coef;
        self
    }

    fn add_scaled(&mut self, coef: f64, other: &Expr) {
        for (v, c) in &other.terms {
            *self.terms.entry(*v).or_insert(0.0) += coef * c;
        }
        self.constant += coef * other.constant;
    }
}

struct Builder<'a> {
    base: &'a Adjacency,
    spec: &'a PerturbationSpec,
    options: EncodeOptions,
    mip: MIPModel,
}

impl Builder<'_> {
    fn declare(&mut self, var: VarRef, bounds: Interval, binary: bool) -> Result<()> {
        if !bounds.is_finite() {
            return Err(Error::InfiniteBound(var.name()));
        }
        self.mip.variables.push(Variable {
            var,
            bounds,
            binary,
        });
        Ok(())
    }

    /// Adds `expr sense rhs`, moving the constant to the right-hand side.
    fn row(&mut self, tag: &'static str, expr: Expr, sense: Sense, rhs: f64) {
        let terms = expr
            .terms
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(v, c)| (c, v))
            .collect();
        self.mip.constraints.push(LinearConstraint {
            terms,
            sense,
            rhs: rhs - expr.constant,
            tag,
        });
    }

    /// The variable standing for `A_{u,v}`, or `None` for a structural zero.
    fn adjacency(&self, u: usize, v: usize) -> Option<VarRef> {
        match self.spec.mode {
            PerturbationMode::DirectedRemoveOnly if !self.base.get(u, v) => None,
            PerturbationMode::UndirectedFlip if self.options.merge_symmetric => {
                Some(VarRef::Adjacency(u.min(v), u.max(v)))
            }
            _ => Some(VarRef::Adjacency(u, v)),
        }
    }

    /// `flip(u, v)`: `A` where `A* = 0`, else `1 - A`.
    fn flip(&self, u: usize, v: usize) -> Option<Expr> {
        let a = self.adjacency(u, v)?;
        Some(if self.base.get(u, v) {
            Expr::constant(1.0).plus(-1.0, a)
        } else {
            Expr::var(a)
        })
    }

    /// `y = A x` for `A ∈ {0, 1}` and `x ∈ [lb, ub]`.
    fn product(&mut self, y: VarRef, a: VarRef, x: &Expr, b: Interval) {
        let (lb, ub) = (b.lo, b.hi);
        self.row("aux", Expr::var(y).plus(-lb, a), Sense::Ge, 0.0);
        self.row("aux", Expr::var(y).plus(-ub, a), Sense::Le, 0.0);
        let mut e = Expr::var(y).plus(-ub, a);
        e.add_scaled(-1.0, x);
        self.row("aux", e, Sense::Ge, -ub);
        let mut e = Expr::var(y).plus(-lb, a);
        e.add_scaled(-1.0, x);
        self.row("aux", e, Sense::Le, -lb);
    }

    /// Activation output of a unit with preactivation `pre ∈ b`.
    fn activation(
        &mut self,
        activation: Activation,
        pre: VarRef,
        post: VarRef,
        sigma: VarRef,
        b: Interval,
    ) -> Result<Expr> {
        if activation == Activation::Identity {
            return Ok(Expr::var(pre));
        }
        let (lb, ub) = (b.lo, b.hi);
        let stable = self.options.eliminate_stable && (lb >= 0.0 || ub <= 0.0);
        self.declare(post, crate::bounds::relu_interval(b), false)?;
        if stable {
            let e = if lb >= 0.0 {
                Expr::var(post).plus(-1.0, pre)
            } else {
                Expr::var(post)
            };
            self.row("relu", e, Sense::Eq, 0.0);
            return Ok(Expr::var(post));
        }
        self.declare(sigma, Interval::new(0.0, 1.0), true)?;
        self.row("relu", Expr::var(post), Sense::Ge, 0.0);
        self.row("relu", Expr::var(post).plus(-1.0, pre), Sense::Ge, 0.0);
        self.row(
            "relu",
            Expr::var(post).plus(-1.0, pre).plus(-lb, sigma),
            Sense::Le,
            -lb,
        );
        self.row("relu", Expr::var(post).plus(-ub, sigma), Sense::Le, 0.0);
        Ok(Expr::var(post))
    }

    fn dense_layer(
        &mut self,
        k: usize,
        layer: &MpnnLayer,
        input: &[Expr],
        bounds: &crate::bounds::LayerBounds,
    ) -> Result<Vec<Expr>> {
        let mut out = Vec::with_capacity(layer.out_dim());
        for f in 0..layer.out_dim() {
            let pre = VarRef::DensePre(k, f);
            let b = bounds.pre.get(0, f);
            self.declare(pre, b, false)?;
            let mut e = Expr::var(pre);
            for (i, x) in input.iter().enumerate() {
                e.add_scaled(-layer.w_self[[i, f]], x);
            }
            self.row("dense", e, Sense::Eq, layer.bias[f]);
            out.push(self.activation(
                layer.activation,
                pre,
                VarRef::DensePost(k, f),
                VarRef::DenseIndicator(k, f),
                b,
            )?);
        }
        Ok(out)
    }
}

fn check_table(model: &MpnnModel, instance: &GraphInstance, bounds: &BoundsTable) -> Result<()> {
    let n = instance.n();
    let shape_ok = bounds.input.rows() == n
        && bounds.mp.len() == model.num_mp_layers()
        && bounds
            .mp
            .iter()
            .zip(&model.mp_layers)
            .all(|(b, l)| b.pre.rows() == n && b.pre.cols() == l.out_dim())
        && bounds.dense.len() == model.dense_head.len()
        && (!model.is_graph_level() || bounds.pooled.is_some());
    if shape_ok {
        Ok(())
    } else {
        Err(Error::UnboundedVariable(
            "bounds table does not cover the model".into(),
        ))
    }
}

/// Builds the MIP with default options.
pub fn encode(
    model: &MpnnModel,
    instance: &GraphInstance,
    spec: &PerturbationSpec,
    bounds: &BoundsTable,
) -> Result<MIPModel> {
    encode_with(model, instance, spec, bounds, EncodeOptions::default())
}

pub fn encode_with(
    model: &MpnnModel,
    instance: &GraphInstance,
    spec: &PerturbationSpec,
    bounds: &BoundsTable,
    options: EncodeOptions,
) -> Result<MIPModel> {
    model.check_classes(instance.label_true, instance.label_attack)?;
    model.check_target(instance.target, instance.n())?;
    spec.validate_for(instance)?;
    check_table(model, instance, bounds)?;

    let n = instance.n();
    let base = &instance.adjacency;
    let mut b = Builder {
        base,
        spec,
        options,
        mip: MIPModel::default(),
    };

    // adjacency variables and symmetry
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            if let Some(a @ VarRef::Adjacency(p, q)) = b.adjacency(u, v) {
                if (p, q) == (u, v) {
                    b.declare(a, Interval::new(0.0, 1.0), true)?;
                }
            }
            if spec.mode == PerturbationMode::UndirectedFlip && !options.merge_symmetric && u < v {
                let e = Expr::var(VarRef::Adjacency(u, v)).plus(-1.0, VarRef::Adjacency(v, u));
                b.row("sym", e, Sense::Eq, 0.0);
            }
        }
    }

    // message-passing layers
    let mut post: Vec<Vec<Expr>> = (0..n)
        .map(|v| {
            instance
                .features
                .row(v)
                .iter()
                .map(|&x| Expr::constant(x))
                .collect()
        })
        .collect();
    for (i, layer) in model.mp_layers.iter().enumerate() {
        let l = i + 1;
        let prev = bounds.node_post(i);
        let d_in = layer.in_dim();
        let messages = !layer.has_no_messages();
        // aux[v] holds (y, feature) for every message into v
        let mut aux: Vec<Vec<(VarRef, usize)>> = vec![Vec::new(); n];
        if messages {
            for v in 0..n {
                for u in (0..n).filter(|&u| u != v) {
                    let Some(a) = b.adjacency(u, v) else { continue };
                    for k in 0..d_in {
                        let y = VarRef::Aux(l, u, v, k);
                        let xb = prev.get(u, k);
                        b.declare(y, aux_interval(xb), false)?;
                        b.product(y, a, &post[u][k], xb);
                        aux[v].push((y, k));
                    }
                }
            }
        }
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            let mut row = Vec::with_capacity(layer.out_dim());
            for f in 0..layer.out_dim() {
                let pre = VarRef::PreAct(l, v, f);
                let pb = bounds.mp[i].pre.get(v, f);
                b.declare(pre, pb, false)?;
                let mut e = Expr::var(pre);
                for k in 0..d_in {
                    e.add_scaled(-layer.w_self[[k, f]], &post[v][k]);
                }
                for &(y, k) in &aux[v] {
                    e = e.plus(-layer.w_neigh[[k, f]], y);
                }
                b.row("layer", e, Sense::Eq, layer.bias[f]);
                row.push(b.activation(
                    layer.activation,
                    pre,
                    VarRef::PostAct(l, v, f),
                    VarRef::ReluIndicator(l, v, f),
                    pb,
                )?);
            }
            next.push(row);
        }
        post = next;
    }

    // readout
    let logits: Vec<Expr> = match instance.target {
        Target::Node(t) => post[t].clone(),
        Target::Graph => {
            let pooled_bounds = bounds.pooled.as_ref().expect("checked");
            let mut h = Vec::with_capacity(pooled_bounds.len());
            for (f, &pb) in pooled_bounds.iter().enumerate() {
                let p = VarRef::Pooled(f);
                b.declare(p, pb, false)?;
                let mut e = Expr::var(p);
                for node in &post {
                    e.add_scaled(-1.0, &node[f]);
                }
                b.row("pool", e, Sense::Eq, 0.0);
                h.push(Expr::var(p));
            }
            for (i, layer) in model.dense_head.iter().enumerate() {
                h = b.dense_layer(i + 1, layer, &h, &bounds.dense[i])?;
            }
            h
        }
    };

    // budgets
    let mut global = Expr::default();
    for v in 0..n {
        let mut local = Expr::default();
        let mut any = false;
        for u in (0..n).filter(|&u| u != v) {
            if let Some(e) = b.flip(u, v) {
                local.add_scaled(1.0, &e);
                any = true;
            }
        }
        global.add_scaled(1.0, &local);
        if any {
            b.row(
                "budget_local",
                local,
                Sense::Le,
                spec.local_budgets[v] as f64,
            );
        }
    }
    if !global.terms.is_empty() {
        b.row(
            "budget_global",
            global,
            Sense::Le,
            spec.entry_budget() as f64,
        );
    }

    let mut objective = logits[instance.label_true].clone();
    objective.add_scaled(-1.0, &logits[instance.label_attack]);
    if objective.constant != 0.0 {
        return Err(Error::InvalidModel("objective has a constant term".into()));
    }
    b.mip.objective = objective
        .terms
        .into_iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|(v, c)| (c, v))
        .collect();
    b.mip.constraints.sort_by_key(|c| c.tag);
    Ok(b.mip)
}

/// Whether every variable lies in its bounds, binaries are integral and
/// every row holds, all within `tol`.
pub fn check_feasible(mip: &MIPModel, assignment: &HashMap<VarRef, f64>, tol: f64) -> Result<bool> {
    let mut ok = true;
    for var in &mip.variables {
        let x = *assignment
            .get(&var.var)
            .ok_or_else(|| Error::MissingVariable(var.var.name()))?;
        ok &= var.bounds.contains(x, tol);
        if var.binary {
            ok &= (x - x.round()).abs() <= tol;
        }
    }
    for c in &mip.constraints {
        let mut lhs = 0.0;
        for (coef, v) in &c.terms {
            let x = assignment
                .get(v)
                .ok_or_else(|| Error::MissingVariable(v.name()))?;
            lhs += coef * x;
        }
        ok &= c.sense.holds(lhs, c.rhs, tol);
    }
    Ok(ok)
}

/// The assignment induced by a forward pass at `adjacency`. Indicators are 1
/// exactly for positive preactivations.
pub fn forward_assignment(
    mip: &MIPModel,
    model: &MpnnModel,
    instance: &GraphInstance,
    adjacency: &Adjacency,
) -> Result<HashMap<VarRef, f64>> {
    let trace = model.trace(&instance.features, adjacency)?;
    let indicator = |x: f64| if x > 0.0 { 1.0 } else { 0.0 };
    let node_post = |l: usize, u: usize, k: usize| {
        if l == 0 {
            instance.features[[u, k]]
        } else {
            trace.mp[l - 1].post[[u, k]]
        }
    };
    mip.variables
        .iter()
        .map(|var| {
            let x = match var.var {
                VarRef::Adjacency(u, v) => f64::from(u8::from(adjacency.get(u, v))),
                VarRef::Aux(l, u, v, k) => {
                    if adjacency.get(u, v) {
                        node_post(l - 1, u, k)
                    } else {
                        0.0
                    }
                }
                VarRef::PreAct(l, v, f) => trace.mp[l - 1].pre[[v, f]],
                VarRef::PostAct(l, v, f) => trace.mp[l - 1].post[[v, f]],
                VarRef::ReluIndicator(l, v, f) => indicator(trace.mp[l - 1].pre[[v, f]]),
                VarRef::Pooled(f) => trace.pooled.as_ref().map_or(0.0, |p| p[f]),
                VarRef::DensePre(k, f) => trace.dense[k - 1].pre[f],
                VarRef::DensePost(k, f) => trace.dense[k - 1].post[f],
                VarRef::DenseIndicator(k, f) => indicator(trace.dense[k - 1].pre[f]),
            };
            Ok((var.var, x))
        })
        .collect()
}

fn number(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x}")
    }
}

fn expression(out: &mut String, terms: &[(f64, VarRef)]) {
    for (c, v) in terms {
        let sign = if c.is_sign_negative() { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {v}", number(c.abs()));
    }
}

/// Renders `mip` in CPLEX LP format. Rows are named `tag_i` with `i`
/// counting within the tag; variables are listed by name.
pub fn to_lp_string(mip: &MIPModel) -> String {
    let mut out = String::from("\\ gnncert verification problem\nMinimize\n obj:");
    expression(&mut out, &mip.objective);
    out.push_str("\nSubject To\n");
    let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
    let mut rows: Vec<&LinearConstraint> = mip.constraints.iter().collect();
    rows.sort_by_key(|c| c.tag);
    let fallback = mip.variables.first().map(|v| v.var);
    for c in rows {
        let i = counters.entry(c.tag).or_insert(0);
        let _ = write!(out, " {}_{}:", c.tag, i);
        *i += 1;
        if c.terms.is_empty() {
            if let Some(v) = fallback {
                let _ = write!(out, " 0 {v}");
            }
        }
        expression(&mut out, &c.terms);
        let _ = writeln!(out, " {} {}", c.sense.symbol(), number(c.rhs));
    }
    let mut vars: Vec<(String, &Variable)> =
        mip.variables.iter().map(|v| (v.var.name(), v)).collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    out.push_str("Bounds\n");
    for (name, v) in vars.iter().filter(|(_, v)| !v.binary) {
        let _ = writeln!(
            out,
            " {} <= {name} <= {}",
            number(v.bounds.lo),
            number(v.bounds.hi)
        );
    }
    out.push_str("Binaries\n");
    for (name, _) in vars.iter().filter(|(_, v)| v.binary) {
        let _ = writeln!(out, " {name}");
    }
    out.push_str("End\n");
    out
}

pub fn write_lp(mip: &MIPModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_lp_string(mip))?;
    Ok(())
}
