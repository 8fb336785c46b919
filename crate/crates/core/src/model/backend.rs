//! Value and reverse-mode backends behind one set of tensor operations.
//!
//! The forward pass and the losses are written once against [`Backend`].
//! [`Eval`] computes values only; [`Tape`] additionally records the
//! operations and can back-propagate a scalar.

use std::borrow::Cow;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{HieroError, Result};
use crate::linalg::{gemm, DenseMatrix};
use crate::model::params::Activation;

/// Gated neighbor mean: `out_i = Σ_e coef_e · (wd[u_e] ⊙ xp[j_e])` over the
/// entries `e` whose target is `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePlan {
    pub rows: usize,
    pub entries: Vec<AggEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggEntry {
    pub target: usize,
    pub source: usize,
    /// Row of the gate matrix.
    pub gate: usize,
    pub coef: f64,
}

/// Sparse row mixing `out[t] = Σ w · a[s]` for `(t, s, w)` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMix {
    pub out_rows: usize,
    pub weights: Vec<(usize, usize, f64)>,
}

/// `weight · (logsumexp_{e∈den} z_e - logsumexp_{e∈pos} z_e)` with
/// `z = logits / tau`; indices are flat row-major offsets into the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct NceTerm {
    pub weight: f64,
    pub positives: Vec<usize>,
    pub denominator: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcePlan {
    pub tau: f64,
    pub terms: Vec<NceTerm>,
}

pub trait Backend<'p> {
    type V: Clone;

    fn param(&mut self, id: usize, m: &'p DenseMatrix) -> Self::V;
    fn constant(&mut self, m: DenseMatrix) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a DenseMatrix;

    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    /// `a · bᵀ`
    fn matmul_t(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    /// Adds a `1 × cols` row to every row of `a`.
    fn add_row(&mut self, a: &Self::V, bias: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V;
    fn activate(&mut self, a: &Self::V, act: Activation) -> Self::V;
    fn aggregate(&mut self, xp: &Self::V, gates: &Self::V, plan: Rc<AggregatePlan>) -> Result<Self::V>;
    fn mix_rows(&mut self, a: &Self::V, mix: Rc<RowMix>) -> Self::V;
    fn normalize_rows(&mut self, a: &Self::V) -> Self::V;
    fn concat_rows(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    /// Scalar (`1 × 1`) contrastive loss over a logits matrix.
    fn nce(&mut self, logits: &Self::V, plan: Rc<NcePlan>) -> Result<Self::V>;

    fn linear(&mut self, x: &Self::V, w: &Self::V, b: &Self::V) -> Result<Self::V> {
        let y = self.matmul(x, w)?;
        self.add_row(&y, b)
    }
}

// ---- shared forward kernels -------------------------------------------------

fn shape_err(op: &str, a: &DenseMatrix, b: &DenseMatrix) -> HieroError {
    HieroError::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()))
}

fn k_matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.matmul(b)
}

fn k_matmul_t(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.matmul_t(b)
}

fn k_add(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.add(b)
}

fn k_add_row(a: &DenseMatrix, bias: &DenseMatrix) -> Result<DenseMatrix> {
    if bias.rows() != 1 || bias.cols() != a.cols() {
        return Err(shape_err("add_row", a, bias));
    }
    let mut out = a.clone();
    let b = bias.row(0);
    for r in 0..out.rows() {
        out.row_mut(r).iter_mut().zip(b).for_each(|(v, x)| *v += x);
    }
    Ok(out)
}

fn k_activate(a: &DenseMatrix, act: Activation) -> DenseMatrix {
    let mut out = a.clone();
    out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
    out
}

fn k_aggregate(xp: &DenseMatrix, gates: &DenseMatrix, plan: &AggregatePlan) -> Result<DenseMatrix> {
    if xp.cols() != gates.cols() {
        return Err(shape_err("aggregate", xp, gates));
    }
    let mut out = DenseMatrix::zeros(plan.rows, xp.cols());
    for e in &plan.entries {
        let (g, x) = (gates.row(e.gate), xp.row(e.source));
        for ((o, gv), xv) in out.row_mut(e.target).iter_mut().zip(g).zip(x) {
            *o += e.coef * gv * xv;
        }
    }
    Ok(out)
}

fn k_mix(a: &DenseMatrix, mix: &RowMix) -> DenseMatrix {
    crate::graph::mix_rows(a, &mix.weights, mix.out_rows)
}

const NORM_FLOOR: f64 = 1e-12;

fn k_normalize(a: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let norms: Vec<f64> = a.row_norms().into_iter().map(|n| n.max(NORM_FLOOR)).collect();
    let mut out = a.clone();
    for (r, n) in norms.iter().enumerate() {
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }
    (out, norms)
}

fn k_concat(parts: &[&DenseMatrix]) -> Result<DenseMatrix> {
    let cols = parts.first().map_or(0, |p| p.cols());
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.cols() != cols {
            return Err(shape_err("concat_rows", parts[0], p));
        }
        data.extend_from_slice(p.data());
        rows += p.rows();
    }
    DenseMatrix::from_vec(rows, cols, data)
}

fn log_sum_exp(z: &[f64], idx: &[usize], inv_tau: f64) -> f64 {
    let m = idx.iter().map(|&i| z[i] * inv_tau).fold(f64::NEG_INFINITY, f64::max);
    m + idx.iter().map(|&i| (z[i] * inv_tau - m).exp()).sum::<f64>().ln()
}

fn k_nce(logits: &DenseMatrix, plan: &NcePlan) -> Result<f64> {
    if !(plan.tau > 0.0) {
        return Err(HieroError::InvalidArgument(format!("temperature must be positive, got {}", plan.tau)));
    }
    let z = logits.data();
    let inv = 1.0 / plan.tau;
    let mut total = 0.0;
    for t in &plan.terms {
        if t.positives.is_empty() || t.denominator.is_empty() {
            return Err(HieroError::InvalidArgument("contrastive term without positives".into()));
        }
        if let Some(&bad) = t.positives.iter().chain(&t.denominator).find(|&&i| i >= z.len()) {
            return Err(HieroError::InvalidArgument(format!("logit index {bad} out of range")));
        }
        total += t.weight * (log_sum_exp(z, &t.denominator, inv) - log_sum_exp(z, &t.positives, inv));
    }
    Ok(total)
}

// ---- value backend -----------------------------------------------------------

#[derive(Debug, Clone)]
pub enum EvalValue<'p> {
    Borrowed(&'p DenseMatrix),
    Owned(Rc<DenseMatrix>),
}

impl EvalValue<'_> {
    fn get(&self) -> &DenseMatrix {
        match self {
            EvalValue::Borrowed(m) => m,
            EvalValue::Owned(m) => m,
        }
    }
}

/// Computes values without recording anything.
#[derive(Debug, Default)]
pub struct Eval;

fn owned<'p>(m: DenseMatrix) -> EvalValue<'p> {
    EvalValue::Owned(Rc::new(m))
}

impl<'p> Backend<'p> for Eval {
    type V = EvalValue<'p>;

    fn param(&mut self, _id: usize, m: &'p DenseMatrix) -> Self::V {
        EvalValue::Borrowed(m)
    }
    fn constant(&mut self, m: DenseMatrix) -> Self::V {
        owned(m)
    }
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a DenseMatrix {
        v.get()
    }
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        k_matmul(a.get(), b.get()).map(owned)
    }
    fn matmul_t(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        k_matmul_t(a.get(), b.get()).map(owned)
    }
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        k_add(a.get(), b.get()).map(owned)
    }
    fn add_row(&mut self, a: &Self::V, bias: &Self::V) -> Result<Self::V> {
        k_add_row(a.get(), bias.get()).map(owned)
    }
    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V {
        owned(a.get().scaled(s))
    }
    fn activate(&mut self, a: &Self::V, act: Activation) -> Self::V {
        if act == Activation::Identity {
            return a.clone();
        }
        owned(k_activate(a.get(), act))
    }
    fn aggregate(&mut self, xp: &Self::V, gates: &Self::V, plan: Rc<AggregatePlan>) -> Result<Self::V> {
        k_aggregate(xp.get(), gates.get(), &plan).map(owned)
    }
    fn mix_rows(&mut self, a: &Self::V, mix: Rc<RowMix>) -> Self::V {
        owned(k_mix(a.get(), &mix))
    }
    fn normalize_rows(&mut self, a: &Self::V) -> Self::V {
        owned(k_normalize(a.get()).0)
    }
    fn concat_rows(&mut self, parts: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&DenseMatrix> = parts.iter().map(|p| p.get()).collect();
        k_concat(&refs).map(owned)
    }
    fn nce(&mut self, logits: &Self::V, plan: Rc<NcePlan>) -> Result<Self::V> {
        let v = k_nce(logits.get(), &plan)?;
        Ok(owned(DenseMatrix::from_raw(1, 1, vec![v])))
    }
}

// ---- reverse-mode tape -------------------------------------------------------

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Activate(usize, Activation),
    Aggregate(usize, usize, Rc<AggregatePlan>),
    MixRows(usize, Rc<RowMix>),
    Normalize(usize, Rc<Vec<f64>>),
    Concat(Vec<usize>),
    Nce(usize, Rc<NcePlan>),
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, DenseMatrix>,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one reverse sweep.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<usize, usize>,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: usize) -> &DenseMatrix {
        &self.nodes[v].value
    }

    /// Back-propagates the scalar `root` and returns `d root / d param`
    /// for every parameter id that was registered.
    pub fn gradients(&self, root: Var) -> Result<HashMap<usize, DenseMatrix>> {
        if self.val(root.0).shape() != (1, 1) {
            return Err(HieroError::Shape("gradient root must be a scalar".into()));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(DenseMatrix::from_raw(1, 1, vec![1.0]));
        for n in (0..=root.0).rev() {
            let Some(g) = grads[n].take() else { continue };
            if !self.nodes[n].needs_grad {
                continue;
            }
            match &self.nodes[n].op {
                Op::Param => {
                    grads[n] = Some(g);
                    continue;
                }
                op => self.backward_op(op, n, &g, &mut grads)?,
            }
        }
        let mut out = HashMap::new();
        for (&id, &node) in &self.params {
            if let Some(g) = grads.get_mut(node).and_then(Option::take) {
                out.insert(id, g);
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<DenseMatrix>], i: usize, g: DenseMatrix) {
        if !self.nodes[i].needs_grad {
            return;
        }
        match &mut grads[i] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn backward_op(&self, op: &Op, n: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<()> {
        match op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    let mut da = DenseMatrix::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, true, &mut da, 0.0);
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = DenseMatrix::zeros(bv.rows(), bv.cols());
                    gemm(av, true, g, false, &mut db, 0.0);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    let mut da = DenseMatrix::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, false, &mut da, 0.0);
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = DenseMatrix::zeros(bv.rows(), bv.cols());
                    gemm(g, true, av, false, &mut db, 0.0);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                if self.wants(*b) {
                    let mut db = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        db.iter_mut().zip(g.row(r)).for_each(|(d, x)| *d += x);
                    }
                    self.accumulate(grads, *b, DenseMatrix::from_raw(1, g.cols(), db));
                }
                self.accumulate(grads, *a, g.clone());
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scaled(*s)),
            Op::Activate(a, act) => {
                let y = self.val(n);
                let mut da = g.clone();
                match act {
                    Activation::Relu => da.data_mut().iter_mut().zip(y.data()).for_each(|(d, &y)| {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    }),
                    Activation::Tanh => da.data_mut().iter_mut().zip(y.data()).for_each(|(d, &y)| *d *= 1.0 - y * y),
                    Activation::Identity => {}
                }
                self.accumulate(grads, *a, da);
            }
            Op::Aggregate(xp, gates, plan) => {
                let (xv, gv) = (self.val(*xp), self.val(*gates));
                let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                let mut dg = DenseMatrix::zeros(gv.rows(), gv.cols());
                for e in &plan.entries {
                    let go = g.row(e.target);
                    if self.wants(*xp) {
                        let gate = gv.row(e.gate);
                        for ((d, a), b) in dx.row_mut(e.source).iter_mut().zip(go).zip(gate) {
                            *d += e.coef * a * b;
                        }
                    }
                    if self.wants(*gates) {
                        let src = xv.row(e.source);
                        for ((d, a), b) in dg.row_mut(e.gate).iter_mut().zip(go).zip(src) {
                            *d += e.coef * a * b;
                        }
                    }
                }
                self.accumulate(grads, *xp, dx);
                self.accumulate(grads, *gates, dg);
            }
            Op::MixRows(a, mix) => {
                let av = self.val(*a);
                let mut da = DenseMatrix::zeros(av.rows(), av.cols());
                for &(t, s, w) in &mix.weights {
                    let src = g.row(t);
                    da.row_mut(s).iter_mut().zip(src).for_each(|(d, x)| *d += w * x);
                }
                self.accumulate(grads, *a, da);
            }
            Op::Normalize(a, norms) => {
                let y = self.val(n);
                let mut da = DenseMatrix::zeros(y.rows(), y.cols());
                for (r, norm) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in da.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * proj) / norm;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = self.val(p).rows();
                    if self.wants(p) {
                        let cols = g.cols();
                        let slice = g.data()[off * cols..(off + rows) * cols].to_vec();
                        self.accumulate(grads, p, DenseMatrix::from_raw(rows, cols, slice));
                    }
                    off += rows;
                }
            }
            Op::Nce(l, plan) => {
                let seed = g.get(0, 0);
                let lv = self.val(*l);
                let z = lv.data();
                let inv = 1.0 / plan.tau;
                let mut dz = vec![0.0; z.len()];
                for t in &plan.terms {
                    let c = seed * t.weight * inv;
                    let lse_d = log_sum_exp(z, &t.denominator, inv);
                    for &i in &t.denominator {
                        dz[i] += c * (z[i] * inv - lse_d).exp();
                    }
                    let lse_p = log_sum_exp(z, &t.positives, inv);
                    for &i in &t.positives {
                        dz[i] -= c * (z[i] * inv - lse_p).exp();
                    }
                }
                self.accumulate(grads, *l, DenseMatrix::from_raw(lv.rows(), lv.cols(), dz));
            }
        }
        Ok(())
    }
}

impl<'p> Backend<'p> for Tape<'p> {
    type V = Var;

    fn param(&mut self, id: usize, m: &'p DenseMatrix) -> Var {
        if let Some(&n) = self.params.get(&id) {
            return Var(n);
        }
        self.nodes.push(Node { value: Cow::Borrowed(m), op: Op::Param, needs_grad: true });
        let n = self.nodes.len() - 1;
        self.params.insert(id, n);
        Var(n)
    }
    fn constant(&mut self, m: DenseMatrix) -> Var {
        self.nodes.push(Node { value: Cow::Owned(m), op: Op::Constant, needs_grad: false });
        Var(self.nodes.len() - 1)
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a DenseMatrix {
        self.val(v.0)
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = k_matmul(self.val(a.0), self.val(b.0))?;
        Ok(self.push(v, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }
    fn matmul_t(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = k_matmul_t(self.val(a.0), self.val(b.0))?;
        Ok(self.push(v, Op::MatMulT(a.0, b.0), &[a.0, b.0]))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = k_add(self.val(a.0), self.val(b.0))?;
        Ok(self.push(v, Op::Add(a.0, b.0), &[a.0, b.0]))
    }
    fn add_row(&mut self, a: &Var, bias: &Var) -> Result<Var> {
        let v = k_add_row(self.val(a.0), self.val(bias.0))?;
        Ok(self.push(v, Op::AddRow(a.0, bias.0), &[a.0, bias.0]))
    }
    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let v = self.val(a.0).scaled(s);
        self.push(v, Op::Scale(a.0, s), &[a.0])
    }
    fn activate(&mut self, a: &Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return *a;
        }
        let v = k_activate(self.val(a.0), act);
        self.push(v, Op::Activate(a.0, act), &[a.0])
    }
    fn aggregate(&mut self, xp: &Var, gates: &Var, plan: Rc<AggregatePlan>) -> Result<Var> {
        let v = k_aggregate(self.val(xp.0), self.val(gates.0), &plan)?;
        Ok(self.push(v, Op::Aggregate(xp.0, gates.0, plan), &[xp.0, gates.0]))
    }
    fn mix_rows(&mut self, a: &Var, mix: Rc<RowMix>) -> Var {
        let v = k_mix(self.val(a.0), &mix);
        self.push(v, Op::MixRows(a.0, mix), &[a.0])
    }
    fn normalize_rows(&mut self, a: &Var) -> Var {
        let (v, norms) = k_normalize(self.val(a.0));
        self.push(v, Op::Normalize(a.0, Rc::new(norms)), &[a.0])
    }
    fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&DenseMatrix> = parts.iter().map(|p| self.val(p.0)).collect();
        let v = k_concat(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(v, Op::Concat(ids.clone()), &ids))
    }
    fn nce(&mut self, logits: &Var, plan: Rc<NcePlan>) -> Result<Var> {
        let v = k_nce(self.val(logits.0), &plan)?;
        Ok(self.push(DenseMatrix::from_raw(1, 1, vec![v]), Op::Nce(logits.0, plan), &[logits.0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Builds a scalar from two parameters with every op in the backend.
    fn composite<'p, B: Backend<'p>>(b: &mut B, p0: &'p DenseMatrix, p1: &'p DenseMatrix) -> Result<B::V> {
        let a = b.param(0, p0); // 4×3
        let w = b.param(1, p1); // 3×3
        let x = b.matmul(&a, &w)?;
        let bias_src = b.constant(DenseMatrix::from_rows(&[[0.1, -0.2, 0.3]]).unwrap());
        let x = b.add_row(&x, &bias_src)?;
        let t = b.activate(&x, Activation::Tanh);
        let r = b.activate(&x, Activation::Relu);
        let s = b.add(&t, &r)?;
        let s = b.scale(&s, 0.7);
        let plan = Rc::new(AggregatePlan {
            rows: 4,
            entries: vec![
                AggEntry { target: 0, source: 1, gate: 0, coef: 0.5 },
                AggEntry { target: 1, source: 0, gate: 0, coef: 0.5 },
                AggEntry { target: 1, source: 2, gate: 1, coef: 0.5 },
                AggEntry { target: 3, source: 2, gate: 1, coef: 1.0 },
            ],
        });
        let gates = b.matmul(&a, &w)?;
        let gates = b.mix_rows(&gates, Rc::new(RowMix { out_rows: 2, weights: vec![(0, 0, 1.0), (1, 1, 0.25), (1, 3, 0.75)] }));
        let agg = b.aggregate(&s, &gates, plan)?;
        let both = b.concat_rows(&[agg.clone(), s.clone()])?;
        let h = b.normalize_rows(&both);
        let logits = b.matmul_t(&h, &w)?;
        let plan = Rc::new(NcePlan {
            tau: 0.3,
            terms: vec![
                NceTerm { weight: 0.5, positives: vec![0, 4], denominator: vec![0, 1, 2, 4, 9] },
                NceTerm { weight: 1.5, positives: vec![7], denominator: vec![5, 7, 11, 23] },
            ],
        });
        b.nce(&logits, plan)
    }

    fn eval_scalar(p0: &DenseMatrix, p1: &DenseMatrix) -> f64 {
        let mut e = Eval;
        let v = composite(&mut e, p0, p1).unwrap();
        e.value(&v).get(0, 0)
    }

    #[test]
    fn tape_value_matches_eval() {
        let (p0, p1) = (random(4, 3, 1), random(3, 3, 2));
        let mut t = Tape::new();
        let v = composite(&mut t, &p0, &p1).unwrap();
        assert_eq!(t.value(&v).get(0, 0).to_bits(), eval_scalar(&p0, &p1).to_bits());
    }

    #[test]
    fn tape_gradient_matches_central_differences() {
        let (p0, p1) = (random(4, 3, 5), random(3, 3, 6));
        let mut t = Tape::new();
        let v = composite(&mut t, &p0, &p1).unwrap();
        let grads = t.gradients(v).unwrap();
        let h = 1e-6;
        for (id, base) in [(0usize, &p0), (1, &p1)] {
            let g = &grads[&id];
            for idx in 0..base.data().len() {
                let mut plus = base.clone();
                plus.data_mut()[idx] += h;
                let mut minus = base.clone();
                minus.data_mut()[idx] -= h;
                let (fp, fm) = if id == 0 {
                    (eval_scalar(&plus, &p1), eval_scalar(&minus, &p1))
                } else {
                    (eval_scalar(&p0, &plus), eval_scalar(&p0, &minus))
                };
                let fd = (fp - fm) / (2.0 * h);
                let an = g.data()[idx];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "param {id}[{idx}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn nce_value_by_hand() {
        let logits = DenseMatrix::from_rows(&[[1.0, 0.0], [0.5, 2.0]]).unwrap();
        let plan = NcePlan { tau: 0.5, terms: vec![NceTerm { weight: 1.0, positives: vec![0], denominator: vec![0, 1, 2] }] };
        let expect = -((2.0f64).exp() / ((2.0f64).exp() + 1.0 + 1.0f64.exp())).ln();
        assert!((k_nce(&logits, &plan).unwrap() - expect).abs() < 1e-12);
        let bad = NcePlan { tau: 0.0, ..plan };
        assert!(k_nce(&logits, &bad).is_err());
    }

    #[test]
    fn shape_errors_surface() {
        let mut e = Eval;
        let a = e.constant(DenseMatrix::zeros(2, 3));
        let b = e.constant(DenseMatrix::zeros(2, 3));
        assert!(e.matmul(&a, &b).is_err());
        let bias = e.constant(DenseMatrix::zeros(1, 2));
        assert!(e.add_row(&a, &bias).is_err());
    }
}
