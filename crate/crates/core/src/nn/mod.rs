//! Reverse-mode autodiff over 2-d `f64` arrays and the transformer layers
//! built on it.

mod layers;
mod params;

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array1, Array2, Axis};

use crate::error::{Error, Result};

pub use layers::{
    attention, attention_specs, decoder_layer, decoder_layer_specs, encoder_layer, encoder_layer_specs, feed_forward,
    layer_norm, layer_norm_specs, linear, linear_specs, LayerOptions,
};
pub use params::{Init, ParamSpec, ParamStore};

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e30;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<f64>, inv_std: Array1<f64> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    CrossEntropy { logits: Var, probs: Array2<f64>, weights: Vec<f64>, labels: Vec<usize> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// A tape of operations. Parameters are read from a [`ParamStore`] on first
/// use and their gradients collected by [`Graph::backward`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    loaded: BTreeMap<String, Var>,
}

/// Gradients keyed by parameter name. Parameters the loss does not reach are absent.
pub type Gradients = BTreeMap<String, Array2<f64>>;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new(), loaded: BTreeMap::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => op_inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.loaded.get(name) {
            return Ok(*v);
        }
        let value = self.params.get(name).ok_or_else(|| Error::Shape(format!("missing parameter {name}")))?.clone();
        let v = self.push(value, Op::Param(name.to_string()));
        self.loaded.insert(name.to_string(), v);
        Ok(v)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((_, k), (k2, _)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", self.dims(a), self.dims(b))));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((_, k), (_, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(Error::Shape(format!("matmul_bt {:?} x {:?}ᵀ", self.dims(a), self.dims(b))));
        }
        let v = self.value(a).dot(&self.value(b).t());
        Ok(self.push(v, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::Shape(format!("add {:?} + {:?}", self.dims(a), self.dims(b))));
        }
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds the single row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((_, c), (r, c2)) = (self.dims(a), self.dims(b));
        if r != 1 || c != c2 {
            return Err(Error::Shape(format!("add_row {:?} + {:?}", self.dims(a), self.dims(b))));
        }
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 0.5 * x * (1.0 + gelu_inner(x).tanh()));
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise softmax; columns with `key_valid[j] == false` get probability 0.
    pub fn softmax_masked(&mut self, a: Var, key_valid: &[bool]) -> Result<Var> {
        let (_, c) = self.dims(a);
        if key_valid.len() != c {
            return Err(Error::Shape(format!("mask of {} for {c} keys", key_valid.len())));
        }
        if !key_valid.iter().any(|v| *v) {
            return Err(Error::InvalidInput("attention over fully masked keys".into()));
        }
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            for (x, ok) in row.iter_mut().zip(key_valid) {
                if !ok {
                    *x = MASKED;
                }
            }
            let m = row.fold(f64::NEG_INFINITY, |m, x| m.max(*x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row /= z;
        }
        Ok(self.push(v, Op::Softmax(a)))
    }

    /// Per-row layer norm with scale `gamma` and shift `beta` (both 1 x d).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, d) = self.dims(x);
        if self.dims(gamma) != (1, d) || self.dims(beta) != (1, d) {
            return Err(Error::Shape(format!("layer_norm over {d} with gamma {:?}", self.dims(gamma))));
        }
        let xv = self.value(x);
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Array1::zeros(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            xhat.row_mut(i).assign(&row.mapv(|v| (v - mean) * is));
        }
        let y = &xhat * self.value(gamma) + self.value(beta);
        Ok(self.push(y, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).map_err(|e| Error::Shape(format!("concat_rows: {e}")))?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).map_err(|e| Error::Shape(format!("concat_cols: {e}")))?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.dims(a).0 {
            return Err(Error::Shape(format!("slice_rows {start}+{len} of {:?}", self.dims(a))));
        }
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.dims(a).1 {
            return Err(Error::Shape(format!("slice_cols {start}+{len} of {:?}", self.dims(a))));
        }
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let n = self.dims(table).0;
        if let Some(r) = rows.iter().find(|r| **r >= n) {
            return Err(Error::Shape(format!("gather row {r} of {n}")));
        }
        let v = self.value(table).select(Axis(0), rows);
        Ok(self.push(v, Op::GatherRows(table, rows.to_vec())))
    }

    /// `Σ_i w_i · CE(logits_i, labels_i) / denom` as a 1 x 1 node. Rows with
    /// weight 0 are excluded.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64], denom: f64) -> Result<Var> {
        let (n, c) = self.dims(logits);
        if labels.len() != n || weights.len() != n {
            return Err(Error::Shape(format!("{n} logit rows, {} labels, {} weights", labels.len(), weights.len())));
        }
        if let Some(l) = labels.iter().find(|l| **l >= c) {
            return Err(Error::Shape(format!("label {l} for {c} classes")));
        }
        if denom <= 0.0 {
            return Err(Error::InvalidInput("cross-entropy over zero unmasked rows".into()));
        }
        let lv = self.value(logits);
        let mut probs = Array2::zeros((n, c));
        let mut loss = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let m = row.fold(f64::NEG_INFINITY, |m, x| m.max(*x));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            probs.row_mut(i).assign(&row.mapv(|x| (x - lse).exp()));
            if weights[i] != 0.0 {
                loss += weights[i] * (lse - row[labels[i]]);
            }
        }
        let w: Vec<f64> = weights.iter().map(|w| w / denom).collect();
        Ok(self.push(Array2::from_elem((1, 1), loss / denom), Op::CrossEntropy { logits, probs, weights: w, labels: labels.to_vec() }))
    }

    /// Gradients of the 1 x 1 node `loss` with respect to every loaded parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.dims(loss) != (1, 1) {
            return Err(Error::Shape(format!("backward from a {:?} node", self.dims(loss))));
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut acc = |v: Var, d: Array2<f64>| {
                if self.nodes[v.0].needs_grad {
                    match &mut grads[v.0] {
                        Some(x) => *x += &d,
                        slot => *slot = Some(d),
                    }
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            let wants = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => {
                    out.insert(name.clone(), g);
                }
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        acc(*a, g.dot(&val(*b).t()));
                    }
                    if wants(*b) {
                        acc(*b, val(*a).t().dot(&g));
                    }
                }
                Op::MatMulBt(a, b) => {
                    if wants(*a) {
                        acc(*a, g.dot(val(*b)));
                    }
                    if wants(*b) {
                        acc(*b, g.t().dot(val(*a)));
                    }
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::AddRow(a, b) => {
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::Gelu(a) => {
                    let d = ndarray::Zip::from(&g).and(val(*a)).map_collect(|g, &x| {
                        let t = gelu_inner(x).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    });
                    acc(*a, d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let s = drow.sum();
                        drow.zip_mut_with(&yrow, |dv, yv| *dv -= yv * s);
                    }
                    acc(*a, d);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    if wants(*gamma) {
                        acc(*gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if wants(*beta) {
                        acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if wants(*x) {
                        let dxhat = &g * val(*gamma);
                        let d = xhat.ncols() as f64;
                        let mut dx = Array2::zeros(xhat.raw_dim());
                        for i in 0..xhat.nrows() {
                            let dh = dxhat.row(i);
                            let xh = xhat.row(i);
                            let s1 = dh.sum();
                            let s2 = dh.dot(&xh);
                            let is = inv_std[i];
                            dx.row_mut(i).assign(&ndarray::Zip::from(dh).and(xh).map_collect(|a, b| is / d * (d * a - s1 - b * s2)));
                        }
                        acc(*x, dx);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let r = val(*p).nrows();
                        acc(*p, g.slice(s![at..at + r, ..]).to_owned());
                        at += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let c = val(*p).ncols();
                        if wants(*p) {
                            acc(*p, g.slice(s![.., at..at + c]).to_owned());
                        }
                        at += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut d = Array2::zeros(val(*a).raw_dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(*a, d);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(val(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::GatherRows(table, rows) => {
                    let mut d = Array2::zeros(val(*table).raw_dim());
                    for (i, r) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(*r);
                        dst += &g.row(i);
                    }
                    acc(*table, d);
                }
                Op::CrossEntropy { logits, probs, weights, labels } => {
                    let mut d = probs.clone();
                    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                        row[labels[i]] -= 1.0;
                        row *= weights[i] * g[[0, 0]];
                    }
                    acc(*logits, d);
                }
            }
        }
        Ok(out)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;

fn gelu_inner(x: f64) -> f64 {
    GELU_C * (x + GELU_K * x * x * x)
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Param(_) => vec![],
        Op::MatMul(a, b) | Op::MatMulBt(a, b) | Op::Add(a, b) | Op::AddRow(a, b) => vec![*a, *b],
        Op::Scale(a, _) | Op::Gelu(a) | Op::Softmax(a) | Op::SliceRows(a, _) | Op::SliceCols(a, _) | Op::GatherRows(a, _) => vec![*a],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::ConcatRows(p) | Op::ConcatCols(p) => p.clone(),
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::default();
        for (n, r, c) in shapes {
            p.insert(n, Array2::from_shape_fn((*r, *c), |_| rng.random_range(-1.0..1.0)));
        }
        p
    }

    /// Central differences on every entry of every parameter.
    fn check(p: &ParamStore, f: &dyn Fn(&mut Graph) -> Var) {
        let g = {
            let mut gr = Graph::new(p);
            let l = f(&mut gr);
            gr.backward(l).unwrap()
        };
        let h = 1e-6;
        for (name, value) in p.iter() {
            for idx in 0..value.len() {
                let (r, c) = (idx / value.ncols(), idx % value.ncols());
                let eval = |delta: f64| {
                    let mut q = p.clone();
                    q.get_mut(name).unwrap()[[r, c]] += delta;
                    let mut gr = Graph::new(&q);
                    let l = f(&mut gr);
                    gr.value(l)[[0, 0]]
                };
                let num = (eval(h) - eval(-h)) / (2.0 * h);
                let ana = g.get(name).map(|a| a[[r, c]]).unwrap_or(0.0);
                let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                assert!(err < 1e-5, "{name}[{r},{c}] analytic {ana} numeric {num}");
            }
        }
    }

    #[test]
    fn gradients_of_every_op() {
        let p = store(&[("a", 3, 4), ("b", 4, 5), ("c", 3, 5), ("row", 1, 5), ("gamma", 1, 5), ("beta", 1, 5), ("t", 6, 5)], 0);
        check(&p, &|g| {
            let a = g.param("a").unwrap();
            let b = g.param("b").unwrap();
            let c = g.param("c").unwrap();
            let ab = g.matmul(a, b).unwrap();
            let x = g.add(ab, c).unwrap();
            let row = g.param("row").unwrap();
            let x = g.add_row(x, row).unwrap();
            let x = g.gelu(x);
            let gm = g.param("gamma").unwrap();
            let bt = g.param("beta").unwrap();
            let x = g.layer_norm(x, gm, bt).unwrap();
            let t = g.param("t").unwrap();
            let sc = g.matmul_bt(x, t).unwrap();
            let sc = g.scale(sc, 0.7);
            let pr = g.softmax_masked(sc, &[true, false, true, true, false, true]).unwrap();
            let y = g.matmul(pr, t).unwrap();
            let left = g.slice_cols(y, 0, 2).unwrap();
            let right = g.slice_cols(y, 2, 2).unwrap();
            let z = g.concat_cols(&[right, left]).unwrap();
            let top = g.slice_rows(z, 0, 1).unwrap();
            let gathered = g.gather_rows(t, &[1, 1, 4]).unwrap();
            let gathered = g.slice_cols(gathered, 0, 4).unwrap();
            let stacked = g.concat_rows(&[z, top]).unwrap();
            let stacked = g.slice_rows(stacked, 1, 3).unwrap();
            let all = g.add(stacked, gathered).unwrap();
            let logits = g.slice_cols(all, 0, 2).unwrap();
            g.cross_entropy(logits, &[1, 0, 1], &[1.0, 0.0, 2.0], 3.0).unwrap()
        });
    }

    #[test]
    fn masked_keys_get_zero_probability() {
        let p = ParamStore::default();
        let mut g = Graph::new(&p);
        let x = g.input(Array2::from_shape_vec((1, 3), vec![5.0, 1.0, 2.0]).unwrap());
        let y = g.softmax_masked(x, &[false, true, true]).unwrap();
        assert_eq!(g.value(y)[[0, 0]], 0.0);
        assert!((g.value(y).sum() - 1.0).abs() < 1e-15);
        assert!(g.softmax_masked(x, &[false; 3]).is_err());
    }

    #[test]
    fn cross_entropy_analytic_values() {
        let p = ParamStore::default();
        let mut g = Graph::new(&p);
        let uniform = g.input(Array2::zeros((4, 2)));
        let l = g.cross_entropy(uniform, &[0, 1, 1, 0], &[1.0; 4], 4.0).unwrap();
        assert!((g.value(l)[[0, 0]] - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = g.input(Array2::from_shape_vec((2, 2), vec![20.0, -20.0, -20.0, 20.0]).unwrap());
        let l = g.cross_entropy(perfect, &[0, 1], &[1.0; 2], 2.0).unwrap();
        assert!(g.value(l)[[0, 0]] < 1e-6);
        assert!(g.cross_entropy(perfect, &[0, 1], &[0.0; 2], 0.0).is_err());
    }

    #[test]
    fn shape_errors() {
        let p = ParamStore::default();
        let mut g = Graph::new(&p);
        let a = g.input(Array2::zeros((2, 3)));
        let b = g.input(Array2::zeros((2, 3)));
        assert!(g.matmul(a, b).is_err());
        assert!(g.matmul_bt(a, b).is_ok());
        assert!(g.add_row(a, b).is_err());
        assert!(g.param("missing").is_err());
    }
}
