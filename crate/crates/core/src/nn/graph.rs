//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records each operation eagerly; [`Graph::backward`] walks the
//! tape in reverse from caller-supplied output gradients and accumulates
//! parameter gradients into a [`ParamStore`]-shaped buffer.

use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU of a scalar.
pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh())
}

enum Op {
    Input,
    Param(ParamId),
    Embed { table: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix, rstd: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let m = self.params.get(id).clone();
        self.push(m, Op::Param(id))
    }

    /// Rows of a parameter table selected by `ids`.
    pub fn embed(&mut self, table: ParamId, ids: &[usize]) -> Var {
        let t = self.params.get(table);
        let mut out = Matrix::zeros(ids.len(), t.cols);
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(out, Op::Embed { table, ids: ids.to_vec() })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul(self.value(b));
        self.push(m, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul_bt(self.value(b));
        self.push(m, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut m = self.value(a).clone();
        m.add_assign(self.value(b));
        self.push(m, Op::Add(a, b))
    }

    /// Adds the single row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!((1, self.value(a).cols), bias.shape(), "add_row shape mismatch");
        let mut m = self.value(a).clone();
        for r in 0..m.rows {
            for (x, y) in m.row_mut(r).iter_mut().zip(&bias.data) {
                *x += y;
            }
        }
        self.push(m, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut m = self.value(a).clone();
        m.scale_assign(s);
        self.push(m, Op::Scale(a, s))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut m = self.value(a).clone();
        for x in &mut m.data {
            *x = gelu(*x);
        }
        self.push(m, Op::Gelu(a))
    }

    /// Row-wise softmax. With `causal`, row `i` only sees columns `0..=i`.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let mut m = self.value(a).clone();
        for r in 0..m.rows {
            let row = m.row_mut(r);
            let visible = if causal { (r + 1).min(row.len()) } else { row.len() };
            let max = row[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in &mut row[..visible] {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in &mut row[..visible] {
                *x /= sum;
            }
            for x in &mut row[visible..] {
                *x = 0.0;
            }
        }
        self.push(m, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let cols = xv.cols;
        let mut xhat = Matrix::zeros(xv.rows, cols);
        let mut rstd = Vec::with_capacity(xv.rows);
        let mut out = Matrix::zeros(xv.rows, cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat.set(r, c, h);
                out.set(r, c, h * g.data[c] + b.data[c]);
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows, len);
        for r in 0..xv.rows {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols].copy_from_slice(pv.row(r));
            }
            offset += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Back-propagates `seeds` (output gradients) and adds parameter
    /// gradients into `grads`, which must be shaped like the parameter store.
    pub fn backward(&self, seeds: Vec<(Var, Matrix)>, grads: &mut [Matrix]) {
        let mut g: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, m) in seeds {
            assert_eq!(m.shape(), self.value(v).shape(), "seed gradient shape mismatch");
            accumulate(&mut g, v, m);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads[id.index()].add_assign(&dy),
                Op::Embed { table, ids } => {
                    let t = &mut grads[table.index()];
                    for (r, &i) in ids.iter().enumerate() {
                        for (x, y) in t.row_mut(i).iter_mut().zip(dy.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let da = dy.matmul_bt(self.value(*b));
                    let db = self.value(*a).matmul_at(&dy);
                    accumulate(&mut g, *a, da);
                    accumulate(&mut g, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = dy.matmul(self.value(*b));
                    let db = dy.matmul_at(self.value(*a));
                    accumulate(&mut g, *a, da);
                    accumulate(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g, *b, dy.clone());
                    accumulate(&mut g, *a, dy);
                }
                Op::AddRow(a, b) => {
                    let mut db = Matrix::zeros(1, dy.cols);
                    for r in 0..dy.rows {
                        for (x, y) in db.data.iter_mut().zip(dy.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut g, *b, db);
                    accumulate(&mut g, *a, dy);
                }
                Op::Scale(a, s) => {
                    let mut da = dy;
                    da.scale_assign(*s);
                    accumulate(&mut g, *a, da);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut da = dy;
                    for (d, &v) in da.data.iter_mut().zip(&x.data) {
                        let u = GELU_C * (v + 0.044715 * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        *d *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                    }
                    accumulate(&mut g, *a, da);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, dr) = (y.row(r), dy.row(r));
                        let dot: f64 = yr.iter().zip(dr).map(|(p, q)| p * q).sum();
                        for (c, o) in da.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (dr[c] - dot);
                        }
                    }
                    accumulate(&mut g, *a, da);
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let gv = self.value(*gain);
                    let cols = dy.cols as f64;
                    let mut dgain = Matrix::zeros(1, dy.cols);
                    let mut dbias = Matrix::zeros(1, dy.cols);
                    let mut dx = Matrix::zeros(dy.rows, dy.cols);
                    for r in 0..dy.rows {
                        let (dr, hr) = (dy.row(r), xhat.row(r));
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..dy.cols {
                            dgain.data[c] += dr[c] * hr[c];
                            dbias.data[c] += dr[c];
                            let dh = dr[c] * gv.data[c];
                            mean_d += dh;
                            mean_dh += dh * hr[c];
                        }
                        mean_d /= cols;
                        mean_dh /= cols;
                        let out = dx.row_mut(r);
                        for c in 0..out.len() {
                            let dh = dr[c] * gv.data[c];
                            out[c] = rstd[r] * (dh - mean_d - hr[c] * mean_dh);
                        }
                    }
                    accumulate(&mut g, *gain, dgain);
                    accumulate(&mut g, *bias, dbias);
                    accumulate(&mut g, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows, xv.cols);
                    for r in 0..dy.rows {
                        dx.row_mut(r)[*start..*start + dy.cols].copy_from_slice(dy.row(r));
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut dp = Matrix::zeros(dy.rows, cols);
                        for r in 0..dy.rows {
                            dp.row_mut(r).copy_from_slice(&dy.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut g, p, dp);
                    }
                }
            }
        }
    }
}

fn accumulate(g: &mut [Option<Matrix>], v: Var, m: Matrix) {
    match &mut g[v.0] {
        Some(acc) => acc.add_assign(&m),
        slot @ None => *slot = Some(m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Scalar objective: Σ coef ⊙ f(params), with f exercising every op.
    fn objective(store: &ParamStore, ids: &[ParamId], coef: &Matrix) -> (f64, Vec<Matrix>) {
        let mut g = Graph::new(store);
        let x = g.embed(ids[0], &[2, 0, 2, 1]);
        let w = g.param(ids[1]);
        let b = g.param(ids[2]);
        let gain = g.param(ids[3]);
        let h = g.matmul(x, w);
        let h = g.add_row(h, b);
        let h = g.layer_norm(h, gain, b);
        let h = g.gelu(h);
        let left = g.slice_cols(h, 0, 2);
        let right = g.slice_cols(h, 2, 2);
        let s = g.matmul_bt(left, right);
        let s = g.scale(s, 0.7);
        let a = g.softmax(s, true);
        let o = g.matmul(a, right);
        let o = g.concat_cols(&[o, left]);
        let o = g.add(o, h);
        let y = g.value(o);
        let loss: f64 = y.data.iter().zip(&coef.data).map(|(p, q)| p * q).sum();
        let mut grads = store.zeros_like();
        g.backward(vec![(o, coef.clone())], &mut grads);
        (loss, grads)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::default();
        let ids = vec![
            store.add("emb", random(3, 3, &mut rng)),
            store.add("w", random(3, 4, &mut rng)),
            store.add("b", random(1, 4, &mut rng)),
            store.add("gain", random(1, 4, &mut rng)),
        ];
        let coef = random(4, 4, &mut rng);
        let (_, grads) = objective(&store, &ids, &coef);
        let h = 1e-6;
        for id in &ids {
            for k in 0..store.get(*id).data.len() {
                let mut plus = store.clone();
                plus.get_mut(*id).data[k] += h;
                let mut minus = store.clone();
                minus.get_mut(*id).data[k] -= h;
                let fd = (objective(&plus, &ids, &coef).0 - objective(&minus, &ids, &coef).0) / (2.0 * h);
                let an = grads[id.index()].data[k];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "{id:?}[{k}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn causal_softmax_rows_normalize() {
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = g.input(random(5, 5, &mut rng));
        let y = g.softmax(x, true);
        let m = g.value(y);
        for r in 0..5 {
            let s: f64 = m.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(m.row(r)[r + 1..].iter().all(|&v| v == 0.0));
        }
    }
}
