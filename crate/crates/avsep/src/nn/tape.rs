//! Reverse-mode automatic differentiation over `Array2<f64>` values.
//!
//! A `Tape` records an eager computation graph; `backward` replays it in
//! reverse, accumulating gradients per node. All reductions run in a fixed
//! order, so gradients are bit-reproducible for identical inputs.

use ndarray::{s, Array2, Axis};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRowBroadcast(usize, usize),
    Sub(usize, usize),
    MulElem(usize, usize),
    ScalarAffine { a: usize, mul: f64 },
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    SoftmaxRows(usize),
    LayerNormRows { x: usize, gamma: usize, beta: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { a: usize, start: usize, len: usize },
    SliceRows { a: usize, start: usize, len: usize },
    RepeatRows { a: usize, k: usize },
    MeanPoolRows { a: usize, k: usize },
    Mean(usize),
    L1Loss(usize, usize),
    LinComb { weights: usize, stack: Vec<usize> },
    CrossEntropyMasked {
        logits: usize,
        targets: Vec<usize>,
        active: Vec<bool>,
    },
    Transpose(usize),
}

const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

/// Per-node gradients produced by `Tape::backward`.
pub struct Gradients(Vec<Option<Array2<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dims");
        let value = av.dot(bv);
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].dim(), self.values[b.0].dim(), "add shape");
        let value = &self.values[a.0] + &self.values[b.0];
        self.push(value, Op::Add(a.0, b.0))
    }

    /// Matrix (T x D) plus a broadcast row (1 x D).
    pub fn add_row(&mut self, m: Var, row: Var) -> Var {
        assert_eq!(self.values[row.0].nrows(), 1, "broadcast row must be 1 x D");
        assert_eq!(
            self.values[m.0].ncols(),
            self.values[row.0].ncols(),
            "add_row dims"
        );
        let value = &self.values[m.0] + &self.values[row.0];
        self.push(value, Op::AddRowBroadcast(m.0, row.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].dim(), self.values[b.0].dim(), "sub shape");
        let value = &self.values[a.0] - &self.values[b.0];
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].dim(), self.values[b.0].dim(), "mul shape");
        let value = &self.values[a.0] * &self.values[b.0];
        self.push(value, Op::MulElem(a.0, b.0))
    }

    /// Elementwise a * mul + add.
    pub fn scalar_affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let value = self.values[a.0].mapv(|x| x * mul + add);
        self.push(value, Op::ScalarAffine { a: a.0, mul })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(f64::tanh);
        self.push(value, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a.0))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.values[a.0].clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(value, Op::SoftmaxRows(a.0))
    }

    /// Per-row layer normalization with learned gain and bias (both 1 x D).
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = &self.values[x.0];
        let d = xv.ncols() as f64;
        let mut value = xv.clone();
        for mut row in value.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        let value = &value * &self.values[gamma.0] + &self.values[beta.0];
        self.push(
            value,
            Op::LayerNormRows {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.values[parts[0].0].nrows();
        let total: usize = parts.iter().map(|p| self.values[p.0].ncols()).sum();
        let mut value = Array2::zeros((rows, total));
        let mut at = 0;
        for p in parts {
            let pv = &self.values[p.0];
            assert_eq!(pv.nrows(), rows, "concat_cols row count");
            value.slice_mut(s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        self.push(value, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.values[parts[0].0].ncols();
        let total: usize = parts.iter().map(|p| self.values[p.0].nrows()).sum();
        let mut value = Array2::zeros((total, cols));
        let mut at = 0;
        for p in parts {
            let pv = &self.values[p.0];
            assert_eq!(pv.ncols(), cols, "concat_rows col count");
            value.slice_mut(s![at..at + pv.nrows(), ..]).assign(pv);
            at += pv.nrows();
        }
        self.push(value, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.values[a.0].slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols { a: a.0, start, len })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.values[a.0].slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::SliceRows { a: a.0, start, len })
    }

    /// Repeat every row k consecutive times (temporal upsampling).
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Var {
        assert!(k >= 1);
        let av = &self.values[a.0];
        let mut value = Array2::zeros((av.nrows() * k, av.ncols()));
        for (i, row) in av.rows().into_iter().enumerate() {
            for j in 0..k {
                value.row_mut(i * k + j).assign(&row);
            }
        }
        self.push(value, Op::RepeatRows { a: a.0, k })
    }

    /// Mean over groups of k consecutive rows; a trailing partial group is
    /// dropped, so the output has floor(rows / k) rows.
    pub fn mean_pool_rows(&mut self, a: Var, k: usize) -> Var {
        assert!(k >= 1);
        let av = &self.values[a.0];
        let out_rows = av.nrows() / k;
        assert!(out_rows >= 1, "mean_pool_rows on fewer than k rows");
        let mut value = Array2::zeros((out_rows, av.ncols()));
        for i in 0..out_rows {
            let mut acc = av.row(i * k).to_owned();
            for j in 1..k {
                acc += &av.row(i * k + j);
            }
            acc /= k as f64;
            value.row_mut(i).assign(&acc);
        }
        self.push(value, Op::MeanPoolRows { a: a.0, k })
    }

    /// Mean over all entries, as a 1 x 1 node.
    pub fn mean(&mut self, a: Var) -> Var {
        let av = &self.values[a.0];
        let m = av.sum() / av.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a.0))
    }

    /// Mean absolute difference, as a 1 x 1 node.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].dim(), self.values[b.0].dim(), "l1 shape");
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        let sum: f64 = av.iter().zip(bv.iter()).map(|(x, y)| (x - y).abs()).sum();
        let m = sum / av.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::L1Loss(a.0, b.0))
    }

    /// Linear combination sum_l weights[0, l] * stack[l], differentiable in
    /// both the weights and every stacked matrix.
    pub fn lin_comb(&mut self, weights: Var, stack: &[Var]) -> Var {
        let wv = &self.values[weights.0];
        assert_eq!(wv.nrows(), 1, "weights must be 1 x L");
        assert_eq!(wv.ncols(), stack.len(), "weights length must match stack");
        let dim = self.values[stack[0].0].dim();
        let mut value = Array2::zeros(dim);
        for (l, h) in stack.iter().enumerate() {
            let hv = &self.values[h.0];
            assert_eq!(hv.dim(), dim, "stack entries must share shape");
            value.scaled_add(wv[(0, l)], hv);
        }
        self.push(
            value,
            Op::LinComb {
                weights: weights.0,
                stack: stack.iter().map(|v| v.0).collect(),
            },
        )
    }

    /// Mean cross-entropy of row-wise softmax against integer targets,
    /// restricted to rows where `active` is true. 1 x 1 node.
    pub fn cross_entropy_masked(&mut self, logits: Var, targets: &[usize], active: &[bool]) -> Var {
        let lv = &self.values[logits.0];
        assert_eq!(lv.nrows(), targets.len());
        assert_eq!(lv.nrows(), active.len());
        let n_active = active.iter().filter(|&&a| a).count();
        assert!(n_active > 0, "cross entropy needs at least one active row");
        let mut total = 0.0;
        for (t, row) in lv.rows().into_iter().enumerate() {
            if !active[t] {
                continue;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logsum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            total += logsum - row[targets[t]];
        }
        self.push(
            Array2::from_elem((1, 1), total / n_active as f64),
            Op::CrossEntropyMasked {
                logits: logits.0,
                targets: targets.to_vec(),
                active: active.to_vec(),
            },
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.values[a.0].t().to_owned();
        self.push(value, Op::Transpose(a.0))
    }

    /// Reverse sweep from a scalar root. Returns gradients of the root with
    /// respect to every node it depends on.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.values[root.0].dim(), (1, 1), "root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.values[*b].t());
                    let db = self.values[*a].t().dot(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRowBroadcast(m, row) => {
                    let drow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *m, g);
                    acc(&mut grads, *row, drow);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -g);
                }
                Op::MulElem(a, b) => {
                    let da = &g * &self.values[*b];
                    let db = &g * &self.values[*a];
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::ScalarAffine { a, mul } => {
                    acc(&mut grads, *a, g.mapv(|x| x * mul));
                }
                Op::Sigmoid(a) => {
                    let y = &self.values[i];
                    acc(&mut grads, *a, &g * &(y * &y.mapv(|v| 1.0 - v)));
                }
                Op::Tanh(a) => {
                    let y = &self.values[i];
                    acc(&mut grads, *a, &g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::Relu(a) => {
                    let x = &self.values[*a];
                    let gate = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, &g * &gate);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.values[i];
                    let mut da = &g * y;
                    for (mut row, yrow) in da.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = row.sum();
                        for (rv, yv) in row.iter_mut().zip(yrow.iter()) {
                            *rv -= dot * yv;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LayerNormRows { x, gamma, beta } => {
                    let xv = &self.values[*x];
                    let gv = &self.values[*gamma];
                    let d = xv.ncols() as f64;
                    let mut dx = Array2::zeros(xv.dim());
                    let mut dgamma = Array2::zeros((1, xv.ncols()));
                    let mut dbeta = Array2::zeros((1, xv.ncols()));
                    for (r, row) in xv.rows().into_iter().enumerate() {
                        let mean = row.sum() / d;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let grow = g.row(r);
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        let dxhat: Vec<f64> = grow
                            .iter()
                            .enumerate()
                            .map(|(j, gj)| {
                                let v = gj * gv[(0, j)];
                                mean_dxhat += v;
                                mean_dxhat_xhat += v * xhat[j];
                                v
                            })
                            .collect();
                        mean_dxhat /= d;
                        mean_dxhat_xhat /= d;
                        for j in 0..xv.ncols() {
                            dx[(r, j)] =
                                inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            dgamma[(0, j)] += grow[j] * xhat[j];
                            dbeta[(0, j)] += grow[j];
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.values[*p].ncols();
                        acc(&mut grads, *p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let h = self.values[*p].nrows();
                        acc(&mut grads, *p, g.slice(s![at..at + h, ..]).to_owned());
                        at += h;
                    }
                }
                Op::SliceCols { a, start, len } => {
                    let mut da = Array2::zeros(self.values[*a].dim());
                    da.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    acc(&mut grads, *a, da);
                }
                Op::SliceRows { a, start, len } => {
                    let mut da = Array2::zeros(self.values[*a].dim());
                    da.slice_mut(s![*start..*start + *len, ..]).assign(&g);
                    acc(&mut grads, *a, da);
                }
                Op::RepeatRows { a, k } => {
                    let av_rows = self.values[*a].nrows();
                    let mut da = Array2::zeros(self.values[*a].dim());
                    for i_src in 0..av_rows {
                        for j in 0..*k {
                            let grow = g.row(i_src * k + j);
                            let mut drow = da.row_mut(i_src);
                            drow += &grow;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::MeanPoolRows { a, k } => {
                    let mut da = Array2::zeros(self.values[*a].dim());
                    let kk = *k as f64;
                    for (i_out, grow) in g.rows().into_iter().enumerate() {
                        for j in 0..*k {
                            let mut drow = da.row_mut(i_out * k + j);
                            drow.zip_mut_with(&grow, |d, gv| *d += gv / kk);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Mean(a) => {
                    let n = self.values[*a].len() as f64;
                    let da = Array2::from_elem(self.values[*a].dim(), g[(0, 0)] / n);
                    acc(&mut grads, *a, da);
                }
                Op::L1Loss(a, b) => {
                    let (av, bv) = (&self.values[*a], &self.values[*b]);
                    let n = av.len() as f64;
                    let scale = g[(0, 0)] / n;
                    let mut da = Array2::zeros(av.dim());
                    ndarray::Zip::from(&mut da).and(av).and(bv).for_each(|d, &x, &y| {
                        *d = scale * (x - y).signum();
                    });
                    acc(&mut grads, *b, -&da);
                    acc(&mut grads, *a, da);
                }
                Op::LinComb { weights, stack } => {
                    let wv = self.values[*weights].clone();
                    let mut dw = Array2::zeros((1, stack.len()));
                    for (l, h) in stack.iter().enumerate() {
                        dw[(0, l)] = (&g * &self.values[*h]).sum();
                        acc(&mut grads, *h, g.mapv(|x| x * wv[(0, l)]));
                    }
                    acc(&mut grads, *weights, dw);
                }
                Op::CrossEntropyMasked {
                    logits,
                    targets,
                    active,
                } => {
                    let lv = &self.values[*logits];
                    let n_active = active.iter().filter(|&&a| a).count() as f64;
                    let scale = g[(0, 0)] / n_active;
                    let mut dl = Array2::zeros(lv.dim());
                    for (t, row) in lv.rows().into_iter().enumerate() {
                        if !active[t] {
                            continue;
                        }
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for (j, e) in exps.iter().enumerate() {
                            let p = e / sum;
                            dl[(t, j)] = scale * (p - if j == targets[t] { 1.0 } else { 0.0 });
                        }
                    }
                    acc(&mut grads, *logits, dl);
                }
                Op::Transpose(a) => {
                    acc(&mut grads, *a, g.t().to_owned());
                }
            }
        }
        Gradients(grads)
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], idx: usize, delta: Array2<f64>) {
    match &mut grads[idx] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}
