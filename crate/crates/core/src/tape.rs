//! Reverse-mode autodiff tape.
//!
//! Every value on the tape is a dense `Array2<f64>`; scalars are 1x1 and
//! column vectors are nx1. Nodes are appended in topological order, so the
//! backward pass is a single reverse sweep. The op set is exactly what the
//! fine-tuning loss needs: transformer building blocks, word-level surprisal
//! aggregation, design-matrix scatter, and a ridge solve whose backward pass
//! reuses the forward Cholesky factorization.

use crate::linalg::{cholesky, cholesky_solve, LinalgError};
use ndarray::{s, Array1, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// One surprisal-column placement inside a scattered design matrix.
#[derive(Debug, Clone)]
pub struct Placement {
    /// Row of the design matrix.
    pub row: usize,
    /// Column of the design matrix.
    pub col: usize,
    /// Index into the scatter sources (one per sentence).
    pub source: usize,
    /// Row within that source vector (word index).
    pub index: usize,
}

enum Op {
    Leaf,
    Add(Var, Var),
    /// Adds a 1xN row vector to every row of an MxN matrix.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    MatMul(Var, Var),
    Transpose(Var),
    /// Row softmax over a square score matrix where entry (i, j) is masked
    /// out for j > i.
    CausalSoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Gelu(Var),
    EmbedRows {
        table: Var,
        ids: Vec<usize>,
    },
    PickPerRow {
        a: Var,
        cols: Vec<usize>,
    },
    SliceCols {
        a: Var,
        start: usize,
        len: usize,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    SumAll(Var),
    MeanAll(Var),
    /// Sums contiguous row spans of a column vector.
    SpanSumRows {
        a: Var,
        spans: Vec<(usize, usize)>,
    },
    /// Copies entries of source column vectors into fixed positions of a
    /// constant base matrix.
    ScatterDesign {
        sources: Vec<Var>,
        places: Vec<Placement>,
    },
    /// beta = (X^T X + rho I)^{-1} X^T psi, with the factorization cached
    /// for the adjoint solve.
    RidgeSolve {
        x: Var,
        psi: Array1<f64>,
        chol: Array2<f64>,
        beta: Array1<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Reverse-mode computation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

#[derive(Debug, thiserror::Error)]
pub enum TapeError {
    #[error("ridge system is singular: {0}")]
    SingularRidge(#[from] LinalgError),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.dim(), (1, 1));
        self.nodes[v.0].value[(0, 0)]
    }

    /// Inserts a node gradients can flow into (parameters, scattered inputs).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Alias for [`Tape::leaf`]; constants simply never have their gradient read.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.nodes[row.0].value.nrows(), 1);
        let v = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn causal_softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let n = x.nrows();
        debug_assert_eq!(x.ncols(), n);
        let mut out = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let mut maxv = f64::NEG_INFINITY;
            for j in 0..=i {
                maxv = maxv.max(x[(i, j)]);
            }
            let mut denom = 0.0;
            for j in 0..=i {
                let e = (x[(i, j)] - maxv).exp();
                out[(i, j)] = e;
                denom += e;
            }
            for j in 0..=i {
                out[(i, j)] /= denom;
            }
        }
        self.push(out, Op::CausalSoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = maxv + row.iter().map(|&v| (v - maxv).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = &self.nodes[x.0].value;
        let (t, d) = xv.dim();
        let mut xhat = Array2::<f64>::zeros((t, d));
        let mut inv_std = Array1::<f64>::zeros(t);
        for i in 0..t {
            let row = xv.row(i);
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                xhat[(i, j)] = (xv[(i, j)] - mean) * is;
            }
        }
        let g = &self.nodes[gamma.0].value;
        let b = &self.nodes[beta.0].value;
        let out = &xhat * g + b;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(gelu_tanh);
        self.push(v, Op::Gelu(a))
    }

    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = &self.nodes[table.0].value;
        let d = t.ncols();
        let mut out = Array2::<f64>::zeros((ids.len(), d));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&t.row(id));
        }
        self.push(
            out,
            Op::EmbedRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Var {
        let x = &self.nodes[a.0].value;
        debug_assert_eq!(cols.len(), x.nrows());
        let mut out = Array2::<f64>::zeros((cols.len(), 1));
        for (i, &c) in cols.iter().enumerate() {
            out[(i, 0)] = x[(i, c)];
        }
        self.push(
            out,
            Op::PickPerRow {
                a,
                cols: cols.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[a.0]
            .value
            .slice(s![.., start..start + len])
            .to_owned();
        self.push(v, Op::SliceCols { a, start, len })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape mismatch");
        self.push(
            v,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let m = v.sum() / (v.len() as f64);
        self.push(Array2::from_elem((1, 1), m), Op::MeanAll(a))
    }

    pub fn span_sum_rows(&mut self, a: Var, spans: &[(usize, usize)]) -> Var {
        let x = &self.nodes[a.0].value;
        debug_assert_eq!(x.ncols(), 1);
        let mut out = Array2::<f64>::zeros((spans.len(), 1));
        for (w, &(lo, hi)) in spans.iter().enumerate() {
            let mut s = 0.0;
            for i in lo..hi {
                s += x[(i, 0)];
            }
            out[(w, 0)] = s;
        }
        self.push(
            out,
            Op::SpanSumRows {
                a,
                spans: spans.to_vec(),
            },
        )
    }

    /// Builds a design matrix from a constant base (control columns filled
    /// in, surprisal columns zero) plus scattered entries of the per-sentence
    /// surprisal vectors.
    pub fn scatter_design(
        &mut self,
        base: Array2<f64>,
        sources: &[Var],
        places: &[Placement],
    ) -> Var {
        let mut out = base;
        for p in places {
            out[(p.row, p.col)] = self.nodes[sources[p.source].0].value[(p.index, 0)];
        }
        self.push(
            out,
            Op::ScatterDesign {
                sources: sources.to_vec(),
                places: places.to_vec(),
            },
        )
    }

    /// Closed-form ridge solve `beta = (X^T X + rho I)^{-1} X^T psi`.
    ///
    /// Differentiable with respect to the design-matrix entries; the adjoint
    /// pass solves against the same factorization.
    pub fn ridge_solve(&mut self, x: Var, psi: &Array1<f64>, rho: f64) -> Result<Var, TapeError> {
        let xv = &self.nodes[x.0].value;
        if xv.nrows() != psi.len() {
            return Err(TapeError::Shape {
                op: "ridge_solve",
                detail: format!("{} rows vs {} targets", xv.nrows(), psi.len()),
            });
        }
        let p = xv.ncols();
        let mut gram = xv.t().dot(xv);
        for i in 0..p {
            gram[(i, i)] += rho;
        }
        let chol = cholesky(&gram)?;
        let rhs = xv.t().dot(psi);
        let beta = cholesky_solve(&chol, &rhs);
        let value = beta.clone().insert_axis(Axis(1));
        Ok(self.push(
            value,
            Op::RidgeSolve {
                x,
                psi: psi.clone(),
                chol,
                beta,
            },
        ))
    }

    /// Runs the reverse sweep from `root` (a 1x1 node) and returns the
    /// gradient of every node.
    pub fn backward(&mut self, root: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));
        for idx in (0..=root.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let add_to = |grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>| {
            match &mut grads[v.0] {
                Some(acc) => *acc += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                add_to(grads, *a, g.clone());
                let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                add_to(grads, *row, summed);
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                add_to(grads, *a, g * bv);
                add_to(grads, *b, g * av);
            }
            Op::Scale(a, c) => {
                add_to(grads, *a, g.mapv(|v| v * c));
            }
            Op::Square(a) => {
                let av = &self.nodes[a.0].value;
                add_to(grads, *a, 2.0 * g * av);
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                add_to(grads, *a, g.dot(&bv.t()));
                add_to(grads, *b, av.t().dot(g));
            }
            Op::Transpose(a) => {
                add_to(grads, *a, g.t().to_owned());
            }
            Op::CausalSoftmaxRows(a) => {
                let s = &self.nodes[idx].value;
                let mut da = Array2::<f64>::zeros(s.dim());
                for i in 0..s.nrows() {
                    let mut dot = 0.0;
                    for j in 0..=i {
                        dot += g[(i, j)] * s[(i, j)];
                    }
                    for j in 0..=i {
                        da[(i, j)] = (g[(i, j)] - dot) * s[(i, j)];
                    }
                }
                add_to(grads, *a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let out = &self.nodes[idx].value;
                let mut da = g.clone();
                for i in 0..out.nrows() {
                    let gsum: f64 = g.row(i).sum();
                    for j in 0..out.ncols() {
                        da[(i, j)] -= out[(i, j)].exp() * gsum;
                    }
                }
                add_to(grads, *a, da);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = &self.nodes[gamma.0].value;
                let (t, d) = xhat.dim();
                let mut dgamma = Array2::<f64>::zeros((1, d));
                let mut dbeta = Array2::<f64>::zeros((1, d));
                let mut dx = Array2::<f64>::zeros((t, d));
                for i in 0..t {
                    let mut mean_gy = 0.0;
                    let mut mean_gy_xhat = 0.0;
                    for j in 0..d {
                        let gy = g[(i, j)] * gv[(0, j)];
                        mean_gy += gy;
                        mean_gy_xhat += gy * xhat[(i, j)];
                        dgamma[(0, j)] += g[(i, j)] * xhat[(i, j)];
                        dbeta[(0, j)] += g[(i, j)];
                    }
                    mean_gy /= d as f64;
                    mean_gy_xhat /= d as f64;
                    for j in 0..d {
                        let gy = g[(i, j)] * gv[(0, j)];
                        dx[(i, j)] = inv_std[i] * (gy - mean_gy - xhat[(i, j)] * mean_gy_xhat);
                    }
                }
                add_to(grads, *x, dx);
                add_to(grads, *gamma, dgamma);
                add_to(grads, *beta, dbeta);
            }
            Op::Gelu(a) => {
                let av = &self.nodes[a.0].value;
                let mut da = g.clone();
                da.zip_mut_with(av, |gv, &x| *gv *= gelu_tanh_grad(x));
                add_to(grads, *a, da);
            }
            Op::EmbedRows { table, ids } => {
                let d = self.nodes[table.0].value.ncols();
                let vocab = self.nodes[table.0].value.nrows();
                let mut dt = Array2::<f64>::zeros((vocab, d));
                for (i, &id) in ids.iter().enumerate() {
                    let mut row = dt.row_mut(id);
                    row += &g.row(i);
                }
                add_to(grads, *table, dt);
            }
            Op::PickPerRow { a, cols } => {
                let dim = self.nodes[a.0].value.dim();
                let mut da = Array2::<f64>::zeros(dim);
                for (i, &c) in cols.iter().enumerate() {
                    da[(i, c)] += g[(i, 0)];
                }
                add_to(grads, *a, da);
            }
            Op::SliceCols { a, start, len } => {
                let dim = self.nodes[a.0].value.dim();
                let mut da = Array2::<f64>::zeros(dim);
                da.slice_mut(s![.., *start..*start + *len]).assign(g);
                add_to(grads, *a, da);
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.ncols();
                    let slice = g.slice(s![.., offset..offset + w]).to_owned();
                    add_to(grads, *p, slice);
                    offset += w;
                }
            }
            Op::SumAll(a) => {
                let dim = self.nodes[a.0].value.dim();
                add_to(grads, *a, Array2::from_elem(dim, g[(0, 0)]));
            }
            Op::MeanAll(a) => {
                let dim = self.nodes[a.0].value.dim();
                let n = (dim.0 * dim.1) as f64;
                add_to(grads, *a, Array2::from_elem(dim, g[(0, 0)] / n));
            }
            Op::SpanSumRows { a, spans } => {
                let dim = self.nodes[a.0].value.dim();
                let mut da = Array2::<f64>::zeros(dim);
                for (w, &(lo, hi)) in spans.iter().enumerate() {
                    for i in lo..hi {
                        da[(i, 0)] += g[(w, 0)];
                    }
                }
                add_to(grads, *a, da);
            }
            Op::ScatterDesign { sources, places } => {
                let mut deltas: Vec<Array2<f64>> = sources
                    .iter()
                    .map(|sv| Array2::<f64>::zeros(self.nodes[sv.0].value.dim()))
                    .collect();
                for p in places {
                    deltas[p.source][(p.index, 0)] += g[(p.row, p.col)];
                }
                for (sv, delta) in sources.iter().zip(deltas) {
                    add_to(grads, *sv, delta);
                }
            }
            Op::RidgeSolve { x, psi, chol, beta } => {
                // beta = A^{-1} X^T psi with A = X^T X + rho I.
                // s = A^{-1} dL/dbeta; dL/dX = psi s^T - X (s beta^T + beta s^T).
                let gbeta = g.column(0).to_owned();
                let s_vec = cholesky_solve(chol, &gbeta);
                let xv = &self.nodes[x.0].value;
                let (n, p) = xv.dim();
                let mut dx = Array2::<f64>::zeros((n, p));
                for i in 0..n {
                    for j in 0..p {
                        dx[(i, j)] = psi[i] * s_vec[j];
                    }
                }
                // subtract X (s beta^T + beta s^T)
                let mut m = Array2::<f64>::zeros((p, p));
                for a_i in 0..p {
                    for b_i in 0..p {
                        m[(a_i, b_i)] = s_vec[a_i] * beta[b_i] + beta[a_i] * s_vec[b_i];
                    }
                }
                dx -= &xv.dot(&m);
                add_to(grads, *x, dx);
            }
        }
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zero if the node was never
    /// reached.
    pub fn get(&self, tape: &Tape, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.value(v).dim()),
        }
    }
}

fn gelu_tanh(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_tanh_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    /// Central finite differences of a scalar-valued function of one input
    /// matrix, compared against the tape gradient entry by entry.
    fn check_grad<F>(input: Array2<f64>, eps: f64, tol: f64, build: F)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let out = build(&mut tape, x);
        assert_eq!(tape.value(out).dim(), (1, 1));
        let grads = tape.backward(out);
        let analytic = grads.get(&tape, x);

        for i in 0..input.nrows() {
            for j in 0..input.ncols() {
                let mut plus = input.clone();
                plus[(i, j)] += eps;
                let mut minus = input.clone();
                minus[(i, j)] -= eps;
                let f = |m: Array2<f64>| {
                    let mut t = Tape::new();
                    let v = t.leaf(m);
                    let o = build(&mut t, v);
                    t.scalar(o)
                };
                let numeric = (f(plus) - f(minus)) / (2.0 * eps);
                let a = analytic[(i, j)];
                let denom = numeric.abs().max(a.abs()).max(1e-6);
                assert!(
                    ((a - numeric) / denom).abs() < tol,
                    "grad mismatch at ({i},{j}): analytic {a}, numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn grad_matmul_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = randn(3, 4, &mut rng);
        check_grad(randn(2, 3, &mut rng), 1e-5, 1e-6, move |t, x| {
            let wv = t.constant(w.clone());
            let y = t.matmul(x, wv);
            let sq = t.square(y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gamma = randn(1, 5, &mut rng);
        let beta = randn(1, 5, &mut rng);
        check_grad(randn(3, 5, &mut rng), 1e-5, 1e-5, move |t, x| {
            let g = t.constant(gamma.clone());
            let b = t.constant(beta.clone());
            let y = t.layer_norm(x, g, b, 1e-5);
            let sq = t.square(y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_layer_norm_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xval = randn(4, 5, &mut rng);
        check_grad(randn(1, 5, &mut rng), 1e-5, 1e-5, move |t, gamma| {
            let x = t.constant(xval.clone());
            let b = t.constant(Array2::zeros((1, 5)));
            let y = t.layer_norm(x, gamma, b, 1e-5);
            let sq = t.square(y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_causal_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pick = randn(4, 4, &mut rng);
        check_grad(randn(4, 4, &mut rng), 1e-5, 1e-5, move |t, x| {
            let sm = t.causal_softmax_rows(x);
            let p = t.constant(pick.clone());
            let prod = t.mul(sm, p);
            t.sum_all(prod)
        });
    }

    #[test]
    fn grad_log_softmax_pick() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check_grad(randn(3, 6, &mut rng), 1e-5, 1e-6, |t, x| {
            let lp = t.log_softmax_rows(x);
            let picked = t.pick_per_row(lp, &[2, 0, 5]);
            let s = t.sum_all(picked);
            t.scale(s, -1.0)
        });
    }

    #[test]
    fn grad_gelu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        check_grad(randn(3, 3, &mut rng), 1e-5, 1e-5, |t, x| {
            let y = t.gelu(x);
            let sq = t.square(y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        check_grad(randn(5, 3, &mut rng), 1e-5, 1e-6, |t, table| {
            let rows = t.embed_rows(table, &[1, 1, 4, 0]);
            let sq = t.square(rows);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_slice_concat_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        check_grad(randn(3, 6, &mut rng), 1e-5, 1e-6, |t, x| {
            let a = t.slice_cols(x, 0, 3);
            let b = t.slice_cols(x, 3, 3);
            let bt = t.transpose(b);
            let prod = t.matmul(a, bt);
            let cat = t.concat_cols(&[prod, a]);
            let sq = t.square(cat);
            t.mean_all(sq)
        });
    }

    #[test]
    fn grad_span_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        check_grad(randn(6, 1, &mut rng), 1e-5, 1e-6, |t, x| {
            let w = t.span_sum_rows(x, &[(0, 2), (2, 3), (3, 6)]);
            let sq = t.square(w);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_ridge_solve_through_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let psi = Array1::from_iter((0..8).map(|i| (i as f64) * 0.3 - 1.0));
        let target = randn(4, 1, &mut rng);
        check_grad(randn(8, 4, &mut rng), 1e-5, 2e-5, move |t, x| {
            let beta = t.ridge_solve(x, &psi, 1e-3).unwrap();
            let tv = t.constant(target.clone());
            let diff = t.sub(beta, tv);
            let sq = t.square(diff);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_scatter_design_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = randn(4, 3, &mut rng);
        let places = vec![
            Placement {
                row: 0,
                col: 0,
                source: 0,
                index: 0,
            },
            Placement {
                row: 1,
                col: 0,
                source: 0,
                index: 1,
            },
            Placement {
                row: 2,
                col: 1,
                source: 0,
                index: 1,
            },
            Placement {
                row: 3,
                col: 2,
                source: 0,
                index: 2,
            },
        ];
        let psi = array![1.0, -0.5, 2.0, 0.25];
        check_grad(randn(3, 1, &mut rng), 1e-5, 2e-5, move |t, src| {
            let x = t.scatter_design(base.clone(), &[src], &places);
            let beta = t.ridge_solve(x, &psi, 1e-2).unwrap();
            let sq = t.square(beta);
            t.sum_all(sq)
        });
    }

    #[test]
    fn ridge_solve_matches_identity_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Array2::eye(2));
        let psi = array![1.0, 2.0];
        let beta = tape.ridge_solve(x, &psi, 0.0).unwrap();
        assert!((tape.value(beta)[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((tape.value(beta)[(1, 0)] - 2.0).abs() < 1e-14);

        let x2 = tape.constant(Array2::eye(2));
        let beta2 = tape.ridge_solve(x2, &psi, 1.0).unwrap();
        assert!((tape.value(beta2)[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((tape.value(beta2)[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn backward_accumulates_shared_nodes() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[2.0]]);
        let y = tape.mul(x, x); // x^2, both parents are the same node
        let grads = tape.backward(y);
        let gx = grads.get(&tape, x);
        assert!((gx[(0, 0)] - 4.0).abs() < 1e-12);
    }
}
