use std::cell::RefCell;
use std::rc::Rc;

use super::array::Array;

/// Backward rule: receives the gradient flowing into the op's output and
/// accumulates into the gradient buffers of its inputs.
type BackFn = Box<dyn Fn(&[f64], &mut [Vec<f64>])>;

struct OpRec {
    out: usize,
    back: BackFn,
}

struct TapeInner {
    vals: RefCell<Vec<Array>>,
    ops: RefCell<Vec<OpRec>>,
    grads: RefCell<Vec<Vec<f64>>>,
    grad_enabled: bool,
}

/// Define-by-run recording tape. Rebuilt per forward pass; single-threaded.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(TapeInner {
                vals: RefCell::new(Vec::new()),
                ops: RefCell::new(Vec::new()),
                grads: RefCell::new(Vec::new()),
                grad_enabled: true,
            }),
        }
    }

    /// Evaluation-only tape: values are computed, no backward rules recorded.
    pub fn no_grad() -> Self {
        Tape {
            inner: Rc::new(TapeInner {
                vals: RefCell::new(Vec::new()),
                ops: RefCell::new(Vec::new()),
                grads: RefCell::new(Vec::new()),
                grad_enabled: false,
            }),
        }
    }

    pub fn leaf(&self, arr: Array) -> Tensor {
        let shape = arr.shape.clone();
        let id = {
            let mut vals = self.inner.vals.borrow_mut();
            vals.push(arr);
            vals.len() - 1
        };
        Tensor {
            tape: self.clone(),
            id,
            shape,
        }
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.leaf(Array::scalar(v))
    }

    pub(crate) fn push_op<F>(&self, out: Array, mk_back: F) -> Tensor
    where
        F: FnOnce() -> BackFn,
    {
        let shape = out.shape.clone();
        let id = {
            let mut vals = self.inner.vals.borrow_mut();
            vals.push(out);
            vals.len() - 1
        };
        if self.inner.grad_enabled {
            self.inner.ops.borrow_mut().push(OpRec {
                out: id,
                back: mk_back(),
            });
        }
        Tensor {
            tape: self.clone(),
            id,
            shape,
        }
    }

    fn val(&self, id: usize) -> Array {
        self.inner.vals.borrow()[id].clone()
    }

    /// Reverse sweep from a scalar loss. Populates gradients for every node;
    /// leaves not reachable from the loss end up with zero gradient.
    pub fn backward(&self, loss: &Tensor) {
        assert!(
            loss.numel() == 1,
            "backward requires a scalar loss, got shape {:?}",
            loss.shape
        );
        assert!(
            Rc::ptr_eq(&self.inner, &loss.tape.inner),
            "loss belongs to a different tape"
        );
        let vals = self.inner.vals.borrow();
        let mut grads: Vec<Vec<f64>> = vals.iter().map(|a| vec![0.0; a.numel()]).collect();
        drop(vals);
        grads[loss.id][0] = 1.0;
        let ops = self.inner.ops.borrow();
        for op in ops.iter().rev() {
            let go = std::mem::take(&mut grads[op.out]);
            (op.back)(&go, &mut grads);
            grads[op.out] = go;
        }
        *self.inner.grads.borrow_mut() = grads;
    }
}

/// Handle to one value on a tape.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
    pub shape: Vec<usize>,
}

fn same_tape(a: &Tensor, b: &Tensor) {
    assert!(
        Rc::ptr_eq(&a.tape.inner, &b.tape.inner),
        "tensors belong to different tapes"
    );
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn value(&self) -> Array {
        self.tape.val(self.id)
    }

    pub fn data(&self) -> Vec<f64> {
        self.tape.inner.vals.borrow()[self.id].data.clone()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar {:?}", self.shape);
        self.tape.inner.vals.borrow()[self.id].data[0]
    }

    /// Gradient computed by the last `backward` call, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.grads.borrow().get(self.id).cloned()
    }

    fn rows2d(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("expected 1-D or 2-D tensor, got shape {:?}", self.shape),
        }
    }

    // ---- elementwise ----

    pub fn add(&self, other: &Tensor) -> Tensor {
        same_tape(self, other);
        assert_eq!(
            self.shape, other.shape,
            "add shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
        let a = self.value();
        let b = other.value();
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
        let out = Array::new(self.shape.clone(), data);
        let (ia, ib) = (self.id, other.id);
        self.tape.push_op(out, move || {
            Box::new(move |go, grads| {
                for (g, d) in grads[ia].iter_mut().zip(go) {
                    *g += d;
                }
                for (g, d) in grads[ib].iter_mut().zip(go) {
                    *g += d;
                }
            })
        })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        same_tape(self, other);
        assert_eq!(
            self.shape, other.shape,
            "mul shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
        let a = self.value();
        let b = other.value();
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
        let out = Array::new(self.shape.clone(), data);
        let (ia, ib) = (self.id, other.id);
        self.tape.push_op(out, move || {
            let (av, bv) = (a.data, b.data);
            Box::new(move |go, grads| {
                for i in 0..go.len() {
                    grads[ia][i] += go[i] * bv[i];
                    grads[ib][i] += go[i] * av[i];
                }
            })
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let a = self.value();
        let data = a.data.iter().map(|x| x * c).collect();
        let out = Array::new(self.shape.clone(), data);
        let ia = self.id;
        self.tape.push_op(out, move || {
            Box::new(move |go, grads| {
                for (g, d) in grads[ia].iter_mut().zip(go) {
                    *g += c * d;
                }
            })
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let a = self.value();
        let data = a.data.iter().map(|x| x + c).collect();
        let out = Array::new(self.shape.clone(), data);
        let ia = self.id;
        self.tape.push_op(out, move || {
            Box::new(move |go, grads| {
                for (g, d) in grads[ia].iter_mut().zip(go) {
                    *g += d;
                }
            })
        })
    }

    /// Exact erf-based GELU.
    pub fn gelu(&self) -> Tensor {
        const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
        const INV_SQRT_2PI: f64 = 0.3989422804014327;
        let a = self.value();
        let data = a
            .data
            .iter()
            .map(|&x| 0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2)))
            .collect();
        let out = Array::new(self.shape.clone(), data);
        let ia = self.id;
        self.tape.push_op(out, move || {
            let xv = a.data;
            Box::new(move |go, grads| {
                for i in 0..go.len() {
                    let x = xv[i];
                    let d = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2))
                        + x * INV_SQRT_2PI * (-0.5 * x * x).exp();
                    grads[ia][i] += go[i] * d;
                }
            })
        })
    }

    /// Elementwise power with a constant exponent.
    pub fn powf(&self, p: f64) -> Tensor {
        let a = self.value();
        if p.fract() != 0.0 {
            if let Some(x) = a.data.iter().find(|&&x| x < 0.0) {
                panic!("domain error: power of negative base {x} with fractional exponent {p}");
            }
        }
        let data = a.data.iter().map(|x| x.powf(p)).collect();
        let out = Array::new(self.shape.clone(), data);
        let ia = self.id;
        self.tape.push_op(out, move || {
            let xv = a.data;
            Box::new(move |go, grads| {
                for i in 0..go.len() {
                    grads[ia][i] += go[i] * p * xv[i].powf(p - 1.0);
                }
            })
        })
    }

    /// Elementwise `x^p` where `p` is a learnable scalar tensor. Requires x > 0.
    pub fn pow_t(&self, p: &Tensor) -> Tensor {
        same_tape(self, p);
        assert_eq!(p.numel(), 1, "pow_t exponent must be scalar");
        let a = self.value();
        assert!(
            a.data.iter().all(|&x| x > 0.0),
            "pow_t requires strictly positive base"
        );
        let pv = p.item();
        let data: Vec<f64> = a.data.iter().map(|x| x.powf(pv)).collect();
        let out = Array::new(self.shape.clone(), data.clone());
        let (ia, ip) = (self.id, p.id);
        self.tape.push_op(out, move || {
            let (xv, yv) = (a.data, data);
            Box::new(move |go, grads| {
                let mut dp = 0.0;
                for i in 0..go.len() {
                    grads[ia][i] += go[i] * pv * xv[i].powf(pv - 1.0);
                    dp += go[i] * yv[i] * xv[i].ln();
                }
                grads[ip][0] += dp;
            })
        })
    }

    pub fn recip(&self) -> Tensor {
        let a = self.value();
        let data: Vec<f64> = a.data.iter().map(|x| 1.0 / x).collect();
        let out = Array::new(self.shape.clone(), data);
        let ia = self.id;
        self.tape.push_op(out, move || {
            let xv = a.data;
            Box::new(move |go, grads| {
                for i in 0..go.len() {
                    grads[ia][i] -= go[i] / (xv[i] * xv[i]);
                }
            })
        })
    }

    /// Elementwise max(x, c). Gradient passes only where x > c.
    pub fn clamp_min(&self, c: f64) -> Tensor {
        let a = self.value();
        let data = a.data.iter().map(|x| x.max(c)).collect();
        let out = Array::new(self.shape.clone(), data);
        let ia = self.id;
        self.tape.push_op(out, move || {
            let xv = a.data;
            Box::new(move |go, grads| {
                for i in 0..go.len() {
                    if xv[i] > c {
                        grads[ia][i] += go[i];
                    }
                }
            })
        })
    }

    // ---- matrix ops ----

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        same_tape(self, other);
        let a = self.value();
        let b = other.value();
        assert!(
            a.shape.len() == 2 && b.shape.len() == 2 && a.shape[1] == b.shape[0],
            "matmul dimension mismatch: {:?} x {:?}",
            a.shape,
            b.shape
        );
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut c = vec![0.0; m * n];
        mat_mul_into(&a.data, &b.data, &mut c, m, k, n);
        let out = Array::new(vec![m, n], c);
        let (ia, ib) = (self.id, other.id);
        self.tape.push_op(out, move || {
            let (av, bv) = (a.data, b.data);
            Box::new(move |go, grads| {
                // dA += dC . B^T
                {
                    let ga = &mut grads[ia];
                    for i in 0..m {
                        for j in 0..n {
                            let g = go[i * n + j];
                            if g != 0.0 {
                                for l in 0..k {
                                    ga[i * k + l] += g * bv[l * n + j];
                                }
                            }
                        }
                    }
                }
                // dB += A^T . dC
                {
                    let gb = &mut grads[ib];
                    for i in 0..m {
                        for l in 0..k {
                            let av_il = av[i * k + l];
                            if av_il != 0.0 {
                                for j in 0..n {
                                    gb[l * n + j] += av_il * go[i * n + j];
                                }
                            }
                        }
                    }
                }
            })
        })
    }

    /// C = A . B^T for A: m x k, B: n x k.
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        same_tape(self, other);
        let a = self.value();
        let b = other.value();
        assert!(
            a.shape.len() == 2 && b.shape.len() == 2 && a.shape[1] == b.shape[1],
            "matmul_nt dimension mismatch: {:?} x {:?}^T",
            a.shape,
            b.shape
        );
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[0]);
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += a.data[i * k + l] * b.data[j * k + l];
                }
                c[i * n + j] = s;
            }
        }
        let out = Array::new(vec![m, n], c);
        let (ia, ib) = (self.id, other.id);
        self.tape.push_op(out, move || {
            let (av, bv) = (a.data, b.data);
            Box::new(move |go, grads| {
                // dA += dC . B ; dB += dC^T . A
                for i in 0..m {
                    for j in 0..n {
                        let g = go[i * n + j];
                        if g != 0.0 {
                            for l in 0..k {
                                grads[ia][i * k + l] += g * bv[j * k + l];
                                grads[ib][j * k + l] += g * av[i * k + l];
                            }
                        }
                    }
                }
            })
        })
    }

    /// Add a length-n vector to every row of an m x n matrix.
    pub fn add_rowvec(&self, v: &Tensor) -> Tensor {
        same_tape(self, v);
        let a = self.value();
        let b = v.value();
        let (m, n) = self.rows2d();
        assert_eq!(
            b.numel(),
            n,
            "add_rowvec length mismatch: {:?} + {:?}",
            a.shape,
            b.shape
        );
        let mut data = a.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += b.data[j];
            }
        }
        let out = Array::new(self.shape.clone(), data);
        let (ia, ib) = (self.id, v.id);
        self.tape.push_op(out, move || {
            Box::new(move |go, grads| {
                for i in 0..m {
                    for j in 0..n {
                        grads[ia][i * n + j] += go[i * n + j];
                        grads[ib][j] += go[i * n + j];
                    }
                }
            })
        })
    }

    pub fn transpose(&self) -> Tensor {
        let a = self.value();
        let (m, n) = (a.shape[0], a.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = a.data[i * n + j];
            }
        }
        let out = Array::new(vec![n, m], data);
        let ia = self.id;
        self.tape.push_op(out, move || {
            Box::new(move |go, grads| {
                for i in 0..m {
                    for j in 0..n {
                        grads[ia][i * n + j] += go[j * m + i];
                    }
                }
            })
        })
    }

    // ---- reductions / normalization ----

    pub fn sum_all(&self) -> Tensor {
        let a = self.value();
        let s: f64 = a.data.iter().sum();
        let ia = self.id;
        self.tape.push_op(Array::scalar(s), move || {
            Box::new(move |go, grads| {
                for g in grads[ia].iter_mut() {
                    *g += go[0];
                }
            })
        })
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Column means of a matrix: m x n -> n.
    pub fn mean_axis0(&self) -> Tensor {
        let a = self.value();
        let (m, n) = (a.rows(), a.cols());
        let mut data = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                data[j] += a.data[i * n + j];
            }
        }
        for d in data.iter_mut() {
            *d /= m as f64;
        }
        let out = Array::new(vec![n], data);
        let ia = self.id;
        self.tape.push_op(out, move || {
            Box::new(move |go, grads| {
                let inv = 1.0 / m as f64;
                for i in 0..m {
                    for j in 0..n {
                        grads[ia][i * n + j] += go[j] * inv;
                    }
                }
            })
        })
    }

    /// Softmax along the last axis (rows of a matrix, or a single vector).
    /// Max-subtracted for stability.
    pub fn softmax_rows(&self) -> Tensor {
        let a = self.value();
        let (m, n) = self.rows2d();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &a.data[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                data[i * n + j] = e;
                s += e;
            }
            for j in 0..n {
                data[i * n + j] /= s;
            }
        }
        let out = Array::new(self.shape.clone(), data.clone());
        let ia = self.id;
        self.tape.push_op(out, move || {
            let y = data;
            Box::new(move |go, grads| {
                for i in 0..m {
                    let mut dot = 0.0;
                    for j in 0..n {
                        dot += go[i * n + j] * y[i * n + j];
                    }
                    for j in 0..n {
                        grads[ia][i * n + j] += y[i * n + j] * (go[i * n + j] - dot);
                    }
                }
            })
        })
    }

    /// Row-wise log(sum(exp(x))) with the max-subtraction trick: m x n -> m.
    pub fn logsumexp_rows(&self) -> Tensor {
        let a = self.value();
        let (m, n) = (a.rows(), a.cols());
        let mut out = vec![0.0; m];
        let mut soft = vec![0.0; m * n];
        for i in 0..m {
            let row = &a.data[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                soft[i * n + j] = e;
                s += e;
            }
            for j in 0..n {
                soft[i * n + j] /= s;
            }
            out[i] = mx + s.ln();
        }
        let ia = self.id;
        self.tape.push_op(Array::new(vec![m], out), move || {
            Box::new(move |go, grads| {
                for i in 0..m {
                    for j in 0..n {
                        grads[ia][i * n + j] += go[i] * soft[i * n + j];
                    }
                }
            })
        })
    }

    /// Per-row standardization followed by a shared affine map.
    pub fn layernorm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Tensor {
        same_tape(self, gain);
        same_tape(self, bias);
        assert!(eps > 0.0, "layernorm eps must be positive");
        let a = self.value();
        let g = gain.value();
        let b = bias.value();
        let (m, n) = self.rows2d();
        assert_eq!(g.numel(), n, "layernorm gain length {} != {}", g.numel(), n);
        assert_eq!(b.numel(), n, "layernorm bias length {} != {}", b.numel(), n);
        let mut data = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &a.data[i * n..(i + 1) * n];
            let mu: f64 = row.iter().sum::<f64>() / n as f64;
            let var: f64 = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let xh = (row[j] - mu) * is;
                xhat[i * n + j] = xh;
                data[i * n + j] = g.data[j] * xh + b.data[j];
            }
        }
        let out = Array::new(self.shape.clone(), data);
        let (ia, ig, ib) = (self.id, gain.id, bias.id);
        self.tape.push_op(out, move || {
            let gv = g.data;
            Box::new(move |go, grads| {
                for i in 0..m {
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..n {
                        let dxh = go[i * n + j] * gv[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[i * n + j];
                    }
                    mean_dxhat /= n as f64;
                    mean_dxhat_xhat /= n as f64;
                    for j in 0..n {
                        let dxh = go[i * n + j] * gv[j];
                        grads[ia][i * n + j] += (dxh
                            - mean_dxhat
                            - xhat[i * n + j] * mean_dxhat_xhat)
                            * inv_std[i];
                        grads[ig][j] += go[i * n + j] * xhat[i * n + j];
                        grads[ib][j] += go[i * n + j];
                    }
                }
            })
        })
    }

    // ---- indexing / reshaping ----

    pub fn reshape(&self, shape: Vec<usize>) -> Tensor {
        let a = self.value();
        assert_eq!(
            shape.iter().product::<usize>(),
            a.numel(),
            "reshape {:?} -> {:?} changes element count",
            a.shape,
            shape
        );
        let out = Array::new(shape, a.data);
        let ia = self.id;
        self.tape.push_op(out, move || {
            Box::new(move |go, grads| {
                for (g, d) in grads[ia].iter_mut().zip(go) {
                    *g += d;
                }
            })
        })
    }

    /// Extract one matrix row as a vector.
    pub fn row(&self, i: usize) -> Tensor {
        let a = self.value();
        let (m, n) = (a.rows(), a.cols());
        assert!(i < m, "row {i} out of range for {m} rows");
        let data = a.data[i * n..(i + 1) * n].to_vec();
        let ia = self.id;
        self.tape.push_op(Array::new(vec![n], data), move || {
            Box::new(move |go, grads| {
                for j in 0..n {
                    grads[ia][i * n + j] += go[j];
                }
            })
        })
    }

    /// Submatrix of rows [from, to).
    pub fn rows_range(&self, from: usize, to: usize) -> Tensor {
        let a = self.value();
        let (m, n) = (a.rows(), a.cols());
        assert!(from <= to && to <= m, "rows_range {from}..{to} out of {m}");
        let data = a.data[from * n..to * n].to_vec();
        let ia = self.id;
        self.tape
            .push_op(Array::new(vec![to - from, n], data), move || {
                Box::new(move |go, grads| {
                    for (k, d) in go.iter().enumerate() {
                        grads[ia][from * n + k] += d;
                    }
                })
            })
    }

    /// Submatrix of columns [from, to).
    pub fn slice_cols(&self, from: usize, to: usize) -> Tensor {
        let a = self.value();
        let (m, n) = (a.rows(), a.cols());
        assert!(from <= to && to <= n, "slice_cols {from}..{to} out of {n}");
        let w = to - from;
        let mut data = vec![0.0; m * w];
        for i in 0..m {
            data[i * w..(i + 1) * w].copy_from_slice(&a.data[i * n + from..i * n + to]);
        }
        let ia = self.id;
        self.tape.push_op(Array::new(vec![m, w], data), move || {
            Box::new(move |go, grads| {
                for i in 0..m {
                    for j in 0..w {
                        grads[ia][i * n + from + j] += go[i * w + j];
                    }
                }
            })
        })
    }

    /// Pick matrix[i, labels[i]] for each row: m x n -> m.
    pub fn gather_rows(&self, labels: &[usize]) -> Tensor {
        let a = self.value();
        let (m, n) = (a.rows(), a.cols());
        assert_eq!(labels.len(), m, "gather_rows needs one label per row");
        for (i, &l) in labels.iter().enumerate() {
            assert!(l < n, "label {l} at row {i} out of range for {n} classes");
        }
        let data: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| a.data[i * n + l])
            .collect();
        let ia = self.id;
        let labels = labels.to_vec();
        self.tape.push_op(Array::new(vec![m], data), move || {
            Box::new(move |go, grads| {
                for (i, &l) in labels.iter().enumerate() {
                    grads[ia][i * n + l] += go[i];
                }
            })
        })
    }
}

/// Concatenate vectors into one vector.
pub fn concat1d(parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat1d of zero tensors");
    let tape = parts[0].tape.clone();
    let mut data = Vec::new();
    let mut offsets = Vec::new();
    for p in parts {
        same_tape(&parts[0], p);
        assert_eq!(p.shape.len(), 1, "concat1d expects vectors");
        offsets.push((p.id, data.len(), p.numel()));
        data.extend(p.data());
    }
    let total = data.len();
    tape.push_op(Array::new(vec![total], data), move || {
        Box::new(move |go, grads| {
            for &(id, off, len) in &offsets {
                for k in 0..len {
                    grads[id][k] += go[off + k];
                }
            }
        })
    })
}

/// Stack matrices (or vectors treated as single rows) along axis 0.
pub fn concat_rows(parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_rows of zero tensors");
    let tape = parts[0].tape.clone();
    let n = *parts[0].shape.last().unwrap();
    let mut data = Vec::new();
    let mut offsets = Vec::new();
    for p in parts {
        same_tape(&parts[0], p);
        assert_eq!(
            *p.shape.last().unwrap(),
            n,
            "concat_rows width mismatch: {:?}",
            p.shape
        );
        offsets.push((p.id, data.len(), p.numel()));
        data.extend(p.data());
    }
    let m = data.len() / n;
    tape.push_op(Array::new(vec![m, n], data), move || {
        Box::new(move |go, grads| {
            for &(id, off, len) in &offsets {
                for k in 0..len {
                    grads[id][k] += go[off + k];
                }
            }
        })
    })
}

/// Concatenate matrices along axis 1.
pub fn concat_cols(parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_cols of zero tensors");
    let tape = parts[0].tape.clone();
    let m = parts[0].shape[0];
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            same_tape(&parts[0], p);
            assert_eq!(p.shape[0], m, "concat_cols height mismatch: {:?}", p.shape);
            p.shape[1]
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut data = vec![0.0; m * total];
    let mut col = 0;
    let mut ids = Vec::new();
    for (p, &w) in parts.iter().zip(&widths) {
        let pv = p.data();
        for i in 0..m {
            data[i * total + col..i * total + col + w].copy_from_slice(&pv[i * w..(i + 1) * w]);
        }
        ids.push((p.id, col, w));
        col += w;
    }
    tape.push_op(Array::new(vec![m, total], data), move || {
        Box::new(move |go, grads| {
            for &(id, off, w) in &ids {
                for i in 0..m {
                    for j in 0..w {
                        grads[id][i * w + j] += go[i * total + off + j];
                    }
                }
            }
        })
    })
}

pub(crate) fn mat_mul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    // ikj order keeps the inner loop contiguous over b and c
    for i in 0..m {
        for l in 0..k {
            let a_il = a[i * k + l];
            if a_il != 0.0 {
                let brow = &b[l * n..(l + 1) * n];
                let crow = &mut c[i * n..(i + 1) * n];
                for j in 0..n {
                    crow[j] += a_il * brow[j];
                }
            }
        }
    }
}
