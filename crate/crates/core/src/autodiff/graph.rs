//! Tape of recorded operations and the reverse sweep over it.

use super::real::{gemm, Real};
use super::tensor::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv1d { x: Var, w: Var, dilation: usize },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ConcatRow(Var, Var),
    SliceCols { x: Var, start: usize },
    LayerNorm { x: Var, gain: Var, bias: Var },
    OverlapAdd { x: Var, hop: usize },
    NegSiSdr { est: Var },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    tracked: bool,
    /// Values saved for the backward pass (normalization statistics,
    /// loss references).
    aux: Vec<T>,
}

/// Relative stabilizer of the SI-SDR ratio. Scaled by the estimate energy
/// so the metric stays exactly scale invariant.
pub const SI_SDR_EPS: f64 = 1e-8;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Recording tape for reverse-mode differentiation.
///
/// Values are computed eagerly as operations are recorded. A graph is
/// single-use: [`Graph::backward`] consumes the tape.
#[derive(Debug)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    num_params: usize,
    record: bool,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// A graph that records operations for differentiation.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            num_params: 0,
            record: true,
            consumed: false,
        }
    }

    /// A graph for inference only; nothing is tracked.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked: tracked && self.record,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(format!("{what}: expected a matrix, got shape {s:?}"))),
        }
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape(format!(
                "input shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        Ok(self.push(shape, values, Op::Input, false))
    }

    pub fn input_f32(&mut self, shape: Vec<usize>, values: &[f32]) -> Result<Var> {
        let vals = values.iter().map(|&v| T::from_f64(v as f64)).collect();
        self.input(shape, vals)
    }

    /// Bind every tensor of `store` as a leaf, in store order. Tensors with
    /// `requires_grad` are tracked.
    pub fn bind(&mut self, store: &ParamStore) -> Vec<Var> {
        let base = self.num_params;
        let vars = store
            .iter()
            .enumerate()
            .map(|(i, (_, t))| {
                let vals = t.values().iter().map(|&v| T::from_f64(v as f64)).collect();
                self.push(
                    t.shape().to_vec(),
                    vals,
                    Op::Param(base + i),
                    t.requires_grad(),
                )
            })
            .collect();
        self.num_params += store.len();
        vars
    }

    /// Bind raw values as a tracked parameter leaf (used by gradient checks).
    pub fn param(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape("param shape/value mismatch"));
        }
        let idx = self.num_params;
        self.num_params += 1;
        Ok(self.push(shape, values, Op::Param(idx), true))
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul [{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), t))
    }

    /// Add a length-`n` bias to every row of an `[m,n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_bias")?;
        if self.value(bias).len() != n {
            return Err(Error::shape(format!(
                "bias of {} for {n} columns",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            row.iter_mut().zip(b).for_each(|(o, &bb)| *o = *o + bb);
        }
        let t = self.tracked(x) || self.tracked(bias);
        Ok(self.push(vec![m, n], out, Op::AddBias(x, bias), t))
    }

    /// Non-causal dilated 1-D convolution along rows with zero padding that
    /// keeps the frame count.
    ///
    /// `x` is `[T, C_in]`, `w` is `[K, C_in, C_out]` with `K` odd; output is
    /// `[T, C_out]` with `out[t] = sum_j x[t + (j - (K-1)/2) * dilation] W_j`.
    pub fn conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let (frames, cin) = self.dims2(x, "conv1d input")?;
        let (kernel, wcin, cout) = match self.shape(w) {
            [k, ci, co] => (*k, *ci, *co),
            s => return Err(Error::shape(format!("conv1d weight shape {s:?}"))),
        };
        if wcin != cin || kernel % 2 == 0 || dilation == 0 {
            return Err(Error::shape(format!(
                "conv1d: input channels {cin}, weight {kernel}x{wcin}x{cout}, dilation {dilation}"
            )));
        }
        let mut out = vec![T::zero(); frames * cout];
        let xv = self.value(x);
        let wv = self.value(w);
        for j in 0..kernel {
            let Some((xs, ts, rows)) = tap_rows(frames, kernel, j, dilation) else {
                continue;
            };
            gemm(
                rows,
                cin,
                cout,
                &xv[xs * cin..],
                false,
                &wv[j * cin * cout..(j + 1) * cin * cout],
                false,
                &mut out[ts * cout..],
                true,
            );
        }
        let t = self.tracked(x) || self.tracked(w);
        Ok(self.push(vec![frames, cout], out, Op::Conv1d { x, w, dilation }, t))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let t = self.tracked(x);
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), t)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| T::one() / (T::one() + (-v).exp()))
            .collect();
        let t = self.tracked(x);
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x), t)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), t))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let t = self.tracked(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, c), t)
    }

    /// Append the same row vector to every row of `x`: `[T,E] ++ [R] -> [T,E+R]`.
    pub fn concat_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (frames, e) = self.dims2(x, "concat_row")?;
        let r = self.value(row).len();
        let mut out = Vec::with_capacity(frames * (e + r));
        let xv = self.value(x);
        let rv = self.value(row);
        for t in 0..frames {
            out.extend_from_slice(&xv[t * e..(t + 1) * e]);
            out.extend_from_slice(rv);
        }
        let t = self.tracked(x) || self.tracked(row);
        Ok(self.push(vec![frames, e + r], out, Op::ConcatRow(x, row), t))
    }

    /// Columns `[start, start+width)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (frames, c) = self.dims2(x, "slice_cols")?;
        if start + width > c {
            return Err(Error::shape(format!(
                "slice [{start}, {}) of {c} columns",
                start + width
            )));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(frames * width);
        for t in 0..frames {
            out.extend_from_slice(&xv[t * c + start..t * c + start + width]);
        }
        let tr = self.tracked(x);
        Ok(self.push(vec![frames, width], out, Op::SliceCols { x, start }, tr))
    }

    /// Per-row normalization over channels with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (frames, c) = self.dims2(x, "layer_norm")?;
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::shape("layer_norm gain/bias width"));
        }
        let xv = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut out = Vec::with_capacity(frames * c);
        let mut aux = Vec::with_capacity(frames * 2);
        for row in xv.chunks_exact(c) {
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / c as f64;
            let var = row
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / c as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for ((v, gg), bb) in row.iter().zip(g).zip(b) {
                let xhat = (v.as_f64() - mean) * rstd;
                out.push(T::from_f64(xhat * gg.as_f64() + bb.as_f64()));
            }
            aux.push(T::from_f64(mean));
            aux.push(T::from_f64(rstd));
        }
        let t = self.tracked(x) || self.tracked(gain) || self.tracked(bias);
        let v = self.push(vec![frames, c], out, Op::LayerNorm { x, gain, bias }, t);
        self.nodes[v.0].aux = aux;
        Ok(v)
    }

    /// Sum rows of `[T, L]` into a signal at stride `hop`, truncated to
    /// `out_len` samples.
    pub fn overlap_add(&mut self, x: Var, hop: usize, out_len: usize) -> Result<Var> {
        let (frames, l) = self.dims2(x, "overlap_add")?;
        if hop == 0 || hop > l {
            return Err(Error::invalid(format!("overlap_add hop {hop} for L={l}")));
        }
        let xv = self.value(x);
        let mut out = vec![T::zero(); out_len];
        for k in 0..frames {
            let start = k * hop;
            if start >= out_len {
                break;
            }
            let end = (start + l).min(out_len);
            for (o, &v) in out[start..end].iter_mut().zip(&xv[k * l..]) {
                *o = *o + v;
            }
        }
        let t = self.tracked(x);
        Ok(self.push(vec![out_len], out, Op::OverlapAdd { x, hop }, t))
    }

    /// Negative scale-invariant SDR of `est` against a constant reference, in
    /// dB. The reference must have nonzero energy.
    pub fn neg_si_sdr(&mut self, est: Var, reference: &[T]) -> Result<Var> {
        let ev = self.value(est);
        if ev.len() != reference.len() {
            return Err(Error::shape(format!(
                "si-sdr of {} samples against {}",
                ev.len(),
                reference.len()
            )));
        }
        let parts = SiSdrParts::compute(ev, reference)?;
        let v = -parts.si_sdr();
        let t = self.tracked(est);
        let node = self.push(vec![1], vec![T::from_f64(v)], Op::NegSiSdr { est }, t);
        self.nodes[node.0].aux = reference.to_vec();
        Ok(node)
    }

    /// Sum of all elements (64-bit accumulation).
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().map(|v| v.as_f64()).sum();
        let t = self.tracked(x);
        self.push(vec![1], vec![T::from_f64(s)], Op::Sum(x), t)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn scalar(&self, v: Var) -> Option<f64> {
        match self.value(v) {
            [x] => Some(x.as_f64()),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every bound
    /// parameter, in binding order, and frees the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let raw = self.backward_values(loss)?;
        Ok(Gradients {
            per_param: raw
                .into_iter()
                .map(|g| g.map(|g| g.iter().map(|v| v.as_f64() as f32).collect()))
                .collect(),
        })
    }

    /// Like [`Graph::backward`] but keeps gradients in the graph's element
    /// type.
    pub fn backward_values(&mut self, loss: Var) -> Result<Vec<Option<Vec<T>>>> {
        if self.consumed {
            return Err(Error::Graph(
                "backward called twice; record the graph again".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.consumed = true;
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut per_param: Vec<Option<Vec<T>>> = vec![None; self.num_params];

        for i in (0..n).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            self.backprop_node(i, &gout, &mut grads, &mut per_param);
        }
        self.nodes.clear();
        Ok(per_param)
    }

    fn backprop_node(
        &self,
        i: usize,
        gout: &[T],
        grads: &mut [Option<Vec<T>>],
        per_param: &mut [Option<Vec<T>>],
    ) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input => {}
            Op::Param(p) => {
                per_param[*p] = Some(gout.to_vec());
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let nn = self.shape(*b)[1];
                if self.tracked(*a) {
                    let ga = grad_buf(grads, *a, m * k);
                    gemm(m, nn, k, gout, false, self.value(*b), true, ga, true);
                }
                if self.tracked(*b) {
                    let gb = grad_buf(grads, *b, k * nn);
                    gemm(k, m, nn, self.value(*a), true, gout, false, gb, true);
                }
            }
            Op::AddBias(x, bias) => {
                let n = self.value(*bias).len();
                if self.tracked(*x) {
                    add_into(grad_buf(grads, *x, gout.len()), gout);
                }
                if self.tracked(*bias) {
                    let mut acc = vec![0.0f64; n];
                    for row in gout.chunks_exact(n) {
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v.as_f64());
                    }
                    let gb = grad_buf(grads, *bias, n);
                    gb.iter_mut()
                        .zip(&acc)
                        .for_each(|(g, &a)| *g = *g + T::from_f64(a));
                }
            }
            Op::Conv1d { x, w, dilation } => {
                let (frames, cin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (kernel, cout) = (self.shape(*w)[0], self.shape(*w)[2]);
                let track_x = self.tracked(*x);
                let track_w = self.tracked(*w);
                for j in 0..kernel {
                    let Some((xs, ts, rows)) = tap_rows(frames, kernel, j, *dilation) else {
                        continue;
                    };
                    let wj = j * cin * cout..(j + 1) * cin * cout;
                    if track_x {
                        let gx = grad_buf(grads, *x, frames * cin);
                        gemm(
                            rows,
                            cout,
                            cin,
                            &gout[ts * cout..],
                            false,
                            &self.value(*w)[wj.clone()],
                            true,
                            &mut gx[xs * cin..],
                            true,
                        );
                    }
                    if track_w {
                        let gw = grad_buf(grads, *w, kernel * cin * cout);
                        gemm(
                            cin,
                            rows,
                            cout,
                            &self.value(*x)[xs * cin..],
                            true,
                            &gout[ts * cout..],
                            false,
                            &mut gw[wj],
                            true,
                        );
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = grad_buf(grads, *x, xv.len());
                for ((g, &v), &go) in gx.iter_mut().zip(xv).zip(gout) {
                    if v > T::zero() {
                        *g = *g + go;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let gx = grad_buf(grads, *x, y.len());
                for ((g, &yy), &go) in gx.iter_mut().zip(y).zip(gout) {
                    *g = *g + go * yy * (T::one() - yy);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.tracked(v) {
                        add_into(grad_buf(grads, v, gout.len()), gout);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    let bv = self.value(*b);
                    let ga = grad_buf(grads, *a, gout.len());
                    for ((g, &go), &y) in ga.iter_mut().zip(gout).zip(bv) {
                        *g = *g + go * y;
                    }
                }
                if self.tracked(*b) {
                    let av = self.value(*a);
                    let gb = grad_buf(grads, *b, gout.len());
                    for ((g, &go), &x) in gb.iter_mut().zip(gout).zip(av) {
                        *g = *g + go * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = grad_buf(grads, *x, gout.len());
                for (g, &go) in gx.iter_mut().zip(gout) {
                    *g = *g + go * *c;
                }
            }
            Op::ConcatRow(x, row) => {
                let (frames, e) = (self.shape(*x)[0], self.shape(*x)[1]);
                let r = self.value(*row).len();
                if self.tracked(*x) {
                    let gx = grad_buf(grads, *x, frames * e);
                    for t in 0..frames {
                        add_into(
                            &mut gx[t * e..(t + 1) * e],
                            &gout[t * (e + r)..t * (e + r) + e],
                        );
                    }
                }
                if self.tracked(*row) {
                    let mut acc = vec![0.0f64; r];
                    for t in 0..frames {
                        let src = &gout[t * (e + r) + e..(t + 1) * (e + r)];
                        acc.iter_mut().zip(src).for_each(|(a, v)| *a += v.as_f64());
                    }
                    let gr = grad_buf(grads, *row, r);
                    gr.iter_mut()
                        .zip(&acc)
                        .for_each(|(g, &a)| *g = *g + T::from_f64(a));
                }
            }
            Op::SliceCols { x, start } => {
                let (frames, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let width = node.shape[1];
                let gx = grad_buf(grads, *x, frames * c);
                for t in 0..frames {
                    add_into(
                        &mut gx[t * c + start..t * c + start + width],
                        &gout[t * width..(t + 1) * width],
                    );
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let (frames, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let xv = self.value(*x);
                let g = self.value(*gain);
                let mut dgain = vec![0.0f64; c];
                let mut dbias = vec![0.0f64; c];
                let mut dx = vec![0.0f64; frames * c];
                let mut xhat = vec![0.0f64; c];
                let mut dxhat = vec![0.0f64; c];
                for t in 0..frames {
                    let mean = node.aux[2 * t].as_f64();
                    let rstd = node.aux[2 * t + 1].as_f64();
                    let row = &xv[t * c..(t + 1) * c];
                    let go = &gout[t * c..(t + 1) * c];
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for ch in 0..c {
                        xhat[ch] = (row[ch].as_f64() - mean) * rstd;
                        let gch = go[ch].as_f64();
                        dgain[ch] += gch * xhat[ch];
                        dbias[ch] += gch;
                        dxhat[ch] = gch * g[ch].as_f64();
                        m1 += dxhat[ch];
                        m2 += dxhat[ch] * xhat[ch];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for ch in 0..c {
                        dx[t * c + ch] = rstd * (dxhat[ch] - m1 - xhat[ch] * m2);
                    }
                }
                if self.tracked(*x) {
                    add_f64_into(grad_buf(grads, *x, frames * c), &dx);
                }
                if self.tracked(*gain) {
                    add_f64_into(grad_buf(grads, *gain, c), &dgain);
                }
                if self.tracked(*bias) {
                    add_f64_into(grad_buf(grads, *bias, c), &dbias);
                }
            }
            Op::OverlapAdd { x, hop } => {
                let (frames, l) = (self.shape(*x)[0], self.shape(*x)[1]);
                let out_len = node.shape[0];
                let gx = grad_buf(grads, *x, frames * l);
                for k in 0..frames {
                    let start = k * hop;
                    if start >= out_len {
                        break;
                    }
                    let end = (start + l).min(out_len);
                    add_into(&mut gx[k * l..k * l + (end - start)], &gout[start..end]);
                }
            }
            Op::NegSiSdr { est } => {
                let ev = self.value(*est);
                let reference = &node.aux;
                // compute() succeeded in the forward pass on the same data
                let parts = SiSdrParts::compute(ev, reference).expect("checked in forward");
                let scale = -gout[0].as_f64() * 10.0 / std::f64::consts::LN_10;
                let (num, den) = (parts.num(), parts.den());
                let alpha = parts.alpha;
                let ge = grad_buf(grads, *est, ev.len());
                for ((g, &e), &s) in ge.iter_mut().zip(ev).zip(reference.iter()) {
                    let e = e.as_f64();
                    let s = s.as_f64();
                    let dnum = 2.0 * alpha * s + 2.0 * SI_SDR_EPS * e;
                    let dden = 2.0 * (e - alpha * s) + 2.0 * SI_SDR_EPS * e;
                    *g = *g + T::from_f64(scale * (dnum / num - dden / den));
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let gx = grad_buf(grads, *x, n);
                let go = gout[0];
                gx.iter_mut().for_each(|g| *g = *g + go);
            }
        }
    }
}

/// Row ranges touched by conv tap `j`: `(input_start, output_start, rows)`.
fn tap_rows(frames: usize, kernel: usize, j: usize, dilation: usize) -> Option<(usize, usize, usize)> {
    let center = (kernel - 1) / 2;
    let offset = (j as isize - center as isize) * dilation as isize;
    let shift = offset.unsigned_abs();
    if shift >= frames {
        return None;
    }
    let rows = frames - shift;
    if offset >= 0 {
        Some((shift, 0, rows))
    } else {
        Some((0, shift, rows))
    }
}

fn grad_buf<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

fn add_f64_into<T: Real>(dst: &mut [T], src: &[f64]) {
    dst.iter_mut()
        .zip(src)
        .for_each(|(d, &s)| *d = *d + T::from_f64(s));
}

/// Quantities of one SI-SDR evaluation, accumulated in 64 bits.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SiSdrParts {
    /// Projection coefficient of the estimate onto the reference.
    pub alpha: f64,
    /// Energy of the scaled target `alpha * s`.
    pub target: f64,
    /// Energy of the residual `est - alpha * s`.
    pub noise: f64,
    /// Energy of the estimate.
    pub est: f64,
}

impl SiSdrParts {
    pub(crate) fn compute<A: Real, B: Real>(est: &[A], reference: &[B]) -> Result<Self> {
        let mut dot = 0.0f64;
        let mut ref_energy = 0.0f64;
        let mut est_energy = 0.0f64;
        for (&e, &s) in est.iter().zip(reference) {
            let (e, s) = (e.as_f64(), s.as_f64());
            dot += e * s;
            ref_energy += s * s;
            est_energy += e * e;
        }
        if ref_energy <= 0.0 || !ref_energy.is_finite() {
            return Err(Error::Numerical(
                "SI-SDR reference has zero energy".into(),
            ));
        }
        let alpha = dot / ref_energy;
        let mut noise = 0.0f64;
        for (&e, &s) in est.iter().zip(reference) {
            let d = e.as_f64() - alpha * s.as_f64();
            noise += d * d;
        }
        Ok(Self {
            alpha,
            target: alpha * alpha * ref_energy,
            noise,
            est: est_energy,
        })
    }

    fn guard(&self) -> f64 {
        SI_SDR_EPS * self.est + f64::MIN_POSITIVE
    }

    fn num(&self) -> f64 {
        self.target + self.guard()
    }

    fn den(&self) -> f64 {
        self.noise + self.guard()
    }

    pub(crate) fn si_sdr(&self) -> f64 {
        10.0 * (self.num() / self.den()).log10()
    }
}
