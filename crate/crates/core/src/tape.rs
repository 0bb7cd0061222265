//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable operation appends a node holding its output value and
//! the ids of its inputs. [`Tape::backward`] walks the nodes in reverse
//! insertion order, which is a valid reverse topological order because a
//! node can only reference nodes recorded before it.
//!
//! Only the operations the denoiser needs are provided. Activations are laid
//! out channel-major (`[channels × frames]`) so a 1-D convolution reads
//! contiguous rows.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    Sigmoid,
    Swish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// Axis of a rank-2 tensor along which a vector is laid out for broadcasting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// One value per row, repeated across columns (`[C]` over `[C × L]`).
    Rows,
    /// One value per column, repeated down rows (`[N]` over `[M × N]`).
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        len: usize,
    },
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    BroadcastAdd {
        x: Var,
        v: Var,
        axis: Axis,
        rows: usize,
        cols: usize,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
        dim: usize,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
        cols: usize,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    pending: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Swish => x * sigmoid(x),
        }
    }

    /// Derivative with respect to the input, given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            // subgradient at 0 is 0
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
        }
    }
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

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a copy of `tensor` as a trainable leaf.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor.clone().with_requires_grad(true))
    }

    /// Records a copy of `tensor` as a constant leaf.
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor.clone().with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, shape: &[usize], data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.tracks(v));
        let value = Tensor::new(shape, data)
            .expect("op produced inconsistent shape")
            .with_requires_grad(requires_grad);
        self.nodes.push(Node { value, op });
        self.pending = true;
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2(op)
    }

    /// `[m × k] · [k × n] → [m × n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        Ok(self.push(&[m, n], out, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// Non-causal 1-D convolution with symmetric zero padding so the output
    /// keeps the input length.
    ///
    /// `input: [C_in × L]`, `weight: [C_out × C_in × K]`, `bias: [C_out]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, dilation: usize) -> Result<Var> {
        let (c_in, len) = self.dims2(input, "conv1d")?;
        let (c_out, wc_in, kernel) = match self.shape(weight) {
            &[o, i, k] => (o, i, k),
            s => return Err(Error::dim("conv1d weight", s, &[0, c_in, 0])),
        };
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel size must be odd, got {kernel}")));
        }
        if dilation == 0 {
            return Err(Error::Config("conv1d dilation must be >= 1".into()));
        }
        if wc_in != c_in {
            return Err(Error::dim("conv1d", self.shape(input), self.shape(weight)));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::dim("conv1d bias", self.shape(bias), &[c_out]));
        }
        let (x, w, b) = (self.data(input), self.data(weight), self.data(bias));
        let mut out = vec![0.0; c_out * len];
        for o in 0..c_out {
            let orow = &mut out[o * len..(o + 1) * len];
            orow.fill(b[o]);
            for c in 0..c_in {
                let xrow = &x[c * len..(c + 1) * len];
                for k in 0..kernel {
                    let wv = w[(o * c_in + c) * kernel + k];
                    let (lo, hi, off) = tap_range(k, kernel, dilation, len);
                    for l in lo..hi {
                        orow[l] += wv * xrow[(l as isize + off) as usize];
                    }
                }
            }
        }
        let op = Op::Conv1d {
            input,
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            dilation,
            len,
        };
        Ok(self.push(&[c_out, len], out, op, &[input, weight, bias]))
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| op.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::Unary(op, x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn swish(&mut self, x: Var) -> Var {
        self.unary(Unary::Swish, x)
    }

    /// Elementwise binary op on equal shapes.
    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("elementwise", self.shape(a), self.shape(b)));
        }
        let f: fn(f64, f64) -> f64 = match op {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(&shape, out, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.data(x).iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::Scale(x, s), &[x])
    }

    /// Adds vector `v` to every row (`Axis::Cols`) or every column
    /// (`Axis::Rows`) of the rank-2 tensor `x`. `v` may have any shape whose
    /// element count matches the broadcast dimension.
    pub fn broadcast_add(&mut self, x: Var, v: Var, axis: Axis) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "broadcast_add")?;
        let want = match axis {
            Axis::Rows => rows,
            Axis::Cols => cols,
        };
        if self.value(v).numel() != want {
            return Err(Error::dim("broadcast_add", self.shape(x), self.shape(v)));
        }
        let (xd, vd) = (self.data(x), self.data(v));
        let mut out = xd.to_vec();
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] += match axis {
                    Axis::Rows => vd[r],
                    Axis::Cols => vd[c],
                };
            }
        }
        let op = Op::BroadcastAdd {
            x,
            v,
            axis,
            rows,
            cols,
        };
        Ok(self.push(&[rows, cols], out, op, &[x, v]))
    }

    /// Gathers rows of `table: [V × D]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.dims2(table, "embedding")?;
        if let Some((pos, &bad)) = indices.iter().enumerate().find(|(_, &i)| i >= vocab) {
            return Err(Error::Index(format!(
                "embedding index {bad} at position {pos} out of range for table of {vocab} rows"
            )));
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&td[i * dim..(i + 1) * dim]);
        }
        let op = Op::Embedding {
            table,
            indices: indices.to_vec(),
            dim,
        };
        Ok(self.push(&[indices.len(), dim], out, op, &[table]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "transpose")?;
        let t = self.value(x).transposed()?;
        Ok(self.push(&[cols, rows], t.into_data(), Op::Transpose { x, rows, cols }, &[x]))
    }

    /// Rows `start..start + count` of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "slice_rows")?;
        if start + count > rows {
            return Err(Error::Index(format!(
                "row slice {start}..{} exceeds {rows} rows",
                start + count
            )));
        }
        let out = self.data(x)[start * cols..(start + count) * cols].to_vec();
        Ok(self.push(&[count, cols], out, Op::SliceRows { x, start, cols }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(&[], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        self.push(&[], vec![m], Op::Mean(x), &[x])
    }

    /// Mean squared difference of two equally shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let diff = self.sub(a, b)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean(sq))
    }

    /// Back-propagates from the scalar `loss`, storing gradients on every
    /// node that requires them, then clears the recorded operations.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.pending {
            return Err(Error::Contract(
                "backward called with no recorded operations since the last backward".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.value.requires_grad() {
                let n = node.value.numel();
                node.value.set_grad(g.unwrap_or_else(|| vec![0.0; n]));
            }
            node.op = Op::Leaf;
        }
        self.pending = false;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (ad, bd) = (self.data(a), self.data(b));
                if self.tracks(a) {
                    let ga = slot(grads, a, m * k);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[r * k + p] += dot(grow, brow);
                        }
                    }
                }
                if self.tracks(b) {
                    let gb = slot(grads, b, k * n);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let arp = ad[r * k + p];
                            for (acc, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *acc += arp * gv;
                            }
                        }
                    }
                }
            }
            &Op::Conv1d {
                input,
                weight,
                bias,
                c_in,
                c_out,
                kernel,
                dilation,
                len,
            } => {
                let (x, w) = (self.data(input), self.data(weight));
                if self.tracks(bias) {
                    let gb = slot(grads, bias, c_out);
                    for o in 0..c_out {
                        gb[o] += g[o * len..(o + 1) * len].iter().sum::<f64>();
                    }
                }
                if self.tracks(weight) {
                    let gw = slot(grads, weight, c_out * c_in * kernel);
                    for o in 0..c_out {
                        let grow = &g[o * len..(o + 1) * len];
                        for c in 0..c_in {
                            let xrow = &x[c * len..(c + 1) * len];
                            for k in 0..kernel {
                                let (lo, hi, off) = tap_range(k, kernel, dilation, len);
                                let xs = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                                gw[(o * c_in + c) * kernel + k] += dot(&grow[lo..hi], xs);
                            }
                        }
                    }
                }
                if self.tracks(input) {
                    let gx = slot(grads, input, c_in * len);
                    for o in 0..c_out {
                        let grow = &g[o * len..(o + 1) * len];
                        for c in 0..c_in {
                            let gxrow = &mut gx[c * len..(c + 1) * len];
                            for k in 0..kernel {
                                let wv = w[(o * c_in + c) * kernel + k];
                                let (lo, hi, off) = tap_range(k, kernel, dilation, len);
                                for l in lo..hi {
                                    gxrow[(l as isize + off) as usize] += wv * grow[l];
                                }
                            }
                        }
                    }
                }
            }
            &Op::Unary(op, x) => {
                if self.tracks(x) {
                    let xd = self.data(x);
                    let gx = slot(grads, x, xd.len());
                    for j in 0..xd.len() {
                        gx[j] += g[j] * op.derivative(xd[j], out[j]);
                    }
                }
            }
            &Op::Binary(op, a, b) => {
                let (ad, bd) = (self.data(a), self.data(b));
                // a and b may be the same node (x * x), so accumulate in two passes.
                if self.tracks(a) {
                    let ga = slot(grads, a, ad.len());
                    for j in 0..ad.len() {
                        ga[j] += match op {
                            Binary::Add | Binary::Sub => g[j],
                            Binary::Mul => g[j] * bd[j],
                        };
                    }
                }
                if self.tracks(b) {
                    let gb = slot(grads, b, bd.len());
                    for j in 0..bd.len() {
                        gb[j] += match op {
                            Binary::Add => g[j],
                            Binary::Sub => -g[j],
                            Binary::Mul => g[j] * ad[j],
                        };
                    }
                }
            }
            &Op::Scale(x, s) => {
                if self.tracks(x) {
                    let gx = slot(grads, x, g.len());
                    for (acc, &gv) in gx.iter_mut().zip(g) {
                        *acc += gv * s;
                    }
                }
            }
            &Op::BroadcastAdd {
                x,
                v,
                axis,
                rows,
                cols,
            } => {
                if self.tracks(x) {
                    let gx = slot(grads, x, g.len());
                    for (acc, &gv) in gx.iter_mut().zip(g) {
                        *acc += gv;
                    }
                }
                if self.tracks(v) {
                    let n = self.value(v).numel();
                    let gv = slot(grads, v, n);
                    for r in 0..rows {
                        for c in 0..cols {
                            let idx = match axis {
                                Axis::Rows => r,
                                Axis::Cols => c,
                            };
                            gv[idx] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::Embedding {
                table,
                indices,
                dim,
            } => {
                let (table, dim) = (*table, *dim);
                if self.tracks(table) {
                    let n = self.value(table).numel();
                    let gt = slot(grads, table, n);
                    for (pos, &row) in indices.iter().enumerate() {
                        for d in 0..dim {
                            gt[row * dim + d] += g[pos * dim + d];
                        }
                    }
                }
            }
            &Op::Transpose { x, rows, cols } => {
                if self.tracks(x) {
                    let gx = slot(grads, x, rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            &Op::SliceRows { x, start, cols } => {
                if self.tracks(x) {
                    let n = self.value(x).numel();
                    let gx = slot(grads, x, n);
                    for (acc, &gv) in gx[start * cols..start * cols + g.len()].iter_mut().zip(g) {
                        *acc += gv;
                    }
                }
            }
            &Op::Sum(x) => {
                if self.tracks(x) {
                    let n = self.value(x).numel();
                    for acc in slot(grads, x, n) {
                        *acc += g[0];
                    }
                }
            }
            &Op::Mean(x) => {
                if self.tracks(x) {
                    let n = self.value(x).numel();
                    let scale = g[0] / n as f64;
                    for acc in slot(grads, x, n) {
                        *acc += scale;
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Valid output range `lo..hi` for kernel tap `k`, and the input offset
/// added to an output index to reach the tapped input sample.
fn tap_range(k: usize, kernel: usize, dilation: usize, len: usize) -> (usize, usize, isize) {
    let pad = ((kernel - 1) * dilation / 2) as isize;
    let off = (k * dilation) as isize - pad;
    let len = len as isize;
    let lo = (-off).clamp(0, len);
    let hi = (len - off).clamp(0, len);
    (lo as usize, hi.max(lo) as usize, off)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let id = tape.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(&t(&[2, 2], &[3.0, -1.0, 2.5, 7.0]));
        let out = tape.matmul(id, m).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, -1.0, 2.5, 7.0]);

        let a = tape.constant(&t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(&t(&[2, 1], &[3.0, 4.0]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 1]);
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(&[2, 3]));
        let b = tape.constant(&Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn conv1d_identity_and_box_filter() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = tape.constant(&t(&[2, 2, 1], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(&Tensor::zeros(&[2]));
        let y = tape.conv1d(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let x = tape.constant(&t(&[1, 3], &[0.0, 1.0, 0.0]));
        let w = tape.constant(&t(&[1, 1, 3], &[1.0, 1.0, 1.0]));
        let b = tape.constant(&Tensor::zeros(&[1]));
        let y = tape.conv1d(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn conv1d_dilation_pads_symmetrically() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]));
        let w = tape.constant(&t(&[1, 1, 3], &[1.0, 0.0, 1.0]));
        let b = tape.constant(&t(&[1], &[0.5]));
        let y = tape.conv1d(x, w, b, 2).unwrap();
        // y[l] = x[l-2] + x[l+2] + 0.5
        assert_eq!(tape.value(y).data(), &[3.5, 4.5, 6.5, 2.5, 3.5]);
    }

    #[test]
    fn conv1d_rejects_even_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[1, 4]));
        let w = tape.constant(&Tensor::zeros(&[1, 1, 2]));
        let b = tape.constant(&Tensor::zeros(&[1]));
        assert!(matches!(tape.conv1d(x, w, b, 1), Err(Error::Config(_))));
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(Unary::Swish.apply(0.0), 0.0);
        assert_eq!(Unary::Tanh.apply(0.0) * Unary::Sigmoid.apply(0.0), 0.0);
    }

    #[test]
    fn relu_subgradient_convention() {
        for (x, want) in [(-1.0, 0.0), (1.0, 1.0), (0.0, 0.0)] {
            let mut tape = Tape::new();
            let v = tape.param(&Tensor::scalar(x));
            let r = tape.relu(v);
            let s = tape.sum(r);
            tape.backward(s).unwrap();
            assert_eq!(tape.grad(v).unwrap(), &[want], "x = {x}");
        }
    }

    #[test]
    fn embedding_rows_and_errors() {
        let mut tape = Tape::new();
        let table = tape.param(&t(&[3, 2], &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]));
        let e = tape.embedding(table, &[0]).unwrap();
        assert_eq!(tape.value(e).data(), &[0.0, 0.0]);

        let e = tape.embedding(table, &[1, 1, 2]).unwrap();
        let s = tape.sum(e);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(table).unwrap(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let table = tape.param(&Tensor::zeros(&[3, 2]));
        let err = tape.embedding(table, &[0, 2, 3]).unwrap_err();
        assert!(err.to_string().contains("position 2"), "{err}");
    }

    #[test]
    fn embedding_default_table_shape() {
        let mut tape = Tape::new();
        let table = tape.param(&Tensor::zeros(&[256, 256]));
        let idx: Vec<usize> = (0..10).map(|i| i * 25).collect();
        let e = tape.embedding(table, &idx).unwrap();
        assert_eq!(tape.shape(e), &[10, 256]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::new();
        let w = tape.param(&t(&[2], &[1.0, 2.0]));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_twice_is_a_contract_error() {
        let mut tape = Tape::new();
        let w = tape.param(&t(&[2], &[1.0, 2.0]));
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let w = tape.param(&t(&[2], &[1.0, 2.0]));
        let y = tape.scale(w, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_params_get_zero_grad() {
        let mut tape = Tape::new();
        let used = tape.param(&t(&[1], &[3.0]));
        let unused = tape.param(&t(&[2], &[1.0, 1.0]));
        let loss = tape.sum(used);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &[0.0, 0.0]);
        assert_eq!(tape.grad(used).unwrap(), &[1.0]);
    }

    #[test]
    fn broadcast_add_matches_tiling() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let v = tape.constant(&t(&[2], &[10.0, 20.0]));
        let y = tape.broadcast_add(x, v, Axis::Rows).unwrap();
        let tiled = tape.constant(&t(&[2, 3], &[10.0, 10.0, 10.0, 20.0, 20.0, 20.0]));
        let z = tape.add(x, tiled).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(z).data());

        let bad = tape.constant(&Tensor::zeros(&[4]));
        assert!(matches!(
            tape.broadcast_add(x, bad, Axis::Cols),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tap_range_bounds() {
        // K=3, d=1, L=4: tap 0 reads x[l-1], valid for l in 1..4
        assert_eq!(tap_range(0, 3, 1, 4), (1, 4, -1));
        assert_eq!(tap_range(1, 3, 1, 4), (0, 4, 0));
        assert_eq!(tap_range(2, 3, 1, 4), (0, 3, 1));
        // padding wider than the signal
        assert_eq!(tap_range(0, 3, 8, 4), (4, 4, -8));
    }
}
