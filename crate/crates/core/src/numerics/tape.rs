//! Define-by-run reverse-mode differentiation tape.
//!
//! A `Tape` is built fresh for every forward pass. Nodes are append-only,
//! so parents always precede children and the backward pass is a single
//! reverse sweep. Every node's data is checked for finiteness on creation,
//! which localizes numeric blowups to the op that produced them.

use std::collections::BTreeMap;

use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Pointwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn parse(kind: &str) -> Result<Self> {
        match kind {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::InvalidParameter {
                name: "activation",
                reason: format!("unknown kind `{other}` (expected relu|tanh|sigmoid|softmax)"),
            }),
        }
    }
}

enum Op<F> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv1d { x: Var, w: Var, b: Option<Var>, pad_left: usize },
    Relu { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var },
    Exp { x: Var },
    Ln { x: Var },
    Sqrt { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: F },
    AddScalar { x: Var },
    MulScalarVar { x: Var, s: Var },
    Dot { a: Var, b: Var },
    MeanAxis0 { x: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    Row { x: Var, index: usize },
    StackRows { rows: Vec<Var> },
    Div { a: Var, b: Var },
    Dropout { x: Var, mask: Vec<F> },
}

struct Node<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
    op: Op<F>,
    param_path: Option<String>,
}

/// Reverse-mode tape. One per forward pass.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    param_vars: BTreeMap<String, Var>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<F>,
        requires_grad: bool,
        op: Op<F>,
    ) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("output of `{op_name}` at flat index {i}"),
            });
        }
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
            param_path: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn data(&self, v: Var) -> &[F] {
        &self.node(v).data
    }

    pub fn numel(&self, v: Var) -> usize {
        self.node(v).data.len()
    }

    /// Copy a node's value out as a tensor.
    pub fn value(&self, v: Var) -> Tensor<F> {
        Tensor::from_vec(self.node(v).shape.clone(), self.node(v).data.clone())
            .expect("tape nodes hold valid tensors")
    }

    pub fn item(&self, v: Var) -> Result<F> {
        let n = self.node(v);
        if n.data.len() != 1 {
            return Err(Error::Contract {
                op: "Tape::item",
                reason: format!("expected scalar node, got shape {:?}", n.shape),
            });
        }
        Ok(n.data[0])
    }

    /// Gradient of the last `backward` call w.r.t. this node, if tracked.
    pub fn grad_of(&self, v: Var) -> Option<Vec<F>> {
        self.node(v).grad.clone()
    }

    // ── Leaves ──────────────────────────────────────────────────────

    /// Untracked constant.
    pub fn constant(&mut self, t: &Tensor<F>) -> Result<Var> {
        self.push("constant", t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    pub fn constant_vector(&mut self, data: Vec<F>) -> Result<Var> {
        let n = data.len();
        self.push("constant", vec![n], data, false, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, v: F) -> Result<Var> {
        self.push("constant", vec![1], vec![v], false, Op::Leaf)
    }

    /// Leaf that follows the tensor's own `grad_tracked` flag.
    pub fn feed(&mut self, t: &Tensor<F>) -> Result<Var> {
        self.push(
            "feed",
            t.shape().to_vec(),
            t.data().to_vec(),
            t.is_grad_tracked(),
            Op::Leaf,
        )
    }

    /// Tracked leaf bound to a named parameter. Repeated requests for the
    /// same path return the same node so gradients of shared weights
    /// accumulate correctly.
    pub fn param(&mut self, ps: &ParamSet<F>, path: &str) -> Result<Var> {
        if let Some(v) = self.param_vars.get(path) {
            return Ok(*v);
        }
        let t = ps.get(path)?;
        let v = self.push("param", t.shape().to_vec(), t.data().to_vec(), true, Op::Leaf)?;
        self.nodes[v.0].param_path = Some(path.to_string());
        self.param_vars.insert(path.to_string(), v);
        Ok(v)
    }

    // ── Ops ─────────────────────────────────────────────────────────

    fn req(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// Affine map `y = x W + b` with `x: [D_in]` or `[N, D_in]`, `W: [D_in, D_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, d_in) = self.as_rows(x, "linear")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[0] != d_in {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: self.shape(x).to_vec(),
                rhs: ws,
            });
        }
        let d_out = ws[1];
        if let Some(bv) = b {
            if self.shape(bv) != [d_out] {
                return Err(Error::ShapeMismatch {
                    op: "linear(bias)",
                    lhs: vec![d_out],
                    rhs: self.shape(bv).to_vec(),
                });
            }
        }
        let xs = &self.node(x).data;
        let wd = &self.node(w).data;
        let mut out = vec![F::zero(); rows * d_out];
        for r in 0..rows {
            for i in 0..d_in {
                let xv = xs[r * d_in + i];
                if xv == F::zero() {
                    continue;
                }
                let wrow = &wd[i * d_out..(i + 1) * d_out];
                let orow = &mut out[r * d_out..(r + 1) * d_out];
                for (o, wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * *wv;
                }
            }
            if let Some(bv) = b {
                let bd = &self.node(bv).data;
                let orow = &mut out[r * d_out..(r + 1) * d_out];
                for (o, bvl) in orow.iter_mut().zip(bd.iter()) {
                    *o += *bvl;
                }
            }
        }
        let out_shape = if self.shape(x).len() == 1 {
            vec![d_out]
        } else {
            vec![rows, d_out]
        };
        let rg = self.req(&[x, w]) || b.map(|bv| self.node(bv).requires_grad).unwrap_or(false);
        self.push("linear", out_shape, out, rg, Op::Linear { x, w, b })
    }

    /// 1-D convolution over time. `x: [T, D]`, `w: [C, k, D]`, `b: [C]`,
    /// symmetric zero padding keeps the output length at `T`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 3 || ws[2] != xs[1] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (t_len, d) = (xs[0], xs[1]);
        let (c_out, k) = (ws[0], ws[1]);
        let pad_left = (k - 1) / 2;
        if let Some(bv) = b {
            if self.shape(bv) != [c_out] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d(bias)",
                    lhs: vec![c_out],
                    rhs: self.shape(bv).to_vec(),
                });
            }
        }
        let xd = &self.node(x).data;
        let wd = &self.node(w).data;
        let mut out = vec![F::zero(); t_len * c_out];
        for t in 0..t_len {
            for c in 0..c_out {
                let mut acc = F::zero();
                for j in 0..k {
                    let src = t + j;
                    if src < pad_left || src - pad_left >= t_len {
                        continue;
                    }
                    let src = src - pad_left;
                    let wrow = &wd[(c * k + j) * d..(c * k + j + 1) * d];
                    let xrow = &xd[src * d..(src + 1) * d];
                    for (wv, xv) in wrow.iter().zip(xrow) {
                        acc += *wv * *xv;
                    }
                }
                if let Some(bv) = b {
                    acc += self.node(bv).data[c];
                }
                out[t * c_out + c] = acc;
            }
        }
        let rg = self.req(&[x, w]) || b.map(|bv| self.node(bv).requires_grad).unwrap_or(false);
        self.push(
            "conv1d",
            vec![t_len, c_out],
            out,
            rg,
            Op::Conv1d { x, w, b, pad_left },
        )
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Tanh => self.tanh(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Softmax => self.softmax(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data: Vec<F> = self.node(x).data.iter().map(|&v| v.max(F::zero())).collect();
        let rg = self.req(&[x]);
        self.push("relu", self.shape(x).to_vec(), data, rg, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let data: Vec<F> = self.node(x).data.iter().map(|v| v.tanh()).collect();
        let rg = self.req(&[x]);
        self.push("tanh", self.shape(x).to_vec(), data, rg, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let one = F::one();
        let data: Vec<F> = self
            .node(x)
            .data
            .iter()
            .map(|&v| one / (one + (-v).exp()))
            .collect();
        let rg = self.req(&[x]);
        self.push("sigmoid", self.shape(x).to_vec(), data, rg, Op::Sigmoid { x })
    }

    /// Softmax over the last axis. Rows are shifted by their max before
    /// exponentiation.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().ok_or(Error::Contract {
            op: "softmax",
            reason: "rank-0 input".into(),
        })?;
        let xd = &self.node(x).data;
        let mut data = vec![F::zero(); xd.len()];
        for (row_out, row_in) in data.chunks_mut(last).zip(xd.chunks(last)) {
            let m = row_in.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.req(&[x]);
        self.push("softmax", shape, data, rg, Op::Softmax { x })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let data: Vec<F> = self.node(x).data.iter().map(|v| v.exp()).collect();
        let rg = self.req(&[x]);
        self.push("exp", self.shape(x).to_vec(), data, rg, Op::Exp { x })
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let data: Vec<F> = self.node(x).data.iter().map(|v| v.ln()).collect();
        let rg = self.req(&[x]);
        self.push("ln", self.shape(x).to_vec(), data, rg, Op::Ln { x })
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let data: Vec<F> = self.node(x).data.iter().map(|v| v.sqrt()).collect();
        let rg = self.req(&[x]);
        self.push("sqrt", self.shape(x).to_vec(), data, rg, Op::Sqrt { x })
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<F> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.req(&[a, b]);
        self.push(name, self.shape(a).to_vec(), data, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let data: Vec<F> = self.node(x).data.iter().map(|&v| v * c).collect();
        let rg = self.req(&[x]);
        self.push("scale", self.shape(x).to_vec(), data, rg, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: F) -> Result<Var> {
        let data: Vec<F> = self.node(x).data.iter().map(|&v| v + c).collect();
        let rg = self.req(&[x]);
        self.push("add_scalar", self.shape(x).to_vec(), data, rg, Op::AddScalar { x })
    }

    /// Multiply every element of `x` by the scalar node `s`.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.numel(s) != 1 {
            return Err(Error::Contract {
                op: "mul_scalar_var",
                reason: format!("scale must be scalar, got shape {:?}", self.shape(s)),
            });
        }
        let sv = self.node(s).data[0];
        let data: Vec<F> = self.node(x).data.iter().map(|&v| v * sv).collect();
        let rg = self.req(&[x, s]);
        self.push(
            "mul_scalar_var",
            self.shape(x).to_vec(),
            data,
            rg,
            Op::MulScalarVar { x, s },
        )
    }

    /// Inner product of two equal-length vectors, yielding a scalar node.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) || self.shape(a).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let v: F = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(&x, &y)| x * y)
            .sum();
        let rg = self.req(&[a, b]);
        self.push("dot", vec![1], vec![v], rg, Op::Dot { a, b })
    }

    fn as_rows(&self, x: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(x) {
            [d] => Ok((1, *d)),
            [t, d] => Ok((*t, *d)),
            other => Err(Error::Contract {
                op: "rank",
                reason: format!("{op}: expected rank 1 or 2, got shape {other:?}"),
            }),
        }
    }

    /// Arithmetic mean over the time axis: `[T, D] -> [D]`.
    pub fn mean_axis0(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::Contract {
                op: "mean_axis0",
                reason: format!("expected rank-2 input, got shape {shape:?}"),
            });
        }
        let (t_len, d) = (shape[0], shape[1]);
        if t_len == 0 {
            return Err(Error::Domain {
                op: "mean_axis0",
                reason: "empty time axis".into(),
            });
        }
        let xd = &self.node(x).data;
        let inv = F::one() / F::from_f64_c(t_len as f64);
        let mut out = vec![F::zero(); d];
        for row in xd.chunks(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o *= inv;
        }
        let rg = self.req(&[x]);
        self.push("mean_axis0", vec![d], out, rg, Op::MeanAxis0 { x })
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let v: F = self.node(x).data.iter().copied().sum();
        let rg = self.req(&[x]);
        self.push("sum_all", vec![1], vec![v], rg, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.numel(x);
        let v: F = self.node(x).data.iter().copied().sum::<F>() / F::from_f64_c(n as f64);
        let rg = self.req(&[x]);
        self.push("mean_all", vec![1], vec![v], rg, Op::MeanAll { x })
    }

    /// Concatenate vectors (scalars count as length-1 vectors).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract {
                op: "concat",
                reason: "no parts".into(),
            });
        }
        for p in parts {
            if self.shape(*p).len() != 1 {
                return Err(Error::Contract {
                    op: "concat",
                    reason: format!("expected vectors, got shape {:?}", self.shape(*p)),
                });
            }
        }
        let data: Vec<F> = parts
            .iter()
            .flat_map(|p| self.node(*p).data.iter().copied())
            .collect();
        let n = data.len();
        let rg = self.req(parts);
        self.push("concat", vec![n], data, rg, Op::Concat { parts: parts.to_vec() })
    }

    /// Contiguous sub-vector `x[start .. start+len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 1 || start + len > shape[0] || len == 0 {
            return Err(Error::Contract {
                op: "slice",
                reason: format!("slice {start}..{} out of shape {shape:?}", start + len),
            });
        }
        let data = self.node(x).data[start..start + len].to_vec();
        let rg = self.req(&[x]);
        self.push("slice", vec![len], data, rg, Op::Slice { x, start })
    }

    /// Row `index` of a `[T, D]` node as a `[D]` vector.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || index >= shape[0] {
            return Err(Error::Contract {
                op: "row",
                reason: format!("row {index} out of shape {shape:?}"),
            });
        }
        let d = shape[1];
        let data = self.node(x).data[index * d..(index + 1) * d].to_vec();
        let rg = self.req(&[x]);
        self.push("row", vec![d], data, rg, Op::Row { x, index })
    }

    /// Stack equal-length vectors into a `[T, D]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Contract {
                op: "stack_rows",
                reason: "no rows".into(),
            });
        }
        let d = self.numel(rows[0]);
        for r in rows {
            if self.shape(*r).len() != 1 || self.numel(*r) != d {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![d],
                    rhs: self.shape(*r).to_vec(),
                });
            }
        }
        let data: Vec<F> = rows
            .iter()
            .flat_map(|r| self.node(*r).data.iter().copied())
            .collect();
        let rg = self.req(rows);
        self.push(
            "stack_rows",
            vec![rows.len(), d],
            data,
            rg,
            Op::StackRows { rows: rows.to_vec() },
        )
    }

    /// Scalar division `a / b`.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.numel(a) != 1 || self.numel(b) != 1 {
            return Err(Error::Contract {
                op: "div",
                reason: "both operands must be scalar".into(),
            });
        }
        let v = self.node(a).data[0] / self.node(b).data[0];
        let rg = self.req(&[a, b]);
        self.push("div", vec![1], vec![v], rg, Op::Div { a, b })
    }

    /// Train-time dropout with inverted scaling; `mask` entries are
    /// `0` or `1/keep`.
    pub fn dropout(&mut self, x: Var, mask: Vec<F>) -> Result<Var> {
        if mask.len() != self.numel(x) {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data: Vec<F> = self
            .node(x)
            .data
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let rg = self.req(&[x]);
        self.push("dropout", self.shape(x).to_vec(), data, rg, Op::Dropout { x, mask })
    }

    // ── Composites ──────────────────────────────────────────────────

    /// L2-normalize a vector; a tiny epsilon inside the square root keeps
    /// the zero vector from dividing by zero.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        let ss = self.sum_all(sq)?;
        let ss = self.add_scalar(ss, F::from_f64_c(1e-12))?;
        let norm = self.sqrt(ss)?;
        let one = self.constant_scalar(F::one())?;
        let inv = self.div(one, norm)?;
        self.mul_scalar_var(x, inv)
    }

    /// Squared error `(a - b)^2` for scalar nodes.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        self.mul(d, d)
    }

    // ── Backward ────────────────────────────────────────────────────

    fn ensure_grad(&mut self, v: Var) {
        let node = &mut self.nodes[v.0];
        if node.grad.is_none() {
            node.grad = Some(vec![F::zero(); node.data.len()]);
        }
    }

    fn add_grad(&mut self, v: Var, contrib: &[F]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        self.ensure_grad(v);
        let g = self.nodes[v.0].grad.as_mut().expect("just ensured");
        for (gv, &c) in g.iter_mut().zip(contrib) {
            *gv += c;
        }
    }

    /// Reverse sweep from a scalar loss node. Populates node gradients;
    /// parameter write-back is done by [`Tape::backward_params`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(Error::Contract {
                op: "backward",
                reason: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        self.ensure_grad(loss);
        self.nodes[loss.0].grad.as_mut().expect("just ensured")[0] = F::one();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            self.step_backward(i, &g)?;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    /// `backward` plus gradient population in the parameter set: every
    /// parameter gets zeros first, then reachable ones receive their
    /// accumulated gradients.
    pub fn backward_params(&mut self, loss: Var, params: &mut ParamSet<F>) -> Result<()> {
        params.zero_grad();
        self.backward(loss)?;
        let paths: Vec<(String, Var)> = self
            .param_vars
            .iter()
            .map(|(p, v)| (p.clone(), *v))
            .collect();
        for (path, v) in paths {
            if let Some(g) = self.nodes[v.0].grad.clone() {
                params.set_grad(&path, g)?;
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_lines)]
    fn step_backward(&mut self, i: usize, g: &[F]) -> Result<()> {
        // Ops that need parent data clone it out first to keep borrows simple.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (rows, d_in) = self.as_rows(*x, "linear")?;
                let d_out = self.shape(*w)[1];
                let xd = self.nodes[x.0].data.clone();
                let wd = self.nodes[w.0].data.clone();
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![F::zero(); rows * d_in];
                    for r in 0..rows {
                        for ii in 0..d_in {
                            let mut acc = F::zero();
                            for j in 0..d_out {
                                acc += g[r * d_out + j] * wd[ii * d_out + j];
                            }
                            gx[r * d_in + ii] = acc;
                        }
                    }
                    self.add_grad(*x, &gx);
                }
                if self.nodes[w.0].requires_grad {
                    let mut gw = vec![F::zero(); d_in * d_out];
                    for r in 0..rows {
                        for ii in 0..d_in {
                            let xv = xd[r * d_in + ii];
                            if xv == F::zero() {
                                continue;
                            }
                            for j in 0..d_out {
                                gw[ii * d_out + j] += xv * g[r * d_out + j];
                            }
                        }
                    }
                    self.add_grad(*w, &gw);
                }
                if let Some(bv) = b {
                    if self.nodes[bv.0].requires_grad {
                        let mut gb = vec![F::zero(); d_out];
                        for r in 0..rows {
                            for j in 0..d_out {
                                gb[j] += g[r * d_out + j];
                            }
                        }
                        self.add_grad(*bv, &gb);
                    }
                }
            }
            Op::Conv1d { x, w, b, pad_left } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let (t_len, d) = (xs[0], xs[1]);
                let (c_out, k) = (ws[0], ws[1]);
                let xd = self.nodes[x.0].data.clone();
                let wd = self.nodes[w.0].data.clone();
                let mut gx = vec![F::zero(); t_len * d];
                let mut gw = vec![F::zero(); c_out * k * d];
                let mut gb = vec![F::zero(); c_out];
                for t in 0..t_len {
                    for c in 0..c_out {
                        let go = g[t * c_out + c];
                        if go == F::zero() {
                            continue;
                        }
                        gb[c] += go;
                        for j in 0..k {
                            let src = t + j;
                            if src < *pad_left || src - pad_left >= t_len {
                                continue;
                            }
                            let src = src - pad_left;
                            for dd in 0..d {
                                gw[(c * k + j) * d + dd] += go * xd[src * d + dd];
                                gx[src * d + dd] += go * wd[(c * k + j) * d + dd];
                            }
                        }
                    }
                }
                self.add_grad(*x, &gx);
                self.add_grad(*w, &gw);
                if let Some(bv) = b {
                    self.add_grad(*bv, &gb);
                }
            }
            Op::Relu { x } => {
                let xd = self.nodes[x.0].data.clone();
                let gx: Vec<F> = g
                    .iter()
                    .zip(&xd)
                    .map(|(&gv, &xv)| if xv > F::zero() { gv } else { F::zero() })
                    .collect();
                self.add_grad(*x, &gx);
            }
            Op::Tanh { x } => {
                let yd = self.nodes[i].data.clone();
                let gx: Vec<F> = g
                    .iter()
                    .zip(&yd)
                    .map(|(&gv, &yv)| gv * (F::one() - yv * yv))
                    .collect();
                self.add_grad(*x, &gx);
            }
            Op::Sigmoid { x } => {
                let yd = self.nodes[i].data.clone();
                let gx: Vec<F> = g
                    .iter()
                    .zip(&yd)
                    .map(|(&gv, &yv)| gv * yv * (F::one() - yv))
                    .collect();
                self.add_grad(*x, &gx);
            }
            Op::Softmax { x } => {
                let yd = self.nodes[i].data.clone();
                let last = *self.nodes[i].shape.last().expect("checked at forward");
                let mut gx = vec![F::zero(); yd.len()];
                for ((gx_row, y_row), g_row) in
                    gx.chunks_mut(last).zip(yd.chunks(last)).zip(g.chunks(last))
                {
                    let dot: F = g_row.iter().zip(y_row).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &gv) in gx_row.iter_mut().zip(y_row).zip(g_row) {
                        *o = yv * (gv - dot);
                    }
                }
                self.add_grad(*x, &gx);
            }
            Op::Exp { x } => {
                let yd = self.nodes[i].data.clone();
                let gx: Vec<F> = g.iter().zip(&yd).map(|(&gv, &yv)| gv * yv).collect();
                self.add_grad(*x, &gx);
            }
            Op::Ln { x } => {
                let xd = self.nodes[x.0].data.clone();
                let gx: Vec<F> = g.iter().zip(&xd).map(|(&gv, &xv)| gv / xv).collect();
                self.add_grad(*x, &gx);
            }
            Op::Sqrt { x } => {
                let yd = self.nodes[i].data.clone();
                let half = F::from_f64_c(0.5);
                let gx: Vec<F> = g.iter().zip(&yd).map(|(&gv, &yv)| gv * half / yv).collect();
                self.add_grad(*x, &gx);
            }
            Op::Add { a, b } => {
                self.add_grad(*a, g);
                self.add_grad(*b, g);
            }
            Op::Sub { a, b } => {
                self.add_grad(*a, g);
                let neg: Vec<F> = g.iter().map(|&v| -v).collect();
                self.add_grad(*b, &neg);
            }
            Op::Mul { a, b } => {
                let ad = self.nodes[a.0].data.clone();
                let bd = self.nodes[b.0].data.clone();
                let ga: Vec<F> = g.iter().zip(&bd).map(|(&gv, &bv)| gv * bv).collect();
                let gb: Vec<F> = g.iter().zip(&ad).map(|(&gv, &av)| gv * av).collect();
                self.add_grad(*a, &ga);
                self.add_grad(*b, &gb);
            }
            Op::Scale { x, c } => {
                let gx: Vec<F> = g.iter().map(|&gv| gv * *c).collect();
                self.add_grad(*x, &gx);
            }
            Op::AddScalar { x } => {
                self.add_grad(*x, g);
            }
            Op::MulScalarVar { x, s } => {
                let sv = self.nodes[s.0].data[0];
                let xd = self.nodes[x.0].data.clone();
                let gx: Vec<F> = g.iter().map(|&gv| gv * sv).collect();
                let gs: F = g.iter().zip(&xd).map(|(&gv, &xv)| gv * xv).sum();
                self.add_grad(*x, &gx);
                self.add_grad(*s, &[gs]);
            }
            Op::Dot { a, b } => {
                let ad = self.nodes[a.0].data.clone();
                let bd = self.nodes[b.0].data.clone();
                let ga: Vec<F> = bd.iter().map(|&v| g[0] * v).collect();
                let gb: Vec<F> = ad.iter().map(|&v| g[0] * v).collect();
                self.add_grad(*a, &ga);
                self.add_grad(*b, &gb);
            }
            Op::MeanAxis0 { x } => {
                let shape = self.shape(*x).to_vec();
                let (t_len, d) = (shape[0], shape[1]);
                let inv = F::one() / F::from_f64_c(t_len as f64);
                let mut gx = vec![F::zero(); t_len * d];
                for row in gx.chunks_mut(d) {
                    for (o, &gv) in row.iter_mut().zip(g) {
                        *o = gv * inv;
                    }
                }
                self.add_grad(*x, &gx);
            }
            Op::SumAll { x } => {
                let gx = vec![g[0]; self.numel(*x)];
                self.add_grad(*x, &gx);
            }
            Op::MeanAll { x } => {
                let n = self.numel(*x);
                let gv = g[0] / F::from_f64_c(n as f64);
                let gx = vec![gv; n];
                self.add_grad(*x, &gx);
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for p in parts {
                    let n = self.numel(*p);
                    let gp = g[off..off + n].to_vec();
                    self.add_grad(*p, &gp);
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let mut gx = vec![F::zero(); self.numel(*x)];
                gx[*start..*start + g.len()].copy_from_slice(g);
                self.add_grad(*x, &gx);
            }
            Op::Row { x, index } => {
                let d = self.shape(*x)[1];
                let mut gx = vec![F::zero(); self.numel(*x)];
                gx[index * d..(index + 1) * d].copy_from_slice(g);
                self.add_grad(*x, &gx);
            }
            Op::StackRows { rows } => {
                let d = self.numel(rows[0]);
                for (r, part) in rows.iter().zip(g.chunks(d)) {
                    self.add_grad(*r, part);
                }
            }
            Op::Div { a, b } => {
                let av = self.nodes[a.0].data[0];
                let bv = self.nodes[b.0].data[0];
                self.add_grad(*a, &[g[0] / bv]);
                self.add_grad(*b, &[-g[0] * av / (bv * bv)]);
            }
            Op::Dropout { x, mask } => {
                let gx: Vec<F> = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                self.add_grad(*x, &gx);
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }
}
