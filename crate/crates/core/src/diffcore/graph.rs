use super::tensor::{matmul_nn, matmul_nt, matmul_tn};
use super::{DiffError, ModelState, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Pow(Var, f64),
    Clamp(Var, f64, f64),
    Softmax {
        x: Var,
        groups: Groups,
    },
    LogSumExpRows {
        x: Var,
        mask: Option<Vec<bool>>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Norm(Var),
    Sum(Var),
    Mean(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Select {
        x: Var,
        entries: Vec<(usize, usize)>,
    },
    Combine {
        layers: Vec<Tensor>,
        weights: Var,
    },
    LayerNormRows {
        x: Var,
        inv_std: Vec<f64>,
    },
    MulConst(Var, Tensor),
    AddConst(Var),
}

/// Index layout of the softmax groups: `count` groups of `len` entries,
/// entry `k` of group `g` at `g * outer + k * stride`.
#[derive(Clone, Copy, Debug)]
struct Groups {
    count: usize,
    len: usize,
    outer: usize,
    stride: usize,
}

impl Groups {
    fn index(&self, g: usize, k: usize) -> usize {
        g * self.outer + k * self.stride
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Dynamically built computation graph with reverse-mode gradients.
///
/// Nodes are appended in creation order, so reverse creation order is a
/// valid topological order for backpropagation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        parents: &[Var],
    ) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: op_name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf holding a copy of the named parameter.
    pub fn param(&mut self, state: &ModelState, name: &str) -> Result<Var, DiffError> {
        let value = state.value(name)?.clone();
        let v = self.leaf(value, true);
        self.nodes[v.0].param = Some(name.to_string());
        Ok(v)
    }

    /// Parameter names with their gradients after `backward`.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| {
            let name = n.param.as_deref()?;
            let g = self.grads.get(i)?.as_ref()?;
            Some((name, g))
        })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::shape(op, self.value(a), self.value(b)));
        }
        Ok(())
    }

    fn matrix(&self, op: &'static str, a: Var) -> Result<(usize, usize), DiffError> {
        let t = self.value(a);
        if !t.is_matrix() {
            return Err(DiffError::InvalidArgument(format!(
                "{op} needs a matrix, got shape {:?}",
                t.shape()
            )));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        self.matrix("transpose", a)?;
        let value = self.value(a).transpose();
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let values = x
            .values()
            .iter()
            .zip(y.values())
            .map(|(p, q)| f(*p, *q))
            .collect();
        Tensor::new(x.shape().to_vec(), values).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("add", a, b)?;
        let value = self.zip(a, b, |p, q| p + q);
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("sub", a, b)?;
        let value = self.zip(a, b, |p, q| p - q);
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mul", a, b)?;
        let value = self.zip(a, b, |p, q| p * q);
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    fn row_broadcast(&self, op: &'static str, x: Var, v: Var) -> Result<(usize, usize), DiffError> {
        let (r, c) = self.matrix(op, x)?;
        let t = self.value(v);
        if t.shape() != [c] {
            return Err(DiffError::shape(op, self.value(x), t));
        }
        Ok((r, c))
    }

    /// Adds the vector `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let (r, c) = self.row_broadcast("add_row", x, bias)?;
        let mut value = self.value(x).clone();
        let b = self.value(bias).values().to_vec();
        for row in value.values_mut().chunks_mut(c).take(r) {
            for (x, w) in row.iter_mut().zip(&b) {
                *x += w;
            }
        }
        self.push("add_row", value, Op::AddRow(x, bias), &[x, bias])
    }

    /// Multiplies every row of `x` elementwise by the vector `gain`.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var, DiffError> {
        let (r, c) = self.row_broadcast("mul_row", x, gain)?;
        let mut value = self.value(x).clone();
        let g = self.value(gain).values().to_vec();
        for row in value.values_mut().chunks_mut(c).take(r) {
            for (x, w) in row.iter_mut().zip(&g) {
                *x *= w;
            }
        }
        self.push("mul_row", value, Op::MulRow(x, gain), &[x, gain])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, DiffError> {
        let value = self.value(a).map(|v| v * factor);
        self.push("scale", value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let value = self.value(a).map(|v| v + c);
        self.push("add_scalar", value, Op::AddScalar(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, DiffError> {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = self.value(a).map(f64::exp);
        self.push("exp", value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        if self.value(a).values().iter().any(|v| *v <= 0.0) {
            return Err(DiffError::LogNonPositive);
        }
        let value = self.value(a).map(f64::ln);
        self.push("log", value, Op::Log(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = self.value(a).map(f64::tanh);
        self.push("tanh", value, Op::Tanh(a), &[a])
    }

    /// `x^p` for `x >= 0`.
    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var, DiffError> {
        if self.value(a).values().iter().any(|v| *v < 0.0) {
            return Err(DiffError::InvalidArgument("pow of a negative base".into()));
        }
        let value = self.value(a).map(|v| v.powf(p));
        self.push("pow", value, Op::Pow(a, p), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, DiffError> {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        self.push("clamp", value, Op::Clamp(a, lo, hi), &[a])
    }

    /// Softmax along `axis` (0 or 1 for matrices, 0 for vectors).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        let groups = match (t.shape().len(), axis) {
            (1, 0) => Groups {
                count: 1,
                len: t.numel(),
                outer: 0,
                stride: 1,
            },
            (2, 1) => Groups {
                count: t.rows(),
                len: t.cols(),
                outer: t.cols(),
                stride: 1,
            },
            (2, 0) => Groups {
                count: t.cols(),
                len: t.rows(),
                outer: 1,
                stride: t.cols(),
            },
            _ => {
                return Err(DiffError::InvalidArgument(format!(
                    "softmax axis {axis} for shape {:?}",
                    t.shape()
                )))
            }
        };
        let x = t.values();
        let mut out = vec![0.0; x.len()];
        for g in 0..groups.count {
            let max = (0..groups.len)
                .map(|k| x[groups.index(g, k)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..groups.len {
                let i = groups.index(g, k);
                out[i] = (x[i] - max).exp();
                total += out[i];
            }
            for k in 0..groups.len {
                out[groups.index(g, k)] /= total;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push("softmax", value, Op::Softmax { x: a, groups }, &[a])
    }

    /// Row-wise `log sum exp`, skipping entries whose `mask` flag is set.
    pub fn logsumexp_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var, DiffError> {
        let (r, c) = self.matrix("logsumexp_rows", a)?;
        if let Some(m) = &mask {
            if m.len() != r * c {
                return Err(DiffError::InvalidArgument("mask size".into()));
            }
        }
        let x = self.value(a).values();
        let included = |i: usize| mask.as_ref().is_none_or(|m| !m[i]);
        let mut out = vec![0.0; r];
        for (i, o) in out.iter_mut().enumerate() {
            let max = (0..c)
                .map(|j| i * c + j)
                .filter(|&k| included(k))
                .map(|k| x[k])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(DiffError::InvalidArgument(format!("row {i} fully masked")));
            }
            let s: f64 = (0..c)
                .map(|j| i * c + j)
                .filter(|&k| included(k))
                .map(|k| (x[k] - max).exp())
                .sum();
            *o = max + s.ln();
        }
        self.push(
            "logsumexp_rows",
            Tensor::vector(out),
            Op::LogSumExpRows { x: a, mask },
            &[a],
        )
    }

    /// Scales every row to unit Euclidean length.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let (r, c) = self.matrix("normalize_rows", a)?;
        let x = self.value(a).values();
        let norms: Vec<f64> = (0..r)
            .map(|i| (x[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt())
            .collect();
        let values = (0..r * c).map(|k| x[k] / norms[k / c]).collect();
        let value = Tensor::new(vec![r, c], values)?;
        self.push(
            "normalize_rows",
            value,
            Op::NormalizeRows { x: a, norms },
            &[a],
        )
    }

    /// Euclidean (Frobenius) norm of all entries.
    pub fn norm(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = Tensor::scalar(self.value(a).sum_squares().sqrt());
        self.push("norm", value, Op::Norm(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = Tensor::scalar(self.value(a).values().iter().sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(DiffError::InvalidArgument("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(t.values().iter().sum::<f64>() / t.numel() as f64);
        self.push("mean", value, Op::Mean(a), &[a])
    }

    /// Concatenates matrices along rows (`axis = 0`) or columns (`axis = 1`),
    /// or vectors end to end.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, DiffError> {
        let first = parts
            .first()
            .ok_or_else(|| DiffError::InvalidArgument("concat of nothing".into()))?;
        let rank = self.shape(*first).len();
        let value = match (rank, axis) {
            (1, 0) => {
                let mut v = Vec::new();
                for p in parts {
                    if self.shape(*p).len() != 1 {
                        return Err(DiffError::shape(
                            "concat",
                            self.value(*first),
                            self.value(*p),
                        ));
                    }
                    v.extend_from_slice(self.value(*p).values());
                }
                Tensor::vector(v)
            }
            (2, 0) => {
                let c = self.value(*first).cols();
                let mut v = Vec::new();
                let mut rows = 0;
                for p in parts {
                    let t = self.value(*p);
                    if !t.is_matrix() || t.cols() != c {
                        return Err(DiffError::shape("concat", self.value(*first), t));
                    }
                    rows += t.rows();
                    v.extend_from_slice(t.values());
                }
                Tensor::new(vec![rows, c], v)?
            }
            (2, 1) => {
                let r = self.value(*first).rows();
                let mut cols = 0;
                for p in parts {
                    let t = self.value(*p);
                    if !t.is_matrix() || t.rows() != r {
                        return Err(DiffError::shape("concat", self.value(*first), t));
                    }
                    cols += t.cols();
                }
                let mut v = Vec::with_capacity(r * cols);
                for i in 0..r {
                    for p in parts {
                        v.extend_from_slice(self.value(*p).row(i));
                    }
                }
                Tensor::new(vec![r, cols], v)?
            }
            _ => {
                return Err(DiffError::InvalidArgument(format!(
                    "concat axis {axis} for rank {rank}"
                )))
            }
        };
        self.push(
            "concat",
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let (r, c) = self.matrix("slice_rows", a)?;
        if start > end || end > r {
            return Err(DiffError::InvalidArgument(format!(
                "row slice {start}..{end} of {r} rows"
            )));
        }
        let values = self.value(a).values()[start * c..end * c].to_vec();
        let value = Tensor::new(vec![end - start, c], values)?;
        self.push("slice_rows", value, Op::SliceRows { x: a, start }, &[a])
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, DiffError> {
        let (r, c) = self.matrix("gather_rows", a)?;
        if let Some(bad) = index.iter().find(|&&i| i >= r) {
            return Err(DiffError::InvalidArgument(format!("row {bad} of {r}")));
        }
        let x = self.value(a);
        let mut values = Vec::with_capacity(index.len() * c);
        for &i in index {
            values.extend_from_slice(x.row(i));
        }
        let value = Tensor::new(vec![index.len(), c], values)?;
        self.push(
            "gather_rows",
            value,
            Op::GatherRows {
                x: a,
                index: index.to_vec(),
            },
            &[a],
        )
    }

    /// Picks matrix entries `(row, col)` into a vector.
    pub fn select(&mut self, a: Var, entries: &[(usize, usize)]) -> Result<Var, DiffError> {
        let (r, c) = self.matrix("select", a)?;
        if entries.iter().any(|&(i, j)| i >= r || j >= c) {
            return Err(DiffError::InvalidArgument("select out of range".into()));
        }
        let x = self.value(a);
        let value = Tensor::vector(entries.iter().map(|&(i, j)| x.get(i, j)).collect());
        self.push(
            "select",
            value,
            Op::Select {
                x: a,
                entries: entries.to_vec(),
            },
            &[a],
        )
    }

    /// `sum_k weights[k] * layers[k]` for constant layers.
    pub fn combine(&mut self, layers: Vec<Tensor>, weights: Var) -> Result<Var, DiffError> {
        let w = self.value(weights);
        if w.shape() != [layers.len()] || layers.is_empty() {
            return Err(DiffError::InvalidArgument(format!(
                "{} layers, weight shape {:?}",
                layers.len(),
                w.shape()
            )));
        }
        let shape = layers[0].shape().to_vec();
        if layers.iter().any(|l| l.shape() != shape.as_slice()) {
            return Err(DiffError::InvalidArgument("layers differ in shape".into()));
        }
        let mut out = vec![0.0; layers[0].numel()];
        for (layer, wk) in layers.iter().zip(w.values()) {
            for (o, v) in out.iter_mut().zip(layer.values()) {
                *o += wk * v;
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            "combine",
            value,
            Op::Combine { layers, weights },
            &[weights],
        )
    }

    /// Standardizes every row to zero mean and unit variance.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var, DiffError> {
        let (r, c) = self.matrix("layer_norm_rows", a)?;
        let x = self.value(a).values();
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mu) * inv;
            }
            inv_std.push(inv);
        }
        let value = Tensor::new(vec![r, c], out)?;
        self.push(
            "layer_norm_rows",
            value,
            Op::LayerNormRows { x: a, inv_std },
            &[a],
        )
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var, DiffError> {
        if c.shape() != self.shape(a) {
            return Err(DiffError::shape("mul_const", self.value(a), &c));
        }
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(c.values())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(c.shape().to_vec(), values)?;
        self.push("mul_const", value, Op::MulConst(a, c), &[a])
    }

    /// Elementwise sum with a constant tensor.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var, DiffError> {
        if c.shape() != self.shape(a) {
            return Err(DiffError::shape("add_const", self.value(a), c));
        }
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(c.values())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(c.shape().to_vec(), values)?;
        self.push("add_const", value, Op::AddConst(a), &[a])
    }

    /// Populates gradients of the scalar `root` with respect to every node
    /// that depends on a trainable leaf.
    pub fn backward(&mut self, root: Var) -> Result<(), DiffError> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(DiffError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gv = g.values();
        let mut send = |v: Var, values: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let shape = self.nodes[v.0].value.shape();
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, b) in acc.values_mut().iter_mut().zip(&values) {
                        *a += b;
                    }
                }
                slot @ None => {
                    *slot = Some(Tensor::new(shape.to_vec(), values).expect("gradient shape"));
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                send(*a, matmul_nt(gv, bv.values(), m, n, k));
                send(*b, matmul_tn(av.values(), gv, m, k, n));
            }
            Op::Transpose(a) => {
                send(*a, g.transpose().into_values());
            }
            Op::Add(a, b) => {
                send(*a, gv.to_vec());
                send(*b, gv.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, gv.to_vec());
                send(*b, gv.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                send(*a, gv.iter().zip(bv).map(|(g, y)| g * y).collect());
                send(*b, gv.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::AddRow(x, b) => {
                let c = self.value(*x).cols();
                send(*x, gv.to_vec());
                let mut db = vec![0.0; c];
                for (k, v) in gv.iter().enumerate() {
                    db[k % c] += v;
                }
                send(*b, db);
            }
            Op::MulRow(x, w) => {
                let xv = self.value(*x).values();
                let wv = self.value(*w).values();
                let c = wv.len();
                send(
                    *x,
                    gv.iter().enumerate().map(|(k, g)| g * wv[k % c]).collect(),
                );
                let mut dw = vec![0.0; c];
                for (k, g) in gv.iter().enumerate() {
                    dw[k % c] += g * xv[k];
                }
                send(*w, dw);
            }
            Op::Scale(a, f) => send(*a, gv.iter().map(|g| g * f).collect()),
            Op::AddScalar(a) => send(*a, gv.to_vec()),
            Op::Exp(a) => {
                let y = node.value.values();
                send(*a, gv.iter().zip(y).map(|(g, y)| g * y).collect());
            }
            Op::Log(a) => {
                let x = self.value(*a).values();
                send(*a, gv.iter().zip(x).map(|(g, x)| g / x).collect());
            }
            Op::Tanh(a) => {
                let y = node.value.values();
                send(
                    *a,
                    gv.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                );
            }
            Op::Pow(a, p) => {
                let x = self.value(*a).values();
                let d = |x: f64| {
                    if x > 0.0 {
                        p * x.powf(p - 1.0)
                    } else if *p == 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                };
                send(*a, gv.iter().zip(x).map(|(g, x)| g * d(*x)).collect());
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).values();
                send(
                    *a,
                    gv.iter()
                        .zip(x)
                        .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Softmax { x, groups } => {
                let y = node.value.values();
                let mut dx = vec![0.0; y.len()];
                for grp in 0..groups.count {
                    let dot: f64 = (0..groups.len)
                        .map(|k| groups.index(grp, k))
                        .map(|i| gv[i] * y[i])
                        .sum();
                    for k in 0..groups.len {
                        let i = groups.index(grp, k);
                        dx[i] = y[i] * (gv[i] - dot);
                    }
                }
                send(*x, dx);
            }
            Op::LogSumExpRows { x, mask } => {
                let xv = self.value(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let out = node.value.values();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let k = i * c + j;
                        if mask.as_ref().is_some_and(|m| m[k]) {
                            continue;
                        }
                        dx[k] = gv[i] * (xv.values()[k] - out[i]).exp();
                    }
                }
                send(*x, dx);
            }
            Op::NormalizeRows { x, norms } => {
                let y = node.value.values();
                let c = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for (i, n) in norms.iter().enumerate() {
                    let row = i * c..(i + 1) * c;
                    let dot: f64 = y[row.clone()]
                        .iter()
                        .zip(&gv[row.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    for k in row {
                        dx[k] = (gv[k] - y[k] * dot) / n;
                    }
                }
                send(*x, dx);
            }
            Op::Norm(a) => {
                let s = node.value.item();
                let x = self.value(*a).values();
                let gs = gv[0];
                send(
                    *a,
                    x.iter()
                        .map(|v| if s > 0.0 { gs * v / s } else { 0.0 })
                        .collect(),
                );
            }
            Op::Sum(a) => send(*a, vec![gv[0]; self.value(*a).numel()]),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                send(*a, vec![gv[0] / n as f64; n]);
            }
            Op::Concat { parts, axis } => {
                let total_cols = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let t = self.value(*p);
                    let piece = match (t.shape().len(), axis) {
                        (2, 1) => {
                            let (r, c) = (t.rows(), t.cols());
                            let mut v = Vec::with_capacity(r * c);
                            for i in 0..r {
                                v.extend_from_slice(
                                    &gv[i * total_cols + offset..i * total_cols + offset + c],
                                );
                            }
                            offset += c;
                            v
                        }
                        _ => {
                            let n = t.numel();
                            let v = gv[offset..offset + n].to_vec();
                            offset += n;
                            v
                        }
                    };
                    send(*p, piece);
                }
            }
            Op::SliceRows { x, start } => {
                let t = self.value(*x);
                let c = t.cols();
                let mut dx = vec![0.0; t.numel()];
                dx[start * c..start * c + gv.len()].copy_from_slice(gv);
                send(*x, dx);
            }
            Op::GatherRows { x, index } => {
                let t = self.value(*x);
                let c = t.cols();
                let mut dx = vec![0.0; t.numel()];
                for (k, &row) in index.iter().enumerate() {
                    for j in 0..c {
                        dx[row * c + j] += gv[k * c + j];
                    }
                }
                send(*x, dx);
            }
            Op::Select { x, entries } => {
                let t = self.value(*x);
                let c = t.cols();
                let mut dx = vec![0.0; t.numel()];
                for (k, &(i, j)) in entries.iter().enumerate() {
                    dx[i * c + j] += gv[k];
                }
                send(*x, dx);
            }
            Op::Combine { layers, weights } => {
                let dw = layers
                    .iter()
                    .map(|l| l.values().iter().zip(gv).map(|(a, b)| a * b).sum())
                    .collect();
                send(*weights, dw);
            }
            Op::LayerNormRows { x, inv_std } => {
                let y = node.value.values();
                let c = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for (i, inv) in inv_std.iter().enumerate() {
                    let row = i * c..(i + 1) * c;
                    let mean_g = gv[row.clone()].iter().sum::<f64>() / c as f64;
                    let mean_gy = gv[row.clone()]
                        .iter()
                        .zip(&y[row.clone()])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / c as f64;
                    for k in row {
                        dx[k] = inv * (gv[k] - mean_g - y[k] * mean_gy);
                    }
                }
                send(*x, dx);
            }
            Op::MulConst(a, c) => {
                send(*a, gv.iter().zip(c.values()).map(|(g, c)| g * c).collect());
            }
            Op::AddConst(a) => send(*a, gv.to_vec()),
        }
    }
}

/// `A * B` product of raw row-major buffers, exposed for value-level code.
pub fn matmul_values(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_nn(a, b, m, k, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).values(), &[0.5, 0.5]);

        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = g.softmax(x, 0).unwrap();
        let expect = [0.09003, 0.24473, 0.66524];
        for (a, b) in g.value(y).values().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-5);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts() {
        let mut g = Graph::new();
        let base = Tensor::from_rows(&[vec![1.0, -3.0, 2.5], vec![100.0, 101.0, 99.0]]).unwrap();
        let shifted = base.map(|v| v + 7.25);
        let a = g.constant(base);
        let b = g.constant(shifted);
        let sa = g.softmax(a, 1).unwrap();
        let sb = g.softmax(b, 1).unwrap();
        for r in 0..2 {
            let row = g.value(sa).row(r);
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            for (p, q) in row.iter().zip(g.value(sb).row(r)) {
                assert_abs_diff_eq!(*p, *q, epsilon = 1e-9);
            }
        }
        let cols = g.softmax(a, 0).unwrap();
        let t = g.value(cols).transpose();
        for r in 0..3 {
            assert_abs_diff_eq!(t.row(r).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn power_rule() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![3.0]), true);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().values(), &[6.0]);
    }

    #[test]
    fn backward_needs_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(g.backward(x), Err(DiffError::NonScalarRoot(_))));
    }

    #[test]
    fn forward_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 1.0]));
        assert!(matches!(g.log(x), Err(DiffError::LogNonPositive)));
        let big = g.constant(Tensor::vector(vec![1e3]));
        assert!(matches!(
            g.exp(big),
            Err(DiffError::NonFinite { op: "exp" })
        ));
        let m = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            g.matmul(m, m),
            Err(DiffError::ShapeMismatch { .. })
        ));
        assert!(g.add(x, m).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![2.0]));
        let x = g.leaf(Tensor::vector(vec![5.0]), true);
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().values(), &[2.0]);
    }
}
