//! Define-by-run reverse-mode tape.
//!
//! Every operation appends a node holding its forward value and enough
//! information to compute its vector-Jacobian product. Nodes can only
//! reference earlier nodes, so reverse index order is a valid topological
//! order for [`Tape::backward`].
//!
//! A tape is built for a single training step and then dropped.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Built-in differentiable operations.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    MatMul,
    Transpose,
    /// Stride-1, zero-padded "same" convolution with an odd square kernel.
    Conv2d,
    Relu,
    Square,
    /// Full reduction to a scalar.
    Sum,
    Mean,
    L2Norm,
    /// Multiply by a constant.
    Scale(f64),
    /// `t * s` where `s` is a one-element tensor (differentiable in both).
    MulScalar,
    /// `[N, C] + [C]`, broadcasting over rows.
    AddBias,
    Reshape(Vec<usize>),
    /// Select one element by flat index, giving a scalar.
    Index(usize),
    Identity,
    /// Mean softmax cross-entropy of `[N, C]` logits against fixed labels.
    SoftmaxCrossEntropy(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Conv2d => "conv2d",
            Primitive::Relu => "relu",
            Primitive::Square => "square",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::L2Norm => "l2_norm",
            Primitive::Scale(_) => "scale",
            Primitive::MulScalar => "mul_scalar",
            Primitive::AddBias => "add_bias",
            Primitive::Reshape(_) => "reshape",
            Primitive::Index(_) => "index",
            Primitive::Identity => "identity",
            Primitive::SoftmaxCrossEntropy(_) => "softmax_cross_entropy",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::MatMul
            | Primitive::Conv2d
            | Primitive::MulScalar
            | Primitive::AddBias => 2,
            _ => 1,
        }
    }
}

/// Backward rule of a custom node: `(upstream, input values, output value) -> input adjoints`.
pub type BackwardRule = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor> + Send + Sync>;

enum Op {
    Leaf,
    Primitive(Primitive, Vec<NodeId>),
    StopGradient,
    Custom {
        inputs: Vec<NodeId>,
        backward: BackwardRule,
    },
}

struct Node {
    name: &'static str,
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push("leaf", value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Op name of a recorded node (`"leaf"`, `"matmul"`, or a custom name).
    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].name
    }

    /// Names of all recorded nodes, in order.
    pub fn op_names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.nodes.iter().map(|n| n.name)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { name, value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes.get(id.0).map(|n| &n.value).ok_or(Error::UnknownNode(id.0))
    }

    /// Evaluate `prim` on `inputs` and record it.
    pub fn record(&mut self, prim: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.len() != prim.arity() {
            return Err(Error::invalid(format!(
                "{} takes {} inputs, got {}",
                prim.name(),
                prim.arity(),
                inputs.len()
            )));
        }
        let values: Vec<&Tensor> = inputs.iter().map(|&i| self.check(i)).collect::<Result<_>>()?;
        let value = forward(&prim, &values)?;
        if !value.all_finite() {
            return Err(Error::NonFinite { op: prim.name() });
        }
        let name = prim.name();
        Ok(self.push(name, value, Op::Primitive(prim, inputs.to_vec())))
    }

    /// Record a node with a caller-supplied forward value and backward rule.
    ///
    /// The rule must return one adjoint per input, each shaped like that input.
    pub fn custom(
        &mut self,
        name: &'static str,
        inputs: &[NodeId],
        value: Tensor,
        backward: BackwardRule,
    ) -> Result<NodeId> {
        for &i in inputs {
            self.check(i)?;
        }
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push(
            name,
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        ))
    }

    /// Identity in the forward pass; passes a zero adjoint to `t`.
    pub fn stop_gradient(&mut self, t: NodeId) -> Result<NodeId> {
        let value = self.check(t)?.clone();
        Ok(self.push("stop_gradient", value, Op::StopGradient))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Transpose, &[a])
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId) -> Result<NodeId> {
        self.record(Primitive::Conv2d, &[input, kernel])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Relu, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Square, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Mean, &[a])
    }

    pub fn l2_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::L2Norm, &[a])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.record(Primitive::Scale(factor), &[a])
    }

    pub fn mul_scalar(&mut self, t: NodeId, s: NodeId) -> Result<NodeId> {
        self.record(Primitive::MulScalar, &[t, s])
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.record(Primitive::AddBias, &[x, bias])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.record(Primitive::Reshape(shape.to_vec()), &[a])
    }

    pub fn index(&mut self, a: NodeId, flat: usize) -> Result<NodeId> {
        self.record(Primitive::Index(flat), &[a])
    }

    pub fn identity(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Identity, &[a])
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.record(Primitive::SoftmaxCrossEntropy(labels.to_vec()), &[logits])
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Adjoints start at zero and accumulate by addition; nodes the loss does
    /// not depend on keep a zero adjoint.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.check(loss)?;
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut adjoints: Vec<Tensor> = self.nodes.iter().map(|n| Tensor::zeros(n.value.shape())).collect();
        let mut reached = vec![false; self.nodes.len()];
        adjoints[loss.0] = Tensor::ones(loss_value.shape());
        reached[loss.0] = true;

        for idx in (0..=loss.0).rev() {
            if !reached[idx] {
                continue;
            }
            let node = &self.nodes[idx];
            let (inputs, contributions): (&[NodeId], Vec<Tensor>) = match &node.op {
                Op::Leaf => continue,
                // the detached input is deliberately not marked as reached
                Op::StopGradient => continue,
                Op::Primitive(prim, inputs) => {
                    let values: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
                    let grads = vjp(prim, &adjoints[idx], &values, &node.value)?;
                    (inputs.as_slice(), grads)
                }
                Op::Custom { inputs, backward } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
                    let grads = backward(&adjoints[idx], &values, &node.value);
                    if grads.len() != inputs.len() {
                        return Err(Error::invalid(format!(
                            "custom op `{}` returned {} adjoints for {} inputs",
                            node.name,
                            grads.len(),
                            inputs.len()
                        )));
                    }
                    (inputs.as_slice(), grads)
                }
            };
            for (input, grad) in inputs.iter().zip(contributions) {
                let acc = &mut adjoints[input.0];
                acc.expect_same_shape(&grad, node.name)?;
                for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                    *a += g;
                }
                reached[input.0] = true;
            }
        }
        Ok(Gradients { adjoints })
    }
}

/// Adjoints of every node after [`Tape::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    adjoints: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Result<&Tensor> {
        self.adjoints.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    /// Like [`Gradients::get`] but panics on a foreign id.
    pub fn wrt(&self, id: NodeId) -> &Tensor {
        &self.adjoints[id.0]
    }

    pub fn len(&self) -> usize {
        self.adjoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjoints.is_empty()
    }
}

fn forward(prim: &Primitive, v: &[&Tensor]) -> Result<Tensor> {
    let op = prim.name();
    match prim {
        Primitive::Add => v[0].add(v[1]),
        Primitive::Sub => v[0].sub(v[1]),
        Primitive::Mul => v[0].mul(v[1]),
        Primitive::MatMul => tensor::matmul(v[0], v[1]),
        Primitive::Transpose => tensor::transpose(v[0]),
        Primitive::Conv2d => tensor::conv2d(v[0], v[1]),
        Primitive::Relu => Ok(v[0].map(|x| x.max(0.0))),
        Primitive::Square => Ok(v[0].map(|x| x * x)),
        Primitive::Sum => Ok(Tensor::scalar(v[0].sum())),
        Primitive::Mean => {
            if v[0].is_empty() {
                return Err(Error::invalid("mean of an empty tensor"));
            }
            Ok(Tensor::scalar(v[0].sum() / v[0].len() as f64))
        }
        Primitive::L2Norm => Ok(Tensor::scalar(v[0].norm_l2())),
        Primitive::Scale(c) => Ok(v[0].scale(*c)),
        Primitive::MulScalar => {
            let s = scalar_operand(v[1], op, v[0])?;
            Ok(v[0].map(|x| x * s))
        }
        Primitive::AddBias => {
            let cols = bias_cols(v[0], v[1])?;
            let mut out = v[0].clone();
            for row in out.data_mut().chunks_mut(cols) {
                for (o, b) in row.iter_mut().zip(v[1].data()) {
                    *o += b;
                }
            }
            Ok(out)
        }
        Primitive::Reshape(shape) => {
            let n: usize = shape.iter().product();
            if n != v[0].len() {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: v[0].shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            v[0].reshape(shape)
        }
        Primitive::Index(i) => v[0]
            .data()
            .get(*i)
            .map(|&x| Tensor::scalar(x))
            .ok_or_else(|| Error::invalid(format!("index {i} out of range for shape {:?}", v[0].shape()))),
        Primitive::Identity => Ok(v[0].clone()),
        Primitive::SoftmaxCrossEntropy(labels) => {
            let probs = softmax_rows(v[0], labels)?;
            let classes = v[0].shape()[1];
            let n = labels.len() as f64;
            let nll: f64 = labels
                .iter()
                .enumerate()
                .map(|(r, &c)| -probs[r * classes + c].max(f64::MIN_POSITIVE).ln())
                .sum();
            Ok(Tensor::scalar(nll / n))
        }
    }
}

fn vjp(prim: &Primitive, up: &Tensor, v: &[&Tensor], out: &Tensor) -> Result<Vec<Tensor>> {
    Ok(match prim {
        Primitive::Add => vec![up.clone(), up.clone()],
        Primitive::Sub => vec![up.clone(), up.scale(-1.0)],
        Primitive::Mul => vec![up.mul(v[1])?, up.mul(v[0])?],
        Primitive::MatMul => {
            let (da, db) = matmul_vjp(up, v[0], v[1])?;
            vec![da, db]
        }
        Primitive::Transpose => vec![tensor::transpose(up)?],
        Primitive::Conv2d => {
            let (di, dk) = tensor::conv2d_vjp(up, v[0], v[1])?;
            vec![di, dk]
        }
        Primitive::Relu => vec![up.zip_map(v[0], "relu", |u, x| if x > 0.0 { u } else { 0.0 })?],
        Primitive::Square => vec![up.zip_map(v[0], "square", |u, x| 2.0 * x * u)?],
        Primitive::Sum => {
            let u = up.item()?;
            vec![Tensor::full(v[0].shape(), u)]
        }
        Primitive::Mean => {
            let u = up.item()? / v[0].len() as f64;
            vec![Tensor::full(v[0].shape(), u)]
        }
        Primitive::L2Norm => {
            let u = up.item()?;
            let norm = out.item()?;
            if norm == 0.0 {
                vec![Tensor::zeros(v[0].shape())]
            } else {
                vec![v[0].scale(u / norm)]
            }
        }
        Primitive::Scale(c) => vec![up.scale(*c)],
        Primitive::MulScalar => {
            let s = v[1].item()?;
            let ds = up.dot(v[0])?;
            vec![up.scale(s), Tensor::full(v[1].shape(), ds)]
        }
        Primitive::AddBias => {
            let cols = v[1].len();
            let mut db = vec![0.0; cols];
            for row in up.data().chunks(cols) {
                for (d, u) in db.iter_mut().zip(row) {
                    *d += u;
                }
            }
            vec![up.clone(), Tensor::new(v[1].shape().to_vec(), db)?]
        }
        Primitive::Reshape(_) => vec![up.reshape(v[0].shape())?],
        Primitive::Index(i) => {
            let mut g = Tensor::zeros(v[0].shape());
            g.data_mut()[*i] = up.item()?;
            vec![g]
        }
        Primitive::Identity => vec![up.clone()],
        Primitive::SoftmaxCrossEntropy(labels) => {
            let mut probs = softmax_rows(v[0], labels)?;
            let classes = v[0].shape()[1];
            let scale = up.item()? / labels.len() as f64;
            for (r, &c) in labels.iter().enumerate() {
                probs[r * classes + c] -= 1.0;
            }
            for p in probs.iter_mut() {
                *p *= scale;
            }
            vec![Tensor::new(v[0].shape().to_vec(), probs)?]
        }
    })
}

/// Vector-Jacobian product of `a @ b` for output adjoint `up`.
pub fn matmul_vjp(up: &Tensor, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = tensor::matmul(up, &tensor::transpose(b)?)?;
    let db = tensor::matmul(&tensor::transpose(a)?, up)?;
    Ok((da, db))
}

fn scalar_operand(s: &Tensor, op: &'static str, t: &Tensor) -> Result<f64> {
    if s.len() != 1 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: s.shape().to_vec(),
        });
    }
    s.item()
}

fn bias_cols(x: &Tensor, bias: &Tensor) -> Result<usize> {
    match (x.shape(), bias.shape()) {
        ([_, c], [b]) if c == b => Ok(*c),
        _ => Err(Error::ShapeMismatch {
            op: "add_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        }),
    }
}

fn softmax_rows(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let (rows, classes) = match logits.shape() {
        [r, c] if *r == labels.len() && *c > 0 => (*r, *c),
        s => {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![labels.len()],
            })
        }
    };
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut probs = logits.data().to_vec();
    for row in probs.chunks_mut(classes).take(rows) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for p in row.iter_mut() {
            *p = (*p - max).exp();
            total += *p;
        }
        for p in row.iter_mut() {
            *p /= total;
        }
    }
    Ok(probs)
}
