//! Operation tape and the reverse sweep.
//!
//! Every derivative rule is written in terms of tape operations, so the
//! gradient returned by [`Tape::grad_of`] with `create_graph = true` is an
//! ordinary differentiable [`Var`]. Rules for piecewise-linear operations
//! (rectifiers, pooling, dropout) multiply by a frozen mask, which is exact
//! almost everywhere.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub pad: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    MulConst(Var, Rc<Vec<T>>),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Recip(Var),
    Sum(Var),
    Broadcast(Var),
    SumRows(Var),
    ExpandRows(Var),
    ReduceChannels(Var),
    ExpandChannels(Var),
    Reshape(Var),
    Gather(Var, Rc<Vec<usize>>),
    Scatter(Var, Rc<Vec<usize>>),
    Concat(Vec<Var>),
    MatMul(Var, Var),
    Transpose(Var),
    Conv1d(Var, Var, ConvGeom),
    Conv1dBackInput(Var, Var, ConvGeom),
    Conv1dBackWeight(Var, Var, ConvGeom),
    Conv2d(Var, Var, ConvGeom),
    Conv2dBackInput(Var, Var, ConvGeom),
    Conv2dBackWeight(Var, Var, ConvGeom),
    LogSoftmax(Var),
}

impl<T> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![*a, *b],
            Conv1d(a, b, _) | Conv1dBackInput(a, b, _) | Conv1dBackWeight(a, b, _) => vec![*a, *b],
            Conv2d(a, b, _) | Conv2dBackInput(a, b, _) | Conv2dBackWeight(a, b, _) => vec![*a, *b],
            Affine(a, _)
            | MulConst(a, _)
            | Sigmoid(a)
            | Tanh(a)
            | Exp(a)
            | Log(a)
            | Sqrt(a)
            | Recip(a)
            | Sum(a)
            | Broadcast(a)
            | SumRows(a)
            | ExpandRows(a)
            | ReduceChannels(a)
            | ExpandChannels(a)
            | Reshape(a)
            | Gather(a, _)
            | Scatter(a, _)
            | Transpose(a)
            | LogSoftmax(a) => vec![*a],
            Concat(parts) => parts.clone(),
        }
    }
}

pub(crate) struct Node<T> {
    pub value: Rc<Tensor<T>>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Append-only record of a computation.
///
/// Operations take `&self`; the node list lives behind a `RefCell` so that
/// nested calls such as `t.relu(t.add(a, b)?)` compose without temporaries.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: Cell<bool>,
}

/// Result of [`Tape::grad_of`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Var>,
    /// `true` where the requested input does not influence the output; the
    /// matching entry of `grads` is a zero tensor.
    pub disconnected: Vec<bool>,
}

impl Gradients {
    pub fn any_disconnected(&self) -> bool {
        self.disconnected.iter().any(|d| *d)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that gradients can be taken with respect to.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that is never differentiated.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Copy of the value of a single-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Whether new operations record derivative information.
    pub fn is_recording(&self) -> bool {
        self.recording.get()
    }

    /// Run `f` with recording disabled; results are constants.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.recording.replace(false);
        let out = f();
        self.recording.set(prev);
        out
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<T>>> {
        self.nodes.borrow()
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.recording.get() && op.inputs().iter().any(|v| nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Gradient of the single-element `output` with respect to each of
    /// `inputs`.
    ///
    /// With `create_graph` the returned gradients are recorded on the tape
    /// and can be differentiated again; otherwise they are constants.
    pub fn grad_of(&self, output: Var, inputs: &[Var], create_graph: bool) -> Result<Gradients> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(crate::error::invalid(
                "grad_of",
                format!("output must hold one value, has {out_len}"),
            ));
        }
        let n = output.0 + 1;
        let (needed, ops) = {
            let nodes = self.nodes.borrow();
            let mut from_inputs = vec![false; n];
            for v in inputs {
                if v.0 < n {
                    from_inputs[v.0] = true;
                }
            }
            for i in 0..n {
                if !from_inputs[i] {
                    from_inputs[i] = nodes[i].op.inputs().iter().any(|j| from_inputs[j.0]);
                }
            }
            let mut to_output = vec![false; n];
            to_output[output.0] = true;
            for i in (0..n).rev() {
                if to_output[i] {
                    for j in nodes[i].op.inputs() {
                        to_output[j.0] = true;
                    }
                }
            }
            let needed: Vec<bool> = (0..n).map(|i| from_inputs[i] && to_output[i]).collect();
            let ops: Vec<Option<Op<T>>> = (0..n).map(|i| needed[i].then(|| nodes[i].op.clone())).collect();
            (needed, ops)
        };

        let prev = self.recording.replace(create_graph);
        let result = (|| {
            let mut grads: Vec<Option<Var>> = vec![None; n];
            if needed[output.0] {
                grads[output.0] = Some(self.constant(Tensor::full(vec![1], T::one())));
            }
            for i in (0..n).rev() {
                let Some(g) = grads[i] else { continue };
                let Some(op) = ops[i].as_ref() else { continue };
                if matches!(op, Op::Leaf) {
                    continue;
                }
                for (input, contrib) in self.backward_rule(Var(i), op, g)? {
                    if !needed[input.0] {
                        continue;
                    }
                    grads[input.0] = Some(match grads[input.0] {
                        Some(acc) => self.add(acc, contrib)?,
                        None => contrib,
                    });
                }
            }
            let mut out = Vec::with_capacity(inputs.len());
            let mut disconnected = Vec::with_capacity(inputs.len());
            for v in inputs {
                match grads.get(v.0).copied().flatten() {
                    Some(g) => {
                        out.push(g);
                        disconnected.push(false);
                    }
                    None => {
                        out.push(self.constant(Tensor::zeros(self.shape(*v))));
                        disconnected.push(true);
                    }
                }
            }
            Ok(Gradients {
                grads: out,
                disconnected,
            })
        })();
        self.recording.set(prev);
        result
    }

    fn backward_rule(&self, out: Var, op: &Op<T>, g: Var) -> Result<Vec<(Var, Var)>> {
        use Op::*;
        let one = T::one();
        Ok(match op {
            Leaf => vec![],
            Add(a, b) => vec![(*a, g), (*b, g)],
            Sub(a, b) => vec![(*a, g), (*b, self.affine(g, -one, T::zero())?)],
            Mul(a, b) => vec![(*a, self.mul(g, *b)?), (*b, self.mul(g, *a)?)],
            Affine(x, s) => vec![(*x, self.affine(g, *s, T::zero())?)],
            MulConst(x, m) => vec![(*x, self.mul_const(g, Rc::clone(m))?)],
            Sigmoid(x) => {
                let dy = self.mul(out, self.affine(out, -one, one)?)?;
                vec![(*x, self.mul(g, dy)?)]
            }
            Tanh(x) => {
                let dy = self.affine(self.mul(out, out)?, -one, one)?;
                vec![(*x, self.mul(g, dy)?)]
            }
            Exp(x) => vec![(*x, self.mul(g, out)?)],
            Log(x) => vec![(*x, self.mul(g, self.recip(*x)?)?)],
            Sqrt(x) => {
                let half = self.affine(self.recip(out)?, T::lit(0.5), T::zero())?;
                vec![(*x, self.mul(g, half)?)]
            }
            Recip(x) => {
                let dy = self.affine(self.mul(out, out)?, -one, T::zero())?;
                vec![(*x, self.mul(g, dy)?)]
            }
            Sum(x) => vec![(*x, self.broadcast(g, &self.shape(*x))?)],
            Broadcast(x) => vec![(*x, self.sum(g)?)],
            SumRows(x) => {
                let cols = self.shape(*x)[1];
                vec![(*x, self.expand_rows(g, cols)?)]
            }
            ExpandRows(x) => vec![(*x, self.sum_rows(g)?)],
            ReduceChannels(x) => vec![(*x, self.expand_channels(g, &self.shape(*x))?)],
            ExpandChannels(x) => vec![(*x, self.reduce_channels(g)?)],
            Reshape(x) => vec![(*x, self.reshape(g, &self.shape(*x))?)],
            Gather(x, idx) => vec![(*x, self.scatter(g, Rc::clone(idx), &self.shape(*x))?)],
            Scatter(x, idx) => vec![(*x, self.gather(g, Rc::clone(idx), &self.shape(*x))?)],
            Concat(parts) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let ch = self.shape(*p)[1];
                    res.push((*p, self.narrow(g, 1, offset, ch)?));
                    offset += ch;
                }
                res
            }
            MatMul(a, b) => vec![
                (*a, self.matmul(g, self.transpose(*b)?)?),
                (*b, self.matmul(self.transpose(*a)?, g)?),
            ],
            Transpose(x) => vec![(*x, self.transpose(g)?)],
            Conv1d(x, w, geom) => {
                let len = self.shape(*x)[2];
                let k = self.shape(*w)[2];
                vec![
                    (*x, self.conv1d_back_input(g, *w, geom.pad, len)?),
                    (*w, self.conv1d_back_weight(*x, g, geom.pad, k)?),
                ]
            }
            Conv1dBackInput(g0, w, geom) => {
                let k = self.shape(*w)[2];
                vec![
                    (*g0, self.conv1d(g, *w, geom.pad)?),
                    (*w, self.conv1d_back_weight(g, *g0, geom.pad, k)?),
                ]
            }
            Conv1dBackWeight(x, g0, geom) => {
                let len = self.shape(*x)[2];
                vec![
                    (*x, self.conv1d_back_input(*g0, g, geom.pad, len)?),
                    (*g0, self.conv1d(*x, g, geom.pad)?),
                ]
            }
            Conv2d(x, w, geom) => {
                let xs = self.shape(*x);
                let k = self.shape(*w)[2];
                vec![
                    (*x, self.conv2d_back_input(g, *w, geom.pad, (xs[2], xs[3]))?),
                    (*w, self.conv2d_back_weight(*x, g, geom.pad, k)?),
                ]
            }
            Conv2dBackInput(g0, w, geom) => {
                let k = self.shape(*w)[2];
                vec![
                    (*g0, self.conv2d(g, *w, geom.pad)?),
                    (*w, self.conv2d_back_weight(g, *g0, geom.pad, k)?),
                ]
            }
            Conv2dBackWeight(x, g0, geom) => {
                let xs = self.shape(*x);
                vec![
                    (*x, self.conv2d_back_input(*g0, g, geom.pad, (xs[2], xs[3]))?),
                    (*g0, self.conv2d(*x, g, geom.pad)?),
                ]
            }
            LogSoftmax(x) => {
                let cols = self.shape(*x)[1];
                let total = self.expand_rows(self.sum_rows(g)?, cols)?;
                let soft = self.exp(out)?;
                vec![(*x, self.sub(g, self.mul(soft, total)?)?)]
            }
        })
    }
}
