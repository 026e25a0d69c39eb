//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node holding its output value and whatever it needs
//! for the backward pass. Nodes are appended in execution order, so the
//! tape is topologically sorted by construction and `backward` walks it
//! once in reverse.

mod basic;
mod conv;
mod gemm;
mod loss;
mod pool;
mod sample;

pub use conv::conv_out_extent;
pub use loss::{kl_div, log_softmax_row, softmax_rows, PROB_EPS};
pub use sample::bilinear_at;

use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    WeightedSum(Var, Vec<T>),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SampleNorm { x: Var, inv_std: Vec<T> },
    Reshape(Var),
    Concat { a: Var, b: Var },
    Narrow { x: Var, start: usize },
    Dropout { x: Var, mask: Vec<T> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    DeformConv2d { x: Var, w: Var, b: Option<Var>, offsets: Var, mods: Var, geom: ConvGeom },
    Bilinear { feature: Var, coords: Var },
    AvgPool(Var),
    Softmax { x: Var, temperature: T },
    KlDistill { student: Var, teacher_probs: Vec<T>, student_probs: Vec<T>, temperature: T, scale: T },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T>, scale: T },
    SumSquares { xs: Vec<Var>, scale: T },
}

pub(crate) struct Node<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

/// Ordered record of executed operations. Confined to one thread.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it takes part in differentiation iff the tensor
    /// is marked `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Records a trainable leaf regardless of the tensor's flag.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), true)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::shape("constant", format!("{shape:?} vs {} values", data.len())));
        }
        Ok(self.push_leaf(shape.to_vec(), data, false))
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Vec<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { shape, value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let needs_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn op_inputs(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat { a, b } => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::WeightedSum(x, _)
            | Op::Relu(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Reshape(x)
            | Op::AvgPool(x) => vec![*x],
            Op::SampleNorm { x, .. } | Op::Narrow { x, .. } | Op::Dropout { x, .. } | Op::Softmax { x, .. } => vec![*x],
            Op::Linear { x, w, b } | Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::DeformConv2d { x, w, b, offsets, mods, .. } => {
                let mut v = vec![*x, *w, *offsets, *mods];
                v.extend(b);
                v
            }
            Op::Bilinear { feature, coords } => vec![*feature, *coords],
            Op::KlDistill { student, .. } => vec![*student],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::SumSquares { xs, .. } => xs.clone(),
        }
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every node
    /// that depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got shape {:?}", root.shape)));
        }
        let mut store = GradStore { slots: (0..self.nodes.len()).map(|_| None).collect() };
        if !root.needs_grad {
            return Ok(Grads { slots: store.slots });
        }
        store.slots[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = store.slots[i].take() else { continue };
            self.backward_node(i, &g, &mut store);
            store.slots[i] = Some(g);
        }
        Ok(Grads { slots: store.slots })
    }

    fn backward_node(&self, i: usize, g: &[T], store: &mut GradStore<T>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(dst) = store.slot(self, v) {
                        dst.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
                    }
                }
            }
            Op::Mul(a, b) => basic::mul_backward(self, *a, *b, g, store),
            Op::Scale(x, c) => {
                if let Some(dst) = store.slot(self, *x) {
                    dst.iter_mut().zip(g).for_each(|(d, &x)| *d += x * *c);
                }
            }
            Op::Sum(x) => {
                if let Some(dst) = store.slot(self, *x) {
                    dst.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::WeightedSum(x, w) => {
                if let Some(dst) = store.slot(self, *x) {
                    dst.iter_mut().zip(w).for_each(|(d, &wi)| *d += g[0] * wi);
                }
            }
            Op::Relu(x) => basic::relu_backward(self, *x, g, store),
            Op::Tanh(x) => basic::tanh_backward(self, *x, &node.value, g, store),
            Op::Sigmoid(x) => basic::sigmoid_backward(self, *x, &node.value, g, store),
            Op::SampleNorm { x, inv_std } => pool::sample_norm_backward(self, *x, &node.value, inv_std, g, store),
            Op::Reshape(x) => {
                if let Some(dst) = store.slot(self, *x) {
                    dst.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
                }
            }
            Op::Concat { a, b } => basic::concat_backward(self, *a, *b, g, store),
            Op::Narrow { x, start } => basic::narrow_backward(self, *x, *start, &node.shape, g, store),
            Op::Dropout { x, mask } => {
                if let Some(dst) = store.slot(self, *x) {
                    dst.iter_mut().zip(g.iter().zip(mask)).for_each(|(d, (&gi, &m))| *d += gi * m);
                }
            }
            Op::Linear { x, w, b } => basic::linear_backward(self, *x, *w, *b, g, store),
            Op::Conv2d { x, w, b, geom } => conv::conv2d_backward(self, *x, *w, *b, *geom, g, store),
            Op::DeformConv2d { x, w, b, offsets, mods, geom } => {
                sample::deform_backward(self, [*x, *w, *offsets, *mods], *b, *geom, g, store)
            }
            Op::Bilinear { feature, coords } => sample::bilinear_backward(self, *feature, *coords, g, store),
            Op::AvgPool(x) => pool::avg_pool_backward(self, *x, &node.shape, g, store),
            Op::Softmax { x, temperature } => loss::softmax_backward(self, *x, &node.value, *temperature, g, store),
            Op::KlDistill { student, teacher_probs, student_probs, temperature, scale } => {
                if let Some(dst) = store.slot(self, *student) {
                    let k = g[0] * *scale / *temperature;
                    for ((d, &q), &p) in dst.iter_mut().zip(student_probs).zip(teacher_probs) {
                        *d += k * (q - p);
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs, scale } => {
                if let Some(dst) = store.slot(self, *logits) {
                    let c = probs.len() / labels.len();
                    let k = g[0] * *scale;
                    for (row, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { T::one() } else { T::zero() };
                            dst[row * c + j] += k * (probs[row * c + j] - onehot);
                        }
                    }
                }
            }
            Op::SumSquares { xs, scale } => {
                let k = g[0] * *scale * T::of(2.0);
                for &v in xs {
                    let vals = &self.nodes[v.0].value;
                    if let Some(dst) = store.slot(self, v) {
                        dst.iter_mut().zip(vals).for_each(|(d, &x)| *d += k * x);
                    }
                }
            }
        }
    }
}

pub(crate) struct GradStore<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> GradStore<T> {
    /// Gradient accumulator for `v`, or `None` when `v` is not differentiable.
    pub(crate) fn slot(&mut self, tape: &Tape<T>, v: Var) -> Option<&mut [T]> {
        let node = &tape.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let len = node.value.len();
        Some(self.slots[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }
}

/// Result of a backward pass.
pub struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.slots.get(v.0).and_then(|s| s.as_deref())
    }

    /// Gradient for `v`, zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, tape: &Tape<T>, v: Var) -> Vec<T> {
        self.get(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); tape.value(v).len()])
    }

    /// Adds the gradient of `v` into `t`'s gradient buffer.
    pub fn accumulate_into(&self, tape: &Tape<T>, v: Var, t: &mut Tensor<T>) -> Result<()> {
        t.accumulate_grad(&self.get_or_zeros(tape, v))
    }
}

fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::shape(op, format!("expected rank {rank}, got shape {shape:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_fn(&[2, 3], |i| i as f64).with_grad());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap().with_grad());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_doubles_accumulated_grads() {
        let mut t = Tensor::new(&[3], vec![1.0f64, 2.0, 3.0]).unwrap().with_grad();
        let mut tape = Tape::new();
        let x = tape.leaf(&t);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        for _ in 0..2 {
            tape.backward(s).unwrap().accumulate_into(&tape, x, &mut t).unwrap();
        }
        assert_eq!(t.grad().unwrap(), &[4.0, 8.0, 12.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(&Tensor::zeros(&[2]).with_grad());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::ones(&[2]).with_grad());
        let c = tape.constant(&Tensor::ones(&[2]));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0]);
    }
}
