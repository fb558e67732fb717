//! Minimal reverse-mode differentiation over a closed set of primitives.
//!
//! A [`Tape`] records primitive applications in execution order; every node's
//! inputs precede it. [`Tape::backward`] consumes the tape and replays the
//! vector-Jacobian products in reverse, accumulating cotangents of fan-out
//! nodes by addition in a fixed (tape) order, so identical graphs give
//! bit-identical gradients.
//!
//! Each primitive's backward delegates to the standalone backward of the
//! corresponding layer, warp or loss function.

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, FeatureMap, GridImage};
use crate::losses;
use crate::net::layers::{self, ConvShape};
use crate::real::Real;
use crate::warp::{warp_map, warp_map_backward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value<T> {
    Map(FeatureMap<T>),
    Flat(Vec<T>),
    Scalar(T),
}

impl<T: Real> Value<T> {
    pub fn as_map(&self) -> Option<&FeatureMap<T>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_flat(&self) -> Option<&[T]> {
        match self {
            Value::Flat(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_scalar(&self) -> Option<T> {
        match self {
            Value::Scalar(s) => Some(*s),
            _ => None,
        }
    }

    fn zeros_like(&self) -> Value<T> {
        match self {
            Value::Map(m) => Value::Map(FeatureMap::zeros(m.geom(), m.channels())),
            Value::Flat(v) => Value::Flat(vec![T::zero(); v.len()]),
            Value::Scalar(_) => Value::Scalar(T::zero()),
        }
    }

    fn values(&self) -> &[T] {
        match self {
            Value::Map(m) => m.data(),
            Value::Flat(v) => v,
            Value::Scalar(s) => std::slice::from_ref(s),
        }
    }

    fn add_assign(&mut self, other: Value<T>) {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => *a += b,
            (Value::Flat(a), Value::Flat(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (Value::Map(a), Value::Map(b)) => a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y),
            _ => unreachable!("cotangent kinds always match their node"),
        }
    }
}

/// The closed primitive registry.
#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Parameter,
    Conv { input: NodeId, weight: NodeId, bias: NodeId, shape: ConvShape },
    LeakyRelu { input: NodeId, slope: T },
    Upsample { input: NodeId },
    Concat { inputs: Vec<NodeId> },
    Warp { source: NodeId, field: NodeId },
    Mse { target: GridImage<T>, input: NodeId },
    LocalCc { target: GridImage<T>, input: NodeId, window: usize },
    Smoothness { field: NodeId },
    SegLoss { target: FeatureMap<T>, input: NodeId },
    SumSquares { input: NodeId },
    Scale { input: NodeId, factor: T },
    Add { a: NodeId, b: NodeId },
}

struct Node<T> {
    op: Op<T>,
    value: Value<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar output with respect to every parameter node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: Vec<(NodeId, Value<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Value<T>> {
        self.params.iter().find(|(n, _)| *n == id).map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Value<T>)> {
        self.params.iter().map(|(n, v)| (*n, v))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Value<T> {
        &self.nodes[id.0].value
    }

    pub fn map(&self, id: NodeId) -> Result<&FeatureMap<T>> {
        self.value(id).as_map().ok_or_else(|| Error::ShapeMismatch(format!("node {} is not a feature map", id.0)))
    }

    pub fn scalar(&self, id: NodeId) -> Result<T> {
        self.value(id).as_scalar().ok_or_else(|| Error::ShapeMismatch(format!("node {} is not a scalar", id.0)))
    }

    fn flat(&self, id: NodeId) -> Result<&[T]> {
        self.value(id).as_flat().ok_or_else(|| Error::ShapeMismatch(format!("node {} is not a flat tensor", id.0)))
    }

    fn push(&mut self, op: Op<T>, value: Value<T>, inputs: &[NodeId]) -> NodeId {
        let needs_grad = matches!(op, Op::Parameter) || inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Value<T>) -> NodeId {
        self.push(Op::Constant, value, &[])
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn parameter(&mut self, value: Value<T>) -> NodeId {
        self.push(Op::Parameter, value, &[])
    }

    pub fn conv(&mut self, input: NodeId, weight: NodeId, bias: NodeId, shape: ConvShape) -> Result<NodeId> {
        let out = layers::conv_forward(self.map(input)?, self.flat(weight)?, self.flat(bias)?, &shape)?;
        Ok(self.push(Op::Conv { input, weight, bias, shape }, Value::Map(out), &[input, weight, bias]))
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: T) -> Result<NodeId> {
        let out = layers::leaky_relu(self.map(input)?, slope);
        Ok(self.push(Op::LeakyRelu { input, slope }, Value::Map(out), &[input]))
    }

    pub fn upsample(&mut self, input: NodeId) -> Result<NodeId> {
        let out = layers::upsample2x(self.map(input)?);
        Ok(self.push(Op::Upsample { input }, Value::Map(out), &[input]))
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let parts = inputs.iter().map(|&i| self.map(i)).collect::<Result<Vec<_>>>()?;
        let out = layers::concat(&parts)?;
        Ok(self.push(Op::Concat { inputs: inputs.to_vec() }, Value::Map(out), inputs))
    }

    /// Warps every channel of `source` by the displacement held in `field`.
    pub fn warp(&mut self, source: NodeId, field: NodeId) -> Result<NodeId> {
        let u = DisplacementField::from_map(self.map(field)?.clone())?;
        let out = warp_map(self.map(source)?, &u)?;
        Ok(self.push(Op::Warp { source, field }, Value::Map(out), &[source, field]))
    }

    pub fn mse(&mut self, target: &GridImage<T>, input: NodeId) -> Result<NodeId> {
        let w = GridImage::from_map(self.map(input)?.clone())?;
        let v = losses::mse(target, &w)?;
        Ok(self.push(Op::Mse { target: target.clone(), input }, Value::Scalar(v), &[input]))
    }

    /// Local cross-correlation (a similarity, not a loss: negate with [`Tape::scale`]).
    pub fn local_cc(&mut self, target: &GridImage<T>, input: NodeId, window: usize) -> Result<NodeId> {
        let w = GridImage::from_map(self.map(input)?.clone())?;
        let v = losses::local_cc(target, &w, window)?;
        Ok(self.push(Op::LocalCc { target: target.clone(), input, window }, Value::Scalar(v), &[input]))
    }

    pub fn smoothness(&mut self, field: NodeId) -> Result<NodeId> {
        let u = DisplacementField::from_map(self.map(field)?.clone())?;
        let v = losses::smoothness(&u);
        Ok(self.push(Op::Smoothness { field }, Value::Scalar(v), &[field]))
    }

    pub fn seg_loss(&mut self, target: &FeatureMap<T>, input: NodeId) -> Result<NodeId> {
        let v = losses::seg_loss_maps(target, self.map(input)?)?;
        Ok(self.push(Op::SegLoss { target: target.clone(), input }, Value::Scalar(v), &[input]))
    }

    pub fn sum_squares(&mut self, input: NodeId) -> Result<NodeId> {
        let v = self.value(input).values().iter().map(|&x| x * x).sum();
        Ok(self.push(Op::SumSquares { input }, Value::Scalar(v), &[input]))
    }

    pub fn scale(&mut self, input: NodeId, factor: T) -> Result<NodeId> {
        let v = self.scalar(input)? * factor;
        Ok(self.push(Op::Scale { input, factor }, Value::Scalar(v), &[input]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.scalar(a)? + self.scalar(b)?;
        Ok(self.push(Op::Add { a, b }, Value::Scalar(v), &[a, b]))
    }

    /// Reverse pass from a scalar node. Unused parameters get exact zeros.
    pub fn backward(self, output: NodeId) -> Result<Gradients<T>> {
        if self.nodes[output.0].value.as_scalar().is_none() {
            return Err(Error::ShapeMismatch("backward needs a scalar output".into()));
        }
        let mut cot: Vec<Option<Value<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        cot[output.0] = Some(Value::Scalar(T::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = cot[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Parameter) {
                cot[idx] = Some(g);
                continue;
            }
            for (input, contribution) in self.vjp(idx, &g)? {
                match &mut cot[input.0] {
                    Some(acc) => acc.add_assign(contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Parameter))
            .map(|(i, n)| (NodeId(i), cot[i].take().unwrap_or_else(|| n.value.zeros_like())))
            .collect();
        Ok(Gradients { params })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Cotangent contributions of node `idx` to its inputs, in input order.
    fn vjp(&self, idx: usize, g: &Value<T>) -> Result<Vec<(NodeId, Value<T>)>> {
        let scalar = |v: &Value<T>| v.as_scalar().expect("scalar cotangent");
        fn map<T: Real>(v: &Value<T>) -> &FeatureMap<T> {
            v.as_map().expect("map cotangent")
        }
        let mut out = Vec::new();
        match &self.nodes[idx].op {
            Op::Constant | Op::Parameter => {}
            Op::Conv { input, weight, bias, shape } => {
                let grads = layers::conv_backward(
                    self.map(*input)?,
                    self.flat(*weight)?,
                    self.flat(*bias)?,
                    shape,
                    map(g),
                    self.wants(*input),
                )?;
                if let Some(gi) = grads.input {
                    out.push((*input, Value::Map(gi)));
                }
                out.push((*weight, Value::Flat(grads.weight)));
                out.push((*bias, Value::Flat(grads.bias)));
            }
            Op::LeakyRelu { input, slope } => {
                out.push((*input, Value::Map(layers::leaky_relu_backward(self.map(*input)?, *slope, map(g)))));
            }
            Op::Upsample { input } => {
                out.push((*input, Value::Map(layers::upsample2x_backward(self.map(*input)?.geom(), map(g)))));
            }
            Op::Concat { inputs } => {
                let channels: Vec<usize> =
                    inputs.iter().map(|&i| self.map(i).map(|m| m.channels())).collect::<Result<_>>()?;
                for (&i, part) in inputs.iter().zip(layers::concat_backward(&channels, map(g))) {
                    out.push((i, Value::Map(part)));
                }
            }
            Op::Warp { source, field } => {
                let u = DisplacementField::from_map(self.map(*field)?.clone())?;
                let (g_src, g_u) = warp_map_backward(self.map(*source)?, &u, map(g))?;
                out.push((*source, Value::Map(g_src)));
                out.push((*field, Value::Map(g_u.into_map())));
            }
            Op::Mse { target, input } => {
                let w = GridImage::from_map(self.map(*input)?.clone())?;
                let grad = losses::mse_backward(target, &w, scalar(g))?;
                out.push((*input, Value::Map(grad.into_map())));
            }
            Op::LocalCc { target, input, window } => {
                let w = GridImage::from_map(self.map(*input)?.clone())?;
                let grad = losses::local_cc_backward(target, &w, *window, scalar(g))?;
                out.push((*input, Value::Map(grad.into_map())));
            }
            Op::Smoothness { field } => {
                let u = DisplacementField::from_map(self.map(*field)?.clone())?;
                out.push((*field, Value::Map(losses::smoothness_backward(&u, scalar(g)).into_map())));
            }
            Op::SegLoss { target, input } => {
                let grad = losses::seg_loss_backward_maps(target, self.map(*input)?, scalar(g))?;
                out.push((*input, Value::Map(grad)));
            }
            Op::SumSquares { input } => {
                let s = T::lit(2.0) * scalar(g);
                let grad = match self.value(*input) {
                    Value::Map(m) => Value::Map(FeatureMap::from_raw(
                        m.geom(),
                        m.channels(),
                        m.data().iter().map(|&x| s * x).collect(),
                    )),
                    Value::Flat(v) => Value::Flat(v.iter().map(|&x| s * x).collect()),
                    Value::Scalar(x) => Value::Scalar(s * *x),
                };
                out.push((*input, grad));
            }
            Op::Scale { input, factor } => out.push((*input, Value::Scalar(scalar(g) * *factor))),
            Op::Add { a, b } => {
                out.push((*a, Value::Scalar(scalar(g))));
                out.push((*b, Value::Scalar(scalar(g))));
            }
        }
        Ok(out.into_iter().filter(|(id, _)| self.wants(*id)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;

    fn geom(d: &[usize]) -> GridGeometry {
        GridGeometry::new(d).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient_is_2x() {
        let mut tape = Tape::<f64>::new();
        let x = tape.parameter(Value::Flat(vec![1.0, -2.0, 0.5]));
        let loss = tape.sum_squares(x).unwrap();
        assert_eq!(tape.scalar(loss).unwrap(), 5.25);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().as_flat().unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = 3x + 5x
        let mut tape = Tape::<f64>::new();
        let x = tape.parameter(Value::Scalar(2.0));
        let a = tape.scale(x, 3.0).unwrap();
        let b = tape.scale(x, 5.0).unwrap();
        let loss = tape.add(a, b).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().as_scalar(), Some(8.0));
    }

    #[test]
    fn unused_and_constant_paths_give_zero() {
        let mut tape = Tape::<f64>::new();
        let used = tape.parameter(Value::Scalar(1.5));
        let unused = tape.parameter(Value::Flat(vec![1.0, 2.0]));
        let c = tape.constant(Value::Scalar(4.0));
        let cc = tape.sum_squares(c).unwrap();
        let loss = tape.add(used, cc).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).unwrap().as_flat().unwrap(), &[0.0, 0.0]);
        assert_eq!(grads.get(used).unwrap().as_scalar(), Some(1.0));

        // a constant output: the parameter does not influence it
        let mut tape = Tape::<f64>::new();
        let p = tape.parameter(Value::Scalar(1.0));
        let c = tape.constant(Value::Scalar(3.0));
        let out = tape.scale(c, 2.0).unwrap();
        let grads = tape.backward(out).unwrap();
        assert_eq!(grads.get(p).unwrap().as_scalar(), Some(0.0));
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.parameter(Value::Map(FeatureMap::zeros(geom(&[2, 2]), 1)));
        assert!(tape.backward(x).is_err());
    }
}
