//! Dense tensors on a reverse-mode differentiation tape.
//!
//! A [`Tape`] owns every tensor created during one forward pass. Operations
//! append nodes and record a backward closure; because nodes are appended in
//! dependency order, [`Tape::backward`] is a single reverse sweep that visits
//! each node exactly once and accumulates gradients additively into [`Grads`].
//!
//! Parameters live outside the tape in a [`params::ParamStore`] and are bound
//! as leaves per pass, so the tape can be dropped and rebuilt every step while
//! optimizer state persists.

mod conv;
mod ops;
mod sample;
mod scalar;

pub mod gradcheck;
pub mod params;

pub use scalar::Scalar;

use std::sync::Arc;

use params::ParamId;

/// Handle to a tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(u32);

impl TensorId {
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
}

type BackFn<S> = Box<dyn Fn(&[S], &mut Grads<S>)>;

struct Node<S: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
    back: Option<BackFn<S>>,
    param: Option<ParamId>,
}

/// Reverse-mode differentiation tape.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Per-node gradient buffers produced by [`Tape::backward`].
pub struct Grads<S: Scalar> {
    slots: Vec<Option<Vec<S>>>,
    lens: Vec<usize>,
}

impl<S: Scalar> Grads<S> {
    fn new(tape: &Tape<S>) -> Self {
        Grads {
            slots: (0..tape.nodes.len()).map(|_| None).collect(),
            lens: tape.nodes.iter().map(|n| n.data.len()).collect(),
        }
    }

    /// Gradient of a node, if any was accumulated.
    pub fn get(&self, id: TensorId) -> Option<&[S]> {
        self.slots[id.idx()].as_deref()
    }

    /// Mutable gradient buffer for a node, zero-initialized on first access.
    pub fn accum(&mut self, id: TensorId) -> &mut [S] {
        let slot = &mut self.slots[id.idx()];
        if slot.is_none() {
            *slot = Some(vec![S::zero(); self.lens[id.idx()]]);
        }
        slot.as_mut().unwrap()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.idx()].shape
    }

    pub fn data(&self, id: TensorId) -> &[S] {
        &self.nodes[id.idx()].data
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.idx()].data.len()
    }

    /// Scalar value of a 1-element tensor.
    pub fn value(&self, id: TensorId) -> S {
        let d = self.data(id);
        assert_eq!(d.len(), 1, "value: tensor has {} elements", d.len());
        d[0]
    }

    fn arc(&self, id: TensorId) -> Arc<Vec<S>> {
        Arc::clone(&self.nodes[id.idx()].data)
    }

    fn push_node(&mut self, shape: Vec<usize>, data: Arc<Vec<S>>, back: Option<BackFn<S>>, param: Option<ParamId>) -> TensorId {
        let numel: usize = shape.iter().product();
        assert_eq!(data.len(), numel, "tensor data length {} does not match shape {:?}", data.len(), shape);
        let id = TensorId(self.nodes.len() as u32);
        self.nodes.push(Node { shape, data, back, param });
        id
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<S>, back: impl Fn(&[S], &mut Grads<S>) + 'static) -> TensorId {
        self.push_node(shape, Arc::new(data), Some(Box::new(back)), None)
    }

    /// Leaf without gradient tracking semantics beyond accumulation.
    pub fn constant(&mut self, shape: &[usize], data: Vec<S>) -> TensorId {
        self.push_node(shape.to_vec(), Arc::new(data), None, None)
    }

    pub fn constant_from_f64(&mut self, shape: &[usize], data: &[f64]) -> TensorId {
        self.constant(shape, data.iter().map(|&x| S::from_f64(x)).collect())
    }

    pub fn scalar_input(&mut self, v: S) -> TensorId {
        self.constant(&[1], vec![v])
    }

    /// Leaf bound to a named parameter; its gradient is harvested after backward.
    pub fn leaf_param(&mut self, pid: ParamId, shape: &[usize], data: Vec<S>) -> TensorId {
        self.push_node(shape.to_vec(), Arc::new(data), None, Some(pid))
    }

    /// Reverse sweep from a scalar root. Nodes created after `root` are ignored.
    pub fn backward(&self, root: TensorId) -> Grads<S> {
        assert_eq!(self.numel(root), 1, "backward: root must be a scalar");
        let mut grads = Grads::new(self);
        grads.slots[root.idx()] = Some(vec![S::one()]);
        for idx in (0..=root.idx()).rev() {
            if self.nodes[idx].back.is_none() {
                continue;
            }
            let Some(g) = grads.slots[idx].take() else {
                continue;
            };
            if let Some(back) = &self.nodes[idx].back {
                back(&g, &mut grads);
            }
            grads.slots[idx] = Some(g);
        }
        grads
    }

    /// Parameter leaves found on the tape, in creation order.
    pub fn param_leaves(&self) -> Vec<(ParamId, TensorId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, TensorId(i as u32))))
            .collect()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_subexpression_accumulates() {
        // y = x*x + x*x must give dy/dx = 4x, i.e. the two uses sum.
        let mut t = Tape::<f64>::new();
        let x = t.constant(&[1], vec![3.0]);
        let a = t.mul(x, x);
        let b = t.mul(x, x);
        let y = t.add(a, b);
        let g = t.backward(y);
        assert_eq!(g.get(x).unwrap(), &[12.0]);

        // Duplicated-input construction for comparison.
        let mut t2 = Tape::<f64>::new();
        let x1 = t2.constant(&[1], vec![3.0]);
        let x2 = t2.constant(&[1], vec![3.0]);
        let a = t2.mul(x1, x1);
        let b = t2.mul(x2, x2);
        let y = t2.add(a, b);
        let g2 = t2.backward(y);
        let total = g2.get(x1).unwrap()[0] + g2.get(x2).unwrap()[0];
        assert_eq!(g.get(x).unwrap()[0], total);
    }

    #[test]
    fn backward_ignores_unrelated_nodes() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(&[1], vec![2.0]);
        let y = t.mul(x, x);
        let _unrelated = t.mul(y, y); // created after the root is irrelevant
        let g = t.backward(y);
        assert_eq!(g.get(x).unwrap(), &[4.0]);
    }

    #[test]
    #[should_panic(expected = "root must be a scalar")]
    fn backward_requires_scalar_root() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(&[2], vec![1.0, 2.0]);
        let y = t.relu(x);
        let _ = t.backward(y);
    }
}
