//! Named parameter storage with persistent Adam moments.

use std::collections::HashMap;

use thiserror::Error;

use super::{Grads, Scalar, Tape};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(u32);

impl ParamId {
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
}

pub struct Param<S: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub m: Vec<S>,
    pub v: Vec<S>,
}

/// All learned tensors of a model, addressable by name, plus optimizer state.
pub struct ParamStore<S: Scalar> {
    params: Vec<Param<S>>,
    index: HashMap<String, ParamId>,
    adam_step_count: u64,
}

#[derive(Debug, Error)]
pub enum AdamError {
    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("gradient for `{name}` has {got} elements, parameter has {want}")]
    ShapeMismatch { name: String, got: usize, want: usize },
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
            adam_step_count: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<S>) -> ParamId {
        let name = name.into();
        let numel: usize = shape.iter().product();
        assert_eq!(data.len(), numel, "parameter `{name}`: data length {} vs shape {:?}", data.len(), shape);
        assert!(!self.index.contains_key(&name), "duplicate parameter name `{name}`");
        let id = ParamId(self.params.len() as u32);
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            shape,
            m: vec![S::zero(); numel],
            v: vec![S::zero(); numel],
            data,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.idx()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.idx()]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len() as u32).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn adam_step_count(&self) -> u64 {
        self.adam_step_count
    }

    pub fn set_adam_step_count(&mut self, t: u64) {
        self.adam_step_count = t;
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// One Adam update. Every parameter must have a populated gradient.
    pub fn adam_step(&mut self, grads: &ParamGrads<S>, lr: f64, beta1: f64, beta2: f64) -> Result<(), AdamError> {
        const EPS: f64 = 1e-8;
        for (i, p) in self.params.iter().enumerate() {
            match &grads.slots[i] {
                None => return Err(AdamError::MissingGrad(p.name.clone())),
                Some(g) if g.len() != p.data.len() => {
                    return Err(AdamError::ShapeMismatch {
                        name: p.name.clone(),
                        got: g.len(),
                        want: p.data.len(),
                    })
                }
                Some(_) => {}
            }
        }
        self.adam_step_count += 1;
        let t = self.adam_step_count as i32;
        let b1 = S::from_f64(beta1);
        let b2 = S::from_f64(beta2);
        let one = S::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = S::from_f64(lr);
        let eps = S::from_f64(EPS);
        for (i, p) in self.params.iter_mut().enumerate() {
            let g = grads.slots[i].as_ref().unwrap();
            for j in 0..p.data.len() {
                let gj = g[j];
                p.m[j] = b1 * p.m[j] + (one - b1) * gj;
                p.v[j] = b2 * p.v[j] + (one - b2) * gj * gj;
                let mhat = p.m[j] / bc1;
                let vhat = p.v[j] / bc2;
                p.data[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
pub struct ParamGrads<S: Scalar> {
    slots: Vec<Option<Vec<S>>>,
    lens: Vec<usize>,
}

impl<S: Scalar> ParamGrads<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        ParamGrads {
            slots: store.params.iter().map(|_| None).collect(),
            lens: store.params.iter().map(|p| p.data.len()).collect(),
        }
    }

    /// Harvests parameter-leaf gradients from a finished backward pass,
    /// scaled by `scale` (for batch averaging).
    pub fn harvest(&mut self, tape: &Tape<S>, grads: &Grads<S>, scale: f64) {
        let s = S::from_f64(scale);
        for (pid, tid) in tape.param_leaves() {
            if let Some(g) = grads.get(tid) {
                let slot = self.accum(pid);
                for (d, &gi) in slot.iter_mut().zip(g) {
                    *d += gi * s;
                }
            }
        }
    }

    /// Adds another accumulator (used for ordered batch reduction).
    pub fn merge(&mut self, other: &ParamGrads<S>) {
        for (i, slot) in other.slots.iter().enumerate() {
            if let Some(g) = slot {
                let dst = self.accum(ParamId(i as u32));
                for (d, &gi) in dst.iter_mut().zip(g) {
                    *d += gi;
                }
            }
        }
    }

    pub fn accum(&mut self, id: ParamId) -> &mut [S] {
        let slot = &mut self.slots[id.idx()];
        if slot.is_none() {
            *slot = Some(vec![S::zero(); self.lens[id.idx()]]);
        }
        slot.as_mut().unwrap()
    }

    pub fn get(&self, id: ParamId) -> Option<&[S]> {
        self.slots[id.idx()].as_deref()
    }

    /// Explicitly zero-fills parameters that received no gradient, e.g. when
    /// a branch is disabled by configuration.
    pub fn fill_missing_with_zeros(&mut self) {
        for i in 0..self.slots.len() {
            if self.slots[i].is_none() {
                self.slots[i] = Some(vec![S::zero(); self.lens[i]]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("w", vec![1], vec![1.0]);
        let mut g = ParamGrads::new(&store);
        g.accum(p)[0] = 1.0;
        store.adam_step(&g, 0.1, 0.9, 0.999).unwrap();
        // Bias correction makes the first step almost exactly lr.
        let got = store.get(p).data[0];
        assert!((got - 0.9).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn zero_grad_leaves_fresh_param_unchanged() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("w", vec![2], vec![3.0, -2.0]);
        let mut g = ParamGrads::new(&store);
        g.fill_missing_with_zeros();
        store.adam_step(&g, 0.1, 0.9, 0.999).unwrap();
        assert_eq!(store.get(p).data, vec![3.0, -2.0]);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut store = ParamStore::<f64>::new();
        store.add("backbone.stem", vec![1], vec![0.0]);
        let g = ParamGrads::new(&store);
        let err = store.adam_step(&g, 0.1, 0.9, 0.999).unwrap_err();
        assert!(err.to_string().contains("backbone.stem"), "{err}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        // Minimize f(x) = x^2 from x = 5; expect |x| < 1e-3 within 500 steps.
        let mut store = ParamStore::<f64>::new();
        let p = store.add("x", vec![1], vec![5.0]);
        for _ in 0..500 {
            let x = store.get(p).data[0];
            let mut g = ParamGrads::new(&store);
            g.accum(p)[0] = 2.0 * x;
            store.adam_step(&g, 0.05, 0.9, 0.999).unwrap();
            if store.get(p).data[0].abs() < 1e-3 {
                break;
            }
        }
        assert!(store.get(p).data[0].abs() < 1e-3, "x = {}", store.get(p).data[0]);
    }
}
