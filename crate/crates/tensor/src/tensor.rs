use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording operations on the tape.
///
/// Tensors produced inside the closure carry no gradient function, so
/// evaluation passes stay cheap and never retain intermediate buffers.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward closure: receives the upstream gradient, the forward output, and
/// a mask of which parents need a gradient. Returns one entry per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct GradFn {
    pub(crate) name: &'static str,
    pub(crate) parents: Vec<Tensor>,
    pub(crate) backward: BackwardFn,
}

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// Dense row-major `f64` tensor participating in a reverse-mode tape.
///
/// Cloning is cheap and aliases the same storage; parameters are leaves
/// created with [`Tensor::parameter`] and mutated in place by the optimizer.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name))
            .field("data", &preview)
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(TensorError::dimension(
            "tensor",
            format!("shape {shape:?} has a zero-sized dimension"),
        ));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(TensorError::dimension(
            "tensor",
            format!("shape {shape:?} holds {n} values but {len} were given"),
        ));
    }
    Ok(())
}

impl Tensor {
    /// Constant tensor (no gradient).
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// Trainable leaf tensor.
    pub fn parameter(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self::leaf(data, shape.to_vec(), true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::leaf(vec![0.0; n], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::leaf(vec![value; n], shape.to_vec(), false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(vec![value], vec![1], false)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::leaf(data, vec![n, n], false)
    }

    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn: None,
        }))
    }

    /// Builds the result of an operation, attaching a backward closure only
    /// when recording is enabled and some parent needs a gradient.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        name: &'static str,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let grad_fn = track.then(|| GradFn {
            name,
            parents,
            backward,
        });
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: track,
            grad_fn,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values. Intended for optimizers and for
    /// loading checkpoints into leaf parameters.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let data = self.0.data.borrow();
        assert_eq!(data.len(), 1, "item() on tensor with shape {:?}", self.0.shape);
        data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the values detached from the tape.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.to_vec(), self.0.shape.clone(), false)
    }

    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients are accumulated into `grad` of every reachable tensor that
    /// requires one; calling again without [`Tensor::zero_grad`] adds to them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Err(TensorError::contract(
                "backward",
                "loss does not depend on any tensor that requires grad",
            ));
        }

        let order = self.topological_order();
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(grad_out) = pending.remove(&node.key()) else {
                continue;
            };
            if let Some(gf) = &node.0.grad_fn {
                let needs: Vec<bool> = gf.parents.iter().map(|p| p.requires_grad()).collect();
                let grads = {
                    let out = node.0.data.borrow();
                    (gf.backward)(&grad_out, &out, &needs)
                };
                debug_assert_eq!(grads.len(), gf.parents.len(), "{}", gf.name);
                for ((parent, g), need) in gf.parents.iter().zip(grads).zip(needs) {
                    let (Some(g), true) = (g, need) else { continue };
                    debug_assert_eq!(g.len(), parent.numel(), "{} grad size", gf.name);
                    match pending.get_mut(&parent.key()) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(parent.key(), g);
                        }
                    }
                }
            }
            let mut stored = node.0.grad.borrow_mut();
            match stored.as_mut() {
                Some(acc) => acc.iter_mut().zip(&grad_out).for_each(|(a, b)| *a += b),
                None => *stored = Some(grad_out),
            }
        }
        Ok(())
    }

    /// Post-order over the tracked subgraph, parents before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::from_vec(vec![1.0, 2.0], &[3]).is_err());
        assert!(Tensor::from_vec(vec![], &[0]).is_err());
        let t = Tensor::from_vec(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let err = x.backward().unwrap_err();
        assert!(matches!(err, TensorError::Contract { .. }));
    }

    #[test]
    fn no_grad_suppresses_tape() {
        let x = Tensor::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let y = no_grad(|| x.square());
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
        assert!(x.square().requires_grad());
    }

    #[test]
    fn diamond_graph_accumulates_once_per_path() {
        // y = x*x + x  → dy/dx = 2x + 1
        let x = Tensor::parameter(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn repeated_backward_accumulates_on_leaves_only() {
        let x = Tensor::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.square().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }
}
