//! Dense row-major tensors with tape-free reverse-mode autodiff.
//!
//! Every tensor produced by an operation on a gradient-tracking input keeps
//! a backward closure and handles to its parents. `backward` walks that DAG
//! once in reverse topological order, hands each closure its output
//! gradient and accumulates the results into the tracking leaves. Closures
//! are `FnOnce` and are dropped as they run, so a recorded graph can only be
//! differentiated once and its saved intermediates are freed afterwards.
//!
//! The scalar type is a type parameter: `f32` for training and inference,
//! `f64` for gradient checking. Mixing precisions inside one graph is
//! impossible by construction.

mod kernels;
mod ops;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use kernels::{mac_count, reset_mac_count};
pub use ops::broadcast_shape;

/// Scalar precision of a tensor graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Precision::Single => 0,
            Precision::Double => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Precision::Single),
            1 => Some(Precision::Double),
            _ => None,
        }
    }
}

pub trait Scalar:
    num_traits::Float
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const PRECISION: Precision;
    /// Finite-difference step used by `grad_check` unless overridden.
    const FD_STEP: f64;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;
    const FD_STEP: f64 = 1e-2;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;
    const FD_STEP: f64 = 1e-3;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Output gradient in, one optional gradient per parent out.
type BackwardFn<T> = Box<dyn FnOnce(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Rc<Vec<T>>,
    requires_grad: bool,
    leaf: bool,
    grad: RefCell<Option<Vec<T>>>,
    node: RefCell<Option<Node<T>>>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Reference-counted handle to an immutable tensor value.
pub struct Tensor<T: Scalar>(Rc<Inner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish_non_exhaustive()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn make(data: Rc<Vec<T>>, shape: Vec<usize>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Inner {
            id: next_id(),
            leaf: node.is_none(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: RefCell::new(node),
        }))
    }

    /// Constant (non-tracking) tensor.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::check_shape(&data, shape)?;
        Ok(Self::make(Rc::new(data), shape.to_vec(), false, None))
    }

    /// Gradient-tracking leaf.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::check_shape(&data, shape)?;
        Ok(Self::make(Rc::new(data), shape.to_vec(), true, None))
    }

    fn check_shape(data: &[T], shape: &[usize]) -> Result<()> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::shape("from_vec", &[data.len()], shape));
        }
        Ok(())
    }

    pub fn from_f64s(values: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(values.iter().map(|&v| T::from_f64(v)).collect(), shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::make(Rc::new(vec![value; numel_of(shape)]), shape.to_vec(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    /// Result of an operation. Records a graph node only when some parent
    /// tracks gradients.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: &[&Tensor<T>],
        backward: impl FnOnce(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let node = requires_grad.then(|| Node {
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward: Box::new(backward),
        });
        Self::make(Rc::new(data), shape, requires_grad, node)
    }

    /// Same buffer, new shape. Used by reshape to avoid copying.
    pub(crate) fn from_op_shared(
        data: Rc<Vec<T>>,
        shape: Vec<usize>,
        parent: &Tensor<T>,
        backward: impl FnOnce(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let requires_grad = parent.requires_grad();
        let node = requires_grad.then(|| Node {
            parents: vec![parent.clone()],
            backward: Box::new(backward),
        });
        Self::make(data, shape, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<T>> {
        Rc::clone(&self.0.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.leaf
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Constant copy sharing the same buffer, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::make(self.data_rc(), self.shape().to_vec(), false, None)
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    fn id(&self) -> u64 {
        self.0.id
    }

    /// Reverse-mode sweep from a scalar root. Populates `grad()` on every
    /// tracking leaf reachable from `self`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order()?;

        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            if t.is_leaf() {
                let mut slot = t.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    None => *slot = Some(g),
                }
                continue;
            }
            let node = t.0.node.borrow_mut().take().ok_or(Error::GraphConsumed)?;
            let parent_grads = (node.backward)(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.numel());
                match grads.get_mut(&p.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        grads.insert(p.id(), pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Tracking nodes reachable from `self`, parents before children.
    fn topo_order(&self) -> Result<Vec<Tensor<T>>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            let parents = if t.is_leaf() {
                Vec::new()
            } else {
                let node = t.0.node.borrow();
                let node = node.as_ref().ok_or(Error::GraphConsumed)?;
                node.parents.clone()
            };
            stack.push((t, true));
            for p in parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p, false));
                }
            }
        }
        Ok(order)
    }
}
