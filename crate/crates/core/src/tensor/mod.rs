//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every operation evaluates eagerly and, when any input participates in
//! gradient tracking, records itself on a tape (the `op` link of the output).
//! Calling [`Tensor::backward`] on a scalar walks that tape in reverse
//! topological order and accumulates gradients on the `requires_grad` leaves.
//!
//! Tensors are immutable after construction except for gradient accumulation,
//! so a recorded graph is confined to one logical thread (`Tensor` is
//! intentionally `!Send`); independent graphs can run on separate threads.

mod ops;

pub use ops::{glu, Pointwise};

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Gradient rule of a recorded operation. Receives the parent tensors, the
/// forward output values and the incoming gradient; returns one gradient per
/// parent (`None` for parents that do not require one).
pub(crate) type BackwardFn = Box<dyn Fn(&[Tensor], &[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct Op {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Option<Op>,
}

/// A dense n-dimensional array of `f64` values in row-major order.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_shape(shape: &[usize], values: &[f64]) {
    let n: usize = shape.iter().product();
    assert_eq!(
        n,
        values.len(),
        "shape {:?} does not match {} values",
        shape,
        values.len()
    );
}

impl Tensor {
    fn construct(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Tensor {
        check_shape(&shape, &values);
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values,
                requires_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    /// Constant leaf: no gradient is ever tracked through it.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Tensor {
        Tensor::construct(shape.to_vec(), values, false, None)
    }

    /// Trainable leaf: gradients accumulate here after `backward`.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Tensor {
        Tensor::construct(shape.to_vec(), values, true, None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![v; n])
    }

    /// n-by-n identity matrix.
    pub fn eye(n: usize) -> Tensor {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        Tensor::new(&[n, n], v)
    }

    /// Internal constructor for derived nodes. Drops the tape when no parent
    /// requires a gradient, so frozen subgraphs cost nothing to record.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires = parents.iter().any(|p| p.requires_grad());
        if requires {
            Tensor::construct(shape, values, true, Some(Op { parents, backward }))
        } else {
            Tensor::construct(shape, values, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.inner.values
    }

    pub fn len(&self) -> usize {
        self.inner.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.values.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.values[0]
    }

    /// Number of rows / columns of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape().len(), 2, "rows() on shape {:?}", self.shape());
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape().len(), 2, "cols() on shape {:?}", self.shape());
        self.shape()[1]
    }

    /// Accumulated gradient, if `backward` has reached this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// A constant leaf carrying the same values; gradients stop here.
    pub fn detach(&self) -> Tensor {
        Tensor::new(&self.inner.shape, self.inner.values.clone())
    }

    /// Reverse-mode sweep from a scalar output. Populates `grad` on every
    /// reachable `requires_grad` leaf; repeated calls accumulate until
    /// [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape().to_vec(),
            });
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Collect the grad-requiring subgraph. Node ids grow monotonically at
        // construction, so descending id order is a valid reverse topological
        // order.
        let mut order: Vec<Rc<Inner>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<Rc<Inner>> = vec![Rc::clone(&self.inner)];
        seen.insert(self.inner.id);
        while let Some(node) = stack.pop() {
            if let Some(op) = &node.op {
                for p in &op.parents {
                    if p.requires_grad() && seen.insert(p.inner.id) {
                        stack.push(Rc::clone(&p.inner));
                    }
                }
            }
            order.push(node);
        }
        order.sort_by(|a, b| b.id.cmp(&a.id));

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.inner.id, vec![1.0]);

        for node in &order {
            let Some(g) = grads.remove(&node.id) else {
                continue;
            };
            match &node.op {
                Some(op) => {
                    let parent_grads = (op.backward)(&op.parents, &node.values, &g);
                    debug_assert_eq!(parent_grads.len(), op.parents.len());
                    for (parent, pg) in op.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.len());
                        match grads.entry(parent.inner.id) {
                            std::collections::hash_map::Entry::Occupied(mut e) => {
                                for (a, b) in e.get_mut().iter_mut().zip(&pg) {
                                    *a += b;
                                }
                            }
                            std::collections::hash_map::Entry::Vacant(e) => {
                                e.insert(pg);
                            }
                        }
                    }
                }
                None => {
                    // Leaf: fold into the persistent gradient slot.
                    let mut slot = node.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                *a += b;
                            }
                        }
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}

/// Relative error between an autodiff gradient entry and its finite-difference
/// estimate. The `1e-6` floor keeps round-off noise on near-zero gradients
/// from dominating the ratio.
fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

fn central_difference<F>(f: &F, params: &[Tensor], pi: usize, ei: usize, step: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let eval = |delta: f64| -> Result<f64> {
        let mut perturbed: Vec<Tensor> = params.to_vec();
        let mut values = params[pi].values().to_vec();
        values[ei] += delta;
        perturbed[pi] = Tensor::param(params[pi].shape(), values);
        Ok(f(&perturbed)?.item())
    };
    Ok((eval(step)? - eval(-step)?) / (2.0 * step))
}

/// Compare the autodiff gradient of `f` against central finite differences at
/// every element of every parameter. Returns the worst relative error.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let picks: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |ei| (pi, ei)))
        .collect();
    grad_check_at(f, params, step, &picks)
}

/// Like [`grad_check`] but restricted to selected `(parameter, element)`
/// entries, for sampling a few coordinates of a large model.
pub fn grad_check_at<F>(f: F, params: &[Tensor], step: f64, picks: &[(usize, usize)]) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = f(params)?;
    loss.backward()?;
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut worst = 0.0f64;
    for &(pi, ei) in picks {
        let fd = central_difference(&f, params, pi, ei, step)?;
        worst = worst.max(relative_error(grads[pi][ei], fd));
    }
    Ok(worst)
}
