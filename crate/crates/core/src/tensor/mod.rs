//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Everything is generic over [`Scalar`] so the same graph code runs in f32
//! for training and in f64 for finite-difference gradient checking. A
//! [`Tape`] records one step's primitive applications in topological order;
//! [`Tape::backward`] walks it once in reverse with a fixed accumulation
//! order, which keeps training bitwise reproducible.

mod kernels;
mod optim;
mod tape;

pub use optim::{cosine_lr, AdamWConfig, AdamWState};
pub use tape::{NodeId, Tape};

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of all tensors: f32 for training, f64 for gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts to scalar")
    }
    fn to_f64x(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Plain tensor storage outside any tape: named model parameters, image
/// batches before they become graph leaves, checkpoint payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> TensorData<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        TensorData { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        TensorData { shape, data: vec![T::zero(); n] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn map_scalar<U: Scalar>(&self) -> TensorData<U> {
        TensorData {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.to_f64x())).collect(),
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}
