//! A small CPU neural-network engine with explicit backward passes.
//!
//! Layers own their parameters and cache whatever the backward pass needs
//! during `forward`. `infer` is the side-effect-free evaluation path.
//! Batch work is split per sample with rayon; every reduction across samples
//! is done sequentially in sample order so results do not depend on the
//! thread count.

mod conv;
mod linear;
mod norm;
mod pool;
mod tensor;

pub use conv::Conv2d;
pub use linear::{Dropout, Linear};
pub use norm::BatchNorm2d;
pub use pool::{AdaptiveAvgPool2d, AvgPool2d};
pub use tensor::{gemm, Param, Scalar, Tensor};

/// Named view over a layer's parameters, in a fixed traversal order.
pub trait Parameterized<T: Scalar> {
    fn params(&self) -> Vec<(String, &Param<T>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }
}

pub(crate) fn prefixed<'a, P>(
    prefix: &str,
    items: Vec<(String, P)>,
) -> impl Iterator<Item = (String, P)> + 'a
where
    P: 'a,
{
    let prefix = prefix.to_string();
    items
        .into_iter()
        .map(move |(n, p)| (format!("{prefix}.{n}"), p))
}

/// ReLU applied in place.
pub(crate) fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the cached ReLU output is not positive.
pub(crate) fn relu_backward<T: Scalar>(output: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}
