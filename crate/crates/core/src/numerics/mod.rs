//! Dense tensors and reverse-mode differentiation.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_with, GradCheckReport};
pub use graph::{Graph, Var};
pub use tensor::{DType, Real, Tensor};

use crate::error::Result;

/// Eager matrix product without gradient tracking.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = g.matmul(va, vb)?;
    Ok(g.value(out).clone())
}

pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = g.softmax_rows(v)?;
    Ok(g.value(out).clone())
}

pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (vx, vg, vb) = (
        g.constant(x.clone()),
        g.constant(gamma.clone()),
        g.constant(beta.clone()),
    );
    let out = g.layer_norm(vx, vg, vb, eps)?;
    Ok(g.value(out).clone())
}

pub fn gelu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = g.gelu(v)?;
    Ok(g.value(out).clone())
}
