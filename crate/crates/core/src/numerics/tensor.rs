use std::fmt::Debug;
use std::iter::Sum;

use crate::error::{Error, Result};

/// Element type of tensors: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Default + Debug + Send + Sync + Sum + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a · b + beta · c` for row-major `a: m×k`, `b: k×n`, `c: m×n`,
    /// with `a`/`b` given by (row stride, column stride) so transposes are free.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(c.len() >= m * n, "gemm output too small");
                if k == 0 {
                    for x in c[..m * n].iter_mut() {
                        *x *= beta;
                    }
                    return;
                }
                let a_need = (m as isize - 1) * a_strides.0 + (k as isize - 1) * a_strides.1;
                let b_need = (k as isize - 1) * b_strides.0 + (n as isize - 1) * b_strides.1;
                assert!((a_need as usize) < a.len(), "gemm lhs too small");
                assert!((b_need as usize) < b.len(), "gemm rhs too small");
                // SAFETY: the extents checked above bound every index the
                // kernel touches; strides are non-negative by construction.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F: Scalar = f32> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
    pub requires_grad: bool,
    pub grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data, requires_grad: true, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![F::zero(); n], requires_grad: true, grad: None }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (rows, cols) view of a rank-1 or rank-2 tensor; vectors are one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => panic!("dims2 on rank-{} tensor", other.len()),
        }
    }

    pub fn row(&self, i: usize) -> &[F] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::from_f64(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// An ordered, named collection of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<F: Scalar = f32> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<F>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }
}

/// Per-tensor gradient buffers aligned with a [`ParamSet`]; `None` where no
/// gradient reached the tensor.
pub type Grads<F> = Vec<Option<Vec<F>>>;

pub fn global_norm<F: Scalar>(grads: &Grads<F>) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|x| {
            let v = x.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Scale gradients down so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<F: Scalar>(grads: &mut Grads<F>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = F::from_f64(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checked() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.dims2(), (2, 3));
    }

    #[test]
    fn gemm_with_transposed_rhs() {
        // a: 2x3, b^T where b: 2x3 -> c = a b^T : 2x2
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 1.0, 0.0, 1.0, 0.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, &a, (3, 1), &b, (1, 3), 0.0, &mut c);
        assert_eq!(c, [4.0, 2.0, 10.0, 5.0]);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g: Grads<f32> = vec![Some(vec![3.0, 4.0]), None];
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - 5.0).abs() < 1e-9);
        assert!((global_norm(&g) - 1.0).abs() < 1e-6);
    }
}
