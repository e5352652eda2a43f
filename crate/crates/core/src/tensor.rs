//! Dense row-major tensors, the sole numeric carrier in this crate.
//!
//! Everything runs on `Tensor<S>` where `S` is `f32` or `f64`. Training and
//! checkpoints use `f32`; gradient checks and equivalence oracles run the
//! same code at `f64`.

use crate::error::{contract_err, Result};
use num_traits::Float;

/// Float element type for tensors. `f32` and `f64` only.
pub trait Scalar:
    Float
    + num_traits::NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Large negative sentinel standing in for -inf in additive masks.
    /// Finite so that max-subtraction in softmax never produces inf - inf.
    fn mask_sentinel() -> Self {
        Self::from_f64(-1e9)
    }
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major numeric array with explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return contract_err(format!(
                "tensor shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(x: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Number of rows of a 2-D tensor (a 1-D tensor counts as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    /// Fails with a contract violation if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            contract_err(format!("non-finite value in {what}"))
        }
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Element-wise in-place add; shapes must agree.
    pub fn add_assign(&mut self, other: &Tensor<S>) -> Result<()> {
        if self.shape != other.shape {
            return contract_err(format!(
                "add_assign shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            ));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: S) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    /// Convert element type (f32 <-> f64).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::from_f64(x.as_f64())).collect(),
        }
    }
}

fn shape2(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return contract_err(format!("{what} must be 2-D, got shape {:?}", t.shape()));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `a [m,k] @ b [k,n] -> [m,n]`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, ka) = shape2(a, "matmul lhs")?;
    let (kb, n) = shape2(b, "matmul rhs")?;
    if ka != kb {
        return contract_err(format!("matmul inner dims differ: {ka} vs {kb}"));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            let brow = b.row(k);
            for (o, &bkj) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a [m,k] @ b^T` where `b` is `[n,k]` -> `[m,n]`.
pub fn matmul_bt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, ka) = shape2(a, "matmul_bt lhs")?;
    let (n, kb) = shape2(b, "matmul_bt rhs")?;
    if ka != kb {
        return contract_err(format!("matmul_bt inner dims differ: {ka} vs {kb}"));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow.iter()) {
                acc += x * y;
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// `a^T @ b` where `a` is `[k,m]`, `b` is `[k,n]` -> `[m,n]`.
pub fn matmul_at<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (ka, m) = shape2(a, "matmul_at lhs")?;
    let (kb, n) = shape2(b, "matmul_at rhs")?;
    if ka != kb {
        return contract_err(format!("matmul_at inner dims differ: {ka} vs {kb}"));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for k in 0..ka {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &aki) in arow.iter().enumerate() {
            let orow = out.row_mut(i);
            for (o, &bkj) in orow.iter_mut().zip(brow.iter()) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

pub fn transpose<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, n) = shape2(a, "transpose")?;
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..m {
        for j in 0..n {
            out.set(j, i, a.at(i, j));
        }
    }
    Ok(out)
}

impl<S: Scalar> std::ops::Index<usize> for Tensor<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.data[i]
    }
}

impl<S: Scalar> std::ops::IndexMut<usize> for Tensor<S> {
    fn index_mut(&mut self, i: usize) -> &mut S {
        &mut self.data[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0f32; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0f32; 5]).is_err());
    }

    #[test]
    fn matmul_small_known() {
        // [[1,2],[3,4]] @ [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_variants_agree_with_explicit_transpose() {
        let a = Tensor::from_vec(&[2, 3], (0..6).map(|x| x as f64).collect()).unwrap();
        let b = Tensor::from_vec(&[4, 3], (0..12).map(|x| (x as f64) * 0.5).collect()).unwrap();
        let via_bt = matmul_bt(&a, &b).unwrap();
        let via_plain = matmul(&a, &transpose(&b).unwrap()).unwrap();
        assert_eq!(via_bt, via_plain);

        let c = Tensor::from_vec(&[3, 2], (0..6).map(|x| x as f64 - 2.0).collect()).unwrap();
        let d = Tensor::from_vec(&[3, 4], (0..12).map(|x| x as f64 * 0.25).collect()).unwrap();
        let via_at = matmul_at(&c, &d).unwrap();
        let via_plain = matmul(&transpose(&c).unwrap(), &d).unwrap();
        assert_eq!(via_at, via_plain);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn check_finite_flags_nan() {
        let mut t = Tensor::<f32>::zeros(&[2, 2]);
        assert!(t.check_finite("x").is_ok());
        t[3] = f32::NAN;
        assert!(t.check_finite("x").is_err());
    }
}
