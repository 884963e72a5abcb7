use serde::{Deserialize, Serialize};

use super::AutodiffError;
use crate::Scalar;

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseArray<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseArray<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, AutodiffError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(AutodiffError::InvalidShape(format!("dimension sizes must be positive, got {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::InvalidShape(format!("shape {shape:?} needs {expected} values, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite("array constructor".into()));
        }
        Ok(Self { shape, data })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_vec(data: Vec<T>) -> Result<Self, AutodiffError> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element array.
    pub fn as_scalar(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, AutodiffError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(AutodiffError::ShapeMismatch { op: "reshape", detail: format!("{:?} -> {:?}", self.shape, shape) });
        }
        Ok(Self { shape, data: self.data.clone() })
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Stacks equally shaped arrays along a new leading axis.
    pub fn stack(items: &[&Self]) -> Result<Self, AutodiffError> {
        let first = items.first().ok_or_else(|| AutodiffError::InvalidShape("stack of zero arrays".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(items.len() * first.len());
        for item in items {
            if item.shape != first.shape {
                return Err(AutodiffError::ShapeMismatch { op: "stack", detail: format!("{:?} vs {:?}", first.shape, item.shape) });
            }
            data.extend_from_slice(&item.data);
        }
        Ok(Self { shape, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Converts between scalar types through `f64`.
    pub fn cast<U: Scalar>(&self) -> DenseArray<U> {
        DenseArray { shape: self.shape.clone(), data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(DenseArray::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(DenseArray::<f64>::new(vec![0], vec![]).is_err());
        assert!(DenseArray::new(vec![1], vec![f64::NAN]).is_err());
        assert!(DenseArray::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
        let a = DenseArray::new(vec![2, 3], vec![0.0f32; 6]).unwrap();
        assert_eq!(a.ndim(), 2);
        assert!(a.reshaped(vec![3, 2]).is_ok());
        assert!(a.reshaped(vec![4, 2]).is_err());
    }

    #[test]
    fn stack_adds_leading_axis() {
        let a = DenseArray::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = DenseArray::new(vec![2], vec![3.0, 4.0]).unwrap();
        let s = DenseArray::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[1.0, 2.0, 3.0, 4.0]);
        let c = DenseArray::new(vec![3], vec![0.0; 3]).unwrap();
        assert!(DenseArray::stack(&[&a, &c]).is_err());
    }
}
