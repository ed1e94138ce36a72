use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tensor axes, in storage order. `T` is the contiguous (fastest) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    N,
    C,
    F,
    T,
}

pub const ALL_AXES: [Axis; 4] = [Axis::N, Axis::C, Axis::F, Axis::T];

/// Dense 4-D shape (batch, channel, frequency, time).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub f: usize,
    pub t: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, f: usize, t: usize) -> Self {
        Shape { n, c, f, t }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.n * self.c * self.f * self.t
    }

    /// Flat index of (n, c, f, t) in row-major order.
    #[inline]
    pub fn idx(&self, n: usize, c: usize, f: usize, t: usize) -> usize {
        ((n * self.c + c) * self.f + f) * self.t + t
    }

    pub fn axis(&self, ax: Axis) -> usize {
        match ax {
            Axis::N => self.n,
            Axis::C => self.c,
            Axis::F => self.f,
            Axis::T => self.t,
        }
    }

    pub fn with_axis(mut self, ax: Axis, extent: usize) -> Self {
        match ax {
            Axis::N => self.n = extent,
            Axis::C => self.c = extent,
            Axis::F => self.f = extent,
            Axis::T => self.t = extent,
        }
        self
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.f, self.t]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.f, self.t)
    }
}

/// Dense 4-D tensor, row-major with the time axis contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Shape,
    data: Vec<S>,
    pub requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![S::zero(); shape.numel()],
            requires_grad: false,
        }
    }

    pub fn filled(shape: Shape, v: S) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.numel()],
            requires_grad: false,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<S>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "data length {} does not equal N*C*F*T = {} for shape {}",
                data.len(),
                shape.numel(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    /// Scalar (1,1,1,1) tensor.
    pub fn scalar(v: S) -> Self {
        Tensor::filled(Shape::scalar(), v)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, f: usize, t: usize) -> S {
        self.data[self.shape.idx(n, c, f, t)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, f: usize, t: usize, v: S) {
        let i = self.shape.idx(n, c, f, t);
        self.data[i] = v;
    }

    /// Value of a (1,1,1,1) tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn zip(&self, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
            requires_grad: false,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, for determinism checks.
    pub fn bit_eq(&self, other: &Tensor<S>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.bits() == b.bits())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| T::from_f64(Scalar::to_f64(*v)))
                .collect(),
            requires_grad: self.requires_grad,
        }
    }

    /// Fill with uniform values in [-half_width, half_width) from `rng`.
    pub fn fill_uniform(&mut self, rng: &mut impl rand::Rng, half_width: f64) {
        for v in self.data.iter_mut() {
            *v = S::from_f64(rng.gen_range(-half_width..half_width));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_indexing_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.numel(), 120);
        assert_eq!(s.idx(0, 0, 0, 0), 0);
        assert_eq!(s.idx(0, 0, 0, 4), 4);
        assert_eq!(s.idx(0, 0, 1, 0), 5);
        assert_eq!(s.idx(0, 1, 0, 0), 20);
        assert_eq!(s.idx(1, 0, 0, 0), 60);
        assert_eq!(s.idx(1, 2, 3, 4), 119);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let r = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0; 3]);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn bit_eq_detects_sign_of_zero() {
        let a = Tensor::<f32>::from_vec(Shape::scalar(), vec![0.0]).unwrap();
        let b = Tensor::<f32>::from_vec(Shape::scalar(), vec![-0.0]).unwrap();
        assert!(!a.bit_eq(&b));
        assert!(a.bit_eq(&a.clone()));
    }
}
