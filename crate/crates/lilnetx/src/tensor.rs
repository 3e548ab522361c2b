//! Dense NCHW activation tensor.

use crate::scalar::Scalar;

/// Row-major (batch, channels, height, width) tensor of activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![T::zero(); n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length mismatch");
        Self { n, c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[((n * self.c + c) * self.h + h) * self.w + w]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut T {
        &mut self.data[((n * self.c + c) * self.h + h) * self.w + w]
    }

    /// One sample as a contiguous slice of c*h*w values.
    pub fn sample(&self, n: usize) -> &[T] {
        let sz = self.c * self.h * self.w;
        &self.data[n * sz..(n + 1) * sz]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let sz = self.c * self.h * self.w;
        &mut self.data[n * sz..(n + 1) * sz]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise conversion, used by the f64 gradient-check mode.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let mut t = Tensor4::<f32>::zeros(2, 3, 4, 5);
        *t.at_mut(1, 2, 3, 4) = 7.0;
        assert_eq!(t.data[((1 * 3 + 2) * 4 + 3) * 5 + 4], 7.0);
        assert_eq!(t.at(1, 2, 3, 4), 7.0);
    }

    #[test]
    #[should_panic(expected = "length mismatch")]
    fn from_vec_checks_length() {
        let _ = Tensor4::from_vec(1, 1, 2, 2, vec![0.0f32; 3]);
    }
}
