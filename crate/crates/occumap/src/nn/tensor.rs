//! Dense 4-D tensors (batch, channels, height, width) for the network.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type for network math: f32 for training builds, f64 for
/// gradient-check builds.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum<Self>
    + Send
    + Sync
    + Default
    + 'static
{
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 conversion")
    }

    fn into_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Contiguous row-major (batch, channels, height, width) tensor with an
/// optional same-shape gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 { n, c, h, w, data: vec![T::zero(); n * c * h * w], grad: None }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length mismatch");
        Tensor4 { n, c, h, w, data, grad: None }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n == other.n && self.c == other.c && self.h == other.h && self.w == other.w
    }

    /// Offset of element (b, c, y, x).
    #[inline]
    pub fn idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.c + c) * self.h + y) * self.w + x
    }

    /// One (batch, channel) plane as a slice.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let start = (b * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    /// Allocate the gradient buffer (zeroed).
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![T::zero(); self.data.len()]);
        self
    }

    /// Debug-mode check that every element is finite.
    #[inline]
    pub fn debug_assert_finite(&self, what: &str) {
        if cfg!(debug_assertions) {
            for (i, v) in self.data.iter().enumerate() {
                assert!(v.is_finite(), "{what}: non-finite value {v:?} at {i}");
            }
        }
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        assert_eq!(a.n, b.n);
        assert_eq!(a.h, b.h);
        assert_eq!(a.w, b.w);
        let mut out = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
        let plane = a.h * a.w;
        for bt in 0..a.n {
            let dst = &mut out.data[bt * (a.c + b.c) * plane..(bt + 1) * (a.c + b.c) * plane];
            dst[..a.c * plane].copy_from_slice(&a.data[bt * a.c * plane..(bt + 1) * a.c * plane]);
            dst[a.c * plane..].copy_from_slice(&b.data[bt * b.c * plane..(bt + 1) * b.c * plane]);
        }
        out
    }

    /// Split a channel-concatenated tensor back into its two parts.
    pub fn split_channels(&self, first_c: usize) -> (Self, Self) {
        assert!(first_c <= self.c);
        let second_c = self.c - first_c;
        let mut a = Tensor4::zeros(self.n, first_c, self.h, self.w);
        let mut b = Tensor4::zeros(self.n, second_c, self.h, self.w);
        let plane = self.h * self.w;
        for bt in 0..self.n {
            let src = &self.data[bt * self.c * plane..(bt + 1) * self.c * plane];
            a.data[bt * first_c * plane..(bt + 1) * first_c * plane]
                .copy_from_slice(&src[..first_c * plane]);
            b.data[bt * second_c * plane..(bt + 1) * second_c * plane]
                .copy_from_slice(&src[first_c * plane..]);
        }
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor4::from_vec(2, 2, 2, 2, (0..16).map(|v| v as f64).collect());
        let b = Tensor4::from_vec(2, 1, 2, 2, (100..108).map(|v| v as f64).collect());
        let cat = Tensor4::concat_channels(&a, &b);
        assert_eq!(cat.c, 3);
        let (a2, b2) = cat.split_channels(2);
        assert_eq!(a.data, a2.data);
        assert_eq!(b.data, b2.data);
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor4::<f32>::zeros(2, 3, 4, 5);
        assert_eq!(t.idx(0, 0, 0, 0), 0);
        assert_eq!(t.idx(0, 0, 0, 1), 1);
        assert_eq!(t.idx(0, 0, 1, 0), 5);
        assert_eq!(t.idx(0, 1, 0, 0), 20);
        assert_eq!(t.idx(1, 0, 0, 0), 60);
    }
}
