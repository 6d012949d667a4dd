use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rayon::prelude::*;

/// Scalar type of the network: `f32` for training, `f64` for gradient checks.
pub trait Real: Float + FromPrimitive + Sum + Send + Sync + Debug + 'static {
    fn of(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Activations in (samples, steps, channels) order, channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub t: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, t: usize, c: usize) -> Self {
        Tensor { n, t, c, data: vec![T::zero(); n * t * c] }
    }

    pub fn rows(&self) -> usize {
        self.n * self.t
    }
}

const ROW_CHUNK: usize = 16;

/// `a (rows×inner) · b (inner×cols)`, row-major. Rows are independent, so
/// the result does not depend on how they are split across threads.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], rows: usize, inner: usize, cols: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    let mut out = vec![T::zero(); rows * cols];
    if cols == 0 {
        return out;
    }
    out.par_chunks_mut(ROW_CHUNK * cols).enumerate().for_each(|(chunk, block)| {
        let r0 = chunk * ROW_CHUNK;
        for (rr, orow) in block.chunks_mut(cols).enumerate() {
            let arow = &a[(r0 + rr) * inner..(r0 + rr + 1) * inner];
            for (k, &av) in arow.iter().enumerate() {
                if av == T::zero() {
                    continue;
                }
                let brow = &b[k * cols..(k + 1) * cols];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
    });
    out
}

pub(crate) fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
