use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type of the differentiable operators. Training runs
/// in `f32`; gradient checks run in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    /// `C ← alpha·A·B + beta·C` on strided row/column layouts.
    ///
    /// # Safety
    /// Strides and extents must keep every access inside the backing slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row/column strides of a matrix view into a slice.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Strides(pub usize, pub usize);

fn max_offset(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * s.0 + (cols - 1) * s.1
    }
}

/// Bounds-checked `C ← A·B + beta·C` for `A: m×k`, `B: k×n`, `C: m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || max_offset(m, k, sa) < a.len(), "gemm: A out of bounds");
    assert!(k == 0 || max_offset(k, n, sb) < b.len(), "gemm: B out of bounds");
    assert!(max_offset(m, n, sc) < c.len(), "gemm: C out of bounds");
    // SAFETY: the assertions above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        )
    }
}

/// Dense `(B, C, X, Y, Z)` array, `Z` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    shape: [usize; 5],
    data: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Batch {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "buffer of {} elements cannot have shape {shape:?}",
                data.len()
            )));
        }
        Ok(Batch { shape, data })
    }

    pub fn from_fn(shape: [usize; 5], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Batch {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch_size(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn voxels(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.voxels()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// Slice holding channel `c` of sample `b`.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let v = self.voxels();
        let at = (b * self.shape[1] + c) * v;
        &self.data[at..at + v]
    }

    pub fn add_assign(&mut self, other: &Batch<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Batch<T> {
        Batch {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Batch<U> {
        Batch {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    /// Concatenates samples along the batch axis.
    pub fn stack(samples: &[Batch<T>]) -> Result<Batch<T>> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Precondition("cannot stack zero samples".into()))?;
        let mut shape = first.shape;
        let mut data = Vec::with_capacity(first.len() * samples.len());
        let mut count = 0;
        for s in samples {
            if s.shape[1..] != first.shape[1..] {
                return Err(Error::Shape(format!("cannot stack {:?} with {:?}", s.shape, first.shape)));
            }
            count += s.shape[0];
            data.extend_from_slice(&s.data);
        }
        shape[0] = count;
        Ok(Batch { shape, data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
