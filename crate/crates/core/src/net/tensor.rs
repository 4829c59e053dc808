//! Dense row-major matrices with 64-bit accumulation in every reduction.

use std::fmt::Debug;

use num_traits::Float;

/// Scalar type the network is generic over (`f32` for training, `f64` for
/// finite-difference checks).
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Self {
        Self::from_vec(rows, cols, data.iter().map(|&v| T::of(v as f64)).collect())
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.f64() as f32).collect()
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn max_abs_diff(&self, other: &Mat<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// `A · B`.
pub fn matmul<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Mat::zeros(n, m);
    let mut acc = vec![0.0f64; m];
    for i in 0..n {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = a.row(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            let av = av.f64();
            if av == 0.0 {
                continue;
            }
            let brow = b.row(p);
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += av * bv.f64();
            }
        }
        for (o, &s) in out.row_mut(i).iter_mut().zip(&acc) {
            *o = T::of(s);
        }
    }
    out
}

/// `Aᵀ · B`.
pub fn matmul_tn<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.rows, b.rows, "matmul_tn shared dimension");
    let (k, m) = (a.cols, b.cols);
    let mut acc = vec![0.0f64; k * m];
    for r in 0..a.rows {
        let arow = a.row(r);
        let brow = b.row(r);
        for (p, &av) in arow.iter().enumerate() {
            let av = av.f64();
            if av == 0.0 {
                continue;
            }
            let dst = &mut acc[p * m..(p + 1) * m];
            for (s, &bv) in dst.iter_mut().zip(brow) {
                *s += av * bv.f64();
            }
        }
    }
    Mat::from_vec(k, m, acc.into_iter().map(T::of).collect())
}

/// `A · Bᵀ`.
pub fn matmul_nt<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.cols, b.cols, "matmul_nt shared dimension");
    let (n, m) = (a.rows, b.rows);
    let mut out = Mat::zeros(n, m);
    for i in 0..n {
        let arow = a.row(i);
        for j in 0..m {
            let s: f64 = arow.iter().zip(b.row(j)).map(|(&x, &y)| x.f64() * y.f64()).sum();
            out.data[i * m + j] = T::of(s);
        }
    }
    out
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.f64() * y.f64()).sum()
}

pub fn norm<T: Real>(a: &[T]) -> f64 {
    dot(a, a).sqrt()
}
