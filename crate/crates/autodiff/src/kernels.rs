//! Dense row-major kernels. Inner loops are written in axpy form so they
//! vectorize without reassociating floating point sums.

use crate::scalar::Scalar;

/// `a[n×k] · b[k×m]`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut c = vec![T::zero(); n * m];
    for (crow, arow) in c.chunks_exact_mut(m).zip(a.chunks_exact(k)) {
        for (&av, brow) in arow.iter().zip(b.chunks_exact(m)) {
            axpy(av, brow, crow);
        }
    }
    c
}

pub fn transpose<T: Scalar>(a: &[T], n: usize, m: usize) -> Vec<T> {
    let mut t = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            t[j * n + i] = a[i * m + j];
        }
    }
    t
}

/// `da[n×k] += dc[n×m] · bᵀ` where `b` is `k×m`.
pub fn matmul_grad_lhs<T: Scalar>(dc: &[T], b: &[T], n: usize, k: usize, m: usize, da: &mut [T]) {
    let bt = transpose(b, k, m);
    for (darow, dcrow) in da.chunks_exact_mut(k).zip(dc.chunks_exact(m)).take(n) {
        for (&g, btrow) in dcrow.iter().zip(bt.chunks_exact(k)) {
            axpy(g, btrow, darow);
        }
    }
}

/// `db[k×m] += aᵀ · dc` where `a` is `n×k` and `dc` is `n×m`.
pub fn matmul_grad_rhs<T: Scalar>(a: &[T], dc: &[T], n: usize, k: usize, m: usize, db: &mut [T]) {
    for (arow, dcrow) in a.chunks_exact(k).zip(dc.chunks_exact(m)).take(n) {
        for (&av, dbrow) in arow.iter().zip(db.chunks_exact_mut(m)) {
            axpy(av, dcrow, dbrow);
        }
    }
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

const GELU_C: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
    let t = inner.tanh();
    let dinner = T::lit(GELU_K) * (T::one() + T::lit(3.0 * GELU_C) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}
