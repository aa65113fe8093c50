//! Slice-level dense kernels shared by the forward and backward passes.

use crate::numerics::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn matmul_tn_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

const GELU_C: f64 = 0.044_715;

/// Tanh approximation of the Gaussian error linear unit:
/// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
#[inline]
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    let k = S::of((2.0 / std::f64::consts::PI).sqrt());
    let inner = k * (x + S::of(GELU_C) * x * x * x);
    half * x * (S::one() + inner.tanh())
}

#[inline]
pub fn gelu_derivative<S: Scalar>(x: S) -> S {
    let half = S::of(0.5);
    let k = S::of((2.0 / std::f64::consts::PI).sqrt());
    let c = S::of(GELU_C);
    let th = (k * (x + c * x * x * x)).tanh();
    half * (S::one() + th)
        + half * x * (S::one() - th * th) * k * (S::one() + S::of(3.0) * c * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_kernels_agree_with_plain_matmul() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.5).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3×4
        let mut plain = vec![0.0; 8];
        matmul_acc(&a, &b, &mut plain, 2, 3, 4);

        let bt = transpose(&b, 3, 4);
        let mut nt = vec![0.0; 8];
        matmul_nt_acc(&a, &bt, &mut nt, 2, 3, 4);

        let at = transpose(&a, 2, 3);
        let mut tn = vec![0.0; 8];
        matmul_tn_acc(&at, &b, &mut tn, 3, 2, 4);

        for i in 0..8 {
            assert!((plain[i] - nt[i]).abs() < 1e-12);
            assert!((plain[i] - tn[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0f64, -1.0, -0.2, 0.0, 0.4, 1.0, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8, "x={x}");
        }
    }
}
