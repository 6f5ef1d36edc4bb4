//! Small dense linear-algebra helpers on top of `nalgebra`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Modulus of a complex number.
pub fn cabs(z: C64) -> f64 {
    libm::hypot(z.re, z.im)
}

/// `n!` as a float; exact for the small arguments used here.
pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Binomial coefficient `C(n, k)` as a float, zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    libm::round(acc)
}

/// Integer binomial coefficient for dimension counting.
pub fn binomial_usize(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// `x^n` for a non-negative integer exponent, with `0^0 = 1`.
pub fn powi(x: f64, n: usize) -> f64 {
    let mut acc = 1.0;
    for _ in 0..n {
        acc *= x;
    }
    acc
}

/// Kronecker product of two real matrices.
pub fn kron(a: &RMat, b: &RMat) -> RMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = RMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two complex matrices.
pub fn ckron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Real matrix lifted to complex.
pub fn to_complex(a: &RMat) -> CMat {
    a.map(|x| C64::new(x, 0.0))
}

/// Eigenvalues of a real symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &RMat) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let sym = (a + a.transpose()) * 0.5;
    let mut v: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    v
}

/// Smallest eigenvalue of a real symmetric matrix; `+inf` when empty.
pub fn sym_min_eigenvalue(a: &RMat) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(f64::INFINITY)
}

/// Eigenvalues of a complex Hermitian matrix, ascending.
///
/// Uses the real embedding `[[Re, -Im], [Im, Re]]`, whose spectrum is the
/// Hermitian spectrum with every value doubled; every other value is kept.
pub fn herm_eigenvalues(a: &CMat) -> Vec<f64> {
    let n = a.nrows();
    if n == 0 {
        return Vec::new();
    }
    let mut emb = RMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            emb[(i, j)] = z.re;
            emb[(i + n, j + n)] = z.re;
            emb[(i, j + n)] = -z.im;
            emb[(i + n, j)] = z.im;
        }
    }
    let all = sym_eigenvalues(&emb);
    all.into_iter().step_by(2).collect()
}

/// Smallest eigenvalue of a complex Hermitian matrix.
pub fn herm_min_eigenvalue(a: &CMat) -> f64 {
    herm_eigenvalues(a).first().copied().unwrap_or(f64::INFINITY)
}

/// Largest absolute entry.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(cabs(*z)))
}

/// Largest absolute entry of a real matrix.
pub fn max_abs_real(a: &RMat) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.abs()))
}

/// Frobenius inner product `Tr(A† B)`.
pub fn inner(a: &CMat, b: &CMat) -> C64 {
    a.iter().zip(b.iter()).fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Least-squares solution of `A x = b` by normal equations with a tiny ridge,
/// followed by one refinement step. Returns `(x, residual_inf_norm)`.
pub fn least_squares(a: &RMat, b: &RVec) -> (RVec, f64) {
    let at = a.transpose();
    let mut g = &at * a;
    let scale = g.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..g.nrows() {
        g[(i, i)] += 1e-15 * scale;
    }
    let rhs = &at * b;
    let x = match g.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => g.clone().lu().solve(&rhs).unwrap_or_else(|| RVec::zeros(a.ncols())),
    };
    let mut x = x;
    let r = b - a * &x;
    if let Some(ch) = g.cholesky() {
        x += ch.solve(&(&at * &r));
    }
    let res = (b - a * &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (x, res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials_are_exact() {
        assert_eq!(binomial(6, 2), 15.0);
        assert_eq!(binomial(3, 5), 0.0);
        assert_eq!(binomial_usize(10, 4), 210);
    }

    #[test]
    fn hermitian_spectrum_of_pauli_y() {
        let mut sy = CMat::zeros(2, 2);
        sy[(0, 1)] = -I;
        sy[(1, 0)] = I;
        let ev = herm_eigenvalues(&sy);
        assert!((ev[0] + 1.0).abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12);
    }
}
