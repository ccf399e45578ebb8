//! Dense complex matrices and a cyclic Jacobi eigensolver for Hermitian input.
//!
//! Purely real matrices (the common case for XXZ-type couplings) are routed
//! through a real symmetric Jacobi sweep that skips the phase bookkeeping and
//! touches a quarter of the memory.

use num_traits::{One, Zero};
use thiserror::Error;

use crate::scalar::{Complex, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("Jacobi iteration cap of {cap} rotations exceeded (off-diagonal norm {off:e})")]
    NoConvergence { cap: usize, off: f64 },
}

/// Square complex matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T> {
    dim: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Complex<T>>>) -> Result<Self, LinalgError> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            if r.len() != dim {
                return Err(LinalgError::NotSquare {
                    rows: dim,
                    cols: r.len(),
                });
            }
            data.extend(r);
        }
        Ok(Self { dim, data })
    }

    pub fn from_real_rows(rows: &[Vec<T>]) -> Result<Self, LinalgError> {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&x| Complex::new(x, T::zero())).collect())
                .collect(),
        )
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn conj_transpose(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in matmul");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(v.len(), self.dim, "dimension mismatch in matvec");
        (0..self.dim)
            .map(|i| {
                self.data[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .zip(v)
                    .fold(Complex::zero(), |acc, (a, b)| acc + *a * *b)
            })
            .collect()
    }

    /// Largest elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).norm()))
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.dim {
            for j in i..self.dim {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn trace(&self) -> Complex<T> {
        (0..self.dim).map(|i| self[(i, i)]).fold(Complex::zero(), |a, b| a + b)
    }

    fn is_real(&self) -> bool {
        self.data.iter().all(|z| z.im == T::zero())
    }

    fn frobenius(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
    }
}

impl<T> std::ops::Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        &self.data[r * self.dim + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[r * self.dim + c]
    }
}

/// Eigen-decomposition `A = V diag(values) V†` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct Eigh<T> {
    pub values: Vec<T>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: CMatrix<T>,
}

impl<T: Real> Eigh<T> {
    pub fn vector(&self, k: usize) -> Vec<Complex<T>> {
        (0..self.vectors.dim()).map(|r| self.vectors[(r, k)]).collect()
    }

    pub fn reconstruct(&self) -> CMatrix<T> {
        let n = self.vectors.dim();
        let mut out = CMatrix::zeros(n);
        for k in 0..n {
            let lam = self.values[k];
            for i in 0..n {
                let vi = self.vectors[(i, k)] * lam;
                for j in 0..n {
                    out[(i, j)] += vi * self.vectors[(j, k)].conj();
                }
            }
        }
        out
    }
}

/// Rotation cap used by [`eigh`]: `100 * dim^2`.
pub fn rotation_cap(dim: usize) -> usize {
    100 * dim.max(1) * dim.max(1)
}

/// Full eigen-decomposition of a Hermitian matrix.
pub fn eigh<T: Real>(a: &CMatrix<T>) -> Result<Eigh<T>, LinalgError> {
    let tol = hermitian_tolerance(a);
    let herm = a.hermiticity_error();
    if herm > tol {
        return Err(LinalgError::NotHermitian(herm.to_f64_lossy()));
    }
    let (values, vectors) = if a.is_real() {
        let (vals, vecs) = jacobi_real(a, true)?;
        let n = a.dim();
        let mut m = CMatrix::zeros(n);
        for (i, v) in vecs.iter().enumerate() {
            m.data[i] = Complex::new(*v, T::zero());
        }
        (vals, m)
    } else {
        let (vals, vecs) = jacobi_complex(a, true)?;
        (vals, vecs.expect("vectors requested"))
    };
    Ok(sort_eigh(values, vectors))
}

/// Eigenvalues only, ascending.
pub fn eigvalsh<T: Real>(a: &CMatrix<T>) -> Result<Vec<T>, LinalgError> {
    let tol = hermitian_tolerance(a);
    let herm = a.hermiticity_error();
    if herm > tol {
        return Err(LinalgError::NotHermitian(herm.to_f64_lossy()));
    }
    let mut vals = if a.is_real() {
        jacobi_real(a, false)?.0
    } else {
        jacobi_complex(a, false)?.0
    };
    vals.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(vals)
}

fn hermitian_tolerance<T: Real>(a: &CMatrix<T>) -> T {
    T::lit(1e3) * T::epsilon() * a.frobenius().max(T::one())
}

fn off_norm_real<T: Real>(m: &[T], n: usize) -> T {
    let mut s = T::zero();
    for p in 0..n {
        for q in (p + 1)..n {
            s += m[p * n + q] * m[p * n + q];
        }
    }
    (s + s).sqrt()
}

fn jacobi_real<T: Real>(a: &CMatrix<T>, want_vectors: bool) -> Result<(Vec<T>, Vec<T>), LinalgError> {
    let n = a.dim();
    let mut m: Vec<T> = a.data.iter().map(|z| z.re).collect();
    let mut v = if want_vectors {
        let mut v = vec![T::zero(); n * n];
        for i in 0..n {
            v[i * n + i] = T::one();
        }
        v
    } else {
        Vec::new()
    };
    let scale = a.frobenius().max(T::one());
    let threshold = T::eig_tolerance() * scale;
    let cap = rotation_cap(n);
    let mut rotations = 0usize;
    loop {
        let off = off_norm_real(&m, n);
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= threshold * T::lit(1e-3) / T::from_usize(n).unwrap() {
                    continue;
                }
                rotations += 1;
                if rotations > cap {
                    return Err(LinalgError::NoConvergence {
                        cap,
                        off: off_norm_real(&m, n).to_f64_lossy(),
                    });
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (apq + apq);
                let t = if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                // Columns p, q.
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                // Rows p, q.
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                m[p * n + q] = T::zero();
                m[q * n + p] = T::zero();
                if want_vectors {
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    Ok(((0..n).map(|i| m[i * n + i]).collect(), v))
}

fn off_norm_complex<T: Real>(m: &[Complex<T>], n: usize) -> T {
    let mut s = T::zero();
    for p in 0..n {
        for q in (p + 1)..n {
            s += m[p * n + q].norm_sqr();
        }
    }
    (s + s).sqrt()
}

type ComplexJacobi<T> = (Vec<T>, Option<CMatrix<T>>);

fn jacobi_complex<T: Real>(a: &CMatrix<T>, want_vectors: bool) -> Result<ComplexJacobi<T>, LinalgError> {
    let n = a.dim();
    let mut m = a.data.clone();
    for i in 0..n {
        m[i * n + i].im = T::zero();
    }
    let mut v = want_vectors.then(|| CMatrix::<T>::identity(n));
    let scale = a.frobenius().max(T::one());
    let threshold = T::eig_tolerance() * scale;
    let cap = rotation_cap(n);
    let mut rotations = 0usize;
    loop {
        let off = off_norm_complex(&m, n);
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                let r = apq.norm();
                if r <= threshold * T::lit(1e-3) / T::from_usize(n).unwrap() {
                    continue;
                }
                rotations += 1;
                if rotations > cap {
                    return Err(LinalgError::NoConvergence {
                        cap,
                        off: off_norm_complex(&m, n).to_f64_lossy(),
                    });
                }
                // Phase-rotate column q so the (p, q) entry becomes the real r,
                // then apply a real Jacobi rotation.
                let phase = apq / r; // e^{i phi}
                let phase_conj = phase.conj(); // e^{-i phi}
                let app = m[p * n + p].re;
                let aqq = m[q * n + q].re;
                let tau = (aqq - app) / (r + r);
                let t = if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                let g_qp = phase_conj * (-s); // G[q][p]
                let g_qq = phase_conj * c; // G[q][q]
                // A <- A G (columns).
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = akp * c + akq * g_qp;
                    m[k * n + q] = akp * s + akq * g_qq;
                }
                // A <- G^dagger A (rows).
                let gc_qp = g_qp.conj();
                let gc_qq = g_qq.conj();
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = apk * c + aqk * gc_qp;
                    m[q * n + k] = apk * s + aqk * gc_qq;
                }
                m[p * n + q] = Complex::zero();
                m[q * n + p] = Complex::zero();
                m[p * n + p].im = T::zero();
                m[q * n + q].im = T::zero();
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v.data[k * n + p];
                        let vkq = v.data[k * n + q];
                        v.data[k * n + p] = vkp * c + vkq * g_qp;
                        v.data[k * n + q] = vkp * s + vkq * g_qq;
                    }
                }
            }
        }
    }
    Ok(((0..n).map(|i| m[i * n + i].re).collect(), v))
}

fn sort_eigh<T: Real>(values: Vec<T>, vectors: CMatrix<T>) -> Eigh<T> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite eigenvalues"));
    let mut sorted = CMatrix::zeros(n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            sorted[(r, new_col)] = vectors[(r, old_col)];
        }
    }
    Eigh {
        values: order.iter().map(|&k| values[k]).collect(),
        vectors: sorted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn diagonal_matrix_is_already_solved() {
        let m = CMatrix::<f64>::from_real_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let e = eigh(&m).unwrap();
        assert_eq!(e.values, vec![-1.0, 1.0]);
        assert!((e.vectors[(1, 0)].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pauli_y_has_unit_spectrum() {
        let m = CMatrix::from_rows(vec![vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]]).unwrap();
        let e = eigh(&m).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        assert!(e.reconstruct().max_abs_diff(&m) < 1e-14);
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let m = CMatrix::from_rows(vec![vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]]).unwrap();
        assert!(matches!(eigh(&m), Err(LinalgError::NotHermitian(_))));
    }

    #[test]
    fn zero_matrix_converges_immediately() {
        let e = eigh(&CMatrix::<f64>::zeros(4)).unwrap();
        assert!(e.values.iter().all(|&v| v == 0.0));
        assert!(e.vectors.max_abs_diff(&CMatrix::identity(4)) == 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let m = CMatrix::<f32>::from_real_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let vals = eigvalsh(&m).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-5);
        assert!((vals[1] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(CMatrix::<f64>::from_real_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
