//! Small dense complex-matrix helpers (row-major `Vec<Complex64>` storage)
//! with faer backing the decompositions.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn to_faer(v: &[Complex64], rows: usize, cols: usize) -> Mat<Complex64> {
    Mat::from_fn(rows, cols, |i, j| v[i * cols + j])
}

pub fn from_faer(m: &Mat<Complex64>) -> Vec<Complex64> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn identity(dim: usize) -> Vec<Complex64> {
    let mut v = vec![Complex64::default(); dim * dim];
    for i in 0..dim {
        v[i * dim + i] = Complex64::new(1.0, 0.0);
    }
    v
}

pub fn mat_vec(a: &[Complex64], x: &[Complex64], out: &mut [Complex64], rows: usize, cols: usize) {
    for i in 0..rows {
        let mut acc = Complex64::default();
        let row = &a[i * cols..(i + 1) * cols];
        for (aj, xj) in row.iter().zip(x) {
            acc += aj * xj;
        }
        out[i] = acc;
    }
}

/// out = A^H x (conjugate transpose times vector).
pub fn mat_vec_adj(
    a: &[Complex64],
    x: &[Complex64],
    out: &mut [Complex64],
    rows: usize,
    cols: usize,
) {
    for v in out.iter_mut().take(cols) {
        *v = Complex64::default();
    }
    for i in 0..rows {
        let xi = x[i];
        let row = &a[i * cols..(i + 1) * cols];
        for j in 0..cols {
            out[j] += row[j].conj() * xi;
        }
    }
}

pub fn mat_mul(
    a: &[Complex64],
    b: &[Complex64],
    rows: usize,
    inner: usize,
    cols: usize,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); rows * cols];
    for i in 0..rows {
        for k in 0..inner {
            let aik = a[i * inner + k];
            if aik == Complex64::default() {
                continue;
            }
            let brow = &b[k * cols..(k + 1) * cols];
            let orow = &mut out[i * cols..(i + 1) * cols];
            for j in 0..cols {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

pub fn singular_values(a: &[Complex64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    let m = to_faer(a, rows, cols);
    let svd = m
        .svd()
        .map_err(|e| Error::EigenFailure(format!("svd: {e:?}")))?;
    let k = rows.min(cols);
    Ok((0..k).map(|i| svd.S()[i].re).collect())
}

/// Largest singular value.
pub fn op_norm(a: &[Complex64], rows: usize, cols: usize) -> f64 {
    if rows.min(cols) == 0 {
        return 0.0;
    }
    match singular_values(a, rows, cols) {
        Ok(s) => s.first().copied().unwrap_or(0.0),
        Err(_) => f64::NAN,
    }
}

pub fn inverse(a: &[Complex64], dim: usize) -> Result<Vec<Complex64>> {
    let m = to_faer(a, dim, dim);
    let lu = m.full_piv_lu();
    // reject numerically singular input by the diagonal of U
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..dim {
        let d = lu.U()[(i, i)].norm();
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    if dmin <= 1e-14 * dmax.max(1e-300) {
        return Err(Error::SingularSystem);
    }
    Ok(from_faer(&lu.inverse()))
}

/// Minimum eigenvalue of the Hermitian part (A + A^H)/2.
pub fn hermitian_part_min_eig(a: &[Complex64], dim: usize) -> Result<f64> {
    let mut h = vec![Complex64::default(); dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            h[i * dim + j] = 0.5 * (a[i * dim + j] + a[j * dim + i].conj());
        }
    }
    let m = to_faer(&h, dim, dim);
    let evd = m
        .eigen()
        .map_err(|e| Error::EigenFailure(format!("eigen: {e:?}")))?;
    let mut min = f64::INFINITY;
    for i in 0..dim {
        min = min.min(evd.S()[i].re);
    }
    Ok(min)
}

pub struct EigenPair {
    pub values: Vec<Complex64>,
    /// Right eigenvectors as columns, row-major dim x dim.
    pub vectors: Vec<Complex64>,
    /// Inverse of the eigenvector matrix (rows are left eigenvectors).
    pub inv_vectors: Vec<Complex64>,
    /// Condition number of the eigenvector matrix.
    pub cond: f64,
}

/// General complex eigendecomposition A = V diag(values) V^{-1}.
pub fn eigen(a: &[Complex64], dim: usize) -> Result<EigenPair> {
    let m = to_faer(a, dim, dim);
    let evd = m
        .eigen()
        .map_err(|e| Error::EigenFailure(format!("eigen: {e:?}")))?;
    let u = evd.U().to_owned();
    let values: Vec<Complex64> = (0..dim).map(|i| evd.S()[i]).collect();
    let svd = u
        .svd()
        .map_err(|e| Error::EigenFailure(format!("svd: {e:?}")))?;
    let smax = svd.S()[0].re;
    let smin = svd.S()[dim - 1].re;
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let inv = if cond.is_finite() {
        from_faer(&u.full_piv_lu().inverse())
    } else {
        vec![Complex64::default(); dim * dim]
    };
    Ok(EigenPair {
        values,
        vectors: from_faer(&u),
        inv_vectors: inv,
        cond,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_matmul() {
        let a = vec![
            Complex64::new(2.0, 1.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(1.0, 0.0),
        ];
        let inv = inverse(&a, 2).unwrap();
        let prod = mat_mul(&a, &inv, 2, 2, 2);
        let id = identity(2);
        for (p, e) in prod.iter().zip(&id) {
            assert!((p - e).norm() < 1e-13);
        }
    }

    #[test]
    fn eigen_reconstructs() {
        let a = vec![
            Complex64::new(1.0, 0.2),
            Complex64::new(0.3, -0.1),
            Complex64::new(0.0, 0.4),
            Complex64::new(-0.5, 0.0),
        ];
        let e = eigen(&a, 2).unwrap();
        // V diag V^-1 == A
        let mut vd = e.vectors.clone();
        for i in 0..2 {
            for j in 0..2 {
                vd[i * 2 + j] *= e.values[j];
            }
        }
        let rec = mat_mul(&vd, &e.inv_vectors, 2, 2, 2);
        for (r, x) in rec.iter().zip(&a) {
            assert!((r - x).norm() < 1e-12);
        }
    }

    #[test]
    fn hermitian_min_eig_formula() {
        // [[1, i],[0, 1]] has Hermitian part [[1, i/2],[-i/2, 1]] with
        // eigenvalues 1 +- 1/2 by the characteristic polynomial.
        let a = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        ];
        let k = hermitian_part_min_eig(&a, 2).unwrap();
        assert!((k - 0.5).abs() < 1e-12);
    }
}
