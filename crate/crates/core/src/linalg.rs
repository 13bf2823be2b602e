//! Dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen, LU, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat = DMatrix<C64>;
pub type Vector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Row-major real data into a complex matrix.
pub fn real_mat(rows: usize, cols: usize, data: &[f64]) -> Mat {
    assert_eq!(data.len(), rows * cols);
    Mat::from_fn(rows, cols, |i, j| c(data[i * cols + j], 0.0))
}

pub fn real_diag(d: &[f64]) -> Mat {
    Mat::from_fn(d.len(), d.len(), |i, j| if i == j { c(d[i], 0.0) } else { ZERO })
}

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn zeros(r: usize, cols: usize) -> Mat {
    Mat::zeros(r, cols)
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if is_finite(m) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn ensure_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn herm_part(m: &Mat) -> Mat {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Singular values in descending order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let svd = SVD::new(m.clone(), false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

pub fn spectral_norm(m: &Mat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Smallest of the min(rows, cols) singular values.
pub fn sigma_min(m: &Mat) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// sigma_min / sigma_max, zero for the zero matrix. Empty matrices count as perfectly conditioned.
pub fn inverse_condition(m: &Mat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
        (Some(_), _) => 0.0,
        _ => 1.0,
    }
}

pub fn is_invertible(m: &Mat, tol: f64) -> bool {
    m.nrows() == m.ncols() && inverse_condition(m) > tol
}

/// Numerical rank with threshold rtol * sigma_max.
pub fn rank(m: &Mat, rtol: f64) -> usize {
    let s = singular_values(m);
    let Some(&hi) = s.first() else { return 0 };
    if hi == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rtol * hi).count()
}

/// Orthonormal basis of the right null space, singular values below rtol * sigma_max treated as zero.
pub fn null_space(m: &Mat, rtol: f64) -> Mat {
    let n = m.ncols();
    if n == 0 {
        return zeros(0, 0);
    }
    if m.nrows() == 0 {
        return eye(n);
    }
    let padded = if m.nrows() < n {
        let mut p = zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = SVD::new(padded, false, true);
    let vt = svd.v_t.expect("v_t requested");
    let s = &svd.singular_values;
    let hi = s.iter().copied().fold(0.0, f64::max);
    let cols: Vec<Vector> = (0..s.len())
        .filter(|&k| hi == 0.0 || s[k] <= rtol * hi)
        .map(|k| vt.row(k).adjoint())
        .collect();
    if cols.is_empty() {
        zeros(n, 0)
    } else {
        Mat::from_columns(&cols)
    }
}

/// Eigenvalues of the Hermitian part, ascending.
pub fn hermitian_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(herm_part(m));
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and matching unit eigenvectors.
pub fn hermitian_eigen(m: &Mat) -> (Vec<f64>, Mat) {
    let eig = SymmetricEigen::new(herm_part(m));
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = Mat::from_fn(m.nrows(), idx.len(), |i, j| eig.eigenvectors[(i, idx[j])]);
    (vals, vecs)
}

/// Eigenvalues of a general complex matrix from the diagonal of its Schur form.
pub fn eigenvalues(m: &Mat) -> Result<Vec<C64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(m.clone(), 1e-14, 100_000)
        .ok_or_else(|| Error::Singular("Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// Partial-pivoting LU, rejected when the pivots reveal a numerically singular matrix.
pub fn lu_factor(m: &Mat, what: &str) -> Result<LU<C64, nalgebra::Dyn, nalgebra::Dyn>> {
    ensure_square(m, what)?;
    let lu = LU::new(m.clone());
    let u = lu.u();
    let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].norm()).collect();
    let hi = diag.iter().copied().fold(0.0, f64::max);
    let lo = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if m.nrows() > 0 && (hi == 0.0 || lo <= 1e-15 * hi) {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(lu)
}

/// Solve m X = b with partial-pivoting LU.
pub fn solve(m: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    if m.nrows() == 0 {
        return Ok(b.clone());
    }
    let lu = lu_factor(m, what)?;
    lu.solve(b).ok_or_else(|| Error::Singular(what.to_string()))
}

pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    solve(m, &eye(m.nrows()), what)
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(m: &Mat, rtol: f64) -> Mat {
    if m.nrows() == 0 || m.ncols() == 0 {
        return zeros(m.ncols(), m.nrows());
    }
    let svd = SVD::new(m.clone(), true, true);
    let hi = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut out = zeros(m.ncols(), m.nrows());
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s > rtol * hi && s > 0.0 {
            out += vt.row(k).adjoint() * u.column(k).adjoint() * c(1.0 / s, 0.0);
        }
    }
    out
}

pub fn vstack(blocks: &[&Mat]) -> Mat {
    let cols = blocks.iter().map(|b| b.ncols()).max().unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert!(b.nrows() == 0 || b.ncols() == cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[&Mat]) -> Mat {
    let rows = blocks.iter().map(|b| b.nrows()).max().unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = zeros(rows, cols);
    let mut k = 0;
    for b in blocks {
        assert!(b.ncols() == 0 || b.nrows() == rows, "hstack row mismatch");
        out.view_mut((0, k), (b.nrows(), b.ncols())).copy_from(*b);
        k += b.ncols();
    }
    out
}

pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = zeros(rows, cols);
    let (mut r, mut k) = (0, 0);
    for b in blocks {
        out.view_mut((r, k), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        k += b.ncols();
    }
    out
}

/// Assemble a matrix from a grid of blocks given row and column partition sizes.
pub fn from_blocks(rows: &[usize], cols: &[usize], blocks: &[&[&Mat]]) -> Mat {
    let mut out = zeros(rows.iter().sum(), cols.iter().sum());
    let mut r0 = 0;
    for (bi, &rs) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (bj, &cs) in cols.iter().enumerate() {
            let b = blocks[bi][bj];
            assert_eq!((b.nrows(), b.ncols()), (rs, cs), "block ({bi},{bj}) has wrong shape");
            out.view_mut((r0, c0), (rs, cs)).copy_from(b);
            c0 += cs;
        }
        r0 += rs;
    }
    out
}

/// Columns orthonormal with respect to the Hermitian positive definite metric (modified Gram-Schmidt, two passes).
pub fn metric_orthonormalize(basis: &Mat, metric: &Mat, rtol: f64) -> Mat {
    let mut out: Vec<Vector> = Vec::new();
    for j in 0..basis.ncols() {
        let mut v: Vector = basis.column(j).into_owned();
        let scale = metric_norm(&v, metric);
        for _ in 0..2 {
            for q in &out {
                let proj = (q.adjoint() * metric * &v)[(0, 0)];
                v -= q * proj;
            }
        }
        let nv = metric_norm(&v, metric);
        if nv > rtol * scale.max(f64::MIN_POSITIVE) {
            out.push(v / c(nv, 0.0));
        }
    }
    if out.is_empty() {
        zeros(basis.nrows(), 0)
    } else {
        Mat::from_columns(&out)
    }
}

pub fn metric_norm(v: &Vector, metric: &Mat) -> f64 {
    (v.adjoint() * metric * v)[(0, 0)].re.max(0.0).sqrt()
}

pub fn vec_norm(v: &Vector) -> f64 {
    v.norm()
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Cholesky factor L with m = L L^H for a Hermitian positive definite matrix.
pub fn cholesky(m: &Mat, what: &str) -> Result<Mat> {
    nalgebra::Cholesky::new(herm_part(m))
        .map(|ch| ch.l())
        .ok_or_else(|| Error::NotCoercive(format!("{what} is not positive definite")))
}

pub fn to_real_vec(v: &DVector<f64>) -> Vector {
    v.map(|x| c(x, 0.0))
}
