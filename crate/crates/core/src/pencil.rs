//! Block data model for `E x' = A Q x` and the structural checks on it:
//! dissipativity, coercivity, regularity of the pencil `sE - AQ`, kernel
//! diagnostics and extension by a passive third component.
//!
//! In finite dimensions every dissipative matrix is maximally dissipative, so
//! the checks below only ever test dissipativity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, block_diag, c, ensure_finite, ensure_square, hermitian_eigenvalues, inverse_condition,
    null_space, spectral_norm, vstack, zeros, Mat, Vector, C64,
};

/// Relative tolerance for Hermitian symmetry checks.
pub const TOL_SYM: f64 = 1e-10;
/// Relative tolerance for semidefiniteness checks.
pub const TOL_PSD: f64 = 1e-10;
/// A matrix is invertible when sigma_min / sigma_max exceeds this.
pub const TOL_INV: f64 = 1e-12;

pub fn default_samples() -> Vec<C64> {
    vec![c(1.0, 0.0), c(1.0, 1.0), c(10.0, 0.0)]
}

/// True iff the Hermitian part of `m` is negative semidefinite up to `tol * |m|`.
pub fn check_dissipative(m: &Mat, tol: f64) -> Result<bool> {
    ensure_square(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    if m.nrows() == 0 {
        return Ok(true);
    }
    let lmax = hermitian_eigenvalues(m).last().copied().unwrap_or(0.0);
    Ok(lmax <= tol * spectral_norm(m))
}

/// True iff `E1^H Q1` is Hermitian and positive definite, both relative to its norm.
pub fn check_coercive(e1: &Mat, q1: &Mat, tol: f64) -> Result<bool> {
    ensure_square(e1, "E1")?;
    ensure_square(q1, "Q1")?;
    if e1.nrows() != q1.nrows() {
        return Err(Error::Shape(format!(
            "E1 is {}x{} but Q1 is {}x{}",
            e1.nrows(),
            e1.ncols(),
            q1.nrows(),
            q1.ncols()
        )));
    }
    let p = e1.adjoint() * q1;
    let scale = spectral_norm(&p);
    if scale == 0.0 {
        return Ok(false);
    }
    if (&p - p.adjoint()).norm() > tol * scale * (p.nrows() as f64).sqrt().max(1.0) {
        return Ok(false);
    }
    let lmin = hermitian_eigenvalues(&p).first().copied().unwrap_or(0.0);
    Ok(lmin > tol * scale)
}

/// `E = diag(E1, 0)`, `Q = diag(Q1, Q2)` and a dissipative `A` partitioned conformally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlockDhdaeJson", into = "BlockDhdaeJson")]
pub struct BlockDhdae {
    n1: usize,
    n2: usize,
    e1: Mat,
    q1: Mat,
    q2: Mat,
    a: Mat,
}

impl BlockDhdae {
    pub fn new(e1: Mat, q1: Mat, q2: Mat, a: Mat) -> Result<Self> {
        let n1 = e1.nrows();
        let n2 = q2.nrows();
        if n1 == 0 {
            return Err(Error::Shape("n1 must be at least 1".into()));
        }
        ensure_square(&e1, "E1")?;
        ensure_square(&q1, "Q1")?;
        ensure_square(&q2, "Q2")?;
        if q1.nrows() != n1 {
            return Err(Error::Shape(format!("Q1 must be {n1}x{n1}")));
        }
        if a.shape() != (n1 + n2, n1 + n2) {
            return Err(Error::Shape(format!(
                "A must be {0}x{0}, got {1}x{2}",
                n1 + n2,
                a.nrows(),
                a.ncols()
            )));
        }
        for (m, name) in [(&e1, "E1"), (&q1, "Q1"), (&q2, "Q2"), (&a, "A")] {
            ensure_finite(m, name)?;
        }
        for (m, name) in [(&e1, "E1"), (&q1, "Q1"), (&q2, "Q2")] {
            if m.nrows() > 0 && inverse_condition(m) <= TOL_INV {
                return Err(Error::Singular(format!("{name} is not invertible")));
            }
        }
        if !check_coercive(&e1, &q1, TOL_PSD)? {
            return Err(Error::NotCoercive("E1^H Q1 is not Hermitian positive definite".into()));
        }
        if !check_dissipative(&a, TOL_PSD)? {
            return Err(Error::NotDissipative("A + A^H is not negative semidefinite".into()));
        }
        Ok(Self { n1, n2, e1, q1, q2, a })
    }

    /// Identity weights: `E1 = Q1 = I`, `Q2 = I`.
    pub fn with_identity_weights(n1: usize, a: Mat) -> Result<Self> {
        let n2 = a.nrows().saturating_sub(n1);
        Self::new(linalg::eye(n1), linalg::eye(n1), linalg::eye(n2), a)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }
    pub fn n2(&self) -> usize {
        self.n2
    }
    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }
    pub fn e1(&self) -> &Mat {
        &self.e1
    }
    pub fn q1(&self) -> &Mat {
        &self.q1
    }
    pub fn q2(&self) -> &Mat {
        &self.q2
    }
    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn a11(&self) -> Mat {
        self.a.view((0, 0), (self.n1, self.n1)).into_owned()
    }
    pub fn a12(&self) -> Mat {
        self.a.view((0, self.n1), (self.n1, self.n2)).into_owned()
    }
    pub fn a21(&self) -> Mat {
        self.a.view((self.n1, 0), (self.n2, self.n1)).into_owned()
    }
    pub fn a22(&self) -> Mat {
        self.a.view((self.n1, self.n1), (self.n2, self.n2)).into_owned()
    }

    pub fn e(&self) -> Mat {
        block_diag(&[&self.e1, &zeros(self.n2, self.n2)])
    }
    pub fn q(&self) -> Mat {
        block_diag(&[&self.q1, &self.q2])
    }
    pub fn aq(&self) -> Mat {
        &self.a * self.q()
    }
    /// `E1^H Q1`, the energy inner product on the first component.
    pub fn metric(&self) -> Mat {
        self.e1.adjoint() * &self.q1
    }

    pub fn pencil_at(&self, s: C64) -> Mat {
        self.e() * s - self.aq()
    }

    pub fn as_raw(&self) -> RawPencil {
        RawPencil { e: self.e(), a: self.a.clone(), q: self.q() }
    }

    /// Same A with `E1 = Q1 = I`, `Q2 = I`.
    pub fn normalized(&self) -> BlockDhdae {
        BlockDhdae {
            n1: self.n1,
            n2: self.n2,
            e1: linalg::eye(self.n1),
            q1: linalg::eye(self.n1),
            q2: linalg::eye(self.n2),
            a: self.a.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BlockDhdaeJson {
    n1: usize,
    n2: usize,
    #[serde(rename = "E1", with = "crate::json")]
    e1: Mat,
    #[serde(rename = "Q1", with = "crate::json")]
    q1: Mat,
    #[serde(rename = "Q2", with = "crate::json")]
    q2: Mat,
    #[serde(rename = "A", with = "crate::json")]
    a: Mat,
}

impl From<BlockDhdae> for BlockDhdaeJson {
    fn from(s: BlockDhdae) -> Self {
        Self { n1: s.n1, n2: s.n2, e1: s.e1, q1: s.q1, q2: s.q2, a: s.a }
    }
}

impl TryFrom<BlockDhdaeJson> for BlockDhdae {
    type Error = Error;
    fn try_from(j: BlockDhdaeJson) -> Result<Self> {
        let q2 = if j.n2 == 0 { zeros(0, 0) } else { j.q2 };
        let sys = BlockDhdae::new(j.e1, j.q1, q2, j.a)?;
        if sys.n1 != j.n1 || sys.n2 != j.n2 {
            return Err(Error::Shape("n1/n2 do not match the matrix sizes".into()));
        }
        Ok(sys)
    }
}

/// A pencil `(E, AQ)` without block structure, for fixtures that violate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPencil {
    #[serde(rename = "E", with = "crate::json")]
    pub e: Mat,
    #[serde(rename = "A", with = "crate::json")]
    pub a: Mat,
    #[serde(rename = "Q", with = "crate::json")]
    pub q: Mat,
}

impl RawPencil {
    pub fn new(e: Mat, a: Mat, q: Mat) -> Result<Self> {
        let n = e.nrows();
        for (m, name) in [(&e, "E"), (&a, "A"), (&q, "Q")] {
            ensure_square(m, name)?;
            ensure_finite(m, name)?;
            if m.nrows() != n {
                return Err(Error::Shape(format!("{name} must be {n}x{n}")));
            }
        }
        Ok(Self { e, a, q })
    }

    pub fn aq(&self) -> Mat {
        &self.a * &self.q
    }

    pub fn pencil_at(&self, s: C64) -> Mat {
        &self.e * s - self.aq()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    #[serde(with = "crate::json::complex")]
    pub s: C64,
    /// sigma_max / sigma_min of `sE - AQ`; `None` when sigma_min vanishes exactly.
    pub cond: Option<f64>,
    pub invertible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub regular: bool,
    pub sampled_points: Vec<SamplePoint>,
    pub stacked_sigma_min: f64,
    pub injective_x2: bool,
    pub surjective_x2: bool,
    pub common_kernel_dim: usize,
}

fn sample(pencil: impl Fn(C64) -> Mat, s_list: &[C64]) -> Result<Vec<SamplePoint>> {
    if s_list.is_empty() {
        return Err(Error::InvalidParam("sample list for s is empty".into()));
    }
    s_list
        .iter()
        .map(|&s| {
            if !(s.re > 0.0) {
                return Err(Error::InvalidParam(format!("sample s = {s} must have positive real part")));
            }
            let rc = inverse_condition(&pencil(s));
            Ok(SamplePoint {
                s,
                cond: if rc > 0.0 { Some(1.0 / rc) } else { None },
                invertible: rc > TOL_INV,
            })
        })
        .collect()
}

/// Samples `sE - AQ` and collects the stacked bound and kernel diagnostics.
pub fn is_regular_sampled(sys: &BlockDhdae, s_list: &[C64]) -> Result<RegularityReport> {
    let sampled_points = sample(|s| sys.pencil_at(s), s_list)?;
    let (injective_x2, surjective_x2) = kernel_tests(sys);
    Ok(RegularityReport {
        regular: sampled_points.iter().any(|p| p.invertible),
        sampled_points,
        stacked_sigma_min: stacked_bound(sys),
        injective_x2,
        surjective_x2,
        common_kernel_dim: common_kernel(&[&sys.e(), &sys.aq()], TOL_INV)?.ncols(),
    })
}

/// Regularity for a pencil without block structure. The kernel flags then
/// refer to the common right and left kernels of `E` and `AQ`.
pub fn is_regular_raw(p: &RawPencil, s_list: &[C64]) -> Result<RegularityReport> {
    let sampled_points = sample(|s| p.pencil_at(s), s_list)?;
    let aq = p.aq();
    let right = common_kernel(&[&p.e, &aq], TOL_INV)?.ncols();
    let left = common_kernel(&[&p.e.adjoint(), &aq.adjoint()], TOL_INV)?.ncols();
    Ok(RegularityReport {
        regular: sampled_points.iter().any(|p| p.invertible),
        sampled_points,
        stacked_sigma_min: linalg::sigma_min(&vstack(&[&p.e, &aq])),
        injective_x2: right == 0,
        surjective_x2: left == 0,
        common_kernel_dim: right,
    })
}

/// sigma_min of the stacked matrix `[E; AQ]`.
pub fn stacked_bound(sys: &BlockDhdae) -> f64 {
    linalg::sigma_min(&vstack(&[&sys.e(), &sys.aq()]))
}

/// True when the stacked bound certifies regularity.
pub fn stacked_certifies(sys: &BlockDhdae) -> bool {
    let stack = vstack(&[&sys.e(), &sys.aq()]);
    inverse_condition(&stack) > TOL_INV
}

/// `A = J - R` with `J` skew-Hermitian and `R` Hermitian positive semidefinite.
pub fn jr_split(a: &Mat, tol: f64) -> Result<(Mat, Mat)> {
    ensure_square(a, "A")?;
    let j = (a - a.adjoint()) * c(0.5, 0.0);
    let r = -(a + a.adjoint()) * c(0.5, 0.0);
    let lmin = hermitian_eigenvalues(&r).first().copied().unwrap_or(0.0);
    if lmin < -tol * spectral_norm(a) {
        return Err(Error::NotDissipative("R = -(A + A^H)/2 is not positive semidefinite".into()));
    }
    Ok((j, r))
}

/// sigma_min of `[E Q^{-1}; J; R]`.
pub fn vprime_bound(sys: &BlockDhdae) -> Result<f64> {
    let (j, r) = jr_split(sys.a(), TOL_PSD)?;
    let eq = sys.e() * linalg::inverse(&sys.q(), "Q")?;
    Ok(linalg::sigma_min(&vstack(&[&eq, &j, &r])))
}

/// `(injective, surjective)`: `A [0; x2] = 0 => x2 = 0` and `A^H [0; z2] = 0 => z2 = 0`.
pub fn kernel_tests(sys: &BlockDhdae) -> (bool, bool) {
    let n2 = sys.n2();
    if n2 == 0 {
        return (true, true);
    }
    let col = sys.a().columns(sys.n1(), n2).into_owned();
    let row_adj = sys.a().rows(sys.n1(), n2).adjoint();
    (
        linalg::rank(&col, TOL_INV) == n2,
        linalg::rank(&row_adj, TOL_INV) == n2,
    )
}

/// Orthonormal basis of the intersection of the kernels.
pub fn common_kernel(mats: &[&Mat], tol: f64) -> Result<Mat> {
    let Some(first) = mats.first() else {
        return Err(Error::InvalidParam("no matrices given".into()));
    };
    let n = first.ncols();
    if mats.iter().any(|m| m.ncols() != n) {
        return Err(Error::Shape("matrices must share the column count".into()));
    }
    // each block is scaled to unit norm so a small block is not swamped by a large one
    let scaled: Vec<Mat> = mats
        .iter()
        .filter_map(|m| {
            let s = spectral_norm(m);
            (s > 0.0).then(|| *m / c(s, 0.0))
        })
        .collect();
    if scaled.is_empty() {
        return Ok(linalg::eye(n));
    }
    let refs: Vec<&Mat> = scaled.iter().collect();
    Ok(null_space(&vstack(&refs), tol))
}

/// Hamiltonian `Re <E x, Q x>`.
pub fn hamiltonian(sys: &BlockDhdae, x: &Vector) -> Result<f64> {
    if x.len() != sys.n() {
        return Err(Error::Shape(format!("state has length {}, expected {}", x.len(), sys.n())));
    }
    let x1 = x.rows(0, sys.n1()).into_owned();
    Ok(hamiltonian_x1(sys, &x1))
}

/// `Re <E1 x1, Q1 x1>`.
pub fn hamiltonian_x1(sys: &BlockDhdae, x1: &Vector) -> f64 {
    let ex = sys.e1() * x1;
    let qx = sys.q1() * x1;
    ex.dotc(&qx).re
}

/// True iff `A + eps diag(0, I)` is dissipative. A true result certifies regularity.
pub fn epsilon_shift_test(sys: &BlockDhdae, eps: f64) -> Result<bool> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParam("eps must be positive".into()));
    }
    let mut shifted = sys.a().clone();
    for k in sys.n1()..sys.n() {
        shifted[(k, k)] += c(eps, 0.0);
    }
    check_dissipative(&shifted, TOL_PSD)
}

/// Base system plus a third component `x3` with `E_ext = diag(E1, 0, E3)`,
/// `Q_ext = diag(Q1, Q2, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDhdae {
    base: BlockDhdae,
    e3: Mat,
    a3ext: Mat,
}

/// Appends `x3`. The third block column of `A_ext` is the negative adjoint of
/// the coupling part of `A3ext`, so the coupling is lossless.
pub fn extend_x3(sys: &BlockDhdae, e3: Mat, a3ext: Mat) -> Result<ExtendedDhdae> {
    ensure_square(&e3, "E3")?;
    let n3 = e3.nrows();
    let n = sys.n();
    if a3ext.shape() != (n3, n + n3) {
        return Err(Error::Shape(format!("A3ext must be {n3}x{}", n + n3)));
    }
    ensure_finite(&e3, "E3")?;
    ensure_finite(&a3ext, "A3ext")?;
    if n3 > 0 && inverse_condition(&e3) <= TOL_INV {
        return Err(Error::Singular("E3 is not invertible".into()));
    }
    let ext = ExtendedDhdae { base: sys.clone(), e3, a3ext };
    if !check_dissipative(&ext.a_ext(), TOL_PSD)? {
        return Err(Error::NotDissipative("extended A is not dissipative".into()));
    }
    Ok(ext)
}

pub fn strip_x3(ext: &ExtendedDhdae) -> BlockDhdae {
    ext.base.clone()
}

impl ExtendedDhdae {
    pub fn base(&self) -> &BlockDhdae {
        &self.base
    }
    pub fn n3(&self) -> usize {
        self.e3.nrows()
    }
    pub fn e_ext(&self) -> Mat {
        block_diag(&[&self.base.e(), &self.e3])
    }
    pub fn q_ext(&self) -> Mat {
        block_diag(&[&self.base.q(), &zeros(self.n3(), self.n3())])
    }
    pub fn a_ext(&self) -> Mat {
        let n = self.base.n();
        let n3 = self.n3();
        let coupling = self.a3ext.columns(0, n).into_owned();
        let top = linalg::hstack(&[self.base.a(), &(-coupling.adjoint())]);
        let mut out = vstack(&[&top, &self.a3ext]);
        if n3 == 0 {
            out = self.base.a().clone();
        }
        out
    }
    pub fn as_raw(&self) -> RawPencil {
        RawPencil { e: self.e_ext(), a: self.a_ext(), q: self.q_ext() }
    }
    pub fn hamiltonian(&self, x: &Vector) -> Result<f64> {
        let n = self.base.n() + self.n3();
        if x.len() != n {
            return Err(Error::Shape(format!("state has length {}, expected {n}", x.len())));
        }
        let ex = self.e_ext() * x;
        let qx = self.q_ext() * x;
        Ok(ex.dotc(&qx).re)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eye, real_diag, real_mat};
    use crate::random;
    use proptest::prelude::*;

    fn counter() -> RawPencil {
        let e = real_mat(2, 2, &[1.0, 2.0, 0.0, 0.0]);
        let j = real_mat(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let q = real_mat(2, 2, &[0.0, 0.0, 3.0, 4.0]);
        RawPencil::new(e, j, q).unwrap()
    }

    #[test]
    fn dissipative_examples() {
        assert!(check_dissipative(&real_mat(2, 2, &[0.0, -1.0, 1.0, 0.0]), TOL_PSD).unwrap());
        assert!(check_dissipative(&real_diag(&[0.0, 0.0, 0.0, -1.0]), TOL_PSD).unwrap());
        assert!(!check_dissipative(&real_diag(&[1.0]), TOL_PSD).unwrap());
        assert!(check_dissipative(&real_mat(1, 2, &[0.0, 0.0]), TOL_PSD).is_err());
    }

    #[test]
    fn coercive_examples() {
        assert!(check_coercive(&eye(2), &real_diag(&[2.0, 3.0]), TOL_PSD).unwrap());
        assert!(!check_coercive(&real_diag(&[1.0]), &real_diag(&[-1.0]), TOL_PSD).unwrap());
        let swap = real_mat(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(!check_coercive(&swap, &eye(2), TOL_PSD).unwrap());
        assert!(check_coercive(&eye(2), &eye(3), TOL_PSD).is_err());
    }

    #[test]
    fn hamiltonian_scalar() {
        let sys = BlockDhdae::new(real_diag(&[2.0]), real_diag(&[1.0]), zeros(0, 0), real_diag(&[-1.0])).unwrap();
        let h = hamiltonian(&sys, &Vector::from_element(1, c(3.0, 0.0))).unwrap();
        assert_eq!(h, 18.0);
        assert_eq!(hamiltonian(&sys, &Vector::zeros(1)).unwrap(), 0.0);
        assert!(hamiltonian(&sys, &Vector::zeros(2)).is_err());
    }

    #[test]
    fn counter_fixture_is_singular_everywhere() {
        let p = counter();
        let rep = is_regular_raw(&p, &[c(1.0, 0.0), c(1.0, 1.0), c(10.0, 0.0), c(0.3, -7.0)]).unwrap();
        assert!(!rep.regular);
        assert!(rep.sampled_points.iter().all(|s| !s.invertible));
        assert_eq!(rep.common_kernel_dim, 0);
        // the determinant vanishes at n + 1 distinct points, so it is the zero polynomial
        for s in [c(1.0, 0.0), c(2.0, 0.5), c(3.0, -1.0)] {
            assert!(p.pencil_at(s).determinant().norm() < 1e-12);
        }
    }

    #[test]
    fn identity_pencil_regular() {
        let sys = BlockDhdae::new(eye(2), eye(2), zeros(0, 0), -eye(2)).unwrap();
        let rep = is_regular_sampled(&sys, &[c(1.0, 0.0)]).unwrap();
        assert!(rep.regular);
        assert!(is_regular_sampled(&sys, &[]).is_err());
        assert!(is_regular_sampled(&sys, &[c(-1.0, 0.0)]).is_err());
    }

    #[test]
    fn stacked_bound_examples() {
        let a = real_mat(2, 2, &[0.0, -1.0, 1.0, -1.0]);
        let sys = BlockDhdae::new(eye(1), eye(1), eye(1), a).unwrap();
        // Gram matrix of the stack is [[2,1],[1,2]], smallest eigenvalue 1
        assert!((stacked_bound(&sys) - 1.0).abs() < 1e-12);
        let raw = RawPencil::new(zeros(2, 2), zeros(2, 2), eye(2)).unwrap();
        assert_eq!(is_regular_raw(&raw, &default_samples()).unwrap().stacked_sigma_min, 0.0);
    }

    #[test]
    fn jr_split_examples() {
        let (j, r) = jr_split(&real_mat(2, 2, &[0.0, -1.0, 1.0, -2.0]), TOL_PSD).unwrap();
        assert_eq!(j, real_mat(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        assert_eq!(r, real_diag(&[0.0, 2.0]));
        let (_, r) = jr_split(&real_mat(2, 2, &[0.0, 3.0, -3.0, 0.0]), TOL_PSD).unwrap();
        assert_eq!(r, zeros(2, 2));
        assert!(matches!(jr_split(&real_diag(&[1.0]), TOL_PSD), Err(Error::NotDissipative(_))));
    }

    #[test]
    fn kernel_tests_examples() {
        let a = real_mat(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        let sys = BlockDhdae::new(eye(1), eye(1), eye(1), a).unwrap();
        assert_eq!(kernel_tests(&sys), (false, false));
    }

    #[test]
    fn common_kernel_examples() {
        let p = counter();
        assert_eq!(common_kernel(&[&p.e, &p.aq()], TOL_INV).unwrap().ncols(), 0);
        assert_eq!(common_kernel(&[&zeros(2, 3)], TOL_INV).unwrap(), eye(3));
        assert_eq!(common_kernel(&[&eye(3)], TOL_INV).unwrap().ncols(), 0);
    }

    #[test]
    fn epsilon_shift_examples() {
        let a = real_mat(2, 2, &[-1.0, 1.0, -1.0, -1.0]);
        let sys = BlockDhdae::new(eye(1), eye(1), eye(1), a).unwrap();
        assert!(epsilon_shift_test(&sys, 0.5).unwrap());
        assert!(is_regular_sampled(&sys, &default_samples()).unwrap().regular);

        let sys = BlockDhdae::new(eye(1), eye(1), eye(1), real_diag(&[-1.0, 0.0])).unwrap();
        assert!(!epsilon_shift_test(&sys, 1.0).unwrap());

        let a = real_mat(2, 2, &[0.0, 1.0, -1.0, -1.0]);
        let sys = BlockDhdae::new(eye(1), eye(1), eye(1), a).unwrap();
        assert!(epsilon_shift_test(&sys, 0.5).unwrap());
    }

    #[test]
    fn closure_block_invertibility_is_only_sufficient() {
        // lossless coupling with a vanishing closure block is still regular
        let a = real_mat(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let sys = BlockDhdae::new(eye(1), eye(1), eye(1), a).unwrap();
        assert!(!linalg::is_invertible(&sys.a22(), TOL_INV));
        assert!(is_regular_sampled(&sys, &default_samples()).unwrap().regular);
        assert!(stacked_certifies(&sys));
    }

    #[test]
    fn extension_decoupled_and_round_trip() {
        let sys = BlockDhdae::new(eye(1), eye(1), eye(1), real_mat(2, 2, &[-1.0, 1.0, -1.0, -1.0])).unwrap();
        let ext = extend_x3(&sys, eye(1), zeros(1, 3)).unwrap();
        assert!(is_regular_raw(&ext.as_raw(), &default_samples()).unwrap().regular);
        assert_eq!(strip_x3(&ext), sys);
        let empty = extend_x3(&sys, zeros(0, 0), zeros(0, 2)).unwrap();
        assert_eq!(empty.a_ext(), *sys.a());
        assert!(matches!(extend_x3(&sys, zeros(1, 1), zeros(1, 3)), Err(Error::Singular(_))));
        assert!(matches!(
            extend_x3(&sys, eye(1), real_mat(1, 3, &[0.0, 0.0, 1.0])),
            Err(Error::NotDissipative(_))
        ));
    }

    #[test]
    fn extension_of_singular_pencil_stays_singular() {
        let sys = BlockDhdae::new(eye(1), eye(1), eye(1), real_diag(&[-1.0, 0.0])).unwrap();
        assert!(!is_regular_sampled(&sys, &default_samples()).unwrap().regular);
        let ext = extend_x3(&sys, eye(1), real_mat(1, 3, &[1.0, 0.0, 0.0])).unwrap();
        assert!(!is_regular_raw(&ext.as_raw(), &default_samples()).unwrap().regular);
    }

    #[test]
    fn json_round_trip() {
        let sys = BlockDhdae::new(real_diag(&[2.0]), eye(1), eye(1), real_mat(2, 2, &[-1.0, 2.0, 0.0, -1.0])).unwrap();
        let text = serde_json::to_string(&sys).unwrap();
        let back: BlockDhdae = serde_json::from_str(&text).unwrap();
        assert_eq!(sys, back);
        let bad = text.replace("\"n1\":1", "\"n1\":2");
        assert!(serde_json::from_str::<BlockDhdae>(&bad).is_err());
    }

    #[test]
    fn construction_rejects_violations() {
        assert!(matches!(
            BlockDhdae::new(eye(1), eye(1), eye(1), real_diag(&[1.0, -1.0])),
            Err(Error::NotDissipative(_))
        ));
        assert!(matches!(
            BlockDhdae::new(eye(1), real_diag(&[-1.0]), eye(1), real_diag(&[-1.0, -1.0])),
            Err(Error::NotCoercive(_))
        ));
        assert!(matches!(
            BlockDhdae::new(eye(1), eye(1), zeros(1, 1), real_diag(&[-1.0, -1.0])),
            Err(Error::Singular(_))
        ));
        assert!(matches!(BlockDhdae::new(zeros(0, 0), zeros(0, 0), eye(1), eye(1)), Err(Error::Shape(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn resolvent_bound_for_dissipative(seed in any::<u64>(), n in 1usize..7, lambda in 1e-3f64..1e3) {
            let mut rng = random::rng(seed);
            let a = random::dissipative(&mut rng, n, n);
            let x = random::vector(&mut rng, n);
            let lhs = ((linalg::eye(n) * c(lambda, 0.0) - &a) * &x).norm();
            let rhs = lambda * x.norm();
            prop_assert!(lhs >= rhs * (1.0 - 1e-12));
        }

        #[test]
        fn regularity_independent_of_sample(seed in any::<u64>(), n1 in 1usize..6, n2 in 0usize..6) {
            let mut rng = random::rng(seed);
            let sys = random::block_dhdae(&mut rng, n1, n2);
            let at1 = linalg::is_invertible(&sys.pencil_at(c(1.0, 0.0)), TOL_INV);
            let at7 = linalg::is_invertible(&sys.pencil_at(c(7.0, 2.0)), TOL_INV);
            prop_assert_eq!(at1, at7);
        }

        #[test]
        fn identity_normalization_preserves_regularity(seed in any::<u64>(), n1 in 1usize..6, n2 in 0usize..6) {
            let mut rng = random::rng(seed);
            let sys = random::block_dhdae(&mut rng, n1, n2);
            let a = is_regular_sampled(&sys, &default_samples()).unwrap().regular;
            let b = is_regular_sampled(&sys.normalized(), &default_samples()).unwrap().regular;
            prop_assert_eq!(a, b);
        }

        #[test]
        fn regular_implies_kernel_conditions(seed in any::<u64>(), n1 in 1usize..6, n2 in 0usize..6) {
            let mut rng = random::rng(seed);
            let sys = random::block_dhdae(&mut rng, n1, n2);
            let rep = is_regular_sampled(&sys, &default_samples()).unwrap();
            if rep.regular {
                prop_assert!(rep.injective_x2 && rep.surjective_x2);
                prop_assert_eq!(rep.common_kernel_dim, 0);
            }
        }

        #[test]
        fn extension_preserves_energy(seed in any::<u64>(), n1 in 1usize..5, n2 in 0usize..4, n3 in 1usize..3) {
            let mut rng = random::rng(seed);
            let sys = random::block_dhdae(&mut rng, n1, n2);
            let n = sys.n();
            let mut a3 = random::matrix(&mut rng, n3, n + n3);
            let tail = random::dissipative(&mut rng, n3, n3);
            a3.view_mut((0, n), (n3, n3)).copy_from(&tail);
            let ext = extend_x3(&sys, random::invertible(&mut rng, n3), a3).unwrap();
            let x = random::vector(&mut rng, n);
            let x3 = random::vector(&mut rng, n3);
            let mut xe = Vector::zeros(n + n3);
            xe.rows_mut(0, n).copy_from(&x);
            xe.rows_mut(n, n3).copy_from(&x3);
            let h0 = hamiltonian(&sys, &x).unwrap();
            let h1 = ext.hamiltonian(&xe).unwrap();
            prop_assert!((h0 - h1).abs() <= 1e-12 * h0.abs().max(1.0));
            let r0 = is_regular_sampled(&sys, &default_samples()).unwrap().regular;
            let r1 = is_regular_raw(&ext.as_raw(), &default_samples()).unwrap().regular;
            prop_assert_eq!(r0, r1);
        }
    }
}
