//! Elimination of the algebraic component.
//!
//! `schur_reduce` solves the closure relation `A21 Q1 x1 + A22 Q2 x2 = 0` for
//! `x2` and returns the generator on `x1`. `subspace_reduce` handles a vanishing
//! closure block, where `x2` acts as a Lagrange multiplier and `x1` is confined
//! to the kernel of `A21 Q1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, eye, hstack, inverse_condition, max_abs, spectral_norm, vstack, zeros, Mat, Vector};
use crate::pencil::{self, BlockDhdae, TOL_INV};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSystem {
    pub n1: usize,
    #[serde(rename = "Ared", with = "crate::json")]
    pub ared: Mat,
    #[serde(with = "crate::json")]
    pub x2_map: Mat,
    #[serde(with = "crate::json")]
    pub inner_metric: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceReducedSystem {
    #[serde(rename = "basis_V", with = "crate::json")]
    pub basis_v: Mat,
    #[serde(rename = "Ared_coords", with = "crate::json")]
    pub ared_coords: Mat,
    #[serde(with = "crate::json")]
    pub multiplier_map: Mat,
}

impl SubspaceReducedSystem {
    pub fn dim(&self) -> usize {
        self.basis_v.ncols()
    }
}

/// `A_red = E1^{-1} (A11 - A12 A22^{-1} A21) Q1`, `x2 = -Q2^{-1} A22^{-1} A21 Q1 x1`.
pub fn schur_reduce(sys: &BlockDhdae) -> Result<ReducedSystem> {
    let (n1, n2) = (sys.n1(), sys.n2());
    let a22 = sys.a22();
    if n2 > 0 && inverse_condition(&a22) <= TOL_INV {
        return Err(Error::ClosureSingular);
    }
    let y = linalg::solve(&a22, &(sys.a21() * sys.q1()), "A22")?;
    let x2_map = -linalg::solve(sys.q2(), &y, "Q2")?;
    let inner = sys.a11() * sys.q1() - sys.a12() * &y;
    let ared = linalg::solve(sys.e1(), &inner, "E1")?;
    Ok(ReducedSystem { n1, ared, x2_map: if n2 == 0 { zeros(0, n1) } else { x2_map }, inner_metric: sys.metric() })
}

pub fn recover_x2(red: &ReducedSystem, x1: &Vector) -> Result<Vector> {
    if x1.len() != red.n1 {
        return Err(Error::Shape(format!("x1 has length {}, expected {}", x1.len(), red.n1)));
    }
    Ok(&red.x2_map * x1)
}

/// Reduction onto `X0 = ker(A21 Q1)` when `A22 = 0`, or onto all of `X1` when `A22` is invertible.
pub fn subspace_reduce(sys: &BlockDhdae) -> Result<SubspaceReducedSystem> {
    let (n1, n2) = (sys.n1(), sys.n2());
    let metric = sys.metric();
    let scale = spectral_norm(sys.a()).max(f64::MIN_POSITIVE);
    let a22 = sys.a22();
    let closure_vanishes = n2 == 0 || max_abs(&a22) <= TOL_INV * scale;
    let closure_invertible = n2 == 0 || inverse_condition(&a22) > TOL_INV;

    if closure_invertible && !closure_vanishes {
        let red = schur_reduce(sys)?;
        let v = linalg::metric_orthonormalize(&eye(n1), &metric, 1e-12);
        let coords = v.adjoint() * &metric * &red.ared * &v;
        let multiplier_map = &red.x2_map * &v;
        return Ok(SubspaceReducedSystem { basis_v: v, ared_coords: coords, multiplier_map });
    }
    if !closure_vanishes {
        return Err(Error::Unsupported(
            "closure block A22 is singular but nonzero; only A22 = 0 or invertible A22 is handled".into(),
        ));
    }
    if !pencil::is_regular_sampled(sys, &pencil::default_samples())?.regular {
        return Err(Error::NotWellDefined("the pencil is singular".into()));
    }

    let c1 = sys.a21() * sys.q1();
    let kernel = linalg::null_space(&c1, TOL_INV);
    let v = linalg::metric_orthonormalize(&kernel, &metric, 1e-10);
    let m = v.ncols();
    if m == 0 {
        return Ok(SubspaceReducedSystem {
            basis_v: zeros(n1, 0),
            ared_coords: zeros(0, 0),
            multiplier_map: zeros(n2, 0),
        });
    }

    let e1inv_a12q2 = linalg::solve(sys.e1(), &(sys.a12() * sys.q2()), "E1")?;
    let e1inv_a11q1v = linalg::solve(sys.e1(), &(sys.a11() * sys.q1() * &v), "E1")?;

    // well-definedness: A12 Q2 x2 = E1 y1 with y1 in X0 forces y1 = 0
    let s = &c1 * &e1inv_a12q2;
    let ks = linalg::null_space(&s, TOL_INV);
    if ks.ncols() > 0 {
        let leak = &e1inv_a12q2 * &ks;
        if max_abs(&leak) > 1e-10 * max_abs(&e1inv_a12q2).max(1.0) {
            return Err(Error::NotWellDefined(
                "a multiplier direction moves x1 inside the constraint space".into(),
            ));
        }
    }

    // multiplier keeps the velocity w inside X0: C1 (E1^{-1}A11Q1 v + E1^{-1}A12Q2 mu) = 0
    let rhs = -(&c1 * &e1inv_a11q1v);
    let mu = linalg::pinv(&s, TOL_INV) * &rhs;
    let w = &e1inv_a11q1v + &e1inv_a12q2 * &mu;
    let coords = v.adjoint() * &metric * &w;
    let residual = &w - &v * &coords;
    if max_abs(&residual) > 1e-10 * max_abs(&w).max(1.0) {
        return Err(Error::NotWellDefined("reduced vector field leaves the constraint space".into()));
    }
    Ok(SubspaceReducedSystem { basis_v: v, ared_coords: coords, multiplier_map: mu })
}

/// `A0 - B0 (B0^H B0)^{-1} B0^H A0`.
pub fn output_nulling_generator(a0: &Mat, b0: &Mat) -> Result<Mat> {
    linalg::ensure_square(a0, "A0")?;
    if b0.nrows() != a0.nrows() || b0.ncols() == 0 {
        return Err(Error::Shape("B0 must have as many rows as A0 and at least one column".into()));
    }
    let gram = b0.adjoint() * b0;
    if inverse_condition(&gram) <= TOL_INV {
        return Err(Error::Singular("B0 does not have full column rank".into()));
    }
    let proj = b0 * linalg::solve(&gram, &(b0.adjoint() * a0), "B0^H B0")?;
    Ok(a0 - proj)
}

/// Interconnection `[[A0, B0, 0], [-B0^H, 0, I], [0, -I, -K]]` with the last two blocks algebraic.
pub fn feedback_system(a0: &Mat, b0: &Mat, k: &Mat) -> Result<BlockDhdae> {
    linalg::ensure_square(a0, "A0")?;
    linalg::ensure_square(k, "K")?;
    let (n, m) = (a0.nrows(), b0.ncols());
    if b0.nrows() != n || k.nrows() != m {
        return Err(Error::Shape("A0 is n x n, B0 must be n x m and K m x m".into()));
    }
    if !pencil::check_dissipative(a0, pencil::TOL_PSD)? {
        return Err(Error::NotDissipative("A0".into()));
    }
    if !pencil::check_dissipative(&-k, pencil::TOL_PSD)? {
        return Err(Error::NotDissipative("K + K^H is not positive semidefinite".into()));
    }
    let a = linalg::from_blocks(
        &[n, m, m],
        &[n, m, m],
        &[
            &[a0, b0, &zeros(n, m)],
            &[&-b0.adjoint(), &zeros(m, m), &eye(m)],
            &[&zeros(m, n), &-eye(m), &-k],
        ],
    );
    BlockDhdae::new(eye(n), eye(n), eye(2 * m), a)
}

pub fn feedback_reduce(a0: &Mat, b0: &Mat, k: &Mat) -> Result<Mat> {
    Ok(schur_reduce(&feedback_system(a0, b0, k)?)?.ared)
}

/// System with `A = [[0, -L, 0], [L^H, G, K0^H], [0, -K0, -I]]` and its expected reduction
/// `[[0, -L], [L^H, G - K0^H K0]]`.
pub fn impedance_construct(l: &Mat, k0: &Mat, g: &Mat) -> Result<(BlockDhdae, Mat)> {
    let (nh, nv, nu) = (l.nrows(), l.ncols(), k0.nrows());
    linalg::ensure_square(g, "G")?;
    if g.nrows() != nv || k0.ncols() != nv {
        return Err(Error::Shape("L is nh x nv, G must be nv x nv and K0 nu x nv".into()));
    }
    if !pencil::check_dissipative(g, pencil::TOL_PSD)? {
        return Err(Error::NotDissipative("G".into()));
    }
    let a = linalg::from_blocks(
        &[nh, nv, nu],
        &[nh, nv, nu],
        &[
            &[&zeros(nh, nh), &-l, &zeros(nh, nu)],
            &[&l.adjoint(), g, &k0.adjoint()],
            &[&zeros(nu, nh), &-k0, &-eye(nu)],
        ],
    );
    let top = hstack(&[&zeros(nh, nh), &-l]);
    let bottom = hstack(&[&l.adjoint(), &(g - k0.adjoint() * k0)]);
    let target = vstack(&[&top, &bottom]);
    let sys = BlockDhdae::new(eye(nh + nv), eye(nh + nv), eye(nu), a)?;
    Ok((sys, target))
}

/// Largest eigenvalue of the metric-weighted Hermitian part of a generator, relative to its norm.
pub fn metric_dissipation(metric: &Mat, ared: &Mat) -> f64 {
    let ma = metric * ared;
    let scale = spectral_norm(&ma);
    if scale == 0.0 {
        return 0.0;
    }
    linalg::hermitian_eigenvalues(&ma).last().copied().unwrap_or(0.0) / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, real_diag, real_mat};
    use crate::random;
    use proptest::prelude::*;

    #[test]
    fn scalar_schur() {
        let sys = BlockDhdae::new(eye(1), eye(1), eye(1), real_mat(2, 2, &[-1.0, 2.0, 0.0, -1.0])).unwrap();
        let red = schur_reduce(&sys).unwrap();
        assert_eq!(red.ared, real_diag(&[-1.0]));
        assert_eq!(red.x2_map, zeros(1, 1));
        let x2 = recover_x2(&red, &Vector::from_element(1, c(5.0, 0.0))).unwrap();
        assert_eq!(x2[0], c(0.0, 0.0));
        assert!(recover_x2(&red, &Vector::zeros(2)).is_err());
    }

    #[test]
    fn singular_closure_redirects() {
        let sys = BlockDhdae::new(eye(1), eye(1), eye(1), real_mat(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
        assert!(matches!(schur_reduce(&sys), Err(Error::ClosureSingular)));
    }

    #[test]
    fn scalar_feedback() {
        let r = feedback_reduce(&real_diag(&[-1.0]), &real_diag(&[1.0]), &real_diag(&[2.0])).unwrap();
        assert!((r[(0, 0)] - c(-3.0, 0.0)).norm() < 1e-14);
        let a0 = real_mat(2, 2, &[-1.0, 1.0, -1.0, -0.5]);
        let b0 = real_mat(2, 1, &[1.0, 2.0]);
        let r = feedback_reduce(&a0, &b0, &zeros(1, 1)).unwrap();
        assert!((r - a0).norm() < 1e-14);
    }

    #[test]
    fn block_constraint_example() {
        let a0 = real_diag(&[-1.0, -2.0]);
        let b0 = real_mat(2, 1, &[1.0, 1.0]);
        let a = linalg::from_blocks(&[2, 1], &[2, 1], &[&[&a0, &b0], &[&-b0.adjoint(), &zeros(1, 1)]]);
        let sys = BlockDhdae::new(eye(2), eye(2), eye(1), a).unwrap();
        let sub = subspace_reduce(&sys).unwrap();
        assert_eq!(sub.dim(), 1);
        let v = sub.basis_v.column(0);
        assert!((v[0] + v[1]).norm() < 1e-14);
        assert!((sub.ared_coords[(0, 0)] - c(-1.5, 0.0)).norm() < 1e-14);

        let gen = output_nulling_generator(&a0, &b0).unwrap();
        let restricted = sub.basis_v.adjoint() * &gen * &sub.basis_v;
        assert!((restricted - &sub.ared_coords).norm() < 1e-10);
        // direct projector arithmetic: P = I - b b^T / 2
        let p = eye(2) - &b0 * b0.adjoint() * c(0.5, 0.0);
        assert!((&p * &a0 - gen).norm() < 1e-14);
    }

    #[test]
    fn output_nulling_edge_cases() {
        assert!(output_nulling_generator(&eye(2), &zeros(2, 0)).is_err());
        assert!(output_nulling_generator(&eye(2), &real_mat(2, 2, &[1.0, 1.0, 1.0, 1.0])).is_err());
        let g = output_nulling_generator(&zeros(2, 2), &real_mat(2, 1, &[1.0, 0.0])).unwrap();
        assert_eq!(g, zeros(2, 2));
        let g = output_nulling_generator(&real_diag(&[-1.0, -3.0]), &eye(2)).unwrap();
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn unconstrained_subspace_reduction() {
        let a = real_mat(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        let sys = BlockDhdae::new(real_diag(&[2.0]), eye(1), eye(1), a);
        // A22 = 0 and A12 = 0 leaves x2 undetermined: the pencil is singular
        assert!(subspace_reduce(&sys.unwrap()).is_err());
        let sys = BlockDhdae::new(real_diag(&[2.0]), real_diag(&[3.0]), zeros(0, 0), real_diag(&[-1.0])).unwrap();
        let sub = subspace_reduce(&sys).unwrap();
        // metric 6, basis 1/sqrt(6), generator E1^{-1} A11 Q1 = -3/2
        assert!((sub.ared_coords[(0, 0)] - c(-1.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn singular_nonzero_closure_rejected() {
        let a = linalg::from_blocks(
            &[1, 2],
            &[1, 2],
            &[&[&real_diag(&[-1.0]), &real_mat(1, 2, &[1.0, 0.0])], &[&real_mat(2, 1, &[-1.0, 0.0]), &real_diag(&[0.0, -1.0])]],
        );
        let sys = BlockDhdae::new(eye(1), eye(1), eye(2), a).unwrap();
        assert!(matches!(subspace_reduce(&sys), Err(Error::Unsupported(_))));
    }

    #[test]
    fn impedance_examples() {
        let l = real_mat(2, 1, &[1.0, 2.0]);
        let g = real_diag(&[-0.5]);
        let (sys, target) = impedance_construct(&l, &zeros(1, 1), &g).unwrap();
        let red = schur_reduce(&sys).unwrap();
        assert!((&red.ared - &target).norm() < 1e-14);
        assert!((target.view((2, 2), (1, 1)).into_owned() - &g).norm() < 1e-14);

        let (sys, _) = impedance_construct(&zeros(1, 1), &eye(1), &zeros(1, 1)).unwrap();
        assert!((schur_reduce(&sys).unwrap().ared - real_diag(&[0.0, -1.0])).norm() < 1e-14);
        assert!(impedance_construct(&zeros(1, 1), &eye(1), &eye(1)).is_err());
    }

    #[test]
    fn feedback_fixture_kernel_conditions() {
        let sys = feedback_system(&real_diag(&[-1.0, -0.5]), &real_mat(2, 1, &[1.0, 0.0]), &real_diag(&[2.0])).unwrap();
        assert_eq!(pencil::kernel_tests(&sys), (true, true));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reduced_generator_is_dissipative(seed in any::<u64>(), n1 in 1usize..6, n2 in 0usize..6) {
            let mut rng = random::rng(seed);
            let sys = random::block_dhdae(&mut rng, n1, n2);
            if let Ok(red) = schur_reduce(&sys) {
                prop_assert!(metric_dissipation(&red.inner_metric, &red.ared) <= 1e-10);
                let resid = sys.a21() * sys.q1() + sys.a22() * sys.q2() * &red.x2_map;
                prop_assert!(max_abs(&resid) <= 1e-12 * max_abs(sys.a()).max(1.0) * 10.0);
            }
        }

        #[test]
        fn pencil_and_generator_share_spectrum(seed in any::<u64>(), n1 in 1usize..6, n2 in 0usize..6) {
            let mut rng = random::rng(seed);
            let sys = random::block_dhdae(&mut rng, n1, n2);
            let red = schur_reduce(&sys).unwrap();
            // det(sE - AQ) = det(-A22 Q2) det(E1) det(sI - Ared), checked at n1 + 2 points
            let k = (-sys.a22() * sys.q2()).determinant() * sys.e1().determinant();
            for j in 0..n1 + 2 {
                let s = c(0.3 + j as f64, 0.7 * j as f64 - 1.0);
                let lhs = sys.pencil_at(s).determinant();
                let rhs = k * (eye(n1) * s - &red.ared).determinant();
                prop_assert!((lhs - rhs).norm() <= 1e-8 * lhs.norm().max(rhs.norm()).max(1e-300));
            }
            for lam in linalg::eigenvalues(&red.ared).unwrap() {
                let scale = lam.norm() * linalg::spectral_norm(&sys.e()) + linalg::spectral_norm(&sys.aq());
                prop_assert!(linalg::sigma_min(&sys.pencil_at(lam)) <= 1e-8 * scale);
            }
        }

        #[test]
        fn subspace_matches_schur_when_unconstrained(seed in any::<u64>(), n1 in 1usize..6, n2 in 1usize..6) {
            let mut rng = random::rng(seed);
            let sys = random::block_dhdae(&mut rng, n1, n2);
            let red = schur_reduce(&sys).unwrap();
            let sub = subspace_reduce(&sys).unwrap();
            prop_assert_eq!(sub.dim(), n1);
            let lifted = &sub.basis_v * &sub.ared_coords * sub.basis_v.adjoint() * &red.inner_metric;
            prop_assert!((lifted - &red.ared).norm() <= 1e-10 * red.ared.norm().max(1.0));
        }

        #[test]
        fn multiplier_reduction_properties(seed in any::<u64>(), n in 2usize..7, m in 1usize..3) {
            let mut rng = random::rng(seed);
            let m = m.min(n - 1);
            let a0 = random::dissipative(&mut rng, n, n);
            let b0 = random::matrix(&mut rng, n, m);
            let a = linalg::from_blocks(&[n, m], &[n, m], &[&[&a0, &b0], &[&-b0.adjoint(), &zeros(m, m)]]);
            let sys = BlockDhdae::new(eye(n), eye(n), eye(m), a).unwrap();
            let sub = subspace_reduce(&sys).unwrap();
            prop_assert_eq!(sub.dim(), n - m);
            let gram = sub.basis_v.adjoint() * &sub.basis_v;
            prop_assert!((gram - eye(n - m)).norm() < 1e-12);
            let h = linalg::hermitian_eigenvalues(&sub.ared_coords);
            prop_assert!(h.last().copied().unwrap_or(0.0) <= 1e-10);
            let gen = output_nulling_generator(&a0, &b0).unwrap();
            let restricted = sub.basis_v.adjoint() * &gen * &sub.basis_v;
            prop_assert!((restricted - &sub.ared_coords).norm() < 1e-10);
        }
    }
}
