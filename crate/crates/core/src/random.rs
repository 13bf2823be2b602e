//! Seeded generators of random conforming instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{c, eye, Mat, Vector};
use crate::pencil::BlockDhdae;
use crate::saddle::SaddleSystem;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn entry(rng: &mut TestRng) -> crate::linalg::C64 {
    c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

pub fn matrix(rng: &mut TestRng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| entry(rng))
}

pub fn real_matrix(rng: &mut TestRng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| c(rng.random_range(-1.0..1.0), 0.0))
}

pub fn vector(rng: &mut TestRng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| entry(rng))
}

pub fn skew(rng: &mut TestRng, n: usize) -> Mat {
    let m = matrix(rng, n, n);
    (&m - m.adjoint()) * c(0.5, 0.0)
}

/// `G G^H` with `G` of size n x rank.
pub fn psd(rng: &mut TestRng, n: usize, rank: usize) -> Mat {
    let g = matrix(rng, n, rank);
    &g * g.adjoint()
}

pub fn hpd(rng: &mut TestRng, n: usize) -> Mat {
    psd(rng, n, n) + eye(n)
}

/// Well-conditioned invertible matrix.
pub fn invertible(rng: &mut TestRng, n: usize) -> Mat {
    matrix(rng, n, n) + eye(n) * c(n as f64 + 1.0, 0.0)
}

/// `J - R` with `R` of the given rank.
pub fn dissipative(rng: &mut TestRng, n: usize, rank: usize) -> Mat {
    skew(rng, n) - psd(rng, n, rank)
}

/// Random conforming block system. The dissipative part has a random rank in `1..=n`.
pub fn block_dhdae(rng: &mut TestRng, n1: usize, n2: usize) -> BlockDhdae {
    let n = n1 + n2;
    let q1 = invertible(rng, n1);
    let p = hpd(rng, n1);
    let e1 = crate::linalg::inverse(&q1.adjoint(), "Q1^H").expect("well conditioned") * p;
    let q2 = invertible(rng, n2);
    let rank = rng.random_range(1..=n);
    let a = dissipative(rng, n, rank);
    BlockDhdae::new(e1, q1, q2, a).expect("conforming by construction")
}

/// Like [`block_dhdae`] but one algebraic direction is decoupled from everything, so the pencil is singular.
pub fn singular_block_dhdae(rng: &mut TestRng, n1: usize, n2: usize) -> BlockDhdae {
    assert!(n2 >= 1);
    let base = block_dhdae(rng, n1, n2);
    let k = n1 + rng.random_range(0..n2);
    let mut a = base.a().clone();
    a.row_mut(k).fill(c(0.0, 0.0));
    a.column_mut(k).fill(c(0.0, 0.0));
    BlockDhdae::new(base.e1().clone(), base.q1().clone(), base.q2().clone(), a).expect("still conforming")
}

/// Random saddle data; `b_rank` and `d_rank` control rank deficiency of `B0` and `D0`.
pub fn saddle(rng: &mut TestRng, nv: usize, nu: usize, b_rank: usize, d_rank: usize) -> SaddleSystem {
    let r = rng.random_range(0..=nv);
    let a0 = dissipative(rng, nv, r);
    let b0 = matrix(rng, nv, b_rank.min(nu)) * matrix(rng, b_rank.min(nu), nu);
    let d0 = psd(rng, nu, d_rank);
    let mx = hpd(rng, nv);
    let mv = &mx + psd(rng, nv, nv);
    SaddleSystem::new(a0, b0, d0, mx, mv).expect("conforming by construction")
}
