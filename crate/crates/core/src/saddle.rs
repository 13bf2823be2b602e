//! Saddle-point block operators `[[A0, B0], [-B0^H, -D0]]` over a discrete
//! pair of inner products: `MX` for the pivot space and `MV` for the energy
//! space. Also assembles the MAC discretization of the Stokes operator.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, c, eye, zeros, Mat, Vector, ZERO};
use crate::pencil::{self, BlockDhdae, TOL_INV, TOL_PSD};

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSystem {
    a0: Mat,
    b0: Mat,
    d0: Mat,
    mx: Mat,
    mv: Mat,
}

impl SaddleSystem {
    pub fn new(a0: Mat, b0: Mat, d0: Mat, mx: Mat, mv: Mat) -> Result<Self> {
        linalg::ensure_square(&a0, "A0")?;
        linalg::ensure_square(&d0, "D0")?;
        let (nv, nu) = (a0.nrows(), d0.nrows());
        if b0.shape() != (nv, nu) || mx.shape() != (nv, nv) || mv.shape() != (nv, nv) {
            return Err(Error::Shape(format!("A0, MX, MV must be {nv}x{nv} and B0 {nv}x{nu}")));
        }
        for (m, name) in [(&a0, "A0"), (&b0, "B0"), (&d0, "D0"), (&mx, "MX"), (&mv, "MV")] {
            linalg::ensure_finite(m, name)?;
        }
        for (m, name) in [(&mx, "MX"), (&mv, "MV")] {
            check_hermitian(m, name)?;
            linalg::cholesky(m, name)?;
        }
        check_hermitian(&d0, "D0")?;
        if !pencil::check_dissipative(&-&d0, TOL_PSD)? {
            return Err(Error::NotDissipative("D0 is not positive semidefinite".into()));
        }
        if !pencil::check_dissipative(&a0, TOL_PSD)? {
            return Err(Error::NotDissipative("A0".into()));
        }
        Ok(Self { a0, b0, d0, mx, mv })
    }

    pub fn nv(&self) -> usize {
        self.a0.nrows()
    }
    pub fn nu(&self) -> usize {
        self.d0.nrows()
    }
    pub fn a0(&self) -> &Mat {
        &self.a0
    }
    pub fn b0(&self) -> &Mat {
        &self.b0
    }
    pub fn d0(&self) -> &Mat {
        &self.d0
    }
    pub fn mx(&self) -> &Mat {
        &self.mx
    }
    pub fn mv(&self) -> &Mat {
        &self.mv
    }

    pub fn block_operator(&self) -> Mat {
        let (nv, nu) = (self.nv(), self.nu());
        linalg::from_blocks(&[nv, nu], &[nv, nu], &[&[&self.a0, &self.b0], &[&-self.b0.adjoint(), &-&self.d0]])
    }

    /// The descriptor form with `E = diag(MX, 0)` and `Q = I`.
    pub fn as_block_dhdae(&self) -> Result<BlockDhdae> {
        BlockDhdae::new(self.mx.clone(), eye(self.nv()), eye(self.nu()), self.block_operator())
    }

    /// `E - A` for the descriptor form, i.e. `[[MX - A0, -B0], [B0^H, D0]]`.
    pub fn shifted_block(&self) -> Mat {
        let (nv, nu) = (self.nv(), self.nu());
        linalg::from_blocks(
            &[nv, nu],
            &[nv, nu],
            &[&[&(&self.mx - &self.a0), &-&self.b0], &[&self.b0.adjoint(), &self.d0]],
        )
    }

    /// Adds the skew part of a convection matrix to `A0`, which keeps it dissipative.
    pub fn with_convection(&self, conv: &Mat) -> Result<SaddleSystem> {
        if conv.shape() != self.a0.shape() {
            return Err(Error::Shape("convection matrix must match A0".into()));
        }
        let skew = (conv - conv.adjoint()) * c(0.5, 0.0);
        SaddleSystem::new(&self.a0 + skew, self.b0.clone(), self.d0.clone(), self.mx.clone(), self.mv.clone())
    }
}

fn check_hermitian(m: &Mat, name: &str) -> Result<()> {
    let scale = linalg::spectral_norm(m).max(f64::MIN_POSITIVE);
    if (m - m.adjoint()).norm() > pencil::TOL_SYM * scale {
        return Err(Error::InvalidParam(format!("{name} must be Hermitian")));
    }
    Ok(())
}

/// `L^{-1} M` where `MV = L L^H`, so that Euclidean norms of the result measure in the dual of `MV`.
fn dual_weighted(mv: &Mat, m: &Mat) -> Result<Mat> {
    let l = linalg::cholesky(mv, "MV")?;
    l.solve_lower_triangular(m).ok_or_else(|| Error::Singular("Cholesky factor of MV".into()))
}

/// Smallest `a` with `v^H (MX + R0) v >= a v^H MV v`, `R0 = -(A0 + A0^H) / 2`.
/// Since `A0` is dissipative this lower-bounds the constant with `|<A0 v, v>|`.
pub fn garding_constant(sys: &SaddleSystem) -> Result<f64> {
    if sys.nv() == 0 {
        return Ok(f64::INFINITY);
    }
    let r0 = -linalg::herm_part(&sys.a0);
    let l = linalg::cholesky(&sys.mv, "MV")?;
    let left = dual_weighted(&sys.mv, &(&sys.mx + r0))?;
    let sym = l
        .solve_lower_triangular(&left.adjoint())
        .ok_or_else(|| Error::Singular("Cholesky factor of MV".into()))?;
    Ok(linalg::hermitian_eigenvalues(&sym)[0])
}

/// `sigma_min(L^{-1} B0)` with `MV = L L^H`. Zero when `B0` has a kernel.
pub fn closed_range_bound(b0: &Mat, mv: &Mat) -> Result<f64> {
    if b0.ncols() == 0 {
        return Err(Error::InvalidParam("B0 has no columns".into()));
    }
    if mv.shape() != (b0.nrows(), b0.nrows()) {
        return Err(Error::Shape("MV must match the rows of B0".into()));
    }
    if b0.ncols() > b0.nrows() {
        return Ok(0.0);
    }
    Ok(linalg::sigma_min(&dual_weighted(mv, b0)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchurComplement {
    #[serde(rename = "G1", with = "crate::json")]
    pub g1: Mat,
    pub invertible: bool,
    /// Smallest eigenvalue of the Hermitian part of `G1`, relative to its norm.
    pub accretivity: f64,
}

/// `G1 = B0^H (MX - A0)^{-1} B0 + D0`. The shifted block operator is invertible iff `G1` is.
pub fn schur_g1(sys: &SaddleSystem) -> Result<SchurComplement> {
    let shifted = &sys.mx - &sys.a0;
    if linalg::inverse_condition(&shifted) <= TOL_INV {
        return Err(Error::Singular("MX - A0".into()));
    }
    let g1 = sys.b0.adjoint() * linalg::solve(&shifted, &sys.b0, "MX - A0")? + &sys.d0;
    let scale = linalg::spectral_norm(&g1);
    let accretivity = match linalg::hermitian_eigenvalues(&linalg::herm_part(&g1)).first() {
        Some(&l) if scale > 0.0 => l / scale,
        _ => 0.0,
    };
    Ok(SchurComplement { invertible: sys.nu() == 0 || linalg::inverse_condition(&g1) > TOL_INV, g1, accretivity })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfSup {
    /// Infinity when the constrained space is trivial.
    pub alpha: f64,
    pub gamma: f64,
    pub constrained_trivial: bool,
    pub constrained_dim: usize,
}

/// `gamma = sigma_min(L^{-1} B0)`; `alpha` is the smallest singular value of `A0`
/// compressed to an `MV`-orthonormal basis of `ker B0^H`.
pub fn infsup_constants(sys: &SaddleSystem) -> Result<InfSup> {
    let gamma = if sys.nu() == 0 { f64::INFINITY } else { closed_range_bound(&sys.b0, &sys.mv)? };
    let ker = linalg::null_space(&sys.b0.adjoint(), TOL_INV);
    let z = linalg::metric_orthonormalize(&ker, &sys.mv, 1e-10);
    if z.ncols() == 0 {
        return Ok(InfSup { alpha: f64::INFINITY, gamma, constrained_trivial: true, constrained_dim: 0 });
    }
    let comp = z.adjoint() * &sys.a0 * &z;
    // both inf-sup orderings; equal for square blocks but kept for clarity
    let alpha = linalg::sigma_min(&comp).min(linalg::sigma_min(&comp.adjoint()));
    Ok(InfSup { alpha, gamma, constrained_trivial: false, constrained_dim: z.ncols() })
}

/// How the constant pressure mode is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PressureGauge {
    /// Pressures restricted to zero mean through an orthonormal contrast basis.
    #[default]
    MeanZero,
    /// The last pressure cell is fixed to zero.
    Pinned,
    /// No gauge; `B0` keeps the constant mode in its kernel.
    Free,
}

/// Raw MAC operators on an `N x N` grid of the unit square, all scaled by `1/h` per derivative.
#[derive(Debug, Clone)]
pub struct MacOperators {
    pub n: usize,
    pub h: f64,
    /// Vector Laplacian on the `u` then `v` face unknowns with no-slip walls.
    pub laplacian: Mat,
    /// Divergence from faces to cell centers.
    pub divergence: Mat,
    pub nu_faces: usize,
}

impl MacOperators {
    pub fn gradient(&self) -> Mat {
        -self.divergence.transpose()
    }
    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }
    pub fn n_faces(&self) -> usize {
        self.laplacian.nrows()
    }
    pub fn u_index(&self, i: usize, j: usize) -> usize {
        i + j * (self.n - 1)
    }
    pub fn v_index(&self, i: usize, j: usize) -> usize {
        self.nu_faces + i + j * self.n
    }
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        i + j * self.n
    }
}

/// `u` lives on vertical faces `x = (i+1) h`, `v` on horizontal faces `y = (j+1) h`.
/// Tangential wall values use a reflected ghost, normal ones vanish.
pub fn mac_operators(n: usize) -> Result<MacOperators> {
    if n < 3 {
        return Err(Error::InvalidParam("MAC grid needs N >= 3".into()));
    }
    let h = 1.0 / n as f64;
    let nu_faces = (n - 1) * n;
    let nf = 2 * nu_faces;
    let mut laplacian = zeros(nf, nf);
    let mut divergence = zeros(n * n, nf);
    let u_index = |i: usize, j: usize| i + j * (n - 1);
    let v_index = |i: usize, j: usize| nu_faces + i + j * n;
    let cell_index = |i: usize, j: usize| i + j * n;
    let ih2 = 1.0 / (h * h);
    // u: i in 0..n-1 along x (walls at both ends are normal), j in 0..n along y (tangential)
    for j in 0..n {
        for i in 0..n - 1 {
            let row = u_index(i, j);
            let mut diag = -2.0;
            if i > 0 {
                laplacian[(row, u_index(i - 1, j))] += c(ih2, 0.0);
            }
            if i + 2 < n {
                laplacian[(row, u_index(i + 1, j))] += c(ih2, 0.0);
            }
            for (ok, nb) in [(j > 0, j.wrapping_sub(1)), (j + 1 < n, j + 1)] {
                if ok {
                    laplacian[(row, u_index(i, nb))] += c(ih2, 0.0);
                    diag -= 1.0;
                } else {
                    diag -= 2.0;
                }
            }
            laplacian[(row, row)] += c(diag * ih2, 0.0);
        }
    }
    for j in 0..n - 1 {
        for i in 0..n {
            let row = v_index(i, j);
            let mut diag = -2.0;
            if j > 0 {
                laplacian[(row, v_index(i, j - 1))] += c(ih2, 0.0);
            }
            if j + 2 < n {
                laplacian[(row, v_index(i, j + 1))] += c(ih2, 0.0);
            }
            for (ok, nb) in [(i > 0, i.wrapping_sub(1)), (i + 1 < n, i + 1)] {
                if ok {
                    laplacian[(row, v_index(nb, j))] += c(ih2, 0.0);
                    diag -= 1.0;
                } else {
                    diag -= 2.0;
                }
            }
            laplacian[(row, row)] += c(diag * ih2, 0.0);
        }
    }
    let ih = c(1.0 / h, 0.0);
    for j in 0..n {
        for i in 0..n {
            let cell = cell_index(i, j);
            if i + 1 < n {
                divergence[(cell, u_index(i, j))] += ih;
            }
            if i > 0 {
                divergence[(cell, u_index(i - 1, j))] -= ih;
            }
            if j + 1 < n {
                divergence[(cell, v_index(i, j))] += ih;
            }
            if j > 0 {
                divergence[(cell, v_index(i, j - 1))] -= ih;
            }
        }
    }
    Ok(MacOperators { n, h, laplacian, divergence, nu_faces })
}

/// Orthonormal basis of the vectors with zero sum (Helmert contrasts).
pub fn mean_zero_basis(m: usize) -> Mat {
    let mut h = zeros(m, m.saturating_sub(1));
    for k in 1..m {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            h[(i, k - 1)] = c(1.0 / norm, 0.0);
        }
        h[(k, k - 1)] = c(-(k as f64) / norm, 0.0);
    }
    h
}

#[derive(Debug, Clone)]
pub struct StokesMac {
    pub ops: MacOperators,
    pub gauge: PressureGauge,
    /// Map from reduced pressure coordinates to cell pressures.
    pub pressure_basis: Mat,
    pub saddle: SaddleSystem,
    pub system: BlockDhdae,
}

impl StokesMac {
    /// Discrete divergence of the velocity part of a state.
    pub fn divergence_of(&self, x: &Vector) -> Vector {
        let nf = self.ops.n_faces();
        &self.ops.divergence * x.rows(0, nf)
    }
}

/// `A0 = alpha Lap`, `B0 = -Grad P` with `P` the pressure gauge basis,
/// `MX = I`, `MV = I - Lap`.
pub fn stokes_mac_assemble(n: usize, alpha_visc: f64) -> Result<StokesMac> {
    stokes_mac_assemble_with(n, alpha_visc, PressureGauge::default())
}

pub fn stokes_mac_assemble_with(n: usize, alpha_visc: f64, gauge: PressureGauge) -> Result<StokesMac> {
    if !(alpha_visc > 0.0) || !alpha_visc.is_finite() {
        return Err(Error::InvalidParam("viscosity must be positive".into()));
    }
    let ops = mac_operators(n)?;
    let cells = ops.n_cells();
    let pressure_basis = match gauge {
        PressureGauge::MeanZero => mean_zero_basis(cells),
        PressureGauge::Pinned => eye(cells).columns(0, cells - 1).into_owned(),
        PressureGauge::Free => eye(cells),
    };
    let nf = ops.n_faces();
    let a0 = &ops.laplacian * c(alpha_visc, 0.0);
    let b0 = ops.gradient() * &pressure_basis;
    let nu = b0.ncols();
    let mv = eye(nf) - &ops.laplacian;
    let saddle = SaddleSystem::new(a0, b0, zeros(nu, nu), eye(nf), mv)?;
    let system = saddle.as_block_dhdae()?;
    Ok(StokesMac { ops, gauge, pressure_basis, saddle, system })
}

/// Face velocities from the discrete curl of a stream function sampled at the
/// grid vertices. `psi` is forced to zero on the boundary, so the field is
/// exactly divergence free and satisfies the wall conditions.
pub fn divergence_free_field(ops: &MacOperators, psi: impl Fn(f64, f64) -> f64) -> Vector {
    let n = ops.n;
    let h = ops.h;
    let vertex = |i: usize, j: usize| -> f64 {
        if i == 0 || j == 0 || i == n || j == n {
            0.0
        } else {
            psi(i as f64 * h, j as f64 * h)
        }
    };
    let mut x = Vector::from_element(ops.n_faces(), ZERO);
    for j in 0..n {
        for i in 0..n - 1 {
            x[ops.u_index(i, j)] = c((vertex(i + 1, j + 1) - vertex(i + 1, j)) / h, 0.0);
        }
    }
    for j in 0..n - 1 {
        for i in 0..n {
            x[ops.v_index(i, j)] = c(-(vertex(i + 1, j + 1) - vertex(i, j + 1)) / h, 0.0);
        }
    }
    x
}
