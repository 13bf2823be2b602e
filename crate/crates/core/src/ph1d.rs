//! One-dimensional port-Hamiltonian operators `P1 d/dz + G0(z)` on `[0, 1]`
//! with boundary conditions `WB [e(1); e(0)] = 0`, where `e = Q x`.
//!
//! Provides the boundary dissipativity test, the shooting test for
//! regularity, a staggered discretization to a [`BlockDhdae`], the lift of
//! second-order operators and the Sturm-Liouville reduced form.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::{mat_to_rows, rows_to_mat};
use crate::linalg::{self, c, eye, zeros, Mat, C64, ONE, ZERO};
use crate::pencil::{self, BlockDhdae, TOL_INV, TOL_PSD};

/// Shooting verdicts use a looser threshold than dense algebra because of the integration error.
pub const SHOOTING_TOL: f64 = 1e-10;
pub const DEFAULT_STEPS: usize = 512;

fn sample_points() -> impl Iterator<Item = f64> {
    (0..=10).map(|k| k as f64 / 10.0)
}

pub trait Lerp: Clone {
    fn lerp(a: &Self, b: &Self, t: f64) -> Self;
}

impl Lerp for C64 {
    fn lerp(a: &Self, b: &Self, t: f64) -> Self {
        a * (1.0 - t) + b * t
    }
}

impl Lerp for Mat {
    fn lerp(a: &Self, b: &Self, t: f64) -> Self {
        a * c(1.0 - t, 0.0) + b * c(t, 0.0)
    }
}

/// A coefficient on `[0, 1]`: constant, or piecewise linear through tabulated values.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile<T> {
    Constant(T),
    Tabulated { zeta: Vec<f64>, values: Vec<T> },
}

impl<T: Lerp> Profile<T> {
    pub fn tabulated(zeta: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if zeta.len() < 2 || zeta.len() != values.len() {
            return Err(Error::Malformed("a table needs at least two points and one value per point".into()));
        }
        if zeta.windows(2).any(|w| !(w[1] > w[0])) || zeta.iter().any(|z| !z.is_finite()) {
            return Err(Error::Malformed("table abscissae must be finite and strictly increasing".into()));
        }
        Ok(Profile::Tabulated { zeta, values })
    }

    pub fn eval(&self, z: f64) -> T {
        match self {
            Profile::Constant(v) => v.clone(),
            Profile::Tabulated { zeta, values } => {
                let last = zeta.len() - 1;
                if z <= zeta[0] {
                    return values[0].clone();
                }
                if z >= zeta[last] {
                    return values[last].clone();
                }
                let k = zeta.partition_point(|&x| x <= z) - 1;
                let t = (z - zeta[k]) / (zeta[k + 1] - zeta[k]);
                T::lerp(&values[k], &values[k + 1], t)
            }
        }
    }

    /// Points where the profile must be inspected: the sample grid plus the table nodes.
    fn probe_points(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = sample_points().collect();
        if let Profile::Tabulated { zeta, .. } = self {
            pts.extend(zeta.iter().copied().filter(|z| (0.0..=1.0).contains(z)));
        }
        pts
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Profile::Constant(_) => Vec::new(),
            Profile::Tabulated { zeta, .. } => zeta.clone(),
        }
    }
}

pub type ScalarProfile = Profile<C64>;
pub type MatProfile = Profile<Mat>;

impl ScalarProfile {
    pub fn real(v: f64) -> Self {
        Profile::Constant(c(v, 0.0))
    }
}

/// Diagonal matrix profile assembled from scalar profiles, exact on the union of their breakpoints.
pub fn diag_profile(entries: &[ScalarProfile]) -> MatProfile {
    let n = entries.len();
    let mut grid: Vec<f64> = entries.iter().flat_map(|p| p.breakpoints()).collect();
    if grid.is_empty() {
        return Profile::Constant(Mat::from_fn(n, n, |i, j| if i == j { entries[i].eval(0.0) } else { ZERO }));
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let values = grid
        .iter()
        .map(|&z| Mat::from_fn(n, n, |i, j| if i == j { entries[i].eval(z) } else { ZERO }))
        .collect();
    Profile::Tabulated { zeta: grid, values }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ph1dSystem {
    p1: Mat,
    g0: MatProfile,
    wb: Mat,
    n1: usize,
    n2: usize,
    e1: Vec<ScalarProfile>,
    q1: Vec<ScalarProfile>,
    q2: Vec<ScalarProfile>,
}

impl Ph1dSystem {
    /// `e1`, `q1` are the diagonal coefficient profiles of the first `n1`
    /// components, `q2` those of the remaining `n2`.
    pub fn new(
        p1: Mat,
        g0: MatProfile,
        wb: Mat,
        n1: usize,
        e1: Vec<ScalarProfile>,
        q1: Vec<ScalarProfile>,
        q2: Vec<ScalarProfile>,
    ) -> Result<Self> {
        let n = p1.nrows();
        linalg::ensure_square(&p1, "P1")?;
        linalg::ensure_finite(&p1, "P1")?;
        linalg::ensure_finite(&wb, "WB")?;
        if n1 == 0 || n1 > n {
            return Err(Error::Shape(format!("split n1 = {n1} invalid for n = {n}")));
        }
        let n2 = n - n1;
        if e1.len() != n1 || q1.len() != n1 || q2.len() != n2 {
            return Err(Error::Shape("coefficient lists must match the split".into()));
        }
        if p1.iter().any(|z| z.im != 0.0) || (&p1 - p1.transpose()).norm() > 0.0 {
            return Err(Error::InvalidParam("P1 must be real symmetric".into()));
        }
        if linalg::inverse_condition(&p1) <= TOL_INV {
            return Err(Error::Singular("P1 is not invertible".into()));
        }
        if wb.shape() != (n, 2 * n) {
            return Err(Error::Shape(format!("WB must be {n}x{}", 2 * n)));
        }
        if linalg::rank(&wb, TOL_INV) != n {
            return Err(Error::Singular("WB does not have full row rank".into()));
        }
        if let Profile::Tabulated { zeta, values } = &g0 {
            Profile::tabulated(zeta.clone(), values.clone())?;
        }
        for z in g0.probe_points() {
            let g = g0.eval(z);
            if g.shape() != (n, n) {
                return Err(Error::Shape(format!("G0 must be {n}x{n}")));
            }
            linalg::ensure_finite(&g, "G0")?;
            if !pencil::check_dissipative(&g, TOL_PSD)? {
                return Err(Error::NotDissipative(format!("G0({z}) is not dissipative")));
            }
        }
        for (list, name, positive) in [(&e1, "E1", true), (&q1, "Q1", true), (&q2, "Q2", false)] {
            for p in list.iter() {
                if let Profile::Tabulated { zeta, values } = p {
                    Profile::tabulated(zeta.clone(), values.clone())?;
                }
                for z in p.probe_points() {
                    let v = p.eval(z);
                    let ok = if positive { v.im == 0.0 && v.re > 0.0 } else { v.norm() > 0.0 };
                    if !ok || !v.re.is_finite() || !v.im.is_finite() {
                        return Err(Error::InvalidParam(format!(
                            "{name} coefficient must be {} at every point",
                            if positive { "real and positive" } else { "nonzero" }
                        )));
                    }
                }
            }
        }
        Ok(Self { p1, g0, wb, n1, n2, e1, q1, q2 })
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }
    pub fn split(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }
    pub fn p1(&self) -> &Mat {
        &self.p1
    }
    pub fn g0(&self) -> &MatProfile {
        &self.g0
    }
    pub fn wb(&self) -> &Mat {
        &self.wb
    }

    /// Scalar coefficient `e` of component `k` (zero on the algebraic part).
    pub fn e_coef(&self, k: usize, z: f64) -> C64 {
        if k < self.n1 {
            self.e1[k].eval(z)
        } else {
            ZERO
        }
    }

    pub fn q_coef(&self, k: usize, z: f64) -> C64 {
        if k < self.n1 {
            self.q1[k].eval(z)
        } else {
            self.q2[k - self.n1].eval(z)
        }
    }

    /// `E Q^{-1}` at `z`, the coefficient seen by the co-energy variable.
    pub fn e_eff(&self, z: f64) -> Mat {
        let n = self.n();
        Mat::from_fn(n, n, |i, j| if i == j { self.e_coef(i, z) / self.q_coef(i, z) } else { ZERO })
    }

    /// Same operator with the energy weights replaced by the identity.
    pub fn with_identity_weights(&self) -> Ph1dSystem {
        let mut out = self.clone();
        out.e1 = vec![ScalarProfile::real(1.0); self.n1];
        out.q1 = vec![ScalarProfile::real(1.0); self.n1];
        out.q2 = vec![ScalarProfile::real(1.0); self.n2];
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "lowercase")]
enum MatProfileJson {
    #[serde(with = "crate::json")]
    Constant(Mat),
    Tabulated { zeta: Vec<f64>, values: Vec<Vec<Vec<[f64; 2]>>> },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "lowercase")]
enum ScalarProfileJson {
    Constant([f64; 2]),
    Tabulated { zeta: Vec<f64>, values: Vec<[f64; 2]> },
}

#[derive(Serialize, Deserialize)]
struct CoeffsJson {
    #[serde(rename = "E1")]
    e1: Vec<ScalarProfileJson>,
    #[serde(rename = "Q1")]
    q1: Vec<ScalarProfileJson>,
    #[serde(rename = "Q2", default)]
    q2: Vec<ScalarProfileJson>,
}

#[derive(Serialize, Deserialize)]
struct Ph1dJson {
    #[serde(rename = "P1", with = "crate::json")]
    p1: Mat,
    #[serde(rename = "G0")]
    g0: MatProfileJson,
    #[serde(rename = "WB", with = "crate::json")]
    wb: Mat,
    split: [usize; 2],
    coeffs: CoeffsJson,
}

fn scalar_to_json(p: &ScalarProfile) -> ScalarProfileJson {
    match p {
        Profile::Constant(v) => ScalarProfileJson::Constant([v.re, v.im]),
        Profile::Tabulated { zeta, values } => ScalarProfileJson::Tabulated {
            zeta: zeta.clone(),
            values: values.iter().map(|v| [v.re, v.im]).collect(),
        },
    }
}

fn scalar_from_json(p: ScalarProfileJson) -> Result<ScalarProfile> {
    match p {
        ScalarProfileJson::Constant([re, im]) => Ok(Profile::Constant(c(re, im))),
        ScalarProfileJson::Tabulated { zeta, values } => {
            Profile::tabulated(zeta, values.into_iter().map(|[re, im]| c(re, im)).collect())
        }
    }
}

impl Serialize for Ph1dSystem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let g0 = match &self.g0 {
            Profile::Constant(m) => MatProfileJson::Constant(m.clone()),
            Profile::Tabulated { zeta, values } => MatProfileJson::Tabulated {
                zeta: zeta.clone(),
                values: values.iter().map(mat_to_rows).collect(),
            },
        };
        Ph1dJson {
            p1: self.p1.clone(),
            g0,
            wb: self.wb.clone(),
            split: [self.n1, self.n2],
            coeffs: CoeffsJson {
                e1: self.e1.iter().map(scalar_to_json).collect(),
                q1: self.q1.iter().map(scalar_to_json).collect(),
                q2: self.q2.iter().map(scalar_to_json).collect(),
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ph1dSystem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = Ph1dJson::deserialize(d)?;
        let build = || -> Result<Ph1dSystem> {
            let g0 = match j.g0 {
                MatProfileJson::Constant(m) => Profile::Constant(m),
                MatProfileJson::Tabulated { zeta, values } => {
                    let mats = values
                        .iter()
                        .map(|r| rows_to_mat(r).map_err(Error::Malformed))
                        .collect::<Result<Vec<_>>>()?;
                    Profile::tabulated(zeta, mats)?
                }
            };
            let conv = |v: Vec<ScalarProfileJson>| v.into_iter().map(scalar_from_json).collect::<Result<Vec<_>>>();
            let sys = Ph1dSystem::new(
                j.p1,
                g0,
                j.wb,
                j.split[0],
                conv(j.coeffs.e1)?,
                conv(j.coeffs.q1)?,
                conv(j.coeffs.q2)?,
            )?;
            if sys.n2 != j.split[1] {
                return Err(Error::Shape("split does not add up to the size of P1".into()));
            }
            Ok(sys)
        };
        build().map_err(D::Error::custom)
    }
}

/// True iff `v^T P1 v - w^T P1 w <= 0` whenever `WB [v; w] = 0`.
pub fn check_wb_dissipative(p1: &Mat, wb: &Mat, tol: f64) -> Result<bool> {
    let n = p1.nrows();
    linalg::ensure_square(p1, "P1")?;
    if wb.shape() != (n, 2 * n) {
        return Err(Error::Shape(format!("WB must be {n}x{}", 2 * n)));
    }
    if (p1 - p1.transpose()).norm() > TOL_INV * linalg::spectral_norm(p1) {
        return Err(Error::InvalidParam("P1 must be symmetric".into()));
    }
    if linalg::rank(wb, TOL_INV) != n {
        return Err(Error::Singular("WB does not have full row rank".into()));
    }
    let k = linalg::null_space(wb, TOL_INV);
    let form = linalg::block_diag(&[p1, &-p1]);
    let reduced = k.adjoint() * form * &k;
    let lmax = linalg::hermitian_eigenvalues(&reduced).last().copied().unwrap_or(0.0);
    Ok(lmax <= tol * linalg::spectral_norm(p1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootingResult {
    #[serde(with = "crate::json::complex")]
    pub s: C64,
    #[serde(rename = "Psi", with = "crate::json")]
    pub psi: Mat,
    #[serde(with = "crate::json")]
    pub boundary_matrix: Mat,
    #[serde(with = "crate::json::complex")]
    pub det: C64,
    pub regular: bool,
}

/// Integrates `P1 X' = (s E Q^{-1} - G0) X`, `X(0) = I` with classical RK4 and
/// tests the boundary matrix `WB_1 Psi + WB_2` for invertibility.
pub fn fundamental_matrix(sys: &Ph1dSystem, s: C64, steps: usize) -> Result<ShootingResult> {
    if !(s.re > 0.0) {
        return Err(Error::InvalidParam(format!("s = {s} must have positive real part")));
    }
    if steps < 64 {
        return Err(Error::InvalidParam("at least 64 integration steps are required".into()));
    }
    let n = sys.n();
    let p1inv = linalg::inverse(&sys.p1, "P1")?;
    let rhs = |z: f64| -> Mat { &p1inv * (sys.e_eff(z) * s - sys.g0.eval(z)) };
    let h = 1.0 / steps as f64;
    let hc = c(h, 0.0);
    let mut x = eye(n);
    for k in 0..steps {
        let z = k as f64 * h;
        let (m0, mh, m1) = (rhs(z), rhs(z + 0.5 * h), rhs(z + h));
        let k1 = &m0 * &x;
        let k2 = &mh * (&x + &k1 * (hc * 0.5));
        let k3 = &mh * (&x + &k2 * (hc * 0.5));
        let k4 = &m1 * (&x + &k3 * hc);
        x += (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * (hc / 6.0);
    }
    if !linalg::is_finite(&x) {
        return Err(Error::Numeric(format!("fundamental matrix overflowed for s = {s}")));
    }
    let wb1 = sys.wb.columns(0, n).into_owned();
    let wb2 = sys.wb.columns(n, n).into_owned();
    let bm = wb1 * &x + wb2;
    Ok(ShootingResult {
        s,
        det: bm.determinant(),
        regular: linalg::inverse_condition(&bm) > SHOOTING_TOL,
        psi: x,
        boundary_matrix: bm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Node,
    Face,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum End {
    Left,
    Right,
}

/// Where the unknowns of one field live in the discrete state vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldLayout {
    pub kind: GridKind,
    pub offset: usize,
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FieldLayout {
    pub fn len(&self) -> usize {
        self.positions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Layout {
    pub n_interior: usize,
    pub h: f64,
    pub fields: Vec<FieldLayout>,
}

#[derive(Debug, Clone)]
pub struct Discretization {
    pub system: BlockDhdae,
    pub layout: Layout,
}

struct Pair {
    a: usize,
    b: usize,
    p: f64,
}

fn pairs_of(p1: &Mat) -> Result<Vec<Pair>> {
    let n = p1.nrows();
    let mut partner = vec![usize::MAX; n];
    for i in 0..n {
        let nz: Vec<usize> = (0..n).filter(|&j| p1[(i, j)] != ZERO).collect();
        if nz.len() != 1 || nz[0] == i {
            return Err(Error::Unsupported(
                "the staggered scheme needs P1 to pair each component with exactly one other".into(),
            ));
        }
        partner[i] = nz[0];
    }
    Ok((0..n)
        .filter(|&i| i < partner[i])
        .map(|i| Pair { a: i, b: partner[i], p: p1[(i, partner[i])].re })
        .collect())
}

struct BoundaryPlan {
    on_nodes: Vec<bool>,
    kept: Vec<(usize, End)>,
    /// trace of a face field at an end, as a combination of kept node values
    traces: HashMap<(usize, End), Vec<(usize, C64)>>,
}

fn z_index(n: usize, field: usize, end: End) -> usize {
    match end {
        End::Right => field,
        End::Left => n + field,
    }
}

fn boundary_plan(pairs: &[Pair], n: usize, kernel: &Mat, mask: usize) -> Option<BoundaryPlan> {
    let mut on_nodes = vec![false; n];
    for (k, pr) in pairs.iter().enumerate() {
        let node = if mask >> k & 1 == 0 { pr.a } else { pr.b };
        on_nodes[node] = true;
    }
    let mut kept = Vec::new();
    for f in (0..n).filter(|&f| on_nodes[f]) {
        for end in [End::Left, End::Right] {
            if kernel.row(z_index(n, f, end)).norm() > 1e-10 {
                kept.push((f, end));
            }
        }
    }
    let ks = Mat::from_fn(kept.len(), kernel.ncols(), |i, j| kernel[(z_index(n, kept[i].0, kept[i].1), j)]);
    if !kept.is_empty() && linalg::rank(&ks, 1e-10) < kept.len() {
        return None;
    }
    let pks = linalg::pinv(&ks, 1e-10);
    let mut traces = HashMap::new();
    for pr in pairs {
        let (node, face) = if on_nodes[pr.a] { (pr.a, pr.b) } else { (pr.b, pr.a) };
        for end in [End::Left, End::Right] {
            if !kept.contains(&(node, end)) {
                continue;
            }
            let t = kernel.row(z_index(n, face, end)).into_owned();
            let coeffs = &t * &pks;
            if (&t - &coeffs * &ks).norm() > 1e-10 {
                return None;
            }
            let combo = (0..kept.len()).filter(|&i| coeffs[i].norm() > 1e-14).map(|i| (i, coeffs[i])).collect();
            traces.insert((face, end), combo);
        }
    }
    Some(BoundaryPlan { on_nodes, kept, traces })
}

/// Staggered discretization with `n_interior` interior nodes and spacing `h = 1 / (n_interior + 1)`.
pub fn discretize(sys: &Ph1dSystem, n_interior: usize) -> Result<BlockDhdae> {
    Ok(discretize_with_layout(sys, n_interior)?.system)
}

/// Each pair of components coupled by `P1` is split between the nodes
/// `z_i = i h` and the faces `z_{i+1/2}`. Node values at an end are dropped when
/// the boundary conditions force them to zero; otherwise the partner's trace
/// there is read off the boundary conditions. Rows are weighted by the cell
/// measure divided by `h` (one half at boundary nodes), which makes the
/// assembled operator dissipative whenever the boundary form is.
pub fn discretize_with_layout(sys: &Ph1dSystem, n_interior: usize) -> Result<Discretization> {
    if n_interior < 4 {
        return Err(Error::InvalidParam("at least 4 interior nodes are required".into()));
    }
    let n = sys.n();
    let big_n = n_interior;
    let h = 1.0 / (big_n + 1) as f64;
    let pairs = pairs_of(&sys.p1)?;
    let kernel = linalg::null_space(&sys.wb, TOL_INV);

    let mut best: Option<(usize, BoundaryPlan)> = None;
    for mask in 0..(1usize << pairs.len()) {
        if let Some(plan) = boundary_plan(&pairs, n, &kernel, mask) {
            let score = (sys.n1..n).filter(|&f| !plan.on_nodes[f]).count();
            if best.as_ref().map_or(true, |(s, _)| score > *s) {
                best = Some((score, plan));
            }
        }
    }
    let plan = best
        .map(|(_, p)| p)
        .ok_or_else(|| Error::UnsupportedBoundary("no staggered placement realizes these boundary conditions".into()))?;

    // unknown numbering
    let mut node_idx = vec![vec![None; big_n + 2]; n];
    let mut face_idx = vec![vec![None; big_n + 1]; n];
    let mut fields = Vec::with_capacity(n);
    let mut next = 0;
    for f in 0..n {
        let offset = next;
        let (mut positions, mut weights) = (Vec::new(), Vec::new());
        if plan.on_nodes[f] {
            for i in 0..=big_n + 1 {
                let end = if i == 0 {
                    Some(End::Left)
                } else if i == big_n + 1 {
                    Some(End::Right)
                } else {
                    None
                };
                if end.map_or(true, |e| plan.kept.contains(&(f, e))) {
                    node_idx[f][i] = Some(next);
                    next += 1;
                    positions.push(i as f64 * h);
                    weights.push(if end.is_some() { 0.5 } else { 1.0 });
                }
            }
        } else {
            for j in 0..=big_n {
                face_idx[f][j] = Some(next);
                next += 1;
                positions.push((j as f64 + 0.5) * h);
                weights.push(1.0);
            }
        }
        let kind = if plan.on_nodes[f] { GridKind::Node } else { GridKind::Face };
        fields.push(FieldLayout { kind, offset, positions, weights });
    }
    let total = next;
    let kept_index = |k: usize| -> usize {
        let (f, end) = plan.kept[k];
        let i = if end == End::Left { 0 } else { big_n + 1 };
        node_idx[f][i].expect("kept boundary node is numbered")
    };

    let mut a = zeros(total, total);
    let inv_h = 1.0 / h;
    for pr in &pairs {
        let (node, face) = if plan.on_nodes[pr.a] { (pr.a, pr.b) } else { (pr.b, pr.a) };
        let ph = c(pr.p * inv_h, 0.0);
        for j in 0..=big_n {
            let row = face_idx[face][j].unwrap();
            if let Some(col) = node_idx[node][j + 1] {
                a[(row, col)] += ph;
            }
            if let Some(col) = node_idx[node][j] {
                a[(row, col)] -= ph;
            }
        }
        for i in 0..=big_n + 1 {
            let Some(row) = node_idx[node][i] else { continue };
            if i >= 1 && i <= big_n {
                a[(row, face_idx[face][i].unwrap())] += ph;
                a[(row, face_idx[face][i - 1].unwrap())] -= ph;
            } else if i == 0 {
                a[(row, face_idx[face][0].unwrap())] += ph;
                for &(k, coef) in &plan.traces[&(face, End::Left)] {
                    a[(row, kept_index(k))] -= ph * coef;
                }
            } else {
                a[(row, face_idx[face][big_n].unwrap())] -= ph;
                for &(k, coef) in &plan.traces[&(face, End::Right)] {
                    a[(row, kept_index(k))] += ph * coef;
                }
            }
        }
    }

    // lower-order term
    let node_pos = |i: usize| i as f64 * h;
    let face_pos = |j: usize| (j as f64 + 0.5) * h;
    let node_w = |i: usize| if i == 0 || i == big_n + 1 { 0.5 } else { 1.0 };
    for u in 0..n {
        for v in 0..n {
            match (plan.on_nodes[u], plan.on_nodes[v]) {
                (true, true) => {
                    for i in 0..=big_n + 1 {
                        if let (Some(r), Some(col)) = (node_idx[u][i], node_idx[v][i]) {
                            a[(r, col)] += sys.g0.eval(node_pos(i))[(u, v)] * node_w(i);
                        }
                    }
                }
                (false, false) => {
                    for j in 0..=big_n {
                        let (r, col) = (face_idx[u][j].unwrap(), face_idx[v][j].unwrap());
                        a[(r, col)] += sys.g0.eval(face_pos(j))[(u, v)];
                    }
                }
                (true, false) => {
                    let coupled = sys.g0.probe_points().iter().any(|&z| {
                        let g = sys.g0.eval(z);
                        g[(u, v)] != ZERO || g[(v, u)] != ZERO
                    });
                    if !coupled {
                        continue;
                    }
                    for z in sys.g0.probe_points() {
                        let g = sys.g0.eval(z);
                        if (g[(v, u)] + g[(u, v)].conj()).norm() > 1e-14 * g.norm().max(1.0) {
                            return Err(Error::Unsupported(
                                "G0 may couple components on different grids only through a skew-adjoint pair".into(),
                            ));
                        }
                    }
                    for i in 0..=big_n + 1 {
                        let Some(r) = node_idx[u][i] else { continue };
                        for j in [i.wrapping_sub(1), i] {
                            if j > big_n {
                                continue;
                            }
                            let col = face_idx[v][j].unwrap();
                            let g = sys.g0.eval(0.5 * (node_pos(i) + face_pos(j)));
                            a[(r, col)] += g[(u, v)] * 0.5;
                            a[(col, r)] += g[(v, u)] * 0.5;
                        }
                    }
                }
                (false, true) => {}
            }
        }
    }

    let mut e_diag = Vec::new();
    let mut q_diag = Vec::new();
    for (f, fl) in fields.iter().enumerate() {
        for (k, &z) in fl.positions.iter().enumerate() {
            e_diag.push(sys.e_coef(f, z) * fl.weights[k]);
            q_diag.push(sys.q_coef(f, z));
        }
    }
    let m1 = fields[..sys.n1].iter().map(|f| f.len()).sum::<usize>();
    let diag = |v: &[C64]| Mat::from_fn(v.len(), v.len(), |i, j| if i == j { v[i] } else { ZERO });
    let system = BlockDhdae::new(diag(&e_diag[..m1]), diag(&q_diag[..m1]), diag(&q_diag[m1..]), a)?;
    Ok(Discretization { system, layout: Layout { n_interior: big_n, h, fields } })
}

/// First-order form of `x'' `-type operators: `P1 = [[P11, I], [I, 0]]`,
/// `G0 = [[P0, 0], [0, -P2^{-1}]]`, `WB = WBtilde diag(I, P2^{-1}, I, P2^{-1})`.
pub fn second_order_lift(p2: &Mat, p11: &Mat, p0: &Mat, wbtilde: &Mat) -> Result<Ph1dSystem> {
    let m = p2.nrows();
    for (mat, name) in [(p2, "P2"), (p11, "P11"), (p0, "P0")] {
        linalg::ensure_square(mat, name)?;
        if mat.nrows() != m {
            return Err(Error::Shape(format!("{name} must be {m}x{m}")));
        }
    }
    if (p2 + p2.transpose()).norm() > 0.0 || (p0 + p0.transpose()).norm() > 0.0 {
        return Err(Error::InvalidParam("P2 and P0 must be skew-symmetric".into()));
    }
    if (p11 - p11.transpose()).norm() > 0.0 {
        return Err(Error::InvalidParam("P11 must be symmetric".into()));
    }
    if wbtilde.shape() != (2 * m, 4 * m) {
        return Err(Error::Shape(format!("WBtilde must be {}x{}", 2 * m, 4 * m)));
    }
    let p2inv = linalg::inverse(p2, "P2")?;
    let p1 = linalg::from_blocks(&[m, m], &[m, m], &[&[p11, &eye(m)], &[&eye(m), &zeros(m, m)]]);
    let g0 = linalg::block_diag(&[p0, &-&p2inv]);
    let scale = linalg::block_diag(&[&eye(m), &p2inv, &eye(m), &p2inv]);
    let wb = wbtilde * scale;
    let ones = vec![ScalarProfile::real(1.0); m];
    Ph1dSystem::new(p1, Profile::Constant(g0), wb, m, ones.clone(), ones.clone(), ones)
}

/// Boundary condition for the second-order form, evaluated with the symmetric
/// form `[[P11, P2], [-P2, 0]]` on `(x(1), x'(1), x(0), x'(0))`.
pub fn second_order_boundary_dissipative(p2: &Mat, p11: &Mat, wbtilde: &Mat, tol: f64) -> Result<bool> {
    let m = p2.nrows();
    let form = linalg::from_blocks(&[m, m], &[m, m], &[&[p11, p2], &[&-p2, &zeros(m, m)]]);
    check_wb_dissipative(&form, wbtilde, tol)
}

/// `A_red x = (1/e1) [ (x' / r)' - g0 x ]` with boundary data from `WB`.
#[derive(Debug, Clone, PartialEq)]
pub struct SturmLiouvilleForm {
    pub e1: ScalarProfile,
    pub r: ScalarProfile,
    pub g0: ScalarProfile,
    pub q2: ScalarProfile,
    pub wb: Mat,
}

pub fn sturm_liouville_form(
    e1: ScalarProfile,
    r: ScalarProfile,
    g0: ScalarProfile,
    q2: ScalarProfile,
    wb: Mat,
) -> Result<SturmLiouvilleForm> {
    for z in sample_points().chain(e1.probe_points()).chain(q2.probe_points()) {
        for (p, name) in [(&e1, "e1"), (&q2, "q2")] {
            let v = p.eval(z);
            if v.im != 0.0 || !(v.re > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be real and positive")));
            }
        }
    }
    for z in r.probe_points() {
        let v = r.eval(z);
        if v.norm() == 0.0 || v.re < 0.0 {
            return Err(Error::InvalidParam("r must be invertible with nonnegative real part".into()));
        }
    }
    for z in g0.probe_points() {
        if g0.eval(z).re < 0.0 {
            return Err(Error::InvalidParam("g0 must have nonnegative real part".into()));
        }
    }
    if wb.shape() != (2, 4) {
        return Err(Error::Shape("WB must be 2x4".into()));
    }
    Ok(SturmLiouvilleForm { e1, r, g0, q2, wb })
}

impl SturmLiouvilleForm {
    /// Same form with a different `r`.
    pub fn with_r(&self, r: ScalarProfile) -> SturmLiouvilleForm {
        SturmLiouvilleForm { r, ..self.clone() }
    }

    /// The underlying first-order system with `P1 = [[0, 1], [1, 0]]`, `G0 = diag(-g0, -r)`.
    pub fn ph1d(&self) -> Result<Ph1dSystem> {
        let neg = |p: &ScalarProfile| match p {
            Profile::Constant(v) => Profile::Constant(-v),
            Profile::Tabulated { zeta, values } => Profile::Tabulated {
                zeta: zeta.clone(),
                values: values.iter().map(|v| -v).collect(),
            },
        };
        let g0 = diag_profile(&[neg(&self.g0), neg(&self.r)]);
        let p1 = linalg::real_mat(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        Ph1dSystem::new(p1, g0, self.wb.clone(), 1, vec![self.e1.clone()], vec![ScalarProfile::real(1.0)], vec![self.q2.clone()])
    }

    /// Boundary matrix acting on `(x(1), x'(1), x(0), x'(0))`.
    pub fn reduced_boundary(&self) -> Mat {
        let mut w = self.wb.clone();
        let r1 = self.r.eval(1.0);
        let r0 = self.r.eval(0.0);
        for i in 0..2 {
            w[(i, 1)] /= r1;
            w[(i, 3)] /= r0;
        }
        w
    }

    /// Direct finite-difference assembly of the reduced operator on the node grid,
    /// for boundary rows of the form `[a1, b1, 0, 0]` and `[0, 0, a2, b2]`.
    pub fn assemble_reduced(&self, n_interior: usize) -> Result<Mat> {
        let w = &self.wb;
        let (right, left) = if w[(0, 2)] == ZERO && w[(0, 3)] == ZERO && w[(1, 0)] == ZERO && w[(1, 1)] == ZERO {
            ((w[(0, 0)], w[(0, 1)]), (w[(1, 2)], w[(1, 3)]))
        } else if w[(1, 2)] == ZERO && w[(1, 3)] == ZERO && w[(0, 0)] == ZERO && w[(0, 1)] == ZERO {
            ((w[(1, 0)], w[(1, 1)]), (w[(0, 2)], w[(0, 3)]))
        } else {
            return Err(Error::UnsupportedBoundary("each boundary row must act on a single end".into()));
        };
        let big_n = n_interior;
        let h = 1.0 / (big_n + 1) as f64;
        let keep_left = left.1 != ZERO;
        let keep_right = right.1 != ZERO;
        let nodes: Vec<usize> = (0..=big_n + 1)
            .filter(|&i| (i != 0 || keep_left) && (i != big_n + 1 || keep_right))
            .collect();
        let index: HashMap<usize, usize> = nodes.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let m = nodes.len();
        let mut a = zeros(m, m);
        // flux (x_{i+1} - x_i) / (h r_{i+1/2}) across face i + 1/2
        let flux = |a: &mut Mat, row: usize, j: usize, sign: f64, scale: f64| {
            let coef = ONE / self.r.eval((j as f64 + 0.5) * h) / h * sign * scale;
            if let Some(&k) = index.get(&(j + 1)) {
                a[(row, k)] += coef;
            }
            if let Some(&k) = index.get(&j) {
                a[(row, k)] -= coef;
            }
        };
        for (row, &i) in nodes.iter().enumerate() {
            let z = i as f64 * h;
            let inv_e = ONE / self.e1.eval(z);
            if i >= 1 && i <= big_n {
                flux(&mut a, row, i, 1.0 / h, 1.0);
                flux(&mut a, row, i - 1, -1.0 / h, 1.0);
            } else if i == 0 {
                flux(&mut a, row, 0, 2.0 / h, 1.0);
                // boundary flux a2 x(0) + b2 flux(0) = 0
                a[(row, row)] -= -left.0 / left.1 * (2.0 / h);
            } else {
                flux(&mut a, row, big_n, -2.0 / h, 1.0);
                a[(row, row)] += -right.0 / right.1 * (2.0 / h);
            }
            a[(row, row)] -= self.g0.eval(z);
            for k in 0..m {
                a[(row, k)] *= inv_e;
            }
        }
        Ok(a)
    }
}

/// Wave equation on components 1-2 coupled through the boundary to a heat
/// equation on component 3 with flux variable 4.
pub fn coupled_wave_heat(rho: ScalarProfile, t: ScalarProfile, r: ScalarProfile, n_interior: usize) -> Result<(Ph1dSystem, Discretization)> {
    let sys = wave_heat_system(rho, t, r)?;
    let disc = discretize_with_layout(&sys, n_interior)?;
    Ok((sys, disc))
}

pub fn wave_heat_boundary() -> Mat {
    linalg::real_mat(
        4,
        8,
        &[
            1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, //
            0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        ],
    )
}

pub fn wave_heat_system(rho: ScalarProfile, t: ScalarProfile, r: ScalarProfile) -> Result<Ph1dSystem> {
    for z in sample_points().chain(rho.probe_points()).chain(t.probe_points()) {
        for (p, name) in [(&rho, "rho"), (&t, "T")] {
            let v = p.eval(z);
            if v.im != 0.0 || !(v.re > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be real and positive")));
            }
        }
    }
    let p1 = linalg::real_mat(
        4,
        4,
        &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
    );
    let zero = ScalarProfile::real(0.0);
    let neg_r = match &r {
        Profile::Constant(v) => Profile::Constant(-v),
        Profile::Tabulated { zeta, values } => Profile::Tabulated { zeta: zeta.clone(), values: values.iter().map(|v| -v).collect() },
    };
    let g0 = diag_profile(&[zero.clone(), zero.clone(), zero, neg_r]);
    let inv_rho = match &rho {
        Profile::Constant(v) => Profile::Constant(ONE / v),
        Profile::Tabulated { zeta, values } => Profile::Tabulated { zeta: zeta.clone(), values: values.iter().map(|v| ONE / v).collect() },
    };
    let one = ScalarProfile::real(1.0);
    Ph1dSystem::new(
        p1,
        g0,
        wave_heat_boundary(),
        3,
        vec![one.clone(), one.clone(), one.clone()],
        vec![inv_rho, t, one.clone()],
        vec![one],
    )
}
