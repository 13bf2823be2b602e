//! Implicit midpoint integration of `E x' = A Q x`.
//!
//! For Hermitian `Q^H E` the scheme satisfies
//! `H(x+) - H(x) = 2 tau Re <A Q x_mid, Q x_mid>`, so dissipation carries over
//! exactly and skew systems conserve `H` up to roundoff.

use std::io::Write;

use nalgebra::{Dyn, LU};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, c, Mat, Vector, C64};
use crate::pencil::{self, BlockDhdae};
use crate::reduction::{schur_reduce, ReducedSystem, SubspaceReducedSystem};

/// Which state a trajectory records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Full,
    Reduced,
    /// Coordinates in an orthonormal basis of the admissible subspace.
    Subspace,
}

/// A linear system to integrate, together with its energy.
#[derive(Debug, Clone, Copy)]
pub enum Dynamics<'a> {
    Full(&'a BlockDhdae),
    Reduced(&'a ReducedSystem),
    Subspace(&'a SubspaceReducedSystem),
}

impl Dynamics<'_> {
    pub fn kind(&self) -> StateKind {
        match self {
            Dynamics::Full(_) => StateKind::Full,
            Dynamics::Reduced(_) => StateKind::Reduced,
            Dynamics::Subspace(_) => StateKind::Subspace,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Full(s) => s.n(),
            Dynamics::Reduced(r) => r.n1,
            Dynamics::Subspace(r) => r.dim(),
        }
    }

    /// `(E, A Q)`.
    fn operators(&self) -> (Mat, Mat) {
        match self {
            Dynamics::Full(s) => (s.e(), s.aq()),
            Dynamics::Reduced(r) => (linalg::eye(r.n1), r.ared.clone()),
            Dynamics::Subspace(r) => (linalg::eye(r.dim()), r.ared_coords.clone()),
        }
    }

    pub fn energy(&self, x: &Vector) -> Result<f64> {
        match self {
            Dynamics::Full(s) => pencil::hamiltonian(s, x),
            Dynamics::Reduced(r) => {
                check_len(x, r.n1)?;
                Ok((x.adjoint() * &r.inner_metric * x)[(0, 0)].re)
            }
            Dynamics::Subspace(r) => {
                check_len(x, r.dim())?;
                Ok(x.norm_squared())
            }
        }
    }
}

fn check_len(x: &Vector, n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::Shape(format!("state has length {}, expected {n}", x.len())));
    }
    linalg::ensure_finite(&Mat::from_column_slice(x.len(), 1, x.as_slice()), "state")
}

/// Midpoint step for a fixed step size; the step matrix is factored once.
pub struct MidpointStepper {
    tau: f64,
    lu: LU<C64, Dyn, Dyn>,
    rhs: Mat,
}

impl MidpointStepper {
    pub fn new(dynamics: Dynamics<'_>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParam(format!("step size {tau} must be positive")));
        }
        let (e, aq) = dynamics.operators();
        let half = c(0.5 * tau, 0.0);
        let lhs = &e - &aq * half;
        let lu = linalg::lu_factor(&lhs, "step matrix").map_err(|_| Error::ResonantStep { tau })?;
        Ok(Self { tau, lu, rhs: e + aq * half })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn step(&self, x: &Vector) -> Result<Vector> {
        let b = &self.rhs * x;
        self.lu.solve(&b).ok_or(Error::ResonantStep { tau: self.tau })
    }
}

/// Solves `(E - tau/2 AQ) x+ = (E + tau/2 AQ) x`.
pub fn midpoint_dae_step(sys: &BlockDhdae, x: &Vector, tau: f64) -> Result<Vector> {
    check_len(x, sys.n())?;
    let next = MidpointStepper::new(Dynamics::Full(sys), tau)?.step(x)?;
    if cfg!(debug_assertions) {
        let mid = (&next + x) * c(0.5, 0.0);
        let qm = sys.q() * &mid;
        let rate = 2.0 * tau * (qm.adjoint() * sys.a() * &qm)[(0, 0)].re;
        let dh = pencil::hamiltonian(sys, &next)? - pencil::hamiltonian(sys, x)?;
        let scale = pencil::hamiltonian(sys, x)?.abs() + pencil::hamiltonian(sys, &next)?.abs() + rate.abs();
        debug_assert!((dh - rate).abs() <= 1e-8 * scale.max(f64::MIN_POSITIVE), "discrete dissipation identity violated");
    }
    Ok(next)
}

/// `[x1; x2]` with `x2` from the closure relation.
pub fn consistent_init(sys: &BlockDhdae, x1: &Vector) -> Result<Vector> {
    check_len(x1, sys.n1())?;
    let red = schur_reduce(sys)?;
    let x2 = &red.x2_map * x1;
    let mut x = Vector::zeros(sys.n());
    x.rows_mut(0, sys.n1()).copy_from(x1);
    x.rows_mut(sys.n1(), sys.n2()).copy_from(&x2);
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub which: StateKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    #[serde(rename = "H_values")]
    pub h_values: Vec<f64>,
}

impl Serialize for Trajectory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out<'a> {
            times: &'a [f64],
            states: Vec<Vec<[f64; 2]>>,
            which: StateKind,
        }
        Out {
            times: &self.times,
            states: self.states.iter().map(|x| x.iter().map(|z| [z.re, z.im]).collect()).collect(),
            which: self.which,
        }
        .serialize(s)
    }
}

/// Number of steps to reach `t_end`, tolerant of `t_end / tau` landing just above an integer.
pub fn step_count(tau: f64, t_end: f64) -> usize {
    (t_end / tau - 1e-9).ceil().max(0.0) as usize
}

pub fn simulate(dynamics: Dynamics<'_>, x0: &Vector, tau: f64, t_end: f64) -> Result<(Trajectory, EnergyTrace)> {
    check_len(x0, dynamics.dim())?;
    if !(t_end >= tau) {
        return Err(Error::InvalidParam(format!("t_end = {t_end} must be at least tau = {tau}")));
    }
    let stepper = MidpointStepper::new(dynamics, tau)?;
    let steps = step_count(tau, t_end);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut h = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    times.push(0.0);
    h.push(dynamics.energy(&x)?);
    states.push(x.clone());
    for k in 1..=steps {
        x = stepper.step(&x)?;
        if !x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::Numeric(format!("state became non-finite at step {k}")));
        }
        times.push(k as f64 * tau);
        h.push(dynamics.energy(&x)?);
        states.push(x.clone());
    }
    let which = dynamics.kind();
    Ok((Trajectory { times: times.clone(), states, which }, EnergyTrace { times, h_values: h }))
}

/// Largest deviation between the `x1` part of the full midpoint run and the
/// midpoint run of the reduced generator from the same initial `x1`.
pub fn cross_validate(sys: &BlockDhdae, x1_0: &Vector, tau: f64, t_end: f64) -> Result<f64> {
    let red = schur_reduce(sys)?;
    let x0 = consistent_init(sys, x1_0)?;
    let (full, _) = simulate(Dynamics::Full(sys), &x0, tau, t_end)?;
    let (reduced, _) = simulate(Dynamics::Reduced(&red), x1_0, tau, t_end)?;
    let n1 = sys.n1();
    Ok(full
        .states
        .iter()
        .zip(&reduced.states)
        .map(|(a, b)| (a.rows(0, n1) - b).norm())
        .fold(0.0, f64::max))
}

/// Norm of the recovered algebraic part along a reduced trajectory, a roughness diagnostic.
pub fn multiplier_norms(red: &ReducedSystem, traj: &Trajectory) -> Vec<f64> {
    traj.states.iter().map(|x| (&red.x2_map * x).norm()).collect()
}

/// Writes `t,H,x_0,...`; complex states get `x_k_re,x_k_im` column pairs.
pub fn write_trajectory_csv<W: Write>(out: W, traj: &Trajectory, energy: &EnergyTrace) -> Result<()> {
    let complex = traj.states.iter().any(|x| x.iter().any(|z| z.im != 0.0));
    let n = traj.states.first().map_or(0, |x| x.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "H".to_string()];
    for k in 0..n {
        if complex {
            header.push(format!("x_{k}_re"));
            header.push(format!("x_{k}_im"));
        } else {
            header.push(format!("x_{k}"));
        }
    }
    w.write_record(&header)?;
    for ((t, x), h) in traj.times.iter().zip(&traj.states).zip(&energy.h_values) {
        let mut rec = vec![fmt(*t), fmt(*h)];
        for z in x.iter() {
            rec.push(fmt(z.re));
            if complex {
                rec.push(fmt(z.im));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_energy_csv<W: Write>(out: W, energy: &EnergyTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "H"])?;
    for (t, h) in energy.times.iter().zip(&energy.h_values) {
        w.write_record([fmt(*t), fmt(*h)])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eye, real_mat, zeros};
    use crate::ph1d::{self, Profile, ScalarProfile};
    use crate::random;
    use proptest::prelude::*;

    fn scalar(e: f64, a: f64) -> BlockDhdae {
        BlockDhdae::new(real_mat(1, 1, &[e]), eye(1), zeros(0, 0), real_mat(1, 1, &[a])).unwrap()
    }

    fn heat(n: usize) -> BlockDhdae {
        let form = ph1d::sturm_liouville_form(
            ScalarProfile::real(1.0),
            ScalarProfile::real(1.0),
            ScalarProfile::real(0.0),
            ScalarProfile::real(1.0),
            real_mat(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        )
        .unwrap();
        ph1d::discretize(&form.ph1d().unwrap(), n).unwrap()
    }

    fn string(n: usize) -> BlockDhdae {
        let one = ScalarProfile::real(1.0);
        let sys = ph1d::Ph1dSystem::new(
            real_mat(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            Profile::Constant(zeros(2, 2)),
            real_mat(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            2,
            vec![one.clone(), one.clone()],
            vec![one.clone(), one],
            vec![],
        )
        .unwrap();
        ph1d::discretize(&sys, n).unwrap()
    }

    fn sine(n: usize, k: usize) -> Vector {
        let h = 1.0 / (n + 1) as f64;
        Vector::from_fn(n, |i, _| c((std::f64::consts::PI * k as f64 * (i + 1) as f64 * h).sin(), 0.0))
    }

    #[test]
    fn scalar_step() {
        let x = midpoint_dae_step(&scalar(1.0, -1.0), &Vector::from_element(1, c(3.0, 0.0)), 1.0).unwrap();
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn resonant_step_reported() {
        // 1 - tau/2 * 2 = 0 for tau = 1
        let sys = BlockDhdae::new(eye(1), eye(1), zeros(0, 0), zeros(1, 1)).unwrap();
        assert!(midpoint_dae_step(&sys, &Vector::zeros(1), 1.0).is_ok());
        let p = crate::pencil::RawPencil::new(eye(1), real_mat(1, 1, &[2.0]), eye(1)).unwrap();
        let lhs = &p.e - p.aq() * c(0.5, 0.0);
        assert!(linalg::lu_factor(&lhs, "x").is_err());
        let red = ReducedSystem { n1: 1, ared: real_mat(1, 1, &[2.0]), x2_map: zeros(0, 1), inner_metric: eye(1) };
        assert!(matches!(MidpointStepper::new(Dynamics::Reduced(&red), 1.0), Err(Error::ResonantStep { .. })));
    }

    #[test]
    fn consistent_init_residual() {
        let sys = heat(16);
        let x = consistent_init(&sys, &sine(16, 1)).unwrap();
        let res = (sys.a().rows(sys.n1(), sys.n2()) * sys.q() * &x).norm();
        assert!(res < 1e-12 * (sys.a().norm() * x.norm()));
        assert_eq!(consistent_init(&sys, &Vector::zeros(16)).unwrap(), Vector::zeros(sys.n()));
        let s = string(8);
        let x1 = Vector::from_fn(s.n1(), |i, _| c(i as f64, 0.0));
        assert_eq!(consistent_init(&s, &x1).unwrap(), x1);
    }

    #[test]
    fn string_conserves_energy() {
        let sys = string(16);
        let x0 = Vector::from_fn(sys.n(), |i, _| c((i as f64 * 0.37).sin(), 0.0));
        let (_, e) = simulate(Dynamics::Full(&sys), &x0, 1e-2, 10.0).unwrap();
        let h0 = e.h_values[0];
        assert_eq!(e.h_values.len(), 1001);
        assert!(e.h_values.iter().all(|h| (h - h0).abs() <= 1e-12 * h0 * 10.0));
    }

    #[test]
    fn heat_energy_decreases_at_the_discrete_rate() {
        let n = 16;
        let sys = heat(n);
        let x1 = sine(n, 1);
        let x1 = &x1 / c(x1.norm(), 0.0);
        let x0 = consistent_init(&sys, &x1).unwrap();
        assert!((pencil::hamiltonian(&sys, &x0).unwrap() - 1.0).abs() < 1e-12);
        let tau = 1e-3;
        let (_, e) = simulate(Dynamics::Full(&sys), &x0, tau, 0.05).unwrap();
        assert!(e.h_values.windows(2).all(|w| w[1] < w[0]));
        let h = 1.0 / (n + 1) as f64;
        let lam = -4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
        // the midpoint amplification factor of this mode
        let g: f64 = (1.0 + 0.5 * tau * lam) / (1.0 - 0.5 * tau * lam);
        for (k, hk) in e.h_values.iter().enumerate() {
            let exact = (2.0 * lam * e.times[k]).exp();
            assert!((hk - g.powi(2 * k as i32)).abs() < 1e-10);
            assert!((hk - exact).abs() < 1e-3 * exact.max(1e-3));
        }
    }

    #[test]
    fn zero_state_stays_zero() {
        let sys = heat(8);
        let (t, e) = simulate(Dynamics::Full(&sys), &Vector::zeros(sys.n()), 0.1, 1.0).unwrap();
        assert!(t.states.iter().all(|x| x.norm() == 0.0));
        assert!(e.h_values.iter().all(|&h| h == 0.0));
        assert_eq!(cross_validate(&sys, &Vector::zeros(8), 0.1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn full_and_reduced_agree() {
        let sys = heat(32);
        let d = cross_validate(&sys, &sine(32, 2), 1e-3, 0.1).unwrap();
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn reduced_energy_matches_full_energy() {
        let sys = heat(12);
        let red = schur_reduce(&sys).unwrap();
        let x1 = sine(12, 3);
        let full = consistent_init(&sys, &x1).unwrap();
        let a = Dynamics::Reduced(&red).energy(&x1).unwrap();
        assert!((a - pencil::hamiltonian(&sys, &full).unwrap()).abs() < 1e-12 * a);
    }

    #[test]
    fn time_reversal_for_skew_systems() {
        let sys = string(10);
        let x0 = Vector::from_fn(sys.n(), |i, _| c(1.0 / (1.0 + i as f64), 0.0));
        let fwd = MidpointStepper::new(Dynamics::Full(&sys), 0.05).unwrap();
        let x1 = fwd.step(&x0).unwrap();
        // stepping with -tau is the inverse map
        let (e, aq) = Dynamics::Full(&sys).operators();
        let back = linalg::solve(&(&e + &aq * c(0.025, 0.0)), &Mat::from_column_slice(x1.len(), 1, ((e - aq * c(0.025, 0.0)) * &x1).as_slice()), "back").unwrap();
        assert!((back.column(0) - &x0).norm() < 1e-10);
    }

    #[test]
    fn csv_format() {
        let sys = scalar(1.0, -1.0);
        let (t, e) = simulate(Dynamics::Full(&sys), &Vector::from_element(1, c(1.0, 0.0)), 0.5, 1.0).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &t, &e).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,H,x_0");
        assert_eq!(lines[1], "0.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0");
        assert_eq!(lines.len(), 4);
        let z = Vector::from_element(1, c(0.0, 1.0));
        let (t, e) = simulate(Dynamics::Full(&sys), &z, 0.5, 0.5).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &t, &e).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,H,x_0_re,x_0_im\n"));
    }

    #[test]
    fn step_count_rounding() {
        assert_eq!(step_count(1e-3, 1.0), 1000);
        assert_eq!(step_count(0.1, 0.3), 3);
        assert_eq!(step_count(0.4, 1.0), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn dissipation_each_step(seed in 0u64..10_000, n1 in 1usize..5, n2 in 0usize..4) {
            let mut rng = random::rng(seed);
            let sys = random::block_dhdae(&mut rng, n1, n2);
            let x0 = random::vector(&mut rng, sys.n());
            if let Ok((_, e)) = simulate(Dynamics::Full(&sys), &x0, 0.05, 1.0) {
                let h0 = e.h_values[0].abs().max(1e-300);
                for w in e.h_values.windows(2) {
                    prop_assert!(w[1] - w[0] <= 1e-12 * h0.max(e.h_values[1].abs()));
                }
            }
        }

        #[test]
        fn reduced_norm_contracts(seed in 0u64..10_000, n1 in 1usize..5, n2 in 1usize..4) {
            let mut rng = random::rng(seed);
            let sys = random::block_dhdae(&mut rng, n1, n2);
            if let Ok(red) = schur_reduce(&sys) {
                let x1 = random::vector(&mut rng, n1);
                let (_, e) = simulate(Dynamics::Reduced(&red), &x1, 0.05, 1.0).unwrap();
                for w in e.h_values.windows(2) {
                    prop_assert!(w[1] <= w[0] * (1.0 + 1e-10));
                }
            }
        }
    }
}
