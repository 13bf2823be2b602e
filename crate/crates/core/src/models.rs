//! Registry of ready-made systems with named parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{self, Dynamics};
use crate::linalg::{self, c, real_mat, Mat, Vector, ZERO};
use crate::pencil::{self, BlockDhdae, RawPencil, TOL_INV, TOL_PSD};
use crate::ph1d::{self, Discretization, GridKind, Ph1dSystem, Profile, ScalarProfile};
use crate::random;
use crate::reduction::{self, schur_reduce, subspace_reduce};
use crate::saddle::{self, StokesMac};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ph1d,
    Block,
    Saddle,
    RawPencil,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamInfo {
    pub name: &'static str,
    pub default: f64,
    pub description: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub name: &'static str,
    pub kind: ModelKind,
    pub description: &'static str,
    pub source: &'static str,
    pub params: Vec<ParamInfo>,
    /// Deliberately singular fixtures.
    pub singular: bool,
}

fn p(name: &'static str, default: f64, description: &'static str) -> ParamInfo {
    ParamInfo { name, default, description }
}

pub fn registry() -> Vec<ModelInfo> {
    use ModelKind::*;
    let grid = || p("N", 32.0, "interior grid nodes");
    vec![
        ModelInfo {
            name: "beam",
            kind: Ph1d,
            description: "Euler-Bernoulli beam built from two coupled wave equations, clamped at 0 and free at 1",
            source: "beam from two wave operators",
            params: vec![p("rho", 1.0, "mass density"), p("q1", 1.0, "first energy weight"), p("q2", 1.0, "bending stiffness"), p("N", 16.0, "interior grid nodes")],
            singular: false,
        },
        ModelInfo {
            name: "counter",
            kind: RawPencil,
            description: "2x2 pencil with no common kernel that is nevertheless singular",
            source: "singular pencil counterexample",
            params: vec![p("e11", 1.0, "E[0,0]"), p("e12", 2.0, "E[0,1]"), p("q21", 3.0, "Q[1,0]"), p("q22", 4.0, "Q[1,1]")],
            singular: true,
        },
        ModelInfo {
            name: "feedback",
            kind: Block,
            description: "random dissipative plant closed by a static output feedback",
            source: "output feedback interconnection",
            params: vec![p("n", 4.0, "plant dimension"), p("m", 2.0, "number of inputs"), p("seed", 1.0, "random seed")],
            singular: false,
        },
        ModelInfo {
            name: "heat_closure",
            kind: Ph1d,
            description: "heat equation with Fourier's law kept as an algebraic closure (T on nodes, flux on faces), Dirichlet",
            source: "heat equation with closure relation",
            params: vec![p("alpha", 1.0, "diffusivity"), p("k", 1.0, "conductivity, weight of the flux"), grid()],
            singular: false,
        },
        ModelInfo {
            name: "heat_textbook",
            kind: Ph1d,
            description: "heat equation whose reduction has diffusivity k*alpha, Dirichlet",
            source: "heat equation with closure relation",
            params: vec![p("alpha", 1.0, "diffusivity"), p("k", 1.0, "conductivity"), grid()],
            singular: false,
        },
        ModelInfo {
            name: "impedance",
            kind: Block,
            description: "random impedance-passive interconnection with a resistive channel",
            source: "impedance passive construction",
            params: vec![p("nh", 2.0, "first state block"), p("nv", 2.0, "second state block"), p("nu", 2.0, "dissipation channel"), p("seed", 1.0, "random seed")],
            singular: false,
        },
        ModelInfo {
            name: "schrodinger",
            kind: Ph1d,
            description: "1-D Schrodinger equation as a Sturm-Liouville reduction with r = -i, Dirichlet",
            source: "Sturm-Liouville family",
            params: vec![grid()],
            singular: false,
        },
        ModelInfo {
            name: "stokes",
            kind: Saddle,
            description: "Stokes flow on the unit square, MAC grid, no-slip walls, zero-mean pressure",
            source: "Stokes and Oseen saddle point",
            params: vec![p("N", 8.0, "cells per direction"), p("alpha", 1.0, "viscosity")],
            singular: false,
        },
        ModelInfo {
            name: "string",
            kind: Ph1d,
            description: "vibrating string in velocity/strain variables, fixed ends",
            source: "vibrating string",
            params: vec![p("rho", 1.0, "mass density"), p("T", 1.0, "Young modulus"), grid()],
            singular: false,
        },
        ModelInfo {
            name: "string_massless",
            kind: Ph1d,
            description: "vibrating string with zero mass: velocity moved to the algebraic part",
            source: "vibrating string",
            params: vec![p("T", 1.0, "Young modulus"), grid()],
            singular: false,
        },
        ModelInfo {
            name: "string_z",
            kind: Ph1d,
            description: "vibrating string in momentum/strain variables, fixed ends",
            source: "vibrating string",
            params: vec![p("rho", 1.0, "mass density"), p("T", 1.0, "Young modulus"), grid()],
            singular: false,
        },
        ModelInfo {
            name: "sturm_liouville",
            kind: Ph1d,
            description: "wave operator with closure giving (1/e1)[(x'/r)' - g0 x], Robin ends a x + b x'/r = 0",
            source: "Sturm-Liouville family",
            params: vec![
                p("e1", 1.0, "capacity"),
                p("r_re", 1.0, "real part of r"),
                p("r_im", 0.0, "imaginary part of r"),
                p("g0", 0.0, "damping"),
                p("q2", 1.0, "flux weight"),
                p("alpha1", 1.0, "a at 1"),
                p("beta1", 0.0, "b at 1"),
                p("alpha2", 1.0, "a at 0"),
                p("beta2", 0.0, "b at 0"),
                grid(),
            ],
            singular: false,
        },
        ModelInfo {
            name: "wave_heat",
            kind: Ph1d,
            description: "wave equation coupled through the boundary to a heat equation",
            source: "boundary-coupled wave and heat",
            params: vec![p("rho", 1.0, "mass density"), p("T", 1.0, "Young modulus"), p("r", 1.0, "heat resistance"), grid()],
            singular: false,
        },
    ]
}

pub fn info(name: &str) -> Result<ModelInfo> {
    registry().into_iter().find(|m| m.name == name).ok_or_else(|| Error::UnknownModel(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string(), params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    /// Parses `key=value`.
    pub fn set_from_str(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::InvalidParam(format!("expected key=value, got '{kv}'")))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::InvalidParam(format!("'{v}' is not a number")))?;
        self.params.insert(k.trim().to_string(), v);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Built {
    Ph1d { ph1d: Ph1dSystem, disc: Discretization },
    Block(BlockDhdae),
    Saddle(Box<StokesMac>),
    Raw(RawPencil),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub info: ModelInfo,
    /// All parameters, defaults filled in.
    pub params: BTreeMap<String, f64>,
    pub built: Built,
}

struct Params<'a> {
    map: &'a BTreeMap<String, f64>,
}

impl Params<'_> {
    fn get(&self, k: &str) -> f64 {
        self.map[k]
    }
    fn positive(&self, k: &str) -> Result<f64> {
        let v = self.get(k);
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidParam(format!("{k} must be positive, got {v}")))
        }
    }
    fn count(&self, k: &str, min: usize) -> Result<usize> {
        let v = self.get(k);
        if v.fract() != 0.0 || v < min as f64 || v > 1e6 {
            return Err(Error::InvalidParam(format!("{k} must be an integer >= {min}, got {v}")));
        }
        Ok(v as usize)
    }
}

fn dirichlet_first() -> Mat {
    real_mat(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
}

fn swap2() -> Mat {
    real_mat(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

fn consts(v: &[f64]) -> Vec<ScalarProfile> {
    v.iter().map(|&x| ScalarProfile::real(x)).collect()
}

pub fn build(spec: &ModelSpec) -> Result<Model> {
    let info = info(&spec.name)?;
    let mut params: BTreeMap<String, f64> = info.params.iter().map(|p| (p.name.to_string(), p.default)).collect();
    for (k, v) in &spec.params {
        if !params.contains_key(k) {
            return Err(Error::InvalidParam(format!("model '{}' has no parameter '{k}'", spec.name)));
        }
        params.insert(k.clone(), *v);
    }
    let pr = Params { map: &params };
    let ph = |sys: Ph1dSystem, n: usize| -> Result<Built> {
        if !ph1d::check_wb_dissipative(sys.p1(), sys.wb(), TOL_PSD)? {
            return Err(Error::InvalidParam("boundary conditions are not dissipative".into()));
        }
        let disc = ph1d::discretize_with_layout(&sys, n)?;
        Ok(Built::Ph1d { ph1d: sys, disc })
    };
    let built = match info.name {
        "string" | "string_z" => {
            let (rho, t) = (pr.positive("rho")?, pr.positive("T")?);
            let (e1, q1) = if info.name == "string" { ([rho, 1.0], [1.0, t]) } else { ([1.0, 1.0], [1.0 / rho, t]) };
            let sys = Ph1dSystem::new(swap2(), Profile::Constant(linalg::zeros(2, 2)), dirichlet_first(), 2, consts(&e1), consts(&q1), vec![])?;
            ph(sys, pr.count("N", 4)?)?
        }
        "string_massless" => {
            let wb = real_mat(2, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
            let sys = Ph1dSystem::new(swap2(), Profile::Constant(linalg::zeros(2, 2)), wb, 1, consts(&[1.0]), consts(&[pr.positive("T")?]), consts(&[1.0]))?;
            ph(sys, pr.count("N", 4)?)?
        }
        "heat_closure" | "heat_textbook" => {
            let (alpha, k) = (pr.positive("alpha")?, pr.positive("k")?);
            let (g22, q2) = if info.name == "heat_closure" { (-1.0, k) } else { (-1.0 / k, 1.0) };
            let sys = Ph1dSystem::new(
                -swap2(),
                Profile::Constant(linalg::real_diag(&[0.0, g22])),
                dirichlet_first(),
                1,
                consts(&[1.0 / alpha]),
                consts(&[1.0]),
                consts(&[q2]),
            )?;
            ph(sys, pr.count("N", 4)?)?
        }
        "sturm_liouville" | "schrodinger" => {
            let (e1, r, g0, q2, wb) = if info.name == "schrodinger" {
                (1.0, c(0.0, -1.0), 0.0, 1.0, dirichlet_first())
            } else {
                let g0 = pr.get("g0");
                if !(g0 >= 0.0) {
                    return Err(Error::InvalidParam("g0 must be nonnegative".into()));
                }
                let wb = real_mat(2, 4, &[pr.get("alpha1"), pr.get("beta1"), 0.0, 0.0, 0.0, 0.0, pr.get("alpha2"), pr.get("beta2")]);
                (pr.positive("e1")?, c(pr.get("r_re"), pr.get("r_im")), g0, pr.positive("q2")?, wb)
            };
            if linalg::rank(&wb, TOL_INV) < 2 {
                return Err(Error::InvalidParam("each end needs a nonzero boundary row".into()));
            }
            let form = ph1d::sturm_liouville_form(ScalarProfile::real(e1), Profile::Constant(r), ScalarProfile::real(g0), ScalarProfile::real(q2), wb)?;
            ph(form.ph1d()?, pr.count("N", 4)?)?
        }
        "beam" => ph(beam_system(pr.positive("rho")?, pr.positive("q1")?, pr.positive("q2")?)?, pr.count("N", 4)?)?,
        "wave_heat" => {
            let sys = ph1d::wave_heat_system(ScalarProfile::real(pr.positive("rho")?), ScalarProfile::real(pr.positive("T")?), ScalarProfile::real(pr.positive("r")?))?;
            ph(sys, pr.count("N", 4)?)?
        }
        "feedback" => {
            let (n, m) = (pr.count("n", 1)?, pr.count("m", 1)?);
            let mut rng = random::rng(pr.count("seed", 0)? as u64);
            let a0 = random::dissipative(&mut rng, n, n);
            let b0 = random::matrix(&mut rng, n, m);
            let k0 = random::matrix(&mut rng, m, m);
            Built::Block(reduction::feedback_system(&a0, &b0, &(&k0 * k0.adjoint()))?)
        }
        "impedance" => {
            let (nh, nv, nu) = (pr.count("nh", 1)?, pr.count("nv", 1)?, pr.count("nu", 1)?);
            let mut rng = random::rng(pr.count("seed", 0)? as u64);
            let l = random::matrix(&mut rng, nh, nv);
            let k0 = random::matrix(&mut rng, nu, nv);
            let k1 = random::matrix(&mut rng, nv, nv);
            Built::Block(reduction::impedance_construct(&l, &k0, &-(&k1 * k1.adjoint()))?.0)
        }
        "stokes" => Built::Saddle(Box::new(saddle::stokes_mac_assemble(pr.count("N", 3)?, pr.positive("alpha")?)?)),
        "counter" => Built::Raw(counter_pencil(pr.get("e11"), pr.get("e12"), pr.get("q21"), pr.get("q22"))?),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(Model { info, params, built })
}

/// Clamped at 0, free at 1. Components: velocity, moment rate, slope rate, shear.
pub fn beam_system(rho: f64, q1: f64, q2: f64) -> Result<Ph1dSystem> {
    let p1 = real_mat(4, 4, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    let mut g0 = linalg::zeros(4, 4);
    g0[(2, 3)] = c(1.0, 0.0);
    g0[(3, 2)] = c(-1.0, 0.0);
    let mut wb = linalg::zeros(4, 8);
    for (row, col) in [1, 3, 4, 6].into_iter().enumerate() {
        wb[(row, col)] = c(1.0, 0.0);
    }
    Ph1dSystem::new(p1, Profile::Constant(g0), wb, 2, consts(&[rho, 1.0]), consts(&[q1, q2]), consts(&[1.0, 1.0]))
}

/// `E = [[e11, e12], [0, 0]]`, `A = [[0, -1], [1, 0]]`, `Q = [[0, 0], [q21, q22]]`.
pub fn counter_pencil(e11: f64, e12: f64, q21: f64, q22: f64) -> Result<RawPencil> {
    RawPencil::new(
        real_mat(2, 2, &[e11, e12, 0.0, 0.0]),
        real_mat(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        real_mat(2, 2, &[0.0, 0.0, q21, q22]),
    )
}

impl Model {
    pub fn name(&self) -> &'static str {
        self.info.name
    }

    pub fn system(&self) -> Option<&BlockDhdae> {
        match &self.built {
            Built::Ph1d { disc, .. } => Some(&disc.system),
            Built::Block(s) => Some(s),
            Built::Saddle(st) => Some(&st.system),
            Built::Raw(_) => None,
        }
    }

    pub fn ph1d(&self) -> Option<&Ph1dSystem> {
        match &self.built {
            Built::Ph1d { ph1d, .. } => Some(ph1d),
            _ => None,
        }
    }

    pub fn raw(&self) -> RawPencil {
        match (&self.built, self.system()) {
            (Built::Raw(p), _) => p.clone(),
            (_, Some(s)) => s.as_raw(),
            _ => unreachable!("every model has a pencil"),
        }
    }

    /// The system as JSON: block form when available, otherwise the raw pencil.
    pub fn system_json(&self) -> Result<serde_json::Value> {
        Ok(match self.system() {
            Some(s) => serde_json::to_value(s)?,
            None => serde_json::to_value(self.raw())?,
        })
    }

    /// Smooth default for the dynamic part, compatible with the boundary conditions.
    pub fn default_x1(&self) -> Result<Vector> {
        match &self.built {
            Built::Ph1d { disc, ph1d } => {
                let (n1, _) = ph1d.split();
                let mut x = Vec::new();
                for (f, fl) in disc.layout.fields[..n1].iter().enumerate() {
                    for &z in &fl.positions {
                        let k = (f + 1) as f64;
                        x.push(c((std::f64::consts::PI * z).sin().powi(2) + 0.3 * (k * std::f64::consts::PI * z).sin(), 0.0));
                    }
                }
                let x1 = Vector::from_vec(x);
                match schur_reduce(&disc.system) {
                    Ok(_) => Ok(x1),
                    // project onto the admissible subspace
                    Err(Error::ClosureSingular) => {
                        let sub = subspace_reduce(&disc.system)?;
                        let coords = sub.basis_v.adjoint() * disc.system.metric() * &x1;
                        Ok(&sub.basis_v * coords)
                    }
                    Err(e) => Err(e),
                }
            }
            Built::Block(s) => {
                let mut rng = random::rng(7);
                Ok(random::vector(&mut rng, s.n1()))
            }
            Built::Saddle(st) => Ok(saddle::divergence_free_field(&st.ops, |x, y| {
                let b = (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
                b * b / (8.0 * std::f64::consts::PI)
            })),
            Built::Raw(_) => Err(Error::Unsupported("the raw pencil has no dynamic part to initialize".into())),
        }
    }

    /// Full default state. Algebraic components come from the closure relation
    /// when it is solvable, and are zero otherwise (they do not influence the
    /// midpoint iterates of the dynamic part).
    pub fn default_state(&self) -> Result<Vector> {
        let sys = self.system().ok_or_else(|| Error::Unsupported("the raw pencil cannot be simulated".into()))?;
        let x1 = self.default_x1()?;
        match integrate::consistent_init(sys, &x1) {
            Ok(x) => Ok(x),
            Err(Error::ClosureSingular) => {
                let mut x = Vector::from_element(sys.n(), ZERO);
                x.rows_mut(0, sys.n1()).copy_from(&x1);
                Ok(x)
            }
            Err(e) => Err(e),
        }
    }

    /// Whether the operator is skew, so the energy is conserved rather than dissipated.
    pub fn conservative(&self) -> bool {
        self.system().is_some_and(|s| linalg::herm_part(s.a()).norm() <= 1e-12 * s.a().norm().max(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Structural and dynamic self-checks of a built model.
pub fn validate(model: &Model) -> ValidationReport {
    let mut checks = Vec::new();
    let mut add = |name: &str, res: Result<(bool, String)>| {
        let (passed, detail) = res.unwrap_or_else(|e| (false, e.to_string()));
        checks.push(Check { name: name.to_string(), passed, detail });
    };
    let samples = pencil::default_samples();
    match model.system() {
        None => {
            let p = model.raw();
            add("singular_everywhere", pencil::is_regular_raw(&p, &samples).map(|r| (!r.regular, format!("regular = {}", r.regular))));
            add(
                "no_common_kernel",
                pencil::common_kernel(&[&p.e, &p.aq()], TOL_INV).map(|k| (k.ncols() == 0, format!("dimension {}", k.ncols()))),
            );
        }
        Some(sys) => {
            add("dissipative", pencil::check_dissipative(sys.a(), TOL_PSD).map(|b| (b, String::new())));
            add("coercive", pencil::check_coercive(sys.e1(), sys.q1(), TOL_PSD).map(|b| (b, String::new())));
            add(
                "regular",
                pencil::is_regular_sampled(sys, &samples).map(|r| (r.regular != model.info.singular, format!("regular = {}", r.regular))),
            );
            add("json_round_trip", (|| {
                let text = serde_json::to_string(sys)?;
                let back: BlockDhdae = serde_json::from_str(&text)?;
                Ok((&back == sys, String::new()))
            })());
            if let Ok(red) = schur_reduce(sys) {
                let d = reduction::metric_dissipation(&red.inner_metric, &red.ared);
                add("reduced_dissipative", Ok((d <= 1e-10, format!("{d:.3e}"))));
                add("cross_validate", model.default_x1().and_then(|x1| {
                    let d = integrate::cross_validate(sys, &x1, 1e-3, 0.02)?;
                    Ok((d < 1e-9, format!("{d:.3e}")))
                }));
            }
            add("energy", energy_check(model, sys, 1e-3, 100));
            if let Some(ph) = model.ph1d() {
                add("boundary_dissipative", ph1d::check_wb_dissipative(ph.p1(), ph.wb(), TOL_PSD).map(|b| (b, String::new())));
                add("shooting_agrees", (|| {
                    let s = c(1.0, 0.0);
                    let shoot = ph1d::fundamental_matrix(ph, s, ph1d::DEFAULT_STEPS)?;
                    let disc = pencil::is_regular_sampled(sys, &[s])?;
                    Ok((shoot.regular == disc.regular, format!("shooting {} / discrete {}", shoot.regular, disc.regular)))
                })());
            }
            if let Built::Saddle(st) = &model.built {
                add("divergence_free", (|| {
                    let x0 = model.default_state()?;
                    let (traj, _) = integrate::simulate(Dynamics::Full(sys), &x0, 1e-3, 0.1)?;
                    let worst = traj.states.iter().map(|x| st.divergence_of(x).norm()).fold(0.0, f64::max);
                    Ok((worst < 1e-10, format!("{worst:.3e}")))
                })());
            }
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    ValidationReport { model: model.name().to_string(), passed, checks }
}

/// Per-step energy behaviour: conserved for skew operators, non-increasing otherwise.
pub fn energy_check(model: &Model, sys: &BlockDhdae, tau: f64, steps: usize) -> Result<(bool, String)> {
    let x0 = model.default_state()?;
    let (_, e) = integrate::simulate(Dynamics::Full(sys), &x0, tau, tau * steps as f64)?;
    let h0 = e.h_values[0];
    if model.conservative() {
        let drift = e.h_values.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max) / h0;
        Ok((drift < 1e-9, format!("relative drift {drift:.3e}")))
    } else {
        let worst = e.h_values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        Ok((worst <= 1e-12 * h0, format!("largest increase {worst:.3e}")))
    }
}

/// Positions of a field in the discrete state, for output labelling.
pub fn field_kinds(model: &Model) -> Vec<GridKind> {
    match &model.built {
        Built::Ph1d { disc, .. } => disc.layout.fields.iter().map(|f| f.kind).collect(),
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eye;

    fn built(name: &str) -> Model {
        build(&ModelSpec::new(name)).unwrap()
    }

    #[test]
    fn every_model_builds_and_validates() {
        for m in registry() {
            let spec = match m.name {
                "stokes" => ModelSpec::new(m.name).with("N", 4.0),
                "counter" | "feedback" | "impedance" => ModelSpec::new(m.name),
                _ => ModelSpec::new(m.name).with("N", 12.0),
            };
            let model = build(&spec).unwrap();
            let rep = validate(&model);
            assert!(rep.passed, "{}: {:?}", m.name, rep.checks);
        }
    }

    #[test]
    fn unknown_inputs_rejected() {
        assert!(matches!(build(&ModelSpec::new("nope")), Err(Error::UnknownModel(_))));
        assert!(build(&ModelSpec::new("string").with("rho", 0.0)).is_err());
        assert!(build(&ModelSpec::new("string").with("bogus", 1.0)).is_err());
        assert!(build(&ModelSpec::new("string").with("N", 2.5)).is_err());
        // anti-dissipative Robin end
        assert!(build(&ModelSpec::new("sturm_liouville").with("alpha1", 1.0).with("beta1", -1.0)).is_err());
        let mut spec = ModelSpec::new("heat_closure");
        spec.set_from_str("N=16").unwrap();
        assert_eq!(spec.params["N"], 16.0);
        assert!(spec.set_from_str("N").is_err());
    }

    #[test]
    fn heat_closure_structure() {
        let m = build(&ModelSpec::new("heat_closure").with("alpha", 2.0).with("k", 3.0).with("N", 4.0)).unwrap();
        let sys = m.system().unwrap();
        assert_eq!((sys.n1(), sys.n2()), (4, 5));
        assert!((sys.e1() - eye(4) * c(0.5, 0.0)).norm() < 1e-15);
        assert!((sys.q2() - eye(5) * c(3.0, 0.0)).norm() < 1e-15);
        assert!((sys.a22() + eye(5)).norm() < 1e-15);
        // reduction gives alpha times the Laplacian regardless of k
        let red = schur_reduce(sys).unwrap();
        let h = 0.2;
        assert!((red.ared[(1, 1)] - c(-2.0 * 2.0 / (h * h), 0.0)).norm() < 1e-9);
        let t = build(&ModelSpec::new("heat_textbook").with("alpha", 2.0).with("k", 3.0).with("N", 4.0)).unwrap();
        let red = schur_reduce(t.system().unwrap()).unwrap();
        assert!((red.ared[(1, 1)] - c(-2.0 * 6.0 / (h * h), 0.0)).norm() < 1e-9);
    }

    #[test]
    fn heat_hamiltonian_of_unit_mode() {
        for alpha in [1.0, 2.5] {
            let m = build(&ModelSpec::new("heat_closure").with("alpha", alpha).with("N", 10.0)).unwrap();
            let sys = m.system().unwrap();
            let h = 1.0 / 11.0;
            let v = Vector::from_fn(10, |i, _| c((std::f64::consts::PI * (i + 1) as f64 * h).sin(), 0.0));
            let v = &v / c(v.norm(), 0.0);
            let x = integrate::consistent_init(sys, &v).unwrap();
            let direct: f64 = (0..10).map(|i| (sys.e1()[(i, i)] * v[i]).conj() * sys.q1()[(i, i)] * v[i]).map(|z| z.re).sum();
            assert!((pencil::hamiltonian(sys, &x).unwrap() - direct).abs() < 1e-14);
            assert!((direct - 1.0 / alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn string_representations_share_the_energy() {
        let a = build(&ModelSpec::new("string").with("rho", 2.0).with("T", 3.0).with("N", 8.0)).unwrap();
        let b = build(&ModelSpec::new("string_z").with("rho", 2.0).with("T", 3.0).with("N", 8.0)).unwrap();
        let (sa, sb) = (a.system().unwrap(), b.system().unwrap());
        let mut rng = random::rng(1);
        let velocity = match &a.built {
            Built::Ph1d { disc, .. } => disc.layout.fields[0].clone(),
            _ => unreachable!(),
        };
        for _ in 0..20 {
            let x = random::vector(&mut rng, sa.n());
            let mut z = x.clone();
            for k in 0..velocity.len() {
                z[velocity.offset + k] *= c(2.0, 0.0);
            }
            let (ha, hb) = (pencil::hamiltonian(sa, &x).unwrap(), pencil::hamiltonian(sb, &z).unwrap());
            assert!((ha - hb).abs() < 1e-12 * ha.abs());
        }
    }

    #[test]
    fn massless_string_uses_subspace_path() {
        let m = built("string_massless");
        let sys = m.system().unwrap();
        assert!(matches!(schur_reduce(sys), Err(Error::ClosureSingular)));
        assert!(subspace_reduce(sys).unwrap().dim() > 0);
        assert!(build(&ModelSpec::new("string").with("rho", 0.0)).is_err());
    }

    #[test]
    fn beam_generator_matches_fourth_order_stencil() {
        let (rho, q1, q2, n) = (2.0, 1.5, 3.0, 16);
        let m = build(&ModelSpec::new("beam").with("rho", rho).with("q1", q1).with("q2", q2).with("N", n as f64)).unwrap();
        let Built::Ph1d { disc, .. } = &m.built else { unreachable!() };
        let red = schur_reduce(&disc.system).unwrap();
        let (f0, f1) = (&disc.layout.fields[0], &disc.layout.fields[1]);
        assert_eq!((f0.kind, f1.kind), (GridKind::Node, GridKind::Node));
        let h = disc.layout.h;
        // x11' = -(1/rho) (q2 x12)'' and x12' = (q1 x11)'' on interior nodes
        let node = |f: &ph1d::FieldLayout, i: usize| f.offset + f.positions.iter().position(|&z| (z - i as f64 * h).abs() < 1e-12).unwrap();
        for i in 3..n - 2 {
            for (d, w) in [(-1i64, 1.0), (0, -2.0), (1, 1.0)] {
                let j = (i as i64 + d) as usize;
                let a = red.ared[(node(f0, i), node(f1, j))];
                assert!((a - c(-q2 / rho * w / (h * h), 0.0)).norm() < 1e-8 / (h * h), "{a}");
                let b = red.ared[(node(f1, i), node(f0, j))];
                assert!((b - c(q1 * w / (h * h), 0.0)).norm() < 1e-8 / (h * h), "{b}");
            }
            assert!(red.ared[(node(f0, i), node(f0, i))].norm() < 1e-8);
        }
        for ev in linalg::eigenvalues(&red.ared).unwrap() {
            assert!(ev.re.abs() < 1e-8 * ev.norm().max(1.0));
        }
    }

    #[test]
    fn schrodinger_is_skew_hermitian() {
        let m = built("schrodinger");
        let red = schur_reduce(m.system().unwrap()).unwrap();
        assert!(linalg::herm_part(&(&red.inner_metric * &red.ared)).norm() < 1e-12 * red.ared.norm());
    }

    #[test]
    fn heat_spectrum() {
        let n = 64;
        let m = build(&ModelSpec::new("heat_closure").with("N", n as f64)).unwrap();
        let red = schur_reduce(m.system().unwrap()).unwrap();
        let mut ev: Vec<f64> = linalg::hermitian_eigenvalues(&linalg::herm_part(&red.ared));
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let h = 1.0 / (n + 1) as f64;
        for (k, l) in ev.iter().enumerate() {
            let exact = -4.0 / (h * h) * ((k + 1) as f64 * std::f64::consts::PI * h / 2.0).sin().powi(2);
            assert!((l - exact).abs() < 1e-9, "{k}: {l} vs {exact}");
        }
    }

    #[test]
    fn counter_is_flagged_singular() {
        let m = built("counter");
        assert!(m.info.singular);
        assert!(m.system().is_none());
        assert!(!pencil::is_regular_raw(&m.raw(), &pencil::default_samples()).unwrap().regular);
    }

    #[test]
    fn models_round_trip_through_json() {
        for info in registry() {
            let m = build(&ModelSpec::new(info.name).with("N", if info.name == "stokes" { 3.0 } else { 6.0 }).clone()).or_else(|_| build(&ModelSpec::new(info.name))).unwrap();
            let v = m.system_json().unwrap();
            match m.system() {
                Some(s) => assert_eq!(&serde_json::from_value::<BlockDhdae>(v).unwrap(), s),
                None => assert_eq!(serde_json::from_value::<RawPencil>(v).unwrap(), m.raw()),
            }
            if let Some(ph) = m.ph1d() {
                let text = serde_json::to_string(ph).unwrap();
                assert_eq!(&serde_json::from_str::<Ph1dSystem>(&text).unwrap(), ph);
            }
        }
    }
}
