use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dhdae::integrate::{self, Dynamics};
use dhdae::linalg::{c, Vector, C64};
use dhdae::models::{self, Built, Model, ModelSpec};
use dhdae::pencil::{self, BlockDhdae, RawPencil, TOL_PSD};
use dhdae::reduction::{schur_reduce, subspace_reduce};
use dhdae::{ph1d, saddle, Error};
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "dhdae", version, about = "Analyze, reduce and simulate dissipative Hamiltonian DAEs")]
struct Cli {
    /// JSON file with the same keys as the flags, plus "command".
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Regularity report plus the checks that apply to the input.
    Analyze(AnalyzeArgs),
    /// Eliminate the algebraic part.
    Reduce(InputArgs),
    /// Implicit midpoint integration with CSV output.
    Simulate(SimulateArgs),
    /// List the built-in models, or print one as system JSON.
    Models(ModelsArgs),
    /// Run the self-checks of one or all built-in models.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct InputArgs {
    /// Built-in model name.
    #[arg(long, conflicts_with = "file")]
    model: Option<String>,
    /// System JSON (block form with "n1" or a raw pencil with "E").
    #[arg(long)]
    file: Option<PathBuf>,
    /// Model parameter as key=value; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    #[serde(skip)]
    param: Vec<String>,
    #[arg(skip)]
    params: std::collections::BTreeMap<String, f64>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    /// Sample points, e.g. 1,1+1i,10.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    s: Vec<String>,
    /// Integration steps for the shooting test.
    #[arg(long, default_value_t = ph1d::DEFAULT_STEPS)]
    #[serde(default = "default_steps")]
    steps: usize,
}

fn default_steps() -> usize {
    ph1d::DEFAULT_STEPS
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "t-end")]
    #[serde(alias = "t-end")]
    t_end: Option<f64>,
    /// Also write `t,H` to this file.
    #[arg(long = "energy-out")]
    #[serde(alias = "energy-out")]
    energy_out: Option<PathBuf>,
    /// Integrate the reduced generator instead of the full system.
    #[arg(long)]
    reduced: bool,
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct ModelsArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "param", value_name = "KEY=VALUE")]
    #[serde(skip)]
    param: Vec<String>,
    #[arg(skip)]
    params: std::collections::BTreeMap<String, f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct ValidateArgs {
    #[arg(long, conflicts_with = "all")]
    model: Option<String>,
    #[arg(long)]
    all: bool,
    #[arg(long = "param", value_name = "KEY=VALUE")]
    #[serde(skip)]
    param: Vec<String>,
    #[arg(skip)]
    params: std::collections::BTreeMap<String, f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: 2, message: e.to_string() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure { code: 2, message: format!("malformed JSON: {e}") }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, message: msg.into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let command = match (&cli.config, cli.command) {
        (Some(path), None) => command_from_config(path)?,
        (_, Some(cmd)) => cmd,
        (None, None) => return Err(usage("no command given; see --help")),
    };
    match command {
        Command::Analyze(a) => analyze(a),
        Command::Reduce(a) => reduce(a),
        Command::Simulate(a) => simulate(a),
        Command::Models(a) => list_models(a),
        Command::Validate(a) => validate(a),
    }
}

fn command_from_config(path: &Path) -> Result<Command, Failure> {
    let text = read(path)?;
    let mut v: Value = serde_json::from_str(&text)?;
    let obj = v.as_object_mut().ok_or_else(|| usage("config must be a JSON object"))?;
    let name = obj
        .remove("command")
        .and_then(|c| c.as_str().map(str::to_string))
        .ok_or_else(|| usage("config needs a string field \"command\""))?;
    if let Some(Value::String(s)) = obj.get("s").cloned() {
        obj.insert("s".into(), Value::Array(s.split(',').map(|x| Value::String(x.trim().into())).collect()));
    }
    if let Some(Value::Array(s)) = obj.get("s").cloned() {
        let strs = s.into_iter().map(|x| match x {
            Value::Number(n) => Value::String(n.to_string()),
            other => other,
        });
        obj.insert("s".into(), Value::Array(strs.collect()));
    }
    Ok(match name.as_str() {
        "analyze" => Command::Analyze(serde_json::from_value(v)?),
        "reduce" => Command::Reduce(serde_json::from_value(v)?),
        "simulate" => Command::Simulate(serde_json::from_value(v)?),
        "models" => Command::Models(serde_json::from_value(v)?),
        "validate" => Command::Validate(serde_json::from_value(v)?),
        other => return Err(usage(format!("unknown command '{other}' in config"))),
    })
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut so = io::stdout().lock();
            so.write_all(text.as_bytes()).and_then(|_| so.flush()).map_err(|e| usage(e.to_string()))
        }
    }
}

fn emit_json(out: Option<&Path>, v: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    emit(out, &text)
}

fn spec_from(name: &str, kv: &[String], extra: &std::collections::BTreeMap<String, f64>) -> Result<ModelSpec, Failure> {
    let mut spec = ModelSpec::new(name);
    spec.params.extend(extra.clone());
    for p in kv {
        spec.set_from_str(p)?;
    }
    Ok(spec)
}

enum Input {
    Model(Box<Model>),
    Block(String, BlockDhdae),
    Raw(String, RawPencil),
}

impl Input {
    fn label(&self) -> String {
        match self {
            Input::Model(m) => m.name().to_string(),
            Input::Block(l, _) | Input::Raw(l, _) => l.clone(),
        }
    }
    fn system(&self) -> Option<&BlockDhdae> {
        match self {
            Input::Model(m) => m.system(),
            Input::Block(_, s) => Some(s),
            Input::Raw(..) => None,
        }
    }
}

fn load(args: &InputArgs) -> Result<Input, Failure> {
    match (&args.model, &args.file) {
        (Some(name), None) => Ok(Input::Model(Box::new(models::build(&spec_from(name, &args.param, &args.params)?)?))),
        (None, Some(path)) => {
            if !args.param.is_empty() || !args.params.is_empty() {
                return Err(usage("--param applies to --model only"));
            }
            let v: Value = serde_json::from_str(&read(path)?)?;
            let label = path.display().to_string();
            if v.get("n1").is_some() {
                Ok(Input::Block(label, serde_json::from_value(v)?))
            } else if v.get("E").is_some() {
                Ok(Input::Raw(label, serde_json::from_value(v)?))
            } else {
                Err(usage(format!("{label}: expected a system with \"n1\" or a pencil with \"E\"")))
            }
        }
        (Some(_), Some(_)) => Err(usage("give either --model or --file, not both")),
        (None, None) => Err(usage("one of --model or --file is required")),
    }
}

/// Parses `a`, `bi`, `a+bi`, `a-bi`.
fn parse_complex(s: &str) -> Result<C64, Failure> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || usage(format!("cannot parse '{s}' as a complex number"));
    if t.is_empty() {
        return Err(bad());
    }
    if let Some(body) = t.strip_suffix(['i', 'j']) {
        // split at the last sign that is not an exponent sign or the leading sign
        let bytes = body.as_bytes();
        let split = (1..bytes.len()).rev().find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
        let (re, im) = match split {
            Some(k) => (&body[..k], &body[k..]),
            None => ("0", body),
        };
        let im = match im {
            "" | "+" => "1",
            "-" => "-1",
            x => x,
        };
        let re: f64 = re.parse().map_err(|_| bad())?;
        let im: f64 = im.parse().map_err(|_| bad())?;
        Ok(c(re, im))
    } else {
        Ok(c(t.parse().map_err(|_| bad())?, 0.0))
    }
}

fn complex_json(z: C64) -> Value {
    json!([z.re, z.im])
}

fn analyze(a: AnalyzeArgs) -> Result<u8, Failure> {
    let input = load(&a.input)?;
    let samples = if a.s.is_empty() {
        pencil::default_samples()
    } else {
        a.s.iter().map(|s| parse_complex(s)).collect::<Result<Vec<_>, _>>()?
    };
    let mut out = serde_json::Map::new();
    out.insert("input".into(), json!(input.label()));
    let report = match (&input, input.system()) {
        (_, Some(sys)) => pencil::is_regular_sampled(sys, &samples)?,
        (Input::Raw(_, p), None) => pencil::is_regular_raw(p, &samples)?,
        (Input::Model(m), None) => pencil::is_regular_raw(&m.raw(), &samples)?,
        _ => unreachable!(),
    };
    if let Value::Object(m) = serde_json::to_value(&report)? {
        out.extend(m);
    }
    if let Some(sys) = input.system() {
        out.insert("dissipative".into(), json!(pencil::check_dissipative(sys.a(), TOL_PSD)?));
        out.insert("coercive".into(), json!(pencil::check_coercive(sys.e1(), sys.q1(), TOL_PSD)?));
        out.insert("n1".into(), json!(sys.n1()));
        out.insert("n2".into(), json!(sys.n2()));
        out.insert("stacked_certifies".into(), json!(pencil::stacked_certifies(sys)));
    }
    if let Input::Model(m) = &input {
        out.insert("singular_fixture".into(), json!(m.info.singular));
        if let Some(ph) = m.ph1d() {
            out.insert("boundary_dissipative".into(), json!(ph1d::check_wb_dissipative(ph.p1(), ph.wb(), TOL_PSD)?));
            let mut shots = Vec::new();
            for &s in &samples {
                let r = ph1d::fundamental_matrix(ph, s, a.steps)?;
                shots.push(json!({"s": complex_json(s), "det": complex_json(r.det), "regular": r.regular}));
            }
            out.insert("shooting".into(), Value::Array(shots));
        }
        if let Built::Saddle(st) = &m.built {
            let inf = saddle::infsup_constants(&st.saddle)?;
            let g1 = saddle::schur_g1(&st.saddle)?;
            out.insert(
                "saddle".into(),
                json!({
                    "N": st.ops.n,
                    "garding": saddle::garding_constant(&st.saddle)?,
                    "beta": saddle::closed_range_bound(st.saddle.b0(), st.saddle.mv())?,
                    "alpha": if inf.alpha.is_finite() { json!(inf.alpha) } else { Value::Null },
                    "gamma": inf.gamma,
                    "G1_invertible": g1.invertible,
                    "G1_accretivity": g1.accretivity,
                }),
            );
        }
    }
    emit_json(a.input.out.as_deref(), &Value::Object(out))?;
    Ok(if report.regular { 0 } else { 1 })
}

fn reduce(a: InputArgs) -> Result<u8, Failure> {
    let input = load(&a)?;
    let sys = input.system().ok_or_else(|| usage("a raw pencil has no block structure to reduce"))?;
    let v = match schur_reduce(sys) {
        Ok(r) => {
            let mut v = serde_json::to_value(&r)?;
            v["kind"] = json!("schur");
            v
        }
        Err(Error::ClosureSingular) => {
            let r = subspace_reduce(sys)?;
            let mut v = serde_json::to_value(&r)?;
            v["kind"] = json!("subspace");
            v["dim"] = json!(r.dim());
            v
        }
        Err(e) => return Err(e.into()),
    };
    emit_json(a.out.as_deref(), &v)?;
    Ok(0)
}

fn simulate(a: SimulateArgs) -> Result<u8, Failure> {
    let tau = a.tau.ok_or_else(|| usage("--tau is required"))?;
    let t_end = a.t_end.ok_or_else(|| usage("--t-end is required"))?;
    let input = load(&a.input)?;
    let sys = input.system().ok_or_else(|| usage("a raw pencil cannot be simulated"))?;
    let x1 = match &input {
        Input::Model(m) => m.default_x1()?,
        _ => Vector::from_element(sys.n1(), c(1.0, 0.0)),
    };
    let (traj, energy) = if a.reduced {
        let red = schur_reduce(sys)?;
        integrate::simulate(Dynamics::Reduced(&red), &x1, tau, t_end)?
    } else {
        let x0 = match &input {
            Input::Model(m) => m.default_state()?,
            _ => integrate::consistent_init(sys, &x1).or_else(|_| {
                let mut x = Vector::zeros(sys.n());
                x.rows_mut(0, sys.n1()).copy_from(&x1);
                Ok::<_, Error>(x)
            })?,
        };
        integrate::simulate(Dynamics::Full(sys), &x0, tau, t_end)?
    };
    let mut buf = Vec::new();
    integrate::write_trajectory_csv(&mut buf, &traj, &energy)?;
    emit(a.input.out.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))?;
    if let Some(p) = &a.energy_out {
        let mut buf = Vec::new();
        integrate::write_energy_csv(&mut buf, &energy)?;
        emit(Some(p), &String::from_utf8(buf).expect("csv is utf-8"))?;
    }
    Ok(0)
}

fn list_models(a: ModelsArgs) -> Result<u8, Failure> {
    match &a.model {
        None => emit_json(a.out.as_deref(), &serde_json::to_value(models::registry())?)?,
        Some(name) => {
            let m = models::build(&spec_from(name, &a.param, &a.params)?)?;
            emit_json(a.out.as_deref(), &m.system_json()?)?;
        }
    }
    Ok(0)
}

fn validate(a: ValidateArgs) -> Result<u8, Failure> {
    let names: Vec<String> = match (&a.model, a.all) {
        (Some(n), false) => vec![n.clone()],
        (None, true) => models::registry().iter().map(|m| m.name.to_string()).collect(),
        _ => return Err(usage("give --model NAME or --all")),
    };
    if a.all && (!a.param.is_empty() || !a.params.is_empty()) {
        return Err(usage("--param cannot be combined with --all"));
    }
    let specs = names.iter().map(|n| spec_from(n, &a.param, &a.params)).collect::<Result<Vec<_>, _>>()?;
    let mut reports = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| scope.spawn(move || models::build(spec).map(|m| models::validate(&m))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("validation thread panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    reports.sort_by(|x, y| x.model.cmp(&y.model));
    let passed = reports.iter().all(|r| r.passed);
    emit_json(a.out.as_deref(), &json!({"passed": passed, "models": reports}))?;
    Ok(if passed { 0 } else { 1 })
}
