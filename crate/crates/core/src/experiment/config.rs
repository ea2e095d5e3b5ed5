//! Experiment configuration in TOML.
//!
//! ```toml
//! task = "closed_loop"   # open_loop | closed_loop | steady_state | sweep | diagnostics
//! problem = "lq_coupled" # lq_coupled | econ_growth
//! horizon = 8            # or a list, e.g. [4, 5, 6]
//! steps = 20
//! x0 = [1.0]             # one state, or a list of states
//! penalty = false        # or [false, true]
//! warm_start = "shift"   # shift | cold
//! seed = 0
//! derivative_points = 100
//! turnpike_eps = []      # empty: 0.05 (1 + |(x_s, u_s)|)
//! output_dir = "out"
//!
//! [params]               # overrides of the problem parameters
//! a = 1.5
//!
//! [solver]
//! newton_tol = 1e-9
//! mode = "non_variational"
//! ```
//!
//! Grid tasks (`open_loop`, `closed_loop`) run every combination of `x0`,
//! `horizon` and `penalty`. `sweep` runs one sweep over all horizons per
//! `x0` and `penalty`. `diagnostics` evaluates the open-loop family over
//! `x0` and `horizon`, and closed-loop runs at the middle horizon.

use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::DVector;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::game::{EconGrowthParams, LqCoupledParams, ProblemParams};
use crate::io::fmt_f64;
use crate::sim::WarmStartPolicy;
use crate::solver::{Mode, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    OpenLoop,
    ClosedLoop,
    SteadyState,
    Sweep,
    Diagnostics,
}

impl Task {
    pub const NAMES: [&'static str; 5] = [
        "open_loop",
        "closed_loop",
        "steady_state",
        "sweep",
        "diagnostics",
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::OpenLoop => "open_loop",
            Task::ClosedLoop => "closed_loop",
            Task::SteadyState => "steady_state",
            Task::Sweep => "sweep",
            Task::Diagnostics => "diagnostics",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open_loop" => Some(Task::OpenLoop),
            "closed_loop" => Some(Task::ClosedLoop),
            "steady_state" => Some(Task::SteadyState),
            "sweep" => Some(Task::Sweep),
            "diagnostics" => Some(Task::Diagnostics),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub problem: ProblemParams,
    pub horizons: Vec<usize>,
    pub steps: usize,
    pub initial_states: Vec<DVector<f64>>,
    pub penalty: Vec<bool>,
    pub warm_start: WarmStartPolicy,
    /// Seeds the derivative-check points only.
    pub seed: u64,
    pub derivative_points: usize,
    pub turnpike_eps: Vec<f64>,
    pub output_dir: PathBuf,
    pub solver: SolverOptions,
}

const TOP_KEYS: [&str; 13] = [
    "task",
    "problem",
    "horizon",
    "steps",
    "x0",
    "penalty",
    "warm_start",
    "seed",
    "derivative_points",
    "turnpike_eps",
    "output_dir",
    "params",
    "solver",
];

const SOLVER_KEYS: [&str; 11] = [
    "fb_eps_start",
    "fb_eps_min",
    "fb_eps_factor",
    "fb_eps_warm",
    "newton_tol",
    "max_iter",
    "armijo_slope",
    "backtrack_ratio",
    "min_step",
    "feasibility_tol",
    "mode",
];

const LQ_KEYS: [&str; 12] = [
    "a", "b", "r", "q", "x_ref", "u_min", "u_max", "agg_min", "agg_max", "x_min", "x_max", "x0",
];

const ECON_KEYS: [&str; 8] = [
    "q", "r", "alpha", "agg_min", "agg_max", "x_min", "x_max", "x0",
];

fn nearest<'a>(key: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (strsim::levenshtein(key, c), *c))
        .min()
        .map(|(_, c)| c)
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Collects every problem instead of stopping at the first.
struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn mismatch(&mut self, key: &str, expected: &str, v: &Value) {
        self.errors.push(format!(
            "`{key}`: expected {expected}, got {} `{v}`",
            type_name(v)
        ));
    }

    fn unknown_keys(&mut self, table: &Table, prefix: &str, known: &[&str]) {
        for k in table.keys() {
            if !known.contains(&k.as_str()) {
                let hint = nearest(k, known)
                    .map_or(String::new(), |n| format!("; did you mean `{prefix}{n}`?"));
                self.errors.push(format!("unknown key `{prefix}{k}`{hint}"));
            }
        }
    }

    fn float(&mut self, key: &str, v: &Value) -> Option<f64> {
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.mismatch(key, "a number", v);
                None
            }
        }
    }

    fn count(&mut self, key: &str, v: &Value) -> Option<usize> {
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            Value::Integer(_) => {
                self.errors.push(format!("`{key}`: must be >= 0"));
                None
            }
            _ => {
                self.mismatch(key, "a nonnegative integer", v);
                None
            }
        }
    }

    fn boolean(&mut self, key: &str, v: &Value) -> Option<bool> {
        match v {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.mismatch(key, "a boolean", v);
                None
            }
        }
    }

    fn string<'v>(&mut self, key: &str, v: &'v Value) -> Option<&'v str> {
        match v {
            Value::String(s) => Some(s),
            _ => {
                self.mismatch(key, "a string", v);
                None
            }
        }
    }

    fn floats(&mut self, key: &str, v: &Value) -> Option<Vec<f64>> {
        match v {
            Value::Array(a) => a.iter().map(|x| self.float(key, x)).collect(),
            _ => {
                self.mismatch(key, "an array of numbers", v);
                None
            }
        }
    }

    fn float_rows(&mut self, key: &str, v: &Value) -> Option<Vec<Vec<f64>>> {
        match v {
            Value::Array(a) => a.iter().map(|x| self.floats(key, x)).collect(),
            _ => {
                self.mismatch(key, "an array of arrays of numbers", v);
                None
            }
        }
    }

    /// A scalar or an array of scalars.
    fn one_or_many<T>(
        &mut self,
        key: &str,
        v: &Value,
        mut each: impl FnMut(&mut Self, &str, &Value) -> Option<T>,
    ) -> Option<Vec<T>> {
        match v {
            Value::Array(a) => a.iter().map(|x| each(self, key, x)).collect(),
            _ => each(self, key, v).map(|x| vec![x]),
        }
    }
}

fn read_solver(r: &mut Reader, t: &Table) -> SolverOptions {
    r.unknown_keys(t, "solver.", &SOLVER_KEYS);
    let mut o = SolverOptions::default();
    let set = |r: &mut Reader, name: &str, slot: &mut f64| {
        if let Some(v) = t.get(name) {
            if let Some(f) = r.float(&format!("solver.{name}"), v) {
                *slot = f;
            }
        }
    };
    set(r, "fb_eps_start", &mut o.fb_eps_start);
    set(r, "fb_eps_min", &mut o.fb_eps_min);
    set(r, "fb_eps_factor", &mut o.fb_eps_factor);
    set(r, "fb_eps_warm", &mut o.fb_eps_warm);
    set(r, "newton_tol", &mut o.newton_tol);
    set(r, "armijo_slope", &mut o.armijo_slope);
    set(r, "backtrack_ratio", &mut o.backtrack_ratio);
    set(r, "min_step", &mut o.min_step);
    set(r, "feasibility_tol", &mut o.feasibility_tol);
    if let Some(v) = t.get("max_iter") {
        if let Some(n) = r.count("solver.max_iter", v) {
            o.max_iter = n;
        }
    }
    if let Some(v) = t.get("mode") {
        if let Some(s) = r.string("solver.mode", v) {
            match Mode::parse(s) {
                Some(m) => o.mode = m,
                None => r.errors.push(format!(
                    "`solver.mode`: unknown mode `{s}`, expected `non_variational` or `variational`"
                )),
            }
        }
    }
    if let Err(e) = o.validate() {
        r.errors.push(format!("solver: {e}"));
    }
    o
}

fn read_lq(r: &mut Reader, t: &Table) -> LqCoupledParams {
    r.unknown_keys(t, "params.", &LQ_KEYS);
    let mut p = LqCoupledParams::default();
    for (key, slot) in [
        ("a", &mut p.a),
        ("x_ref", &mut p.x_ref),
        ("u_min", &mut p.u_min),
        ("u_max", &mut p.u_max),
        ("agg_min", &mut p.agg_min),
        ("agg_max", &mut p.agg_max),
        ("x_min", &mut p.x_min),
        ("x_max", &mut p.x_max),
        ("x0", &mut p.x0),
    ] {
        if let Some(f) = t
            .get(key)
            .and_then(|v| r.float(&format!("params.{key}"), v))
        {
            *slot = f;
        }
    }
    for (key, slot) in [("b", &mut p.b), ("q", &mut p.q)] {
        if let Some(f) = t
            .get(key)
            .and_then(|v| r.floats(&format!("params.{key}"), v))
        {
            *slot = f;
        }
    }
    if let Some(f) = t.get("r").and_then(|v| r.float_rows("params.r", v)) {
        p.r = f;
    }
    if let Err(e) = p.validate() {
        r.errors.push(format!("params: {e}"));
    }
    p
}

fn read_econ(r: &mut Reader, t: &Table) -> EconGrowthParams {
    r.unknown_keys(t, "params.", &ECON_KEYS);
    let mut p = EconGrowthParams::default();
    for (key, slot) in [
        ("agg_min", &mut p.agg_min),
        ("agg_max", &mut p.agg_max),
        ("x_min", &mut p.x_min),
        ("x_max", &mut p.x_max),
    ] {
        if let Some(f) = t
            .get(key)
            .and_then(|v| r.float(&format!("params.{key}"), v))
        {
            *slot = f;
        }
    }
    for (key, slot) in [
        ("q", &mut p.q),
        ("r", &mut p.r),
        ("alpha", &mut p.alpha),
        ("x0", &mut p.x0),
    ] {
        if let Some(f) = t
            .get(key)
            .and_then(|v| r.floats(&format!("params.{key}"), v))
        {
            *slot = f;
        }
    }
    if let Err(e) = p.validate() {
        r.errors.push(format!("params: {e}"));
    }
    p
}

/// Sets `path = value` in `table`, creating intermediate tables. `value` is
/// read as a TOML value and falls back to a plain string.
pub fn apply_override(table: &mut Table, assignment: &str) -> std::result::Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not of the form key=value"))?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(format!("override `{assignment}` has an empty key"));
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = path.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            other => {
                return Err(format!(
                    "override `{path}`: `{part}` is a {}, not a table",
                    type_name(other)
                ))
            }
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides, and validates. All
    /// problems found are reported together.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("invalid TOML: {e}")]))?;
        let mut errors = Vec::new();
        for o in overrides {
            if let Err(e) = apply_override(&mut table, o) {
                errors.push(e);
            }
        }
        match Self::from_table(&table) {
            Ok(c) if errors.is_empty() => Ok(c),
            Ok(_) => Err(Error::Config(errors)),
            Err(Error::Config(mut more)) => {
                errors.append(&mut more);
                Err(Error::Config(errors))
            }
            Err(e) => Err(e),
        }
    }

    pub fn from_table(t: &Table) -> Result<Self> {
        let mut r = Reader { errors: Vec::new() };
        r.unknown_keys(t, "", &TOP_KEYS);

        let task = match t.get("task") {
            None => Some(Task::ClosedLoop),
            Some(v) => {
                let names = r.one_or_many("task", v, |r, k, v| r.string(k, v).map(String::from));
                match names.as_deref() {
                    Some([one]) => match Task::parse(one) {
                        Some(task) => Some(task),
                        None => {
                            let hint = nearest(one, &Task::NAMES)
                                .map_or(String::new(), |n| format!("; did you mean `{n}`?"));
                            r.errors.push(format!("`task`: unknown task `{one}`{hint}"));
                            None
                        }
                    },
                    Some(many) => {
                        r.errors.push(format!(
                            "`task`: exactly one task is required, got {} ({})",
                            many.len(),
                            many.join(", ")
                        ));
                        None
                    }
                    None => None,
                }
            }
        };

        let name = match t.get("problem") {
            None => {
                r.errors.push(format!(
                    "`problem` is required (one of {})",
                    ProblemParams::NAMES.join(", ")
                ));
                None
            }
            Some(v) => r.string("problem", v).map(String::from),
        };
        let empty = Table::new();
        let params = match t.get("params") {
            None => &empty,
            Some(Value::Table(p)) => p,
            Some(v) => {
                r.mismatch("params", "a table", v);
                &empty
            }
        };
        let problem = match name.as_deref() {
            Some("lq_coupled") => Some(ProblemParams::LqCoupled(read_lq(&mut r, params))),
            Some("econ_growth") => Some(ProblemParams::EconGrowth(read_econ(&mut r, params))),
            Some(other) => {
                let hint = nearest(other, &ProblemParams::NAMES)
                    .map_or(String::new(), |n| format!("; did you mean `{n}`?"));
                r.errors
                    .push(format!("`problem`: unknown problem `{other}`{hint}"));
                None
            }
            None => None,
        };

        let horizons = match t.get("horizon") {
            None => vec![8],
            Some(v) => r
                .one_or_many("horizon", v, Reader::count)
                .unwrap_or_default(),
        };
        if horizons.contains(&0) {
            r.errors.push("horizon must be >= 1".to_string());
        }
        if horizons.is_empty() && t.get("horizon").is_some() && r.errors.is_empty() {
            r.errors
                .push("`horizon`: at least one horizon is required".to_string());
        }

        let steps = match t.get("steps") {
            None => 20,
            Some(v) => r.count("steps", v).unwrap_or(1),
        };
        if steps == 0 {
            r.errors.push("steps must be >= 1".to_string());
        }

        let initial_states = match (t.get("x0"), &problem) {
            (None, Some(p)) => vec![p.default_initial_state()],
            (None, None) => Vec::new(),
            (Some(v @ Value::Array(a)), _) if a.iter().all(|x| matches!(x, Value::Array(_))) => r
                .float_rows("x0", v)
                .unwrap_or_default()
                .into_iter()
                .map(DVector::from_vec)
                .collect(),
            (Some(v), _) => r
                .floats("x0", v)
                .map(|s| vec![DVector::from_vec(s)])
                .unwrap_or_default(),
        };
        if t.get("x0").is_some() && initial_states.is_empty() && r.errors.is_empty() {
            r.errors
                .push("`x0`: at least one initial state is required".to_string());
        }
        if let Some(p) = &problem {
            let n_x = p.default_initial_state().len();
            for (i, x) in initial_states.iter().enumerate() {
                if x.len() != n_x {
                    r.errors.push(format!(
                        "`x0`: state {i} has {} entries, the problem has {n_x}",
                        x.len()
                    ));
                }
            }
        }

        let penalty = match t.get("penalty") {
            None => vec![false],
            Some(v) => r
                .one_or_many("penalty", v, Reader::boolean)
                .unwrap_or_default(),
        };
        let warm_start = match t.get("warm_start") {
            None => WarmStartPolicy::default(),
            Some(v) => match r.string("warm_start", v) {
                Some(s) => WarmStartPolicy::parse(s).unwrap_or_else(|| {
                    r.errors.push(format!(
                        "`warm_start`: unknown policy `{s}`, expected `shift` or `cold`"
                    ));
                    WarmStartPolicy::default()
                }),
                None => WarmStartPolicy::default(),
            },
        };
        let seed = match t.get("seed") {
            None => 0,
            Some(v) => r.count("seed", v).unwrap_or(0) as u64,
        };
        let derivative_points = match t.get("derivative_points") {
            None => 100,
            Some(v) => r.count("derivative_points", v).unwrap_or(0),
        };
        let turnpike_eps = match t.get("turnpike_eps") {
            None => Vec::new(),
            Some(v) => r
                .one_or_many("turnpike_eps", v, Reader::float)
                .unwrap_or_default(),
        };
        if turnpike_eps.iter().any(|e| !(*e > 0.0)) {
            r.errors
                .push("`turnpike_eps`: every radius must be > 0".to_string());
        }
        let output_dir = match t.get("output_dir") {
            None => PathBuf::from("out"),
            Some(v) => r
                .string("output_dir", v)
                .map_or_else(|| PathBuf::from("out"), PathBuf::from),
        };
        let solver = match t.get("solver") {
            None => SolverOptions::default(),
            Some(Value::Table(s)) => read_solver(&mut r, s),
            Some(v) => {
                r.mismatch("solver", "a table", v);
                SolverOptions::default()
            }
        };

        match (task, problem) {
            (Some(task), Some(problem)) if r.errors.is_empty() => Ok(Self {
                task,
                problem,
                horizons,
                steps,
                initial_states,
                penalty,
                warm_start,
                seed,
                derivative_points,
                turnpike_eps,
                output_dir,
                solver,
            }),
            _ => Err(Error::Config(r.errors)),
        }
    }

    /// Canonical TOML with every field spelled out; parsing it gives back
    /// the same config.
    pub fn to_toml(&self) -> String {
        let floats = |v: &[f64]| {
            format!(
                "[{}]",
                v.iter()
                    .map(|x| toml_float(*x))
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        };
        let mut s = String::new();
        let _ = writeln!(s, "task = \"{}\"", self.task.as_str());
        let _ = writeln!(s, "problem = \"{}\"", self.problem.name());
        let _ = writeln!(
            s,
            "horizon = [{}]",
            self.horizons
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        );
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(
            s,
            "x0 = [{}]",
            self.initial_states
                .iter()
                .map(|x| floats(x.as_slice()))
                .collect::<Vec<_>>()
                .join(", ")
        );
        let _ = writeln!(
            s,
            "penalty = [{}]",
            self.penalty
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        );
        let _ = writeln!(s, "warm_start = \"{}\"", self.warm_start.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "derivative_points = {}", self.derivative_points);
        let _ = writeln!(s, "turnpike_eps = {}", floats(&self.turnpike_eps));
        let _ = writeln!(
            s,
            "output_dir = {}",
            Value::String(self.output_dir.to_string_lossy().into_owned())
        );

        let _ = writeln!(s, "\n[params]");
        match &self.problem {
            ProblemParams::LqCoupled(p) => {
                let _ = writeln!(s, "a = {}", toml_float(p.a));
                let _ = writeln!(s, "b = {}", floats(&p.b));
                let _ = writeln!(
                    s,
                    "r = [{}]",
                    p.r.iter()
                        .map(|row| floats(row))
                        .collect::<Vec<_>>()
                        .join(", ")
                );
                let _ = writeln!(s, "q = {}", floats(&p.q));
                for (k, v) in [
                    ("x_ref", p.x_ref),
                    ("u_min", p.u_min),
                    ("u_max", p.u_max),
                    ("agg_min", p.agg_min),
                    ("agg_max", p.agg_max),
                    ("x_min", p.x_min),
                    ("x_max", p.x_max),
                    ("x0", p.x0),
                ] {
                    let _ = writeln!(s, "{k} = {}", toml_float(v));
                }
            }
            ProblemParams::EconGrowth(p) => {
                let _ = writeln!(s, "q = {}", floats(&p.q));
                let _ = writeln!(s, "r = {}", floats(&p.r));
                let _ = writeln!(s, "alpha = {}", floats(&p.alpha));
                for (k, v) in [
                    ("agg_min", p.agg_min),
                    ("agg_max", p.agg_max),
                    ("x_min", p.x_min),
                    ("x_max", p.x_max),
                ] {
                    let _ = writeln!(s, "{k} = {}", toml_float(v));
                }
                let _ = writeln!(s, "x0 = {}", floats(&p.x0));
            }
        }

        let o = &self.solver;
        let _ = writeln!(s, "\n[solver]");
        for (k, v) in [
            ("fb_eps_start", o.fb_eps_start),
            ("fb_eps_min", o.fb_eps_min),
            ("fb_eps_factor", o.fb_eps_factor),
            ("fb_eps_warm", o.fb_eps_warm),
            ("newton_tol", o.newton_tol),
            ("armijo_slope", o.armijo_slope),
            ("backtrack_ratio", o.backtrack_ratio),
            ("min_step", o.min_step),
            ("feasibility_tol", o.feasibility_tol),
        ] {
            let _ = writeln!(s, "{k} = {}", toml_float(v));
        }
        let _ = writeln!(s, "max_iter = {}", o.max_iter);
        let _ = writeln!(s, "mode = \"{}\"", o.mode.as_str());
        s
    }
}

/// Shortest round-trip float in TOML syntax.
fn toml_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        fmt_f64(v)
    }
}
