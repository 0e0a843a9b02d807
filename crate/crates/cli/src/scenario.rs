//! Scenario files: flat TOML with dotted keys, validated in one pass so that
//! every problem is reported together with its field path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use fpmv_core::coeffs::{CoefficientSet, Mode, RegularizedSet};
use fpmv_core::evolve::TestFunction;
use fpmv_core::expr::{self, Point, Signature};
use fpmv_core::grid::{Advection, Boundary, DensityField, Grid, Scheme};
use fpmv_core::resolvent::ResolventParams;
use fpmv_core::sde::AmplitudeConvention;
use toml::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ValidationError {
    pub errors: Vec<FieldError>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} invalid field(s)", self.errors.len())?;
        for e in &self.errors {
            write!(f, "\n  {}: {}", e.path, e.reason)?;
        }
        Ok(())
    }
}

impl ValidationError {
    pub fn mentions(&self, path: &str) -> bool {
        self.errors.iter().any(|e| e.path == path)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub lambdas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub seed: u64,
    pub convention: AmplitudeConvention,
    pub record_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesesConfig {
    pub samples: usize,
    pub seed: u64,
    pub u_max: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub grid: Grid,
    pub coefficients: CoefficientSet,
    pub u0_source: String,
    /// Initial density sampled at cell centers and normalized to mass 1.
    pub u0: DensityField,
    pub t_final: f64,
    pub n_steps: usize,
    /// Viscosity list, decreasing; degenerate runs use its last entry.
    pub viscosity: Vec<f64>,
    pub mollifier: Option<(f64, usize)>,
    pub resolvent: ResolventParams,
    pub suite: SuiteConfig,
    pub expcheck: Vec<usize>,
    pub sde: SdeConfig,
    pub hypotheses: HypothesesConfig,
    pub test_functions: Vec<TestFunction>,
    pub output_dir: PathBuf,
}

impl Scenario {
    /// Coefficients as used by single runs: the smallest viscosity in
    /// degenerate mode, the mollifier when configured.
    pub fn regularized(&self) -> RegularizedSet {
        let mut set = RegularizedSet::plain(self.coefficients.clone());
        if self.coefficients.mode() == Mode::DegenerateXIndependent {
            let eps = *self.viscosity.last().expect("validated nonempty");
            set = set.with_viscosity(eps).expect("validated positive");
        }
        if let Some((eps, nodes)) = self.mollifier {
            set = set.with_mollifier(eps, nodes).expect("validated mollifier");
        }
        set
    }

    /// Same box with `n` cells per axis and `n_steps` time steps.
    pub fn with_resolution(&self, n: usize, n_steps: usize) -> Result<Scenario, ValidationError> {
        let mut s = self.clone();
        s.grid = Grid::new(self.dim, self.grid.half_width(), n).map_err(|e| single("grid.n", e.to_string()))?;
        s.u0 = initial_density(&self.u0_source, s.grid).map_err(|r| single("initial.u0", r))?;
        s.resolvent.lambda *= self.n_steps as f64 / n_steps as f64;
        s.n_steps = n_steps;
        Ok(s)
    }

    /// Same scenario on a box `factor` times wider with the same cell size.
    pub fn widened(&self, factor: usize) -> Result<Scenario, ValidationError> {
        let mut s = self.clone();
        let l = self.grid.half_width() * factor as f64;
        let n = self.grid.cells_per_axis() * factor;
        s.grid = Grid::new(self.dim, l, n).map_err(|e| single("grid.L", e.to_string()))?;
        s.u0 = initial_density(&self.u0_source, s.grid).map_err(|r| single("initial.u0", r))?;
        Ok(s)
    }
}

fn single(path: &str, reason: impl Into<String>) -> ValidationError {
    ValidationError { errors: vec![FieldError { path: path.into(), reason: reason.into() }] }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Dotted-key view with typed accessors that record every failure.
struct Fields {
    values: BTreeMap<String, Value>,
    used: BTreeSet<String>,
    errors: Vec<FieldError>,
}

impl Fields {
    fn fail(&mut self, path: &str, reason: impl Into<String>) {
        self.errors.push(FieldError { path: path.to_string(), reason: reason.into() });
    }

    fn get(&mut self, key: &str) -> Option<Value> {
        self.used.insert(key.to_string());
        self.values.get(key).cloned()
    }

    fn number(&mut self, key: &str) -> Option<f64> {
        match self.get(key)? {
            Value::Float(x) => Some(x),
            Value::Integer(i) => Some(i as f64),
            _ => {
                self.fail(key, "expected a number");
                None
            }
        }
    }

    fn float(&mut self, key: &str, default: Option<f64>) -> f64 {
        match self.number(key).or(default) {
            Some(x) if x.is_finite() => x,
            Some(_) => {
                self.fail(key, "must be finite");
                f64::NAN
            }
            None => {
                if self.values.contains_key(key) {
                    f64::NAN
                } else {
                    self.fail(key, "required");
                    f64::NAN
                }
            }
        }
    }

    fn positive(&mut self, key: &str, default: Option<f64>) -> f64 {
        let x = self.float(key, default);
        if x.is_finite() && x <= 0.0 {
            self.fail(key, "must be positive");
        }
        x
    }

    fn integer(&mut self, key: &str, default: Option<u64>) -> u64 {
        match self.get(key) {
            Some(Value::Integer(i)) if i >= 0 => i as u64,
            Some(_) => {
                self.fail(key, "expected a nonnegative integer");
                0
            }
            None => default.unwrap_or_else(|| {
                self.fail(key, "required");
                0
            }),
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.get(key)? {
            Value::String(s) => Some(s),
            _ => {
                self.fail(key, "expected a string");
                None
            }
        }
    }

    fn float_list(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        match self.get(key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => {
                let parsed: Option<Vec<f64>> = items
                    .iter()
                    .map(|v| match v {
                        Value::Float(x) => Some(*x),
                        Value::Integer(i) => Some(*i as f64),
                        _ => None,
                    })
                    .collect();
                parsed.unwrap_or_else(|| {
                    self.fail(key, "expected a list of numbers");
                    Vec::new()
                })
            }
            Some(_) => {
                self.fail(key, "expected a list");
                Vec::new()
            }
        }
    }

    fn integer_list(&mut self, key: &str, default: &[usize]) -> Vec<usize> {
        match self.get(key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => {
                let parsed: Option<Vec<usize>> = items
                    .iter()
                    .map(|v| match v {
                        Value::Integer(i) if *i > 0 => Some(*i as usize),
                        _ => None,
                    })
                    .collect();
                parsed.unwrap_or_else(|| {
                    self.fail(key, "expected a list of positive integers");
                    Vec::new()
                })
            }
            Some(_) => {
                self.fail(key, "expected a list");
                Vec::new()
            }
        }
    }

    fn unknown_keys(&mut self) {
        let unknown: Vec<String> = self.values.keys().filter(|k| !self.used.contains(*k)).cloned().collect();
        for k in unknown {
            self.fail(&k, "unknown key");
        }
    }
}

fn initial_density(src: &str, grid: Grid) -> Result<DensityField, String> {
    let e = expr::parse(src, Signature::coefficient(grid.dim())).map_err(|e| e.to_string())?;
    if e.references_u() {
        return Err("the initial density may depend on x only".into());
    }
    let mut bad = None;
    let f = DensityField::from_fn(grid, |x| match e.eval(&Point::new(x, 0.0)) {
        Ok(v) => v,
        Err(err) => {
            bad.get_or_insert(err.to_string());
            0.0
        }
    });
    if let Some(msg) = bad {
        return Err(msg);
    }
    let mut f = f.map_err(|e| e.to_string())?;
    if f.min() < 0.0 {
        return Err(format!("negative on the grid (min {:e})", f.min()));
    }
    if f.mass() <= 0.0 {
        return Err("zero mass on the grid".into());
    }
    f.normalize();
    Ok(f)
}

fn parse_mode(s: &str) -> Option<Mode> {
    match s {
        "nondegenerate" => Some(Mode::Nondegenerate),
        "degenerate" => Some(Mode::DegenerateXIndependent),
        _ => None,
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
    let mut s = parse_scenario(&text, path)?;
    if s.name.is_empty() {
        s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(s)
}

/// Parse scenario text; `origin` names the file in messages.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<Scenario, ScenarioError> {
    let table: toml::Table =
        text.parse().map_err(|e: toml::de::Error| ScenarioError::Syntax { path: origin.into(), message: e.to_string() })?;
    let mut values = BTreeMap::new();
    flatten("", &table, &mut values);
    let mut f = Fields { values, used: BTreeSet::new(), errors: Vec::new() };

    let name = f.string("name").unwrap_or_default();
    let dim = f.integer("dim", None) as usize;
    if !(1..=3).contains(&dim) {
        f.fail("dim", "must be 1, 2 or 3");
    }
    let d = dim.clamp(1, 3);
    let half_width = f.positive("grid.L", None);
    let n = f.integer("grid.n", None) as usize;
    let grid = match Grid::new(d, half_width, n) {
        Ok(g) => Some(g),
        Err(e) => {
            if half_width.is_finite() {
                f.fail("grid.n", e.to_string());
            }
            None
        }
    };

    let mode_src = f.string("coeff.mode").unwrap_or_else(|| "nondegenerate".into());
    let mode = parse_mode(&mode_src).unwrap_or_else(|| {
        f.fail("coeff.mode", "expected \"nondegenerate\" or \"degenerate\"");
        Mode::Nondegenerate
    });
    let gamma = match (mode, f.number("coeff.gamma")) {
        (Mode::Nondegenerate, None) => {
            if !f.values.contains_key("coeff.gamma") {
                f.fail("coeff.gamma", "required in nondegenerate mode");
            }
            f64::NAN
        }
        (Mode::Nondegenerate, Some(g)) => {
            if !(g > 0.0) {
                f.fail("coeff.gamma", "must be positive");
            }
            g
        }
        (Mode::DegenerateXIndependent, g) => g.unwrap_or(0.0),
    };

    // Upper triangle of `a`; lower entries must repeat their partner.
    let mut a_upper = Vec::new();
    for i in 1..=d {
        for j in i..=d {
            let upper = f.string(&format!("coeff.a.{i}.{j}"));
            let lower = if i == j { None } else { f.string(&format!("coeff.a.{j}.{i}")) };
            let src = match (i == j, upper, lower) {
                (true, Some(s), _) => s,
                (true, None, _) => {
                    f.fail(&format!("coeff.a[{i}][{i}]"), "required");
                    "0".into()
                }
                (false, None, None) => "0".into(),
                (false, Some(s), None) => {
                    f.fail(&format!("coeff.a[{j}][{i}]"), format!("missing symmetry partner of a[{i}][{j}]"));
                    s
                }
                (false, None, Some(s)) => {
                    f.fail(&format!("coeff.a[{i}][{j}]"), format!("missing symmetry partner of a[{j}][{i}]"));
                    s
                }
                (false, Some(s), Some(t)) => {
                    let sig = Signature::coefficient(d);
                    match (expr::parse(&s, sig), expr::parse(&t, sig)) {
                        (Ok(x), Ok(y)) if x != y => {
                            f.fail(&format!("coeff.a[{j}][{i}]"), format!("differs from a[{i}][{j}]"));
                        }
                        _ => {}
                    }
                    s
                }
            };
            a_upper.push((format!("coeff.a[{i}][{j}]"), src));
        }
    }
    let mut b = Vec::new();
    for i in 1..=d {
        let key = format!("coeff.b.{i}");
        let src = f.string(&key).unwrap_or_else(|| {
            f.fail(&format!("coeff.b[{i}]"), "required");
            "0".into()
        });
        b.push((format!("coeff.b[{i}]"), src));
    }
    let sig = Signature::coefficient(d);
    let mut parsed_ok = true;
    for (path, src) in a_upper.iter().chain(&b) {
        if let Err(e) = expr::parse(src, sig) {
            f.fail(path, e.to_string());
            parsed_ok = false;
        }
    }
    let b_inf = f.number("coeff.b_inf");
    let c_inf = f.number("coeff.c_inf");
    for (key, v) in [("coeff.b_inf", b_inf), ("coeff.c_inf", c_inf)] {
        if v.is_some_and(|x| !(x >= 0.0 && x.is_finite())) {
            f.fail(key, "must be a finite nonnegative number");
        }
    }
    let coefficients = if parsed_ok && grid.is_some() && (gamma.is_finite() || mode != Mode::Nondegenerate) {
        let a_src: Vec<&str> = a_upper.iter().map(|(_, s)| s.as_str()).collect();
        let b_src: Vec<&str> = b.iter().map(|(_, s)| s.as_str()).collect();
        match CoefficientSet::parse(d, &a_src, &b_src, mode, gamma) {
            Ok(c) => Some(c.with_bounds(b_inf, c_inf)),
            Err(e) => {
                f.fail("coeff", e.to_string());
                None
            }
        }
    } else {
        None
    };
    if let Some(c) = &coefficients {
        if let Err(e) = c.bounds() {
            f.fail("coeff.b_inf", format!("{e}; declare coeff.b_inf and coeff.c_inf"));
        }
    }

    let u0_source = f.string("initial.u0").unwrap_or_else(|| {
        f.fail("initial.u0", "required");
        String::new()
    });
    let u0 = match grid {
        Some(g) if !u0_source.is_empty() => match initial_density(&u0_source, g) {
            Ok(u) => Some(u),
            Err(r) => {
                f.fail("initial.u0", r);
                None
            }
        },
        _ => None,
    };

    let t_final = f.positive("time.T", None);
    let n_steps = f.integer("time.n_steps", None) as usize;
    if n_steps == 0 && f.values.contains_key("time.n_steps") {
        f.fail("time.n_steps", "must be positive");
    }

    let viscosity = f.float_list("regularization.viscosity", &[]);
    if viscosity.iter().any(|&e| !(e > 0.0)) {
        f.fail("regularization.viscosity", "entries must be positive");
    }
    if viscosity.windows(2).any(|w| w[1] >= w[0]) {
        f.fail("regularization.viscosity", "must be strictly decreasing");
    }
    if mode == Mode::DegenerateXIndependent && viscosity.is_empty() {
        f.fail("regularization.viscosity", "required in degenerate mode");
    }
    let mollifier = match f.number("regularization.mollifier_eps") {
        None => None,
        Some(eps) => {
            let nodes = f.integer("regularization.mollifier_nodes", Some(6)) as usize;
            if !(eps > 0.0) {
                f.fail("regularization.mollifier_eps", "must be positive");
            }
            if nodes < 3 {
                f.fail("regularization.mollifier_nodes", "at least 3");
            }
            if mode != Mode::Nondegenerate {
                f.fail("regularization.mollifier_eps", "only available in nondegenerate mode");
            }
            Some((eps, nodes))
        }
    };

    let defaults = ResolventParams::default();
    let lambda = f.positive("resolvent.lambda", Some(t_final / n_steps.max(1) as f64));
    let outer_tol = f.number("resolvent.tol");
    if outer_tol.is_some_and(|t| !(t > 0.0)) {
        f.fail("resolvent.tol", "must be positive");
    }
    let max_outer = f.integer("resolvent.max_outer", Some(defaults.max_outer as u64)) as usize;
    let damping = f.float("resolvent.damping", Some(defaults.damping));
    if !(damping > 0.0 && damping <= 1.0) {
        f.fail("resolvent.damping", "must lie in (0, 1]");
    }
    let boundary = match f.string("resolvent.boundary").as_deref() {
        None | Some("dirichlet") => Boundary::Dirichlet,
        Some("noflux") => Boundary::NoFlux,
        Some(_) => {
            f.fail("resolvent.boundary", "expected \"dirichlet\" or \"noflux\"");
            Boundary::Dirichlet
        }
    };
    let advection = match f.string("resolvent.advection").as_deref() {
        None | Some("upwind") => Advection::Upwind,
        Some("centered") => Advection::Centered,
        Some(_) => {
            f.fail("resolvent.advection", "expected \"upwind\" or \"centered\"");
            Advection::Upwind
        }
    };
    let resolvent = ResolventParams {
        lambda,
        outer_tol,
        max_outer,
        damping,
        scheme: Scheme { boundary, advection },
        ..defaults
    };

    let suite = SuiteConfig {
        lambdas: f.float_list("suite.lambdas", &[0.01, 0.1, 1.0]),
        trials: f.integer("suite.trials", Some(50)) as usize,
        seed: f.integer("suite.seed", Some(0)),
    };
    if suite.trials < 10 {
        f.fail("suite.trials", "at least 10");
    }
    if suite.lambdas.is_empty() || suite.lambdas.iter().any(|&l| !(l > 0.0)) {
        f.fail("suite.lambdas", "must be a nonempty list of positive numbers");
    }

    let expcheck = f.integer_list("expcheck.n_list", &[16, 32, 64, 128]);
    if expcheck.len() < 3 || expcheck.windows(2).any(|w| w[1] <= w[0] || w[1] % w[0] != 0) {
        f.fail("expcheck.n_list", "needs at least 3 increasing entries, each dividing the next");
    }

    let convention = match f.string("sde.amplitude_convention").as_deref() {
        None | Some("match_fpe") => AmplitudeConvention::MatchFpe,
        Some("paper_literal") => AmplitudeConvention::PaperLiteral,
        Some(_) => {
            f.fail("sde.amplitude_convention", "expected \"match_fpe\" or \"paper_literal\"");
            AmplitudeConvention::MatchFpe
        }
    };
    let sde = SdeConfig {
        n_particles: f.integer("sde.N", Some(10_000)) as usize,
        dt: f.positive("sde.dt", Some(1e-3)),
        seed: f.integer("sde.seed", Some(0)),
        convention,
        record_every: f.integer("sde.record_every", Some(1)) as usize,
    };
    if sde.n_particles == 0 {
        f.fail("sde.N", "at least one particle");
    }
    if sde.record_every == 0 {
        f.fail("sde.record_every", "must be positive");
    }
    if sde.dt.is_finite() && t_final.is_finite() && n_steps > 0 && sde.dt > t_final / n_steps as f64 {
        f.fail("sde.dt", "must not exceed the trace step T/n_steps");
    }

    let hypotheses = HypothesesConfig {
        samples: f.integer("hypotheses.samples", Some(4000)) as usize,
        seed: f.integer("hypotheses.seed", Some(0)),
        u_max: f.positive("hypotheses.u_max", Some(u0.as_ref().map_or(1.0, |u| 1.5 * u.max()))),
    };
    if hypotheses.samples < 1000 {
        f.fail("hypotheses.samples", "at least 1000");
    }

    let mut test_functions = Vec::new();
    let phi_keys: Vec<String> = f.values.keys().filter(|k| k.starts_with("weak.phi.")).cloned().collect();
    for key in phi_keys {
        if let Some(src) = f.string(&key) {
            let label = key.trim_start_matches("weak.phi.").to_string();
            match TestFunction::parse(label, &src, d) {
                Ok(phi) => test_functions.push(phi),
                Err(e) => f.fail(&key, e.to_string()),
            }
        }
    }

    let output_dir = PathBuf::from(f.string("output.dir").unwrap_or_else(|| format!("out/{name}")));

    f.unknown_keys();
    if !f.errors.is_empty() {
        return Err(ValidationError { errors: f.errors }.into());
    }
    Ok(Scenario {
        name,
        dim: d,
        grid: grid.expect("validated"),
        coefficients: coefficients.expect("validated"),
        u0_source,
        u0: u0.expect("validated"),
        t_final,
        n_steps,
        viscosity,
        mollifier,
        resolvent,
        suite,
        expcheck,
        sde,
        hypotheses,
        test_functions,
        output_dir,
    })
}
