//! Scenario documents: TOML parsed with spans so every violation carries a
//! field path and, when the field exists, its line and column.

use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use qtraj::numerics::{SpatialGrid, SystemConfig, TimeWindow, MIN_GRID_POINTS};
use qtraj::potentials::{PotentialSpec, TabulatedPotential, DEFAULT_QUADRATURE_NODES, MIN_QUADRATURE_NODES};
use qtraj::propagators::{GaussianParams, DEFAULT_NORM_DRIFT_BOUND};
use qtraj::zeno::DEFAULT_SIGMA_MEAS;
use serde::Serialize;
use toml_edit::{ImDocument, Item, TableLike, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Propagate,
    Bohm,
    Convergence,
    Zeno,
    Mott,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Propagate, Task::Bohm, Task::Convergence, Task::Zeno, Task::Mott];

    pub fn name(self) -> &'static str {
        match self {
            Task::Propagate => "propagate",
            Task::Bohm => "bohm",
            Task::Convergence => "convergence",
            Task::Zeno => "zeno",
            Task::Mott => "mott",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Gaussian(GaussianParams),
    /// Samples on the scenario grid, read from a `x,re,im` CSV file.
    Field(Vec<Complex64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagateKernel {
    ExactFree,
    Mehler,
    VanVleck,
    KernerSutcliffe,
    CrankNicolson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagateOptions {
    pub kernel: PropagateKernel,
    pub quadrature_nodes: usize,
    pub norm_drift_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guidance {
    Grid,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BohmOutput {
    Trajectories,
    ShortTimeLaws,
    Drift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BohmOptions {
    pub starts: Vec<f64>,
    pub guidance: Guidance,
    pub output: BohmOutput,
    pub record_every: usize,
    pub node_eps: f64,
    /// Interval lengths for the short-time law study.
    pub dt: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Kernel,
    Action,
    SingleSlice,
    TimeSlicing,
    FlowGap,
    EulerComposition,
    Continuity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    CrankNicolson,
    Mehler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentQ {
    Frozen,
    Thawed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceOptions {
    pub study: Study,
    pub reference: Reference,
    pub reference_steps: usize,
    pub quadrature_nodes: usize,
    pub norm_drift_bound: f64,
    pub dt: Vec<f64>,
    pub slices: Vec<usize>,
    pub points: Vec<usize>,
    pub x: f64,
    pub x0: f64,
    pub start_x: f64,
    /// `None` launches with the guidance momentum of the initial packet.
    pub start_p: Option<f64>,
    pub flow_steps: usize,
    pub quantum: SegmentQ,
    pub steps_per_point: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZenoMode {
    Flow,
    Wavefunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZenoOptions {
    pub intervals: Vec<usize>,
    pub sigma_meas: Vec<f64>,
    pub mode: ZenoMode,
    pub segment_q: SegmentQ,
    pub substeps: usize,
    pub x0: Vec<f64>,
    pub p0: Vec<f64>,
    pub node_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MottOptions {
    pub intervals: usize,
    pub sigma_meas: f64,
    pub speed: f64,
    pub tracks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskOptions {
    Propagate(PropagateOptions),
    Bohm(BohmOptions),
    Convergence(ConvergenceOptions),
    Zeno(ZenoOptions),
    Mott(MottOptions),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub task: Task,
    pub seed: Option<u64>,
    pub system: SystemConfig,
    pub potential: PotentialSpec,
    pub initial: Option<InitialState>,
    pub grid: Option<SpatialGrid>,
    pub time: Option<TimeWindow>,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub options: TaskOptions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)?;
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, " (line {l}, column {c})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Syntax { message: String, line: usize, column: usize },
    Schema(Vec<Violation>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax { message, line, column } => write!(f, "syntax error at line {line}, column {column}: {message}"),
            ConfigError::Schema(v) => {
                write!(f, "{} schema violation(s)", v.len())?;
                for v in v {
                    write!(f, "\n  {v}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line and column of a byte offset.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let head = &src[..offset.min(src.len())];
    let line = head.matches('\n').count() + 1;
    let column = head.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

type Section<'a> = Option<(&'a dyn TableLike, Option<usize>)>;

struct Reader<'a> {
    src: &'a str,
    base_dir: PathBuf,
    violations: Vec<Violation>,
}

impl<'a> Reader<'a> {
    fn push(&mut self, path: &str, message: impl Into<String>, span: Option<usize>) {
        let (line, column) = match span.map(|s| line_col(self.src, s)) {
            Some((l, c)) => (Some(l), Some(c)),
            None => (None, None),
        };
        self.violations.push(Violation { path: path.to_string(), message: message.into(), line, column });
    }

    fn section(&mut self, root: &'a dyn TableLike, name: &str, allowed: &[&str]) -> Section<'a> {
        let item = root.get(name)?;
        let Some(table) = item.as_table_like() else {
            self.push(name, "must be a table", item.span().map(|s| s.start));
            return None;
        };
        for (key, value) in table.iter() {
            if !allowed.contains(&key) {
                self.push(&format!("{name}.{key}"), format!("unknown field; expected one of {}", allowed.join(", ")), value.span().map(|s| s.start));
            }
        }
        Some((table, item.span().map(|s| s.start)))
    }

    fn item(section: Section<'a>, key: &str) -> Option<&'a Item> {
        section.and_then(|(t, _)| t.get(key))
    }

    fn number(&mut self, path: &str, value: &Value) -> Option<f64> {
        let v = match value {
            Value::Float(f) => *f.value(),
            Value::Integer(i) => *i.value() as f64,
            _ => {
                self.push(path, "must be a number", value.span().map(|s| s.start));
                return None;
            }
        };
        if !v.is_finite() {
            self.push(path, "must be finite", value.span().map(|s| s.start));
            return None;
        }
        Some(v)
    }

    fn value(item: &Item) -> Option<&Value> {
        item.as_value()
    }

    /// Float field; `check` returns the violated constraint, if any.
    fn f64(&mut self, section: Section<'a>, path: &str, key: &str, default: Option<f64>, check: fn(f64) -> Option<&'static str>) -> Option<f64> {
        let full = format!("{path}.{key}");
        let Some(item) = Self::item(section, key) else {
            if default.is_none() {
                self.push(&full, "required field is missing", section.and_then(|s| s.1));
            }
            return default;
        };
        let Some(value) = Self::value(item) else {
            self.push(&full, "must be a number", item.span().map(|s| s.start));
            return None;
        };
        let v = self.number(&full, value)?;
        if let Some(msg) = check(v) {
            self.push(&full, msg, value.span().map(|s| s.start));
            return None;
        }
        Some(v)
    }

    fn usize(&mut self, section: Section<'a>, path: &str, key: &str, default: Option<usize>, min: usize) -> Option<usize> {
        let full = format!("{path}.{key}");
        let Some(item) = Self::item(section, key) else {
            if default.is_none() {
                self.push(&full, "required field is missing", section.and_then(|s| s.1));
            }
            return default;
        };
        self.integer(&full, item.as_value(), item.span().map(|s| s.start), min)
    }

    fn integer(&mut self, path: &str, value: Option<&Value>, span: Option<usize>, min: usize) -> Option<usize> {
        match value.and_then(|v| v.as_integer()) {
            Some(i) if i >= min as i64 => Some(i as usize),
            Some(_) => {
                self.push(path, format!("must be ≥ {min}"), span);
                None
            }
            None => {
                self.push(path, "must be an integer", span);
                None
            }
        }
    }

    fn string(&mut self, section: Section<'a>, path: &str, key: &str) -> Option<(&'a str, Option<usize>)> {
        let item = Self::item(section, key)?;
        match item.as_str() {
            Some(s) => Some((s, item.span().map(|s| s.start))),
            None => {
                self.push(&format!("{path}.{key}"), "must be a string", item.span().map(|s| s.start));
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, section: Section<'a>, path: &str, key: &str, variants: &[(&str, T)], default: Option<T>) -> Option<T> {
        let full = format!("{path}.{key}");
        let Some((s, span)) = self.string(section, path, key) else {
            if Self::item(section, key).is_none() && default.is_none() {
                self.push(&full, "required field is missing", section.and_then(|s| s.1));
            }
            return if Self::item(section, key).is_none() { default } else { None };
        };
        match variants.iter().find(|(name, _)| *name == s) {
            Some((_, v)) => Some(*v),
            None => {
                let names: Vec<&str> = variants.iter().map(|(n, _)| *n).collect();
                self.push(&full, format!("unknown variant \"{s}\"; expected one of {}", names.join(", ")), span);
                None
            }
        }
    }

    fn list<T>(
        &mut self,
        section: Section<'a>,
        path: &str,
        key: &str,
        default: Option<Vec<T>>,
        mut each: impl FnMut(&mut Self, &str, &Value) -> Option<T>,
    ) -> Option<Vec<T>> {
        let full = format!("{path}.{key}");
        let Some(item) = Self::item(section, key) else {
            if default.is_none() {
                self.push(&full, "required field is missing", section.and_then(|s| s.1));
            }
            return default;
        };
        let Some(array) = item.as_array() else {
            self.push(&full, "must be an array", item.span().map(|s| s.start));
            return None;
        };
        if array.is_empty() {
            self.push(&full, "must not be empty", item.span().map(|s| s.start));
            return None;
        }
        let mut out = Vec::with_capacity(array.len());
        let mut ok = true;
        for (k, v) in array.iter().enumerate() {
            match each(self, &format!("{full}[{k}]"), v) {
                Some(x) => out.push(x),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn f64_list(&mut self, section: Section<'a>, path: &str, key: &str, default: Option<Vec<f64>>, check: fn(f64) -> Option<&'static str>) -> Option<Vec<f64>> {
        self.list(section, path, key, default, |r, p, v| {
            let x = r.number(p, v)?;
            match check(x) {
                Some(msg) => {
                    r.push(p, msg, v.span().map(|s| s.start));
                    None
                }
                None => Some(x),
            }
        })
    }

    fn usize_list(&mut self, section: Section<'a>, path: &str, key: &str, default: Option<Vec<usize>>, min: usize) -> Option<Vec<usize>> {
        self.list(section, path, key, default, |r, p, v| r.integer(p, Some(v), v.span().map(|s| s.start), min))
    }

    fn file(&mut self, section: Section<'a>, path: &str, key: &str) -> Option<(PathBuf, Option<usize>)> {
        let (s, span) = self.string(section, path, key)?;
        Some((self.base_dir.join(s), span))
    }

    fn require(&mut self, section: Section<'a>, path: &str, why: &str) -> bool {
        if section.is_none() {
            self.push(path, format!("section is required {why}"), None);
            return false;
        }
        true
    }
}

fn positive(v: f64) -> Option<&'static str> {
    (v <= 0.0).then_some("must be > 0")
}

fn nonzero(v: f64) -> Option<&'static str> {
    (v == 0.0).then_some("must be non-zero")
}

fn any(_: f64) -> Option<&'static str> {
    None
}

fn read_csv_columns(path: &Path, columns: usize) -> std::result::Result<Vec<Vec<f64>>, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if record.len() != columns {
            return Err(format!("row {} has {} columns, expected {columns}", k + 1, record.len()));
        }
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", k + 1)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(format!("row {} holds a non-finite value", k + 1));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Checks that `xs` is uniform and returns the grid it spans.
fn uniform_grid(xs: &[f64]) -> std::result::Result<SpatialGrid, String> {
    let n = xs.len();
    if n < MIN_GRID_POINTS {
        return Err(format!("needs at least {MIN_GRID_POINTS} rows, got {n}"));
    }
    let grid = SpatialGrid::new(xs[0], xs[n - 1], n).map_err(|e| e.to_string())?;
    let tol = 1e-9 * (1.0 + xs[0].abs().max(xs[n - 1].abs()));
    match xs.iter().enumerate().find(|(k, x)| (grid.x(*k) - **x).abs() > tol) {
        Some((k, _)) => Err(format!("x column is not uniform at row {}", k + 1)),
        None => Ok(grid),
    }
}

const TOP_LEVEL: [&str; 12] = [
    "task", "seed", "system", "potential", "initial", "grid", "time", "output", "propagate", "bohm", "convergence", "zeno",
];

/// Parses a scenario document; relative file paths resolve against the
/// working directory.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    parse_config_in(text, Path::new("."))
}

/// Parses a scenario file; relative paths inside resolve against its directory.
pub fn parse_config_file(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigError::Schema(vec![Violation { path: path.display().to_string(), message: e.to_string(), line: None, column: None }])
    })?;
    parse_config_in(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse_config_in(text: &str, base_dir: &Path) -> Result<ScenarioConfig, ConfigError> {
    let doc = ImDocument::parse(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Syntax { message: e.message().to_string(), line, column }
    })?;
    let root: &dyn TableLike = doc.as_table();
    let mut r = Reader { src: text, base_dir: base_dir.to_path_buf(), violations: Vec::new() };

    for (key, item) in root.iter() {
        if !TOP_LEVEL.contains(&key) && key != "mott" {
            r.push(key, format!("unknown field; expected one of {}, mott", TOP_LEVEL.join(", ")), item.span().map(|s| s.start));
        }
    }
    let top: Section = Some((root, None));
    let tasks: Vec<(&str, Task)> = Task::ALL.iter().map(|t| (t.name(), *t)).collect();
    let task = r.choice(top, "", "task", &tasks, None);
    let seed = match root.get("seed") {
        None => None,
        Some(item) => match item.as_integer() {
            Some(s) if s >= 0 => Some(s as u64),
            _ => {
                r.push("seed", "must be a non-negative integer", item.span().map(|s| s.start));
                None
            }
        },
    };
    // The empty-path helpers produce ".task"; strip the dot for top-level keys.
    for v in &mut r.violations {
        if let Some(rest) = v.path.strip_prefix('.') {
            v.path = rest.to_string();
        }
    }

    let sys = r.section(root, "system", &["hbar", "masses"]);
    let hbar = r.f64(sys, "system", "hbar", Some(1.0), positive);
    let masses = r.f64_list(sys, "system", "masses", Some(vec![1.0]), positive);
    let system = match (hbar, masses) {
        (Some(h), Some(m)) => SystemConfig::new(h, m).map_err(|e| r.push("system", e.to_string(), None)).ok(),
        _ => None,
    };
    let dof = system.as_ref().map(|s| s.dof());

    let grid_sec = r.section(root, "grid", &["x_min", "x_max", "points"]);
    let grid = grid_sec.and_then(|_| {
        let lo = r.f64(grid_sec, "grid", "x_min", None, any);
        let hi = r.f64(grid_sec, "grid", "x_max", None, any);
        let n = r.usize(grid_sec, "grid", "points", None, MIN_GRID_POINTS);
        match (lo, hi, n) {
            (Some(lo), Some(hi), Some(n)) if lo < hi => SpatialGrid::new(lo, hi, n).map_err(|e| r.push("grid", e.to_string(), grid_sec.and_then(|s| s.1))).ok(),
            (Some(lo), Some(hi), _) if lo >= hi => {
                r.push("grid.x_max", "must be greater than grid.x_min", Reader::item(grid_sec, "x_max").and_then(|i| i.span().map(|s| s.start)));
                None
            }
            _ => None,
        }
    });

    let time_sec = r.section(root, "time", &["t0", "t", "steps"]);
    let time = time_sec.and_then(|_| {
        let t0 = r.f64(time_sec, "time", "t0", Some(0.0), any);
        let t = r.f64(time_sec, "time", "t", None, any);
        let steps = r.usize(time_sec, "time", "steps", Some(1), 1);
        match (t0, t, steps) {
            (Some(t0), Some(t), Some(n)) => {
                if t == t0 {
                    r.push("time.t", "must differ from time.t0", Reader::item(time_sec, "t").and_then(|i| i.span().map(|s| s.start)));
                    None
                } else {
                    TimeWindow::new(t0, t, n).map_err(|e| r.push("time", e.to_string(), None)).ok()
                }
            }
            _ => None,
        }
    });

    let pot = r.section(root, "potential", &["kind", "mass", "omega", "coefficient", "file"]);
    let kinds = [("free", 0u8), ("harmonic", 1), ("quartic", 2), ("tabulated", 3)];
    let potential = match r.choice(pot, "potential", "kind", &kinds, Some(0)) {
        Some(0) => Some(PotentialSpec::Free),
        Some(1) => {
            let m = r.f64(pot, "potential", "mass", Some(1.0), positive);
            let w = r.f64(pot, "potential", "omega", None, positive);
            match (m, w) {
                (Some(m), Some(w)) => PotentialSpec::harmonic(m, w).ok(),
                _ => None,
            }
        }
        Some(2) => r.f64(pot, "potential", "coefficient", None, any).and_then(|c| PotentialSpec::quartic(c).ok()),
        Some(3) => match r.file(pot, "potential", "file") {
            None => {
                if Reader::item(pot, "file").is_none() {
                    r.push("potential.file", "required field is missing", pot.and_then(|s| s.1));
                }
                None
            }
            Some((path, span)) => {
                let loaded = read_csv_columns(&path, 2).and_then(|rows| {
                    let xs: Vec<f64> = rows.iter().map(|row| row[0]).collect();
                    let grid = uniform_grid(&xs)?;
                    TabulatedPotential::new(grid, rows.iter().map(|row| row[1]).collect()).map_err(|e| e.to_string())
                });
                match loaded {
                    Ok(t) => {
                        if dof.is_some_and(|d| d != 1) {
                            r.push("potential.kind", "tabulated potentials are one-dimensional", None);
                        }
                        Some(PotentialSpec::Tabulated(t))
                    }
                    Err(e) => {
                        r.push("potential.file", format!("{}: {e}", path.display()), span);
                        None
                    }
                }
            }
        },
        _ => None,
    };

    let init = r.section(root, "initial", &["kind", "center", "momentum", "sigma", "file"]);
    let initial = init.and_then(|_| match r.choice(init, "initial", "kind", &[("gaussian", 0u8), ("file", 1)], Some(0))? {
        0 => {
            let c = r.f64(init, "initial", "center", Some(0.0), any);
            let p = r.f64(init, "initial", "momentum", Some(0.0), any);
            let s = r.f64(init, "initial", "sigma", Some(1.0), positive);
            Some(InitialState::Gaussian(GaussianParams::normalized(c?, p?, s?).ok()?))
        }
        _ => {
            let Some((path, span)) = r.file(init, "initial", "file") else {
                if Reader::item(init, "file").is_none() {
                    r.push("initial.file", "required field is missing", init.and_then(|s| s.1));
                }
                return None;
            };
            match read_csv_columns(&path, 3) {
                Ok(rows) => {
                    if let Some(g) = grid {
                        let xs: Vec<f64> = rows.iter().map(|row| row[0]).collect();
                        let matches = xs.len() == g.len() && xs.iter().enumerate().all(|(k, x)| (g.x(k) - x).abs() <= 1e-9 * (1.0 + x.abs()));
                        if !matches {
                            r.push("initial.file", format!("{}: x column does not match the scenario grid", path.display()), span);
                            return None;
                        }
                    }
                    Some(InitialState::Field(rows.iter().map(|row| Complex64::new(row[1], row[2])).collect()))
                }
                Err(e) => {
                    r.push("initial.file", format!("{}: {e}", path.display()), span);
                    None
                }
            }
        }
    });

    let out = r.section(root, "output", &["path", "format"]);
    let output_path = r.file(out, "output", "path").map(|(p, _)| p);
    let format = r.choice(out, "output", "format", &[("csv", Format::Csv), ("json", Format::Json)], Some(Format::Csv));

    let needs = |r: &mut Reader, what: &str, present: bool, why: &str| {
        if !present {
            r.push(what, format!("section is required {why}"), None);
        }
    };

    let options = task.and_then(|task| match task {
        Task::Propagate => {
            let s = r.section(root, "propagate", &["kernel", "quadrature_nodes", "norm_drift_bound"]);
            let kernels = [
                ("exact-free", PropagateKernel::ExactFree),
                ("mehler", PropagateKernel::Mehler),
                ("van-vleck", PropagateKernel::VanVleck),
                ("kerner-sutcliffe", PropagateKernel::KernerSutcliffe),
                ("crank-nicolson", PropagateKernel::CrankNicolson),
            ];
            let kernel = r.choice(s, "propagate", "kernel", &kernels, Some(PropagateKernel::KernerSutcliffe));
            let nodes = r.usize(s, "propagate", "quadrature_nodes", Some(DEFAULT_QUADRATURE_NODES), MIN_QUADRATURE_NODES);
            let bound = r.f64(s, "propagate", "norm_drift_bound", Some(DEFAULT_NORM_DRIFT_BOUND), positive);
            needs(&mut r, "grid", grid_sec.is_some(), "for task propagate");
            needs(&mut r, "time", time_sec.is_some(), "for task propagate");
            needs(&mut r, "initial", init.is_some(), "for task propagate");
            Some(TaskOptions::Propagate(PropagateOptions { kernel: kernel?, quadrature_nodes: nodes?, norm_drift_bound: bound? }))
        }
        Task::Bohm => {
            let s = r.section(root, "bohm", &["starts", "guidance", "output", "record_every", "node_eps", "dt"]);
            r.require(s, "bohm", "for task bohm");
            let starts = r.f64_list(s, "bohm", "starts", None, any);
            let guidance = r.choice(s, "bohm", "guidance", &[("grid", Guidance::Grid), ("gaussian", Guidance::Gaussian)], Some(Guidance::Grid));
            let outputs = [
                ("trajectories", BohmOutput::Trajectories),
                ("short-time-laws", BohmOutput::ShortTimeLaws),
                ("drift", BohmOutput::Drift),
            ];
            let output = r.choice(s, "bohm", "output", &outputs, Some(BohmOutput::Trajectories));
            let record_every = r.usize(s, "bohm", "record_every", Some(1), 1);
            let node_eps = r.f64(s, "bohm", "node_eps", Some(qtraj::bohm::DEFAULT_NODE_EPS), positive);
            let dt = if output == Some(BohmOutput::ShortTimeLaws) {
                r.f64_list(s, "bohm", "dt", None, nonzero)
            } else {
                Some(Vec::new())
            };
            needs(&mut r, "time", time_sec.is_some(), "for task bohm");
            needs(&mut r, "initial", init.is_some(), "for task bohm");
            if guidance == Some(Guidance::Grid) {
                needs(&mut r, "grid", grid_sec.is_some(), "for grid guidance");
            }
            if guidance == Some(Guidance::Gaussian) {
                if matches!(initial, Some(InitialState::Field(_))) {
                    r.push("bohm.guidance", "gaussian guidance needs a gaussian initial state", None);
                }
                if potential.as_ref().is_some_and(|p| !p.is_quadratic()) {
                    r.push("bohm.guidance", "gaussian guidance needs a free or harmonic potential", None);
                }
            }
            Some(TaskOptions::Bohm(BohmOptions {
                starts: starts?,
                guidance: guidance?,
                output: output?,
                record_every: record_every?,
                node_eps: node_eps?,
                dt: dt?,
            }))
        }
        Task::Convergence => {
            let s = r.section(
                root,
                "convergence",
                &[
                    "study", "reference", "reference_steps", "quadrature_nodes", "norm_drift_bound", "dt", "slices", "points", "x", "x0",
                    "start_x", "start_p", "flow_steps", "quantum", "steps_per_point",
                ],
            );
            r.require(s, "convergence", "for task convergence");
            let studies = [
                ("kernel", Study::Kernel),
                ("action", Study::Action),
                ("single-slice", Study::SingleSlice),
                ("time-slicing", Study::TimeSlicing),
                ("flow-gap", Study::FlowGap),
                ("euler-composition", Study::EulerComposition),
                ("continuity", Study::Continuity),
            ];
            let study = r.choice(s, "convergence", "study", &studies, None);
            let reference = r.choice(
                s,
                "convergence",
                "reference",
                &[("crank-nicolson", Reference::CrankNicolson), ("mehler", Reference::Mehler)],
                Some(Reference::CrankNicolson),
            );
            let reference_steps = r.usize(s, "convergence", "reference_steps", Some(400), 1);
            let nodes = r.usize(s, "convergence", "quadrature_nodes", Some(DEFAULT_QUADRATURE_NODES), MIN_QUADRATURE_NODES);
            let bound = r.f64(s, "convergence", "norm_drift_bound", Some(DEFAULT_NORM_DRIFT_BOUND), positive);
            let uses_dt = matches!(study, Some(Study::Kernel | Study::Action | Study::SingleSlice | Study::FlowGap));
            let uses_slices = matches!(study, Some(Study::TimeSlicing | Study::EulerComposition));
            let dt = if uses_dt { r.f64_list(s, "convergence", "dt", None, nonzero) } else { Some(Vec::new()) };
            let slices = if uses_slices { r.usize_list(s, "convergence", "slices", None, 1) } else { Some(Vec::new()) };
            let points = if study == Some(Study::Continuity) {
                r.usize_list(s, "convergence", "points", None, MIN_GRID_POINTS)
            } else {
                Some(Vec::new())
            };
            let x = r.f64(s, "convergence", "x", Some(1.0), any);
            let x0 = r.f64(s, "convergence", "x0", Some(0.0), any);
            let start_x = r.f64(s, "convergence", "start_x", Some(1.0), any);
            let start_p = match Reader::item(s, "start_p") {
                Some(_) => r.f64(s, "convergence", "start_p", None, any).map(Some),
                None => Some(None),
            };
            let flow_steps = r.usize(s, "convergence", "flow_steps", Some(256), 1);
            let quantum = r.choice(s, "convergence", "quantum", &[("frozen", SegmentQ::Frozen), ("thawed", SegmentQ::Thawed)], Some(SegmentQ::Thawed));
            let steps_per_point = r.f64(s, "convergence", "steps_per_point", Some(0.25), positive);
            match study {
                Some(Study::SingleSlice | Study::TimeSlicing | Study::Continuity) => {
                    needs(&mut r, "grid", grid_sec.is_some(), "for this convergence study");
                    needs(&mut r, "initial", init.is_some(), "for this convergence study");
                }
                Some(Study::FlowGap) => needs(&mut r, "initial", init.is_some(), "for the flow-gap study (quantum potential packet)"),
                _ => {}
            }
            if matches!(study, Some(Study::TimeSlicing | Study::EulerComposition | Study::Continuity)) {
                needs(&mut r, "time", time_sec.is_some(), "for this convergence study");
            }
            if matches!(study, Some(Study::FlowGap)) && matches!(initial, Some(InitialState::Field(_))) {
                r.push("initial.kind", "the flow-gap study needs a gaussian initial state", None);
            }
            Some(TaskOptions::Convergence(ConvergenceOptions {
                study: study?,
                reference: reference?,
                reference_steps: reference_steps?,
                quadrature_nodes: nodes?,
                norm_drift_bound: bound?,
                dt: dt?,
                slices: slices?,
                points: points?,
                x: x?,
                x0: x0?,
                start_x: start_x?,
                start_p: start_p?,
                flow_steps: flow_steps?,
                quantum: quantum?,
                steps_per_point: steps_per_point?,
            }))
        }
        Task::Zeno => {
            let s = r.section(root, "zeno", &["intervals", "sigma_meas", "mode", "segment_q", "substeps", "x0", "p0", "node_eps"]);
            r.require(s, "zeno", "for task zeno");
            let intervals = r.usize_list(s, "zeno", "intervals", None, 1);
            let sigma_meas = match Reader::item(s, "sigma_meas") {
                Some(item) if item.as_array().is_none() => r.f64(s, "zeno", "sigma_meas", None, positive).map(|v| vec![v]),
                _ => r.f64_list(s, "zeno", "sigma_meas", Some(vec![DEFAULT_SIGMA_MEAS]), positive),
            };
            let mode = r.choice(s, "zeno", "mode", &[("flow", ZenoMode::Flow), ("wavefunction", ZenoMode::Wavefunction)], Some(ZenoMode::Flow));
            let segment_q = r.choice(s, "zeno", "segment_q", &[("frozen", SegmentQ::Frozen), ("thawed", SegmentQ::Thawed)], Some(SegmentQ::Frozen));
            let substeps = r.usize(s, "zeno", "substeps", Some(64), 1);
            let x0 = r.f64_list(s, "zeno", "x0", None, any);
            let p0 = r.f64_list(s, "zeno", "p0", Some(vec![0.0; dof.unwrap_or(1)]), any);
            let node_eps = r.f64(s, "zeno", "node_eps", Some(qtraj::bohm::DEFAULT_NODE_EPS), positive);
            if let Some(d) = dof {
                for (key, v) in [("x0", &x0), ("p0", &p0)] {
                    if v.as_ref().is_some_and(|v| v.len() != d) {
                        r.push(&format!("zeno.{key}"), format!("must hold {d} entries (one per degree of freedom)"), Reader::item(s, key).and_then(|i| i.span().map(|s| s.start)));
                    }
                }
            }
            needs(&mut r, "time", time_sec.is_some(), "for task zeno");
            if mode == Some(ZenoMode::Wavefunction) {
                needs(&mut r, "grid", grid_sec.is_some(), "for wavefunction-level runs");
                needs(&mut r, "initial", init.is_some(), "for wavefunction-level runs");
            }
            Some(TaskOptions::Zeno(ZenoOptions {
                intervals: intervals?,
                sigma_meas: sigma_meas?,
                mode: mode?,
                segment_q: segment_q?,
                substeps: substeps?,
                x0: x0?,
                p0: p0?,
                node_eps: node_eps?,
            }))
        }
        Task::Mott => {
            let s = r.section(root, "mott", &["intervals", "sigma_meas", "speed", "tracks"]);
            let intervals = r.usize(s, "mott", "intervals", Some(64), 3);
            let sigma_meas = r.f64(s, "mott", "sigma_meas", Some(DEFAULT_SIGMA_MEAS), positive);
            let speed = r.f64(s, "mott", "speed", Some(1.0), positive);
            let tracks = r.usize(s, "mott", "tracks", Some(1), 1);
            needs(&mut r, "time", time_sec.is_some(), "for task mott");
            if dof.is_some_and(|d| d != 2) {
                r.push("system.masses", "task mott needs exactly 2 degrees of freedom", Reader::item(sys, "masses").and_then(|i| i.span().map(|s| s.start)));
            }
            Some(TaskOptions::Mott(MottOptions { intervals: intervals?, sigma_meas: sigma_meas?, speed: speed?, tracks: tracks? }))
        }
    });

    // Only sections belonging to the selected task may appear.
    if let Some(task) = task {
        for other in Task::ALL.iter().filter(|t| **t != task) {
            if let Some(item) = root.get(other.name()) {
                r.push(other.name(), format!("section does not apply to task {}", task.name()), item.span().map(|s| s.start));
            }
        }
    }
    if let (Some(TaskOptions::Propagate(p)), Some(spec)) = (&options, &potential) {
        let bad = match p.kernel {
            PropagateKernel::ExactFree => !matches!(spec, PotentialSpec::Free),
            PropagateKernel::Mehler => !matches!(spec, PotentialSpec::Harmonic { .. }),
            PropagateKernel::VanVleck => !spec.is_quadratic(),
            _ => false,
        };
        if bad {
            r.push("propagate.kernel", "kernel does not match the potential", Reader::item(r_section(root, "propagate"), "kernel").and_then(|i| i.span().map(|s| s.start)));
        }
    }
    if let (Some(TaskOptions::Convergence(c)), Some(spec)) = (&options, &potential) {
        let needs_harmonic = matches!(c.study, Study::Kernel | Study::Action)
            || (matches!(c.study, Study::SingleSlice | Study::TimeSlicing) && c.reference == Reference::Mehler);
        if needs_harmonic && !matches!(spec, PotentialSpec::Harmonic { .. }) {
            r.push("potential.kind", "this convergence study compares against the harmonic closed form", None);
        }
    }
    if dof.is_some_and(|d| d != 1) && !matches!(task, Some(Task::Zeno | Task::Mott)) {
        r.push("system.masses", "this task is one-dimensional", Reader::item(sys, "masses").and_then(|i| i.span().map(|s| s.start)));
    }
    if let (Some(InitialState::Field(v)), Some(g)) = (&initial, &grid) {
        if v.len() != g.len() {
            r.push("initial.file", "sample count does not match grid.points", None);
        }
    }

    if !r.violations.is_empty() {
        return Err(ConfigError::Schema(r.violations));
    }
    Ok(ScenarioConfig {
        task: task.expect("no violations"),
        seed,
        system: system.expect("no violations"),
        potential: potential.expect("no violations"),
        initial,
        grid,
        time,
        output_path,
        format: format.expect("no violations"),
        options: options.expect("no violations"),
    })
}

fn r_section<'a>(root: &'a dyn TableLike, name: &str) -> Section<'a> {
    root.get(name).and_then(|i| i.as_table_like().map(|t| (t, i.span().map(|s| s.start))))
}
