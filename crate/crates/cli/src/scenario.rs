//! Scenario files.
//!
//! A scenario is TOML with the sections `[model]`, `[sensor.N]` (N = 1..n),
//! `[topology]`, `[gossip]`, `[run]` and optionally `[budget]`. Matrices
//! are strings of semicolon-separated rows:
//!
//! ```text
//! [model]
//! A = "1.01 0; 0 1.01"
//! ```

use std::fmt::Write as _;
use std::ops::Range;

use gossipkf::gossip::{averaging_time, expected_matrix, second_eigenvalue};
use gossipkf::model::{
    build_uniform_gossip_plan, validate_topology, GossipPlan, SensorModel, Severity, StateModel,
    Topology,
};
use gossipkf::scheduler::PowerBudget;
use gossipkf::sim::{Gain, ScenarioConfig, Strategy};
use gossipkf::{DMatrix, DVector};
use toml::de::{DeTable, DeValue};
use toml::Spanned;

/// Relative accuracy used when `K` is derived from the averaging time.
pub const AUTO_K_EPSILON: f64 = 0.01;

pub const DEFAULT_RUNS: usize = 100;
pub const DEFAULT_HORIZON: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KSpec {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for KSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(KSpec::Auto);
        }
        s.parse()
            .map(KSpec::Fixed)
            .map_err(|_| format!("expected a round count or \"auto\", got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanSpec {
    /// No `plan` key: uniform when the graph allows one.
    Default,
    Uniform,
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub k_spec: KSpec,
    pub plan_spec: PlanSpec,
    pub budget: Option<PowerBudget>,
    /// Non-fatal findings, e.g. asymmetric links.
    pub warnings: Vec<String>,
}

impl Scenario {
    pub fn load(path: &std::path::Path) -> Result<Self, crate::CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::CliError::io(path, e))?;
        Ok(parse(&text)?)
    }

    /// Replaces `K` and re-resolves it against the plan.
    pub fn set_k(&mut self, k: KSpec) -> Result<(), ScenarioError> {
        self.k_spec = k;
        self.config.k = resolve_k(k, self.config.plan.as_ref())?;
        Ok(())
    }

    /// Canonical text; parsing it gives back an equivalent scenario.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "A = \"{}\"", matrix_text(c.model.a()));
        let _ = writeln!(s, "Q = \"{}\"", matrix_text(c.model.q()));
        let _ = writeln!(s, "Pi0 = \"{}\"", matrix_text(c.model.pi0()));
        for (i, (sensor, gain)) in c.sensors.iter().zip(&c.gains).enumerate() {
            let _ = writeln!(s, "\n[sensor.{}]", i + 1);
            let _ = writeln!(s, "C = \"{}\"", matrix_text(sensor.c()));
            let _ = writeln!(s, "R = \"{}\"", matrix_text(sensor.r()));
            match gain {
                Gain::Random => {
                    let _ = writeln!(s, "gain = \"random\"");
                }
                Gain::Fixed(v) if *v != 1.0 => {
                    let _ = writeln!(s, "gain = {}", float_text(*v));
                }
                Gain::Fixed(_) => {}
            }
        }
        let _ = writeln!(s, "\n[topology]");
        let _ = writeln!(s, "gamma = \"{}\"", matrix_text(&c.topology.to_matrix()));
        let _ = writeln!(s, "\n[gossip]");
        match &self.plan_spec {
            PlanSpec::Default => {}
            PlanSpec::Uniform => {
                let _ = writeln!(s, "plan = \"uniform\"");
            }
            PlanSpec::Matrix(p) => {
                let _ = writeln!(s, "plan = \"{}\"", matrix_text(p));
            }
        }
        match self.k_spec {
            KSpec::Auto => {
                let _ = writeln!(s, "K = \"auto\"");
            }
            KSpec::Fixed(k) => {
                let _ = writeln!(s, "K = {k}");
            }
        }
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "strategy = \"{}\"", c.strategy.name());
        let _ = writeln!(s, "horizon = {}", c.horizon);
        let _ = writeln!(s, "runs = {}", c.runs);
        let _ = writeln!(s, "seed = \"{}\"", c.base_seed);
        if let Some(b) = &self.budget {
            let _ = writeln!(s, "\n[budget]");
            let _ = writeln!(s, "cost = \"{}\"", matrix_text(b.costs()));
            let delta: Vec<String> = b.budgets().iter().map(|v| float_text(*v)).collect();
            let _ = writeln!(s, "delta = \"{}\"", delta.join(" "));
        }
        s
    }
}

fn float_text(v: f64) -> String {
    format!("{v:?}")
}

pub fn matrix_text(m: &DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|r| {
            m.row(r)
                .iter()
                .map(|v| float_text(*v))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// `K` for a spec: auto means the averaging time for [`AUTO_K_EPSILON`]
/// from the plan's spectral rate, or zero without a plan.
pub fn resolve_k(spec: KSpec, plan: Option<&GossipPlan>) -> Result<usize, ScenarioError> {
    match (spec, plan) {
        (KSpec::Fixed(k), _) => Ok(k),
        (KSpec::Auto, None) => Ok(0),
        (KSpec::Auto, Some(plan)) => {
            let l2 = second_eigenvalue(&expected_matrix(plan)).map_err(invalid("[gossip] K"))?;
            averaging_time(AUTO_K_EPSILON, l2).map_err(invalid("[gossip] K"))
        }
    }
}

fn invalid<E: std::fmt::Display>(what: &'static str) -> impl Fn(E) -> ScenarioError {
    move |e| ScenarioError::Invalid(format!("{what}: {e}"))
}

struct Source<'a> {
    text: &'a str,
}

impl Source<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn err(&self, span: Range<usize>, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Parse {
            line: self.line(span),
            message: message.into(),
        }
    }
}

type Entry<'t, 'i> = (
    &'t Spanned<std::borrow::Cow<'i, str>>,
    &'t Spanned<DeValue<'i>>,
);

/// A section's entries with key checking.
struct Section<'t, 'i> {
    name: String,
    span: Range<usize>,
    entries: Vec<Entry<'t, 'i>>,
}

impl<'t, 'i> Section<'t, 'i> {
    fn new(
        src: &Source<'_>,
        name: String,
        value: &'t Spanned<DeValue<'i>>,
        allowed: &[&str],
    ) -> Result<Self, ScenarioError> {
        let DeValue::Table(table) = value.get_ref() else {
            return Err(src.err(value.span(), format!("[{name}] must be a table")));
        };
        let entries: Vec<Entry<'t, 'i>> = table.iter().collect();
        for (k, _) in &entries {
            if !allowed.contains(&k.get_ref().as_ref()) {
                return Err(src.err(
                    k.span(),
                    format!("unknown key `{}` in [{name}]", k.get_ref()),
                ));
            }
        }
        Ok(Self {
            name,
            span: value.span(),
            entries,
        })
    }

    fn get(&self, key: &str) -> Option<&'t Spanned<DeValue<'i>>> {
        self.entries
            .iter()
            .find(|(k, _)| k.get_ref() == key)
            .map(|(_, v)| *v)
    }

    fn require(
        &self,
        src: &Source<'_>,
        key: &str,
    ) -> Result<&'t Spanned<DeValue<'i>>, ScenarioError> {
        self.get(key).ok_or_else(|| {
            src.err(
                self.span.clone(),
                format!("[{}] is missing `{key}`", self.name),
            )
        })
    }
}

fn number(src: &Source<'_>, v: &Spanned<DeValue<'_>>) -> Result<f64, ScenarioError> {
    match v.get_ref() {
        DeValue::Integer(i) => i128::from_str_radix(i.as_str(), i.radix())
            .map(|x| x as f64)
            .map_err(|e| src.err(v.span(), e.to_string())),
        DeValue::Float(f) => f
            .as_str()
            .parse()
            .map_err(|_| src.err(v.span(), "bad float")),
        other => Err(src.err(
            v.span(),
            format!("expected a number, found {}", other.type_str()),
        )),
    }
}

fn integer(src: &Source<'_>, v: &Spanned<DeValue<'_>>) -> Result<i128, ScenarioError> {
    match v.get_ref() {
        DeValue::Integer(i) => i128::from_str_radix(i.as_str(), i.radix())
            .map_err(|e| src.err(v.span(), e.to_string())),
        DeValue::String(s) => s
            .trim()
            .parse()
            .map_err(|_| src.err(v.span(), format!("expected an integer, got {s:?}"))),
        other => Err(src.err(
            v.span(),
            format!("expected an integer, found {}", other.type_str()),
        )),
    }
}

fn string<'a>(src: &Source<'_>, v: &'a Spanned<DeValue<'_>>) -> Result<&'a str, ScenarioError> {
    v.get_ref().as_str().ok_or_else(|| {
        src.err(
            v.span(),
            format!("expected a string, found {}", v.get_ref().type_str()),
        )
    })
}

/// Rows separated by `;`, entries by whitespace or commas.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>, String> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| format!("bad matrix entry {t:?}"))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<f64>> = if rows.last().is_some_and(|r| r.is_empty()) && rows.len() > 1 {
        rows[..rows.len() - 1].to_vec()
    } else {
        rows
    };
    let ncols = rows.first().map_or(0, |r| r.len());
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err("matrix rows must be non-empty and of equal length".into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn matrix(src: &Source<'_>, v: &Spanned<DeValue<'_>>) -> Result<DMatrix<f64>, ScenarioError> {
    match v.get_ref() {
        DeValue::String(s) => parse_matrix(s).map_err(|e| src.err(v.span(), e)),
        DeValue::Integer(_) | DeValue::Float(_) => Ok(DMatrix::from_element(1, 1, number(src, v)?)),
        other => Err(src.err(
            v.span(),
            format!("expected a matrix string, found {}", other.type_str()),
        )),
    }
}

pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    let src = Source { text };
    let root = DeTable::parse(text).map_err(|e| ScenarioError::Parse {
        line: e.span().map_or(1, |s| src.line(s)),
        message: e.message().to_string(),
    })?;
    let root = root.get_ref();

    let mut model_sec = None;
    let mut sensor_secs: Vec<(usize, Section)> = Vec::new();
    let mut topo_sec = None;
    let mut gossip_sec = None;
    let mut run_sec = None;
    let mut budget_sec = None;
    for (key, value) in root.iter() {
        let name = key.get_ref().as_ref();
        match name {
            "model" => {
                model_sec = Some(Section::new(&src, name.into(), value, &["A", "Q", "Pi0"])?)
            }
            "topology" => topo_sec = Some(Section::new(&src, name.into(), value, &["gamma"])?),
            "gossip" => gossip_sec = Some(Section::new(&src, name.into(), value, &["plan", "K"])?),
            "run" => {
                run_sec = Some(Section::new(
                    &src,
                    name.into(),
                    value,
                    &["strategy", "horizon", "runs", "seed"],
                )?)
            }
            "budget" => {
                budget_sec = Some(Section::new(&src, name.into(), value, &["cost", "delta"])?)
            }
            "sensor" => {
                let DeValue::Table(t) = value.get_ref() else {
                    return Err(src.err(value.span(), "[sensor] must hold [sensor.N] tables"));
                };
                for (idx, sv) in t.iter() {
                    let i: usize =
                        idx.get_ref()
                            .parse()
                            .ok()
                            .filter(|&i| i >= 1)
                            .ok_or_else(|| {
                                src.err(
                                    idx.span(),
                                    format!(
                                        "sensor number must be 1, 2, ..., got {:?}",
                                        idx.get_ref()
                                    ),
                                )
                            })?;
                    sensor_secs.push((
                        i,
                        Section::new(&src, format!("sensor.{i}"), sv, &["C", "R", "gain"])?,
                    ));
                }
            }
            other => return Err(src.err(key.span(), format!("unknown section [{other}]"))),
        }
    }

    let model_sec = model_sec.ok_or_else(|| src.err(0..0, "missing [model] section"))?;
    let a = matrix(&src, model_sec.require(&src, "A")?)?;
    let q = matrix(&src, model_sec.require(&src, "Q")?)?;
    let pi0 = match model_sec.get("Pi0") {
        Some(v) => matrix(&src, v)?,
        None => DMatrix::identity(a.nrows(), a.nrows()),
    };
    let model = StateModel::new(a, q, pi0).map_err(invalid("[model]"))?;
    if !model.is_controllable() {
        return Err(ScenarioError::Invalid(
            "[model]: (A, Q^1/2) is not controllable".into(),
        ));
    }

    let topo_sec = topo_sec.ok_or_else(|| src.err(0..0, "missing [topology] section"))?;
    let gamma_v = topo_sec.require(&src, "gamma")?;
    let topology = Topology::from_matrix(&matrix(&src, gamma_v)?)
        .map_err(|e| src.err(gamma_v.span(), e.to_string()))?;
    let n = topology.n();
    let mut warnings = Vec::new();
    for issue in validate_topology(&topology) {
        match issue.severity() {
            Severity::Error => return Err(ScenarioError::Invalid(format!("[topology]: {issue}"))),
            Severity::Warning => warnings.push(format!("[topology]: {issue}")),
        }
    }

    sensor_secs.sort_by_key(|(i, _)| *i);
    let numbers: Vec<usize> = sensor_secs.iter().map(|(i, _)| *i).collect();
    if numbers != (1..=n).collect::<Vec<_>>() {
        return Err(ScenarioError::Invalid(format!(
            "expected sections [sensor.1] to [sensor.{n}] for {n} nodes, found {numbers:?}"
        )));
    }
    let mut sensors = Vec::with_capacity(n);
    let mut gains = Vec::with_capacity(n);
    for (i, sec) in &sensor_secs {
        let c = matrix(&src, sec.require(&src, "C")?)?;
        let r = matrix(&src, sec.require(&src, "R")?)?;
        let what = format!("[sensor.{i}]");
        let sensor =
            SensorModel::new(c, r).map_err(|e| ScenarioError::Invalid(format!("{what}: {e}")))?;
        if sensor.state_dim() != model.dim() {
            return Err(ScenarioError::Invalid(format!(
                "{what}: C has {} columns, state dimension is {}",
                sensor.state_dim(),
                model.dim()
            )));
        }
        if !sensor.is_observable(&model) {
            return Err(ScenarioError::Invalid(format!(
                "{what}: (A, C) is not observable"
            )));
        }
        let gain = match sec.get("gain") {
            None => Gain::Fixed(1.0),
            Some(v) if v.get_ref().as_str() == Some("random") => Gain::Random,
            Some(v) => {
                let g = number(&src, v)?;
                if !(g > 0.0 && g <= 1.0) {
                    return Err(src.err(v.span(), "gain must lie in (0, 1] or be \"random\""));
                }
                Gain::Fixed(g)
            }
        };
        sensors.push(sensor);
        gains.push(gain);
    }

    let (plan_spec, k_spec) = match &gossip_sec {
        None => (PlanSpec::Default, KSpec::Auto),
        Some(sec) => {
            let plan_spec = match sec.get("plan") {
                None => PlanSpec::Default,
                Some(v) if v.get_ref().as_str() == Some("uniform") => PlanSpec::Uniform,
                Some(v) => PlanSpec::Matrix(matrix(&src, v)?),
            };
            let k_spec = match sec.get("K") {
                None => KSpec::Auto,
                Some(v) if v.get_ref().as_str() == Some("auto") => KSpec::Auto,
                Some(v) => {
                    let k = integer(&src, v)?;
                    KSpec::Fixed(usize::try_from(k).map_err(|_| {
                        src.err(v.span(), "K must be a nonnegative integer or \"auto\"")
                    })?)
                }
            };
            (plan_spec, k_spec)
        }
    };
    let plan = match &plan_spec {
        PlanSpec::Default => build_uniform_gossip_plan(&topology).ok(),
        PlanSpec::Uniform => {
            Some(build_uniform_gossip_plan(&topology).map_err(invalid("[gossip] plan"))?)
        }
        PlanSpec::Matrix(p) => {
            Some(GossipPlan::from_matrix(p.clone(), &topology).map_err(invalid("[gossip] plan"))?)
        }
    };
    let k = resolve_k(k_spec, plan.as_ref())?;

    let mut strategy = Strategy::Algorithm2;
    let mut horizon = DEFAULT_HORIZON;
    let mut runs = DEFAULT_RUNS;
    let mut base_seed = 0u64;
    if let Some(sec) = &run_sec {
        if let Some(v) = sec.get("strategy") {
            strategy =
                Strategy::parse(string(&src, v)?).map_err(|e| src.err(v.span(), e.to_string()))?;
        }
        let positive = |key: &str, v: &Spanned<DeValue<'_>>| -> Result<usize, ScenarioError> {
            let x = integer(&src, v)?;
            if x < 1 {
                return Err(ScenarioError::Invalid(format!(
                    "[run] {key} must be at least 1, got {x}"
                )));
            }
            usize::try_from(x).map_err(|_| src.err(v.span(), format!("{key} too large")))
        };
        if let Some(v) = sec.get("horizon") {
            horizon = positive("horizon", v)?;
        }
        if let Some(v) = sec.get("runs") {
            runs = positive("runs", v)?;
        }
        if let Some(v) = sec.get("seed") {
            base_seed = u64::try_from(integer(&src, v)?)
                .map_err(|_| src.err(v.span(), "seed must fit in an unsigned 64-bit integer"))?;
        }
    }

    let budget = match &budget_sec {
        None => None,
        Some(sec) => Some(parse_budget(&src, sec, n)?),
    };

    let config = ScenarioConfig {
        model,
        sensors,
        gains,
        topology,
        plan,
        k,
        horizon,
        runs,
        base_seed,
        strategy,
    };
    config.validate().map_err(invalid("scenario"))?;
    Ok(Scenario {
        config,
        k_spec,
        plan_spec,
        budget,
        warnings,
    })
}

fn parse_budget(
    src: &Source<'_>,
    sec: &Section<'_, '_>,
    n: usize,
) -> Result<PowerBudget, ScenarioError> {
    let cost_v = sec.require(src, "cost")?;
    let cost = matrix(src, cost_v)?;
    let cost = if cost.shape() == (1, 1) {
        let c = cost[(0, 0)];
        DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { c })
    } else if cost.shape() == (n, n) {
        cost
    } else {
        return Err(src.err(
            cost_v.span(),
            format!("cost must be a number or an {n}x{n} matrix"),
        ));
    };
    let delta_v = sec.require(src, "delta")?;
    let delta = matrix(src, delta_v)?;
    let delta = if delta.len() == 1 {
        DVector::from_element(n, delta[(0, 0)])
    } else if delta.len() == n && (delta.nrows() == 1 || delta.ncols() == 1) {
        DVector::from_iterator(n, delta.iter().copied())
    } else {
        return Err(src.err(
            delta_v.span(),
            format!("delta must be a number or {n} values"),
        ));
    };
    PowerBudget::new(cost, delta).map_err(invalid("[budget]"))
}

/// Reads the `[budget]` section of a standalone budget file.
pub fn parse_budget_file(text: &str, n: usize) -> Result<PowerBudget, ScenarioError> {
    let src = Source { text };
    let root = DeTable::parse(text).map_err(|e| ScenarioError::Parse {
        line: e.span().map_or(1, |s| src.line(s)),
        message: e.message().to_string(),
    })?;
    let mut found = None;
    for (key, value) in root.get_ref().iter() {
        if key.get_ref() != "budget" {
            continue;
        }
        found = Some(parse_budget(
            &src,
            &Section::new(&src, "budget".into(), value, &["cost", "delta"])?,
            n,
        )?);
    }
    found.ok_or_else(|| src.err(0..0, "missing [budget] section"))
}
