//! The subcommands. Each returns the lines it wants printed on stdout.

use std::path::{Path, PathBuf};

use gossipkf::analysis::{
    build_steady_error_system, fixed_point_covariance, orthogonality_check,
    trace_comparison_series, CovarianceState,
};
use gossipkf::gossip::{expected_matrix, second_eigenvalue};
use gossipkf::linalg;
use gossipkf::scheduler::{solve_network, Method};
use gossipkf::sim::{monte_carlo, tail_mean, Strategy, STEADY_WINDOW};
use gossipkf::DMatrix;

use crate::manifest::RunManifest;
use crate::output;
use crate::scenario::{parse_budget_file, KSpec, Scenario};
use crate::CliError;

/// Settings that override the scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub k: Option<KSpec>,
    pub strategy: Option<Strategy>,
}

pub fn load(config: &Path, o: &Overrides) -> Result<Scenario, CliError> {
    let mut s = Scenario::load(config)?;
    if let Some(seed) = o.seed {
        s.config.base_seed = seed;
    }
    if let Some(runs) = o.runs {
        s.config.runs = runs;
    }
    if let Some(k) = o.k {
        s.set_k(k)?;
    }
    if let Some(st) = o.strategy {
        s.config.strategy = st;
    }
    s.config.validate()?;
    Ok(s)
}

fn base_manifest(command: &str, config: &Path, out: &Path, s: &Scenario) -> RunManifest {
    let c = &s.config;
    let mut m = RunManifest::new(command, config, c.base_seed, out);
    m.set("strategy", c.strategy.name())
        .set("k", c.k)
        .set("runs", c.runs)
        .set("horizon", c.horizon);
    let gains: Vec<String> = c
        .resolved_gains()
        .iter()
        .map(|g| output::fmt_g12(*g))
        .collect();
    m.set("gains", gains.join(" "));
    m
}

pub fn validate(config: &Path) -> Result<Vec<String>, CliError> {
    let s = load(config, &Overrides::default())?;
    let mut lines: Vec<String> = s.warnings.iter().map(|w| format!("warning: {w}")).collect();
    let c = &s.config;
    lines.push(format!(
        "ok: {} nodes, state dimension {}, K = {}, strategy {}, horizon {}, runs {}",
        c.topology.n(),
        c.model.dim(),
        c.k,
        c.strategy.name(),
        c.horizon,
        c.runs
    ));
    Ok(lines)
}

pub fn echo(config: &Path, o: &Overrides) -> Result<String, CliError> {
    Ok(load(config, o)?.to_text())
}

pub fn run(config: &Path, out: &Path, o: &Overrides) -> Result<Vec<String>, CliError> {
    let s = load(config, o)?;
    let mut manifest = base_manifest("run", config, out, &s);
    manifest.write_header()?;
    let campaign = monte_carlo(&s.config)?;
    output::write_metrics(&out.join("metrics.csv"), &campaign.series)?;
    manifest.append_checksums(&["metrics.csv"])?;
    let series = &campaign.series;
    Ok(vec![format!(
        "{} runs of {}: steady MSEE_ave {}, disagreement {}",
        s.config.runs,
        s.config.strategy.name(),
        output::fmt_g12(tail_mean(&series.msee_ave, STEADY_WINDOW)),
        output::fmt_g12(tail_mean(&series.disagreement, STEADY_WINDOW))
    )])
}

/// The default sweep: `K = 1, 6, ..., 41`.
pub fn default_sweep() -> Vec<usize> {
    (1..=41).step_by(5).collect()
}

/// Steady-state `(K, MSEE_ave, disagreement)` per round count.
pub fn sweep_values(s: &Scenario, ks: &[usize]) -> Result<Vec<(usize, f64, f64)>, CliError> {
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut cfg = s.config.clone();
        cfg.k = k;
        let series = monte_carlo(&cfg)?.series;
        rows.push((
            k,
            tail_mean(&series.msee_ave, STEADY_WINDOW),
            tail_mean(&series.disagreement, STEADY_WINDOW),
        ));
    }
    Ok(rows)
}

pub fn sweep_k(
    config: &Path,
    out: &Path,
    o: &Overrides,
    ks: Option<Vec<usize>>,
) -> Result<Vec<String>, CliError> {
    let mut o = o.clone();
    o.strategy.get_or_insert(Strategy::Algorithm2);
    let s = load(config, &o)?;
    let ks = ks.unwrap_or_else(default_sweep);
    let mut manifest = base_manifest("sweep-k", config, out, &s);
    manifest.set(
        "ks",
        ks.iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );
    manifest.write_header()?;
    let rows = sweep_values(&s, &ks)?;
    output::write_sweep(&out.join("sweep.csv"), &rows)?;
    manifest.append_checksums(&["sweep.csv"])?;
    Ok(rows
        .iter()
        .map(|(k, m, d)| {
            format!(
                "K = {k}: MSEE_ave {}, disagreement {}",
                output::fmt_g12(*m),
                output::fmt_g12(*d)
            )
        })
        .collect())
}

pub fn analyze(config: &Path, out: &Path, o: &Overrides) -> Result<Vec<String>, CliError> {
    let s = load(config, o)?;
    let c = &s.config;
    let plan = c
        .plan
        .as_ref()
        .ok_or_else(|| CliError::Usage("analyze needs a gossip plan".into()))?;
    if c.k == 0 {
        return Err(CliError::Usage("analyze needs K >= 1".into()));
    }
    let mut manifest = base_manifest("analyze", config, out, &s);
    manifest.write_header()?;

    let sensors = c.resolved_sensors();
    let sys = build_steady_error_system(&c.model, &sensors, &c.topology)?;
    let n = c.topology.n();
    // All nodes start from the same estimate, so their initial errors coincide.
    let sigma0 = CovarianceState::new(linalg::kron(
        &DMatrix::from_element(n, n, 1.0),
        c.model.pi0(),
    ))?;
    let series = trace_comparison_series(&sys, plan, c.k, c.horizon, &sigma0)?;
    let fp = fixed_point_covariance(
        &sys,
        plan,
        c.k,
        &CovarianceState::zeros(sys.a_bar.nrows()),
        1e-10,
        100_000,
    )?;
    let orth = orthogonality_check(&sys);
    let lambda2 = second_eigenvalue(&expected_matrix(plan))?;

    let mut rows: Vec<(Option<usize>, &str, f64)> = Vec::new();
    for p in &series {
        rows.push((Some(p.k), "gossip_trace", p.gossip));
        rows.push((Some(p.k), "decentralized_trace", p.decentralized));
    }
    rows.push((None, "fixed_point_trace", fp.sigma.trace()));
    rows.push((None, "fixed_point_iterations", fp.iterations as f64));
    rows.push((None, "contraction_ratio", fp.contraction_ratio));
    rows.push((None, "orthogonality_deviation", orth.deviation));
    rows.push((None, "gain_norm", sys.gain_norm()));
    rows.push((None, "lambda2", lambda2));
    rows.push((None, "K", c.k as f64));
    output::write_analysis(&out.join("analysis.csv"), &rows)?;
    manifest.append_checksums(&["analysis.csv"])?;
    Ok(vec![format!(
        "fixed point trace {}, contraction ratio {}, orthogonality deviation {}",
        output::fmt_g12(fp.sigma.trace()),
        output::fmt_g12(fp.contraction_ratio),
        output::fmt_g12(orth.deviation)
    )])
}

pub fn schedule(
    config: &Path,
    out: &Path,
    o: &Overrides,
    method: Method,
    budget: Option<PathBuf>,
) -> Result<Vec<String>, CliError> {
    let s = load(config, o)?;
    let c = &s.config;
    let budget = match budget {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            parse_budget_file(&text, c.topology.n())?
        }
        None => s.budget.clone().ok_or_else(|| {
            CliError::Usage("no [budget] in the scenario and no --budget file".into())
        })?,
    };
    let plan = c
        .plan
        .as_ref()
        .ok_or_else(|| CliError::Usage("schedule needs a gossip plan".into()))?;
    let mut manifest = base_manifest("schedule", config, out, &s);
    manifest.set("method", method.name());
    manifest.write_header()?;
    let result = solve_network(
        &c.model,
        &c.resolved_sensors(),
        &c.topology,
        &budget,
        plan,
        method,
    )?;
    output::write_schedule(&out.join("schedule.csv"), &result, &budget, plan)?;
    manifest.append_checksums(&["schedule.csv"])?;
    Ok(vec![format!(
        "{} schedule: J = {}",
        method.name(),
        output::fmt_g12(result.objective)
    )])
}
