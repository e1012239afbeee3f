//! CSV artifacts. Numbers are written with 12 significant digits.

use std::path::Path;

use gossipkf::model::GossipPlan;
use gossipkf::scheduler::{power_used, PowerBudget, ScheduleResult};
use gossipkf::sim::MetricSeries;

use crate::CliError;

/// `%.12g`.
pub fn fmt_g12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!(
            "{}e{sign}{:02}",
            trim_zeros(mantissa.to_string()),
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn row<I, S>(path: &Path, w: &mut csv::Writer<std::fs::File>, fields: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(fields)
        .map_err(|e| CliError::io(path, e.into()))
}

/// Columns `k,node,metric,value`: per node `msee` and `trace`, then
/// `ave,msee_ave` and `delta,disagreement`.
pub fn write_metrics(path: &Path, series: &MetricSeries) -> Result<(), CliError> {
    let mut w = writer(path)?;
    row(path, &mut w, ["k", "node", "metric", "value"])?;
    for k in 0..series.len() {
        let ks = k.to_string();
        for i in 0..series.n {
            let node = (i + 1).to_string();
            row(
                path,
                &mut w,
                [ks.as_str(), &node, "msee", &fmt_g12(series.msee[k][i])],
            )?;
            row(
                path,
                &mut w,
                [ks.as_str(), &node, "trace", &fmt_g12(series.trace[k][i])],
            )?;
        }
        row(
            path,
            &mut w,
            [ks.as_str(), "ave", "msee_ave", &fmt_g12(series.msee_ave[k])],
        )?;
        row(
            path,
            &mut w,
            [
                ks.as_str(),
                "delta",
                "disagreement",
                &fmt_g12(series.disagreement[k]),
            ],
        )?;
    }
    finish(path, w)
}

/// One row per node (`selection` lists one-based sensor numbers, self
/// included), then a `J` row with the objective in the `trace` column.
pub fn write_schedule(
    path: &Path,
    result: &ScheduleResult,
    budget: &PowerBudget,
    plan: &GossipPlan,
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let method = result.method.name();
    row(
        path,
        &mut w,
        [
            "node",
            "selection",
            "trace",
            "power",
            "budget",
            "feasible",
            "method",
        ],
    )?;
    for (i, sel) in result.rows.iter().enumerate() {
        let chosen: Vec<String> = sel
            .gamma_row()
            .iter()
            .enumerate()
            .filter(|(_, &g)| g)
            .map(|(j, _)| (j + 1).to_string())
            .collect();
        row(
            path,
            &mut w,
            [
                (i + 1).to_string(),
                chosen.join(" "),
                fmt_g12(result.traces[i]),
                fmt_g12(power_used(sel.gamma_row(), i, budget, plan)),
                fmt_g12(budget.budget(i)),
                result.feasible[i].to_string(),
                method.to_string(),
            ],
        )?;
    }
    let all = result.feasible.iter().all(|&f| f).to_string();
    row(
        path,
        &mut w,
        ["J", "", &fmt_g12(result.objective), "", "", &all, method],
    )?;
    finish(path, w)
}

/// Columns `k,metric,value`; `k` is empty for scalar diagnostics.
pub fn write_analysis(path: &Path, rows: &[(Option<usize>, &str, f64)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    row(path, &mut w, ["k", "metric", "value"])?;
    for (k, metric, value) in rows {
        let ks = k.map(|k| k.to_string()).unwrap_or_default();
        row(path, &mut w, [ks.as_str(), metric, &fmt_g12(*value)])?;
    }
    finish(path, w)
}

/// Columns `K,msee_ave,disagreement` (steady-state means).
pub fn write_sweep(path: &Path, rows: &[(usize, f64, f64)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    row(path, &mut w, ["K", "msee_ave", "disagreement"])?;
    for (k, msee, delta) in rows {
        row(
            path,
            &mut w,
            [k.to_string(), fmt_g12(*msee), fmt_g12(*delta)],
        )?;
    }
    finish(path, w)
}
