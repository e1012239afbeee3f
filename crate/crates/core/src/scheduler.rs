//! Power-constrained choice of which sensors a node fuses.
//!
//! For node `i` a selection `gamma_i` picks sensors; the node's steady-state
//! posterior is the fixed point of
//!
//! ```text
//! g(X; Xi) = ((A X A' + Q)^{-1} + sum_j gamma_ij Omega_j)^{-1},  Omega_j = C_j' R_j^{-1} C_j
//! ```
//!
//! and the selection must respect the node's power budget. The network
//! problem splits into independent per-node problems.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filters::RiccatiOptions;
use crate::linalg;
use crate::model::{GossipPlan, SensorModel, StateModel, Topology};

/// Largest candidate set [`solve_exact`] will enumerate.
pub const MAX_EXACT_CANDIDATES: usize = 20;

/// Relative tolerance under which two traces count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerBudget {
    c: DMatrix<f64>,
    delta: DVector<f64>,
}

impl PowerBudget {
    pub fn new(c: DMatrix<f64>, delta: DVector<f64>) -> Result<Self> {
        let n = delta.len();
        if c.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                context: "link cost matrix",
                expected: n,
                found: c.nrows(),
            });
        }
        if c.iter()
            .chain(delta.iter())
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "costs and budgets must be finite and nonnegative".into(),
            ));
        }
        for i in 0..n {
            if c[(i, i)] != 0.0 {
                return Err(Error::InvalidParameter(alloc::format!(
                    "self-link cost of node {} must be zero",
                    i + 1
                )));
            }
        }
        Ok(Self { c, delta })
    }

    /// Same cost `cost` on every off-diagonal link, same budget everywhere.
    pub fn uniform(n: usize, cost: f64, budget: f64) -> Result<Self> {
        let c = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { cost });
        Self::new(c, DVector::from_element(n, budget))
    }

    pub fn n(&self) -> usize {
        self.delta.len()
    }

    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.c[(i, j)]
    }

    pub fn budget(&self, i: usize) -> f64 {
        self.delta[i]
    }

    pub fn costs(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn budgets(&self) -> &DVector<f64> {
        &self.delta
    }
}

/// Which sensors node `i` fuses. `gamma_row[i]` is always set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Selection {
    i: usize,
    gamma_row: Vec<bool>,
}

impl Selection {
    pub fn new(i: usize, mut gamma_row: Vec<bool>) -> Result<Self> {
        if i >= gamma_row.len() {
            return Err(Error::InvalidParameter(alloc::format!(
                "node {} out of range",
                i + 1
            )));
        }
        gamma_row[i] = true;
        Ok(Self { i, gamma_row })
    }

    pub fn self_only(i: usize, n: usize) -> Self {
        let mut gamma_row = vec![false; n];
        gamma_row[i] = true;
        Self { i, gamma_row }
    }

    /// Selection with every sensor switched off, self included. Only for
    /// probing the unobserved map; not a valid schedule.
    pub fn empty(i: usize, n: usize) -> Self {
        Self {
            i,
            gamma_row: vec![false; n],
        }
    }

    pub fn node(&self) -> usize {
        self.i
    }

    pub fn gamma_row(&self) -> &[bool] {
        &self.gamma_row
    }

    pub fn with_link(&self, j: usize) -> Self {
        let mut s = self.clone();
        s.gamma_row[j] = true;
        s
    }

    /// Selected links other than self, ascending.
    pub fn links(&self) -> Vec<usize> {
        (0..self.gamma_row.len())
            .filter(|&j| j != self.i && self.gamma_row[j])
            .collect()
    }

    /// `diag(gamma_i1 I_p1, ..., gamma_in I_pn)`.
    pub fn xi(&self, sensors: &[SensorModel]) -> DMatrix<f64> {
        let blocks: Vec<DMatrix<f64>> = sensors
            .iter()
            .zip(&self.gamma_row)
            .map(|(s, &g)| {
                let p = s.output_dim();
                if g {
                    DMatrix::identity(p, p)
                } else {
                    DMatrix::zeros(p, p)
                }
            })
            .collect();
        linalg::block_diag(&blocks)
    }

    /// `sum_j gamma_ij Omega_j`.
    pub fn information(&self, sensors: &[SensorModel]) -> DMatrix<f64> {
        let m = sensors.first().map_or(0, |s| s.state_dim());
        let mut s = DMatrix::zeros(m, m);
        for (sensor, _) in sensors.iter().zip(&self.gamma_row).filter(|(_, &g)| g) {
            s += sensor.information_matrix();
        }
        s
    }
}

fn check_selection(
    selection: &Selection,
    model: &StateModel,
    sensors: &[SensorModel],
) -> Result<()> {
    if selection.gamma_row.len() != sensors.len() {
        return Err(Error::DimensionMismatch {
            context: "selection row",
            expected: sensors.len(),
            found: selection.gamma_row.len(),
        });
    }
    for s in sensors {
        if s.state_dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                context: "sensor state dimension",
                expected: model.dim(),
                found: s.state_dim(),
            });
        }
    }
    Ok(())
}

fn g_hat_with(x: &DMatrix<f64>, info: &DMatrix<f64>, model: &StateModel) -> Result<DMatrix<f64>> {
    let a = model.a();
    let h = linalg::symmetrized(a * x * a.transpose() + model.q());
    let h_inv = linalg::spd_inverse(&h).ok_or(Error::Singular("h(X)"))?;
    linalg::spd_inverse(&(h_inv + info)).ok_or(Error::Singular("g(X)"))
}

/// One step of the selection-dependent Riccati map.
pub fn g_hat(
    x: &DMatrix<f64>,
    selection: &Selection,
    model: &StateModel,
    sensors: &[SensorModel],
) -> Result<DMatrix<f64>> {
    check_selection(selection, model, sensors)?;
    if x.shape() != (model.dim(), model.dim()) {
        return Err(Error::DimensionMismatch {
            context: "X",
            expected: model.dim(),
            found: x.nrows(),
        });
    }
    g_hat_with(x, &selection.information(sensors), model)
}

/// Fixed point of `g(.; Xi)` started at `Pi0`.
pub fn steady_covariance(
    selection: &Selection,
    model: &StateModel,
    sensors: &[SensorModel],
    opts: RiccatiOptions,
) -> Result<DMatrix<f64>> {
    check_selection(selection, model, sensors)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let info = selection.information(sensors);
    let mut x = model.pi0().clone();
    let mut last_ratio = f64::NAN;
    for _ in 0..opts.max_iter {
        let next = g_hat_with(&x, &info, model)?;
        let tr = next.trace();
        if !tr.is_finite() || tr > opts.divergence_trace {
            return Err(Error::RiccatiDiverged(tr));
        }
        let diff = (&next - &x).norm();
        let scale = next.norm();
        last_ratio = if scale > 0.0 { diff / scale } else { diff };
        x = next;
        if diff <= opts.tol * scale {
            return Ok(x);
        }
    }
    Err(Error::MaxIterations {
        iterations: opts.max_iter,
        last_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteadyTrace {
    Finite(f64),
    /// The iteration blew past the divergence threshold or never settled.
    Diverged,
}

impl SteadyTrace {
    /// Trace, with divergence as `+inf`.
    pub fn value(self) -> f64 {
        match self {
            SteadyTrace::Finite(t) => t,
            SteadyTrace::Diverged => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, SteadyTrace::Finite(_))
    }
}

pub fn steady_trace(
    selection: &Selection,
    model: &StateModel,
    sensors: &[SensorModel],
    opts: RiccatiOptions,
) -> Result<SteadyTrace> {
    match steady_covariance(selection, model, sensors, opts) {
        Ok(x) => Ok(SteadyTrace::Finite(x.trace())),
        Err(Error::RiccatiDiverged(_)) | Err(Error::MaxIterations { .. }) => {
            Ok(SteadyTrace::Diverged)
        }
        Err(e) => Err(e),
    }
}

/// Power spent by node `i` under `gamma_row`: link costs plus expected
/// gossip cost, summed over `j != i`.
pub fn power_used(gamma_row: &[bool], i: usize, budget: &PowerBudget, plan: &GossipPlan) -> f64 {
    let n = budget.n();
    (0..n)
        .filter(|&j| j != i)
        .map(|j| {
            let c = budget.cost(i, j);
            let link = if gamma_row[j] { c } else { 0.0 };
            link + plan.prob(i, j) * c / n as f64
        })
        .sum()
}

pub fn power_feasible(
    gamma_row: &[bool],
    i: usize,
    budget: &PowerBudget,
    plan: &GossipPlan,
) -> bool {
    let delta = budget.budget(i);
    power_used(gamma_row, i, budget, plan) <= delta + 1e-12 * delta.max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSchedule {
    pub selection: Selection,
    pub trace: f64,
}

fn check_problem(
    i: usize,
    sensors: &[SensorModel],
    budget: &PowerBudget,
    plan: &GossipPlan,
) -> Result<()> {
    let n = sensors.len();
    if budget.n() != n || plan.n() != n {
        return Err(Error::DimensionMismatch {
            context: "budget/plan size",
            expected: n,
            found: if budget.n() != n {
                budget.n()
            } else {
                plan.n()
            },
        });
    }
    if i >= n {
        return Err(Error::InvalidParameter(alloc::format!(
            "node {} out of range",
            i + 1
        )));
    }
    Ok(())
}

fn normalized_candidates(i: usize, n: usize, candidates: &[usize]) -> Result<Vec<usize>> {
    let mut c: Vec<usize> = candidates.iter().copied().filter(|&j| j != i).collect();
    if let Some(&bad) = c.iter().find(|&&j| j >= n) {
        return Err(Error::InvalidParameter(alloc::format!(
            "candidate {} out of range",
            bad + 1
        )));
    }
    c.sort_unstable();
    c.dedup();
    Ok(c)
}

/// Strictly better in the (trace, link count, lexicographic) order.
fn better(trace: f64, links: &[usize], best_trace: f64, best_links: &[usize]) -> bool {
    if best_trace.is_infinite() {
        return trace.is_finite();
    }
    let tol = TIE_TOL * best_trace.abs().max(f64::MIN_POSITIVE);
    if trace < best_trace - tol {
        return true;
    }
    if trace > best_trace + tol {
        return false;
    }
    match links.len().cmp(&best_links.len()) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => links < best_links,
    }
}

/// Best feasible selection for node `i` by enumerating every subset of
/// `candidates`.
pub fn solve_exact(
    i: usize,
    model: &StateModel,
    sensors: &[SensorModel],
    budget: &PowerBudget,
    plan: &GossipPlan,
    candidates: &[usize],
    opts: RiccatiOptions,
) -> Result<NodeSchedule> {
    check_problem(i, sensors, budget, plan)?;
    let n = sensors.len();
    let cand = normalized_candidates(i, n, candidates)?;
    if cand.len() > MAX_EXACT_CANDIDATES {
        return Err(Error::InvalidParameter(alloc::format!(
            "{} candidates exceed the enumeration bound of {}",
            cand.len(),
            MAX_EXACT_CANDIDATES
        )));
    }
    let mut best: Option<(f64, Vec<usize>, Selection)> = None;
    for mask in 0u32..(1u32 << cand.len()) {
        let mut row = vec![false; n];
        row[i] = true;
        for (b, &j) in cand.iter().enumerate() {
            row[j] = mask & (1 << b) != 0;
        }
        if !power_feasible(&row, i, budget, plan) {
            continue;
        }
        let sel = Selection { i, gamma_row: row };
        let tr = steady_trace(&sel, model, sensors, opts)?.value();
        if !tr.is_finite() {
            continue;
        }
        let links = sel.links();
        let take = match &best {
            None => true,
            Some((bt, bl, _)) => better(tr, &links, *bt, bl),
        };
        if take {
            best = Some((tr, links, sel));
        }
    }
    best.map(|(trace, _, selection)| NodeSchedule { selection, trace })
        .ok_or(Error::Unschedulable(i + 1))
}

/// Greedy selection: from self-only, repeatedly add the feasible link with
/// the largest trace decrease per unit cost.
pub fn solve_greedy(
    i: usize,
    model: &StateModel,
    sensors: &[SensorModel],
    budget: &PowerBudget,
    plan: &GossipPlan,
    candidates: &[usize],
    opts: RiccatiOptions,
) -> Result<NodeSchedule> {
    check_problem(i, sensors, budget, plan)?;
    let n = sensors.len();
    let cand = normalized_candidates(i, n, candidates)?;
    let mut cur = Selection::self_only(i, n);
    if !power_feasible(&cur.gamma_row, i, budget, plan) {
        return Err(Error::Unschedulable(i + 1));
    }
    let mut cur_tr = steady_trace(&cur, model, sensors, opts)?.value();
    loop {
        // (score, decrease, j): larger score wins, then larger decrease,
        // then lower index.
        let mut pick: Option<(f64, f64, usize, f64)> = None;
        for &j in cand.iter().filter(|&&j| !cur.gamma_row[j]) {
            let next = cur.with_link(j);
            if !power_feasible(&next.gamma_row, i, budget, plan) {
                continue;
            }
            let tr = steady_trace(&next, model, sensors, opts)?.value();
            if !tr.is_finite() {
                continue;
            }
            let cost = budget.cost(i, j);
            let (score, decrease) = if cur_tr.is_infinite() {
                (f64::INFINITY, -tr)
            } else {
                let d = cur_tr - tr;
                let tol = TIE_TOL * cur_tr.abs();
                if cost == 0.0 {
                    if d < -tol {
                        continue;
                    }
                    (f64::INFINITY, d)
                } else {
                    if d <= tol {
                        continue;
                    }
                    (d / cost, d)
                }
            };
            let take = match pick {
                None => true,
                Some((s, dd, _, _)) => score > s || (score == s && decrease > dd),
            };
            if take {
                pick = Some((score, decrease, j, tr));
            }
        }
        match pick {
            Some((_, _, j, tr)) => {
                cur = cur.with_link(j);
                cur_tr = tr;
            }
            None => break,
        }
    }
    if cur_tr.is_finite() {
        Ok(NodeSchedule {
            selection: cur,
            trace: cur_tr,
        })
    } else {
        Err(Error::Unschedulable(i + 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiCheck {
    pub min_eig: f64,
    pub valid: bool,
}

/// `H`: the per-sensor factors `H_j = L_j' C_j` stacked over all sensors.
pub fn stacked_information_factor(sensors: &[SensorModel]) -> DMatrix<f64> {
    let factors: Vec<DMatrix<f64>> = sensors.iter().map(|s| s.information_factor()).collect();
    let m = sensors.first().map_or(0, |s| s.state_dim());
    let rows: usize = factors.iter().map(|f| f.nrows()).sum();
    let mut h = DMatrix::zeros(rows, m);
    let mut r = 0;
    for f in &factors {
        h.view_mut((r, 0), f.shape()).copy_from(f);
        r += f.nrows();
    }
    h
}

/// Minimum eigenvalue of the block matrix
///
/// ```text
/// [ Y            (Y - Z H) A   Y - Z H   Z  ]
/// [ A'(Y - H'Z') Y             0         0  ]
/// [ Y - H'Z'     0             Q^{-1}    0  ]
/// [ Z'           0             0         Xi ]
/// ```
///
/// with `H` from [`stacked_information_factor`]. A PSD matrix certifies a
/// bounded steady state for the selection.
pub fn lmi_certificate_check(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    selection: &Selection,
    model: &StateModel,
    sensors: &[SensorModel],
) -> Result<LmiCheck> {
    check_selection(selection, model, sensors)?;
    let m = model.dim();
    let h = stacked_information_factor(sensors);
    let p = h.nrows();
    if y.shape() != (m, m) {
        return Err(Error::DimensionMismatch {
            context: "Y",
            expected: m,
            found: y.nrows(),
        });
    }
    if z.shape() != (m, p) {
        return Err(Error::DimensionMismatch {
            context: "Z",
            expected: p,
            found: z.ncols(),
        });
    }
    if !linalg::is_symmetric(y, 1e-9) {
        return Err(Error::NotSymmetric("Y"));
    }
    let q_inv = linalg::spd_inverse(model.q()).ok_or(Error::Singular("Q"))?;
    let a = model.a();
    let xi = selection.xi(sensors);
    let yz = y - z * &h;
    let dim = 3 * m + p;
    let mut big = DMatrix::zeros(dim, dim);
    big.view_mut((0, 0), (m, m)).copy_from(y);
    big.view_mut((0, m), (m, m)).copy_from(&(&yz * a));
    big.view_mut((0, 2 * m), (m, m)).copy_from(&yz);
    big.view_mut((0, 3 * m), (m, p)).copy_from(z);
    big.view_mut((m, m), (m, m)).copy_from(y);
    big.view_mut((2 * m, 2 * m), (m, m)).copy_from(&q_inv);
    big.view_mut((3 * m, 3 * m), (p, p)).copy_from(&xi);
    for r in 0..dim {
        for c in 0..r {
            big[(r, c)] = big[(c, r)];
        }
    }
    let min_eig = linalg::min_eigenvalue(&big);
    Ok(LmiCheck {
        min_eig,
        valid: min_eig >= -1e-9,
    })
}

/// `(Y, Z) = (X*^{-1}, H' Xi)` from the fixed point `X*` of the selection.
pub fn certificate_from_fixed_point(
    selection: &Selection,
    model: &StateModel,
    sensors: &[SensorModel],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let x = steady_covariance(selection, model, sensors, RiccatiOptions::default())?;
    let y = linalg::spd_inverse(&x).ok_or(Error::Singular("steady covariance"))?;
    let z = stacked_information_factor(sensors).transpose() * selection.xi(sensors);
    Ok((y, z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    Greedy,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Greedy => "greedy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Method::Exact),
            "greedy" => Ok(Method::Greedy),
            other => Err(Error::InvalidParameter(
                String::from("unknown method ") + other,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleResult {
    pub method: Method,
    pub rows: Vec<Selection>,
    pub traces: Vec<f64>,
    /// `(1/n) sum_i Tr(P_i)`.
    pub objective: f64,
    pub feasible: Vec<bool>,
}

/// Solves every node's problem with its incoming neighbours as candidates.
pub fn solve_network(
    model: &StateModel,
    sensors: &[SensorModel],
    topology: &Topology,
    budget: &PowerBudget,
    plan: &GossipPlan,
    method: Method,
) -> Result<ScheduleResult> {
    let n = topology.n();
    if sensors.len() != n {
        return Err(Error::DimensionMismatch {
            context: "sensor list",
            expected: n,
            found: sensors.len(),
        });
    }
    let opts = RiccatiOptions::default();
    let mut rows = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    let mut feasible = Vec::with_capacity(n);
    for i in 0..n {
        let cand: Vec<usize> = topology
            .incoming_neighbors(i)
            .into_iter()
            .filter(|&j| j != i)
            .collect();
        let node = match method {
            Method::Exact => solve_exact(i, model, sensors, budget, plan, &cand, opts)?,
            Method::Greedy => solve_greedy(i, model, sensors, budget, plan, &cand, opts)?,
        };
        feasible.push(power_feasible(node.selection.gamma_row(), i, budget, plan));
        traces.push(node.trace);
        rows.push(node.selection);
    }
    let objective = traces.iter().sum::<f64>() / n as f64;
    Ok(ScheduleResult {
        method,
        rows,
        traces,
        objective,
        feasible,
    })
}
