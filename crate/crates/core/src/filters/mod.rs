//! Information-form Kalman filters.
//!
//! All filters in this module share one time convention: a
//! [`FilterState`] entering a step holds the prior for time `k`; the step
//! applies the measurement update (posterior `x_k`, `P_k`) and then the
//! time update (prior for `k + 1`). The initial prior is `x = 0`,
//! `P = Pi0`.

pub mod algorithm1;
pub mod algorithm2;

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{SensorModel, StateModel, Topology};

pub use algorithm1::{algorithm1_run, Algorithm1, Consensus};
pub use algorithm2::algorithm2_step;

/// Per-node estimate and covariance, prior and posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_prior: DVector<f64>,
    pub p_prior: DMatrix<f64>,
    pub x_post: DVector<f64>,
    pub p_post: DMatrix<f64>,
}

impl FilterState {
    /// Zero mean, covariance `Pi0`, before any measurement.
    pub fn initial(model: &StateModel) -> Self {
        Self::from_prior(DVector::zeros(model.dim()), model.pi0().clone())
    }

    pub fn from_prior(x: DVector<f64>, p: DMatrix<f64>) -> Self {
        Self {
            x_post: x.clone(),
            p_post: p.clone(),
            x_prior: x,
            p_prior: p,
        }
    }

    pub fn dim(&self) -> usize {
        self.x_prior.len()
    }
}

/// `(u, U) = (C'R^{-1}y, C'R^{-1}C)` for one sensor reading.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationPair {
    pub vector: DVector<f64>,
    pub matrix: DMatrix<f64>,
}

impl InformationPair {
    pub fn from_measurement(sensor: &SensorModel, y: &DVector<f64>) -> Result<Self> {
        check_measurement(sensor, y, 0)?;
        Ok(Self {
            vector: sensor.information_gain() * y,
            matrix: sensor.information_matrix().clone(),
        })
    }
}

/// Neighbourhood sums `S_i = sum C_l'R_l^{-1}C_l`, `q_i = sum C_l'R_l^{-1}y_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedData {
    pub s: DMatrix<f64>,
    pub q: DVector<f64>,
}

fn check_measurement(sensor: &SensorModel, y: &DVector<f64>, node: usize) -> Result<()> {
    if y.len() != sensor.output_dim() {
        if y.is_empty() {
            return Err(Error::MissingMeasurement(node + 1));
        }
        return Err(Error::DimensionMismatch {
            context: "measurement",
            expected: sensor.output_dim(),
            found: y.len(),
        });
    }
    Ok(())
}

/// `P_post = (P_prior^{-1} + S)^{-1}`, `x_post = x_prior + P_post (q - S x_prior)`.
/// The prior is kept unchanged.
pub fn info_measurement_update(
    state: &FilterState,
    s: &DMatrix<f64>,
    q: &DVector<f64>,
) -> Result<FilterState> {
    let m = state.dim();
    if s.shape() != (m, m) {
        return Err(Error::DimensionMismatch {
            context: "information matrix",
            expected: m,
            found: s.nrows(),
        });
    }
    if q.len() != m {
        return Err(Error::DimensionMismatch {
            context: "information vector",
            expected: m,
            found: q.len(),
        });
    }
    let prior_inv = match state.p_prior.clone().cholesky() {
        Some(ch) => linalg::symmetrized(ch.inverse()),
        None => return Err(Error::DegeneratePrior),
    };
    let p_post =
        linalg::spd_inverse(&(prior_inv + s)).ok_or(Error::Singular("posterior information"))?;
    let x_post = &state.x_prior + &p_post * (q - s * &state.x_prior);
    Ok(FilterState {
        x_prior: state.x_prior.clone(),
        p_prior: state.p_prior.clone(),
        x_post,
        p_post,
    })
}

/// `x_prior = A x_post`, `P_prior = A P_post A' + Q`.
pub fn time_update(state: &FilterState, model: &StateModel) -> FilterState {
    predict(state, model.a(), model.q())
}

pub(crate) fn predict(state: &FilterState, a: &DMatrix<f64>, q: &DMatrix<f64>) -> FilterState {
    FilterState {
        x_prior: a * &state.x_post,
        p_prior: linalg::symmetrized(a * &state.p_post * a.transpose() + q),
        x_post: state.x_post.clone(),
        p_post: state.p_post.clone(),
    }
}

/// `S_i` over the incoming neighbours of node `i` (self included).
pub fn fused_information_matrix(
    i: usize,
    topology: &Topology,
    sensors: &[SensorModel],
) -> DMatrix<f64> {
    let m = sensors[i].state_dim();
    let mut s = DMatrix::zeros(m, m);
    for l in topology.incoming_neighbors(i) {
        s += sensors[l].information_matrix();
    }
    s
}

/// Aggregates `(S_i, q_i)` from every `l` in `N_i`. `measurements[l]` is
/// node `l`'s reading; an empty or absent entry is a missing measurement.
pub fn neighborhood_fusion(
    i: usize,
    topology: &Topology,
    sensors: &[SensorModel],
    measurements: &[DVector<f64>],
) -> Result<FusedData> {
    let m = sensors[i].state_dim();
    let mut s = DMatrix::zeros(m, m);
    let mut q = DVector::zeros(m);
    for l in topology.incoming_neighbors(i) {
        let y = measurements
            .get(l)
            .ok_or(Error::MissingMeasurement(l + 1))?;
        check_measurement(&sensors[l], y, l)?;
        s += sensors[l].information_matrix();
        q += sensors[l].information_gain() * y;
    }
    Ok(FusedData { s, q })
}

fn check_bank(bank: &[FilterState], topology: &Topology, sensors: &[SensorModel]) -> Result<()> {
    let n = topology.n();
    for (what, len) in [("filter bank", bank.len()), ("sensor list", sensors.len())] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context: what,
                expected: n,
                found: len,
            });
        }
    }
    Ok(())
}

/// Fused measurement update for every node; writes the posteriors.
pub(crate) fn fused_updates(
    bank: &mut [FilterState],
    topology: &Topology,
    sensors: &[SensorModel],
    measurements: &[DVector<f64>],
) -> Result<()> {
    check_bank(bank, topology, sensors)?;
    let fused: Vec<FusedData> = (0..bank.len())
        .map(|i| neighborhood_fusion(i, topology, sensors, measurements))
        .collect::<Result<_>>()?;
    for (state, f) in bank.iter_mut().zip(&fused) {
        *state = info_measurement_update(state, &f.s, &f.q)?;
    }
    Ok(())
}

/// Noncooperative decentralized filter: every node fuses its
/// neighbourhood's measurements and never exchanges estimates.
pub fn decentralized_step(
    bank: &mut [FilterState],
    model: &StateModel,
    topology: &Topology,
    sensors: &[SensorModel],
    measurements: &[DVector<f64>],
) -> Result<()> {
    fused_updates(bank, topology, sensors, measurements)?;
    for state in bank.iter_mut() {
        *state = time_update(state, model);
    }
    Ok(())
}

/// Standard information-form filter fusing every sensor.
pub fn centralized_reference_step(
    state: &FilterState,
    model: &StateModel,
    sensors: &[SensorModel],
    measurements: &[DVector<f64>],
) -> Result<FilterState> {
    let m = model.dim();
    let mut s = DMatrix::zeros(m, m);
    let mut q = DVector::zeros(m);
    for (l, sensor) in sensors.iter().enumerate() {
        let y = measurements
            .get(l)
            .ok_or(Error::MissingMeasurement(l + 1))?;
        check_measurement(sensor, y, l)?;
        s += sensor.information_matrix();
        q += sensor.information_gain() * y;
    }
    let post = info_measurement_update(state, &s, &q)?;
    Ok(time_update(&post, model))
}

/// Limits of the prior and posterior covariance of a filter that fuses a
/// constant information matrix `S` every step.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyCovariance {
    pub prior: DMatrix<f64>,
    pub posterior: DMatrix<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    /// Relative Frobenius tolerance on successive priors.
    pub tol: f64,
    pub max_iter: usize,
    /// Trace above which the iteration is declared divergent.
    pub divergence_trace: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200_000,
            divergence_trace: 1e12,
        }
    }
}

/// `(P^{-1} + S)^{-1}` written as `(I + P S)^{-1} P`, valid for singular `P`.
pub(crate) fn information_posterior(
    prior: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let m = prior.nrows();
    let lhs = DMatrix::identity(m, m) + prior * s;
    lhs.lu().solve(prior).map(linalg::symmetrized)
}

/// Fixed point of `P- -> A ((P-)^{-1} + S)^{-1} A' + Q`, started at `Pi0`.
pub fn steady_state_covariances(model: &StateModel, s: &DMatrix<f64>) -> Result<SteadyCovariance> {
    steady_state_covariances_with(model, s, RiccatiOptions::default())
}

pub fn steady_state_covariances_with(
    model: &StateModel,
    s: &DMatrix<f64>,
    opts: RiccatiOptions,
) -> Result<SteadyCovariance> {
    let m = model.dim();
    if s.shape() != (m, m) {
        return Err(Error::DimensionMismatch {
            context: "information matrix",
            expected: m,
            found: s.nrows(),
        });
    }
    let a = model.a();
    let at = a.transpose();
    let mut prior = model.pi0().clone();
    let mut last_ratio = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let post = information_posterior(&prior, s).ok_or(Error::Singular("Riccati step"))?;
        let next = linalg::symmetrized(a * &post * &at + model.q());
        let tr = next.trace();
        if !tr.is_finite() || tr > opts.divergence_trace {
            return Err(Error::RiccatiDiverged(tr));
        }
        let diff = (&next - &prior).norm();
        let scale = next.norm();
        last_ratio = if scale > 0.0 { diff / scale } else { diff };
        prior = next;
        if diff <= opts.tol * scale || diff == 0.0 {
            let posterior =
                information_posterior(&prior, s).ok_or(Error::Singular("Riccati step"))?;
            return Ok(SteadyCovariance {
                prior,
                posterior,
                iterations: it,
            });
        }
    }
    Err(Error::MaxIterations {
        iterations: opts.max_iter,
        last_ratio,
    })
}
