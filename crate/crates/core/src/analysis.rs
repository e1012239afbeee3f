//! Mean-square analysis of gossip on estimates.
//!
//! In steady state the stacked error `e_k` (all node errors, `nm` entries)
//! obeys
//!
//! ```text
//! e_k = W_k [ A_bar e_{k-1} + B_bar (1 (x) w_k) - D_bar v_k ]
//! ```
//!
//! with `W_k` the product of the round matrices `W_ij (x) I_m` of one
//! measurement interval. [`covariance_map`] is the exact expectation of the
//! covariance recursion over the gossip distribution.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filters::{fused_information_matrix, steady_state_covariances};
use crate::gossip;
use crate::linalg;
use crate::model::{GossipPlan, SensorModel, StateModel, Topology};
use crate::sim::GaussianSampler;

/// Minimum eigenvalue accepted for a covariance, after symmetrization.
pub const PSD_TOL: f64 = 1e-10;

/// Stacked steady-state matrices of the decentralized filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyErrorSystem {
    pub n: usize,
    pub m: usize,
    /// `diag(P_1, ..., P_n)`, posterior limits.
    pub p_block: DMatrix<f64>,
    /// `diag(P_1^-, ..., P_n^-)`, prior limits.
    pub pminus_block: DMatrix<f64>,
    /// `P (P^-)^{-1} (I_n (x) A)`.
    pub a_bar: DMatrix<f64>,
    /// `P (P^-)^{-1}`.
    pub b_bar: DMatrix<f64>,
    /// `P L' C' R^{-1}`.
    pub d_bar: DMatrix<f64>,
    /// `Gamma (x) I_m`.
    pub link: DMatrix<f64>,
    pub c_block: DMatrix<f64>,
    pub r_block: DMatrix<f64>,
    /// `11' (x) Q`, covariance of the stacked process noise.
    pub process_noise: DMatrix<f64>,
    /// `B_bar (11' (x) Q) B_bar' + D_bar R D_bar'`.
    pub forcing: DMatrix<f64>,
}

/// Solves every node's neighbourhood Riccati equation and assembles the
/// stacked system.
pub fn build_steady_error_system(
    model: &StateModel,
    sensors: &[SensorModel],
    topology: &Topology,
) -> Result<SteadyErrorSystem> {
    let mut posteriors = Vec::with_capacity(topology.n());
    let mut priors = Vec::with_capacity(topology.n());
    for i in 0..topology.n() {
        let s = fused_information_matrix(i, topology, sensors);
        let ss = steady_state_covariances(model, &s)?;
        posteriors.push(ss.posterior);
        priors.push(ss.prior);
    }
    SteadyErrorSystem::from_blocks(model, sensors, topology, &posteriors, &priors)
}

impl SteadyErrorSystem {
    /// Assembles the system from given per-node posterior/prior blocks.
    /// Used directly to inject constructed (e.g. degenerate) instances.
    pub fn from_blocks(
        model: &StateModel,
        sensors: &[SensorModel],
        topology: &Topology,
        posteriors: &[DMatrix<f64>],
        priors: &[DMatrix<f64>],
    ) -> Result<Self> {
        let n = topology.n();
        let m = model.dim();
        for (what, len) in [
            ("sensor list", sensors.len()),
            ("posterior blocks", posteriors.len()),
            ("prior blocks", priors.len()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context: what,
                    expected: n,
                    found: len,
                });
            }
        }
        for s in sensors {
            if s.state_dim() != m {
                return Err(Error::DimensionMismatch {
                    context: "sensor state dimension",
                    expected: m,
                    found: s.state_dim(),
                });
            }
        }
        let p_block = linalg::block_diag(posteriors);
        let pminus_block = linalg::block_diag(priors);
        if p_block.shape() != (n * m, n * m) || pminus_block.shape() != (n * m, n * m) {
            return Err(Error::DimensionMismatch {
                context: "covariance blocks",
                expected: n * m,
                found: p_block.nrows(),
            });
        }
        let pminus_inv = linalg::block_diag(
            &priors
                .iter()
                .map(|p| linalg::spd_inverse(p).ok_or(Error::Singular("steady prior")))
                .collect::<Result<Vec<_>>>()?,
        );
        let eye_n = DMatrix::<f64>::identity(n, n);
        let b_bar = &p_block * &pminus_inv;
        let a_bar = &b_bar * linalg::kron(&eye_n, model.a());
        let link = linalg::kron(&topology.to_matrix(), &DMatrix::identity(m, m));
        let c_block =
            linalg::block_diag(&sensors.iter().map(|s| s.c().clone()).collect::<Vec<_>>());
        let r_block =
            linalg::block_diag(&sensors.iter().map(|s| s.r().clone()).collect::<Vec<_>>());
        let r_inv_block = linalg::block_diag(
            &sensors
                .iter()
                .map(|s| s.r_inv().clone())
                .collect::<Vec<_>>(),
        );
        let d_bar = &p_block * link.transpose() * c_block.transpose() * r_inv_block;
        let process_noise = linalg::kron(&DMatrix::from_element(n, n, 1.0), model.q());
        let forcing = linalg::symmetrized(
            &b_bar * &process_noise * b_bar.transpose() + &d_bar * &r_block * d_bar.transpose(),
        );
        Ok(Self {
            n,
            m,
            p_block,
            pminus_block,
            a_bar,
            b_bar,
            d_bar,
            link,
            c_block,
            r_block,
            process_noise,
            forcing,
        })
    }

    /// Spectral norm of `P (P^-)^{-1}`; at most one when every posterior
    /// is dominated by its prior.
    pub fn gain_norm(&self) -> f64 {
        self.b_bar.clone().svd(false, false).singular_values.max()
    }

    /// Covariance recursion without gossip: `A_bar X A_bar' + forcing`.
    pub fn decentralized_map(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::symmetrized(&self.a_bar * x * self.a_bar.transpose() + &self.forcing)
    }
}

/// Stacked error covariance, symmetric and PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState {
    sigma: DMatrix<f64>,
}

impl CovarianceState {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&sigma, linalg::SYMMETRY_TOL) {
            return Err(Error::NotSymmetric("covariance state"));
        }
        let sigma = linalg::symmetrized(sigma);
        if !sigma.is_empty() && linalg::min_eigenvalue(&sigma) < -PSD_TOL * sigma.amax().max(1.0) {
            return Err(Error::InvalidParameter(
                "covariance state is not PSD".into(),
            ));
        }
        Ok(Self { sigma })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            sigma: DMatrix::zeros(dim, dim),
        }
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.sigma
    }

    pub fn trace(&self) -> f64 {
        self.sigma.trace()
    }
}

/// Averages block rows and block columns `i` and `j` (block size `m`),
/// i.e. `(W_ij (x) I) X (W_ij (x) I)`.
fn pair_congruence(x: &mut DMatrix<f64>, i: usize, j: usize, m: usize) {
    let dim = x.nrows();
    for c in 0..dim {
        for r in 0..m {
            let (a, b) = (i * m + r, j * m + r);
            let avg = 0.5 * (x[(a, c)] + x[(b, c)]);
            x[(a, c)] = avg;
            x[(b, c)] = avg;
        }
    }
    for r in 0..dim {
        for c in 0..m {
            let (a, b) = (i * m + c, j * m + c);
            let avg = 0.5 * (x[(r, a)] + x[(r, b)]);
            x[(r, a)] = avg;
            x[(r, b)] = avg;
        }
    }
}

/// Exact single-round expectation `E[W X W'] = (1/n) sum_ij P_ij (W_ij (x) I) X (W_ij (x) I)`.
pub fn expected_congruence(x: &DMatrix<f64>, plan: &GossipPlan, m: usize) -> DMatrix<f64> {
    let n = plan.n();
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            // W_ij = W_ji, so both orientations share one term.
            let weight = (plan.prob(i, j) + plan.prob(j, i)) / n as f64;
            if weight > 0.0 {
                let mut y = x.clone();
                pair_congruence(&mut y, i, j, m);
                out += y * weight;
            }
        }
    }
    linalg::symmetrized(out)
}

/// `T(Sigma) = E[W (A_bar Sigma A_bar' + forcing) W']` where `W` is the
/// product of `rounds` independent gossip events.
pub fn covariance_map(
    sigma: &CovarianceState,
    sys: &SteadyErrorSystem,
    plan: &GossipPlan,
    rounds: usize,
) -> Result<CovarianceState> {
    if rounds == 0 {
        return Err(Error::InvalidParameter(
            "covariance map needs at least one gossip round".into(),
        ));
    }
    if plan.n() != sys.n {
        return Err(Error::DimensionMismatch {
            context: "gossip plan",
            expected: sys.n,
            found: plan.n(),
        });
    }
    if sigma.sigma.shape() != (sys.n * sys.m, sys.n * sys.m) {
        return Err(Error::DimensionMismatch {
            context: "covariance state",
            expected: sys.n * sys.m,
            found: sigma.sigma.nrows(),
        });
    }
    let mut x = sys.decentralized_map(&sigma.sigma);
    for _ in 0..rounds {
        x = expected_congruence(&x, plan, sys.m);
    }
    Ok(CovarianceState { sigma: x })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub sigma: CovarianceState,
    pub iterations: usize,
    /// Largest observed `||T(S_{t+1}) - T(S_t)|| / ||S_{t+1} - S_t||`
    /// over iterations whose step is above the round-off floor.
    pub contraction_ratio: f64,
}

/// Iterates `T` from `start` until `||T(S) - S||_F <= tol (1 + ||S||_F)`.
pub fn fixed_point_covariance(
    sys: &SteadyErrorSystem,
    plan: &GossipPlan,
    rounds: usize,
    start: &CovarianceState,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let mut cur = start.clone();
    let mut prev_step: Option<f64> = None;
    let mut ratio: f64 = 0.0;
    let mut last_ratio = f64::NAN;
    for it in 1..=max_iter {
        let next = covariance_map(&cur, sys, plan, rounds)?;
        let step = (&next.sigma - &cur.sigma).norm();
        let scale = 1.0 + next.sigma.norm();
        if let Some(prev) = prev_step {
            if prev > 1e3 * f64::EPSILON * scale {
                last_ratio = step / prev;
                ratio = ratio.max(last_ratio);
            }
        }
        cur = next;
        if step <= tol * scale {
            return Ok(FixedPoint {
                sigma: cur,
                iterations: it,
                contraction_ratio: ratio,
            });
        }
        prev_step = Some(step);
    }
    Err(Error::MaxIterations {
        iterations: max_iter,
        last_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceBound {
    pub tr_p: f64,
    pub tr_wpw: f64,
    pub holds: bool,
}

/// Compares `Tr(P)` with `Tr(W P W')` for symmetric stochastic `W` and
/// symmetric positive-definite `P`.
pub fn lemma31_check(w: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<TraceBound> {
    let n = w.nrows();
    if !linalg::is_square(w) || p.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "trace bound",
            expected: n,
            found: p.nrows(),
        });
    }
    if !linalg::is_symmetric(w, linalg::SYMMETRY_TOL) {
        return Err(Error::NotSymmetric("W"));
    }
    for i in 0..n {
        if w.row(i).iter().any(|&v| v < 0.0) || (w.row(i).sum() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("W is not stochastic".into()));
        }
    }
    if !linalg::is_pd(p) {
        return Err(Error::InvalidParameter(
            "P is not symmetric positive definite".into(),
        ));
    }
    let tr_p = p.trace();
    let tr_wpw = (w * p * w.transpose()).trace();
    Ok(TraceBound {
        tr_p,
        tr_wpw,
        holds: tr_wpw <= tr_p + 1e-10,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orthogonality {
    /// `||A_bar' A_bar - I||_F`.
    pub deviation: f64,
    pub is_orthogonal: bool,
}

pub fn orthogonality_check(sys: &SteadyErrorSystem) -> Orthogonality {
    let dim = sys.a_bar.nrows();
    let deviation = (sys.a_bar.transpose() * &sys.a_bar - DMatrix::identity(dim, dim)).norm();
    Orthogonality {
        deviation,
        is_orthogonal: deviation <= 1e-8,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub k: usize,
    /// `Tr E[Sigma_k]` under gossip.
    pub gossip: f64,
    /// Trace of the decentralized stacked covariance.
    pub decentralized: f64,
}

/// Runs `T` and the gossip-free recursion side by side from the same
/// `sigma0` for `horizon` steps; the series has `horizon + 1` points.
pub fn trace_comparison_series(
    sys: &SteadyErrorSystem,
    plan: &GossipPlan,
    rounds: usize,
    horizon: usize,
    sigma0: &CovarianceState,
) -> Result<Vec<TracePoint>> {
    let mut g = sigma0.clone();
    let mut d = sigma0.sigma.clone();
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(TracePoint {
        k: 0,
        gossip: g.trace(),
        decentralized: d.trace(),
    });
    for k in 1..=horizon {
        g = covariance_map(&g, sys, plan, rounds)?;
        d = sys.decentralized_map(&d);
        out.push(TracePoint {
            k,
            gossip: g.trace(),
            decentralized: d.trace(),
        });
    }
    Ok(out)
}

/// Monte-Carlo estimate of `E[e_k e_k']` after `steps` iterations of the
/// sampled error recursion from `e_0 = 0`, over `runs` independent runs
/// (run `r` seeded with `seed + r`). Independent of [`covariance_map`]:
/// it samples noises and gossip events instead of taking expectations.
pub fn monte_carlo_error_covariance(
    sys: &SteadyErrorSystem,
    plan: &GossipPlan,
    rounds: usize,
    steps: usize,
    runs: usize,
    seed: u64,
) -> DMatrix<f64> {
    let dim = sys.n * sys.m;
    let w_sampler = GaussianSampler::new(&sys.process_noise);
    let v_sampler = GaussianSampler::new(&sys.r_block);
    let mut acc = DMatrix::zeros(dim, dim);
    for r in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let mut e = DVector::zeros(dim);
        for _ in 0..steps {
            let w = w_sampler.sample(&mut rng);
            let v = v_sampler.sample(&mut rng);
            let next = &sys.a_bar * &e + &sys.b_bar * w - &sys.d_bar * v;
            let mut stacked = DMatrix::from_fn(sys.n, sys.m, |i, c| next[i * sys.m + c]);
            let events = gossip::sample_events(plan, rounds, &mut rng);
            gossip::apply_rounds(&mut stacked, &events);
            e = DVector::from_fn(dim, |k, _| stacked[(k / sys.m, k % sys.m)]);
        }
        acc += &e * e.transpose();
    }
    acc / runs as f64
}
