//! Ground truth, measurements, strategy execution and the error metrics.
//!
//! Randomness: a campaign with base seed `s` runs run `r` on seed `s + r`.
//! Each run draws its truth, its measurement noise and its gossip events
//! from separate ChaCha streams of that seed, so changing `K` does not
//! change the simulated plant or the measurements.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filters::{
    algorithm2_step, centralized_reference_step, decentralized_step, Algorithm1, Consensus,
    FilterState,
};
use crate::linalg;
use crate::model::{GossipPlan, SensorModel, StateModel, Topology};

const GAIN_STREAM: u64 = 0;
const TRUTH_STREAM: u64 = 1;
const MEASUREMENT_STREAM: u64 = 2;
const GOSSIP_STREAM: u64 = 3;

/// Number of trailing steps treated as steady state.
pub const STEADY_WINDOW: usize = 20;

/// Draws `N(0, cov)` as `sqrt(cov) z` with the symmetric PSD root, so
/// singular covariances are allowed.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    root: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(cov: &DMatrix<f64>) -> Self {
        Self {
            root: linalg::psd_sqrt(cov),
        }
    }

    pub fn dim(&self) -> usize {
        self.root.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.root * z
    }
}

/// `x(0), ..., x(horizon - 1)` with `x(0) ~ N(0, Pi0)`.
pub fn simulate_truth<R: Rng + ?Sized>(
    model: &StateModel,
    horizon: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let init = GaussianSampler::new(model.pi0());
    let noise = GaussianSampler::new(model.q());
    let mut out = Vec::with_capacity(horizon);
    if horizon == 0 {
        return out;
    }
    let mut x = init.sample(rng);
    for k in 0..horizon {
        if k > 0 {
            x = model.a() * &x + noise.sample(rng);
        }
        out.push(x.clone());
    }
    out
}

/// Measurements indexed `[k][i]`.
pub fn simulate_measurements<R: Rng + ?Sized>(
    trajectory: &[DVector<f64>],
    sensors: &[SensorModel],
    rng: &mut R,
) -> Vec<Vec<DVector<f64>>> {
    let samplers: Vec<GaussianSampler> = sensors
        .iter()
        .map(|s| GaussianSampler::new(s.r()))
        .collect();
    trajectory
        .iter()
        .map(|x| {
            sensors
                .iter()
                .zip(&samplers)
                .map(|(s, v)| s.c() * x + v.sample(rng))
                .collect()
        })
        .collect()
}

/// Squared Euclidean estimation error.
pub fn msee(truth: &DVector<f64>, estimate: &DVector<f64>) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::DimensionMismatch {
            context: "estimate",
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    Ok((truth - estimate).norm_squared())
}

pub fn msee_average(per_node: &[f64]) -> f64 {
    if per_node.is_empty() {
        return 0.0;
    }
    per_node.iter().sum::<f64>() / per_node.len() as f64
}

/// Root-sum-square distance of the estimates from their mean.
pub fn disagreement(estimates: &[DVector<f64>]) -> f64 {
    let Some(first) = estimates.first() else {
        return 0.0;
    };
    let mut mean = DVector::zeros(first.len());
    for e in estimates {
        mean += e;
    }
    mean /= estimates.len() as f64;
    libm::sqrt(estimates.iter().map(|e| (e - &mean).norm_squared()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Centralized,
    Decentralized,
    Algorithm1,
    Algorithm2,
    /// Same filter as `Decentralized`.
    NoConsensus,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Centralized,
        Strategy::Decentralized,
        Strategy::Algorithm1,
        Strategy::Algorithm2,
        Strategy::NoConsensus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Centralized => "centralized",
            Strategy::Decentralized => "decentralized",
            Strategy::Algorithm1 => "algorithm1",
            Strategy::Algorithm2 => "algorithm2",
            Strategy::NoConsensus => "no-consensus",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidParameter(String::from("unknown strategy ") + s))
    }
}

/// Multiplier applied to a sensor's output map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gain {
    Fixed(f64),
    /// Drawn once per campaign from `(0, 1]`.
    Random,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub model: StateModel,
    /// Unscaled sensors; see [`ScenarioConfig::resolved_sensors`].
    pub sensors: Vec<SensorModel>,
    pub gains: Vec<Gain>,
    pub topology: Topology,
    /// Needed by the gossip strategies when `k > 0`.
    pub plan: Option<GossipPlan>,
    pub k: usize,
    pub horizon: usize,
    pub runs: usize,
    pub base_seed: u64,
    pub strategy: Strategy,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.topology.n();
        if self.runs == 0 {
            return Err(Error::InvalidParameter("runs must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if self.sensors.len() != n {
            return Err(Error::DimensionMismatch {
                context: "sensor list",
                expected: n,
                found: self.sensors.len(),
            });
        }
        if self.gains.len() != n {
            return Err(Error::DimensionMismatch {
                context: "gain list",
                expected: n,
                found: self.gains.len(),
            });
        }
        for (i, g) in self.gains.iter().enumerate() {
            if let Gain::Fixed(v) = g {
                if !(*v > 0.0 && *v <= 1.0) {
                    return Err(Error::InvalidParameter(alloc::format!(
                        "gain of sensor {} must lie in (0, 1]",
                        i + 1
                    )));
                }
            }
        }
        for s in &self.sensors {
            if s.state_dim() != self.model.dim() {
                return Err(Error::DimensionMismatch {
                    context: "sensor state dimension",
                    expected: self.model.dim(),
                    found: s.state_dim(),
                });
            }
        }
        if let Some(plan) = &self.plan {
            if plan.n() != n {
                return Err(Error::DimensionMismatch {
                    context: "gossip plan",
                    expected: n,
                    found: plan.n(),
                });
            }
        }
        let needs_plan = match self.strategy {
            Strategy::Algorithm1 => true,
            Strategy::Algorithm2 => self.k > 0,
            _ => false,
        };
        if needs_plan && self.plan.is_none() {
            return Err(Error::InvalidParameter(alloc::format!(
                "strategy {} needs a gossip plan",
                self.strategy.name()
            )));
        }
        if self.strategy == Strategy::Algorithm1 && self.k == 0 {
            return Err(Error::InvalidParameter(
                "algorithm1 needs at least one gossip round".into(),
            ));
        }
        Ok(())
    }

    /// Realized gains: fixed ones as given, random ones drawn in node order
    /// from the base seed.
    pub fn resolved_gains(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(GAIN_STREAM);
        self.gains
            .iter()
            .map(|g| match g {
                Gain::Fixed(v) => *v,
                Gain::Random => 1.0 - rng.random::<f64>(),
            })
            .collect()
    }

    pub fn resolved_sensors(&self) -> Vec<SensorModel> {
        self.sensors
            .iter()
            .zip(self.resolved_gains())
            .map(|(s, g)| if g == 1.0 { s.clone() } else { s.scaled(g) })
            .collect()
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }
}

/// Metrics per time step `k = 0..horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub n: usize,
    /// `[k][i]`.
    pub msee: Vec<Vec<f64>>,
    pub msee_ave: Vec<f64>,
    pub disagreement: Vec<f64>,
    /// `[k][i]`, trace of node `i`'s posterior covariance.
    pub trace: Vec<Vec<f64>>,
}

impl MetricSeries {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            msee: Vec::new(),
            msee_ave: Vec::new(),
            disagreement: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.msee_ave.len()
    }

    pub fn is_empty(&self) -> bool {
        self.msee_ave.is_empty()
    }

    fn push(&mut self, msee: Vec<f64>, disagreement: f64, trace: Vec<f64>) {
        self.msee_ave.push(msee_average(&msee));
        self.msee.push(msee);
        self.disagreement.push(disagreement);
        self.trace.push(trace);
    }

    fn add_assign(&mut self, other: &MetricSeries) {
        fn add(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for k in 0..self.len() {
            add(&mut self.msee[k], &other.msee[k]);
            add(&mut self.trace[k], &other.trace[k]);
        }
        add(&mut self.msee_ave, &other.msee_ave);
        add(&mut self.disagreement, &other.disagreement);
    }

    fn scale(&mut self, s: f64) {
        for row in self.msee.iter_mut().chain(self.trace.iter_mut()) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        self.msee_ave.iter_mut().for_each(|x| *x *= s);
        self.disagreement.iter_mut().for_each(|x| *x *= s);
    }
}

/// Mean of the last `window` entries (all of them if shorter).
pub fn tail_mean(values: &[f64], window: usize) -> f64 {
    let start = values.len().saturating_sub(window);
    let tail = &values[start..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn run_with(config: &ScenarioConfig, sensors: &[SensorModel], run: usize) -> Result<MetricSeries> {
    let seed = config.run_seed(run);
    let rng_for = |stream| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    let mut truth_rng = rng_for(TRUTH_STREAM);
    let mut meas_rng = rng_for(MEASUREMENT_STREAM);
    let mut gossip_rng = rng_for(GOSSIP_STREAM);

    let model = &config.model;
    let topology = &config.topology;
    let n = topology.n();
    let truth = simulate_truth(model, config.horizon, &mut truth_rng);
    let ys = simulate_measurements(&truth, sensors, &mut meas_rng);

    let mut series = MetricSeries::empty(n);
    let mut record =
        |x: &DVector<f64>, estimates: &[DVector<f64>], traces: Vec<f64>| -> Result<()> {
            let errs = estimates
                .iter()
                .map(|e| msee(x, e))
                .collect::<Result<Vec<_>>>()?;
            series.push(errs, disagreement(estimates), traces);
            Ok(())
        };

    match config.strategy {
        Strategy::Centralized => {
            let mut state = FilterState::initial(model);
            for (x, y) in truth.iter().zip(&ys) {
                state = centralized_reference_step(&state, model, sensors, y)?;
                let est = vec![state.x_post.clone(); n];
                record(x, &est, vec![state.p_post.trace(); n])?;
            }
        }
        Strategy::Decentralized | Strategy::NoConsensus | Strategy::Algorithm2 => {
            let mut bank = vec![FilterState::initial(model); n];
            for (x, y) in truth.iter().zip(&ys) {
                match (&config.plan, config.strategy) {
                    (Some(plan), Strategy::Algorithm2) => {
                        algorithm2_step(
                            &mut bank,
                            model,
                            topology,
                            sensors,
                            plan,
                            config.k,
                            y,
                            &mut gossip_rng,
                        )?;
                    }
                    _ => decentralized_step(&mut bank, model, topology, sensors, y)?,
                }
                let est: Vec<_> = bank.iter().map(|s| s.x_post.clone()).collect();
                record(x, &est, bank.iter().map(|s| s.p_post.trace()).collect())?;
            }
        }
        Strategy::Algorithm1 => {
            let plan = config
                .plan
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("algorithm1 needs a gossip plan".into()))?;
            let consensus = Consensus::Gossip {
                plan,
                rounds: config.k,
            };
            let mut alg = Algorithm1::new(model, n);
            for (x, y) in truth.iter().zip(&ys) {
                alg.step(sensors, consensus, y, &mut gossip_rng)?;
                let est: Vec<_> = (0..n).map(|i| alg.estimate(i).clone()).collect();
                record(x, &est, (0..n).map(|i| alg.covariance(i).trace()).collect())?;
            }
        }
    }
    Ok(series)
}

/// A single run on the base seed.
pub fn run_experiment(config: &ScenarioConfig) -> Result<MetricSeries> {
    config.validate()?;
    run_with(config, &config.resolved_sensors(), 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub series: MetricSeries,
    pub seeds: Vec<u64>,
    pub gains: Vec<f64>,
}

/// Every run of the campaign, in run order.
pub fn run_all(config: &ScenarioConfig) -> Result<Vec<MetricSeries>> {
    config.validate()?;
    let sensors = config.resolved_sensors();
    (0..config.runs)
        .map(|run| {
            run_with(config, &sensors, run).map_err(|e| Error::Run {
                run,
                source: alloc::boxed::Box::new(e),
            })
        })
        .collect()
}

/// Pointwise average over `config.runs` runs, accumulated in run order.
pub fn monte_carlo(config: &ScenarioConfig) -> Result<Campaign> {
    let runs = run_all(config)?;
    let mut iter = runs.iter();
    let mut series = iter.next().expect("runs >= 1").clone();
    for s in iter {
        series.add_assign(s);
    }
    if runs.len() > 1 {
        series.scale(1.0 / runs.len() as f64);
    }
    Ok(Campaign {
        series,
        seeds: (0..config.runs).map(|r| config.run_seed(r)).collect(),
        gains: config.resolved_gains(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_uniform_gossip_plan;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn config(strategy: Strategy, n: usize, k: usize) -> ScenarioConfig {
        let model = StateModel::new(
            DMatrix::identity(2, 2) * 1.01,
            DMatrix::identity(2, 2) * 2e-5,
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let sensor =
            SensorModel::new(DMatrix::identity(2, 2) * 2.0, DMatrix::identity(2, 2) * 0.5).unwrap();
        let topology = if n == 1 {
            Topology::identity(1)
        } else {
            Topology::ring(n)
        };
        ScenarioConfig {
            plan: if n > 1 {
                Some(build_uniform_gossip_plan(&topology).unwrap())
            } else {
                None
            },
            model,
            sensors: vec![sensor; n],
            gains: vec![Gain::Random; n],
            topology,
            k,
            horizon: 30,
            runs: 3,
            base_seed: 7,
            strategy,
        }
    }

    #[test]
    fn metric_examples() {
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(msee(&x, &DVector::zeros(2)).unwrap(), 1.0);
        assert_eq!(msee(&x, &x).unwrap(), 0.0);
        assert!(msee(&x, &DVector::zeros(3)).is_err());
        assert_eq!(msee_average(&[1.0, 3.0]), 2.0);
        let d = disagreement(&[x.clone(), -x.clone()]);
        assert!((d - libm::sqrt(2.0)).abs() < 1e-15);
        assert_eq!(disagreement(&[x.clone(), x]), 0.0);
    }

    #[test]
    fn zero_noise_truth_is_zero() {
        let model = StateModel::new(scalar(1.5), scalar(0.0), scalar(0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(simulate_truth(&model, 10, &mut rng)
            .iter()
            .all(|x| x[0] == 0.0));
    }

    #[test]
    fn truth_is_deterministic() {
        let model = StateModel::new(scalar(0.9), scalar(1.0), scalar(1.0)).unwrap();
        let a = simulate_truth(&model, 20, &mut ChaCha8Rng::seed_from_u64(3));
        let b = simulate_truth(&model, 20, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn single_node_centralized_equals_decentralized() {
        let c = run_experiment(&config(Strategy::Centralized, 1, 0)).unwrap();
        let d = run_experiment(&config(Strategy::Decentralized, 1, 0)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn algorithm2_without_rounds_is_no_consensus() {
        let a = monte_carlo(&config(Strategy::Algorithm2, 4, 0)).unwrap();
        let b = monte_carlo(&config(Strategy::NoConsensus, 4, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_run_campaign_is_run_experiment() {
        let mut c = config(Strategy::Algorithm2, 4, 3);
        c.runs = 1;
        assert_eq!(monte_carlo(&c).unwrap().series, run_experiment(&c).unwrap());
        assert_eq!(monte_carlo(&c).unwrap().seeds, vec![7]);
    }

    #[test]
    fn random_gains_in_unit_interval_and_frozen() {
        let c = config(Strategy::Algorithm1, 4, 2);
        let g = c.resolved_gains();
        assert!(g.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert_eq!(g, c.resolved_gains());
    }

    #[test]
    fn validation() {
        let mut c = config(Strategy::Algorithm1, 4, 0);
        assert!(c.validate().is_err());
        c.k = 1;
        c.runs = 0;
        assert!(c.validate().is_err());
        assert_eq!(
            Strategy::parse("no-consensus").unwrap(),
            Strategy::NoConsensus
        );
        assert!(Strategy::parse("x").is_err());
    }
}
