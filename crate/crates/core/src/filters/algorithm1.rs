//! Consensus on information pairs: every node averages `(u_i, U_i)` over
//! the network, then runs a micro-filter that reproduces the centralized
//! estimate when the averages are exact.
//!
//! The micro-filter works in units scaled by `n`: its prior starts at
//! `n Pi0` and its process noise is `n Q`, so that with `S = U_avg` and
//! `q = u_avg` the posterior equals `n` times the centralized posterior.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{info_measurement_update, predict, FilterState, InformationPair};
use crate::error::{Error, Result};
use crate::gossip::{self, GossipEvent};
use crate::linalg;
use crate::model::{GossipPlan, SensorModel, StateModel};

/// How the information pairs are mixed within one measurement interval.
#[derive(Debug, Clone, Copy)]
pub enum Consensus<'a> {
    /// Every node receives the exact network average.
    ExactAverage,
    /// `rounds` sampled gossip events; `u` and `U` travel in the same
    /// message and are averaged by the same events.
    Gossip { plan: &'a GossipPlan, rounds: usize },
}

#[derive(Debug, Clone)]
pub struct Algorithm1 {
    n: usize,
    a: DMatrix<f64>,
    q_scaled: DMatrix<f64>,
    nodes: Vec<FilterState>,
}

impl Algorithm1 {
    pub fn new(model: &StateModel, n: usize) -> Self {
        let scale = n as f64;
        let init = FilterState::from_prior(DVector::zeros(model.dim()), model.pi0() * scale);
        Self {
            n,
            a: model.a().clone(),
            q_scaled: model.q() * scale,
            nodes: alloc::vec![init; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Posterior estimate of node `i` after the last step.
    pub fn estimate(&self, i: usize) -> &DVector<f64> {
        &self.nodes[i].x_post
    }

    /// Posterior covariance of node `i` in unscaled units (`M / n`).
    pub fn covariance(&self, i: usize) -> DMatrix<f64> {
        &self.nodes[i].p_post / self.n as f64
    }

    /// One measurement interval. Returns the sampled gossip events (empty
    /// for exact averaging).
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        sensors: &[SensorModel],
        consensus: Consensus<'_>,
        measurements: &[DVector<f64>],
        rng: &mut R,
    ) -> Result<Vec<GossipEvent>> {
        let n = self.n;
        if sensors.len() != n {
            return Err(Error::DimensionMismatch {
                context: "sensor list",
                expected: n,
                found: sensors.len(),
            });
        }
        let m = self.a.nrows();
        let width = m + m * m;
        let mut values = DMatrix::zeros(n, width);
        for (i, sensor) in sensors.iter().enumerate() {
            let y = measurements
                .get(i)
                .ok_or(Error::MissingMeasurement(i + 1))?;
            if y.is_empty() {
                return Err(Error::MissingMeasurement(i + 1));
            }
            let pair = InformationPair::from_measurement(sensor, y)?;
            for r in 0..m {
                values[(i, r)] = pair.vector[r];
            }
            for (k, v) in pair.matrix.iter().enumerate() {
                values[(i, m + k)] = *v;
            }
        }

        let events = match consensus {
            Consensus::ExactAverage => {
                let mean = values.row_mean();
                for i in 0..n {
                    values.row_mut(i).copy_from(&mean);
                }
                Vec::new()
            }
            Consensus::Gossip { plan, rounds } => {
                if rounds == 0 {
                    return Err(Error::InvalidParameter(
                        "consensus rounds K must be at least 1".into(),
                    ));
                }
                if plan.n() != n {
                    return Err(Error::DimensionMismatch {
                        context: "gossip plan",
                        expected: n,
                        found: plan.n(),
                    });
                }
                let events = gossip::sample_events(plan, rounds, rng);
                gossip::apply_rounds(&mut values, &events);
                events
            }
        };

        for (i, node) in self.nodes.iter_mut().enumerate() {
            let q = DVector::from_iterator(m, (0..m).map(|r| values[(i, r)]));
            let s = linalg::symmetrized(DMatrix::from_iterator(
                m,
                m,
                (0..m * m).map(|k| values[(i, m + k)]),
            ));
            let post = info_measurement_update(node, &s, &q)?;
            *node = predict(&post, &self.a, &self.q_scaled);
        }
        Ok(events)
    }
}

/// Runs the filter over a measurement stream (`measurements[k][i]`) and
/// returns the posterior estimates `estimates[k][i]`.
pub fn algorithm1_run<R: Rng + ?Sized>(
    model: &StateModel,
    sensors: &[SensorModel],
    consensus: Consensus<'_>,
    measurements: &[Vec<DVector<f64>>],
    rng: &mut R,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let mut filter = Algorithm1::new(model, sensors.len());
    let mut out = Vec::with_capacity(measurements.len());
    for ys in measurements {
        filter.step(sensors, consensus, ys, rng)?;
        out.push(
            (0..filter.n())
                .map(|i| filter.estimate(i).clone())
                .collect(),
        );
    }
    Ok(out)
}
