//! Gossip on state estimates: fused local update, then `K` pairwise
//! averaging rounds on the stacked intermediate estimates, then the time
//! update. Covariances follow the decentralized recursion and are not
//! exchanged.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{fused_updates, time_update, FilterState};
use crate::error::{Error, Result};
use crate::gossip::{self, GossipEvent};
use crate::model::{GossipPlan, SensorModel, StateModel, Topology};

/// Advances the bank by one measurement interval and returns the gossip
/// events applied. With `rounds == 0` the result is bit-identical to
/// [`super::decentralized_step`].
#[allow(clippy::too_many_arguments)]
pub fn algorithm2_step<R: Rng + ?Sized>(
    bank: &mut [FilterState],
    model: &StateModel,
    topology: &Topology,
    sensors: &[SensorModel],
    plan: &GossipPlan,
    rounds: usize,
    measurements: &[DVector<f64>],
    rng: &mut R,
) -> Result<Vec<GossipEvent>> {
    if plan.n() != topology.n() {
        return Err(Error::DimensionMismatch {
            context: "gossip plan",
            expected: topology.n(),
            found: plan.n(),
        });
    }
    fused_updates(bank, topology, sensors, measurements)?;

    let events = gossip::sample_events(plan, rounds, rng);
    if !events.is_empty() {
        let m = model.dim();
        let mut phi = DMatrix::from_fn(bank.len(), m, |i, c| bank[i].x_post[c]);
        gossip::apply_rounds(&mut phi, &events);
        for (i, state) in bank.iter_mut().enumerate() {
            state.x_post = DVector::from_iterator(m, phi.row(i).iter().copied());
        }
    }

    for state in bank.iter_mut() {
        *state = time_update(state, model);
    }
    Ok(events)
}
