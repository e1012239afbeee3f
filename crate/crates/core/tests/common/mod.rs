#![allow(dead_code)]

use gossipkf::model::{build_uniform_gossip_plan, GossipPlan, SensorModel, StateModel, Topology};
use gossipkf::DMatrix;

pub fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

pub fn example1_topology() -> Topology {
    let rows = [
        [1, 1, 0, 0, 0],
        [1, 1, 0, 1, 0],
        [1, 0, 1, 0, 0],
        [0, 0, 1, 1, 0],
        [0, 1, 0, 0, 1],
    ];
    let rows: Vec<Vec<bool>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| v == 1).collect())
        .collect();
    Topology::from_rows(&rows).unwrap()
}

pub fn example1_model() -> StateModel {
    StateModel::new(
        DMatrix::identity(2, 2) * 1.01,
        DMatrix::identity(2, 2) * 2e-5,
        DMatrix::identity(2, 2),
    )
    .unwrap()
}

/// Example 1 sensors with fixed gains.
pub fn example1_sensors(gains: &[f64]) -> Vec<SensorModel> {
    gains
        .iter()
        .map(|g| {
            SensorModel::new(
                DMatrix::identity(2, 2) * (2.0 * g),
                DMatrix::identity(2, 2) * 0.5,
            )
            .unwrap()
        })
        .collect()
}

pub const EXAMPLE1_GAINS: [f64; 5] = [0.9, 0.35, 0.6, 0.75, 0.2];

pub fn example1_plan() -> GossipPlan {
    build_uniform_gossip_plan(&example1_topology()).unwrap()
}

/// 3-node path with heterogeneous partial sensors.
pub fn toy() -> (StateModel, Vec<SensorModel>, Topology, GossipPlan) {
    let model = StateModel::new(
        DMatrix::from_row_slice(2, 2, &[0.95, 0.1, 0.0, 0.9]),
        DMatrix::identity(2, 2) * 0.1,
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let sensors = vec![
        SensorModel::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), scalar(0.5)).unwrap(),
        SensorModel::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), scalar(0.5)).unwrap(),
        SensorModel::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), scalar(0.5)).unwrap(),
    ];
    let topology = Topology::path(3);
    let plan = build_uniform_gossip_plan(&topology).unwrap();
    (model, sensors, topology, plan)
}
