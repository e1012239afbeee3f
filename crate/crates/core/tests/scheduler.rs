mod common;

use common::*;
use gossipkf::filters::{fused_information_matrix, steady_state_covariances, RiccatiOptions};
use gossipkf::linalg;
use gossipkf::model::{build_uniform_gossip_plan, GossipPlan, SensorModel, StateModel, Topology};
use gossipkf::scheduler::{
    certificate_from_fixed_point, g_hat, lmi_certificate_check, power_feasible, solve_exact,
    solve_greedy, solve_network, steady_trace, Method, PowerBudget, Selection,
};
use gossipkf::{DMatrix, DVector, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    model: StateModel,
    sensors: Vec<SensorModel>,
    topology: Topology,
    plan: GossipPlan,
    budget: PowerBudget,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..=6);
    let m = rng.random_range(1..=2);
    let a = DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            0.8 + 0.3 * rng.random::<f64>()
        } else {
            0.2 * rng.random::<f64>() - 0.1
        }
    });
    let model =
        StateModel::new(a, DMatrix::identity(m, m) * 0.05, DMatrix::identity(m, m)).unwrap();
    let sensors = (0..n)
        .map(|_| {
            let c = DMatrix::from_fn(1, m, |_, _| 0.2 + rng.random::<f64>());
            SensorModel::new(c, scalar(0.2 + rng.random::<f64>())).unwrap()
        })
        .collect();
    let mut topology = Topology::complete(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < 0.3 {
                topology.set(i, j, false);
            }
        }
    }
    let plan =
        build_uniform_gossip_plan(&gossipkf::model::symmetrize(&Topology::complete(n))).unwrap();
    let c = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (rng.random::<f64>() * 2.0).round() * 0.5
        }
    });
    let delta = DVector::from_fn(n, |_, _| 0.5 + 2.5 * rng.random::<f64>());
    let budget = PowerBudget::new(c, delta).unwrap();
    Instance {
        model,
        sensors,
        topology,
        plan,
        budget,
    }
}

#[test]
fn random_instances_exact_beats_greedy_and_rows_are_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0;
    for _ in 0..200 {
        let inst = random_instance(&mut rng);
        let exact = solve_network(
            &inst.model,
            &inst.sensors,
            &inst.topology,
            &inst.budget,
            &inst.plan,
            Method::Exact,
        );
        let greedy = solve_network(
            &inst.model,
            &inst.sensors,
            &inst.topology,
            &inst.budget,
            &inst.plan,
            Method::Greedy,
        );
        match (exact, greedy) {
            (Ok(e), Ok(g)) => {
                assert!(e.objective <= g.objective * (1.0 + 1e-9));
                for r in e.rows.iter().chain(&g.rows) {
                    assert!(power_feasible(
                        r.gamma_row(),
                        r.node(),
                        &inst.budget,
                        &inst.plan
                    ));
                }
                compared += 1;
            }
            (Err(Error::Unschedulable(_)), Err(Error::Unschedulable(_))) => {}
            (e, g) => panic!("exact {e:?} vs greedy {g:?}"),
        }
    }
    assert!(compared > 150);
}

#[test]
fn steady_trace_is_monotone_in_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let opts = RiccatiOptions::default();
    for _ in 0..200 {
        let inst = random_instance(&mut rng);
        let n = inst.sensors.len();
        let i = rng.random_range(0..n);
        let small: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        let big: Vec<bool> = small
            .iter()
            .map(|&b| b || rng.random::<f64>() < 0.5)
            .collect();
        let ts = steady_trace(
            &Selection::new(i, small).unwrap(),
            &inst.model,
            &inst.sensors,
            opts,
        )
        .unwrap()
        .value();
        let tb = steady_trace(
            &Selection::new(i, big).unwrap(),
            &inst.model,
            &inst.sensors,
            opts,
        )
        .unwrap()
        .value();
        assert!(tb <= ts + 1e-9, "{tb} > {ts}");
    }
}

#[test]
fn g_hat_is_below_h() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let inst = random_instance(&mut rng);
        let m = inst.model.dim();
        let n = inst.sensors.len();
        let l = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>());
        let x = &l * l.transpose() + DMatrix::identity(m, m) * 0.1;
        let row: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let g = g_hat(
            &x,
            &Selection::new(0, row).unwrap(),
            &inst.model,
            &inst.sensors,
        )
        .unwrap();
        let h = inst.model.a() * &x * inst.model.a().transpose() + inst.model.q();
        assert!(linalg::min_eigenvalue(&linalg::symmetrized(h - g)) >= -1e-12);
    }
}

#[test]
fn full_selection_matches_decentralized_steady_state() {
    let model = example1_model();
    let sensors = example1_sensors(&EXAMPLE1_GAINS);
    let t = example1_topology();
    for i in 0..5 {
        let row: Vec<bool> = (0..5).map(|j| t.gamma(j, i)).collect();
        let tr = steady_trace(
            &Selection::new(i, row).unwrap(),
            &model,
            &sensors,
            RiccatiOptions::default(),
        )
        .unwrap();
        let ss =
            steady_state_covariances(&model, &fused_information_matrix(i, &t, &sensors)).unwrap();
        assert!((tr.value() - ss.posterior.trace()).abs() < 1e-9);
    }
}

#[test]
fn exact_is_invariant_to_candidate_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = RiccatiOptions::default();
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        let n = inst.sensors.len();
        let mut cand: Vec<usize> = (1..n).collect();
        let a = solve_exact(
            0,
            &inst.model,
            &inst.sensors,
            &inst.budget,
            &inst.plan,
            &cand,
            opts,
        );
        cand.reverse();
        let b = solve_exact(
            0,
            &inst.model,
            &inst.sensors,
            &inst.budget,
            &inst.plan,
            &cand,
            opts,
        );
        assert_eq!(a, b);
    }
}

#[test]
fn budget_extremes() {
    let model = example1_model();
    let sensors = example1_sensors(&EXAMPLE1_GAINS);
    let plan = example1_plan();
    let opts = RiccatiOptions::default();
    let rich = PowerBudget::uniform(5, 1.0, 100.0).unwrap();
    let r = solve_exact(1, &model, &sensors, &rich, &plan, &[0, 3], opts).unwrap();
    assert_eq!(r.selection.links(), vec![0, 3]);
    let poor = PowerBudget::uniform(5, 1.0, 0.5).unwrap();
    let r = solve_exact(1, &model, &sensors, &poor, &plan, &[0, 3], opts).unwrap();
    assert!(r.selection.links().is_empty());
}

#[test]
fn zero_cost_links_are_all_taken_by_greedy() {
    let model = example1_model();
    let sensors = example1_sensors(&EXAMPLE1_GAINS);
    let plan = example1_plan();
    let free = PowerBudget::uniform(5, 0.0, 0.0).unwrap();
    let r = solve_greedy(
        2,
        &model,
        &sensors,
        &free,
        &plan,
        &[0, 1, 3, 4],
        RiccatiOptions::default(),
    )
    .unwrap();
    assert_eq!(r.selection.links(), vec![0, 1, 3, 4]);
}

#[test]
fn generous_budget_reproduces_decentralized_objective() {
    let model = example1_model();
    let sensors = example1_sensors(&EXAMPLE1_GAINS);
    let t = example1_topology();
    let rich = PowerBudget::uniform(5, 1.0, 100.0).unwrap();
    let res = solve_network(&model, &sensors, &t, &rich, &example1_plan(), Method::Exact).unwrap();
    let dec: f64 = (0..5)
        .map(|i| {
            steady_state_covariances(&model, &fused_information_matrix(i, &t, &sensors))
                .unwrap()
                .posterior
                .trace()
        })
        .sum::<f64>()
        / 5.0;
    assert!((res.objective - dec).abs() < 1e-9);
}

#[test]
fn example1_fixtures() {
    let model = example1_model();
    let sensors = example1_sensors(&EXAMPLE1_GAINS);
    let t = example1_topology();
    let plan = example1_plan();
    let b16 = PowerBudget::uniform(5, 1.0, 1.6).unwrap();
    let node1 = solve_exact(
        0,
        &model,
        &sensors,
        &b16,
        &plan,
        &t.incoming_neighbors(0),
        RiccatiOptions::default(),
    )
    .unwrap();
    let b2 = PowerBudget::uniform(5, 1.0, 2.0).unwrap();
    let net = solve_network(&model, &sensors, &t, &b2, &plan, Method::Exact).unwrap();
    assert_eq!(node1.selection.links(), vec![2]);
    assert!((node1.trace - 5.653146455939e-3).abs() < 1e-12);
    assert!((net.objective - 3.062952706818e-2).abs() < 1e-12);
}

#[test]
fn scalar_certificate_and_falsification_probe() {
    let model = StateModel::new(scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
    let sensors = vec![SensorModel::new(scalar(1.0), scalar(1.0)).unwrap()];
    let sel = Selection::self_only(0, 1);
    let (y, z) = certificate_from_fixed_point(&sel, &model, &sensors).unwrap();
    assert!(
        lmi_certificate_check(&y, &z, &sel, &model, &sensors)
            .unwrap()
            .valid
    );

    let unstable = StateModel::new(scalar(1.2), scalar(1.0), scalar(1.0)).unwrap();
    let none = Selection::empty(0, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let valid = (0..1000)
        .filter(|_| {
            let y = scalar(rng.random::<f64>() * 10.0);
            let z = scalar(rng.random::<f64>() * 10.0 - 5.0);
            lmi_certificate_check(&y, &z, &none, &unstable, &sensors)
                .unwrap()
                .valid
        })
        .count();
    println!("unobserved unstable scalar: {valid}/1000 random candidates pass");
}
