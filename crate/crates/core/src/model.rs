//! Plant, sensors, communication graph and gossip probabilities.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Row sums of a gossip plan must equal one to this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Linear time-invariant plant `x(k+1) = A x(k) + w(k)` with
/// `w ~ N(0, Q)` and `x(0) ~ N(0, Pi0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateModel {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    pi0: DMatrix<f64>,
}

impl StateModel {
    /// Checks shapes and that `Q` and `Pi0` are symmetric PSD.
    /// Controllability of `(A, Q^{1/2})` is reported separately by
    /// [`StateModel::is_controllable`] because degenerate analysis
    /// instances (e.g. `Q = 0`) are legitimate inputs to the filters.
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>, pi0: DMatrix<f64>) -> Result<Self> {
        let m = a.nrows();
        if m == 0 || !linalg::is_square(&a) {
            return Err(Error::InvalidModel(format!(
                "A must be a non-empty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        for (name, mat) in [("Q", &q), ("Pi0", &pi0)] {
            if mat.shape() != (m, m) {
                return Err(Error::InvalidModel(format!(
                    "{name} must be {m}x{m}, got {}x{}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if !linalg::is_symmetric(mat, linalg::SYMMETRY_TOL) {
                return Err(Error::InvalidModel(format!("{name} is not symmetric")));
            }
            if !linalg::is_psd(mat, 1e-12) {
                return Err(Error::InvalidModel(format!(
                    "{name} is not positive semi-definite"
                )));
            }
        }
        Ok(Self { a, q, pi0 })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn pi0(&self) -> &DMatrix<f64> {
        &self.pi0
    }

    /// Rank test on the controllability matrix of `(A, Q^{1/2})`.
    pub fn is_controllable(&self) -> bool {
        let b = linalg::psd_sqrt(&self.q);
        linalg::rank(&linalg::controllability_matrix(&self.a, &b)) == self.dim()
    }
}

/// Sensor `i`: `y_i(k) = C_i x(k) + v_i(k)`, `v_i ~ N(0, R_i)`.
///
/// The per-sensor information quantities are cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    c: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    /// `C' R^{-1}`, maps a measurement to its information vector.
    info_gain: DMatrix<f64>,
    /// `C' R^{-1} C`.
    info_matrix: DMatrix<f64>,
}

impl SensorModel {
    pub fn new(c: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let p = c.nrows();
        if p == 0 || c.ncols() == 0 {
            return Err(Error::InvalidModel(format!(
                "C must be non-empty, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if r.shape() != (p, p) {
            return Err(Error::InvalidModel(format!(
                "R must be {p}x{p}, got {}x{}",
                r.nrows(),
                r.ncols()
            )));
        }
        if !linalg::is_pd(&r) {
            return Err(Error::InvalidModel(
                "R is not symmetric positive definite".into(),
            ));
        }
        let r_inv = linalg::spd_inverse(&r).ok_or(Error::Singular("R"))?;
        let info_gain = c.transpose() * &r_inv;
        let info_matrix = linalg::symmetrized(&info_gain * &c);
        Ok(Self {
            c,
            r,
            r_inv,
            info_gain,
            info_matrix,
        })
    }

    /// Output dimension `p_i`.
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// State dimension `m`.
    pub fn state_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn information_gain(&self) -> &DMatrix<f64> {
        &self.info_gain
    }

    pub fn information_matrix(&self) -> &DMatrix<f64> {
        &self.info_matrix
    }

    /// `H` with `H'H = C' R^{-1} C`: `H = L' C` where `R^{-1} = L L'`.
    pub fn information_factor(&self) -> DMatrix<f64> {
        let l = self
            .r_inv
            .clone()
            .cholesky()
            .map(|ch| ch.l())
            .unwrap_or_else(|| linalg::psd_sqrt(&self.r_inv));
        l.transpose() * &self.c
    }

    /// Same sensor with its output map multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self::new(&self.c * gain, self.r.clone()).expect("scaling keeps R valid")
    }

    /// Rank test on the observability matrix of `(A, C_i)`.
    pub fn is_observable(&self, model: &StateModel) -> bool {
        self.state_dim() == model.dim()
            && linalg::rank(&linalg::observability_matrix(model.a(), &self.c)) == model.dim()
    }
}

/// Communication graph given by a binary adjacency matrix. `gamma(i, j)`
/// means node `j` receives data from node `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    gamma: Vec<bool>,
}

impl Topology {
    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidModel("topology has no nodes".into()));
        }
        let mut gamma = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidModel(format!(
                    "adjacency row {} has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            gamma.extend_from_slice(row);
        }
        Ok(Self { n, gamma })
    }

    /// Builds from a numeric matrix whose entries must be exactly 0 or 1.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if !linalg::is_square(m) || m.nrows() == 0 {
            return Err(Error::InvalidModel(format!(
                "adjacency must be non-empty square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        let mut gamma = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v == 0.0 {
                    gamma.push(false);
                } else if v == 1.0 {
                    gamma.push(true);
                } else {
                    return Err(Error::InvalidModel(format!(
                        "adjacency entry ({}, {}) = {v} is not binary",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { n, gamma })
    }

    pub fn identity(n: usize) -> Self {
        let mut gamma = alloc::vec![false; n * n];
        for i in 0..n {
            gamma[i * n + i] = true;
        }
        Self { n, gamma }
    }

    pub fn complete(n: usize) -> Self {
        Self {
            n,
            gamma: alloc::vec![true; n * n],
        }
    }

    /// Path `0 - 1 - ... - n-1` with self-loops.
    pub fn path(n: usize) -> Self {
        let mut t = Self::identity(n);
        for i in 1..n {
            t.set(i - 1, i, true);
            t.set(i, i - 1, true);
        }
        t
    }

    /// Cycle on `n >= 3` nodes with self-loops.
    pub fn ring(n: usize) -> Self {
        let mut t = Self::path(n);
        if n >= 3 {
            t.set(0, n - 1, true);
            t.set(n - 1, 0, true);
        }
        t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma(&self, i: usize, j: usize) -> bool {
        self.gamma[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.gamma[i * self.n + j] = value;
    }

    /// `N_i = { j : gamma_ji = 1 }`, ascending.
    pub fn incoming_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.gamma(j, i)).collect()
    }

    /// `O_i = { j : gamma_ij = 1 }`, ascending.
    pub fn outgoing_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.gamma(i, j)).collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.incoming_neighbors(i).len()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.outgoing_neighbors(i).len()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.gamma(i, j) == self.gamma(j, i)))
    }

    /// Connectivity of the undirected graph obtained by symmetrizing.
    pub fn is_connected(&self) -> bool {
        let sym = symmetrize(self);
        let mut seen = alloc::vec![false; self.n];
        let mut stack = alloc::vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for (j, s) in seen.iter_mut().enumerate() {
                if sym.gamma(i, j) && !*s {
                    *s = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.n,
            self.n,
            |i, j| if self.gamma(i, j) { 1.0 } else { 0.0 },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// Structural finding from [`validate_topology`]. Node ids are zero-based;
/// `Display` prints them one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyIssue {
    MissingSelfLoop(usize),
    /// `gamma_ij != gamma_ji`, reported once with `i < j`.
    Asymmetric(usize, usize),
    /// No link to or from any other node.
    IsolatedNode(usize),
}

impl TopologyIssue {
    pub fn severity(&self) -> Severity {
        match self {
            TopologyIssue::MissingSelfLoop(_) => Severity::Error,
            TopologyIssue::Asymmetric(..) | TopologyIssue::IsolatedNode(_) => Severity::Warning,
        }
    }
}

impl fmt::Display for TopologyIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyIssue::MissingSelfLoop(i) => write!(f, "missing self-loop at node {}", i + 1),
            TopologyIssue::Asymmetric(i, j) => {
                write!(f, "asymmetric link between nodes {} and {}", i + 1, j + 1)
            }
            TopologyIssue::IsolatedNode(i) => write!(f, "node {} is isolated", i + 1),
        }
    }
}

/// Lists missing self-loops (errors), asymmetric pairs and isolated nodes
/// (warnings). Empty iff every invariant holds.
pub fn validate_topology(topology: &Topology) -> Vec<TopologyIssue> {
    let n = topology.n();
    let mut issues = Vec::new();
    for i in 0..n {
        if !topology.gamma(i, i) {
            issues.push(TopologyIssue::MissingSelfLoop(i));
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if topology.gamma(i, j) != topology.gamma(j, i) {
                issues.push(TopologyIssue::Asymmetric(i, j));
            }
        }
    }
    for i in 0..n {
        let linked = (0..n).any(|j| j != i && (topology.gamma(i, j) || topology.gamma(j, i)));
        if !linked {
            issues.push(TopologyIssue::IsolatedNode(i));
        }
    }
    issues
}

/// Elementwise OR of `Gamma` and `Gamma'`.
pub fn symmetrize(topology: &Topology) -> Topology {
    let n = topology.n();
    let mut out = topology.clone();
    for i in 0..n {
        for j in 0..n {
            if topology.gamma(j, i) {
                out.set(i, j, true);
            }
        }
    }
    out
}

/// Pair-selection probabilities `P`: an awake node `i` contacts `j` with
/// probability `P_ij`. Nodes wake up uniformly, so the ordered pair
/// `(i, j)` is selected with probability `P_ij / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipPlan {
    p: DMatrix<f64>,
}

impl GossipPlan {
    /// Validates an explicit matrix against the symmetrized `topology`:
    /// nonnegative, zero diagonal, rows summing to one, support on edges.
    pub fn from_matrix(p: DMatrix<f64>, topology: &Topology) -> Result<Self> {
        let n = topology.n();
        if p.shape() != (n, n) {
            return Err(Error::InvalidPlan(format!(
                "P must be {n}x{n}, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        let sym = symmetrize(topology);
        for i in 0..n {
            if p[(i, i)] != 0.0 {
                return Err(Error::InvalidPlan(format!("P_{0}{0} must be zero", i + 1)));
            }
            let mut sum = 0.0;
            for j in 0..n {
                let v = p[(i, j)];
                if !(v >= 0.0) {
                    return Err(Error::InvalidPlan(format!(
                        "P_({},{}) = {v} is negative",
                        i + 1,
                        j + 1
                    )));
                }
                if v > 0.0 && !sym.gamma(i, j) {
                    return Err(Error::InvalidPlan(format!(
                        "P_({},{}) > 0 but nodes {} and {} are not linked",
                        i + 1,
                        j + 1,
                        i + 1,
                        j + 1
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidPlan(format!(
                    "row {} sums to {sum}, not 1",
                    i + 1
                )));
            }
        }
        Ok(Self { p })
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.p[(i, j)]
    }

    /// `(j, P_ij)` for every `j` with `P_ij > 0`, ascending in `j`.
    pub fn partners(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n()).filter_map(move |j| {
            let v = self.p[(i, j)];
            (v > 0.0).then_some((j, v))
        })
    }
}

/// Uniform partner selection over each node's symmetrized neighbours.
pub fn build_uniform_gossip_plan(topology: &Topology) -> Result<GossipPlan> {
    let sym = symmetrize(topology);
    let n = sym.n();
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let nbrs: Vec<usize> = (0..n).filter(|&j| j != i && sym.gamma(i, j)).collect();
        if nbrs.is_empty() {
            return Err(Error::IsolatedNode(i + 1));
        }
        let w = 1.0 / nbrs.len() as f64;
        for j in nbrs {
            p[(i, j)] = w;
        }
    }
    Ok(GossipPlan { p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    pub(crate) fn example1_topology() -> Topology {
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

    #[test]
    fn identity_topology_only_warns() {
        let issues = validate_topology(&Topology::identity(3));
        assert_eq!(
            issues,
            vec![
                TopologyIssue::IsolatedNode(0),
                TopologyIssue::IsolatedNode(1),
                TopologyIssue::IsolatedNode(2)
            ]
        );
        assert!(issues.iter().all(|i| i.severity() == Severity::Warning));
    }

    #[test]
    fn example1_asymmetries() {
        let issues = validate_topology(&example1_topology());
        // one-based: (1,3), (2,4), (2,5), (3,4)
        assert_eq!(
            issues,
            vec![
                TopologyIssue::Asymmetric(0, 2),
                TopologyIssue::Asymmetric(1, 3),
                TopologyIssue::Asymmetric(1, 4),
                TopologyIssue::Asymmetric(2, 3),
            ]
        );
    }

    #[test]
    fn missing_self_loop_is_an_error() {
        let mut t = Topology::complete(3);
        t.set(0, 0, false);
        let issues = validate_topology(&t);
        assert_eq!(issues, vec![TopologyIssue::MissingSelfLoop(0)]);
        assert_eq!(issues[0].severity(), Severity::Error);
        assert_eq!(
            alloc::format!("{}", issues[0]),
            "missing self-loop at node 1"
        );
    }

    #[test]
    fn neighbor_sets_follow_columns() {
        let t = example1_topology();
        // N_i = { j : gamma_ji = 1 } reads column i.
        assert_eq!(t.incoming_neighbors(0), vec![0, 1, 2]);
        assert_eq!(t.incoming_neighbors(1), vec![0, 1, 4]);
        assert_eq!(t.incoming_neighbors(3), vec![1, 3]);
        assert_eq!(t.outgoing_neighbors(1), vec![0, 1, 3]);
        assert_eq!(t.in_degree(2), 2);
    }

    #[test]
    fn symmetrize_example1() {
        let s = symmetrize(&example1_topology());
        assert!(s.is_symmetric());
        for (i, j) in [(0, 2), (1, 3), (1, 4), (2, 3)] {
            assert!(s.gamma(i, j) && s.gamma(j, i));
        }
        assert!(!s.gamma(0, 3));
        assert_eq!(symmetrize(&Topology::identity(4)), Topology::identity(4));
        let c = Topology::complete(3);
        assert_eq!(symmetrize(&c), c);
    }

    #[test]
    fn uniform_plans() {
        let p = build_uniform_gossip_plan(&Topology::complete(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p.prob(i, j), if i == j { 0.0 } else { 0.5 });
            }
        }
        let p = build_uniform_gossip_plan(&Topology::path(3)).unwrap();
        assert_eq!(p.prob(0, 1), 1.0);
        assert_eq!(p.prob(1, 0), 0.5);
        assert_eq!(p.prob(1, 2), 0.5);
        assert_eq!(p.prob(2, 1), 1.0);
        assert_eq!(
            build_uniform_gossip_plan(&Topology::identity(3)),
            Err(Error::IsolatedNode(1))
        );
    }

    #[test]
    fn explicit_plan_validation() {
        let t = Topology::path(3);
        let bad_support =
            DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0]);
        assert!(matches!(
            GossipPlan::from_matrix(bad_support, &t),
            Err(Error::InvalidPlan(_))
        ));
        let bad_sum = DMatrix::from_row_slice(3, 3, &[0.0, 0.9, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0]);
        assert!(GossipPlan::from_matrix(bad_sum, &t).is_err());
        let ok = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.25, 0.0, 0.75, 0.0, 1.0, 0.0]);
        assert!(GossipPlan::from_matrix(ok, &t).is_ok());
    }

    #[test]
    fn model_validation() {
        let a = DMatrix::identity(2, 2);
        let bad_q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(StateModel::new(a.clone(), bad_q, DMatrix::identity(2, 2)).is_err());
        let m =
            StateModel::new(a.clone(), DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert!(m.is_controllable());
        let q_rank1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let m = StateModel::new(a, q_rank1, DMatrix::identity(2, 2)).unwrap();
        assert!(!m.is_controllable());
    }

    #[test]
    fn sensor_information_quantities() {
        let s = SensorModel::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 8.0]);
        assert!((s.information_matrix() - &expected).norm() < 1e-14);
        let h = s.information_factor();
        assert!((h.transpose() * &h - expected).norm() < 1e-12);
        assert!(SensorModel::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).is_err());
    }
}
