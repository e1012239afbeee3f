//! Randomized pairwise gossip: one round picks an ordered pair `(i, j)`
//! with probability `P_ij / n` and replaces both values by their average,
//! i.e. multiplies the value matrix by `W_ij = I - (e_i - e_j)(e_i - e_j)'/2`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::GossipPlan;

/// `W_ij` together with the pair that defines it.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix {
    pub i: usize,
    pub j: usize,
    pub matrix: DMatrix<f64>,
}

/// One sampled gossip round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GossipEvent {
    pub round: usize,
    pub i: usize,
    pub j: usize,
}

pub fn pairwise_matrix(i: usize, j: usize, n: usize) -> Result<PairwiseMatrix> {
    if i >= n || j >= n {
        return Err(Error::InvalidParameter(format!(
            "pair ({}, {}) out of range for n = {n}",
            i + 1,
            j + 1
        )));
    }
    if i == j {
        return Err(Error::DegeneratePair(i + 1));
    }
    let mut w = DMatrix::identity(n, n);
    w[(i, i)] = 0.5;
    w[(j, j)] = 0.5;
    w[(i, j)] = 0.5;
    w[(j, i)] = 0.5;
    Ok(PairwiseMatrix { i, j, matrix: w })
}

/// Wakes a node uniformly at random and draws its partner from row `i` of
/// `P` by inverse CDF over ascending partner ids.
pub fn sample_event<R: Rng + ?Sized>(plan: &GossipPlan, round: usize, rng: &mut R) -> GossipEvent {
    let n = plan.n();
    let i = rng.random_range(0..n);
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut chosen = None;
    for (j, p) in plan.partners(i) {
        cum += p;
        chosen = Some(j);
        if u < cum {
            break;
        }
    }
    // Row sums are 1 within 1e-12; `u` just below 1 falls through to the
    // last partner.
    let j = chosen.expect("validated plan rows have at least one partner");
    GossipEvent { round, i, j }
}

/// `k` consecutive rounds numbered `0..k`.
pub fn sample_events<R: Rng + ?Sized>(
    plan: &GossipPlan,
    k: usize,
    rng: &mut R,
) -> Vec<GossipEvent> {
    (0..k).map(|t| sample_event(plan, t, rng)).collect()
}

/// Averages rows `i` and `j` of `values` (an `n x d` matrix) in place.
pub fn apply_round(values: &mut DMatrix<f64>, event: &GossipEvent) {
    let (i, j) = (event.i, event.j);
    for c in 0..values.ncols() {
        let avg = 0.5 * (values[(i, c)] + values[(j, c)]);
        values[(i, c)] = avg;
        values[(j, c)] = avg;
    }
}

pub fn apply_rounds(values: &mut DMatrix<f64>, events: &[GossipEvent]) {
    for e in events {
        apply_round(values, e);
    }
}

/// `E[W] = (1/n) sum_ij P_ij W_ij`.
pub fn expected_matrix(plan: &GossipPlan) -> DMatrix<f64> {
    let n = plan.n();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, p) in plan.partners(i) {
            let wij = pairwise_matrix(i, j, n)
                .expect("partners are distinct")
                .matrix;
            w += wij * (p / n as f64);
        }
    }
    w
}

/// `E[W'W] = (1/n) sum_ij P_ij W_ij' W_ij`, built explicitly. Each `W_ij`
/// is a symmetric projection, so this equals [`expected_matrix`].
pub fn expected_second_moment(plan: &GossipPlan) -> DMatrix<f64> {
    let n = plan.n();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, p) in plan.partners(i) {
            let wij = pairwise_matrix(i, j, n)
                .expect("partners are distinct")
                .matrix;
            w += wij.transpose() * &wij * (p / n as f64);
        }
    }
    w
}

/// Second-largest eigenvalue (by value) of a symmetric matrix.
pub fn second_eigenvalue(w: &DMatrix<f64>) -> Result<f64> {
    if !linalg::is_square(w) {
        return Err(Error::DimensionMismatch {
            context: "second_eigenvalue",
            expected: w.nrows(),
            found: w.ncols(),
        });
    }
    if w.nrows() < 2 {
        return Err(Error::InvalidParameter(
            "second eigenvalue needs n >= 2".into(),
        ));
    }
    if !linalg::is_symmetric(w, linalg::SYMMETRY_TOL) {
        return Err(Error::NotSymmetric("expected gossip matrix"));
    }
    Ok(linalg::sorted_eigenvalues(w)[1])
}

/// Rounds needed for epsilon-averaging: `ceil(3 ln(1/eps) / ln(1/lambda2))`.
///
/// A non-positive `lambda2` means the expected matrix removes all
/// disagreement in one step; the result is then one round.
pub fn averaging_time(epsilon: f64, lambda2: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {epsilon} not in (0, 1)"
        )));
    }
    if !(lambda2 < 1.0) {
        return Err(Error::NotConvergent(lambda2));
    }
    if lambda2 <= 0.0 {
        return Ok(1);
    }
    let k = 3.0 * libm::log(1.0 / epsilon) / libm::log(1.0 / lambda2);
    Ok((libm::ceil(k) as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_uniform_gossip_plan, Topology};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pairwise_examples() {
        let w = pairwise_matrix(0, 1, 2).unwrap().matrix;
        assert_eq!(w, DMatrix::from_element(2, 2, 0.5));
        let w = pairwise_matrix(0, 2, 3).unwrap().matrix;
        assert_eq!(
            w,
            DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.5, 0.0, 1.0, 0.0, 0.5, 0.0, 0.5])
        );
        assert_eq!(pairwise_matrix(1, 1, 3), Err(Error::DegeneratePair(2)));
    }

    #[test]
    fn pairwise_matrix_properties() {
        for n in 2..7 {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = pairwise_matrix(i, j, n).unwrap().matrix;
                    assert_eq!(w, w.transpose());
                    assert!((&w * &w - &w).amax() <= 1e-12);
                    for r in 0..n {
                        assert!((w.row(r).sum() - 1.0).abs() <= 1e-12);
                        assert!((w.column(r).sum() - 1.0).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sampling_respects_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let two = build_uniform_gossip_plan(&Topology::complete(2)).unwrap();
        for t in 0..100 {
            let e = sample_event(&two, t, &mut rng);
            assert!((e.i, e.j) == (0, 1) || (e.i, e.j) == (1, 0));
        }
        let path = build_uniform_gossip_plan(&Topology::path(3)).unwrap();
        for t in 0..2000 {
            let e = sample_event(&path, t, &mut rng);
            assert!(!((e.i == 0 && e.j == 2) || (e.i == 2 && e.j == 0)));
            assert_ne!(e.i, e.j);
        }
    }

    #[test]
    fn apply_round_examples() {
        let mut v = DMatrix::from_row_slice(2, 1, &[2.0, 0.0]);
        apply_round(
            &mut v,
            &GossipEvent {
                round: 0,
                i: 0,
                j: 1,
            },
        );
        assert_eq!(v, DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));

        let mut v = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 5.0, 5.0]);
        let e = GossipEvent {
            round: 0,
            i: 0,
            j: 1,
        };
        apply_round(&mut v, &e);
        let once = DMatrix::from_row_slice(3, 2, &[0.5, 0.5, 0.5, 0.5, 5.0, 5.0]);
        assert_eq!(v, once);
        apply_round(&mut v, &e);
        assert_eq!(v, once);
    }

    #[test]
    fn expected_matrix_examples() {
        let two = build_uniform_gossip_plan(&Topology::complete(2)).unwrap();
        assert!((expected_matrix(&two) - DMatrix::from_element(2, 2, 0.5)).amax() < 1e-15);

        let three = build_uniform_gossip_plan(&Topology::complete(3)).unwrap();
        let closed = DMatrix::identity(3, 3) * 0.5 + DMatrix::from_element(3, 3, 1.0 / 6.0);
        assert!((expected_matrix(&three) - closed).amax() < 1e-15);
        assert!((second_eigenvalue(&expected_matrix(&three)).unwrap() - 0.5).abs() < 1e-12);
        assert!(second_eigenvalue(&expected_matrix(&two)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn disconnected_plan_is_block_diagonal_with_lambda2_one() {
        // Two disjoint edges {0,1} and {2,3}.
        let mut t = Topology::identity(4);
        t.set(0, 1, true);
        t.set(1, 0, true);
        t.set(2, 3, true);
        t.set(3, 2, true);
        let plan = build_uniform_gossip_plan(&t).unwrap();
        let w = expected_matrix(&plan);
        for i in 0..2 {
            for j in 2..4 {
                assert_eq!(w[(i, j)], 0.0);
                assert_eq!(w[(j, i)], 0.0);
            }
        }
        assert!((second_eigenvalue(&w).unwrap() - 1.0).abs() < 1e-12);
        assert!(averaging_time(0.01, second_eigenvalue(&w).unwrap().max(1.0)).is_err());
    }

    #[test]
    fn non_symmetric_rejected() {
        let w = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.2, 0.8]);
        assert_eq!(
            second_eigenvalue(&w),
            Err(Error::NotSymmetric("expected gossip matrix"))
        );
    }

    #[test]
    fn averaging_time_examples() {
        assert_eq!(averaging_time(0.01, 0.5), Ok(20));
        assert_eq!(averaging_time(0.1, 0.5), Ok(10));
        assert_eq!(averaging_time(0.01, 1.0), Err(Error::NotConvergent(1.0)));
        assert!(averaging_time(1.5, 0.5).is_err());
        assert_eq!(averaging_time(0.01, 0.0), Ok(1));
    }

    #[test]
    fn second_moment_matches_expectation() {
        let plan = build_uniform_gossip_plan(&Topology::ring(6)).unwrap();
        let a = second_eigenvalue(&expected_matrix(&plan)).unwrap();
        let b = second_eigenvalue(&expected_second_moment(&plan)).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }
}
