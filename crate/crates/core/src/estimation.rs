//! Cross-interval aggregation of Gramians for one mode.
//!
//! Every interval of mode `j` satisfies `Z_s = L^j Y_s`, so the sums do as
//! well: `Σ Z_s = L^j Σ Y_s`. Intervals too short to excite every direction
//! on their own can therefore be pooled until the summed `Y` is positive
//! definite, at which point `L^j` is recovered exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};
use crate::model::NodeId;
use crate::numerics::{frobenius, is_pd_above, min_sym_eigenvalue, serde_rows, solve_right, Matrix};
use crate::simulator::SegmentRecord;

/// When to stop accumulating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AccumulationPolicy {
    /// Solve at the earliest prefix whose summed `Y` exceeds `γI`.
    FirstCrossing,
    /// Sum every segment, then solve.
    #[default]
    All,
}

/// Recovered connectivity matrix for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub mode_label: u32,
    pub node_ids: Vec<NodeId>,
    #[serde(rename = "L_hat", with = "serde_rows")]
    pub l_hat: Matrix,
    /// Interval indices whose Gramians entered the solve.
    pub contributing_segments: Vec<usize>,
    /// Length of the shortest prefix whose summed `Y` exceeded `γI`.
    pub triggered_at: Option<usize>,
    #[serde(rename = "aggregated_Y_min_eig")]
    pub aggregated_y_min_eig: f64,
    pub error_vs_truth: Option<f64>,
}

/// Sums the terminal Gramians of `segments` (in order) and solves for `L`.
///
/// Returns `Ok(None)` when the summed `Y` never exceeds `γI`.
pub fn aggregate_mode(
    mode_label: u32,
    segments: &[&SegmentRecord],
    gamma: f64,
    policy: AccumulationPolicy,
) -> Result<Option<ModeEstimate>> {
    let first = segments
        .first()
        .ok_or_else(|| TopoError::Grouping("no segments to aggregate".into()))?;
    let nodes = &first.node_ids;
    if let Some(odd) = segments.iter().find(|s| &s.node_ids != nodes) {
        return Err(TopoError::Grouping(format!(
            "interval {} has nodes {:?}, interval {} has {:?}",
            first.interval_index, nodes, odd.interval_index, odd.node_ids
        )));
    }
    let n = nodes.len();
    let mut y_sum = Matrix::zeros(n, n);
    let mut z_sum = Matrix::zeros(n, n);
    let mut triggered_at = None;

    for (i, seg) in segments.iter().enumerate() {
        y_sum += &seg.y_s;
        z_sum += &seg.z_s;
        if triggered_at.is_none() && is_pd_above(&y_sum, gamma)? {
            triggered_at = Some(i + 1);
            if policy == AccumulationPolicy::FirstCrossing {
                break;
            }
        }
    }

    let used = match policy {
        AccumulationPolicy::FirstCrossing => match triggered_at {
            Some(k) => k,
            None => return Ok(None),
        },
        AccumulationPolicy::All => {
            if !is_pd_above(&y_sum, gamma)? {
                return Ok(None);
            }
            segments.len()
        }
    };

    Ok(Some(ModeEstimate {
        mode_label,
        node_ids: nodes.clone(),
        l_hat: solve_right(&z_sum, &y_sum)?,
        contributing_segments: segments[..used].iter().map(|s| s.interval_index).collect(),
        triggered_at,
        aggregated_y_min_eig: min_sym_eigenvalue(&y_sum)?,
        error_vs_truth: None,
    }))
}

/// `‖L̂ − L‖_F`.
pub fn estimation_error(l_hat: &Matrix, l_true: &Matrix) -> Result<f64> {
    if l_hat.shape() != l_true.shape() {
        return Err(TopoError::Dimension(format!(
            "estimate is {}x{}, truth is {}x{}",
            l_hat.nrows(),
            l_hat.ncols(),
            l_true.nrows(),
            l_true.ncols()
        )));
    }
    Ok(frobenius(&(l_hat - l_true)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::from_rows;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> Matrix {
        from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn seg(k: usize, nodes: &[NodeId], y: Matrix, z: Matrix) -> SegmentRecord {
        SegmentRecord {
            interval_index: k,
            node_ids: nodes.to_vec(),
            t_start: k as f64,
            t_end: k as f64 + 1.0,
            y_s: y,
            z_s: z,
            interval_estimate: None,
            crossing_time: None,
            true_mode: None,
        }
    }

    #[test]
    fn rank_one_complements_recover_l() {
        let a = seg(0, &[1, 2], mat(&[&[1.0, 0.0], &[0.0, 0.0]]), mat(&[&[1.0, 0.0], &[3.0, 0.0]]));
        let b = seg(1, &[1, 2], mat(&[&[0.0, 0.0], &[0.0, 1.0]]), mat(&[&[0.0, 2.0], &[0.0, 4.0]]));
        for policy in [AccumulationPolicy::FirstCrossing, AccumulationPolicy::All] {
            let est = aggregate_mode(1, &[&a, &b], 0.5, policy).unwrap().unwrap();
            assert_eq!(est.l_hat, mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
            assert_eq!(est.triggered_at, Some(2));
            assert_eq!(est.contributing_segments, vec![0, 1]);
        }
        assert!(aggregate_mode(1, &[&a], 0.5, AccumulationPolicy::All).unwrap().is_none());
    }

    #[test]
    fn zero_gramian_gives_nothing() {
        let s = seg(0, &[1, 2], Matrix::zeros(2, 2), Matrix::zeros(2, 2));
        assert!(aggregate_mode(0, &[&s], 0.1, AccumulationPolicy::All).unwrap().is_none());
        assert!(aggregate_mode(0, &[&s], 0.1, AccumulationPolicy::FirstCrossing).unwrap().is_none());
    }

    #[test]
    fn first_crossing_stops_early() {
        let l = mat(&[&[-1.0, 0.2], &[0.0, -2.0]]);
        let y = Matrix::identity(2, 2);
        let segs: Vec<_> = (0..3).map(|k| seg(k, &[1, 2], y.clone(), &l * &y)).collect();
        let refs: Vec<_> = segs.iter().collect();
        let est = aggregate_mode(0, &refs, 0.5, AccumulationPolicy::FirstCrossing).unwrap().unwrap();
        assert_eq!(est.contributing_segments, vec![0]);
        let est = aggregate_mode(0, &refs, 0.5, AccumulationPolicy::All).unwrap().unwrap();
        assert_eq!(est.contributing_segments, vec![0, 1, 2]);
        assert_eq!(est.triggered_at, Some(1));
        assert!((est.aggregated_y_min_eig - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_vertex_sets_rejected() {
        let a = seg(0, &[1, 2], Matrix::identity(2, 2), Matrix::identity(2, 2));
        let b = seg(1, &[1, 3], Matrix::identity(2, 2), Matrix::identity(2, 2));
        assert!(matches!(
            aggregate_mode(0, &[&a, &b], 0.1, AccumulationPolicy::All),
            Err(TopoError::Grouping(_))
        ));
        assert!(matches!(
            aggregate_mode(0, &[], 0.1, AccumulationPolicy::All),
            Err(TopoError::Grouping(_))
        ));
    }

    #[test]
    fn estimation_error_examples() {
        let l = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(estimation_error(&l, &l).unwrap(), 0.0);
        let off = &l + mat(&[&[3.0, 4.0], &[0.0, 0.0]]);
        assert!((estimation_error(&off, &l).unwrap() - 5.0).abs() < 1e-15);
        assert!(estimation_error(&l, &Matrix::zeros(3, 3)).is_err());
    }

    fn rank_one_segments(seed: u64, n: usize, count: usize) -> (Matrix, Vec<SegmentRecord>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = Matrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let nodes: Vec<NodeId> = (0..n as u32).collect();
        let segs = (0..count)
            .map(|k| {
                let v = nalgebra::DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let y = &v * v.transpose();
                seg(k, &nodes, y.clone(), &l * y)
            })
            .collect();
        (l, segs)
    }

    proptest! {
        #[test]
        fn aggregation_is_exact_and_order_independent(seed in any::<u64>(), n in 2usize..6) {
            let (l, segs) = rank_one_segments(seed, n, 4 * n);
            let refs: Vec<_> = segs.iter().collect();
            let est = aggregate_mode(0, &refs, 1e-6, AccumulationPolicy::All).unwrap();
            prop_assume!(est.is_some());
            let est = est.unwrap();
            prop_assert!(estimation_error(&est.l_hat, &l).unwrap() <= 1e-8 * (1.0 + frobenius(&l)));

            let mut rev = refs.clone();
            rev.reverse();
            let est_rev = aggregate_mode(0, &rev, 1e-6, AccumulationPolicy::All).unwrap().unwrap();
            prop_assert!(frobenius(&(est_rev.l_hat - &est.l_hat)) <= 1e-8 * (1.0 + frobenius(&l)));
        }

        #[test]
        fn adding_segments_never_lowers_min_eigenvalue(seed in any::<u64>(), n in 2usize..6) {
            let (_, segs) = rank_one_segments(seed, n, 3 * n);
            let mut sum = Matrix::zeros(n, n);
            let mut prev = min_sym_eigenvalue(&sum).unwrap();
            for s in &segs {
                sum += &s.y_s;
                let now = min_sym_eigenvalue(&sum).unwrap();
                prop_assert!(now >= prev - 1e-12 * (1.0 + frobenius(&sum)));
                prev = now;
            }
        }
    }
}
