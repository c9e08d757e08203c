//! Helpers shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use omas_topo::model::{InternalDynamics, ModeCount, ReferenceSpec};
use omas_topo::simulator::ExcitationConfig;
use omas_topo::{Matrix, ModeSpec, NodeId, Scenario, SwitchingSchedule};

/// One merge of the reference clustering: ids, height, merged size.
pub type OracleMerge = (usize, usize, f64, usize);

/// Greedy average linkage recomputing every cluster distance from the raw
/// matrix. Same id and tie conventions as the library: leaves are rows, the
/// cluster made at step `s` is `n + s`, and equal distances go to the pair
/// with the smallest `(min member, min member)`.
pub fn greedy_average_linkage(d: &Matrix, k: usize) -> (Vec<usize>, Vec<OracleMerge>) {
    let n = d.nrows();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    let mean = |a: &[usize], b: &[usize]| {
        let mut s = 0.0;
        for &i in a {
            for &j in b {
                s += d[(i, j)];
            }
        }
        s / (a.len() * b.len()) as f64
    };
    for step in 0..n - k {
        clusters.sort_by_key(|c| c.1[0]);
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..clusters.len() {
            for q in p + 1..clusters.len() {
                let v = mean(&clusters[p].1, &clusters[q].1);
                // pairs are visited in lexicographic key order, so only a
                // strictly smaller value (beyond rounding) replaces the best
                if best.is_none_or(|(bv, _, _)| v < bv - 1e-12 * (1.0 + bv.abs())) {
                    best = Some((v, p, q));
                }
            }
        }
        let (h, p, q) = best.unwrap();
        let (b_id, b_members) = clusters.remove(q);
        let (a_id, a_members) = clusters[p].clone();
        let mut members = a_members;
        members.extend(b_members);
        members.sort();
        merges.push((a_id, b_id, h, members.len()));
        clusters[p] = (n + step, members);
    }
    clusters.sort_by_key(|c| c.1[0]);
    let mut labels = vec![0; n];
    for (label, (_, members)) in clusters.iter().enumerate() {
        for &m in members {
            labels[m] = label;
        }
    }
    (labels, merges)
}

/// Symmetric matrix with zero diagonal and entries in (0, 10).
pub fn random_distances(rng: &mut impl rand::Rng, n: usize) -> Matrix {
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(0.01..10.0);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

pub fn mat(rows: &[&[f64]]) -> Matrix {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    Matrix::from_fn(r, c, |i, j| rows[i][j])
}

/// Single-vertex-set scenario with the preset's filter settings. `modes` are
/// `(id, L)` over nodes `1..=n`; `schedule` is `(start, mode)` pairs.
pub fn scenario(modes: &[(u32, Matrix)], schedule: &[(f64, u32)], horizon: f64) -> Scenario {
    let n = modes[0].1.nrows();
    let nodes: Vec<NodeId> = (1..=n as NodeId).collect();
    Scenario {
        modes: modes
            .iter()
            .map(|(id, l)| ModeSpec::new(*id, nodes.clone(), l.clone()).unwrap())
            .collect(),
        schedule: SwitchingSchedule {
            switch_times: schedule.iter().map(|s| s.0).collect(),
            mode_sequence: schedule.iter().map(|s| s.1).collect(),
            horizon,
        },
        excitation: ExcitationConfig { seed: 7, ..ExcitationConfig::default() },
        dynamics_f: InternalDynamics::Zero,
        initial_states: nodes.iter().map(|&i| (i, 0.5 - 0.3 * i as f64)).collect::<BTreeMap<_, _>>(),
        filter_gain: 0.05,
        gamma: 0.1,
        step: 1e-3,
        mode_counts: vec![ModeCount { nodes, count: modes.len() }],
        seed: 3,
        reference: ReferenceSpec::default(),
    }
}

/// The two-node single-interval check: `L = [[-1, 0.5], [0, -1]]`, 200 s.
pub fn two_node_long_dwell() -> Scenario {
    scenario(&[(1, mat(&[&[-1.0, 0.5], &[0.0, -1.0]]))], &[(0.0, 1)], 200.0)
}
