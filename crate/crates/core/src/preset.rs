//! The built-in benchmark scenario: an 8-agent network with two interaction
//! modes that two more agents join, giving a 10-agent network with three
//! modes. The switching sequence revisits every mode several times and mixes
//! long intervals (individually identifiable) with short ones (only
//! identifiable after aggregation).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    InternalDynamics, ModeCount, ModeId, ModeSpec, NodeId, ReferenceInit, ReferenceMatrix,
    ReferenceSpec, Scenario, SwitchingSchedule,
};
use crate::numerics::{frobenius, Matrix};
use crate::simulator::ExcitationConfig;

pub const FILTER_GAIN: f64 = 0.05;
pub const GAMMA: f64 = 0.1;
pub const STEP: f64 = 1e-3;

/// Occurrences of each mode in the switching sequence.
const VISITS_PER_MODE: usize = 4;
const LONG_DWELL: (f64, f64) = (25.0, 40.0);
const SHORT_DWELL: (f64, f64) = (2.0, 4.0);

/// Random Hurwitz connectivity matrix: sparse weighted off-diagonal edges and
/// a negative diagonal that strictly dominates each row.
fn random_connectivity(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(0.3) {
                let w = rng.random_range(0.2..1.0);
                l[(i, j)] = if rng.random_bool(0.5) { w } else { -w };
            }
        }
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| l[(i, j)].abs()).sum();
        l[(i, i)] = -(off + rng.random_range(0.5..1.5));
    }
    l
}

fn distinct_modes(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<Matrix> {
    loop {
        let ls: Vec<Matrix> = (0..count).map(|_| random_connectivity(rng, n)).collect();
        let separated = (0..count)
            .all(|i| (i + 1..count).all(|j| frobenius(&(&ls[i] - &ls[j])) >= 1.0));
        if separated {
            return ls;
        }
    }
}

/// Directed ring with self-loops, used as the observer's reference topology.
fn ring_reference(n: usize) -> Matrix {
    let mut l = Matrix::identity(n, n) * -1.0;
    for i in 0..n {
        l[(i, (i + 1) % n)] = 0.5;
    }
    l
}

/// Mode order with every mode appearing `VISITS_PER_MODE` times, starting in
/// mode 1 and never repeating a mode back to back.
fn mode_sequence(rng: &mut ChaCha8Rng, modes: &[ModeId]) -> Vec<ModeId> {
    loop {
        let mut seq: Vec<ModeId> = modes
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, VISITS_PER_MODE))
            .collect();
        seq.shuffle(rng);
        if seq[0] == modes[0] && seq.windows(2).all(|w| w[0] != w[1]) {
            return seq;
        }
    }
}

/// Builds the benchmark scenario. Every random choice derives from `seed`.
pub fn benchmark_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small: Vec<NodeId> = (1..=8).collect();
    let large: Vec<NodeId> = (1..=10).collect();

    let mut modes = Vec::new();
    for (k, l) in distinct_modes(&mut rng, 8, 2).into_iter().enumerate() {
        modes.push(ModeSpec::new(k as ModeId + 1, small.clone(), l).expect("square"));
    }
    for (k, l) in distinct_modes(&mut rng, 10, 3).into_iter().enumerate() {
        modes.push(ModeSpec::new(k as ModeId + 3, large.clone(), l).expect("square"));
    }

    let ids: Vec<ModeId> = modes.iter().map(|m| m.id).collect();
    let sequence = mode_sequence(&mut rng, &ids);

    // each mode gets half its visits long and half short
    let mut long_left: BTreeMap<ModeId, usize> = ids.iter().map(|&m| (m, VISITS_PER_MODE / 2)).collect();
    let mut switch_times = Vec::with_capacity(sequence.len());
    let mut t = 0.0;
    for (k, &m) in sequence.iter().enumerate() {
        let remaining = sequence[k..].iter().filter(|&&x| x == m).count();
        let need_long = long_left[&m];
        let long = need_long > 0 && (need_long >= remaining || rng.random_bool(0.5));
        let (lo, hi) = if long { LONG_DWELL } else { SHORT_DWELL };
        if long {
            *long_left.get_mut(&m).unwrap() -= 1;
        }
        switch_times.push(t);
        // switch times on a millisecond grid
        let dwell: f64 = rng.random_range(lo..hi);
        t = ((t + dwell) * 1000.0).round() / 1000.0;
    }
    let horizon = t;

    let initial_states = small
        .iter()
        .map(|&id| (id, rng.random_range(-1.0..1.0)))
        .collect();

    let excitation = ExcitationConfig {
        frequencies: (0..8).map(|j| 0.3 + 0.45 * j as f64).collect(),
        amplitudes: vec![1.5; 8],
        phases: Vec::new(),
        seed: rng.random(),
        min_order: Some(10),
        enabled: true,
    };

    Scenario {
        modes,
        schedule: SwitchingSchedule { switch_times, mode_sequence: sequence, horizon },
        excitation,
        dynamics_f: InternalDynamics::Zero,
        initial_states,
        filter_gain: FILTER_GAIN,
        gamma: GAMMA,
        step: STEP,
        mode_counts: vec![
            ModeCount { nodes: small.clone(), count: 2 },
            ModeCount { nodes: large.clone(), count: 3 },
        ],
        seed,
        reference: ReferenceSpec {
            default: ReferenceInit::Zero,
            per_vertex_set: vec![
                ReferenceMatrix { nodes: small, matrix: ring_reference(8) },
                ReferenceMatrix { nodes: large, matrix: ring_reference(10) },
            ],
        },
    }
}

/// Intervals in [`short_dwell_scenario`].
pub const SHORT_INTERVALS: usize = 30;

/// A single 5-agent mode visited in `SHORT_INTERVALS` consecutive short
/// intervals. No interval alone gathers enough excitation for its Gramian
/// to exceed `γI`, so the mode is only identifiable by aggregation.
pub fn short_dwell_scenario(seed: u64) -> Scenario {
    short_dwell_with(seed, SHORT_DWELL_RANGE)
}

const SHORT_DWELL_RANGE: (f64, f64) = (1.0, 1.5);

pub fn short_dwell_with(seed: u64, (lo, hi): (f64, f64)) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<NodeId> = (1..=5).collect();
    let l = random_connectivity(&mut rng, 5);
    let mut switch_times = Vec::with_capacity(SHORT_INTERVALS);
    let mut t = 0.0;
    for _ in 0..SHORT_INTERVALS {
        switch_times.push(t);
        let dwell: f64 = rng.random_range(lo..hi);
        t = ((t + dwell) * 1000.0).round() / 1000.0;
    }
    let initial_states = nodes.iter().map(|&id| (id, rng.random_range(-1.0..1.0))).collect();
    Scenario {
        modes: vec![ModeSpec::new(1, nodes.clone(), l).expect("square")],
        schedule: SwitchingSchedule {
            switch_times,
            mode_sequence: vec![1; SHORT_INTERVALS],
            horizon: t,
        },
        excitation: ExcitationConfig {
            frequencies: (0..5).map(|j| 0.3 + 0.45 * j as f64).collect(),
            amplitudes: vec![1.5; 5],
            phases: Vec::new(),
            seed: rng.random(),
            min_order: None,
            enabled: true,
        },
        dynamics_f: InternalDynamics::Zero,
        initial_states,
        filter_gain: FILTER_GAIN,
        gamma: GAMMA,
        step: STEP,
        mode_counts: vec![ModeCount { nodes, count: 1 }],
        seed,
        reference: ReferenceSpec::default(),
    }
}
