//! Scenario description for a switched open multi-agent system: interaction
//! modes, the switching schedule, and structural/assumption checks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};
use crate::numerics::{serde_rows, Matrix};
use crate::simulator::ExcitationConfig;

pub type NodeId = u32;
pub type ModeId = u32;

/// Default magnitude below which matrix entries are not reported as edges.
pub const DEFAULT_EDGE_TOL: f64 = 1e-9;

/// One interaction topology: the agents taking part and the connectivity
/// matrix between them. Entry `(i, l)` of `connectivity` is the weight of the
/// edge `nodes[l] -> nodes[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub id: ModeId,
    pub nodes: Vec<NodeId>,
    #[serde(rename = "L", with = "serde_rows")]
    pub connectivity: Matrix,
}

impl ModeSpec {
    pub fn new(id: ModeId, nodes: Vec<NodeId>, connectivity: Matrix) -> Result<Self> {
        let spec = Self { id, nodes, connectivity };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        let n = self.nodes.len();
        if !self.connectivity.is_square() || self.connectivity.nrows() != n {
            return Err(TopoError::Dimension(format!(
                "mode {}: L is {}x{} but has {n} nodes",
                self.id,
                self.connectivity.nrows(),
                self.connectivity.ncols()
            )));
        }
        let distinct: BTreeSet<_> = self.nodes.iter().collect();
        if distinct.len() != n {
            return Err(TopoError::Validation(format!("mode {}: duplicate node ids", self.id)));
        }
        if self.connectivity.iter().any(|x| !x.is_finite()) {
            return Err(TopoError::Validation(format!("mode {}: non-finite entry in L", self.id)));
        }
        Ok(())
    }

    /// The node set as a sorted key, used to group segments.
    pub fn vertex_set(&self) -> VertexSet {
        VertexSet::from_nodes(&self.nodes)
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }
}

/// Identity of an agent set, independent of listing order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexSet(pub Vec<NodeId>);

impl VertexSet {
    pub fn from_nodes(nodes: &[NodeId]) -> Self {
        let mut v = nodes.to_vec();
        v.sort_unstable();
        v.dedup();
        VertexSet(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Display for VertexSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
        write!(f, "{{{}}}", ids.join(","))
    }
}

/// Switching instants `0 = t^0 < t^1 < ... < t^κ`, the mode active on each
/// interval, and the simulation horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingSchedule {
    pub switch_times: Vec<f64>,
    pub mode_sequence: Vec<ModeId>,
    pub horizon: f64,
}

impl SwitchingSchedule {
    pub fn num_intervals(&self) -> usize {
        self.switch_times.len()
    }

    /// `[start, end)` of interval `k`; the last interval ends at the horizon.
    pub fn interval_bounds(&self, k: usize) -> (f64, f64) {
        let start = self.switch_times[k];
        let end = self.switch_times.get(k + 1).copied().unwrap_or(self.horizon);
        (start, end)
    }

    pub fn dwell_time(&self, k: usize) -> f64 {
        let (a, b) = self.interval_bounds(k);
        b - a
    }

    fn structural_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.switch_times.is_empty() {
            errs.push("schedule has no intervals".to_string());
            return errs;
        }
        if self.switch_times.len() != self.mode_sequence.len() {
            errs.push(format!(
                "{} switch times but {} mode entries",
                self.switch_times.len(),
                self.mode_sequence.len()
            ));
        }
        if self.switch_times[0] != 0.0 {
            errs.push(format!("first switch time must be 0, got {}", self.switch_times[0]));
        }
        if self.switch_times.iter().any(|t| !t.is_finite()) || !self.horizon.is_finite() {
            errs.push("non-finite switch time or horizon".to_string());
        }
        for (k, w) in self.switch_times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                errs.push(format!("switch times not strictly increasing at index {}", k + 1));
            }
        }
        let last = *self.switch_times.last().unwrap();
        if !(self.horizon > last) {
            errs.push(format!("horizon {} must exceed last switch time {last}", self.horizon));
        }
        errs
    }
}

/// Interval index and active mode at time `t`. Intervals are left-closed and
/// right-open; `t` must lie in `[0, horizon)`.
pub fn mode_at(schedule: &SwitchingSchedule, t: f64) -> Result<(usize, ModeId)> {
    let start = schedule.switch_times.first().copied().unwrap_or(0.0);
    if !(t >= start && t < schedule.horizon) || schedule.mode_sequence.is_empty() {
        return Err(TopoError::Range { t, start, end: schedule.horizon });
    }
    // number of switch times <= t, minus one
    let k = schedule.switch_times.partition_point(|&s| s <= t) - 1;
    Ok((k, schedule.mode_sequence[k]))
}

/// Known per-node internal dynamics `f_i(x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InternalDynamics {
    #[default]
    Zero,
    /// `f_i(x_i) = a_i x_i`; nodes without a coefficient use `a_i = 0`.
    LinearDiagonal { coefficients: BTreeMap<NodeId, f64> },
}

impl InternalDynamics {
    /// Writes `f_i(x_i)` for each active node into `out`.
    pub fn eval_into(&self, nodes: &[NodeId], x: &[f64], out: &mut [f64]) {
        match self {
            InternalDynamics::Zero => out.fill(0.0),
            InternalDynamics::LinearDiagonal { coefficients } => {
                for ((o, &xi), id) in out.iter_mut().zip(x).zip(nodes) {
                    *o = coefficients.get(id).copied().unwrap_or(0.0) * xi;
                }
            }
        }
    }

    pub fn coefficients_for(&self, nodes: &[NodeId]) -> Vec<f64> {
        match self {
            InternalDynamics::Zero => vec![0.0; nodes.len()],
            InternalDynamics::LinearDiagonal { coefficients } => {
                nodes.iter().map(|id| coefficients.get(id).copied().unwrap_or(0.0)).collect()
            }
        }
    }
}

/// How the auxiliary system's connectivity `L_m` is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceInit {
    #[default]
    Zero,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMatrix {
    pub nodes: Vec<NodeId>,
    #[serde(with = "serde_rows")]
    pub matrix: Matrix,
}

/// `L_m` per vertex set. Explicit matrices take precedence over the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReferenceSpec {
    #[serde(default)]
    pub default: ReferenceInit,
    #[serde(default)]
    pub per_vertex_set: Vec<ReferenceMatrix>,
}

impl ReferenceSpec {
    /// `L_m` for an interval whose active nodes are `nodes` (in state order).
    pub fn matrix_for(&self, nodes: &[NodeId]) -> Matrix {
        let key = VertexSet::from_nodes(nodes);
        if let Some(r) = self.per_vertex_set.iter().find(|r| VertexSet::from_nodes(&r.nodes) == key) {
            if r.nodes == nodes {
                return r.matrix.clone();
            }
            // same set, different listing order: permute into state order
            let pos: Vec<usize> = nodes
                .iter()
                .map(|id| r.nodes.iter().position(|x| x == id).unwrap())
                .collect();
            return Matrix::from_fn(nodes.len(), nodes.len(), |i, j| r.matrix[(pos[i], pos[j])]);
        }
        let n = nodes.len();
        match self.default {
            ReferenceInit::Zero => Matrix::zeros(n, n),
            ReferenceInit::Identity => Matrix::identity(n, n),
        }
    }
}

/// Number of modes carried by one vertex set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCount {
    pub nodes: Vec<NodeId>,
    pub count: usize,
}

/// Everything needed to simulate and identify one switching run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub modes: Vec<ModeSpec>,
    pub schedule: SwitchingSchedule,
    pub excitation: ExcitationConfig,
    pub dynamics_f: InternalDynamics,
    /// Initial states of agents at their first appearance. Agents without an
    /// entry get a seeded pseudo-random state.
    pub initial_states: BTreeMap<NodeId, f64>,
    pub filter_gain: f64,
    pub gamma: f64,
    pub step: f64,
    pub mode_counts: Vec<ModeCount>,
    pub seed: u64,
    #[serde(default)]
    pub reference: ReferenceSpec,
}

impl Scenario {
    pub fn mode(&self, id: ModeId) -> Option<&ModeSpec> {
        self.modes.iter().find(|m| m.id == id)
    }

    /// `M^i` for the vertex set `vs`, if configured.
    pub fn mode_count(&self, vs: &VertexSet) -> Option<usize> {
        self.mode_counts
            .iter()
            .find(|c| &VertexSet::from_nodes(&c.nodes) == vs)
            .map(|c| c.count)
    }

    pub fn mode_count_map(&self) -> BTreeMap<VertexSet, usize> {
        self.mode_counts
            .iter()
            .map(|c| (VertexSet::from_nodes(&c.nodes), c.count))
            .collect()
    }

    /// Largest active node count over all modes.
    pub fn max_nodes(&self) -> usize {
        self.modes.iter().map(ModeSpec::dim).max().unwrap_or(0)
    }
}

/// Outcome of [`validate_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ValidationReport {
    pub hurwitz_per_mode: BTreeMap<ModeId, bool>,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
    pub is_fatal: bool,
}

/// True iff every eigenvalue of `l` has a strictly negative real part.
pub fn is_hurwitz(l: &Matrix) -> bool {
    if l.nrows() == 0 {
        return true;
    }
    l.clone().complex_eigenvalues().iter().all(|ev| ev.re < 0.0)
}

/// Structural checks (fatal) and assumption checks (warnings only).
pub fn validate_scenario(scenario: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    let errors = &mut report.errors;

    for (name, v) in [
        ("filter_gain", scenario.filter_gain),
        ("gamma", scenario.gamma),
        ("step", scenario.step),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            errors.push(format!("{name} must be positive and finite, got {v}"));
        }
    }

    let mut seen_ids = BTreeSet::new();
    let mut order_by_set: BTreeMap<VertexSet, &[NodeId]> = BTreeMap::new();
    for mode in &scenario.modes {
        if !seen_ids.insert(mode.id) {
            errors.push(format!("duplicate mode id {}", mode.id));
        }
        if let Err(e) = mode.check() {
            errors.push(e.to_string());
            continue;
        }
        let vs = mode.vertex_set();
        match order_by_set.get(&vs) {
            Some(prev) if *prev != mode.nodes.as_slice() => errors.push(format!(
                "mode {} lists vertex set {vs} in a different order than an earlier mode",
                mode.id
            )),
            Some(_) => {}
            None => {
                order_by_set.insert(vs, &mode.nodes);
            }
        }
        let hurwitz = is_hurwitz(&mode.connectivity);
        report.hurwitz_per_mode.insert(mode.id, hurwitz);
        if !hurwitz {
            report.warnings.push(format!(
                "mode {} is not Hurwitz; boundedness of the state is not guaranteed",
                mode.id
            ));
        }
    }

    errors.extend(scenario.schedule.structural_errors());
    for (k, id) in scenario.schedule.mode_sequence.iter().enumerate() {
        if !seen_ids.contains(id) {
            errors.push(format!("interval {k} references unknown mode {id}"));
        }
    }

    let counts = scenario.mode_count_map();
    let scheduled: BTreeSet<VertexSet> = scenario
        .schedule
        .mode_sequence
        .iter()
        .filter_map(|id| scenario.mode(*id))
        .map(ModeSpec::vertex_set)
        .collect();
    for vs in &scheduled {
        match counts.get(vs) {
            None => errors.push(format!("no mode count for vertex set {vs}")),
            Some(0) => errors.push(format!("mode count for vertex set {vs} must be positive")),
            Some(&c) => {
                let distinct_modes: BTreeSet<ModeId> = scenario
                    .schedule
                    .mode_sequence
                    .iter()
                    .filter(|id| scenario.mode(**id).is_some_and(|m| &m.vertex_set() == vs))
                    .copied()
                    .collect();
                if distinct_modes.len() != c {
                    report.warnings.push(format!(
                        "vertex set {vs}: mode count {c} but the schedule uses {} modes",
                        distinct_modes.len()
                    ));
                }
            }
        }
    }

    for r in &scenario.reference.per_vertex_set {
        let n = r.nodes.len();
        if r.matrix.shape() != (n, n) {
            errors.push(format!(
                "reference matrix for {} is {}x{}, expected {n}x{n}",
                VertexSet::from_nodes(&r.nodes),
                r.matrix.nrows(),
                r.matrix.ncols()
            ));
        }
    }

    if let Err(e) = scenario.excitation.check(scenario.max_nodes()) {
        errors.push(e.to_string());
    }

    let known_nodes: BTreeSet<NodeId> =
        scenario.modes.iter().flat_map(|m| m.nodes.iter().copied()).collect();
    for id in scenario.initial_states.keys() {
        if !known_nodes.contains(id) {
            report.warnings.push(format!("initial state given for node {id}, which never appears"));
        }
    }

    report.is_fatal = !report.errors.is_empty();
    report
}

/// A weighted directed edge between matrix indices (`from -> to`). Self-loops
/// have `from == to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Edges encoded by a connectivity matrix: `l -> i` with weight `L[i][l]` for
/// every entry with magnitude above `tol`, diagonal entries as self-loops.
pub fn graph_from_matrix(l: &Matrix, tol: f64) -> Result<Vec<Edge>> {
    if !l.is_square() {
        return Err(TopoError::Dimension(format!(
            "connectivity matrix is {}x{}",
            l.nrows(),
            l.ncols()
        )));
    }
    let n = l.nrows();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let w = l[(i, j)];
            if w.abs() > tol {
                edges.push(Edge { from: j, to: i, weight: w });
            }
        }
    }
    Ok(edges)
}

/// Inverse of [`graph_from_matrix`]: places edge weights, zeros elsewhere.
pub fn matrix_from_edges(n: usize, edges: &[Edge]) -> Matrix {
    let mut l = Matrix::zeros(n, n);
    for e in edges {
        l[(e.to, e.from)] = e.weight;
    }
    l
}
