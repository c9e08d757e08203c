//! Excitation design and joint integration of the plant with the
//! observer / filter / Gramian system, producing one [`SegmentRecord`] per
//! switching interval.
//!
//! Within an interval with active nodes `V` and true connectivity `L`, the
//! plant is driven by `u = û − f(x)`, which turns it into `ẋ = L x + û`. The
//! auxiliary system
//!
//! ```text
//! x̂' = f(x) + L_m x + u + τ (x − x̂)
//! w'  = x − τ w
//! Y'  = w wᵀ
//! Z'  = (L_m w + x − x̂ − ζ) wᵀ,     ζ(t) = e^{−τ (t − t_k)} x̃(t_k)
//! ```
//!
//! is reset at every switch. The bracket in `Z'` equals `L w` exactly, so
//! `Z(t) = L Y(t)` along the whole interval and `L = Z Y⁻¹` once `Y` is
//! positive definite.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TopoError};
use crate::model::{validate_scenario, ModeId, ModeSpec, NodeId, Scenario};
use crate::numerics::{cholesky_pd_above, is_pd_above, serde_rows, solve_right, Matrix, Rk4};

/// State magnitude treated as divergence before it overflows.
const DIVERGENCE_BOUND: f64 = 1e100;

fn default_true() -> bool {
    true
}

/// Sinusoidal probing signal configuration.
///
/// Empty `frequencies` means auto-generation (`0.3 + 0.45·j` rad/s, just enough
/// of them for the required order); empty `amplitudes` means unit amplitude;
/// empty `phases` means zero base phase. Each node additionally gets a seeded
/// random phase offset per frequency so that the components of `û` differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    #[serde(default)]
    pub amplitudes: Vec<f64>,
    #[serde(default)]
    pub frequencies: Vec<f64>,
    #[serde(default)]
    pub phases: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub min_order: Option<usize>,
    /// `false` switches the probing signal off entirely (`û ≡ 0`).
    #[serde(default = "default_true")]
    pub enabled: bool,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            amplitudes: Vec::new(),
            frequencies: Vec::new(),
            phases: Vec::new(),
            seed: 0,
            min_order: None,
            enabled: true,
        }
    }
}

/// Number of distinct frequencies needed for richness of order `n`.
pub fn required_frequencies(n: usize) -> usize {
    n.div_ceil(2)
}

/// The frequency set used when none is configured.
pub fn auto_frequencies(n: usize) -> Vec<f64> {
    (0..required_frequencies(n).max(1)).map(|j| 0.3 + 0.45 * j as f64).collect()
}

impl ExcitationConfig {
    fn order(&self, n: usize) -> usize {
        self.min_order.unwrap_or(n).max(1)
    }

    /// Checks the configuration against richness of order `n`.
    pub fn check(&self, n: usize) -> Result<()> {
        self.resolve(n).map(|_| ())
    }

    fn resolve(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let order = self.order(n);
        let freqs = if self.frequencies.is_empty() {
            auto_frequencies(order)
        } else {
            self.frequencies.clone()
        };
        if freqs.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(TopoError::Config("frequencies must be positive and finite".into()));
        }
        let mut sorted = freqs.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|p| p[0] == p[1]) {
            return Err(TopoError::Config("frequencies must be pairwise distinct".into()));
        }
        let need = required_frequencies(order);
        if freqs.len() < need {
            return Err(TopoError::Config(format!(
                "order {order} needs at least {need} distinct frequencies, got {}",
                freqs.len()
            )));
        }
        let amps = match self.amplitudes.len() {
            0 => vec![1.0; freqs.len()],
            k if k == freqs.len() => self.amplitudes.clone(),
            k => {
                return Err(TopoError::Config(format!(
                    "{k} amplitudes for {} frequencies",
                    freqs.len()
                )))
            }
        };
        if amps.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(TopoError::Config("amplitudes must be positive and finite".into()));
        }
        let phases = match self.phases.len() {
            0 => vec![0.0; freqs.len()],
            k if k == freqs.len() => self.phases.clone(),
            k => {
                return Err(TopoError::Config(format!("{k} phases for {} frequencies", freqs.len())))
            }
        };
        Ok((freqs, amps, phases))
    }
}

/// A probing signal `û(t)`: per node, a sum of sinusoids over a shared
/// frequency set with node-specific phases.
#[derive(Debug, Clone)]
pub struct Excitation {
    frequencies: Vec<f64>,
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
    seed: u64,
    enabled: bool,
}

/// Builds the probing signal for richness of order `n`.
pub fn build_excitation(n: usize, config: &ExcitationConfig) -> Result<Excitation> {
    if n == 0 {
        return Err(TopoError::Config("order must be at least 1".into()));
    }
    let (frequencies, amplitudes, phases) = config.resolve(n)?;
    Ok(Excitation {
        frequencies,
        amplitudes,
        phases,
        seed: config.seed,
        enabled: config.enabled,
    })
}

impl Excitation {
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Upper bound on `|û_i(t)|`.
    pub fn bound(&self) -> f64 {
        if self.enabled {
            self.amplitudes.iter().sum()
        } else {
            0.0
        }
    }

    /// Phase of frequency `j` for node `id`.
    fn node_phases(&self, id: NodeId) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from(id));
        self.phases
            .iter()
            .map(|p| p + rng.random_range(0.0..std::f64::consts::TAU))
            .collect()
    }

    /// Binds the signal to an ordered node list.
    pub fn for_nodes(&self, nodes: &[NodeId]) -> NodeExcitation {
        let phase_table = nodes.iter().flat_map(|&id| self.node_phases(id)).collect();
        NodeExcitation {
            frequencies: self.frequencies.clone(),
            amplitudes: self.amplitudes.clone(),
            phase_table,
            enabled: self.enabled,
        }
    }

    /// `û(t)` for the given nodes.
    pub fn eval(&self, t: f64, nodes: &[NodeId]) -> Vec<f64> {
        let mut out = vec![0.0; nodes.len()];
        self.for_nodes(nodes).eval_into(t, &mut out);
        out
    }
}

/// [`Excitation`] specialised to one node ordering.
#[derive(Debug, Clone)]
pub struct NodeExcitation {
    frequencies: Vec<f64>,
    amplitudes: Vec<f64>,
    phase_table: Vec<f64>,
    enabled: bool,
}

impl NodeExcitation {
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if !self.enabled {
            out.fill(0.0);
            return;
        }
        let m = self.frequencies.len();
        for (i, o) in out.iter_mut().enumerate() {
            let phases = &self.phase_table[i * m..(i + 1) * m];
            *o = self
                .frequencies
                .iter()
                .zip(&self.amplitudes)
                .zip(phases)
                .map(|((w, a), p)| a * (w * t + p).sin())
                .sum();
        }
    }
}

/// `u = û − f(x)`.
pub fn control_input(u_hat: &[f64], f_of_x: &[f64]) -> Result<Vec<f64>> {
    if u_hat.len() != f_of_x.len() {
        return Err(TopoError::Dimension(format!(
            "û has {} entries, f(x) has {}",
            u_hat.len(),
            f_of_x.len()
        )));
    }
    Ok(u_hat.iter().zip(f_of_x).map(|(u, f)| u - f).collect())
}

/// `ζ(t) = e^{−τ (t − t_k)} x̃(t_k)`.
pub fn zeta(t: f64, t_k: f64, filter_gain: f64, x_tilde_k: &[f64]) -> Result<Vec<f64>> {
    if t < t_k {
        return Err(TopoError::Range { t, start: t_k, end: f64::INFINITY });
    }
    let decay = (-filter_gain * (t - t_k)).exp();
    Ok(x_tilde_k.iter().map(|v| decay * v).collect())
}

/// Observer, filter and Gramian state for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x_hat: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Matrix,
    pub z: Matrix,
    pub x_tilde_k: Vec<f64>,
    pub l_m: Matrix,
}

impl AugmentedState {
    /// Interval-start state: everything zero, `x̃(t_k) = x(t_k)`.
    pub fn reset(x_k: &[f64], l_m: Matrix) -> Self {
        let n = x_k.len();
        Self {
            x_hat: vec![0.0; n],
            w: vec![0.0; n],
            y: Matrix::zeros(n, n),
            z: Matrix::zeros(n, n),
            x_tilde_k: x_k.to_vec(),
            l_m,
        }
    }
}

/// Time derivative of an [`AugmentedState`].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDerivative {
    pub x_hat: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Matrix,
    pub z: Matrix,
}

pub fn augmented_derivative(
    aug: &AugmentedState,
    x: &[f64],
    u: &[f64],
    f_of_x: &[f64],
    zeta_t: &[f64],
    filter_gain: f64,
) -> Result<AugmentedDerivative> {
    let n = x.len();
    let dims = [aug.x_hat.len(), aug.w.len(), u.len(), f_of_x.len(), zeta_t.len()];
    if dims.iter().any(|&d| d != n)
        || aug.l_m.shape() != (n, n)
        || aug.y.shape() != (n, n)
        || aug.z.shape() != (n, n)
    {
        return Err(TopoError::Dimension(format!(
            "augmented state blocks do not all match {n} active nodes"
        )));
    }
    let tau = filter_gain;
    let xv = nalgebra::DVector::from_column_slice(x);
    let wv = nalgebra::DVector::from_column_slice(&aug.w);
    let lm_x = &aug.l_m * &xv;
    let lm_w = &aug.l_m * &wv;
    let x_hat_dot = (0..n)
        .map(|i| f_of_x[i] + lm_x[i] + u[i] + tau * (x[i] - aug.x_hat[i]))
        .collect();
    let w_dot = (0..n).map(|i| x[i] - tau * aug.w[i]).collect();
    let bracket = nalgebra::DVector::from_fn(n, |i, _| lm_w[i] + x[i] - aug.x_hat[i] - zeta_t[i]);
    Ok(AugmentedDerivative {
        x_hat: x_hat_dot,
        w: w_dot,
        y: &wv * wv.transpose(),
        z: bracket * wv.transpose(),
    })
}

/// Gramians and bookkeeping for one switching interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub interval_index: usize,
    pub node_ids: Vec<NodeId>,
    pub t_start: f64,
    pub t_end: f64,
    /// Terminal excitation Gramian at the last grid point of the interval.
    #[serde(rename = "Y_s", with = "serde_rows")]
    pub y_s: Matrix,
    #[serde(rename = "Z_s", with = "serde_rows")]
    pub z_s: Matrix,
    /// `Z Y⁻¹` at the first grid point where `Y ≻ γI`, if that happened.
    #[serde(with = "serde_rows::option")]
    pub interval_estimate: Option<Matrix>,
    #[serde(default)]
    pub crossing_time: Option<f64>,
    pub true_mode: Option<ModeId>,
}

impl SegmentRecord {
    pub fn vertex_set(&self) -> crate::model::VertexSet {
        crate::model::VertexSet::from_nodes(&self.node_ids)
    }
}

/// `Z Y⁻¹` if `Y ≻ γI`, otherwise `None`.
pub fn interval_estimate(y: &Matrix, z: &Matrix, gamma: f64) -> Result<Option<Matrix>> {
    if y.shape() != z.shape() || !y.is_square() {
        return Err(TopoError::Dimension(format!(
            "Y is {}x{}, Z is {}x{}",
            y.nrows(),
            y.ncols(),
            z.nrows(),
            z.ncols()
        )));
    }
    if is_pd_above(y, gamma)? {
        solve_right(z, y).map(Some)
    } else {
        Ok(None)
    }
}

/// Number of whole steps of size `h` that fit in `dwell`, tolerant of
/// representation error when `dwell` is a multiple of `h`.
pub fn grid_steps(dwell: f64, h: f64) -> usize {
    let ratio = dwell / h;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        ratio.floor() as usize
    }
}

/// A snapshot of the joint state at one grid point.
#[derive(Debug)]
pub struct StepView<'a> {
    pub interval: usize,
    pub t: f64,
    pub t_start: f64,
    pub mode: &'a ModeSpec,
    pub x: &'a [f64],
    pub x_hat: &'a [f64],
    pub w: &'a [f64],
    /// Row-major `n × n`.
    pub y: &'a [f64],
    /// Row-major `n × n`.
    pub z: &'a [f64],
    pub x_tilde_k: &'a [f64],
    pub l_m: &'a Matrix,
    pub filter_gain: f64,
}

impl StepView<'_> {
    pub fn y_matrix(&self) -> Matrix {
        let n = self.x.len();
        Matrix::from_row_slice(n, n, self.y)
    }

    pub fn z_matrix(&self) -> Matrix {
        let n = self.x.len();
        Matrix::from_row_slice(n, n, self.z)
    }
}

/// Receives every grid point of a simulation, including each interval start.
pub trait StepObserver {
    fn on_step(&mut self, view: &StepView<'_>) -> Result<()>;
}

impl<F: FnMut(&StepView<'_>)> StepObserver for F {
    fn on_step(&mut self, view: &StepView<'_>) -> Result<()> {
        self(view);
        Ok(())
    }
}

/// Writes `time,node_id,x,x_hat,w` rows for every `stride`-th grid point.
pub struct TrajectoryLog<W: Write> {
    out: W,
    stride: usize,
    counter: usize,
}

impl<W: Write> TrajectoryLog<W> {
    pub fn new(mut out: W, stride: usize) -> Result<Self> {
        writeln!(out, "time,node_id,x,x_hat,w")?;
        Ok(Self { out, stride: stride.max(1), counter: 0 })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> StepObserver for TrajectoryLog<W> {
    fn on_step(&mut self, v: &StepView<'_>) -> Result<()> {
        let emit = self.counter.is_multiple_of(self.stride);
        self.counter += 1;
        if emit {
            for (i, id) in v.mode.nodes.iter().enumerate() {
                writeln!(self.out, "{},{},{},{},{}", v.t, id, v.x[i], v.x_hat[i], v.w[i])?;
            }
        }
        Ok(())
    }
}

struct NoObserver;

impl StepObserver for NoObserver {
    fn on_step(&mut self, _: &StepView<'_>) -> Result<()> {
        Ok(())
    }
}

/// Flat-state right-hand side for one interval.
///
/// Layout: `[x, x̂, w, vec_row(Y), vec_row(Z)]`.
struct JointSystem<'a> {
    n: usize,
    l: Vec<f64>,
    l_m: Vec<f64>,
    f_coef: Vec<f64>,
    tau: f64,
    t_k: f64,
    x_tilde_k: Vec<f64>,
    excitation: &'a NodeExcitation,
    // scratch
    u_hat: Vec<f64>,
    bracket: Vec<f64>,
}

impl JointSystem<'_> {
    fn dim(n: usize) -> usize {
        3 * n + 2 * n * n
    }

    fn eval(&mut self, s: &[f64], t: f64, out: &mut [f64]) {
        let n = self.n;
        let (x, rest) = s.split_at(n);
        let (xh, rest) = rest.split_at(n);
        let w = &rest[..n];
        self.excitation.eval_into(t, &mut self.u_hat);
        let decay = (-self.tau * (t - self.t_k)).exp();

        let (dx, orest) = out.split_at_mut(n);
        let (dxh, orest) = orest.split_at_mut(n);
        let (dw, orest) = orest.split_at_mut(n);
        let (dy, dz) = orest.split_at_mut(n * n);

        for i in 0..n {
            let row_l = &self.l[i * n..(i + 1) * n];
            let row_m = &self.l_m[i * n..(i + 1) * n];
            let mut lx = 0.0;
            let mut mx = 0.0;
            let mut mw = 0.0;
            for j in 0..n {
                lx += row_l[j] * x[j];
                mx += row_m[j] * x[j];
                mw += row_m[j] * w[j];
            }
            let f = self.f_coef[i] * x[i];
            let u = self.u_hat[i] - f;
            dx[i] = f + lx + u;
            dxh[i] = f + mx + u + self.tau * (x[i] - xh[i]);
            dw[i] = x[i] - self.tau * w[i];
            self.bracket[i] = mw + x[i] - xh[i] - decay * self.x_tilde_k[i];
        }
        for i in 0..n {
            let wi = w[i];
            let bi = self.bracket[i];
            let yrow = &mut dy[i * n..(i + 1) * n];
            let zrow = &mut dz[i * n..(i + 1) * n];
            for j in 0..n {
                yrow[j] = wi * w[j];
                zrow[j] = bi * w[j];
            }
        }
    }
}

fn row_major(m: &Matrix) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|ij| m[ij]).collect()
}

/// Seeded initial state for an agent joining at interval `k`.
fn joining_state(seed: u64, id: NodeId, k: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_a9e7);
    rng.set_stream((u64::from(id) << 32) | k as u64);
    rng.random_range(-1.0..1.0)
}

/// Runs the scenario and returns one segment per switching interval.
pub fn simulate_scenario(scenario: &Scenario) -> Result<Vec<SegmentRecord>> {
    simulate_with(scenario, &mut NoObserver)
}

/// [`simulate_scenario`] that also reports every grid point to `observer`.
pub fn simulate_with(scenario: &Scenario, observer: &mut dyn StepObserver) -> Result<Vec<SegmentRecord>> {
    let report = validate_scenario(scenario);
    if report.is_fatal {
        return Err(TopoError::Validation(report.errors.join("; ")));
    }
    let excitation = build_excitation(scenario.max_nodes(), &scenario.excitation)?;
    let h = scenario.step;
    let tau = scenario.filter_gain;
    let schedule = &scenario.schedule;

    let mut current: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut ever_seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut segments = Vec::with_capacity(schedule.num_intervals());
    let mut rk = Rk4::default();

    for k in 0..schedule.num_intervals() {
        let mode = scenario
            .mode(schedule.mode_sequence[k])
            .expect("validated mode reference");
        let nodes = &mode.nodes;
        let n = nodes.len();
        let (t_k, t_next) = schedule.interval_bounds(k);

        // state handoff: keep retained agents, seed joiners, drop leavers
        let x_k: Vec<f64> = nodes
            .iter()
            .map(|id| match current.get(id) {
                Some(&v) => v,
                None if !ever_seen.contains(id) && scenario.initial_states.contains_key(id) => {
                    scenario.initial_states[id]
                }
                None => joining_state(scenario.seed, *id, k),
            })
            .collect();
        ever_seen.extend(nodes.iter().copied());

        let l_m = scenario.reference.matrix_for(nodes);
        let node_excitation = excitation.for_nodes(nodes);
        let mut sys = JointSystem {
            n,
            l: row_major(&mode.connectivity),
            l_m: row_major(&l_m),
            f_coef: scenario.dynamics_f.coefficients_for(nodes),
            tau,
            t_k,
            x_tilde_k: x_k.clone(),
            excitation: &node_excitation,
            u_hat: vec![0.0; n],
            bracket: vec![0.0; n],
        };

        let dim = JointSystem::dim(n);
        let mut state = vec![0.0; dim];
        state[..n].copy_from_slice(&x_k);

        let emit = |state: &[f64], t: f64, observer: &mut dyn StepObserver| {
            let (x, rest) = state.split_at(n);
            let (x_hat, rest) = rest.split_at(n);
            let (w, rest) = rest.split_at(n);
            let (y, z) = rest.split_at(n * n);
            observer.on_step(&StepView {
                interval: k,
                t,
                t_start: t_k,
                mode,
                x,
                x_hat,
                w,
                y,
                z,
                x_tilde_k: &x_k,
                l_m: &l_m,
                filter_gain: tau,
            })
        };
        emit(&state, t_k, observer)?;

        let steps = grid_steps(t_next - t_k, h);
        let mut crossing: Option<(f64, Matrix)> = None;
        let mut t = t_k;
        for ell in 0..steps {
            rk.step(&mut state, t, h, |s, tt, out| sys.eval(s, tt, out))
                .map_err(|_| TopoError::Divergence { interval: k, t })?;
            t = t_k + (ell + 1) as f64 * h;
            if state.iter().any(|v| !(v.abs() < DIVERGENCE_BOUND)) {
                return Err(TopoError::Divergence { interval: k, t });
            }
            emit(&state, t, observer)?;

            if crossing.is_none() {
                let y = &state[3 * n..3 * n + n * n];
                if (0..n).all(|i| y[i * n + i] > scenario.gamma) {
                    let ym = Matrix::from_row_slice(n, n, y);
                    if cholesky_pd_above(&ym, scenario.gamma) && is_pd_above(&ym, scenario.gamma)? {
                        let zm = Matrix::from_row_slice(n, n, &state[3 * n + n * n..]);
                        crossing = Some((t, solve_right(&zm, &ym)?));
                    }
                }
            }
        }

        let y_s = Matrix::from_row_slice(n, n, &state[3 * n..3 * n + n * n]);
        let z_s = Matrix::from_row_slice(n, n, &state[3 * n + n * n..]);

        // advance the plant over the sub-step remainder so the next interval
        // starts exactly at its switch time
        let remainder = t_next - t;
        if remainder > 1e-9 * h {
            rk.step(&mut state, t, remainder, |s, tt, out| sys.eval(s, tt, out))
                .map_err(|_| TopoError::Divergence { interval: k, t })?;
            if state.iter().any(|v| !(v.abs() < DIVERGENCE_BOUND)) {
                return Err(TopoError::Divergence { interval: k, t: t_next });
            }
        }

        current = nodes.iter().copied().zip(state[..n].iter().copied()).collect();

        let (crossing_time, estimate) = match crossing {
            Some((tc, l)) => (Some(tc), Some(l)),
            None => (None, None),
        };
        segments.push(SegmentRecord {
            interval_index: k,
            node_ids: nodes.clone(),
            t_start: t_k,
            t_end: t_next,
            y_s,
            z_s,
            interval_estimate: estimate,
            crossing_time,
            true_mode: Some(mode.id),
        });
    }
    Ok(segments)
}
