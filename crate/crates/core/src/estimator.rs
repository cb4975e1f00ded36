//! Decentralized estimation of a Laplacian eigenvector.
//!
//! Each agent `i` keeps an `n`-vector `z_i` and runs
//!
//! ```text
//! dz_i/dt = k * ( sum_j a_ij (z_j - z_i) - P_i z_i )
//! ```
//!
//! where `P_i` projects onto the `i`-th column of `L - lambda I`. Stacked,
//! this is `dz/dt = -M z` with `M = k (L (x) I + blockdiag(P_1, .., P_n))`.
//! For a connected graph whose Laplacian spectrum is simple, the kernel of
//! `M` is spanned by `1 (x) v`, with `v` the eigenvector of `lambda`, and
//! every agent's estimate lines up with `v`.
//!
//! Agents only read their own Laplacian column and their neighbours'
//! estimates. [`agent_derivative`] is the single place the right-hand side is
//! evaluated, so the integrator cannot use non-local information.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, WeightedGraph};
use crate::spectral::{eigendecompose, SpectralError};

/// Squared column norm below which a projector is considered undefined.
const DEGENERATE_COLUMN: f64 = 1e-24;

/// Eigenvalue separation required by the tie-breaking fallback.
pub const MIN_EIGENVALUE_GAP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("column {0} of the shifted Laplacian is zero; its projector is undefined")]
    DegenerateColumn(usize),

    #[error("estimator state has {got} agents, graph has {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shifted Laplacian does not match the estimation graph (max deviation {0:e})")]
    LaplacianMismatch(f64),

    #[error("estimator gain must be positive and finite, got {0}")]
    InvalidGain(f64),

    #[error("integration step must be positive and finite, got {0}")]
    InvalidStep(f64),

    #[error("integration diverged at t = {time}: state norm grew {growth:.3e}x over one window (h*k = {step_gain:e})")]
    Unstable {
        time: f64,
        growth: f64,
        step_gain: f64,
    },

    #[error(
        "estimator did not align within {duration} time units (max agent angle {max_angle:e} rad)"
    )]
    NonConvergence { duration: f64, max_angle: f64 },

    #[error("could not draw an initial state with a kernel component after {0} attempts")]
    Initialization(usize),

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

pub type Result<T, E = EstimatorError> = std::result::Result<T, E>;

/// `L - shift * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedLaplacian {
    pub base: DMatrix<f64>,
    pub shift: f64,
    pub matrix: DMatrix<f64>,
}

impl ShiftedLaplacian {
    pub fn new(base: &DMatrix<f64>, shift: f64) -> Self {
        let n = base.nrows();
        let mut matrix = base.clone();
        for i in 0..n {
            matrix[(i, i)] -= shift;
        }
        Self {
            base: base.clone(),
            shift,
            matrix,
        }
    }

    pub fn n(&self) -> usize {
        self.base.nrows()
    }
}

/// Orthogonal projector `u u^T` onto one column direction `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    direction: DVector<f64>,
}

impl Projector {
    /// Projector onto `span(column)`.
    pub fn onto(column: &DVector<f64>) -> Option<Self> {
        let norm2 = column.norm_squared();
        if !(norm2 > DEGENERATE_COLUMN) || !norm2.is_finite() {
            return None;
        }
        Some(Self {
            direction: column / norm2.sqrt(),
        })
    }

    /// Unit vector spanning the range.
    pub fn direction(&self) -> &DVector<f64> {
        &self.direction
    }

    /// `l l^T / (l^T l)` as a dense matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.direction * self.direction.transpose()
    }

    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.direction * self.direction.dot(z)
    }
}

/// One projector per agent, built from the columns of the shifted Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorBlocks {
    pub blocks: Vec<Projector>,
}

impl ProjectorBlocks {
    pub fn from_shifted(sl: &ShiftedLaplacian) -> Result<Self> {
        let blocks = (0..sl.n())
            .map(|i| {
                let column = sl.matrix.column(i).into_owned();
                Projector::onto(&column).ok_or(EstimatorError::DegenerateColumn(i))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `blockdiag(P_1, .., P_n)`, of size `n^2 x n^2`.
    pub fn block_diagonal(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut p = DMatrix::zeros(n * n, n * n);
        for (i, block) in self.blocks.iter().enumerate() {
            p.view_mut((i * n, i * n), (n, n))
                .copy_from(&block.matrix());
        }
        p
    }
}

/// Right-hand side for one agent: `k * (sum_j a_ij (z_j - z_i) - P_i z_i)`.
pub fn agent_derivative<'a>(
    own: &DVector<f64>,
    neighbors: impl IntoIterator<Item = (f64, &'a DVector<f64>)>,
    projector: &Projector,
    gain: f64,
) -> DVector<f64> {
    let mut out = DVector::zeros(own.len());
    let neighbor_slices = neighbors.into_iter().map(|(w, z)| (w, z.as_slice()));
    agent_derivative_into(
        out.as_mut_slice(),
        own.as_slice(),
        neighbor_slices,
        projector,
        gain,
    );
    out
}

fn agent_derivative_into<'a>(
    out: &mut [f64],
    own: &[f64],
    neighbors: impl IntoIterator<Item = (f64, &'a [f64])>,
    projector: &Projector,
    gain: f64,
) {
    out.fill(0.0);
    for (w, z) in neighbors {
        for ((o, zj), zi) in out.iter_mut().zip(z).zip(own) {
            *o += w * (zj - zi);
        }
    }
    let u = projector.direction.as_slice();
    let coefficient: f64 = u.iter().zip(own).map(|(a, b)| a * b).sum();
    for (o, ui) in out.iter_mut().zip(u) {
        *o = gain * (*o - coefficient * ui);
    }
}

/// Dense `M = k (L (x) I + P)` for the stacked state. Used for analysis and
/// testing; the integrator never forms it.
pub fn system_matrix(
    laplacian: &DMatrix<f64>,
    projectors: &ProjectorBlocks,
    gain: f64,
) -> DMatrix<f64> {
    let n = laplacian.nrows();
    let kron = laplacian.kronecker(&DMatrix::<f64>::identity(n, n));
    (kron + projectors.block_diagonal()) * gain
}

/// Stacked estimator state `z = [z_1; ..; z_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub z: Vec<DVector<f64>>,
    pub gain: f64,
    pub time: f64,
}

impl EstimatorState {
    pub fn new(z: Vec<DVector<f64>>, gain: f64) -> Self {
        Self { z, gain, time: 0.0 }
    }

    /// Uniform entries in `[-1, 1]` from a seeded generator, redrawn while
    /// the component along `1 (x) kernel` is below `1e-6`.
    pub fn seeded(n: usize, gain: f64, seed: u64, kernel: &DVector<f64>) -> Result<Self> {
        const ATTEMPTS: usize = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel_norm = kernel.norm() * (n as f64).sqrt();
        for _ in 0..ATTEMPTS {
            let z: Vec<DVector<f64>> = (0..n)
                .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0)))
                .collect();
            let projection: f64 = z.iter().map(|zi| zi.dot(kernel)).sum::<f64>() / kernel_norm;
            if projection.abs() >= 1e-6 {
                return Ok(Self::new(z, gain));
            }
        }
        Err(EstimatorError::Initialization(ATTEMPTS))
    }

    /// Every agent starts from `v`.
    pub fn consensus(n: usize, gain: f64, v: &DVector<f64>) -> Self {
        Self::new(vec![v.clone(); n], gain)
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn stacked(&self) -> DVector<f64> {
        let n = self.n();
        DVector::from_iterator(n * n, self.z.iter().flat_map(|zi| zi.iter().copied()))
    }

    fn from_stacked(flat: &DVector<f64>, n: usize, gain: f64, time: f64) -> Self {
        let z = (0..n).map(|i| flat.rows(i * n, n).into_owned()).collect();
        Self { z, gain, time }
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|zi| zi.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

/// Why an integration run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Aligned,
    Stalled,
    DurationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationSettings {
    pub method: Integrator,
    /// Fixed step; `None` picks `0.1 / (k (2 d_max + 1))`, which bounds
    /// `h * lambda_max(M)` by 0.1.
    pub step: Option<f64>,
    /// Simulated time cap; `None` means `50 / k`.
    pub max_duration: Option<f64>,
    /// Alignment (rad) at which an agent counts as converged.
    pub alignment_tolerance: f64,
    /// Stop once every agent is within this angle; defaults to
    /// `alignment_tolerance`.
    pub stop_tolerance: Option<f64>,
    pub stall_window: usize,
    pub stall_tolerance: f64,
    /// Norm growth over one window that counts as divergence.
    pub divergence_factor: f64,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        Self {
            method: Integrator::Rk4,
            step: None,
            max_duration: None,
            alignment_tolerance: 1e-3,
            stop_tolerance: None,
            stall_window: 100,
            stall_tolerance: 1e-9,
            divergence_factor: 10.0,
        }
    }
}

impl IntegrationSettings {
    pub fn step_for(&self, graph: &WeightedGraph, gain: f64) -> f64 {
        self.step.unwrap_or_else(|| {
            let max_degree = (0..graph.n()).map(|i| graph.degree(i)).fold(0.0, f64::max);
            0.1 / (gain * (2.0 * max_degree + 1.0))
        })
    }

    pub fn duration_for(&self, gain: f64) -> f64 {
        self.max_duration.unwrap_or(50.0 / gain)
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorReport {
    /// Final, unnormalized state. Its common direction carries the limit
    /// scale of the estimate.
    pub state: EstimatorState,
    /// Eigenvector of the base Laplacian nearest the shift, from the exact
    /// solver.
    pub reference: DVector<f64>,
    /// Per-agent angle (rad) to `reference`, sign-agnostic.
    pub angles: Vec<f64>,
    pub max_pairwise_angle: f64,
    /// First time every agent was within `alignment_tolerance`.
    pub time_to_threshold: Option<f64>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub steps: usize,
    pub step_size: f64,
    /// Distance from the shift to the nearest true eigenvalue.
    pub shift_error: f64,
    /// Separation of that eigenvalue from the rest of the spectrum.
    pub reference_gap: f64,
}

impl EstimatorReport {
    pub fn max_angle(&self) -> f64 {
        self.angles.iter().copied().fold(0.0, f64::max)
    }

    /// Mean agent estimate, unit length, first significant entry positive.
    pub fn consensus_vector(&self) -> DVector<f64> {
        let n = self.state.n();
        let mut mean = DVector::zeros(n);
        for zi in &self.state.z {
            mean += zi;
        }
        normalize_with_sign(mean)
    }
}

/// Unit vector with its first entry above `1e-12` in magnitude made positive.
pub fn normalize_with_sign(v: DVector<f64>) -> DVector<f64> {
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    let mut u = v / norm;
    if let Some(first) = u.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            u = -u;
        }
    }
    u
}

/// Angle between the lines spanned by `a` and `b`.
pub fn line_angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let ua = a / na;
    let ub = b / nb;
    let cos = ua.dot(&ub);
    let sin = (&ua - &ub * cos).norm();
    sin.atan2(cos.abs())
}

/// Integrates the estimator and reports alignment against the exact
/// eigenvector.
pub fn integrate(
    initial: &EstimatorState,
    sl: &ShiftedLaplacian,
    graph: &WeightedGraph,
    settings: &IntegrationSettings,
) -> Result<EstimatorReport> {
    integrate_inner(initial, sl, graph, settings, None)
}

/// As [`integrate`], calling `observer(t, z)` on the initial state and
/// after every step.
pub fn integrate_observed(
    initial: &EstimatorState,
    sl: &ShiftedLaplacian,
    graph: &WeightedGraph,
    settings: &IntegrationSettings,
    mut observer: impl FnMut(f64, &EstimatorState),
) -> Result<EstimatorReport> {
    integrate_inner(initial, sl, graph, settings, Some(&mut observer))
}

/// Angle between `a` and the unit vector `unit`, sign-agnostic, without
/// allocating.
fn angle_to_unit(a: &[f64], unit: &DVector<f64>) -> f64 {
    let c: f64 = a.iter().zip(unit.iter()).map(|(x, u)| x * u).sum();
    let residual: f64 = a
        .iter()
        .zip(unit.iter())
        .map(|(x, u)| (x - c * u).powi(2))
        .sum();
    if c == 0.0 && residual == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    residual.sqrt().atan2(c.abs())
}

type Observer<'a> = dyn FnMut(f64, &EstimatorState) + 'a;

fn integrate_inner(
    initial: &EstimatorState,
    sl: &ShiftedLaplacian,
    graph: &WeightedGraph,
    settings: &IntegrationSettings,
    mut observer: Option<&mut Observer<'_>>,
) -> Result<EstimatorReport> {
    let n = graph.n();
    if initial.n() != n || sl.n() != n {
        return Err(EstimatorError::DimensionMismatch {
            expected: n,
            got: if initial.n() != n {
                initial.n()
            } else {
                sl.n()
            },
        });
    }
    let gain = initial.gain;
    if !(gain.is_finite() && gain > 0.0) {
        return Err(EstimatorError::InvalidGain(gain));
    }
    if !graph.is_connected() {
        return Err(GraphError::Disconnected.into());
    }
    let mismatch = (&graph.laplacian().matrix - &sl.base).amax();
    if mismatch > 1e-12 * sl.base.amax().max(1.0) {
        return Err(EstimatorError::LaplacianMismatch(mismatch));
    }
    let h = settings.step_for(graph, gain);
    if !(h.is_finite() && h > 0.0) {
        return Err(EstimatorError::InvalidStep(h));
    }
    let duration = settings.duration_for(gain);
    let tolerance = settings.alignment_tolerance;
    let stop_tolerance = settings.stop_tolerance.unwrap_or(tolerance);

    let projectors = ProjectorBlocks::from_shifted(sl)?;
    let eig = eigendecompose(&sl.base)?;
    let index = eig.nearest(sl.shift);
    let reference = eig.vectors.column(index).into_owned();
    let shift_error = (eig.values[index] - sl.shift).abs();
    let reference_gap = eig.gap_at(index);

    let rhs = StackedDynamics::new(graph, &projectors, gain);
    let mut z = initial.stacked();
    let mut time = initial.time;
    let mut scratch = Rk4Scratch::new(n * n);

    let unit_reference = reference.normalize();
    let angles_of = |z: &DVector<f64>, out: &mut Vec<f64>| {
        out.clear();
        out.extend(
            (0..n).map(|i| angle_to_unit(&z.as_slice()[i * n..(i + 1) * n], &unit_reference)),
        );
    };

    if let Some(f) = observer.as_mut() {
        f(time, initial);
    }
    let mut angles = Vec::with_capacity(n);
    angles_of(&z, &mut angles);
    let mut max_angle = angles.iter().copied().fold(0.0, f64::max);
    let mut time_to_threshold = (max_angle <= tolerance).then_some(time);
    let mut history = std::collections::VecDeque::with_capacity(settings.stall_window + 1);
    history.push_back(max_angle);
    let mut window_norm = z.norm();
    let mut steps = 0usize;
    let end = initial.time + duration;

    let stop_reason = loop {
        if max_angle <= stop_tolerance {
            break StopReason::Aligned;
        }
        if time >= end - 1e-12 * h {
            break StopReason::DurationCap;
        }
        match settings.method {
            Integrator::Rk4 => scratch.rk4_step(&rhs, &mut z, h),
            Integrator::Euler => scratch.euler_step(&rhs, &mut z, h),
        }
        steps += 1;
        time = initial.time + steps as f64 * h;

        angles_of(&z, &mut angles);
        max_angle = angles.iter().copied().fold(0.0, f64::max);
        if time_to_threshold.is_none() && max_angle <= tolerance {
            time_to_threshold = Some(time);
        }
        if let Some(f) = observer.as_mut() {
            f(time, &EstimatorState::from_stacked(&z, n, gain, time));
        }

        history.push_back(max_angle);
        if history.len() > settings.stall_window + 1 {
            history.pop_front();
        }
        if settings.stall_window > 0 && steps.is_multiple_of(settings.stall_window) {
            let norm = z.norm();
            let growth = norm / window_norm;
            if !norm.is_finite() || growth > settings.divergence_factor {
                return Err(EstimatorError::Unstable {
                    time,
                    growth,
                    step_gain: h * gain,
                });
            }
            window_norm = norm;
            let (lo, hi) = history
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &a| {
                    (lo.min(a), hi.max(a))
                });
            if history.len() == settings.stall_window + 1 && hi - lo < settings.stall_tolerance {
                break StopReason::Stalled;
            }
        }
    };

    let state = EstimatorState::from_stacked(&z, n, gain, time);
    let mut max_pairwise_angle: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            max_pairwise_angle = max_pairwise_angle.max(line_angle(&state.z[i], &state.z[j]));
        }
    }
    Ok(EstimatorReport {
        state,
        reference,
        converged: max_angle <= tolerance,
        angles,
        max_pairwise_angle,
        time_to_threshold,
        stop_reason,
        steps,
        step_size: h,
        shift_error,
        reference_gap,
    })
}

/// Runs the estimator from a seeded random start and returns the agents'
/// common direction as a unit vector.
pub fn estimate_eigenvector(
    graph: &WeightedGraph,
    shift: f64,
    gain: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    estimate_eigenvector_with(graph, shift, gain, seed, &IntegrationSettings::default())
}

pub fn estimate_eigenvector_with(
    graph: &WeightedGraph,
    shift: f64,
    gain: f64,
    seed: u64,
    settings: &IntegrationSettings,
) -> Result<DVector<f64>> {
    let report = run_seeded(graph, shift, gain, seed, settings)?;
    if !report.converged {
        return Err(EstimatorError::NonConvergence {
            duration: settings.duration_for(gain),
            max_angle: report.max_angle(),
        });
    }
    Ok(report.consensus_vector())
}

/// Builds the shifted Laplacian of `graph`, draws a seeded initial state and
/// integrates.
pub fn run_seeded(
    graph: &WeightedGraph,
    shift: f64,
    gain: f64,
    seed: u64,
    settings: &IntegrationSettings,
) -> Result<EstimatorReport> {
    let base = graph.laplacian().matrix;
    let sl = ShiftedLaplacian::new(&base, shift);
    let eig = eigendecompose(&base)?;
    let kernel = eig.vectors.column(eig.nearest(shift)).into_owned();
    let initial = EstimatorState::seeded(graph.n(), gain, seed, &kernel)?;
    integrate(&initial, &sl, graph, settings)
}

/// If two Laplacian eigenvalues of `graph` are closer than
/// [`MIN_EIGENVALUE_GAP`], adds seeded uniform noise in `[0, 1e-6]` to the
/// existing edge weights until they separate. Returns the graph and whether
/// it was changed.
pub fn break_eigenvalue_ties(graph: &WeightedGraph, seed: u64) -> Result<(WeightedGraph, bool)> {
    const ROUNDS: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = graph.clone();
    let mut changed = false;
    for _ in 0..ROUNDS {
        let eig = eigendecompose(&g.laplacian().matrix)?;
        if eig.min_gap() > MIN_EIGENVALUE_GAP {
            return Ok((g, changed));
        }
        for (i, j, w) in graph.edges() {
            g.set_weight(i, j, w + rng.random_range(0.0..=1e-6))?;
        }
        changed = true;
    }
    Ok((g, changed))
}

/// Evaluates the stacked right-hand side agent by agent.
struct StackedDynamics<'a> {
    n: usize,
    neighbors: Vec<Vec<(usize, f64)>>,
    projectors: &'a ProjectorBlocks,
    gain: f64,
}

impl<'a> StackedDynamics<'a> {
    fn new(graph: &WeightedGraph, projectors: &'a ProjectorBlocks, gain: f64) -> Self {
        let n = graph.n();
        let neighbors = (0..n)
            .map(|i| {
                graph
                    .neighbors(i)
                    .map(|j| (j, graph.weight(i, j)))
                    .collect()
            })
            .collect();
        Self {
            n,
            neighbors,
            projectors,
            gain,
        }
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let own = &z[i * n..(i + 1) * n];
            let nbrs = self.neighbors[i]
                .iter()
                .map(|&(j, w)| (w, &z[j * n..(j + 1) * n]));
            agent_derivative_into(
                &mut out[i * n..(i + 1) * n],
                own,
                nbrs,
                &self.projectors.blocks[i],
                self.gain,
            );
        }
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(len: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    fn euler_step(&mut self, f: &StackedDynamics<'_>, z: &mut DVector<f64>, h: f64) {
        f.eval(z.as_slice(), &mut self.k1);
        for (zi, k) in z.iter_mut().zip(&self.k1) {
            *zi += h * k;
        }
    }

    fn rk4_step(&mut self, f: &StackedDynamics<'_>, z: &mut DVector<f64>, h: f64) {
        let z0 = z.as_slice();
        f.eval(z0, &mut self.k1);
        for ((t, a), k) in self.tmp.iter_mut().zip(z0).zip(&self.k1) {
            *t = a + 0.5 * h * k;
        }
        f.eval(&self.tmp, &mut self.k2);
        for ((t, a), k) in self.tmp.iter_mut().zip(z0).zip(&self.k2) {
            *t = a + 0.5 * h * k;
        }
        f.eval(&self.tmp, &mut self.k3);
        for ((t, a), k) in self.tmp.iter_mut().zip(z0).zip(&self.k3) {
            *t = a + h * k;
        }
        f.eval(&self.tmp, &mut self.k4);
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}
