//! Motion control: eigenvalue-ascent gradients, consensus, and the per-agent
//! biconnectivity enforcement loop.
//!
//! Differentiating `lambda = v^T L v` for a unit eigenvector `v` gives
//! `d lambda / d p_i = v^T (dL/dp_i) v`. Only row and column `i` of `L`
//! depend on `p_i`, so the product collapses to
//! `sum_j (v_i - v_j)^2 * d a_ij / d p_i`, which node `i` can evaluate from
//! its neighbours alone.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{
    self, normalize_with_sign, EstimatorError, EstimatorState, IntegrationSettings,
    ShiftedLaplacian,
};
use crate::graph::{is_locally_biconnected, CommModel, GraphError, Position, WeightedGraph};
use crate::spectral::{
    biconnectivity_bound, eigendecompose, BiconnectivityVerdict, BoundNorm, EigenvalueProvider,
    SpectralCheck, SpectralError,
};

pub type Velocity = Vector2<f64>;

/// Distance band around `R` treated as inside the disk when differentiating.
const RADIUS_BAND: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("eigenvector estimate must have unit norm, got {0}")]
    NonUnitVector(f64),

    #[error("eigenvector has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Spectral(#[from] SpectralError),

    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

pub type Result<T, E = ControlError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn component(self, p: &Position) -> f64 {
        match self {
            Axis::X => p.x,
            Axis::Y => p.y,
        }
    }
}

/// `d a_ij / d p_i` along `axis`, zero outside the disk.
fn weight_derivative(pi: &Position, pj: &Position, model: &CommModel, axis: Axis) -> f64 {
    let d2 = pi.distance_squared(pj);
    if d2.sqrt() > model.radius + RADIUS_BAND {
        return 0.0;
    }
    let a = (-d2 / (2.0 * model.sigma)).exp();
    -a * (axis.component(pi) - axis.component(pj)) / model.sigma
}

/// `dL/dp_i` along one axis. Nonzero only in row and column `i` and on the
/// diagonal entries of `i`'s neighbours.
pub fn laplacian_position_derivative(
    positions: &[Position],
    model: &CommModel,
    i: usize,
    axis: Axis,
) -> DMatrix<f64> {
    let n = positions.len();
    let mut d = DMatrix::zeros(n, n);
    for j in (0..n).filter(|&j| j != i) {
        let da = weight_derivative(&positions[i], &positions[j], model, axis);
        if da == 0.0 {
            continue;
        }
        d[(i, j)] -= da;
        d[(j, i)] -= da;
        d[(i, i)] += da;
        d[(j, j)] += da;
    }
    d
}

/// Inputs to the eigenvalue-ascent gradient at `focal`.
#[derive(Debug, Clone, Copy)]
pub struct GradientInput<'a> {
    pub focal: usize,
    pub positions: &'a [Position],
    pub model: &'a CommModel,
    /// Unit eigenvector of `L^focal(epsilon)`.
    pub eigvec: &'a DVector<f64>,
    pub epsilon: f64,
}

impl GradientInput<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.eigvec.len() != n {
            return Err(ControlError::DimensionMismatch {
                expected: n,
                got: self.eigvec.len(),
            });
        }
        if self.focal >= n {
            return Err(GraphError::NodeOutOfRange {
                node: self.focal,
                n,
            }
            .into());
        }
        let norm = self.eigvec.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(ControlError::NonUnitVector(norm));
        }
        Ok(())
    }
}

/// Gradient of the eigenvalue paired with `eigvec` with respect to the
/// focal position, computed from the focal node's neighbourhood.
pub fn eigenvalue_gradient(input: &GradientInput<'_>) -> Result<Velocity> {
    input.validate()?;
    let i = input.focal;
    let v = input.eigvec;
    let pi = &input.positions[i];
    let mut g = Velocity::zeros();
    for (j, pj) in input.positions.iter().enumerate().filter(|&(j, _)| j != i) {
        let diff = v[i] - v[j];
        let w = input.epsilon * diff * diff;
        g.x += w * weight_derivative(pi, pj, input.model, Axis::X);
        g.y += w * weight_derivative(pi, pj, input.model, Axis::Y);
    }
    Ok(g)
}

/// Same gradient as [`eigenvalue_gradient`], via the full quadratic form
/// `v^T (dL^i(eps)/dp_i) v`.
pub fn eigenvalue_gradient_dense(input: &GradientInput<'_>) -> Result<Velocity> {
    input.validate()?;
    let v = input.eigvec;
    let along = |axis| {
        let d = laplacian_position_derivative(input.positions, input.model, input.focal, axis)
            * input.epsilon;
        v.dot(&(d * v))
    };
    Ok(Velocity::new(along(Axis::X), along(Axis::Y)))
}

/// `sum_j a_ij (p_j - p_i)` over the neighbours of `i`.
pub fn consensus_control(i: usize, positions: &[Position], graph: &WeightedGraph) -> Velocity {
    let pi = positions[i].to_vector();
    graph
        .neighbors(i)
        .map(|j| graph.weight(i, j) * (positions[j].to_vector() - pi))
        .sum()
}

/// Scales `v` down to `max_speed` if faster.
pub fn clip_speed(v: Velocity, max_speed: f64) -> Velocity {
    let speed = v.norm();
    if speed > max_speed && speed > 0.0 {
        v * (max_speed / speed)
    } else {
        v
    }
}

/// Phases of the per-node biconnectivity enforcement flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnforcementPhase {
    CheckLocal,
    Perturb,
    EstimateEigenvalues,
    CheckCondition,
    EstimateEigenvector,
    GradientMove,
    Done,
}

impl EnforcementPhase {
    pub const ALL: [EnforcementPhase; 7] = [
        EnforcementPhase::CheckLocal,
        EnforcementPhase::Perturb,
        EnforcementPhase::EstimateEigenvalues,
        EnforcementPhase::CheckCondition,
        EnforcementPhase::EstimateEigenvector,
        EnforcementPhase::GradientMove,
        EnforcementPhase::Done,
    ];

    /// Phases reachable in one transition.
    pub fn successors(self) -> &'static [EnforcementPhase] {
        use EnforcementPhase::*;
        match self {
            CheckLocal => &[Done, Perturb],
            Perturb => &[EstimateEigenvalues],
            EstimateEigenvalues => &[CheckCondition],
            CheckCondition => &[Done, EstimateEigenvector],
            EstimateEigenvector => &[GradientMove],
            GradientMove => &[CheckLocal],
            Done => &[],
        }
    }

    pub fn as_str(self) -> &'static str {
        use EnforcementPhase::*;
        match self {
            CheckLocal => "check_local",
            Perturb => "perturb",
            EstimateEigenvalues => "estimate_eigenvalues",
            CheckCondition => "check_condition",
            EstimateEigenvector => "estimate_eigenvector",
            GradientMove => "gradient_move",
            Done => "done",
        }
    }
}

/// How an agent obtains `v_3(L^i(eps))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenvectorSource {
    /// The decentralized consensus estimator, run to convergence on the
    /// frozen graph.
    #[default]
    Consensus,
    /// Centralized exact eigensolver.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct EnforcementConfig {
    pub epsilon: f64,
    pub bound_norm: BoundNorm,
    /// Multiplier on the raw gradient.
    pub gain: f64,
    pub max_speed: f64,
    pub eigenvector: EigenvectorSource,
    pub estimator_gain: f64,
    pub estimator: IntegrationSettings,
    /// Start each estimation from the previous converged state.
    pub warm_start: bool,
    /// Gaps around the perturbed lambda_3 at or below this are reported as
    /// a likely eigenvalue crossing; the gradient is unreliable there.
    pub crossing_gap: f64,
}

impl EnforcementConfig {
    pub fn check(&self) -> SpectralCheck {
        SpectralCheck {
            epsilon: self.epsilon,
            norm: self.bound_norm,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(format!(
                "enforcement epsilon must lie in (0, 1], got {}",
                self.epsilon
            ));
        }
        if !(self.gain.is_finite() && self.gain >= 0.0) {
            return Err(format!(
                "enforcement gain must be finite and non-negative, got {}",
                self.gain
            ));
        }
        if !(self.crossing_gap.is_finite() && self.crossing_gap >= 0.0) {
            return Err(format!(
                "crossing_gap must be finite and non-negative, got {}",
                self.crossing_gap
            ));
        }
        if !(self.max_speed > 0.0) {
            return Err(format!(
                "max_speed must be positive, got {}",
                self.max_speed
            ));
        }
        if !(self.estimator_gain.is_finite() && self.estimator_gain > 0.0) {
            return Err(format!(
                "estimator gain must be positive, got {}",
                self.estimator_gain
            ));
        }
        Ok(())
    }
}

impl Default for EnforcementConfig {
    fn default() -> Self {
        Self {
            epsilon: SpectralCheck::default().epsilon,
            bound_norm: BoundNorm::default(),
            gain: 1.0,
            max_speed: 1.0,
            eigenvector: EigenvectorSource::Consensus,
            estimator_gain: 50.0,
            estimator: IntegrationSettings {
                // slow modes scale with the squared eigenvalue gap, which is
                // O(eps^2) near a cut vertex
                max_duration: Some(500.0),
                ..IntegrationSettings::default()
            },
            warm_start: true,
            crossing_gap: 1e-4,
        }
    }
}

/// What an agent reads from the world during one enforcement pass.
#[derive(Debug, Clone, Copy)]
pub struct LocalView<'a> {
    pub positions: &'a [Position],
    pub model: &'a CommModel,
    pub graph: &'a WeightedGraph,
}

/// Summary of one eigenvector estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationSummary {
    pub steps: usize,
    pub max_angle: f64,
    pub time_to_threshold: Option<f64>,
    pub warm_started: bool,
}

/// Per-node enforcement state machine.
#[derive(Debug, Clone)]
pub struct EnforcementAgent {
    id: usize,
    seed: u64,
    phase: EnforcementPhase,
    perturbed: Option<WeightedGraph>,
    lambda3: Option<f64>,
    verdict: Option<BiconnectivityVerdict>,
    eigvec: Option<DVector<f64>>,
    warm: Option<EstimatorState>,
    estimation: Option<EstimationSummary>,
    spectrum: Option<SpectrumNote>,
    estimations: u64,
}

/// Separation of the perturbed lambda_3 from its neighbours, before any
/// tie breaking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumNote {
    /// `min(lambda_3 - lambda_2, lambda_4 - lambda_3)`; the upper gap is
    /// left out when there is no `lambda_4`.
    pub gap: f64,
    pub ties_broken: bool,
}

/// Result of running an agent from `CheckLocal` until it stops or moves.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutcome {
    /// Phases entered, in order, starting with `CheckLocal`.
    pub phases: Vec<EnforcementPhase>,
    pub velocity: Velocity,
    pub verdict: Option<BiconnectivityVerdict>,
    pub estimation: Option<EstimationSummary>,
    pub spectrum: Option<SpectrumNote>,
    pub locally_biconnected: bool,
}

impl EnforcementAgent {
    pub fn new(id: usize, seed: u64) -> Self {
        Self {
            id,
            seed,
            phase: EnforcementPhase::CheckLocal,
            perturbed: None,
            lambda3: None,
            verdict: None,
            eigvec: None,
            warm: None,
            estimation: None,
            spectrum: None,
            estimations: 0,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn phase(&self) -> EnforcementPhase {
        self.phase
    }

    pub fn verdict(&self) -> Option<&BiconnectivityVerdict> {
        self.verdict.as_ref()
    }

    /// Back to `CheckLocal`, keeping only the warm-start state.
    pub fn restart(&mut self) {
        self.phase = EnforcementPhase::CheckLocal;
        self.perturbed = None;
        self.lambda3 = None;
        self.verdict = None;
        self.eigvec = None;
        self.estimation = None;
        self.spectrum = None;
    }

    /// Executes the current phase and moves to the next one. Returns the new
    /// phase and the velocity to apply; the velocity is nonzero only when a
    /// gradient move was executed. On error the agent returns to
    /// `CheckLocal` and should be held in place.
    pub fn step(
        &mut self,
        view: &LocalView<'_>,
        config: &EnforcementConfig,
        provider: &dyn EigenvalueProvider,
    ) -> Result<(EnforcementPhase, Velocity)> {
        match self.execute(view, config, provider) {
            Ok((next, velocity)) => {
                debug_assert!(self.phase.successors().contains(&next) || self.phase == next);
                self.phase = next;
                Ok((next, velocity))
            }
            Err(e) => {
                self.restart();
                Err(e)
            }
        }
    }

    fn execute(
        &mut self,
        view: &LocalView<'_>,
        config: &EnforcementConfig,
        provider: &dyn EigenvalueProvider,
    ) -> Result<(EnforcementPhase, Velocity)> {
        use EnforcementPhase::*;
        let i = self.id;
        let still = Velocity::zeros();
        match self.phase {
            CheckLocal => {
                if is_locally_biconnected(view.graph, i)? {
                    Ok((Done, still))
                } else {
                    Ok((Perturb, still))
                }
            }
            Perturb => {
                self.perturbed = Some(view.graph.scaled_at(i, config.epsilon)?);
                Ok((EstimateEigenvalues, still))
            }
            EstimateEigenvalues => {
                let mut scaled = self
                    .perturbed
                    .take()
                    .expect("perturbed graph set in Perturb");
                let mut spectrum = self.low_spectrum(&scaled, provider)?;
                let gap = spectrum
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .fold(f64::INFINITY, f64::min);
                let ties_broken = gap <= estimator::MIN_EIGENVALUE_GAP;
                self.spectrum = Some(SpectrumNote { gap, ties_broken });
                if ties_broken {
                    let (separated, _) =
                        estimator::break_eigenvalue_ties(&scaled, self.seed ^ 0x5eed)?;
                    scaled = separated;
                    spectrum = self.low_spectrum(&scaled, provider)?;
                }
                self.lambda3 = Some(spectrum[1]);
                self.perturbed = Some(scaled);
                Ok((CheckCondition, still))
            }
            CheckCondition => {
                if !view.graph.is_connected() {
                    return Err(GraphError::Disconnected.into());
                }
                let lambda3 = self.lambda3.expect("lambda3 set in EstimateEigenvalues");
                let bound = biconnectivity_bound(view.graph, i, config.epsilon, config.bound_norm);
                let verdict = BiconnectivityVerdict {
                    focal: i,
                    epsilon: config.epsilon,
                    lambda3,
                    bound,
                    passed: lambda3 > bound,
                    locally_biconnected: false,
                };
                self.verdict = Some(verdict);
                Ok((
                    if verdict.passed {
                        Done
                    } else {
                        EstimateEigenvector
                    },
                    still,
                ))
            }
            EstimateEigenvector => {
                let scaled = self
                    .perturbed
                    .take()
                    .expect("perturbed graph set in Perturb");
                let lambda3 = self.lambda3.expect("lambda3 set in EstimateEigenvalues");
                let v = self.estimate_eigenvector(&scaled, lambda3, config);
                self.perturbed = Some(scaled);
                self.eigvec = Some(v?);
                Ok((GradientMove, still))
            }
            GradientMove => {
                let v = self
                    .eigvec
                    .as_ref()
                    .expect("eigenvector set in EstimateEigenvector");
                let gradient = eigenvalue_gradient(&GradientInput {
                    focal: i,
                    positions: view.positions,
                    model: view.model,
                    eigvec: v,
                    epsilon: config.epsilon,
                })?;
                Ok((
                    CheckLocal,
                    clip_speed(gradient * config.gain, config.max_speed),
                ))
            }
            Done => Ok((Done, still)),
        }
    }

    /// `[lambda_2, lambda_3, lambda_4]` of the scaled graph's Laplacian
    /// (missing ranks repeat the last available one).
    fn low_spectrum(
        &self,
        scaled: &WeightedGraph,
        provider: &dyn EigenvalueProvider,
    ) -> Result<Vec<f64>> {
        let l = scaled.laplacian().matrix;
        let n = l.nrows();
        if n < 3 {
            return Err(GraphError::TooFewNodes(n).into());
        }
        (2..=n.min(4))
            .map(|rank| provider.kth_smallest(&l, rank).map_err(ControlError::from))
            .collect()
    }

    fn estimate_eigenvector(
        &mut self,
        scaled: &WeightedGraph,
        lambda3: f64,
        config: &EnforcementConfig,
    ) -> Result<DVector<f64>> {
        let l = scaled.laplacian().matrix;
        match config.eigenvector {
            EigenvectorSource::Exact => {
                let eig = eigendecompose(&l)?;
                Ok(normalize_with_sign(eig.vector(3)?))
            }
            EigenvectorSource::Consensus => {
                let n = scaled.n();
                let sl = ShiftedLaplacian::new(&l, lambda3);
                let warm = config
                    .warm_start
                    .then(|| self.warm.take())
                    .flatten()
                    .filter(|w| w.n() == n && w.gain == config.estimator_gain);
                let warm_started = warm.is_some();
                let initial = match warm {
                    Some(mut w) => {
                        w.time = 0.0;
                        // keep the state well scaled across repeated runs
                        let norm = w.stacked().norm();
                        if norm > 0.0 {
                            for zi in &mut w.z {
                                *zi /= norm;
                            }
                        }
                        w
                    }
                    None => {
                        let kernel = eigendecompose(&l)?.vector(3)?;
                        EstimatorState::seeded(
                            n,
                            config.estimator_gain,
                            self.seed.wrapping_add(self.estimations),
                            &kernel,
                        )?
                    }
                };
                self.estimations += 1;
                let report = estimator::integrate(&initial, &sl, scaled, &config.estimator)?;
                self.estimation = Some(EstimationSummary {
                    steps: report.steps,
                    max_angle: report.max_angle(),
                    time_to_threshold: report.time_to_threshold,
                    warm_started,
                });
                let converged = report.converged;
                let max_angle = report.max_angle();
                // the agent's own estimate is what it can use locally
                let own = normalize_with_sign(report.state.z[self.id].clone());
                // an unfinished run still seeds the next attempt
                self.warm = Some(report.state);
                if !converged {
                    return Err(EstimatorError::NonConvergence {
                        duration: config.estimator.duration_for(config.estimator_gain),
                        max_angle,
                    }
                    .into());
                }
                Ok(own)
            }
        }
    }

    /// Runs from `CheckLocal` until the agent reaches `Done` or executes a
    /// gradient move.
    pub fn run_cycle(
        &mut self,
        view: &LocalView<'_>,
        config: &EnforcementConfig,
        provider: &dyn EigenvalueProvider,
    ) -> Result<CycleOutcome> {
        self.restart();
        let mut phases = vec![EnforcementPhase::CheckLocal];
        let mut locally_biconnected = false;
        loop {
            let from = self.phase;
            let (next, velocity) = self.step(view, config, provider)?;
            if from == EnforcementPhase::CheckLocal && next == EnforcementPhase::Done {
                locally_biconnected = true;
            }
            phases.push(next);
            if next == EnforcementPhase::Done || from == EnforcementPhase::GradientMove {
                return Ok(CycleOutcome {
                    phases,
                    velocity,
                    verdict: self.verdict,
                    estimation: self.estimation,
                    spectrum: self.spectrum,
                    locally_biconnected,
                });
            }
        }
    }
}

/// Single transition of `agent`; see [`EnforcementAgent::step`].
pub fn enforcement_step(
    agent: &mut EnforcementAgent,
    view: &LocalView<'_>,
    config: &EnforcementConfig,
    provider: &dyn EigenvalueProvider,
) -> Result<(EnforcementPhase, Velocity)> {
    agent.step(view, config, provider)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ExactEigensolver;

    fn pos(coords: &[(f64, f64)]) -> Vec<Position> {
        coords.iter().map(|&(x, y)| Position::new(x, y)).collect()
    }

    #[test]
    fn derivative_vanishes_without_neighbours() {
        let p = pos(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        let d = laplacian_position_derivative(&p, &CommModel::default(), 0, Axis::X);
        assert_eq!(d, DMatrix::zeros(3, 3));
    }

    #[test]
    fn derivative_vanishes_for_coincident_robots() {
        let p = pos(&[(0.2, 0.2), (0.2, 0.2)]);
        for axis in [Axis::X, Axis::Y] {
            let d = laplacian_position_derivative(&p, &CommModel::default(), 0, axis);
            assert_eq!(d.amax(), 0.0);
        }
    }

    #[test]
    fn derivative_structure() {
        let p = pos(&[(0.0, 0.0), (0.3, 0.1), (0.1, 0.35), (0.6, 0.6)]);
        let d = laplacian_position_derivative(&p, &CommModel::default(), 0, Axis::Y);
        assert_eq!(d, d.transpose());
        for r in 0..4 {
            assert!(d.row(r).sum().abs() < 1e-15);
        }
        // entry (1,2) does not involve node 0
        assert_eq!(d[(1, 2)], 0.0);
        assert_eq!(d[(3, 3)], 0.0);
    }

    #[test]
    fn kernel_direction_has_zero_gradient() {
        let p = pos(&[(0.0, 0.0), (0.3, 0.1), (0.1, 0.35)]);
        let v = DVector::from_element(3, 1.0 / 3f64.sqrt());
        let model = CommModel::default();
        let g = eigenvalue_gradient(&GradientInput {
            focal: 1,
            positions: &p,
            model: &model,
            eigvec: &v,
            epsilon: 0.05,
        })
        .unwrap();
        assert_eq!(g, Velocity::zeros());
    }

    #[test]
    fn rejects_non_unit_eigenvector() {
        let p = pos(&[(0.0, 0.0), (0.3, 0.1)]);
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let model = CommModel::default();
        let err = eigenvalue_gradient(&GradientInput {
            focal: 0,
            positions: &p,
            model: &model,
            eigvec: &v,
            epsilon: 1.0,
        })
        .unwrap_err();
        assert!(matches!(err, ControlError::NonUnitVector(_)));
    }

    #[test]
    fn k2_gradient_points_toward_partner() {
        let p = pos(&[(0.0, 0.0), (0.3, 0.0)]);
        let model = CommModel::default();
        let v = DVector::from_vec(vec![1.0, -1.0]) / 2f64.sqrt();
        let g = eigenvalue_gradient(&GradientInput {
            focal: 0,
            positions: &p,
            model: &model,
            eigvec: &v,
            epsilon: 1.0,
        })
        .unwrap();
        let a = (-0.09f64 / 0.25).exp();
        // lambda_2 = 2 a_12, gradient = 2 * d a_12 / d p_1
        assert!((g.x - 2.0 * a * 0.3 / 0.125).abs() < 1e-14);
        assert_eq!(g.y, 0.0);
    }

    #[test]
    fn consensus_examples() {
        let p = pos(&[(0.0, 0.0), (1.0, 0.0)]);
        let g = WeightedGraph::unit(2, &[(0, 1)]);
        assert_eq!(consensus_control(0, &p, &g), Velocity::new(1.0, 0.0));
        assert_eq!(
            consensus_control(0, &p, &WeightedGraph::empty(2)),
            Velocity::zeros()
        );
        let same = pos(&[(0.4, 0.4), (0.4, 0.4), (0.4, 0.4)]);
        let tri = WeightedGraph::unit(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(consensus_control(0, &same, &tri), Velocity::zeros());
    }

    #[test]
    fn clipping_preserves_direction() {
        let v = clip_speed(Velocity::new(3.0, 4.0), 1.0);
        assert!((v - Velocity::new(0.6, 0.8)).norm() < 1e-15);
        assert_eq!(
            clip_speed(Velocity::new(0.3, 0.4), 1.0),
            Velocity::new(0.3, 0.4)
        );
    }

    #[test]
    fn locally_biconnected_agent_stops() {
        let p = pos(&[(0.0, 0.0), (0.2, 0.0), (0.1, 0.15)]);
        let model = CommModel::default();
        let g = WeightedGraph::from_positions(&p, &model).unwrap();
        let view = LocalView {
            positions: &p,
            model: &model,
            graph: &g,
        };
        let mut agent = EnforcementAgent::new(0, 1);
        let (phase, v) = enforcement_step(
            &mut agent,
            &view,
            &EnforcementConfig::default(),
            &ExactEigensolver,
        )
        .unwrap();
        assert_eq!(phase, EnforcementPhase::Done);
        assert_eq!(v, Velocity::zeros());
        // terminal
        let (phase, _) = agent
            .step(&view, &EnforcementConfig::default(), &ExactEigensolver)
            .unwrap();
        assert_eq!(phase, EnforcementPhase::Done);
    }

    #[test]
    fn path_middle_reaches_gradient_move() {
        let p = pos(&[(0.0, 0.0), (0.3, 0.02), (0.6, 0.0)]);
        let model = CommModel::default();
        let g = WeightedGraph::from_positions(&p, &model).unwrap();
        assert!(!g.has_edge(0, 2));
        let view = LocalView {
            positions: &p,
            model: &model,
            graph: &g,
        };
        for source in [EigenvectorSource::Exact, EigenvectorSource::Consensus] {
            let config = EnforcementConfig {
                eigenvector: source,
                ..Default::default()
            };
            let mut agent = EnforcementAgent::new(1, 4);
            let outcome = agent.run_cycle(&view, &config, &ExactEigensolver).unwrap();
            use EnforcementPhase::*;
            assert_eq!(
                outcome.phases,
                vec![
                    CheckLocal,
                    Perturb,
                    EstimateEigenvalues,
                    CheckCondition,
                    EstimateEigenvector,
                    GradientMove,
                    CheckLocal
                ]
            );
            assert!(outcome.velocity.norm() > 0.0);
            assert!(!outcome.verdict.unwrap().passed);
            assert_eq!(agent.phase(), CheckLocal);
        }
    }

    #[test]
    fn transition_table_matches_flow() {
        use EnforcementPhase::*;
        let edges: Vec<(EnforcementPhase, EnforcementPhase)> = EnforcementPhase::ALL
            .iter()
            .flat_map(|&p| p.successors().iter().map(move |&q| (p, q)))
            .collect();
        let expected = vec![
            (CheckLocal, Done),
            (CheckLocal, Perturb),
            (Perturb, EstimateEigenvalues),
            (EstimateEigenvalues, CheckCondition),
            (CheckCondition, Done),
            (CheckCondition, EstimateEigenvector),
            (EstimateEigenvector, GradientMove),
            (GradientMove, CheckLocal),
        ];
        assert_eq!(edges, expected);
    }
}
