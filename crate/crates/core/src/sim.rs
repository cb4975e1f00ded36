//! Discrete-time world of single-integrator robots on an R-disk graph.
//!
//! Each tick every agent reads the same frozen snapshot, the velocities are
//! summed from the enabled controllers, and positions advance by one
//! explicit Euler step. The graph is rebuilt afterwards and connectivity
//! transitions are logged.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    consensus_control, CycleOutcome, EnforcementAgent, EnforcementConfig, EnforcementPhase,
    LocalView, Velocity,
};
use crate::graph::{
    articulation_points, BiconnectivityStatus, CommModel, GraphError, Position, WeightedGraph,
};
use crate::spectral::{lambda2_lambda3, EigenvalueProvider, ExactEigensolver, SpectralError};

/// Environment variable that replaces the scenario seed.
pub const SEED_ENV: &str = "BICON_SEED";

/// Spectral threshold separating connected from disconnected graphs.
pub const CONNECTIVITY_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),

    #[error("initial graph is disconnected")]
    InitialDisconnected,

    #[error("agent {agent} produced a non-finite velocity at t = {t}")]
    NonFiniteVelocity { agent: usize, t: f64 },

    #[error("could not generate a layout after {0} attempts")]
    LayoutExhausted(usize),

    #[error("cannot read scenario {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

/// Two Gaussian clusters joined through a single bridge robot. Nodes are
/// ordered cluster A, bridge, cluster B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumbbellLayout {
    pub cluster_a: usize,
    pub cluster_b: usize,
    /// Cluster centres sit at `(-gap, 0)` and `(gap, 0)`.
    pub gap: f64,
    pub spread: f64,
    /// Standard deviation of the bridge around the origin.
    pub bridge_spread: f64,
    pub max_attempts: usize,
}

impl Default for DumbbellLayout {
    fn default() -> Self {
        Self {
            cluster_a: 5,
            cluster_b: 2,
            gap: 0.42,
            spread: 0.1,
            bridge_spread: 0.08,
            max_attempts: 100_000,
        }
    }
}

impl DumbbellLayout {
    pub fn bridge(&self) -> usize {
        self.cluster_a
    }

    pub fn n(&self) -> usize {
        self.cluster_a + self.cluster_b + 1
    }

    /// Samples layouts until the bridge is the graph's only articulation
    /// point.
    pub fn generate(&self, model: &CommModel, seed: u64) -> Result<Vec<Position>> {
        if self.cluster_a == 0 || self.cluster_b == 0 {
            return Err(SimError::Config(
                "dumbbell clusters must be non-empty".into(),
            ));
        }
        let normal = |sd: f64| {
            Normal::new(0.0, sd).map_err(|e| SimError::Config(format!("dumbbell spread: {e}")))
        };
        let cluster = normal(self.spread)?;
        let bridge = normal(self.bridge_spread)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let want = BTreeSet::from([self.bridge()]);
        for _ in 0..self.max_attempts {
            let mut positions = Vec::with_capacity(self.n());
            for _ in 0..self.cluster_a {
                positions.push(Position::new(
                    -self.gap + cluster.sample(&mut rng),
                    cluster.sample(&mut rng),
                ));
            }
            positions.push(Position::new(
                bridge.sample(&mut rng),
                bridge.sample(&mut rng),
            ));
            for _ in 0..self.cluster_b {
                positions.push(Position::new(
                    self.gap + cluster.sample(&mut rng),
                    cluster.sample(&mut rng),
                ));
            }
            let g = WeightedGraph::from_positions(&positions, model)?;
            if g.is_connected() && articulation_points(&g)? == want {
                return Ok(positions);
            }
        }
        Err(SimError::LayoutExhausted(self.max_attempts))
    }
}

/// Connected random geometric graph in the square `[0, side]^2`: each new
/// robot is dropped uniformly until it lands within range of an earlier one.
pub fn random_connected_positions(
    n: usize,
    side: f64,
    model: &CommModel,
    rng: &mut impl Rng,
) -> Vec<Position> {
    let mut positions: Vec<Position> = Vec::with_capacity(n);
    while positions.len() < n {
        let p = Position::new(rng.random_range(0.0..side), rng.random_range(0.0..side));
        if positions.is_empty() || positions.iter().any(|q| model.weight(&p, q) > 0.0) {
            positions.push(p);
        }
    }
    positions
}

/// Initial placement of the robots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    Positions { positions: Vec<[f64; 2]> },
    Dumbbell(DumbbellLayout),
    Random { n: usize, side: f64 },
}

impl Layout {
    pub fn positions(&self, model: &CommModel, seed: u64) -> Result<Vec<Position>> {
        match self {
            Layout::Positions { positions } => Ok(positions
                .iter()
                .map(|&[x, y]| Position::new(x, y))
                .collect()),
            Layout::Dumbbell(d) => d.generate(model, seed),
            Layout::Random { n, side } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(random_connected_positions(*n, *side, model, &mut rng))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Controllers {
    pub consensus: bool,
    pub enforcement: bool,
    pub consensus_gain: f64,
    /// Ticks with at least one gradient move before enforcement gives up.
    pub max_control_steps: usize,
}

impl Default for Controllers {
    fn default() -> Self {
        Self {
            consensus: true,
            enforcement: false,
            consensus_gain: 1.0,
            max_control_steps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub comm: CommModel,
    pub layout: Layout,
    #[serde(default)]
    pub controllers: Controllers,
    #[serde(default)]
    pub enforcement: EnforcementConfig,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_dt() -> f64 {
    0.01
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a scenario file and applies the seed override from the
    /// environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        config.apply_env_overrides()?;
        Ok(config)
    }

    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw.trim().parse().map_err(|_| {
                SimError::Config(format!(
                    "{SEED_ENV} must be an unsigned integer, got {raw:?}"
                ))
            })?;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return bad(format!(
                "duration must be at least dt = {}, got {}",
                self.dt, self.duration
            ));
        }
        if !(self.controllers.consensus_gain.is_finite() && self.controllers.consensus_gain >= 0.0)
        {
            return bad(format!(
                "consensus gain must be non-negative, got {}",
                self.controllers.consensus_gain
            ));
        }
        self.comm.validate()?;
        self.enforcement.validate().map_err(SimError::Config)?;
        Ok(())
    }

    /// Number of ticks, `ceil(duration / dt)`.
    pub fn ticks(&self) -> usize {
        let ratio = self.duration / self.dt;
        // absorb rounding in ratios such as 0.3 / 0.1
        let nearest = ratio.round();
        if (ratio - nearest).abs() < 1e-9 * ratio.max(1.0) {
            nearest as usize
        } else {
            ratio.ceil() as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    GraphChanged {
        added: usize,
        removed: usize,
        edges: usize,
    },
    ConnectivityLost {
        lambda2: f64,
    },
    ConnectivityRestored {
        lambda2: f64,
    },
    BiconnectivityAchieved {
        lambda2: f64,
        lambda3: f64,
    },
    BiconnectivityLost {
        articulation_points: Vec<usize>,
    },
    /// A spectral verdict next to the combinatorial answer for the same
    /// node.
    CheckVerdict {
        agent: usize,
        lambda3: f64,
        bound: f64,
        passed: bool,
        reduced_connected: bool,
    },
    EstimationCompleted {
        agent: usize,
        steps: usize,
        max_angle: f64,
        warm_started: bool,
    },
    AgentHeld {
        agent: usize,
        reason: String,
    },
    EnforcementCapReached {
        control_steps: usize,
    },
    /// The perturbed lambda_3 nearly coincides with a neighbour, so the
    /// tracked eigenvector may switch branches.
    EigenvalueNearCrossing {
        agent: usize,
        gap: f64,
        ties_broken: bool,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::GraphChanged { .. } => "GraphChanged",
            EventKind::ConnectivityLost { .. } => "ConnectivityLost",
            EventKind::ConnectivityRestored { .. } => "ConnectivityRestored",
            EventKind::BiconnectivityAchieved { .. } => "BiconnectivityAchieved",
            EventKind::BiconnectivityLost { .. } => "BiconnectivityLost",
            EventKind::CheckVerdict { .. } => "CheckVerdict",
            EventKind::EstimationCompleted { .. } => "EstimationCompleted",
            EventKind::AgentHeld { .. } => "AgentHeld",
            EventKind::EnforcementCapReached { .. } => "EnforcementCapReached",
            EventKind::EigenvalueNearCrossing { .. } => "EigenvalueNearCrossing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, t: f64, kind: EventKind) {
        debug_assert!(self.events.last().is_none_or(|e| e.t <= t));
        self.events.push(Event { t, kind });
    }

    pub fn first(&self, name: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.kind.name() == name)
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.kind.name() == name).count()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub positions: Vec<Position>,
    pub lambda2: f64,
    pub lambda3: f64,
    pub biconnected: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub rows: Vec<TrajectoryRow>,
}

/// One agent's enforcement outcome in one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerLogRow {
    pub t: f64,
    pub agent: usize,
    pub phase: EnforcementPhase,
    pub lambda3: Option<f64>,
    pub bound: Option<f64>,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ticks: usize,
    pub final_time: f64,
    pub connected: bool,
    pub biconnected: bool,
    pub lambda2: f64,
    pub lambda3: f64,
    pub connectivity_lost: Option<f64>,
    pub biconnectivity_achieved: Option<f64>,
    pub control_steps: usize,
    /// Spectral passes whose reduced graph was disconnected.
    pub unsound_verdicts: usize,
    pub near_crossings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub events: EventLog,
    pub trajectory: TrajectoryRecord,
    pub controller_log: Vec<ControllerLogRow>,
    pub summary: RunSummary,
}

/// Robot positions and the graph they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub time: f64,
    pub positions: Vec<Position>,
    pub model: CommModel,
    pub graph: WeightedGraph,
}

impl World {
    pub fn new(positions: Vec<Position>, model: CommModel) -> Result<Self> {
        let graph = WeightedGraph::from_positions(&positions, &model)?;
        Ok(Self {
            time: 0.0,
            positions,
            model,
            graph,
        })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Moves every robot by `dt * u_i` and rebuilds the graph.
    pub fn step(&mut self, velocities: &[Velocity], dt: f64) -> Result<()> {
        assert_eq!(velocities.len(), self.n(), "one velocity per robot");
        if let Some(agent) = velocities
            .iter()
            .position(|u| !(u.x.is_finite() && u.y.is_finite()))
        {
            return Err(SimError::NonFiniteVelocity {
                agent,
                t: self.time,
            });
        }
        for (p, u) in self.positions.iter_mut().zip(velocities) {
            *p = p.advanced(u, dt);
        }
        self.graph = WeightedGraph::from_positions(&self.positions, &self.model)?;
        self.time += dt;
        Ok(())
    }

    fn observe(&self, t: f64) -> Result<TrajectoryRow> {
        let (lambda2, lambda3) = spectrum_pair(&self.graph)?;
        Ok(TrajectoryRow {
            t,
            positions: self.positions.clone(),
            lambda2,
            lambda3,
            biconnected: BiconnectivityStatus::of(&self.graph).is_biconnected(),
        })
    }
}

/// `(lambda_2, lambda_3)`, with missing ranks reported as zero.
fn spectrum_pair(g: &WeightedGraph) -> Result<(f64, f64)> {
    match g.n() {
        0 | 1 => Ok((0.0, 0.0)),
        2 => Ok((2.0 * g.weight(0, 1), 0.0)),
        _ => Ok(lambda2_lambda3(g)?),
    }
}

fn agent_seed(seed: u64, agent: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(agent as u64 + 1)
}

/// Runs a scenario with the exact eigensolver answering eigenvalue queries.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput> {
    run_with(config, &ExactEigensolver)
}

pub fn run_with(config: &ScenarioConfig, provider: &dyn EigenvalueProvider) -> Result<RunOutput> {
    config.validate()?;
    let positions = config.layout.positions(&config.comm, config.seed)?;
    let mut world = World::new(positions, config.comm)?;
    if !world.graph.is_connected() {
        return Err(SimError::InitialDisconnected);
    }
    let n = world.n();
    let mut agents: Vec<EnforcementAgent> = (0..n)
        .map(|i| EnforcementAgent::new(i, agent_seed(config.seed, i)))
        .collect();
    let mut events = EventLog::default();
    let mut trajectory = TrajectoryRecord::default();
    let mut controller_log = Vec::new();

    let ticks = config.ticks();
    let mut row = world.observe(0.0)?;
    let mut connected = world.graph.is_connected();
    let mut biconnected = row.biconnected;
    let mut connectivity_lost = None;
    let mut biconnectivity_achieved = None;
    let mut control_steps = 0usize;
    let mut enforcing = config.controllers.enforcement;
    let mut unsound_verdicts = 0usize;
    trajectory.rows.push(row.clone());

    for tick in 0..ticks {
        let t = tick as f64 * config.dt;
        let mut velocities = vec![Velocity::zeros(); n];
        if config.controllers.consensus {
            for (i, u) in velocities.iter_mut().enumerate() {
                *u += consensus_control(i, &world.positions, &world.graph)
                    * config.controllers.consensus_gain;
            }
        }
        if enforcing {
            let view = LocalView {
                positions: &world.positions,
                model: &world.model,
                graph: &world.graph,
            };
            let mut moved = false;
            for (i, agent) in agents.iter_mut().enumerate() {
                match agent.run_cycle(&view, &config.enforcement, provider) {
                    Ok(outcome) => {
                        unsound_verdicts += log_cycle(
                            &world.graph,
                            config.enforcement.crossing_gap,
                            t,
                            i,
                            &outcome,
                            &mut events,
                            &mut controller_log,
                        )?;
                        if outcome.velocity != Velocity::zeros() {
                            moved = true;
                        }
                        velocities[i] += outcome.velocity;
                    }
                    Err(e) => {
                        events.push(
                            t,
                            EventKind::AgentHeld {
                                agent: i,
                                reason: e.to_string(),
                            },
                        );
                        controller_log.push(ControllerLogRow {
                            t,
                            agent: i,
                            phase: agent.phase(),
                            lambda3: None,
                            bound: None,
                            speed: 0.0,
                        });
                    }
                }
            }
            if moved {
                control_steps += 1;
                if control_steps >= config.controllers.max_control_steps {
                    events.push(t, EventKind::EnforcementCapReached { control_steps });
                    enforcing = false;
                }
            }
        }

        let before = world.graph.clone();
        world.step(&velocities, config.dt)?;
        let t_next = (tick + 1) as f64 * config.dt;
        world.time = t_next;
        row = world.observe(t_next)?;

        let added = edge_count_difference(&world.graph, &before);
        let removed = edge_count_difference(&before, &world.graph);
        if added + removed > 0 {
            let edges = world.graph.edges().len();
            events.push(
                t_next,
                EventKind::GraphChanged {
                    added,
                    removed,
                    edges,
                },
            );
        }
        let now_connected = world.graph.is_connected();
        if connected && !now_connected {
            connectivity_lost.get_or_insert(t_next);
            events.push(
                t_next,
                EventKind::ConnectivityLost {
                    lambda2: row.lambda2,
                },
            );
        } else if !connected && now_connected {
            events.push(
                t_next,
                EventKind::ConnectivityRestored {
                    lambda2: row.lambda2,
                },
            );
        }
        connected = now_connected;
        if !biconnected && row.biconnected {
            biconnectivity_achieved.get_or_insert(t_next);
            events.push(
                t_next,
                EventKind::BiconnectivityAchieved {
                    lambda2: row.lambda2,
                    lambda3: row.lambda3,
                },
            );
        } else if biconnected && !row.biconnected {
            let articulation_points = articulation_points(&world.graph)
                .map(|s| s.into_iter().collect())
                .unwrap_or_default();
            events.push(
                t_next,
                EventKind::BiconnectivityLost {
                    articulation_points,
                },
            );
        }
        biconnected = row.biconnected;
        trajectory.rows.push(row.clone());
    }

    let summary = RunSummary {
        ticks,
        final_time: ticks as f64 * config.dt,
        connected,
        biconnected,
        lambda2: row.lambda2,
        lambda3: row.lambda3,
        connectivity_lost,
        biconnectivity_achieved,
        control_steps,
        unsound_verdicts,
        near_crossings: events.count("EigenvalueNearCrossing"),
    };
    Ok(RunOutput {
        events,
        trajectory,
        controller_log,
        summary,
    })
}

/// Edges of `a` missing from `b`.
fn edge_count_difference(a: &WeightedGraph, b: &WeightedGraph) -> usize {
    a.edges()
        .iter()
        .filter(|&&(i, j, _)| !b.has_edge(i, j))
        .count()
}

/// Records one agent's cycle; returns 1 if the verdict was unsound.
fn log_cycle(
    graph: &WeightedGraph,
    crossing_gap: f64,
    t: f64,
    agent: usize,
    outcome: &CycleOutcome,
    events: &mut EventLog,
    controller_log: &mut Vec<ControllerLogRow>,
) -> Result<usize> {
    let mut unsound = 0;
    if let Some(note) = outcome.spectrum.filter(|n| n.gap <= crossing_gap) {
        events.push(
            t,
            EventKind::EigenvalueNearCrossing {
                agent,
                gap: note.gap,
                ties_broken: note.ties_broken,
            },
        );
    }
    if let Some(estimation) = outcome.estimation {
        events.push(
            t,
            EventKind::EstimationCompleted {
                agent,
                steps: estimation.steps,
                max_angle: estimation.max_angle,
                warm_started: estimation.warm_started,
            },
        );
    }
    if let Some(v) = outcome.verdict {
        let reduced_connected = graph.reduced(agent)?.is_connected();
        if v.passed && !reduced_connected {
            unsound = 1;
        }
        events.push(
            t,
            EventKind::CheckVerdict {
                agent,
                lambda3: v.lambda3,
                bound: v.bound,
                passed: v.passed,
                reduced_connected,
            },
        );
    }
    controller_log.push(ControllerLogRow {
        t,
        agent,
        phase: *outcome
            .phases
            .last()
            .expect("cycle visits at least one phase"),
        lambda3: outcome.verdict.map(|v| v.lambda3),
        bound: outcome.verdict.map(|v| v.bound),
        speed: outcome.velocity.norm(),
    });
    Ok(unsound)
}
