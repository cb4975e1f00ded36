//! `bicon`: run scenarios, estimate eigenvectors, and test biconnectivity
//! from the command line.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bicon::estimator::{self, EstimatorState, IntegrationSettings, ShiftedLaplacian};
use bicon::graph::{articulation_points, is_locally_biconnected, CommModel, WeightedGraph};
use bicon::io::{self, fmt_num, IoError};
use bicon::sim::{self, ScenarioConfig, SimError};
use bicon::spectral::{
    check_biconnectivity_condition, eigendecompose, BoundNorm, ExactEigensolver, SpectralCheck,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "bicon",
    version,
    about = "Biconnectivity analysis and control for robot networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation scenario (TOML).
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Estimate a Laplacian eigenvector with the consensus estimator.
    Estimate {
        #[command(flatten)]
        input: GraphInput,
        /// 1-based rank of the target eigenvalue.
        #[arg(long)]
        eigen_index: usize,
        #[arg(long, default_value_t = 50.0)]
        gain: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write every n-th integration step to the trajectory dump.
        #[arg(long, default_value_t = 10)]
        sample_every: usize,
        /// Simulated time cap; defaults to 50 / gain. Slow modes often need far more.
        #[arg(long)]
        max_duration: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Spectral biconnectivity check for every node.
    Check {
        #[command(flatten)]
        input: GraphInput,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = NormArg::Sum)]
        norm: NormArg,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Articulation points and spectrum of a static graph.
    Analyze {
        #[command(flatten)]
        input: GraphInput,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct GraphInput {
    /// Edge list (`i j weight` per line), or positions with --positions.
    graph: PathBuf,
    /// Read the file as `x y` positions and build the R-disk graph.
    #[arg(long)]
    positions: bool,
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    #[arg(long, default_value_t = 0.125)]
    sigma: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    Sum,
    Euclidean,
}

impl From<NormArg> for BoundNorm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Sum => BoundNorm::Sum,
            NormArg::Euclidean => BoundNorm::Euclidean,
        }
    }
}

/// Failure with its exit code.
#[derive(Debug)]
enum Failure {
    Domain(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Usage(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Domain(m) | Failure::Usage(m) => m,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> Failure {
    Failure::Domain(e.to_string())
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Failure::Usage(e.to_string()),
            other => domain(other),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        domain(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        domain(e)
    }
}

type Outcome = Result<String, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { scenario, out } => run(&scenario, &out),
        Command::Estimate {
            input,
            eigen_index,
            gain,
            seed,
            sample_every,
            max_duration,
            out,
        } => estimate(
            &input,
            eigen_index,
            gain,
            seed,
            sample_every,
            max_duration,
            &out,
        ),
        Command::Check {
            input,
            epsilon,
            norm,
            out,
        } => check(&input, epsilon, norm.into(), &out),
        Command::Analyze { input, out } => analyze(&input, &out),
    };
    match result {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load_graph(input: &GraphInput) -> Result<WeightedGraph, Failure> {
    if input.positions {
        let model =
            CommModel::new(input.radius, input.sigma).map_err(|e| Failure::Usage(e.to_string()))?;
        let positions = io::read_positions(&input.graph)?;
        Ok(WeightedGraph::from_positions(&positions, &model).map_err(domain)?)
    } else {
        Ok(io::read_edge_list(&input.graph)?)
    }
}

fn writer(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), Failure> {
    let mut w = writer(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(domain)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn opt_time(t: Option<f64>) -> String {
    t.map(fmt_num).unwrap_or_else(|| "none".into())
}

fn run(scenario: &Path, out: &Path) -> Outcome {
    let config = ScenarioConfig::load(scenario)?;
    let output = sim::run(&config)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), config.to_toml_string())?;
    io::write_trajectory_csv(&output.trajectory, writer(out, "trajectory.csv")?)?;
    io::write_events_jsonl(&output.events, writer(out, "events.jsonl")?)?;
    io::write_controller_log_csv(&output.controller_log, writer(out, "controller.csv")?)?;
    write_json(out, "summary.json", &output.summary)?;
    let s = &output.summary;
    Ok(format!(
        "biconnected: {}, connected: {}, λ₂={}, λ₃={}, connectivity lost: {}, biconnectivity achieved: {}",
        s.biconnected,
        s.connected,
        fmt_num(s.lambda2),
        fmt_num(s.lambda3),
        opt_time(s.connectivity_lost),
        opt_time(s.biconnectivity_achieved),
    ))
}

#[derive(Serialize)]
struct EstimateSummary {
    eigen_index: usize,
    gain: f64,
    eigenvalue: f64,
    weights_perturbed: bool,
    converged: bool,
    stop_reason: estimator::StopReason,
    max_angle: f64,
    time_to_threshold: Option<f64>,
    steps: usize,
    step_size: f64,
    estimate: Vec<f64>,
    reference: Vec<f64>,
}

fn estimate(
    input: &GraphInput,
    rank: usize,
    gain: f64,
    seed: u64,
    sample_every: usize,
    max_duration: Option<f64>,
    out: &Path,
) -> Outcome {
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Failure::Usage(format!(
            "--gain must be positive, got {gain}"
        )));
    }
    if max_duration.is_some_and(|d| !(d.is_finite() && d > 0.0)) {
        return Err(Failure::Usage("--max-duration must be positive".into()));
    }
    if sample_every == 0 {
        return Err(Failure::Usage("--sample-every must be at least 1".into()));
    }
    let graph = load_graph(input)?;
    let n = graph.n();
    if rank == 0 || rank > n {
        return Err(Failure::Usage(format!(
            "--eigen-index must lie in 1..={n}, got {rank}"
        )));
    }
    let (graph, weights_perturbed) =
        estimator::break_eigenvalue_ties(&graph, seed).map_err(domain)?;
    let laplacian = graph.laplacian().matrix;
    let eig = eigendecompose(&laplacian).map_err(domain)?;
    let eigenvalue = eig.value(rank).map_err(domain)?;
    let reference = eig.vector(rank).map_err(domain)?;
    let sl = ShiftedLaplacian::new(&laplacian, eigenvalue);
    let initial = EstimatorState::seeded(n, gain, seed, &reference).map_err(domain)?;

    let mut samples = Vec::new();
    let mut step = 0usize;
    let report = estimator::integrate_observed(
        &initial,
        &sl,
        &graph,
        &IntegrationSettings {
            max_duration,
            ..Default::default()
        },
        |t, z| {
            if step.is_multiple_of(sample_every) {
                samples.push((t, z.clone()));
            }
            step += 1;
        },
    )
    .map_err(domain)?;
    if let Some((t, _)) = samples.last() {
        if *t < report.state.time {
            samples.push((report.state.time, report.state.clone()));
        }
    }

    fs::create_dir_all(out)?;
    io::write_estimator_samples_csv(&samples, writer(out, "estimator.csv")?)?;
    let summary = EstimateSummary {
        eigen_index: rank,
        gain,
        eigenvalue,
        weights_perturbed,
        converged: report.converged,
        stop_reason: report.stop_reason,
        max_angle: report.max_angle(),
        time_to_threshold: report.time_to_threshold,
        steps: report.steps,
        step_size: report.step_size,
        estimate: report.consensus_vector().iter().copied().collect(),
        reference: report.reference.iter().copied().collect(),
    };
    write_json(out, "summary.json", &summary)?;
    Ok(format!(
        "converged: {}, λ{rank}={}, max angle={} rad, time to threshold: {}",
        summary.converged,
        fmt_num(eigenvalue),
        fmt_num(summary.max_angle),
        opt_time(summary.time_to_threshold),
    ))
}

#[derive(Serialize)]
struct CheckRow {
    focal: usize,
    epsilon: f64,
    lambda3: f64,
    bound: f64,
    passed: bool,
    locally_biconnected: bool,
    reduced_connected: bool,
}

fn check(input: &GraphInput, epsilon: f64, norm: BoundNorm, out: &Path) -> Outcome {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Failure::Usage(format!(
            "--epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    let graph = load_graph(input)?;
    let settings = SpectralCheck { epsilon, norm };
    let mut rows = Vec::with_capacity(graph.n());
    for i in 0..graph.n() {
        let v = check_biconnectivity_condition(&graph, i, &settings, &ExactEigensolver)
            .map_err(domain)?;
        rows.push(CheckRow {
            focal: i,
            epsilon,
            lambda3: v.lambda3,
            bound: v.bound,
            passed: v.passed,
            locally_biconnected: is_locally_biconnected(&graph, i).map_err(domain)?,
            reduced_connected: graph.reduced(i).map_err(domain)?.is_connected(),
        });
    }
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_writer(writer(out, "verdicts.csv")?);
    w.write_record([
        "focal",
        "epsilon",
        "lambda3",
        "bound",
        "passed",
        "locally_biconnected",
        "reduced_connected",
    ])
    .map_err(domain)?;
    for r in &rows {
        w.write_record([
            r.focal.to_string(),
            fmt_num(r.epsilon),
            fmt_num(r.lambda3),
            fmt_num(r.bound),
            r.passed.to_string(),
            r.locally_biconnected.to_string(),
            r.reduced_connected.to_string(),
        ])
        .map_err(domain)?;
    }
    w.flush()?;
    write_json(out, "verdicts.json", &rows)?;
    let passed = rows.iter().filter(|r| r.passed).count();
    let biconnected = bicon::graph::is_biconnected(&graph).map_err(domain)?;
    Ok(format!(
        "passed: {passed}/{}, biconnected: {biconnected}",
        rows.len()
    ))
}

#[derive(Serialize)]
struct AnalyzeSummary {
    nodes: usize,
    edges: usize,
    connected: bool,
    biconnected: Option<bool>,
    articulation_points: Option<Vec<usize>>,
    spectrum: Vec<f64>,
}

fn analyze(input: &GraphInput, out: &Path) -> Outcome {
    let graph = load_graph(input)?;
    let connected = graph.is_connected();
    let articulation = articulation_points(&graph)
        .ok()
        .map(|s| s.into_iter().collect::<Vec<_>>());
    let biconnected = bicon::graph::is_biconnected(&graph).ok();
    let spectrum = eigendecompose(&graph.laplacian().matrix)
        .map_err(domain)?
        .values;
    fs::create_dir_all(out)?;
    fs::write(out.join("graph.txt"), io::format_edge_list(&graph))?;
    let summary = AnalyzeSummary {
        nodes: graph.n(),
        edges: graph.edges().len(),
        connected,
        biconnected,
        articulation_points: articulation.clone(),
        spectrum,
    };
    write_json(out, "summary.json", &summary)?;
    let rank = |k: usize| {
        summary
            .spectrum
            .get(k - 1)
            .copied()
            .map(fmt_num)
            .unwrap_or_else(|| "n/a".into())
    };
    let points = match &articulation {
        Some(p) => format!("{p:?}"),
        None => "n/a (disconnected)".into(),
    };
    Ok(format!(
        "biconnected: {}, articulation points: {points}, λ₂={}, λ₃={}",
        biconnected.unwrap_or(false),
        rank(2),
        rank(3),
    ))
}
