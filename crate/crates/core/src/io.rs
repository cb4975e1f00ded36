//! Text formats: edge lists, position lists, and the CSV / JSON-lines
//! records written by simulation runs.
//!
//! Edge lists hold one `i j weight` triple per line with 0-based indices.
//! A `# nodes: N` header fixes the node count so isolated trailing nodes
//! survive a round trip; other `#` lines are comments.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::estimator::EstimatorState;
use crate::graph::{GraphError, Position, WeightedGraph};
use crate::sim::{ControllerLogRow, EventLog, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

/// Full-precision scientific notation; parses back to the same `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| IoError::Open {
        path: path.display().to_string(),
        source,
    })
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field.parse().map_err(|_| IoError::Parse {
        line,
        message: format!("invalid {what} {field:?}"),
    })
}

/// Content lines with their 1-based numbers, comments stripped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn node_header(text: &str) -> Result<Option<usize>> {
    for (k, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim().strip_prefix('#') {
            if let Some(count) = rest.trim().strip_prefix("nodes:") {
                return parse_field(count.trim(), k + 1, "node count").map(Some);
            }
        }
    }
    Ok(None)
}

pub fn parse_edge_list(text: &str) -> Result<WeightedGraph> {
    let mut edges = Vec::new();
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        let (i, j, w) = match fields.as_slice() {
            [i, j] => (*i, *j, "1"),
            [i, j, w] => (*i, *j, *w),
            _ => {
                return Err(IoError::Parse {
                    line,
                    message: format!("expected `i j weight`, got {content:?}"),
                })
            }
        };
        let i: usize = parse_field(i, line, "node index")?;
        let j: usize = parse_field(j, line, "node index")?;
        let w: f64 = parse_field(w, line, "weight")?;
        edges.push((i, j, w));
    }
    let implied = edges
        .iter()
        .map(|&(i, j, _)| i.max(j) + 1)
        .max()
        .unwrap_or(0);
    let n = match node_header(text)? {
        Some(n) if n < implied => {
            return Err(GraphError::NodeOutOfRange {
                node: implied - 1,
                n,
            }
            .into());
        }
        Some(n) => n,
        None => implied,
    };
    Ok(WeightedGraph::from_edges(n, &edges)?)
}

pub fn read_edge_list(path: &Path) -> Result<WeightedGraph> {
    parse_edge_list(&read_text(path)?)
}

pub fn format_edge_list(g: &WeightedGraph) -> String {
    let mut out = format!("# nodes: {}\n", g.n());
    for (i, j, w) in g.edges() {
        out.push_str(&format!("{i} {j} {}\n", fmt_num(w)));
    }
    out
}

/// One `x y` pair per line.
pub fn parse_positions(text: &str) -> Result<Vec<Position>> {
    content_lines(text)
        .map(|(line, content)| {
            let fields: Vec<&str> = content.split_whitespace().collect();
            match fields.as_slice() {
                [x, y] => {
                    let p = Position::new(
                        parse_field(x, line, "coordinate")?,
                        parse_field(y, line, "coordinate")?,
                    );
                    if p.is_finite() {
                        Ok(p)
                    } else {
                        Err(IoError::Parse {
                            line,
                            message: "non-finite coordinate".into(),
                        })
                    }
                }
                _ => Err(IoError::Parse {
                    line,
                    message: format!("expected `x y`, got {content:?}"),
                }),
            }
        })
        .collect()
}

pub fn read_positions(path: &Path) -> Result<Vec<Position>> {
    parse_positions(&read_text(path)?)
}

pub fn format_positions(positions: &[Position]) -> String {
    positions
        .iter()
        .map(|p| format!("{} {}\n", fmt_num(p.x), fmt_num(p.y)))
        .collect()
}

/// Columns `t, agent, x, y, lambda2, lambda3, biconnected`, one row per
/// agent per tick.
pub fn write_trajectory_csv<W: Write>(trajectory: &TrajectoryRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "agent", "x", "y", "lambda2", "lambda3", "biconnected"])?;
    for row in &trajectory.rows {
        for (agent, p) in row.positions.iter().enumerate() {
            w.write_record([
                fmt_num(row.t),
                agent.to_string(),
                fmt_num(p.x),
                fmt_num(p.y),
                fmt_num(row.lambda2),
                fmt_num(row.lambda3),
                row.biconnected.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_jsonl<W: Write>(events: &EventLog, mut out: W) -> Result<()> {
    for event in &events.events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `t, agent, phase, lambda3, bound, speed`; blank cells where the
/// agent stopped before checking.
pub fn write_controller_log_csv<W: Write>(rows: &[ControllerLogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "agent", "phase", "lambda3", "bound", "speed"])?;
    let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
    for r in rows {
        w.write_record([
            fmt_num(r.t),
            r.agent.to_string(),
            r.phase.as_str().to_string(),
            opt(r.lambda3),
            opt(r.bound),
            fmt_num(r.speed),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t, agent, component, value` for every entry of every agent's
/// estimate.
pub fn write_estimator_samples_csv<W: Write>(
    samples: &[(f64, EstimatorState)],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "agent", "component", "value"])?;
    for (t, state) in samples {
        for (agent, z) in state.z.iter().enumerate() {
            for (component, value) in z.iter().enumerate() {
                w.write_record([
                    fmt_num(*t),
                    agent.to_string(),
                    component.to_string(),
                    fmt_num(*value),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_list_round_trip() {
        let g = WeightedGraph::from_edges(
            5,
            &[(0, 1, 0.1), (1, 2, std::f64::consts::PI), (0, 2, 1e-7)],
        )
        .unwrap();
        let back = parse_edge_list(&format_edge_list(&g)).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.n(), 5);
    }

    #[test]
    fn edge_list_comments_and_defaults() {
        let g = parse_edge_list("# a path\n0 1   # first\n\n1 2 0.5\n").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.weight(0, 1), 1.0);
        assert_eq!(g.weight(2, 1), 0.5);
    }

    #[test]
    fn edge_list_errors_carry_line() {
        match parse_edge_list("0 1 1\n0 x 1\n") {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_edge_list("# nodes: 2\n0 3 1\n").is_err());
        assert!(parse_edge_list("0 1 -1\n").is_err());
    }

    #[test]
    fn positions_round_trip() {
        let p = vec![Position::new(0.1, -0.2), Position::new(1.0 / 3.0, 2e-9)];
        assert_eq!(parse_positions(&format_positions(&p)).unwrap(), p);
        assert!(parse_positions("1 nan\n").is_err());
        assert!(parse_positions("1 2 3\n").is_err());
    }

    #[test]
    fn numbers_keep_full_precision() {
        for x in [0.1, 1.0 / 3.0, 123456.789e-30, -2.5] {
            let s = fmt_num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap();
            assert!(mantissa.chars().filter(char::is_ascii_digit).count() >= 9);
        }
    }
}
