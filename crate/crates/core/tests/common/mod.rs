//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use bicon::graph::{CommModel, Position, WeightedGraph};
use bicon::sim::random_connected_positions;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Connected R-disk configuration of `n` robots in the unit square.
pub fn geometric(n: usize, seed: u64) -> (Vec<Position>, WeightedGraph) {
    let model = CommModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_connected_positions(n, 1.0, &model, &mut rng);
    let g = WeightedGraph::from_positions(&p, &model).unwrap();
    (p, g)
}

/// Breadth-first connectivity straight from the weight matrix.
pub fn bfs_connected(w: &DMatrix<f64>, skip: Option<usize>) -> bool {
    let n = w.nrows();
    let nodes: Vec<usize> = (0..n).filter(|&k| Some(k) != skip).collect();
    let Some(&start) = nodes.first() else {
        return true;
    };
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if Some(v) != skip && !seen[v] && w[(u, v)] > 0.0 {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == nodes.len()
}

/// Nodes whose removal disconnects the rest, by exhaustive removal.
pub fn brute_articulation(w: &DMatrix<f64>) -> Vec<usize> {
    (0..w.nrows())
        .filter(|&i| !bfs_connected(w, Some(i)))
        .collect()
}

/// Ascending eigenvalues from nalgebra's symmetric solver.
pub fn oracle_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `lambda_3` of the Laplacian after scaling node `i`'s weights by `eps`,
/// rebuilt from positions.
pub fn perturbed_lambda3(positions: &[Position], model: &CommModel, i: usize, eps: f64) -> f64 {
    let g = WeightedGraph::from_positions(positions, model).unwrap();
    let l = g.scaled_at(i, eps).unwrap().laplacian().matrix;
    oracle_eigenvalues(&l)[2]
}

/// Central differences of `perturbed_lambda3` in the focal position.
pub fn fd_gradient(
    positions: &[Position],
    model: &CommModel,
    i: usize,
    eps: f64,
    h: f64,
) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (axis, slot) in out.iter_mut().enumerate() {
        let shifted = |d: f64| {
            let mut p = positions.to_vec();
            if axis == 0 {
                p[i].x += d;
            } else {
                p[i].y += d;
            }
            perturbed_lambda3(&p, model, i, eps)
        };
        *slot = (shifted(h) - shifted(-h)) / (2.0 * h);
    }
    out
}

/// True if no pair sits within `margin` of the radius, where weights jump.
pub fn clear_of_radius(positions: &[Position], model: &CommModel, margin: f64) -> bool {
    positions.iter().enumerate().all(|(a, p)| {
        positions[a + 1..]
            .iter()
            .all(|q| (p.distance(q) - model.radius).abs() > margin)
    })
}
