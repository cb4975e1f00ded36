//! Dense symmetric eigendecomposition and the spectral biconnectivity test.
//!
//! A node `i` is certified as a non-articulation point when the third
//! smallest eigenvalue of its perturbed Laplacian `L^i(eps)` exceeds
//! `eps * sqrt(n) * |a_i|`, where `a_i` is the node's (unperturbed) weight
//! row. Which norm `|a_i|` is taken in is selected by [`BoundNorm`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{is_locally_biconnected, GraphError, WeightedGraph};

const SYMMETRY_TOLERANCE: f64 = 1e-10;
const MAX_SWEEPS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),

    #[error("matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("Jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("eigenvalue rank {rank} out of range for dimension {n}")]
    RankOutOfRange { rank: usize, n: usize },

    #[error("eigenvalue provider failed: {0}")]
    Provider(String),

    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T, E = SpectralError> = std::result::Result<T, E>;

/// Eigenpairs of a real symmetric matrix, sorted by ascending eigenvalue.
/// Column `k` of `vectors` is paired with `values[k]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `rank`-th smallest eigenvalue, 1-based.
    pub fn value(&self, rank: usize) -> Result<f64> {
        self.check_rank(rank)?;
        Ok(self.values[rank - 1])
    }

    /// Unit eigenvector paired with the `rank`-th smallest eigenvalue.
    pub fn vector(&self, rank: usize) -> Result<DVector<f64>> {
        self.check_rank(rank)?;
        Ok(self.vectors.column(rank - 1).into_owned())
    }

    /// Index (0-based) of the eigenvalue closest to `target`.
    pub fn nearest(&self, target: f64) -> usize {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if (v - target).abs() < (self.values[best] - target).abs() {
                best = k;
            }
        }
        best
    }

    /// Distance from eigenvalue `index` (0-based) to its nearest neighbour in
    /// the spectrum; infinite for 1x1 matrices.
    pub fn gap_at(&self, index: usize) -> f64 {
        let v = self.values[index];
        let below = index.checked_sub(1).map(|k| v - self.values[k]);
        let above = self.values.get(index + 1).map(|w| w - v);
        match (below, above) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => f64::INFINITY,
        }
    }

    /// Smallest gap between consecutive eigenvalues.
    pub fn min_gap(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    fn check_rank(&self, rank: usize) -> Result<()> {
        if rank == 0 || rank > self.dim() {
            Err(SpectralError::RankOutOfRange {
                rank,
                n: self.dim(),
            })
        } else {
            Ok(())
        }
    }
}

/// Eigendecomposition by cyclic Jacobi rotations.
pub fn eigendecompose(m: &DMatrix<f64>) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(SpectralError::NotSquare(m.nrows(), m.ncols()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SpectralError::NonFinite);
    }
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    let mut deviation: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            deviation = deviation.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if deviation > SYMMETRY_TOLERANCE * scale {
        return Err(SpectralError::Asymmetric(deviation));
    }

    let mut a = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let mut v = DMatrix::<f64>::identity(n, n);
    let frobenius = a.norm();

    let mut converged = n <= 1 || frobenius == 0.0;
    let mut sweep = 0;
    while !converged {
        if sweep == MAX_SWEEPS {
            return Err(SpectralError::NoConvergence(MAX_SWEEPS));
        }
        sweep += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        converged = off <= 1e-15 * frobenius;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&k| a[(k, k)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(EigenDecomposition { values, vectors })
}

/// Applies the plane rotation `J(p, q)` as `A <- J^T A J`, `V <- V J`.
fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Source of Laplacian eigenvalues for the biconnectivity check.
///
/// The default is the centralized [`ExactEigensolver`]; a decentralized
/// estimator can be plugged in behind the same interface.
pub trait EigenvalueProvider {
    /// The `rank`-th smallest eigenvalue of the symmetric `matrix`, 1-based.
    fn kth_smallest(&self, matrix: &DMatrix<f64>, rank: usize) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactEigensolver;

impl EigenvalueProvider for ExactEigensolver {
    fn kth_smallest(&self, matrix: &DMatrix<f64>, rank: usize) -> Result<f64> {
        eigendecompose(matrix)?.value(rank)
    }
}

/// Norm applied to the focal node's weight row in the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundNorm {
    /// `sum_k a_ik`. Never certifies an articulation point.
    #[default]
    Sum,
    /// `(sum_k a_ik^2)^(1/2)`. Admits false passes on nodes with few, small
    /// separated components (the middle of a 3-path, for one).
    Euclidean,
}

/// `eps * sqrt(n) * |a_i|` from the unperturbed weights of node `i`.
pub fn biconnectivity_bound(g: &WeightedGraph, i: usize, epsilon: f64, norm: BoundNorm) -> f64 {
    let row = g.weights().row(i);
    let magnitude = match norm {
        BoundNorm::Sum => row.sum(),
        BoundNorm::Euclidean => row.norm(),
    };
    epsilon * (g.n() as f64).sqrt() * magnitude
}

/// Parameters of the spectral check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralCheck {
    pub epsilon: f64,
    #[serde(default)]
    pub norm: BoundNorm,
}

impl Default for SpectralCheck {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            norm: BoundNorm::Sum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiconnectivityVerdict {
    pub focal: usize,
    pub epsilon: f64,
    pub lambda3: f64,
    pub bound: f64,
    pub passed: bool,
    pub locally_biconnected: bool,
}

/// Evaluates the perturbed-Laplacian condition at node `i`.
///
/// The check is executed regardless of local biconnectivity; the verdict
/// records that flag so callers following the enforcement flow can skip
/// locally biconnected nodes. Equality with the bound fails.
pub fn check_biconnectivity_condition(
    g: &WeightedGraph,
    i: usize,
    check: &SpectralCheck,
    provider: &dyn EigenvalueProvider,
) -> Result<BiconnectivityVerdict> {
    g.check_node(i)?;
    if !g.is_connected() {
        return Err(GraphError::Disconnected.into());
    }
    if g.n() < 3 {
        return Err(GraphError::TooFewNodes(g.n()).into());
    }
    let perturbed = g.perturb(i, check.epsilon)?;
    let lambda3 = provider.kth_smallest(&perturbed.matrix, 3)?;
    let bound = biconnectivity_bound(g, i, check.epsilon, check.norm);
    Ok(BiconnectivityVerdict {
        focal: i,
        epsilon: check.epsilon,
        lambda3,
        bound,
        passed: lambda3 > bound,
        locally_biconnected: is_locally_biconnected(g, i)?,
    })
}

/// Runs the check at node `i` for each perturbation factor in `epsilons`.
pub fn epsilon_sweep(
    g: &WeightedGraph,
    i: usize,
    epsilons: &[f64],
    norm: BoundNorm,
    provider: &dyn EigenvalueProvider,
) -> Result<Vec<BiconnectivityVerdict>> {
    epsilons
        .iter()
        .map(|&epsilon| {
            check_biconnectivity_condition(g, i, &SpectralCheck { epsilon, norm }, provider)
        })
        .collect()
}

/// Second and third smallest Laplacian eigenvalues; missing ranks are 0.
pub fn lambda2_lambda3(g: &WeightedGraph) -> Result<(f64, f64)> {
    let eig = eigendecompose(&g.laplacian().matrix)?;
    let at = |k: usize| eig.values.get(k).copied().unwrap_or(0.0);
    Ok((at(1), at(2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual_ok(m: &DMatrix<f64>, eig: &EigenDecomposition) {
        for k in 0..eig.dim() {
            let v = eig.vectors.column(k);
            let r = (m * v - eig.values[k] * v).norm();
            assert!(r <= 1e-9 * eig.values[k].abs().max(1.0), "residual {r}");
        }
        let gram = eig.vectors.transpose() * &eig.vectors;
        let id = DMatrix::<f64>::identity(eig.dim(), eig.dim());
        assert!((gram - id).amax() <= 1e-10);
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn k2_spectrum() {
        let l = WeightedGraph::unit(2, &[(0, 1)]).laplacian().matrix;
        let eig = eigendecompose(&l).unwrap();
        assert!(eig.values[0].abs() < 1e-14);
        assert!((eig.values[1] - 2.0).abs() < 1e-14);
        residual_ok(&l, &eig);
    }

    #[test]
    fn path3_spectrum() {
        let l = WeightedGraph::unit(3, &[(0, 1), (1, 2)]).laplacian().matrix;
        let eig = eigendecompose(&l).unwrap();
        for (got, want) in eig.values.iter().zip([0.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        }
        residual_ok(&l, &eig);
    }

    #[test]
    fn zero_matrix() {
        let z = DMatrix::zeros(3, 3);
        let eig = eigendecompose(&z).unwrap();
        assert_eq!(eig.values, vec![0.0, 0.0, 0.0]);
        residual_ok(&z, &eig);
    }

    #[test]
    fn rejects_bad_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            eigendecompose(&m),
            Err(SpectralError::Asymmetric(_))
        ));
        assert!(matches!(
            eigendecompose(&DMatrix::zeros(2, 3)),
            Err(SpectralError::NotSquare(2, 3))
        ));
        let eig = eigendecompose(&DMatrix::zeros(2, 2)).unwrap();
        assert!(eig.value(0).is_err());
        assert!(eig.value(3).is_err());
    }

    #[test]
    fn bound_examples() {
        let g = WeightedGraph::unit(4, &[(0, 1)]);
        assert!((biconnectivity_bound(&g, 0, 0.1, BoundNorm::Euclidean) - 0.2).abs() < 1e-15);
        assert!((biconnectivity_bound(&g, 0, 0.1, BoundNorm::Sum) - 0.2).abs() < 1e-15);
        assert_eq!(biconnectivity_bound(&g, 2, 0.1, BoundNorm::Sum), 0.0);

        let tri = WeightedGraph::unit(3, &[(0, 1), (1, 2), (0, 2)]);
        for norm in [BoundNorm::Sum, BoundNorm::Euclidean] {
            let b = biconnectivity_bound(&tri, 0, 0.01, norm);
            assert!((biconnectivity_bound(&tri, 0, 0.03, norm) - b * 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cycle_passes_everywhere() {
        let c4 = WeightedGraph::unit(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let check = SpectralCheck {
            epsilon: 0.01,
            norm: BoundNorm::Sum,
        };
        for i in 0..4 {
            let v = check_biconnectivity_condition(&c4, i, &check, &ExactEigensolver).unwrap();
            assert!(v.passed, "{v:?}");
            assert!(!v.locally_biconnected);
            assert!(c4.reduced(i).unwrap().is_connected());
        }
    }

    #[test]
    fn path3_middle_fails() {
        let p3 = WeightedGraph::unit(3, &[(0, 1), (1, 2)]);
        let check = SpectralCheck {
            epsilon: 0.01,
            norm: BoundNorm::Sum,
        };
        let v = check_biconnectivity_condition(&p3, 1, &check, &ExactEigensolver).unwrap();
        // L^1(eps) = eps * L(P3): lambda3 = 3 eps against 2 sqrt(3) eps
        assert!((v.lambda3 - 0.03).abs() < 1e-14);
        assert!((v.bound - 0.02 * 3f64.sqrt()).abs() < 1e-15);
        assert!(!v.passed);
    }

    #[test]
    fn euclidean_bound_misses_path3_middle() {
        let p3 = WeightedGraph::unit(3, &[(0, 1), (1, 2)]);
        let check = SpectralCheck {
            epsilon: 0.01,
            norm: BoundNorm::Euclidean,
        };
        let v = check_biconnectivity_condition(&p3, 1, &check, &ExactEigensolver).unwrap();
        assert!((v.bound - 0.01 * 6f64.sqrt()).abs() < 1e-15);
        assert!(v.passed);
        assert!(!p3.reduced(1).unwrap().is_connected());
    }

    #[test]
    fn equality_fails() {
        struct Fixed(f64);
        impl EigenvalueProvider for Fixed {
            fn kth_smallest(&self, _: &DMatrix<f64>, _: usize) -> Result<f64> {
                Ok(self.0)
            }
        }
        let p3 = WeightedGraph::unit(3, &[(0, 1), (1, 2)]);
        let check = SpectralCheck {
            epsilon: 0.5,
            norm: BoundNorm::Sum,
        };
        let bound = biconnectivity_bound(&p3, 1, 0.5, BoundNorm::Sum);
        let v = check_biconnectivity_condition(&p3, 1, &check, &Fixed(bound)).unwrap();
        assert!(!v.passed);
    }

    #[test]
    fn check_preconditions() {
        let check = SpectralCheck::default();
        let split = WeightedGraph::unit(4, &[(0, 1), (2, 3)]);
        assert_eq!(
            check_biconnectivity_condition(&split, 0, &check, &ExactEigensolver).unwrap_err(),
            SpectralError::Graph(GraphError::Disconnected)
        );
        let k2 = WeightedGraph::unit(2, &[(0, 1)]);
        assert!(check_biconnectivity_condition(&k2, 0, &check, &ExactEigensolver).is_err());
    }

    #[test]
    fn halving_epsilon_keeps_soundness() {
        let c4 = WeightedGraph::unit(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let sweep = epsilon_sweep(
            &c4,
            0,
            &[0.02, 0.01, 0.005],
            BoundNorm::Sum,
            &ExactEigensolver,
        )
        .unwrap();
        for v in sweep {
            if v.passed {
                assert!(c4.reduced(0).unwrap().is_connected());
            }
        }
    }
}
