//! Jump-linear-system view of the error dynamics.
//!
//! While the topology chain sits in mode `i`, the basic-node error evolves as
//! `e(k+1) = J_bi e(k) + B_bi eps(k)`. Mean-square behaviour is governed by
//! the lifted second-moment operator `D_b = [p_ji (J_bj (x) J_bj)]` (block
//! row `i`, block column `j`) and the first-moment operator
//! `C_b = [p_ji J_bj]`. Everything here is dense; callers cap the lifted
//! dimension and fall back to simulation above it.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::NoiseModel;
use crate::graph::{derive_matrices, full_update_matrix, NodePartition};
use crate::topology::{StationaryDistribution, TopologyChain, TransitionMatrix};

/// Default refusal threshold for `N * n_b^2`.
pub const DEFAULT_SIZE_CAP: usize = 10_000;

/// Margin below one required to certify `rho(D_b) < 1`.
pub const RHO_MARGIN: f64 = 1e-8;

const DENSE_EIGEN_MAX: usize = 2000;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 100_000;

/// Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-major stacking of one matrix.
pub fn stack_phi(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Concatenation of the column stackings of a sequence of matrices.
pub fn stack_phihat(ms: &[DMatrix<f64>]) -> DVector<f64> {
    let len = ms.iter().map(|m| m.len()).sum();
    let mut out = Vec::with_capacity(len);
    for m in ms {
        out.extend_from_slice(m.as_slice());
    }
    DVector::from_vec(out)
}

/// Inverse of [`stack_phihat`] for `count` matrices of shape `rows x cols`.
pub fn unstack_phihat(v: &DVector<f64>, rows: usize, cols: usize, count: usize) -> Result<Vec<DMatrix<f64>>> {
    let block = rows * cols;
    if v.len() != block * count {
        return Err(Error::Dimension(format!(
            "vector of length {} cannot hold {count} matrices of shape {rows}x{cols}",
            v.len()
        )));
    }
    Ok(v.as_slice().chunks_exact(block.max(1)).take(count).map(|c| DMatrix::from_column_slice(rows, cols, c)).collect())
}

/// Block matrix whose block `(i, j)` is `p_ji * blocks[j]`.
pub fn mode_coupled(p: &TransitionMatrix, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let count = blocks.len();
    let (r, c) = blocks[0].shape();
    let mut out = DMatrix::zeros(count * r, count * c);
    for i in 0..count {
        for (j, b) in blocks.iter().enumerate() {
            let pji = p.get(j, i);
            if pji != 0.0 {
                out.view_mut((i * r, j * c), (r, c)).copy_from(&(b * pji));
            }
        }
    }
    out
}

/// Spectral radius. Dense eigenvalues up to 2000 rows; above that,
/// power iteration on the shifted matrix `A + I` (the Perron root of a
/// nonnegative matrix shifts by exactly one).
pub fn spectral_radius(a: &DMatrix<f64>, tol: f64) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!("spectral radius of a {}x{} matrix", a.nrows(), a.ncols())));
    }
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    if a.nrows() <= DENSE_EIGEN_MAX {
        let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
        let eigs = m.eigenvalues().map_err(|_| Error::NoConvergence { iterations: 0 })?;
        return Ok(eigs.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    power_spectral_radius(a, tol, POWER_MAX_ITER)
}

/// Power iteration for nonnegative matrices.
pub fn power_spectral_radius(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let n = a.nrows();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let y = a * &x + &x;
        let lambda = y.amax() / x.amax();
        x = &y / y.amax();
        if (lambda - prev).abs() <= tol * lambda.max(1.0) {
            return Ok(lambda - 1.0);
        }
        prev = lambda;
    }
    Err(Error::NoConvergence { iterations: max_iter })
}

/// Per-mode matrices of the error recursion plus chain and noise data.
#[derive(Debug, Clone)]
pub struct JumpSystem {
    pub partition: NodePartition,
    pub transition: TransitionMatrix,
    pub pi: StationaryDistribution,
    pub j_b: Vec<DMatrix<f64>>,
    pub b_b: Vec<DMatrix<f64>>,
    /// Full update matrices `J_i`, reference rows included.
    pub j_full: Vec<DMatrix<f64>>,
    pub gamma: DVector<f64>,
    pub big_gamma: DMatrix<f64>,
    pub union_connected: bool,
    pub references_reach_all: bool,
}

impl JumpSystem {
    pub fn from_chain(chain: &TopologyChain, noise: &NoiseModel) -> Result<Self> {
        let partition = chain.partition();
        let (gamma, big_gamma) = noise.moments(partition)?;
        Self::from_parts(chain, gamma, big_gamma)
    }

    /// Builds the system with explicit noise moments.
    pub fn from_parts(chain: &TopologyChain, gamma: DVector<f64>, big_gamma: DMatrix<f64>) -> Result<Self> {
        let partition = chain.partition();
        let dim = partition.noise_dim();
        if gamma.len() != dim || big_gamma.shape() != (dim, dim) {
            return Err(Error::Dimension(format!("noise moments must have dimension {dim}")));
        }
        let pi = chain.transition().stationary()?;
        let mut j_b = Vec::with_capacity(chain.len());
        let mut b_b = Vec::with_capacity(chain.len());
        let mut j_full = Vec::with_capacity(chain.len());
        for (g, w) in chain.states().iter().zip(chain.weights()) {
            let dm = derive_matrices(g, w)?;
            j_b.push(dm.j_b);
            b_b.push(dm.b_b);
            j_full.push(full_update_matrix(g, w)?);
        }
        Ok(Self {
            partition,
            transition: chain.transition().clone(),
            pi,
            j_b,
            b_b,
            j_full,
            gamma,
            big_gamma,
            union_connected: chain.union().is_connected(),
            references_reach_all: chain.union().references_reach_all(),
        })
    }

    pub fn modes(&self) -> usize {
        self.j_b.len()
    }

    /// Dimension of `D_b`, `N * n_b^2`.
    pub fn lifted_dim(&self) -> usize {
        self.modes() * self.partition.n_basic().pow(2)
    }
}

/// Lifted first- and second-moment operators.
#[derive(Debug, Clone)]
pub struct LiftedOperators {
    pub d_b: DMatrix<f64>,
    pub c_b: DMatrix<f64>,
}

pub fn build_lifted(sys: &JumpSystem, size_cap: usize) -> Result<LiftedOperators> {
    let dim = sys.lifted_dim();
    if dim > size_cap {
        return Err(Error::SizeCap { dim, cap: size_cap });
    }
    let f_b: Vec<_> = sys.j_b.iter().map(|j| kron(j, j)).collect();
    Ok(LiftedOperators { d_b: mode_coupled(&sys.transition, &f_b), c_b: mode_coupled(&sys.transition, &sys.j_b) })
}

/// Full-node second-moment operator `D = [p_ji (J_j (x) J_j)]`.
pub fn build_full_lifted(sys: &JumpSystem, size_cap: usize) -> Result<DMatrix<f64>> {
    let n = sys.partition.len();
    let dim = sys.modes() * n * n;
    if dim > size_cap {
        return Err(Error::SizeCap { dim, cap: size_cap });
    }
    let f: Vec<_> = sys.j_full.iter().map(|j| kron(j, j)).collect();
    Ok(mode_coupled(&sys.transition, &f))
}

/// Outcome of the mean-square convergence test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceCertificate {
    pub rho_db: f64,
    pub union_connected: bool,
    /// Every node shares a union component with a reference. This, not plain
    /// union connectivity, is what the spectral test tracks when there are
    /// several references.
    pub references_reach_all: bool,
    pub ms_convergent: bool,
    /// Whether the chain is ergodic with positive self-transitions, in which
    /// case the spectral test and union connectivity must agree.
    pub hypotheses_hold: bool,
}

pub fn ms_convergence(sys: &JumpSystem, lifted: &LiftedOperators) -> Result<ConvergenceCertificate> {
    let rho_db = spectral_radius(&lifted.d_b, POWER_TOL)?;
    let ms_convergent = rho_db < 1.0 - RHO_MARGIN;
    let hypotheses_hold = sys.transition.is_ergodic() && sys.transition.has_positive_diagonal();
    if hypotheses_hold && ms_convergent != sys.references_reach_all {
        return Err(Error::CriteriaDisagree { rho: rho_db, references_reach_all: sys.references_reach_all });
    }
    Ok(ConvergenceCertificate {
        rho_db,
        union_connected: sys.union_connected,
        references_reach_all: sys.references_reach_all,
        ms_convergent,
        hypotheses_hold,
    })
}

/// Builds the lifted operators and runs the convergence test.
pub fn is_ms_convergent(sys: &JumpSystem) -> Result<ConvergenceCertificate> {
    ms_convergence(sys, &build_lifted(sys, DEFAULT_SIZE_CAP)?)
}

/// Limiting first and second moments of the basic-node error.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// Limiting mean error.
    pub mu: DVector<f64>,
    /// Limiting correlation `E[e e^T]`.
    pub q_big: DMatrix<f64>,
    /// Mode-conditional means, `q = (I - C_b)^-1 psi`.
    pub q: Vec<DVector<f64>>,
    /// Mode-conditional correlations.
    pub q_modes: Vec<DMatrix<f64>>,
    pub psi: DVector<f64>,
    pub r: Vec<DMatrix<f64>>,
}

impl SteadyState {
    /// Per-node limiting variance `Q_uu - mu_u^2`.
    pub fn variance(&self) -> DVector<f64> {
        DVector::from_fn(self.mu.len(), |u, _| self.q_big[(u, u)] - self.mu[u] * self.mu[u])
    }
}

pub fn steady_state(sys: &JumpSystem, lifted: &LiftedOperators) -> Result<SteadyState> {
    let cert = ms_convergence(sys, lifted)?;
    if !cert.ms_convergent {
        return Err(Error::NotConvergent { rho: cert.rho_db });
    }
    let nb = sys.partition.n_basic();
    let modes = sys.modes();
    let p = &sys.transition;

    // psi_j = sum_i p_ij B_bi gamma pi_i
    let drift: Vec<DVector<f64>> = (0..modes).map(|i| &sys.b_b[i] * &sys.gamma * sys.pi.get(i)).collect();
    let mut psi = DVector::zeros(modes * nb);
    for j in 0..modes {
        let mut block = DVector::zeros(nb);
        for (i, d) in drift.iter().enumerate() {
            block += d * p.get(i, j);
        }
        psi.rows_mut(j * nb, nb).copy_from(&block);
    }

    let q_flat = solve_contraction(&lifted.c_b, &psi, "I - C_b")?;
    let q: Vec<DVector<f64>> = (0..modes).map(|i| q_flat.rows(i * nb, nb).into_owned()).collect();

    // R_j(q) = sum_i p_ij (B_bi Gamma B_bi^T pi_i + J_bi q_i gamma^T B_bi^T + B_bi gamma q_i^T J_bi^T)
    let per_mode: Vec<DMatrix<f64>> = (0..modes)
        .map(|i| {
            let b = &sys.b_b[i];
            let bg = b * &sys.gamma;
            let jq = &sys.j_b[i] * &q[i];
            b * &sys.big_gamma * b.transpose() * sys.pi.get(i) + &jq * bg.transpose() + &bg * jq.transpose()
        })
        .collect();
    let r: Vec<DMatrix<f64>> = (0..modes)
        .map(|j| {
            let mut acc = DMatrix::zeros(nb, nb);
            for (i, m) in per_mode.iter().enumerate() {
                acc += m * p.get(i, j);
            }
            acc
        })
        .collect();

    let q_modes_flat = solve_contraction(&lifted.d_b, &stack_phihat(&r), "I - D_b")?;
    let q_modes = unstack_phihat(&q_modes_flat, nb, nb, modes)?;

    let mu = q.iter().fold(DVector::zeros(nb), |acc, qi| acc + qi);
    let q_big = q_modes.iter().fold(DMatrix::zeros(nb, nb), |acc, qi| acc + qi);
    Ok(SteadyState { mu, q_big, q, q_modes, psi, r })
}

/// Solves `(I - A) x = b` by LU, falling back to the Neumann series when the
/// factorisation fails. Callers have already certified `rho(A) < 1`.
fn solve_contraction(a: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let n = a.nrows();
    let lhs = DMatrix::identity(n, n) - a;
    if let Some(x) = lhs.clone().lu().solve(b) {
        let residual = (&lhs * &x - b).amax();
        if x.iter().all(|v| v.is_finite()) && residual <= 1e-9 * (1.0 + b.amax()) {
            return Ok(x);
        }
    }
    let mut x = b.clone();
    for _ in 0..POWER_MAX_ITER {
        let next = a * &x + b;
        let delta = (&next - &x).amax();
        x = next;
        if delta <= 1e-15 * (1.0 + x.amax()) {
            return Ok(x);
        }
    }
    let condition = lhs.norm() * lhs.try_inverse().map(|inv| inv.norm()).unwrap_or(f64::INFINITY);
    Err(Error::Singular { what, condition })
}

/// Checkable structural facts about the lifted operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropertyReport {
    /// Largest deviation of any row sum of `J_i` or `F_i` from one.
    pub max_row_sum_deviation: f64,
    pub rho_d: f64,
    pub rho_db: f64,
    pub union_connected: bool,
    /// Strong connectivity of the directed support graph of `D`.
    pub d_irreducible: bool,
    pub stochastic_ok: bool,
    pub rho_d_at_most_one: bool,
    /// `rho(D_b) < rho(D)`; vacuous when the union is disconnected.
    pub strict_submatrix_gap: bool,
    /// Irreducibility of `D` agrees with union connectivity.
    pub irreducible_iff_connected: bool,
}

impl PropertyReport {
    pub fn all_hold(&self) -> bool {
        self.stochastic_ok && self.rho_d_at_most_one && self.strict_submatrix_gap && self.irreducible_iff_connected
    }
}

pub fn verify_structural_properties(sys: &JumpSystem, size_cap: usize) -> Result<PropertyReport> {
    let lifted = build_lifted(sys, size_cap)?;
    let d = build_full_lifted(sys, size_cap)?;
    let row_dev = |m: &DMatrix<f64>| m.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let max_row_sum_deviation =
        sys.j_full.iter().map(|j| row_dev(j).max(row_dev(&kron(j, j)))).fold(0.0, f64::max);
    let rho_d = spectral_radius(&d, POWER_TOL)?;
    let rho_db = spectral_radius(&lifted.d_b, POWER_TOL)?;
    let d_irreducible = support_strongly_connected(&d);
    Ok(PropertyReport {
        max_row_sum_deviation,
        rho_d,
        rho_db,
        union_connected: sys.union_connected,
        d_irreducible,
        stochastic_ok: max_row_sum_deviation <= 1e-12,
        rho_d_at_most_one: rho_d <= 1.0 + 1e-9,
        strict_submatrix_gap: !sys.union_connected || rho_db < rho_d,
        irreducible_iff_connected: d_irreducible == sys.union_connected,
    })
}

/// Strong connectivity of the directed graph with an edge `i -> j` wherever
/// `m[(i, j)] != 0`.
pub fn support_strongly_connected(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    if n == 0 {
        return true;
    }
    let mut fwd = vec![Vec::new(); n];
    let mut rev = vec![Vec::new(); n];
    for j in 0..n {
        for i in 0..n {
            if m[(i, j)] != 0.0 {
                fwd[i].push(j);
                rev[j].push(i);
            }
        }
    }
    let reach = |adj: &[Vec<usize>]| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    };
    reach(&fwd) && reach(&rev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::PairNoise;
    use crate::graph::MeasurementGraph;

    fn part(nb: usize, nr: usize) -> NodePartition {
        NodePartition::new(nb, nr).unwrap()
    }

    #[test]
    fn kron_identity() {
        assert_eq!(kron(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2)), DMatrix::identity(4, 4));
    }

    #[test]
    fn kron_of_stochastic_is_stochastic() {
        let a = DMatrix::from_row_slice(2, 2, &[0.25, 0.75, 0.5, 0.5]);
        let b = DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.5, 1.0, 0.0, 0.0, 0.1, 0.1, 0.8]);
        for row in kron(&a, &b).row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(stack_phi(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(stack_phi(&DMatrix::from_element(1, 1, 7.5)).as_slice(), &[7.5]);
        let seq = vec![m.clone(), m.transpose()];
        assert_eq!(unstack_phihat(&stack_phihat(&seq), 2, 2, 2).unwrap(), seq);
        assert!(unstack_phihat(&DVector::zeros(7), 2, 2, 2).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius(&DMatrix::identity(4, 4), 1e-12).unwrap() - 1.0).abs() < 1e-14);
        assert!((spectral_radius(&(DMatrix::identity(3, 3) * 0.5), 1e-12).unwrap() - 0.5).abs() < 1e-14);
        let j = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.2, 0.3, 0.5, 0.0, 0.4, 0.6]);
        assert!((spectral_radius(&j, 1e-12).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_agrees_with_dense() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, 0.4, 0.0, 0.3, 0.2, 0.3, 0.0, 0.5, 0.4]);
        let dense = spectral_radius(&a, 1e-12).unwrap();
        let power = power_spectral_radius(&a, 1e-13, 100_000).unwrap();
        assert!((dense - power).abs() < 1e-9, "{dense} vs {power}");
        // reducible, block-diagonal
        let b = DMatrix::from_row_slice(3, 3, &[0.9, 0.0, 0.0, 0.0, 0.3, 0.1, 0.0, 0.2, 0.5]);
        let power = power_spectral_radius(&b, 1e-13, 100_000).unwrap();
        assert!((power - 0.9).abs() < 1e-9);
    }

    #[test]
    fn mode_coupling_layout() {
        let p = TransitionMatrix::from_row_major(2, &[0.8, 0.2, 0.4, 0.6]).unwrap();
        let blocks = vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 3.0)];
        let d = mode_coupled(&p, &blocks);
        // block (i, j) = p_ji * X_j
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[0.8 * 2.0, 0.4 * 3.0, 0.2 * 2.0, 0.6 * 3.0]));
    }

    fn edgeless_single_state() -> JumpSystem {
        let g = MeasurementGraph::edgeless(part(3, 1));
        let chain = TopologyChain::with_unit_weights(vec![g], TransitionMatrix::identity(1)).unwrap();
        JumpSystem::from_chain(&chain, &NoiseModel::noiseless(4)).unwrap()
    }

    #[test]
    fn edgeless_counterexample() {
        let sys = edgeless_single_state();
        let lifted = build_lifted(&sys, DEFAULT_SIZE_CAP).unwrap();
        assert_eq!(lifted.d_b, DMatrix::identity(9, 9));
        let cert = ms_convergence(&sys, &lifted).unwrap();
        assert_eq!(cert.rho_db, 1.0);
        assert!(!cert.ms_convergent && !cert.union_connected);
        assert!(matches!(steady_state(&sys, &lifted), Err(Error::NotConvergent { .. })));
    }

    #[test]
    fn static_connected_graph() {
        let p = part(2, 1);
        let g = MeasurementGraph::new(p, [(0, 1), (1, 2)]).unwrap();
        let chain = TopologyChain::with_unit_weights(vec![g.clone()], TransitionMatrix::identity(1)).unwrap();
        let sys = JumpSystem::from_chain(&chain, &NoiseModel::noiseless(3)).unwrap();
        let cert = is_ms_convergent(&sys).unwrap();
        assert!(cert.ms_convergent);
        // oracle: rho(J_b (x) J_b) = rho(J_b)^2 from the 2x2 eigenproblem
        // J_b = [[1/2, 1/2], [1/3, 1/3]] -> eigenvalues 0 and 5/6
        let rho_jb = 5.0 / 6.0;
        assert!((cert.rho_db - rho_jb * rho_jb).abs() < 1e-12);
    }

    #[test]
    fn size_cap_is_enforced() {
        let sys = edgeless_single_state();
        assert!(matches!(build_lifted(&sys, 8), Err(Error::SizeCap { dim: 9, cap: 8 })));
    }

    #[test]
    fn unbiased_noise_gives_zero_mean() {
        let p = part(2, 1);
        let g = MeasurementGraph::new(p, [(0, 1), (1, 2)]).unwrap();
        let chain = TopologyChain::with_unit_weights(vec![g], TransitionMatrix::identity(1)).unwrap();
        let sys = JumpSystem::from_chain(&chain, &NoiseModel::uniform(3, PairNoise::new(0.0, 1e-4))).unwrap();
        let lifted = build_lifted(&sys, DEFAULT_SIZE_CAP).unwrap();
        let ss = steady_state(&sys, &lifted).unwrap();
        assert!(ss.mu.iter().all(|&m| m == 0.0));
        assert!(ss.variance().iter().all(|&v| v > 0.0));

        let sys = JumpSystem::from_chain(&chain, &NoiseModel::noiseless(3)).unwrap();
        let ss = steady_state(&sys, &lifted).unwrap();
        assert!(ss.q_big.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn static_chain_matches_lyapunov_oracle() {
        // Static graph: Q solves Q = J Q J^T + B Gamma B^T + cross terms.
        // Oracle: iterate the second-moment recursion directly.
        let p = part(2, 1);
        let g = MeasurementGraph::new(p, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let chain = TopologyChain::with_unit_weights(vec![g], TransitionMatrix::identity(1)).unwrap();
        let noise = NoiseModel::uniform(3, PairNoise::new(0.05, 1e-3));
        let sys = JumpSystem::from_chain(&chain, &noise).unwrap();
        let ss = steady_state(&sys, &build_lifted(&sys, DEFAULT_SIZE_CAP).unwrap()).unwrap();

        let (j, b) = (&sys.j_b[0], &sys.b_b[0]);
        let mut mean = DVector::zeros(2);
        let mut corr = DMatrix::zeros(2, 2);
        for _ in 0..2000 {
            let bg = b * &sys.gamma;
            corr = j * &corr * j.transpose()
                + b * &sys.big_gamma * b.transpose()
                + (j * &mean) * bg.transpose()
                + &bg * (j * &mean).transpose();
            mean = j * &mean + bg;
        }
        assert!((&mean - &ss.mu).amax() < 1e-12);
        assert!((&corr - &ss.q_big).amax() < 1e-12);
    }
}
