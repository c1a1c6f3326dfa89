//! Displacement constraints and the follower matrix.
//!
//! A nominal formation fixes, for every follower, a weighted sum of edge
//! vectors to its neighbors that vanishes. Stacking these constraints gives
//! the follower matrix, whose follower-column block decides localizability:
//! when that block is nonsingular the follower nominal positions are a linear
//! function of the leader positions, and the two derived follower matrices
//! with positive definite follower blocks become available for control.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};

/// Nominal formation: agent positions, the leader/follower split, and the
/// neighbor set each follower uses for its displacement constraint.
///
/// Leaders occupy indices `0..n_leaders`, followers the rest. Every follower
/// must appear as the constrained agent of exactly one constraint spec.
#[derive(Debug, Clone)]
pub struct NominalFormation {
    positions: Vec<Vector3<f64>>,
    n_leaders: usize,
    neighbor_sets: Vec<Vec<usize>>,
}

impl NominalFormation {
    /// Validates and builds a nominal formation.
    ///
    /// `neighbor_sets[k]` lists the constraint neighbors of follower
    /// `n_leaders + k` (2 to 4 neighbors). The leader count must exceed the
    /// affine dimension of the configuration: at least 4 leaders for a full
    /// 3-D configuration, 3 for a planar one, 2 for a colinear one.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        n_leaders: usize,
        neighbor_sets: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = positions.len();
        if n_leaders == 0 || n_leaders >= n {
            return Err(Error::invalid(format!(
                "need at least one leader and one follower, got {n_leaders} leaders of {n} agents"
            )));
        }
        let n_followers = n - n_leaders;
        if neighbor_sets.len() != n_followers {
            return Err(Error::invalid(format!(
                "expected one neighbor set per follower ({n_followers}), got {}",
                neighbor_sets.len()
            )));
        }

        let scale = positions
            .iter()
            .map(|p| p.norm())
            .fold(1.0_f64, f64::max);
        for i in 0..n {
            for j in (i + 1)..n {
                if (positions[i] - positions[j]).norm() <= 1e-12 * scale {
                    return Err(Error::invalid(format!(
                        "agents {i} and {j} are collocated"
                    )));
                }
            }
        }

        let dim = affine_dimension(&positions);
        if n_leaders < dim + 1 {
            return Err(Error::invalid(format!(
                "configuration spans dimension {dim}; at least {} leaders required, got {n_leaders}",
                dim + 1
            )));
        }

        for (k, neighbors) in neighbor_sets.iter().enumerate() {
            let agent = n_leaders + k;
            if neighbors.len() < 2 || neighbors.len() > 4 {
                return Err(Error::invalid(format!(
                    "follower {agent} must have 2 to 4 neighbors, got {}",
                    neighbors.len()
                )));
            }
            let mut seen = std::collections::BTreeSet::new();
            for &j in neighbors {
                if j >= n {
                    return Err(Error::invalid(format!(
                        "follower {agent} references neighbor {j} >= {n}"
                    )));
                }
                if j == agent {
                    return Err(Error::invalid(format!(
                        "follower {agent} cannot neighbor itself"
                    )));
                }
                if !seen.insert(j) {
                    return Err(Error::invalid(format!(
                        "follower {agent} lists neighbor {j} twice"
                    )));
                }
            }
        }

        Ok(Self {
            positions,
            n_leaders,
            neighbor_sets,
        })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn n_leaders(&self) -> usize {
        self.n_leaders
    }

    pub fn n_followers(&self) -> usize {
        self.positions.len() - self.n_leaders
    }

    pub fn position(&self, agent: usize) -> Vector3<f64> {
        self.positions[agent]
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    /// Constraint neighbors of follower `n_leaders + k`.
    pub fn neighbor_set(&self, k: usize) -> &[usize] {
        &self.neighbor_sets[k]
    }

    /// All positions stacked into one vector of length `3n`.
    pub fn stacked(&self) -> DVector<f64> {
        stack_positions(&self.positions)
    }

    /// Leader positions stacked (length `3 n_leaders`).
    pub fn stacked_leaders(&self) -> DVector<f64> {
        stack_positions(&self.positions[..self.n_leaders])
    }

    /// Follower positions stacked (length `3 n_followers`).
    pub fn stacked_followers(&self) -> DVector<f64> {
        stack_positions(&self.positions[self.n_leaders..])
    }
}

fn stack_positions(positions: &[Vector3<f64>]) -> DVector<f64> {
    let mut v = DVector::zeros(3 * positions.len());
    for (i, p) in positions.iter().enumerate() {
        v.fixed_rows_mut::<3>(3 * i).copy_from(p);
    }
    v
}

/// Affine dimension of a point set (rank of the centered coordinate matrix).
fn affine_dimension(positions: &[Vector3<f64>]) -> usize {
    let n = positions.len();
    let centroid: Vector3<f64> = positions.iter().sum::<Vector3<f64>>() / n as f64;
    let mut centered = DMatrix::zeros(3, n);
    for (i, p) in positions.iter().enumerate() {
        centered.set_column(i, &(p - centroid));
    }
    linalg::numerical_rank(&centered, RANK_TOL)
}

/// One follower's displacement constraint: weights over its neighbor edges.
#[derive(Debug, Clone)]
pub struct DisplacementConstraint {
    pub agent: usize,
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
}

impl DisplacementConstraint {
    /// `‖Σ_j w_ij (r_i − r_j)‖` for this constraint.
    pub fn residual(&self, formation: &NominalFormation) -> f64 {
        let ri = formation.position(self.agent);
        let mut acc = Vector3::zeros();
        for (&j, &w) in self.neighbors.iter().zip(&self.weights) {
            acc += w * (ri - formation.position(j));
        }
        acc.norm()
    }
}

/// Weights of one displacement constraint from the null space of the stacked
/// edge matrix `[e_ij … ]`.
///
/// The geometric case (colinear, coplanar, general) is inferred from the
/// numerical rank rather than declared by the caller. The returned weights
/// are scaled so the entry of largest magnitude equals +1 (first such entry
/// on ties), which removes the sign ambiguity of the singular vector.
pub fn compute_displacement_parameters(
    agent_pos: &Vector3<f64>,
    neighbor_pos: &[Vector3<f64>],
) -> Result<DVector<f64>> {
    let k = neighbor_pos.len();
    if !(2..=4).contains(&k) {
        return Err(Error::invalid(format!(
            "a displacement constraint uses 2 to 4 neighbors, got {k}"
        )));
    }
    // Pad with zero rows when k > 3 so the SVD carries a full V factor and
    // the null direction is available as the trailing right singular vector.
    let rows = k.max(3);
    let mut edges = DMatrix::zeros(rows, k);
    let mut max_edge = 0.0_f64;
    for (col, nb) in neighbor_pos.iter().enumerate() {
        let e = agent_pos - nb;
        max_edge = max_edge.max(e.norm());
        edges.view_mut((0, col), (3, 1)).copy_from(&e);
    }
    for (col, nb) in neighbor_pos.iter().enumerate() {
        if (agent_pos - nb).norm() <= 1e-12 * max_edge.max(1.0) {
            return Err(Error::invalid(format!(
                "agent is collocated with neighbor {col}"
            )));
        }
    }

    let svd = edges.svd(false, true);
    let sv = &svd.singular_values;
    let sigma_max = sv.iter().copied().fold(0.0_f64, f64::max);
    let rank = sv.iter().filter(|&&s| s > RANK_TOL * sigma_max).count();
    let null_dim = k - rank;
    if null_dim == 0 {
        return Err(Error::NullSpaceEmpty);
    }
    if null_dim > 1 {
        return Err(Error::DegenerateGeometry { dim: null_dim });
    }

    // Singular values are sorted descending, so the smallest one pairs with
    // the last row of Vᵀ.
    let vt = svd.v_t.expect("svd with v_t requested");
    let w = vt.row(vt.nrows() - 1).transpose();
    Ok(normalize_weights(w))
}

/// Scale so the first entry of largest magnitude becomes +1.
fn normalize_weights(mut w: DVector<f64>) -> DVector<f64> {
    let mut pivot = 0;
    for i in 1..w.len() {
        if w[i].abs() > w[pivot].abs() {
            pivot = i;
        }
    }
    let scale = w[pivot];
    w /= scale;
    w
}

/// Compute every follower's constraint weights from the formation geometry.
pub fn build_constraints(formation: &NominalFormation) -> Result<Vec<DisplacementConstraint>> {
    let mut out = Vec::with_capacity(formation.n_followers());
    for k in 0..formation.n_followers() {
        let agent = formation.n_leaders() + k;
        let neighbors = formation.neighbor_set(k).to_vec();
        let pos: Vec<Vector3<f64>> = neighbors.iter().map(|&j| formation.position(j)).collect();
        let weights = compute_displacement_parameters(&formation.position(agent), &pos)?;
        out.push(DisplacementConstraint {
            agent,
            neighbors,
            weights: weights.iter().copied().collect(),
        });
    }
    Ok(out)
}

/// The follower matrix, its partition, and the derived variants.
#[derive(Debug, Clone)]
pub struct FollowerMatrixSet {
    omega_f: DMatrix<f64>,
    n_leaders: usize,
    localizable: bool,
    omega_bar: Option<DMatrix<f64>>,
    omega_hat: Option<DMatrix<f64>>,
}

/// Result of the localizability check.
#[derive(Debug, Clone)]
pub struct LocalizabilityCertificate {
    pub localizable: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `‖r_f + (Ω_ff⁻¹ Ω_fl ⊗ I_3) r_l‖` when localizable.
    pub reconstruction_residual: Option<f64>,
}

impl FollowerMatrixSet {
    /// Builds the set from an explicit follower matrix (used by tests and by
    /// fixtures that start from published matrices rather than geometry).
    pub fn from_matrix(omega_f: DMatrix<f64>, n_leaders: usize) -> Result<Self> {
        if omega_f.ncols() <= n_leaders {
            return Err(Error::DimensionMismatch {
                expected: n_leaders + omega_f.nrows(),
                got: omega_f.ncols(),
            });
        }
        Ok(Self {
            omega_f,
            n_leaders,
            localizable: false,
            omega_bar: None,
            omega_hat: None,
        })
    }

    pub fn n(&self) -> usize {
        self.omega_f.ncols()
    }

    pub fn n_leaders(&self) -> usize {
        self.n_leaders
    }

    pub fn n_followers(&self) -> usize {
        self.omega_f.nrows()
    }

    pub fn omega_f(&self) -> &DMatrix<f64> {
        &self.omega_f
    }

    /// Leader-column block `Ω_fl`.
    pub fn omega_fl(&self) -> DMatrix<f64> {
        self.omega_f.columns(0, self.n_leaders).into_owned()
    }

    /// Follower-column block `Ω_ff`.
    pub fn omega_ff(&self) -> DMatrix<f64> {
        self.omega_f
            .columns(self.n_leaders, self.n_followers())
            .into_owned()
    }

    pub fn is_localizable(&self) -> bool {
        self.localizable
    }

    pub fn omega_bar(&self) -> Option<&DMatrix<f64>> {
        self.omega_bar.as_ref()
    }

    pub fn omega_hat(&self) -> Option<&DMatrix<f64>> {
        self.omega_hat.as_ref()
    }

    /// `Ω_ff⁻¹ Ω_fl`, the map that writes follower targets from leader
    /// targets (with a sign flip).
    pub fn localization_map(&self) -> Result<DMatrix<f64>> {
        if !self.localizable {
            return Err(Error::NotLocalizable);
        }
        self.omega_ff()
            .lu()
            .solve(&self.omega_fl())
            .ok_or(Error::NotLocalizable)
    }

    /// Nonsingularity test of the follower block alone: smallest singular
    /// value above the relative tolerance. Records the verdict.
    pub fn certify_nonsingular(&mut self) -> LocalizabilityCertificate {
        let sv = self.omega_ff().svd(false, false).singular_values;
        let sigma_max = sv.iter().copied().fold(0.0_f64, f64::max);
        let sigma_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        self.localizable = sigma_max > 0.0 && sigma_min > RANK_TOL * sigma_max;
        LocalizabilityCertificate {
            localizable: self.localizable,
            sigma_min,
            sigma_max,
            reconstruction_residual: None,
        }
    }

    /// Row sum of follower row `k` evaluated in the same order the assembly
    /// used (off-diagonal entries by ascending column, then the diagonal).
    pub fn row_sum(&self, k: usize) -> f64 {
        let own = self.n_leaders + k;
        let mut acc = 0.0;
        for j in 0..self.n() {
            if j != own {
                acc += self.omega_f[(k, j)];
            }
        }
        acc + self.omega_f[(k, own)]
    }
}

/// Stack displacement constraints into the follower matrix.
///
/// Row `k` holds follower `n_leaders + k`: `−w_ij` on neighbor columns, the
/// ascending-column sum of the weights on the diagonal, zero elsewhere.
pub fn assemble_follower_matrix(
    formation: &NominalFormation,
    constraints: &[DisplacementConstraint],
) -> Result<FollowerMatrixSet> {
    let n = formation.n();
    let n_l = formation.n_leaders();
    let n_f = formation.n_followers();

    let mut by_agent: BTreeMap<usize, &DisplacementConstraint> = BTreeMap::new();
    for c in constraints {
        if c.agent < n_l || c.agent >= n {
            return Err(Error::invalid(format!(
                "constraint names agent {} which is not a follower",
                c.agent
            )));
        }
        if by_agent.insert(c.agent, c).is_some() {
            return Err(Error::invalid(format!(
                "follower {} has more than one constraint",
                c.agent
            )));
        }
    }

    let scale = formation
        .positions()
        .iter()
        .map(|p| p.norm())
        .fold(1.0_f64, f64::max);

    let mut omega = DMatrix::<f64>::zeros(n_f, n);
    for k in 0..n_f {
        let agent = n_l + k;
        let c = *by_agent
            .get(&agent)
            .ok_or(Error::MissingConstraint { agent })?;
        if c.neighbors.len() != c.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: c.neighbors.len(),
                got: c.weights.len(),
            });
        }
        let abs_sum: f64 = c.weights.iter().map(|w| w.abs()).sum();
        if abs_sum == 0.0 {
            return Err(Error::invalid(format!(
                "constraint of follower {agent} has all-zero weights"
            )));
        }
        let max_edge = c
            .neighbors
            .iter()
            .map(|&j| (formation.position(agent) - formation.position(j)).norm())
            .fold(scale, f64::max);
        if c.residual(formation) > 1e-9 * max_edge.max(1.0) {
            return Err(Error::invalid(format!(
                "constraint of follower {agent} does not close: residual {}",
                c.residual(formation)
            )));
        }
        // Ascending-column order so the diagonal is the exact negation of the
        // stored off-diagonal sum.
        let mut pairs: Vec<(usize, f64)> = c
            .neighbors
            .iter()
            .copied()
            .zip(c.weights.iter().copied())
            .collect();
        pairs.sort_by_key(|&(j, _)| j);
        let mut diag = 0.0;
        for (j, w) in pairs {
            omega[(k, j)] = -w;
            diag += w;
        }
        omega[(k, agent)] = diag;
    }

    FollowerMatrixSet::from_matrix(omega, n_l)
}

/// Decide localizability of the assembled matrices and record the verdict.
///
/// Nonsingularity of `Ω_ff` at the relative tolerance decides the verdict;
/// when it holds, the reconstruction of the follower nominal positions from
/// the leader positions is evaluated and its residual recorded.
pub fn check_localizable(
    set: &mut FollowerMatrixSet,
    formation: &NominalFormation,
) -> LocalizabilityCertificate {
    let mut cert = set.certify_nonsingular();
    if cert.localizable {
        if let Some(map) = set.omega_ff().lu().solve(&set.omega_fl()) {
            let rec = -(linalg::kron_i3(&map) * formation.stacked_leaders());
            cert.reconstruction_residual =
                Some((rec - formation.stacked_followers()).norm());
        }
    }
    cert
}

/// Derive the two controller-ready follower matrices.
///
/// `Ω̄_f = Ω_ff⁻¹ Ω_f` has an exact identity follower block; `Ω̂_f = Ω_ffᵀ Ω_f`
/// has the symmetric positive definite follower block `Ω_ffᵀ Ω_ff`.
pub fn derive_variants(set: &mut FollowerMatrixSet) -> Result<()> {
    if !set.localizable {
        return Err(Error::NotLocalizable);
    }
    let n_f = set.n_followers();
    let ff = set.omega_ff();
    let fl = set.omega_fl();

    let leader_block = ff.clone().lu().solve(&fl).ok_or(Error::NotLocalizable)?;
    let mut bar = DMatrix::<f64>::zeros(n_f, set.n());
    bar.view_mut((0, 0), (n_f, set.n_leaders)).copy_from(&leader_block);
    bar.view_mut((0, set.n_leaders), (n_f, n_f))
        .copy_from(&DMatrix::identity(n_f, n_f));

    let hat = ff.transpose() * &set.omega_f;

    set.omega_bar = Some(bar);
    set.omega_hat = Some(hat);
    Ok(())
}

/// Per-neighbor edge weights of follower `k` in one of the follower matrices:
/// `w_ij = −[matrix]_{ij}` for the off-diagonal columns, exact zeros omitted.
pub fn edge_weights(
    matrix: &DMatrix<f64>,
    n_leaders: usize,
    follower: usize,
) -> Result<BTreeMap<usize, f64>> {
    if follower >= matrix.nrows() {
        return Err(Error::IndexOutOfRange {
            index: follower,
            limit: matrix.nrows(),
        });
    }
    let own = n_leaders + follower;
    let mut weights = BTreeMap::new();
    for j in 0..matrix.ncols() {
        if j == own {
            continue;
        }
        let w = -matrix[(follower, j)];
        if w != 0.0 {
            weights.insert(j, w);
        }
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Positions of the planar six-agent example: leaders i, j, k then
    /// followers h, m, g.
    pub(crate) fn planar_six() -> NominalFormation {
        NominalFormation::new(
            vec![
                Vector3::new(2.0, 0.0, 0.0), // i
                Vector3::new(3.0, 0.0, 0.0), // j
                Vector3::new(1.0, 2.0, 0.0), // k
                Vector3::new(3.0, 3.0, 0.0), // h
                Vector3::new(6.0, 1.0, 0.0), // m
                Vector3::new(7.0, 3.0, 0.0), // g
            ],
            3,
            vec![vec![0, 1, 2], vec![0, 1, 3], vec![1, 3, 4]],
        )
        .unwrap()
    }

    /// The four-leader, three-follower configuration of the simulation study.
    pub(crate) fn sim_seven() -> NominalFormation {
        NominalFormation::new(
            vec![
                Vector3::new(6.0, 0.0, 0.0),
                Vector3::new(0.0, 0.0, 6.0),
                Vector3::new(0.0, 6.0, 0.0),
                Vector3::new(0.0, -6.0, 0.0),
                Vector3::new(-6.0, 0.0, 6.0),
                Vector3::new(-6.0, 6.0, 0.0),
                Vector3::new(-6.0, -6.0, 0.0),
            ],
            4,
            vec![vec![0, 1, 2, 3], vec![0, 2, 3], vec![2, 3, 5]],
        )
        .unwrap()
    }

    fn assert_rows_match_up_to_scale(computed: &DMatrix<f64>, expected: &DMatrix<f64>, tol: f64) {
        assert_eq!(computed.nrows(), expected.nrows());
        assert_eq!(computed.ncols(), expected.ncols());
        for r in 0..computed.nrows() {
            let crow = computed.row(r);
            let erow = expected.row(r);
            let mut pivot = 0;
            for c in 1..erow.len() {
                if erow[c].abs() > erow[pivot].abs() {
                    pivot = c;
                }
            }
            assert!(crow[pivot].abs() > 0.0, "row {r} pivot is zero");
            let s = erow[pivot] / crow[pivot];
            for c in 0..erow.len() {
                assert!(
                    (crow[c] * s - erow[c]).abs() <= tol,
                    "row {r} col {c}: {} * {} vs {}",
                    crow[c],
                    s,
                    erow[c]
                );
            }
        }
    }

    #[test]
    fn weights_for_three_coplanar_neighbors() {
        // agent h with neighbors i, j, k: weights proportional to (1, -5/6, -1/2)
        let w = compute_displacement_parameters(
            &Vector3::new(3.0, 3.0, 0.0),
            &[
                Vector3::new(2.0, 0.0, 0.0),
                Vector3::new(3.0, 0.0, 0.0),
                Vector3::new(1.0, 2.0, 0.0),
            ],
        )
        .unwrap();
        let s = 1.0 / w[0];
        assert_relative_eq!(w[0] * s, 1.0, epsilon = 1e-12);
        assert_relative_eq!(w[1] * s, -5.0 / 6.0, epsilon = 1e-9);
        assert_relative_eq!(w[2] * s, -0.5, epsilon = 1e-9);
    }

    #[test]
    fn weights_for_second_follower() {
        // agent m with neighbors i, j, h: weights proportional to (1, -11/9, -1/9)
        let w = compute_displacement_parameters(
            &Vector3::new(6.0, 1.0, 0.0),
            &[
                Vector3::new(2.0, 0.0, 0.0),
                Vector3::new(3.0, 0.0, 0.0),
                Vector3::new(3.0, 3.0, 0.0),
            ],
        )
        .unwrap();
        let s = 1.0 / w[0];
        assert_relative_eq!(w[1] * s, -11.0 / 9.0, epsilon = 1e-9);
        assert_relative_eq!(w[2] * s, -1.0 / 9.0, epsilon = 1e-9);
    }

    #[test]
    fn midpoint_colinear_weights() {
        let w = compute_displacement_parameters(
            &Vector3::new(1.0, 0.0, 0.0),
            &[Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)],
        )
        .unwrap();
        assert_relative_eq!(w[0] / w[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn random_tetrahedral_neighbors_close_the_constraint() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let agent = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let nbrs: Vec<Vector3<f64>> = (0..4)
                .map(|_| {
                    agent
                        + Vector3::new(
                            rng.random_range(-2.0..2.0),
                            rng.random_range(-2.0..2.0),
                            rng.random_range(-2.0..2.0),
                        )
                })
                .collect();
            match compute_displacement_parameters(&agent, &nbrs) {
                Ok(w) => {
                    let mut acc = Vector3::zeros();
                    for (j, nb) in nbrs.iter().enumerate() {
                        acc += w[j] * (agent - nb);
                    }
                    assert!(acc.norm() <= 1e-9, "residual {}", acc.norm());
                }
                // random draws are almost surely non-degenerate; a degenerate
                // draw would be a legitimate error, not a test failure
                Err(Error::DegenerateGeometry { .. }) | Err(Error::NullSpaceEmpty) => {}
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn two_noncolinear_neighbors_reject() {
        let err = compute_displacement_parameters(
            &Vector3::new(0.0, 1.0, 0.0),
            &[Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NullSpaceEmpty));
    }

    #[test]
    fn colinear_triple_is_degenerate() {
        let err = compute_displacement_parameters(
            &Vector3::new(0.0, 0.0, 0.0),
            &[
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(2.0, 0.0, 0.0),
                Vector3::new(3.0, 0.0, 0.0),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { dim: 2 }));
    }

    #[test]
    fn planar_six_matches_published_matrices() {
        let formation = planar_six();
        let constraints = build_constraints(&formation).unwrap();
        let set = assemble_follower_matrix(&formation, &constraints).unwrap();
        let expected_fl = DMatrix::from_row_slice(
            3,
            3,
            &[
                -1.0,
                5.0 / 6.0,
                0.5,
                -1.0,
                11.0 / 9.0,
                0.0,
                0.0,
                -1.0,
                0.0,
            ],
        );
        let expected_ff = DMatrix::from_row_slice(
            3,
            3,
            &[
                -1.0 / 3.0,
                0.0,
                0.0,
                1.0 / 9.0,
                -1.0 / 3.0,
                0.0,
                5.0 / 8.0,
                1.5,
                -9.0 / 8.0,
            ],
        );
        let mut expected = DMatrix::zeros(3, 6);
        expected.view_mut((0, 0), (3, 3)).copy_from(&expected_fl);
        expected.view_mut((0, 3), (3, 3)).copy_from(&expected_ff);
        assert_rows_match_up_to_scale(set.omega_f(), &expected, 1e-9);
    }

    #[test]
    fn sim_seven_matches_published_matrices() {
        let formation = sim_seven();
        let constraints = build_constraints(&formation).unwrap();
        let set = assemble_follower_matrix(&formation, &constraints).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            7,
            &[
                -2.0, 2.0, 1.0, 1.0, -2.0, 0.0, 0.0, //
                2.0, 0.0, -3.0, -1.0, 0.0, 2.0, 0.0, //
                0.0, 0.0, -1.0, 1.0, 0.0, 1.0, -1.0,
            ],
        );
        assert_rows_match_up_to_scale(set.omega_f(), &expected, 1e-9);
    }

    #[test]
    fn nullspace_property_of_assembled_matrix() {
        let formation = sim_seven();
        let constraints = build_constraints(&formation).unwrap();
        let set = assemble_follower_matrix(&formation, &constraints).unwrap();
        let residual = (linalg::kron_i3(set.omega_f()) * formation.stacked()).norm();
        assert!(residual <= 1e-9 * formation.stacked().norm());
        for k in 0..set.n_followers() {
            assert_eq!(set.row_sum(k), 0.0);
        }
    }

    #[test]
    fn single_follower_at_tetrahedron_centroid() {
        let verts = [
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(1.0, -1.0, -1.0),
            Vector3::new(-1.0, 1.0, -1.0),
            Vector3::new(-1.0, -1.0, 1.0),
        ];
        let centroid = verts.iter().sum::<Vector3<f64>>() / 4.0;
        let mut positions = verts.to_vec();
        positions.push(centroid);
        let formation = NominalFormation::new(positions, 4, vec![vec![0, 1, 2, 3]]).unwrap();
        let constraints = build_constraints(&formation).unwrap();
        let set = assemble_follower_matrix(&formation, &constraints).unwrap();
        let ff = set.omega_ff();
        assert_eq!(ff.nrows(), 1);
        assert!(ff[(0, 0)].abs() > 1e-9);
    }

    #[test]
    fn missing_constraint_is_reported() {
        let formation = sim_seven();
        let mut constraints = build_constraints(&formation).unwrap();
        constraints.remove(1);
        let err = assemble_follower_matrix(&formation, &constraints).unwrap_err();
        assert!(matches!(err, Error::MissingConstraint { agent: 5 }));
    }

    #[test]
    fn localizability_of_published_examples() {
        for formation in [planar_six(), sim_seven()] {
            let constraints = build_constraints(&formation).unwrap();
            let mut set = assemble_follower_matrix(&formation, &constraints).unwrap();
            let cert = check_localizable(&mut set, &formation);
            assert!(cert.localizable);
            assert!(cert.reconstruction_residual.unwrap() < 1e-9);
        }
    }

    #[test]
    fn zero_row_is_not_localizable() {
        let formation = sim_seven();
        let constraints = build_constraints(&formation).unwrap();
        let set = assemble_follower_matrix(&formation, &constraints).unwrap();
        let mut omega = set.omega_f().clone();
        for j in 4..7 {
            omega[(1, j)] = 0.0;
        }
        let mut broken = FollowerMatrixSet::from_matrix(omega, 4).unwrap();
        let cert = check_localizable(&mut broken, &formation);
        assert!(!cert.localizable);
        assert!(matches!(
            derive_variants(&mut broken).unwrap_err(),
            Error::NotLocalizable
        ));
    }

    #[test]
    fn variants_of_sim_seven() {
        // Published scale: rows of the simulation-study matrices.
        let omega = DMatrix::from_row_slice(
            3,
            7,
            &[
                -2.0, 2.0, 1.0, 1.0, -2.0, 0.0, 0.0, //
                2.0, 0.0, -3.0, -1.0, 0.0, 2.0, 0.0, //
                0.0, 0.0, -1.0, 1.0, 0.0, 1.0, -1.0,
            ],
        );
        let formation = sim_seven();
        let mut set = FollowerMatrixSet::from_matrix(omega, 4).unwrap();
        let cert = check_localizable(&mut set, &formation);
        assert!(cert.localizable);
        derive_variants(&mut set).unwrap();

        let expected_hat = DMatrix::from_row_slice(
            3,
            7,
            &[
                4.0, -4.0, -2.0, -2.0, 4.0, 0.0, 0.0, //
                4.0, 0.0, -7.0, -1.0, 0.0, 5.0, -1.0, //
                0.0, 0.0, 1.0, -1.0, 0.0, -1.0, 1.0,
            ],
        );
        let hat = set.omega_hat().unwrap();
        assert!((hat - expected_hat).norm() < 1e-9, "hat mismatch: {hat}");

        let bar = set.omega_bar().unwrap();
        let bar_ff = bar.columns(4, 3).into_owned();
        assert_eq!(bar_ff, DMatrix::identity(3, 3));
        // both variants preserve the null space
        let r = formation.stacked();
        assert!((linalg::kron_i3(bar) * &r).norm() < 1e-9);
        assert!((linalg::kron_i3(hat) * &r).norm() < 1e-9);
    }

    #[test]
    fn identity_follower_block_keeps_omega() {
        // Ω_ff = I: Ω̄_f must equal Ω_f
        let omega = DMatrix::from_row_slice(2, 4, &[0.5, -1.5, 1.0, 0.0, -2.0, 1.0, 0.0, 1.0]);
        let mut set = FollowerMatrixSet::from_matrix(omega.clone(), 2).unwrap();
        set.localizable = true;
        derive_variants(&mut set).unwrap();
        assert!((set.omega_bar().unwrap() - &omega).norm() < 1e-12);
    }

    #[test]
    fn edge_weights_of_hat_matrix() {
        let hat = DMatrix::from_row_slice(
            3,
            7,
            &[
                4.0, -4.0, -2.0, -2.0, 4.0, 0.0, 0.0, //
                4.0, 0.0, -7.0, -1.0, 0.0, 5.0, -1.0, //
                0.0, 0.0, 1.0, -1.0, 0.0, -1.0, 1.0,
            ],
        );
        let w = edge_weights(&hat, 4, 0).unwrap();
        let expected: BTreeMap<usize, f64> =
            [(0, -4.0), (1, 4.0), (2, 2.0), (3, 2.0)].into_iter().collect();
        assert_eq!(w, expected);
        assert!(matches!(
            edge_weights(&hat, 4, 3).unwrap_err(),
            Error::IndexOutOfRange { .. }
        ));
    }

    #[test]
    fn edge_weight_roundtrip_rebuilds_matrix() {
        let formation = sim_seven();
        let constraints = build_constraints(&formation).unwrap();
        let set = assemble_follower_matrix(&formation, &constraints).unwrap();
        let n = set.n();
        let mut rebuilt = DMatrix::<f64>::zeros(set.n_followers(), n);
        for k in 0..set.n_followers() {
            let weights = edge_weights(set.omega_f(), set.n_leaders(), k).unwrap();
            let own = set.n_leaders() + k;
            for (&j, &w) in &weights {
                rebuilt[(k, j)] = -w;
            }
            // map iteration is ascending by column, the same order the
            // assembly used for the diagonal, so the rebuild is exact
            rebuilt[(k, own)] = weights.values().sum::<f64>();
        }
        for k in 0..set.n_followers() {
            for j in 0..n {
                assert_eq!(rebuilt[(k, j)], set.omega_f()[(k, j)]);
            }
        }
    }

    #[test]
    fn leader_count_rule_follows_affine_dimension() {
        // a colinear pair of leaders with the follower between them is valid
        let line = NominalFormation::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(2.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
            ],
            2,
            vec![vec![0, 1]],
        );
        assert!(line.is_ok());
        // but two leaders cannot pin a planar configuration
        let planar = NominalFormation::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(2.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
            ],
            2,
            vec![vec![0, 1]],
        );
        assert!(planar.is_err());
    }
}
