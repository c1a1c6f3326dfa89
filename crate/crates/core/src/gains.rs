//! Gain synthesis for the integrator-chain plant.
//!
//! The plant is the m-th order integrator written as a chain state space with
//! every block expanded by `⊗ I_3`. The two gain inequalities
//! `AᵀH + HA − 2CᵀC < 0` and `AP + PAᵀ − 2BBᵀ < 0` are solved through the
//! algebraic Riccati equations `AᵀX + XA − 2XBBᵀX + I = 0` (with `P = X⁻¹`)
//! and its dual (with `H = Y⁻¹`), which make the inequalities hold with
//! residual `−P·P` and `−H·H` respectively. Thanks to the Kronecker structure
//! everything is solved on the reduced m-dimensional chain and expanded.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::formation::FollowerMatrixSet;
use crate::linalg::{self, CMatrix};

/// Which follower controller the gains are selected for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FollowerVariant {
    /// Consensus on estimates with the unit-follower-block matrix weights.
    OmegaBar,
    /// Consensus on estimates with the Gram-follower-block matrix weights.
    OmegaHat,
    /// Per-edge relative-output observers with the unit-follower-block weights.
    RelativeOutput,
    /// Direct relative motion states, no follower observers.
    StateFeedback,
}

impl FollowerVariant {
    pub fn name(&self) -> &'static str {
        match self {
            FollowerVariant::OmegaBar => "omega-bar",
            FollowerVariant::OmegaHat => "omega-hat",
            FollowerVariant::RelativeOutput => "relative",
            FollowerVariant::StateFeedback => "state-feedback",
        }
    }

    /// Whether followers run their own full-state observers.
    pub fn has_follower_observers(&self) -> bool {
        matches!(self, FollowerVariant::OmegaBar | FollowerVariant::OmegaHat)
    }
}

/// Output map specification: each row gives coefficients over the m state
/// blocks, so `C = rows ⊗ I_3`. The default selects the position block.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub block_rows: Vec<Vec<f64>>,
}

impl OutputSpec {
    pub fn position() -> Self {
        Self {
            block_rows: vec![vec![1.0]],
        }
    }
}

/// Plant matrices of the m-th order integrator chain with output `y = Cx`.
#[derive(Debug, Clone)]
pub struct PlantMatrices {
    order: usize,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    chain: DMatrix<f64>,
    c_blocks: DMatrix<f64>,
}

impl PlantMatrices {
    pub fn order(&self) -> usize {
        self.order
    }

    /// State dimension `3m`.
    pub fn state_dim(&self) -> usize {
        3 * self.order
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// The reduced m×m chain matrix (ones on the superdiagonal).
    pub fn chain(&self) -> &DMatrix<f64> {
        &self.chain
    }

    /// The reduced output block coefficients.
    pub fn c_blocks(&self) -> &DMatrix<f64> {
        &self.c_blocks
    }
}

/// Build the chain plant for order `m` and run the PBH detectability test on
/// the reduced pair.
pub fn build_plant(m: usize, spec: &OutputSpec) -> Result<PlantMatrices> {
    if m == 0 {
        return Err(Error::invalid("plant order must be at least 1"));
    }
    if spec.block_rows.is_empty() {
        return Err(Error::invalid("output spec needs at least one row"));
    }
    for (i, row) in spec.block_rows.iter().enumerate() {
        if row.is_empty() || row.len() > m {
            return Err(Error::invalid(format!(
                "output row {i} has {} coefficients, expected 1 to {m}",
                row.len()
            )));
        }
    }

    let mut chain = DMatrix::<f64>::zeros(m, m);
    for i in 0..m.saturating_sub(1) {
        chain[(i, i + 1)] = 1.0;
    }
    // rows shorter than m are zero-padded on the right
    let q_blocks = spec.block_rows.len();
    let mut c_blocks = DMatrix::<f64>::zeros(q_blocks, m);
    for (i, row) in spec.block_rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            c_blocks[(i, j)] = v;
        }
    }

    // PBH: every eigenvalue of the chain (they are all zero, hence not
    // strictly stable) must be observable through C.
    let mut tested: Vec<Complex<f64>> = Vec::new();
    for lambda in chain.complex_eigenvalues().iter() {
        if lambda.re < -1e-9 {
            continue;
        }
        if tested.iter().any(|t| (t - lambda).norm() < 1e-9) {
            continue;
        }
        tested.push(*lambda);
        let mut stacked = CMatrix::zeros(m + q_blocks, m);
        for i in 0..m {
            for j in 0..m {
                let shift = if i == j { *lambda } else { Complex::new(0.0, 0.0) };
                stacked[(i, j)] = Complex::new(chain[(i, j)], 0.0) - shift;
            }
        }
        for i in 0..q_blocks {
            for j in 0..m {
                stacked[(m + i, j)] = Complex::new(c_blocks[(i, j)], 0.0);
            }
        }
        let sv = stacked.svd(false, false).singular_values;
        let max = sv.iter().copied().fold(0.0_f64, f64::max);
        let rank = sv.iter().filter(|&&s| s > linalg::RANK_TOL * max).count();
        if rank < m {
            return Err(Error::NotDetectable {
                eigenvalue: lambda.re,
            });
        }
    }

    let mut input = DMatrix::<f64>::zeros(m, 1);
    input[(m - 1, 0)] = 1.0;

    let eye3 = DMatrix::<f64>::identity(3, 3);
    Ok(PlantMatrices {
        order: m,
        a: chain.kronecker(&eye3),
        b: input.kronecker(&eye3),
        c: c_blocks.kronecker(&eye3),
        chain,
        c_blocks,
    })
}

/// Gain vector whose companion matrix has the requested spectrum: the
/// characteristic polynomial is `λ^m − β_{m−1} λ^{m−1} − … − β_0`.
pub fn design_beta(poles: &[f64]) -> Result<DVector<f64>> {
    if poles.is_empty() {
        return Err(Error::invalid("at least one pole required"));
    }
    for &p in poles {
        if !(p < 0.0) {
            return Err(Error::UnstablePole { pole: p });
        }
    }
    // expand Π (λ − p_k) into monomial coefficients, ascending degree
    let mut coeffs = vec![1.0_f64];
    for &p in poles {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (deg, &c) in coeffs.iter().enumerate() {
            next[deg + 1] += c;
            next[deg] -= c * p;
        }
        coeffs = next;
    }
    let m = poles.len();
    let beta = DVector::from_iterator(m, (0..m).map(|k| -coeffs[k]));

    let w1 = companion_matrix(&beta);
    let mut assigned: Vec<f64> = w1.complex_eigenvalues().iter().map(|l| l.re).collect();
    let mut wanted = poles.to_vec();
    assigned.sort_by(f64::total_cmp);
    wanted.sort_by(f64::total_cmp);
    for (a, w) in assigned.iter().zip(&wanted) {
        if (a - w).abs() > 1e-8 * w.abs().max(1.0) {
            return Err(Error::invalid(format!(
                "pole assignment mismatch: got {a}, wanted {w}"
            )));
        }
    }
    Ok(beta)
}

/// Companion matrix with ones on the superdiagonal and `β` as the last row.
pub fn companion_matrix(beta: &DVector<f64>) -> DMatrix<f64> {
    let m = beta.len();
    let mut w1 = DMatrix::<f64>::zeros(m, m);
    for i in 0..m.saturating_sub(1) {
        w1[(i, i + 1)] = 1.0;
    }
    for j in 0..m {
        w1[(m - 1, j)] = beta[j];
    }
    w1
}

/// Zero matrix with `β` as the last row (the estimate-coupling block of the
/// leader error system).
pub fn beta_last_row(beta: &DVector<f64>) -> DMatrix<f64> {
    let m = beta.len();
    let mut w2 = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        w2[(m - 1, j)] = beta[j];
    }
    w2
}

const RICCATI_TOL: f64 = 1e-10;
const RICCATI_BUDGET: usize = 100;

/// Solution of the state-side inequality.
#[derive(Debug, Clone)]
pub struct StateLmiSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub riccati_residual: f64,
    pub k_reduced: DMatrix<f64>,
}

/// `P ≻ 0` with `AP + PAᵀ − 2BBᵀ ≺ 0`, and the feedback gain `K = −BᵀP⁻¹`.
pub fn solve_state_lmi(plant: &PlantMatrices) -> Result<StateLmiSolution> {
    let m = plant.order();
    let n = plant.chain();
    let mut s = DMatrix::<f64>::zeros(m, m);
    s[(m - 1, m - 1)] = 2.0;
    let x = linalg::solve_care(n, &s, &DMatrix::identity(m, m), RICCATI_TOL, RICCATI_BUDGET)?;
    let residual =
        (n.transpose() * &x + &x * n - &x * &s * &x + DMatrix::identity(m, m)).norm();

    let p_red = linalg::invert_spd(&x)?;
    let eye3 = DMatrix::<f64>::identity(3, 3);
    let p = p_red.kronecker(&eye3);
    // K = −BᵀP⁻¹ = −(eₘᵀ X) ⊗ I_3
    let mut k_red = DMatrix::<f64>::zeros(1, m);
    for j in 0..m {
        k_red[(0, j)] = -x[(m - 1, j)];
    }
    let k = k_red.kronecker(&eye3);

    let cert = plant.a() * &p + &p * plant.a().transpose() - 2.0 * plant.b() * plant.b().transpose();
    if linalg::max_symmetric_eigenvalue(&cert) >= 0.0 {
        return Err(Error::RiccatiDiverged {
            residual,
            iterations: RICCATI_BUDGET,
        });
    }
    Ok(StateLmiSolution {
        p,
        k,
        riccati_residual: residual,
        k_reduced: k_red,
    })
}

/// Solution of the output-side inequality.
#[derive(Debug, Clone)]
pub struct OutputLmiSolution {
    pub h: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub riccati_residual: f64,
    /// Reduced observer closed loop `N − Y C_blkᵀ C_blk`.
    pub a_lc_reduced: DMatrix<f64>,
}

/// `H ≻ 0` with `AᵀH + HA − 2CᵀC ≺ 0`, and the injection gain `L = −H⁻¹Cᵀ`.
pub fn solve_output_lmi(plant: &PlantMatrices) -> Result<OutputLmiSolution> {
    let m = plant.order();
    let n = plant.chain();
    let cb = plant.c_blocks();
    let s = 2.0 * cb.transpose() * cb;
    let y = linalg::solve_care(
        &n.transpose(),
        &s,
        &DMatrix::identity(m, m),
        RICCATI_TOL,
        RICCATI_BUDGET,
    )?;
    let residual = (n * &y + &y * n.transpose() - &y * &s * &y + DMatrix::identity(m, m)).norm();

    let h_red = linalg::invert_spd(&y)?;
    let eye3 = DMatrix::<f64>::identity(3, 3);
    let h = h_red.kronecker(&eye3);
    // L = −H⁻¹Cᵀ = −(Y C_blkᵀ) ⊗ I_3
    let l_red = -&y * cb.transpose();
    let l = l_red.clone().kronecker(&eye3);
    let a_lc_reduced = n + l_red * cb;

    let cert =
        plant.a().transpose() * &h + &h * plant.a() - 2.0 * plant.c().transpose() * plant.c();
    if linalg::max_symmetric_eigenvalue(&cert) >= 0.0
        || linalg::spectral_abscissa(&a_lc_reduced) >= 0.0
    {
        return Err(Error::RiccatiDiverged {
            residual,
            iterations: RICCATI_BUDGET,
        });
    }
    Ok(OutputLmiSolution {
        h,
        l,
        riccati_residual: residual,
        a_lc_reduced,
    })
}

/// Bound on the leader control inputs and the pieces behind it.
#[derive(Debug, Clone)]
pub struct LeaderBound {
    pub gamma_u: f64,
    pub psi: f64,
    pub cond_m: f64,
    pub eigen_distinct: bool,
    pub w_reduced: DMatrix<f64>,
    pub m_reduced: CMatrix,
    pub j_reduced: CMatrix,
}

const DEFECTIVE_COND_LIMIT: f64 = 1e8;

/// Build the leader error system, eigendecompose it, and evaluate
/// `γ_u = 4 ψ ζ ‖β‖₂ ‖M‖₂‖M⁻¹‖₂ + γ_m`.
///
/// The error system is block `⊗ I_3`, so the eigendecomposition runs on the
/// reduced 2m×2m matrix; its condition number and spectrum carry over.
pub fn compute_leader_bound(
    beta: &DVector<f64>,
    a_lc_reduced: &DMatrix<f64>,
    zeta: f64,
    gamma_m: f64,
) -> Result<LeaderBound> {
    if zeta < 0.0 || gamma_m < 0.0 {
        return Err(Error::invalid("zeta and gamma_m must be nonnegative"));
    }
    let m = beta.len();
    let w1 = companion_matrix(beta);
    let w2 = beta_last_row(beta);
    let mut w_red = DMatrix::<f64>::zeros(2 * m, 2 * m);
    w_red.view_mut((0, 0), (m, m)).copy_from(&w1);
    w_red.view_mut((0, m), (m, m)).copy_from(&w2);
    w_red.view_mut((m, m), (m, m)).copy_from(a_lc_reduced);

    if linalg::spectral_abscissa(&w_red) >= 0.0 {
        return Err(Error::invalid("leader error system is not Hurwitz"));
    }

    let (eigvals, eigvecs) = linalg::eigen_decomposition(&w_red);
    let cond = linalg::cond2(&eigvecs);
    if !cond.is_finite() || cond > DEFECTIVE_COND_LIMIT {
        return Err(Error::DefectiveW { cond });
    }

    let max_mod = eigvals.iter().map(|l| l.norm()).fold(0.0_f64, f64::max);
    let mut distinct = true;
    for i in 0..eigvals.len() {
        for j in (i + 1)..eigvals.len() {
            if (eigvals[i] - eigvals[j]).norm() <= 1e-6 * max_mod.max(1.0) {
                distinct = false;
            }
        }
    }

    let psi = if distinct {
        1.0
    } else {
        // conservative fallback in terms of the full 6m-dimensional system;
        // λ_max is the rightmost eigenvalue
        let dim = 6.0 * m as f64;
        let lambda_max = eigvals
            .iter()
            .copied()
            .max_by(|a, b| a.re.total_cmp(&b.re))
            .map(|l| l.norm())
            .unwrap_or(1.0);
        let ratio = (dim - 1.0) / (lambda_max * std::f64::consts::E);
        (dim + 0.5 * dim * (dim - 1.0) * ratio.powf(dim - 1.0)).sqrt()
    };

    let gamma_u = 4.0 * psi * zeta * beta.norm() * cond + gamma_m;
    Ok(LeaderBound {
        gamma_u,
        psi,
        cond_m: cond,
        eigen_distinct: distinct,
        w_reduced: w_red,
        m_reduced: eigvecs,
        j_reduced: CMatrix::from_diagonal(&eigvals),
    })
}

/// Coupling gains for the follower controllers.
#[derive(Debug, Clone)]
pub struct CouplingGains {
    pub c1: f64,
    pub c2: f64,
    /// Largest entry magnitude of `Ω_ff⁻¹ Ω_fl`.
    pub sigma: f64,
    /// `λ_min(Ω_ffᵀ Ω_ff)`.
    pub lambda_min: f64,
}

/// Select `c₁` above the variant's threshold and `c₂` above `n_l σ γ_u`, each
/// with its own margin factor.
pub fn select_coupling_gains(
    mats: &FollowerMatrixSet,
    gamma_u: f64,
    variant: FollowerVariant,
    c1_margin: f64,
    c2_margin: f64,
) -> Result<CouplingGains> {
    if !(c1_margin > 1.0) {
        return Err(Error::invalid("c1 margin must exceed 1"));
    }
    if !(c2_margin >= 1.0) {
        return Err(Error::invalid("c2 margin must be at least 1"));
    }
    let map = mats.localization_map()?;
    let sigma = map.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));

    let ff = mats.omega_ff();
    let gram = ff.transpose() * &ff;
    let lambda_min = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lambda_min <= 0.0 {
        return Err(Error::NotLocalizable);
    }

    let threshold = match variant {
        FollowerVariant::OmegaHat => (1.0_f64).max(1.0 / lambda_min),
        _ => 1.0,
    };
    let c1 = c1_margin * threshold;
    let c2 = c2_margin * mats.n_leaders() as f64 * sigma * gamma_u;
    Ok(CouplingGains {
        c1,
        c2,
        sigma,
        lambda_min,
    })
}

/// Everything the controllers and the simulator need for one scenario.
#[derive(Debug, Clone)]
pub struct GainSet {
    pub plant: PlantMatrices,
    pub variant: FollowerVariant,
    pub poles: Vec<f64>,
    pub beta: DVector<f64>,
    /// `(βᵀ ⊗ I_3)`, the leader feedback row.
    pub beta_gain: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    /// Full leader error system `[[W₁⊗I₃, W₂⊗I₃], [0, A+LC]]`.
    pub w: DMatrix<f64>,
    pub c1: f64,
    pub c2: f64,
    pub gamma_u: f64,
    pub psi: f64,
    pub zeta: f64,
    pub gamma_m: f64,
    pub sigma: f64,
    pub lambda_min: f64,
    pub cond_m: f64,
    pub eigen_distinct: bool,
    pub m_reduced: CMatrix,
    pub j_reduced: CMatrix,
    pub state_residual: f64,
    pub output_residual: f64,
}

impl GainSet {
    pub fn order(&self) -> usize {
        self.plant.order()
    }

    pub fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }
}

/// Run the full synthesis chain for one scenario.
///
/// If the leader error system turns out numerically defective the poles are
/// spread by 5% increments and the synthesis retried, up to three times.
pub fn synthesize(
    plant: &PlantMatrices,
    mats: &FollowerMatrixSet,
    poles: &[f64],
    zeta: f64,
    gamma_m: f64,
    variant: FollowerVariant,
    c1_margin: f64,
    c2_margin: f64,
) -> Result<GainSet> {
    if poles.len() != plant.order() {
        return Err(Error::invalid(format!(
            "expected {} poles, got {}",
            plant.order(),
            poles.len()
        )));
    }
    let state = solve_state_lmi(plant)?;
    let output = solve_output_lmi(plant)?;

    let mut attempt_poles: Vec<f64> = poles.to_vec();
    let mut last_err = None;
    for attempt in 0..=3 {
        if attempt > 0 {
            attempt_poles = poles
                .iter()
                .enumerate()
                .map(|(i, &p)| p * (1.0 + 0.05 * attempt as f64 * i as f64))
                .collect();
        }
        let beta = design_beta(&attempt_poles)?;
        match compute_leader_bound(&beta, &output.a_lc_reduced, zeta, gamma_m) {
            Ok(bound) => {
                let coupling = select_coupling_gains(mats, bound.gamma_u, variant, c1_margin, c2_margin)?;
                let m = plant.order();
                let w1 = companion_matrix(&beta);
                let w2 = beta_last_row(&beta);
                let eye3 = DMatrix::<f64>::identity(3, 3);
                let a_lc = plant.a() + &output.l * plant.c();
                let dim = plant.state_dim();
                let mut w = DMatrix::<f64>::zeros(2 * dim, 2 * dim);
                w.view_mut((0, 0), (dim, dim)).copy_from(&w1.kronecker(&eye3));
                w.view_mut((0, dim), (dim, dim))
                    .copy_from(&w2.kronecker(&eye3));
                w.view_mut((dim, dim), (dim, dim)).copy_from(&a_lc);

                let mut beta_gain = DMatrix::<f64>::zeros(1, m);
                for j in 0..m {
                    beta_gain[(0, j)] = beta[j];
                }
                let beta_gain = beta_gain.kronecker(&eye3);

                return Ok(GainSet {
                    plant: plant.clone(),
                    variant,
                    poles: attempt_poles,
                    beta,
                    beta_gain,
                    k: state.k.clone(),
                    l: output.l.clone(),
                    p: state.p.clone(),
                    h: output.h.clone(),
                    w1,
                    w2,
                    w,
                    c1: coupling.c1,
                    c2: coupling.c2,
                    gamma_u: bound.gamma_u,
                    psi: bound.psi,
                    zeta,
                    gamma_m,
                    sigma: coupling.sigma,
                    lambda_min: coupling.lambda_min,
                    cond_m: bound.cond_m,
                    eigen_distinct: bound.eigen_distinct,
                    m_reduced: bound.m_reduced,
                    j_reduced: bound.j_reduced,
                    state_residual: state.riccati_residual,
                    output_residual: output.riccati_residual,
                });
            }
            Err(e @ Error::DefectiveW { .. }) => {
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or(Error::DefectiveW { cond: f64::INFINITY }))
}
