//! Dense linear-algebra helpers used by the synthesis and simulation modules.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// `a ⊗ I_3`, the block expansion used throughout the 3-D formation algebra.
pub fn kron_i3(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(&DMatrix::identity(3, 3))
}

/// `a ⊗ I_k`.
pub fn kron_ik(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    a.kronecker(&DMatrix::identity(k, k))
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Numerical rank from the singular spectrum at the relative tolerance `tol`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * max).count()
}

/// Solve the Lyapunov equation `Aᵀ X + X A + Q = 0` by a direct Kronecker
/// linear solve. Intended for the small systems that arise here.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.nrows(),
        });
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(AᵀX) = (I ⊗ Aᵀ) vec(X), vec(XA) = (Aᵀ ⊗ I) vec(X)
    let coeff = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice((-q).as_slice());
    let sol = coeff
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::invalid("Lyapunov operator is singular"))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Matrix sign function via the scaled Newton iteration.
fn matrix_sign(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(DMatrix<f64>, usize)> {
    let n = m.nrows();
    let mut z = m.clone();
    for it in 0..max_iter {
        let lu = z.clone().lu();
        let det: f64 = lu.determinant();
        let z_inv = lu
            .try_inverse()
            .ok_or_else(|| Error::RiccatiDiverged {
                residual: f64::INFINITY,
                iterations: it,
            })?;
        // Determinant scaling accelerates convergence toward |det| = 1.
        let mu = det.abs().powf(-1.0 / n as f64).clamp(1e-4, 1e4);
        let next = (&z * mu + z_inv / mu) * 0.5;
        let delta = (&next - &z).norm();
        let scale = z.norm().max(1.0);
        z = next;
        if delta <= tol * scale {
            return Ok((z, it + 1));
        }
    }
    Err(Error::RiccatiDiverged {
        residual: f64::INFINITY,
        iterations: max_iter,
    })
}

fn care_residual(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (a.transpose() * x + x * a - x * s * x + q).norm()
}

/// Solve the continuous algebraic Riccati equation
/// `Aᵀ X + X A − X S X + Q = 0`
/// for the stabilizing `X ⪰ 0`, with `S ⪰ 0` and `Q ≻ 0`.
///
/// The stable invariant subspace of the Hamiltonian is extracted with the
/// matrix sign function and the result is polished with Newton (Kleinman)
/// steps, each a direct Lyapunov solve.
pub fn solve_care(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    q: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut ham = DMatrix::<f64>::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-s));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-q));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let (sign, used) = matrix_sign(&ham, 1e-13, max_iter)?;
    // Projector onto the stable invariant subspace.
    let proj = (DMatrix::<f64>::identity(2 * n, 2 * n) - sign) * 0.5;
    let svd = proj.svd(true, false);
    let u = svd.u.as_ref().expect("svd with u requested");
    let basis = u.columns(0, n).into_owned();
    let top = basis.rows(0, n).into_owned();
    let bottom = basis.rows(n, n).into_owned();
    // X = bottom · top⁻¹, computed from topᵀ Xᵀ = bottomᵀ.
    let xt = top
        .transpose()
        .lu()
        .solve(&bottom.transpose())
        .ok_or(Error::RiccatiDiverged {
            residual: f64::INFINITY,
            iterations: used,
        })?;
    let mut x = xt.transpose();
    x = (&x + &x.transpose()) * 0.5;

    // Newton refinement: solve (A − SX_k)ᵀ X + X (A − SX_k) + Q + X_k S X_k = 0.
    let mut iterations = used;
    for _ in 0..max_iter {
        let res = care_residual(a, s, q, &x);
        if res <= tol * x.norm().max(1.0) {
            break;
        }
        let a_cl = a - s * &x;
        let q_eff = q + &x * s * &x;
        let next = solve_lyapunov(&a_cl, &q_eff)?;
        let next = (&next + &next.transpose()) * 0.5;
        iterations += 1;
        if iterations >= max_iter {
            let res = care_residual(a, s, q, &next);
            if res > tol * next.norm().max(1.0) {
                return Err(Error::RiccatiDiverged {
                    residual: res,
                    iterations,
                });
            }
        }
        x = next;
    }
    let res = care_residual(a, s, q, &x);
    if res > tol * x.norm().max(1.0) {
        return Err(Error::RiccatiDiverged {
            residual: res,
            iterations,
        });
    }
    Ok(x)
}

/// Invert a symmetric positive definite matrix, checking definiteness.
pub fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = nalgebra::linalg::Cholesky::new(m.clone())
        .ok_or_else(|| Error::invalid("matrix is not positive definite"))?;
    Ok(chol.inverse())
}

pub type CMatrix = DMatrix<Complex<f64>>;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex::new(x, 0.0))
}

/// Right null vector of a complex matrix: the right singular vector for the
/// smallest singular value.
fn complex_null_vector(m: &CMatrix) -> DVector<Complex<f64>> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("svd with v_t requested");
    let last = vt.nrows() - 1;
    vt.row(last).transpose().map(|c| c.conj())
}

/// Eigenvalues and an eigenvector matrix of a general real matrix.
///
/// Eigenvalues come from the real Schur form; each eigenvector is recovered
/// as the null vector of `M − λI`. Suitable for the small, well-separated
/// spectra that arise in the leader error system.
pub fn eigen_decomposition(m: &DMatrix<f64>) -> (DVector<Complex<f64>>, CMatrix) {
    let n = m.nrows();
    let eigvals = m.complex_eigenvalues();
    let mc = to_complex(m);
    let mut vectors = CMatrix::zeros(n, n);
    for (idx, lambda) in eigvals.iter().enumerate() {
        let shifted = &mc - CMatrix::identity(n, n) * *lambda;
        let v = complex_null_vector(&shifted);
        vectors.set_column(idx, &v);
    }
    (eigvals, vectors)
}

/// 2-norm condition number of a complex matrix.
pub fn cond2(m: &CMatrix) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Reconstruction residual `‖M J M⁻¹ − W‖ / ‖W‖` of an eigendecomposition.
pub fn eigen_residual(w: &DMatrix<f64>, eigvals: &DVector<Complex<f64>>, m: &CMatrix) -> f64 {
    let n = w.nrows();
    let j = CMatrix::from_diagonal(eigvals);
    let m_inv = match m.clone().lu().try_inverse() {
        Some(inv) => inv,
        None => return f64::INFINITY,
    };
    let rebuilt = m * j * m_inv;
    let mut diff = 0.0_f64;
    for i in 0..n {
        for k in 0..n {
            diff += (rebuilt[(i, k)] - Complex::new(w[(i, k)], 0.0)).norm_sqr();
        }
    }
    diff.sqrt() / w.norm().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lyapunov_solves_small_system() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0]);
        let q = DMatrix::identity(2, 2);
        let x = solve_lyapunov(&a, &q).unwrap();
        let res = (a.transpose() * &x + &x * &a + q).norm();
        assert!(res < 1e-12, "residual {res}");
    }

    #[test]
    fn care_scalar_case() {
        // aᵀx + xa − x·s·x + q = 0 with a=0, s=2, q=1 → x = 1/√2
        let a = DMatrix::zeros(1, 1);
        let s = DMatrix::from_element(1, 1, 2.0);
        let q = DMatrix::identity(1, 1);
        let x = solve_care(&a, &s, &q, 1e-12, 100).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0 / 2.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn care_double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let s = 2.0 * &b * b.transpose();
        let q = DMatrix::identity(2, 2);
        let x = solve_care(&a, &s, &q, 1e-12, 100).unwrap();
        let res = (a.transpose() * &x + &x * &a - &x * &s * &x + &q).norm();
        assert!(res < 1e-10, "residual {res}");
        // closed loop a − s·x must be Hurwitz
        assert!(spectral_abscissa(&(a - s * x)) < 0.0);
    }

    #[test]
    fn eigendecomposition_roundtrip() {
        let w = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., -6., -11., -6.]);
        let (vals, vecs) = eigen_decomposition(&w);
        assert!(eigen_residual(&w, &vals, &vecs) < 1e-9);
        let mut re: Vec<f64> = vals.iter().map(|l| l.re).collect();
        re.sort_by(f64::total_cmp);
        assert_relative_eq!(re[0], -3.0, epsilon = 1e-8);
        assert_relative_eq!(re[1], -2.0, epsilon = 1e-8);
        assert_relative_eq!(re[2], -1.0, epsilon = 1e-8);
    }
}
