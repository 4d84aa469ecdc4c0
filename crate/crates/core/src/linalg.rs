//! Dense linear algebra used by the linear pessimistic evaluation: SVD pseudo-inverse,
//! dense solves, and minimization of convex quadratics `θᵀHθ − θᵀg`.
//!
//! Decompositions are delegated to nalgebra; the cutoffs, range checks and error
//! reporting live here.

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used when none is configured: `1e-10 · max(rows, cols)`.
pub fn default_rtol(rows: usize, cols: usize) -> f64 {
    1e-10 * rows.max(cols).max(1) as f64
}

const SVD_MAX_ITER: usize = 10_000;
const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const RANGE_TOL: f64 = 1e-8;
/// Relative Frobenius error a decomposition may have when recomposed.
const RECON_TOL: f64 = 1e-9;
/// Entries below this fraction of `max|m|` are zeroed before a decomposition; they lie far
/// under any eigenvalue cutoff, and nalgebra's iterations can return NaN on them.
const FLUSH_TOL: f64 = 1e-20;

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Shape("matrix has non-finite entries".into()))
    }
}

fn flush_tiny(m: &DMatrix<f64>) -> DMatrix<f64> {
    let floor = FLUSH_TOL * m.amax();
    m.map(|x| if x.abs() < floor { 0.0 } else { x })
}

/// Moore–Penrose pseudo-inverse. Singular values below `rtol · σ_max` are treated as
/// zero. Symmetric inputs go through the symmetric eigendecomposition (`σᵢ = |λᵢ|`).
pub fn pinv(m: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    if rows == cols && asymmetry(m) <= SYMMETRY_TOL * m.amax() {
        return pinv_symmetric(&((m + m.transpose()) * 0.5), rtol);
    }
    // Singular triplets from the augmented symmetric matrix [[0, M], [Mᵀ, 0]], whose
    // eigenpairs are ±σᵢ with eigenvectors (uᵢ; ±vᵢ)/√2. nalgebra's SVD can return a
    // factorization that does not reproduce its input on rank-deficient matrices, while
    // the eigendecomposition below is checked.
    let flushed = flush_tiny(m);
    let mut aug = DMatrix::zeros(rows + cols, rows + cols);
    aug.view_mut((0, rows), (rows, cols)).copy_from(&flushed);
    aug.view_mut((rows, 0), (cols, rows))
        .copy_from(&flushed.transpose());
    let eig = symmetric_eigen(aug)?;
    let sigma_max = eig.eigenvalues.max();
    if sigma_max <= 0.0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let cutoff = rtol * sigma_max;
    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in eig.eigenvalues.iter().enumerate() {
        if s > cutoff {
            // out += v_k (1/σ) u_kᵀ with u_k, v_k each carrying a 1/√2 factor
            let w = eig.eigenvectors.column(k);
            out.ger(2.0 / s, &w.rows(rows, cols), &w.rows(0, rows), 1.0);
        }
    }
    Ok(out)
}

fn pinv_symmetric(sym: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    let n = sym.nrows();
    let eig = symmetric_eigen(flush_tiny(sym))?;
    let max_abs = eig.eigenvalues.amax();
    if max_abs == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let cutoff = rtol * max_abs;
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            out.ger(1.0 / lam, &v, &v, 1.0);
        }
    }
    Ok(out)
}

/// `‖r − m‖_F ≤ RECON_TOL·‖m‖_F`.
fn reconstructs(r: &DMatrix<f64>, m: &DMatrix<f64>) -> bool {
    (r - m).norm() <= RECON_TOL * m.norm()
}

/// Symmetric eigendecomposition whose output is checked to reproduce its input.
fn symmetric_eigen(sym: DMatrix<f64>) -> Result<SymmetricEigen<f64, Dyn>> {
    let eig = SymmetricEigen::try_new(sym.clone(), f64::EPSILON, SVD_MAX_ITER)
        .ok_or(Error::SvdNoConvergence)?;
    if !(eig.eigenvalues.iter().all(|x| x.is_finite())
        && eig.eigenvectors.iter().all(|x| x.is_finite())
        && reconstructs(&eig.recompose(), &sym))
    {
        return Err(Error::SvdNoConvergence);
    }
    Ok(eig)
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::Shape(format!(
            "solve: A is {}x{}, b has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Shape("solve: singular system".into()))
}

/// Dense inverse; `None` for singular input.
pub fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().try_inverse()
}

/// 2-norm condition number estimate from singular values. Infinite when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest absolute asymmetry `max |Hᵢⱼ − Hⱼᵢ|`.
pub fn asymmetry(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    worst
}

/// Minimizes `θᵀHθ − θᵀg` over ℝᵈ for symmetric positive semi-definite `H`.
///
/// Returns the minimum-norm minimizer `½ H† g`, with `H†` taken from the eigendecomposition
/// (eigenvalues at or below `rtol·max|λ|` count as zero). Fails with [`Error::Unbounded`]
/// when `g` has a component along that numerical null space.
pub fn minimize_quadratic(h: &DMatrix<f64>, g: &DVector<f64>, rtol: f64) -> Result<DVector<f64>> {
    let d = h.nrows();
    if h.ncols() != d || g.len() != d {
        return Err(Error::Shape(format!(
            "minimize_quadratic: H is {}x{}, g has length {}",
            h.nrows(),
            h.ncols(),
            g.len()
        )));
    }
    check_finite(h)?;
    if !g.iter().all(|x| x.is_finite()) {
        return Err(Error::Shape(
            "minimize_quadratic: g has non-finite entries".into(),
        ));
    }
    if d == 0 {
        return Ok(DVector::zeros(0));
    }
    let scale = h.amax().max(1.0);
    let asym = asymmetry(h);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let eig = symmetric_eigen(flush_tiny(&((h + h.transpose()) * 0.5)))?;
    let min_eig = eig.eigenvalues.min();
    let max_abs_eig = eig.eigenvalues.amax();
    if min_eig < -PSD_TOL * max_abs_eig.max(1.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: min_eig,
        });
    }

    // Numerical null space: eigenvalues at or below rtol·max|λ|.
    let cutoff = rtol * max_abs_eig;
    let gnorm = g.norm();
    let mut theta = DVector::zeros(d);
    let mut directions = Vec::new();
    let mut components = Vec::new();
    let mut null_sq = 0.0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let comp = v.dot(g);
        if lam > cutoff {
            theta.axpy(0.5 * comp / lam, &v, 1.0);
        } else {
            null_sq += comp * comp;
            if comp.abs() > RANGE_TOL * (1.0 + gnorm) {
                directions.push(v.iter().copied().collect());
                components.push(comp);
            }
        }
    }
    let residual = null_sq.sqrt();
    if residual > RANGE_TOL * (1.0 + gnorm) {
        return Err(Error::Unbounded {
            directions,
            components,
            residual,
        });
    }
    Ok(theta)
}

/// Value of `θᵀHθ − θᵀg`.
pub fn quadratic_value(h: &DMatrix<f64>, g: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    theta.dot(&(h * theta)) - theta.dot(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn penrose_residuals(m: &DMatrix<f64>, p: &DMatrix<f64>) -> [f64; 4] {
        let scale = m.norm().max(1.0) * p.norm().max(1.0);
        [
            (m * p * m - m).norm() / m.norm().max(1.0),
            (p * m * p - p).norm() / p.norm().max(1.0),
            ((m * p).transpose() - m * p).norm() / scale,
            ((p * m).transpose() - p * m).norm() / scale,
        ]
    }

    #[test]
    fn low_rank_gram_and_rectangular_pinv() {
        // Rank-deficient Gram matrices are the shape of every Σ in the library.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let d = rng.random_range(3..=10);
            let rank = rng.random_range(1..d);
            let n = rng.random_range(d..=60);
            let x = random_matrix(&mut rng, n, rank) * random_matrix(&mut rng, rank, d);
            let gram = x.transpose() * &x / n as f64;
            for m in [gram, x] {
                let p = pinv(&m, default_rtol(m.nrows(), m.ncols())).unwrap();
                for r in penrose_residuals(&m, &p) {
                    assert!(r < 1e-9, "Penrose residual {r}");
                }
            }
        }
    }

    #[test]
    fn pinv_of_identity_and_zero() {
        let i = DMatrix::<f64>::identity(4, 4);
        assert!((pinv(&i, 1e-10).unwrap() - &i).amax() < 1e-14);
        let z = DMatrix::<f64>::zeros(3, 5);
        let p = pinv(&z, 1e-10).unwrap();
        assert_eq!(p.shape(), (5, 3));
        assert_eq!(p.amax(), 0.0);
    }

    #[test]
    fn pinv_rank_deficient_satisfies_penrose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 6, 3);
        let b = random_matrix(&mut rng, 3, 6);
        let m = &a * &b;
        let p = pinv(&m, default_rtol(6, 6)).unwrap();
        for r in penrose_residuals(&m, &p) {
            assert!(r < 1e-8, "penrose residual {r}");
        }
    }

    #[test]
    fn pinv_rejects_nan() {
        let mut m = DMatrix::<f64>::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(pinv(&m, 1e-10).is_err());
    }

    #[test]
    fn minimize_simple() {
        let h = DMatrix::<f64>::identity(2, 2) * 2.0;
        let g = DVector::from_vec(vec![2.0, 4.0]);
        let theta = minimize_quadratic(&h, &g, 1e-10).unwrap();
        assert!((theta[0] - 0.5).abs() < 1e-14);
        assert!((theta[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn minimize_rejects_asymmetric_and_indefinite() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let g = DVector::zeros(2);
        assert!(matches!(
            minimize_quadratic(&h, &g, 1e-10),
            Err(Error::NotSymmetric { .. })
        ));
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            minimize_quadratic(&h, &g, 1e-10),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn minimize_reports_unbounded_direction() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let g = DVector::from_vec(vec![1.0, -3.0]);
        match minimize_quadratic(&h, &g, 1e-10) {
            Err(Error::Unbounded {
                directions,
                components,
                ..
            }) => {
                assert_eq!(directions.len(), 1);
                assert!((directions[0][1].abs() - 1.0).abs() < 1e-12);
                assert!((components[0].abs() - 3.0).abs() < 1e-12);
            }
            other => panic!("expected unbounded, got {other:?}"),
        }
    }

    #[test]
    fn minimize_singular_matches_random_search() {
        // Oracle: random search over a box around the origin plus the returned point's
        // objective; no random point may beat the returned minimum.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 3, 2);
        let h = &a * a.transpose();
        let g = &h * DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let theta = minimize_quadratic(&h, &g, 1e-10).unwrap();
        let best = quadratic_value(&h, &g, &theta);
        let mut oracle = f64::INFINITY;
        for _ in 0..100_000 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            oracle = oracle.min(quadratic_value(&h, &g, &x));
        }
        assert!(best <= oracle + 1e-8, "best {best} oracle {oracle}");
        // Random search gets close to the true minimum.
        assert!(oracle - best < 1e-2);
    }

    #[test]
    fn minimize_homogeneous_in_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 4, 4);
        let h = &a * a.transpose();
        let g = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let t1 = minimize_quadratic(&h, &g, 1e-10).unwrap();
        let t2 = minimize_quadratic(&(&h * 7.5), &(&g * 7.5), 1e-10).unwrap();
        assert!((t1 - t2).norm() < 1e-8);
    }
}
