//! Problem data, the weighted residual `R_θ` and rotation-invariant
//! compression of `(A, R_θ)` pairs.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{hcat, numerical_rank, singular_values, sym_eigen};
use crate::operator::{LinearOperator, Matrix};

/// Relative threshold (times `σ_max`) for every numerical rank decision.
pub const TOL_RANK: f64 = 1e-12;

/// Weighting between perturbations of `A` and of `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta {
    Finite(f64),
    Infinite,
}

impl Theta {
    pub fn finite(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Theta::Finite(value))
        } else {
            Err(Error::InvalidInput(format!("theta must be positive, got {value}")))
        }
    }

    /// `θ⁻²`, zero for the infinite weighting.
    pub fn inv_sq(self) -> f64 {
        match self {
            Theta::Finite(t) => 1.0 / (t * t),
            Theta::Infinite => 0.0,
        }
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::Finite(t) => write!(f, "{t}"),
            Theta::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Theta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(Theta::Infinite),
            other => {
                let v: f64 = other.parse().map_err(|_| Error::InvalidInput(format!("bad theta '{s}'")))?;
                if v.is_infinite() && v > 0.0 {
                    Ok(Theta::Infinite)
                } else {
                    Theta::finite(v)
                }
            }
        }
    }
}

/// `min ‖AX − B‖_F` together with the backward-error weighting.
#[derive(Debug, Clone)]
pub struct LSProblem {
    pub a: Matrix,
    pub b: DMatrix<f64>,
    pub theta: Theta,
}

impl LSProblem {
    pub fn new(a: Matrix, b: DMatrix<f64>, theta: Theta) -> Result<Self> {
        let (m, n) = (a.nrows(), a.ncols());
        if m == 0 || n == 0 || b.ncols() == 0 {
            return Err(Error::InvalidInput("dimensions must be at least 1".into()));
        }
        if b.nrows() != m {
            return Err(shape_err(format!("B with {m} rows"), format!("{} rows", b.nrows())));
        }
        if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("entries must be finite".into()));
        }
        Ok(Self { a, b, theta })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }
    pub fn n(&self) -> usize {
        self.a.ncols()
    }
    pub fn d(&self) -> usize {
        self.b.ncols()
    }
}

/// `X`, `R = B − AX` and the compressed `R_θ = R(θ⁻²I + XᵀX)^{-1/2}`.
#[derive(Debug, Clone)]
pub struct WeightedResidual {
    pub x: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub r_theta: DMatrix<f64>,
    pub theta: Theta,
}

/// Residual and weighted residual of an approximate solution `X`.
pub fn weighted_residual(problem: &LSProblem, x: &DMatrix<f64>) -> Result<WeightedResidual> {
    weighted_residual_with_tol(problem, x, TOL_RANK)
}

pub fn weighted_residual_with_tol(problem: &LSProblem, x: &DMatrix<f64>, tol_rank: f64) -> Result<WeightedResidual> {
    let (n, d) = (problem.n(), problem.d());
    if x.shape() != (n, d) {
        return Err(shape_err(format!("X of shape {n}x{d}"), format!("{}x{}", x.nrows(), x.ncols())));
    }
    let mut r = problem.b.clone();
    for j in 0..d {
        let ax = problem.a.apply(&x.column(j).into_owned());
        let mut col = r.column_mut(j);
        col -= ax;
    }
    let r_theta = weight_residual(&r, x, problem.theta, tol_rank)?;
    Ok(WeightedResidual { x: x.clone(), r, r_theta, theta: problem.theta })
}

/// `R(θ⁻²I + XᵀX)^{-1/2}` from an explicit residual.
pub fn weight_residual(r: &DMatrix<f64>, x: &DMatrix<f64>, theta: Theta, tol_rank: f64) -> Result<DMatrix<f64>> {
    let d = x.ncols();
    if theta == Theta::Infinite {
        let s = singular_values(x);
        let rank = numerical_rank(&s, tol_rank);
        if rank < d {
            return Err(Error::RankDeficient { rank, cols: d });
        }
    }
    if d == 1 {
        let xnorm = x.norm();
        let scale = match theta {
            Theta::Finite(t) => t / (1.0 + t * t * xnorm * xnorm).sqrt(),
            Theta::Infinite => 1.0 / xnorm,
        };
        return Ok(r * scale);
    }
    let gram = x.tr_mul(x) + DMatrix::<f64>::identity(d, d) * theta.inv_sq();
    let (vals, vecs) = sym_eigen(&gram);
    let inv_sqrt = DVector::from_iterator(d, vals.iter().map(|&v| 1.0 / v.sqrt()));
    let g = &vecs * DMatrix::from_diagonal(&inv_sqrt) * vecs.transpose();
    Ok(r * g)
}

/// Weighted residual of a single right-hand side, `θr/√(1 + θ²‖x‖²)`.
pub fn weight_residual_vector(r: &DVector<f64>, x_norm: f64, theta: Theta) -> Result<DVector<f64>> {
    match theta {
        Theta::Finite(t) => Ok(r * (t / (1.0 + t * t * x_norm * x_norm).sqrt())),
        Theta::Infinite if x_norm > 0.0 => Ok(r / x_norm),
        Theta::Infinite => Err(Error::RankDeficient { rank: 0, cols: 1 }),
    }
}

/// `(A, R_θ)` reduced to at most n+d rows with identical Gram matrices.
#[derive(Debug, Clone)]
pub struct CompressedPair {
    pub ta: DMatrix<f64>,
    pub tr: DMatrix<f64>,
    pub norm_r: f64,
}

impl CompressedPair {
    pub fn n(&self) -> usize {
        self.ta.ncols()
    }
    pub fn d(&self) -> usize {
        self.tr.ncols()
    }
    pub fn k(&self) -> usize {
        self.ta.nrows()
    }

    /// `[TA, TR]`.
    pub fn joined(&self) -> DMatrix<f64> {
        hcat(&self.ta, &self.tr)
    }

    /// `TA·TAᵀ − TR·TRᵀ`, which carries the nonzero spectrum of `AAᵀ − R_θR_θᵀ`.
    pub fn signed_outer(&self) -> DMatrix<f64> {
        &self.ta * self.ta.transpose() - &self.tr * self.tr.transpose()
    }
}

/// Thin QR of `[A, R_θ]` split columnwise; identity when m ≤ n+d.
pub fn compress_pair(a: &DMatrix<f64>, r_theta: &DMatrix<f64>) -> CompressedPair {
    assert_eq!(a.nrows(), r_theta.nrows(), "A and R_theta must have the same row count");
    let (m, n) = a.shape();
    let d = r_theta.ncols();
    let norm_r = r_theta.norm();
    if m <= n + d {
        return CompressedPair { ta: a.clone(), tr: r_theta.clone(), norm_r };
    }
    let t = crate::linalg::qr_r(&hcat(a, r_theta));
    CompressedPair { ta: t.columns(0, n).into_owned(), tr: t.columns(n, d).into_owned(), norm_r }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_problem(theta: Theta) -> LSProblem {
        LSProblem::new(Matrix::Dense(DMatrix::from_element(1, 1, 1.0)), DMatrix::from_element(1, 1, 2.0), theta)
            .unwrap()
    }

    #[test]
    fn scalar_weighted_residual_finite_theta() {
        let p = scalar_problem(Theta::Finite(1.0));
        let w = weighted_residual(&p, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(w.r[(0, 0)], 1.0);
        assert!((w.r_theta[(0, 0)] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn scalar_weighted_residual_infinite_theta() {
        let p = scalar_problem(Theta::Infinite);
        let w = weighted_residual(&p, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(w.r_theta[(0, 0)], 1.0);
    }

    #[test]
    fn infinite_theta_rejects_rank_deficient_x() {
        let p = scalar_problem(Theta::Infinite);
        let err = weighted_residual(&p, &DMatrix::zeros(1, 1)).unwrap_err();
        assert_eq!(err, Error::RankDeficient { rank: 0, cols: 1 });

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian_matrix(&mut rng, 6, 3);
        let b = gaussian_matrix(&mut rng, 6, 2);
        let p = LSProblem::new(Matrix::Dense(a), b, Theta::Infinite).unwrap();
        let col = gaussian_matrix(&mut rng, 3, 1);
        let x = hcat(&col, &(&col * 2.0));
        assert!(matches!(weighted_residual(&p, &x), Err(Error::RankDeficient { rank: 1, cols: 2 })));
    }

    #[test]
    fn multi_rhs_weighting_matches_matrix_function_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = gaussian_matrix(&mut rng, 8, 3);
        let b = gaussian_matrix(&mut rng, 8, 2);
        let x = gaussian_matrix(&mut rng, 3, 2);
        let p = LSProblem::new(Matrix::Dense(a.clone()), b.clone(), Theta::Finite(2.0)).unwrap();
        let w = weighted_residual(&p, &x).unwrap();
        let r = &b - &a * &x;
        // oracle: G^{-1/2} via nalgebra's own symmetric eigensolver and an explicit inverse
        let g = x.transpose() * &x + DMatrix::<f64>::identity(2, 2) * 0.25;
        let eig = nalgebra::SymmetricEigen::new(g);
        let sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
            * eig.eigenvectors.transpose();
        let oracle = &r * sqrt.try_inverse().unwrap();
        assert!((&w.r_theta - oracle).amax() < 1e-12);
        assert!((&w.r - r).amax() < 1e-13);
    }

    #[test]
    fn weighted_residual_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = gaussian_matrix(&mut rng, 9, 4);
            let b = gaussian_matrix(&mut rng, 9, 3);
            let x = gaussian_matrix(&mut rng, 4, 3);
            let smin = singular_values(&x).iter().copied().fold(f64::INFINITY, f64::min);
            for theta in [Theta::Finite(0.3), Theta::Finite(4.0), Theta::Infinite] {
                let p = LSProblem::new(Matrix::Dense(a.clone()), b.clone(), theta).unwrap();
                let w = weighted_residual(&p, &x).unwrap();
                let cap = match theta {
                    Theta::Finite(t) => t.min(1.0 / smin),
                    Theta::Infinite => 1.0 / smin,
                };
                assert!(w.r_theta.norm() <= w.r.norm() * cap * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn compress_identity_and_orthonormal_cases() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let r = DMatrix::from_row_slice(1, 1, &[3.0]);
        let c = compress_pair(&a, &r);
        assert_eq!(c.ta, a);
        assert_eq!(c.tr, r);

        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let r = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let c = compress_pair(&a, &r);
        assert_eq!(c.k(), 2);
        assert!((c.ta[(0, 0)].abs() - 1.0).abs() < 1e-15 && c.ta[(1, 0)].abs() < 1e-15);
        assert!((c.tr[(1, 0)].abs() - 1.0).abs() < 1e-15 && c.tr[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn compression_preserves_grams_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = gaussian_matrix(&mut rng, 50, 3);
        let r = gaussian_matrix(&mut rng, 50, 2);
        let c = compress_pair(&a, &r);
        let scale = a.norm_squared().max(r.norm_squared());
        assert!((c.ta.tr_mul(&c.ta) - a.tr_mul(&a)).amax() <= 1e-12 * scale);
        assert!((c.tr.tr_mul(&c.tr) - r.tr_mul(&r)).amax() <= 1e-12 * scale);
        let cc = compress_pair(&c.ta, &c.tr);
        let j1 = c.joined();
        let j2 = cc.joined();
        assert!((j1.tr_mul(&j1) - j2.tr_mul(&j2)).amax() <= 1e-12 * scale);
    }

    #[test]
    fn theta_parses() {
        assert_eq!("inf".parse::<Theta>().unwrap(), Theta::Infinite);
        assert_eq!("0.5".parse::<Theta>().unwrap(), Theta::Finite(0.5));
        assert!("-1".parse::<Theta>().is_err());
        assert!("0".parse::<Theta>().is_err());
    }
}
