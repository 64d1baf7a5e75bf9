//! Seeded random embeddings `S` with `‖SAy‖ ≈ ‖Ay‖`, and distortion
//! measurement.
//!
//! Column `j` of `S` is generated from its own ChaCha stream `(seed, j)`, so
//! any product can be formed without storing `S` and is reproducible bitwise.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};
use crate::estimates::KWFactorization;
use crate::linalg::{gaussian_vector, numerical_rank, random_orthonormal, singular_values, sym_eigenvalues, symmetrize, thin_svd};
use crate::operator::{LinearOperator, Matrix};
use crate::problem::TOL_RANK;

pub const DEFAULT_ROWS_FACTOR: f64 = 6.0;
pub const DEFAULT_NNZ_PER_COL: usize = 8;

/// Above this many entries `measure_distortion` samples instead of
/// computing the extremal distortion exactly.
pub const EXACT_DISTORTION_LIMIT: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum SketchKind {
    Gaussian,
    SparseSign { nnz_per_col: usize },
    Identity,
    /// `S = Ω·D·Qᵀ` with `Q` an orthonormal basis of the designated subspace
    /// and `D` spread evenly over `[1 − η, 1 + η]`.
    SyntheticEta { eta: f64, basis: DMatrix<f64> },
}

impl SketchKind {
    pub fn name(&self) -> &'static str {
        match self {
            SketchKind::Gaussian => "gaussian",
            SketchKind::SparseSign { .. } => "sparse-sign",
            SketchKind::Identity => "identity",
            SketchKind::SyntheticEta { .. } => "synthetic-eta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchOperator {
    pub kind: SketchKind,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    omega: Option<DMatrix<f64>>,
}

enum Column {
    Dense(DVector<f64>),
    Sparse(Vec<(usize, f64)>),
    Unit(usize),
}

/// Sketch seed derived from a run seed, kept apart from the streams used
/// for right-hand sides and power iteration under the same run seed.
pub fn sketch_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// `max(1, ⌊factor·n⌋)` sketch rows.
pub fn sketch_rows(n: usize, factor: f64) -> usize {
    ((factor * n as f64).floor() as usize).max(1)
}

impl SketchOperator {
    pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        Self::build(SketchKind::Gaussian, rows, cols, seed)
    }

    pub fn sparse_sign(rows: usize, cols: usize, nnz_per_col: usize, seed: u64) -> Result<Self> {
        if nnz_per_col == 0 {
            return Err(Error::InvalidInput("nnz_per_col must be positive".into()));
        }
        Self::build(SketchKind::SparseSign { nnz_per_col }, rows, cols, seed)
    }

    pub fn identity(m: usize) -> Result<Self> {
        Self::build(SketchKind::Identity, m, m, 0)
    }

    /// Exact distortion `η` on `range(basis)`; `basis` must have orthonormal
    /// columns and `rows ≥ basis.ncols()`.
    pub fn synthetic_eta(rows: usize, basis: DMatrix<f64>, eta: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::InvalidInput(format!("eta must lie in [0, 1), got {eta}")));
        }
        if rows < basis.ncols() {
            return Err(shape_err(format!("at least {} rows", basis.ncols()), format!("{rows}")));
        }
        let cols = basis.nrows();
        Self::build(SketchKind::SyntheticEta { eta, basis }, rows, cols, seed)
    }

    pub fn build(kind: SketchKind, rows: usize, cols: usize, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("sketch dimensions must be positive".into()));
        }
        if kind == SketchKind::Identity && rows != cols {
            return Err(shape_err(format!("{cols} rows"), format!("{rows}")));
        }
        let omega = match &kind {
            SketchKind::SyntheticEta { basis, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(u64::MAX);
                let om = random_orthonormal(&mut rng, rows, basis.ncols());
                let n = basis.ncols();
                let eta = match kind {
                    SketchKind::SyntheticEta { eta, .. } => eta,
                    _ => unreachable!(),
                };
                let d = DVector::from_fn(n, |i, _| {
                    if n == 1 {
                        1.0 - eta
                    } else {
                        1.0 - eta + 2.0 * eta * i as f64 / (n - 1) as f64
                    }
                });
                // store Ω·D; column j of S is (Ω·D)·Q[j, :]ᵀ
                Some(om * DMatrix::from_diagonal(&d))
            }
            _ => None,
        };
        Ok(Self { kind, rows, cols, seed, omega })
    }

    fn stream(&self, j: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(j as u64);
        rng
    }

    fn column(&self, j: usize) -> Column {
        match &self.kind {
            SketchKind::Gaussian => {
                let mut rng = self.stream(j);
                let scale = 1.0 / (self.rows as f64).sqrt();
                Column::Dense(DVector::from_fn(self.rows, |_, _| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * scale
                }))
            }
            SketchKind::SparseSign { nnz_per_col } => {
                let mut rng = self.stream(j);
                let k = (*nnz_per_col).min(self.rows);
                let val = 1.0 / (k as f64).sqrt();
                let mut entries: Vec<(usize, f64)> = Vec::with_capacity(k);
                while entries.len() < k {
                    let i = rng.random_range(0..self.rows);
                    if entries.iter().any(|e| e.0 == i) {
                        continue;
                    }
                    let s = if rng.random::<bool>() { val } else { -val };
                    entries.push((i, s));
                }
                Column::Sparse(entries)
            }
            SketchKind::Identity => Column::Unit(j),
            SketchKind::SyntheticEta { basis, .. } => {
                let om = self.omega.as_ref().expect("synthetic sketch stores its frame");
                Column::Dense(om * basis.row(j).transpose())
            }
        }
    }

    fn add_column(&self, out: &mut DMatrix<f64>, col: &Column, dst: usize, w: f64) {
        match col {
            Column::Dense(s) => {
                let mut c = out.column_mut(dst);
                c.axpy(w, s, 1.0);
            }
            Column::Sparse(e) => {
                for &(i, s) in e {
                    out[(i, dst)] += w * s;
                }
            }
            Column::Unit(i) => out[(*i, dst)] += w,
        }
    }

    /// `S·V` for an m×k block.
    pub fn apply(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v.nrows() != self.cols {
            return Err(shape_err(format!("{} rows", self.cols), format!("{}", v.nrows())));
        }
        if self.kind == SketchKind::Identity {
            return Ok(v.clone());
        }
        let mut out = DMatrix::zeros(self.rows, v.ncols());
        for j in 0..self.cols {
            if v.row(j).iter().all(|x| *x == 0.0) {
                continue;
            }
            let col = self.column(j);
            for c in 0..v.ncols() {
                let w = v[(j, c)];
                if w != 0.0 {
                    self.add_column(&mut out, &col, c, w);
                }
            }
        }
        Ok(out)
    }

    /// `S·A` touching only the stored entries of a sparse `A`.
    pub fn apply_matrix(&self, a: &Matrix) -> Result<DMatrix<f64>> {
        match a {
            Matrix::Dense(d) => self.apply(d),
            Matrix::Sparse(s) => {
                if s.nrows() != self.cols {
                    return Err(shape_err(format!("{} rows", self.cols), format!("{}", s.nrows())));
                }
                let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.cols];
                for (i, j, v) in s.triplets() {
                    by_row[i].push((j, v));
                }
                let mut out = DMatrix::zeros(self.rows, s.ncols());
                for (i, entries) in by_row.iter().enumerate() {
                    if entries.is_empty() {
                        continue;
                    }
                    let col = self.column(i);
                    for &(j, v) in entries {
                        self.add_column(&mut out, &col, j, v);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Forms `SA` once and keeps only its SVD.
    pub fn kw_factorization(&self, a: &Matrix) -> Result<KWFactorization> {
        Ok(KWFactorization::sketched(&self.apply_matrix(a)?))
    }
}

/// Free-function form of [`SketchOperator::apply`].
pub fn apply_sketch(s: &SketchOperator, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    s.apply(v)
}

fn one_sided(tau_min: f64, tau_max: f64) -> (f64, f64) {
    ((1.0 - tau_min).max(0.0), (tau_max - 1.0).max(0.0))
}

/// One-sided distortions `(η_low, η_high)` with
/// `(1 − η_low)‖Ay‖ ≤ ‖SAy‖ ≤ (1 + η_high)‖Ay‖`.
///
/// At desk scale this is exact (extremal singular values of `S·Q_A`);
/// otherwise `trials` random directions are sampled with `seed`.
pub fn measure_distortion(s: &SketchOperator, a: &DMatrix<f64>, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if s.kind == SketchKind::Identity {
        return Ok((0.0, 0.0));
    }
    if a.nrows() * a.ncols() <= EXACT_DISTORTION_LIMIT {
        measure_distortion_exact(s, a)
    } else {
        measure_distortion_sampled(s, a, trials, seed)
    }
}

pub fn measure_distortion_exact(s: &SketchOperator, a: &DMatrix<f64>) -> Result<(f64, f64)> {
    let (u, sv, _) = thin_svd(a);
    let rank = numerical_rank(&sv, TOL_RANK);
    if rank < a.ncols() {
        return Err(Error::RankDeficient { rank, cols: a.ncols() });
    }
    let tau = singular_values(&s.apply(&u)?);
    Ok(one_sided(tau[tau.len() - 1], tau[0]))
}

pub fn measure_distortion_sampled(s: &SketchOperator, a: &DMatrix<f64>, trials: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for _ in 0..trials.max(1) {
        let ay = a * gaussian_vector(&mut rng, a.ncols());
        let nrm = ay.norm();
        if nrm == 0.0 {
            continue;
        }
        let ratio = s.apply(&DMatrix::from_column_slice(ay.len(), 1, ay.as_slice()))?.norm() / nrm;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    if !lo.is_finite() {
        return Err(Error::RankDeficient { rank: 0, cols: a.ncols() });
    }
    Ok(one_sided(lo, hi))
}

/// Distortion of `(SA)ᵀ(SA) + shift·I` against `AᵀA + shift·I` measured
/// through their Cholesky factors.
pub fn regularized_distortion(s: &SketchOperator, a: &DMatrix<f64>, shift: f64) -> Result<(f64, f64)> {
    let n = a.ncols();
    let sa = s.apply(a)?;
    let eye = DMatrix::<f64>::identity(n, n) * shift;
    let g = a.tr_mul(a) + &eye;
    let gs = sa.tr_mul(&sa) + eye;
    let l = Cholesky::new(symmetrize(&g)).ok_or(Error::NotPositiveDefinite)?.l();
    let li = l.solve_lower_triangular(&DMatrix::identity(n, n)).ok_or(Error::NotPositiveDefinite)?;
    let c = symmetrize(&(&li * gs * li.transpose()));
    let ev = sym_eigenvalues(&c);
    Ok(one_sided(ev[0].max(0.0).sqrt(), ev[n - 1].max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimates::{kw, lb_direction, lb_evaluate, sketched_kw, RecycledDirection};
    use crate::linalg::gaussian_matrix;
    use crate::operator::CscMatrix;

    #[test]
    fn identity_is_bitwise_passthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = gaussian_matrix(&mut rng, 9, 3);
        let s = SketchOperator::identity(9).unwrap();
        assert_eq!(apply_sketch(&s, &v).unwrap(), v);
        assert_eq!(measure_distortion(&s, &v, 10, 0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn deterministic_and_sparse_path_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = gaussian_matrix(&mut rng, 40, 4);
        a[(3, 1)] = 0.0;
        a.row_mut(7).fill(0.0);
        let sp = Matrix::Sparse(CscMatrix::from_dense(&a));
        for s in [SketchOperator::gaussian(24, 40, 9).unwrap(), SketchOperator::sparse_sign(24, 40, 8, 9).unwrap()] {
            let x = s.apply(&a).unwrap();
            assert_eq!(x, s.apply(&a).unwrap());
            assert!((s.apply_matrix(&sp).unwrap() - &x).norm() < 1e-13 * x.norm());
        }
        assert!(SketchOperator::gaussian(24, 41, 9).unwrap().apply(&a).is_err());
    }

    #[test]
    fn gaussian_preserves_norm_in_expectation() {
        let m = 20;
        let v = DMatrix::from_fn(m, 1, |i, _| if i == 3 { 0.6 } else if i == 11 { 0.8 } else { 0.0 });
        let mean: f64 =
            (0..500).map(|seed| SketchOperator::gaussian(6 * m, m, seed).unwrap().apply(&v).unwrap().norm_squared()).sum::<f64>()
                / 500.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn sparse_sign_columns_have_fixed_nnz() {
        let s = SketchOperator::sparse_sign(30, 5, 8, 4).unwrap();
        let out = s.apply(&DMatrix::identity(5, 5)).unwrap();
        for j in 0..5 {
            let col = out.column(j);
            assert_eq!(col.iter().filter(|x| **x != 0.0).count(), 8);
            assert!((col.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sparse_sign_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = gaussian_matrix(&mut rng, 200, 10);
        let s = SketchOperator::sparse_sign(60, 200, 8, 17).unwrap();
        let (lo, hi) = measure_distortion_sampled(&s, &a, 100, 3).unwrap();
        assert!(lo.max(hi) <= 0.6, "{lo} {hi}");
    }

    #[test]
    fn synthetic_sketch_has_exact_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = gaussian_matrix(&mut rng, 50, 5);
        let (q, _, _) = thin_svd(&a);
        let s = SketchOperator::synthetic_eta(20, q, 0.3, 8).unwrap();
        let (lo, hi) = measure_distortion(&s, &a, 0, 0).unwrap();
        assert!((lo - 0.3).abs() < 1e-10 && (hi - 0.3).abs() < 1e-10, "{lo} {hi}");
    }

    #[test]
    fn gaussian_distortion_below_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = gaussian_matrix(&mut rng, 300, 12);
        for seed in 0..100 {
            let s = SketchOperator::gaussian(72, 300, seed).unwrap();
            let (_, hi) = measure_distortion(&s, &a, 0, 0).unwrap();
            assert!(hi < 1.0);
        }
    }

    #[test]
    fn regularization_never_increases_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..20 {
            let a = gaussian_matrix(&mut rng, 80, 6);
            let s = SketchOperator::gaussian(12, 80, seed).unwrap();
            let (lo0, hi0) = measure_distortion_exact(&s, &a).unwrap();
            for shift in [0.1, 1.0, 100.0] {
                let (lo, hi) = regularized_distortion(&s, &a, shift).unwrap();
                assert!(lo <= lo0 + 1e-12 && hi <= hi0 + 1e-12);
            }
        }
    }

    #[test]
    fn sketched_estimates_respect_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = gaussian_matrix(&mut rng, 200, 10);
        let r = gaussian_vector(&mut rng, 200);
        let nu = kw(&a, &r);
        let atr = a.tr_mul(&r);
        for seed in 0..20 {
            let s = SketchOperator::gaussian(60, 200, seed).unwrap();
            let (lo, hi) = measure_distortion(&s, &a, 0, 0).unwrap();
            let kwf = s.kw_factorization(&Matrix::Dense(a.clone())).unwrap();
            let ratio = sketched_kw(&kwf, &atr, r.norm()).unwrap() / nu;
            assert!(ratio >= 1.0 / (1.0 + hi) - 1e-12 && ratio <= 1.0 / (1.0 - lo) + 1e-12, "{ratio}");
            let eta = lo.max(hi);
            let p = lb_direction(&kwf, &atr, r.norm(), 0.0).unwrap();
            let lb = lb_evaluate(&RecycledDirection::new(&p, &a, 0, 0.0).ap, &r).unwrap();
            assert!(lb >= (1.0 - eta * eta) / (1.0 + eta * eta) * nu - 1e-10);
        }
    }

    #[test]
    fn row_count_helper() {
        assert_eq!(sketch_rows(1019, 1.5), 1528);
        assert_eq!(sketch_rows(10, 16.0), 160);
        assert_eq!(sketch_rows(0, 6.0), 1);
    }
}
