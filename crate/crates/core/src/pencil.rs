//! Indefinite kernels: the `(M, J_{n,d})` generalized eigenproblem, the
//! negative-trace functional and the hyperbolic CS decomposition.
//!
//! The pencil is reduced through a triangular factor `M = GᵀG` to the
//! symmetric matrix `K = G⁻ᵀJG⁻¹`, whose eigenvalues are the reciprocals of
//! the pencil eigenvalues. Only symmetric eigensolvers are involved.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    hcat, numerical_rank, orthogonal_complement, orthonormality_defect, qr_r, sym_eigen, sym_eigenvalues,
    thin_svd,
};

/// Eigenvalue sign band for `tr_minus`, relative to `max(1, ‖M‖₂)`.
pub const TOL_EIG: f64 = 1e-14;

/// Null vectors whose J-norm falls below this (relative) are degenerate.
const TOL_DEGENERATE: f64 = 1e-8;

/// Inertia of the signature matrix `J = diag(I_{n_plus}, −I_{n_minus})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JSignature {
    pub n_plus: usize,
    pub n_minus: usize,
}

impl JSignature {
    pub fn new(n_plus: usize, n_minus: usize) -> Result<Self> {
        if n_plus + n_minus == 0 {
            return Err(Error::InvalidInput("signature must have at least one entry".into()));
        }
        Ok(Self { n_plus, n_minus })
    }

    pub fn dim(&self) -> usize {
        self.n_plus + self.n_minus
    }

    pub fn sign(&self, i: usize) -> f64 {
        if i < self.n_plus {
            1.0
        } else {
            -1.0
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_fn(self.dim(), |i, _| self.sign(i)))
    }

    /// `J·X` without forming `J`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        out.rows_mut(self.n_plus, self.n_minus).neg_mut();
        out
    }
}

/// J-orthonormal eigenbasis of a pencil `(M, J)`.
///
/// Columns of `v` are ordered with the `n_plus` positive-side eigenvalues
/// first (descending) and the `n_minus` negative-side ones after
/// (descending, so `λ₁⁻` closest to zero comes first).
#[derive(Debug, Clone)]
pub struct PencilEigen {
    pub v: DMatrix<f64>,
    pub lambdas: Vec<f64>,
    pub sig: JSignature,
}

impl PencilEigen {
    /// Eigenvectors for `λ₁⁻ … λ_d⁻`, each with `vᵀJv = −1`.
    pub fn negative_vectors(&self) -> DMatrix<f64> {
        self.v.columns(self.sig.n_plus, self.sig.n_minus).into_owned()
    }

    pub fn negative_values(&self) -> &[f64] {
        &self.lambdas[self.sig.n_plus..]
    }

    pub fn positive_values(&self) -> &[f64] {
        &self.lambdas[..self.sig.n_plus]
    }

    /// `‖MV − JVΛ‖_max`.
    pub fn residual(&self, m: &DMatrix<f64>) -> f64 {
        let lam = DMatrix::from_diagonal(&DVector::from_row_slice(&self.lambdas));
        (m * &self.v - self.sig.apply(&self.v) * lam).amax()
    }

    /// `‖VᵀJV − J‖_max`.
    pub fn j_defect(&self) -> f64 {
        (self.v.transpose() * self.sig.apply(&self.v) - self.sig.matrix()).amax()
    }
}

/// Generalized eigenpairs of the SPD `M` against `J_{n,d}`.
pub fn j_pencil_eig(m: &DMatrix<f64>, sig: JSignature) -> Result<PencilEigen> {
    let k = sig.dim();
    if m.shape() != (k, k) {
        return Err(crate::error::shape_err(format!("{k}x{k}"), format!("{}x{}", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if crate::linalg::asymmetry(m) > 1e-12 * scale {
        return Err(Error::InvalidInput("pencil matrix is not symmetric".into()));
    }
    let chol = Cholesky::new(crate::linalg::symmetrize(m)).ok_or(Error::NotPositiveDefinite)?;
    let g = chol.l().transpose();
    let (lambdas, v) = definite_pencil(&g, &sig.matrix())?;
    order_by_signature(lambdas, v, sig)
}

/// Positive-semidefinite variant for `M = TᵀT` given the factor `T`.
///
/// The numerical null space `Z` of `T` is split off exactly: null vectors
/// contribute eigenvalue 0 on the side given by the sign of their J-norm,
/// and the remaining pencil is solved on the J-orthogonal complement of `Z`
/// where it is definite. Fails with `NotPositiveDefinite` when `ZᵀJZ` is
/// (nearly) singular, i.e. when the pencil is genuinely degenerate.
pub fn j_pencil_eig_factored(t: &DMatrix<f64>, sig: JSignature, tol_rank: f64) -> Result<PencilEigen> {
    let k = sig.dim();
    if t.ncols() != k {
        return Err(crate::error::shape_err(format!("{k} columns"), format!("{}", t.ncols())));
    }
    let (_, s, vr) = thin_svd(t);
    let rank = numerical_rank(&s, tol_rank);
    if rank == k {
        let g = square_r_factor(t);
        let (lambdas, v) = definite_pencil(&g, &sig.matrix())?;
        return order_by_signature(lambdas, v, sig);
    }
    let range = vr.columns(0, rank).into_owned();
    let z = orthogonal_complement(&range);
    let jz = sig.apply(&z);
    let (d_vals, e) = sym_eigen(&(z.transpose() * &jz));
    if d_vals.iter().any(|&x| x.abs() < TOL_DEGENERATE) {
        return Err(Error::NotPositiveDefinite);
    }
    let mut null_vecs = &z * &e;
    for (j, &dv) in d_vals.iter().enumerate() {
        null_vecs.column_mut(j).scale_mut(1.0 / dv.abs().sqrt());
    }

    let mut lambdas: Vec<f64> = vec![0.0; z.ncols()];
    let mut signs: Vec<f64> = d_vals.iter().map(|x| x.signum()).collect();
    let mut vecs = null_vecs;
    if rank > 0 {
        let w = orthogonal_complement(&jz);
        let g = square_r_factor(&(t * &w));
        let b = w.transpose() * sig.apply(&w);
        let (lam_r, y) = definite_pencil(&g, &b)?;
        let vr = &w * y;
        signs.extend(lam_r.iter().map(|x| x.signum()));
        lambdas.extend(lam_r);
        vecs = hcat(&vecs, &vr);
    }
    let plus = signs.iter().filter(|&&s| s > 0.0).count();
    if plus != sig.n_plus {
        return Err(Error::NotPositiveDefinite);
    }
    order_with_signs(lambdas, signs, vecs, sig)
}

/// Square upper-triangular `G` with `GᵀG = TᵀT` for a full-column-rank `T`.
fn square_r_factor(t: &DMatrix<f64>) -> DMatrix<f64> {
    let c = t.ncols();
    let r = qr_r(t);
    if r.nrows() == c {
        r
    } else {
        // fewer rows than columns cannot be full column rank; pad so that the
        // triangular solves fail loudly downstream
        let mut g = DMatrix::zeros(c, c);
        g.rows_mut(0, r.nrows()).copy_from(&r);
        g
    }
}

/// Eigenpairs of `(GᵀG, B)` for upper-triangular nonsingular `G` and symmetric
/// nonsingular `B`. Returns `λ` and `V` scaled so that `vᵀBv = ±1`.
fn definite_pencil(g: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let gt = g.transpose();
    let y = gt.solve_lower_triangular(b).ok_or(Error::NotPositiveDefinite)?;
    let kt = gt.solve_lower_triangular(&y.transpose()).ok_or(Error::NotPositiveDefinite)?;
    let (theta, w) = sym_eigen(&kt.transpose());
    let mut v = g.solve_upper_triangular(&w).ok_or(Error::NotPositiveDefinite)?;
    let mut lambdas = Vec::with_capacity(theta.len());
    for (j, &th) in theta.iter().enumerate() {
        if th == 0.0 || !th.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        v.column_mut(j).scale_mut(1.0 / th.abs().sqrt());
        lambdas.push(1.0 / th);
    }
    Ok((lambdas, v))
}

/// Classifies by count: the `n_plus` eigenpairs with the largest reciprocal
/// `1/λ` form the positive side.
fn order_by_signature(lambdas: Vec<f64>, v: DMatrix<f64>, sig: JSignature) -> Result<PencilEigen> {
    let k = lambdas.len();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&i, &j| (1.0 / lambdas[j]).total_cmp(&(1.0 / lambdas[i])));
    let signs: Vec<f64> = (0..k).map(|pos| sig.sign(pos)).collect();
    let mut sign_of = vec![0.0; k];
    for (pos, &i) in idx.iter().enumerate() {
        sign_of[i] = signs[pos];
    }
    order_with_signs(lambdas, sign_of, v, sig)
}

fn order_with_signs(lambdas: Vec<f64>, signs: Vec<f64>, v: DMatrix<f64>, sig: JSignature) -> Result<PencilEigen> {
    let k = lambdas.len();
    let mut plus: Vec<usize> = (0..k).filter(|&i| signs[i] > 0.0).collect();
    let mut minus: Vec<usize> = (0..k).filter(|&i| signs[i] <= 0.0).collect();
    if plus.len() != sig.n_plus || minus.len() != sig.n_minus {
        return Err(Error::NotFeasible(format!(
            "inertia ({}, {}) does not match signature ({}, {})",
            plus.len(),
            minus.len(),
            sig.n_plus,
            sig.n_minus
        )));
    }
    plus.sort_by(|&i, &j| lambdas[j].total_cmp(&lambdas[i]));
    minus.sort_by(|&i, &j| lambdas[j].total_cmp(&lambdas[i]));
    let mut out_v = DMatrix::zeros(v.nrows(), k);
    let mut out_l = Vec::with_capacity(k);
    for (dst, &src) in plus.iter().chain(minus.iter()).enumerate() {
        out_v.set_column(dst, &v.column(src));
        out_l.push(lambdas[src]);
    }
    Ok(PencilEigen { v: out_v, lambdas: out_l, sig })
}

/// Sum of the eigenvalues of a symmetric matrix strictly below
/// `−TOL_EIG·max(1, ‖M‖₂)`.
pub fn tr_minus(m: &DMatrix<f64>) -> f64 {
    let (minus, _) = split_trace(m);
    minus
}

/// Complementary sum: every eigenvalue not counted by `tr_minus`.
pub fn tr_plus(m: &DMatrix<f64>) -> f64 {
    let (_, plus) = split_trace(m);
    plus
}

fn split_trace(m: &DMatrix<f64>) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let vals = sym_eigenvalues(m);
    let norm = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cut = -TOL_EIG * norm.max(1.0);
    vals.iter().fold((0.0, 0.0), |(neg, pos), &v| if v < cut { (neg + v, pos) } else { (neg, pos + v) })
}

/// `X = blockdiag(P, Q)·[S; C]·Zᵀ` with `C² − S² = I`.
#[derive(Debug, Clone)]
pub struct HyperbolicCS {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub s: DVector<f64>,
    pub c: DVector<f64>,
}

impl HyperbolicCS {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let top = &self.p * DMatrix::from_diagonal(&self.s) * self.z.transpose();
        let bottom = &self.q * DMatrix::from_diagonal(&self.c) * self.z.transpose();
        crate::linalg::vcat(&top, &bottom)
    }
}

/// Hyperbolic CS decomposition of a J-feasible `X` (`XᵀJX = −I_d`, n ≥ d).
pub fn hyperbolic_cs(x: &DMatrix<f64>, sig: JSignature) -> Result<HyperbolicCS> {
    let (n, d) = (sig.n_plus, sig.n_minus);
    if x.shape() != (n + d, d) {
        return Err(crate::error::shape_err(format!("{}x{d}", n + d), format!("{}x{}", x.nrows(), x.ncols())));
    }
    if n < d {
        return Err(Error::InvalidInput(format!("hyperbolic CS needs n >= d, got n = {n}, d = {d}")));
    }
    let gram = x.transpose() * sig.apply(x);
    let defect = (gram + DMatrix::<f64>::identity(d, d)).amax();
    let scale = x.norm_squared().max(1.0);
    if defect > 1e-8 * scale {
        return Err(Error::NotFeasible(format!("|X^T J X + I| = {defect:e}")));
    }
    let x1 = x.rows(0, n).into_owned();
    let x2 = x.rows(n, d).into_owned();
    let (p, s, z) = thin_svd(&x1);
    let c = s.map(|si| (1.0 + si * si).sqrt());
    let q = x2 * &z * DMatrix::from_diagonal(&c.map(|ci| 1.0 / ci));
    let q_defect = orthonormality_defect(&q);
    if q_defect > 1e-6 {
        return Err(Error::NotFeasible(format!("recovered Q is not orthogonal ({q_defect:e})")));
    }
    Ok(HyperbolicCS { p, q, z, s, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, random_orthonormal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sig(n: usize, d: usize) -> JSignature {
        JSignature::new(n, d).unwrap()
    }

    #[test]
    fn identity_pencil() {
        let pe = j_pencil_eig(&DMatrix::identity(2, 2), sig(1, 1)).unwrap();
        assert!((pe.lambdas[0] - 1.0).abs() < 1e-15);
        assert!((pe.lambdas[1] + 1.0).abs() < 1e-15);
        assert!((pe.v.abs() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn diagonal_pencil() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let pe = j_pencil_eig(&m, sig(1, 1)).unwrap();
        assert!((pe.lambdas[0] - 4.0).abs() < 1e-14);
        assert!((pe.lambdas[1] + 1.0).abs() < 1e-14);
        assert!((pe.v.abs() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn random_spd_pencil_matches_nonsymmetric_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let g = gaussian_matrix(&mut rng, 8, 5);
            let m = g.tr_mul(&g);
            let s = sig(3, 2);
            let pe = j_pencil_eig(&m, s).unwrap();
            let scale = m.norm();
            assert!(pe.residual(&m) <= 1e-8 * scale);
            assert!(pe.j_defect() <= 1e-8);
            assert!(pe.positive_values().iter().all(|&l| l > 0.0));
            assert!(pe.negative_values().iter().all(|&l| l < 0.0));
            // oracle: eigenvalues of the nonsymmetric product J·M
            let jm = s.apply(&m);
            let mut oracle: Vec<f64> = jm.schur().eigenvalues().expect("real spectrum").iter().copied().collect();
            oracle.sort_by(|a, b| b.total_cmp(a));
            let mut got = pe.lambdas.clone();
            got.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in got.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn not_positive_definite_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(j_pencil_eig(&m, sig(1, 1)).unwrap_err(), Error::NotPositiveDefinite);
    }

    #[test]
    fn factored_pencil_deflates_null_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // 3 rows, 5 columns: a two-dimensional null space
        let t = gaussian_matrix(&mut rng, 3, 5);
        let s = sig(4, 1);
        let pe = j_pencil_eig_factored(&t, s, 1e-12).unwrap();
        let m = t.tr_mul(&t);
        assert!(pe.residual(&m) <= 1e-9 * m.norm());
        assert!(pe.j_defect() <= 1e-8);
        // nonzero pencil eigenvalues equal the spectrum of T J Tᵀ
        let mut nz: Vec<f64> = pe.lambdas.iter().copied().filter(|l| l.abs() > 1e-9).collect();
        nz.sort_by(f64::total_cmp);
        let direct = sym_eigenvalues(&(&t * s.apply(&t.transpose())));
        for (a, b) in nz.iter().zip(direct.iter()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn factored_pencil_detects_degenerate_null_vector() {
        // [A, r] = [1, 1]: null vector (1, −1) is J-neutral
        let t = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(j_pencil_eig_factored(&t, sig(1, 1), 1e-12).unwrap_err(), Error::NotPositiveDefinite);
    }

    #[test]
    fn tr_minus_examples() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0]));
        assert_eq!(tr_minus(&m), -2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian_matrix(&mut rng, 5, 3);
        assert_eq!(tr_minus(&a.tr_mul(&a)), 0.0);
    }

    #[test]
    fn tr_minus_matches_full_spectrum_and_splits_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let g = gaussian_matrix(&mut rng, 7, 7);
            let m = &g + g.transpose();
            let eig = nalgebra::SymmetricEigen::new(m.clone());
            let oracle: f64 = eig.eigenvalues.iter().filter(|&&v| v < 0.0).sum();
            assert!((tr_minus(&m) - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
            let tr = m.trace();
            assert!((tr_minus(&m) + tr_plus(&m) - tr).abs() <= 1e-12 * m.norm());
        }
    }

    #[test]
    fn hyperbolic_cs_scalar_example() {
        let s = 2.0f64;
        let x = DMatrix::from_column_slice(2, 1, &[s, -(1.0 + s * s).sqrt()]);
        let h = hyperbolic_cs(&x, sig(1, 1)).unwrap();
        assert!((h.s[0] - 2.0).abs() < 1e-14);
        assert!((h.c[0] - 5f64.sqrt()).abs() < 1e-14);
        // sign is shared between P and Z; Q carries the negative sign relative to Z
        assert!((h.p[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((h.z[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((h.q[(0, 0)] * h.z[(0, 0)] + 1.0).abs() < 1e-14);
        assert!((h.reconstruct() - &x).amax() < 1e-14);
    }

    #[test]
    fn hyperbolic_cs_zero_hyperbolic_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q0 = random_orthonormal(&mut rng, 2, 2);
        let x = crate::linalg::vcat(&DMatrix::zeros(3, 2), &q0);
        let h = hyperbolic_cs(&x, sig(3, 2)).unwrap();
        assert!(h.s.amax() < 1e-14);
        assert!((h.c.add_scalar(-1.0)).amax() < 1e-14);
        assert!((&h.q * h.z.transpose() - q0).amax() < 1e-13);
    }

    #[test]
    fn hyperbolic_cs_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let d = rng.random_range(1..=3);
            let n = rng.random_range(d..=8);
            let p = random_orthonormal(&mut rng, n, d);
            let q = random_orthonormal(&mut rng, d, d);
            let z = random_orthonormal(&mut rng, d, d);
            let s = DVector::from_fn(d, |_, _| rng.random_range(0.0..3.0));
            let c = s.map(|v| (1.0f64 + v * v).sqrt());
            let x = HyperbolicCS { p, q, z, s, c }.reconstruct();
            let h = hyperbolic_cs(&x, sig(n, d)).unwrap();
            assert!((h.reconstruct() - &x).amax() <= 1e-10 * x.amax().max(1.0));
            assert!(orthonormality_defect(&h.q) <= 1e-10);
            assert!(orthonormality_defect(&h.p) <= 1e-12);
        }
    }

    #[test]
    fn hyperbolic_cs_rejects_infeasible_input() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(hyperbolic_cs(&x, sig(1, 1)), Err(Error::NotFeasible(_))));
        let x = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(hyperbolic_cs(&x, sig(1, 2)), Err(Error::InvalidInput(_))));
    }
}
