//! Cheap estimates and bounds for `μ(A, r_θ)`: the Karlson-Waldén estimate
//! (exact and sketched), the rank-one closed form, the sketched lower-bound
//! pipeline and two upper bounds.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};
use crate::exact::{as_column, mu_sigma_min};
use crate::linalg::{orthogonal_complement, qr_r, thin_svd};
use crate::operator::LinearOperator;
use crate::problem::compress_pair;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KWSource {
    ExactA,
    SketchedSA,
}

/// Spectral data of `A` or `SA` behind `(AᵀA + s I)⁻¹`.
#[derive(Debug, Clone)]
pub struct KWFactorization {
    /// Length n, nonincreasing; padded with zeros when the matrix is wide.
    pub singular_values: DVector<f64>,
    /// n×n orthogonal.
    pub right_vectors: DMatrix<f64>,
    pub source: KWSource,
}

impl KWFactorization {
    pub fn new(mat: &DMatrix<f64>, source: KWSource) -> Self {
        let n = mat.ncols();
        // tall inputs go through a triangular factor first
        let small = if mat.nrows() > 2 * n { qr_r(mat) } else { mat.clone() };
        let (_, s, v) = thin_svd(&small);
        let mut sv = DVector::zeros(n);
        sv.rows_mut(0, s.len()).copy_from(&s);
        let right = if v.ncols() < n {
            let comp = orthogonal_complement(&v);
            let mut full = DMatrix::zeros(n, n);
            full.columns_mut(0, v.ncols()).copy_from(&v);
            full.columns_mut(v.ncols(), n - v.ncols()).copy_from(&comp);
            full
        } else {
            v
        };
        Self { singular_values: sv, right_vectors: right, source }
    }

    pub fn exact(a: &DMatrix<f64>) -> Self {
        Self::new(a, KWSource::ExactA)
    }

    pub fn sketched(sa: &DMatrix<f64>) -> Self {
        Self::new(sa, KWSource::SketchedSA)
    }

    pub fn n(&self) -> usize {
        self.singular_values.len()
    }

    /// Applies `(ΣᵀΣ + shift I)^power` in the right singular basis.
    fn shifted_apply(&self, y: &DVector<f64>, shift: f64, power: f64) -> Result<DVector<f64>> {
        if y.len() != self.n() {
            return Err(shape_err(format!("{}", self.n()), format!("{}", y.len())));
        }
        let smin = self.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
        if smin * smin + shift <= 0.0 {
            return Err(Error::ShiftNotPD { shift });
        }
        let mut c = self.right_vectors.tr_mul(y);
        for j in 0..c.len() {
            let s = self.singular_values[j];
            c[j] *= (s * s + shift).powf(power);
        }
        Ok(&self.right_vectors * c)
    }
}

/// Stable closed form `μ(a, r) = 2|aᵀr| / (‖a + r‖ + ‖a − r‖)`.
pub fn mu_rank_one(a: &DVector<f64>, r: &DVector<f64>) -> Result<f64> {
    if a.len() != r.len() {
        return Err(shape_err(format!("{}", a.len()), format!("{}", r.len())));
    }
    let den = (a + r).norm() + (a - r).norm();
    if den == 0.0 {
        return Err(Error::BothZero);
    }
    Ok(2.0 * a.dot(r).abs() / den)
}

/// Karlson-Waldén estimate `ν = ‖(AᵀA + ‖r‖²I)^{-1/2}Aᵀr‖`.
pub fn kw(a: &DMatrix<f64>, r_theta: &DVector<f64>) -> f64 {
    let rho = r_theta.norm();
    let pair = compress_pair(a, &as_column(r_theta));
    let t = pair.tr.column(0).into_owned();
    let (u, s, _) = thin_svd(&pair.ta);
    let mut nu2 = 0.0;
    for j in 0..s.len() {
        let g = s[j] * u.column(j).dot(&t);
        if g != 0.0 {
            nu2 += g * g / (s[j] * s[j] + rho * rho);
        }
    }
    nu2.sqrt()
}

/// Additive multi-RHS estimate over the right singular vectors of `R_θ`.
pub fn kw_multi(a: &DMatrix<f64>, r_theta: &DMatrix<f64>) -> f64 {
    if r_theta.ncols() == 0 {
        return 0.0;
    }
    let (u, s, _) = thin_svd(r_theta);
    let mut nu2 = 0.0;
    for i in 0..s.len() {
        if s[i] > 0.0 {
            let col = u.column(i) * s[i];
            nu2 += kw(a, &col).powi(2);
        }
    }
    nu2.sqrt()
}

/// `ν̃ = ‖((SA)ᵀ(SA) + ‖r‖²I)^{-1/2}Aᵀr‖` from the retained factorization.
pub fn sketched_kw(kwf: &KWFactorization, at_r: &DVector<f64>, norm_r: f64) -> Result<f64> {
    if at_r.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    if norm_r == 0.0 && kwf.singular_values.iter().any(|s| *s == 0.0) {
        return Err(Error::ShiftNotPD { shift: 0.0 });
    }
    let c = kwf.right_vectors.tr_mul(at_r);
    let mut nu2 = 0.0;
    for j in 0..c.len() {
        let s = kwf.singular_values[j];
        nu2 += c[j] * c[j] / (s * s + norm_r * norm_r);
    }
    Ok(nu2.sqrt())
}

/// Unnormalized direction `p̃ = ((SA)ᵀ(SA) + (‖r‖² − μ_est²)I)⁻¹Aᵀr`.
pub fn lb_direction(kwf: &KWFactorization, at_r: &DVector<f64>, norm_r: f64, mu_est: f64) -> Result<DVector<f64>> {
    kwf.shifted_apply(at_r, norm_r * norm_r - mu_est * mu_est, -1.0)
}

/// One step of iterative refinement against the true `A`.
///
/// Costs one product with `A` and one with `Aᵀ`.
pub fn lb_refine(
    p_tilde: &DVector<f64>,
    kwf: &KWFactorization,
    a: &dyn LinearOperator,
    r_theta: &DVector<f64>,
    norm_r: f64,
    mu_est: f64,
) -> Result<DVector<f64>> {
    let shift = norm_r * norm_r - mu_est * mu_est;
    let ap = a.apply(p_tilde);
    let resid = a.apply_transpose(&(r_theta - ap)) - p_tilde * shift;
    Ok(p_tilde + kwf.shifted_apply(&resid, shift, -1.0)?)
}

/// Lower bound `μ(Ap, r_θ)` for a unit vector `p`.
pub fn lb_evaluate(ap: &DVector<f64>, r_theta: &DVector<f64>) -> Result<f64> {
    mu_rank_one(ap, r_theta)
}

/// A unit direction kept across solver iterations together with `A·p`.
#[derive(Debug, Clone)]
pub struct RecycledDirection {
    pub p: DVector<f64>,
    pub ap: DVector<f64>,
    pub born_at: usize,
    pub mu_est_used: f64,
}

impl RecycledDirection {
    /// Normalizes `p_tilde` once and forms `A·p` with a single product.
    /// A zero direction stays zero.
    pub fn new(p_tilde: &DVector<f64>, a: &dyn LinearOperator, born_at: usize, mu_est_used: f64) -> Self {
        let nrm = p_tilde.norm();
        let p = if nrm > 0.0 { p_tilde / nrm } else { p_tilde.clone() };
        let ap = a.apply(&p);
        Self { p, ap, born_at, mu_est_used }
    }
}

/// Recycled lower bound; needs no product with `A`.
pub fn lb_recycled(dir: &RecycledDirection, r_theta: &DVector<f64>) -> Result<f64> {
    mu_rank_one(&dir.ap, r_theta)
}

/// Deflation bound with `ũ = Ap̃ − r_θ` and `At_u = Aᵀũ`:
/// `(‖Aᵀũ‖²/‖ũ‖² + ‖(I − ũũ†)r_θ‖²)^{1/2}`.
pub fn ub_deflation(ap_tilde: &DVector<f64>, r_theta: &DVector<f64>, at_u: &DVector<f64>) -> Result<f64> {
    let u = ap_tilde - r_theta;
    let nu2 = u.norm_squared();
    if nu2 == 0.0 {
        return Err(Error::ZeroDeflator);
    }
    let perp = r_theta - &u * (u.dot(r_theta) / nu2);
    Ok((at_u.norm_squared() / nu2 + perp.norm_squared()).sqrt())
}

/// Orthonormal basis of `span{r_θ, v}`, `r_θ` first; one or two columns.
pub fn generous_basis(r_theta: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let rho = r_theta.norm();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    if rho > 0.0 {
        cols.push(r_theta / rho);
    }
    let mut w = v.clone();
    for _ in 0..2 {
        for c in &cols {
            w -= c * c.dot(&w);
        }
    }
    let wn = w.norm();
    if wn > 1e-12 * v.norm().max(rho) && wn > 0.0 {
        cols.push(w / wn);
    }
    if cols.is_empty() {
        return DMatrix::zeros(r_theta.len(), 0);
    }
    DMatrix::from_columns(&cols)
}

/// `μ(UᵀA, Uᵀr_θ)` for an orthonormal `U` whose range contains `r_θ`.
pub fn ub_generous(ut_a: &DMatrix<f64>, ut_r: &DVector<f64>) -> f64 {
    mu_sigma_min(ut_a, ut_r).mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{mu_exact_vec, mu_fixed_point, SECULAR_TOL};
    use crate::linalg::{gaussian_matrix, gaussian_vector, random_orthonormal, relative_diff};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn rank_one_examples() {
        assert_eq!(mu_rank_one(&v(&[1.0]), &v(&[1.0])).unwrap(), 1.0);
        assert_eq!(mu_rank_one(&v(&[1.0, 0.0]), &v(&[0.0, 3.0])).unwrap(), 0.0);
        let g = mu_rank_one(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((g - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!((mu_exact_vec(&a, &v(&[1.0, 1.0])).mu - g).abs() < 1e-12);
        assert!(matches!(mu_rank_one(&v(&[0.0]), &v(&[0.0])), Err(Error::BothZero)));
    }

    #[test]
    fn kw_examples_and_sandwich() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let nu = kw(&one, &v(&[1.0]));
        assert!((nu - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(kw(&DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), &v(&[0.0, 1.0])), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let a = gaussian_matrix(&mut rng, 15, 4);
            let r = gaussian_vector(&mut rng, 15);
            let ratio = mu_exact_vec(&a, &r).mu / kw(&a, &r);
            assert!(ratio >= 1.0 - 1e-10 && ratio <= 2f64.sqrt() + 1e-10, "{ratio}");
        }
    }

    #[test]
    fn kw_multi_reduces_and_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = gaussian_matrix(&mut rng, 12, 3);
        let r = gaussian_vector(&mut rng, 12);
        assert!(relative_diff(kw_multi(&a, &as_column(&r)), kw(&a, &r)) < 1e-14);
        let rr = gaussian_matrix(&mut rng, 12, 2);
        let g = random_orthonormal(&mut rng, 2, 2);
        assert!(relative_diff(kw_multi(&a, &rr), kw_multi(&a, &(&rr * g))) < 1e-10);
        let mut with_zero = DMatrix::zeros(12, 2);
        with_zero.set_column(0, &r);
        assert!(relative_diff(kw_multi(&a, &with_zero), kw(&a, &r)) < 1e-12);
    }

    #[test]
    fn identity_sketch_matches_kw() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = gaussian_matrix(&mut rng, 30, 6);
        let r = gaussian_vector(&mut rng, 30);
        let kwf = KWFactorization::exact(&a);
        let nt = sketched_kw(&kwf, &a.tr_mul(&r), r.norm()).unwrap();
        assert!(relative_diff(nt, kw(&a, &r)) < 1e-12);
        assert_eq!(sketched_kw(&kwf, &DVector::zeros(6), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn wide_factorization_is_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let kwf = KWFactorization::exact(&gaussian_matrix(&mut rng, 3, 7));
        assert_eq!(kwf.right_vectors.shape(), (7, 7));
        assert!(crate::linalg::orthonormality_defect(&kwf.right_vectors) < 1e-12);
        assert_eq!(kwf.singular_values[6], 0.0);
    }

    #[test]
    fn optimal_direction_attains_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..30 {
            let a = gaussian_matrix(&mut rng, 20, 5);
            let r = gaussian_vector(&mut rng, 20);
            let mu = mu_fixed_point(&a, &r, SECULAR_TOL).unwrap().mu;
            let kwf = KWFactorization::exact(&a);
            let atr = a.tr_mul(&r);
            let p = lb_direction(&kwf, &atr, r.norm(), mu).unwrap();
            let dir = RecycledDirection::new(&p, &a, 0, mu);
            assert!(relative_diff(lb_evaluate(&dir.ap, &r).unwrap(), mu) < 1e-8);
            // the estimate direction is also sound and at least ν-quality
            let p0 = lb_direction(&kwf, &atr, r.norm(), 0.0).unwrap();
            let lb0 = lb_evaluate(&RecycledDirection::new(&p0, &a, 0, 0.0).ap, &r).unwrap();
            assert!(lb0 <= mu * (1.0 + 1e-12));
            assert!(lb0 >= kw(&a, &r) * (1.0 - 1e-10));
        }
    }

    #[test]
    fn shift_must_be_positive_definite() {
        let kwf = KWFactorization::exact(&DMatrix::from_element(2, 1, 1.0));
        let err = lb_direction(&kwf, &v(&[1.0]), 1.0, 2.0).unwrap_err();
        assert!(matches!(err, Error::ShiftNotPD { .. }));
    }

    #[test]
    fn refinement_fixed_point_with_exact_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = gaussian_matrix(&mut rng, 25, 4);
        let r = gaussian_vector(&mut rng, 25);
        let kwf = KWFactorization::exact(&a);
        let p = lb_direction(&kwf, &a.tr_mul(&r), r.norm(), 0.0).unwrap();
        let q = lb_refine(&p, &kwf, &a, &r, r.norm(), 0.0).unwrap();
        assert!((&q - &p).norm() <= 1e-12 * p.norm());
    }

    #[test]
    fn random_directions_are_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let a = gaussian_matrix(&mut rng, 20, 5);
        let r = gaussian_vector(&mut rng, 20);
        let mu = mu_exact_vec(&a, &r).mu;
        for _ in 0..1000 {
            let p = gaussian_vector(&mut rng, 5);
            let dir = RecycledDirection::new(&p, &a, 0, 0.0);
            assert!((dir.p.norm() - 1.0).abs() < 1e-12);
            let lb = lb_evaluate(&dir.ap, &r).unwrap();
            assert!(lb <= mu + 1e-12);
            assert_eq!(lb.to_bits(), lb_recycled(&dir, &r).unwrap().to_bits());
            let p_tilde = &p * 0.7;
            let ap = &a * &p_tilde;
            let ub = ub_deflation(&ap, &r, &a.tr_mul(&(&ap - &r))).unwrap();
            assert!(ub >= mu * (1.0 - 1e-12));
            let u = generous_basis(&r, &ap);
            let gen = ub_generous(&(u.transpose() * &a), &u.tr_mul(&r));
            assert!(gen >= mu * (1.0 - 1e-10), "{gen} vs {mu}");
            assert!(gen <= ub * (1.0 + 1e-10) + 1e-12);
        }
    }

    #[test]
    fn deflation_bound_exact_on_negative_eigenvector() {
        // 2×1 toy: the negative eigenvector of aaᵀ − rrᵀ gives μ exactly
        let a = v(&[2.0, 0.5]);
        let r = v(&[0.3, 1.0]);
        let am = as_column(&a);
        let mu = mu_exact_vec(&am, &r).mu;
        let m = &a * a.transpose() - &r * r.transpose();
        let (vals, vecs) = crate::linalg::sym_eigen(&m);
        assert!(vals[0] < 0.0);
        let u = vecs.column(0).into_owned();
        // ub_deflation only depends on the direction of ũ = Ap̃ − r
        let ap_tilde = &r + &u;
        let ub = ub_deflation(&ap_tilde, &r, &am.tr_mul(&u)).unwrap();
        assert!(relative_diff(ub, mu) < 1e-12);
        let basis = generous_basis(&r, &u);
        assert!(relative_diff(ub_generous(&(basis.transpose() * &am), &basis.tr_mul(&r)), mu) < 1e-8);
        assert!(matches!(ub_deflation(&r, &r, &v(&[0.0])), Err(Error::ZeroDeflator)));
    }

    #[test]
    fn generous_bound_with_rank_one_basis() {
        let a = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let r = v(&[1.0, 1.0, 1.0]);
        let basis = generous_basis(&r, &(&r * 2.0));
        assert_eq!(basis.ncols(), 1);
        let gen = ub_generous(&(basis.transpose() * &a), &basis.tr_mul(&r));
        assert!(gen >= mu_exact_vec(&a, &r).mu - 1e-12);
    }
}
