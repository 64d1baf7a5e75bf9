//! Small dense kernels on top of nalgebra that the backward-error routines
//! share: sorted decompositions, norms and seeded random frames.

use nalgebra::{DMatrix, DVector, SymmetricEigen, QR, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

/// Thin SVD with singular values sorted in nonincreasing order.
///
/// Returns `(U, s, V)` with `U` m×p, `V` n×p, p = min(m, n).
pub fn thin_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let p = m.min(n);
    if p == 0 {
        return (DMatrix::zeros(m, 0), DVector::zeros(0), DMatrix::zeros(n, 0));
    }
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut u_sorted = DMatrix::zeros(m, p);
    let mut v_sorted = DMatrix::zeros(n, p);
    let mut s_sorted = DVector::zeros(p);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &v_t.row(src).transpose());
        s_sorted[dst] = s[src];
    }
    (u_sorted, s_sorted, v_sorted)
}

/// Singular values only, nonincreasing.
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    if a.nrows().min(a.ncols()) == 0 {
        return DVector::zeros(0);
    }
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    DVector::from_vec(s)
}

/// Symmetric eigendecomposition with eigenvalues in nondecreasing order.
/// Only the lower triangle's symmetric part is trusted; the input is symmetrized first.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let k = m.nrows();
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut vals = DVector::zeros(k);
    let mut vecs = DMatrix::zeros(k, k);
    for (dst, &src) in order.iter().enumerate() {
        vals[dst] = eig.eigenvalues[src];
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Eigenvalues only, nondecreasing.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    DVector::from_vec(v)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).iter().copied().fold(0.0, f64::max)
}

/// Largest absolute asymmetry relative to the matrix scale.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Upper-triangular factor of a thin QR, min(m, n)×n.
pub fn qr_r(a: &DMatrix<f64>) -> DMatrix<f64> {
    QR::new(a.clone()).r()
}

/// Numerical rank with threshold `tol * s_max`.
pub fn numerical_rank(s: &DVector<f64>, tol: f64) -> usize {
    let smax = s.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > tol * smax).count()
}

/// `‖QᵀQ − I‖_max`, the deviation of a column set from orthonormality.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let k = q.ncols();
    (q.transpose() * q - DMatrix::<f64>::identity(k, k)).amax()
}

/// Orthonormal basis for the orthogonal complement of the span of the
/// orthonormal columns `v` (n×p), returned as n×(n−p).
pub fn orthogonal_complement(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let p = v.ncols();
    if p >= n {
        return DMatrix::zeros(n, 0);
    }
    let proj = DMatrix::<f64>::identity(n, n) - v * v.transpose();
    // eigenvalues of the complementary projector are 0 (×p) then 1 (×(n−p))
    let (_, vecs) = sym_eigen(&proj);
    vecs.columns(p, n - p).into_owned()
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed n×k matrix with orthonormal columns (QR of a Gaussian
/// matrix with the sign fix on the diagonal of R).
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    assert!(k <= n, "cannot draw {k} orthonormal columns in dimension {n}");
    let g = gaussian_matrix(rng, n, k);
    let qr = QR::new(g);
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Horizontal concatenation `[a, b]`.
pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Vertical concatenation `[a; b]`.
pub fn vcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

pub fn relative_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn thin_svd_reconstructs_and_sorts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, n) in &[(7, 3), (3, 7), (5, 5)] {
            let a = gaussian_matrix(&mut rng, m, n);
            let (u, s, v) = thin_svd(&a);
            let rec = &u * DMatrix::from_diagonal(&s) * v.transpose();
            assert!((rec - &a).amax() < 1e-12);
            assert!(s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_orthonormal(&mut rng, 6, 2);
        let c = orthogonal_complement(&v);
        assert_eq!(c.shape(), (6, 4));
        assert!(orthonormality_defect(&c) < 1e-12);
        assert!((v.transpose() * &c).amax() < 1e-12);
    }
}
