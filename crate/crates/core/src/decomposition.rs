//! The backward error as a sum of rank-one problems:
//! `μ²(A, R) = max_{P, Q} Σᵢ μ²(Ap_i, Rq_i)` over orthonormal `P`, `Q`.
//! Includes the constructive maximizer and a brute-force oracle for tiny
//! instances.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimates::mu_rank_one;
use crate::exact::REG_FACTOR;
use crate::linalg::{orthonormality_defect, random_orthonormal, vcat};
use crate::pencil::{hyperbolic_cs, j_pencil_eig_factored, JSignature};
use crate::problem::{compress_pair, TOL_RANK};

/// Orthonormality tolerance accepted by [`decomposition_sum`].
pub const ORTHO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    AsGiven,
    /// `d > n`: the roles of `A` and `R_θ` were exchanged internally.
    Swapped,
}

#[derive(Debug, Clone)]
pub struct DecompositionWitness {
    /// n×k
    pub p: DMatrix<f64>,
    /// d×k
    pub q: DMatrix<f64>,
    pub summands: Vec<f64>,
    pub total: f64,
    pub orientation: Orientation,
    pub regularization_eps: f64,
}

impl DecompositionWitness {
    pub fn k(&self) -> usize {
        self.summands.len()
    }
}

fn summand(a: &DMatrix<f64>, r: &DMatrix<f64>, p: &DVector<f64>, q: &DVector<f64>) -> f64 {
    match mu_rank_one(&(a * p), &(r * q)) {
        Ok(v) => v,
        Err(_) => 0.0,
    }
}

fn summands(a: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> Vec<f64> {
    (0..p.ncols())
        .map(|i| summand(a, r, &p.column(i).into_owned(), &q.column(i).into_owned()))
        .collect()
}

fn root_sum_square(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Optimal `(P, Q)` from the negative-side pencil eigenvectors of
/// `([A, R]ᵀ[A, R], J_{n,d})` and their hyperbolic CS decomposition.
pub fn optimal_pq(a: &DMatrix<f64>, r_theta: &DMatrix<f64>) -> Result<DecompositionWitness> {
    if a.nrows() != r_theta.nrows() {
        return Err(crate::error::shape_err(format!("{} rows", a.nrows()), format!("{}", r_theta.nrows())));
    }
    if r_theta.ncols() > a.ncols() {
        let w = optimal_pq_oriented(r_theta, a)?;
        return Ok(DecompositionWitness { p: w.q, q: w.p, orientation: Orientation::Swapped, ..w });
    }
    optimal_pq_oriented(a, r_theta)
}

fn optimal_pq_oriented(a: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DecompositionWitness> {
    let (n, d) = (a.ncols(), r.ncols());
    if d == 0 {
        return Ok(DecompositionWitness {
            p: DMatrix::zeros(n, 0),
            q: DMatrix::zeros(0, 0),
            summands: Vec::new(),
            total: 0.0,
            orientation: Orientation::AsGiven,
            regularization_eps: 0.0,
        });
    }
    let sig = JSignature::new(n, d)?;
    let t = compress_pair(a, r).joined();
    let base = REG_FACTOR.sqrt() * a.norm().max(r.norm()).max(f64::MIN_POSITIVE);
    let mut last_err = Error::NotPositiveDefinite;
    for eps in [0.0, base, 100.0 * base] {
        let t_eps = if eps > 0.0 { vcat(&t, &(DMatrix::<f64>::identity(n + d, n + d) * eps)) } else { t.clone() };
        let hcs = j_pencil_eig_factored(&t_eps, sig, TOL_RANK).and_then(|pe| hyperbolic_cs(&pe.negative_vectors(), sig));
        match hcs {
            Ok(h) => {
                let s = summands(a, r, &h.p, &h.q);
                return Ok(DecompositionWitness {
                    total: root_sum_square(&s),
                    summands: s,
                    p: h.p,
                    q: h.q,
                    orientation: Orientation::AsGiven,
                    regularization_eps: eps,
                });
            }
            Err(e @ (Error::NotPositiveDefinite | Error::NotFeasible(_))) => {
                log::debug!("optimal_pq: eps = {eps:e} failed: {e}");
                last_err = e;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

/// `(Σᵢ μ²(Ap_i, R_θq_i))^{1/2}` for orthonormal `P` (n×k) and `Q` (d×k).
pub fn decomposition_sum(a: &DMatrix<f64>, r_theta: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    if p.nrows() != a.ncols() || q.nrows() != r_theta.ncols() || p.ncols() != q.ncols() {
        return Err(crate::error::shape_err(
            format!("P {}xk, Q {}xk", a.ncols(), r_theta.ncols()),
            format!("P {}x{}, Q {}x{}", p.nrows(), p.ncols(), q.nrows(), q.ncols()),
        ));
    }
    let deviation = orthonormality_defect(p).max(orthonormality_defect(q));
    if deviation > ORTHO_TOL {
        return Err(Error::ColumnsNotOrthonormal { deviation });
    }
    Ok(root_sum_square(&summands(a, r_theta, p, q)))
}

pub const BRUTE_MAX_N: usize = 3;
pub const BRUTE_MAX_D: usize = 2;
const KEEP_BEST: usize = 4;
const GRID: usize = 24;

fn rotate(frame: &mut DMatrix<f64>, i: usize, j: usize, angle: f64) {
    let (c, s) = (angle.cos(), angle.sin());
    for row in 0..frame.nrows() {
        let (x, y) = (frame[(row, i)], frame[(row, j)]);
        frame[(row, i)] = c * x - s * y;
        frame[(row, j)] = s * x + c * y;
    }
}

struct Frames {
    fp: DMatrix<f64>,
    fq: DMatrix<f64>,
}

impl Frames {
    fn value(&self, a: &DMatrix<f64>, r: &DMatrix<f64>, k: usize) -> f64 {
        root_sum_square(&summands(a, r, &self.fp.columns(0, k).into_owned(), &self.fq.columns(0, k).into_owned()))
    }
}

/// Maximizes `φ(α)` on a circle: coarse grid, then golden section.
fn line_search(phi: impl Fn(f64) -> f64) -> f64 {
    let h = 2.0 * std::f64::consts::PI / GRID as f64;
    let best = (0..GRID).map(|i| i as f64 * h).max_by(|x, y| phi(*x).total_cmp(&phi(*y))).unwrap_or(0.0);
    let (mut lo, mut hi) = (best - h, best + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    for _ in 0..60 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = phi(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = phi(x1);
        }
    }
    let mid = 0.5 * (lo + hi);
    if phi(mid) >= phi(best) {
        mid
    } else {
        best
    }
}

fn polish(frames: &mut Frames, a: &DMatrix<f64>, r: &DMatrix<f64>, k: usize) {
    for which in 0..2 {
        let dim = if which == 0 { frames.fp.ncols() } else { frames.fq.ncols() };
        for i in 0..dim {
            for j in (i + 1)..dim {
                if i >= k {
                    continue;
                }
                let angle = line_search(|t| {
                    let mut trial = Frames { fp: frames.fp.clone(), fq: frames.fq.clone() };
                    rotate(if which == 0 { &mut trial.fp } else { &mut trial.fq }, i, j, t);
                    trial.value(a, r, k)
                });
                let target = if which == 0 { &mut frames.fp } else { &mut frames.fq };
                rotate(target, i, j, angle);
            }
        }
    }
}

/// Random orthonormal restarts followed by Givens-rotation coordinate
/// polish. Trial `t` draws its frames from ChaCha stream `(seed, t)`.
pub fn brute_force_max(
    a: &DMatrix<f64>,
    r_theta: &DMatrix<f64>,
    trials: usize,
    polish_steps: usize,
    seed: u64,
) -> Result<DecompositionWitness> {
    let (n, d) = (a.ncols(), r_theta.ncols());
    if n > BRUTE_MAX_N || d > BRUTE_MAX_D {
        return Err(Error::SizeGuard { n, d });
    }
    let k = n.min(d);
    let mut pool: Vec<(f64, Frames)> = Vec::new();
    for t in 0..trials.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let frames = Frames { fp: random_orthonormal(&mut rng, n, n), fq: random_orthonormal(&mut rng, d, d) };
        let v = frames.value(a, r_theta, k);
        pool.push((v, frames));
        pool.sort_by(|x, y| y.0.total_cmp(&x.0));
        pool.truncate(KEEP_BEST);
    }
    let mut best: Option<(f64, Frames)> = None;
    for (_, mut frames) in pool {
        for _ in 0..polish_steps {
            polish(&mut frames, a, r_theta, k);
        }
        let v = frames.value(a, r_theta, k);
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, frames));
        }
    }
    let (_, frames) = best.expect("at least one trial");
    let p = frames.fp.columns(0, k).into_owned();
    let q = frames.fq.columns(0, k).into_owned();
    let s = summands(a, r_theta, &p, &q);
    Ok(DecompositionWitness { total: root_sum_square(&s), summands: s, p, q, orientation: Orientation::AsGiven, regularization_eps: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::mu_exact;
    use crate::linalg::{gaussian_matrix, relative_diff};
    use rand::Rng;

    #[test]
    fn scalar_case_needs_regularization() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let w = optimal_pq(&one, &one).unwrap();
        assert!(w.regularization_eps > 0.0);
        assert!((w.total - 1.0).abs() < 1e-6);
        assert!((w.p[(0, 0)].abs() - 1.0).abs() < 1e-12 && (w.q[(0, 0)].abs() - 1.0).abs() < 1e-12);
        let b = brute_force_max(&one, &one, 4, 0, 0).unwrap();
        assert!((b.total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian_matrix(&mut rng, 8, 3);
        let w = optimal_pq(&a, &DMatrix::zeros(8, 2)).unwrap();
        assert_eq!(w.total, 0.0);
        assert_eq!(w.k(), 2);
    }

    #[test]
    fn attains_mu_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..40 {
            let n = rng.random_range(1..5);
            let d = rng.random_range(1..5);
            let m = rng.random_range(n + d..n + d + 8);
            let a = gaussian_matrix(&mut rng, m, n);
            let r = gaussian_matrix(&mut rng, m, d);
            let mu = mu_exact(&a, &r).mu;
            let w = optimal_pq(&a, &r).unwrap();
            assert_eq!(w.orientation == Orientation::Swapped, d > n);
            assert_eq!((w.p.nrows(), w.q.nrows(), w.k()), (n, d, n.min(d)));
            assert!(relative_diff(w.total, mu) < 1e-7, "{m}x{n}x{d}: {} vs {mu}", w.total);
            let again = decomposition_sum(&a, &r, &w.p, &w.q).unwrap();
            assert!(relative_diff(again, w.total) < 1e-12);
            let sw = optimal_pq(&r, &a).unwrap();
            assert!(relative_diff(sw.total, w.total) < 1e-8);
        }
    }

    #[test]
    fn random_frames_are_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gaussian_matrix(&mut rng, 10, 3);
        let r = gaussian_matrix(&mut rng, 10, 2);
        let mu = mu_exact(&a, &r).mu;
        for _ in 0..1000 {
            let p = random_orthonormal(&mut rng, 3, 2);
            let q = random_orthonormal(&mut rng, 2, 2);
            assert!(decomposition_sum(&a, &r, &p, &q).unwrap() <= mu + 1e-10);
        }
        let bad = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(
            decomposition_sum(&a, &r, &bad, &DMatrix::identity(2, 2)),
            Err(Error::ColumnsNotOrthonormal { .. })
        ));
    }

    #[test]
    fn brute_force_agrees_with_constructive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = gaussian_matrix(&mut rng, 4, 2);
        let r = gaussian_matrix(&mut rng, 4, 1);
        let b = brute_force_max(&a, &r, 500, 10, 7).unwrap();
        assert!(relative_diff(b.total, mu_exact(&a, &r).mu) < 1e-4);
        let a = gaussian_matrix(&mut rng, 5, 2);
        let r = gaussian_matrix(&mut rng, 5, 2);
        let opt = optimal_pq(&a, &r).unwrap().total;
        let b = brute_force_max(&a, &r, 500, 50, 8).unwrap();
        assert!(b.total <= opt + 1e-8 && b.total >= opt - 1e-4, "{} vs {opt}", b.total);
    }

    #[test]
    fn brute_force_guard() {
        let a = DMatrix::zeros(6, 4);
        let r = DMatrix::zeros(6, 1);
        assert!(matches!(brute_force_max(&a, &r, 1, 0, 0), Err(Error::SizeGuard { n: 4, d: 1 })));
    }
}
