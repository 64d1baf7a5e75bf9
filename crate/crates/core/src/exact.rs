//! Ground-truth backward error `μ(A, R_θ)`.
//!
//! Four independent routes: the negative-trace eigenvalue formula (any d),
//! the smallest singular value of `[A, ‖r‖(I − rr†)]`, the smallest root of
//! the secular equation, and the smallest eigenvalue of the bordered pencil.
//! The last three need a single right-hand side.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{singular_values, sym_eigen, thin_svd, vcat};
use crate::pencil::{j_pencil_eig_factored, JSignature, TOL_EIG};
use crate::problem::{compress_pair, TOL_RANK};

/// Newton iteration cap for the secular equation.
pub const SECULAR_MAX_ITERS: usize = 200;

/// Default relative step tolerance for the secular solver.
pub const SECULAR_TOL: f64 = 1e-14;

/// Regularization: Gram shift `REG_FACTOR·max(‖A‖_F, ‖R_θ‖_F)²`.
pub const REG_FACTOR: f64 = 1e-10;

static CLAMP_EVENTS: AtomicUsize = AtomicUsize::new(0);

/// How many times roundoff drove `μ²` negative and it was clamped to 0.
pub fn clamp_events() -> usize {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

fn clamped_sqrt(mu2: f64) -> f64 {
    if mu2 < 0.0 {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        log::warn!("negative mu^2 = {mu2:e} clamped to zero");
        0.0
    } else {
        mu2.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MuMethod {
    Eig,
    SigmaMin,
    FixedPoint,
    Gevp,
}

impl MuMethod {
    pub const ALL: [MuMethod; 4] = [MuMethod::Eig, MuMethod::SigmaMin, MuMethod::FixedPoint, MuMethod::Gevp];

    pub fn name(self) -> &'static str {
        match self {
            MuMethod::Eig => "eig",
            MuMethod::SigmaMin => "sigma-min",
            MuMethod::FixedPoint => "fixed-point",
            MuMethod::Gevp => "gevp",
        }
    }
}

impl std::str::FromStr for MuMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MuMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuResult {
    pub mu: f64,
    pub method: MuMethod,
    /// Newton steps; only the fixed-point route iterates.
    pub iterations: usize,
    /// Magnitude of the appended identity block actually used, 0 if none.
    pub regularization_eps: f64,
}

impl MuResult {
    fn direct(mu: f64, method: MuMethod) -> Self {
        Self { mu, method, iterations: 0, regularization_eps: 0.0 }
    }
}

/// `μ² = ‖R_θ‖²_F + tr₋(AAᵀ − R_θR_θᵀ)` on the compressed pair.
///
/// With `V` spanning the negative eigenspace, `‖R‖² + tr(VᵀMV)` equals
/// `‖T_AᵀV‖² + ‖(I − VVᵀ)T_R‖²`; the second form has no cancellation
/// when `μ ≪ ‖R_θ‖` and is stationary in `V`.
pub fn mu_exact(a: &DMatrix<f64>, r_theta: &DMatrix<f64>) -> MuResult {
    let pair = compress_pair(a, r_theta);
    let m = pair.signed_outer();
    if m.is_empty() {
        return MuResult::direct(0.0, MuMethod::Eig);
    }
    let (vals, vecs) = sym_eigen(&m);
    let cut = -TOL_EIG * vals.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let neg = vals.iter().take_while(|v| **v < cut).count();
    let v = vecs.columns(0, neg);
    let resid = &pair.tr - &v * (v.transpose() * &pair.tr);
    let mu2 = (pair.ta.transpose() * v).norm_squared() + resid.norm_squared();
    MuResult::direct(mu2.sqrt(), MuMethod::Eig)
}

/// Convenience for a single right-hand side.
pub fn mu_exact_vec(a: &DMatrix<f64>, r_theta: &DVector<f64>) -> MuResult {
    mu_exact(a, &as_column(r_theta))
}

pub(crate) fn as_column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// `μ = min{‖r‖, σ_min([A, ‖r‖(I − rr†)])}` on the (n+1)×(2n+1) reduction.
pub fn mu_sigma_min(a: &DMatrix<f64>, r_theta: &DVector<f64>) -> MuResult {
    let rho = r_theta.norm();
    if rho == 0.0 {
        return MuResult::direct(0.0, MuMethod::SigmaMin);
    }
    let pair = compress_pair(a, &as_column(r_theta));
    let k = pair.k();
    let n = pair.n();
    let t = pair.tr.column(0) / pair.tr.column(0).norm();
    let proj = (DMatrix::<f64>::identity(k, k) - &t * t.transpose()) * rho;
    let mut w = DMatrix::zeros(k, n + k);
    w.columns_mut(0, n).copy_from(&pair.ta);
    w.columns_mut(n, k).copy_from(&proj);
    let s = singular_values(&w);
    let smin = s[k - 1];
    MuResult::direct(rho.min(smin), MuMethod::SigmaMin)
}

/// Spectral data of the secular function
/// `f(t) = Σ_j γ_j² / (σ_j² + ‖r‖² − t)` with `γ_j = v_jᵀAᵀr_θ`.
#[derive(Debug, Clone)]
pub struct SecularEquation {
    sigma: Vec<f64>,
    gamma: Vec<f64>,
    rho2: f64,
}

impl SecularEquation {
    /// From a thin SVD of `A` (left vectors and singular values) and `r_θ`.
    pub fn from_svd(u: &DMatrix<f64>, sigma: &DVector<f64>, r_theta: &DVector<f64>) -> Self {
        let smax = sigma.iter().copied().fold(0.0, f64::max);
        let mut s = Vec::new();
        let mut g = Vec::new();
        for j in 0..sigma.len() {
            if sigma[j] > TOL_RANK * smax {
                s.push(sigma[j]);
                g.push(sigma[j] * u.column(j).dot(r_theta));
            }
        }
        Self { sigma: s, gamma: g, rho2: r_theta.norm_squared() }
    }

    pub fn new(a: &DMatrix<f64>, r_theta: &DVector<f64>) -> Self {
        let pair = compress_pair(a, &as_column(r_theta));
        let (u, s, _) = thin_svd(&pair.ta);
        Self::from_svd(&u, &s, &pair.tr.column(0).into_owned())
    }

    /// Right-hand side `f(t)` and its derivative.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let gap = self.rho2 - t;
        let mut f = 0.0;
        let mut df = 0.0;
        for (s, g) in self.sigma.iter().zip(&self.gamma) {
            if *g == 0.0 {
                continue;
            }
            let den = s * s + gap;
            let q = g * g / den;
            f += q;
            df += q / den;
        }
        (f, df)
    }

    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    /// Smallest root `t = μ²` of `f(t) = t` in `[0, ‖r‖²]`, by Newton from
    /// `t₀ = ν²` with bisection safeguarding.
    pub fn solve(&self, tol: f64) -> Result<(f64, usize)> {
        let (f0, _) = self.eval(0.0);
        if f0 == 0.0 {
            return Ok((0.0, 0));
        }
        let mut lo = f0.min(self.rho2);
        let mut hi = self.rho2;
        let mut t = lo;
        for it in 1..=SECULAR_MAX_ITERS {
            let (f, df) = self.eval(t);
            let g = f - t;
            if g == 0.0 {
                return Ok((t, it));
            }
            if g > 0.0 {
                lo = lo.max(t);
            } else {
                hi = hi.min(t);
            }
            let slope = df - 1.0;
            let mut next = if slope < 0.0 { t - g / slope } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - t).abs();
            t = next;
            if step <= tol * t.max(f64::MIN_POSITIVE) || hi - lo <= tol * hi {
                return Ok((t, it));
            }
        }
        Err(Error::NoConvergence { iterations: SECULAR_MAX_ITERS })
    }
}

/// Smallest nonnegative solution of `μ² = r_θᵀA(AᵀA + (‖r_θ‖² − μ²)I)⁻¹Aᵀr_θ`.
pub fn mu_fixed_point(a: &DMatrix<f64>, r_theta: &DVector<f64>, tol: f64) -> Result<MuResult> {
    if r_theta.norm() == 0.0 {
        return Ok(MuResult::direct(0.0, MuMethod::FixedPoint));
    }
    let (t, iterations) = SecularEquation::new(a, r_theta).solve(tol)?;
    Ok(MuResult { mu: clamped_sqrt(t), method: MuMethod::FixedPoint, iterations, regularization_eps: 0.0 })
}

/// `μ² = λ_min([[AᵀA + ‖r‖²I, Aᵀr], [rᵀA, 0]], J_{n,1})`.
///
/// The bordered matrix equals `[A, r]ᵀ[A, r] + ‖r‖²J`, so its pencil
/// eigenvalues are those of `([A, r]ᵀ[A, r], J)` shifted by `‖r‖²`; the
/// unshifted pencil is semidefinite and goes through the factored solver.
pub fn mu_gevp(a: &DMatrix<f64>, r_theta: &DVector<f64>) -> Result<MuResult> {
    let rho = r_theta.norm();
    if rho == 0.0 {
        return Ok(MuResult::direct(0.0, MuMethod::Gevp));
    }
    let n = a.ncols();
    let sig = JSignature::new(n, 1)?;
    let t = compress_pair(a, &as_column(r_theta)).joined();
    let (lambdas, rho2, eps) = match j_pencil_eig_factored(&t, sig, TOL_RANK) {
        Ok(pe) => (pe.lambdas, rho * rho, 0.0),
        Err(Error::NotPositiveDefinite) => {
            let scale = a.norm().max(rho);
            let eps = (REG_FACTOR).sqrt() * scale;
            let t_reg = vcat(&t, &(DMatrix::<f64>::identity(n + 1, n + 1) * eps));
            let pe = j_pencil_eig_factored(&t_reg, sig, TOL_RANK)?;
            (pe.lambdas, rho * rho + eps * eps, eps)
        }
        Err(e) => return Err(e),
    };
    let bordered_min = lambdas.iter().map(|l| l + rho2).fold(f64::INFINITY, f64::min);
    Ok(MuResult { mu: clamped_sqrt(bordered_min), method: MuMethod::Gevp, iterations: 0, regularization_eps: eps })
}

/// Runs one method; the single-RHS routes reject `d > 1`.
pub fn mu_with(method: MuMethod, a: &DMatrix<f64>, r_theta: &DMatrix<f64>) -> Result<MuResult> {
    if method == MuMethod::Eig {
        return Ok(mu_exact(a, r_theta));
    }
    if r_theta.ncols() != 1 {
        return Err(Error::InvalidInput(format!("method {} needs a single right-hand side", method.name())));
    }
    let r = r_theta.column(0).into_owned();
    match method {
        MuMethod::SigmaMin => Ok(mu_sigma_min(a, &r)),
        MuMethod::FixedPoint => mu_fixed_point(a, &r, SECULAR_TOL),
        MuMethod::Gevp => mu_gevp(a, &r),
        MuMethod::Eig => unreachable!(),
    }
}

/// The three cheap upper bounds: `‖R_θ‖_F`, and for d = 1 `‖Aᵀr‖/‖r‖`.
pub fn simple_upper_bounds(a: &DMatrix<f64>, r_theta: &DVector<f64>) -> (f64, f64) {
    let rho = r_theta.norm();
    let atr = if rho > 0.0 { a.tr_mul(r_theta).norm() / rho } else { 0.0 };
    (rho, atr)
}
