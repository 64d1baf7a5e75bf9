//! LSMR with an estimation hook that records backward-error estimates and
//! bounds along the iteration.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::estimates::{
    generous_basis, lb_direction, lb_evaluate, lb_recycled, lb_refine, sketched_kw, ub_deflation, ub_generous,
    KWFactorization, RecycledDirection,
};
use crate::exact::{mu_sigma_min, SecularEquation, SECULAR_TOL};
use crate::linalg::{gaussian_vector, thin_svd};
use crate::operator::{CountingOperator, LinearOperator, Matrix};
use crate::problem::{weight_residual_vector, Theta};
use crate::sketch::SketchOperator;

pub const POWER_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub atol: f64,
    pub max_iters: usize,
    pub estimate_every: usize,
    /// Relative to `‖A‖₂`.
    pub recycle_threshold: f64,
    pub refine_steps: usize,
    pub compute_true_mu: bool,
    pub theta: Theta,
    pub mu_est: f64,
    /// Supplied `‖A‖₂`; estimated by power iteration when absent.
    pub norm_a2: Option<f64>,
    pub seed: u64,
    /// Stop once `ub_generous ≤ tol·‖A‖₂`.
    pub backward_error_stop: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            atol: 1e-12,
            max_iters: 10_000,
            estimate_every: 1,
            recycle_threshold: 1e-12,
            refine_steps: 1,
            compute_true_mu: false,
            theta: Theta::Infinite,
            mu_est: 0.0,
            norm_a2: None,
            seed: 0,
            backward_error_stop: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0) {
            return Err(Error::InvalidInput(format!("atol must be positive, got {}", self.atol)));
        }
        if self.estimate_every == 0 {
            return Err(Error::InvalidInput("estimate_every must be at least 1".into()));
        }
        if !(self.mu_est >= 0.0) {
            return Err(Error::InvalidInput("mu_est must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    EstimatorStop,
    MaxIters,
    Breakdown,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::EstimatorStop => "estimator",
            StopReason::MaxIters => "max-iters",
            StopReason::Breakdown => "breakdown",
        }
    }
}

/// One traced iteration. Estimate fields are absent when they were not
/// computed (e.g. at `x = 0` with `θ = ∞`, or refinement switched off).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub norm_r: f64,
    pub norm_atr: f64,
    pub norm_r_theta: Option<f64>,
    pub nu_sketched: Option<f64>,
    pub lb_fresh: Option<f64>,
    pub lb_refined: Option<f64>,
    pub lb_recycled: Option<f64>,
    pub ub_deflation: Option<f64>,
    pub ub_generous: Option<f64>,
    pub mu_true: Option<f64>,
    pub matvec_count: usize,
    pub rmatvec_count: usize,
}

impl TraceRow {
    pub const COLUMNS: [&'static str; 13] = [
        "iter",
        "norm_r",
        "norm_Atr",
        "norm_r_theta",
        "nu_sketched",
        "lb_fresh",
        "lb_refined",
        "lb_recycled",
        "ub_deflation",
        "ub_generous",
        "mu_true",
        "matvec_count",
        "rmatvec_count",
    ];

    pub fn lower_bounds(&self) -> [Option<f64>; 3] {
        [self.lb_fresh, self.lb_refined, self.lb_recycled]
    }

    pub fn upper_bounds(&self) -> [Option<f64>; 2] {
        [self.ub_deflation, self.ub_generous]
    }
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
    pub norm_a2: f64,
    pub norm_a_fro: f64,
    /// Whether `‖A‖_F` came from the stored entries rather than LSMR.
    pub norm_a_fro_exact: bool,
}

#[derive(Debug, Clone)]
pub struct LsmrOutput {
    pub x: DVector<f64>,
    pub trace: SolverTrace,
    pub stop_reason: StopReason,
    pub iterations: usize,
    /// `(iter, ‖r‖, ‖Aᵀr‖)` from the recurrences at every iteration.
    pub history: Vec<(usize, f64, f64)>,
}

/// Exact `μ(A, r_θ)` from a cached SVD of `A`; O(mn) per evaluation.
pub struct TrueMu {
    a: DMatrix<f64>,
    u: DMatrix<f64>,
    s: DVector<f64>,
}

impl TrueMu {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let (u, s) = if m > 2 * n {
            let qr = a.clone().qr();
            let (ur, s, _) = thin_svd(&qr.r());
            (qr.q() * ur, s)
        } else {
            let (u, s, _) = thin_svd(a);
            (u, s)
        };
        Self { a: a.clone(), u, s }
    }

    pub fn mu(&self, r_theta: &DVector<f64>) -> f64 {
        if r_theta.norm() == 0.0 {
            return 0.0;
        }
        match SecularEquation::from_svd(&self.u, &self.s, r_theta).solve(SECULAR_TOL) {
            Ok((t, _)) => t.max(0.0).sqrt(),
            Err(_) => mu_sigma_min(&self.a, r_theta).mu,
        }
    }
}

/// Immutable estimator inputs: the sketched factorization and, at desk
/// scale, the exact-μ oracle.
pub struct EstimatorSet {
    pub kwf: KWFactorization,
    pub truth: Option<TrueMu>,
}

impl EstimatorSet {
    pub fn new(a: &Matrix, sketch: &SketchOperator, compute_true_mu: bool) -> Result<Self> {
        if sketch.rows < a.ncols() {
            return Err(shape_err(format!("at least {} sketch rows", a.ncols()), format!("{}", sketch.rows)));
        }
        let kwf = sketch.kw_factorization(a)?;
        let truth = if compute_true_mu { Some(TrueMu::new(&a.dense())) } else { None };
        Ok(Self { kwf, truth })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecycleDecision {
    Keep,
    Recompute,
}

/// Recompute the kept direction once its bound falls below
/// `recycle_threshold·‖A‖₂`.
pub fn recycle_policy(lb_recycled: f64, norm_a2: f64, config: &SolverConfig) -> RecycleDecision {
    if lb_recycled < config.recycle_threshold * norm_a2 || !lb_recycled.is_finite() {
        RecycleDecision::Recompute
    } else {
        RecycleDecision::Keep
    }
}

/// `‖A‖₂` by power iteration on `AᵀA` from a seeded start.
pub fn power_norm(a: &dyn LinearOperator, steps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = gaussian_vector(&mut rng, a.ncols());
    let mut est = 0.0;
    for _ in 0..steps {
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        v /= nv;
        let av = a.apply(&v);
        est = av.norm();
        v = a.apply_transpose(&av);
    }
    est
}

/// Experiment right-hand side `b = Ax + 10⁻⁴‖A‖₂w` with
/// `x ~ N(0, n⁻¹I)` and `w ~ N(0, m⁻¹I)` drawn from `seed`.
pub fn experiment_rhs(a: &dyn LinearOperator, norm_a2: f64, seed: u64) -> (DVector<f64>, DVector<f64>) {
    let (m, n) = (a.nrows(), a.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let x = gaussian_vector(&mut rng, n) / (n as f64).sqrt();
    let w = gaussian_vector(&mut rng, m) / (m as f64).sqrt();
    let b = a.apply(&x) + w * (1e-4 * norm_a2);
    (x, b)
}

fn sym_ortho(a: f64, b: f64) -> (f64, f64, f64) {
    let sign = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
    if b == 0.0 {
        (sign(a), 0.0, a.abs())
    } else if a == 0.0 {
        (0.0, sign(b), b.abs())
    } else if b.abs() > a.abs() {
        let tau = a / b;
        let s = sign(b) / (1.0 + tau * tau).sqrt();
        (s * tau, s, b / s)
    } else {
        let tau = b / a;
        let c = sign(a) / (1.0 + tau * tau).sqrt();
        (c, c * tau, a / c)
    }
}

struct Hook<'a> {
    est: &'a EstimatorSet,
    recycled: Option<RecycledDirection>,
}

fn ok_or_none(v: Result<f64>) -> Option<f64> {
    v.ok()
}

impl Hook<'_> {
    /// Fills the estimate fields of `row` for the iterate `x`.
    fn estimate(
        &mut self,
        row: &mut TraceRow,
        a: &CountingOperator<'_>,
        b: &DVector<f64>,
        x: &DVector<f64>,
        cfg: &SolverConfig,
        norm_a2: f64,
    ) -> Result<()> {
        let xn = x.norm();
        if cfg.theta == Theta::Infinite && xn == 0.0 {
            return Ok(());
        }
        let r = b - a.apply(x);
        let rt = weight_residual_vector(&r, xn, cfg.theta)?;
        let rho = rt.norm();
        row.norm_r_theta = Some(rho);
        if let Some(t) = &self.est.truth {
            row.mu_true = Some(t.mu(&rt));
        }
        let atr = a.apply_transpose(&rt);
        let kwf = &self.est.kwf;
        row.nu_sketched = ok_or_none(sketched_kw(kwf, &atr, rho));
        let (mut p, mu_est) = match lb_direction(kwf, &atr, rho, cfg.mu_est) {
            Ok(p) => (p, cfg.mu_est),
            Err(Error::ShiftNotPD { .. }) => (lb_direction(kwf, &atr, rho, 0.0)?, 0.0),
            Err(e) => return Err(e),
        };
        let fresh = RecycledDirection::new(&p, a, row.iter, mu_est);
        row.lb_fresh = Some(lb_evaluate(&fresh.ap, &rt).unwrap_or(0.0));
        let mut best = fresh;
        if cfg.refine_steps > 0 {
            for _ in 0..cfg.refine_steps {
                p = lb_refine(&p, kwf, a, &rt, rho, mu_est)?;
            }
            best = RecycledDirection::new(&p, a, row.iter, mu_est);
            row.lb_refined = Some(lb_evaluate(&best.ap, &rt).unwrap_or(0.0));
        }
        let best_lb = row.lb_refined.or(row.lb_fresh).unwrap_or(0.0);
        let kept = match self.recycled.as_ref() {
            Some(dir) => {
                let v = lb_recycled(dir, &rt).unwrap_or(0.0);
                match recycle_policy(v, norm_a2, cfg) {
                    RecycleDecision::Keep => Some(v),
                    RecycleDecision::Recompute => None,
                }
            }
            None => None,
        };
        row.lb_recycled = Some(match kept {
            Some(v) => v,
            None => {
                self.recycled = Some(best.clone());
                best_lb
            }
        });
        let ap_tilde = &best.ap * p.norm();
        let u = &ap_tilde - &rt;
        let at_u = a.apply_transpose(&u);
        row.ub_deflation = ub_deflation(&ap_tilde, &rt, &at_u).ok();
        let basis = generous_basis(&rt, &best.ap);
        let mut ut_a = DMatrix::zeros(basis.ncols(), x.len());
        for j in 0..basis.ncols() {
            ut_a.set_row(j, &a.apply_transpose(&basis.column(j).into_owned()).transpose());
        }
        row.ub_generous = Some(ub_generous(&ut_a, &basis.tr_mul(&rt)));
        Ok(())
    }
}

/// Runs LSMR on `min ‖Ax − b‖` from `x₀ = 0`, stopping when
/// `‖Aᵀr‖ ≤ atol·‖A‖_F·‖r‖`.
pub fn lsmr(a: &dyn LinearOperator, b: &DVector<f64>, config: &SolverConfig, hooks: Option<&EstimatorSet>) -> Result<LsmrOutput> {
    config.validate()?;
    let (m, n) = (a.nrows(), a.ncols());
    if b.len() != m {
        return Err(shape_err(format!("{m}"), format!("{}", b.len())));
    }
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("right-hand side is not finite".into()));
    }
    let op = CountingOperator::new(a);
    let norm_a2 = match config.norm_a2 {
        Some(v) => v,
        None => power_norm(&op, POWER_ITERATIONS, config.seed),
    };
    let exact_fro = a.frobenius_norm();
    let mut hook = hooks.map(|est| Hook { est, recycled: None });

    let mut x = DVector::zeros(n);
    let mut rows = Vec::new();
    let mut history = Vec::new();
    let mut u = b.clone();
    let beta0 = u.norm();
    let mut v = DVector::zeros(n);
    let mut alpha = 0.0;
    if beta0 > 0.0 {
        u /= beta0;
        v = op.apply_transpose(&u);
        alpha = v.norm();
    }
    if alpha > 0.0 {
        v /= alpha;
    }

    let mut zetabar = alpha * beta0;
    let mut alphabar = alpha;
    let mut rho = 1.0;
    let mut rhobar = 1.0;
    let mut cbar = 1.0;
    let mut sbar = 0.0;
    let mut h = v.clone();
    let mut hbar = DVector::zeros(n);
    let mut betadd = beta0;
    let mut betad = 0.0;
    let mut rhodold = 1.0;
    let mut tautildeold = 0.0;
    let mut thetatilde = 0.0;
    let mut zeta = 0.0;
    let mut dsum = 0.0;
    let mut norm_a2_est = alpha * alpha;
    let mut normr = beta0;
    let mut normar = alpha * beta0;

    let fro = |est: f64| exact_fro.unwrap_or(est);
    let emit = |itn: usize, x: &DVector<f64>, normr: f64, normar: f64, hook: &mut Option<Hook<'_>>| -> Result<TraceRow> {
        let mut row = TraceRow {
            iter: itn,
            norm_r: normr,
            norm_atr: normar,
            norm_r_theta: None,
            nu_sketched: None,
            lb_fresh: None,
            lb_refined: None,
            lb_recycled: None,
            ub_deflation: None,
            ub_generous: None,
            mu_true: None,
            matvec_count: 0,
            rmatvec_count: 0,
        };
        if let Some(hk) = hook.as_mut() {
            hk.estimate(&mut row, &op, b, x, config, norm_a2)?;
        }
        row.matvec_count = op.matvecs();
        row.rmatvec_count = op.rmatvecs();
        Ok(row)
    };

    history.push((0, normr, normar));
    rows.push(emit(0, &x, normr, normar, &mut hook)?);
    let finish = |x: DVector<f64>, rows, history, stop_reason, iterations, norm_a2_est: f64| LsmrOutput {
        x,
        trace: SolverTrace { rows, norm_a2, norm_a_fro: fro(norm_a2_est.sqrt()), norm_a_fro_exact: exact_fro.is_some() },
        stop_reason,
        iterations,
        history,
    };
    if normar == 0.0 {
        return Ok(finish(x, rows, history, StopReason::Converged, 0, norm_a2_est));
    }

    let mut itn = 0;
    let mut stop = StopReason::MaxIters;
    while itn < config.max_iters {
        itn += 1;
        u = op.apply(&v) - &u * alpha;
        let beta = u.norm();
        if beta > 0.0 {
            u /= beta;
            v = op.apply_transpose(&u) - &v * beta;
            alpha = v.norm();
            if alpha > 0.0 {
                v /= alpha;
            }
        }

        let (chat, shat, alphahat) = sym_ortho(alphabar, 0.0);
        let rhoold = rho;
        let (c, s, rho_new) = sym_ortho(alphahat, beta);
        rho = rho_new;
        let thetanew = s * alpha;
        alphabar = c * alpha;

        let rhobarold = rhobar;
        let zetaold = zeta;
        let thetabar = sbar * rho;
        let (cb, sb, rb) = sym_ortho(cbar * rho, thetanew);
        cbar = cb;
        sbar = sb;
        rhobar = rb;
        zeta = cbar * zetabar;
        zetabar = -sbar * zetabar;

        hbar = &h - &hbar * (thetabar * rho / (rhoold * rhobarold));
        x += &hbar * (zeta / (rho * rhobar));
        h = &v - &h * (thetanew / rho);

        let betaacute = chat * betadd;
        let betacheck = -shat * betadd;
        let betahat = c * betaacute;
        betadd = -s * betaacute;
        let thetatildeold = thetatilde;
        let (ctildeold, stildeold, rhotildeold) = sym_ortho(rhodold, thetabar);
        thetatilde = stildeold * rhobar;
        rhodold = ctildeold * rhobar;
        betad = -stildeold * betad + ctildeold * betahat;
        tautildeold = (zetaold - thetatildeold * tautildeold) / rhotildeold;
        let taud = (zeta - thetatilde * tautildeold) / rhodold;
        dsum += betacheck * betacheck;
        normr = (dsum + (betad - taud).powi(2) + betadd * betadd).sqrt();
        norm_a2_est += beta * beta;
        norm_a2_est += alpha * alpha;
        normar = zetabar.abs();
        history.push((itn, normr, normar));

        let converged = normar <= config.atol * fro(norm_a2_est.sqrt()) * normr;
        let broke = !converged && (beta == 0.0 || alpha == 0.0);
        let last = converged || broke || itn == config.max_iters;
        if itn % config.estimate_every == 0 || last {
            let row = emit(itn, &x, normr, normar, &mut hook)?;
            let est_stop = match (config.backward_error_stop, row.ub_generous) {
                (Some(tol), Some(ub)) => ub <= tol * norm_a2,
                _ => false,
            };
            rows.push(row);
            if est_stop && !converged {
                stop = StopReason::EstimatorStop;
                break;
            }
        }
        if converged {
            stop = StopReason::Converged;
            break;
        }
        if broke {
            stop = StopReason::Breakdown;
            break;
        }
    }
    Ok(finish(x, rows, history, stop, itn, norm_a2_est))
}
