//! The three subcommands as library calls; `main` only parses flags.

use std::fs;
use std::path::{Path, PathBuf};

use lsbe::estimates::{
    generous_basis, kw, lb_direction, lb_evaluate, lb_refine, sketched_kw, ub_deflation, ub_generous, RecycledDirection,
};
use lsbe::exact::{mu_with, MuMethod};
use lsbe::operator::{LinearOperator, Matrix};
use lsbe::problem::{weight_residual_vector, Theta};
use lsbe::sketch::{sketch_rows, sketch_seed, SketchOperator, DEFAULT_NNZ_PER_COL};
use lsbe::solver::{experiment_rhs, lsmr, power_norm, EstimatorSet, SolverConfig, StopReason, POWER_ITERATIONS};
use lsbe::verify::{run_all, CriterionReport, VerifyConfig};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::CliError;
use crate::manifest::{RunManifest, SketchManifest, SolverManifest};
use crate::mm::{read_matrix, read_vector};
use crate::trace::{read_trace, trace_to_string};

pub const GL7D12_SHAPE: (usize, usize) = (8899, 1019);
pub const GL7D12_ID: &str = "SuiteSparse JGD_GL7d/GL7d12";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchChoice {
    Gaussian,
    SparseSign,
    Identity,
}

impl SketchChoice {
    pub fn name(self) -> &'static str {
        match self {
            SketchChoice::Gaussian => "gaussian",
            SketchChoice::SparseSign => "sparse-sign",
            SketchChoice::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SketchArgs {
    pub kind: SketchChoice,
    pub rows_factor: f64,
    pub seed: u64,
}

impl Default for SketchArgs {
    fn default() -> Self {
        Self { kind: SketchChoice::Gaussian, rows_factor: lsbe::sketch::DEFAULT_ROWS_FACTOR, seed: 0 }
    }
}

impl SketchArgs {
    fn build(&self, m: usize, n: usize) -> Result<SketchOperator, CliError> {
        if !(self.rows_factor > 0.0) {
            return Err(CliError::Usage(format!("--sketch-rows-factor must be positive, got {}", self.rows_factor)));
        }
        let seed = sketch_seed(self.seed);
        Ok(match self.kind {
            SketchChoice::Gaussian => SketchOperator::gaussian(sketch_rows(n, self.rows_factor), m, seed)?,
            SketchChoice::SparseSign => SketchOperator::sparse_sign(sketch_rows(n, self.rows_factor), m, DEFAULT_NNZ_PER_COL, seed)?,
            SketchChoice::Identity => SketchOperator::identity(m)?,
        })
    }

    fn manifest(&self, op: &SketchOperator) -> SketchManifest {
        SketchManifest { kind: self.kind.name().into(), rows_factor: self.rows_factor, rows: op.rows, seed: self.seed }
    }
}

fn shape_check(what: &str, expected: usize, got: usize) -> Result<(), CliError> {
    if expected != got {
        return Err(CliError::Usage(format!("{what} has length {got}, expected {expected}")));
    }
    Ok(())
}

pub fn is_gl7d12(a: &Matrix) -> bool {
    (a.nrows(), a.ncols()) == GL7D12_SHAPE
}

#[derive(Debug, Clone)]
pub struct EstimateArgs {
    pub matrix: PathBuf,
    pub x: PathBuf,
    pub b: PathBuf,
    pub theta: Theta,
    /// `None` runs all four exact methods.
    pub method: Option<MuMethod>,
    pub sketch: SketchArgs,
    pub refine_steps: usize,
    pub mu_est: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MuEntry {
    pub method: String,
    pub mu: f64,
    pub iterations: usize,
    pub regularization_eps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub m: usize,
    pub n: usize,
    pub theta: String,
    pub norm_r_theta: f64,
    pub mu: Vec<MuEntry>,
    pub nu: f64,
    pub nu_sketched: f64,
    pub lb_fresh: f64,
    pub lb_refined: Option<f64>,
    pub ub_deflation: Option<f64>,
    pub ub_generous: f64,
    pub ub_norm_r: f64,
    pub ub_atr_over_r: f64,
    pub ratio_mu_nu: Option<f64>,
    pub ratio_lb_mu: Option<f64>,
    pub sketch_rows: usize,
}

impl EstimateReport {
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!("problem        {} x {}, theta = {}", self.m, self.n, self.theta)];
        lines.push(format!("norm_r_theta   {:.16e}", self.norm_r_theta));
        for e in &self.mu {
            let mut l = format!("mu[{}]{}{:.16e}", e.method, " ".repeat(11usize.saturating_sub(e.method.len())), e.mu);
            if e.iterations > 0 {
                l.push_str(&format!("  ({} iterations)", e.iterations));
            }
            if e.regularization_eps > 0.0 {
                l.push_str(&format!("  (regularized, eps = {:.3e})", e.regularization_eps));
            }
            lines.push(l);
        }
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_else(|| "-".into());
        lines.push(format!("nu             {:.16e}", self.nu));
        lines.push(format!("nu_sketched    {:.16e}  ({} sketch rows)", self.nu_sketched, self.sketch_rows));
        lines.push(format!("lb_fresh       {:.16e}", self.lb_fresh));
        lines.push(format!("lb_refined     {}", opt(self.lb_refined)));
        lines.push(format!("ub_deflation   {}", opt(self.ub_deflation)));
        lines.push(format!("ub_generous    {:.16e}", self.ub_generous));
        lines.push(format!("ub_norm_r      {:.16e}", self.ub_norm_r));
        lines.push(format!("ub_atr_over_r  {:.16e}", self.ub_atr_over_r));
        lines.push(format!("mu/nu          {}", opt(self.ratio_mu_nu)));
        lines.push(format!("lb_fresh/mu    {}", opt(self.ratio_lb_mu)));
        lines.join("\n") + "\n"
    }
}

/// Exact backward error and every estimate for one approximate solution.
pub fn cmd_estimate(args: &EstimateArgs) -> Result<EstimateReport, CliError> {
    let a_mat = read_matrix(&args.matrix)?;
    let x = read_vector(&args.x)?;
    let b = read_vector(&args.b)?;
    let (m, n) = (a_mat.nrows(), a_mat.ncols());
    shape_check("x", n, x.len())?;
    shape_check("b", m, b.len())?;
    let a = a_mat.dense();
    let r = &b - &a * &x;
    let rt = weight_residual_vector(&r, x.norm(), args.theta)?;
    let rho = rt.norm();
    let rt_mat = DMatrix::from_column_slice(m, 1, rt.as_slice());

    let methods: Vec<MuMethod> = match args.method {
        Some(mm) => vec![mm],
        None => MuMethod::ALL.to_vec(),
    };
    let mut mu = Vec::new();
    for method in methods {
        let res = mu_with(method, &a, &rt_mat)?;
        mu.push(MuEntry { method: method.name().into(), mu: res.mu, iterations: res.iterations, regularization_eps: res.regularization_eps });
    }
    let mu0 = mu[0].mu;

    let sketch = args.sketch.build(m, n)?;
    let kwf = sketch.kw_factorization(&a_mat)?;
    let atr = a.tr_mul(&rt);
    let nu = kw(&a, &rt);
    let nu_sketched = if rho > 0.0 { sketched_kw(&kwf, &atr, rho)? } else { 0.0 };
    let mut p = if rho > 0.0 { lb_direction(&kwf, &atr, rho, args.mu_est)? } else { nalgebra::DVector::zeros(n) };
    let fresh = RecycledDirection::new(&p, &a, 0, args.mu_est);
    let lb_fresh = lb_evaluate(&fresh.ap, &rt).unwrap_or(0.0);
    let mut best = fresh;
    let mut lb_refined = None;
    if args.refine_steps > 0 && rho > 0.0 {
        for _ in 0..args.refine_steps {
            p = lb_refine(&p, &kwf, &a, &rt, rho, args.mu_est)?;
        }
        best = RecycledDirection::new(&p, &a, 0, args.mu_est);
        lb_refined = Some(lb_evaluate(&best.ap, &rt).unwrap_or(0.0));
    }
    let ap_tilde = &best.ap * p.norm();
    let ub_defl = ub_deflation(&ap_tilde, &rt, &a.tr_mul(&(&ap_tilde - &rt))).ok();
    let basis = generous_basis(&rt, &best.ap);
    let ub_gen = if basis.ncols() > 0 { ub_generous(&(basis.transpose() * &a), &basis.tr_mul(&rt)) } else { 0.0 };
    let atr_over_r = if rho > 0.0 { atr.norm() / rho } else { 0.0 };
    Ok(EstimateReport {
        m,
        n,
        theta: args.theta.to_string(),
        norm_r_theta: rho,
        mu,
        nu,
        nu_sketched,
        lb_fresh,
        lb_refined,
        ub_deflation: ub_defl,
        ub_generous: ub_gen,
        ub_norm_r: rho,
        ub_atr_over_r: atr_over_r,
        ratio_mu_nu: (nu > 0.0).then(|| mu0 / nu),
        ratio_lb_mu: (mu0 > 0.0).then(|| lb_fresh / mu0),
        sketch_rows: sketch.rows,
    })
}

#[derive(Debug, Clone)]
pub struct SolveArgs {
    pub matrix: PathBuf,
    pub rhs: Option<PathBuf>,
    pub theta: Theta,
    pub sketch: SketchArgs,
    pub seed: u64,
    pub atol: f64,
    pub max_iters: usize,
    pub estimate_every: usize,
    pub recycle_threshold: f64,
    pub refine_steps: usize,
    pub true_mu: bool,
    pub out: Option<PathBuf>,
}

impl SolveArgs {
    pub fn new(matrix: PathBuf) -> Self {
        let d = SolverConfig::default();
        Self {
            matrix,
            rhs: None,
            theta: d.theta,
            sketch: SketchArgs::default(),
            seed: 0,
            atol: d.atol,
            max_iters: d.max_iters,
            estimate_every: d.estimate_every,
            recycle_threshold: d.recycle_threshold,
            refine_steps: d.refine_steps,
            true_mu: false,
            out: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub csv: String,
    pub manifest: RunManifest,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub notice: Option<String>,
    pub rows: Vec<lsbe::solver::TraceRow>,
}

/// Runs LSMR with the estimation hook and renders the CSV trace; writes it
/// and its manifest when `out` is set.
pub fn cmd_solve(args: &SolveArgs) -> Result<SolveOutcome, CliError> {
    let a = read_matrix(&args.matrix)?;
    let (m, n) = (a.nrows(), a.ncols());
    let notice = is_gl7d12(&a).then(|| format!("detected {m}x{n}: {GL7D12_ID}"));
    let norm_a2 = power_norm(&a, POWER_ITERATIONS, args.seed);
    let b = match &args.rhs {
        Some(p) => {
            let b = read_vector(p)?;
            shape_check("rhs", m, b.len())?;
            b
        }
        None => experiment_rhs(&a, norm_a2, args.seed).1,
    };
    let sketch = args.sketch.build(m, n)?;
    let est = EstimatorSet::new(&a, &sketch, args.true_mu)?;
    let config = SolverConfig {
        atol: args.atol,
        max_iters: args.max_iters,
        estimate_every: args.estimate_every,
        recycle_threshold: args.recycle_threshold,
        refine_steps: args.refine_steps,
        compute_true_mu: args.true_mu,
        theta: args.theta,
        norm_a2: Some(norm_a2),
        seed: args.seed,
        ..SolverConfig::default()
    };
    let out = lsmr(&a, &b, &config, Some(&est))?;
    let csv = trace_to_string(&out.trace.rows);

    let mut inputs = vec![args.matrix.display().to_string()];
    if let Some(p) = &args.rhs {
        inputs.push(p.display().to_string());
    }
    let mut manifest = RunManifest::new("solve", inputs, args.seed);
    manifest.sketch = Some(args.sketch.manifest(&sketch));
    manifest.solver = Some(SolverManifest {
        atol: config.atol,
        max_iters: config.max_iters,
        estimate_every: config.estimate_every,
        recycle_threshold: config.recycle_threshold,
        refine_steps: config.refine_steps,
        compute_true_mu: config.compute_true_mu,
        theta: config.theta.to_string(),
    });
    if let Some(path) = &args.out {
        manifest.output = Some(path.display().to_string());
        fs::write(path, &csv).map_err(|e| CliError::io(path, e))?;
        let mpath = manifest_path(path);
        fs::write(&mpath, manifest.to_json()).map_err(|e| CliError::io(&mpath, e))?;
    }
    Ok(SolveOutcome { csv, manifest, stop_reason: out.stop_reason, iterations: out.iterations, notice, rows: out.trace.rows })
}

/// `trace.csv` → `trace.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

#[derive(Debug, Clone)]
pub struct VerifyArgs {
    pub config: VerifyConfig,
    pub gl7d12: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionJson {
    pub id: u8,
    pub name: String,
    pub status: String,
    pub worst: Option<f64>,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionJson {
    fn from_report(r: &CriterionReport) -> Self {
        Self {
            id: r.id,
            name: r.name.into(),
            status: if r.passed { "pass" } else { "fail" }.into(),
            worst: r.worst.is_finite().then_some(r.worst),
            detail: r.detail.clone(),
            seconds: r.seconds,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Report(CriterionReport),
    Skipped { id: u8, name: &'static str, reason: String },
    Error { id: u8, message: String },
}

impl Outcome {
    pub fn passed(&self) -> bool {
        !matches!(self, Outcome::Report(r) if !r.passed) && !matches!(self, Outcome::Error { .. })
    }

    pub fn line(&self) -> String {
        match self {
            Outcome::Report(r) => r.to_string(),
            Outcome::Skipped { id, name, reason } => format!("criterion {id} [{name}]: SKIPPED ({reason})"),
            Outcome::Error { id, message } => format!("criterion {id}: FAIL (error: {message})"),
        }
    }

    pub fn json(&self) -> CriterionJson {
        match self {
            Outcome::Report(r) => CriterionJson::from_report(r),
            Outcome::Skipped { id, name, reason } => CriterionJson {
                id: *id,
                name: (*name).into(),
                status: "skipped".into(),
                worst: None,
                detail: reason.clone(),
                seconds: 0.0,
            },
            Outcome::Error { id, message } => CriterionJson {
                id: *id,
                name: String::new(),
                status: "fail".into(),
                worst: None,
                detail: message.clone(),
                seconds: 0.0,
            },
        }
    }
}

pub const GL7D12_NAME: &str = "GL7d12 reproduction";

/// Runs the three sketch sizes on GL7d12 and checks the qualitative trace
/// behaviour: bounds bracket μ, the generous bound never exceeds
/// `‖Aᵀr‖/‖r‖`, and the sketched lower bound tracks μ for the larger
/// sketches.
pub fn criterion_9(path: &Path, seed: u64) -> Result<CriterionReport, CliError> {
    let start = std::time::Instant::now();
    let mut violations = 0;
    let mut notes = Vec::new();
    let mut worst = f64::INFINITY;
    let mut quality_ok = true;
    for factor in [1.5, 6.0, 16.0] {
        let mut args = SolveArgs::new(path.to_path_buf());
        args.seed = seed;
        args.sketch.seed = seed;
        args.sketch.rows_factor = factor;
        args.true_mu = true;
        args.atol = 1e-12;
        let out = cmd_solve(&args)?;
        if let Some(n) = &out.notice {
            if notes.is_empty() {
                notes.push(n.clone());
            }
        }
        let mut ratios = Vec::new();
        for row in out.rows.iter().filter(|r| r.mu_true.is_some()) {
            let mu = row.mu_true.unwrap_or(0.0);
            let slack = 1e-8 * mu + 1e-14 * row.norm_r_theta.unwrap_or(0.0);
            violations += row.lower_bounds().into_iter().flatten().filter(|lb| *lb > mu + slack).count();
            violations += row.upper_bounds().into_iter().flatten().filter(|ub| *ub < mu - slack).count();
            if let (Some(g), true) = (row.ub_generous, row.norm_r > 0.0) {
                if g > row.norm_atr / row.norm_r * (1.0 + 1e-6) + slack {
                    violations += 1;
                }
            }
            if let (Some(lb), true) = (row.lb_fresh, mu > 0.0) {
                ratios.push(lb / mu);
            }
        }
        ratios.sort_by(f64::total_cmp);
        let median = ratios.get(ratios.len() / 2).copied().unwrap_or(0.0);
        if factor >= 6.0 {
            worst = worst.min(median);
            quality_ok &= median >= 0.3;
        }
        notes.push(format!("factor {factor}: {} iterations, {}, median lb_fresh/mu = {median:.3}", out.iterations, out.stop_reason.name()));
        let trace = read_trace(out.csv.as_bytes())?;
        if trace != out.rows {
            violations += 1;
            notes.push("CSV round trip mismatch".into());
        }
    }
    Ok(CriterionReport {
        id: 9,
        name: GL7D12_NAME,
        passed: violations == 0 && quality_ok,
        worst,
        detail: format!("{violations} ordering violations; {}", notes.join("; ")),
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn cmd_verify(args: &VerifyArgs) -> Vec<Outcome> {
    let mut out: Vec<Outcome> = run_all(&args.config)
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(rep) => Outcome::Report(rep),
            Err(e) => Outcome::Error { id: (i + 1) as u8, message: e.to_string() },
        })
        .collect();
    out.push(match &args.gl7d12 {
        Some(p) if p.exists() => match criterion_9(p, args.config.seed) {
            Ok(rep) => Outcome::Report(rep),
            Err(e) => Outcome::Error { id: 9, message: e.to_string() },
        },
        Some(p) => Outcome::Skipped { id: 9, name: GL7D12_NAME, reason: format!("{} not found", p.display()) },
        None => Outcome::Skipped { id: 9, name: GL7D12_NAME, reason: "no matrix supplied (--gl7d12)".into() },
    });
    out
}
