//! Browser bindings. Every export takes plain numbers and returns a flat
//! `Float64Array` so the page needs no glue beyond the generated module.

use lsbe::estimates::{kw, mu_rank_one};
use lsbe::exact::{mu_sigma_min, SecularEquation, SECULAR_TOL};
use lsbe::linalg::gaussian_matrix;
use lsbe::operator::Matrix;
use lsbe::sketch::{sketch_rows, sketch_seed, SketchOperator};
use lsbe::solver::{experiment_rhs, lsmr, power_norm, EstimatorSet, SolverConfig, POWER_ITERATIONS};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

const MAX_DIM: usize = 400;

/// Values per row returned by [`lsmr_trace`].
#[wasm_bindgen]
pub fn trace_stride() -> usize {
    7
}

fn err(msg: impl std::fmt::Display) -> String {
    msg.to_string()
}

/// `[stable, unstable, ν, μ]` for the plane vectors `a`, `r`; the last
/// entry is the σ_min route, for comparison with the two closed forms.
#[wasm_bindgen]
pub fn rank_one(ax: f64, ay: f64, rx: f64, ry: f64) -> Vec<f64> {
    let a = DVector::from_vec(vec![ax, ay]);
    let r = DVector::from_vec(vec![rx, ry]);
    let Ok(stable) = mu_rank_one(&a, &r) else {
        return vec![0.0; 4];
    };
    let unstable = ((&a + &r).norm() - (&a - &r).norm()).abs() / 2.0;
    let am = DMatrix::from_column_slice(2, 1, a.as_slice());
    vec![stable, unstable, kw(&am, &r), mu_sigma_min(&am, &r).mu]
}

fn problem(m: usize, n: usize, seed: u64, decay: f64) -> Result<DMatrix<f64>, String> {
    if n == 0 || m < n || m > MAX_DIM {
        return Err(err(format!("need 1 <= n <= m <= {MAX_DIM}, got {m} x {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = gaussian_matrix(&mut rng, m, n);
    for j in 0..n {
        let s = 10f64.powf(-decay * j as f64 / n as f64);
        a.column_mut(j).scale_mut(s);
    }
    Ok(a)
}

/// Secular function of a seeded `m×n` problem whose residual is a mix of
/// range and null-space parts.
///
/// Layout: `[‖r‖², μ², ν², t₀…t_{s−1}, f(t₀)…f(t_{s−1})]`.
#[wasm_bindgen]
pub fn secular_curve(m: usize, n: usize, seed: u64, samples: usize) -> Result<Vec<f64>, String> {
    let a = problem(m, n, seed, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let r = gaussian_matrix(&mut rng, m, 1).column(0).into_owned();
    let eq = SecularEquation::new(&a, &r);
    let rho2 = eq.rho2();
    let (mu2, _) = eq.solve(SECULAR_TOL).map_err(err)?;
    let nu = kw(&a, &r);
    let samples = samples.clamp(2, 4096);
    let ts: Vec<f64> = (0..samples).map(|i| rho2 * i as f64 / (samples - 1) as f64).collect();
    let mut out = vec![rho2, mu2, nu * nu];
    out.extend(&ts);
    out.extend(ts.iter().map(|t| eq.eval(*t).0));
    Ok(out)
}

/// LSMR on a seeded dense problem with a Gaussian sketch of
/// `factor·n` rows. One row per iteration:
/// `[iter, μ, lb_fresh, lb_refined, ub_deflation, ub_generous, ‖Aᵀr‖/‖r‖]`,
/// NaN where a value was not computed.
#[wasm_bindgen]
pub fn lsmr_trace(m: usize, n: usize, factor: f64, seed: u64) -> Result<Vec<f64>, String> {
    if !(factor > 0.0) {
        return Err(err("factor must be positive"));
    }
    let a = Matrix::Dense(problem(m, n, seed, 3.0)?);
    let norm_a2 = power_norm(&a, POWER_ITERATIONS, seed);
    let (_, b) = experiment_rhs(&a, norm_a2, seed);
    let sketch = SketchOperator::gaussian(sketch_rows(n, factor).max(n), m, sketch_seed(seed)).map_err(err)?;
    let est = EstimatorSet::new(&a, &sketch, true).map_err(err)?;
    let cfg = SolverConfig { compute_true_mu: true, norm_a2: Some(norm_a2), seed, max_iters: 20 * n, ..SolverConfig::default() };
    let out = lsmr(&a, &b, &cfg, Some(&est)).map_err(err)?;
    let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let mut flat = Vec::with_capacity(out.trace.rows.len() * trace_stride());
    for row in &out.trace.rows {
        let ratio = if row.norm_r > 0.0 { row.norm_atr / row.norm_r } else { f64::NAN };
        flat.extend([
            row.iter as f64,
            nan(row.mu_true),
            nan(row.lb_fresh),
            nan(row.lb_refined),
            nan(row.ub_deflation),
            nan(row.ub_generous),
            ratio,
        ]);
    }
    Ok(flat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_forms_agree_on_benign_input() {
        let v = rank_one(1.0, 0.0, 1.0, 1.0);
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        assert!((v[0] - golden).abs() < 1e-15);
        assert!((v[1] - golden).abs() < 1e-14);
        assert!((v[3] - golden).abs() < 1e-12);
        assert_eq!(rank_one(0.0, 0.0, 0.0, 0.0), vec![0.0; 4]);
    }

    #[test]
    fn secular_root_is_a_fixed_point() {
        let c = secular_curve(30, 5, 4, 64).unwrap();
        let (rho2, mu2, nu2) = (c[0], c[1], c[2]);
        assert!(nu2 <= mu2 * (1.0 + 1e-12) && mu2 <= rho2);
        assert_eq!(c.len(), 3 + 2 * 64);
    }

    #[test]
    fn trace_rows_bracket_mu() {
        let t = lsmr_trace(120, 10, 6.0, 2).unwrap();
        assert_eq!(t.len() % trace_stride(), 0);
        for row in t.chunks(trace_stride()).filter(|r| !r[1].is_nan() && !r[2].is_nan()) {
            let (mu, slack) = (row[1], 1e-8 * row[1] + 1e-14);
            assert!(row[2] <= mu + slack && row[3] <= mu + slack, "{row:?}");
            assert!(row[4] >= mu - slack && row[5] >= mu - slack, "{row:?}");
        }
        assert!(problem(3, 5, 0, 1.0).is_err());
    }
}
