//! Synthetic linear-model benchmark.
//!
//! Each run draws a ground truth `θ* ~ N(0, σ²I)`, a training pool
//! `x ~ N(μ_train·1, σ²I)` with responses `y = ⟨x, θ*⟩ + ε`, `ε ~ N(0, 1)`,
//! and test queries `z ~ N((μ_train + μ_test)·1, σ²I)`. For every query each
//! selector picks `k` training rows conditioned on that query, a ridge
//! estimator is fitted on them, and the query's absolute prediction error
//! `|⟨z, θ* − θ̂⟩|` is recorded. Errors are averaged over queries within a
//! run and then over runs.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::derive_seed;
use crate::bank::{dot, EmbeddingBank};
use crate::baselines::{select_dense_topk, select_dpp_greedy, select_random, DppConfig, Similarity};
use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::selector::{select, SelectionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMethod {
    Lite,
    Dense,
    Dpp,
    Random,
}

impl fmt::Display for SynthMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthMethod::Lite => "lite",
            SynthMethod::Dense => "dense",
            SynthMethod::Dpp => "dpp",
            SynthMethod::Random => "random",
        })
    }
}

impl FromStr for SynthMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lite" | "kite" => Ok(SynthMethod::Lite),
            "dense" => Ok(SynthMethod::Dense),
            "dpp" => Ok(SynthMethod::Dpp),
            "random" => Ok(SynthMethod::Random),
            o => Err(Error::invalid(format!("unknown synth method `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub d: usize,
    /// Training pool sizes to sweep.
    pub n: Vec<usize>,
    /// Test queries per run.
    pub n_test: usize,
    pub k: usize,
    pub sigma: f64,
    pub mu_train: f64,
    /// Test-mean shifts to sweep.
    pub mu_test: Vec<f64>,
    /// Ridge regularizer of the fitted estimator.
    pub beta_fit: f64,
    /// Regularizer used by the LITE selector.
    pub beta_select: f64,
    pub runs: usize,
    pub methods: Vec<SynthMethod>,
    pub lambda_grid: Vec<f64>,
    pub dense_similarity: Similarity,
    /// DPP similarity kernel; `None` means a Gaussian kernel whose bandwidth
    /// equals the feature scale `sigma`.
    pub dpp_kernel: Option<KernelSpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 5,
            n: vec![1000],
            n_test: 200,
            k: 5,
            sigma: 5.0,
            mu_train: 0.0,
            mu_test: vec![0.0],
            beta_fit: 0.02,
            beta_select: 0.02,
            runs: 20,
            methods: vec![SynthMethod::Lite, SynthMethod::Dense, SynthMethod::Dpp, SynthMethod::Random],
            lambda_grid: (1..=10).map(f64::from).collect(),
            dense_similarity: Similarity::Cosine,
            dpp_kernel: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.d == 0 {
            return bad("d must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.n.is_empty() || self.n.iter().any(|&n| n < self.k) {
            return bad("every n must be at least k");
        }
        if self.mu_test.is_empty() || self.mu_test.iter().any(|m| !m.is_finite()) {
            return bad("mu_test grid must be non-empty and finite");
        }
        if self.n_test == 0 || self.runs == 0 {
            return bad("n_test and runs must be at least 1");
        }
        if !(self.sigma > 0.0) || !(self.beta_fit > 0.0) || !(self.beta_select > 0.0) {
            return bad("sigma, beta_fit and beta_select must be positive");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        if self.methods.contains(&SynthMethod::Lite)
            && (self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0)))
        {
            return bad("lambda grid must be non-empty and non-negative");
        }
        if let Some(spec) = self.dpp_kernel {
            spec.validate()?;
        }
        Ok(())
    }

    /// The DPP kernel actually used.
    pub fn dpp_kernel(&self) -> Result<KernelSpec> {
        match self.dpp_kernel {
            Some(spec) => Ok(spec),
            None => KernelSpec::gaussian(self.sigma),
        }
    }
}

/// One run's data.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub theta_star: Vec<f64>,
    pub x_train: EmbeddingBank,
    pub y_train: Vec<f64>,
    pub z_test: EmbeddingBank,
}

/// Draws one run's data; identical for identical `run_seed`.
pub fn generate_synthetic(
    d: usize,
    n: usize,
    n_test: usize,
    sigma: f64,
    mu_train: f64,
    mu_test: f64,
    run_seed: u64,
) -> Result<SynthData> {
    if d == 0 || n == 0 || n_test == 0 {
        return Err(Error::invalid("d, n and n_test must be positive"));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let theta_star: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
    let x: Vec<f64> = (0..n * d).map(|_| mu_train + normal.sample(&mut rng)).collect();
    let y_train = x
        .chunks_exact(d)
        .map(|row| dot(row, &theta_star) + noise.sample(&mut rng))
        .collect();
    let shift = mu_train + mu_test;
    let z: Vec<f64> = (0..n_test * d).map(|_| shift + normal.sample(&mut rng)).collect();
    Ok(SynthData {
        theta_star,
        x_train: EmbeddingBank::from_flat(n, d, x)?,
        y_train,
        z_test: EmbeddingBank::from_flat(n_test, d, z)?,
    })
}

/// `θ̂ = (βI + XᵀX)⁻¹ Xᵀy` over the given rows.
pub fn ridge_fit(rows: &[&[f64]], y: &[f64], beta: f64) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::invalid("ridge fit needs at least one row"));
    }
    if rows.len() != y.len() {
        return Err(Error::invalid("rows and responses differ in length"));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid("ridge beta must be positive"));
    }
    let d = rows[0].len();
    let mut v = DMatrix::from_diagonal_element(d, d, beta);
    let mut rhs = DVector::zeros(d);
    for (row, &yi) in rows.iter().zip(y) {
        check_dim(d, row.len(), "ridge row")?;
        let x = DVector::from_column_slice(row);
        v.ger(1.0, &x, &x, 1.0);
        rhs.axpy(yi, &x, 1.0);
    }
    let chol = v
        .cholesky()
        .ok_or_else(|| Error::degenerate("ridge system is not positive definite"))?;
    Ok(chol.solve(&rhs).as_slice().to_vec())
}

/// `(1/N) Σ_j |⟨z_j, θ* − θ̂⟩|`.
pub fn mae_eval(theta_star: &[f64], theta_hat: &[f64], z: &EmbeddingBank) -> Result<f64> {
    check_dim(theta_star.len(), theta_hat.len(), "parameter vectors")?;
    check_dim(z.dim(), theta_star.len(), "test queries")?;
    let diff: Vec<f64> = theta_star.iter().zip(theta_hat).map(|(a, b)| a - b).collect();
    Ok(z.rows().map(|r| dot(r, &diff).abs()).sum::<f64>() / z.len() as f64)
}

/// Mean error of one method in one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCell {
    pub method: SynthMethod,
    pub n: usize,
    pub mu_test: f64,
    /// `λ` used for LITE (best over the grid); absent for other methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub mean_abs_error: f64,
    /// Standard deviation of per-run errors.
    pub std: f64,
    pub per_run: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub config: SynthConfig,
    /// Headline cells; LITE uses its best `λ`.
    pub cells: Vec<SynthCell>,
    /// LITE cells for every `λ` in the grid.
    pub lambda_table: Vec<SynthCell>,
    pub wall_time_secs: f64,
}

impl SynthReport {
    pub fn cell(&self, method: SynthMethod, n: usize, mu_test: f64) -> Option<&SynthCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.n == n && c.mu_test == mu_test)
    }

    /// Aligned text table of the headline cells.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>8} {:>7} {:>8} {:>7} {:>10} {:>10}\n",
            "method", "n", "mu_test", "lambda", "mae", "std"
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{:>8} {:>7} {:>8} {:>7} {:>10.4} {:>10.4}\n",
                c.method.to_string(),
                c.n,
                c.mu_test,
                c.lambda.map_or_else(|| "-".to_string(), |l| l.to_string()),
                c.mean_abs_error,
                c.std
            ));
        }
        out
    }
}

// one selector variant evaluated inside a run
#[derive(Debug, Clone, Copy)]
enum Variant {
    Lite(f64),
    Dense,
    Dpp,
    Random,
}

fn variants(config: &SynthConfig) -> Vec<Variant> {
    let mut out = Vec::new();
    for m in &config.methods {
        match m {
            SynthMethod::Lite => out.extend(config.lambda_grid.iter().map(|&l| Variant::Lite(l))),
            SynthMethod::Dense => out.push(Variant::Dense),
            SynthMethod::Dpp => out.push(Variant::Dpp),
            SynthMethod::Random => out.push(Variant::Random),
        }
    }
    out
}

/// Per-query absolute errors averaged over the run's test queries, one per variant.
fn run_once(config: &SynthConfig, variants: &[Variant], data: &SynthData, run_seed: u64) -> Result<Vec<f64>> {
    let k = config.k;
    let dpp = DppConfig::new(k, config.dpp_kernel()?);
    let mut totals = vec![0.0; variants.len()];
    for (q, z) in data.z_test.rows().enumerate() {
        for (v, variant) in variants.iter().enumerate() {
            let indices = match *variant {
                Variant::Lite(lambda) => {
                    let cfg = SelectionConfig::new(k, config.beta_select, lambda, KernelSpec::Linear);
                    select(&data.x_train, z, &cfg)?.indices
                }
                Variant::Dense => select_dense_topk(&data.x_train, z, k, config.dense_similarity)?.indices,
                Variant::Dpp => select_dpp_greedy(&data.x_train, z, &dpp)?.indices,
                Variant::Random => {
                    select_random(&data.x_train, k, derive_seed(run_seed, 1, q as u64))?.indices
                }
            };
            let rows: Vec<&[f64]> = indices.iter().map(|&i| data.x_train.row(i)).collect();
            let y: Vec<f64> = indices.iter().map(|&i| data.y_train[i]).collect();
            let theta_hat = ridge_fit(&rows, &y, config.beta_fit)?;
            let err: f64 = z
                .iter()
                .zip(data.theta_star.iter().zip(&theta_hat))
                .map(|(zi, (a, b))| zi * (a - b))
                .sum();
            totals[v] += err.abs();
        }
    }
    let nq = data.z_test.len() as f64;
    Ok(totals.into_iter().map(|t| t / nq).collect())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Runs every `(n, μ_test)` cell of the sweep for every requested method.
pub fn run_sweep(config: &SynthConfig) -> Result<SynthReport> {
    config.validate()?;
    let start = Instant::now();
    let variants = variants(config);
    let mut cells = Vec::new();
    let mut lambda_table = Vec::new();

    let grid: Vec<(usize, f64)> = config
        .n
        .iter()
        .flat_map(|&n| config.mu_test.iter().map(move |&m| (n, m)))
        .collect();
    for (cell_id, &(n, mu_test)) in grid.iter().enumerate() {
        let per_run: Vec<Vec<f64>> = (0..config.runs)
            .into_par_iter()
            .map(|r| {
                let run_seed = derive_seed(config.seed, cell_id as u64, r as u64);
                let data = generate_synthetic(config.d, n, config.n_test, config.sigma, config.mu_train, mu_test, run_seed)?;
                run_once(config, &variants, &data, run_seed)
            })
            .collect::<Result<_>>()?;

        let column = |v: usize| per_run.iter().map(|r| r[v]).collect::<Vec<f64>>();
        let mut best_lite: Option<SynthCell> = None;
        for (v, variant) in variants.iter().enumerate() {
            let runs = column(v);
            let (mean, std) = mean_std(&runs);
            let (method, lambda) = match *variant {
                Variant::Lite(l) => (SynthMethod::Lite, Some(l)),
                Variant::Dense => (SynthMethod::Dense, None),
                Variant::Dpp => (SynthMethod::Dpp, None),
                Variant::Random => (SynthMethod::Random, None),
            };
            let cell = SynthCell {
                method,
                n,
                mu_test,
                lambda,
                mean_abs_error: mean,
                std,
                per_run: runs,
            };
            if method == SynthMethod::Lite {
                if best_lite.as_ref().is_none_or(|b| cell.mean_abs_error < b.mean_abs_error) {
                    best_lite = Some(cell.clone());
                }
                lambda_table.push(cell);
            } else {
                cells.push(cell);
            }
        }
        if let Some(b) = best_lite {
            cells.push(b);
        }
    }
    cells.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.n.cmp(&b.n))
            .then(a.mu_test.total_cmp(&b.mu_test))
    });
    Ok(SynthReport {
        config: config.clone(),
        cells,
        lambda_table,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(5, 50, 10, 5.0, 0.0, 1.0, 3).unwrap();
        let b = generate_synthetic(5, 50, 10, 5.0, 0.0, 1.0, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(5, 50, 10, 5.0, 0.0, 1.0, 4).unwrap();
        assert_ne!(a.theta_star, c.theta_star);
    }

    #[test]
    fn tiny_sigma_collapses_features_to_the_mean() {
        let data = generate_synthetic(3, 200, 5, 1e-12, 2.0, 0.0, 1).unwrap();
        for row in data.x_train.rows() {
            for v in row {
                assert!((v - 2.0).abs() < 1e-9);
            }
        }
        // y − μ·1ᵀθ* is pure unit-variance noise
        let shift: f64 = 2.0 * data.theta_star.iter().sum::<f64>();
        let resid: Vec<f64> = data.y_train.iter().map(|y| y - shift).collect();
        let (mean, std) = mean_std(&resid);
        assert!(mean.abs() < 4.0 / (200f64).sqrt());
        assert!((std - 1.0).abs() < 0.2);
    }

    #[test]
    fn feature_means_respect_clt_bound() {
        let (d, n, sigma) = (5, 1000, 5.0);
        let data = generate_synthetic(d, n, 1, sigma, 0.0, 0.0, 99).unwrap();
        for j in 0..d {
            let mean: f64 = data.x_train.rows().map(|r| r[j]).sum::<f64>() / n as f64;
            assert!(mean.abs() <= 4.0 * sigma / (n as f64).sqrt());
        }
    }

    #[test]
    fn ridge_examples() {
        let t = ridge_fit(&[&[1.0, 0.0]], &[1.0], 1.0).unwrap();
        assert!((t[0] - 0.5).abs() < 1e-15 && t[1] == 0.0);
        let t = ridge_fit(&[&[1.0, 2.0], &[3.0, -1.0]], &[0.0, 0.0], 0.3).unwrap();
        assert_eq!(t, vec![0.0, 0.0]);
    }

    #[test]
    fn ridge_approaches_least_squares() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5], vec![2.0, 2.5]];
        let y = [1.0, -2.0, 0.3, 4.0];
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let fit = ridge_fit(&refs, &y, 1e-10).unwrap();
        // normal equations solved by Cramer's rule
        let (mut a, mut b, mut c, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, yi) in rows.iter().zip(y) {
            a += x[0] * x[0];
            b += x[0] * x[1];
            c += x[1] * x[1];
            r0 += x[0] * yi;
            r1 += x[1] * yi;
        }
        let det = a * c - b * b;
        let ols = [(c * r0 - b * r1) / det, (a * r1 - b * r0) / det];
        for i in 0..2 {
            assert!((fit[i] - ols[i]).abs() <= 1e-6 * ols[i].abs());
        }
    }

    #[test]
    fn mae_examples() {
        let z = EmbeddingBank::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(mae_eval(&[1.0, 2.0], &[1.0, 2.0], &z).unwrap(), 0.0);
        assert_eq!(mae_eval(&[1.0, 2.0], &[0.0, 2.0], &z).unwrap(), 1.0);
        let zz = EmbeddingBank::from_rows(&[vec![0.5, -2.0], vec![3.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let naive = ((0.5 * 0.3 - 2.0 * -1.1f64).abs() + (3.0 * 0.3 + 1.0 * -1.1f64).abs()) / 3.0;
        assert!((mae_eval(&[1.3, 0.9], &[1.0, 2.0], &zz).unwrap() - naive).abs() < 1e-14);
    }

    #[test]
    fn random_with_whole_pool_matches_full_ridge() {
        let config = SynthConfig {
            n: vec![8],
            n_test: 6,
            k: 8,
            runs: 2,
            methods: vec![SynthMethod::Random, SynthMethod::Dense],
            ..SynthConfig::default()
        };
        let report = run_sweep(&config).unwrap();
        let r = report.cell(SynthMethod::Random, 8, 0.0).unwrap();
        let dn = report.cell(SynthMethod::Dense, 8, 0.0).unwrap();
        for run in 0..2 {
            let data = generate_synthetic(5, 8, 6, 5.0, 0.0, 0.0, derive_seed(0, 0, run as u64)).unwrap();
            let rows: Vec<&[f64]> = data.x_train.rows().collect();
            let full = ridge_fit(&rows, &data.y_train, 0.02).unwrap();
            let expected = mae_eval(&data.theta_star, &full, &data.z_test).unwrap();
            // subset order differs, so only summation order separates the fits
            assert!((r.per_run[run] - expected).abs() < 1e-9 * expected.max(1.0));
            assert!((dn.per_run[run] - expected).abs() < 1e-9 * expected.max(1.0));
        }
    }

    #[test]
    fn report_covers_every_cell() {
        let config = SynthConfig {
            n: vec![30, 40],
            mu_test: vec![0.0, 1.0],
            n_test: 4,
            runs: 2,
            lambda_grid: vec![1.0, 2.0],
            ..SynthConfig::default()
        };
        let report = run_sweep(&config).unwrap();
        assert_eq!(report.cells.len(), 4 * 4);
        assert_eq!(report.lambda_table.len(), 2 * 4);
        for c in &report.cells {
            assert!(c.mean_abs_error >= 0.0);
            assert_eq!(c.per_run.len(), 2);
        }
        assert!(run_sweep(&SynthConfig { n: vec![3], ..config }).is_err());
    }
}
