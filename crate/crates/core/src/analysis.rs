//! Submodularity-ratio tools for `f_z(S) = −zᵀV_S⁻¹z`.
//!
//! For disjoint `S` and `L` the ratio
//!
//! ```text
//! γ(S, L) = Σ_{x∈L} (f_z(S ∪ {x}) − f_z(S)) / (f_z(S ∪ L) − f_z(S))
//! ```
//!
//! measures how far `f_z` is from diminishing returns at that instance.
//! [`gamma_exact`] evaluates it from directly factored design matrices;
//! [`gamma_closed_form`] uses the first-order expansion
//!
//! ```text
//! ΣΔ_i / (ΣΔ_i − Σ_{i≠j} √(Δ_iΔ_j) μ_ij)
//! ```
//!
//! which drops every term beyond first order in the coherences `μ_ij` and
//! drifts away from the exact value as coherences grow. Signs: the cross
//! terms carry the sign of `(zᵀV⁻¹x_i)(zᵀV⁻¹x_j)`, which `√(Δ_iΔ_j)` loses,
//! so the closed form reinstates it.
//!
//! The coherence bound `1/(1 + (k−1)μ)` takes `μ` as the largest `|μ_ij|`
//! over all pairs of bank rows outside `S`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{sq_dist, EmbeddingBank};
use crate::error::{check_dim, Error, Result};
use crate::linalg::DesignState;

/// Denominators below this make a ratio undefined.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Slack allowed when counting bound violations.
pub const VIOLATION_SLACK: f64 = 1e-6;

/// Outcome of a ratio evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ratio {
    Value(f64),
    /// The joint gain was below [`DENOMINATOR_FLOOR`].
    Undefined,
}

impl Ratio {
    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(v),
            Ratio::Undefined => None,
        }
    }
}

/// `Δ = (zᵀV⁻¹x)² / (1 + xᵀV⁻¹x)`, the gain in `f_z` from adding `x`.
pub fn marginal_gain(state: &DesignState, z: &[f64], x: &[f64]) -> Result<f64> {
    let zx = state.quad_form(z, x)?;
    let (_, xx) = state.self_quad(x)?;
    Ok(zx * zx / (1.0 + xx))
}

/// `μ_ij = x_iᵀV⁻¹x_j / (√(1 + x_iᵀV⁻¹x_i) √(1 + x_jᵀV⁻¹x_j))`.
pub fn coherence(state: &DesignState, xi: &[f64], xj: &[f64]) -> Result<f64> {
    let ij = state.quad_form(xi, xj)?;
    let (_, ii) = state.self_quad(xi)?;
    let (_, jj) = state.self_quad(xj)?;
    Ok(ij / ((1.0 + ii).sqrt() * (1.0 + jj).sqrt()))
}

/// `1 / (1 + (k−1)μ)`.
pub fn gamma_lower_bound(mu_max: f64, k: usize) -> f64 {
    if k <= 1 {
        return 1.0;
    }
    1.0 / (1.0 + (k as f64 - 1.0) * mu_max)
}

/// Cholesky factor of `βI + Σ_{i∈set} x_i x_iᵀ`, built directly.
struct DirectDesign {
    chol: Cholesky<f64, Dyn>,
}

impl DirectDesign {
    fn new(bank: &EmbeddingBank, set: &[usize], beta: f64) -> Result<Self> {
        let d = bank.dim();
        let mut v = DMatrix::from_diagonal_element(d, d, beta);
        for &i in set {
            let x = DVector::from_column_slice(bank.row(i));
            v.ger(1.0, &x, &x, 1.0);
        }
        let chol = Cholesky::new(v)
            .ok_or_else(|| Error::degenerate("design matrix is not positive definite"))?;
        Ok(Self { chol })
    }

    /// `L⁻¹a` where `V = LLᵀ`; quadratic forms become dot products.
    fn whiten(&self, a: &[f64]) -> DVector<f64> {
        let mut v = DVector::from_column_slice(a);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        v
    }

    fn neg_quad(&self, z: &[f64]) -> f64 {
        -self.whiten(z).norm_squared()
    }
}

/// `f_z(S) = −zᵀV_S⁻¹z`, by direct factorization.
pub fn objective(bank: &EmbeddingBank, z: &[f64], set: &[usize], beta: f64) -> Result<f64> {
    check_dim(bank.dim(), z.len(), "query")?;
    check_beta(beta)?;
    Ok(DirectDesign::new(bank, set, beta)?.neg_quad(z))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

fn check_sets(bank: &EmbeddingBank, s: &[usize], l: &[usize]) -> Result<()> {
    if l.is_empty() {
        return Err(Error::invalid("L must be non-empty"));
    }
    for &i in s.iter().chain(l) {
        if i >= bank.len() {
            return Err(Error::invalid(format!("index {i} out of range")));
        }
    }
    if l.iter().any(|i| s.contains(i)) {
        return Err(Error::invalid("S and L must be disjoint"));
    }
    Ok(())
}

fn gain(bank: &EmbeddingBank, z: &[f64], s: &[usize], extra: &[usize], beta: f64, base: f64) -> Result<f64> {
    let mut joint = s.to_vec();
    joint.extend_from_slice(extra);
    Ok(objective(bank, z, &joint, beta)? - base)
}

/// Exact submodularity ratio of `f_z` at `(S, L)`.
///
/// Every `f_z` value comes from its own direct factorization; with `|L| = 1`
/// numerator and denominator are the same computation, so the ratio is
/// exactly one.
pub fn gamma_exact(bank: &EmbeddingBank, z: &[f64], s: &[usize], l: &[usize], beta: f64) -> Result<Ratio> {
    check_sets(bank, s, l)?;
    let base = objective(bank, z, s, beta)?;
    let mut singles = 0.0;
    for &x in l {
        singles += gain(bank, z, s, &[x], beta, base)?;
    }
    let joint = if l.len() == 1 {
        singles
    } else {
        gain(bank, z, s, l, beta, base)?
    };
    if joint < DENOMINATOR_FLOOR {
        return Ok(Ratio::Undefined);
    }
    Ok(Ratio::Value(singles / joint))
}

/// First-order closed form of the ratio in terms of `Δ_i` and `μ_ij`.
pub fn gamma_closed_form(bank: &EmbeddingBank, z: &[f64], s: &[usize], l: &[usize], beta: f64) -> Result<Ratio> {
    check_sets(bank, s, l)?;
    check_dim(bank.dim(), z.len(), "query")?;
    check_beta(beta)?;
    let dd = DirectDesign::new(bank, s, beta)?;
    let wz = dd.whiten(z);
    let wl: Vec<DVector<f64>> = l.iter().map(|&i| dd.whiten(bank.row(i))).collect();
    // signed √Δ_i = zᵀV⁻¹x_i / √(1 + x_iᵀV⁻¹x_i)
    let root: Vec<f64> = wl
        .iter()
        .map(|w| wz.dot(w) / (1.0 + w.norm_squared()).sqrt())
        .collect();
    let sum_delta: f64 = root.iter().map(|r| r * r).sum();
    let mut cross = 0.0;
    for i in 0..wl.len() {
        for j in 0..wl.len() {
            if i != j {
                let mu = wl[i].dot(&wl[j])
                    / ((1.0 + wl[i].norm_squared()).sqrt() * (1.0 + wl[j].norm_squared()).sqrt());
                cross += root[i] * root[j] * mu;
            }
        }
    }
    let denom = sum_delta - cross;
    if sum_delta < DENOMINATOR_FLOOR || denom < DENOMINATOR_FLOOR {
        return Ok(Ratio::Undefined);
    }
    Ok(Ratio::Value(sum_delta / denom))
}

/// Largest `|μ_ij|` over distinct pairs drawn from `pool`, under `V_S`.
pub fn max_coherence(bank: &EmbeddingBank, s: &[usize], pool: &[usize], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let dd = DirectDesign::new(bank, s, beta)?;
    let d = bank.dim();
    // rows of whitened vectors scaled by 1/√(1 + ‖w‖²)
    let mut scaled = Vec::with_capacity(pool.len() * d);
    for &i in pool {
        let w = dd.whiten(bank.row(i));
        let norm = (1.0 + w.norm_squared()).sqrt();
        scaled.extend(w.iter().map(|v| v / norm));
    }
    let m = pool.len();
    let best = (0..m)
        .into_par_iter()
        .map(|a| {
            let ra = &scaled[a * d..(a + 1) * d];
            let mut best = 0.0f64;
            for b in a + 1..m {
                let mu = crate::bank::dot(ra, &scaled[b * d..(b + 1) * d]).abs();
                best = best.max(mu);
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// Farthest-point sampling from all bank rows, starting at a uniformly drawn row.
pub fn farthest_point_sample(bank: &EmbeddingBank, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > bank.len() {
        return Err(Error::invalid(format!(
            "sample size {size} exceeds bank size {}",
            bank.len()
        )));
    }
    if size == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<usize> = (0..bank.len()).collect();
    let start = rng.random_range(0..pool.len());
    Ok(fps_from(bank, &pool, size, start))
}

/// Farthest-point sampling restricted to `pool`, starting at `pool[start]`.
/// Ties go to the lowest position in `pool`.
pub fn fps_from(bank: &EmbeddingBank, pool: &[usize], size: usize, start: usize) -> Vec<usize> {
    let size = size.min(pool.len());
    if size == 0 {
        return Vec::new();
    }
    let mut chosen = vec![pool[start]];
    let mut taken = vec![false; pool.len()];
    taken[start] = true;
    let first = bank.row(pool[start]);
    let mut min_dist: Vec<f64> = pool.iter().map(|&i| sq_dist(bank.row(i), first)).collect();
    while chosen.len() < size {
        let mut best: Option<(usize, f64)> = None;
        for (p, &dist) in min_dist.iter().enumerate() {
            if taken[p] {
                continue;
            }
            match best {
                Some((_, b)) if !(dist > b) => {}
                _ => best = Some((p, dist)),
            }
        }
        let (p, _) = best.expect("size <= pool.len()");
        taken[p] = true;
        chosen.push(pool[p]);
        let row = bank.row(pool[p]);
        for (q, &i) in pool.iter().enumerate() {
            if !taken[q] {
                min_dist[q] = min_dist[q].min(sq_dist(bank.row(i), row));
            }
        }
    }
    chosen
}

/// One sampled `(S, L, z)` instance and everything measured on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTrial {
    pub s: Vec<usize>,
    pub l: Vec<usize>,
    pub query: usize,
    pub exact: Ratio,
    pub closed: Ratio,
    /// Largest `|μ_ij|` over demo rows outside `S`.
    pub mu_max: f64,
    /// Largest `|μ_ij|` over pairs inside `L` only.
    pub mu_within_l: f64,
}

impl GammaTrial {
    /// `1/(1 + (|L|−1)μ)` with `μ` over all rows outside `S`.
    pub fn bound(&self) -> f64 {
        gamma_lower_bound(self.mu_max, self.l.len())
    }

    /// Same bound with `μ` restricted to pairs inside `L`.
    pub fn bound_within_l(&self) -> f64 {
        gamma_lower_bound(self.mu_within_l, self.l.len())
    }

    pub fn violates_bound(&self) -> bool {
        matches!(self.exact, Ratio::Value(g) if g < self.bound() - VIOLATION_SLACK)
    }

    /// `1 − (|L|−1)μ`: the exact ratio is a Rayleigh quotient of `I + C`,
    /// with `C` the off-diagonal coherence matrix, so it is at least
    /// `λ_min(I + C)`, which Gershgorin bounds by this value.
    pub fn spectral_bound(&self) -> f64 {
        1.0 - (self.l.len() as f64 - 1.0) * self.mu_max
    }
}

/// Draws one trial: `|S|` uniform in `[1, k]`, `L` by farthest-point sampling
/// of up to `k` remaining demo rows, `z` uniform over the query bank.
pub fn sample_trial<R: Rng + ?Sized>(
    demo: &EmbeddingBank,
    queries: &EmbeddingBank,
    k: usize,
    beta: f64,
    rng: &mut R,
) -> Result<GammaTrial> {
    let n = demo.len();
    if n < 2 {
        return Err(Error::invalid("demo bank needs at least two rows"));
    }
    let s_size = rng.random_range(1..=k.min(n - 1));
    let s = sample(rng, n, s_size).into_vec();
    let mut in_s = vec![false; n];
    for &i in &s {
        in_s[i] = true;
    }
    let pool: Vec<usize> = (0..n).filter(|&i| !in_s[i]).collect();
    let start = rng.random_range(0..pool.len());
    let l = fps_from(demo, &pool, k, start);
    let query = rng.random_range(0..queries.len());
    let z = queries.row(query);
    Ok(GammaTrial {
        exact: gamma_exact(demo, z, &s, &l, beta)?,
        closed: gamma_closed_form(demo, z, &s, &l, beta)?,
        mu_max: max_coherence(demo, &s, &pool, beta)?,
        mu_within_l: max_coherence(demo, &s, &l, beta)?,
        s,
        l,
        query,
    })
}

/// Per-`(k, β)` summary of a Monte-Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCell {
    pub k: usize,
    pub beta: f64,
    /// `min(1, smallest exact ratio)`; `None` if every trial was undefined.
    pub gamma_min_exact: Option<f64>,
    pub gamma_min_closed: Option<f64>,
    /// Smallest exact ratio before capping at one.
    pub raw_min_exact: Option<f64>,
    /// Smallest `1/(1 + (k−1)μ)` over trials.
    pub bound_min: f64,
    pub trials: usize,
    pub undefined: usize,
    /// Trials whose exact ratio fell below `1/(1 + (|L|−1)μ) − 1e-6`.
    pub violations: usize,
    /// Same count with `μ` taken over pairs inside `L` only.
    pub violations_within_l: usize,
    /// Trials below the eigenvalue bound `1 − (|L|−1)μ − 1e-6`, which the
    /// exact ratio always satisfies; non-zero only on numerical trouble.
    pub violations_spectral: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub cells: Vec<GammaCell>,
    pub trials: usize,
    pub seed: u64,
}

/// Seed for trial `trial` of cell `cell`, independent of scheduling.
pub fn derive_seed(master: u64, cell: u64, trial: u64) -> u64 {
    let mut x = master ^ cell.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ trial.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Monte-Carlo estimate of the smallest submodularity ratio per grid cell.
///
/// The singleton `L = {x}` always has ratio one, and the definition takes a
/// minimum over every `L` of size at most `k`, so reported minima are capped
/// at one. The uncapped minimum is kept in `raw_min_exact`.
pub fn estimate_gamma_min(
    demo: &EmbeddingBank,
    queries: &EmbeddingBank,
    k_grid: &[usize],
    beta_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<GammaReport> {
    if k_grid.is_empty() || beta_grid.is_empty() {
        return Err(Error::invalid("k and beta grids must be non-empty"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    check_dim(demo.dim(), queries.dim(), "query bank")?;
    for &k in k_grid {
        if k == 0 || k > demo.len() {
            return Err(Error::invalid(format!(
                "grid k={k} is outside [1, {}]",
                demo.len()
            )));
        }
    }
    if demo.len() < 2 {
        return Err(Error::invalid("demo bank needs at least two rows"));
    }
    for &b in beta_grid {
        check_beta(b)?;
    }

    let mut cells = Vec::new();
    for (ki, &k) in k_grid.iter().enumerate() {
        for (bi, &beta) in beta_grid.iter().enumerate() {
            let cell_id = (ki * beta_grid.len() + bi) as u64;
            let outcomes: Vec<GammaTrial> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, cell_id, t as u64));
                    sample_trial(demo, queries, k, beta, &mut rng)
                })
                .collect::<Result<_>>()?;
            cells.push(summarize(k, beta, &outcomes));
        }
    }
    Ok(GammaReport { cells, trials, seed })
}

fn summarize(k: usize, beta: f64, outcomes: &[GammaTrial]) -> GammaCell {
    let min_of = |it: &mut dyn Iterator<Item = f64>| it.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    let raw_exact = min_of(&mut outcomes.iter().filter_map(|t| t.exact.value()));
    let raw_closed = min_of(&mut outcomes.iter().filter_map(|t| t.closed.value()));
    GammaCell {
        k,
        beta,
        gamma_min_exact: raw_exact.map(|v| v.min(1.0)),
        gamma_min_closed: raw_closed.map(|v| v.min(1.0)),
        raw_min_exact: raw_exact,
        bound_min: outcomes
            .iter()
            .map(|t| gamma_lower_bound(t.mu_max, k))
            .fold(f64::INFINITY, f64::min),
        trials: outcomes.len(),
        undefined: outcomes.iter().filter(|t| t.exact == Ratio::Undefined).count(),
        violations: outcomes.iter().filter(|t| t.violates_bound()).count(),
        violations_within_l: outcomes
            .iter()
            .filter(|t| matches!(t.exact, Ratio::Value(g) if g < t.bound_within_l() - VIOLATION_SLACK))
            .count(),
        violations_spectral: outcomes
            .iter()
            .filter(|t| matches!(t.exact, Ratio::Value(g) if g < t.spectral_bound() - VIOLATION_SLACK))
            .count(),
    }
}

impl GammaReport {
    /// Aligned text table, one row per grid cell.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undef".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "{:>5} {:>10} {:>10} {:>10} {:>10} {:>7} {:>6} {:>6}\n",
            "k", "beta", "g_exact", "g_closed", "bound", "trials", "undef", "viol"
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{:>5} {:>10} {:>10} {:>10} {:>10.4} {:>7} {:>6} {:>6}\n",
                c.k,
                c.beta,
                fmt(c.gamma_min_exact),
                fmt(c.gamma_min_closed),
                c.bound_min,
                c.trials,
                c.undefined,
                c.violations
            ));
        }
        out
    }
}
