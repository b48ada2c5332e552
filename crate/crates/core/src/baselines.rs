//! Reference selectors: uniform random, dense top-k, and greedy DPP MAP.
//!
//! The DPP baseline is query conditioned. With similarity kernel
//! `S_ij = k(x_i, x_j)` and quality `q_i = exp(sim(x_i, z)/τ)` it greedily
//! grows the set maximizing `log det L_Y` for `L = diag(q)·S·diag(q)`.
//! The log-det increment of adding `i` factors as
//!
//! ```text
//! log(q_i² · s_i) = 2·log q_i + log s_i
//! ```
//!
//! with `s_i` the conditional variance of `S` at `i` given the selected set,
//! which is what the steps record as `rel` and `div` respectively.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{dot, EmbeddingBank};
use crate::error::{check_dim, Error, Result};
use crate::kernels::{KernelSpec, NEGATIVE_SLACK};
use crate::selector::{MethodConfig, SelectionResult, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Cosine,
    Dot,
}

impl Similarity {
    /// Cosine against a zero-norm vector is `-inf`.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match self {
            Similarity::Dot => dot(x, z),
            Similarity::Cosine => {
                let nx = dot(x, x).sqrt();
                let nz = dot(z, z).sqrt();
                if nx == 0.0 || nz == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    dot(x, z) / (nx * nz)
                }
            }
        }
    }
}

impl std::str::FromStr for Similarity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Similarity::Cosine),
            "dot" => Ok(Similarity::Dot),
            o => Err(Error::invalid(format!("unknown similarity `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DppConfig {
    pub k: usize,
    pub kernel: KernelSpec,
    /// Quality temperature `τ`.
    pub temperature: f64,
    pub similarity: Similarity,
}

impl DppConfig {
    pub fn new(k: usize, kernel: KernelSpec) -> Self {
        Self {
            k,
            kernel,
            temperature: 1.0,
            similarity: Similarity::Cosine,
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(())
}

fn plain_step(index: usize, score: f64) -> Step {
    Step {
        index,
        rel: score,
        div: 0.0,
        total: score,
    }
}

/// `min(k, n)` distinct indices drawn uniformly without replacement.
pub fn select_random(bank: &EmbeddingBank, k: usize, seed: u64) -> Result<SelectionResult> {
    check_k(k)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, bank.len(), k.min(bank.len())).into_vec();
    Ok(SelectionResult {
        steps: indices.iter().map(|&i| plain_step(i, 0.0)).collect(),
        indices,
        config: MethodConfig::Random { k, seed },
        backend: None,
        warnings: Vec::new(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// The `k` most similar candidates to `z`, most similar first, ties to the
/// lowest index.
pub fn select_dense_topk(
    bank: &EmbeddingBank,
    z: &[f64],
    k: usize,
    similarity: Similarity,
) -> Result<SelectionResult> {
    check_k(k)?;
    check_dim(bank.dim(), z.len(), "query")?;
    let start = Instant::now();
    let sims: Vec<f64> = bank.rows().map(|x| similarity.eval(x, z)).collect();
    let mut order: Vec<usize> = (0..bank.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(SelectionResult {
        steps: order.iter().map(|&i| plain_step(i, sims[i])).collect(),
        indices: order,
        config: MethodConfig::Dense { k, similarity },
        backend: None,
        warnings: Vec::new(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Conditional variances below this fraction of `k(x, x)` count as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Greedy MAP for the query-conditioned DPP described in the module docs.
pub fn select_dpp_greedy(bank: &EmbeddingBank, z: &[f64], config: &DppConfig) -> Result<SelectionResult> {
    check_k(config.k)?;
    check_dim(bank.dim(), z.len(), "query")?;
    config.kernel.validate()?;
    if !(config.temperature > 0.0 && config.temperature.is_finite()) {
        return Err(Error::invalid("DPP temperature must be positive"));
    }
    let start = Instant::now();
    let n = bank.len();
    let steps = config.k.min(n);
    let spec = config.kernel;

    let log_q2: Vec<f64> = bank
        .rows()
        .map(|x| {
            let s = config.similarity.eval(x, z);
            // zero-norm rows get the lowest finite quality
            let s = if s.is_finite() { s } else { -1.0 };
            2.0 * s / config.temperature
        })
        .collect();
    let diag: Vec<f64> = bank.rows().map(|x| spec.eval_unchecked(x, x)).collect();
    let mut cond_var = diag.clone();
    let mut proj = vec![0.0; n * steps];
    let mut available = vec![true; n];
    // number of selected items that extended the factor
    let mut rank = 0usize;
    let mut out = Vec::with_capacity(steps);
    let mut warnings = Vec::new();

    for _ in 0..steps {
        let mut best: Option<(usize, f64, f64)> = None;
        for i in 0..n {
            if !available[i] {
                continue;
            }
            let v = cond_var[i];
            if v < -NEGATIVE_SLACK {
                return Err(Error::degenerate(format!(
                    "DPP conditional variance is negative ({v:e}) at candidate {i}"
                )));
            }
            let div = if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
            let total = log_q2[i] + div;
            match best {
                Some((_, _, b)) if !(total > b) => {}
                _ => best = Some((i, div, total)),
            }
        }
        let (j, div, total) = best.expect("steps <= n");
        available[j] = false;
        out.push(Step {
            index: j,
            rel: log_q2[j],
            div,
            total,
        });
        if cond_var[j] <= 0.0 {
            warnings.push(format!(
                "candidate {j} has zero conditional variance; kernel rank exhausted"
            ));
            continue;
        }

        let t = rank;
        let pivot = cond_var[j].sqrt();
        let xj = bank.row(j);
        let pj: Vec<f64> = proj[j * steps..j * steps + t].to_vec();
        for (i, x) in bank.rows().enumerate() {
            if !available[i] {
                continue;
            }
            let pi = &mut proj[i * steps..i * steps + t + 1];
            let e = (spec.eval_unchecked(x, xj) - dot(&pi[..t], &pj)) / pivot;
            pi[t] = e;
            let v = cond_var[i] - e * e;
            // cancellation leaves rounding noise where the variance is really zero
            cond_var[i] = if v < RANK_TOLERANCE * diag[i] && v >= -NEGATIVE_SLACK { 0.0 } else { v };
        }
        rank += 1;
    }

    Ok(SelectionResult {
        indices: out.iter().map(|s| s.index).collect(),
        steps: out,
        config: MethodConfig::Dpp(*config),
        backend: None,
        warnings,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
