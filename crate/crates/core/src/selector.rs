//! Greedy relevance + diversity selection (LITE) and its kernelized form (KITE).
//!
//! Each step picks the unselected candidate `x` maximizing
//!
//! ```text
//! total(x) = rel(x) + λ·div(x)
//! rel(x)   = (xᵀV⁻¹z)² / (1 + xᵀV⁻¹x)
//! div(x)   = log(1 + xᵀV⁻¹x)
//! ```
//!
//! with `V = βI + Σ_{s∈S} x_s x_sᵀ`. In a reproducing kernel Hilbert space
//! the same rule reads, with `k_S` the residual kernel of [`crate::kernels`],
//!
//! ```text
//! rel(x) = k_S(z, x)² / (β (β + k_S(x, x)))
//! div(x) = log(1 + k_S(x, x) / β)
//! ```
//!
//! which reproduces the linear rule exactly when `k(x, y) = xᵀy`.
//!
//! Two backends implement the loop. The design backend keeps `V⁻¹` (`d×d`)
//! and is used for the linear kernel in low dimension; the kernel backend
//! keeps a Cholesky factor of `K_S + βI` (`|S|×|S|`) and works for any
//! kernel. Both cache per-candidate quadratic forms and downdate them after
//! every selection, so a step costs `O(n·d)` plus one pass of kernel
//! evaluations.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{dot, EmbeddingBank};
use crate::error::{check_dim, Error, Result};
use crate::kernels::{clamp_residual, KernelSpec, KernelState};
use crate::linalg::DesignState;

/// Which state representation drives the greedy loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Design backend for the linear kernel when `d ≤ 4k`, kernel backend otherwise.
    #[default]
    Auto,
    Design,
    Kernel,
}

/// How kernel-path scores are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelScaling {
    /// `k_S(z,x)² / (β(β + k_S(x,x)))` and `log(1 + k_S(x,x)/β)`; identical
    /// to the linear rule for the linear kernel.
    #[default]
    Exact,
    /// `k_S(z,x)² / (β + k_S(x,x))` and `log(β + k_S(x,x))`, the unnormalized
    /// form. Only the relative weight of `λ` differs from `Exact`.
    Unnormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k: usize,
    pub beta: f64,
    pub lambda: f64,
    pub kernel: KernelSpec,
    /// L2-normalize bank rows and the query before scoring.
    #[serde(default)]
    pub normalize_inputs: bool,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub scaling: KernelScaling,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k: 50,
            beta: 0.02,
            lambda: 0.5,
            kernel: KernelSpec::Linear,
            normalize_inputs: false,
            backend: Backend::Auto,
            scaling: KernelScaling::Exact,
        }
    }
}

impl SelectionConfig {
    pub fn new(k: usize, beta: f64, lambda: f64, kernel: KernelSpec) -> Self {
        Self {
            k,
            beta,
            lambda,
            kernel,
            ..Self::default()
        }
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        self.kernel.validate()?;
        if self.backend == Backend::Design && !self.kernel.is_linear() {
            return Err(Error::invalid("the design backend only supports the linear kernel"));
        }
        if self.backend == Backend::Design && self.scaling != KernelScaling::Exact {
            return Err(Error::invalid("unnormalized scaling requires the kernel backend"));
        }
        Ok(())
    }

    fn resolve_backend(&self, d: usize, steps: usize) -> Backend {
        match self.backend {
            Backend::Auto => {
                if self.kernel.is_linear() && self.scaling == KernelScaling::Exact && d <= 4 * steps {
                    Backend::Design
                } else {
                    Backend::Kernel
                }
            }
            b => b,
        }
    }
}

/// Scores of one candidate at one greedy step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub rel: f64,
    pub div: f64,
    pub total: f64,
}

impl Score {
    fn new(rel: f64, div: f64, lambda: f64) -> Self {
        Self {
            rel,
            div,
            total: rel + lambda * div,
        }
    }
}

/// One committed greedy step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    #[serde(with = "lossless_f64")]
    pub rel: f64,
    #[serde(with = "lossless_f64")]
    pub div: f64,
    #[serde(with = "lossless_f64")]
    pub total: f64,
}

// JSON has no infinities; those are written as the strings "inf" / "-inf" / "nan".
mod lossless_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("invalid number `{other}`"))),
            },
        }
    }
}

/// Effective configuration echoed in every result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    Kite(SelectionConfig),
    Random { k: usize, seed: u64 },
    Dense { k: usize, similarity: crate::baselines::Similarity },
    Dpp(crate::baselines::DppConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected bank rows in selection order.
    pub indices: Vec<usize>,
    pub steps: Vec<Step>,
    pub config: MethodConfig,
    /// Backend that ran the greedy loop, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<Backend>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub wall_time_secs: f64,
}

/// Borrowed selection state for [`score_candidate`].
#[derive(Debug, Clone, Copy)]
pub enum ScoringState<'a> {
    Design(&'a DesignState),
    Kernel(&'a KernelState, &'a EmbeddingBank),
}

/// Scores candidate `x` for query `z` from scratch, without any caching.
///
/// This is the reference formula; [`select`] computes the same numbers
/// incrementally.
pub fn score_candidate(
    state: ScoringState<'_>,
    z: &[f64],
    x: &[f64],
    config: &SelectionConfig,
) -> Result<Score> {
    match state {
        ScoringState::Design(ds) => {
            let zx = ds.quad_form(x, z)?;
            let (_, xx) = ds.self_quad(x)?;
            Ok(Score::new(zx * zx / (1.0 + xx), xx.ln_1p(), config.lambda))
        }
        ScoringState::Kernel(ks, bank) => {
            check_dim(z.len(), x.len(), "query and candidate")?;
            let zx = ks.residual_kernel(bank, z, x)?;
            let xx = ks.residual_kernel(bank, x, x)?;
            Ok(kernel_score(zx, xx, ks.beta(), config))
        }
    }
}

#[inline]
fn kernel_score(zx: f64, xx: f64, beta: f64, config: &SelectionConfig) -> Score {
    match config.scaling {
        KernelScaling::Exact => Score::new(
            zx * zx / (beta * (beta + xx)),
            (xx / beta).ln_1p(),
            config.lambda,
        ),
        KernelScaling::Unnormalized => {
            Score::new(zx * zx / (beta + xx), (beta + xx).ln(), config.lambda)
        }
    }
}

pub(crate) fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

/// Greedy selection of `min(k, n)` candidates for query `z`.
///
/// Deterministic; ties go to the lowest candidate index.
pub fn select(bank: &EmbeddingBank, z: &[f64], config: &SelectionConfig) -> Result<SelectionResult> {
    config.validate()?;
    check_dim(bank.dim(), z.len(), "query")?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("query has non-finite entries"));
    }
    let start = Instant::now();

    let normalized_bank;
    let normalized_z;
    let (bank, z) = if config.normalize_inputs {
        let rows: Vec<Vec<f64>> = bank.rows().map(normalized).collect();
        normalized_bank = EmbeddingBank::from_rows(&rows)?;
        normalized_z = normalized(z);
        (&normalized_bank, normalized_z.as_slice())
    } else {
        (bank, z)
    };

    let n = bank.len();
    let steps = config.k.min(n);
    let mut warnings = Vec::new();
    if config.k > n {
        warnings.push(format!(
            "requested k={} exceeds bank size {n}; selecting all candidates",
            config.k
        ));
    }
    let backend = config.resolve_backend(bank.dim(), steps);
    let recorded = match backend {
        Backend::Design => run_design(bank, z, config, steps)?,
        _ => run_kernel(bank, z, config, steps)?,
    };
    Ok(SelectionResult {
        indices: recorded.iter().map(|s| s.index).collect(),
        steps: recorded,
        config: MethodConfig::Kite(*config),
        backend: Some(backend),
        warnings,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs [`select`] for every row of `queries`, in parallel, preserving order.
pub fn select_many(
    bank: &EmbeddingBank,
    queries: &EmbeddingBank,
    config: &SelectionConfig,
) -> Result<Vec<SelectionResult>> {
    (0..queries.len())
        .into_par_iter()
        .map(|q| select(bank, queries.row(q), config))
        .collect()
}

fn argmax(scores: &[Score], available: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if !available[i] {
            continue;
        }
        match best {
            Some((_, b)) if !(s.total > b) => {}
            _ => best = Some((i, s.total)),
        }
    }
    best.map(|(i, _)| i)
}

fn run_design(
    bank: &EmbeddingBank,
    z: &[f64],
    config: &SelectionConfig,
    steps: usize,
) -> Result<Vec<Step>> {
    let n = bank.len();
    let mut state = DesignState::new(bank.dim(), config.beta)?;
    let mut available = vec![true; n];
    // xᵀV⁻¹x per candidate, downdated after each selection
    let mut self_quad: Vec<f64> = bank.rows().map(|x| dot(x, x) / config.beta).collect();
    let mut scores = vec![Score::new(0.0, 0.0, 0.0); n];
    let mut out = Vec::with_capacity(steps);

    for _ in 0..steps {
        let p = state.apply(z)?;
        let p = p.as_slice();
        for (i, x) in bank.rows().enumerate() {
            if available[i] {
                let zx = dot(x, p);
                let xx = self_quad[i];
                scores[i] = Score::new(zx * zx / (1.0 + xx), xx.ln_1p(), config.lambda);
            }
        }
        let best = argmax(&scores, &available).expect("steps <= n");
        let s = scores[best];
        out.push(Step {
            index: best,
            rel: s.rel,
            div: s.div,
            total: s.total,
        });
        available[best] = false;

        let xb = bank.row(best);
        let u = state.apply(xb)?;
        let denom = 1.0 + dot(xb, u.as_slice());
        state.rank_one_update(xb)?;
        for (i, x) in bank.rows().enumerate() {
            if available[i] {
                let a = dot(x, u.as_slice());
                self_quad[i] = clamp_residual(self_quad[i] - a * a / denom)?;
            }
        }
    }
    Ok(out)
}

fn run_kernel(
    bank: &EmbeddingBank,
    z: &[f64],
    config: &SelectionConfig,
    steps: usize,
) -> Result<Vec<Step>> {
    let n = bank.len();
    let spec = config.kernel;
    let beta = config.beta;
    let mut state = KernelState::new(spec, beta)?;
    let mut available = vec![true; n];

    // residual self-kernels k_S(x,x) and cross terms k_S(z,x)
    let mut res_xx: Vec<f64> = bank
        .rows()
        .map(|x| clamp_residual(spec.eval_unchecked(x, x)))
        .collect::<Result<_>>()?;
    let mut res_zx: Vec<f64> = bank.rows().map(|x| spec.eval_unchecked(z, x)).collect();
    // L⁻¹k_S(x) per candidate, row-major with stride `steps`
    let mut proj = vec![0.0; n * steps];
    let mut proj_z = Vec::with_capacity(steps);
    let mut scores = vec![Score::new(0.0, 0.0, 0.0); n];
    let mut out = Vec::with_capacity(steps);

    for t in 0..steps {
        for i in 0..n {
            if available[i] {
                scores[i] = kernel_score(res_zx[i], res_xx[i], beta, config);
            }
        }
        let best = argmax(&scores, &available).expect("steps <= n");
        let s = scores[best];
        out.push(Step {
            index: best,
            rel: s.rel,
            div: s.div,
            total: s.total,
        });
        available[best] = false;
        if t + 1 == steps {
            break;
        }

        state.extend(bank, best)?;
        let row = state.chol_row(t);
        let (r, pivot) = (&row[..t], row[t]);
        let xb = bank.row(best);
        let ez = (spec.eval_unchecked(z, xb) - dot(&proj_z, r)) / pivot;
        proj_z.push(ez);
        for (i, x) in bank.rows().enumerate() {
            if !available[i] {
                continue;
            }
            let pi = &mut proj[i * steps..i * steps + t + 1];
            let e = (spec.eval_unchecked(x, xb) - dot(&pi[..t], r)) / pivot;
            pi[t] = e;
            res_xx[i] = clamp_residual(res_xx[i] - e * e)?;
            res_zx[i] -= ez * e;
        }
    }
    Ok(out)
}
