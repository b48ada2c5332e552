//! Kernel functions and the residual kernel over a growing selected set.
//!
//! For a selected set `S` with Gram matrix `K_S` the residual kernel is
//!
//! ```text
//! k_S(a, b) = k(a, b) − k_S(a)ᵀ (K_S + βI)⁻¹ k_S(b)
//! ```
//!
//! where `k_S(a) = [k(a, x_s)]_{s∈S}`. [`KernelState`] keeps a lower
//! triangular factor `L` with `LLᵀ = K_S + βI`, grown by one row per
//! selection, and evaluates the projection term with forward substitution.
//! Dividing the residual by `β` gives the feature-space quadratic form
//! `φ(a)ᵀ V_φ⁻¹ φ(b)`; for the linear kernel that is exactly `aᵀV⁻¹b`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bank::{dot, sq_dist, EmbeddingBank};
use crate::error::{check_dim, Error, Result};

/// Slack below zero tolerated for residual self-kernels and pivots.
pub const NEGATIVE_SLACK: f64 = 1e-9;

/// Which kernel to use, with its hyperparameters.
///
/// Textual form (used by the CLI and in serialized configs):
/// `linear`, `poly:c=<real>,m=<int>`, `rbf:sigma=<real>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KernelSpec {
    /// `xᵀy`
    Linear,
    /// `(xᵀy + c)^m`
    Polynomial { c: f64, degree: u32 },
    /// `exp(−‖x − y‖² / 2σ²)`
    Gaussian { sigma: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Linear
    }
}

impl KernelSpec {
    pub fn polynomial(c: f64, degree: u32) -> Result<Self> {
        if degree == 0 {
            return Err(Error::invalid("polynomial degree must be at least 1"));
        }
        if !c.is_finite() {
            return Err(Error::invalid("polynomial offset must be finite"));
        }
        Ok(KernelSpec::Polynomial { c, degree })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(KernelSpec::Gaussian { sigma })
    }

    /// Re-checks parameters of a spec built by struct literal.
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { c, degree } => Self::polynomial(c, degree).map(|_| ()),
            KernelSpec::Gaussian { sigma } => Self::gaussian(sigma).map(|_| ()),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, KernelSpec::Linear)
    }

    /// `k(x, y)` without dimension checks.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Polynomial { c, degree } => {
                let base = dot(x, y) + c;
                base.powi(degree as i32)
            }
            KernelSpec::Gaussian { sigma } => (-sq_dist(x, y) / (2.0 * sigma * sigma)).exp(),
        }
    }

    /// `k(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len(), "kernel arguments")?;
        Ok(self.eval_unchecked(x, y))
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { c, degree } => write!(f, "poly:c={c},m={degree}"),
            KernelSpec::Gaussian { sigma } => write!(f, "rbf:sigma={sigma}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, params) = match s.split_once(':') {
            Some((k, p)) => (k, p),
            None => (s, ""),
        };
        let mut c = 1.0;
        let mut degree = 3u32;
        let mut sigma = 1.0;
        for kv in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("kernel parameter `{kv}` is not key=value")))?;
            let bad = || Error::invalid(format!("bad value for kernel parameter `{key}`: `{value}`"));
            match (kind, key.trim()) {
                ("poly", "c") => c = value.trim().parse().map_err(|_| bad())?,
                ("poly", "m") => degree = value.trim().parse().map_err(|_| bad())?,
                ("rbf", "sigma") => sigma = value.trim().parse().map_err(|_| bad())?,
                _ => {
                    return Err(Error::invalid(format!(
                        "unknown parameter `{key}` for kernel `{kind}`"
                    )))
                }
            }
        }
        match kind {
            "linear" if params.is_empty() => Ok(KernelSpec::Linear),
            "linear" => Err(Error::invalid("the linear kernel takes no parameters")),
            "poly" => KernelSpec::polynomial(c, degree),
            "rbf" => KernelSpec::gaussian(sigma),
            other => Err(Error::invalid(format!(
                "unknown kernel `{other}` (expected linear, poly:c=..,m=.., rbf:sigma=..)"
            ))),
        }
    }
}

impl TryFrom<String> for KernelSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<KernelSpec> for String {
    fn from(k: KernelSpec) -> String {
        k.to_string()
    }
}

/// Grow-by-one Cholesky factor of `K_S + βI` over the selected bank rows.
#[derive(Debug, Clone)]
pub struct KernelState {
    spec: KernelSpec,
    beta: f64,
    selected: Vec<usize>,
    // packed lower triangle, row i occupies [i(i+1)/2, i(i+1)/2 + i]
    chol: Vec<f64>,
}

impl KernelState {
    pub fn new(spec: KernelSpec, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        Ok(Self {
            spec,
            beta,
            selected: Vec::new(),
            chol: Vec::new(),
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Row `i` of the factor (`i + 1` entries, diagonal last).
    pub fn chol_row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.chol[start..start + i + 1]
    }

    /// The factor as a dense lower-triangular matrix.
    pub fn chol_dense(&self) -> nalgebra::DMatrix<f64> {
        let m = self.len();
        let mut out = nalgebra::DMatrix::zeros(m, m);
        for i in 0..m {
            for (j, v) in self.chol_row(i).iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }

    /// `L⁻¹ k_S(a)`.
    pub fn project(&self, bank: &EmbeddingBank, a: &[f64]) -> Result<Vec<f64>> {
        check_dim(bank.dim(), a.len(), "residual kernel argument")?;
        let mut out = Vec::with_capacity(self.len());
        for (i, &s) in self.selected.iter().enumerate() {
            let k = self.spec.eval_unchecked(a, bank.row(s));
            let row = self.chol_row(i);
            let acc = dot(&row[..i], &out);
            out.push((k - acc) / row[i]);
        }
        Ok(out)
    }

    /// `k_S(a, b)`. When `a` and `b` are the same vector the result is a
    /// residual variance: values in `[-1e-9, 0)` are clamped to zero and
    /// anything more negative is a degeneracy error.
    pub fn residual_kernel(&self, bank: &EmbeddingBank, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim(a.len(), b.len(), "residual kernel arguments")?;
        let pa = self.project(bank, a)?;
        if a == b {
            return clamp_residual(self.spec.eval_unchecked(a, a) - dot(&pa, &pa));
        }
        let pb = self.project(bank, b)?;
        Ok(self.spec.eval_unchecked(a, b) - dot(&pa, &pb))
    }

    /// Appends bank row `idx` to the selected set, growing the factor by one row.
    pub fn extend(&mut self, bank: &EmbeddingBank, idx: usize) -> Result<()> {
        if idx >= bank.len() {
            return Err(Error::invalid(format!("candidate index {idx} out of range")));
        }
        if self.selected.contains(&idx) {
            return Err(Error::invalid(format!("candidate {idx} is already selected")));
        }
        let x = bank.row(idx);
        let r = self.project(bank, x)?;
        let pivot_sq = self.spec.eval_unchecked(x, x) + self.beta - dot(&r, &r);
        if !(pivot_sq > 0.0) {
            return Err(Error::degenerate(format!(
                "kernel matrix is not positive definite for beta={} (pivot² = {pivot_sq:e} at candidate {idx})",
                self.beta
            )));
        }
        self.chol.extend_from_slice(&r);
        self.chol.push(pivot_sq.sqrt());
        self.selected.push(idx);
        Ok(())
    }
}

pub(crate) fn clamp_residual(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEGATIVE_SLACK {
        Ok(0.0)
    } else {
        Err(Error::degenerate(format!(
            "residual self-kernel is negative ({v:e})"
        )))
    }
}
