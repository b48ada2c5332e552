//! Incrementally maintained inverse of the regularized design matrix
//! `V = βI + Σ xᵢxᵢᵀ`.
//!
//! Every selection and analysis rule in the crate reduces to quadratic forms
//! `aᵀV⁻¹b`, so the inverse is kept explicitly and refreshed by a rank-one
//! Sherman–Morrison step whenever a vector joins the selected set:
//!
//! ```text
//! V⁻¹ ← V⁻¹ − (V⁻¹x)(V⁻¹x)ᵀ / (1 + xᵀV⁻¹x)
//! ```
//!
//! The matrix is re-symmetrized after each step. There is no periodic
//! re-inversion; callers that need a hard drift bound should compare against
//! a direct inverse (the test suite does).

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone)]
pub struct DesignState {
    beta: f64,
    inv: DMatrix<f64>,
    count: usize,
}

impl DesignState {
    /// `V⁻¹ = I/β`, no updates applied.
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("design dimension must be at least 1"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        Ok(Self {
            beta,
            inv: DMatrix::from_diagonal_element(dim, dim, 1.0 / beta),
            count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.inv.nrows()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of rank-one updates applied so far.
    pub fn count(&self) -> usize {
        self.count
    }

    /// The maintained `V⁻¹`.
    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inv
    }

    /// `V⁻¹a`.
    pub fn apply(&self, a: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim(), a.len(), "design apply")?;
        Ok(self.apply_unchecked(a))
    }

    fn apply_unchecked(&self, a: &[f64]) -> DVector<f64> {
        let d = self.dim();
        // V⁻¹ is symmetric, so walking columns gives the same result as rows
        let mut out = DVector::zeros(d);
        for (j, &aj) in a.iter().enumerate() {
            if aj != 0.0 {
                out.axpy(aj, &self.inv.column(j), 1.0);
            }
        }
        out
    }

    /// `aᵀV⁻¹b`.
    pub fn quad_form(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim(self.dim(), a.len(), "quad_form lhs")?;
        check_dim(self.dim(), b.len(), "quad_form rhs")?;
        let vb = self.apply_unchecked(b);
        Ok(a.iter().zip(vb.iter()).map(|(x, y)| x * y).sum())
    }

    /// `xᵀV⁻¹x`, failing if positive definiteness has been lost.
    pub(crate) fn self_quad(&self, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        check_dim(self.dim(), x.len(), "design vector")?;
        let u = self.apply_unchecked(x);
        let q: f64 = x.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        if q <= 0.0 && x.iter().any(|v| *v != 0.0) {
            return Err(Error::degenerate(format!(
                "inverse design matrix lost positive definiteness (xᵀV⁻¹x = {q:e})"
            )));
        }
        Ok((u, q))
    }

    /// Sherman–Morrison step adding `xxᵀ` to `V`.
    pub fn rank_one_update(&mut self, x: &[f64]) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("update vector has non-finite entries"));
        }
        let (u, q) = self.self_quad(x)?;
        let scale = 1.0 / (1.0 + q);
        self.inv.ger(-scale, &u, &u, 1.0);
        symmetrize(&mut self.inv);
        self.count += 1;
        Ok(())
    }

    /// `log det(V + xxᵀ) − log det(V) = log(1 + xᵀV⁻¹x)`.
    pub fn log_det_increment(&self, x: &[f64]) -> Result<f64> {
        let (_, q) = self.self_quad(x)?;
        Ok(q.ln_1p())
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}
