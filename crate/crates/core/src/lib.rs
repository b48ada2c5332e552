//! Query-specific exemplar selection.
//!
//! Given a bank of candidate embeddings and a query `z`, [`select`] greedily
//! picks `k` rows maximizing a relevance term, which measures how much a row
//! shrinks the ridge-regression uncertainty in the direction of `z`, plus
//! `λ` times a log-determinant diversity term. With a linear kernel the rule
//! runs in feature space by rank-one inverse updates ([`DesignState`]);
//! other kernels run on a growing Cholesky factor of the regularized Gram
//! matrix ([`KernelState`]). Both paths produce the same selections on linear
//! inputs.
//!
//! Around the selector sit the usual comparison points ([`baselines`]), a
//! Monte-Carlo estimator of the submodularity ratio ([`analysis`]), a
//! synthetic linear-regression benchmark ([`synth`]), and file formats plus a
//! command line ([`io`], [`cli`]).
//!
//! ```
//! use kite::{select, EmbeddingBank, KernelSpec, SelectionConfig};
//!
//! let bank = EmbeddingBank::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
//! let config = SelectionConfig::new(1, 1.0, 0.0, KernelSpec::Linear);
//! let result = select(&bank, &[1.0, 0.0], &config).unwrap();
//! assert_eq!(result.indices, vec![0]);
//! ```

pub mod analysis;
pub mod bank;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod selector;
pub mod synth;

#[cfg(test)]
mod testutil;

pub use analysis::{estimate_gamma_min, gamma_closed_form, gamma_exact, GammaReport, Ratio};
pub use bank::EmbeddingBank;
pub use baselines::{select_dense_topk, select_dpp_greedy, select_random, DppConfig, Similarity};
pub use error::{Error, Result};
pub use io::{load_bank, BankFormat, RunRecord};
pub use kernels::{KernelSpec, KernelState};
pub use linalg::DesignState;
pub use selector::{select, select_many, Backend, KernelScaling, SelectionConfig, SelectionResult, Step};
pub use synth::{run_sweep, SynthConfig, SynthReport};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/selection.md")]
    pub mod selection {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    pub mod kernels {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    pub mod analysis {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    pub mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
