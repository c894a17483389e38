//! Probability tools: Paley-Zygmund, a fourth-moment square function
//! comparison, conditional chaining of events, and Orlicz norms.

pub mod distribution;
pub mod martingale;
pub mod orlicz;
pub mod suite;

pub use distribution::{paley_zygmund_bound, pz2_check, FiniteDistribution, Pz2Report, PzReport};
pub use martingale::{
    cond_indep_lower_bound, lp_fourth_moment_check, CondIndepReport, DyadicMartingale, EventChain, Hypothesis,
    LpReport,
};
pub use orlicz::{orlicz_norm, orlicz_norm_weighted, read_samples, OrliczReport};
pub use suite::{run_lemma_suites, SuiteReport, SuiteResult};
