//! Bayesian DAG selection for linear structural equation models whose errors
//! are Gaussian scale mixtures.
//!
//! Inference runs under a Laplace-error working model. Marginal likelihoods
//! come from importance sampling and DAG priors can penalise edge count. The
//! crate also provides the graphical machinery (CPDAGs, restricted CPDAGs,
//! distribution-equivalence classes) and a Monte Carlo oracle for the
//! risk-based identifiability classes.

// `!(x > 0.0)` style checks deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod catalog;
pub mod equivalence;
pub mod error;
pub mod graph;
pub mod harness;
pub mod lad;
pub mod oracle;
pub mod rng;
pub mod scm;
pub mod working;

pub use bayes::{
    bayes_factor, class_posterior, compute_dn, dag_log_prior, importance_marginal, posterior_share,
    posterior_table, DagPriorSpec, MarginalEstimate, PosteriorTable, PriorSpec,
};
pub use equivalence::{
    ancestral_restriction_holds, cpdag, distribution_equivalence_class, markov_class,
    markov_equivalent, res_cpdag, Pdag,
};
pub use error::{Error, Result};
pub use graph::{
    enumerate_dags, total_effects, CausalOrder, Dag, EdgeCoefficients, NodeSet, TotalEffects,
};
pub use scm::{Dataset, MixingLaw, ScmSpec};
pub use working::{
    fit_lad, laplace_log_marginal, log_likelihood, population_risk, RiskEstimate, WorkingFit,
};
