//! Decision-theoretic Bayesian subgroup finding for randomized trials with
//! censored time-to-event efficacy and binary toxicity outcomes.
//!
//! The pipeline: log event times are modeled with an accelerated failure
//! time regression whose mean function is a Bayesian sum-of-trees ensemble
//! and whose residual distribution carries a median-zero Pólya-tree prior;
//! toxicity gets a sum-of-trees probit. Posterior predictive treatment
//! effects feed a utility over a finite space of candidate subgroup
//! reports, and the report is the top five actions by expected utility. A
//! simulation harness generates the scenario battery used to calibrate the
//! utility's tuning constants and to measure frequentist operating
//! characteristics.
//!
//! See the `book/` guide at the repository root for a narrative tour, and
//! the `popfind` binary for the command-line surface.

pub mod actions;
pub mod aft;
pub mod bart;
pub mod cli;
pub mod data;
pub mod decision;
pub mod polya;
pub mod report;
pub mod sim;
pub mod stats;
pub mod tox;

mod book;
