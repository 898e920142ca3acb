//! Adaptive importance sampling for finite-sum stochastic optimization.
//!
//! The library is organized around one idea: when running SGD or SGLD on
//! `f(x) = sum_i f_i(x)`, the sampling distribution over component indices
//! can be adapted online using the last-observed gradient norms, and the
//! per-round optimal distribution over a shrinking restricted simplex has a
//! closed form that supports `O(log^2 N)` incremental sampling.
//!
//! Module map:
//!
//! * [`simplex_opt`] — exact closed-form minimizer of `sum_i a_i^2 / p_i`
//!   over the restricted simplex `{p : p_i >= eps, sum p = 1}`, plus a KKT
//!   certificate checker and the full-simplex baseline.
//! * [`sampler`] — the incremental sampler: an order-statistic tree over
//!   gradient norms with cumulative sums, supporting update/sample in
//!   polylogarithmic tree work.
//! * [`schedules`] — exploration floors `eps_t` and step sizes `alpha_t`.
//! * [`estimators`] — unbiased gradient estimators (single draw, minibatch
//!   with replacement, minibatch without replacement) and an exhaustive
//!   enumeration oracle for their moments.
//! * [`problems`] — regularized logistic / softmax finite sums, synthetic
//!   data generation, and a full-batch reference minimizer.
//! * [`drivers`] — SGD/SGLD loops wiring samplers, estimators, and
//!   schedules together with per-step instrumentation.
//! * [`metrics`] — sampling cost, dynamic regret, relative error, and the
//!   summary ratios used to size the potential gain on a dataset.
//! * [`data_io`] — LIBSVM/CSV ingestion and trace/summary serialization.
//! * [`experiment`] — multi-seed benchmark orchestration used by the
//!   `avare-bench` binary.

pub mod data_io;
pub mod drivers;
pub mod estimators;
pub mod experiment;
pub mod metrics;
pub mod problems;
pub mod rng;
pub mod sampler;
pub mod schedules;
pub mod simplex_opt;
