//! Run bookkeeping and evaluation metrics.
//!
//! The estimator's variance at step `t` is governed by the sampling cost
//! `c_t(p) = sum_i ||g_i^t||^2 / p_i` (an additive `-||g^t||^2` term is
//! constant in `p` and omitted throughout). Its unrestricted minimum over the
//! simplex is `(sum_i ||g_i^t||)^2`, attained at `p_i` proportional to
//! `||g_i^t||`. From these we derive:
//!
//! * cumulative dynamic regret — running sum of `c_t(p^t) - min_p c_t(p)`;
//! * relative error — `[c_t(p^t) - min_p c_t(p)] / min_p c_t(p)`;
//! * regret growth rate — least-squares slope of log cumulative regret
//!   against log t, the quantity the sampler is designed to keep sublinear;
//! * effectiveness ratios — `N * L_max / sum L_i` and
//!   `N * sum ||g_i*||^2 / (sum ||g_i*||)^2` at the minimizer, which predict
//!   how much importance sampling can help on a given problem.
//!
//! Cost and regret need all `N` per-example gradient norms each step, so they
//! are only recorded when a run uses full metrics mode; cheap mode leaves
//! those columns absent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{FiniteSumProblem, ProblemError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("cost is infinite: p[{index}] = 0 with a positive gradient norm")]
    InfiniteCost { index: usize },
    #[error("operation needs a full-metrics record; this run used cheap mode")]
    CheapMode,
    #[error("step t={t} is missing cost columns despite full metrics mode")]
    MissingCost { t: u64 },
    #[error("need at least {need} data points, got {got}")]
    InsufficientData { got: usize, need: usize },
    #[error("log-log fit impossible: value {value} at point {index} is not positive")]
    NonPositiveData { index: usize, value: f64 },
    #[error("all per-example gradients vanish at the minimizer")]
    DegenerateGradients,
    #[error("burn-in fraction {0} must lie in [0, 1)")]
    InvalidBurnIn(f64),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Whether a run records the expensive all-norms diagnostics each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsMode {
    /// Only what the optimizer itself needs: O(m·d) per step.
    Cheap,
    /// Additionally sweep all N per-example gradients each step (O(N·d))
    /// to record cost, optimal cost, regret, and suboptimality.
    Full,
}

/// One optimization step's log entries. Option columns are absent in cheap
/// mode (and `subopt` additionally requires a known optimal value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    /// 1-based step counter.
    pub t: u64,
    /// Step size used at this step.
    pub alpha: f64,
    /// Simplex floor passed to the sampler (absent for uniform sampling).
    pub eps: Option<f64>,
    /// Component indices drawn this step (not serialized to trace files).
    #[serde(skip)]
    pub indices: Vec<usize>,
    /// Sampling cost of the distribution actually used.
    pub cost: Option<f64>,
    /// Minimum possible sampling cost at this step.
    pub opt_cost: Option<f64>,
    /// Running sum of `cost - opt_cost`.
    pub cum_regret: Option<f64>,
    /// `f(x_t) - f(x*)` when the minimizer's value is known.
    pub subopt: Option<f64>,
    /// `(cost - opt_cost) / opt_cost`; absent when the optimal cost is zero.
    pub rel_err: Option<f64>,
    /// `||x_{t+1} - x_t||`.
    pub dx_norm: f64,
}

/// Complete log of one seeded run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    /// Digest of the generating configuration, for provenance checks.
    pub config_digest: String,
    pub mode: MetricsMode,
    pub steps: Vec<StepRow>,
    /// Wall-clock duration of the run. Kept in memory only — output files
    /// must be byte-identical across reruns of the same config+seed.
    pub wall_time_secs: f64,
}

impl RunRecord {
    /// Internal-consistency check: step counters are 1..=T, the regret
    /// column is non-negative and non-decreasing, and full mode filled the
    /// cost columns.
    pub fn validate(&self) -> Result<(), MetricsError> {
        let mut prev = 0.0;
        for (k, row) in self.steps.iter().enumerate() {
            if row.t != k as u64 + 1 {
                return Err(MetricsError::LengthMismatch {
                    left: row.t as usize,
                    right: k + 1,
                });
            }
            if self.mode == MetricsMode::Full {
                let cum = row
                    .cum_regret
                    .ok_or(MetricsError::MissingCost { t: row.t })?;
                if cum < prev - 1e-9 {
                    return Err(MetricsError::NonPositiveData {
                        index: k,
                        value: cum - prev,
                    });
                }
                prev = cum;
            }
        }
        Ok(())
    }
}

/// Sampling cost `sum_i norms_i^2 / p_i`. Zero-norm components contribute
/// nothing whatever their probability; a zero probability on a component
/// with positive norm makes the cost infinite and is reported as an error.
pub fn cost(p: &[f64], norms: &[f64]) -> Result<f64, MetricsError> {
    if p.len() != norms.len() {
        return Err(MetricsError::LengthMismatch {
            left: p.len(),
            right: norms.len(),
        });
    }
    let mut total = 0.0;
    for (index, (&pi, &ai)) in p.iter().zip(norms).enumerate() {
        if ai == 0.0 {
            continue;
        }
        if pi <= 0.0 {
            return Err(MetricsError::InfiniteCost { index });
        }
        total += ai * ai / pi;
    }
    Ok(total)
}

/// Minimum of the sampling cost over the whole simplex: `(sum_i norms_i)^2`.
pub fn optimal_cost(norms: &[f64]) -> f64 {
    let total: f64 = norms.iter().sum();
    total * total
}

fn full_cost_columns(record: &RunRecord) -> Result<Vec<(f64, f64)>, MetricsError> {
    if record.mode != MetricsMode::Full {
        return Err(MetricsError::CheapMode);
    }
    record
        .steps
        .iter()
        .map(|row| match (row.cost, row.opt_cost) {
            (Some(c), Some(o)) => Ok((c, o)),
            _ => Err(MetricsError::MissingCost { t: row.t }),
        })
        .collect()
}

/// Cumulative dynamic regret: the running sum of `c_t(p^t) - min_p c_t(p)`.
/// Requires a full-metrics record.
pub fn dynamic_regret(record: &RunRecord) -> Result<Vec<f64>, MetricsError> {
    let cols = full_cost_columns(record)?;
    let mut out = Vec::with_capacity(cols.len());
    let mut acc = 0.0;
    for (c, o) in cols {
        acc += c - o;
        out.push(acc);
    }
    Ok(out)
}

/// Per-step relative error `(c_t(p^t) - min_p c_t) / min_p c_t`; a step with
/// zero optimal cost (all gradients vanished) reports `None`.
pub fn relative_error(record: &RunRecord) -> Result<Vec<Option<f64>>, MetricsError> {
    let cols = full_cost_columns(record)?;
    Ok(cols
        .into_iter()
        .map(|(c, o)| if o > 0.0 { Some((c - o) / o) } else { None })
        .collect())
}

/// How much importance sampling can help on a problem, measured at the
/// minimizer `x*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessRatios {
    /// `N * max_i L_i / sum_i L_i` — spread of per-component smoothness.
    pub smoothness: f64,
    /// `N * sum_i ||g_i*||^2 / (sum_i ||g_i*||)^2` — the factor by which
    /// uniform sampling's cost exceeds the optimal cost at `x*`.
    pub variance: f64,
}

/// Compute both effectiveness ratios; each is >= 1 by Cauchy–Schwarz (with
/// equality when the per-component quantities are all equal). `tol` bounds
/// the gradient norm accepted from the inner minimizer solve.
pub fn effectiveness_ratios(
    prob: &FiniteSumProblem,
    tol: f64,
) -> Result<EffectivenessRatios, MetricsError> {
    let n = prob.len() as f64;
    let ls = prob.smoothness_constants();
    let l_max = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let l_sum: f64 = ls.iter().sum();

    let x_star = prob.solve_minimizer(tol)?;
    let mut sum_norm = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..prob.len() {
        let g = prob.per_example_gradient_norm(i, &x_star)?;
        sum_norm += g;
        sum_sq += g * g;
    }
    if sum_norm == 0.0 {
        return Err(MetricsError::DegenerateGradients);
    }
    Ok(EffectivenessRatios {
        smoothness: n * l_max / l_sum,
        variance: n * sum_sq / (sum_norm * sum_norm),
    })
}

/// Ordinary least squares of `ys` on `xs`; returns `(intercept, slope)`.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Least-squares slope of `log(cum_regret)` against `log(t)` after
/// discarding the first `burn_in` fraction of the sequence. A regret of
/// `A * t^s` yields `s`. Needs at least 100 post-burn-in points; a
/// non-positive regret value (e.g. an oracle run, whose regret is
/// identically zero) is reported as an error rather than fitted.
pub fn regret_slope(cum_regret: &[f64], burn_in: f64) -> Result<f64, MetricsError> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(MetricsError::InvalidBurnIn(burn_in));
    }
    let start = (cum_regret.len() as f64 * burn_in).ceil() as usize;
    let tail = &cum_regret[start.min(cum_regret.len())..];
    if tail.len() < 100 {
        return Err(MetricsError::InsufficientData {
            got: tail.len(),
            need: 100,
        });
    }
    let mut xs = Vec::with_capacity(tail.len());
    let mut ys = Vec::with_capacity(tail.len());
    for (k, &v) in tail.iter().enumerate() {
        if v <= 0.0 {
            return Err(MetricsError::NonPositiveData {
                index: start + k,
                value: v,
            });
        }
        xs.push(((start + k + 1) as f64).ln());
        ys.push(v.ln());
    }
    Ok(linear_fit(&xs, &ys).1)
}

/// Pointwise mean of the cumulative-regret columns across several records
/// (e.g. the same config under different seeds). All records must be full
/// mode and equal length.
pub fn mean_cumulative_regret(records: &[RunRecord]) -> Result<Vec<f64>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::InsufficientData { got: 0, need: 1 });
    }
    let len = records[0].steps.len();
    let mut acc = vec![0.0; len];
    for record in records {
        let reg = dynamic_regret(record)?;
        if reg.len() != len {
            return Err(MetricsError::LengthMismatch {
                left: reg.len(),
                right: len,
            });
        }
        for (a, v) in acc.iter_mut().zip(reg) {
            *a += v;
        }
    }
    let scale = 1.0 / records.len() as f64;
    for a in &mut acc {
        *a *= scale;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_synthetic, Dataset, FiniteSumProblem, ModelKind};
    use crate::rng::RngStream;
    use crate::sampler::WeightTable;
    use rand::Rng;

    fn assert_close(x: f64, y: f64, tol: f64) {
        assert!((x - y).abs() <= tol * y.abs().max(1.0), "{x} vs {y}");
    }

    /// Build a full-mode record with the given per-step (cost, opt) pairs.
    fn record_from_costs(pairs: &[(f64, f64)]) -> RunRecord {
        let mut cum = 0.0;
        let steps = pairs
            .iter()
            .enumerate()
            .map(|(k, &(c, o))| {
                cum += c - o;
                StepRow {
                    t: k as u64 + 1,
                    alpha: 0.1,
                    eps: Some(0.01),
                    indices: vec![0],
                    cost: Some(c),
                    opt_cost: Some(o),
                    cum_regret: Some(cum),
                    subopt: None,
                    rel_err: if o > 0.0 { Some((c - o) / o) } else { None },
                    dx_norm: 0.0,
                }
            })
            .collect();
        RunRecord {
            seed: 0,
            config_digest: "test".into(),
            mode: MetricsMode::Full,
            steps,
            wall_time_secs: 0.0,
        }
    }

    #[test]
    fn cost_examples() {
        assert_close(cost(&[1.0 / 3.0, 2.0 / 3.0], &[1.0, 2.0]).unwrap(), 9.0, 1e-12);
        // p proportional to the norms attains the optimum (sum a)^2.
        let a = [0.5, 1.5, 3.0];
        let total: f64 = a.iter().sum();
        let p: Vec<f64> = a.iter().map(|v| v / total).collect();
        assert_close(cost(&p, &a).unwrap(), total * total, 1e-12);
        assert_close(cost(&p, &a).unwrap(), optimal_cost(&a), 1e-12);
        // Uniform p gives N * sum a^2.
        let unif = vec![1.0 / 3.0; 3];
        let sq: f64 = a.iter().map(|v| v * v).sum();
        assert_close(cost(&unif, &a).unwrap(), 3.0 * sq, 1e-12);
    }

    #[test]
    fn cost_edge_cases() {
        // Zero norm tolerates zero probability...
        assert_eq!(cost(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), 4.0);
        // ...but a positive norm does not.
        assert!(matches!(
            cost(&[1.0, 0.0], &[2.0, 1.0]),
            Err(MetricsError::InfiniteCost { index: 1 })
        ));
        assert!(matches!(
            cost(&[1.0], &[1.0, 2.0]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn cost_agrees_with_solver_objective() {
        let mut rng = RngStream::new(4, 0);
        for _ in 0..200 {
            let n = rng.gen_range(1..8);
            let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 3.0).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.01).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            assert_close(
                cost(&p, &a).unwrap(),
                crate::simplex_opt::objective_value(&a, &p),
                1e-12,
            );
        }
    }

    #[test]
    fn restricted_solution_beats_random_feasible_points() {
        // The table's distribution minimizes the cost over the restricted
        // simplex: 10^3 random feasible q never do better.
        let mut rng = RngStream::new(9, 0);
        let norms = [3.0, 1.0, 0.5, 0.0, 2.25];
        let n = norms.len();
        let table = WeightTable::new(&norms).unwrap();
        let eps = 0.03;
        let p = table.probabilities(eps).unwrap();
        let c_star = cost(&p, &norms).unwrap();
        for _ in 0..1000 {
            // ε + (1 − Nε)·Dirichlet stays inside the restricted simplex.
            let raw: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
            let total: f64 = raw.iter().sum();
            let q: Vec<f64> = raw
                .iter()
                .map(|v| eps + (1.0 - n as f64 * eps) * v / total)
                .collect();
            assert!(cost(&q, &norms).unwrap() >= c_star - 1e-9 * c_star.abs());
        }
    }

    #[test]
    fn regret_on_frozen_uniform_run_is_linear_with_known_slope() {
        // Fixed norms a, uniform sampling: every step contributes
        // N·Σa² − (Σa)², so cumulative regret is exactly linear.
        let a = [1.0, 2.0, 3.0, 4.0];
        let n = a.len() as f64;
        let sq: f64 = a.iter().map(|v| v * v).sum();
        let total: f64 = a.iter().sum();
        let per_step = n * sq - total * total;
        let t_max = 500;
        let pairs: Vec<(f64, f64)> = (0..t_max).map(|_| (n * sq, total * total)).collect();
        let record = record_from_costs(&pairs);
        record.validate().unwrap();
        let reg = dynamic_regret(&record).unwrap();
        assert_close(reg[0], per_step, 1e-12);
        assert_close(reg[t_max - 1], t_max as f64 * per_step, 1e-12);
        // Linear growth fits slope 1 on the log-log scale.
        let slope = regret_slope(&reg, 0.2).unwrap();
        assert_close(slope, 1.0, 1e-6);
        // The stored column matches the recomputation.
        for (row, r) in record.steps.iter().zip(&reg) {
            assert_close(row.cum_regret.unwrap(), *r, 1e-12);
        }
    }

    #[test]
    fn oracle_like_record_has_zero_regret_and_error() {
        let pairs: Vec<(f64, f64)> = (0..50).map(|_| (36.0, 36.0)).collect();
        let record = record_from_costs(&pairs);
        let reg = dynamic_regret(&record).unwrap();
        assert!(reg.iter().all(|&r| r == 0.0));
        let rel = relative_error(&record).unwrap();
        assert!(rel.iter().all(|r| *r == Some(0.0)));
        // Zero regret cannot be slope-fitted; that is flagged, not faked.
        assert!(matches!(
            regret_slope(&vec![0.0; 200], 0.0),
            Err(MetricsError::NonPositiveData { .. })
        ));
    }

    #[test]
    fn relative_error_examples() {
        // Uniform sampling with one live component out of N=10:
        // cost = 10·1, optimum = 1, relative error 9.
        let mut norms = vec![0.0; 10];
        norms[0] = 1.0;
        let unif = vec![0.1; 10];
        let c = cost(&unif, &norms).unwrap();
        let o = optimal_cost(&norms);
        let record = record_from_costs(&[(c, o)]);
        assert_eq!(relative_error(&record).unwrap(), vec![Some(9.0)]);
        // All-zero gradients: error absent rather than NaN.
        let record = record_from_costs(&[(0.0, 0.0)]);
        assert_eq!(relative_error(&record).unwrap(), vec![None]);
    }

    #[test]
    fn cheap_mode_records_reject_cost_metrics() {
        let record = RunRecord {
            seed: 0,
            config_digest: "test".into(),
            mode: MetricsMode::Cheap,
            steps: vec![],
            wall_time_secs: 0.0,
        };
        assert!(matches!(dynamic_regret(&record), Err(MetricsError::CheapMode)));
        assert!(matches!(relative_error(&record), Err(MetricsError::CheapMode)));
    }

    #[test]
    fn slope_recovers_power_laws() {
        for s in [0.5, 0.7, 1.0] {
            let reg: Vec<f64> = (1..=2000).map(|t| 3.0 * (t as f64).powf(s)).collect();
            assert_close(regret_slope(&reg, 0.1).unwrap(), s, 1e-9);
        }
        assert!(matches!(
            regret_slope(&[1.0; 50], 0.0),
            Err(MetricsError::InsufficientData { .. })
        ));
        assert!(matches!(
            regret_slope(&[1.0; 200], 1.0),
            Err(MetricsError::InvalidBurnIn(_))
        ));
    }

    #[test]
    fn mean_regret_averages_across_seeds() {
        let a = record_from_costs(&[(4.0, 1.0), (4.0, 1.0)]);
        let b = record_from_costs(&[(2.0, 1.0), (2.0, 1.0)]);
        let mean = mean_cumulative_regret(&[a, b]).unwrap();
        assert_eq!(mean, vec![2.0, 4.0]);
        assert!(matches!(
            mean_cumulative_regret(&[]),
            Err(MetricsError::InsufficientData { .. })
        ));
    }

    #[test]
    fn effectiveness_ratios_are_one_for_symmetric_problems() {
        // Two mirrored rows with opposite labels: equal feature norms give
        // equal smoothness, and symmetry gives equal gradient norms at x*.
        let z = vec![0.6, -0.8];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let data = Dataset::new(vec![z, neg], vec![1, 0], 2).unwrap();
        let prob = FiniteSumProblem::new(data, ModelKind::Logistic, 0.5).unwrap();
        let r = effectiveness_ratios(&prob, 1e-12).unwrap();
        assert_close(r.smoothness, 1.0, 1e-12);
        // The variance ratio inherits the minimizer's residual error, which
        // the ratio amplifies by ~1/||g_i*||.
        assert_close(r.variance, 1.0, 1e-6);
    }

    #[test]
    fn effectiveness_ratios_never_below_one() {
        for seed in 0..10 {
            let data = make_synthetic(40, 5, seed).unwrap();
            let prob = FiniteSumProblem::new(data, ModelKind::Logistic, 1.0).unwrap();
            let r = effectiveness_ratios(&prob, 1e-10).unwrap();
            assert!(r.smoothness >= 1.0 - 1e-12, "seed {seed}: {}", r.smoothness);
            assert!(r.variance >= 1.0 - 1e-12, "seed {seed}: {}", r.variance);
        }
    }

    #[test]
    fn record_validation_catches_regressions() {
        let good = record_from_costs(&[(4.0, 1.0), (5.0, 1.0)]);
        good.validate().unwrap();

        let mut bad = good.clone();
        bad.steps[1].t = 7;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.steps[1].cum_regret = Some(0.5); // decreased from 3.0
        assert!(bad.validate().is_err());

        let mut bad = good;
        bad.steps[1].cum_regret = None;
        assert!(matches!(
            bad.validate(),
            Err(MetricsError::MissingCost { t: 2 })
        ));
    }

    #[test]
    fn linear_fit_recovers_exact_lines() {
        let xs: Vec<f64> = (0..50).map(|k| k as f64 * 0.3 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.7 * x + 0.4).collect();
        let (b, m) = linear_fit(&xs, &ys);
        assert_close(m, 1.7, 1e-12);
        assert_close(b, 0.4, 1e-12);
    }
}
