//! Constant fitting, control variable experiments, and the freezing rule.
//!
//! A control variable experiment fits the open constants of one expression
//! separately in each of `K` trials. Fits that are consistently good mean
//! the expression matches the reduced form of the ground truth; constants
//! whose fitted values then drift across trials stand in for sub-expressions
//! of controlled variables, and constants that stay put are genuine.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{ConstStatus, ExpressionTree};
use crate::optim::{levenberg_marquardt, nelder_mead, Minimum};
use crate::oracle::{TrialBatch, VariablePartition};
use crate::seed::{self, tag};

/// Default MSE threshold below which an expression's structure is frozen.
pub const DEFAULT_FIT_THRESH: f64 = 0.01;
/// Default cross-trial variance below which a constant is frozen in place.
pub const DEFAULT_VAR_THRESH: f64 = 0.001;
/// MSE values at or below this are treated as an exact fit, so that
/// round-off does not rank one exact expression above another.
pub const EXACT_MSE: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Damped Gauss–Newton on the residuals, using exact derivatives of the
    /// tree with respect to its constants.
    LevenbergMarquardt,
    /// Derivative-free simplex search.
    NelderMead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitterConfig {
    pub method: FitMethod,
    /// Random restarts in addition to the warm start from current values.
    pub restarts: usize,
    pub max_iters: usize,
    pub init_low: f64,
    pub init_high: f64,
    pub convergence_tol: f64,
    /// A start reaching this MSE ends the restart loop early.
    pub exact_mse: f64,
}

impl Default for FitterConfig {
    fn default() -> Self {
        Self {
            method: FitMethod::LevenbergMarquardt,
            restarts: 0,
            max_iters: 30,
            init_low: -1.0,
            init_high: 1.0,
            convergence_tol: 1e-3,
            exact_mse: 1e-20,
        }
    }
}

/// Result of fitting one trial: constants aligned with
/// [`ExpressionTree::open_constants`] and the NegMSE fitness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub constants: Vec<f64>,
    pub fitness: f64,
}

impl TrialOutcome {
    pub fn mse(&self) -> f64 {
        -self.fitness
    }
}

/// Outcome of a K-trial control variable experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    /// Node positions of the fitted constants.
    pub slots: Vec<usize>,
    pub trials: Vec<TrialOutcome>,
}

impl ExperimentOutcome {
    /// Per-trial fitness vector.
    pub fn fitness(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.fitness).collect()
    }

    /// Median per-trial NegMSE; `-inf` for non-finite outcomes and `0` for
    /// anything within [`EXACT_MSE`] of a perfect fit.
    pub fn scalar_fitness(&self) -> f64 {
        let mut f: Vec<f64> = self.fitness().into_iter().map(sanitize_fitness).collect();
        if f.is_empty() {
            return f64::NEG_INFINITY;
        }
        f.sort_by(f64::total_cmp);
        let n = f.len();
        let mid = if n % 2 == 1 {
            f[n / 2]
        } else {
            let (a, b) = (f[n / 2 - 1], f[n / 2]);
            if a == f64::NEG_INFINITY {
                a
            } else {
                0.5 * (a + b)
            }
        };
        if mid >= -EXACT_MSE {
            0.0
        } else {
            sanitize_fitness(mid)
        }
    }

    /// Whether every trial fit exactly.
    pub fn is_exact(&self) -> bool {
        !self.trials.is_empty() && self.max_mse() <= EXACT_MSE
    }

    pub fn max_mse(&self) -> f64 {
        self.trials
            .iter()
            .map(|t| if t.mse().is_finite() { t.mse() } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }

    /// Fitted values of constant `j` across trials.
    pub fn values_of(&self, j: usize) -> Vec<f64> {
        self.trials.iter().map(|t| t.constants[j]).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.slots.len()).map(|j| mean(&self.values_of(j))).collect()
    }

    /// Unbiased sample variance of each constant across trials.
    pub fn variances(&self) -> Vec<f64> {
        (0..self.slots.len())
            .map(|j| sample_variance(&self.values_of(j)))
            .collect()
    }
}

fn sanitize_fitness(f: f64) -> f64 {
    if f.is_nan() {
        f64::NEG_INFINITY
    } else {
        f
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn batch_mse(expr: &ExpressionTree, batch: &TrialBatch) -> f64 {
    let pred = expr.eval_columns(batch.columns(), batch.batch_size());
    let n = pred.len() as f64;
    let mse = pred
        .iter()
        .zip(batch.y())
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        / n;
    crate::expr::recycle([pred]);
    if mse.is_finite() {
        mse
    } else {
        f64::INFINITY
    }
}

fn residuals(expr: &ExpressionTree, batch: &TrialBatch) -> Option<Vec<f64>> {
    let mut r = expr.eval_columns(batch.columns(), batch.batch_size());
    r.iter_mut().zip(batch.y()).for_each(|(p, y)| *p -= y);
    r.iter().all(|v| v.is_finite()).then_some(r)
}

fn local_search(
    expr: &ExpressionTree,
    slots: &[usize],
    batch: &TrialBatch,
    start: &[f64],
    cfg: &FitterConfig,
) -> Option<Minimum> {
    let n = batch.batch_size();
    match cfg.method {
        FitMethod::LevenbergMarquardt => {
            let mut a = expr.clone();
            let mut b = expr.clone();
            levenberg_marquardt(
                |p| {
                    a.set_constants(slots, p);
                    let (mut r, jac) = a.eval_with_jacobian(batch.columns(), n, slots);
                    r.iter_mut().zip(batch.y()).for_each(|(p, y)| *p -= y);
                    let ok = r.iter().all(|x| x.is_finite())
                        && jac.iter().all(|c| c.iter().all(|x| x.is_finite()));
                    ok.then_some((r, jac))
                },
                |p| {
                    b.set_constants(slots, p);
                    residuals(&b, batch)
                },
                start,
                cfg.max_iters,
                cfg.convergence_tol,
            )
        }
        FitMethod::NelderMead => {
            let mut a = expr.clone();
            let m = nelder_mead(
                |p| {
                    a.set_constants(slots, p);
                    batch_mse(&a, batch)
                },
                start,
                0.1,
                cfg.max_iters,
                cfg.convergence_tol,
            );
            m.value.is_finite().then_some(m)
        }
    }
}

/// Fits the open constants of `expr` to one trial's data.
///
/// Tries a warm start from the constants' current values, then
/// `cfg.restarts` random starts drawn from `seed`, keeping the best. With no
/// open constants the expression is scored as is. Undefined fits score
/// `-inf`.
pub fn fit_constants(
    expr: &ExpressionTree,
    batch: &TrialBatch,
    cfg: &FitterConfig,
    seed: u64,
) -> TrialOutcome {
    let slots = expr.open_constants();
    fit_slots(expr, &slots, batch, cfg, seed)
}

/// Like [`fit_constants`] but over an explicit list of constant positions,
/// which may include stand-alone slots.
pub fn fit_slots(
    expr: &ExpressionTree,
    slots: &[usize],
    batch: &TrialBatch,
    cfg: &FitterConfig,
    seed: u64,
) -> TrialOutcome {
    let current = expr.constant_values(slots);
    if slots.is_empty() {
        let mse = batch_mse(expr, batch);
        return TrialOutcome {
            constants: current,
            fitness: -mse,
        };
    }
    let mut rng = seed::rng_for(seed, &[tag::RESTART]);
    let mut best: Option<Minimum> = None;
    for attempt in 0..=cfg.restarts {
        let start: Vec<f64> = if attempt == 0 {
            current.clone()
        } else {
            (0..slots.len())
                .map(|_| rng.random_range(cfg.init_low..cfg.init_high))
                .collect()
        };
        if let Some(m) = local_search(expr, slots, batch, &start, cfg) {
            if best.as_ref().is_none_or(|b| m.value < b.value) {
                best = Some(m);
            }
        }
        if best.as_ref().is_some_and(|b| b.value <= cfg.exact_mse) {
            break;
        }
    }
    match best {
        Some(m) => TrialOutcome {
            constants: m.x,
            fitness: -m.value,
        },
        None => TrialOutcome {
            constants: current,
            fitness: f64::NEG_INFINITY,
        },
    }
}

/// Runs a control variable experiment: an independent fit per trial.
pub fn cv_experiment(
    expr: &ExpressionTree,
    part: &VariablePartition,
    trials: &[TrialBatch],
    cfg: &FitterConfig,
    seed: u64,
) -> ExperimentOutcome {
    debug_assert!(
        expr.variables().iter().all(|&v| part.is_free(v)),
        "expression uses a controlled variable"
    );
    let slots = expr.open_constants();
    let trials = trials
        .iter()
        .enumerate()
        .map(|(k, batch)| fit_slots(expr, &slots, batch, cfg, seed::derive(seed, &[k as u64])))
        .collect();
    ExperimentOutcome { slots, trials }
}

/// Writes the cross-trial mean of each fitted constant back into the tree.
pub fn adopt_mean_constants(expr: &mut ExpressionTree, outcome: &ExperimentOutcome) {
    if outcome.trials.is_empty() {
        return;
    }
    let means = outcome.means();
    for (&slot, &m) in outcome.slots.iter().zip(&means) {
        if m.is_finite() {
            if let Some(c) = expr.slot_mut(slot) {
                c.value = m;
            }
        }
    }
}

/// Applies the freezing rule. Returns `true` if the expression qualified.
///
/// When every trial's MSE is at most `fit_thresh`, all operators and
/// variables are frozen and each fitted constant is classified by the
/// sample variance of its values across trials: at most `var_thresh` makes
/// it a stand-alone constant fixed at the mean, anything larger marks it
/// expandable. Otherwise nothing changes.
pub fn freeze_equation(
    expr: &mut ExpressionTree,
    outcome: &ExperimentOutcome,
    fit_thresh: f64,
    var_thresh: f64,
) -> bool {
    if outcome.trials.is_empty() || outcome.max_mse() > fit_thresh {
        return false;
    }
    debug_assert!(outcome.slots.iter().all(|&s| expr.slot_mut(s).is_some()));
    expr.freeze_structure();
    let means = outcome.means();
    let vars = outcome.variances();
    for (j, &slot) in outcome.slots.iter().enumerate() {
        if let Some(c) = expr.slot_mut(slot) {
            c.value = means[j];
            c.status = if vars[j] <= var_thresh {
                ConstStatus::Standalone
            } else {
                ConstStatus::Expandable
            };
        }
    }
    true
}
