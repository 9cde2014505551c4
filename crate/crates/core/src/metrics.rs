//! Goodness-of-fit metrics and ground-truth recovery checks.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExpressionTree, Node, Operator};
use crate::fitting::{fit_slots, FitterConfig};
use crate::oracle::{SampleRange, TrialBatch};

/// Points checked by the numerical equivalence test.
pub const RECOVERY_POINTS: usize = 100;
/// Noiseless samples used to re-fit candidate constants before checking.
pub const RECOVERY_FIT_POINTS: usize = 256;
pub const RECOVERY_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("prediction has {pred} values but target has {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("need at least two samples")]
    TooFew,
    #[error("degenerate targets")]
    Degenerate,
    #[error("no values to summarize")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    /// Standard deviation of the targets, with the 1/n normalization.
    pub sigma_y: f64,
    pub mse: f64,
    pub neg_mse: f64,
    pub nmse: f64,
    pub rmse: f64,
    pub nrmse: f64,
    /// `1 / nrmse`, infinite for a perfect fit.
    pub inv_nrmse: f64,
}

impl MetricReport {
    /// The bounded variant `1 / (1 + nrmse)`.
    pub fn reward_inv_nrmse(&self) -> f64 {
        reward_inv_nrmse(self.nrmse)
    }
}

pub fn reward_inv_nrmse(nrmse: f64) -> f64 {
    1.0 / (1.0 + nrmse)
}

/// Scores `pred` against `y`. Any non-finite prediction makes the error
/// metrics infinite.
pub fn compute_metrics(pred: &[f64], y: &[f64]) -> Result<MetricReport, MetricsError> {
    if pred.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            target: y.len(),
        });
    }
    let n = y.len();
    if n < 2 {
        return Err(MetricsError::TooFew);
    }
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    if !(var > 0.0) || !var.is_finite() {
        return Err(MetricsError::Degenerate);
    }
    let sigma_y = var.sqrt();
    let mse = if pred.iter().all(|p| p.is_finite()) {
        pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / nf
    } else {
        f64::INFINITY
    };
    let rmse = mse.sqrt();
    let nrmse = rmse / sigma_y;
    Ok(MetricReport {
        n,
        sigma_y,
        mse,
        neg_mse: -mse,
        nmse: mse / var,
        rmse,
        nrmse,
        inv_nrmse: if nrmse > 0.0 { 1.0 / nrmse } else { f64::INFINITY },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub n: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linearly interpolated quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let w = pos - lo as f64;
    let (a, b) = (sorted[lo], sorted[hi]);
    if a == b {
        a
    } else {
        a + (b - a) * w
    }
}

/// Five-number summary. NaN values sort last.
pub fn summarize_quantiles(values: &[f64]) -> Result<QuantileSummary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan())));
    Ok(QuantileSummary {
        n: v.len(),
        min: v[0],
        q25: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q75: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Clone, Debug)]
enum Canon {
    Num(f64),
    Var(usize),
    Sum(Vec<Canon>),
    Prod(Vec<Canon>),
    Un(Operator, Box<Canon>),
}

impl Canon {
    fn key(&self) -> String {
        match self {
            Canon::Num(_) => "#".into(),
            Canon::Var(i) => format!("x{i}"),
            Canon::Sum(items) => format!("(+ {})", items.iter().map(Canon::key).collect::<Vec<_>>().join(" ")),
            Canon::Prod(items) => format!("(* {})", items.iter().map(Canon::key).collect::<Vec<_>>().join(" ")),
            Canon::Un(op, a) => format!("({op} {})", a.key()),
        }
    }

    fn same(&self, other: &Canon) -> bool {
        match (self, other) {
            (Canon::Num(a), Canon::Num(b)) => (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs())),
            (Canon::Var(a), Canon::Var(b)) => a == b,
            (Canon::Sum(a), Canon::Sum(b)) | (Canon::Prod(a), Canon::Prod(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same(y))
            }
            (Canon::Un(o, a), Canon::Un(p, b)) => o == p && a.same(b),
            _ => false,
        }
    }
}

fn sort_items(items: &mut [Canon]) {
    items.sort_by(|a, b| match a.key().cmp(&b.key()) {
        Ordering::Equal => match (a, b) {
            (Canon::Num(x), Canon::Num(y)) => x.total_cmp(y),
            _ => Ordering::Equal,
        },
        o => o,
    });
}

fn make_sum(parts: Vec<Canon>) -> Canon {
    let mut c = 0.0;
    let mut items = Vec::new();
    for p in parts {
        match p {
            Canon::Sum(inner) => {
                for q in inner {
                    match q {
                        Canon::Num(v) => c += v,
                        q => items.push(q),
                    }
                }
            }
            Canon::Num(v) => c += v,
            p => items.push(p),
        }
    }
    if c != 0.0 || items.is_empty() {
        items.push(Canon::Num(c));
    }
    if items.len() == 1 {
        return items.pop().unwrap();
    }
    sort_items(&mut items);
    Canon::Sum(items)
}

fn make_prod(parts: Vec<Canon>) -> Canon {
    let mut c = 1.0;
    let mut items = Vec::new();
    for p in parts {
        match p {
            Canon::Prod(inner) => {
                for q in inner {
                    match q {
                        Canon::Num(v) => c *= v,
                        q => items.push(q),
                    }
                }
            }
            Canon::Num(v) => c *= v,
            p => items.push(p),
        }
    }
    if c == 0.0 {
        return Canon::Num(0.0);
    }
    if c != 1.0 || items.is_empty() {
        items.push(Canon::Num(c));
    }
    if items.len() == 1 {
        return items.pop().unwrap();
    }
    sort_items(&mut items);
    Canon::Prod(items)
}

fn canon(t: &ExpressionTree, at: usize) -> Canon {
    match *t.node(at) {
        Node::Const(c) => Canon::Num(c.value),
        Node::Var { index, .. } => Canon::Var(index),
        Node::Op { op, .. } => {
            let kids: Vec<Canon> = t.children(at).into_iter().map(|k| canon(t, k)).collect();
            let mut kids = kids.into_iter();
            match op {
                Operator::Add => make_sum(kids.collect()),
                Operator::Mul => make_prod(kids.collect()),
                Operator::Sub => {
                    let a = kids.next().unwrap();
                    let b = kids.next().unwrap();
                    make_sum(vec![a, make_prod(vec![Canon::Num(-1.0), b])])
                }
                unary => match kids.next().unwrap() {
                    Canon::Num(v) => Canon::Num(unary.apply_unary(v)),
                    a => Canon::Un(unary, Box::new(a)),
                },
            }
        }
    }
}

/// Whether two expressions agree after constant folding, flattening of `+`
/// and `*`, and sorting of commutative operands.
pub fn structurally_equal(a: &ExpressionTree, b: &ExpressionTree) -> bool {
    canon(a, 0).same(&canon(b, 0))
}

fn sample_points<R: Rng + ?Sized>(
    truth: &ExpressionTree,
    num_vars: usize,
    range: &SampleRange,
    rows: usize,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut points = Vec::with_capacity(rows);
    let mut y = Vec::with_capacity(rows);
    let mut tries = 0;
    while points.len() < rows && tries < rows * 100 {
        tries += 1;
        let p: Vec<f64> = (0..num_vars).map(|_| range.sample(rng)).collect();
        let v = truth.evaluate(&p);
        if v.is_finite() {
            points.push(p);
            y.push(v);
        }
    }
    (points, y)
}

/// Whether `candidate` recovers `truth` over the sampling domain.
///
/// Tries a structural match first. Otherwise every constant of the candidate
/// is re-fitted to noiseless truth samples and the two are compared pointwise
/// on fresh samples with tolerance `1e-6 (1 + |truth|)`.
pub fn recovered<R: Rng + ?Sized>(
    candidate: &ExpressionTree,
    truth: &ExpressionTree,
    num_vars: usize,
    range: &SampleRange,
    rng: &mut R,
) -> bool {
    if structurally_equal(candidate, truth) {
        return true;
    }
    let num_vars = num_vars
        .max(candidate.variables().last().map_or(0, |v| v + 1))
        .max(truth.variables().last().map_or(0, |v| v + 1));
    let mut cand = candidate.clone();
    let slots: Vec<usize> = (0..cand.len())
        .filter(|&i| matches!(cand.node(i), Node::Const(_)))
        .collect();
    if !slots.is_empty() {
        let (pts, y) = sample_points(truth, num_vars, range, RECOVERY_FIT_POINTS, rng);
        if pts.len() < RECOVERY_FIT_POINTS {
            return false;
        }
        let batch = TrialBatch::from_rows(BTreeMap::new(), &pts, y);
        let cfg = FitterConfig {
            max_iters: 1000,
            convergence_tol: 1e-14,
            exact_mse: 1e-24,
            ..FitterConfig::default()
        };
        let fit = fit_slots(&cand, &slots, &batch, &cfg, rng.random());
        if fit.fitness.is_finite() {
            cand.set_constants(&slots, &fit.constants);
        }
    }
    let (pts, y) = sample_points(truth, num_vars, range, RECOVERY_POINTS, rng);
    if pts.len() < RECOVERY_POINTS {
        return false;
    }
    pts.iter().zip(&y).all(|(p, &t)| {
        let c = cand.evaluate(p);
        c.is_finite() && (c - t).abs() <= RECOVERY_TOL * (1.0 + t.abs())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn hand_computed_metrics() {
        let r = compute_metrics(&[0.0, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!(r.sigma_y, 1.0);
        assert_eq!(r.mse, 2.0);
        assert_eq!(r.nmse, 2.0);
        assert!(close(r.rmse, 2f64.sqrt()));
        assert!(close(r.nrmse, 2f64.sqrt()));
        assert!(close(r.inv_nrmse, 1.0 / 2f64.sqrt()));
        assert!(close(r.reward_inv_nrmse(), 1.0 / (1.0 + 2f64.sqrt())));
    }

    #[test]
    fn perfect_and_mean_predictors() {
        let y = [1.0, 3.0, -2.0, 0.5];
        let r = compute_metrics(&y, &y).unwrap();
        assert_eq!((r.mse, r.nmse, r.neg_mse), (0.0, 0.0, 0.0));
        assert_eq!(r.inv_nrmse, f64::INFINITY);
        let mean = y.iter().sum::<f64>() / 4.0;
        let r = compute_metrics(&[mean; 4], &y).unwrap();
        assert!(close(r.nmse, 1.0) && close(r.nrmse, 1.0) && close(r.inv_nrmse, 1.0));
    }

    #[test]
    fn metric_errors() {
        assert_eq!(compute_metrics(&[1.0, 1.0], &[2.0, 2.0]), Err(MetricsError::Degenerate));
        assert_eq!(
            compute_metrics(&[1.0], &[2.0, 3.0]),
            Err(MetricsError::LengthMismatch { pred: 1, target: 2 })
        );
        assert_eq!(compute_metrics(&[1.0], &[2.0]), Err(MetricsError::TooFew));
        assert_eq!(compute_metrics(&[f64::NAN, 0.0], &[0.0, 1.0]).unwrap().nmse, f64::INFINITY);
    }

    #[test]
    fn quantiles() {
        let q = summarize_quantiles(&[1.0]).unwrap();
        assert_eq!((q.min, q.q25, q.median, q.q75, q.max), (1.0, 1.0, 1.0, 1.0, 1.0));
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        let q = summarize_quantiles(&v).unwrap();
        assert_eq!(q.median, 5.5);
        assert_eq!(q.q25, 3.25);
        assert_eq!(q.q75, 7.75);
        assert_eq!(summarize_quantiles(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn structural_normalization() {
        let eq = |a: &str, b: &str| structurally_equal(&a.parse().unwrap(), &b.parse().unwrap());
        assert!(eq("(+ x1 x2)", "(+ x2 x1)"));
        assert!(eq("(* (* x1 2) x3)", "(* x3 (* x1 2))"));
        assert!(eq("(+ (+ 1 x1) 2)", "(+ x1 3)"));
        assert!(eq("(- x1 x2)", "(+ x1 (* -1 x2))"));
        assert!(!eq("(- x1 x2)", "(- x2 x1)"));
        assert!(!eq("(* 2 x1)", "(* 3 x1)"));
    }

    #[test]
    fn recovery_examples() {
        let range = SampleRange::default();
        let mut rng = seed::rng(5);
        let t = |s: &str| s.parse::<ExpressionTree>().unwrap();
        let truth = t("(- 0 (- (* x2 x4) (* x1 x3)))");
        let cand = t("(- (* x1 x3) (* x2 x4))");
        assert!(recovered(&cand, &truth, 4, &range, &mut rng));
        assert!(recovered(&t("(* 0.99 x1)"), &t("x1"), 1, &range, &mut rng));
        assert!(!recovered(&t("(* x1 x1)"), &t("x1"), 1, &range, &mut rng));
        let inv = t(crate::bench::INV_211_EXAMPLE);
        assert!(recovered(&inv, &inv, 2, &range, &mut rng));
        let near = t("(+ (+ 0.49 (* -0.682 (inv x2))) (* -0.735 (* x2 (inv x1))))");
        assert!(recovered(&near, &inv, 2, &range, &mut rng));
        let wrong = t("(+ 0.497 (* -0.735 (* x2 (inv x1))))");
        assert!(!recovered(&wrong, &inv, 2, &range, &mut rng));
    }
}
