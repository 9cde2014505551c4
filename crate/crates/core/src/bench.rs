//! Random ground-truth families for benchmarking.
//!
//! A family is described by an operand set and a tuple `(a, b, c)`: `a`
//! input variables, `b` singular terms (a variable, possibly under one unary
//! operator) and `c` cross terms (a product of two singular factors). Each
//! term carries a random coefficient and the sum carries one additive
//! constant, e.g. `0.497 - 0.682 inv(x2) - 0.735 x2 inv(x1)`.
//!
//! Generated truths are in a fixed normal form that [`term_census`] reads
//! back: a left-nested chain of `+` whose first operand is the additive
//! constant and whose other operands are `(* coef factor)` or
//! `(* coef (* factor factor))`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExpressionTree, Node, Operator};
use crate::seed::{self, tag};

/// Attempts at drawing a variable assignment that covers every variable.
const MAX_ASSIGNMENT_TRIES: usize = 100_000;

/// Sample member of the `{inv,+,-,*}` family at (2,1,1), written with
/// 1-based variable names.
pub const INV_211_EXAMPLE: &str = "(+ (+ 0.497 (* -0.682 (inv x2))) (* -0.735 (* x2 (inv x1))))";

/// Sample member of the `{sin,cos,+,-,*}` family at (3,2,2), 1-based.
pub const SINCOS_322_EXAMPLE: &str = "(+ (+ (+ (+ -0.625 (* -0.095 (* x1 x3))) (* 0.012 (* x3 (sin x2)))) (* -0.576 x3)) (* -0.214 (cos x1)))";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BenchError {
    #[error("need at least one variable")]
    NoVariables,
    #[error("need at least one term (b + c >= 1)")]
    NoTerms,
    #[error("{b} singular and {c} cross terms cannot cover {a} variables")]
    Coverage { a: usize, b: usize, c: usize },
    #[error("only {max} distinct {kind} terms exist for this family")]
    TooManyTerms { kind: &'static str, max: usize },
    #[error("operand set must contain +, - and *")]
    MissingArithmetic,
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("could not draw a covering variable assignment")]
    AssignmentFailed,
    #[error("expression is not in generator normal form: {0}")]
    NotNormalForm(String),
}

/// A set of operators, written like `inv,+,-,*`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OperandSet(pub Vec<Operator>);

impl OperandSet {
    pub fn unary(&self) -> Vec<Operator> {
        self.0.iter().copied().filter(|o| o.arity() == 1).collect()
    }

    /// Short tag usable in file names, e.g. `inv+-*` becomes `inv_add_sub_mul`.
    pub fn tag(&self) -> String {
        self.0
            .iter()
            .map(|o| match o {
                Operator::Add => "add",
                Operator::Sub => "sub",
                Operator::Mul => "mul",
                Operator::Inv => "inv",
                Operator::Sin => "sin",
                Operator::Cos => "cos",
            })
            .collect::<Vec<_>>()
            .join("_")
    }
}

impl fmt::Display for OperandSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|o| o.symbol()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for OperandSet {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut ops = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let op = Operator::from_symbol(part).ok_or_else(|| BenchError::UnknownOperator(part.to_string()))?;
            if !ops.contains(&op) {
                ops.push(op);
            }
        }
        // unary operators first, then binary
        ops.sort_by_key(|o| (o.arity(), *o));
        Ok(OperandSet(ops))
    }
}

impl Serialize for OperandSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OperandSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub operands: OperandSet,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    #[serde(default)]
    pub sigma: f64,
    pub seed: u64,
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.a == 0 {
            return Err(BenchError::NoVariables);
        }
        if self.b + self.c == 0 {
            return Err(BenchError::NoTerms);
        }
        if self.b + 2 * self.c < self.a {
            return Err(BenchError::Coverage {
                a: self.a,
                b: self.b,
                c: self.c,
            });
        }
        let forms = self.operands.unary().len() + 1;
        let singular = self.a * forms;
        let cross = self.a * (self.a - 1) / 2 * forms * forms;
        if self.b > singular {
            return Err(BenchError::TooManyTerms { kind: "singular", max: singular });
        }
        if self.c > cross {
            return Err(BenchError::TooManyTerms { kind: "cross", max: cross });
        }
        let ops = &self.operands.0;
        if ![Operator::Add, Operator::Sub, Operator::Mul].iter().all(|o| ops.contains(o)) {
            return Err(BenchError::MissingArithmetic);
        }
        Ok(())
    }
}

fn coefficient<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let mag = rng.random_range(0.05..1.0);
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// `(unary op or None, variable)`
type Factor = (Option<Operator>, usize);

fn factor_tree((op, v): Factor) -> ExpressionTree {
    match op {
        Some(op) => ExpressionTree::unary(op, ExpressionTree::var(v)),
        None => ExpressionTree::var(v),
    }
}

/// Draws a ground truth from the family described by `cfg`.
pub fn gen_truth(cfg: &BenchmarkConfig) -> Result<ExpressionTree, BenchError> {
    cfg.validate()?;
    let mut rng = seed::rng_for(cfg.seed, &[tag::TRUTH]);
    let unary = cfg.operands.unary();
    let draw_factor = |rng: &mut dyn rand::RngCore, v: usize| -> Factor {
        let k = rng.random_range(0..=unary.len());
        (if k == 0 { None } else { Some(unary[k - 1]) }, v)
    };

    let mut assignment = None;
    for _ in 0..MAX_ASSIGNMENT_TRIES {
        let singles: Vec<Factor> = (0..cfg.b)
            .map(|_| {
                let v = rng.random_range(0..cfg.a);
                draw_factor(&mut rng, v)
            })
            .collect();
        let crosses: Vec<(Factor, Factor)> = (0..cfg.c)
            .map(|_| {
                let v1 = rng.random_range(0..cfg.a);
                let v2 = if cfg.a >= 2 {
                    loop {
                        let v = rng.random_range(0..cfg.a);
                        if v != v1 {
                            break v;
                        }
                    }
                } else {
                    v1
                };
                (draw_factor(&mut rng, v1), draw_factor(&mut rng, v2))
            })
            .collect();
        let covered: BTreeSet<usize> = singles
            .iter()
            .map(|f| f.1)
            .chain(crosses.iter().flat_map(|(f, g)| [f.1, g.1]))
            .collect();
        let mut distinct = HashSet::new();
        let unique = singles.iter().all(|f| distinct.insert(vec![*f]))
            && crosses.iter().all(|(f, g)| {
                let mut k = vec![*f, *g];
                k.sort_by_key(|(op, v)| (op.map(|o| o as u8 + 1).unwrap_or(0), *v));
                distinct.insert(k)
            });
        if covered.len() == cfg.a && unique {
            assignment = Some((singles, crosses));
            break;
        }
    }
    let (singles, crosses) = assignment.ok_or(BenchError::AssignmentFailed)?;

    let mut tree = ExpressionTree::fixed(coefficient(&mut rng));
    for f in singles {
        let term = ExpressionTree::mul(ExpressionTree::fixed(coefficient(&mut rng)), factor_tree(f));
        tree = ExpressionTree::add(tree, term);
    }
    for (f, g) in crosses {
        let prod = ExpressionTree::mul(factor_tree(f), factor_tree(g));
        let term = ExpressionTree::mul(ExpressionTree::fixed(coefficient(&mut rng)), prod);
        tree = ExpressionTree::add(tree, term);
    }
    Ok(tree)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Census {
    pub singular: usize,
    pub cross: usize,
    /// 0-based variable indices.
    pub variables: BTreeSet<usize>,
}

fn is_factor(t: &ExpressionTree, at: usize) -> bool {
    match t.node(at) {
        Node::Var { .. } => true,
        Node::Op { op, .. } if op.arity() == 1 => matches!(t.node(at + 1), Node::Var { .. }),
        _ => false,
    }
}

/// Counts singular and cross terms of a generator-normal-form expression.
pub fn term_census(expr: &ExpressionTree) -> Result<Census, BenchError> {
    let bad = || BenchError::NotNormalForm(expr.to_string());
    let mut addends = Vec::new();
    let mut at = 0;
    loop {
        match expr.node(at) {
            Node::Op { op: Operator::Add, .. } => {
                let kids = expr.children(at);
                addends.push(kids[1]);
                at = kids[0];
            }
            _ => {
                addends.push(at);
                break;
            }
        }
    }
    let mut census = Census {
        singular: 0,
        cross: 0,
        variables: BTreeSet::new(),
    };
    let mut constants = 0;
    for a in addends {
        match expr.node(a) {
            Node::Const(_) => constants += 1,
            Node::Op { op: Operator::Mul, .. } => {
                let kids = expr.children(a);
                if !matches!(expr.node(kids[0]), Node::Const(_)) {
                    return Err(bad());
                }
                let f = kids[1];
                if is_factor(expr, f) {
                    census.singular += 1;
                } else if matches!(expr.node(f), Node::Op { op: Operator::Mul, .. })
                    && expr.children(f).iter().all(|&g| is_factor(expr, g))
                {
                    census.cross += 1;
                } else {
                    return Err(bad());
                }
                census.variables.extend(expr.subtree(f).variables());
            }
            _ => return Err(bad()),
        }
    }
    if constants > 1 {
        return Err(bad());
    }
    Ok(census)
}
