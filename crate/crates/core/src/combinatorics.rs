//! Size of the expression space over binary operators.
//!
//! A tree of `l` nodes (odd) with only binary operators has `(l-1)/2`
//! internal nodes and `(l+1)/2` leaves. Its shapes are counted by a Catalan
//! number, each leaf is a constant or one of `m` variables and each internal
//! node one of `o` operators, so
//! `A(l) = C((l-1)/2) * (m+1)^((l+1)/2) * o^((l-1)/2)` and `S(l)` sums `A`
//! over all odd sizes up to `l`.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::expr::{ConstantSlot, ConstStatus, ExpressionTree, Node, Operator};

/// Largest `S(l)` [`enumerate_all`] will produce.
pub const ENUMERATION_GUARD: u64 = 10_000_000;

/// Binary operators used by the enumerator, in order; `o` takes a prefix.
pub const ENUM_OPERATORS: [Operator; 3] = [Operator::Add, Operator::Mul, Operator::Sub];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CountError {
    #[error("tree size must be odd, got {0}")]
    EvenSize(usize),
    #[error("at most 3 binary operators are available, got {0}")]
    TooManyOperators(usize),
    #[error("space of {0} trees exceeds the enumeration guard")]
    TooLarge(BigUint),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpaceCount {
    pub l: usize,
    pub m: usize,
    pub o: usize,
    /// Trees of exactly `l` nodes.
    pub a: BigUint,
    /// Trees of at most `l` nodes.
    pub s: BigUint,
}

pub fn catalan(k: usize) -> BigUint {
    // C(i+1) = C(i) * 2(2i+1) / (i+2); the division is always exact
    let mut c = BigUint::one();
    for i in 0..k {
        c = c * BigUint::from(2 * (2 * i + 1)) / BigUint::from(i + 2);
    }
    c
}

fn size_class(l: usize, m: usize, o: usize) -> BigUint {
    let internal = (l - 1) / 2;
    catalan(internal) * BigUint::from(m + 1).pow((internal + 1) as u32) * BigUint::from(o).pow(internal as u32)
}

pub fn count_exact(l: usize, m: usize, o: usize) -> Result<SpaceCount, CountError> {
    if l.is_multiple_of(2) {
        return Err(CountError::EvenSize(l));
    }
    let a = size_class(l, m, o);
    let s = (1..=l).step_by(2).map(|k| size_class(k, m, o)).sum();
    Ok(SpaceCount { l, m, o, a, s })
}

impl SpaceCount {
    fn base(&self) -> BigUint {
        BigUint::from(4 * (self.m + 1) * self.o)
    }

    /// `S(l) >= (4(m+1)o)^((l-1)/4)`, checked as `S^4 >= base^(l-1)`.
    pub fn lower_bound_holds(&self) -> bool {
        self.s.pow(4) >= self.base().pow((self.l - 1) as u32)
    }

    /// `sum_{i <= (l-1)/2} (4(m+1)o)^i`
    pub fn upper_bound(&self) -> BigUint {
        let base = self.base();
        (0..=(self.l - 1) / 2).map(|i| base.pow(i as u32)).sum()
    }

    pub fn upper_bound_holds(&self) -> bool {
        self.s <= self.upper_bound()
    }
}

/// Every tree of at most `l` nodes over `m` variables, one abstract constant
/// leaf and the first `o` of [`ENUM_OPERATORS`], smallest trees first.
pub fn enumerate_all(l: usize, m: usize, o: usize) -> Result<impl Iterator<Item = ExpressionTree>, CountError> {
    if o > ENUM_OPERATORS.len() {
        return Err(CountError::TooManyOperators(o));
    }
    let count = count_exact(l, m, o)?;
    if count.s.to_u64().is_none_or(|s| s > ENUMERATION_GUARD) {
        return Err(CountError::TooLarge(count.s));
    }
    let mut leaves: Vec<Node> = vec![Node::Const(ConstantSlot {
        value: 1.0,
        status: ConstStatus::Open,
    })];
    leaves.extend((0..m).map(|index| Node::Var { index, frozen: false }));
    let ops: Vec<Operator> = ENUM_OPERATORS[..o].to_vec();
    Ok((1..=l).step_by(2).flat_map(move |n| {
        trees_of_size(n, &leaves, &ops)
            .into_iter()
            .map(|nodes| ExpressionTree::from_nodes(nodes).expect("enumerated tree is well formed"))
    }))
}

fn trees_of_size(n: usize, leaves: &[Node], ops: &[Operator]) -> Vec<Vec<Node>> {
    if n == 1 {
        return leaves.iter().map(|&l| vec![l]).collect();
    }
    let mut out = Vec::new();
    for left in (1..n - 1).step_by(2) {
        let right = n - 1 - left;
        let ls = trees_of_size(left, leaves, ops);
        let rs = trees_of_size(right, leaves, ops);
        for &op in ops {
            for a in &ls {
                for b in &rs {
                    let mut t = Vec::with_capacity(n);
                    t.push(Node::Op { op, frozen: false });
                    t.extend_from_slice(a);
                    t.extend_from_slice(b);
                    out.push(t);
                }
            }
        }
    }
    out
}

/// Lossy `f64` view of a count.
pub fn approx(n: &BigUint) -> f64 {
    if n.is_zero() {
        return 0.0;
    }
    n.to_f64().unwrap_or(f64::INFINITY)
}
