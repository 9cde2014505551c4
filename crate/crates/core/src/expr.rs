//! Symbolic expression trees.
//!
//! A tree is stored as a flat pre-order sequence of nodes. Operators carry
//! their arity implicitly, so a subtree is always a contiguous range. Nodes
//! carry freeze flags and constant leaves carry a [`ConstStatus`]; together
//! they describe which parts of an expression later search stages may touch.
//!
//! The canonical text form is prefix notation:
//!
//! ```text
//! (- (* x1 x3) (* x2 x4))
//! (+ x1 C<0.5,open>)
//! !(+ !x1 C<0.25,expandable>)
//! ```
//!
//! Variables are written 1-based (`x1` is the first input). A leading `!`
//! marks a frozen operator or variable. Bare numbers parse as stand-alone
//! constants.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Add,
    Sub,
    Mul,
    Inv,
    Sin,
    Cos,
}

impl Operator {
    pub const ALL: [Operator; 6] = [
        Operator::Add,
        Operator::Sub,
        Operator::Mul,
        Operator::Inv,
        Operator::Sin,
        Operator::Cos,
    ];

    pub fn arity(self) -> usize {
        match self {
            Operator::Add | Operator::Sub | Operator::Mul => 2,
            Operator::Inv | Operator::Sin | Operator::Cos => 1,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Add => "+",
            Operator::Sub => "-",
            Operator::Mul => "*",
            Operator::Inv => "inv",
            Operator::Sin => "sin",
            Operator::Cos => "cos",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Operator> {
        Some(match s {
            "+" | "add" => Operator::Add,
            "-" | "sub" => Operator::Sub,
            "*" | "mul" => Operator::Mul,
            "inv" => Operator::Inv,
            "sin" => Operator::Sin,
            "cos" => Operator::Cos,
            _ => return None,
        })
    }

    #[inline]
    pub fn apply_unary(self, x: f64) -> f64 {
        if !x.is_finite() {
            return f64::NAN;
        }
        match self {
            Operator::Inv => 1.0 / x,
            Operator::Sin => x.sin(),
            Operator::Cos => x.cos(),
            _ => unreachable!("{self:?} is binary"),
        }
    }

    #[inline]
    pub fn apply_binary(self, a: f64, b: f64) -> f64 {
        match self {
            Operator::Add => a + b,
            Operator::Sub => a - b,
            Operator::Mul => a * b,
            _ => unreachable!("{self:?} is unary"),
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Lifecycle of a constant leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstStatus {
    /// Free parameter, fitted per trial.
    Open,
    /// Genuine constant of the target; value fixed for good.
    Standalone,
    /// Stands in for a sub-expression of controlled variables. Still fitted
    /// per trial, and the only kind of leaf later stages may grow into a
    /// subtree once the surrounding structure is frozen.
    Expandable,
}

impl ConstStatus {
    fn as_str(self) -> &'static str {
        match self {
            ConstStatus::Open => "open",
            ConstStatus::Standalone => "standalone",
            ConstStatus::Expandable => "expandable",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantSlot {
    pub value: f64,
    pub status: ConstStatus,
}

impl ConstantSlot {
    /// Whether constant fitting treats this slot as a free parameter.
    pub fn is_fittable(&self) -> bool {
        self.status != ConstStatus::Standalone
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Op { op: Operator, frozen: bool },
    /// 0-based variable index.
    Var { index: usize, frozen: bool },
    Const(ConstantSlot),
}

impl Node {
    pub fn arity(&self) -> usize {
        match self {
            Node::Op { op, .. } => op.arity(),
            _ => 0,
        }
    }

    pub fn is_frozen(&self) -> bool {
        match *self {
            Node::Op { frozen, .. } | Node::Var { frozen, .. } => frozen,
            Node::Const(c) => c.status == ConstStatus::Standalone,
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self, Node::Op { .. })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExprError {
    #[error("node sequence is not a well-formed prefix tree")]
    Malformed,
    #[error("subtree replacement at node {0} would change a frozen node")]
    FrozenTarget(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

/// A symbolic expression in flat pre-order form.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionTree {
    nodes: Vec<Node>,
}

impl ExpressionTree {
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self, ExprError> {
        if !is_well_formed(&nodes) {
            return Err(ExprError::Malformed);
        }
        Ok(Self { nodes })
    }

    pub fn var(index: usize) -> Self {
        Self {
            nodes: vec![Node::Var {
                index,
                frozen: false,
            }],
        }
    }

    pub fn constant(value: f64, status: ConstStatus) -> Self {
        Self {
            nodes: vec![Node::Const(ConstantSlot { value, status })],
        }
    }

    /// An open constant leaf.
    pub fn open(value: f64) -> Self {
        Self::constant(value, ConstStatus::Open)
    }

    /// A stand-alone (fixed) constant leaf.
    pub fn fixed(value: f64) -> Self {
        Self::constant(value, ConstStatus::Standalone)
    }

    pub fn apply(op: Operator, children: Vec<ExpressionTree>) -> Self {
        assert_eq!(op.arity(), children.len(), "arity mismatch for {op}");
        let mut nodes = Vec::with_capacity(1 + children.iter().map(|c| c.len()).sum::<usize>());
        nodes.push(Node::Op { op, frozen: false });
        for c in children {
            nodes.extend(c.nodes);
        }
        Self { nodes }
    }

    pub fn add(a: Self, b: Self) -> Self {
        Self::apply(Operator::Add, vec![a, b])
    }

    pub fn sub(a: Self, b: Self) -> Self {
        Self::apply(Operator::Sub, vec![a, b])
    }

    pub fn mul(a: Self, b: Self) -> Self {
        Self::apply(Operator::Mul, vec![a, b])
    }

    pub fn unary(op: Operator, a: Self) -> Self {
        Self::apply(op, vec![a])
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Depth counted in levels; a single leaf has depth 1.
    pub fn depth(&self) -> usize {
        let mut best = 0;
        // (remaining children, depth) for open operators
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for node in &self.nodes {
            let d = stack.len() + 1;
            best = best.max(d);
            if let Some(top) = stack.last_mut() {
                top.0 -= 1;
            }
            let arity = node.arity();
            if arity > 0 {
                stack.push((arity, d));
            }
            while matches!(stack.last(), Some(&(0, _))) {
                stack.pop();
            }
        }
        best
    }

    /// Exclusive end of the subtree rooted at `start`.
    pub fn subtree_end(&self, start: usize) -> usize {
        let mut need = 1usize;
        let mut i = start;
        while need > 0 {
            need = need - 1 + self.nodes[i].arity();
            i += 1;
        }
        i
    }

    /// Start indices of the children of the operator at `i`.
    pub fn children(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes[i].arity());
        let mut c = i + 1;
        for _ in 0..self.nodes[i].arity() {
            out.push(c);
            c = self.subtree_end(c);
        }
        out
    }

    pub fn subtree(&self, start: usize) -> ExpressionTree {
        Self {
            nodes: self.nodes[start..self.subtree_end(start)].to_vec(),
        }
    }

    /// Replaces the subtree at `at` with `sub`. Fails if the replaced range
    /// holds a frozen node.
    pub fn replace_subtree(&self, at: usize, sub: &ExpressionTree) -> Result<Self, ExprError> {
        let end = self.subtree_end(at);
        if self.nodes[at..end].iter().any(Node::is_frozen) {
            return Err(ExprError::FrozenTarget(at));
        }
        let mut nodes = Vec::with_capacity(self.len() - (end - at) + sub.len());
        nodes.extend_from_slice(&self.nodes[..at]);
        nodes.extend_from_slice(&sub.nodes);
        nodes.extend_from_slice(&self.nodes[end..]);
        Ok(Self { nodes })
    }

    /// Positions of nodes variation operators may target: roots of subtrees
    /// that contain no frozen node.
    pub fn mutable_positions(&self) -> Vec<usize> {
        // walk in reverse so children are resolved before their parent
        let mut has_frozen: Vec<bool> = Vec::with_capacity(8);
        let mut free = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate().rev() {
            let mut f = node.is_frozen();
            for _ in 0..node.arity() {
                f |= has_frozen.pop().expect("malformed tree");
            }
            free[i] = !f;
            has_frozen.push(f);
        }
        (0..self.nodes.len()).filter(|&i| free[i]).collect()
    }

    /// Positions of constants fitted per trial, in pre-order.
    ///
    /// This is every constant that is not stand-alone: open slots and
    /// expandable summary slots both take fresh values in each trial.
    pub fn open_constants(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n {
                Node::Const(c) if c.is_fittable() => Some(i),
                _ => None,
            })
            .collect()
    }

    pub fn constant_values(&self, slots: &[usize]) -> Vec<f64> {
        slots
            .iter()
            .map(|&i| match self.nodes[i] {
                Node::Const(c) => c.value,
                _ => panic!("node {i} is not a constant"),
            })
            .collect()
    }

    pub fn set_constants(&mut self, slots: &[usize], values: &[f64]) {
        debug_assert_eq!(slots.len(), values.len());
        for (&i, &v) in slots.iter().zip(values) {
            match &mut self.nodes[i] {
                Node::Const(c) => c.value = v,
                _ => panic!("node {i} is not a constant"),
            }
        }
    }

    pub fn slot_mut(&mut self, i: usize) -> Option<&mut ConstantSlot> {
        match &mut self.nodes[i] {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Freezes every operator and variable node.
    pub fn freeze_structure(&mut self) {
        for n in &mut self.nodes {
            match n {
                Node::Op { frozen, .. } | Node::Var { frozen, .. } => *frozen = true,
                Node::Const(_) => {}
            }
        }
    }

    /// True when no constant is open or expandable.
    pub fn is_closed(&self) -> bool {
        self.open_constants().is_empty()
    }

    /// Marks all constants stand-alone.
    pub fn close(&mut self) {
        for n in &mut self.nodes {
            if let Node::Const(c) = n {
                c.status = ConstStatus::Standalone;
            }
        }
    }

    /// 0-based indices of variables that appear in the tree.
    pub fn variables(&self) -> BTreeSet<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Var { index, .. } => Some(*index),
                _ => None,
            })
            .collect()
    }

    pub fn operators(&self) -> BTreeSet<Operator> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Op { op, .. } => Some(*op),
                _ => None,
            })
            .collect()
    }

    /// Evaluates at one point. Undefined sub-results (e.g. `inv(0)`) yield a
    /// non-finite value; a non-finite child always makes its parent
    /// non-finite.
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        let (v, _) = self.eval_at(0, point);
        v
    }

    fn eval_at(&self, i: usize, point: &[f64]) -> (f64, usize) {
        match self.nodes[i] {
            Node::Var { index, .. } => (point[index], i + 1),
            Node::Const(c) => (c.value, i + 1),
            Node::Op { op, .. } => {
                if op.arity() == 1 {
                    let (a, next) = self.eval_at(i + 1, point);
                    (op.apply_unary(a), next)
                } else {
                    let (a, mid) = self.eval_at(i + 1, point);
                    let (b, next) = self.eval_at(mid, point);
                    (op.apply_binary(a, b), next)
                }
            }
        }
    }

    /// Evaluates over column-major data (`columns[j][r]` is variable `j` in
    /// row `r`).
    pub fn eval_columns(&self, columns: &[Vec<f64>], rows: usize) -> Vec<f64> {
        let mut stack: Vec<Vec<f64>> = Vec::with_capacity(8);
        for node in self.nodes.iter().rev() {
            match *node {
                Node::Var { index, .. } => {
                    let mut buf = take_buf(rows);
                    buf.extend_from_slice(&columns[index][..rows]);
                    stack.push(buf);
                }
                Node::Const(c) => {
                    let mut buf = take_buf(rows);
                    buf.resize(rows, c.value);
                    stack.push(buf);
                }
                Node::Op { op, .. } => {
                    if op.arity() == 1 {
                        let top = stack.last_mut().expect("malformed tree");
                        for v in top.iter_mut() {
                            *v = op.apply_unary(*v);
                        }
                    } else {
                        let mut a = stack.pop().expect("malformed tree");
                        let b = stack.pop().expect("malformed tree");
                        binary_in_place(op, &mut a, &b);
                        give_buf(b);
                        stack.push(a);
                    }
                }
            }
        }
        stack.pop().expect("empty tree")
    }

    /// Evaluates over column-major data together with the partial
    /// derivatives with respect to the constants at `slots`.
    ///
    /// Returns `(values, jacobian)` with `jacobian[k][r]` the derivative of
    /// row `r` with respect to `slots[k]`. Constants not listed in `slots`
    /// are treated as fixed.
    pub fn eval_with_jacobian(
        &self,
        columns: &[Vec<f64>],
        rows: usize,
        slots: &[usize],
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        struct Dual {
            val: Vec<f64>,
            grads: Vec<(usize, Vec<f64>)>,
        }
        let mut param_of = vec![usize::MAX; self.nodes.len()];
        for (k, &s) in slots.iter().enumerate() {
            param_of[s] = k;
        }
        let mut stack: Vec<Dual> = Vec::with_capacity(8);
        let mut factor = take_buf(rows);
        for (pos, node) in self.nodes.iter().enumerate().rev() {
            match *node {
                Node::Var { index, .. } => {
                    let mut val = take_buf(rows);
                    val.extend_from_slice(&columns[index][..rows]);
                    stack.push(Dual { val, grads: Vec::new() });
                }
                Node::Const(c) => {
                    let grads = if param_of[pos] != usize::MAX {
                        let mut g = take_buf(rows);
                        g.resize(rows, 1.0);
                        vec![(param_of[pos], g)]
                    } else {
                        Vec::new()
                    };
                    let mut val = take_buf(rows);
                    val.resize(rows, c.value);
                    stack.push(Dual { val, grads });
                }
                Node::Op { op, .. } if op.arity() == 1 => {
                    let top = stack.last_mut().expect("malformed tree");
                    if !top.grads.is_empty() {
                        // derivative factor f'(a)
                        factor.clear();
                        match op {
                            Operator::Inv => factor.extend(top.val.iter().map(|a| -1.0 / (a * a))),
                            Operator::Sin => factor.extend(top.val.iter().map(|a| a.cos())),
                            Operator::Cos => factor.extend(top.val.iter().map(|a| -a.sin())),
                            _ => unreachable!(),
                        }
                        for (_, g) in top.grads.iter_mut() {
                            g.iter_mut().zip(&factor).for_each(|(g, f)| *g *= f);
                        }
                    }
                    for v in top.val.iter_mut() {
                        *v = op.apply_unary(*v);
                    }
                }
                Node::Op { op, .. } => {
                    let mut a = stack.pop().expect("malformed tree");
                    let mut b = stack.pop().expect("malformed tree");
                    match op {
                        Operator::Add => {}
                        Operator::Sub => {
                            for (_, g) in b.grads.iter_mut() {
                                g.iter_mut().for_each(|v| *v = -*v);
                            }
                        }
                        Operator::Mul => {
                            for (_, g) in a.grads.iter_mut() {
                                g.iter_mut().zip(&b.val).for_each(|(g, y)| *g *= y);
                            }
                            for (_, g) in b.grads.iter_mut() {
                                g.iter_mut().zip(&a.val).for_each(|(g, x)| *g *= x);
                            }
                        }
                        _ => unreachable!(),
                    }
                    binary_in_place(op, &mut a.val, &b.val);
                    give_buf(b.val);
                    a.grads.append(&mut b.grads);
                    stack.push(a);
                }
            }
        }
        give_buf(factor);
        let root = stack.pop().expect("empty tree");
        let mut jac = vec![Vec::new(); slots.len()];
        for (k, g) in root.grads {
            jac[k] = g;
        }
        for col in jac.iter_mut() {
            if col.is_empty() {
                col.resize(rows, 0.0);
            }
        }
        (root.val, jac)
    }

    /// Canonical text with constant values masked; two trees with the same
    /// key differ only in constant values.
    pub fn shape_key(&self) -> String {
        let mut out = String::new();
        write_node(self, 0, &mut out, false);
        out
    }
}

fn binary_in_place(op: Operator, a: &mut [f64], b: &[f64]) {
    match op {
        Operator::Add => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
        Operator::Sub => a.iter_mut().zip(b).for_each(|(x, y)| *x -= y),
        Operator::Mul => a.iter_mut().zip(b).for_each(|(x, y)| *x *= y),
        _ => unreachable!(),
    }
}

thread_local! {
    static BUFFERS: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// An empty scratch vector with room for `rows` values.
fn take_buf(rows: usize) -> Vec<f64> {
    let mut v = BUFFERS.with(|b| b.borrow_mut().pop()).unwrap_or_default();
    v.clear();
    v.reserve(rows);
    v
}

fn give_buf(v: Vec<f64>) {
    BUFFERS.with(|b| {
        let mut b = b.borrow_mut();
        if b.len() < 256 {
            b.push(v);
        }
    });
}

/// Hands evaluation results back for reuse by later evaluations.
pub fn recycle(bufs: impl IntoIterator<Item = Vec<f64>>) {
    bufs.into_iter().for_each(give_buf);
}

fn is_well_formed(nodes: &[Node]) -> bool {
    let mut need = 1usize;
    for (i, n) in nodes.iter().enumerate() {
        if need == 0 {
            return false;
        }
        need = need - 1 + n.arity();
        if need == 0 && i + 1 != nodes.len() {
            return false;
        }
    }
    need == 0
}

fn write_node(tree: &ExpressionTree, i: usize, out: &mut String, with_values: bool) -> usize {
    use std::fmt::Write;
    match tree.nodes[i] {
        Node::Var { index, frozen } => {
            if frozen {
                out.push('!');
            }
            let _ = write!(out, "x{}", index + 1);
            i + 1
        }
        Node::Const(c) => {
            if with_values {
                let _ = write!(out, "C<{:?},{}>", c.value, c.status.as_str());
            } else {
                let _ = write!(out, "C<{}>", c.status.as_str());
            }
            i + 1
        }
        Node::Op { op, frozen } => {
            if frozen {
                out.push('!');
            }
            out.push('(');
            out.push_str(op.symbol());
            let mut next = i + 1;
            for _ in 0..op.arity() {
                out.push(' ');
                next = write_node(tree, next, out, with_values);
            }
            out.push(')');
            next
        }
    }
}

impl fmt::Display for ExpressionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        write_node(self, 0, &mut out, true);
        f.write_str(&out)
    }
}

impl FromStr for ExpressionTree {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser {
            src: s.as_bytes(),
            pos: 0,
            nodes: Vec::new(),
        };
        p.skip_ws();
        p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("trailing input"));
        }
        Ok(ExpressionTree { nodes: p.nodes })
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    nodes: Vec<Node>,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ParseError {
        ParseError {
            offset: self.pos,
            message: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn token(&mut self) -> &str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() || c == b'(' || c == b')' {
                break;
            }
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("")
    }

    fn expr(&mut self) -> Result<(), ParseError> {
        let frozen = if self.peek() == Some(b'!') {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let start = self.pos;
                let sym = self.token().to_string();
                let op = Operator::from_symbol(&sym).ok_or(ParseError {
                    offset: start,
                    message: format!("unknown operator `{sym}`"),
                })?;
                self.nodes.push(Node::Op { op, frozen });
                for _ in 0..op.arity() {
                    self.skip_ws();
                    match self.peek() {
                        Some(b')') => {
                            return Err(self.err(&format!("`{sym}` expects {} operands", op.arity())))
                        }
                        None => return Err(self.err("unbalanced parenthesis")),
                        _ => {}
                    }
                    self.expr()?;
                }
                self.skip_ws();
                match self.peek() {
                    Some(b')') => {
                        self.pos += 1;
                        Ok(())
                    }
                    None => Err(self.err("unbalanced parenthesis")),
                    Some(_) => Err(self.err(&format!("`{sym}` expects {} operands", op.arity()))),
                }
            }
            Some(b')') => Err(self.err("unexpected `)`")),
            Some(b'x') => {
                let start = self.pos;
                let tok = self.token();
                let index: usize = tok[1..].parse().map_err(|_| ParseError {
                    offset: start,
                    message: format!("bad variable `{tok}`"),
                })?;
                if index == 0 {
                    return Err(ParseError {
                        offset: start,
                        message: "variables are numbered from x1".into(),
                    });
                }
                self.nodes.push(Node::Var {
                    index: index - 1,
                    frozen,
                });
                Ok(())
            }
            Some(b'C') => {
                if frozen {
                    return Err(self.err("constants carry their status instead of `!`"));
                }
                let start = self.pos;
                let tok = self.token().to_string();
                let inner = tok
                    .strip_prefix("C<")
                    .and_then(|t| t.strip_suffix('>'))
                    .ok_or(ParseError {
                        offset: start,
                        message: format!("bad constant `{tok}`"),
                    })?;
                let (v, status) = inner.split_once(',').ok_or(ParseError {
                    offset: start,
                    message: "constant needs `C<value,status>`".into(),
                })?;
                let value: f64 = v.trim().parse().map_err(|_| ParseError {
                    offset: start,
                    message: format!("bad constant value `{v}`"),
                })?;
                let status = match status.trim() {
                    "open" => ConstStatus::Open,
                    "standalone" => ConstStatus::Standalone,
                    "expandable" => ConstStatus::Expandable,
                    other => {
                        return Err(ParseError {
                            offset: start,
                            message: format!("unknown constant status `{other}`"),
                        })
                    }
                };
                self.nodes.push(Node::Const(ConstantSlot { value, status }));
                Ok(())
            }
            Some(_) => {
                let start = self.pos;
                let tok = self.token().to_string();
                let value: f64 = tok.parse().map_err(|_| ParseError {
                    offset: start,
                    message: format!("unexpected token `{tok}`"),
                })?;
                self.nodes.push(Node::Const(ConstantSlot {
                    value,
                    status: ConstStatus::Standalone,
                }));
                Ok(())
            }
        }
    }
}

impl Serialize for ExpressionTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExpressionTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> ExpressionTree {
        s.parse().unwrap()
    }

    #[test]
    fn evaluates_fig1_truth() {
        let phi = t("(- (* x1 x3) (* x2 x4))");
        let v = phi.evaluate(&[1.0, 0.5, 0.1, 0.7]);
        assert!((v - (-0.25)).abs() < 1e-15);
        assert_eq!(t("x1").evaluate(&[3.0]), 3.0);
    }

    #[test]
    fn inv_of_zero_is_non_finite() {
        assert!(!t("(inv x1)").evaluate(&[0.0]).is_finite());
        // inv(inf) would be 0; non-finiteness must still propagate
        assert!(!t("(inv (inv x1))").evaluate(&[0.0]).is_finite());
        assert!(!t("(sin (inv x1))").evaluate(&[0.0]).is_finite());
    }

    #[test]
    fn open_constants_in_preorder() {
        let e = t("(- (* C<0.1,open> x1) C<0.35,open>)");
        let slots = e.open_constants();
        assert_eq!(slots, vec![2, 4]);
        assert_eq!(e.constant_values(&slots), vec![0.1, 0.35]);
        assert!(t("(+ x1 x2)").open_constants().is_empty());
        let e = t("(+ (* C<2,standalone> x1) C<1,open>)");
        assert_eq!(e.constant_values(&e.open_constants()), vec![1.0]);
    }

    #[test]
    fn counts_and_depth() {
        assert_eq!(t("x1").node_count(), 1);
        assert_eq!(t("x1").depth(), 1);
        let e = t("(- (* C<0.1,open> x1) C<0.35,open>)");
        assert_eq!(e.node_count(), 5);
        assert_eq!(e.depth(), 3);
        let e = t("(* (+ x1 x2) (+ x3 x4))");
        assert_eq!(e.node_count(), 7);
        assert_eq!(e.depth(), 3);
        assert_eq!(t("(sin (cos (inv x1)))").depth(), 4);
    }

    #[test]
    fn canonical_text() {
        let e = ExpressionTree::sub(
            ExpressionTree::mul(ExpressionTree::var(0), ExpressionTree::var(2)),
            ExpressionTree::mul(ExpressionTree::var(1), ExpressionTree::var(3)),
        );
        assert_eq!(e.to_string(), "(- (* x1 x3) (* x2 x4))");
        let e = t("(+ x1 C<0.5,open>)");
        assert_eq!(e.open_constants().len(), 1);
        assert_eq!(e.constant_values(&e.open_constants()), vec![0.5]);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let err = "(+ x1".parse::<ExpressionTree>().unwrap_err();
        assert_eq!(err.offset, 5);
        assert!(err.message.contains("unbalanced"));
        assert_eq!("(? x1 x2)".parse::<ExpressionTree>().unwrap_err().offset, 1);
        assert_eq!("(+ x1 x2) x3".parse::<ExpressionTree>().unwrap_err().offset, 10);
        assert!("x0".parse::<ExpressionTree>().is_err());
        assert!("(+ x1)".parse::<ExpressionTree>().is_err());
        assert!("(inv x1 x2)".parse::<ExpressionTree>().is_err());
        assert!("C<1,weird>".parse::<ExpressionTree>().is_err());
    }

    #[test]
    fn freeze_flags_round_trip() {
        let mut e = t("(- (* C<0.1,open> x1) C<0.35,open>)");
        e.freeze_structure();
        e.slot_mut(2).unwrap().status = ConstStatus::Expandable;
        e.slot_mut(4).unwrap().status = ConstStatus::Standalone;
        let s = e.to_string();
        assert_eq!(s, "!(- !(* C<0.1,expandable> !x1) C<0.35,standalone>)");
        assert_eq!(t(&s), e);
        assert_eq!(e.mutable_positions(), vec![2]);
    }

    #[test]
    fn bare_numbers_are_standalone() {
        let e = t("(+ 0.497 (* -0.682 (inv x2)))");
        assert!(e.is_closed());
        assert!((e.evaluate(&[0.0, 2.0]) - (0.497 - 0.341)).abs() < 1e-12);
    }

    #[test]
    fn replace_respects_freezing() {
        let mut e = t("(+ x1 C<1,open>)");
        e.freeze_structure();
        assert_eq!(e.replace_subtree(1, &t("x2")), Err(ExprError::FrozenTarget(1)));
        let r = e.replace_subtree(2, &t("(* C<1,open> x2)")).unwrap();
        assert_eq!(r.to_string(), "!(+ !x1 (* C<1.0,open> x2))");
    }

    #[test]
    fn column_eval_matches_pointwise() {
        let e = t("(+ (* C<0.3,open> (sin x1)) (* (inv x2) (cos (- x1 C<2,standalone>))))");
        let cols = vec![vec![0.4, -1.2, 2.5], vec![0.7, -0.35, 1.9]];
        let v = e.eval_columns(&cols, 3);
        for r in 0..3 {
            let p = e.evaluate(&[cols[0][r], cols[1][r]]);
            assert_eq!(v[r], p);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let e = t("(+ (* C<0.3,open> (sin (* C<1.5,open> x1))) (inv (- x2 C<-0.4,expandable>)))");
        let cols = vec![vec![0.4, -1.2, 2.5], vec![0.7, -0.35, 1.9]];
        let slots = e.open_constants();
        let (val, jac) = e.eval_with_jacobian(&cols, 3, &slots);
        assert_eq!(val, e.eval_columns(&cols, 3));
        let base = e.constant_values(&slots);
        for k in 0..slots.len() {
            let h = 1e-6;
            let mut plus = e.clone();
            let mut p = base.clone();
            p[k] += h;
            plus.set_constants(&slots, &p);
            let mut minus = e.clone();
            p[k] -= 2.0 * h;
            minus.set_constants(&slots, &p);
            let (vp, vm) = (plus.eval_columns(&cols, 3), minus.eval_columns(&cols, 3));
            for r in 0..3 {
                let fd = (vp[r] - vm[r]) / (2.0 * h);
                assert!((fd - jac[k][r]).abs() < 1e-6, "slot {k} row {r}: {fd} vs {}", jac[k][r]);
            }
        }
    }

    #[test]
    fn well_formedness() {
        let v = Node::Var { index: 0, frozen: false };
        let add = Node::Op { op: Operator::Add, frozen: false };
        assert!(ExpressionTree::from_nodes(vec![add, v, v]).is_ok());
        assert_eq!(ExpressionTree::from_nodes(vec![add, v]), Err(ExprError::Malformed));
        assert_eq!(ExpressionTree::from_nodes(vec![v, v]), Err(ExprError::Malformed));
        assert_eq!(ExpressionTree::from_nodes(vec![]), Err(ExprError::Malformed));
    }
}
