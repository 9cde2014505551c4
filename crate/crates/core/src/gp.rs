//! Genetic programming over expression trees with frozen regions.
//!
//! Variation never touches frozen nodes: mutation and crossover only pick
//! roots of fully unfrozen subtrees, so a frozen skeleton survives every
//! generation unchanged. Each offspring is re-scored by a fresh control
//! variable experiment.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{ConstStatus, ExpressionTree, Node, Operator};
use crate::fitting::{adopt_mean_constants, cv_experiment, ExperimentOutcome, FitterConfig};
use crate::oracle::{DataOracle, OracleError, VariablePartition};
use crate::seed::{self, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpParams {
    pub pool_size: usize,
    pub generations: usize,
    pub hof_size: usize,
    pub p_mutate: f64,
    pub p_mate: f64,
    /// Depth cap for subtrees grown by mutation.
    pub mutation_depth: usize,
    /// Depth cap for trees in the initial pool.
    pub init_depth: usize,
    /// Offspring above this many nodes are discarded.
    pub max_nodes: usize,
    /// End the run once the hall of fame holds an expression that fits
    /// every trial exactly.
    pub early_stop: bool,
}

impl Default for GpParams {
    fn default() -> Self {
        Self {
            pool_size: 100,
            generations: 100,
            hof_size: 10,
            p_mutate: 0.5,
            p_mate: 0.5,
            mutation_depth: 3,
            init_depth: 4,
            max_nodes: 50,
            early_stop: true,
        }
    }
}

/// Building blocks available to mutation and initialization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLibrary {
    pub operators: Vec<Operator>,
    /// 0-based variable indices.
    pub variables: Vec<usize>,
    pub constants: bool,
}

impl NodeLibrary {
    fn terminal_count(&self) -> usize {
        self.variables.len() + usize::from(self.constants)
    }

    fn random_terminal<R: Rng + ?Sized>(&self, rng: &mut R) -> ExpressionTree {
        let i = rng.random_range(0..self.terminal_count());
        if i < self.variables.len() {
            ExpressionTree::var(self.variables[i])
        } else {
            ExpressionTree::open(rng.random_range(-1.0..1.0))
        }
    }

    /// Grows a random tree of at most `max_depth` levels: every position
    /// picks uniformly among operators and terminals until the depth cap
    /// forces a terminal.
    pub fn grow<R: Rng + ?Sized>(&self, max_depth: usize, rng: &mut R) -> ExpressionTree {
        assert!(self.terminal_count() > 0, "library has no terminals");
        let choices = self.operators.len() + self.terminal_count();
        if max_depth <= 1 || rng.random_range(0..choices) >= self.operators.len() {
            return self.random_terminal(rng);
        }
        let op = self.operators[rng.random_range(0..self.operators.len())];
        let children = (0..op.arity()).map(|_| self.grow(max_depth - 1, rng)).collect();
        ExpressionTree::apply(op, children)
    }

    /// Whether every node of `tree` comes from this library.
    pub fn admits(&self, tree: &ExpressionTree) -> bool {
        tree.nodes().iter().all(|n| match n {
            Node::Op { op, .. } => self.operators.contains(op),
            Node::Var { index, .. } => self.variables.contains(index),
            Node::Const(_) => true,
        })
    }
}

/// A pool member with its latest experiment outcome.
#[derive(Clone, Debug)]
pub struct Member {
    pub tree: ExpressionTree,
    pub outcome: Option<ExperimentOutcome>,
    pub fitness: f64,
    /// Creation order; older members win ties.
    pub id: u64,
}

impl Member {
    fn new(tree: ExpressionTree, id: u64) -> Self {
        Self {
            tree,
            outcome: None,
            fitness: f64::NEG_INFINITY,
            id,
        }
    }
}

/// Best first: higher fitness, then fewer nodes, then older.
pub fn rank(a: &Member, b: &Member) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then(a.tree.node_count().cmp(&b.tree.node_count()))
        .then(a.id.cmp(&b.id))
}

#[derive(Clone, Debug, Default)]
pub struct HallOfFame {
    pub entries: Vec<Member>,
}

impl HallOfFame {
    /// Top `k` distinct expressions of `candidates`.
    pub fn top_k<'a>(candidates: impl IntoIterator<Item = &'a Member>, k: usize) -> Self {
        let mut all: Vec<&Member> = candidates.into_iter().collect();
        all.sort_by(|a, b| rank(a, b));
        let mut seen = HashSet::new();
        let entries = all
            .into_iter()
            .filter(|m| seen.insert(m.tree.to_string()))
            .take(k)
            .cloned()
            .collect();
        Self { entries }
    }

    pub fn best(&self) -> Option<&Member> {
        self.entries.first()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Population {
    pub members: Vec<Member>,
    pub hall_of_fame: HallOfFame,
    next_id: u64,
}

impl Population {
    pub fn from_trees(trees: impl IntoIterator<Item = ExpressionTree>) -> Self {
        let mut pop = Self::default();
        for t in trees {
            let id = pop.fresh_id();
            pop.members.push(Member::new(t, id));
        }
        pop
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Replaces a uniformly chosen mutable subtree with a freshly grown one.
/// Returns an unchanged clone when nothing is mutable or the result would
/// exceed `max_nodes`.
pub fn mutate<R: Rng + ?Sized>(
    expr: &ExpressionTree,
    library: &NodeLibrary,
    max_depth: usize,
    max_nodes: usize,
    rng: &mut R,
) -> ExpressionTree {
    let targets = expr.mutable_positions();
    if targets.is_empty() {
        return expr.clone();
    }
    let at = targets[rng.random_range(0..targets.len())];
    let sub = library.grow(max_depth, rng);
    match expr.replace_subtree(at, &sub) {
        Ok(t) if t.node_count() <= max_nodes => t,
        _ => expr.clone(),
    }
}

/// One-point subtree crossover between mutable subtrees of `a` and `b`.
/// Returns unchanged clones when either parent has nothing mutable or an
/// offspring would exceed `max_nodes`.
pub fn mate<R: Rng + ?Sized>(
    a: &ExpressionTree,
    b: &ExpressionTree,
    max_nodes: usize,
    rng: &mut R,
) -> (ExpressionTree, ExpressionTree) {
    let (ta, tb) = (a.mutable_positions(), b.mutable_positions());
    if ta.is_empty() || tb.is_empty() {
        return (a.clone(), b.clone());
    }
    let i = ta[rng.random_range(0..ta.len())];
    let j = tb[rng.random_range(0..tb.len())];
    let (sa, sb) = (a.subtree(i), b.subtree(j));
    match (a.replace_subtree(i, &sb), b.replace_subtree(j, &sa)) {
        (Ok(na), Ok(nb)) if na.node_count() <= max_nodes && nb.node_count() <= max_nodes => (na, nb),
        _ => (a.clone(), b.clone()),
    }
}

/// Keeps the best `m - m/10` members and `m/10` uniformly random members of
/// the remainder. Pools of at most `m` are returned whole, best first.
pub fn selection<R: Rng + ?Sized>(mut pool: Vec<Member>, m: usize, rng: &mut R) -> Vec<Member> {
    pool.sort_by(rank);
    if pool.len() <= m {
        return pool;
    }
    let random = m / 10;
    let top = m - random;
    let mut rest = pool.split_off(top);
    let picks = index::sample(rng, rest.len(), random).into_vec();
    let mut picked: Vec<Member> = Vec::with_capacity(random);
    // take in descending index order so swap_remove does not disturb picks
    let mut picks_sorted = picks;
    picks_sorted.sort_unstable_by(|a, b| b.cmp(a));
    for i in picks_sorted {
        picked.push(rest.swap_remove(i));
    }
    picked.sort_by(rank);
    pool.extend(picked);
    pool
}

/// `m` random trees grown from `library`.
pub fn create_init_pool<R: Rng + ?Sized>(
    m: usize,
    library: &NodeLibrary,
    max_depth: usize,
    rng: &mut R,
) -> Population {
    Population::from_trees((0..m).map(|_| library.grow(max_depth, rng)))
}

/// Everything needed to score an expression by a fresh control variable
/// experiment.
#[derive(Clone, Debug)]
pub struct Evaluator<'a> {
    pub oracle: &'a DataOracle,
    pub partition: &'a VariablePartition,
    pub trials: usize,
    pub batch_size: usize,
    pub fitter: &'a FitterConfig,
}

impl Evaluator<'_> {
    /// Queries fresh trial data, fits, and stores the outcome on `member`.
    /// Fitted constants are written back as their cross-trial means.
    pub fn score(&self, member: &mut Member, seed: u64) -> Result<(), OracleError> {
        let data_seed = seed::training_seed(seed, &[tag::TRIAL]);
        let data = self
            .oracle
            .gen_trial_data(self.partition, self.trials, self.batch_size, data_seed)?;
        let outcome = cv_experiment(&member.tree, self.partition, &data, self.fitter, seed);
        adopt_mean_constants(&mut member.tree, &outcome);
        member.fitness = outcome.scalar_fitness();
        member.outcome = Some(outcome);
        Ok(())
    }

    /// Scores `members` (in parallel when enabled); member `i` uses a seed
    /// derived from `(seed, i)` so results do not depend on scheduling.
    pub fn score_all(&self, members: &mut [&mut Member], seed: u64) -> Result<(), OracleError> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            members
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(i, m)| self.score(m, seed::derive(seed, &[tag::EVAL, i as u64])))
        }
        #[cfg(not(feature = "parallel"))]
        {
            members
                .iter_mut()
                .enumerate()
                .try_for_each(|(i, m)| self.score(m, seed::derive(seed, &[tag::EVAL, i as u64])))
        }
    }
}

/// Per-generation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStat {
    pub generation: usize,
    pub pool_best: f64,
    pub hof_best: f64,
    pub mean_nodes: f64,
    pub evaluations: usize,
}

/// Runs `params.generations` generations of GP on `pop`.
///
/// Every member must already carry an outcome. Each generation mutates
/// members with probability `p_mutate`, shuffles, mates adjacent pairs with
/// probability `p_mate`, re-scores every changed expression on fresh trial
/// data, refreshes the hall of fame from the new pool and the old hall, and
/// selects the next pool from parents and offspring together.
pub fn gp_run(
    mut pop: Population,
    eval: &Evaluator<'_>,
    params: &GpParams,
    library: &NodeLibrary,
    seed: u64,
) -> Result<(Population, Vec<GenerationStat>), OracleError> {
    pop.hall_of_fame = HallOfFame::top_k(&pop.members, params.hof_size);
    let mut log = Vec::with_capacity(params.generations);
    for gen in 0..params.generations {
        let mut rng = seed::rng_for(seed, &[tag::VARIATION, gen as u64]);
        let parents = std::mem::take(&mut pop.members);

        let mut next: Vec<(Member, bool)> = Vec::with_capacity(parents.len());
        for p in &parents {
            if rng.random_bool(params.p_mutate) {
                let t = mutate(&p.tree, library, params.mutation_depth, params.max_nodes, &mut rng);
                if t != p.tree {
                    next.push((Member::new(t, 0), true));
                    continue;
                }
            }
            next.push((p.clone(), false));
        }
        next.shuffle(&mut rng);
        for pair in next.chunks_mut(2) {
            if pair.len() == 2 && rng.random_bool(params.p_mate) {
                let (a, b) = mate(&pair[0].0.tree, &pair[1].0.tree, params.max_nodes, &mut rng);
                if a != pair[0].0.tree || b != pair[1].0.tree {
                    pair[0] = (Member::new(a, 0), true);
                    pair[1] = (Member::new(b, 0), true);
                }
            }
        }
        for (m, changed) in next.iter_mut() {
            if *changed {
                m.id = pop.fresh_id();
            }
        }

        let mut changed: Vec<&mut Member> = next
            .iter_mut()
            .filter(|(_, c)| *c)
            .map(|(m, _)| m)
            .collect();
        let evaluations = changed.len();
        eval.score_all(&mut changed, seed::derive(seed, &[tag::EVAL, gen as u64]))?;

        let new_pool: Vec<Member> = next.iter().map(|(m, _)| m.clone()).collect();
        pop.hall_of_fame = HallOfFame::top_k(
            new_pool.iter().chain(pop.hall_of_fame.entries.iter()),
            params.hof_size,
        );

        let mut candidates = parents;
        candidates.extend(next.into_iter().filter(|(_, c)| *c).map(|(m, _)| m));
        pop.members = selection(candidates, params.pool_size, &mut rng);

        let pool_best = pop.members.iter().map(|m| m.fitness).fold(f64::NEG_INFINITY, f64::max);
        log.push(GenerationStat {
            generation: gen + 1,
            pool_best,
            hof_best: pop.hall_of_fame.best().map_or(f64::NEG_INFINITY, |m| m.fitness),
            mean_nodes: pop.members.iter().map(|m| m.tree.node_count() as f64).sum::<f64>()
                / pop.members.len().max(1) as f64,
            evaluations,
        });
        let solved = pop
            .hall_of_fame
            .entries
            .iter()
            .filter_map(|m| m.outcome.as_ref())
            .any(ExperimentOutcome::is_exact);
        if params.early_stop && solved {
            break;
        }
    }
    Ok((pop, log))
}

/// The frozen part of a tree as a sequence of node identities in pre-order.
/// Variation operators must leave it unchanged.
pub fn frozen_skeleton(tree: &ExpressionTree) -> Vec<String> {
    tree.nodes()
        .iter()
        .filter(|n| n.is_frozen())
        .map(|n| match n {
            Node::Op { op, .. } => op.symbol().to_string(),
            Node::Var { index, .. } => format!("x{}", index + 1),
            Node::Const(c) => {
                debug_assert_eq!(c.status, ConstStatus::Standalone);
                format!("C<{:?}>", c.value)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::make_oracle;
    use crate::seed::rng;

    fn lib(ops: &[Operator], vars: &[usize]) -> NodeLibrary {
        NodeLibrary {
            operators: ops.to_vec(),
            variables: vars.to_vec(),
            constants: true,
        }
    }

    fn t(s: &str) -> ExpressionTree {
        s.parse().unwrap()
    }

    #[test]
    fn grow_respects_depth_and_library() {
        let l = lib(&[Operator::Add, Operator::Mul, Operator::Inv], &[0, 2]);
        let mut r = rng(1);
        for _ in 0..500 {
            let g = l.grow(3, &mut r);
            assert!(g.depth() <= 3);
            assert!(l.admits(&g));
            assert!(g.variables().iter().all(|v| [0, 2].contains(v)));
        }
    }

    #[test]
    fn fully_frozen_tree_is_not_mutated() {
        let mut e = t("(- (* x1 x3) (* x2 x4))");
        e.freeze_structure();
        let l = lib(&[Operator::Add], &[0]);
        let mut r = rng(2);
        for _ in 0..50 {
            assert_eq!(mutate(&e, &l, 3, 50, &mut r), e);
        }
    }

    #[test]
    fn mutation_expands_only_summary_constants() {
        // C3 x1 - C4 with C4 expandable can become C3 x1 - C4 x2
        let e = t("!(- !(* C<0.1,standalone> !x1) C<0.35,expandable>)");
        let l = lib(&[Operator::Mul], &[1]);
        let mut r = rng(3);
        let mut seen_target = false;
        for _ in 0..400 {
            let m = mutate(&e, &l, 3, 50, &mut r);
            assert_eq!(frozen_skeleton(&m), frozen_skeleton(&e));
            assert!(m.variables().iter().all(|v| [0, 1].contains(v)));
            let s = m.shape_key();
            if s == "!(- !(* C<standalone> !x1) (* C<open> x2))" {
                seen_target = true;
            }
        }
        assert!(seen_target);
    }

    #[test]
    fn mating_conserves_nodes_and_skeletons() {
        let l = lib(&[Operator::Add, Operator::Sub, Operator::Mul], &[0, 1]);
        let mut r = rng(4);
        for _ in 0..300 {
            let a = l.grow(4, &mut r);
            let b = l.grow(4, &mut r);
            let (c, d) = mate(&a, &b, 1000, &mut r);
            assert_eq!(a.node_count() + b.node_count(), c.node_count() + d.node_count());
            let mut before: Vec<String> = a.nodes().iter().chain(b.nodes()).map(|n| format!("{n:?}")).collect();
            let mut after: Vec<String> = c.nodes().iter().chain(d.nodes()).map(|n| format!("{n:?}")).collect();
            before.sort();
            after.sort();
            assert_eq!(before, after);
        }
        // only expandable leaves are swappable here
        let a = t("!(+ !x1 C<1,expandable>)");
        let b = t("!(* !x2 C<2,expandable>)");
        let (c, d) = mate(&a, &b, 50, &mut r);
        assert_eq!(c.to_string(), "!(+ !x1 C<2.0,expandable>)");
        assert_eq!(d.to_string(), "!(* !x2 C<1.0,expandable>)");
    }

    #[test]
    fn mating_with_frozen_parent_is_a_no_op() {
        let mut a = t("(+ x1 x2)");
        a.freeze_structure();
        let b = t("(* x1 C<1,open>)");
        let (c, d) = mate(&a, &b, 50, &mut rng(5));
        assert_eq!((c, d), (a, b));
    }

    fn scored(fitness: &[f64], trees: &[&str]) -> Vec<Member> {
        fitness
            .iter()
            .zip(trees)
            .enumerate()
            .map(|(i, (&f, s))| Member {
                tree: t(s),
                outcome: None,
                fitness: f,
                id: i as u64,
            })
            .collect()
    }

    #[test]
    fn selection_cases() {
        let mut r = rng(6);
        // pool of size m, m/10 == 0: exactly the pool, best first
        let pool = scored(&[-3.0, -1.0, -2.0], &["x1", "x1", "x1"]);
        let sel = selection(pool, 3, &mut r);
        assert_eq!(sel.iter().map(|m| m.fitness).collect::<Vec<_>>(), vec![-1.0, -2.0, -3.0]);
        // ties go to smaller trees
        let pool = scored(&[-1.0, -1.0, -1.0], &["(+ x1 x1)", "x1", "(sin x1)"]);
        let sel = selection(pool, 2, &mut r);
        assert_eq!(sel[0].tree.to_string(), "x1");
        assert_eq!(sel[1].tree.to_string(), "(sin x1)");
        // m beyond pool size keeps everything
        let pool = scored(&[-1.0, -2.0], &["x1", "x1"]);
        assert_eq!(selection(pool, 10, &mut r).len(), 2);
        // 10% random survivors come from outside the top
        let f: Vec<f64> = (0..40).map(|i| -(i as f64)).collect();
        let names = vec!["x1"; 40];
        let sel = selection(scored(&f, &names), 20, &mut r);
        assert_eq!(sel.len(), 20);
        let top: Vec<f64> = sel[..18].iter().map(|m| m.fitness).collect();
        assert_eq!(top, (0..18).map(|i| -(i as f64)).collect::<Vec<_>>());
        assert!(sel[18..].iter().all(|m| m.fitness <= -18.0));
    }

    #[test]
    fn hall_of_fame_is_sorted_and_distinct() {
        let pool = scored(&[-2.0, -1.0, -1.0, -3.0], &["x1", "x2", "x2", "(+ x1 x2)"]);
        let h = HallOfFame::top_k(&pool, 3);
        let names: Vec<String> = h.entries.iter().map(|m| m.tree.to_string()).collect();
        assert_eq!(names, vec!["x2", "x1", "(+ x1 x2)"]);
    }

    #[test]
    fn init_pool_is_deterministic_and_closed() {
        let l = lib(&[Operator::Add, Operator::Mul], &[0]);
        let a = create_init_pool(25, &l, 4, &mut rng(7));
        let b = create_init_pool(25, &l, 4, &mut rng(7));
        assert_eq!(a.len(), 25);
        for (x, y) in a.members.iter().zip(&b.members) {
            assert_eq!(x.tree, y.tree);
            assert!(l.admits(&x.tree) && x.tree.depth() <= 4);
        }
    }

    fn small_run(generations: usize, p_mutate: f64, p_mate: f64, seed: u64) -> (Population, Population, Vec<GenerationStat>) {
        let oracle = make_oracle(t("(* 0.7 x1)"), 0.0, seed).unwrap();
        let part = VariablePartition::all_free(1);
        let fitter = FitterConfig::default();
        let eval = Evaluator {
            oracle: &oracle,
            partition: &part,
            trials: 3,
            batch_size: 32,
            fitter: &fitter,
        };
        let l = lib(&[Operator::Mul], &[0]);
        let params = GpParams {
            pool_size: 20,
            generations,
            p_mutate,
            p_mate,
            ..GpParams::default()
        };
        let mut pop = create_init_pool(params.pool_size, &l, params.init_depth, &mut rng(seed));
        let mut refs: Vec<&mut Member> = pop.members.iter_mut().collect();
        eval.score_all(&mut refs, seed).unwrap();
        let (out, log) = gp_run(pop.clone(), &eval, &params, &l, seed).unwrap();
        (pop, out, log)
    }

    #[test]
    fn zero_generations_only_fills_the_hall_of_fame() {
        let (init, out, log) = small_run(0, 0.5, 0.5, 1);
        assert!(log.is_empty());
        assert_eq!(out.members.len(), init.members.len());
        let best = init.members.iter().map(|m| m.fitness).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.hall_of_fame.best().unwrap().fitness, best);
    }

    #[test]
    fn no_variation_keeps_fitness_multiset() {
        let (init, out, log) = small_run(5, 0.0, 0.0, 2);
        assert!(log.iter().all(|g| g.evaluations == 0));
        let mut a: Vec<f64> = init.members.iter().map(|m| m.fitness).collect();
        let mut b: Vec<f64> = out.members.iter().map(|m| m.fitness).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn hall_of_fame_never_regresses_and_runs_repeat() {
        let (_, out, log) = small_run(15, 0.5, 0.5, 3);
        for w in log.windows(2) {
            assert!(w[1].hof_best >= w[0].hof_best);
        }
        assert!(out.hall_of_fame.best().unwrap().fitness > -1e-12);
        let (_, again, log2) = small_run(15, 0.5, 0.5, 3);
        assert_eq!(log, log2);
        let names = |p: &Population| p.hall_of_fame.entries.iter().map(|m| m.tree.to_string()).collect::<Vec<_>>();
        assert_eq!(names(&out), names(&again));
    }
}
