//! The control variable outer loop.
//!
//! Variables are released one at a time. Each stage re-scores the pool
//! under the new partition, runs GP with the variables freed so far, and
//! freezes every expression whose fit the trials confirm. Plain GP is the
//! same loop with a single stage that frees everything at once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ConstStatus, Node, Operator};
use crate::fitting::{fit_constants, freeze_equation, FitterConfig, DEFAULT_FIT_THRESH, DEFAULT_VAR_THRESH};
use crate::gp::{create_init_pool, gp_run, Evaluator, GenerationStat, GpParams, HallOfFame, Member, NodeLibrary, Population};
use crate::oracle::{DataOracle, OracleError, VariablePartition};
use crate::seed::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Cvgp,
    Gp,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Cvgp => "cvgp",
            Engine::Gp => "gp",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cvgp" => Ok(Engine::Cvgp),
            "gp" => Ok(Engine::Gp),
            other => Err(format!("unknown engine `{other}` (expected cvgp or gp)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvgpConfig {
    pub gp: GpParams,
    /// Trials per control variable experiment.
    pub trials: usize,
    pub batch_size: usize,
    pub fit_thresh: f64,
    pub var_thresh: f64,
    /// Release order as 0-based variable indices; numerical order if unset.
    pub variable_order: Option<Vec<usize>>,
    pub fitter: FitterConfig,
    pub operators: Vec<Operator>,
    pub master_seed: u64,
}

impl Default for CvgpConfig {
    fn default() -> Self {
        Self {
            gp: GpParams::default(),
            trials: 10,
            batch_size: 256,
            fit_thresh: DEFAULT_FIT_THRESH,
            var_thresh: DEFAULT_VAR_THRESH,
            variable_order: None,
            fitter: FitterConfig::default(),
            operators: vec![Operator::Add, Operator::Sub, Operator::Mul],
            master_seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CvgpError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("variable order {0:?} is not a permutation of the oracle's variables")]
    BadOrder(Vec<usize>),
    #[error("pool size must be at least 2")]
    PoolTooSmall,
}

/// Summary of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// 1-based stage number.
    pub stage: usize,
    /// Variables released at this stage, 1-based names.
    pub freed: Vec<String>,
    pub best_fitness: f64,
    pub best_tree: String,
    /// Pool members that met the fit threshold and were frozen.
    pub frozen_members: usize,
    pub standalone_constants: usize,
    pub expandable_constants: usize,
    pub hof_median_nodes: f64,
    pub evaluations: usize,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub hall_of_fame: HallOfFame,
    pub stages: Vec<StageReport>,
    /// `(stage, stat)` for every generation.
    pub generations: Vec<(usize, GenerationStat)>,
    pub pool: Population,
}

impl RunResult {
    pub fn best(&self) -> Option<&Member> {
        self.hall_of_fame.best()
    }
}

/// Operators plus constants plus every variable freed so far.
pub fn stage_library(base_ops: &[Operator], freed: &[usize]) -> NodeLibrary {
    NodeLibrary {
        operators: base_ops.to_vec(),
        variables: freed.to_vec(),
        constants: true,
    }
}

/// Stage plan for an engine: one variable per stage for CVGP, all at once
/// for GP.
pub fn stage_plan(engine: Engine, order: &[usize]) -> Vec<Vec<usize>> {
    match engine {
        Engine::Cvgp => order.iter().map(|&v| vec![v]).collect(),
        Engine::Gp => vec![order.to_vec()],
    }
}

pub fn cvgp_run(oracle: &DataOracle, cfg: &CvgpConfig) -> Result<RunResult, CvgpError> {
    run_engine(Engine::Cvgp, oracle, cfg)
}

pub fn run_engine(engine: Engine, oracle: &DataOracle, cfg: &CvgpConfig) -> Result<RunResult, CvgpError> {
    let m = oracle.num_vars();
    let order = match &cfg.variable_order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..m).collect::<Vec<_>>() {
                return Err(CvgpError::BadOrder(o.clone()));
            }
            o.clone()
        }
        None => (0..m).collect(),
    };
    run_stages(oracle, cfg, &stage_plan(engine, &order))
}

/// Runs the stage loop for an explicit plan of variable groups.
pub fn run_stages(
    oracle: &DataOracle,
    cfg: &CvgpConfig,
    plan: &[Vec<usize>],
) -> Result<RunResult, CvgpError> {
    if cfg.gp.pool_size < 2 {
        return Err(CvgpError::PoolTooSmall);
    }
    let mut part = VariablePartition::all_controlled(oracle.num_vars());
    let mut freed: Vec<usize> = Vec::new();
    let mut pop: Option<Population> = None;
    let mut stages = Vec::with_capacity(plan.len());
    let mut generations = Vec::new();

    for (si, group) in plan.iter().enumerate() {
        #[cfg(not(target_arch = "wasm32"))]
        let started = std::time::Instant::now();
        for &v in group {
            part.release(v);
            freed.push(v);
        }
        let library = stage_library(&cfg.operators, &freed);
        let mut current = pop.take().unwrap_or_else(|| {
            let mut rng = seed::rng_for(cfg.master_seed, &[tag::INIT]);
            create_init_pool(cfg.gp.pool_size, &library, cfg.gp.init_depth, &mut rng)
        });

        let eval = Evaluator {
            oracle,
            partition: &part,
            trials: cfg.trials,
            batch_size: cfg.batch_size,
            fitter: &cfg.fitter,
        };
        let stage_seed = seed::derive(cfg.master_seed, &[tag::STAGE, si as u64]);
        {
            let mut all: Vec<&mut Member> = current.members.iter_mut().collect();
            eval.score_all(&mut all, stage_seed)?;
        }
        let initial_evals = current.len();
        let (mut next, log) = gp_run(current, &eval, &cfg.gp, &library, seed::derive(stage_seed, &[tag::VARIATION]))?;
        let evaluations = initial_evals + log.iter().map(|g| g.evaluations).sum::<usize>();
        generations.extend(log.into_iter().map(|g| (si + 1, g)));

        let mut frozen_members = 0;
        for member in next.members.iter_mut() {
            if let Some(outcome) = &member.outcome {
                if freeze_equation(&mut member.tree, outcome, cfg.fit_thresh, cfg.var_thresh) {
                    frozen_members += 1;
                }
            }
        }
        if si + 1 == plan.len() {
            finalize(&mut next.hall_of_fame, oracle, &part, cfg, seed::derive(stage_seed, &[tag::FINAL]))?;
        }
        let (mut standalone, mut expandable) = (0, 0);
        for member in &next.members {
            if member.tree.nodes().first().is_some_and(|n| n.is_frozen()) {
                for n in member.tree.nodes() {
                    match n {
                        Node::Const(c) if c.status == ConstStatus::Standalone => standalone += 1,
                        Node::Const(c) if c.status == ConstStatus::Expandable => expandable += 1,
                        _ => {}
                    }
                }
            }
        }
        let best = next.hall_of_fame.best();
        let mut sizes: Vec<usize> = next.hall_of_fame.entries.iter().map(|m| m.tree.node_count()).collect();
        sizes.sort_unstable();
        let hof_median_nodes = match sizes.len() {
            0 => 0.0,
            n if n % 2 == 1 => sizes[n / 2] as f64,
            n => 0.5 * (sizes[n / 2 - 1] + sizes[n / 2]) as f64,
        };
        #[cfg(not(target_arch = "wasm32"))]
        let wall_ms = started.elapsed().as_millis() as u64;
        #[cfg(target_arch = "wasm32")]
        let wall_ms = 0;
        stages.push(StageReport {
            stage: si + 1,
            freed: group.iter().map(|v| format!("x{}", v + 1)).collect(),
            best_fitness: best.map_or(f64::NEG_INFINITY, |m| m.fitness),
            best_tree: best.map(|m| m.tree.to_string()).unwrap_or_default(),
            frozen_members,
            standalone_constants: standalone,
            expandable_constants: expandable,
            hof_median_nodes,
            evaluations,
            wall_ms,
        });
        next.hall_of_fame.entries.iter_mut().for_each(|m| m.outcome = None);
        pop = Some(next);
    }
    let pool = pop.unwrap_or_default();
    Ok(RunResult {
        hall_of_fame: pool.hall_of_fame.clone(),
        stages,
        generations,
        pool,
    })
}

/// Gives every hall-of-fame entry concrete constants: each starts from its
/// best trial's fit, is re-fitted to one fresh batch under the final
/// partition and is then closed.
fn finalize(
    hof: &mut HallOfFame,
    oracle: &DataOracle,
    part: &VariablePartition,
    cfg: &CvgpConfig,
    seed: u64,
) -> Result<(), OracleError> {
    let batch = oracle.gen_trial_data(part, 2, cfg.batch_size, seed)?.swap_remove(0);
    for (i, m) in hof.entries.iter_mut().enumerate() {
        if let Some(o) = &m.outcome {
            let best = o
                .trials
                .iter()
                .filter(|t| t.fitness.is_finite())
                .max_by(|a, b| a.fitness.total_cmp(&b.fitness));
            if let Some(t) = best {
                m.tree.set_constants(&o.slots, &t.constants);
            }
        }
        let fit = fit_constants(&m.tree, &batch, &cfg.fitter, seed::derive(seed, &[i as u64]));
        if fit.fitness.is_finite() {
            let slots = m.tree.open_constants();
            m.tree.set_constants(&slots, &fit.constants);
        }
        m.tree.close();
    }
    Ok(())
}
