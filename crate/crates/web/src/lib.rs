//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export takes plain numbers or strings and returns a JSON string, so
//! the page needs no generated type glue beyond `JSON.parse`. The `*_json`
//! functions hold the logic and are what the native tests call.

use cvgp::bench::OperandSet;
use cvgp::combinatorics::{approx, count_exact};
use cvgp::cvgp::{run_engine, CvgpConfig, Engine};
use cvgp::fitting::{cv_experiment, freeze_equation, FitterConfig, DEFAULT_FIT_THRESH, DEFAULT_VAR_THRESH};
use cvgp::gp::GpParams;
use cvgp::metrics::compute_metrics;
use cvgp::oracle::{make_oracle, TrialBatch, VariablePartition};
use cvgp::seed;
use cvgp::{ConstStatus, ExpressionTree};
use rand::Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct CountRow {
    l: usize,
    a: String,
    s: String,
    /// `log10 S`, for plotting.
    log10_s: f64,
}

/// Exact sizes `A(l)` and `S(l)` for odd `l <= l_max`.
pub fn count_table_json(l_max: usize, m: usize, o: usize) -> Result<String, String> {
    if l_max == 0 || l_max > 201 || o == 0 || m > 64 || o > 64 {
        return Err("need 1 <= l_max <= 201, m <= 64 and 1 <= o <= 64".into());
    }
    let rows: Vec<CountRow> = (1..=l_max)
        .step_by(2)
        .map(|l| {
            let c = count_exact(l, m, o).map_err(|e| e.to_string())?;
            Ok(CountRow {
                l,
                a: c.a.to_string(),
                s: c.s.to_string(),
                log10_s: approx(&c.s).log10(),
            })
        })
        .collect::<Result<_, String>>()?;
    Ok(serde_json::to_string(&rows).expect("rows serialize"))
}

#[derive(Serialize)]
struct TrialFit {
    controlled: [f64; 3],
    c1: f64,
    c2: f64,
    mse: f64,
}

#[derive(Serialize)]
struct ExperimentView {
    truth: &'static str,
    reduced: String,
    trials: Vec<TrialFit>,
    frozen: bool,
    statuses: Vec<&'static str>,
}

/// Control variable experiment on `x1 x3 - x2 x4`: each trial holds
/// `(x2, x3, x4)` at one triple from `controlled` (flattened, three values
/// per trial) and samples `x1`. The reduced form `C1 x1 - C2` is fitted per
/// trial and its constants classified.
pub fn control_experiment_json(controlled: &[f64], seed: u64) -> Result<String, String> {
    const TRUTH: &str = "(- (* x1 x3) (* x2 x4))";
    if controlled.len() < 6 || !controlled.len().is_multiple_of(3) {
        return Err("give at least two trials of three values each".into());
    }
    if controlled.iter().any(|v| !v.is_finite()) {
        return Err("controlled values must be finite".into());
    }
    let truth: ExpressionTree = TRUTH.parse().expect("valid truth");
    let mut rng = seed::rng(seed);
    let batches: Vec<TrialBatch> = controlled
        .chunks(3)
        .map(|v| {
            let points: Vec<Vec<f64>> = (0..64).map(|_| vec![rng.random_range(-3.0..3.0), v[0], v[1], v[2]]).collect();
            let y = points.iter().map(|p| truth.evaluate(p)).collect();
            TrialBatch::from_rows([(1, v[0]), (2, v[1]), (3, v[2])].into(), &points, y)
        })
        .collect();
    let mut reduced: ExpressionTree = "(- (* C<1,open> x1) C<1,open>)".parse().expect("valid form");
    let part = VariablePartition::with_free(4, [0]);
    let out = cv_experiment(&reduced, &part, &batches, &FitterConfig::default(), seed);
    let frozen = freeze_equation(&mut reduced, &out, DEFAULT_FIT_THRESH, DEFAULT_VAR_THRESH);
    let statuses = out
        .slots
        .iter()
        .map(|&s| match reduced.slot_mut(s).map(|c| c.status) {
            Some(ConstStatus::Standalone) => "standalone",
            Some(ConstStatus::Expandable) => "expandable",
            _ => "open",
        })
        .collect();
    let trials = controlled
        .chunks(3)
        .zip(&out.trials)
        .map(|(v, t)| TrialFit {
            controlled: [v[0], v[1], v[2]],
            c1: t.constants[0],
            c2: t.constants[1],
            mse: t.mse(),
        })
        .collect();
    let view = ExperimentView {
        truth: TRUTH,
        reduced: reduced.to_string(),
        trials,
        frozen,
        statuses,
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[derive(Serialize)]
struct StageView {
    stage: usize,
    freed: Vec<String>,
    best_fitness: f64,
    best_tree: String,
    frozen_members: usize,
}

#[derive(Serialize)]
struct RunView {
    engine: &'static str,
    best: String,
    nodes: usize,
    test_nmse: f64,
    stages: Vec<StageView>,
}

/// A small CVGP or GP run against `truth` with a scaled-down budget.
pub fn run_json(truth: &str, operands: &str, engine: &str, generations: usize, seed: u64) -> Result<String, String> {
    let truth: ExpressionTree = truth.parse().map_err(|e| format!("truth: {e:?}"))?;
    let operands: OperandSet = operands.parse().map_err(|e| format!("operands: {e}"))?;
    let engine: Engine = engine.parse()?;
    if generations == 0 || generations > 500 {
        return Err("generations must be in 1..=500".into());
    }
    if truth.variables().len() > 6 {
        return Err("at most 6 variables in the demo".into());
    }
    let oracle = make_oracle(truth, 0.0, seed).map_err(|e| e.to_string())?;
    let cfg = CvgpConfig {
        gp: GpParams {
            pool_size: 60,
            generations,
            ..GpParams::default()
        },
        trials: 4,
        batch_size: 64,
        operators: operands.0,
        master_seed: seed,
        ..CvgpConfig::default()
    };
    let result = run_engine(engine, &oracle, &cfg).map_err(|e| e.to_string())?;
    let best = result.best().ok_or("empty hall of fame")?;
    let test = oracle
        .sample_free(256, seed::test_seed(seed, &[seed::tag::TEST]))
        .map_err(|e| e.to_string())?;
    let pred = best.tree.eval_columns(test.columns(), test.batch_size());
    let test_nmse = compute_metrics(&pred, test.y()).map_or(f64::NAN, |m| m.nmse);
    let view = RunView {
        engine: engine.as_str(),
        best: best.tree.to_string(),
        nodes: best.tree.node_count(),
        test_nmse,
        stages: result
            .stages
            .iter()
            .map(|s| StageView {
                stage: s.stage,
                freed: s.freed.clone(),
                best_fitness: s.best_fitness,
                best_tree: s.best_tree.clone(),
                frozen_members: s.frozen_members,
            })
            .collect(),
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[wasm_bindgen]
pub fn count_table(l_max: usize, m: usize, o: usize) -> Result<String, JsError> {
    count_table_json(l_max, m, o).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn control_experiment(controlled: Vec<f64>, seed: u32) -> Result<String, JsError> {
    control_experiment_json(&controlled, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn run_small(truth: &str, operands: &str, engine: &str, generations: usize, seed: u32) -> Result<String, JsError> {
    run_json(truth, operands, engine, generations, seed.into()).map_err(|e| JsError::new(&e))
}
