use cvgp::cvgp::{run_engine, run_stages, CvgpConfig, Engine};
use cvgp::fitting::{cv_experiment, fit_constants, FitterConfig};
use cvgp::gp::{create_init_pool, gp_run, Evaluator, GpParams, NodeLibrary};
use cvgp::metrics::recovered;
use cvgp::oracle::{make_oracle, SampleRange, VariablePartition};
use cvgp::seed;
use cvgp::{ExpressionTree, Operator};
use nalgebra::{DMatrix, DVector};

fn t(s: &str) -> ExpressionTree {
    s.parse().unwrap()
}

#[test]
fn affine_fits_match_normal_equations() {
    let form = t("(+ (+ (* C<0,open> x1) (* C<0,open> x2)) C<0,open>)");
    for (k, sigma) in [0.0, 0.3].into_iter().enumerate() {
        let oracle = make_oracle(t("(+ (- (* 0.7 x1) (* 1.9 x2)) 0.25)"), sigma, k as u64).unwrap();
        let batch = oracle.sample_free(200, 1).unwrap();
        let fit = fit_constants(&form, &batch, &FitterConfig::default(), 3);
        let n = batch.batch_size();
        let x = DMatrix::from_fn(n, 3, |r, c| match c {
            0 => batch.columns()[0][r],
            1 => batch.columns()[1][r],
            _ => 1.0,
        });
        let y = DVector::from_column_slice(batch.y());
        let beta = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * y));
        for (c, b) in fit.constants.iter().zip(beta.iter()) {
            assert!((c - b).abs() < 1e-6, "sigma {sigma}: {c} vs {b}");
        }
    }
}

#[test]
fn more_restarts_never_hurt() {
    let oracle = make_oracle(t("(sin (+ (* 2.3 x1) 0.4))"), 0.0, 4).unwrap();
    let batch = oracle.sample_free(64, 2).unwrap();
    let form = t("(sin (+ (* C<0,open> x1) C<0,open>))");
    let mut last = f64::INFINITY;
    for restarts in 0..6 {
        let cfg = FitterConfig {
            restarts,
            ..FitterConfig::default()
        };
        let mse = -fit_constants(&form, &batch, &cfg, 9).fitness;
        assert!(mse <= last, "restarts {restarts}: {mse} > {last}");
        last = mse;
    }
}

#[test]
fn summary_constants_vary_more_than_genuine_ones() {
    // with x2 controlled, C1 stands for x2 and C2 for the genuine 0.5
    let oracle = make_oracle(t("(+ (* x1 x2) 0.5)"), 0.0, 5).unwrap();
    let part = VariablePartition::with_free(2, [0]);
    let data = oracle.gen_trial_data(&part, 10, 128, 1).unwrap();
    let out = cv_experiment(&t("(+ (* C<1,open> x1) C<1,open>)"), &part, &data, &FitterConfig::default(), 2);
    let v = out.variances();
    assert!(v[0] > v[1], "{v:?}");
    assert!(v[1] < 1e-12);
    assert!((out.means()[1] - 0.5).abs() < 1e-9);
}

#[test]
fn linear_single_variable_is_easy() {
    let lib = NodeLibrary {
        operators: vec![Operator::Mul],
        variables: vec![0],
        constants: true,
    };
    let params = GpParams::default();
    let fitter = FitterConfig::default();
    let mut solved = 0;
    for s in 0..10 {
        let oracle = make_oracle(t("(* 1.7 x1)"), 0.0, s).unwrap();
        let part = VariablePartition::all_free(1);
        let eval = Evaluator {
            oracle: &oracle,
            partition: &part,
            trials: 10,
            batch_size: 256,
            fitter: &fitter,
        };
        let mut pop = create_init_pool(params.pool_size, &lib, params.init_depth, &mut seed::rng(s));
        {
            let mut all: Vec<_> = pop.members.iter_mut().collect();
            eval.score_all(&mut all, s).unwrap();
        }
        let (pop, _) = gp_run(pop, &eval, &params, &lib, s).unwrap();
        solved += usize::from(pop.hall_of_fame.best().unwrap().fitness >= -1e-6);
    }
    assert!(solved >= 9, "{solved}/10");
}

fn product_diff_config(seed: u64) -> CvgpConfig {
    CvgpConfig {
        operators: vec![Operator::Add, Operator::Sub, Operator::Mul],
        master_seed: seed,
        ..CvgpConfig::default()
    }
}

#[test]
fn product_difference_is_discovered_stage_by_stage() {
    let truth = t("(- (* x1 x3) (* x2 x4))");
    let mut hits = 0;
    let mut monotone = 0;
    for s in 0..3 {
        let oracle = make_oracle(truth.clone(), 0.0, s).unwrap();
        let r = run_engine(Engine::Cvgp, &oracle, &product_diff_config(s)).unwrap();
        assert_eq!(r.stages.len(), 4);
        let best = &r.best().unwrap().tree;
        hits += usize::from(recovered(best, &truth, 4, &SampleRange::default(), &mut seed::rng(s)));
        let medians: Vec<f64> = r.stages.iter().map(|st| st.hof_median_nodes).collect();
        monotone += usize::from(medians.windows(2).all(|w| w[0] <= w[1]));
        // stage 1 sees only x1: its best expression is the reduced form C1 x1 - C2
        assert!(r.stages[0].best_fitness >= -1e-12, "{:?}", r.stages[0]);
    }
    assert!(hits >= 2, "{hits}/3 recovered");
    assert!(monotone >= 2, "{monotone}/3 runs grew monotonically");
}

#[test]
fn early_stages_only_use_released_variables() {
    let oracle = make_oracle(t("(- (* x1 x3) (* x2 x4))"), 0.0, 8).unwrap();
    let mut cfg = product_diff_config(8);
    cfg.gp.generations = 10;
    cfg.gp.pool_size = 30;
    let r = run_stages(&oracle, &cfg, &[vec![0], vec![1]]).unwrap();
    for m in r.pool.members.iter().chain(&r.hall_of_fame.entries) {
        assert!(m.tree.variables().iter().all(|&v| v < 2), "{}", m.tree);
    }
}
