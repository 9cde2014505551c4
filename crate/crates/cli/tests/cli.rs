use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cvgp_cli::count::COUNT_HEADER;
use cvgp_cli::report::{QUANTILE_HEADER, RECOVERY_HEADER};
use cvgp_cli::runner::{GENERATIONS_HEADER, HOF_HEADER, METRICS_HEADER};
use tempfile::TempDir;

const SMALL: &str = "\
[gp]
pool_size = 12
generations = 3

[cvgp]
trials = 3
batch_size = 24

[test]
rows = 32
";

fn cvgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvgp"))
        .current_dir(dir)
        .env_remove("CVGP_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn setup() -> TempDir {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("small.toml"), SMALL).unwrap();
    let o = cvgp(
        tmp.path(),
        &["bench", "gen", "--operands", "inv,+,-,*", "--abc", "2,1,1", "--seeds", "0..2", "--out", "m.jsonl"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    tmp
}

#[test]
fn golden_headers() {
    assert_eq!(HOF_HEADER, "rank,fitness,nodes,expression");
    assert_eq!(GENERATIONS_HEADER, "stage,generation,pool_best,hof_best,mean_nodes,evaluations");
    assert_eq!(
        METRICS_HEADER,
        "id,engine,master_seed,operands,a,b,c,sigma,bench_seed,test_rows,mse,nmse,rmse,nrmse,inv_nrmse,recovered,nodes,wall_ms,expression"
    );
    assert_eq!(
        QUANTILE_HEADER,
        "operands,a,b,c,engine,sigma,runs,nmse_min,nmse_q25,nmse_median,nmse_q75,nmse_max"
    );
    assert_eq!(RECOVERY_HEADER, "operands,a,b,c,engine,sigma,runs,recovered,recovery_rate");
    assert_eq!(COUNT_HEADER, "l,m,o,A,S,upper_bound,lower_bound_holds,upper_bound_holds");
}

#[test]
fn run_then_report() {
    let tmp = setup();
    let p = tmp.path();
    let o = cvgp(
        p,
        &["run", "m.jsonl", "--config", "small.toml", "--engine", "cvgp,gp", "--seeds", "3", "--out", "res"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = p.join("res/cvgp/n0/inv_add_sub_mul-2.1.1-n0-s0/m3");
    assert_eq!(first_line(&run.join("hof.csv")), HOF_HEADER);
    assert_eq!(first_line(&run.join("generations.csv")), GENERATIONS_HEADER);
    assert_eq!(first_line(&run.join("metrics.csv")), METRICS_HEADER);
    assert!(run.join("stages.jsonl").exists());
    assert!(p.join("res/run_manifest.json").exists());

    let o = cvgp(p, &["report", "res", "--out", "rep"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first_line(&p.join("rep/quantiles.csv")), QUANTILE_HEADER);
    let recovery = fs::read_to_string(p.join("rep/recovery.csv")).unwrap();
    assert_eq!(recovery.lines().next().unwrap(), RECOVERY_HEADER);
    // one group per engine
    assert_eq!(recovery.lines().count(), 3);
    assert!(p.join("rep/nmse_n0.csv").exists());
}

#[test]
fn reruns_are_identical() {
    let tmp = setup();
    let p = tmp.path();
    for out in ["r1", "r2"] {
        let o = cvgp(p, &["run", "m.jsonl", "--config", "small.toml", "--engine", "gp", "--seeds", "5", "--out", out]);
        assert_eq!(code(&o), 0);
    }
    for id in ["inv_add_sub_mul-2.1.1-n0-s0", "inv_add_sub_mul-2.1.1-n0-s1"] {
        let rel = format!("gp/n0/{id}/m5/hof.csv");
        assert_eq!(fs::read(p.join("r1").join(&rel)).unwrap(), fs::read(p.join("r2").join(&rel)).unwrap());
    }
}

#[test]
fn count_prints_table() {
    let tmp = TempDir::new().unwrap();
    let o = cvgp(tmp.path(), &["count", "--l-max", "3", "--m", "2", "--o", "2"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), COUNT_HEADER);
    // binary-only trees have odd length
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn bad_config_exits_2() {
    let tmp = setup();
    let p = tmp.path();
    fs::write(p.join("bad.toml"), "[gp]\npool_sise = 10\n").unwrap();
    let o = cvgp(p, &["run", "m.jsonl", "--config", "bad.toml"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    fs::write(p.join("zero.toml"), "[gp]\npool_size = 1\n").unwrap();
    assert_eq!(code(&cvgp(p, &["run", "m.jsonl", "--config", "zero.toml"])), 2);
    assert_eq!(code(&cvgp(p, &["count", "--o", "4"])), 2);
}

#[test]
fn bad_manifest_exits_2() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    fs::write(
        p.join("m.jsonl"),
        "{\"id\":\"x\",\"operands\":\"+,*\",\"a\":1,\"seed\":0,\"truth\":\"(* x2 x1)\"}\n",
    )
    .unwrap();
    let o = cvgp(p, &["run", "m.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("m.jsonl"));
}

#[test]
fn empty_report_exits_2() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir(tmp.path().join("nothing")).unwrap();
    assert_eq!(code(&cvgp(tmp.path(), &["report", "nothing"])), 2);
}

#[test]
fn failed_runs_exit_1() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    fs::write(p.join("small.toml"), SMALL).unwrap();
    fs::write(
        p.join("m.jsonl"),
        "{\"id\":\"singular\",\"operands\":\"inv,+,-,*\",\"a\":1,\"seed\":0,\"truth\":\"(inv (- x1 x1))\"}\n",
    )
    .unwrap();
    let o = cvgp(p, &["run", "m.jsonl", "--config", "small.toml", "--out", "res"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(p.join("res/run_manifest.json")).unwrap();
    assert!(manifest.contains("\"error\""));
}
