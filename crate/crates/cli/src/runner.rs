//! Batch execution of manifest entries.
//!
//! Each run writes into `OUT/{engine}/n{sigma}/{id}/m{master}/`:
//!
//! - `hof.csv`: the final hall of fame, best first.
//! - `generations.csv`: one row per generation of every stage.
//! - `stages.jsonl`: one stage report per line.
//! - `metrics.csv`: held-out scores of the best expression.
//!
//! A `run_manifest.json` at the top of `OUT` lists every run with its seeds
//! and status.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cvgp::config::RunConfig;
use cvgp::cvgp::{run_engine, Engine, StageReport};
use cvgp::metrics::{compute_metrics, recovered};
use cvgp::oracle::DataOracle;
use cvgp::seed::{self, tag};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::ManifestEntry;
use crate::{write_atomic, CliError};

pub const HOF_HEADER: &str = "rank,fitness,nodes,expression";
pub const GENERATIONS_HEADER: &str = "stage,generation,pool_best,hof_best,mean_nodes,evaluations";
pub const METRICS_HEADER: &str = "id,engine,master_seed,operands,a,b,c,sigma,bench_seed,test_rows,mse,nmse,rmse,nrmse,inv_nrmse,recovered,nodes,wall_ms,expression";

#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub entry: ManifestEntry,
    pub engine: Engine,
    pub master_seed: u64,
}

impl Job {
    /// Seed shared by the oracle and the engine. Both engines get the same
    /// value for the same entry, so they query identically seeded oracles.
    pub fn run_seed(&self) -> u64 {
        seed::derive(self.master_seed, &[self.entry.seed])
    }

    pub fn test_seed(&self) -> u64 {
        seed::test_seed(self.run_seed(), &[tag::TEST])
    }

    pub fn dir(&self, out: &Path) -> PathBuf {
        out.join(self.engine.as_str())
            .join(format!("n{}", self.entry.sigma))
            .join(&self.entry.id)
            .join(format!("m{}", self.master_seed))
    }
}

/// Cross product of entries, noise levels, engines and master seeds.
/// `noise` replaces each entry's own sigma when given.
pub fn plan(entries: &[ManifestEntry], noise: Option<&[f64]>, engines: &[Engine], masters: &[u64]) -> Vec<Job> {
    let mut jobs = Vec::new();
    for entry in entries {
        let sigmas = noise.map_or_else(|| vec![entry.sigma], <[f64]>::to_vec);
        for sigma in sigmas {
            for &engine in engines {
                for &master_seed in masters {
                    let mut entry = entry.clone();
                    entry.sigma = sigma;
                    jobs.push(Job {
                        entry,
                        engine,
                        master_seed,
                    });
                }
            }
        }
    }
    jobs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub engine: Engine,
    pub master_seed: u64,
    pub operands: String,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub sigma: f64,
    pub bench_seed: u64,
    pub test_rows: usize,
    pub mse: f64,
    pub nmse: f64,
    pub rmse: f64,
    pub nrmse: f64,
    pub inv_nrmse: f64,
    pub recovered: bool,
    pub nodes: usize,
    pub wall_ms: u64,
    pub expression: String,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub hof_csv: String,
    pub generations_csv: String,
    pub stages_jsonl: String,
    pub metrics: MetricsRow,
}

fn csv_text<T: Serialize>(header: &str, rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8");
    format!("{header}\n{body}")
}

/// Runs one job without touching the file system.
pub fn execute(job: &Job, cfg: &RunConfig) -> Result<RunArtifacts, String> {
    let started = Instant::now();
    let entry = &job.entry;
    let truth = entry.truth_tree()?;
    let run_seed = job.run_seed();
    let oracle = DataOracle::new(truth.clone(), entry.a, entry.sigma, run_seed).map_err(|e| e.to_string())?;
    let engine_cfg = cfg.to_cvgp(&entry.operands, run_seed);
    let result = run_engine(job.engine, &oracle, &engine_cfg).map_err(|e| e.to_string())?;
    let best = result.best().ok_or("hall of fame is empty")?.clone();

    let test = oracle
        .sample_free(cfg.test.rows, job.test_seed())
        .map_err(|e| format!("test data: {e}"))?;
    let pred = best.tree.eval_columns(test.columns(), test.batch_size());
    let report = compute_metrics(&pred, test.y()).map_err(|e| format!("metrics: {e}"))?;
    let mut rng = seed::rng_for(run_seed, &[tag::RECOVERY]);
    let is_recovered = recovered(&best.tree, &truth, entry.a, &oracle.sample_range, &mut rng);

    let hof_csv = csv_text(
        HOF_HEADER,
        result
            .hall_of_fame
            .entries
            .iter()
            .enumerate()
            .map(|(i, m)| (i + 1, m.fitness, m.tree.node_count(), m.tree.to_string())),
    );
    let generations_csv = csv_text(
        GENERATIONS_HEADER,
        result
            .generations
            .iter()
            .map(|(s, g)| (s, g.generation, g.pool_best, g.hof_best, g.mean_nodes, g.evaluations)),
    );
    let stages_jsonl = result
        .stages
        .iter()
        .map(|s: &StageReport| serde_json::to_string(s).expect("stage report serializes") + "\n")
        .collect();
    let metrics = MetricsRow {
        id: entry.id.clone(),
        engine: job.engine,
        master_seed: job.master_seed,
        operands: entry.operands.to_string(),
        a: entry.a,
        b: entry.b,
        c: entry.c,
        sigma: entry.sigma,
        bench_seed: entry.seed,
        test_rows: test.batch_size(),
        mse: report.mse,
        nmse: report.nmse,
        rmse: report.rmse,
        nrmse: report.nrmse,
        inv_nrmse: report.inv_nrmse,
        recovered: is_recovered,
        nodes: best.tree.node_count(),
        wall_ms: started.elapsed().as_millis() as u64,
        expression: best.tree.to_string(),
    };
    Ok(RunArtifacts {
        hof_csv,
        generations_csv,
        stages_jsonl,
        metrics,
    })
}

pub fn write_artifacts(dir: &Path, art: &RunArtifacts) -> Result<(), CliError> {
    let files = [
        ("hof.csv", art.hof_csv.clone()),
        ("generations.csv", art.generations_csv.clone()),
        ("stages.jsonl", art.stages_jsonl.clone()),
        ("metrics.csv", csv_text(METRICS_HEADER, [&art.metrics])),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub engine: Engine,
    pub sigma: f64,
    pub master_seed: u64,
    pub run_seed: u64,
    /// Always has the top bit set; training queries never do.
    pub test_seed: u64,
    pub dir: PathBuf,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub runs: Vec<RunRecord>,
}

impl RunManifest {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }
}

fn run_one(job: &Job, cfg: &RunConfig, out: &Path) -> RunRecord {
    let dir = job.dir(out);
    let outcome = std::panic::catch_unwind(|| execute(job, cfg))
        .unwrap_or_else(|_| Err("run panicked".to_string()))
        .and_then(|art| write_artifacts(&dir, &art).map_err(|e| e.to_string()));
    if let Err(e) = &outcome {
        eprintln!("{} {} m{}: {e}", job.engine.as_str(), job.entry.id, job.master_seed);
    }
    RunRecord {
        id: job.entry.id.clone(),
        engine: job.engine,
        sigma: job.entry.sigma,
        master_seed: job.master_seed,
        run_seed: job.run_seed(),
        test_seed: job.test_seed(),
        dir: dir.strip_prefix(out).unwrap_or(&dir).to_path_buf(),
        error: outcome.err(),
    }
}

/// Runs `jobs` on a pool of `threads` workers, writes every run's files and
/// the top-level `run_manifest.json`. Individual failures are recorded, not
/// propagated.
pub fn run_all(jobs: &[Job], cfg: &RunConfig, out: &Path, threads: usize) -> Result<RunManifest, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let runs = pool.install(|| jobs.par_iter().map(|j| run_one(j, cfg, out)).collect());
    let manifest = RunManifest {
        config: cfg.clone(),
        runs,
    };
    let path = out.join("run_manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&path, text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::generate;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.gp.pool_size = 12;
        cfg.gp.generations = 3;
        cfg.cvgp.trials = 3;
        cfg.cvgp.batch_size = 24;
        cfg.test.rows = 32;
        cfg
    }

    #[test]
    fn seeds_and_dirs() {
        let entries = generate(&[("inv,+,-,*".parse().unwrap(), (2, 1, 1))], &[0.0], &[4]).unwrap();
        let jobs = plan(&entries, Some(&[0.0, 0.1]), &[Engine::Cvgp, Engine::Gp], &[0, 1]);
        assert_eq!(jobs.len(), 8);
        for j in &jobs {
            assert!(seed::is_test_seed(j.test_seed()));
        }
        let same: Vec<_> = jobs.iter().filter(|j| j.master_seed == 0 && j.entry.sigma == 0.0).collect();
        assert_eq!(same[0].run_seed(), same[1].run_seed());
        assert_eq!(
            jobs[2].dir(Path::new("o")),
            Path::new("o/gp/n0").join(&entries[0].id).join("m0")
        );
    }

    #[test]
    fn artifacts_have_headers_and_rows() {
        let entries = generate(&[("inv,+,-,*".parse().unwrap(), (2, 1, 1))], &[0.0], &[1]).unwrap();
        let job = &plan(&entries, None, &[Engine::Cvgp], &[5])[0];
        let cfg = small_cfg();
        let art = execute(job, &cfg).unwrap();
        assert!(art.hof_csv.starts_with(HOF_HEADER));
        assert!(art.hof_csv.lines().count() > 1);
        assert_eq!(art.generations_csv.lines().next(), Some(GENERATIONS_HEADER));
        assert_eq!(art.stages_jsonl.lines().count(), 2);
        assert_eq!(art.metrics.test_rows, 32);
        let again = execute(job, &cfg).unwrap();
        assert_eq!(art.hof_csv, again.hof_csv);
    }
}
