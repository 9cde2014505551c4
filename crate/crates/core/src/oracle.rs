//! The data oracle: a hidden ground-truth expression that answers
//! control-variable trial queries.
//!
//! A query names which variables are controlled (held fixed within a trial)
//! and which are free (sampled per row). Each trial draws its own fixed
//! values for the controlled variables, so the same reduced-form expression
//! shows up with different summary-constant values across trials.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ExpressionTree;
use crate::seed::{self, tag, EngineRng};

/// Consecutive non-finite draws tolerated before a query fails.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("ground truth has open or expandable constants")]
    OpenTruth,
    #[error("a control variable experiment needs at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("noise level must be a finite non-negative number, got {0}")]
    BadNoise(f64),
    #[error("ground truth uses x{var} but the oracle has {num_vars} variables")]
    VariableOutOfRange { var: usize, num_vars: usize },
    #[error("ground truth was non-finite for {MAX_REJECTIONS} consecutive samples")]
    Singular,
}

/// Magnitude band for sampled inputs: values are drawn uniformly from
/// `(-high, -low) ∪ (low, high)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRange {
    pub low: f64,
    pub high: f64,
}

impl Default for SampleRange {
    fn default() -> Self {
        Self {
            low: 0.3,
            high: 3.0,
        }
    }
}

impl SampleRange {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mag = rng.random_range(self.low..self.high);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    }
}

/// Split of the inputs into controlled and free variables (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariablePartition {
    num_vars: usize,
    free: BTreeSet<usize>,
}

impl VariablePartition {
    pub fn all_controlled(num_vars: usize) -> Self {
        Self {
            num_vars,
            free: BTreeSet::new(),
        }
    }

    pub fn all_free(num_vars: usize) -> Self {
        Self {
            num_vars,
            free: (0..num_vars).collect(),
        }
    }

    pub fn with_free(num_vars: usize, free: impl IntoIterator<Item = usize>) -> Self {
        let free: BTreeSet<usize> = free.into_iter().collect();
        assert!(free.iter().all(|&v| v < num_vars), "free variable out of range");
        Self { num_vars, free }
    }

    /// Moves `var` from the controlled set to the free set.
    pub fn release(&mut self, var: usize) {
        assert!(var < self.num_vars, "variable out of range");
        self.free.insert(var);
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn free(&self) -> &BTreeSet<usize> {
        &self.free
    }

    pub fn controlled(&self) -> BTreeSet<usize> {
        (0..self.num_vars).filter(|v| !self.free.contains(v)).collect()
    }

    pub fn is_free(&self, var: usize) -> bool {
        self.free.contains(&var)
    }
}

/// Data of one trial, stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialBatch {
    pub controlled_values: BTreeMap<usize, f64>,
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl TrialBatch {
    /// Builds a batch from explicit rows.
    pub fn from_rows(
        controlled_values: BTreeMap<usize, f64>,
        points: &[Vec<f64>],
        y: Vec<f64>,
    ) -> Self {
        assert_eq!(points.len(), y.len());
        let m = points.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(points.len()); m];
        for p in points {
            assert_eq!(p.len(), m, "ragged rows");
            for (j, &v) in p.iter().enumerate() {
                columns[j].push(v);
            }
        }
        Self {
            controlled_values,
            columns,
            y,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.y.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn point(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataOracle {
    truth: ExpressionTree,
    num_vars: usize,
    noise_sigma: f64,
    pub sample_range: SampleRange,
    master_seed: u64,
}

/// Builds an oracle whose variable count is inferred from the truth.
pub fn make_oracle(truth: ExpressionTree, sigma: f64, seed: u64) -> Result<DataOracle, OracleError> {
    let m = truth.variables().last().map_or(1, |&v| v + 1);
    DataOracle::new(truth, m, sigma, seed)
}

impl DataOracle {
    pub fn new(
        truth: ExpressionTree,
        num_vars: usize,
        noise_sigma: f64,
        master_seed: u64,
    ) -> Result<Self, OracleError> {
        if !truth.is_closed() {
            return Err(OracleError::OpenTruth);
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(OracleError::BadNoise(noise_sigma));
        }
        if let Some(&v) = truth.variables().iter().find(|&&v| v >= num_vars) {
            return Err(OracleError::VariableOutOfRange { var: v, num_vars });
        }
        Ok(Self {
            truth,
            num_vars,
            noise_sigma,
            sample_range: SampleRange::default(),
            master_seed,
        })
    }

    pub fn with_range(mut self, range: SampleRange) -> Self {
        self.sample_range = range;
        self
    }

    pub fn truth(&self) -> &ExpressionTree {
        &self.truth
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Runs `trials` trials of a control variable experiment. Trial `k` is
    /// a pure function of `(master_seed, stage_seed, k)`.
    pub fn gen_trial_data(
        &self,
        part: &VariablePartition,
        trials: usize,
        batch_size: usize,
        stage_seed: u64,
    ) -> Result<Vec<TrialBatch>, OracleError> {
        if trials < 2 {
            return Err(OracleError::TooFewTrials(trials));
        }
        (0..trials)
            .map(|k| {
                let mut rng = seed::rng_for(self.master_seed, &[tag::TRIAL, stage_seed, k as u64]);
                self.trial(part, batch_size, &mut rng)
            })
            .collect()
    }

    /// A single batch with every variable free, e.g. for held-out testing.
    pub fn sample_free(&self, rows: usize, seed: u64) -> Result<TrialBatch, OracleError> {
        let mut rng = seed::rng_for(self.master_seed, &[tag::TEST, seed]);
        self.trial(&VariablePartition::all_free(self.num_vars), rows, &mut rng)
    }

    fn trial(
        &self,
        part: &VariablePartition,
        batch_size: usize,
        rng: &mut EngineRng,
    ) -> Result<TrialBatch, OracleError> {
        if batch_size == 0 {
            return Err(OracleError::EmptyBatch);
        }
        let controlled_values: BTreeMap<usize, f64> = part
            .controlled()
            .into_iter()
            .map(|v| (v, self.sample_range.sample(rng)))
            .collect();
        let noise = (self.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, self.noise_sigma).expect("validated noise level"));
        let mut point = vec![0.0; self.num_vars];
        for (&v, &x) in &controlled_values {
            point[v] = x;
        }
        let mut columns = vec![Vec::with_capacity(batch_size); self.num_vars];
        for (v, col) in columns.iter_mut().enumerate() {
            match controlled_values.get(&v) {
                Some(&x) => col.resize(batch_size, x),
                None => col.extend((0..batch_size).map(|_| self.sample_range.sample(rng))),
            }
        }
        let mut y = self.truth.eval_columns(&columns, batch_size);
        for r in 0..batch_size {
            let mut rejections = 0;
            while !y[r].is_finite() {
                rejections += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(OracleError::Singular);
                }
                for &v in part.free() {
                    columns[v][r] = self.sample_range.sample(rng);
                    point[v] = columns[v][r];
                }
                y[r] = self.truth.evaluate(&point);
            }
        }
        if let Some(n) = &noise {
            y.iter_mut().for_each(|v| *v += n.sample(rng));
        }
        Ok(TrialBatch {
            controlled_values,
            columns,
            y,
        })
    }
}
