//! Run configuration as stored on disk.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Unlike [`CvgpConfig`], the variable order here is written with 1-based
//! indices (`[1, 3, 2]` releases `x1`, then `x3`, then `x2`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::OperandSet;
use crate::cvgp::CvgpConfig;
use crate::fitting::{FitterConfig, DEFAULT_FIT_THRESH, DEFAULT_VAR_THRESH};
use crate::gp::GpParams;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be a probability in [0, 1]")]
    Probability(&'static str),
    #[error("{0} must be at least {1}")]
    TooSmall(&'static str, usize),
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("variable order is 1-based; found 0")]
    ZeroVariable,
    #[error("init range is empty")]
    EmptyInitRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvgpSection {
    pub trials: usize,
    pub batch_size: usize,
    pub fit_thresh: f64,
    pub var_thresh: f64,
    /// 1-based release order.
    pub variable_order: Option<Vec<usize>>,
    /// Overrides the operand set recorded with each truth.
    pub operators: Option<OperandSet>,
}

impl Default for CvgpSection {
    fn default() -> Self {
        Self {
            trials: 10,
            batch_size: 256,
            fit_thresh: DEFAULT_FIT_THRESH,
            var_thresh: DEFAULT_VAR_THRESH,
            variable_order: None,
            operators: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSection {
    /// Rows in the held-out batch used for reported metrics.
    pub rows: usize,
}

impl Default for TestSection {
    fn default() -> Self {
        Self { rows: 256 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub gp: GpParams,
    pub cvgp: CvgpSection,
    pub fitter: FitterConfig,
    pub test: TestSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let gp = &self.gp;
        for (name, p) in [("gp.p_mutate", gp.p_mutate), ("gp.p_mate", gp.p_mate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Probability(name));
            }
        }
        let minimums = [
            ("gp.pool_size", gp.pool_size, 2),
            ("gp.hof_size", gp.hof_size, 1),
            ("gp.mutation_depth", gp.mutation_depth, 1),
            ("gp.init_depth", gp.init_depth, 1),
            ("gp.max_nodes", gp.max_nodes, 1),
            ("cvgp.trials", self.cvgp.trials, 2),
            ("cvgp.batch_size", self.cvgp.batch_size, 1),
            ("fitter.max_iters", self.fitter.max_iters, 1),
            ("test.rows", self.test.rows, 2),
        ];
        for (name, v, min) in minimums {
            if v < min {
                return Err(ConfigError::TooSmall(name, min));
            }
        }
        for (name, v) in [
            ("cvgp.fit_thresh", self.cvgp.fit_thresh),
            ("cvgp.var_thresh", self.cvgp.var_thresh),
        ] {
            if !(v > 0.0) {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if !(self.fitter.init_low < self.fitter.init_high) {
            return Err(ConfigError::EmptyInitRange);
        }
        if self.cvgp.variable_order.as_ref().is_some_and(|o| o.contains(&0)) {
            return Err(ConfigError::ZeroVariable);
        }
        Ok(())
    }

    /// Engine configuration for one truth. `operators` is the truth's
    /// operand set unless the file overrides it.
    pub fn to_cvgp(&self, operators: &OperandSet, master_seed: u64) -> CvgpConfig {
        let ops = self.cvgp.operators.as_ref().unwrap_or(operators);
        CvgpConfig {
            gp: self.gp.clone(),
            trials: self.cvgp.trials,
            batch_size: self.cvgp.batch_size,
            fit_thresh: self.cvgp.fit_thresh,
            var_thresh: self.cvgp.var_thresh,
            variable_order: self
                .cvgp
                .variable_order
                .as_ref()
                .map(|o| o.iter().map(|v| v - 1).collect()),
            fitter: self.fitter.clone(),
            operators: ops.0.clone(),
            master_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_convert() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let ops: OperandSet = "inv,+,-,*".parse().unwrap();
        let e = c.to_cvgp(&ops, 7);
        assert_eq!(e.gp.pool_size, 100);
        assert_eq!(e.gp.generations, 100);
        assert_eq!(e.gp.hof_size, 10);
        assert_eq!((e.trials, e.batch_size), (10, 256));
        assert_eq!(e.operators, ops.0);
        assert_eq!(e.master_seed, 7);
    }

    #[test]
    fn order_is_shifted_to_zero_based() {
        let c = RunConfig {
            cvgp: CvgpSection {
                variable_order: Some(vec![2, 1, 3]),
                ..CvgpSection::default()
            },
            ..RunConfig::default()
        };
        let e = c.to_cvgp(&"+,-,*".parse().unwrap(), 0);
        assert_eq!(e.variable_order, Some(vec![1, 0, 2]));
    }

    #[test]
    fn invalid_values_are_named() {
        let mut c = RunConfig::default();
        c.gp.p_mate = 1.5;
        assert_eq!(c.validate(), Err(ConfigError::Probability("gp.p_mate")));
        let mut c = RunConfig::default();
        c.cvgp.trials = 1;
        assert_eq!(c.validate(), Err(ConfigError::TooSmall("cvgp.trials", 2)));
        let mut c = RunConfig::default();
        c.cvgp.variable_order = Some(vec![0, 1]);
        assert_eq!(c.validate(), Err(ConfigError::ZeroVariable));
    }
}
