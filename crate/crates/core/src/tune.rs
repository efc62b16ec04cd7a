//! Seeded random-search tuning of decoding hyperparameters against a
//! dev-set objective (lower is better, typically WER).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    pub ranges: Vec<ParamRange>,
    pub trials: usize,
    pub seed: u64,
}

impl SearchSpace {
    /// First-pass fusion search: LM weight, insertion bonus and candidate
    /// cut-off.
    pub fn fusion(seed: u64, trials: usize) -> Self {
        Self {
            ranges: vec![
                ParamRange {
                    name: "alpha".into(),
                    lo: 0.0,
                    hi: 1.0,
                },
                ParamRange {
                    name: "beta".into(),
                    lo: -0.1,
                    hi: 0.8,
                },
                ParamRange {
                    name: "cutoff".into(),
                    lo: -12.0,
                    hi: -4.0,
                },
            ],
            trials,
            seed,
        }
    }

    /// Second-pass rescoring search: TLM weight and length penalty (the
    /// first-pass weight is pinned to 1, since only ratios matter).
    pub fn rescore(seed: u64, trials: usize) -> Self {
        Self {
            ranges: vec![
                ParamRange {
                    name: "w_tlm".into(),
                    lo: 0.0,
                    hi: 2.0,
                },
                ParamRange {
                    name: "length_penalty".into(),
                    lo: -1.0,
                    hi: 1.0,
                },
            ],
            trials,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Input("need at least one trial".into()));
        }
        if self.ranges.is_empty() {
            return Err(Error::Input("search space has no parameters".into()));
        }
        for r in &self.ranges {
            if r.lo.is_nan() || r.hi.is_nan() || r.lo > r.hi {
                return Err(Error::Input(format!(
                    "range {}: lower bound {} above upper {}",
                    r.name, r.lo, r.hi
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    /// Sampled values, ordered like the space's ranges.
    pub params: Vec<f64>,
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub best_params: Vec<f64>,
    pub best_value: f64,
    /// Every trial in index order, failures included.
    pub trials: Vec<Trial>,
}

/// Uniform random search. All parameters are sampled up front from the
/// seeded stream (trial-major, parameter-minor), so results do not depend
/// on evaluation parallelism; trials may fail individually and the search
/// continues. Returns the argmin over successful trials.
pub fn random_search<F>(space: &SearchSpace, objective: F) -> Result<SearchOutcome>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    space.validate()?;
    let mut rng = SplitMix64::new(space.seed);
    let sampled: Vec<Vec<f64>> = (0..space.trials)
        .map(|_| {
            space
                .ranges
                .iter()
                .map(|r| rng.uniform(r.lo, r.hi))
                .collect()
        })
        .collect();

    let mut trials: Vec<Trial> = sampled
        .into_par_iter()
        .enumerate()
        .map(|(index, params)| match objective(&params) {
            Ok(value) => Trial {
                index,
                params,
                value: Some(value),
                error: None,
            },
            Err(e) => Trial {
                index,
                params,
                value: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    trials.sort_by_key(|t| t.index);

    let best = trials
        .iter()
        .filter(|t| t.value.is_some())
        .min_by(|a, b| {
            a.value
                .unwrap()
                .total_cmp(&b.value.unwrap())
                .then(a.index.cmp(&b.index))
        })
        .ok_or_else(|| Error::Search("every trial failed".into()))?;
    Ok(SearchOutcome {
        best_index: best.index,
        best_params: best.params.clone(),
        best_value: best.value.unwrap(),
        trials,
    })
}
