//! Monte Carlo study engine: sweep data-generating conditions, run the
//! fit-once test on each generated dataset, and aggregate rejection rates
//! with their Monte Carlo standard errors.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lcmodel::{fit_em, EmConfig, LCParams};
use crate::resampler::{generate_replicate, run_fit_test, TestConfig};
use crate::seeding::derive_seed;
use crate::statistics::StatisticSpec;

/// Variables per generated dataset; the study design fixes J = 6.
pub const STUDY_VARIABLES: usize = 6;

/// One data-generating condition of the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCondition {
    /// Generating class count (2 or 3).
    pub c_true: usize,
    /// Sample size per generated dataset.
    pub n: u64,
    /// High response probability (e.g. .8 or .9); low is its complement.
    pub hi: f64,
    /// Classes fitted to each dataset.
    #[serde(default = "default_c_fit")]
    pub c_fit: usize,
    /// Significance level for rejection (one-sided, upper tail).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_c_fit() -> usize {
    2
}

fn default_alpha() -> f64 {
    0.05
}

/// Generating parameters for a condition: equal class sizes; classes 1 and 2
/// are flat at the high/low probability, and class 3 (when present) is high
/// on the first three variables and low on the last three.
pub fn condition_params(cond: &SimCondition) -> Result<LCParams> {
    let lo = 1.0 - cond.hi;
    let j = STUDY_VARIABLES;
    let rows: Vec<Vec<f64>> = match cond.c_true {
        2 => vec![vec![cond.hi; j], vec![lo; j]],
        3 => {
            let mut third = vec![cond.hi; 3];
            third.extend(vec![lo; 3]);
            vec![vec![cond.hi; j], vec![lo; j], third]
        }
        other => return Err(Error::UnsupportedCondition { c_true: other }),
    };
    let share = 1.0 / cond.c_true as f64;
    let mut rho = vec![share; cond.c_true];
    let s: f64 = rho.iter().sum();
    rho[cond.c_true - 1] += 1.0 - s;
    LCParams::new(rho, rows)
}

/// Aggregated outcome for one (condition, statistic) pair.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub condition: SimCondition,
    pub spec: String,
    /// Fraction of repetitions rejecting at the condition's alpha.
    pub rate: f64,
    /// Binomial Monte Carlo standard error of the rate.
    pub mc_se: f64,
    pub repetitions: usize,
    pub k: usize,
}

/// Declarative study configuration (TOML).
#[derive(Debug, Clone, Deserialize)]
pub struct StudyConfig {
    /// Monte Carlo repetitions per condition.
    pub repetitions: usize,
    /// Replicates per fit-once test.
    pub k: usize,
    pub seed: u64,
    /// Statistic spec tokens, e.g. `["x2", "g2", "x2:1,2", "risk:6"]`.
    pub specs: Vec<String>,
    #[serde(default)]
    pub em: Option<EmOverrides>,
    #[serde(rename = "condition")]
    pub conditions: Vec<SimCondition>,
}

/// Optional EM overrides in the study file.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct EmOverrides {
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub n_starts: Option<usize>,
}

impl StudyConfig {
    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn parsed_specs(&self) -> Result<Vec<StatisticSpec>> {
        self.specs
            .iter()
            .map(|s| s.parse::<StatisticSpec>())
            .collect()
    }

    pub fn em_config(&self) -> EmConfig {
        let base = EmConfig::default();
        match &self.em {
            None => base,
            Some(o) => EmConfig {
                max_iters: o.max_iters.unwrap_or(base.max_iters),
                tol: o.tol.unwrap_or(base.tol),
                n_starts: o.n_starts.unwrap_or(base.n_starts),
                seed: base.seed,
            },
        }
    }
}

const STREAM_DATA: u64 = 1;
const STREAM_FIT: u64 = 2;
const STREAM_TEST: u64 = 3;

/// Runs the study: for every condition, `repetitions` independent
/// (generate, fit, test) runs; rejection uses the upper-tail p-value.
/// Fully deterministic from `seed`, independent of thread scheduling.
pub fn run_study(
    conditions: &[SimCondition],
    repetitions: usize,
    k: usize,
    specs: &[StatisticSpec],
    em: &EmConfig,
    seed: u64,
) -> Result<Vec<SimResult>> {
    if repetitions == 0 {
        return Err(Error::DimensionMismatch {
            context: "repetitions must be at least 1".into(),
        });
    }
    let mut results = Vec::new();
    for (ci, cond) in conditions.iter().enumerate() {
        let gen_params = condition_params(cond)?;
        let cond_master = derive_seed(seed, ci as u64);
        let reject_counts: Vec<usize> = (0..repetitions)
            .into_par_iter()
            .map(|rep| -> Result<Vec<usize>> {
                let rep_master = derive_seed(cond_master, rep as u64);
                let data = generate_replicate(&gen_params, cond.n, derive_seed(rep_master, STREAM_DATA));
                let fit_cfg = EmConfig {
                    seed: derive_seed(rep_master, STREAM_FIT),
                    ..em.clone()
                };
                let fit = fit_em(&data, cond.c_fit, &fit_cfg)?;
                let test_cfg = TestConfig::new(k, derive_seed(rep_master, STREAM_TEST), specs.to_vec())?;
                let report = run_fit_test(&data, &fit, &test_cfg)?;
                Ok(report
                    .results
                    .iter()
                    .map(|r| usize::from(r.p_upper < cond.alpha))
                    .collect::<Vec<usize>>())
            })
            .try_reduce(
                || vec![0usize; specs.len()],
                |mut acc, row| {
                    for (a, b) in acc.iter_mut().zip(row.iter()) {
                        *a += b;
                    }
                    Ok(acc)
                },
            )?;
        for (spec, &rejects) in specs.iter().zip(reject_counts.iter()) {
            let rate = rejects as f64 / repetitions as f64;
            results.push(SimResult {
                condition: cond.clone(),
                spec: spec.name(),
                rate,
                mc_se: (rate * (1.0 - rate) / repetitions as f64).sqrt(),
                repetitions,
                k,
            });
        }
    }
    Ok(results)
}

/// Results CSV: condition fields, spec, rate, mc_se, repetitions, K.
pub fn write_results_csv(results: &[SimResult], w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "c_true,n,hi,c_fit,alpha,spec,rate,mc_se,repetitions,k")?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.6},{:.6},{},{}",
            r.condition.c_true,
            r.condition.n,
            r.condition.hi,
            r.condition.c_fit,
            r.condition.alpha,
            r.spec,
            r.rate,
            r.mc_se,
            r.repetitions,
            r.k
        )?;
    }
    Ok(())
}
