//! Classical parametric bootstrap baseline.
//!
//! Unlike the fit-once resampler, the bootstrap refits the model on every
//! replicate and evaluates chi-squared statistics as model-based residuals,
//! with expected frequencies taken from the replicate's own refit. Count
//! statistics (risk, single-pattern frequency) have no residual form and
//! are rejected.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::contingency::PatternTable;
use crate::error::{Error, Result};
use crate::lcmodel::{fit_em, fit_em_warm, EmConfig, LCParams};
use crate::resampler::{generate_replicate, run_fit_test, ReplicateValues, TestConfig};
use crate::seeding::derive_seed;
use crate::statistics::{lr_g2, pearson_x2, StatisticSpec};

/// Random starts per replicate refit; start 0 is warm-started at the
/// original estimates.
const REFIT_STARTS: usize = 5;

const STREAM_REPLICATE: u64 = 1;
const STREAM_REFIT: u64 = 2;

/// Chi-squared statistic with expected frequencies from model estimates
/// rather than from the table's own margins.
pub fn residual_stat(table: &PatternTable, params: &LCParams, spec: &StatisticSpec) -> Result<f64> {
    if params.n_variables() != table.j() {
        return Err(Error::DimensionMismatch {
            context: format!("model J={} vs table J={}", params.n_variables(), table.j()),
        });
    }
    let n = table.n() as f64;
    match spec {
        StatisticSpec::PearsonOverall | StatisticSpec::LikelihoodRatioOverall => {
            let expected: Vec<f64> = params.all_pattern_probs().iter().map(|p| n * p).collect();
            match spec {
                StatisticSpec::PearsonOverall => pearson_x2(table.counts(), &expected),
                _ => lr_g2(table.counts(), &expected),
            }
        }
        StatisticSpec::PearsonPair(a, b) => {
            let pair = table.collapse(&[*a, *b])?;
            // collapse the model's pattern probabilities to the same margin
            let probs = params.all_pattern_probs();
            let j = table.j();
            let mut pair_probs = [0.0f64; 4];
            for (s, &p) in probs.iter().enumerate() {
                let ba = (s >> (j - a)) & 1;
                let bb = (s >> (j - b)) & 1;
                pair_probs[(ba << 1) | bb] += p;
            }
            let expected: Vec<f64> = pair_probs.iter().map(|p| n * p).collect();
            pearson_x2(pair.counts(), &expected)
        }
        other => Err(Error::UnsupportedResidualSpec { name: other.name() }),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub fit_once_ms: f64,
    pub bootstrap_ms: f64,
    /// bootstrap_ms / fit_once_ms
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct BootstrapSpecResult {
    pub spec: StatisticSpec,
    pub observed: f64,
    pub p_upper: f64,
    pub replicates: ReplicateValues,
}

#[derive(Debug, Clone)]
pub struct BootstrapReport {
    pub results: Vec<BootstrapSpecResult>,
    pub k: usize,
    pub seed: u64,
    /// Replicates whose refit hit the iteration cap; they still count.
    pub nonconverged_replicates: usize,
    pub timing: Timing,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapSpecJson {
    pub name: String,
    pub observed: f64,
    pub p_upper: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapReportJson {
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub nonconverged_replicates: usize,
    pub specs: Vec<BootstrapSpecJson>,
    pub timing: Timing,
}

impl BootstrapReport {
    pub fn to_json(&self) -> BootstrapReportJson {
        BootstrapReportJson {
            k: self.k,
            seed: self.seed,
            nonconverged_replicates: self.nonconverged_replicates,
            specs: self
                .results
                .iter()
                .map(|r| BootstrapSpecJson {
                    name: r.spec.name(),
                    observed: r.observed,
                    p_upper: r.p_upper,
                    k: self.k,
                    seed: self.seed,
                })
                .collect(),
            timing: self.timing.clone(),
        }
    }
}

/// Runs the parametric bootstrap and, for the timing comparison, the
/// fit-once resampling test with the same statistics and replicate count.
pub fn parametric_bootstrap(
    table: &PatternTable,
    c: usize,
    config: &TestConfig,
    em: &EmConfig,
) -> Result<BootstrapReport> {
    for spec in &config.specs {
        // fail fast on specs without a residual form
        if matches!(
            spec,
            StatisticSpec::RiskAtLeast(_) | StatisticSpec::PatternFrequency(_)
        ) {
            return Err(Error::UnsupportedResidualSpec { name: spec.name() });
        }
    }

    let fit_start = Instant::now();
    let fit = fit_em(table, c, em)?;
    let fit_ms = fit_start.elapsed().as_secs_f64() * 1e3;

    let once_start = Instant::now();
    run_fit_test(table, &fit, config)?;
    let fit_once_ms = fit_ms + once_start.elapsed().as_secs_f64() * 1e3;

    let observed: Vec<f64> = config
        .specs
        .iter()
        .map(|s| residual_stat(table, &fit.params, s))
        .collect::<Result<_>>()?;

    let n = table.n();
    let gen_master = derive_seed(config.seed, STREAM_REPLICATE);
    let refit_master = derive_seed(config.seed, STREAM_REFIT);
    let boot_start = Instant::now();
    let per_replicate: Vec<(Vec<f64>, bool)> = (0..config.k)
        .into_par_iter()
        .map(|rep| {
            let replicate = generate_replicate(&fit.params, n, derive_seed(gen_master, rep as u64));
            let refit_cfg = EmConfig {
                n_starts: REFIT_STARTS,
                seed: derive_seed(refit_master, rep as u64),
                ..em.clone()
            };
            let refit = fit_em_warm(&replicate, c, &refit_cfg, Some(&fit.params))?;
            let values = config
                .specs
                .iter()
                .map(|s| residual_stat(&replicate, &refit.params, s))
                .collect::<Result<Vec<f64>>>()?;
            Ok((values, refit.converged))
        })
        .collect::<Result<_>>()?;
    let bootstrap_ms = fit_ms + boot_start.elapsed().as_secs_f64() * 1e3;

    let nonconverged = per_replicate.iter().filter(|(_, conv)| !conv).count();
    let mut results = Vec::with_capacity(config.specs.len());
    for (i, spec) in config.specs.iter().enumerate() {
        let values: Vec<f64> = per_replicate.iter().map(|(row, _)| row[i]).collect();
        let ge = values.iter().filter(|&&v| v >= observed[i]).count();
        results.push(BootstrapSpecResult {
            spec: spec.clone(),
            observed: observed[i],
            p_upper: ge as f64 / config.k as f64,
            replicates: ReplicateValues::InMemory(values),
        });
    }
    Ok(BootstrapReport {
        results,
        k: config.k,
        seed: config.seed,
        nonconverged_replicates: nonconverged,
        timing: Timing {
            fit_once_ms,
            bootstrap_ms,
            ratio: bootstrap_ms / fit_once_ms,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contingency::ResponsePattern;
    use crate::lcmodel::{fit_one_class, init_random};
    use crate::statistics::evaluate;
    use approx::assert_abs_diff_eq;

    fn table(j: usize, entries: &[(&str, u64)]) -> PatternTable {
        let mut counts = vec![0u64; 1 << j];
        for (bits, c) in entries {
            counts[ResponsePattern::parse_bits(bits).unwrap().encode()] = *c;
        }
        PatternTable::from_counts(j, counts).unwrap()
    }

    #[test]
    fn saturated_params_give_zero_residual() {
        let t = table(2, &[("11", 25), ("10", 25), ("01", 30), ("00", 20)]);
        // a 4-class model putting each class on one pattern reproduces the table
        let params = LCParams::new(
            vec![0.25, 0.25, 0.30, 0.20],
            vec![
                vec![1.0, 1.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, 0.0],
            ],
        )
        .unwrap();
        let x2 = residual_stat(&t, &params, &StatisticSpec::PearsonOverall).unwrap();
        assert_abs_diff_eq!(x2, 0.0, epsilon = 1e-18);
    }

    #[test]
    fn one_class_residual_equals_independence_statistic() {
        let t = table(3, &[("111", 12), ("000", 9), ("101", 4), ("010", 5)]);
        let params = fit_one_class(&t).unwrap();
        for spec in [
            StatisticSpec::PearsonOverall,
            StatisticSpec::LikelihoodRatioOverall,
            StatisticSpec::PearsonPair(1, 3),
        ] {
            let residual = residual_stat(&t, &params, &spec).unwrap();
            let data_level = evaluate(&spec, &t).unwrap();
            assert_abs_diff_eq!(residual, data_level, epsilon = 1e-9);
        }
    }

    #[test]
    fn residual_matches_naive_cell_evaluation() {
        let t = table(3, &[("111", 6), ("110", 2), ("001", 5), ("000", 3)]);
        let params = init_random(2, 3, 31);
        let x2 = residual_stat(&t, &params, &StatisticSpec::PearsonOverall).unwrap();
        let n = t.n() as f64;
        let mut oracle = 0.0;
        for s in 0..8usize {
            let e = n * params.pattern_prob(&ResponsePattern::decode(s, 3)).unwrap();
            let o = t.counts()[s] as f64;
            oracle += (o - e) * (o - e) / e;
        }
        assert_abs_diff_eq!(x2, oracle, epsilon = 1e-9);
    }

    #[test]
    fn residual_rejects_count_specs() {
        let t = table(2, &[("11", 5), ("00", 5)]);
        let params = fit_one_class(&t).unwrap();
        assert!(matches!(
            residual_stat(&t, &params, &StatisticSpec::RiskAtLeast(1)),
            Err(Error::UnsupportedResidualSpec { .. })
        ));
    }

    #[test]
    fn bootstrap_rejects_unsupported_specs_up_front() {
        let t = table(2, &[("11", 30), ("00", 30)]);
        let config = TestConfig::new(5, 1, vec![StatisticSpec::RiskAtLeast(1)]).unwrap();
        assert!(matches!(
            parametric_bootstrap(&t, 1, &config, &EmConfig::default()),
            Err(Error::UnsupportedResidualSpec { .. })
        ));
    }

    #[test]
    fn single_replicate_p_is_zero_or_one() {
        let t = table(3, &[("111", 20), ("000", 20), ("100", 5)]);
        let config = TestConfig::new(1, 3, vec![StatisticSpec::PearsonOverall]).unwrap();
        let em = EmConfig {
            n_starts: 2,
            max_iters: 200,
            ..EmConfig::default()
        };
        let report = parametric_bootstrap(&t, 1, &config, &em).unwrap();
        let p = report.results[0].p_upper;
        assert!(p == 0.0 || p == 1.0);
        assert!(report.timing.fit_once_ms > 0.0);
        assert!(report.timing.bootstrap_ms > 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic_modulo_timing() {
        let t = table(3, &[("111", 25), ("000", 25), ("101", 6), ("010", 4)]);
        let config = TestConfig::new(
            40,
            9,
            vec![StatisticSpec::PearsonOverall, StatisticSpec::PearsonPair(1, 2)],
        )
        .unwrap();
        let em = EmConfig {
            n_starts: 3,
            max_iters: 300,
            seed: 2,
            ..EmConfig::default()
        };
        let a = parametric_bootstrap(&t, 2, &config, &em).unwrap();
        let b = parametric_bootstrap(&t, 2, &config, &em).unwrap();
        for (ra, rb) in a.results.iter().zip(b.results.iter()) {
            assert_eq!(ra.p_upper.to_bits(), rb.p_upper.to_bits());
            assert_eq!(ra.observed.to_bits(), rb.observed.to_bits());
        }
    }
}
