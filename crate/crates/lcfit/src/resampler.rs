//! Fit-once resampling test: generate replicate datasets from a fitted
//! model, evaluate data-level statistics on each, and report empirical
//! p-values against the observed values.
//!
//! The model is estimated exactly once. Each replicate is a multinomial
//! draw over the fitted pattern probabilities, and every statistic on a
//! replicate uses the replicate's own margins for its expected frequencies.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::contingency::PatternTable;
use crate::error::{Error, Result};
use crate::lcmodel::{FitResult, LCParams};
use crate::seeding::{derive_seed, stream_rng};
use crate::statistics::{evaluate, StatisticSpec};

/// Replicate values above this count are streamed to a spill file instead
/// of being held in memory.
pub const RETAIN_LIMIT: usize = 100_000;

/// Controls for one resampling test.
#[derive(Debug, Clone)]
pub struct TestConfig {
    /// Number of replicate datasets.
    pub k: usize,
    /// Master RNG seed; replicate `i` draws from stream `(seed, i)`.
    pub seed: u64,
    pub specs: Vec<StatisticSpec>,
}

impl TestConfig {
    pub fn new(k: usize, seed: u64, specs: Vec<StatisticSpec>) -> Result<Self> {
        if k == 0 {
            return Err(Error::DimensionMismatch {
                context: "replicate count K must be at least 1".into(),
            });
        }
        if specs.is_empty() {
            return Err(Error::BadStatisticSpec {
                token: String::new(),
                reason: "at least one statistic spec is required".into(),
            });
        }
        Ok(Self { k, seed, specs })
    }
}

/// Storage for the K replicate values of one statistic.
#[derive(Debug, Clone)]
pub enum ReplicateValues {
    InMemory(Vec<f64>),
    /// Values were streamed to a spill file, one per line.
    Spilled(PathBuf),
}

impl ReplicateValues {
    pub fn load(&self) -> Result<Vec<f64>> {
        match self {
            ReplicateValues::InMemory(v) => Ok(v.clone()),
            ReplicateValues::Spilled(path) => {
                let file = std::fs::File::open(path)?;
                let mut out = Vec::new();
                for line in std::io::BufReader::new(file).lines() {
                    let line = line?;
                    out.push(line.trim().parse::<f64>().map_err(|e| Error::Parse {
                        path: path.display().to_string(),
                        reason: e.to_string(),
                    })?);
                }
                Ok(out)
            }
        }
    }
}

/// Result for a single statistic within a [`TestReport`].
#[derive(Debug, Clone)]
pub struct SpecResult {
    pub spec: StatisticSpec,
    pub observed: f64,
    /// Fraction of replicates with value >= observed (ties included).
    pub p_upper: f64,
    /// Fraction of replicates with value <= observed (ties included).
    pub p_lower: f64,
    pub replicates: ReplicateValues,
}

/// Summary of the model the replicates were generated from.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub classes: usize,
    pub variables: usize,
    pub loglik: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct TestReport {
    pub results: Vec<SpecResult>,
    pub k: usize,
    pub seed: u64,
    pub model: ModelSummary,
}

/// Serializable per-spec report entry (the JSON wire format).
#[derive(Debug, Clone, Serialize)]
pub struct SpecResultJson {
    pub name: String,
    pub observed: f64,
    pub p_upper: f64,
    pub p_lower: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReportJson {
    pub model: ModelSummary,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub specs: Vec<SpecResultJson>,
}

impl TestReport {
    pub fn result(&self, spec: &StatisticSpec) -> Option<&SpecResult> {
        self.results.iter().find(|r| &r.spec == spec)
    }

    pub fn to_json(&self) -> TestReportJson {
        TestReportJson {
            model: self.model.clone(),
            k: self.k,
            seed: self.seed,
            specs: self
                .results
                .iter()
                .map(|r| SpecResultJson {
                    name: r.spec.name(),
                    observed: r.observed,
                    p_upper: r.p_upper,
                    p_lower: r.p_lower,
                    k: self.k,
                    seed: self.seed,
                })
                .collect(),
        }
    }

    /// Writes the replicate CSV: `k,spec,value`.
    pub fn write_replicates_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "k,spec,value")?;
        let columns: Vec<(String, Vec<f64>)> = self
            .results
            .iter()
            .map(|r| Ok((r.spec.name(), r.replicates.load()?)))
            .collect::<Result<_>>()?;
        for rep in 0..self.k {
            for (name, values) in &columns {
                writeln!(w, "{},{},{}", rep + 1, name, values[rep])?;
            }
        }
        Ok(())
    }
}

/// One multinomial draw of `n` observations over the model's pattern
/// probabilities (inverse-CDF on the cumulative probability vector).
pub fn generate_replicate(params: &LCParams, n: u64, seed: u64) -> PatternTable {
    let probs = params.all_pattern_probs();
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let total = acc;
    let mut rng = stream_rng(seed, 0);
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c <= u).min(probs.len() - 1);
        counts[idx] += 1;
    }
    PatternTable::from_counts(params.n_variables(), counts).expect("n >= 1")
}

fn spill(values: &[f64]) -> Result<PathBuf> {
    let mut path = std::env::temp_dir();
    let unique = format!(
        "lcfit-replicates-{}-{}.txt",
        std::process::id(),
        values.as_ptr() as usize
    );
    path.push(unique);
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    for v in values {
        writeln!(file, "{v}")?;
    }
    file.flush()?;
    Ok(path)
}

/// Runs the full fit-once test: observed statistics on `table`, `K`
/// replicates from `fit.params` with the observed `N`, and both empirical
/// tail proportions per statistic. Replicate `i` uses RNG stream
/// `(config.seed, i)`, so the report does not depend on thread count.
pub fn run_fit_test(table: &PatternTable, fit: &FitResult, config: &TestConfig) -> Result<TestReport> {
    let params = &fit.params;
    if params.n_variables() != table.j() {
        return Err(Error::DimensionMismatch {
            context: format!("model J={} vs table J={}", params.n_variables(), table.j()),
        });
    }
    let observed: Vec<f64> = config
        .specs
        .iter()
        .map(|s| evaluate(s, table))
        .collect::<Result<_>>()?;
    let n = table.n();
    let per_replicate: Vec<Vec<f64>> = (0..config.k)
        .into_par_iter()
        .map(|rep| {
            let replicate = generate_replicate(params, n, derive_seed(config.seed, rep as u64 + 1));
            config
                .specs
                .iter()
                .map(|s| evaluate(s, &replicate))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(config.specs.len());
    for (i, spec) in config.specs.iter().enumerate() {
        let values: Vec<f64> = per_replicate.iter().map(|row| row[i]).collect();
        let ge = values.iter().filter(|&&v| v >= observed[i]).count();
        let le = values.iter().filter(|&&v| v <= observed[i]).count();
        let replicates = if config.k <= RETAIN_LIMIT {
            ReplicateValues::InMemory(values)
        } else {
            ReplicateValues::Spilled(spill(&values)?)
        };
        results.push(SpecResult {
            spec: spec.clone(),
            observed: observed[i],
            p_upper: ge as f64 / config.k as f64,
            p_lower: le as f64 / config.k as f64,
            replicates,
        });
    }
    Ok(TestReport {
        results,
        k: config.k,
        seed: config.seed,
        model: ModelSummary {
            classes: params.n_classes(),
            variables: params.n_variables(),
            loglik: fit.loglik,
            converged: fit.converged,
        },
    })
}

/// Histogram of one statistic's replicate distribution.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    /// `(bin_low, bin_high, count)` rows; counts sum to K.
    pub bins: Vec<(f64, f64, u64)>,
    /// Observed value, drawn as the reference marker.
    pub observed: f64,
}

impl Histogram {
    /// Histogram CSV rows plus a trailing `marker` row at the observed value.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "bin_low,bin_high,count")?;
        for (lo, hi, c) in &self.bins {
            writeln!(w, "{lo},{hi},{c}")?;
        }
        writeln!(w, "marker,{},", self.observed)?;
        Ok(())
    }
}

/// Bins the retained replicate values of `spec` into `bins` equal-width
/// bins spanning the replicate range.
pub fn histogram_export(report: &TestReport, spec: &StatisticSpec, bins: usize) -> Result<Histogram> {
    let result = report
        .result(spec)
        .ok_or_else(|| Error::BadStatisticSpec {
            token: spec.name(),
            reason: "statistic not present in the report".into(),
        })?;
    let values = result.replicates.load()?;
    histogram_of(&values, result.observed, bins)
}

pub fn histogram_of(values: &[f64], observed: f64, bins: usize) -> Result<Histogram> {
    if bins == 0 || values.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "histogram needs at least one bin and one value".into(),
        });
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    let bins_out = counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (min + i as f64 * width, min + (i + 1) as f64 * width, c))
        .collect();
    Ok(Histogram {
        bins: bins_out,
        observed,
    })
}
