//! Command implementations behind the `lcfit` binary.
//!
//! Every command writes its primary output plus a run manifest
//! (`<out>.manifest.json`) recording the command, inputs, configuration,
//! seed, tool version, and wall-clock timings, so a run can be reproduced
//! bitwise from the manifest alone.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::bootstrap::{parametric_bootstrap, BootstrapReport};
use crate::contingency::PatternTable;
use crate::error::{Error, Result};
use crate::lcmodel::{fit_em, EmConfig, FitResult, LCParams};
use crate::resampler::{histogram_of, run_fit_test, TestConfig, TestReport};
use crate::simharness::{run_study, write_results_csv, StudyConfig};
use crate::statistics::StatisticSpec;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit statuses: input/parse problems, EM nonconvergence, and statistics
/// without the required form each get their own code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Nonconvergence { .. } => 3,
        Error::UnsupportedResidualSpec { .. } | Error::BadStatisticSpec { .. } => 4,
        Error::Io(_)
        | Error::Parse { .. }
        | Error::EmptyInput
        | Error::RaggedRows { .. }
        | Error::NonBinaryValue { .. }
        | Error::UnsupportedVariableCount { .. } => 2,
        _ => 1,
    }
}

/// Input format for `--data`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// Decide by content: `bitstring,count` lines vs. row CSV.
    Auto,
    Rows,
    Counts,
}

pub fn load_table(path: &Path, format: DataFormat) -> Result<PatternTable> {
    match format {
        DataFormat::Rows => PatternTable::read_row_csv(path),
        DataFormat::Counts => PatternTable::read_pattern_counts(path),
        DataFormat::Auto => {
            let text = std::fs::read_to_string(path)?;
            let looks_like_counts = text.lines().find_map(|l| {
                let l = l.trim();
                if l.is_empty() || l.starts_with('#') {
                    return None;
                }
                let Some((bits, count)) = l.split_once(',') else {
                    return Some(false);
                };
                // counts files carry a multi-bit string in the first field;
                // row CSVs carry one bit per field
                Some(
                    bits.trim().len() > 1
                        && bits.trim().chars().all(|c| c == '0' || c == '1')
                        && count.trim().parse::<u64>().is_ok()
                        && !count.trim().contains(','),
                )
            });
            if looks_like_counts.unwrap_or(false) {
                PatternTable::read_pattern_counts(path)
            } else {
                PatternTable::read_row_csv(path)
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    inputs: Vec<String>,
    config: serde_json::Value,
    seed: u64,
    version: &'a str,
    threads: usize,
    wall_clock_ms: f64,
}

fn write_manifest(
    out: &Path,
    command: &str,
    inputs: &[&Path],
    config: serde_json::Value,
    seed: u64,
    wall_clock_ms: f64,
) -> Result<()> {
    let manifest = RunManifest {
        command,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        config,
        seed,
        version: VERSION,
        threads: rayon::current_num_threads(),
        wall_clock_ms,
    };
    let path = manifest_path(out);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub struct FitArgs {
    pub data: PathBuf,
    pub format: DataFormat,
    pub classes: usize,
    pub em: EmConfig,
    pub out: PathBuf,
}

/// `fit`: maximum-likelihood estimation, model file output.
pub fn cmd_fit(args: &FitArgs, stdout: &mut impl Write) -> Result<FitResult> {
    let start = Instant::now();
    let table = load_table(&args.data, args.format)?;
    let fit = fit_em(&table, args.classes, &args.em)?;
    std::fs::write(&args.out, fit.params.to_text())?;
    writeln!(
        stdout,
        "fit: C={} J={} N={} loglik={:.6} iters={} converged={} starts={}",
        args.classes,
        table.j(),
        table.n(),
        fit.loglik,
        fit.iters,
        fit.converged,
        fit.n_starts_run
    )?;
    if fit.identifiability_warning {
        writeln!(
            stdout,
            "warning: {} free parameters exceed {} identifiable cells",
            args.classes * (table.j() + 1) - 1,
            table.s() - 1
        )?;
    }
    write_manifest(
        &args.out,
        "fit",
        &[&args.data],
        serde_json::json!({
            "classes": args.classes,
            "em": {"max_iters": args.em.max_iters, "tol": args.em.tol, "n_starts": args.em.n_starts},
        }),
        args.em.seed,
        start.elapsed().as_secs_f64() * 1e3,
    )?;
    if !fit.converged {
        return Err(Error::Nonconvergence {
            max_iters: args.em.max_iters,
            loglik: fit.loglik,
        });
    }
    Ok(fit)
}

pub struct TestArgs {
    pub data: PathBuf,
    pub format: DataFormat,
    /// Either a previously fitted model file or a class count to fit now.
    pub model: Option<PathBuf>,
    pub classes: Option<usize>,
    pub em: EmConfig,
    pub specs: Vec<StatisticSpec>,
    pub replicates: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub replicates_out: Option<PathBuf>,
    pub hist_out: Option<PathBuf>,
    pub hist_spec: Option<StatisticSpec>,
    pub hist_bins: usize,
}

/// `test`: the fit-once resampling test.
pub fn cmd_test(args: &TestArgs, stdout: &mut impl Write) -> Result<TestReport> {
    let start = Instant::now();
    let table = load_table(&args.data, args.format)?;
    let fit = resolve_model(&table, args.model.as_deref(), args.classes, &args.em)?;
    let config = TestConfig::new(args.replicates, args.seed, args.specs.clone())?;
    let report = run_fit_test(&table, &fit, &config)?;

    let json = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    std::fs::write(&args.out, json)?;
    if let Some(path) = &args.replicates_out {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        report.write_replicates_csv(&mut file)?;
    }
    if let Some(path) = &args.hist_out {
        let spec = args
            .hist_spec
            .clone()
            .unwrap_or_else(|| report.results[0].spec.clone());
        let hist = crate::resampler::histogram_export(&report, &spec, args.hist_bins)?;
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        hist.write_csv(&mut file)?;
    }

    writeln!(stdout, "{:<12} {:>12} {:>8} {:>8}", "statistic", "observed", "p_upper", "p_lower")?;
    for r in &report.results {
        writeln!(
            stdout,
            "{:<12} {:>12.4} {:>8.3} {:>8.3}",
            r.spec.name(),
            r.observed,
            r.p_upper,
            r.p_lower
        )?;
    }
    write_manifest(
        &args.out,
        "test",
        &[&args.data],
        serde_json::json!({
            "model": args.model.as_ref().map(|p| p.display().to_string()),
            "classes": args.classes,
            "specs": args.specs.iter().map(|s| s.name()).collect::<Vec<_>>(),
            "replicates": args.replicates,
            "em": {"max_iters": args.em.max_iters, "tol": args.em.tol, "n_starts": args.em.n_starts, "seed": args.em.seed},
        }),
        args.seed,
        start.elapsed().as_secs_f64() * 1e3,
    )?;
    Ok(report)
}

fn resolve_model(
    table: &PatternTable,
    model: Option<&Path>,
    classes: Option<usize>,
    em: &EmConfig,
) -> Result<FitResult> {
    match (model, classes) {
        (Some(path), _) => {
            let params = LCParams::read_file(path)?;
            let loglik = crate::lcmodel::log_likelihood(&params, table)?;
            Ok(FitResult {
                params,
                loglik,
                iters: 0,
                converged: true,
                n_starts_run: 0,
                identifiability_warning: false,
            })
        }
        (None, Some(c)) => fit_em(table, c, em),
        (None, None) => Err(Error::Parse {
            path: "<args>".into(),
            reason: "either --model or --classes is required".into(),
        }),
    }
}

pub struct BootstrapArgs {
    pub data: PathBuf,
    pub format: DataFormat,
    pub classes: usize,
    pub em: EmConfig,
    pub specs: Vec<StatisticSpec>,
    pub replicates: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// `bootstrap`: per-replicate refitting baseline with timing comparison.
pub fn cmd_bootstrap(args: &BootstrapArgs, stdout: &mut impl Write) -> Result<BootstrapReport> {
    let start = Instant::now();
    let table = load_table(&args.data, args.format)?;
    let config = TestConfig::new(args.replicates, args.seed, args.specs.clone())?;
    let report = parametric_bootstrap(&table, args.classes, &config, &args.em)?;
    let json = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    std::fs::write(&args.out, json)?;
    writeln!(stdout, "{:<12} {:>12} {:>8}", "statistic", "observed", "p_upper")?;
    for r in &report.results {
        writeln!(stdout, "{:<12} {:>12.4} {:>8.3}", r.spec.name(), r.observed, r.p_upper)?;
    }
    writeln!(
        stdout,
        "timing: fit-once {:.1} ms, bootstrap {:.1} ms, ratio {:.1}x",
        report.timing.fit_once_ms, report.timing.bootstrap_ms, report.timing.ratio
    )?;
    write_manifest(
        &args.out,
        "bootstrap",
        &[&args.data],
        serde_json::json!({
            "classes": args.classes,
            "specs": args.specs.iter().map(|s| s.name()).collect::<Vec<_>>(),
            "replicates": args.replicates,
            "em": {"max_iters": args.em.max_iters, "tol": args.em.tol, "n_starts": args.em.n_starts, "seed": args.em.seed},
        }),
        args.seed,
        start.elapsed().as_secs_f64() * 1e3,
    )?;
    Ok(report)
}

pub struct SimulateArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Optional override of the study file's seed.
    pub seed: Option<u64>,
}

/// `simulate`: the Monte Carlo study driver.
pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut impl Write) -> Result<()> {
    let start = Instant::now();
    let study = StudyConfig::read_file(&args.config)?;
    let specs = study.parsed_specs()?;
    let em = study.em_config();
    let seed = args.seed.unwrap_or(study.seed);
    let results = run_study(
        &study.conditions,
        study.repetitions,
        study.k,
        &specs,
        &em,
        seed,
    )?;
    let mut buf = Vec::new();
    write_results_csv(&results, &mut buf)?;
    std::fs::write(&args.out, &buf)?;
    for r in &results {
        writeln!(
            stdout,
            "C_true={} N={} hi={} {}: rate={:.3} (mc_se={:.3})",
            r.condition.c_true, r.condition.n, r.condition.hi, r.spec, r.rate, r.mc_se
        )?;
    }
    write_manifest(
        &args.out,
        "simulate",
        &[&args.config],
        serde_json::json!({
            "repetitions": study.repetitions,
            "k": study.k,
            "specs": study.specs,
            "conditions": study.conditions.len(),
        }),
        seed,
        start.elapsed().as_secs_f64() * 1e3,
    )?;
    Ok(())
}

pub struct HistArgs {
    pub replicates: PathBuf,
    pub report: Option<PathBuf>,
    pub observed: Option<f64>,
    pub spec: StatisticSpec,
    pub bins: usize,
    pub out: PathBuf,
}

/// `hist`: bins a replicate CSV column into histogram rows with the
/// observed-value marker.
pub fn cmd_hist(args: &HistArgs, stdout: &mut impl Write) -> Result<()> {
    let start = Instant::now();
    let name = args.spec.name();
    let text = std::fs::read_to_string(&args.replicates)?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("k,") {
            continue;
        }
        let mut parts = line.rsplitn(2, ',');
        let value = parts.next().unwrap_or_default();
        let prefix = parts.next().unwrap_or_default();
        // prefix is "k,spec"; spec names may themselves contain commas
        let spec_name = prefix.split_once(',').map(|(_, s)| s).unwrap_or(prefix);
        if spec_name == name {
            values.push(value.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: args.replicates.display().to_string(),
                reason: format!("line {}: {}", lineno + 1, e),
            })?);
        }
    }
    if values.is_empty() {
        return Err(Error::Parse {
            path: args.replicates.display().to_string(),
            reason: format!("no replicate values for statistic {name}"),
        });
    }
    let observed = match (args.observed, &args.report) {
        (Some(v), _) => v,
        (None, Some(report_path)) => {
            let json: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(report_path)?).map_err(|e| {
                    Error::Parse {
                        path: report_path.display().to_string(),
                        reason: e.to_string(),
                    }
                })?;
            json["specs"]
                .as_array()
                .and_then(|specs| {
                    specs
                        .iter()
                        .find(|s| s["name"].as_str() == Some(&name))
                        .and_then(|s| s["observed"].as_f64())
                })
                .ok_or_else(|| Error::Parse {
                    path: report_path.display().to_string(),
                    reason: format!("statistic {name} not found in report"),
                })?
        }
        (None, None) => {
            return Err(Error::Parse {
                path: "<args>".into(),
                reason: "either --observed or --report is required".into(),
            })
        }
    };
    let hist = histogram_of(&values, observed, args.bins)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    hist.write_csv(&mut file)?;
    file.flush()?;
    writeln!(
        stdout,
        "hist: {} values of {} into {} bins, marker at {}",
        values.len(),
        name,
        args.bins,
        observed
    )?;
    write_manifest(
        &args.out,
        "hist",
        &[&args.replicates],
        serde_json::json!({"spec": name, "bins": args.bins, "observed": observed}),
        0,
        start.elapsed().as_secs_f64() * 1e3,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_autodetect() {
        let dir = tempfile::tempdir().unwrap();
        let counts = dir.path().join("a.counts");
        std::fs::write(&counts, "1011,24\n0000,3\n").unwrap();
        let t = load_table(&counts, DataFormat::Auto).unwrap();
        assert_eq!(t.j(), 4);
        assert_eq!(t.n(), 27);

        let rows = dir.path().join("b.csv");
        std::fs::write(&rows, "1,0\n0,1\n1,1\n").unwrap();
        let t = load_table(&rows, DataFormat::Auto).unwrap();
        assert_eq!(t.j(), 2);
        assert_eq!(t.n(), 3);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let input = exit_code(&Error::EmptyInput);
        let nonconv = exit_code(&Error::Nonconvergence {
            max_iters: 10,
            loglik: -1.0,
        });
        let unsupported = exit_code(&Error::UnsupportedResidualSpec { name: "risk:1".into() });
        assert_eq!(input, 2);
        assert_eq!(nonconv, 3);
        assert_eq!(unsupported, 4);
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(
            manifest_path(Path::new("/tmp/report.json")),
            Path::new("/tmp/report.json.manifest.json")
        );
    }
}
