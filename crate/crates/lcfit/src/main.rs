use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lcfit::cli::{
    cmd_bootstrap, cmd_fit, cmd_hist, cmd_simulate, cmd_test, exit_code, BootstrapArgs, DataFormat,
    FitArgs, HistArgs, SimulateArgs, TestArgs,
};
use lcfit::lcmodel::EmConfig;
use lcfit::statistics::StatisticSpec;

#[derive(Parser)]
#[command(name = "lcfit", version, about = "Latent class model fitting and resampling fit tests")]
struct Cli {
    /// Worker thread cap; results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Rows,
    Counts,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Auto => DataFormat::Auto,
            FormatArg::Rows => DataFormat::Rows,
            FormatArg::Counts => DataFormat::Counts,
        }
    }
}

#[derive(Args)]
struct EmFlags {
    /// EM iteration cap per start.
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Log-likelihood improvement threshold for convergence.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Number of random EM starts.
    #[arg(long, default_value_t = 20)]
    starts: usize,
}

impl EmFlags {
    fn config(&self, seed: u64) -> EmConfig {
        EmConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            n_starts: self.starts,
            seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a latent class model by maximum likelihood.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
        format: FormatArg,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        em: EmFlags,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit-once resampling test of model fit.
    Test {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
        format: FormatArg,
        /// Previously fitted model file (alternative to --classes).
        #[arg(long, conflicts_with = "classes")]
        model: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        /// Statistics, e.g. "x2,g2,x2:1,2,risk:3,freq:1011".
        #[arg(long)]
        specs: String,
        /// Number of replicate datasets (K).
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        em: EmFlags,
        /// Report JSON to write.
        #[arg(long)]
        out: PathBuf,
        /// Optional replicate-value CSV (k,spec,value).
        #[arg(long)]
        replicates_out: Option<PathBuf>,
        /// Optional histogram CSV for one statistic.
        #[arg(long)]
        hist_out: Option<PathBuf>,
        /// Statistic to histogram (defaults to the first spec).
        #[arg(long)]
        hist_spec: Option<String>,
        #[arg(long, default_value_t = 20)]
        hist_bins: usize,
    },
    /// Classical parametric bootstrap baseline with timing comparison.
    Bootstrap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
        format: FormatArg,
        #[arg(long)]
        classes: usize,
        /// Chi-squared statistics only (risk/freq have no residual form).
        #[arg(long)]
        specs: String,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        em: EmFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte Carlo study from a declarative config file.
    Simulate {
        /// Study configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Results CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Override the config file's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Bin replicate values into a histogram CSV with an observed marker.
    Hist {
        /// Replicate CSV produced by `test --replicates-out`.
        #[arg(long)]
        replicates: PathBuf,
        /// Report JSON to read the observed value from.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Observed value marker (alternative to --report).
        #[arg(long)]
        observed: Option<f64>,
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> lcfit::Result<()> {
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::Fit {
            data,
            format,
            classes,
            seed,
            em,
            out,
        } => {
            cmd_fit(
                &FitArgs {
                    data,
                    format: format.into(),
                    classes,
                    em: em.config(seed),
                    out,
                },
                &mut stdout,
            )?;
            Ok(())
        }
        Command::Test {
            data,
            format,
            model,
            classes,
            specs,
            replicates,
            seed,
            em,
            out,
            replicates_out,
            hist_out,
            hist_spec,
            hist_bins,
        } => {
            let specs = StatisticSpec::parse_list(&specs)?;
            let hist_spec = hist_spec.map(|s| s.parse::<StatisticSpec>()).transpose()?;
            cmd_test(
                &TestArgs {
                    data,
                    format: format.into(),
                    model,
                    classes,
                    em: em.config(seed),
                    specs,
                    replicates,
                    seed,
                    out,
                    replicates_out,
                    hist_out,
                    hist_spec,
                    hist_bins,
                },
                &mut stdout,
            )?;
            Ok(())
        }
        Command::Bootstrap {
            data,
            format,
            classes,
            specs,
            replicates,
            seed,
            em,
            out,
        } => {
            let specs = StatisticSpec::parse_list(&specs)?;
            cmd_bootstrap(
                &BootstrapArgs {
                    data,
                    format: format.into(),
                    classes,
                    em: em.config(seed),
                    specs,
                    replicates,
                    seed,
                    out,
                },
                &mut stdout,
            )?;
            Ok(())
        }
        Command::Simulate { config, out, seed } => {
            cmd_simulate(&SimulateArgs { config, out, seed }, &mut stdout)
        }
        Command::Hist {
            replicates,
            report,
            observed,
            spec,
            bins,
            out,
        } => {
            let spec = spec.parse::<StatisticSpec>()?;
            cmd_hist(
                &HistArgs {
                    replicates,
                    report,
                    observed,
                    spec,
                    bins,
                    out,
                },
                &mut stdout,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("thread pool initialized once");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
