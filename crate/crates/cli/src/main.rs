use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use nma_core::bootstrap::BootstrapConfig;
use nma_core::diagnostics::TemporaryReference;
use nma_core::report::{self, FlagRule, OutputFormat, RunConfig};
use nma_core::{Error, Method};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Reml,
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Tsv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TempRefArg {
    Lowest,
    FirstListed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FlagRuleArg {
    /// Flagged by at least two criteria.
    Consensus,
    /// Flagged by any criterion.
    Union,
}

/// Influence and outlier diagnostics for a contrast-based random-effects
/// network meta-analysis of binary outcomes.
#[derive(Debug, Parser)]
#[command(name = "nma-influence", version)]
struct Args {
    /// Long-format CSV/TSV with columns study, year, treatment, events, size.
    #[arg(long)]
    input: PathBuf,

    /// Label of the global reference treatment.
    #[arg(long, default_value = "Placebo")]
    reference: String,

    /// Estimator for the reported model fit.
    #[arg(long, value_enum, default_value = "reml")]
    method: MethodArg,

    /// Bootstrap replicates; 0 disables calibration.
    #[arg(long, default_value_t = 2400)]
    bootstrap: usize,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Trial ids to drop before the analysis.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<u32>,

    /// Output directory.
    #[arg(long, default_value = "nma-out")]
    out: PathBuf,

    #[arg(long, value_enum, value_delimiter = ',', default_values = ["tsv", "json"])]
    format: Vec<FormatArg>,

    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,

    /// Arm used as temporary reference when re-coding a trial head-to-head.
    #[arg(long, value_enum, default_value = "lowest")]
    temp_reference: TempRefArg,

    /// How per-criterion flags combine into the flagged-trial list.
    #[arg(long, value_enum, default_value = "consensus")]
    flag_rule: FlagRuleArg,
}

impl Args {
    fn run_config(&self) -> RunConfig {
        let mut config = RunConfig::new(&self.input);
        config.reference = self.reference.clone();
        config.method = match self.method {
            MethodArg::Reml => Method::Reml,
            MethodArg::Ml => Method::Ml,
        };
        config.bootstrap = (self.bootstrap > 0).then(|| BootstrapConfig {
            replicates: self.bootstrap,
            seed: self.seed,
            ..BootstrapConfig::default()
        });
        config.exclusions = self.exclude.clone();
        config.out_dir = Some(self.out.clone());
        config.formats = self
            .format
            .iter()
            .map(|f| match f {
                FormatArg::Tsv => OutputFormat::Tsv,
                FormatArg::Json => OutputFormat::Json,
            })
            .collect();
        config.formats.dedup();
        config.temporary_reference = match self.temp_reference {
            TempRefArg::Lowest => TemporaryReference::LowestIndex,
            TempRefArg::FirstListed => TemporaryReference::FirstListed,
        };
        config.flag_rule = match self.flag_rule {
            FlagRuleArg::Consensus => FlagRule::AtLeast(2),
            FlagRuleArg::Union => FlagRule::Union,
        };
        config
    }
}

fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }

    let config = args.run_config();
    let report = match report::run_analysis(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let written = match report.write(&args.out, &config.formats) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: writing {}: {e}", args.out.display());
            return ExitCode::from(EXIT_DATA);
        }
    };

    let s = &report.summary;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{} trials, {} treatments, tau = {} ({})",
        s.trials,
        s.treatments.len(),
        report::format_g6(s.tau),
        s.method
    );
    if report.flagged.is_empty() {
        let _ = writeln!(out, "flagged: none");
    } else {
        let _ = writeln!(out, "flagged: {}", report.flagged.join(", "));
    }
    if let Some(note) = &report.sensitivity_note {
        let _ = writeln!(out, "sensitivity analysis skipped: {note}");
    }
    for path in written {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    ExitCode::SUCCESS
}
