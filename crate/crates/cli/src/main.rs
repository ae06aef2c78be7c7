//! `harmon`: fit, apply and evaluate pairwise harmonization models, generate
//! synthetic cohorts and run the stress-test experiments.
//!
//! Exit status: 0 on success, 2 for invalid input or arguments, 3 when a fit
//! fails numerically (e.g. a rank-deficient design).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use harmon_core::data::{format_f64, load_cohort, save_cohort, CovariateSchema};
use harmon_core::metrics::evaluate_pairwise;
use harmon_core::pairwise::{
    fit_pairwise, harmonize_moving, load_model, save_model, PairwiseOptions, RowFilter,
};
use harmon_core::synth::SynthSpec;
use harmon_experiments::{run, ExperimentConfig, ExperimentId};

#[derive(Parser)]
#[command(
    name = "harmon",
    version,
    about = "Pairwise ComBAT harmonization of multi-site measurements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model mapping the moving site onto the reference site.
    Fit {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Estimate parameters on matching rows only, e.g. `diagnosis=HC`.
        #[arg(long)]
        fit_filter: Option<String>,
    },
    /// Harmonize rows of a fitted site with a saved model.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-feature Bhattacharyya distances before and after harmonization.
    Metric {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// True values of the moving rows, for mean absolute differences.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Generate a synthetic cohort from a recipe file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write each subject's covariate effect and noise draw.
        #[arg(long)]
        latent: Option<PathBuf>,
    },
    /// Run one of the stress-test experiments.
    Experiment {
        /// exp1..exp5 or bias_sweep, sample_size, age_range, sex_covariate, pathology.
        #[arg(long)]
        id: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plot_data: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Invalid(String),
    Numerical(String),
}

impl From<harmon_core::Error> for Failure {
    fn from(e: harmon_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

impl From<harmon_experiments::Error> for Failure {
    fn from(e: harmon_experiments::Error) -> Self {
        match e {
            harmon_experiments::Error::Core(c) => c.into(),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Invalid(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>) -> Result<(), Failure> {
    w.flush().map_err(|e| Failure::Invalid(e.to_string()))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Fit {
            reference,
            moving,
            schema,
            out,
            fit_filter,
        } => {
            let schema = CovariateSchema::from_toml_str(&read_text(&schema)?)?;
            let r = load_cohort(open(&reference)?, &schema)?;
            let m = load_cohort(open(&moving)?, &schema)?;
            let options = PairwiseOptions {
                fit_filter: fit_filter.as_deref().map(RowFilter::parse).transpose()?,
                ..Default::default()
            };
            let model = fit_pairwise(&r, &m, &schema, &options)?;
            for (role, ok) in [
                ("reference", model.summary.reference_converged),
                ("moving", model.summary.moving_converged),
            ] {
                if !ok {
                    eprintln!("warning: {role} site shrinkage stopped at the iteration limit");
                }
            }
            let mut w = create(&out)?;
            save_model(&model, &mut w)?;
            finish(w)
        }
        Command::Apply { model, input, out } => {
            let model = load_model(open(&model)?)?;
            let rows = load_cohort(open(&input)?, &model.model.global.schema)?;
            let harmonized = harmonize_moving(&model, &rows)?;
            let mut w = create(&out)?;
            save_cohort(&harmonized, &mut w)?;
            finish(w)
        }
        Command::Metric {
            model,
            reference,
            moving,
            out,
            truth,
        } => {
            let model = load_model(open(&model)?)?;
            let schema = &model.model.global.schema;
            let r = load_cohort(open(&reference)?, schema)?;
            let m = load_cohort(open(&moving)?, schema)?;
            let t = truth
                .map(|p| open(&p).and_then(|f| Ok(load_cohort(f, schema)?)))
                .transpose()?;
            let report = evaluate_pairwise(&model, &r, &m, t.as_ref())?;
            let mut w = create(&out)?;
            let io = |e: std::io::Error| Failure::Invalid(e.to_string());
            let mad_col = t.is_some();
            writeln!(
                w,
                "feature,bd_before,bd_after{}",
                if mad_col { ",mad" } else { "" }
            )
            .map_err(io)?;
            for f in &report.features {
                let mad = f
                    .mad
                    .map(|x| format!(",{}", format_f64(x)))
                    .unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{}{mad}",
                    f.feature,
                    format_f64(f.bd_before),
                    format_f64(f.bd_after)
                )
                .map_err(io)?;
            }
            let mad = report
                .mean_mad()
                .map(|x| format!(",{}", format_f64(x)))
                .unwrap_or_default();
            writeln!(
                w,
                "mean,{},{}{mad}",
                format_f64(report.mean_bd_before()),
                format_f64(report.mean_bd_after())
            )
            .map_err(io)?;
            finish(w)
        }
        Command::Synth { spec, out, latent } => {
            let cohort = SynthSpec::from_toml_str(&read_text(&spec)?)?.generate()?;
            let mut w = create(&out)?;
            save_cohort(&cohort.table, &mut w)?;
            finish(w)?;
            if let Some(path) = latent {
                let mut w = create(&path)?;
                cohort.write_latent(&mut w)?;
                finish(w)?;
            }
            Ok(())
        }
        Command::Experiment {
            id,
            config,
            out,
            plot_data,
            reps,
            seed,
        } => {
            let id: ExperimentId = id.parse()?;
            let mut cfg = match config {
                Some(path) => ExperimentConfig::from_toml_str(&read_text(&path)?)?,
                None => ExperimentConfig::default(),
            };
            if let Some(r) = reps {
                cfg.repetitions = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run(id, &cfg)?;
            let mut w = create(&out)?;
            report.write_csv(&mut w)?;
            finish(w)?;
            if let Some(path) = plot_data {
                let mut w = create(&path)?;
                report.write_plot_data(&mut w)?;
                finish(w)?;
            }
            Ok(())
        }
    }
}
