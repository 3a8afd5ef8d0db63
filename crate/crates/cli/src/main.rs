use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use wan_core::checks::{run_suite, Fault, CHECK_MANIFEST};
use wan_core::experiment::{
    config_beside, export, format_comparison, parse_slice, reproduce_plan, resolve, run_experiment,
    write_comparison_csv, ComparisonRow, ExperimentConfig, Overrides, Scale, CONFIG_FILE,
};
use wan_core::trainer::TraceRecord;
use wan_core::WanError;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_UNKNOWN_ID: u8 = 3;

#[derive(Parser)]
#[command(name = "wan", version, about = "Weak adversarial network PDE solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the problem described by a JSON experiment config.
    Solve {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Print only the summary.
        #[arg(long)]
        quiet: bool,
    },
    /// Run the oracle suite (gradients, residuals, quadrature, time stepping).
    Check {
        /// Also write the outcomes to `<dir>/checks.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Write a 2-D slice of a trained network (and its error, if known).
    Export {
        checkpoint: PathBuf,
        /// Free axes then fixed values, e.g. `x1,x2` or `x1,x2:x3=0.5,t=1`.
        #[arg(long, default_value = "x1,x2")]
        slice: String,
        /// Nodes per axis.
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        /// Resolved experiment config; defaults to the one beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a published experiment and compare against its reported error.
    Reproduce {
        id: String,
        #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
        scale: ScaleArg,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

#[derive(clap::Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OverrideArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            max_iterations: self.max_iterations,
            output_dir: self.out.clone(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    GradSign,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }
    }
}

fn print_record(r: &TraceRecord) {
    let err = r.rel_error.map(|e| format!("{e:.4e}")).unwrap_or_else(|| "-".into());
    println!(
        "it {:>6}  total {:>12.5e}  L_int {:>11.4e}  L_bdry {:>11.4e}  rel_err {err}  {:.1}s",
        r.iteration, r.loss.total, r.loss.l_int, r.loss.l_bdry, r.seconds
    );
}

fn solve(config: &Path, overrides: Overrides, quiet: bool) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let mut res = resolve(&cfg)?;
    res.apply(&overrides)?;
    let dir = res.output_dir();
    println!("solving {} -> {} (digest {})", res.name, dir.display(), res.digest());
    let summary = run_experiment(&res, &dir, |r| {
        if !quiet {
            print_record(r)
        }
    })?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn check(out: Option<PathBuf>, fault: Option<FaultArg>) -> anyhow::Result<()> {
    let fault = fault.map(|FaultArg::GradSign| Fault::GradientSign);
    let outcomes = run_suite(fault);
    for o in &outcomes {
        println!(
            "{} {:<36} observed {:<12.4e} threshold {}  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.observed,
            o.threshold,
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} checks passed", outcomes.len() - failed, CHECK_MANIFEST.len());
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("checks.json"), serde_json::to_string_pretty(&outcomes)?)?;
    }
    if failed > 0 {
        bail!("{failed} check(s) failed");
    }
    Ok(())
}

fn export_cmd(checkpoint: &Path, slice: &str, resolution: usize, config: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<()> {
    if !checkpoint.is_file() {
        bail!("checkpoint {} not found", checkpoint.display());
    }
    let config = config.unwrap_or_else(|| config_beside(checkpoint));
    if !config.is_file() {
        return Err(WanError::Config(format!(
            "no {CONFIG_FILE} beside the checkpoint; pass --config ({} missing)",
            config.display()
        ))
        .into());
    }
    let res = resolve(&ExperimentConfig::load(&config)?)?;
    let spec = parse_slice(slice, &res.network_domain(), resolution)?;
    let dir = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    let outcome = export(checkpoint, &res, &spec, &dir)?;
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    if let Some(e) = &outcome.error_slice {
        if let Some(k) = e.argmax() {
            let (a, b) = e.coords(k);
            println!("max pointwise error {:.4e} at ({a:.4}, {b:.4})", e.values[k]);
        }
    }
    Ok(())
}

fn reproduce(id: &str, scale: ScaleArg, args: &OverrideArgs) -> anyhow::Result<()> {
    let mut plan = reproduce_plan(id, scale.into())?;
    let overrides = Overrides {
        output_dir: None,
        ..args.overrides()
    };
    for run in &mut plan {
        run.experiment.apply(&overrides)?;
    }
    let scale_name = match scale {
        ScaleArg::Desk => "desk",
        ScaleArg::Paper => "paper",
    };
    let root = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{id}-{scale_name}")));
    let mut rows = Vec::new();
    for run in &plan {
        let dir = root.join(&run.label);
        println!("[{id}] {} -> {}", run.label, dir.display());
        let last = std::cell::Cell::new(std::time::Instant::now());
        let summary = run_experiment(&run.experiment, &dir, |r| {
            if last.get().elapsed().as_secs() >= 10 {
                print_record(r);
                last.set(std::time::Instant::now());
            }
        });
        let summary = match summary {
            Ok(s) => s,
            Err(e) => {
                eprintln!("[{id}] {} aborted: {e}", run.label);
                wan_core::experiment::Summary::load(dir.join(wan_core::experiment::SUMMARY_FILE))
                    .with_context(|| format!("no summary for aborted run {}", run.label))?
            }
        };
        let slice = parse_slice("x1,x2", &run.experiment.network_domain(), 101)?;
        export(&dir.join(wan_core::experiment::NETWORK_FILE), &run.experiment, &slice, &dir)?;
        rows.push(ComparisonRow::new(run, &summary));
    }
    let mut f = std::io::BufWriter::new(fs::File::create(root.join("comparison.csv"))?);
    write_comparison_csv(&rows, &mut f)?;
    f.flush()?;
    print!("{}", format_comparison(&rows));
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<WanError>() {
        Some(WanError::Config(_)) => EXIT_CONFIG,
        Some(WanError::UnknownExperiment { .. }) => EXIT_UNKNOWN_ID,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { config, overrides, quiet } => solve(&config, overrides.overrides(), quiet),
        Command::Check { out, inject_fault } => check(out, inject_fault),
        Command::Export {
            checkpoint,
            slice,
            resolution,
            config,
            out,
        } => export_cmd(&checkpoint, &slice, resolution, config, out),
        Command::Reproduce { id, scale, overrides } => reproduce(&id, scale, &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
