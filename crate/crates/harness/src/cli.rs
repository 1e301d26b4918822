use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use eada_core::datagen::{save_csv, gen_toy, SyntheticSpec};

use crate::config::{ExperimentConfig, OUTPUT_DIR_ENV};
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, Schedule};
use crate::output::write_all;
use crate::plot::{plot_files, RunFilter};
use crate::verify::{exit_status, run_probe, Probe, VerifyOptions};

#[derive(Parser, Debug)]
#[command(name = "eada", version, about = "Energy-based active domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write source.csv and target.csv for the rotated two-Gaussian toy
    Generate(GenerateArgs),
    /// Run every (strategy, seed) pair of a JSON config
    Run(RunArgs),
    /// Run a numerical probe of the theory; exits 2 on any violation
    Verify(VerifyArgs),
    /// Render SVG charts from metrics and histogram CSVs
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Rotation of the target domain in degrees
    #[arg(long)]
    rotation: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Points per class in the source domain
    #[arg(long)]
    n_source: Option<usize>,
    /// Points per class in the target domain
    #[arg(long)]
    n_target: Option<usize>,
    /// Isotropic variance of both class Gaussians
    #[arg(long)]
    variance: Option<f64>,
    /// Rotate the source points themselves instead of drawing new ones
    #[arg(long)]
    exact_rotation: bool,
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = "data")]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    config: PathBuf,
    /// Overrides the config's output_dir
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    /// Run one job at a time instead of on the thread pool
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(value_parser = parse_probe)]
    probe: Probe,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 32)]
    detail_limit: usize,
    /// Report path; defaults to <output-dir>/verify_<probe>.json
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = "results")]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PlotArgs {
    metrics: PathBuf,
    /// Histogram CSVs; defaults to every fe_hist_round*.csv next to the metrics
    #[arg(long = "hist")]
    histograms: Vec<PathBuf>,
    /// Run drawn from each histogram file; defaults to the first listed
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = "plots")]
    output_dir: PathBuf,
}

fn parse_probe(s: &str) -> std::result::Result<Probe, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit status.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    match command {
        Command::Generate(a) => generate(a, out, err),
        Command::Run(a) => run(a, out, err),
        Command::Verify(a) => verify(a, out, err),
        Command::Plot(a) => plot(a, out),
    }
}

fn say(w: &mut dyn Write, text: std::fmt::Arguments<'_>) {
    let _ = w.write_fmt(text);
}

fn generate(a: GenerateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    let mut spec = SyntheticSpec::default();
    if let Some(r) = a.rotation {
        spec.rotation_deg = r;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.n_source {
        spec.n_per_class_source = n;
    }
    if let Some(n) = a.n_target {
        spec.n_per_class_target = n;
    }
    if let Some(v) = a.variance {
        spec.covariance = [[v, 0.0], [0.0, v]];
    }
    spec.rotate_exact_points = a.exact_rotation;
    spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let domains = gen_toy::<f64>(&spec)?;
    std::fs::create_dir_all(&a.output_dir).map_err(|e| HarnessError::io(&a.output_dir, e))?;
    say(out, format_args!("{}\n", serde_json::to_string_pretty(&spec).expect("spec serializes")));
    for (name, rows) in [("source.csv", &domains.source), ("target.csv", &domains.target)] {
        let path = a.output_dir.join(name);
        save_csv(rows, &path)?;
        say(err, format_args!("wrote {} ({} rows)\n", path.display(), rows.len()));
    }
    Ok(0)
}

fn run(a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    let schedule = if a.sequential { Schedule::Sequential } else { Schedule::Parallel };
    let result = run_experiment(&cfg, schedule)?;
    let written = write_all(&result, &cfg, &cfg.output_dir)?;
    say(out, format_args!("{:<12} {:>5} {:>10} {:>10}\n", "strategy", "runs", "mean", "std"));
    for agg in &result.aggregates {
        say(
            out,
            format_args!(
                "{:<12} {:>5} {:>10.4} {:>10.4}\n",
                agg.strategy.name(),
                agg.runs,
                agg.mean_final_target_error,
                agg.std_final_target_error
            ),
        );
    }
    for p in written {
        say(err, format_args!("wrote {}\n", p.display()));
    }
    Ok(0)
}

fn verify(a: VerifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    let opts = VerifyOptions { trials: a.trials, seed: a.seed, eta: a.eta, detail_limit: a.detail_limit };
    let report = run_probe(a.probe, &opts)?;
    let path = a.out.unwrap_or_else(|| a.output_dir.join(format!("verify_{}.json", a.probe)));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, json).map_err(|e| HarnessError::io(&path, e))?;
    say(
        out,
        format_args!(
            "{}: {} trials, {} excluded, {} violations\n",
            report.probe, report.trials, report.excluded, report.violations
        ),
    );
    say(err, format_args!("wrote {}\n", path.display()));
    Ok(exit_status(&report))
}

fn sibling_histograms(metrics: &Path) -> Result<Vec<PathBuf>> {
    let dir = metrics.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut found: Vec<(usize, PathBuf)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let r = name.strip_prefix("fe_hist_round")?.strip_suffix(".csv")?.parse().ok()?;
            Some((r, p))
        })
        .collect();
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn plot(a: PlotArgs, out: &mut dyn Write) -> Result<u8> {
    if !a.metrics.is_file() {
        return Err(HarnessError::io(&a.metrics, "no such file"));
    }
    let histograms = if a.histograms.is_empty() { sibling_histograms(&a.metrics)? } else { a.histograms };
    let filter = RunFilter { strategy: a.strategy, seed: a.seed };
    for p in plot_files(&a.metrics, &histograms, &filter, &a.output_dir)? {
        say(out, format_args!("{}\n", p.display()));
    }
    Ok(0)
}
