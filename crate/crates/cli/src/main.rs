use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rangeforge_core::config::{load_config, parse_config, OUTPUT_DIR_ENV};
use rangeforge_core::detector::calibrate_latency;
use rangeforge_core::eval::{evaluate_cohorts, latency_stats, MatchSpec};
use rangeforge_core::experiment::{run_experiment, run_frontier, write_outputs, ExperimentOutput};
use rangeforge_core::io::{
    align_frames, read_measurements_csv, read_ndjson, write_bytes_atomic, write_scenario_dir,
    DetectionFrame, SweepFormat,
};
use rangeforge_core::range::RangeBand;
use rangeforge_core::report::{emit_report, ExperimentReport, PipelineReport, ReportFormat};
use rangeforge_core::scenario::{generate_scenario, FrameTruth, ScenarioSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "rangeforge", version, about = "Range-expert detection pipelines over synthetic LiDAR scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scenario (sweeps and annotations) to a directory.
    Generate {
        /// Experiment config or bare scenario spec (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        sweep_format: Option<SweepFormatArg>,
    },
    /// Run every pipeline in a config and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate stored detections against stored annotations.
    Eval {
        /// NDJSON, one `{index, detections[, timings]}` object per frame.
        #[arg(long)]
        dets: PathBuf,
        /// NDJSON annotations as written by `generate`.
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated `inner:outer` bands; empty outer means unbounded.
        #[arg(long, value_delimiter = ',', default_value = "0:50,50:100,100:150")]
        bands: Vec<RangeBand>,
        /// Matching settings as JSON; defaults apply when omitted.
        #[arg(long)]
        matching: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Sweep single-expert configs (plus configured pipelines) and emit accuracy/latency rows.
    Frontier {
        #[arg(long)]
        config: PathBuf,
        /// CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the stage latency model to measured runtimes.
    Timing {
        /// CSV with columns range, voxel_reciprocal, occupied, point_proc, backbone, neck, head, post_proc.
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepFormatArg {
    Ndjson,
    Binary,
}

/// Failure split by exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let config = e
            .chain()
            .filter_map(|c| c.downcast_ref::<rangeforge_core::Error>())
            .any(|c| c.is_config());
        if config {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

/// `--out`, then the environment override, then the config value.
fn output_dir(flag: Option<PathBuf>, configured: Option<PathBuf>) -> Result<PathBuf, Failure> {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .or(configured)
        .ok_or_else(|| config_err(anyhow!("no output directory; pass --out or set {OUTPUT_DIR_ENV}")))
}

fn print_summary(out: &ExperimentOutput) {
    for run in &out.runs {
        let latency = run
            .report
            .latency
            .as_ref()
            .map(|l| format!("{:.1} ± {:.1} ms", l.mean_ms, l.std_ms))
            .unwrap_or_default();
        let bands: Vec<String> = run
            .report
            .bands
            .iter()
            .map(|b| {
                let cds = b.aggregate.as_ref().map(|a| format!("{:.3}", a.cds)).unwrap_or("-".into());
                format!("{} {cds}", b.band)
            })
            .collect();
        println!("{:<32} {}  {latency}", run.name, bands.join("  "));
    }
}

fn generate(config: &Path, out: Option<PathBuf>, fmt: Option<SweepFormatArg>) -> Result<(), Failure> {
    let text = fs::read_to_string(config)
        .with_context(|| format!("reading {}", config.display()))
        .map_err(config_err)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", config.display()))
        .map_err(config_err)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let (spec, configured_dir, configured_fmt) = if value.get("experts").is_some() {
        let exp = parse_config(&text).map_err(|e| config_err(anyhow!(e)))?;
        let resolved = exp.resolve(base).map_err(|e| config_err(anyhow!(e)))?;
        let spec = exp
            .scenario
            .ok_or_else(|| config_err(anyhow!("`generate` needs an inline `scenario`")))?;
        (spec, Some(resolved.output_dir), resolved.sweep_format)
    } else {
        let spec: ScenarioSpec = serde_json::from_value(value).map_err(config_err)?;
        spec.validate().map_err(|e| config_err(anyhow!(e)))?;
        (spec, None, SweepFormat::Ndjson)
    };
    let dir = output_dir(out, configured_dir)?;
    let format = match fmt {
        Some(SweepFormatArg::Ndjson) => SweepFormat::Ndjson,
        Some(SweepFormatArg::Binary) => SweepFormat::Binary,
        None => configured_fmt,
    };
    let scenario = generate_scenario(&spec).map_err(anyhow::Error::from)?;
    write_scenario_dir(&dir, &scenario, format)
        .with_context(|| format!("writing {}", dir.display()))?;
    println!(
        "wrote {} sweeps and {} annotated frames to {}",
        scenario.sweeps.len(),
        scenario.frames.len(),
        dir.display()
    );
    Ok(())
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let exp = load_config(config)
        .with_context(|| format!("loading {}", config.display()))
        .map_err(config_err)?;
    let dir = output_dir(out, Some(exp.output_dir.clone()))?;
    let output = run_experiment(&exp).map_err(anyhow::Error::from)?;
    write_outputs(&output, &dir, &exp.formats, exp.write_frames)
        .with_context(|| format!("writing {}", dir.display()))?;
    print_summary(&output);
    Ok(())
}

fn eval(
    dets: &Path,
    gt: &Path,
    bands: &[RangeBand],
    matching: Option<&Path>,
    out: Option<&Path>,
    format: &str,
) -> Result<(), Failure> {
    let format = format.parse::<ReportFormat>().map_err(|e| config_err(anyhow!(e)))?;
    let matching: MatchSpec = match matching {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(config_err)?;
            serde_json::from_str(&text).map_err(config_err)?
        }
        None => MatchSpec::default(),
    };
    let det_frames: Vec<DetectionFrame> = read_ndjson(dets).map_err(anyhow::Error::from)?;
    let gt_frames: Vec<FrameTruth> = read_ndjson(gt).map_err(anyhow::Error::from)?;
    let (d, g) = align_frames(&det_frames, &gt_frames).map_err(anyhow::Error::from)?;
    let mut report = evaluate_cohorts(&d, &g, bands, &matching).map_err(anyhow::Error::from)?;
    let timings: Option<Vec<_>> = det_frames.iter().map(|f| f.timings).collect();
    if let Some(t) = timings.filter(|t| !t.is_empty()) {
        report.latency = Some(latency_stats(&t).map_err(anyhow::Error::from)?);
    }
    let method = dets
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "detections".into());
    let report = ExperimentReport {
        pipelines: vec![PipelineReport { method, report }],
    };
    let bytes = emit_report(&report, format).map_err(anyhow::Error::from)?;
    match out {
        Some(p) => write_bytes_atomic(p, &bytes).map_err(anyhow::Error::from)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn frontier(config: &Path, out: &Path) -> Result<(), Failure> {
    let exp = load_config(config)
        .with_context(|| format!("loading {}", config.display()))
        .map_err(config_err)?;
    let output = run_frontier(&exp).map_err(anyhow::Error::from)?;
    let bytes = emit_report(&output.report(), ReportFormat::Csv).map_err(anyhow::Error::from)?;
    write_bytes_atomic(out, &bytes).map_err(anyhow::Error::from)?;
    print_summary(&output);
    Ok(())
}

fn timing(measurements: &Path, out: &Path) -> Result<(), Failure> {
    let rows = read_measurements_csv(measurements)
        .with_context(|| format!("reading {}", measurements.display()))
        .map_err(config_err)?;
    let cal = calibrate_latency(&rows).map_err(anyhow::Error::from)?;
    let mut bytes = serde_json::to_vec_pretty(&cal).map_err(anyhow::Error::from)?;
    bytes.push(b'\n');
    write_bytes_atomic(out, &bytes).map_err(anyhow::Error::from)?;
    let worst = cal
        .relative_residuals
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, r| m.max(r.abs()));
    println!("fitted {} rows; worst relative residual {:.1}%", rows.len(), 100.0 * worst);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            config,
            out,
            sweep_format,
        } => generate(&config, out, sweep_format),
        Command::Run { config, out } => run(&config, out),
        Command::Eval {
            dets,
            gt,
            bands,
            matching,
            out,
            format,
        } => eval(&dets, &gt, &bands, matching.as_deref(), out.as_deref(), &format),
        Command::Frontier { config, out } => frontier(&config, &out),
        Command::Timing { measurements, out } => timing(&measurements, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
