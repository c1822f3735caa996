//! End-to-end runs: scenario, pipelines, evaluation and report files.

use std::path::Path;

use rayon::prelude::*;

use crate::config::{NamedPipeline, ResolvedExperiment, ScenarioSource};
use crate::detector::{Detector, OracleDetector};
use crate::ensemble::{run_near_far, FrameResult, StreamFrame};
use crate::error::{Error, Result};
use crate::eval::{evaluate_cohorts, latency_stats, CohortReport, MatchSpec};
use crate::io::{read_scenario_dir, write_bytes_atomic, write_ndjson};
use crate::range::RangeBand;
use crate::report::{emit_report, ExperimentReport, PipelineReport, ReportFormat};
use crate::scenario::{build_stream, generate_scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub name: String,
    pub frames: Vec<FrameResult>,
    pub report: CohortReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub runs: Vec<PipelineRun>,
}

impl ExperimentOutput {
    pub fn report(&self) -> ExperimentReport {
        ExperimentReport {
            pipelines: self
                .runs
                .iter()
                .map(|r| PipelineReport {
                    method: r.name.clone(),
                    report: r.report.clone(),
                })
                .collect(),
        }
    }
}

/// Builds the aggregated frame stream for an experiment's scenario.
pub fn load_stream(exp: &ResolvedExperiment) -> Result<Vec<StreamFrame>> {
    match &exp.scenario {
        ScenarioSource::Inline(spec) => generate_scenario(spec)?.stream(exp.aggregation_sweeps),
        ScenarioSource::Directory(dir) => {
            let loaded = read_scenario_dir(dir)?;
            let annotation_range = loaded
                .spec
                .as_ref()
                .map(|s| s.annotation_range)
                .unwrap_or(f64::INFINITY);
            build_stream(&loaded.sweeps, &loaded.frames, exp.aggregation_sweeps, annotation_range)
        }
    }
}

/// Runs one pipeline over a stream and evaluates it.
pub fn run_pipeline(
    pipeline: &NamedPipeline,
    stream: &[StreamFrame],
    bands: &[RangeBand],
    matching: &MatchSpec,
) -> Result<PipelineRun> {
    let spec = pipeline.pipeline.as_near_far();
    let detectors = spec
        .ensemble
        .experts
        .iter()
        .map(|m| OracleDetector::new(m.config.clone()))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn Detector> = detectors.iter().map(|d| d as &dyn Detector).collect();
    let frames = run_near_far(&spec, stream, &refs)?;

    let dets: Vec<_> = frames.iter().map(|f| f.detections.clone()).collect();
    let gts: Vec<_> = stream.iter().map(|f| f.truth.clone()).collect();
    let mut report = evaluate_cohorts(&dets, &gts, bands, matching)?;
    if !frames.is_empty() {
        let timings: Vec<_> = frames.iter().map(|f| f.timings).collect();
        report.latency = Some(latency_stats(&timings)?);
    }
    Ok(PipelineRun {
        name: pipeline.name.clone(),
        frames,
        report,
    })
}

/// Runs a list of pipelines, sequentially or concurrently, preserving order.
pub fn run_pipelines(
    pipelines: &[NamedPipeline],
    stream: &[StreamFrame],
    bands: &[RangeBand],
    matching: &MatchSpec,
    parallel: bool,
) -> Result<Vec<PipelineRun>> {
    if parallel {
        pipelines
            .par_iter()
            .map(|p| run_pipeline(p, stream, bands, matching))
            .collect()
    } else {
        pipelines
            .iter()
            .map(|p| run_pipeline(p, stream, bands, matching))
            .collect()
    }
}

pub fn run_experiment(exp: &ResolvedExperiment) -> Result<ExperimentOutput> {
    if exp.pipelines.is_empty() {
        return Err(Error::config("pipelines", "no pipelines to run"));
    }
    let stream = load_stream(exp)?;
    let runs = run_pipelines(&exp.pipelines, &stream, &exp.bands, &exp.matching, exp.parallel)?;
    Ok(ExperimentOutput { runs })
}

/// Runs the frontier grid followed by the configured pipelines.
pub fn run_frontier(exp: &ResolvedExperiment) -> Result<ExperimentOutput> {
    let mut all = exp.frontier.clone();
    all.extend(exp.pipelines.iter().cloned());
    if all.is_empty() {
        return Err(Error::config("frontier", "no frontier grid and no pipelines"));
    }
    let stream = load_stream(exp)?;
    let runs = run_pipelines(&all, &stream, &exp.bands, &exp.matching, exp.parallel)?;
    Ok(ExperimentOutput { runs })
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Writes `report.<fmt>` for each format and optionally `frames/<n>_<name>.ndjson`.
pub fn write_outputs(
    out: &ExperimentOutput,
    dir: &Path,
    formats: &[ReportFormat],
    write_frames: bool,
) -> Result<()> {
    let report = out.report();
    for &fmt in formats {
        write_bytes_atomic(&dir.join(format!("report.{fmt}")), &emit_report(&report, fmt)?)?;
    }
    if write_frames {
        for (i, run) in out.runs.iter().enumerate() {
            let path = dir
                .join("frames")
                .join(format!("{i:02}_{}.ndjson", file_stem(&run.name)));
            write_ndjson(&path, &run.frames)?;
        }
    }
    Ok(())
}
