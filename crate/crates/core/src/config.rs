//! Experiment configuration: a single JSON document naming the scenario, the
//! experts, the pipelines built from them, evaluation bands and outputs.
//!
//! Everything is validated up front; errors carry the JSON path of the
//! offending value.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detector::profiles::{expert, Architecture};
use crate::detector::{prefix_path, GeneralizationMode, RangeExpertConfig};
use crate::ensemble::{
    CombineMode, EnsembleMember, EnsembleSpec, Forecaster, NearFarSpec, NmsMode,
};
use crate::error::{Error, Result};
use crate::eval::MatchSpec;
use crate::io::{resolve, SweepFormat};
use crate::range::{RangeBand, RangeMode};
use crate::report::ReportFormat;
use crate::scenario::ScenarioSpec;

/// Overrides `output.dir` when set. No other setting reads the environment.
pub const OUTPUT_DIR_ENV: &str = "RANGEFORGE_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Inline scenario; mutually exclusive with `scenario_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    /// Directory written by `generate`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_path: Option<PathBuf>,
    #[serde(default = "default_aggregation")]
    pub aggregation_sweeps: usize,
    pub experts: BTreeMap<String, ExpertEntry>,
    #[serde(default)]
    pub pipelines: Vec<PipelineConfig>,
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frontier: Option<FrontierGrid>,
    /// Run pipelines concurrently. Results are identical either way.
    #[serde(default)]
    pub parallel: bool,
}

fn default_aggregation() -> usize {
    5
}

/// An expert given by profile plus `r1/s -> r2`, with optional partial overrides
/// merged over the profile's presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Architecture>,
    pub train_range: f64,
    pub voxel_reciprocal: f64,
    pub infer_range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generalization_mode: Option<GeneralizationMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberRef {
    pub expert: String,
    pub band: RangeBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PipelineConfig {
    Single {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        expert: String,
    },
    Ensemble {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        members: Vec<MemberRef>,
        #[serde(default)]
        combine_mode: CombineMode,
        #[serde(default)]
        test_time_mask: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nms_threshold: Option<f64>,
        #[serde(default)]
        nms_mode: NmsMode,
        #[serde(default)]
        range_mode: RangeMode,
    },
    NearFar {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        members: Vec<MemberRef>,
        frequencies: Vec<u32>,
        #[serde(default)]
        test_time_mask: bool,
        #[serde(default)]
        range_mode: RangeMode,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub bands: Vec<RangeBand>,
    #[serde(default)]
    pub matching: MatchSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Any of `json`, `csv`.
    pub formats: Vec<String>,
    /// Also write per-pipeline detections as NDJSON.
    pub write_frames: bool,
    pub sweep_format: SweepFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            formats: vec!["json".into(), "csv".into()],
            write_frames: true,
            sweep_format: SweepFormat::Ndjson,
        }
    }
}

/// Grid of single experts `r1/s -> r2` for an accuracy/latency sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierGrid {
    pub profile: Architecture,
    /// `(train_range, voxel_reciprocal)` pairs.
    pub experts: Vec<(f64, f64)>,
    pub infer_ranges: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pipeline {
    Single(RangeExpertConfig),
    Ensemble(EnsembleSpec),
    NearFar(NearFarSpec),
}

impl Pipeline {
    /// Every pipeline runs as a near-far spec; the others are all-ones schedules.
    pub fn as_near_far(&self) -> NearFarSpec {
        match self {
            Pipeline::Single(c) => NearFarSpec::synchronous(EnsembleSpec::single(c.clone())),
            Pipeline::Ensemble(e) => NearFarSpec::synchronous(e.clone()),
            Pipeline::NearFar(n) => n.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedPipeline {
    pub name: String,
    pub pipeline: Pipeline,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    Inline(ScenarioSpec),
    Directory(PathBuf),
}

/// A validated experiment, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedExperiment {
    pub scenario: ScenarioSource,
    pub aggregation_sweeps: usize,
    pub experts: BTreeMap<String, RangeExpertConfig>,
    pub pipelines: Vec<NamedPipeline>,
    pub frontier: Vec<NamedPipeline>,
    pub bands: Vec<RangeBand>,
    pub matching: MatchSpec,
    pub output_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    pub write_frames: bool,
    pub sweep_format: SweepFormat,
    pub parallel: bool,
}

/// Parses a config document, reporting the JSON path of the first bad value.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })
}

/// Reads and resolves a config file. Relative paths resolve against its directory.
pub fn load_config(path: &Path) -> Result<ResolvedExperiment> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text)?.resolve(base)
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn nested_path(prefix: &str, inner: &str) -> String {
    if inner == "." || inner.is_empty() {
        prefix.to_owned()
    } else {
        format!("{prefix}.{inner}")
    }
}

impl ExpertEntry {
    pub fn resolve(&self, path: &str) -> Result<RangeExpertConfig> {
        let mut base = match self.profile {
            Some(arch) => serde_json::to_value(expert(
                arch,
                self.train_range,
                self.voxel_reciprocal,
                self.infer_range,
            ))?,
            None => serde_json::json!({
                "train_range": self.train_range,
                "voxel_reciprocal": self.voxel_reciprocal,
                "infer_range": self.infer_range,
            }),
        };
        if let Some(mode) = self.generalization_mode {
            base["generalization_mode"] = serde_json::to_value(mode)?;
        }
        for (key, patch) in [("oracle", &self.oracle), ("latency", &self.latency)] {
            if let Some(patch) = patch {
                if !patch.is_object() {
                    return Err(Error::config(format!("{path}.{key}"), "expected an object"));
                }
                merge(&mut base[key], patch);
            }
        }
        let config: RangeExpertConfig = serde_path_to_error::deserialize(base).map_err(|e| {
            let inner = e.path().to_string();
            let message = e.into_inner().to_string();
            let message = if self.profile.is_none() {
                format!("{message} (no profile given, so every field is required)")
            } else {
                message
            };
            Error::config(nested_path(path, &inner), message)
        })?;
        config.validate().map_err(|e| prefix_path(e, path))?;
        Ok(config)
    }
}

fn resolve_members(
    members: &[MemberRef],
    experts: &BTreeMap<String, RangeExpertConfig>,
    path: &str,
) -> Result<Vec<EnsembleMember>> {
    if members.is_empty() {
        return Err(Error::config(format!("{path}.members"), "at least one member required"));
    }
    members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let config = experts.get(&m.expert).ok_or_else(|| {
                Error::config(
                    format!("{path}.members[{i}].expert"),
                    format!("unknown expert `{}`", m.expert),
                )
            })?;
            Ok(EnsembleMember {
                config: config.clone(),
                band: m.band,
            })
        })
        .collect()
}

fn cover_error(e: Error, path: &str) -> Error {
    match e {
        Error::BandCover(msg) => Error::config(format!("{path}.members"), msg),
        Error::Config { .. } => prefix_path(e, path),
        other => other,
    }
}

fn default_name(members: &[MemberRef], prefix: &str) -> String {
    let names: Vec<&str> = members.iter().map(|m| m.expert.as_str()).collect();
    format!("{prefix} ({})", names.join(", "))
}

impl PipelineConfig {
    fn resolve(
        &self,
        experts: &BTreeMap<String, RangeExpertConfig>,
        path: &str,
    ) -> Result<NamedPipeline> {
        match self {
            PipelineConfig::Single { name, expert } => {
                let config = experts.get(expert).ok_or_else(|| {
                    Error::config(format!("{path}.expert"), format!("unknown expert `{expert}`"))
                })?;
                Ok(NamedPipeline {
                    name: name.clone().unwrap_or_else(|| config.label()),
                    pipeline: Pipeline::Single(config.clone()),
                })
            }
            PipelineConfig::Ensemble {
                name,
                members,
                combine_mode,
                test_time_mask,
                nms_threshold,
                nms_mode,
                range_mode,
            } => {
                let spec = EnsembleSpec {
                    experts: resolve_members(members, experts, path)?,
                    combine_mode: *combine_mode,
                    test_time_mask: *test_time_mask,
                    nms_threshold: nms_threshold.unwrap_or(1.0),
                    nms_mode: *nms_mode,
                    range_mode: *range_mode,
                };
                spec.validate().map_err(|e| cover_error(e, path))?;
                Ok(NamedPipeline {
                    name: name
                        .clone()
                        .unwrap_or_else(|| default_name(members, "range ensemble")),
                    pipeline: Pipeline::Ensemble(spec),
                })
            }
            PipelineConfig::NearFar {
                name,
                members,
                frequencies,
                test_time_mask,
                range_mode,
            } => {
                let spec = NearFarSpec {
                    ensemble: EnsembleSpec {
                        experts: resolve_members(members, experts, path)?,
                        combine_mode: CombineMode::BandRoute,
                        test_time_mask: *test_time_mask,
                        nms_threshold: 1.0,
                        nms_mode: NmsMode::Greedy,
                        range_mode: *range_mode,
                    },
                    frequencies: frequencies.clone(),
                    forecaster: Forecaster::ConstantVelocity,
                };
                spec.validate().map_err(|e| match e {
                    Error::Config { path: p, message } if p.starts_with("frequencies") => {
                        Error::config(format!("{path}.{p}"), message)
                    }
                    other => cover_error(other, path),
                })?;
                Ok(NamedPipeline {
                    name: name.clone().unwrap_or_else(|| default_name(members, "near-far")),
                    pipeline: Pipeline::NearFar(spec),
                })
            }
        }
    }
}

impl ExperimentConfig {
    /// Validates everything and resolves names; no scenario data is touched.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedExperiment> {
        let scenario = match (&self.scenario, &self.scenario_path) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "scenario_path",
                    "give either `scenario` or `scenario_path`, not both",
                ))
            }
            (None, None) => {
                return Err(Error::config("scenario", "missing; give `scenario` or `scenario_path`"))
            }
            (Some(spec), None) => {
                spec.validate().map_err(|e| prefix_path(e, "scenario"))?;
                ScenarioSource::Inline(spec.clone())
            }
            (None, Some(p)) => ScenarioSource::Directory(resolve(base_dir, p)),
        };
        if self.aggregation_sweeps == 0 {
            return Err(Error::config("aggregation_sweeps", "must be >= 1"));
        }

        let mut experts = BTreeMap::new();
        for (name, entry) in &self.experts {
            experts.insert(name.clone(), entry.resolve(&format!("experts.{name}"))?);
        }

        let mut pipelines = Vec::with_capacity(self.pipelines.len());
        let mut seen = BTreeSet::new();
        for (i, p) in self.pipelines.iter().enumerate() {
            let path = format!("pipelines[{i}]");
            let named = p.resolve(&experts, &path)?;
            if !seen.insert(named.name.clone()) {
                return Err(Error::config(
                    format!("{path}.name"),
                    format!("duplicate pipeline name `{}`", named.name),
                ));
            }
            pipelines.push(named);
        }

        let mut frontier = Vec::new();
        if let Some(grid) = &self.frontier {
            for (i, &(r1, s)) in grid.experts.iter().enumerate() {
                for &r2 in &grid.infer_ranges {
                    let config = expert(grid.profile, r1, s, r2);
                    config
                        .validate()
                        .map_err(|e| prefix_path(e, &format!("frontier.experts[{i}]")))?;
                    frontier.push(NamedPipeline {
                        name: config.label(),
                        pipeline: Pipeline::Single(config),
                    });
                }
            }
        }

        if self.eval.bands.is_empty() {
            return Err(Error::config("eval.bands", "at least one band required"));
        }
        self.eval
            .matching
            .validate()
            .map_err(|e| prefix_path(e, "eval.matching"))?;

        let formats = self
            .output
            .formats
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.parse::<ReportFormat>()
                    .map_err(|e| Error::config(format!("output.formats[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(ResolvedExperiment {
            scenario,
            aggregation_sweeps: self.aggregation_sweeps,
            experts,
            pipelines,
            frontier,
            bands: self.eval.bands.clone(),
            matching: self.eval.matching.clone(),
            output_dir: resolve(base_dir, &self.output.dir),
            formats,
            write_frames: self.output.write_frames,
            sweep_format: self.output.sweep_format,
            parallel: self.parallel,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::profiles::oracle_preset;

    const BASE: &str = r#"{
        "scenario": {"n_frames": 2},
        "experts": {
            "near": {"profile": "pointpillars-like", "train_range": 50, "voxel_reciprocal": 8, "infer_range": 50},
            "far": {"profile": "pointpillars-like", "train_range": 150, "voxel_reciprocal": 2, "infer_range": 150,
                    "oracle": {"fp_rate": 0.5}}
        },
        "pipelines": [
            {"kind": "single", "expert": "near"},
            {"kind": "ensemble", "name": "ens", "members": [
                {"expert": "near", "band": [0, 50]}, {"expert": "far", "band": [50, null]}]},
            {"kind": "near_far", "members": [
                {"expert": "near", "band": [0, 50]}, {"expert": "far", "band": [50, null]}],
             "frequencies": [1, 2]}
        ],
        "eval": {"bands": [[0, 50], [50, 150]]}
    }"#;

    fn with(patch: Value) -> String {
        let mut v: Value = serde_json::from_str(BASE).unwrap();
        merge(&mut v, &patch);
        v.to_string()
    }

    fn err_path(text: &str) -> String {
        match parse_config(text).and_then(|c| c.resolve(Path::new("."))) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn base_config_resolves() {
        let r = parse_config(BASE).unwrap().resolve(Path::new("/tmp")).unwrap();
        assert_eq!(r.pipelines.len(), 3);
        assert_eq!(r.pipelines[0].name, "50/8 → 50");
        assert_eq!(r.pipelines[1].name, "ens");
        assert_eq!(r.pipelines[2].name, "near-far (near, far)");
        assert_eq!(r.output_dir, PathBuf::from("/tmp/out"));
        assert_eq!(r.experts["far"].oracle.fp_rate, 0.5);
        let untouched = oracle_preset(Architecture::PointPillars);
        assert_eq!(r.experts["far"].oracle.sigma_t0, untouched.sigma_t0);
    }

    #[test]
    fn errors_carry_json_paths() {
        assert_eq!(
            err_path(&with(serde_json::json!({"experts": {"near": {"train_range": "x"}}}))),
            "experts.near.train_range"
        );
        assert_eq!(
            err_path(&with(serde_json::json!({"experts": {"far": {"oracle": {"base_recall": 2.0}}}}))),
            "experts.far.oracle.base_recall"
        );
        assert_eq!(
            err_path(&with(serde_json::json!({"experts": {"far": {"oracle": {"bogus": 1}}}}))),
            "experts.far.oracle.bogus"
        );
        assert_eq!(
            err_path(&with(serde_json::json!({"eval": {"matching": {"thresholds": [2, 1]}}}))),
            "eval.matching.thresholds"
        );
        assert_eq!(err_path(&with(serde_json::json!({"typo": 1}))), "typo");
    }

    #[test]
    fn band_overlap_rejected_before_running() {
        let text = with(serde_json::json!({"pipelines": [{"kind": "ensemble", "members": [
            {"expert": "near", "band": [0, 60]}, {"expert": "far", "band": [50, null]}]}]}));
        assert_eq!(err_path(&text), "pipelines[0].members");
        let text = with(serde_json::json!({"pipelines": [{"kind": "ensemble", "members": [
            {"expert": "near", "band": [0, 40]}, {"expert": "far", "band": [50, null]}]}]}));
        assert_eq!(err_path(&text), "pipelines[0].members");
    }

    #[test]
    fn unknown_expert_and_schedule_errors() {
        let text = with(serde_json::json!({"pipelines": [{"kind": "single", "expert": "mid"}]}));
        assert_eq!(err_path(&text), "pipelines[0].expert");
        let text = with(serde_json::json!({"pipelines": [{"kind": "near_far", "members": [
            {"expert": "near", "band": [0, 50]}, {"expert": "far", "band": [50, null]}],
            "frequencies": [2, 1]}]}));
        assert_eq!(err_path(&text), "pipelines[0].frequencies[0]");
    }

    #[test]
    fn expert_without_profile_needs_everything() {
        let text = with(serde_json::json!({"experts": {"bare": {
            "train_range": 50, "voxel_reciprocal": 4, "infer_range": 50}}}));
        assert_eq!(err_path(&text), "experts.bare");
    }

    #[test]
    fn scenario_source_exclusive() {
        let text = with(serde_json::json!({"scenario_path": "data"}));
        assert_eq!(err_path(&text), "scenario_path");
        let mut v: Value = serde_json::from_str(BASE).unwrap();
        v.as_object_mut().unwrap().remove("scenario");
        v["scenario_path"] = "data".into();
        let r = parse_config(&v.to_string()).unwrap().resolve(Path::new("/cfg")).unwrap();
        assert_eq!(r.scenario, ScenarioSource::Directory(PathBuf::from("/cfg/data")));
    }

    #[test]
    fn frontier_grid_expands() {
        let text = with(serde_json::json!({"frontier": {"profile": "pointpillars-like",
            "experts": [[50, 8], [100, 4]], "infer_ranges": [50, 100, 150]}}));
        let r = parse_config(&text).unwrap().resolve(Path::new(".")).unwrap();
        assert_eq!(r.frontier.len(), 6);
        assert_eq!(r.frontier[5].name, "100/4 → 150");
    }

    #[test]
    fn bad_output_format() {
        let text = with(serde_json::json!({"output": {"formats": ["json", "xml"]}}));
        assert_eq!(err_path(&text), "output.formats[1]");
    }
}
