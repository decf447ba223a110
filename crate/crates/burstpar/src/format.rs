//! TOML documents: graph and profile files, plans, curves, simulator
//! configuration, interference tables, sweep specifications and metrics.

use std::fs;
use std::path::Path;

use burstpar_core::graph::ModelMeta;
use burstpar_core::planner::TrainingPlan;
use burstpar_core::scaling::{CurvePoint, SampleEfficiencyCurve};
use burstpar_core::sim::{InterferenceTable, SimConfig, SimMetrics, SweepSpec};
use burstpar_core::{CompGraph, Layer, LayerProfile, NetworkProfile, ProfileEntry};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    pub global_batch: u32,
    #[serde(default)]
    pub input_shape: Vec<u32>,
    /// Interpolate per-device batches missing from a profile.
    #[serde(default = "yes")]
    pub interpolate: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub layer_id: u32,
    pub entries: Vec<ProfileEntry>,
}

/// On-disk graph, profiles and network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub model: ModelSection,
    pub layers: Vec<Layer>,
    pub profiles: Vec<ProfileSection>,
    pub network: NetworkProfile,
}

impl GraphFile {
    /// Virtual source/sink layers are left out; loading re-inserts them.
    pub fn from_graph(graph: &CompGraph, network: &NetworkProfile) -> Self {
        let virtual_ids: Vec<u32> = graph.layers().iter().filter(|l| l.is_virtual()).map(|l| l.id).collect();
        let layers = graph
            .layers()
            .iter()
            .filter(|l| !l.is_virtual())
            .map(|l| {
                let mut l = l.clone();
                l.predecessors.retain(|p| !virtual_ids.contains(p));
                l.successors.retain(|s| !virtual_ids.contains(s));
                l
            })
            .collect();
        let profiles =
            graph.profiles().map(|p| ProfileSection { layer_id: p.layer_id, entries: p.entries().collect() }).collect();
        GraphFile {
            model: ModelSection {
                name: graph.meta.name.clone(),
                global_batch: graph.global_batch(),
                input_shape: graph.meta.input_shape.clone(),
                interpolate: graph.interpolation_enabled(),
            },
            layers,
            profiles,
            network: *network,
        }
    }

    pub fn into_graph(self) -> burstpar_core::Result<(CompGraph, NetworkProfile)> {
        self.network.validate()?;
        let meta = ModelMeta { name: self.model.name, input_shape: self.model.input_shape };
        let profiles = self.profiles.into_iter().map(|p| LayerProfile::from_entries(p.layer_id, p.entries));
        let mut graph = CompGraph::new(meta, self.model.global_batch, self.layers, profiles)?;
        graph.set_interpolation(self.model.interpolate);
        Ok((graph, self.network))
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn parse_toml<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| CliError::parse(path, e.message().trim_end()))
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("documents serialize to TOML")
}

pub fn parse_graph(path: &Path, text: &str) -> Result<(CompGraph, NetworkProfile)> {
    let file: GraphFile = parse_toml(path, text)?;
    file.into_graph().map_err(|e| CliError::parse(path, e))
}

pub fn load_graph(path: &Path) -> Result<(CompGraph, NetworkProfile)> {
    parse_graph(path, &read_text(path)?)
}

pub fn graph_to_toml(graph: &CompGraph, network: &NetworkProfile) -> String {
    to_toml(&GraphFile::from_graph(graph, network))
}

pub fn load_plan(path: &Path) -> Result<TrainingPlan> {
    parse_toml(path, &read_text(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveFile {
    pub target_error: f64,
    pub points: Vec<CurvePoint>,
}

impl CurveFile {
    pub fn from_curve(curve: &SampleEfficiencyCurve) -> Self {
        CurveFile { target_error: curve.target_error, points: curve.points().to_vec() }
    }
}

pub fn parse_curve(path: &Path, text: &str) -> Result<SampleEfficiencyCurve> {
    let file: CurveFile = parse_toml(path, text)?;
    SampleEfficiencyCurve::new(file.target_error, file.points).map_err(|e| CliError::parse(path, e))
}

pub fn load_curve(path: &Path) -> Result<SampleEfficiencyCurve> {
    parse_curve(path, &read_text(path)?)
}

pub fn parse_sim_config(path: &Path, text: &str) -> Result<SimConfig> {
    let cfg: SimConfig = parse_toml(path, text)?;
    cfg.validate().map_err(|e| CliError::parse(path, e))?;
    Ok(cfg)
}

pub fn load_sim_config(path: &Path) -> Result<SimConfig> {
    parse_sim_config(path, &read_text(path)?)
}

pub fn parse_interference(path: &Path, text: &str) -> Result<InterferenceTable> {
    let t: InterferenceTable = parse_toml(path, text)?;
    InterferenceTable::new(t.hi_classes, t.lo_classes, t.factors).map_err(|e| CliError::parse(path, e))
}

pub fn load_interference(path: &Path) -> Result<InterferenceTable> {
    parse_interference(path, &read_text(path)?)
}

pub fn load_sweep_spec(path: &Path) -> Result<SweepSpec> {
    parse_toml(path, &read_text(path)?)
}

pub fn metrics_to_toml(metrics: &SimMetrics) -> String {
    to_toml(metrics)
}
