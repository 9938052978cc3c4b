//! Experiment configuration files.
//!
//! A configuration is a TOML document with one table per module:
//!
//! ```toml
//! [sim]
//! slots = 1000
//! seed = 1
//!
//! [topology]
//! cells_per_side = 5
//! users_per_cell = 2
//!
//! [dpp]
//! utility = "log"
//!
//! [experiment]
//! sweep = [2e12, 4e12, 6e12, 8e12, 1e13]
//! out = "out"
//! trace = true
//! ```
//!
//! Every key is optional and defaults to the grid scenario. Unknown keys are
//! rejected. Relative trace paths are resolved against the directory of the
//! configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::control::DppConfig;
use crate::error::{Error, Result};
use crate::playback::PlaybackPolicy;
use crate::sim::{MobilityParams, RunParams, SimConfig};
use crate::topology::GridParams;
use crate::video::VideoParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentParams {
    /// Values of `V`, one run each.
    pub sweep: Vec<f64>,
    pub out: PathBuf,
    /// Write slot_trace.csv for every run.
    pub trace: bool,
    /// User whose chunk-to-helper association is written. Defaults to the
    /// first mobile user, or user 0 without mobile users.
    pub trace_user: Option<usize>,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            sweep: vec![2e12, 4e12, 6e12, 8e12, 1e13],
            out: PathBuf::from("out"),
            trace: false,
            trace_user: None,
        }
    }
}

/// A validated experiment: one simulation per sweep value of `V`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentSpec {
    pub config: SimConfig,
    pub experiment: ExperimentParams,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub slots: Option<u64>,
    pub v: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub trace: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct FileLayout {
    sim: RunParams,
    topology: GridParams,
    mobility: MobilityParams,
    channel: ChannelParams,
    video: VideoParams,
    dpp: DppConfig,
    playback: PlaybackPolicy,
    experiment: ExperimentParams,
}

impl From<FileLayout> for ExperimentSpec {
    fn from(f: FileLayout) -> Self {
        Self {
            config: SimConfig {
                sim: f.sim,
                topology: f.topology,
                mobility: f.mobility,
                channel: f.channel,
                video: f.video,
                dpp: f.dpp,
                playback: f.playback,
            },
            experiment: f.experiment,
        }
    }
}

impl From<&ExperimentSpec> for FileLayout {
    fn from(s: &ExperimentSpec) -> Self {
        let c = s.config.clone();
        Self {
            sim: c.sim,
            topology: c.topology,
            mobility: c.mobility,
            channel: c.channel,
            video: c.video,
            dpp: c.dpp,
            playback: c.playback,
            experiment: s.experiment.clone(),
        }
    }
}

impl ExperimentSpec {
    pub fn num_users(&self) -> usize {
        let t = &self.config.topology;
        t.cells_per_side * t.cells_per_side * t.users_per_cell + self.config.mobility.users.len()
    }

    pub fn trace_user(&self) -> usize {
        self.experiment.trace_user.unwrap_or_else(|| {
            if self.config.mobility.users.is_empty() {
                0
            } else {
                self.num_users() - self.config.mobility.users.len()
            }
        })
    }

    /// Simulation settings of the sweep point `v`.
    pub fn run_config(&self, v: f64) -> SimConfig {
        let mut c = self.config.clone();
        c.dpp.v = v;
        c
    }

    /// The configuration of a single sweep point, as a standalone experiment.
    pub fn single(&self, v: f64) -> ExperimentSpec {
        ExperimentSpec {
            config: self.run_config(v),
            experiment: ExperimentParams {
                sweep: vec![v],
                ..self.experiment.clone()
            },
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.config.sim.seed = seed;
        }
        if let Some(slots) = o.slots {
            self.config.sim.slots = slots;
        }
        if let Some(v) = &o.v {
            self.experiment.sweep = v.clone();
        }
        if let Some(out) = &o.out {
            self.experiment.out = out.clone();
        }
        if let Some(trace) = o.trace {
            self.experiment.trace = trace;
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.experiment.sweep.is_empty() {
            issues.push("experiment.sweep must not be empty".to_string());
        }
        for v in &self.experiment.sweep {
            if !(v.is_finite() && *v > 0.0) {
                issues.push(format!("experiment.sweep values must be positive, got {v}"));
            }
        }
        issues.extend(self.config.validate());
        if let Some(u) = self.experiment.trace_user {
            if u >= self.num_users() {
                issues.push(format!(
                    "experiment.trace_user {u} out of range ({} users)",
                    self.num_users()
                ));
            }
        }
        issues
    }

    /// TOML text that parses back to this spec.
    pub fn to_toml(&self) -> String {
        toml::to_string(&FileLayout::from(self)).expect("configuration serializes")
    }
}

/// Parses configuration text. Relative trace paths are resolved against
/// `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path, overrides: &Overrides) -> Result<ExperimentSpec> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config(e.to_string()))?;
    let mut unknown = Vec::new();
    let layout: FileLayout = serde_ignored::deserialize(de, |path| {
        unknown.push(format!("unknown key `{path}`"));
    })
    .map_err(|e| Error::config(e.to_string()))?;

    let mut spec = ExperimentSpec::from(layout);
    if let Some(trace) = &spec.config.video.trace {
        if trace.is_relative() {
            spec.config.video.trace = Some(base_dir.join(trace));
        }
    }
    spec.apply(overrides);

    let mut issues = unknown;
    issues.extend(spec.validate());
    if issues.is_empty() {
        Ok(spec)
    } else {
        Err(Error::Config(issues))
    }
}

/// Reads and validates a configuration file, then applies `overrides`.
pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::ConfigFile {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base, overrides)
}
