use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use zng_core::clock::Cycle;
use zng_core::config::{PlatformKind, SimConfig};
use zng_core::trace::{generate_trace, load_trace, MemoryRequest, TraceSpec};

use crate::Failure;

/// Where a run's requests come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceSource {
    /// A binary or text trace file, or a JSON generator spec when the path
    /// ends in `.json`.
    File(PathBuf),
    Spec(TraceSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSource>,
    pub out: PathBuf,
    /// Overrides the generator seed; ignored for trace files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "all_platforms")]
    pub platforms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<Cycle>,
}

fn all_platforms() -> Vec<String> {
    PlatformKind::ALL.iter().map(|p| p.name().to_string()).collect()
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display())).map_err(Failure::Usage)?;
        let mut m: RunManifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing manifest {}", path.display()))
            .map_err(Failure::Usage)?;
        // Relative paths in a manifest are relative to the manifest itself.
        let base = path.parent().unwrap_or(Path::new(""));
        m.config = m.config.map(|c| base.join(c));
        m.out = base.join(&m.out);
        if let Some(TraceSource::File(f)) = &m.trace {
            m.trace = Some(TraceSource::File(base.join(f)));
        }
        Ok(m)
    }

    pub fn platforms(&self) -> Result<Vec<PlatformKind>, Failure> {
        if self.platforms.is_empty() {
            return Err(Failure::usage("platform list is empty"));
        }
        self.platforms.iter().map(|p| p.parse::<PlatformKind>().map_err(Failure::from_sim)).collect()
    }

    pub fn sim_config(&self) -> Result<SimConfig, Failure> {
        let mut sim = load_config(self.config.as_deref())?;
        if let Some(epoch) = self.epoch {
            sim.engine.epoch_cycles = epoch;
        }
        sim.validate().map_err(Failure::from_sim)?;
        Ok(sim)
    }

    pub fn trace(&self) -> Result<Vec<MemoryRequest>, Failure> {
        let source = self
            .trace
            .clone()
            .unwrap_or_else(|| TraceSource::Spec(TraceSpec::default_mixed(TraceSpec::DEFAULT_MIX_LENGTH, 1)));
        load_source(&source, self.seed)
    }
}

pub fn load_config(path: Option<&Path>) -> Result<SimConfig, Failure> {
    match path {
        None => Ok(SimConfig::table_defaults()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())).map_err(Failure::Usage)?;
            SimConfig::from_json(&text).map_err(Failure::from_sim)
        }
    }
}

pub fn load_spec(path: &Path) -> Result<TraceSpec, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading trace spec {}", path.display())).map_err(Failure::Usage)?;
    let spec: TraceSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing trace spec {}", path.display()))
        .map_err(Failure::Usage)?;
    spec.validate().map_err(|e| Failure::Usage(e.into()))?;
    Ok(spec)
}

pub fn load_source(source: &TraceSource, seed: Option<u64>) -> Result<Vec<MemoryRequest>, Failure> {
    let spec = match source {
        TraceSource::File(p) if p.extension().is_some_and(|e| e == "json") => load_spec(p)?,
        TraceSource::File(p) => {
            return load_trace(p).with_context(|| format!("loading trace {}", p.display())).map_err(Failure::Usage);
        }
        TraceSource::Spec(s) => s.clone(),
    };
    let spec = match seed {
        Some(seed) => spec.with_seed(seed),
        None => spec,
    };
    generate_trace(&spec).map_err(|e| Failure::Usage(e.into()))
}
