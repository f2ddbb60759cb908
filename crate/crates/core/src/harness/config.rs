//! TOML experiment files. Every section overlays the built-in defaults, so a
//! file only names what it changes; unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! gpu = "a100"            # or { preset = "a100", num_sms = 54 }
//! datasets = ["random", "mix2"]
//! plans = ["baseline", "optmt", "rpf+l2p+optmt"]
//! replicate = true
//!
//! [model]
//! rows_per_table = 100000
//!
//! [e2e]
//! non_embedding_latency_us = 18000
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::{EndToEndModel, StageTables};
use crate::error::{Error, Result};
use crate::kernelmodel::PrefetchKind;
use crate::optim::{check_distance_axis, OptimizationPlan, SimSetup};
use crate::simcore::GpuConfig;
use crate::workload::{EmbeddingModelConfig, Hotness, TableMix};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub gpu: Option<Value>,
    #[serde(default)]
    pub model: Option<Table>,
    #[serde(default)]
    pub costs: Option<Table>,
    #[serde(default)]
    pub spill: Option<Table>,
    #[serde(default)]
    pub levers: Option<Table>,
    pub datasets: Vec<String>,
    #[serde(default = "default_plans")]
    pub plans: Vec<String>,
    /// Simulate one table per hotness group and reuse its time for the rest.
    #[serde(default = "yes")]
    pub replicate: bool,
    #[serde(default)]
    pub e2e: Option<EndToEndModel>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_plans() -> Vec<String> {
    vec!["baseline".into()]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub warps: Option<Vec<u32>>,
    #[serde(default)]
    pub distance: Option<DistanceSweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSweepConfig {
    pub scheme: String,
    pub distances: Vec<u32>,
    #[serde(default)]
    pub base: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Stage summary; format follows the extension.
    #[serde(default)]
    pub summary: Option<PathBuf>,
    /// Per-table reports; format follows the extension.
    #[serde(default)]
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSweep {
    pub kind: PrefetchKind,
    pub distances: Vec<u32>,
    pub base: OptimizationPlan,
}

/// A validated experiment with every preset and plan resolved.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub seed: u64,
    pub setup: SimSetup,
    pub stages: Vec<StageTables>,
    pub plans: Vec<OptimizationPlan>,
    pub replicate: bool,
    pub e2e: EndToEndModel,
    pub wlp_warps: Option<Vec<u32>>,
    pub distance: Option<DistanceSweep>,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Resolves presets and checks every field before anything is simulated.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let gpu = match &self.gpu {
            None => GpuConfig::a100(),
            Some(Value::String(name)) => GpuConfig::preset(name)?,
            Some(Value::Table(t)) => gpu_from_table(t)?,
            Some(v) => {
                return Err(Error::Config(format!(
                    "gpu must be a preset name or a table, got {}",
                    v.type_str()
                )))
            }
        };
        gpu.validate()?;
        let d = SimSetup::new(gpu, EmbeddingModelConfig::default());
        let mut setup = SimSetup {
            model: overlay_opt(&d.model, &self.model, "model")?,
            costs: overlay_opt(&d.costs, &self.costs, "costs")?,
            spill: overlay_opt(&d.spill, &self.spill, "spill")?,
            levers: overlay_opt(&d.levers, &self.levers, "levers")?,
            ..d
        };
        setup.model.validate()?;
        setup.launch.warps_per_block()?;
        setup.infinite_bandwidth = false;

        if self.datasets.is_empty() {
            return Err(Error::Config(
                "datasets must name at least one stage".into(),
            ));
        }
        let stages = self
            .datasets
            .iter()
            .map(|s| parse_stage(s, &setup.model))
            .collect::<Result<Vec<_>>>()?;
        if self.plans.is_empty() {
            return Err(Error::Config("plans must not be empty".into()));
        }
        let plans = self
            .plans
            .iter()
            .map(|p| {
                OptimizationPlan::parse(p).map_err(|e| Error::Config(format!("plan '{p}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let e2e = self.e2e.unwrap_or_default();
        if !(e2e.non_embedding_latency_us >= 0.0 && e2e.non_embedding_latency_us.is_finite()) {
            return Err(Error::Config(
                "e2e.non_embedding_latency_us must be finite and nonnegative".into(),
            ));
        }
        let sweep = self.sweep.clone().unwrap_or_default();
        if let Some(w) = &sweep.warps {
            if w.is_empty() {
                return Err(Error::Config("sweep.warps must not be empty".into()));
            }
        }
        let distance = match sweep.distance {
            None => None,
            Some(ds) => {
                check_distance_axis(&ds.distances)
                    .map_err(|e| Error::Config(format!("sweep.distance: {e}")))?;
                Some(DistanceSweep {
                    kind: PrefetchKind::parse(&ds.scheme)?,
                    distances: ds.distances,
                    base: match &ds.base {
                        Some(b) => OptimizationPlan::parse(b)?,
                        None => OptimizationPlan::baseline(),
                    },
                })
            }
        };
        if (sweep.warps.is_some() || distance.is_some())
            && stages.iter().any(|s| matches!(s, StageTables::Mix { .. }))
        {
            return Err(Error::Config(
                "sweeps run on single datasets, not on mixes".into(),
            ));
        }
        Ok(ResolvedExperiment {
            seed: self.seed,
            setup,
            stages,
            plans,
            replicate: self.replicate,
            e2e,
            wlp_warps: sweep.warps,
            distance,
            output: self.output.clone(),
        })
    }
}

fn parse_stage(s: &str, model: &EmbeddingModelConfig) -> Result<StageTables> {
    if s.starts_with("mix") {
        let mix = TableMix::parse(s)?;
        if mix.total() != model.num_tables {
            return Err(Error::Config(format!(
                "{s} needs {} tables, model has {}",
                mix.total(),
                model.num_tables
            )));
        }
        return Ok(StageTables::Mix {
            name: s.into(),
            mix,
        });
    }
    Ok(StageTables::Homogeneous(Hotness::parse(s)?))
}

/// A GPU description: `preset` names the starting point (a100 when absent),
/// every other key overrides a field of it.
pub fn gpu_from_table(t: &Table) -> Result<GpuConfig> {
    let mut t = t.clone();
    let base = match t.remove("preset") {
        None => GpuConfig::a100(),
        Some(Value::String(name)) => GpuConfig::preset(&name)?,
        Some(_) => return Err(Error::Config("gpu.preset must be a string".into())),
    };
    let gpu: GpuConfig = overlay(&base, &t, "gpu")?;
    gpu.validate()?;
    Ok(gpu)
}

/// `--gpu` accepts a preset name or a path to a TOML file.
pub fn resolve_gpu(arg: &str) -> Result<GpuConfig> {
    if let Ok(g) = GpuConfig::preset(arg) {
        return Ok(g);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(Error::Config(format!(
            "'{arg}' is neither a gpu preset nor a file"
        )));
    }
    let t: Table = toml::from_str(&std::fs::read_to_string(path)?)?;
    gpu_from_table(&t)
}

fn overlay_opt<T: Clone + Serialize + DeserializeOwned>(
    base: &T,
    patch: &Option<Table>,
    what: &str,
) -> Result<T> {
    match patch {
        None => Ok(base.clone()),
        Some(p) => overlay(base, p, what),
    }
}

/// Applies `patch` on top of the serialized `base`, recursing into tables.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: &Table, what: &str) -> Result<T> {
    let mut v = Value::try_from(base).map_err(|e| Error::Config(format!("{what}: {e}")))?;
    merge(&mut v, patch, what)?;
    v.try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{what}: {}", e.message())))
}

fn merge(dst: &mut Value, patch: &Table, path: &str) -> Result<()> {
    let Value::Table(dt) = dst else {
        return Err(Error::Config(format!("{path} is not a table")));
    };
    for (k, v) in patch {
        let here = format!("{path}.{k}");
        match (dt.get_mut(k), v) {
            (None, _) => return Err(Error::Config(format!("unknown key {here}"))),
            (Some(d @ Value::Table(_)), Value::Table(p)) => merge(d, p, &here)?,
            (Some(Value::Float(_)), Value::Integer(i)) => {
                dt.insert(k.clone(), Value::Float(*i as f64));
            }
            (Some(_), v) => {
                dt.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
seed = 9
gpu = { preset = "h100", num_sms = 66, latencies = { hbm = 500 } }
datasets = ["random", "mix2"]
plans = ["baseline", "rpf+l2p+optmt"]
replicate = false

[model]
rows_per_table = 20000
batch_size = 64

[spill]
enabled = false

[e2e]
non_embedding_latency_us = 120

[output]
summary = "out/summary.csv"
"#;

    #[test]
    fn overlay_onto_presets() {
        let r = ExperimentConfig::from_toml(FULL)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(r.setup.gpu.name, "h100");
        assert_eq!(r.setup.gpu.num_sms, 66);
        assert_eq!(r.setup.gpu.latencies.hbm, 500);
        assert_eq!(r.setup.gpu.latencies.l2, GpuConfig::h100().latencies.l2);
        assert_eq!(r.setup.model.rows_per_table, 20000);
        assert_eq!(r.setup.model.pooling_factor, 150);
        assert!(!r.setup.spill.enabled);
        assert_eq!(r.plans[1].label(), "rpf:2+l2p+optmt");
        assert_eq!(r.stages[1].label(), "mix2");
        assert!(!r.replicate);
        assert_eq!(r.e2e.non_embedding_latency_us, 120.0);
        assert_eq!(
            r.output.summary.as_deref(),
            Some(Path::new("out/summary.csv"))
        );
    }

    #[test]
    fn seed_is_mandatory() {
        let e = ExperimentConfig::from_toml("datasets = [\"random\"]").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn bad_fields_fail_before_simulation() {
        let cases = [
            "seed = 1\ndatasets = [\"random\"]\ncolour = 3",
            "seed = 1\ndatasets = [\"random\"]\n[model]\nrowz = 3",
            "seed = 1\ndatasets = [\"random\"]\ngpu = { preset = \"v100\" }",
            "seed = 1\ndatasets = [\"random\"]\ngpu = { num_sms = 0 }",
            "seed = 1\ndatasets = [\"warm\"]",
            "seed = 1\ndatasets = []",
            "seed = 1\ndatasets = [\"random\"]\nplans = [\"turbo\"]",
            "seed = 1\ndatasets = [\"random\"]\n[model]\nbatch_size = 0",
            "seed = 1\ndatasets = [\"mix1\"]\n[model]\nnum_tables = 10",
            "seed = 1\ndatasets = [\"random\"]\n[e2e]\nnon_embedding_latency_us = -1",
            "seed = 1\ndatasets = [\"random\"]\n[sweep.distance]\nscheme = \"rpf\"\ndistances = [0, 2]",
        ];
        for c in cases {
            let r = ExperimentConfig::from_toml(c).and_then(|x| x.resolve());
            assert!(r.is_err(), "accepted: {c}");
        }
    }

    #[test]
    fn integer_accepted_for_float_field() {
        let t: Table = toml::from_str("hbm_peak_bytes_per_sec = 2000000000000").unwrap();
        let g = gpu_from_table(&t).unwrap();
        assert_eq!(g.hbm_peak_bytes_per_sec, 2e12);
    }

    #[test]
    fn gpu_file_or_preset() {
        assert_eq!(resolve_gpu("h100").unwrap().num_sms, 132);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.toml");
        std::fs::write(&p, "preset = \"a100\"\nnum_sms = 54\n").unwrap();
        assert_eq!(resolve_gpu(p.to_str().unwrap()).unwrap().num_sms, 54);
        assert!(resolve_gpu("nope").is_err());
    }
}
