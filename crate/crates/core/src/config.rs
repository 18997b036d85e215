//! Run configuration: a TOML file with `data.*`, `model.*`, `agg.*`, `train.*`
//! and `bench.*` keys plus `key=value` overrides. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggConfig, Paradigm};
use crate::bench::{parse_shapes, BenchOptions, Scope, DEFAULT_SHAPES, MIN_ITERS, MIN_WARMUP};
use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::features::{BackboneConfig, Variant};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Setting this variable to `1` forces deterministic mode everywhere.
pub const DETERMINISTIC_ENV: &str = "DBS_DETERMINISTIC";

pub fn deterministic_from_env() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v.trim() == "1")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub height: usize,
    pub width: usize,
    /// Disparity search range of both the generator and the network.
    pub d_max: usize,
    pub num_regions: usize,
    pub dot_density: f64,
    pub seed: u64,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_disparity: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        DataSection {
            height: s.height,
            width: s.width,
            d_max: s.d_max,
            num_regions: s.num_regions,
            dot_density: s.dot_density,
            seed: s.seed,
            count: 60,
            fixed_disparity: None,
        }
    }
}

impl DataSection {
    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            height: self.height,
            width: self.width,
            d_max: self.d_max,
            num_regions: self.num_regions,
            dot_density: self.dot_density,
            seed: self.seed,
            fixed_disparity: self.fixed_disparity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_channels: Option<usize>,
    pub use_pretrained: bool,
    /// Weight initialization seed.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: Variant::Tiny,
            base_channels: None,
            use_pretrained: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggSection {
    pub paradigm: Paradigm,
    /// Defaults to `model.variant`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    pub num_stages: usize,
    /// Defaults to the variant's depth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks_per_stage: Option<usize>,
    pub use_attention: bool,
    pub spatial_dense: bool,
}

impl Default for AggSection {
    fn default() -> Self {
        AggSection {
            paradigm: Paradigm::Bga,
            variant: None,
            num_stages: 2,
            blocks_per_stage: None,
            use_attention: false,
            spatial_dense: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Comma-separated `HxW` list.
    pub shapes: String,
    pub variants: Vec<Variant>,
    pub warmup: usize,
    pub iters: usize,
    pub scopes: Vec<Scope>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            shapes: DEFAULT_SHAPES
                .iter()
                .map(|(h, w)| format!("{h}x{w}"))
                .collect::<Vec<_>>()
                .join(","),
            variants: Variant::ALL.to_vec(),
            warmup: MIN_WARMUP,
            iters: MIN_ITERS,
            scopes: vec![Scope::Aggregation, Scope::Full],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub agg: AggSection,
    pub train: TrainConfig,
    pub bench: BenchSection,
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text and applies `key=value` overrides in order.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
            set_path(&mut table, key.trim(), parse_override_value(value.trim()))?;
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e| Error::Config(e.to_string()))?;
        if deterministic_from_env() {
            cfg.train.deterministic = true;
        }
        Ok(cfg)
    }

    /// Loads `path` (or defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn deterministic(&self) -> bool {
        self.train.deterministic || deterministic_from_env()
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let variant = self.model.variant;
        let agg_variant = self.agg.variant.unwrap_or(variant);
        let defaults = AggConfig::for_variant(agg_variant);
        let cfg = ModelConfig {
            backbone: BackboneConfig {
                base_channels: self.model.base_channels.unwrap_or(variant.level4_channels()),
                use_pretrained: self.model.use_pretrained,
                ..BackboneConfig::for_variant(variant)
            },
            agg: AggConfig {
                paradigm: self.agg.paradigm,
                num_stages: self.agg.num_stages,
                blocks_per_stage: self.agg.blocks_per_stage.unwrap_or(defaults.blocks_per_stage),
                use_attention: self.agg.use_attention,
                spatial_dense: self.agg.spatial_dense,
                ..defaults
            },
            d_max: self.data.d_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bench_options(&self) -> Result<(Vec<(usize, usize)>, BenchOptions)> {
        let shapes = parse_shapes(&self.bench.shapes)?;
        Ok((
            shapes,
            BenchOptions {
                d_max: self.data.d_max,
                warmup: self.bench.warmup,
                iters: self.bench.iters,
                seed: self.model.seed,
                scopes: self.bench.scopes.clone(),
            },
        ))
    }
}
