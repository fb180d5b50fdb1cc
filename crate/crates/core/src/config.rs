//! Run configuration and the mapping from dataset columns to evidence
//! sources.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{FeatureKind, PreprocessState, Schema, SyntheticConfig};
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SourceInput, SourceSpec, DEFAULT_STRUCTURED_AUX_WEIGHT, DEFAULT_TEXT_AUX_WEIGHT};
use crate::train::TrainConfig;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "EVIFUSION_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// One source for all structured features plus one per embedding.
    Modalities,
    /// Numerical and categorical features as separate sources.
    DataTypes,
    /// One source per schema feature group plus one per embedding.
    DataSources,
    /// Sources listed explicitly in `fusion.custom`.
    Custom,
}

impl std::str::FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modalities" => Ok(Grouping::Modalities),
            "data-types" => Ok(Grouping::DataTypes),
            "data-sources" => Ok(Grouping::DataSources),
            "custom" => Ok(Grouping::Custom),
            other => Err(Error::Config(format!("unknown fusion grouping {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSource {
    pub name: String,
    #[serde(default)]
    pub encoder: Option<EncoderKind>,
    /// Structured feature names; mutually exclusive with `embedding`.
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default)]
    pub embedding: Option<String>,
    #[serde(default)]
    pub aux_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub grouping: Grouping,
    /// Expected number of sources; checked after grouping.
    pub sources: Option<usize>,
    pub structured_encoder: EncoderKind,
    pub text_encoder: EncoderKind,
    pub structured_aux_weight: f64,
    pub text_aux_weight: f64,
    pub custom: Vec<CustomSource>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            grouping: Grouping::Modalities,
            sources: None,
            structured_encoder: EncoderKind::Mlp,
            text_encoder: EncoderKind::TextHead,
            structured_aux_weight: DEFAULT_STRUCTURED_AUX_WEIGHT,
            text_aux_weight: DEFAULT_TEXT_AUX_WEIGHT,
            custom: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest, dataset directory or bare CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub fusion: FusionConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: "synthetic".into(),
            seeds: DEFAULT_SEEDS.to_vec(),
            output_dir: None,
            data: DataConfig::default(),
            fusion: FusionConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task.is_empty() || !self.task.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(Error::Config(format!("task name {:?} must be non-empty [A-Za-z0-9._-]", self.task)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("give either data.path or data.synthetic, not both".into())),
            (None, None) => return Err(Error::Config("no dataset: set data.path or data.synthetic".into())),
            (None, Some(s)) => s.validate()?,
            _ => {}
        }
        let f = &self.fusion;
        for w in [f.structured_aux_weight, f.text_aux_weight] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config("auxiliary weights must be finite and >= 0".into()));
            }
        }
        if f.structured_encoder == EncoderKind::TextHead {
            return Err(Error::Config("structured sources take `mlp` or `resnet`".into()));
        }
        if f.sources == Some(0) {
            return Err(Error::Config("fusion.sources must be positive".into()));
        }
        if f.grouping == Grouping::Custom && f.custom.is_empty() {
            return Err(Error::Config("custom grouping needs fusion.custom entries".into()));
        }
        if f.grouping != Grouping::Custom && !f.custom.is_empty() {
            return Err(Error::Config("fusion.custom is only used with the custom grouping".into()));
        }
        if self.model.prototypes == 0 {
            return Err(Error::Config("model.prototypes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.model.encoder.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        self.train.validate()
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Flag, then config file, then environment, then `runs`.
    pub fn output_root(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
    }
}

/// Which raw inputs a source reads, before preprocessing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Schema feature indices.
    Features(Vec<usize>),
    Embedding(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePlan {
    pub name: String,
    pub encoder: EncoderKind,
    pub selection: Selection,
    pub aux_weight: f64,
}

/// Groups dataset inputs into evidence sources.
pub fn plan_sources(fusion: &FusionConfig, schema: &Schema) -> Result<Vec<SourcePlan>> {
    let structured = |name: String, features: Vec<usize>| SourcePlan {
        name,
        encoder: fusion.structured_encoder,
        selection: Selection::Features(features),
        aux_weight: fusion.structured_aux_weight,
    };
    let text: Vec<SourcePlan> = schema
        .embeddings
        .iter()
        .map(|e| SourcePlan {
            name: e.name.clone(),
            encoder: fusion.text_encoder,
            selection: Selection::Embedding(e.name.clone()),
            aux_weight: fusion.text_aux_weight,
        })
        .collect();
    let all: Vec<usize> = (0..schema.features.len()).collect();
    let of_kind = |kind| -> Vec<usize> { all.iter().copied().filter(|&j| schema.features[j].kind == kind).collect() };

    let mut plans = Vec::new();
    match fusion.grouping {
        Grouping::Modalities => {
            if !all.is_empty() {
                plans.push(structured("structured".into(), all.clone()));
            }
            plans.extend(text);
        }
        Grouping::DataTypes => {
            for (name, kind) in [("numerical", FeatureKind::Numerical), ("categorical", FeatureKind::Categorical)] {
                let cols = of_kind(kind);
                if cols.is_empty() {
                    log::warn!("data-types grouping: no {name} features, source omitted");
                } else {
                    plans.push(structured(name.into(), cols));
                }
            }
            plans.extend(text);
        }
        Grouping::DataSources => {
            let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
            for (j, f) in schema.features.iter().enumerate() {
                let g = f.group.clone().unwrap_or_else(|| "ungrouped".into());
                match groups.iter_mut().find(|(name, _)| *name == g) {
                    Some((_, cols)) => cols.push(j),
                    None => groups.push((g, vec![j])),
                }
            }
            plans.extend(groups.into_iter().map(|(g, cols)| structured(g, cols)));
            plans.extend(text);
        }
        Grouping::Custom => {
            for c in &fusion.custom {
                let selection = match (&c.embedding, c.features.is_empty()) {
                    (Some(e), true) => {
                        if schema.embedding_index(e).is_none() {
                            return Err(Error::Config(format!("source {:?}: unknown embedding {e:?}", c.name)));
                        }
                        Selection::Embedding(e.clone())
                    }
                    (None, false) => Selection::Features(
                        c.features
                            .iter()
                            .map(|f| {
                                schema
                                    .feature_index(f)
                                    .ok_or_else(|| Error::Config(format!("source {:?}: unknown feature {f:?}", c.name)))
                            })
                            .collect::<Result<_>>()?,
                    ),
                    _ => {
                        return Err(Error::Config(format!(
                            "source {:?} needs exactly one of `features` or `embedding`",
                            c.name
                        )))
                    }
                };
                let is_text = matches!(selection, Selection::Embedding(_));
                plans.push(SourcePlan {
                    name: c.name.clone(),
                    encoder: c.encoder.unwrap_or(if is_text { fusion.text_encoder } else { fusion.structured_encoder }),
                    aux_weight: c.aux_weight.unwrap_or(if is_text { fusion.text_aux_weight } else { fusion.structured_aux_weight }),
                    selection,
                });
            }
        }
    }
    if plans.is_empty() {
        return Err(Error::Config("the grouping produced no sources".into()));
    }
    if let Some(k) = fusion.sources {
        if k != plans.len() {
            let names: Vec<&str> = plans.iter().map(|p| p.name.as_str()).collect();
            return Err(Error::Config(format!(
                "expected {k} sources but the grouping produced {}: {names:?}",
                plans.len()
            )));
        }
    }
    Ok(plans)
}

/// Binds plans to preprocessed column indices.
pub fn resolve_sources(plans: &[SourcePlan], schema: &Schema, state: &PreprocessState) -> Result<Vec<(SourceSpec, usize)>> {
    plans
        .iter()
        .map(|p| {
            let (input, dim) = match &p.selection {
                Selection::Features(features) => {
                    let cols: Vec<usize> = features.iter().flat_map(|&j| state.feature_columns(j)).collect();
                    if cols.is_empty() {
                        return Err(Error::Data(format!("source {:?} has no usable columns after preprocessing", p.name)));
                    }
                    let dim = cols.len();
                    (SourceInput::Columns(cols), dim)
                }
                Selection::Embedding(name) => {
                    let idx = schema
                        .embedding_index(name)
                        .ok_or_else(|| Error::Data(format!("dataset has no embedding {name:?}")))?;
                    (SourceInput::Embedding(name.clone()), schema.embeddings[idx].dim)
                }
            };
            Ok((
                SourceSpec { name: p.name.clone(), encoder: p.encoder, input, aux_weight: p.aux_weight },
                dim,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("task = \"x\"\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[train]\nlr = 0.1\n").is_err());
    }

    #[test]
    fn ft_transformer_is_rejected_with_a_clear_message() {
        let err = RunConfig::from_toml("[fusion]\nstructured_encoder = \"ft-transformer\"\n").unwrap_err();
        assert!(err.to_string().contains("FT-Transformer"), "{err}");
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut cfg = RunConfig::default();
        cfg.data.synthetic = Some(SyntheticConfig::default());
        let text = toml::to_string(&cfg).unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let other = RunConfig { output_dir: Some("elsewhere".into()), ..cfg.clone() };
        assert_eq!(other.hash(), cfg.hash());
        let seeds = RunConfig { seeds: vec![9], ..cfg.clone() };
        assert_ne!(seeds.hash(), cfg.hash());
    }

    #[test]
    fn groupings() {
        let synth = SyntheticConfig { n: 20, ..SyntheticConfig::default() }.with_blocks(4, 2, 1.0, 1);
        let ds = generate_synthetic(&synth).unwrap();
        let schema = ds.schema();
        let plan = |grouping, sources| {
            plan_sources(&FusionConfig { grouping, sources, ..FusionConfig::default() }, schema)
        };
        assert_eq!(plan(Grouping::Modalities, None).unwrap().len(), 2);
        let types = plan(Grouping::DataTypes, None).unwrap();
        assert_eq!(types.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["numerical", "categorical", "notes"]);
        assert_eq!(plan(Grouping::DataSources, Some(5)).unwrap().len(), 5);
        assert!(matches!(plan(Grouping::DataSources, Some(4)), Err(Error::Config(_))));
        let w: Vec<f64> = plan(Grouping::Modalities, None).unwrap().iter().map(|p| p.aux_weight).collect();
        assert_eq!(w, [2.0, 1.0]);
    }
}
