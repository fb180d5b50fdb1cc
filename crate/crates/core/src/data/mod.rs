//! Datasets, splitting, class weighting, preprocessing and synthetic data.

pub mod io;
pub mod preprocess;
pub mod synthetic;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::belief::Frame;
use crate::error::{Error, Result};
use crate::seed::substream;

pub use preprocess::PreprocessState;
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Fewest samples [`split`] accepts.
pub const MIN_SPLIT_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Origin of the feature, used by the data-sources grouping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub classes: Frame,
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub embeddings: Vec<EmbeddingSpec>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for name in self
            .features
            .iter()
            .map(|f| &f.name)
            .chain(self.embeddings.iter().map(|e| &e.name))
        {
            if matches!(name.as_str(), "id" | "label") {
                return Err(Error::Data(format!("column name {name:?} is reserved")));
            }
            if !names.insert(name) {
                return Err(Error::Data(format!("duplicate column name {name:?}")));
            }
        }
        if let Some(e) = self.embeddings.iter().find(|e| e.dim == 0) {
            return Err(Error::Data(format!("embedding {:?} has dimension 0", e.name)));
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn embedding_index(&self, name: &str) -> Option<usize> {
        self.embeddings.iter().position(|e| e.name == name)
    }
}

/// A raw structured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Num(f64),
    Cat(String),
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    /// One cell per schema feature.
    pub features: Vec<Cell>,
    /// One vector per schema embedding.
    pub embeddings: Vec<Vec<f64>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<Record>) -> Result<Self> {
        schema.validate()?;
        let m = schema.classes.len();
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id {:?}", r.id)));
            }
            if r.label >= m {
                return Err(Error::Data(format!("sample {:?}: label {} outside {m} classes", r.id, r.label)));
            }
            if r.features.len() != schema.features.len() {
                return Err(Error::dims(format!("features of sample {:?}", r.id), schema.features.len(), r.features.len()));
            }
            for (cell, spec) in r.features.iter().zip(&schema.features) {
                match (cell, spec.kind) {
                    (Cell::Num(v), FeatureKind::Numerical) if !v.is_finite() => {
                        return Err(Error::Data(format!("sample {:?}: non-finite {}", r.id, spec.name)));
                    }
                    (Cell::Cat(_), FeatureKind::Numerical) | (Cell::Num(_), FeatureKind::Categorical) => {
                        return Err(Error::Data(format!("sample {:?}: wrong cell type for {}", r.id, spec.name)));
                    }
                    _ => {}
                }
            }
            if r.embeddings.len() != schema.embeddings.len() {
                return Err(Error::dims(format!("embeddings of sample {:?}", r.id), schema.embeddings.len(), r.embeddings.len()));
            }
            for (e, spec) in r.embeddings.iter().zip(&schema.embeddings) {
                if e.len() != spec.dim {
                    return Err(Error::dims(format!("embedding {} of sample {:?}", spec.name, r.id), spec.dim, e.len()));
                }
                if e.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("sample {:?}: non-finite embedding {}", r.id, spec.name)));
                }
            }
        }
        Ok(Dataset { schema, records })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&Record> {
        indices.iter().map(|&i| &self.records[i]).collect()
    }
}

/// Record indices of each partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn part(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Seeded shuffle followed by a 60/20/20 cut.
pub fn split(n: usize, seed: u64) -> Result<Split> {
    if n < MIN_SPLIT_SIZE {
        return Err(Error::Data(format!("need at least {MIN_SPLIT_SIZE} samples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split"));
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Split { train: order, val, test })
}

/// Inverse-frequency weights `N / (M * N_c)`.
pub fn class_weights(labels: &[usize], m: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; m];
    for &y in labels {
        *counts
            .get_mut(y)
            .ok_or_else(|| Error::Data(format!("label {y} outside {m} classes")))? += 1;
    }
    class_weights_from_counts(&counts)
}

pub fn class_weights_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {c} has no samples")));
    }
    let n: usize = counts.iter().sum();
    let m = counts.len();
    Ok(counts.iter().map(|&nc| n as f64 / (m as f64 * nc as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_coverage() {
        let s = split(10, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s, split(10, 1).unwrap());
        let mut all: Vec<usize> = [s.train, s.val, s.test].concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split(9, 1).is_err());
    }

    #[test]
    fn class_weight_examples() {
        assert_eq!(class_weights(&[0, 1, 1, 0], 2).unwrap(), vec![1.0, 1.0]);
        assert!(class_weights(&[0, 0], 2).is_err());
        // negative class first: (N_neg, N_pos)
        let w = class_weights_from_counts(&[33928, 4540]).unwrap();
        assert!((w[1] - 4.2366).abs() < 1e-3 && (w[0] - 0.5669).abs() < 1e-4, "{w:?}");
    }

    #[test]
    fn dataset_validation() {
        let schema = Schema {
            classes: Frame::binary(),
            features: vec![FeatureSpec { name: "a".into(), kind: FeatureKind::Numerical, group: None }],
            embeddings: vec![],
        };
        let rec = |id: &str, label| Record { id: id.into(), features: vec![Cell::Num(1.0)], embeddings: vec![], label };
        assert!(Dataset::new(schema.clone(), vec![rec("x", 0), rec("y", 1)]).is_ok());
        assert!(Dataset::new(schema.clone(), vec![rec("x", 0), rec("x", 1)]).is_err());
        assert!(Dataset::new(schema.clone(), vec![rec("x", 2)]).is_err());
        let bad = Record { features: vec![Cell::Cat("q".into())], ..rec("z", 0) };
        assert!(Dataset::new(schema, vec![bad]).is_err());
    }
}
