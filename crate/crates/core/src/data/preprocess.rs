//! Train-fitted imputation, z-scoring and one-hot encoding.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Cell, FeatureKind, Record, Schema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnState {
    Numerical { name: String, mean: f64, std: f64 },
    Categorical { name: String, mode: String, categories: Vec<String> },
    /// Constant or never observed in training; contributes no columns.
    Dropped { name: String },
}

impl ColumnState {
    pub fn name(&self) -> &str {
        match self {
            ColumnState::Numerical { name, .. }
            | ColumnState::Categorical { name, .. }
            | ColumnState::Dropped { name } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            ColumnState::Numerical { .. } => 1,
            ColumnState::Categorical { categories, .. } => categories.len(),
            ColumnState::Dropped { .. } => 0,
        }
    }
}

/// One entry per schema feature, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub columns: Vec<ColumnState>,
}

/// A categorical value that was not seen during fitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unseen {
    pub id: String,
    pub feature: String,
    pub value: String,
}

impl PreprocessState {
    /// Fits statistics on `train` only.
    pub fn fit(schema: &Schema, train: &[&Record]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit preprocessing on an empty split".into()));
        }
        let columns = schema
            .features
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                let name = spec.name.clone();
                match spec.kind {
                    FeatureKind::Numerical => {
                        let observed: Vec<f64> = train
                            .iter()
                            .filter_map(|r| match r.features[j] {
                                Cell::Num(v) => Some(v),
                                _ => None,
                            })
                            .collect();
                        if observed.is_empty() {
                            log::warn!("dropping numerical feature {name:?}: no observed training values");
                            return ColumnState::Dropped { name };
                        }
                        let n = observed.len() as f64;
                        let mean = observed.iter().sum::<f64>() / n;
                        let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let std = var.sqrt();
                        if !(std > 0.0) {
                            log::warn!("dropping constant numerical feature {name:?}");
                            return ColumnState::Dropped { name };
                        }
                        ColumnState::Numerical { name, mean, std }
                    }
                    FeatureKind::Categorical => {
                        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                        for r in train {
                            if let Cell::Cat(v) = &r.features[j] {
                                *counts.entry(v.as_str()).or_default() += 1;
                            }
                        }
                        // BTreeMap order makes ties resolve to the smallest value.
                        let Some((mode, _)) = counts
                            .iter()
                            .fold(None, |best: Option<(&str, usize)>, (&v, &c)| match best {
                                Some((_, bc)) if bc >= c => best,
                                _ => Some((v, c)),
                            })
                        else {
                            log::warn!("dropping categorical feature {name:?}: no observed training values");
                            return ColumnState::Dropped { name };
                        };
                        ColumnState::Categorical {
                            name,
                            mode: mode.to_string(),
                            categories: counts.keys().map(|s| s.to_string()).collect(),
                        }
                    }
                }
            })
            .collect();
        Ok(PreprocessState { columns })
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(ColumnState::width).sum()
    }

    /// Output columns produced by schema feature `feature`.
    pub fn feature_columns(&self, feature: usize) -> Range<usize> {
        let start: usize = self.columns[..feature].iter().map(ColumnState::width).sum();
        start..start + self.columns[feature].width()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(|c| match c {
                ColumnState::Numerical { name, .. } => vec![name.clone()],
                ColumnState::Categorical { name, categories, .. } => {
                    categories.iter().map(|v| format!("{name}={v}")).collect()
                }
                ColumnState::Dropped { .. } => vec![],
            })
            .collect()
    }

    /// Transforms one record. Unseen categories give an all-zero block and
    /// are returned for logging.
    pub fn apply(&self, record: &Record) -> Result<(Vec<f64>, Vec<Unseen>)> {
        if record.features.len() != self.columns.len() {
            return Err(Error::dims("preprocessed features", self.columns.len(), record.features.len()));
        }
        let mut out = Vec::with_capacity(self.width());
        let mut unseen = Vec::new();
        for (cell, col) in record.features.iter().zip(&self.columns) {
            match col {
                ColumnState::Numerical { name, mean, std } => match cell {
                    Cell::Num(v) => out.push((v - mean) / std),
                    Cell::Missing => out.push(0.0),
                    Cell::Cat(_) => return Err(Error::Data(format!("categorical value in numerical feature {name}"))),
                },
                ColumnState::Categorical { name, mode, categories } => {
                    let value = match cell {
                        Cell::Cat(v) => v.as_str(),
                        Cell::Missing => mode.as_str(),
                        Cell::Num(_) => return Err(Error::Data(format!("numeric value in categorical feature {name}"))),
                    };
                    let hit = categories.binary_search_by(|c| c.as_str().cmp(value)).ok();
                    if hit.is_none() {
                        unseen.push(Unseen {
                            id: record.id.clone(),
                            feature: name.clone(),
                            value: value.to_string(),
                        });
                    }
                    out.extend((0..categories.len()).map(|k| if Some(k) == hit { 1.0 } else { 0.0 }));
                }
                ColumnState::Dropped { .. } => {}
            }
        }
        Ok((out, unseen))
    }

    /// Transforms many records, logging each unseen category.
    pub fn apply_all(&self, records: &[&Record]) -> Result<Vec<Vec<f64>>> {
        records
            .iter()
            .map(|r| {
                let (row, unseen) = self.apply(r)?;
                for u in unseen {
                    log::warn!("sample {:?}: unseen category {:?} for {}", u.id, u.value, u.feature);
                }
                Ok(row)
            })
            .collect()
    }
}
