//! On-disk dataset format: a JSON manifest, a structured CSV and one JSONL
//! file per embedding.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Cell, Dataset, FeatureKind, FeatureSpec, Record, Schema, SyntheticConfig};
use crate::belief::Frame;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingFile {
    pub name: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub schema: Schema,
    pub data: String,
    #[serde(default)]
    pub embeddings: Vec<EmbeddingFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    embedding: Vec<f64>,
}

/// A dataset with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub manifest: Option<Manifest>,
    /// SHA-256 over every input file, hex encoded.
    pub hash: String,
}

pub fn embedding_file_name(name: &str) -> String {
    format!("embeddings_{name}.jsonl")
}

fn label_text(frame: &Frame, label: usize) -> &str {
    &frame.labels()[label]
}

fn parse_label(frame: &Frame, text: &str, line: usize) -> Result<usize> {
    if let Some(i) = frame.labels().iter().position(|l| l == text) {
        return Ok(i);
    }
    match text.parse::<usize>() {
        Ok(i) if i < frame.len() => Ok(i),
        _ => Err(Error::Data(format!("row {line}: unknown label {text:?}"))),
    }
}

/// Writes `dir/manifest.json`, `dir/data.csv` and the embedding files.
pub fn write_dataset(dir: &Path, dataset: &Dataset, generator: Option<&SyntheticConfig>) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let schema = dataset.schema();
    let mut writer = csv::Writer::from_path(dir.join(DATA_FILE))?;
    let mut header: Vec<&str> = schema.features.iter().map(|f| f.name.as_str()).collect();
    header.extend(["label", "id"]);
    writer.write_record(&header)?;
    for r in dataset.records() {
        let mut row: Vec<String> = r
            .features
            .iter()
            .map(|c| match c {
                Cell::Num(v) => v.to_string(),
                Cell::Cat(s) => s.clone(),
                Cell::Missing => String::new(),
            })
            .collect();
        row.push(label_text(&schema.classes, r.label).to_string());
        row.push(r.id.clone());
        writer.write_record(&row)?;
    }
    writer.flush()?;

    let mut embeddings = Vec::new();
    for (k, spec) in schema.embeddings.iter().enumerate() {
        let file = embedding_file_name(&spec.name);
        let mut out = BufWriter::new(File::create(dir.join(&file))?);
        for r in dataset.records() {
            let line = EmbeddingLine { id: r.id.clone(), embedding: r.embeddings[k].clone() };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        embeddings.push(EmbeddingFile { name: spec.name.clone(), file });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        schema: schema.clone(),
        data: DATA_FILE.into(),
        embeddings,
        generator: generator.cloned(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

/// Loads a dataset from a manifest, a directory holding one, or a bare CSV
/// whose schema is inferred.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    if !manifest_path.exists() {
        return Err(Error::Data(format!("{} does not exist", manifest_path.display())));
    }
    if manifest_path.extension().is_some_and(|e| e == "csv") {
        let schema = infer_schema(&manifest_path)?;
        let records = read_csv(&manifest_path, &schema)?;
        let hash = hash_files(std::slice::from_ref(&manifest_path))?;
        return Ok(LoadedDataset { dataset: Dataset::new(schema, records)?, manifest: None, hash });
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)
        .map_err(|e| Error::Data(format!("invalid manifest {}: {e}", manifest_path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Data(format!("unsupported manifest version {}", manifest.version)));
    }
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let data_path = dir.join(&manifest.data);
    let mut records = read_csv(&data_path, &manifest.schema)?;
    let mut files = vec![manifest_path.clone(), data_path];
    for spec in &manifest.schema.embeddings {
        let entry = manifest
            .embeddings
            .iter()
            .find(|e| e.name == spec.name)
            .ok_or_else(|| Error::Data(format!("manifest lists no file for embedding {:?}", spec.name)))?;
        let path = dir.join(&entry.file);
        let mut vectors = read_embeddings(&path, spec.dim)?;
        for r in &mut records {
            let v = vectors
                .remove(&r.id)
                .ok_or_else(|| Error::Data(format!("sample {:?} has no {} embedding", r.id, spec.name)))?;
            r.embeddings.push(v);
        }
        files.push(path);
    }
    let hash = hash_files(&files)?;
    Ok(LoadedDataset { dataset: Dataset::new(manifest.schema.clone(), records)?, manifest: Some(manifest), hash })
}

fn read_csv(path: &Path, schema: &Schema) -> Result<Vec<Record>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column {name:?}", path.display())))
    };
    let feature_cols = schema.features.iter().map(|f| column(&f.name)).collect::<Result<Vec<_>>>()?;
    let label_col = column("label")?;
    let id_col = column("id")?;
    if header.len() != feature_cols.len() + 2 {
        return Err(Error::Data(format!("{}: header has columns the schema does not cover", path.display())));
    }
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let line = line + 2;
        let features = schema
            .features
            .iter()
            .zip(&feature_cols)
            .map(|(spec, &c)| {
                let text = row[c].trim();
                if text.is_empty() {
                    return Ok(Cell::Missing);
                }
                Ok(match spec.kind {
                    FeatureKind::Numerical => Cell::Num(text.parse().map_err(|_| {
                        Error::Data(format!("row {line}: {:?} is not a number ({})", text, spec.name))
                    })?),
                    FeatureKind::Categorical => Cell::Cat(text.to_string()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(Record {
            id: row[id_col].to_string(),
            features,
            embeddings: Vec::new(),
            label: parse_label(&schema.classes, row[label_col].trim(), line)?,
        });
    }
    Ok(records)
}

/// Numerical when every non-empty cell parses as a number; labels sorted.
fn infer_schema(path: &Path) -> Result<Schema> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let label_col = header
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Data(format!("{}: missing column \"label\"", path.display())))?;
    let mut numeric = vec![true; header.len()];
    let mut labels = BTreeSet::new();
    for row in reader.records() {
        let row = row?;
        for (j, cell) in row.iter().enumerate() {
            let cell = cell.trim();
            if !cell.is_empty() && cell.parse::<f64>().is_err() {
                numeric[j] = false;
            }
        }
        labels.insert(row[label_col].trim().to_string());
    }
    let mut labels: Vec<String> = labels.into_iter().collect();
    if labels.iter().all(|l| l.parse::<u64>().is_ok()) {
        labels.sort_by_key(|l| l.parse::<u64>().expect("checked above"));
    }
    let features = header
        .iter()
        .enumerate()
        .filter(|(_, h)| !matches!(*h, "label" | "id"))
        .map(|(j, h)| FeatureSpec {
            name: h.to_string(),
            kind: if numeric[j] { FeatureKind::Numerical } else { FeatureKind::Categorical },
            group: None,
        })
        .collect();
    Ok(Schema { classes: Frame::new(labels)?, features, embeddings: Vec::new() })
}

fn read_embeddings(path: &Path, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingLine = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if rec.embedding.len() != dim {
            return Err(Error::dims(format!("embedding of {:?} in {}", rec.id, path.display()), dim, rec.embedding.len()));
        }
        if out.insert(rec.id.clone(), rec.embedding).is_some() {
            return Err(Error::Data(format!("{}: duplicate id {:?}", path.display(), rec.id)));
        }
    }
    Ok(out)
}

/// Hex SHA-256 over the byte contents of `files`, in order.
pub fn hash_files(files: &[PathBuf]) -> Result<String> {
    let mut hasher = Sha256::new();
    for f in files {
        let bytes = fs::read(f)?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}
