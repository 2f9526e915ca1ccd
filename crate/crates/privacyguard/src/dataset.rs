//! Labeled datasets: a collection of scene graphs with a train/val split,
//! stored on disk as one JSON file per graph plus a manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, HeteroSceneGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One graph of a dataset together with its file name and split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub name: String,
    pub split: Split,
    pub graph: HeteroSceneGraph,
}

/// In-memory dataset. Entry order is the manifest order and is part of the
/// deterministic contracts downstream (augmentation, training shuffles).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub entries: Vec<DatasetEntry>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("graph {name}: {source}")]
    Graph { name: String, source: GraphError },
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    graphs: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    split: Split,
}

const MANIFEST_NAME: &str = "manifest.json";

impl LabeledDataset {
    pub fn iter_split(&self, split: Split) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Load a dataset directory (graph files + `manifest.json`).
    pub fn load(dir: &Path) -> Result<LabeledDataset, DatasetError> {
        let manifest_path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&manifest_path).map_err(|source| DatasetError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut entries = Vec::with_capacity(manifest.graphs.len());
        for m in manifest.graphs {
            let path = dir.join(&m.file);
            let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let graph = HeteroSceneGraph::parse(&text).map_err(|source| DatasetError::Graph {
                name: m.file.clone(),
                source,
            })?;
            entries.push(DatasetEntry {
                name: m.file,
                split: m.split,
                graph,
            });
        }
        Ok(LabeledDataset { entries })
    }

    /// Write the dataset to `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for e in &self.entries {
            let path = dir.join(&e.name);
            write_file(&path, e.graph.serialize().as_bytes())?;
        }
        let manifest = Manifest {
            format_version: 1,
            graphs: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    file: e.name.clone(),
                    split: e.split,
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
        write_file(&dir.join(MANIFEST_NAME), text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let mut f = fs::File::create(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}
