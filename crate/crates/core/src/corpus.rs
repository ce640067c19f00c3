//! Baseline corpus ingestion and the content-addressed embedding cache.
//!
//! The baseline is a plain list of {id, text} captions (nuScenes/DriveLM
//! style exports). Embeddings are cached per (model_id, text hash) so
//! re-runs never re-pay provider calls for unchanged text.

use crate::gateway::{embed, Embedder, GatewayError};
use crate::metrics::{EmbeddedDataset, EmbeddedItem, MetricsError};
use crate::sha256_hex;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

pub const CACHE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextCorpus {
    pub name: String,
    pub items: Vec<CorpusItem>,
    pub source_uri: String,
}

impl TextCorpus {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(format!("unknown corpus format `{other}` (jsonl | csv)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Dataset(#[from] MetricsError),
}

fn check_item(
    item: &CorpusItem,
    seen: &mut BTreeSet<String>,
    path: &str,
    line: usize,
) -> Result<(), CorpusError> {
    if item.text.trim().is_empty() {
        return Err(CorpusError::Line {
            path: path.into(),
            line,
            message: format!("item `{}` has blank text", item.id),
        });
    }
    if !seen.insert(item.id.clone()) {
        return Err(CorpusError::Line {
            path: path.into(),
            line,
            message: format!("duplicate id `{}`", item.id),
        });
    }
    Ok(())
}

/// Load a corpus file. Items keep file order; blank texts and duplicate ids
/// are rejected with their line numbers.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<TextCorpus, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;

    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    match format {
        CorpusFormat::Jsonl => {
            for (i, line) in text.lines().enumerate() {
                let line_no = i + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let item: CorpusItem =
                    serde_json::from_str(line).map_err(|e| CorpusError::Line {
                        path: display.clone(),
                        line: line_no,
                        message: e.to_string(),
                    })?;
                check_item(&item, &mut seen, &display, line_no)?;
                items.push(item);
            }
        }
        CorpusFormat::Csv => {
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            for result in reader.deserialize::<CorpusItem>() {
                let item = result.map_err(|e| {
                    let line = e
                        .position()
                        .map(|p| p.line() as usize)
                        .unwrap_or(0);
                    CorpusError::Line { path: display.clone(), line, message: e.to_string() }
                })?;
                // header occupies line 1; records start at line 2
                let line_no = items.len() + 2;
                check_item(&item, &mut seen, &display, line_no)?;
                items.push(item);
            }
        }
    }
    Ok(TextCorpus { name, items, source_uri: display })
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    schema_version: u32,
    kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    model_id: String,
    source_hash: String,
    values: Vec<f64>,
}

/// Embedding store keyed by (model_id, text hash). Backed by a JSON-lines
/// file: a header line, then one entry per line. Loads fully into memory;
/// `flush` rewrites atomically via temp-file-then-rename.
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: IndexMap<(String, String), Vec<f64>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache { path: None, entries: IndexMap::new() }
    }

    /// Open a cache file, creating an empty cache if the file is absent.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref().to_path_buf();
        let display = path.display().to_string();
        let mut cache = EmbeddingCache { path: Some(path.clone()), entries: IndexMap::new() };
        if !path.exists() {
            return Ok(cache);
        }
        let text = std::fs::read_to_string(&path).map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        if let Some((i, header_line)) = lines.next() {
            let header: CacheHeader =
                serde_json::from_str(header_line).map_err(|e| CorpusError::Line {
                    path: display.clone(),
                    line: i + 1,
                    message: format!("bad cache header: {e}"),
                })?;
            if header.schema_version != CACHE_SCHEMA_VERSION || header.kind != "embedding-cache" {
                return Err(CorpusError::Line {
                    path: display.clone(),
                    line: i + 1,
                    message: format!(
                        "unsupported cache header (version {}, kind `{}`)",
                        header.schema_version, header.kind
                    ),
                });
            }
        }
        for (i, line) in lines {
            let entry: CacheEntry = serde_json::from_str(line).map_err(|e| CorpusError::Line {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            cache
                .entries
                .insert((entry.model_id, entry.source_hash), entry.values);
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, model_id: &str, source_hash: &str) -> Option<&Vec<f64>> {
        self.entries
            .get(&(model_id.to_string(), source_hash.to_string()))
    }

    pub fn put(&mut self, model_id: impl Into<String>, source_hash: impl Into<String>, values: Vec<f64>) {
        self.entries.insert((model_id.into(), source_hash.into()), values);
    }

    /// Persist to disk atomically. No-op for in-memory caches.
    pub fn flush(&self) -> Result<(), CorpusError> {
        let Some(path) = &self.path else { return Ok(()) };
        let display = path.display().to_string();
        let mut out = String::new();
        let header = CacheHeader {
            schema_version: CACHE_SCHEMA_VERSION,
            kind: "embedding-cache".into(),
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for ((model_id, source_hash), values) in &self.entries {
            let entry = CacheEntry {
                model_id: model_id.clone(),
                source_hash: source_hash.clone(),
                values: values.clone(),
            };
            out.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
            out.push('\n');
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, out).map_err(|source| CorpusError::Io {
            path: tmp.display().to_string(),
            source,
        })?;
        std::fs::rename(&tmp, path).map_err(|source| CorpusError::Io { path: display, source })
    }
}

/// Embed a corpus, consulting the cache first and updating it afterwards.
/// Provider failures leave the cache untouched on disk.
pub fn get_or_embed(
    corpus: &TextCorpus,
    embedder: &dyn Embedder,
    cache: &mut EmbeddingCache,
) -> Result<EmbeddedDataset, CorpusError> {
    let model_id = embedder.model_id().to_string();
    let hashes: Vec<String> = corpus
        .items
        .iter()
        .map(|i| sha256_hex(i.text.as_bytes()))
        .collect();

    // embed each distinct cold text once
    let mut cold: IndexMap<&str, &str> = IndexMap::new();
    for (item, hash) in corpus.items.iter().zip(&hashes) {
        if cache.get(&model_id, hash).is_none() {
            cold.entry(hash.as_str()).or_insert(item.text.as_str());
        }
    }
    if !cold.is_empty() {
        let texts: Vec<String> = cold.values().map(|t| t.to_string()).collect();
        let vectors = embed(&texts, embedder)?;
        for ((hash, _), vector) in cold.iter().zip(vectors) {
            cache.put(model_id.clone(), *hash, vector.values);
        }
        cache.flush()?;
    }

    let items = corpus
        .items
        .iter()
        .zip(&hashes)
        .map(|(item, hash)| EmbeddedItem {
            id: item.id.clone(),
            text: item.text.clone(),
            vector: cache.get(&model_id, hash).expect("just embedded").clone(),
        })
        .collect();
    Ok(EmbeddedDataset::new(model_id, items)?)
}
