//! Parameter container: named flat `f64` arrays stored little-endian in a
//! `.bin` file, described by a JSON manifest carrying shapes, byte offsets,
//! a version tag and free-form metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Tensor;

pub const FORMAT_NAME: &str = "netcast-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint manifest: {0}")]
    Manifest(String),
    #[error("incompatible checkpoint: found {found}, expected {FORMAT_NAME} v{FORMAT_VERSION}")]
    IncompatibleCheckpoint { found: String },
    #[error("checkpoint is missing array `{0}`")]
    MissingArray(String),
    #[error("checkpoint is missing metadata `{0}`")]
    MissingMeta(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ArrayEntry {
    pub shape: Vec<usize>,
    /// Byte offset into the data file.
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    data_file: String,
    arrays: BTreeMap<String, ArrayEntry>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    arrays: BTreeMap<String, Tensor>,
    meta: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.arrays
            .get(name)
            .ok_or_else(|| CheckpointError::MissingArray(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    /// Arrays whose name starts with `section.` (or equals `section`).
    pub fn section<'a>(&'a self, section: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.arrays.iter().filter_map(move |(k, v)| {
            let hit = k == section
                || (k.starts_with(section) && k.as_bytes().get(section.len()) == Some(&b'.'));
            hit.then_some((k.as_str(), v))
        })
    }

    /// Total number of scalars stored under `section`.
    pub fn scalar_count(&self, section: &str) -> usize {
        self.section(section).map(|(_, t)| t.len()).sum()
    }

    pub fn insert_meta<T: Serialize>(&mut self, key: impl Into<String>, value: &T) -> Result<(), CheckpointError> {
        let v = serde_json::to_value(value).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        self.meta.insert(key.into(), v);
        Ok(())
    }

    pub fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T, CheckpointError> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))?;
        serde_json::from_value(v.clone()).map_err(|e| CheckpointError::Manifest(format!("{key}: {e}")))
    }

    /// Writes `<manifest_path>` and its sibling data file (extension `.bin`).
    /// Both files are written to temporaries and renamed into place.
    pub fn save(&self, manifest_path: &Path) -> Result<(), CheckpointError> {
        let data_path = manifest_path.with_extension("bin");
        let data_file = data_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CheckpointError::Manifest("data file name is not UTF-8".into()))?
            .to_string();

        let mut bytes = Vec::new();
        let mut arrays = BTreeMap::new();
        for (name, t) in &self.arrays {
            arrays.insert(
                name.clone(),
                ArrayEntry {
                    shape: t.shape().to_vec(),
                    offset: bytes.len() as u64,
                },
            );
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            data_file,
            arrays,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        write_atomic(&data_path, &bytes)?;
        write_atomic(manifest_path, &json)?;
        Ok(())
    }

    pub fn load(manifest_path: &Path) -> Result<Self, CheckpointError> {
        let raw = fs::read(manifest_path).map_err(|source| CheckpointError::Io {
            path: manifest_path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest =
            serde_json::from_slice(&raw).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        if manifest.format != FORMAT_NAME || manifest.version != FORMAT_VERSION {
            return Err(CheckpointError::IncompatibleCheckpoint {
                found: format!("{} v{}", manifest.format, manifest.version),
            });
        }
        let data_path = manifest_path.with_file_name(&manifest.data_file);
        let bytes = fs::read(&data_path).map_err(|source| CheckpointError::Io {
            path: data_path.clone(),
            source,
        })?;
        let mut arrays = BTreeMap::new();
        for (name, entry) in manifest.arrays {
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 8 * n;
            if end > bytes.len() || start % 8 != 0 {
                return Err(CheckpointError::Manifest(format!("array `{name}` out of bounds")));
            }
            let data: Vec<f64> = bytes[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let t = Tensor::new(entry.shape, data).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
            arrays.insert(name, t);
        }
        Ok(Self {
            arrays,
            meta: manifest.meta,
        })
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}
