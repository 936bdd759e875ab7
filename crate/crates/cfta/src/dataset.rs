//! Dataset manifests: a JSON file naming the feature, prototype and label
//! files of one evaluation set.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cfta_core::{AdaptError, FeatureVector, PrototypeSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::format::{self, EmbeddingFile, FormatError, LabelFile, UNLABELED};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Paths are relative to the manifest's directory unless absolute.
    pub features: PathBuf,
    pub prototypes: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{}: invalid manifest: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{what} mismatch: {} has {left_value}, {} has {right_value}", left.display(), right.display())]
    DimensionMismatch {
        what: &'static str,
        left: PathBuf,
        left_value: usize,
        right: PathBuf,
        right_value: usize,
    },
    #[error("class_names lists {found} names for {expected} prototypes")]
    ClassNames { expected: usize, found: usize },
    #[error("tau must be positive and finite, got {0}")]
    InvalidTau(f64),
    #[error("{}: {source}", path.display())]
    Prototypes {
        path: PathBuf,
        #[source]
        source: AdaptError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// A loaded, cross-checked evaluation set.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: Vec<FeatureVector>,
    pub prototypes: PrototypeSet,
    /// One entry per feature row; `-1` marks unlabeled rows.
    pub labels: Option<Vec<i32>>,
    pub tau: Option<f64>,
    /// Hex SHA-256 of the feature payload (little-endian f32, row-major).
    pub sha256: String,
}

impl Dataset {
    /// Builds a dataset from in-memory parts. The digest covers the features
    /// as they would be stored in an ADPT file.
    pub fn from_parts(
        features: Vec<FeatureVector>,
        prototypes: PrototypeSet,
        labels: Option<Vec<i32>>,
        tau: Option<f64>,
    ) -> Self {
        let rows: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
        let payload = EmbeddingFile::from_rows(&rows, true)
            .expect("features are finite and share one dimension")
            .payload_bytes();
        Self { features, prototypes, labels, tau, sha256: digest(&payload) }
    }

    pub fn n_samples(&self) -> usize {
        self.features.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.num_classes()
    }
}

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => DatasetError::MissingFile(path.to_path_buf()),
        _ => DatasetError::Io { path: path.to_path_buf(), source: e },
    })
}

fn format_err(path: &Path) -> impl FnOnce(FormatError) -> DatasetError + '_ {
    move |source| DatasetError::Format { path: path.to_path_buf(), source }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, DatasetError> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| DatasetError::Json { path: path.to_path_buf(), source })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    load_from_manifest(&manifest, base)
}

pub fn load_from_manifest(m: &Manifest, base: &Path) -> Result<Dataset, DatasetError> {
    let feat_path = resolve(base, &m.features);
    let proto_path = resolve(base, &m.prototypes);
    let feat_bytes = read_bytes(&feat_path)?;
    let proto_bytes = read_bytes(&proto_path)?;

    let feat_file = EmbeddingFile::decode(&feat_bytes).map_err(format_err(&feat_path))?;
    let proto_file = EmbeddingFile::decode(&proto_bytes).map_err(format_err(&proto_path))?;
    if feat_file.dim != proto_file.dim {
        return Err(DatasetError::DimensionMismatch {
            what: "dimension",
            left: feat_path,
            left_value: feat_file.dim,
            right: proto_path,
            right_value: proto_file.dim,
        });
    }

    let features = feat_file.to_features().map_err(format_err(&feat_path))?;
    let protos = proto_file.to_features().map_err(format_err(&proto_path))?;
    let mut prototypes = PrototypeSet::new(protos)
        .map_err(|source| DatasetError::Prototypes { path: proto_path.clone(), source })?;
    if let Some(names) = &m.class_names {
        if names.len() != prototypes.num_classes() {
            return Err(DatasetError::ClassNames { expected: prototypes.num_classes(), found: names.len() });
        }
        prototypes = prototypes
            .with_class_names(names.clone())
            .map_err(|source| DatasetError::Prototypes { path: proto_path.clone(), source })?;
    }

    let labels = match &m.labels {
        None => None,
        Some(p) => {
            let label_path = resolve(base, p);
            let file = LabelFile::decode(&read_bytes(&label_path)?).map_err(format_err(&label_path))?;
            if file.labels.len() != features.len() {
                return Err(DatasetError::DimensionMismatch {
                    what: "row count",
                    left: feat_path,
                    left_value: features.len(),
                    right: label_path,
                    right_value: file.labels.len(),
                });
            }
            file.check_classes(prototypes.num_classes()).map_err(format_err(&label_path))?;
            Some(file.labels)
        }
    };

    if let Some(t) = m.tau {
        if !(t.is_finite() && t > 0.0) {
            return Err(DatasetError::InvalidTau(t));
        }
    }

    Ok(Dataset {
        features,
        prototypes,
        labels,
        tau: m.tau,
        sha256: digest(&feat_file.payload_bytes()),
    })
}

/// Writes features, prototypes, optional labels and a manifest into `dir`
/// using the default file names. Returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    features: &[FeatureVector],
    prototypes: &PrototypeSet,
    labels: Option<&[i32]>,
    tau: Option<f64>,
) -> Result<PathBuf, DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.to_path_buf(), source })?;
    let write_rows = |name: &str, rows: Vec<&[f64]>| -> Result<(), DatasetError> {
        let path = dir.join(name);
        let file = EmbeddingFile::from_rows(&rows, true).map_err(format_err(&path))?;
        format::write_embeddings(&path, &file).map_err(format_err(&path))
    };
    write_rows("features.adpt", features.iter().map(|f| f.as_slice()).collect())?;
    write_rows("prototypes.adpt", prototypes.iter().map(|p| p.as_slice()).collect())?;
    if let Some(l) = labels {
        let path = dir.join("labels.adpl");
        debug_assert!(l.iter().all(|&v| v >= UNLABELED));
        format::write_labels(&path, &LabelFile { labels: l.to_vec() }).map_err(format_err(&path))?;
    }
    let manifest = Manifest {
        features: "features.adpt".into(),
        prototypes: "prototypes.adpt".into(),
        labels: labels.map(|_| "labels.adpl".into()),
        class_names: prototypes.class_names().map(<[String]>::to_vec),
        tau,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
    Ok(path)
}
