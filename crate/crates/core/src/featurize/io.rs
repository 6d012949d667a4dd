//! Feature files: an 8-byte magic, a little-endian u64 header length, a JSON
//! header describing the data, one byte per label, then the values as
//! little-endian floats (f64 for snapshots, f32 for windows).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, FeatureSet, WindowOrigin, WindowedTensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FPFEAT1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub kind: String,
    pub n: usize,
    pub h: Option<usize>,
    pub m: usize,
    pub feature_set: FeatureSet,
    pub catalog_digest: String,
    pub feature_names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub origins: Option<Vec<WindowOrigin>>,
    pub options: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureFile {
    Snapshot(FeatureMatrix),
    Windowed(WindowedTensor),
}

fn bad(path: &Path, message: impl Into<String>) -> Error {
    Error::Artifact { path: path.display().to_string(), message: message.into() }
}

pub fn write_features(
    path: &Path,
    data: &FeatureFile,
    feature_set: FeatureSet,
    catalog_digest: &str,
    options: BTreeMap<String, String>,
) -> Result<()> {
    let (header, labels, body): (FeatureHeader, &[bool], Vec<u8>) = match data {
        FeatureFile::Snapshot(x) => (
            FeatureHeader {
                kind: "snapshot".into(),
                n: x.n,
                h: None,
                m: x.m,
                feature_set,
                catalog_digest: catalog_digest.into(),
                feature_names: x.feature_names.clone(),
                sample_ids: x.sample_ids.clone(),
                origins: None,
                options,
            },
            &x.labels,
            x.values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        FeatureFile::Windowed(x) => (
            FeatureHeader {
                kind: "windowed".into(),
                n: x.n,
                h: Some(x.h),
                m: x.m,
                feature_set,
                catalog_digest: catalog_digest.into(),
                feature_names: x.feature_names.clone(),
                sample_ids: x.sample_ids.clone(),
                origins: Some(x.origins.clone()),
                options,
            },
            &x.labels,
            x.values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + labels.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend(labels.iter().map(|&l| u8::from(l)));
    out.extend_from_slice(&body);
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<(FeatureHeader, FeatureFile)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad(path, "not a feature file"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    let header: FeatureHeader = serde_json::from_slice(
        bytes.get(16..header_end).ok_or_else(|| bad(path, "truncated header"))?,
    )?;
    let n = header.n;
    let labels_end = header_end + n;
    let labels: Vec<bool> = bytes
        .get(header_end..labels_end)
        .ok_or_else(|| bad(path, "truncated labels"))?
        .iter()
        .map(|&b| b != 0)
        .collect();
    let body = &bytes[labels_end..];
    let data = match (header.kind.as_str(), header.h) {
        ("snapshot", None) => {
            if body.len() != n * header.m * 8 {
                return Err(bad(path, "value block has wrong length"));
            }
            let values = body
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            FeatureFile::Snapshot(FeatureMatrix::new(
                header.m,
                values,
                labels,
                header.feature_names.clone(),
                header.sample_ids.clone(),
            )?)
        }
        ("windowed", Some(h)) => {
            if body.len() != n * h * header.m * 4 {
                return Err(bad(path, "value block has wrong length"));
            }
            let values = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            WindowedTensor {
                n,
                h,
                m: header.m,
                values,
                labels,
                feature_names: header.feature_names.clone(),
                origins: header.origins.clone().ok_or_else(|| bad(path, "missing origins"))?,
                sample_ids: header.sample_ids.clone(),
            }
            .into()
        }
        (kind, _) => return Err(bad(path, format!("unknown feature kind `{kind}`"))),
    };
    Ok((header, data))
}

impl From<WindowedTensor> for FeatureFile {
    fn from(t: WindowedTensor) -> Self {
        FeatureFile::Windowed(t)
    }
}

impl From<FeatureMatrix> for FeatureFile {
    fn from(x: FeatureMatrix) -> Self {
        FeatureFile::Snapshot(x)
    }
}
