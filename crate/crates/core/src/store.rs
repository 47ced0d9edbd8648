//! Single-file container for per-layer embeddings and their sample manifest.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0..4     b"LMFE"
//! 4..8     format version (u32)
//! 8..12    header JSON length H (u32)
//! 12..     header JSON (UTF-8, H bytes)
//!          tensor: N * sum(dims) f32, sample-major, layers ascending
//!          manifest JSONL length M (u32)
//!          manifest JSONL (M bytes, one record per line)
//! ```
//!
//! Layers are numbered from 1. Trailing pseudo-layers (for example the
//! projected `after_projection` embedding) are listed by name in the header
//! and excluded from the block-layer count used for windowing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LMFE";
pub const FORMAT_VERSION: u32 = 1;

/// Augmentation tag for JPEG compression at quality 50.
pub const AUG_JPEG50: &str = "jpeg50";
pub const AUG_NONE: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Audio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    ClassToken,
    MeanTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Binary target: fake is the positive class.
    pub fn is_fake(self) -> bool {
        matches!(self, Label::Fake)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    pub fn opposite(self) -> Label {
        match self {
            Label::Real => Label::Fake,
            Label::Fake => Label::Real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    #[serde(skip, default = "default_version")]
    pub version: u32,
    pub backbone_id: String,
    pub modality: Modality,
    pub layer_count: usize,
    pub dims: Vec<usize>,
    pub pooling: Pooling,
    pub sample_count: usize,
    /// Names of trailing layers that are not transformer block outputs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pseudo_layers: Vec<String>,
    /// Free-form extractor metadata (tap point, preprocessing, ...). Not interpreted.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

impl StoreHeader {
    pub fn new(
        backbone_id: impl Into<String>,
        modality: Modality,
        dims: Vec<usize>,
        pooling: Pooling,
        sample_count: usize,
    ) -> Self {
        Self {
            version: FORMAT_VERSION,
            backbone_id: backbone_id.into(),
            modality,
            layer_count: dims.len(),
            dims,
            pooling,
            sample_count,
            pseudo_layers: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        if self.layer_count == 0 {
            return Err(Error::Format("layer_count must be positive".into()));
        }
        if self.dims.len() != self.layer_count {
            return Err(Error::Format(format!(
                "dims has {} entries but layer_count is {}",
                self.dims.len(),
                self.layer_count
            )));
        }
        if let Some(pos) = self.dims.iter().position(|&d| d == 0) {
            return Err(Error::Format(format!("layer {} has zero width", pos + 1)));
        }
        if self.pseudo_layers.len() >= self.layer_count {
            return Err(Error::Format(
                "pseudo_layers must leave at least one block layer".into(),
            ));
        }
        Ok(())
    }

    /// Number of transformer block layers (excludes trailing pseudo-layers).
    pub fn block_layer_count(&self) -> usize {
        self.layer_count - self.pseudo_layers.len()
    }

    pub fn row_width(&self) -> usize {
        self.dims.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub row: usize,
    pub sample_id: String,
    pub label: Label,
    pub source: String,
    pub augmentation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_hint: Option<String>,
}

impl ManifestRecord {
    pub fn new(row: usize, sample_id: impl Into<String>, label: Label, source: impl Into<String>) -> Self {
        Self {
            row,
            sample_id: sample_id.into(),
            label,
            source: source.into(),
            augmentation: AUG_NONE.to_string(),
            split_hint: None,
        }
    }

    pub fn with_augmentation(mut self, tag: impl Into<String>) -> Self {
        self.augmentation = tag.into();
        self
    }
}

/// An immutable, validated set of per-layer embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    header: StoreHeader,
    tensor: Vec<f32>,
    manifest: Vec<ManifestRecord>,
    offsets: Vec<usize>,
}

/// Rows sharing one generator, with the real rows they are compared against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceGroup {
    pub name: String,
    pub rows: Vec<usize>,
}

impl FeatureStore {
    /// Builds a store from a flat sample-major tensor.
    pub fn from_flat(
        mut header: StoreHeader,
        tensor: Vec<f32>,
        mut manifest: Vec<ManifestRecord>,
    ) -> Result<Self> {
        header.validate()?;
        let width = header.row_width();
        let n = header.sample_count;
        if tensor.len() != n * width {
            return Err(Error::Corruption {
                what: "tensor",
                expected: (n * width * 4) as u64,
                actual: (tensor.len() * 4) as u64,
            });
        }
        if manifest.len() != n {
            return Err(Error::Format(format!(
                "manifest has {} records for {n} samples",
                manifest.len()
            )));
        }
        manifest.sort_by_key(|r| r.row);
        for (i, rec) in manifest.iter().enumerate() {
            if rec.row != i {
                return Err(Error::Format(format!(
                    "manifest rows must be unique and < {n}; offending row {}",
                    rec.row
                )));
            }
            if rec.source.is_empty() {
                return Err(Error::Format(format!("row {i} has empty source")));
            }
        }
        if let Some(pos) = tensor.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / width.max(1),
                col: pos % width.max(1),
            });
        }
        let mut offsets = Vec::with_capacity(header.layer_count + 1);
        offsets.push(0);
        for d in &header.dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        header.version = FORMAT_VERSION;
        Ok(Self {
            header,
            tensor,
            manifest,
            offsets,
        })
    }

    /// Builds a store from per-sample, per-layer vectors.
    pub fn from_rows(
        mut header: StoreHeader,
        rows: &[Vec<Vec<f32>>],
        manifest: Vec<ManifestRecord>,
    ) -> Result<Self> {
        header.validate()?;
        if rows.len() != manifest.len() {
            return Err(Error::DimensionMismatch {
                row: rows.len().min(manifest.len()),
                detail: format!("{} rows but {} manifest records", rows.len(), manifest.len()),
            });
        }
        let mut tensor = Vec::with_capacity(rows.len() * header.row_width());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != header.layer_count {
                return Err(Error::DimensionMismatch {
                    row: i,
                    detail: format!("{} layers, expected {}", row.len(), header.layer_count),
                });
            }
            for (l, (layer, &d)) in row.iter().zip(&header.dims).enumerate() {
                if layer.len() != d {
                    return Err(Error::DimensionMismatch {
                        row: i,
                        detail: format!("layer {} has width {}, expected {d}", l + 1, layer.len()),
                    });
                }
                tensor.extend_from_slice(layer);
            }
        }
        header.sample_count = rows.len();
        Self::from_flat(header, tensor, manifest)
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn manifest(&self) -> &[ManifestRecord] {
        &self.manifest
    }

    pub fn tensor(&self) -> &[f32] {
        &self.tensor
    }

    pub fn len(&self) -> usize {
        self.header.sample_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layer_count(&self) -> usize {
        self.header.layer_count
    }

    pub fn dims(&self) -> &[usize] {
        &self.header.dims
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.header.row_width();
        &self.tensor[i * w..(i + 1) * w]
    }

    /// Embedding of sample `i` at 1-based `layer`.
    pub fn layer(&self, i: usize, layer: usize) -> &[f32] {
        let row = self.row(i);
        &row[self.offsets[layer - 1]..self.offsets[layer]]
    }

    pub fn labels(&self) -> Vec<Label> {
        self.manifest.iter().map(|r| r.label).collect()
    }

    /// Concatenates the selected 1-based layers (strictly ascending) into an
    /// `N x sum(selected dims)` matrix.
    pub fn slice_layers(&self, layers: &[usize]) -> Result<Array2<f64>> {
        self.slice_rows_layers(&(0..self.len()).collect::<Vec<_>>(), layers)
    }

    /// Like [`slice_layers`](Self::slice_layers) restricted to `rows`, in the given order.
    pub fn slice_rows_layers(&self, rows: &[usize], layers: &[usize]) -> Result<Array2<f64>> {
        self.check_layers(layers)?;
        let width: usize = layers.iter().map(|&l| self.header.dims[l - 1]).sum();
        let mut out = Array2::<f64>::zeros((rows.len(), width));
        for (r, &src) in rows.iter().enumerate() {
            if src >= self.len() {
                return Err(Error::invalid(format!("row {src} out of range")));
            }
            let mut col = 0;
            let mut dst = out.row_mut(r);
            for &l in layers {
                for &v in self.layer(src, l) {
                    dst[col] = f64::from(v);
                    col += 1;
                }
            }
        }
        Ok(out)
    }

    fn check_layers(&self, layers: &[usize]) -> Result<()> {
        for &l in layers {
            if l == 0 || l > self.layer_count() {
                return Err(Error::LayerOutOfRange {
                    layer: l,
                    layer_count: self.layer_count(),
                });
            }
        }
        if layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("layer indices must be strictly ascending"));
        }
        Ok(())
    }

    /// Ascending row indices whose manifest record satisfies `pred`.
    pub fn filter_manifest<F>(&self, pred: F) -> Vec<usize>
    where
        F: Fn(&ManifestRecord) -> bool,
    {
        self.manifest
            .iter()
            .filter(|r| pred(r))
            .map(|r| r.row)
            .collect()
    }

    /// New store holding `rows` (in order), renumbered from 0.
    pub fn subset(&self, rows: &[usize]) -> Result<FeatureStore> {
        let w = self.header.row_width();
        let mut tensor = Vec::with_capacity(rows.len() * w);
        let mut manifest = Vec::with_capacity(rows.len());
        for (i, &r) in rows.iter().enumerate() {
            if r >= self.len() {
                return Err(Error::invalid(format!("row {r} out of range")));
            }
            tensor.extend_from_slice(self.row(r));
            let mut rec = self.manifest[r].clone();
            rec.row = i;
            manifest.push(rec);
        }
        let mut header = self.header.clone();
        header.sample_count = rows.len();
        FeatureStore::from_flat(header, tensor, manifest)
    }

    /// Stacks stores with identical layer geometry. The first header wins.
    pub fn concat(stores: &[FeatureStore]) -> Result<FeatureStore> {
        let first = stores
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut tensor = Vec::new();
        let mut manifest = Vec::new();
        for s in stores {
            if s.dims() != first.dims() {
                return Err(Error::Format(format!(
                    "incompatible layer dims: {:?} vs {:?}",
                    s.dims(),
                    first.dims()
                )));
            }
            let base = manifest.len();
            tensor.extend_from_slice(&s.tensor);
            manifest.extend(s.manifest.iter().cloned().map(|mut r| {
                r.row += base;
                r
            }));
        }
        let mut header = first.header.clone();
        header.sample_count = manifest.len();
        FeatureStore::from_flat(header, tensor, manifest)
    }

    /// Groups rows by generator for per-source evaluation.
    ///
    /// Every source that has fake rows forms a group. A group without real
    /// rows of its own borrows the real rows of sources that contain no
    /// fakes (e.g. a shared `lsun-real` pool). Sources holding only real rows
    /// form groups only when the store has no fake rows at all.
    pub fn source_groups(&self) -> Vec<SourceGroup> {
        let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for rec in &self.manifest {
            by_source.entry(rec.source.as_str()).or_default().push(rec.row);
        }
        let has_fake = |rows: &[usize]| rows.iter().any(|&r| self.manifest[r].label.is_fake());
        let shared_real: Vec<usize> = by_source
            .values()
            .filter(|rows| !has_fake(rows))
            .flatten()
            .copied()
            .collect();
        let fake_sources: Vec<_> = by_source.iter().filter(|(_, rows)| has_fake(rows)).collect();
        if fake_sources.is_empty() {
            return by_source
                .into_iter()
                .map(|(name, rows)| SourceGroup {
                    name: name.to_string(),
                    rows,
                })
                .collect();
        }
        fake_sources
            .into_iter()
            .map(|(name, rows)| {
                let own_real = rows.iter().any(|&r| !self.manifest[r].label.is_fake());
                let mut rows = rows.clone();
                if !own_real {
                    rows.extend_from_slice(&shared_real);
                    rows.sort_unstable();
                }
                SourceGroup {
                    name: name.to_string(),
                    rows,
                }
            })
            .collect()
    }

    /// Distinct source names in sorted order.
    pub fn sources(&self) -> Vec<String> {
        self.manifest
            .iter()
            .map(|r| r.source.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header_json = serde_json::to_vec(&self.header)
            .map_err(|e| Error::Format(format!("header encode: {e}")))?;
        let mut manifest = Vec::new();
        for rec in &self.manifest {
            serde_json::to_writer(&mut manifest, rec)
                .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
            manifest.push(b'\n');
        }
        let mut out =
            Vec::with_capacity(16 + header_json.len() + self.tensor.len() * 4 + manifest.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&block_len(header_json.len())?.to_le_bytes());
        out.extend_from_slice(&header_json);
        for v in &self.tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&block_len(manifest.len())?.to_le_bytes());
        out.extend_from_slice(&manifest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureStore> {
        if bytes.len() < 12 {
            return Err(Error::Format(format!(
                "file too short for preamble ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"LMFE\"",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let version = read_u32(bytes, 4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = read_u32(bytes, 8) as usize;
        let header_end = 12 + header_len;
        if bytes.len() < header_end {
            return Err(Error::Corruption {
                what: "header",
                expected: header_len as u64,
                actual: (bytes.len() - 12) as u64,
            });
        }
        let mut header: StoreHeader = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::Format(format!("header decode: {e}")))?;
        header.version = version;
        header.validate()?;

        let n_floats = header.sample_count * header.row_width();
        let tensor_bytes = n_floats * 4;
        let available = bytes.len() - header_end;
        // The manifest length prefix must follow the tensor.
        if available < tensor_bytes + 4 {
            return Err(Error::Corruption {
                what: "tensor and manifest length",
                expected: (tensor_bytes + 4) as u64,
                actual: available as u64,
            });
        }
        let tensor_end = header_end + tensor_bytes;
        let tensor: Vec<f32> = bytes[header_end..tensor_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let manifest_len = read_u32(bytes, tensor_end) as usize;
        let manifest_start = tensor_end + 4;
        let manifest_avail = bytes.len() - manifest_start;
        if manifest_avail != manifest_len {
            return Err(Error::Corruption {
                what: "manifest",
                expected: manifest_len as u64,
                actual: manifest_avail as u64,
            });
        }
        let text = std::str::from_utf8(&bytes[manifest_start..])
            .map_err(|e| Error::Format(format!("manifest is not UTF-8: {e}")))?;
        let manifest = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str::<ManifestRecord>(l)
                    .map_err(|e| Error::Format(format!("manifest record decode: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureStore::from_flat(header, tensor, manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<FeatureStore> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        FeatureStore::from_bytes(&bytes)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn block_len(len: usize) -> Result<u32> {
    u32::try_from(len).map_err(|_| Error::Format(format!("block of {len} bytes exceeds u32")))
}

/// Validates `rows` against `header`, then writes the store to `path`.
pub fn write_store(
    path: impl AsRef<Path>,
    header: StoreHeader,
    rows: &[Vec<Vec<f32>>],
    manifest: Vec<ManifestRecord>,
) -> Result<FeatureStore> {
    let store = FeatureStore::from_rows(header, rows, manifest)?;
    store.write(path)?;
    Ok(store)
}

pub fn read_store(path: impl AsRef<Path>) -> Result<FeatureStore> {
    FeatureStore::read(path)
}
