//! On-disk dataset layout: a JSON manifest plus a flat little-endian `f32`
//! tensor file holding every image, concatenated in id order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::{image_shape, Dataset, SampleRecord, IMAGE_NUMEL};
use super::schema::AttributeSchema;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: usize,
    pub label: usize,
    pub attrs: BTreeMap<String, String>,
    /// Byte offset of the image in the tensor file.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: AttributeSchema,
    pub classes: usize,
    pub image_shape: Vec<usize>,
    pub tensor_file: String,
    pub samples: Vec<ManifestSample>,
}

const IMAGE_BYTES: u64 = (IMAGE_NUMEL * 4) as u64;

impl DatasetManifest {
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let manifest: Self = serde_json::from_slice(bytes)?;
        // Re-validate the schema invariants that serde cannot express.
        AttributeSchema::new(manifest.schema.attributes().to_vec())?;
        if manifest.image_shape != image_shape() {
            return Err(Error::format("dataset manifest", format!("unsupported image shape {:?}", manifest.image_shape)));
        }
        Ok(manifest)
    }

    /// Rebuilds the dataset from this manifest and the raw tensor file bytes.
    pub fn decode(&self, tensor_bytes: &[u8]) -> Result<Dataset> {
        if self.classes < 2 {
            return Err(Error::format("dataset manifest", "fewer than 2 classes"));
        }
        let schema = &self.schema;
        let mut samples = Vec::with_capacity(self.samples.len());
        for (pos, s) in self.samples.iter().enumerate() {
            if s.id != pos {
                return Err(Error::format("dataset manifest", format!("sample {pos} has id {}", s.id)));
            }
            if s.label >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: self.classes,
                });
            }
            if s.offset != pos as u64 * IMAGE_BYTES {
                return Err(Error::format("dataset manifest", format!("sample {pos} has offset {}", s.offset)));
            }
            if s.attrs.len() != schema.len() {
                return Err(Error::format("dataset manifest", format!("sample {pos} has {} attrs", s.attrs.len())));
            }
            let attrs = schema
                .attributes()
                .iter()
                .enumerate()
                .map(|(a, attr)| {
                    let v = s.attrs.get(&attr.name).ok_or_else(|| {
                        Error::format("dataset manifest", format!("sample {pos} lacks {:?}", attr.name))
                    })?;
                    schema.value_index(a, v)
                })
                .collect::<Result<Vec<_>>>()?;
            let start = s.offset as usize;
            let raw = tensor_bytes
                .get(start..start + IMAGE_BYTES as usize)
                .ok_or_else(|| Error::format("tensor file", format!("truncated at sample {pos}")))?;
            let pixels: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if pixels.iter().any(|p| !p.is_finite()) {
                return Err(Error::format("tensor file", format!("non-finite pixel in sample {pos}")));
            }
            samples.push(SampleRecord {
                id: pos,
                image: Tensor::new(image_shape(), pixels)?,
                label: s.label,
                attrs,
            });
        }
        if tensor_bytes.len() as u64 != self.samples.len() as u64 * IMAGE_BYTES {
            return Err(Error::format("tensor file", "length does not match sample count"));
        }
        Ok(Dataset {
            schema: schema.clone(),
            classes: self.classes,
            samples,
        })
    }
}

/// Writes `<dir>/<name>.json` and `<dir>/<name>.f32`; returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensor_file = format!("{name}.f32");
    let mut blob = Vec::with_capacity(dataset.len() * IMAGE_BYTES as usize);
    let samples = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(pos, s)| {
            blob.extend(s.image.data().iter().flat_map(|p| p.to_le_bytes()));
            ManifestSample {
                id: pos,
                label: s.label,
                attrs: dataset
                    .schema
                    .attributes()
                    .iter()
                    .zip(&s.attrs)
                    .map(|(a, &v)| (a.name.clone(), a.values[v].clone()))
                    .collect(),
                offset: pos as u64 * IMAGE_BYTES,
            }
        })
        .collect();
    let manifest = DatasetManifest {
        schema: dataset.schema.clone(),
        classes: dataset.classes,
        image_shape: image_shape(),
        tensor_file: tensor_file.clone(),
        samples,
    };
    let tensor_path = dir.join(&tensor_file);
    fs::write(&tensor_path, blob).map_err(|e| Error::io(&tensor_path, e))?;
    let manifest_path = dir.join(format!("{name}.json"));
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

pub fn read_dataset(manifest_path: &Path) -> Result<Dataset> {
    let bytes = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = DatasetManifest::from_json_bytes(&bytes)?;
    if manifest.tensor_file.contains(['/', '\\']) || manifest.tensor_file.starts_with("..") {
        return Err(Error::format("dataset manifest", "tensor_file must be a bare file name"));
    }
    let tensor_path = manifest_path.with_file_name(&manifest.tensor_file);
    let blob = fs::read(&tensor_path).map_err(|e| Error::io(&tensor_path, e))?;
    manifest.decode(&blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{generate_dataset, DatasetConfig};

    #[test]
    fn round_trip_is_exact() {
        let data = generate_dataset(
            &AttributeSchema::driving(),
            &DatasetConfig {
                classes: 4,
                per_domain: 2,
                overrides: Vec::new(),
                seed: 3,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(&data, dir.path(), "train").unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
    }

    #[test]
    fn truncated_tensor_file_is_rejected() {
        let data = generate_dataset(
            &AttributeSchema::driving(),
            &DatasetConfig {
                classes: 4,
                per_domain: 1,
                overrides: Vec::new(),
                seed: 3,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(&data, dir.path(), "d").unwrap();
        let manifest = DatasetManifest::from_json_bytes(&fs::read(&path).unwrap()).unwrap();
        let blob = fs::read(dir.path().join("d.f32")).unwrap();
        assert!(manifest.decode(&blob[..blob.len() - 4]).is_err());
        assert!(DatasetManifest::from_json_bytes(b"{\"schema\":1}").is_err());
    }
}
