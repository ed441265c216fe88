//! Parameter files: a flat little-endian `f64` blob plus a JSON manifest of
//! tensor names, shapes and offsets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Parameters;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset into the blob, in values.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeManifest {
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

const DTYPE: &str = "f64-le";

/// `stage1.bin` → `stage1.shapes.json`.
pub fn shapes_path(bin: &Path) -> PathBuf {
    bin.with_extension("shapes.json")
}

pub fn save_params<M: Parameters + ?Sized>(model: &M, bin: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, m) in model.named_params() {
        tensors.push(TensorEntry {
            name,
            rows: m.rows(),
            cols: m.cols(),
            offset,
        });
        offset += m.data().len();
        for v in m.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(bin, bytes)?;
    let manifest = ShapeManifest {
        dtype: DTYPE.into(),
        tensors,
    };
    std::fs::write(shapes_path(bin), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads values into a model of the same architecture; names and shapes must match.
pub fn load_params<M: Parameters + ?Sized>(model: &mut M, bin: &Path) -> Result<()> {
    let manifest: ShapeManifest = serde_json::from_str(&std::fs::read_to_string(shapes_path(bin))?)?;
    if manifest.dtype != DTYPE {
        return Err(Error::schema("dtype", format!("expected {DTYPE}, found {}", manifest.dtype)));
    }
    let bytes = std::fs::read(bin)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::schema("blob", format!("{} bytes is not a whole number of f64", bytes.len())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect();
    let expected: Vec<(String, usize, usize)> = model
        .named_params()
        .into_iter()
        .map(|(n, m)| (n, m.rows(), m.cols()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::schema(
            "tensors",
            format!("model has {} tensors, file has {}", expected.len(), manifest.tensors.len()),
        ));
    }
    for ((name, rows, cols), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name || *rows != entry.rows || *cols != entry.cols {
            return Err(Error::schema(
                format!("tensors.{}", entry.name),
                format!("file has {}x{}, model expects {name} {rows}x{cols}", entry.rows, entry.cols),
            ));
        }
        if entry.offset + rows * cols > values.len() {
            return Err(Error::schema(format!("tensors.{name}"), "extends past the end of the blob"));
        }
    }
    for (param, entry) in model.params_mut().into_iter().zip(&manifest.tensors) {
        let n = entry.rows * entry.cols;
        param.data_mut().copy_from_slice(&values[entry.offset..entry.offset + n]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage1::Stage1Model;
    use crate::stage2::Stage2Model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("stage1.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let saved = Stage1Model::new(7, 4, 3, 0.2, &mut rng).unwrap();
        save_params(&saved, &bin).unwrap();
        assert!(dir.path().join("stage1.shapes.json").is_file());
        let mut loaded = Stage1Model::new(7, 4, 3, 0.2, &mut rng).unwrap();
        assert_ne!(loaded, saved);
        load_params(&mut loaded, &bin).unwrap();
        assert_eq!(loaded, saved);
    }

    #[test]
    fn architecture_mismatch_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("stage2.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        save_params(&Stage2Model::new(5, 4, 4, 3, 0.2, &mut rng).unwrap(), &bin).unwrap();
        let mut other = Stage2Model::new(5, 4, 8, 3, 0.2, &mut rng).unwrap();
        assert!(matches!(load_params(&mut other, &bin), Err(Error::Schema { .. })));
    }

    #[test]
    fn names_and_mutable_views_line_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Stage1Model::new(6, 3, 2, 0.2, &mut rng).unwrap();
        let shapes: Vec<_> = m.named_params().iter().map(|(_, p)| p.shape()).collect();
        let mut_shapes: Vec<_> = m.params_mut().iter().map(|p| p.shape()).collect();
        assert_eq!(shapes, mut_shapes);
    }
}
