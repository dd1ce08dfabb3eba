//! Checkpoint weight files: parsing, tensor decode, and layout discovery.
//!
//! Single-file layout: an 8-byte little-endian header length, a JSON header
//! mapping tensor name to `{dtype, shape, data_offsets}`, then a contiguous
//! data region. Offsets are relative to the start of the data region.
//! Sharded checkpoints are resolved through a JSON index file whose
//! `weight_map` object maps tensor names to shard filenames in the same
//! directory.
//!
//! Handles are read-only after open; `load_matrix` opens its own file handle
//! per call, so concurrent loads are safe.

mod dtype;
mod layout;

pub use dtype::{bf16_bits_to_f64, decode_payload, encode_payload, f16_bits_to_f64, DType};
pub use layout::{
    discover_layout, DiscoveredLayout, LayoutOverrides, ModelLayout, NameTemplate, Projection,
};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::WeightMatrix;

/// Metadata for one stored tensor. `byte_range` is relative to the data
/// region of the file holding the tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub byte_range: (u64, u64),
}

impl TensorRecord {
    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        self.byte_range.1 - self.byte_range.0
    }
}

#[derive(Debug, Clone)]
struct StoredTensor {
    record: TensorRecord,
    /// File holding the payload.
    file: PathBuf,
    /// Absolute offset of the data region in that file.
    data_start: u64,
}

/// An open checkpoint: the union of tensor records across all shards.
#[derive(Debug)]
pub struct Checkpoint {
    path: PathBuf,
    tensors: BTreeMap<String, StoredTensor>,
}

/// Open a weight file, or a shard-index JSON file mapping tensor names to
/// shard files.
pub fn open_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        open_sharded(path)
    } else {
        let tensors = parse_weight_file(path)?;
        Ok(Checkpoint {
            path: path.to_path_buf(),
            tensors,
        })
    }
}

fn open_sharded(index_path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(index_path).map_err(|e| Error::io(index_path, e))?;
    let index: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: index_path.to_path_buf(),
        reason: format!("index is not valid JSON: {e}"),
    })?;
    let weight_map = index
        .get("weight_map")
        .and_then(|v| v.as_object())
        .ok_or_else(|| Error::MalformedHeader {
            path: index_path.to_path_buf(),
            reason: "index has no weight_map object".into(),
        })?;

    let dir = index_path.parent().unwrap_or_else(|| Path::new("."));
    let mut shard_files: Vec<String> = weight_map
        .values()
        .filter_map(|v| v.as_str().map(str::to_owned))
        .collect();
    shard_files.sort();
    shard_files.dedup();

    let mut tensors: BTreeMap<String, StoredTensor> = BTreeMap::new();
    for shard in &shard_files {
        let shard_path = dir.join(shard);
        if !shard_path.is_file() {
            return Err(Error::MissingShard {
                index: index_path.to_path_buf(),
                shard: shard.clone(),
            });
        }
        for (name, stored) in parse_weight_file(&shard_path)? {
            if let Some(prev) = tensors.get(&name) {
                return Err(Error::DuplicateTensor {
                    name,
                    first: prev.file.display().to_string(),
                    second: shard_path.display().to_string(),
                });
            }
            tensors.insert(name, stored);
        }
    }

    // Every mapped tensor must actually live in its shard.
    for (name, file) in weight_map {
        let Some(file) = file.as_str() else {
            return Err(Error::MalformedHeader {
                path: index_path.to_path_buf(),
                reason: format!("weight_map entry {name} is not a string"),
            });
        };
        match tensors.get(name.as_str()) {
            Some(stored) if stored.file.file_name().is_some_and(|f| f == file) => {}
            _ => {
                return Err(Error::MalformedHeader {
                    path: index_path.to_path_buf(),
                    reason: format!("weight_map entry {name} -> {file} not found in that shard"),
                })
            }
        }
    }

    Ok(Checkpoint {
        path: index_path.to_path_buf(),
        tensors,
    })
}

fn parse_weight_file(path: &Path) -> Result<BTreeMap<String, StoredTensor>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_size = file.metadata().map_err(|e| Error::io(path, e))?.len();

    let mut len_bytes = [0u8; 8];
    if file_size < 8 {
        return Err(Error::TruncatedHeader {
            path: path.to_path_buf(),
            declared: 8,
            available: file_size,
        });
    }
    file.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len.checked_add(8).is_none_or(|end| end > file_size) {
        return Err(Error::TruncatedHeader {
            path: path.to_path_buf(),
            declared: header_len,
            available: file_size.saturating_sub(8),
        });
    }

    let mut header = vec![0u8; header_len as usize];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let parsed: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(&header)
        .map_err(|e| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("header is not a valid JSON object: {e}"),
        })?;

    let data_start = 8 + header_len;
    let data_size = file_size - data_start;

    let mut tensors = BTreeMap::new();
    for (name, entry) in parsed {
        if name == "__metadata__" {
            continue;
        }
        let record = parse_tensor_entry(path, &name, &entry, data_size)?;
        tensors.insert(
            name,
            StoredTensor {
                record,
                file: path.to_path_buf(),
                data_start,
            },
        );
    }

    check_overlaps(path, &tensors)?;
    Ok(tensors)
}

fn parse_tensor_entry(
    path: &Path,
    name: &str,
    entry: &serde_json::Value,
    data_size: u64,
) -> Result<TensorRecord> {
    let malformed = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };

    let obj = entry
        .as_object()
        .ok_or_else(|| malformed(format!("tensor {name}: entry is not an object")))?;
    let dtype_str = obj
        .get("dtype")
        .and_then(|v| v.as_str())
        .ok_or_else(|| malformed(format!("tensor {name}: missing dtype")))?;
    let dtype = DType::parse(dtype_str)
        .ok_or_else(|| malformed(format!("tensor {name}: unsupported dtype {dtype_str}")))?;

    let shape: Vec<usize> = obj
        .get("shape")
        .and_then(|v| v.as_array())
        .ok_or_else(|| malformed(format!("tensor {name}: missing shape")))?
        .iter()
        .map(|v| {
            v.as_u64()
                .map(|d| d as usize)
                .ok_or_else(|| malformed(format!("tensor {name}: non-integer shape entry")))
        })
        .collect::<Result<_>>()?;

    let offsets = obj
        .get("data_offsets")
        .and_then(|v| v.as_array())
        .filter(|a| a.len() == 2)
        .ok_or_else(|| malformed(format!("tensor {name}: missing data_offsets pair")))?;
    let begin = offsets[0]
        .as_u64()
        .ok_or_else(|| malformed(format!("tensor {name}: bad begin offset")))?;
    let end = offsets[1]
        .as_u64()
        .ok_or_else(|| malformed(format!("tensor {name}: bad end offset")))?;
    if end < begin {
        return Err(malformed(format!("tensor {name}: end offset before begin")));
    }
    if end > data_size {
        return Err(Error::TruncatedData {
            path: path.to_path_buf(),
            name: name.to_string(),
            begin,
            end,
            available: data_size,
        });
    }

    let elements = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| malformed(format!("tensor {name}: shape product overflows")))?;
    let expected = (elements as u64)
        .checked_mul(dtype.byte_width() as u64)
        .ok_or_else(|| malformed(format!("tensor {name}: byte size overflows")))?;
    if expected != end - begin {
        return Err(Error::SizeMismatch {
            name: name.to_string(),
            shape,
            dtype: dtype.as_str().into(),
            expected,
            actual: end - begin,
        });
    }

    Ok(TensorRecord {
        name: name.to_string(),
        dtype,
        shape,
        byte_range: (begin, end),
    })
}

/// Byte ranges of distinct tensors within one file must never overlap.
fn check_overlaps(path: &Path, tensors: &BTreeMap<String, StoredTensor>) -> Result<()> {
    let mut ranges: Vec<(&str, u64, u64)> = tensors
        .values()
        .filter(|t| t.record.byte_len() > 0)
        .map(|t| {
            (
                t.record.name.as_str(),
                t.record.byte_range.0,
                t.record.byte_range.1,
            )
        })
        .collect();
    ranges.sort_by_key(|&(_, b, e)| (b, e));
    for pair in ranges.windows(2) {
        let (first, _, end) = pair[0];
        let (second, begin, _) = pair[1];
        if begin < end {
            return Err(Error::OverlappingTensors {
                path: path.to_path_buf(),
                first: first.to_string(),
                second: second.to_string(),
            });
        }
    }
    Ok(())
}

impl Checkpoint {
    /// The path this handle was opened from (weight file or shard index).
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    /// Tensor records in name order.
    pub fn records(&self) -> impl Iterator<Item = &TensorRecord> {
        self.tensors.values().map(|t| &t.record)
    }

    pub fn record(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.get(name).map(|t| &t.record)
    }

    /// Raw payload bytes of a tensor.
    pub fn read_payload(&self, name: &str) -> Result<Vec<u8>> {
        let stored = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))?;
        let mut file = File::open(&stored.file).map_err(|e| Error::io(&stored.file, e))?;
        file.seek(SeekFrom::Start(stored.data_start + stored.record.byte_range.0))
            .map_err(|e| Error::io(&stored.file, e))?;
        let mut bytes = vec![0u8; stored.record.byte_len() as usize];
        file.read_exact(&mut bytes).map_err(|e| Error::io(&stored.file, e))?;
        Ok(bytes)
    }

    /// Decode a 2-D tensor to a double-precision matrix. F16/BF16/F32
    /// payloads widen exactly; non-finite entries are a hard error.
    pub fn load_matrix(&self, name: &str) -> Result<WeightMatrix> {
        let record = self
            .record(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))?
            .clone();
        if record.shape.len() != 2 {
            return Err(Error::NonTwoDimensional {
                name: name.to_string(),
                shape: record.shape,
            });
        }
        let bytes = self.read_payload(name)?;
        let data = decode_payload(record.dtype, &bytes)?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteWeight {
                name: name.to_string(),
                index,
            });
        }
        WeightMatrix::new(record.shape[0], record.shape[1], data, name)
    }
}

/// Builds single-file checkpoints. Tensors are laid out contiguously in name
/// order, so emission is deterministic for a given tensor set.
#[derive(Debug, Default)]
pub struct CheckpointWriter {
    tensors: BTreeMap<String, (DType, Vec<usize>, Vec<u8>)>,
}

impl CheckpointWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a tensor from raw little-endian payload bytes.
    pub fn add_raw(
        &mut self,
        name: impl Into<String>,
        dtype: DType,
        shape: Vec<usize>,
        payload: Vec<u8>,
    ) -> Result<()> {
        let name = name.into();
        let elements: usize = shape.iter().product();
        if payload.len() != elements * dtype.byte_width() {
            return Err(Error::SizeMismatch {
                name,
                shape,
                dtype: dtype.as_str().into(),
                expected: (elements * dtype.byte_width()) as u64,
                actual: payload.len() as u64,
            });
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::DuplicateTensor {
                first: "writer".into(),
                second: "writer".into(),
                name,
            });
        }
        self.tensors.insert(name, (dtype, shape, payload));
        Ok(())
    }

    /// Add a matrix, stored as F64 so spectra survive the round-trip exactly.
    pub fn add_matrix(&mut self, name: impl Into<String>, m: &WeightMatrix) -> Result<()> {
        self.add_raw(
            name,
            DType::F64,
            vec![m.rows(), m.cols()],
            encode_payload(DType::F64, m.data()),
        )
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut header = serde_json::Map::new();
        let mut offset = 0u64;
        for (name, (dtype, shape, payload)) in &self.tensors {
            let end = offset + payload.len() as u64;
            header.insert(
                name.clone(),
                serde_json::json!({
                    "dtype": dtype.as_str(),
                    "shape": shape,
                    "data_offsets": [offset, end],
                }),
            );
            offset = end;
        }
        let header_bytes = serde_json::to_vec(&serde_json::Value::Object(header))
            .expect("header serialization cannot fail");

        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        file.write_all(&header_bytes).map_err(|e| Error::io(path, e))?;
        for (_, (_, _, payload)) in &self.tensors {
            file.write_all(payload).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    /// Test-only writer, coded independently of `CheckpointWriter`: builds
    /// the header JSON by string concatenation and appends payloads in the
    /// order given.
    fn write_file_by_hand(path: &Path, tensors: &[(&str, &str, &[usize], &[u8])]) {
        let mut entries = Vec::new();
        let mut offset = 0usize;
        for (name, dtype, shape, payload) in tensors {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            entries.push(format!(
                "\"{name}\":{{\"dtype\":\"{dtype}\",\"shape\":[{}],\"data_offsets\":[{},{}]}}",
                dims.join(","),
                offset,
                offset + payload.len()
            ));
            offset += payload.len();
        }
        let header = format!("{{{}}}", entries.join(","));
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        for (_, _, _, payload) in tensors {
            bytes.extend_from_slice(payload);
        }
        std::fs::write(path, bytes).unwrap();
    }

    fn f32_payload(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn reads_hand_written_single_tensor_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.safetensors");
        let payload = f32_payload(&[1.0, 2.0, 3.0, 4.0]);
        write_file_by_hand(&path, &[("w", "F32", &[2, 2], &payload)]);

        let ckpt = open_checkpoint(&path).unwrap();
        assert_eq!(ckpt.len(), 1);
        let rec = ckpt.record("w").unwrap();
        assert_eq!(rec.shape, vec![2, 2]);
        assert_eq!(rec.dtype, DType::F32);
        assert_eq!(rec.byte_range, (0, 16));

        let m = ckpt.load_matrix("w").unwrap();
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn header_length_beyond_file_is_truncated_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.safetensors");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(b"{}");
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            open_checkpoint(&path),
            Err(Error::TruncatedHeader { .. })
        ));
    }

    #[test]
    fn header_must_be_json() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&4u64.to_le_bytes());
        bytes.extend_from_slice(b"not{");
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            open_checkpoint(&path),
            Err(Error::MalformedHeader { .. })
        ));
    }

    #[test]
    fn data_region_truncation_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.safetensors");
        // Declares 16 payload bytes but provides 8.
        let payload = f32_payload(&[1.0, 2.0]);
        let header = r#"{"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&payload);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            open_checkpoint(&path),
            Err(Error::TruncatedData { .. })
        ));
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("overlap.safetensors");
        let payload = f32_payload(&[1.0, 2.0, 3.0, 4.0]);
        let header = concat!(
            r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"#,
            r#""b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}"#
        );
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&payload);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            open_checkpoint(&path),
            Err(Error::OverlappingTensors { .. })
        ));
    }

    #[test]
    fn size_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("size.safetensors");
        let payload = f32_payload(&[1.0, 2.0, 3.0]);
        write_file_by_hand(&path, &[("w", "F32", &[2, 2], &payload)]);
        assert!(matches!(
            open_checkpoint(&path),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn non_2d_tensor_rejected_as_matrix() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vec.safetensors");
        let payload = f32_payload(&[1.0, 2.0, 3.0]);
        write_file_by_hand(&path, &[("v", "F32", &[3], &payload)]);
        let ckpt = open_checkpoint(&path).unwrap();
        assert!(matches!(
            ckpt.load_matrix("v"),
            Err(Error::NonTwoDimensional { .. })
        ));
    }

    #[test]
    fn nan_payload_reported_with_index() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("nan.safetensors");
        let payload = f32_payload(&[1.0, f32::NAN, 3.0, 4.0]);
        write_file_by_hand(&path, &[("w", "F32", &[2, 2], &payload)]);
        let ckpt = open_checkpoint(&path).unwrap();
        match ckpt.load_matrix("w") {
            Err(Error::NonFiniteWeight { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NonFiniteWeight, got {other:?}"),
        }
    }

    #[test]
    fn unknown_tensor_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.safetensors");
        write_file_by_hand(&path, &[("w", "F32", &[1], &f32_payload(&[1.0]))]);
        let ckpt = open_checkpoint(&path).unwrap();
        assert!(matches!(
            ckpt.load_matrix("missing"),
            Err(Error::UnknownTensor(_))
        ));
    }

    #[test]
    fn sharded_union_and_errors() {
        let dir = tempdir().unwrap();
        write_file_by_hand(
            &dir.path().join("s1.safetensors"),
            &[("a", "F32", &[1], &f32_payload(&[1.0]))],
        );
        write_file_by_hand(
            &dir.path().join("s2.safetensors"),
            &[("b", "F32", &[1], &f32_payload(&[2.0]))],
        );
        let index = dir.path().join("model.safetensors.index.json");
        std::fs::write(
            &index,
            r#"{"weight_map":{"a":"s1.safetensors","b":"s2.safetensors"}}"#,
        )
        .unwrap();
        let ckpt = open_checkpoint(&index).unwrap();
        assert_eq!(ckpt.len(), 2);
        assert_eq!(ckpt.read_payload("b").unwrap(), f32_payload(&[2.0]));

        // Missing shard.
        std::fs::write(&index, r#"{"weight_map":{"a":"gone.safetensors"}}"#).unwrap();
        assert!(matches!(
            open_checkpoint(&index),
            Err(Error::MissingShard { .. })
        ));

        // Duplicate across shards.
        write_file_by_hand(
            &dir.path().join("s3.safetensors"),
            &[("a", "F32", &[1], &f32_payload(&[3.0]))],
        );
        std::fs::write(
            &index,
            r#"{"weight_map":{"a":"s1.safetensors","b":"s3.safetensors"}}"#,
        )
        .unwrap();
        // s3 also carries "a"; the union must refuse it no matter which
        // shard the map points at.
        let err = open_checkpoint(&index).unwrap_err();
        assert!(matches!(err, Error::DuplicateTensor { .. }), "{err:?}");
    }

    #[test]
    fn writer_round_trips_payload_bytes_exactly() {
        use rand::RngCore;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);

        let dir = tempdir().unwrap();
        let path = dir.path().join("rt.safetensors");
        let mut writer = CheckpointWriter::new();
        let mut expected = Vec::new();
        for (i, &(dtype, shape)) in [
            (DType::F32, [3usize, 5usize]),
            (DType::F16, [2, 2]),
            (DType::BF16, [4, 1]),
            (DType::F64, [2, 3]),
        ]
        .iter()
        .enumerate()
        {
            let elems: usize = shape.iter().product();
            let mut payload = vec![0u8; elems * dtype.byte_width()];
            rng.fill_bytes(&mut payload);
            let name = format!("t{i}");
            writer
                .add_raw(&name, dtype, shape.to_vec(), payload.clone())
                .unwrap();
            expected.push((name, payload));
        }
        writer.write_to(&path).unwrap();

        let ckpt = open_checkpoint(&path).unwrap();
        for (name, payload) in &expected {
            assert_eq!(&ckpt.read_payload(name).unwrap(), payload);
        }

        // Determinism: a second emission is byte-identical.
        let path2 = dir.path().join("rt2.safetensors");
        writer.write_to(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }
}
