//! File formats: the "svol1" volume container, JSON-lines records, and the
//! feature CSV.
//!
//! An svol1 volume is a pair of files: a JSON header at the given path and a
//! raw little-endian payload at the same path with `.raw` appended. The
//! payload is densely packed, x-fastest, matching the in-memory layout of
//! [`Volume`].

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Sample, Volume};

/// Fixed-width little-endian scalar encoding for svol1 payloads.
pub trait RawScalar: Sample {
    const BYTES: usize;
    fn append_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl RawScalar for u8 {
    const BYTES: usize = 1;
    fn append_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl RawScalar for u32 {
    const BYTES: usize = 4;
    fn append_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        u32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl RawScalar for f32 {
    const BYTES: usize = 4;
    fn append_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

#[derive(Serialize, Deserialize)]
struct Svol1Header {
    format: String,
    dtype: String,
    dims_zyx: [usize; 3],
    voxel_size_nm_xyz: [f64; 3],
    byte_order: String,
}

/// Path of the raw payload belonging to an svol1 header path.
pub fn raw_path(header_path: &Path) -> PathBuf {
    let mut name = header_path.file_name().unwrap_or_default().to_os_string();
    name.push(".raw");
    header_path.with_file_name(name)
}

/// Writes an svol1 header + raw payload pair.
pub fn write_volume<T: RawScalar>(path: &Path, volume: &Volume<T>) -> Result<()> {
    let header = Svol1Header {
        format: "svol1".into(),
        dtype: T::DTYPE.into(),
        dims_zyx: volume.dims_zyx(),
        voxel_size_nm_xyz: volume.voxel_size_nm_xyz(),
        byte_order: "little".into(),
    };
    let header_json = serde_json::to_string(&header).expect("header serializes");
    fs::write(path, header_json.as_bytes())?;
    let mut payload = Vec::with_capacity(volume.len() * T::BYTES);
    for &v in volume.data() {
        v.append_le(&mut payload);
    }
    fs::write(raw_path(path), payload)?;
    Ok(())
}

/// Reads an svol1 volume of the expected scalar type.
pub fn read_volume<T: RawScalar>(path: &Path) -> Result<Volume<T>> {
    let display = path.display().to_string();
    let fmt_err = |reason: String| Error::Format { path: display.clone(), reason };
    let header_text = fs::read_to_string(path)?;
    let header: Svol1Header =
        serde_json::from_str(&header_text).map_err(|e| fmt_err(format!("bad header: {e}")))?;
    if header.format != "svol1" {
        return Err(fmt_err(format!("unknown format {:?}", header.format)));
    }
    if header.byte_order != "little" {
        return Err(fmt_err(format!("unsupported byte order {:?}", header.byte_order)));
    }
    if header.dtype != T::DTYPE {
        return Err(fmt_err(format!(
            "dtype mismatch: file holds {:?}, expected {:?}",
            header.dtype,
            T::DTYPE
        )));
    }
    let payload = fs::read(raw_path(path))?;
    let n: usize = header.dims_zyx.iter().product();
    if payload.len() != n * T::BYTES {
        return Err(fmt_err(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            n * T::BYTES
        )));
    }
    let data: Vec<T> = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
    Volume::from_data(header.dims_zyx, header.voxel_size_nm_xyz, data)
}

/// Writes records as compact JSON, one per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("record serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads JSON-lines records, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let display = path.display().to_string();
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: display.clone(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Writes a JSON value pretty-printed with a trailing newline.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};

    #[test]
    fn volume_round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.svol1");
        let volume =
            Volume::from_data([2, 2, 2], [4.0, 4.0, 30.0], vec![0.5f32, -1.0, 0.0, 0.25, 1.0, -0.5, 0.125, -0.125])
                .unwrap();
        write_volume(&path, &volume).unwrap();
        let back: Volume<f32> = read_volume(&path).unwrap();
        assert_eq!(back, volume);
        // Header is the documented JSON object.
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"format\":\"svol1\""));
        assert!(text.contains("\"dtype\":\"f32\""));
        assert!(text.contains("\"byte_order\":\"little\""));
    }

    #[test]
    fn dtype_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.svol1");
        let volume: Volume<u32> = Volume::zeros([1, 1, 4], [1.0, 1.0, 1.0]).unwrap();
        write_volume(&path, &volume).unwrap();
        let err = read_volume::<f32>(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.svol1");
        let volume: Volume<u32> = Volume::zeros([1, 1, 4], [1.0, 1.0, 1.0]).unwrap();
        write_volume(&path, &volume).unwrap();
        std::fs::write(raw_path(&path), [0u8; 7]).unwrap();
        assert!(matches!(read_volume::<u32>(&path), Err(Error::Format { .. })));
    }

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Rec {
        id: u64,
        score: f64,
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recs.jsonl");
        let items = vec![Rec { id: 0, score: 0.5 }, Rec { id: 1, score: 1.0 }];
        write_jsonl(&path, &items).unwrap();
        let back: Vec<Rec> = read_jsonl(&path).unwrap();
        assert_eq!(back, items);
    }
}
