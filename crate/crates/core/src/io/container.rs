//! Single-file EEG container.
//!
//! Layout, all integers little-endian:
//!
//! | offset | bytes | content                                   |
//! |--------|-------|-------------------------------------------|
//! | 0      | 8     | magic `ATDGEEG\0`                         |
//! | 8      | 8     | manifest length `m` (u64)                 |
//! | 16     | m     | UTF-8 JSON [`Manifest`]                   |
//! | 16+m   | rest  | f32 payload, trial by trial, channel-major |
//!
//! Trial `i` occupies `channels × length_i × 4` bytes starting at its
//! manifest `offset` (relative to the payload start).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{EegRecording, TrialLabels};

pub const MAGIC: &[u8; 8] = b"ATDGEEG\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    /// Byte offset into the payload.
    pub offset: u64,
    /// Samples per channel.
    pub length: u64,
    pub labels: TrialLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub subject_id: String,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub trials: Vec<TrialEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn payload_bytes(&self) -> u64 {
        let e = self.channel_names.len() as u64;
        self.trials.iter().map(|t| e * t.length * 4).sum()
    }
}

/// Serialises the trials of `rec` (samples outside trial ranges are dropped).
pub fn encode_container(rec: &EegRecording, warnings: &[String]) -> Result<Vec<u8>> {
    rec.validate()?;
    let e = rec.channel_count() as u64;
    let mut trials = Vec::with_capacity(rec.trial_count());
    let mut offset = 0u64;
    for (&(s, t), labels) in rec.trial_boundaries.iter().zip(&rec.labels) {
        let length = (t - s) as u64;
        trials.push(TrialEntry { offset, length, labels: *labels });
        offset += e * length * 4;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        subject_id: rec.subject_id.clone(),
        channel_names: rec.channel_names.clone(),
        sample_rate_hz: rec.sample_rate_hz,
        trials,
        warnings: warnings.to_vec(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Corruption(format!("manifest encoding: {e}")))?;
    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for &(s, t) in &rec.trial_boundaries {
        for ch in &rec.samples {
            for &v in &ch[s..t] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parses the header and manifest, returning the manifest and payload bytes.
pub fn decode_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Corruption("missing container magic".into()));
    }
    let m = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(m))
        .ok_or_else(|| Error::Corruption(format!("manifest of {m} bytes exceeds file of {} bytes", bytes.len())))?;
    #[derive(Deserialize)]
    struct VersionOnly {
        format_version: u32,
    }
    let v: VersionOnly =
        serde_json::from_slice(json).map_err(|e| Error::Corruption(format!("manifest is not valid JSON: {e}")))?;
    if v.format_version != FORMAT_VERSION {
        return Err(Error::Version { found: v.format_version, supported: FORMAT_VERSION });
    }
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Corruption(format!("malformed manifest: {e}")))?;
    Ok((manifest, &bytes[16 + m..]))
}

pub fn decode_container(bytes: &[u8]) -> Result<EegRecording> {
    let (manifest, payload) = decode_manifest(bytes)?;
    let expected = manifest.payload_bytes();
    if payload.len() as u64 != expected {
        return Err(Error::Corruption(format!(
            "payload has {} bytes but the trial table expects {expected}",
            payload.len()
        )));
    }
    let e = manifest.channel_names.len();
    let total: usize = manifest.trials.iter().map(|t| t.length as usize).sum();
    let mut samples = vec![Vec::with_capacity(total); e];
    let mut boundaries = Vec::with_capacity(manifest.trials.len());
    let mut cursor = 0u64;
    let mut start = 0usize;
    for (i, t) in manifest.trials.iter().enumerate() {
        if t.offset != cursor {
            return Err(Error::Corruption(format!("trial {i} offset {} should be {cursor}", t.offset)));
        }
        let len = t.length as usize;
        let block = &payload[cursor as usize..(cursor + e as u64 * t.length * 4) as usize];
        for (c, ch) in samples.iter_mut().enumerate() {
            let chunk = &block[c * len * 4..(c + 1) * len * 4];
            ch.extend(chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64));
        }
        boundaries.push((start, start + len));
        start += len;
        cursor += e as u64 * t.length * 4;
    }
    let rec = EegRecording {
        subject_id: manifest.subject_id,
        channel_names: manifest.channel_names,
        sample_rate_hz: manifest.sample_rate_hz,
        samples,
        trial_boundaries: boundaries,
        labels: manifest.trials.iter().map(|t| t.labels).collect(),
    };
    rec.validate()?;
    Ok(rec)
}

pub fn read_container(path: &Path) -> Result<EegRecording> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_manifest(&bytes)?.0)
}

pub fn write_container(path: &Path, rec: &EegRecording, warnings: &[String]) -> Result<()> {
    write_atomic(path, &encode_container(rec, warnings)?)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
