//! On-disk chain storage: append-only binary frames plus a JSON manifest.
//!
//! `frames.bin` holds the retained draws as consecutive frames of
//! little-endian 64-bit floats. The manifest (`manifest.json`) records the
//! field layout — name and length per field, concatenated in order — along
//! with run metadata, the frame count, and a SHA-256 checksum of the frame
//! file. A store whose run aborted is flushed as-is and marked
//! `complete: false`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FRAMES_FILE: &str = "frames.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "bvar-chain-store";
const FORMAT_VERSION: u32 = 1;

/// One named segment of a frame.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub len: usize,
}

/// Sidecar metadata for a chain store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format: String,
    pub version: u32,
    pub scheme: String,
    pub n: usize,
    pub p: usize,
    pub t_obs: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub particles: usize,
    pub seed: u64,
    pub stream: u64,
    pub fields: Vec<FieldSpec>,
    pub frame_len: usize,
    pub frames: usize,
    pub sha256: String,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StoreManifest {
    pub fn field_range(&self, name: &str) -> Result<std::ops::Range<usize>> {
        let mut offset = 0usize;
        for f in &self.fields {
            if f.name == name {
                return Ok(offset..offset + f.len);
            }
            offset += f.len;
        }
        Err(Error::Store(format!("no field named `{name}`")))
    }

    pub fn has_field(&self, name: &str) -> bool {
        self.fields.iter().any(|f| f.name == name)
    }
}

/// Streaming writer; call [`finalize`](Self::finalize) (or
/// [`abort`](Self::abort)) to seal the manifest.
pub struct ChainStoreWriter {
    dir: PathBuf,
    file: BufWriter<File>,
    hasher: Sha256,
    manifest: StoreManifest,
}

impl ChainStoreWriter {
    pub fn create(dir: &Path, mut manifest: StoreManifest) -> Result<Self> {
        fs::create_dir_all(dir)?;
        manifest.format = FORMAT.to_string();
        manifest.version = FORMAT_VERSION;
        manifest.frames = 0;
        manifest.frame_len = manifest.fields.iter().map(|f| f.len).sum();
        manifest.complete = false;
        let file = BufWriter::new(File::create(dir.join(FRAMES_FILE))?);
        Ok(Self {
            dir: dir.to_path_buf(),
            file,
            hasher: Sha256::new(),
            manifest,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.manifest.frame_len
    }

    pub fn frames_written(&self) -> usize {
        self.manifest.frames
    }

    pub fn append(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.manifest.frame_len {
            return Err(Error::Store(format!(
                "frame has {} values, layout expects {}",
                frame.len(),
                self.manifest.frame_len
            )));
        }
        let mut bytes = Vec::with_capacity(frame.len() * 8);
        for v in frame {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.hasher.update(&bytes);
        self.file.write_all(&bytes)?;
        self.manifest.frames += 1;
        Ok(())
    }

    fn seal(mut self, complete: bool, error: Option<String>) -> Result<ChainStore> {
        self.file.flush()?;
        self.manifest.sha256 = hex_digest(&self.hasher.finalize());
        self.manifest.complete = complete;
        self.manifest.error = error;
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.dir.join(MANIFEST_FILE), json)?;
        Ok(ChainStore {
            dir: self.dir,
            manifest: self.manifest,
        })
    }

    pub fn finalize(self) -> Result<ChainStore> {
        self.seal(true, None)
    }

    /// Flush whatever was written and mark the store incomplete.
    pub fn abort(self, message: &str) -> Result<ChainStore> {
        self.seal(false, Some(message.to_string()))
    }
}

/// A finalized (or aborted) chain store on disk.
#[derive(Debug, Clone)]
pub struct ChainStore {
    dir: PathBuf,
    pub manifest: StoreManifest,
}

impl ChainStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::Store(format!("cannot read {}: {e}", manifest_path.display())))?;
        let manifest: StoreManifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT {
            return Err(Error::Store(format!(
                "unexpected format `{}`",
                manifest.format
            )));
        }
        let expected = (manifest.frames * manifest.frame_len * 8) as u64;
        let actual = fs::metadata(dir.join(FRAMES_FILE))?.len();
        if expected != actual {
            return Err(Error::Store(format!(
                "frame file holds {actual} bytes, manifest implies {expected}"
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Recompute the SHA-256 of the frame file and compare to the manifest.
    pub fn verify_checksum(&self) -> Result<()> {
        let mut file = File::open(self.dir.join(FRAMES_FILE))?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 20];
        loop {
            let read = file.read(&mut buf)?;
            if read == 0 {
                break;
            }
            hasher.update(&buf[..read]);
        }
        let digest = hex_digest(&hasher.finalize());
        if digest != self.manifest.sha256 {
            return Err(Error::Store(format!(
                "checksum mismatch: manifest {}, file {digest}",
                self.manifest.sha256
            )));
        }
        Ok(())
    }

    pub fn read_frame(&self, idx: usize) -> Result<Vec<f64>> {
        if idx >= self.manifest.frames {
            return Err(Error::Store(format!(
                "frame {idx} out of range 0..{}",
                self.manifest.frames
            )));
        }
        let mut file = File::open(self.dir.join(FRAMES_FILE))?;
        let frame_bytes = self.manifest.frame_len * 8;
        file.seek(SeekFrom::Start((idx * frame_bytes) as u64))?;
        let mut bytes = vec![0u8; frame_bytes];
        file.read_exact(&mut bytes)?;
        Ok(decode(&bytes))
    }

    /// Visit every frame in order with a reusable buffer.
    pub fn for_each_frame(&self, mut visit: impl FnMut(usize, &[f64])) -> Result<()> {
        let mut reader = BufReader::new(File::open(self.dir.join(FRAMES_FILE))?);
        let frame_bytes = self.manifest.frame_len * 8;
        let mut bytes = vec![0u8; frame_bytes];
        for idx in 0..self.manifest.frames {
            reader.read_exact(&mut bytes)?;
            let frame = decode(&bytes);
            visit(idx, &frame);
        }
        Ok(())
    }

    /// All draws of one field column range, as per-column vectors over
    /// frames: result[c][frame]. Reads the file once.
    pub fn column_block(&self, field: &str, cols: std::ops::Range<usize>) -> Result<Vec<Vec<f64>>> {
        let range = self.manifest.field_range(field)?;
        if cols.end > range.len() {
            return Err(Error::Store(format!(
                "columns {cols:?} outside field `{field}` of length {}",
                range.len()
            )));
        }
        let mut out = vec![Vec::with_capacity(self.manifest.frames); cols.len()];
        self.for_each_frame(|_, frame| {
            let slice = &frame[range.clone()];
            for (k, c) in cols.clone().enumerate() {
                out[k].push(slice[c]);
            }
        })?;
        Ok(out)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn decode(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(fields: Vec<FieldSpec>) -> StoreManifest {
        StoreManifest {
            format: String::new(),
            version: 0,
            scheme: "hs".into(),
            n: 2,
            p: 1,
            t_obs: 10,
            iterations: 5,
            burn_in: 2,
            thin: 1,
            particles: 10,
            seed: 7,
            stream: 0,
            fields,
            frame_len: 0,
            frames: 0,
            sha256: String::new(),
            complete: false,
            error: None,
        }
    }

    #[test]
    fn round_trip_frames_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let fields = vec![
            FieldSpec {
                name: "theta".into(),
                len: 3,
            },
            FieldSpec {
                name: "tau".into(),
                len: 1,
            },
        ];
        let mut w = ChainStoreWriter::create(dir.path(), manifest(fields)).unwrap();
        w.append(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        w.append(&[5.0, 6.0, 7.0, 8.0]).unwrap();
        let store = w.finalize().unwrap();
        assert_eq!(store.manifest.frames, 2);
        assert!(store.manifest.complete);
        store.verify_checksum().unwrap();

        let reopened = ChainStore::open(dir.path()).unwrap();
        assert_eq!(reopened.read_frame(1).unwrap(), vec![5.0, 6.0, 7.0, 8.0]);
        let block = reopened.column_block("theta", 1..3).unwrap();
        assert_eq!(block, vec![vec![2.0, 6.0], vec![3.0, 7.0]]);
        assert!(reopened.manifest.field_range("bogus").is_err());
    }

    #[test]
    fn aborted_store_is_marked_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        let fields = vec![FieldSpec {
            name: "x".into(),
            len: 2,
        }];
        let mut w = ChainStoreWriter::create(dir.path(), manifest(fields)).unwrap();
        w.append(&[1.0, 2.0]).unwrap();
        let store = w.abort("component failed").unwrap();
        assert!(!store.manifest.complete);
        assert_eq!(store.manifest.error.as_deref(), Some("component failed"));
        let reopened = ChainStore::open(dir.path()).unwrap();
        assert_eq!(reopened.manifest.frames, 1);
        assert!(!reopened.manifest.complete);
    }

    #[test]
    fn rejects_wrong_frame_length() {
        let dir = tempfile::tempdir().unwrap();
        let fields = vec![FieldSpec {
            name: "x".into(),
            len: 2,
        }];
        let mut w = ChainStoreWriter::create(dir.path(), manifest(fields)).unwrap();
        assert!(w.append(&[1.0]).is_err());
    }

    #[test]
    fn detects_truncated_frame_file() {
        let dir = tempfile::tempdir().unwrap();
        let fields = vec![FieldSpec {
            name: "x".into(),
            len: 2,
        }];
        let mut w = ChainStoreWriter::create(dir.path(), manifest(fields)).unwrap();
        w.append(&[1.0, 2.0]).unwrap();
        w.finalize().unwrap();
        // damage the frame file
        let path = dir.path().join(FRAMES_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..8]).unwrap();
        assert!(ChainStore::open(dir.path()).is_err());
    }
}
