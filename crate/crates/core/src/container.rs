//! Versioned little-endian binary container: a magic tag, a human-readable
//! metadata string (TOML), and named shape-prefixed blobs. Both the feature
//! files and the training checkpoints use this layout.
//!
//! ```text
//! magic[8] | version u32 | meta_len u32 | meta (utf-8) | blob_count u32
//! then per blob, sorted by name:
//!   name_len u16 | name | dtype u8 | rank u8 | dims u64 x rank | payload
//! ```
//!
//! dtype: 0 = f32, 1 = u8, 2 = u64.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{F0Track, MelSpectrogram, MEL_BANDS};

pub const CONTAINER_VERSION: u32 = 1;
pub const FEATURE_MAGIC: &[u8; 8] = b"SFVFEAT1";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SFVCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub enum BlobData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub dims: Vec<usize>,
    pub data: BlobData,
}

impl Blob {
    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            dims,
            data: BlobData::F32(data),
        }
    }

    pub fn u8(dims: Vec<usize>, data: Vec<u8>) -> Self {
        Self {
            dims,
            data: BlobData::U8(data),
        }
    }

    pub fn scalar_u64(v: u64) -> Self {
        Self {
            dims: vec![1],
            data: BlobData::U64(vec![v]),
        }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            BlobData::F32(v) => Ok(v),
            _ => Err(Error::Container("blob is not f32".into())),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            BlobData::U8(v) => Ok(v),
            _ => Err(Error::Container("blob is not u8".into())),
        }
    }

    pub fn as_u64_scalar(&self) -> Result<u64> {
        match &self.data {
            BlobData::U64(v) if v.len() == 1 => Ok(v[0]),
            _ => Err(Error::Container("blob is not a u64 scalar".into())),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: String,
    pub blobs: BTreeMap<String, Blob>,
}

impl Container {
    pub fn new(meta: String) -> Self {
        Self {
            meta,
            blobs: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, blob: Blob) {
        self.blobs.insert(name.into(), blob);
    }

    pub fn get(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing blob '{name}'")))
    }

    pub fn write(&self, path: impl AsRef<Path>, magic: &[u8; 8]) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(magic);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        let meta = self.meta.as_bytes();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta);
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, blob) in &self.blobs {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize {
                return Err(Error::Container(format!("blob name too long: {name}")));
            }
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            let dtype: u8 = match &blob.data {
                BlobData::F32(_) => 0,
                BlobData::U8(_) => 1,
                BlobData::U64(_) => 2,
            };
            out.push(dtype);
            out.push(blob.dims.len() as u8);
            for &d in &blob.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &blob.data {
                BlobData::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                BlobData::U8(v) => out.extend_from_slice(v),
                BlobData::U64(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        let mut f = fs::File::create(path.as_ref())?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, magic: &[u8; 8]) -> Result<Self> {
        let bytes = fs::read(path.as_ref())?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        let got = r.take(8)?;
        if got != magic {
            return Err(Error::Container(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::Container(format!(
                "container version {version} not supported (this build reads {CONTAINER_VERSION})"
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::Container("metadata is not utf-8".into()))?;
        let blob_count = r.u32()? as usize;
        let mut blobs = BTreeMap::new();
        for _ in 0..blob_count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Container("blob name is not utf-8".into()))?;
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64()? as usize);
            }
            let numel: usize = dims.iter().product();
            let data = match dtype {
                0 => {
                    let raw = r.take(numel * 4)?;
                    BlobData::F32(
                        raw.chunks_exact(4)
                            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                            .collect(),
                    )
                }
                1 => BlobData::U8(r.take(numel)?.to_vec()),
                2 => {
                    let raw = r.take(numel * 8)?;
                    BlobData::U64(
                        raw.chunks_exact(8)
                            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                            .collect(),
                    )
                }
                other => {
                    return Err(Error::Container(format!("unknown blob dtype {other}")));
                }
            };
            blobs.insert(name, Blob { dims, data });
        }
        Ok(Self { meta, blobs })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Container("truncated container".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Extracted features for one utterance: mel always, F0 optionally (a
/// mel-only file is the external/TTS path).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub sample_rate: u32,
    pub mel: MelSpectrogram,
    pub f0: Option<F0Track>,
}

impl FeatureFile {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut c = Container::new(format!(
            "kind = \"features\"\nsample_rate = {}\nhop = 256\nmel_bands = {}\n",
            self.sample_rate, MEL_BANDS
        ));
        c.insert("sample_rate", Blob::scalar_u64(self.sample_rate as u64));
        c.insert(
            "mel",
            Blob::f32(
                vec![self.mel.frames(), MEL_BANDS],
                self.mel.data().to_vec(),
            ),
        );
        if let Some(track) = &self.f0 {
            c.insert("f0", Blob::f32(vec![track.len()], track.f0().to_vec()));
            c.insert(
                "vuv",
                Blob::u8(
                    vec![track.len()],
                    track.vuv().iter().map(|&v| v as u8).collect(),
                ),
            );
        }
        c.write(path, FEATURE_MAGIC)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::read(path, FEATURE_MAGIC)?;
        let sample_rate = c.get("sample_rate")?.as_u64_scalar()? as u32;
        let mel_blob = c.get("mel")?;
        if mel_blob.dims.len() != 2 || mel_blob.dims[1] != MEL_BANDS {
            return Err(Error::Container(format!(
                "mel blob has dims {:?}, expected (L, {MEL_BANDS})",
                mel_blob.dims
            )));
        }
        let mel = MelSpectrogram::new(mel_blob.as_f32()?.to_vec(), mel_blob.dims[0])?;
        let f0 = match c.blobs.get("f0") {
            Some(f0_blob) => {
                let vuv_blob = c.get("vuv")?;
                let vuv: Vec<bool> = vuv_blob.as_u8()?.iter().map(|&b| b != 0).collect();
                Some(F0Track::new(f0_blob.as_f32()?.to_vec(), vuv)?)
            }
            None => None,
        };
        if let Some(track) = &f0 {
            if track.len() != mel.frames() {
                return Err(Error::Container(format!(
                    "feature file: {} f0 frames vs {} mel frames",
                    track.len(),
                    mel.frames()
                )));
            }
        }
        Ok(Self {
            sample_rate,
            mel,
            f0,
        })
    }

    /// Plain-text mel export: one frame per line, 80 numbers each.
    pub fn write_mel_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for l in 0..self.mel.frames() {
            let row = self.mel.frame(l);
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{v:.6}"));
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}
