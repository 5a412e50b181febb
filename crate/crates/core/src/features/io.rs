//! `EMOF` feature files.
//!
//! Layout (little-endian): `"EMOF"`, version `u32`, `T u32`, `C u32`,
//! frame rate `f64`, emotion label, speaker id and source id as
//! `u32`-length-prefixed UTF-8, then `T·C` `f32` values row-major, then a
//! CRC32 of all preceding bytes.

use std::path::Path;

use super::FeatureMatrix;
use crate::binio::{SectionReader, SectionWriter};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"EMOF";
const VERSION: u32 = 1;

pub fn features_to_bytes(fm: &FeatureMatrix) -> Vec<u8> {
    let mut w = SectionWriter::new(MAGIC, VERSION);
    w.u32(fm.n_frames() as u32);
    w.u32(fm.n_channels() as u32);
    w.f64(fm.frame_rate_hz);
    w.str(&fm.emotion);
    w.str(&fm.speaker);
    w.str(&fm.source_id);
    for v in fm.frames() {
        w.f32(*v);
    }
    w.seal();
    w.into_bytes()
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = SectionReader::new(bytes);
    r.open(MAGIC, VERSION)?;
    let t = r.u32("frame count")? as usize;
    let c = r.u32("channel count")? as usize;
    let frame_rate = r.f64("frame rate")?;
    let emotion = r.str("emotion label")?;
    let speaker = r.str("speaker id")?;
    let source = r.str("source id")?;
    let frames = r.f32s(t * c, "frames")?;
    r.verify()?;
    if !r.at_end() {
        return Err(Error::Invalid("trailing bytes after EMOF payload".into()));
    }
    Ok(FeatureMatrix::new(frames, t, c, frame_rate)?.with_labels(source, emotion, speaker))
}

pub fn write_features(fm: &FeatureMatrix, path: &Path) -> Result<()> {
    std::fs::write(path, features_to_bytes(fm)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    features_from_bytes(&bytes)
}
