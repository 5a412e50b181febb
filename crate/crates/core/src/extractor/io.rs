//! `EMOM` model files.
//!
//! Layout (little-endian): `"EMOM"`, version `u32`, JSON header as
//! `u32`-length-prefixed UTF-8, tensor count `u32`, then per tensor: name
//! (length-prefixed UTF-8), dtype `u32` (0 = f32, 1 = f64), rank `u32`,
//! dims `u32 × rank`, payload; finally a CRC32 of all preceding bytes.
//! Normalization statistics travel as the tensors `norm.mean`/`norm.std`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExtractorConfig, ModelParams, RankModel};
use crate::binio::{SectionReader, SectionWriter};
use crate::emotion::EmotionVocab;
use crate::features::NormStats;
use crate::numerics::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"EMOM";
const VERSION: u32 = 1;

/// Storage precision of tensor payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    extractor: ExtractorConfig,
    emotions: EmotionVocab,
    provenance: BTreeMap<String, String>,
}

pub(crate) fn write_tensor_table<'a>(
    w: &mut SectionWriter,
    tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
    precision: Precision,
) {
    w.u32(tensors.len() as u32);
    for (name, t) in tensors {
        w.str(name);
        w.u32(match precision {
            Precision::F32 => 0,
            Precision::F64 => 1,
        });
        w.u32(t.rank() as u32);
        for d in t.shape() {
            w.u32(*d as u32);
        }
        for v in t.data() {
            match precision {
                Precision::F32 => w.f32(*v as f32),
                Precision::F64 => w.f64(*v),
            }
        }
    }
}

pub(crate) fn read_tensor_table(r: &mut SectionReader<'_>) -> Result<BTreeMap<String, Tensor>> {
    let n = r.u32("tensor count")? as usize;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let name = r.str("tensor name")?;
        let dtype = r.u32("dtype")?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dim")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .ok_or_else(|| Error::Truncated(format!("{name}: shape overflow")))?;
        let data = match dtype {
            0 => r
                .f32s(numel, &name)?
                .into_iter()
                .map(f64::from)
                .collect(),
            1 => r.f64s(numel, &name)?,
            d => return Err(Error::Invalid(format!("{name}: unknown dtype {d}"))),
        };
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Invalid(format!("duplicate tensor {name}")));
        }
    }
    Ok(out)
}

pub(crate) fn write_model_section(model: &RankModel, precision: Precision) -> Result<SectionWriter> {
    let header = Header {
        extractor: model.config.clone(),
        emotions: model.vocab.clone(),
        provenance: model.provenance.clone(),
    };
    let mut w = SectionWriter::new(MAGIC, VERSION);
    w.str(&serde_json::to_string(&header)?);
    let norm_mean = Tensor::vector(model.params.norm.mean.clone());
    let norm_std = Tensor::vector(model.params.norm.std.clone());
    let mut all: BTreeMap<&str, &Tensor> = model
        .params
        .tensors
        .iter()
        .map(|(k, v)| (k.as_str(), v))
        .collect();
    all.insert("norm.mean", &norm_mean);
    all.insert("norm.std", &norm_std);
    write_tensor_table(&mut w, all.into_iter(), precision);
    w.seal();
    Ok(w)
}

pub(crate) fn read_model_section(r: &mut SectionReader<'_>) -> Result<RankModel> {
    r.open(MAGIC, VERSION)?;
    let header: Header = serde_json::from_str(&r.str("header")?)?;
    let mut tensors = read_tensor_table(r)?;
    r.verify()?;
    header.extractor.validate()?;
    if header.emotions.len() != header.extractor.n_emotion_classes {
        return Err(Error::Dimension("emotion vocabulary does not match config".into()));
    }
    let mean = tensors
        .remove("norm.mean")
        .ok_or_else(|| Error::Invalid("missing norm.mean".into()))?;
    let std = tensors
        .remove("norm.std")
        .ok_or_else(|| Error::Invalid("missing norm.std".into()))?;
    let params = ModelParams {
        tensors,
        norm: NormStats {
            mean: mean.into_data(),
            std: std.into_data(),
        },
    };
    params.check_shapes(&header.extractor)?;
    Ok(RankModel {
        config: header.extractor,
        vocab: header.emotions,
        params,
        provenance: header.provenance,
    })
}

pub fn model_to_bytes(model: &RankModel, precision: Precision) -> Result<Vec<u8>> {
    Ok(write_model_section(model, precision)?.into_bytes())
}

/// Parses a model; trailing sections (such as a checkpoint's optimizer
/// state) are ignored.
pub fn model_from_bytes(bytes: &[u8]) -> Result<RankModel> {
    read_model_section(&mut SectionReader::new(bytes))
}

/// Writes the model with `f32` payloads.
pub fn save_model(model: &RankModel, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model, Precision::F32)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<RankModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
