//! Versioned binary checkpoints: config echo, vocabularies, and named
//! parameter tensors, all little-endian. Save → load → save is bit-exact,
//! because values travel as raw f64 bytes.
//!
//! Loading reconstructs the model from the embedded config and vocabularies
//! first, then overwrites every tensor by name; a checkpoint whose shapes
//! disagree with its own config echo is rejected naming the tensor.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{ClassifierConfig, ClassifierModel};
use crate::corpus::types::Vocabulary;
use crate::corpus::vocab::Vocabularies;
use crate::detector::{DetectorConfig, DetectorModel};
use crate::error::{Error, Result};
use crate::numeric::params::ParamSet;

const MAGIC: &[u8; 4] = b"NNER";
const VERSION: u32 = 1;
const KIND_DETECTOR: u8 = 0;
const KIND_CLASSIFIER: u8 = 1;

/// Write `bytes` to `path` through a temp file in the same directory plus a
/// rename, so readers never observe a half-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
            std::process::id()
        )),
        None => std::path::PathBuf::from(format!(".atomic.tmp{}", std::process::id())),
    };
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} overflows usize")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-UTF-8 string field".into()))
    }
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn write_vocab(out: &mut Vec<u8>, v: &Vocabulary) {
    push_u64(out, v.reserved() as u64);
    let entries: Vec<&str> = v.all_entries().collect();
    push_u64(out, entries.len() as u64);
    for e in entries {
        push_str(out, e);
    }
}

fn read_vocab(r: &mut Reader) -> Result<Vocabulary> {
    let reserved = r.len()?;
    let count = r.len()?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        entries.push(r.string()?);
    }
    Vocabulary::from_entries(entries, reserved)
}

fn write_params(out: &mut Vec<u8>, ps: &ParamSet) {
    push_u64(out, ps.iter().count() as u64);
    for (_, p) in ps.iter() {
        push_str(out, &p.name);
        out.push(u8::from(p.trainable));
        let shape = p.tensor.shape();
        push_u64(out, shape.len() as u64);
        for &d in shape {
            push_u64(out, d as u64);
        }
        for v in p.tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Overwrite `ps` tensors from the serialized list, by name, validating
/// shapes against the freshly initialized model.
fn apply_params(r: &mut Reader, ps: &mut ParamSet) -> Result<()> {
    let count = r.len()?;
    let expected = ps.iter().count();
    if count != expected {
        return Err(Error::Config(format!(
            "checkpoint holds {count} tensors, configuration expects {expected}"
        )));
    }
    for _ in 0..count {
        let name = r.string()?;
        let trainable = r.u8()? != 0;
        let rank = r.len()?;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.len()?);
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 8)?;
        let id = ps.by_name(&name).ok_or_else(|| {
            Error::Config(format!("checkpoint tensor {name} unknown to this configuration"))
        })?;
        let param = ps.get_mut(id);
        if param.tensor.shape() != dims.as_slice() {
            return Err(Error::Config(format!(
                "tensor {name}: checkpoint shape {:?} vs configured {:?}",
                dims,
                param.tensor.shape()
            )));
        }
        param.trainable = trainable;
        for (i, v) in param.tensor.values_mut().iter_mut().enumerate() {
            *v = f64::from_le_bytes(raw[i * 8..i * 8 + 8].try_into().unwrap());
        }
    }
    Ok(())
}

fn write_header(out: &mut Vec<u8>, kind: u8, config_json: &str) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    push_str(out, config_json);
}

fn write_vocabs(out: &mut Vec<u8>, v: &Vocabularies) {
    write_vocab(out, &v.word);
    write_vocab(out, &v.char);
    write_vocab(out, &v.pos);
    write_vocab(out, &v.label);
}

fn read_header<'a>(r: &mut Reader<'a>, want_kind: u8) -> Result<String> {
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let kind = r.u8()?;
    if kind != want_kind {
        let name = |k| match k {
            KIND_DETECTOR => "detector",
            KIND_CLASSIFIER => "classifier",
            _ => "unknown",
        };
        return Err(Error::Checkpoint(format!(
            "this is a {} checkpoint, wanted a {} one",
            name(kind),
            name(want_kind)
        )));
    }
    r.string()
}

fn read_vocabs(r: &mut Reader) -> Result<Vocabularies> {
    Ok(Vocabularies {
        word: read_vocab(r)?,
        char: read_vocab(r)?,
        pos: read_vocab(r)?,
        label: read_vocab(r)?,
    })
}

pub fn save_detector(model: &DetectorModel, path: &Path) -> Result<()> {
    let config_json = serde_json::to_string(&model.config)
        .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
    let mut out = Vec::new();
    write_header(&mut out, KIND_DETECTOR, &config_json);
    write_vocabs(&mut out, &model.vocabs);
    write_params(&mut out, &model.params);
    atomic_write(path, &out)
}

pub fn load_detector(path: &Path) -> Result<DetectorModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let config_json = read_header(&mut r, KIND_DETECTOR)?;
    let config: DetectorConfig = serde_json::from_str(&config_json)
        .map_err(|e| Error::Checkpoint(format!("config echo does not parse: {e}")))?;
    let vocabs = read_vocabs(&mut r)?;
    let mut model =
        DetectorModel::init(vocabs, config, None, &mut ChaCha8Rng::seed_from_u64(0))?;
    apply_params(&mut r, &mut model.params)?;
    Ok(model)
}

pub fn save_classifier(model: &ClassifierModel, path: &Path) -> Result<()> {
    let config_json = serde_json::to_string(&model.config)
        .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
    let mut out = Vec::new();
    write_header(&mut out, KIND_CLASSIFIER, &config_json);
    write_vocabs(&mut out, &model.vocabs);
    write_params(&mut out, &model.params);
    atomic_write(path, &out)
}

pub fn load_classifier(path: &Path) -> Result<ClassifierModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let config_json = read_header(&mut r, KIND_CLASSIFIER)?;
    let config: ClassifierConfig = serde_json::from_str(&config_json)
        .map_err(|e| Error::Checkpoint(format!("config echo does not parse: {e}")))?;
    let vocabs = read_vocabs(&mut r)?;
    let mut model = ClassifierModel::init(vocabs, config, &mut ChaCha8Rng::seed_from_u64(0))?;
    apply_params(&mut r, &mut model.params)?;
    Ok(model)
}
