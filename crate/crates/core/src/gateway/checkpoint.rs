use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backbone::Vocabulary;
use crate::corpus::RoutingExample;
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tensor, TensorError};
use crate::router::{Router, RouterSpec};

pub const MAGIC: [u8; 4] = *b"LAHD";
pub const VERSION: u16 = 1;

const SECTION_SPEC: u8 = 1;
const SECTION_VOCAB: u8 = 2;
const SECTION_META: u8 = 3;
const SECTION_TENSOR: u8 = 4;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("checksum mismatch in section {section}")]
    Checksum { section: String },
    #[error("tensor {name}: shape {expected:?} expected, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: usize,
    pub best_step: usize,
    /// Validation routing accuracy of the kept weights.
    pub val_score: Option<f64>,
    #[serde(default)]
    pub corpus_digest: Option<String>,
}

/// A router together with its training metadata, as stored on disk.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub router: Router,
    pub meta: TrainingMeta,
}

/// Copy of `router` with every weight rounded to 32-bit precision.
pub fn narrow(router: &Router) -> Router {
    let mut r = router.clone();
    let ids: Vec<_> = r.store().ids().collect();
    for id in ids {
        r.store_mut()
            .value_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = *v as f32 as f64);
    }
    r
}

/// Indices of examples whose routing decision changes when the weights are
/// narrowed to 32 bits.
pub fn narrowing_flips(router: &Router, examples: &[RoutingExample]) -> Result<Vec<usize>> {
    let narrowed = narrow(router);
    let mut flips = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        if router.route(&ex.query)?.selected != narrowed.route(&ex.query)?.selected {
            flips.push(i);
        }
    }
    Ok(flips)
}

impl Checkpoint {
    pub fn new(router: Router, meta: TrainingMeta) -> Self {
        Self { router, meta }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let store = self.router.store();
        let count = 3 + store.len() as u32;
        out.extend_from_slice(&count.to_le_bytes());

        let spec = serde_json::to_vec(self.router.spec()).map_err(|e| Error::Input(e.to_string()))?;
        push_section(&mut out, SECTION_SPEC, &spec);
        let vocab = Vocabulary::new(self.router.models());
        let mut v = Vec::new();
        v.extend_from_slice(&(vocab.models() as u32).to_le_bytes());
        v.extend_from_slice(&(vocab.size() as u32).to_le_bytes());
        push_section(&mut out, SECTION_VOCAB, &v);
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Input(e.to_string()))?;
        push_section(&mut out, SECTION_META, &meta);

        for id in store.ids() {
            let name = store.name(id).as_bytes();
            let value = store.value(id);
            let mut t = Vec::with_capacity(8 + name.len() + 4 * value.len());
            t.extend_from_slice(&(name.len() as u16).to_le_bytes());
            t.extend_from_slice(name);
            t.push(value.shape().len() as u8);
            for &d in value.shape() {
                t.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in value.data() {
                t.extend_from_slice(&(x as f32).to_le_bytes());
            }
            push_section(&mut out, SECTION_TENSOR, &t);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic).into());
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version }.into());
        }
        let count = r.u32()? as usize;
        let mut spec: Option<RouterSpec> = None;
        let mut vocab: Option<(usize, usize)> = None;
        let mut meta: Option<TrainingMeta> = None;
        let mut store = ParamStore::new();
        for i in 0..count {
            let (tag, payload) = r.section(i)?;
            match tag {
                SECTION_SPEC => spec = Some(json(payload, "spec")?),
                SECTION_VOCAB => {
                    let mut p = Reader { buf: payload, pos: 0 };
                    vocab = Some((p.u32()? as usize, p.u32()? as usize));
                }
                SECTION_META => meta = Some(json(payload, "meta")?),
                SECTION_TENSOR => {
                    let (name, tensor) = decode_tensor(payload)?;
                    if store.find(&name).is_some() {
                        return Err(malformed(format!("duplicate tensor {name}")));
                    }
                    store.add(name, tensor);
                }
                other => return Err(malformed(format!("unknown section tag {other}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let spec = spec.ok_or_else(|| malformed("missing spec section".into()))?;
        let meta = meta.ok_or_else(|| malformed("missing meta section".into()))?;
        let (models, size) = vocab.ok_or_else(|| malformed("missing vocabulary section".into()))?;
        let expected = Vocabulary::new(spec.models());
        if models != expected.models() || size != expected.size() || size != spec.backbone().vocab_size {
            return Err(malformed(format!(
                "vocabulary ({models} models, {size} tokens) does not match router with {} models",
                spec.models()
            )));
        }
        let router = Router::from_parts(spec, store).map_err(|e| match e {
            Error::Tensor(TensorError::ShapeMismatch { op, left, right }) => CheckpointError::Shape {
                name: op.trim_start_matches("load ").to_string(),
                expected: right,
                found: left,
            }
            .into(),
            Error::Tensor(TensorError::Contract(m)) => malformed(m),
            other => other,
        })?;
        Ok(Self { router, meta })
    }

    /// Writes the checkpoint after checking that narrowing to 32 bits does
    /// not change any decision on `validation`. Returns warnings.
    pub fn save(&self, path: impl AsRef<Path>, validation: &[RoutingExample]) -> Result<Vec<String>> {
        let flips = narrowing_flips(&self.router, validation)?;
        let mut warnings = Vec::new();
        if !flips.is_empty() {
            let ids: Vec<&str> = flips.iter().take(5).map(|&i| validation[i].id.as_str()).collect();
            warnings.push(format!(
                "32-bit narrowing changes {} of {} validation decisions (e.g. {})",
                flips.len(),
                validation.len(),
                ids.join(", ")
            ));
        }
        fs::write(path, self.encode()?)?;
        Ok(warnings)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// Hex SHA-256 of the encoded checkpoint.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.encode()?)))
    }
}

fn malformed(m: String) -> Error {
    CheckpointError::Malformed(m).into()
}

fn json<T: for<'de> Deserialize<'de>>(payload: &[u8], what: &str) -> Result<T> {
    serde_json::from_slice(payload).map_err(|e| malformed(format!("{what} section: {e}")))
}

fn push_section(out: &mut Vec<u8>, tag: u8, payload: &[u8]) {
    out.push(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
}

fn decode_tensor(payload: &[u8]) -> Result<(String, Tensor)> {
    let mut p = Reader { buf: payload, pos: 0 };
    let n = p.u16()? as usize;
    let name = String::from_utf8(p.take(n)?.to_vec()).map_err(|_| malformed("tensor name is not UTF-8".into()))?;
    let ndim = p.take(1)?[0] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(p.u32()? as usize);
    }
    let rest = payload.len() - p.pos;
    let len: usize = shape.iter().product();
    if rest != 4 * len {
        return Err(CheckpointError::Shape {
            name,
            expected: shape,
            found: vec![rest / 4],
        }
        .into());
    }
    let data = p
        .take(rest)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect();
    let tensor = Tensor::new(&shape, data)?;
    Ok((name, tensor))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            }
            .into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn section(&mut self, index: usize) -> Result<(u8, &'a [u8])> {
        let tag = self.take(1)?[0];
        let len = self.u64()?;
        let len = usize::try_from(len).map_err(|_| malformed(format!("section {index} length {len}")))?;
        let payload = self.take(len)?;
        let crc = self.u32()?;
        if crc32fast::hash(payload) != crc {
            return Err(CheckpointError::Checksum {
                section: format!("#{index} (tag {tag})"),
            }
            .into());
        }
        Ok((tag, payload))
    }
}
