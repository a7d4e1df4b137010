//! Binary checkpoint format.
//!
//! ```text
//! "SFCB" | u32 format version | u32 config length | config (key=value lines, UTF-8)
//! u32 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims…, f64 data…
//! ```
//!
//! All integers and floats are little-endian; tensor data is row-major.
//! A sibling `.manifest` text file lists `name<TAB>shape` per tensor.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::optim::OptimizerState;
use super::params::{EncoderConfig, ModelParams, ParamGroup};
use super::tensor::Tensor;
use super::NnError;
use crate::text::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SFCB";
pub const CHECKPOINT_VERSION: u32 = 1;

fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest")
}

fn config_block(p: &ModelParams) -> String {
    let c = &p.config;
    format!(
        "embed_dim={}\nlayers={}\nheads={}\nffn_dim={}\nmax_seq_len={}\nvocab_size={}\nseed={}\nversion={}\nranking_step={}\nsatisfaction_step={}\n",
        c.embed_dim,
        c.layers,
        c.heads,
        c.ffn_dim,
        c.max_seq_len,
        p.vocab_size,
        p.seed,
        p.version,
        p.ranking_opt.step,
        p.satisfaction_opt.step
    )
}

fn all_tensors(p: &ModelParams) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    p.ranking.visit("ranking", &mut |n, t| out.push((n, t)));
    p.satisfaction
        .visit("satisfaction", &mut |n, t| out.push((n, t)));
    p.ranking_opt
        .moment
        .visit("opt.ranking.moment", &mut |n, t| out.push((n, t)));
    p.ranking_opt
        .inf_norm
        .visit("opt.ranking.inf_norm", &mut |n, t| out.push((n, t)));
    p.satisfaction_opt
        .moment
        .visit("opt.satisfaction.moment", &mut |n, t| out.push((n, t)));
    p.satisfaction_opt
        .inf_norm
        .visit("opt.satisfaction.inf_norm", &mut |n, t| out.push((n, t)));
    out
}

fn all_tensors_mut(p: &mut ModelParams) -> Vec<(String, &mut Tensor)> {
    let mut out = Vec::new();
    p.ranking.visit_mut("ranking", &mut |n, t| out.push((n, t)));
    p.satisfaction
        .visit_mut("satisfaction", &mut |n, t| out.push((n, t)));
    p.ranking_opt
        .moment
        .visit_mut("opt.ranking.moment", &mut |n, t| out.push((n, t)));
    p.ranking_opt
        .inf_norm
        .visit_mut("opt.ranking.inf_norm", &mut |n, t| out.push((n, t)));
    p.satisfaction_opt
        .moment
        .visit_mut("opt.satisfaction.moment", &mut |n, t| out.push((n, t)));
    p.satisfaction_opt
        .inf_norm
        .visit_mut("opt.satisfaction.inf_norm", &mut |n, t| out.push((n, t)));
    out
}

pub fn encode_checkpoint(p: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = config_block(p);
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    let tensors = all_tensors(p);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

/// Writes the checkpoint and its manifest next to it.
pub fn write_checkpoint(p: &ModelParams, path: impl AsRef<Path>) -> Result<(), NnError> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(p);
    let tmp = path.with_extension("sfcb.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    let mut manifest = BufWriter::new(fs::File::create(manifest_path(path))?);
    for (name, t) in all_tensors(p) {
        let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(manifest, "{name}\t{}", shape.join("x"))?;
    }
    manifest.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn parse_config(text: &str) -> Result<BTreeMap<String, u64>, NnError> {
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| NnError::Checkpoint(format!("bad config line {line:?}")))?;
        let v: u64 = v
            .trim()
            .parse()
            .map_err(|_| NnError::Checkpoint(format!("bad config value {line:?}")))?;
        map.insert(k.trim().to_string(), v);
    }
    Ok(map)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams, NnError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let cfg_len = cur.u32()? as usize;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len)?)
        .map_err(|_| NnError::Checkpoint("config block is not UTF-8".into()))?;
    let kv = parse_config(cfg_text)?;
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| NnError::Checkpoint(format!("missing config key {k}")))
    };
    let config = EncoderConfig {
        embed_dim: get("embed_dim")? as usize,
        layers: get("layers")? as usize,
        heads: get("heads")? as usize,
        ffn_dim: get("ffn_dim")? as usize,
        max_seq_len: get("max_seq_len")? as usize,
    };
    let mut params = ModelParams::init(config, get("vocab_size")? as usize, get("seed")?)?;
    params.version = get("version")?;
    params.ranking_opt = OptimizerState::new(&params.ranking);
    params.satisfaction_opt = OptimizerState::new(&params.satisfaction);
    params.ranking_opt.step = get("ranking_step")?;
    params.satisfaction_opt.step = get("satisfaction_step")?;

    let count = cur.u32()? as usize;
    let mut loaded: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| cur.f64()).collect::<Result<Vec<_>, _>>()?;
        loaded.insert(name, Tensor { shape, data });
    }
    if cur.pos != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    let expected = all_tensors_mut(&mut params);
    if expected.len() != loaded.len() {
        return Err(NnError::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            loaded.len()
        )));
    }
    for (name, slot) in expected {
        let t = loaded
            .remove(&name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape != slot.shape {
            return Err(NnError::Checkpoint(format!(
                "tensor {name}: shape {:?} does not match config {:?}",
                t.shape, slot.shape
            )));
        }
        *slot = t;
    }
    Ok(params)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, NnError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

/// Loads whitespace-separated word vectors (`token v1 … vD`) into both
/// embedding tables. Returns the number of vocabulary rows replaced.
pub fn load_pretrained_embeddings(
    params: &mut ModelParams,
    vocab: &Vocabulary,
    path: impl AsRef<Path>,
) -> Result<usize, NnError> {
    let d = params.config.embed_dim;
    let reader = BufReader::new(fs::File::open(path)?);
    let mut replaced = 0;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                NnError::Io(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("line {}: {e}", line_no + 1),
                ))
            })?;
        if values.len() != d {
            return Err(NnError::DimensionMismatch {
                expected: d,
                found: values.len(),
            });
        }
        if !vocab.contains(token) {
            continue;
        }
        let id = vocab.id(token) as usize;
        params
            .ranking
            .embeddings
            .row_mut(id)
            .copy_from_slice(&values);
        params
            .satisfaction
            .embeddings
            .row_mut(id)
            .copy_from_slice(&values);
        replaced += 1;
    }
    Ok(replaced)
}
