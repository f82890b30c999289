//! Binary checkpoint container: magic `MLR1`, a length-prefixed JSON header,
//! then named tensors until end of file. Integers are u64 little-endian and
//! tensor data is f32 little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use mlr_autodiff::{AdamW, Moments, Tensor};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, RepresentationSpec};
use crate::error::{MlrError, Result};
use crate::model::Model;
use crate::scoring::Pooling;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"MLR1";
const FORMAT_VERSION: u32 = 1;
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";
/// Refuse absurd lengths from corrupt files before allocating.
const MAX_LEN: u64 = 1 << 34;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    encoder: EncoderConfig,
    spec: RepresentationSpec,
    pooling: Pooling,
    step: u64,
    optimizer_steps: Option<u64>,
    train: Option<TrainConfig>,
}

/// A saved model plus whatever is needed to resume training it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<AdamW<f32>>,
    /// Optimizer updates completed.
    pub step: u64,
    pub train: Option<TrainConfig>,
}

pub fn write_tensors<'a>(
    w: &mut impl Write,
    header: &[u8],
    tensors: impl IntoIterator<Item = (String, &'a [usize], &'a [f32])>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(header)?;
    for (name, shape, data) in tensors {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(shape.len() as u64).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| MlrError::format("checkpoint", format!("truncated while reading {what}: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_len(r: &mut impl Read, what: &str) -> Result<usize> {
    let n = read_u64(r, what)?;
    if n > MAX_LEN {
        return Err(MlrError::format("checkpoint", format!("implausible {what} {n}")));
    }
    Ok(n as usize)
}

pub type NamedTensor = (String, Vec<usize>, Vec<f32>);

/// Reads the JSON header bytes and every tensor.
pub fn read_tensors(r: &mut impl Read) -> Result<(Vec<u8>, Vec<NamedTensor>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| MlrError::format("checkpoint", "file too short for magic bytes"))?;
    if &magic != MAGIC {
        return Err(MlrError::format("checkpoint", format!("bad magic {magic:?}, expected MLR1")));
    }
    let hlen = read_len(r, "header length")?;
    let mut header = vec![0u8; hlen];
    r.read_exact(&mut header)
        .map_err(|_| MlrError::format("checkpoint", "truncated header"))?;
    let mut tensors = Vec::new();
    loop {
        let mut first = [0u8; 8];
        // A clean end of file is only allowed between tensors.
        match r.read(&mut first[..1])? {
            0 => break,
            _ => r
                .read_exact(&mut first[1..])
                .map_err(|_| MlrError::format("checkpoint", "truncated tensor name length"))?,
        }
        let nlen = u64::from_le_bytes(first);
        if nlen > 4096 {
            return Err(MlrError::format("checkpoint", format!("implausible name length {nlen}")));
        }
        let mut name = vec![0u8; nlen as usize];
        r.read_exact(&mut name)
            .map_err(|_| MlrError::format("checkpoint", "truncated tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| MlrError::format("checkpoint", "tensor name is not UTF-8"))?;
        let rank = read_len(r, "rank")?;
        if rank > 8 {
            return Err(MlrError::format("checkpoint", format!("`{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_len(r, "dimension")).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n as u64 > MAX_LEN {
            return Err(MlrError::format("checkpoint", format!("`{name}` is implausibly large")));
        }
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| MlrError::format("checkpoint", format!("truncated data for `{name}`")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, shape, data));
    }
    Ok((header, tensors))
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            version: FORMAT_VERSION,
            encoder: self.model.config().clone(),
            spec: self.model.spec.clone(),
            pooling: self.model.pooling,
            step: self.step,
            optimizer_steps: self.optimizer.as_ref().map(|o| o.steps_taken()),
            train: self.train.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| MlrError::format("checkpoint", e.to_string()))?;
        let params = self.model.named_params();
        let mut tensors: Vec<(String, &[usize], &[f32])> =
            params.iter().map(|(n, t)| (n.clone(), t.shape(), t.data())).collect();
        if let Some(opt) = &self.optimizer {
            for (name, mom) in opt.state() {
                let shape = params
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| t.shape())
                    .ok_or_else(|| MlrError::Invalid(format!("optimizer state for unknown parameter `{name}`")))?;
                tensors.push((format!("{ADAM_M}{name}"), shape, &mom.m));
                tensors.push((format!("{ADAM_V}{name}"), shape, &mom.v));
            }
        }
        let file = File::create(path).map_err(MlrError::io(path))?;
        let mut w = BufWriter::new(file);
        write_tensors(&mut w, &header, tensors)?;
        w.flush().map_err(MlrError::io(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(MlrError::io(path))?;
        let (header, tensors) = read_tensors(&mut BufReader::new(file))?;
        let header: Header =
            serde_json::from_slice(&header).map_err(|e| MlrError::format("checkpoint header", e.to_string()))?;
        if header.version != FORMAT_VERSION {
            return Err(MlrError::format(
                "checkpoint",
                format!("unsupported version {}", header.version),
            ));
        }
        let mut params = Vec::new();
        let mut m_state = BTreeMap::new();
        let mut v_state = BTreeMap::new();
        for (name, shape, data) in tensors {
            if let Some(n) = name.strip_prefix(ADAM_M) {
                m_state.insert(n.to_string(), data);
            } else if let Some(n) = name.strip_prefix(ADAM_V) {
                v_state.insert(n.to_string(), data);
            } else {
                params.push((name, Tensor::new(shape, data)?));
            }
        }
        let model = Model::from_named(header.encoder, header.spec, header.pooling, params)?;
        let optimizer = match header.optimizer_steps {
            None => None,
            Some(steps) => {
                let mut state = BTreeMap::new();
                for (name, m) in m_state {
                    let v = v_state
                        .remove(&name)
                        .ok_or_else(|| MlrError::format("checkpoint", format!("missing second moment for `{name}`")))?;
                    state.insert(name, Moments { m, v });
                }
                let cfg = header.train.as_ref().map(|t| t.adamw()).unwrap_or_default();
                Some(AdamW::from_state(cfg, steps, state))
            }
        };
        Ok(Self {
            model,
            optimizer,
            step: header.step,
            train: header.train,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let mut buf = Vec::new();
        let a = [1.5f32, -2.0, 3.25];
        write_tensors(&mut buf, b"{}", [("w".to_string(), &[3usize][..], &a[..])]).unwrap();
        assert_eq!(&buf[..4], b"MLR1");
        let (h, t) = read_tensors(&mut &buf[..]).unwrap();
        assert_eq!(h, b"{}");
        assert_eq!(t, vec![("w".to_string(), vec![3], a.to_vec())]);
    }

    #[test]
    fn corrupt_input_rejected() {
        let mut buf = Vec::new();
        write_tensors(&mut buf, b"{}", [("w".to_string(), &[2usize][..], &[1.0f32, 2.0][..])]).unwrap();
        assert!(read_tensors(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensors(&mut &bad[..]).is_err());
        assert!(read_tensors(&mut &buf[..6]).is_err());
    }
}
