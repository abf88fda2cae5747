//! Binary checkpoint: magic, version, JSON architecture descriptor, f32
//! little-endian parameters, SHA-256 of the parameter bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::net::{Architecture, LaneNet};
use super::{INPUT_SIZE, MEAN, STD};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RSIGCNN\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub model: String,
    pub architecture: Architecture,
    pub param_count: usize,
    pub dtype: String,
    pub input: [usize; 3],
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Descriptor {
    fn for_arch(arch: Architecture) -> Self {
        Descriptor {
            model: "lane-cnn".into(),
            architecture: arch,
            param_count: arch.param_count(),
            dtype: "f32le".into(),
            input: [3, INPUT_SIZE, INPUT_SIZE],
            mean: MEAN,
            std: STD,
        }
    }
}

pub fn encode_checkpoint(net: &LaneNet<f32>) -> Result<Vec<u8>> {
    let desc = serde_json::to_vec(&Descriptor::for_arch(net.arch))?;
    let mut params = Vec::with_capacity(net.param_count() * 4);
    for s in net.param_slices() {
        for v in s {
            params.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(16 + desc.len() + params.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(&desc);
    out.extend_from_slice(&params);
    out.extend_from_slice(&Sha256::digest(&params));
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn u32_at(bytes: &mut &[u8]) -> Result<u32> {
    let b = take(bytes, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<LaneNet<f32>> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32_at(&mut bytes)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u32_at(&mut bytes)? as usize;
    let desc: Descriptor = serde_json::from_slice(take(&mut bytes, len)?)?;
    let expect = Descriptor::for_arch(desc.architecture);
    if desc != expect {
        return Err(Error::Checkpoint(format!(
            "descriptor mismatch: {desc:?}, expected {expect:?}"
        )));
    }
    desc.architecture.validate()?;
    let params = take(&mut bytes, desc.param_count * 4)?;
    let digest = take(&mut bytes, 32)?;
    if !bytes.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    if Sha256::digest(params).as_slice() != digest {
        return Err(Error::Checkpoint("parameter checksum mismatch".into()));
    }
    let mut net = LaneNet::<f32>::zeros(desc.architecture);
    let mut chunks = params.chunks_exact(4);
    for s in net.param_slices_mut() {
        for v in s.iter_mut() {
            let c = chunks.next().expect("length checked");
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    Ok(net)
}

pub fn save_checkpoint(net: &LaneNet<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_checkpoint(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LaneNet<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
