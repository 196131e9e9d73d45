//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, JSON
//! header, then the body as little-endian `f64`: for each network (generator
//! nc→ct, generator ct→nc, discriminator ct, discriminator nc) every
//! parameter's value, first moment and second moment; then the contrast and
//! non-contrast history pools. The header carries the body's SHA-256.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GanError, Result};
use crate::optim::Adam;
use crate::pool::ImagePool;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{CycleGan, LedgerRow, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"NC2CCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    config_hash: String,
    epoch: usize,
    iteration: u64,
    opt_g: Adam,
    opt_d: Adam,
    /// Parameter lengths per network.
    params: Vec<Vec<usize>>,
    pool_ct: Vec<[usize; 4]>,
    pool_nc: Vec<[usize; 4]>,
    ledger: Vec<LedgerRow>,
    body_len: u64,
    body_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn push<T: Scalar>(body: &mut Vec<u8>, values: &[T]) {
    for v in values {
        body.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
    }
}

pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    let mut params = Vec::new();
    for net in state.nets.networks() {
        let ps = net.params();
        params.push(ps.iter().map(|p| p.len()).collect());
        for p in ps {
            push(&mut body, &p.value);
            push(&mut body, &p.m);
            push(&mut body, &p.v);
        }
    }
    for pool in [&state.pool_ct, &state.pool_nc] {
        for img in &pool.images {
            push(&mut body, img.data());
        }
    }
    let header = Header {
        config: state.config.clone(),
        config_hash: state.config.hash(),
        epoch: state.epoch,
        iteration: state.iteration,
        opt_g: state.opt_g,
        opt_d: state.opt_d,
        params,
        pool_ct: state.pool_ct.images.iter().map(Tensor::shape).collect(),
        pool_nc: state.pool_nc.images.iter().map(Tensor::shape).collect(),
        ledger: state.ledger.clone(),
        body_len: body.len() as u64,
        body_sha256: hex(&Sha256::digest(&body)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, out)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

struct Body<'a> {
    bytes: &'a [u8],
}

impl Body<'_> {
    fn take<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        let (head, rest) = self.bytes.split_at(n * 8);
        self.bytes = rest;
        head.chunks_exact(8)
            .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
            .collect()
    }
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<TrainState<T>> {
    let corrupt = |message: String| GanError::Checkpoint { path: path.to_path_buf(), message };
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..header_end]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let body = &bytes[header_end..];
    if body.len() as u64 != header.body_len || hex(&Sha256::digest(body)) != header.body_sha256 {
        return Err(corrupt("body length or checksum mismatch".into()));
    }
    if header.config.hash() != header.config_hash {
        return Err(corrupt("config hash mismatch".into()));
    }
    header.config.validate()?;

    let mut nets = CycleGan::<T>::new(&header.config.generator, &header.config.discriminator, header.config.seed)?;
    let expected: Vec<Vec<usize>> = nets.networks().iter().map(|n| n.params().iter().map(|p| p.len()).collect()).collect();
    if expected != header.params {
        return Err(corrupt("parameter layout does not match the configured networks".into()));
    }
    let pooled: usize = header.pool_ct.iter().chain(&header.pool_nc).map(|s| s.iter().product::<usize>()).sum();
    let param_total: usize = expected.iter().flatten().sum();
    if (3 * param_total + pooled) * 8 != body.len() {
        return Err(corrupt("body size does not match the header".into()));
    }
    let mut reader = Body { bytes: body };
    for net in nets.networks_mut() {
        for p in net.params_mut() {
            let n = p.len();
            p.value = reader.take(n);
            p.m = reader.take(n);
            p.v = reader.take(n);
        }
    }
    let mut pool = |shapes: &[[usize; 4]]| -> Result<ImagePool<T>> {
        let mut pool = ImagePool::new(header.config.pool_size);
        for &s in shapes {
            pool.images.push(Tensor::from_vec(s, reader.take(s.iter().product()))?);
        }
        Ok(pool)
    };
    let pool_ct = pool(&header.pool_ct)?;
    let pool_nc = pool(&header.pool_nc)?;
    Ok(TrainState {
        config: header.config,
        nets,
        opt_g: header.opt_g,
        opt_d: header.opt_d,
        pool_ct,
        pool_nc,
        epoch: header.epoch,
        iteration: header.iteration,
        ledger: header.ledger,
    })
}
