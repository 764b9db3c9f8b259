//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `AGCNCKPT`, `u32` version, `u64`-prefixed
//! config TOML, 32-byte SHA-256 of that TOML, `u32` matrix count, then per
//! matrix a `u64`-prefixed name, `u64` rows, `u64` cols and raw `f64` data,
//! then a `u64`-prefixed JSON block with the scalar training state, and finally
//! a SHA-256 over every preceding byte.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::trainer::{AttrInputs, EarlyStopping, EpochLog, OptimizerState, RngState, Snapshot, TrainConfig, TrainState};

const MAGIC: &[u8; 8] = b"AGCNCKPT";
pub const VERSION: u32 = 1;

/// Scalar part of [`TrainState`].
#[derive(Serialize, Deserialize)]
struct Meta {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    layers: usize,
    epoch: usize,
    rng: RngState,
    stopper: EarlyStopping,
    best_epoch: Option<usize>,
    log: Vec<EpochLog>,
    finished: bool,
}

/// A loaded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

/// SHA-256 of the config's TOML text, hex encoded.
pub fn config_digest(config: &TrainConfig) -> String {
    hex(&Sha256::digest(config.to_toml().as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn params_named<'a>(prefix: &str, p: &'a ModelParams) -> Vec<(String, &'a Array2<f64>)> {
    p.named().into_iter().map(|(n, m)| (format!("{prefix}{n}"), m)).collect()
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

pub fn encode(config: &TrainConfig, state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config.to_toml();
    put_bytes(&mut out, cfg.as_bytes());
    out.extend_from_slice(&Sha256::digest(cfg.as_bytes()));

    let mut mats = params_named("param.", &state.params);
    mats.extend(params_named("adam_m.", &state.optimizer.m));
    mats.extend(params_named("adam_v.", &state.optimizer.v));
    mats.push(("attrs.x".into(), &state.inputs.x));
    mats.push(("attrs.y".into(), &state.inputs.y));
    if let Some(best) = &state.best {
        mats.extend(params_named("best.", &best.params));
        mats.push(("best.attrs.x".into(), &best.inputs.x));
        mats.push(("best.attrs.y".into(), &best.inputs.y));
    }
    out.extend_from_slice(&(mats.len() as u32).to_le_bytes());
    for (name, m) in mats {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = Meta {
        step: state.optimizer.step,
        beta1: state.optimizer.beta1,
        beta2: state.optimizer.beta2,
        eps: state.optimizer.eps,
        layers: state.params.layers.len(),
        epoch: state.epoch,
        rng: state.rng.clone(),
        stopper: state.stopper.clone(),
        best_epoch: state.best.as_ref().map(|b| b.epoch),
        log: state.log.clone(),
        finished: state.finished,
    };
    put_bytes(&mut out, serde_json::to_string(&meta).expect("meta serializes").as_bytes());
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    fn text(&mut self) -> Result<&'a str> {
        std::str::from_utf8(self.bytes()?).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if !body.starts_with(MAGIC) {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let cfg_text = r.text()?;
    if Sha256::digest(cfg_text.as_bytes()).as_slice() != r.take(32)? {
        return Err(Error::Checkpoint("config digest mismatch".into()));
    }
    let config = TrainConfig::from_toml(cfg_text)?;

    let count = r.u32()? as usize;
    let mut mats = std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let name = r.text()?.to_string();
        let (rows, cols) = (r.len()?, r.len()?);
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint("matrix size overflow".into()))?;
        let data = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let m = Array2::from_shape_vec((rows, cols), data).expect("size checked");
        mats.insert(name, m);
    }
    let meta: Meta = serde_json::from_str(r.text()?).map_err(|e| Error::Checkpoint(format!("state block: {e}")))?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes before checksum".into()));
    }

    let mut take = |name: &str| {
        mats.remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing matrix {name}")))
    };
    let mut params_from = |prefix: &str| -> Result<ModelParams> {
        let mut layers = Vec::with_capacity(meta.layers);
        for k in 1..=meta.layers {
            layers.push(take(&format!("{prefix}W^{k}"))?);
        }
        Ok(ModelParams {
            p: take(&format!("{prefix}P"))?,
            q: take(&format!("{prefix}Q"))?,
            w_u: take(&format!("{prefix}W_u"))?,
            w_v: take(&format!("{prefix}W_v"))?,
            layers,
            w_x: take(&format!("{prefix}W_x"))?,
            w_y: take(&format!("{prefix}W_y"))?,
        })
    };
    let params = params_from("param.")?;
    let m = params_from("adam_m.")?;
    let v = params_from("adam_v.")?;
    let best = match meta.best_epoch {
        Some(epoch) => Some(Snapshot {
            params: params_from("best.")?,
            inputs: AttrInputs {
                x: take("best.attrs.x")?,
                y: take("best.attrs.y")?,
            },
            epoch,
        }),
        None => None,
    };
    let inputs = AttrInputs {
        x: take("attrs.x")?,
        y: take("attrs.y")?,
    };
    if params.dims() != m.dims() || params.dims() != v.dims() {
        return Err(Error::Checkpoint("optimizer moments do not match parameter shapes".into()));
    }
    Ok(Checkpoint {
        config,
        state: TrainState {
            params,
            optimizer: OptimizerState {
                m,
                v,
                step: meta.step,
                beta1: meta.beta1,
                beta2: meta.beta2,
                eps: meta.eps,
            },
            inputs,
            epoch: meta.epoch,
            rng: meta.rng,
            stopper: meta.stopper,
            best,
            log: meta.log,
            finished: meta.finished,
        },
    })
}

/// Writes atomically via a sibling temporary file.
pub fn save(path: &Path, config: &TrainConfig, state: &TrainState) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(config, state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
