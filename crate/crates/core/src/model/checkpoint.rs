//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SPFN"
//!      4     2  format version (1)
//!      6     2  flags; bit 0 = optimizer state present
//!      8    24  d_max, hidden, layers, heads, bins, ffn (u32 each)
//!     32     8  model seed (u64)
//!     40     1  block variant (0 standard, 1 parallel)
//!     41     1  transform kind (0 lognormal2normal, 1 time2quantile)
//!     42     6  zero padding
//!     48     8  training step (u64)
//!     56     8  parameter count n (u64)
//!     64    8n  parameters (f64)
//!      .     .  if flag bit 0: adam step (u64), first moments (8n), second moments (8n)
//!      .    32  SHA-256 of every preceding byte
//! ```

use sha2::{Digest, Sha256};

use super::{BlockVariant, Layout, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::timewarp::TransformKind;

pub const MAGIC: &[u8; 4] = b"SPFN";
pub const VERSION: u16 = 1;
const FLAG_OPTIMIZER: u16 = 1;
const HEADER_LEN: usize = 64;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub params: Vec<f64>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: u64, optimizer: Option<OptimizerState>) -> Self {
        Self {
            config: model.config.clone(),
            step,
            params: model.params.clone(),
            optimizer,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        Model::from_params(self.config, self.params)
    }
}

fn err(detail: impl Into<String>) -> Error {
    Error::format("checkpoint", detail)
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    ck.config.validate()?;
    let n = ck.params.len();
    if n != Layout::new(&ck.config).total {
        return Err(Error::config(
            "parameter count does not match the model configuration",
        ));
    }
    if let Some(opt) = &ck.optimizer {
        if opt.m.len() != n || opt.v.len() != n {
            return Err(Error::config(
                "optimizer moments do not match the parameter count",
            ));
        }
    }
    let extra = ck.optimizer.as_ref().map_or(0, |_| 8 + 16 * n);
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n + extra + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if ck.optimizer.is_some() {
        FLAG_OPTIMIZER
    } else {
        0
    };
    out.extend_from_slice(&flags.to_le_bytes());
    let c = &ck.config;
    for v in [c.d_max, c.hidden, c.layers, c.heads, c.bins, c.ffn] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.push(c.variant.code());
    out.push(c.transform.code());
    out.extend_from_slice(&[0; 6]);
    out.extend_from_slice(&ck.step.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    let floats = |out: &mut Vec<u8>, xs: &[f64]| {
        xs.iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes()))
    };
    floats(&mut out, &ck.params);
    if let Some(opt) = &ck.optimizer {
        out.extend_from_slice(&opt.step.to_le_bytes());
        floats(&mut out, &opt.m);
        floats(&mut out, &opt.v);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| err("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(err(format!(
            "{} bytes is shorter than the fixed header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(err("bad magic; not a checkpoint file"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != sum {
        return Err(err("checksum mismatch; the file is corrupt or truncated"));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(err(format!("unsupported format version {version}")));
    }
    let flags = r.u16()?;
    if flags & !FLAG_OPTIMIZER != 0 {
        return Err(err(format!("unknown flag bits {flags:#06x}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let seed = r.u64()?;
    let variant = r.take(1)?[0];
    let transform = r.take(1)?[0];
    let config = ModelConfig {
        d_max: dims[0],
        hidden: dims[1],
        layers: dims[2],
        heads: dims[3],
        bins: dims[4],
        ffn: dims[5],
        seed,
        variant: BlockVariant::from_code(variant)
            .ok_or_else(|| err(format!("unknown block variant {variant}")))?,
        transform: TransformKind::from_code(transform)
            .ok_or_else(|| err(format!("unknown transform kind {transform}")))?,
    };
    if r.take(6)?.iter().any(|b| *b != 0) {
        return Err(err("nonzero header padding"));
    }
    let step = r.u64()?;
    let n = r.u64()?;
    let remaining = (body.len() - r.pos) as u64;
    let per_param = if flags & FLAG_OPTIMIZER != 0 { 24 } else { 8 };
    if n.checked_mul(per_param).is_none_or(|b| b > remaining) {
        return Err(err(format!("parameter count {n} exceeds the file size")));
    }
    let n = n as usize;
    config.validate().map_err(|e| err(e.to_string()))?;
    let expected = Layout::new(&config).total;
    if n != expected {
        return Err(err(format!(
            "{n} parameters stored, configuration needs {expected}"
        )));
    }
    let params = r.floats(n)?;
    let optimizer = if flags & FLAG_OPTIMIZER != 0 {
        let step = r.u64()?;
        Some(OptimizerState {
            step,
            m: r.floats(n)?,
            v: r.floats(n)?,
        })
    } else {
        None
    };
    if r.pos != body.len() {
        return Err(err(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint {
        config,
        step,
        params,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadInit;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            d_max: 2,
            hidden: 4,
            layers: 1,
            heads: 2,
            bins: 3,
            ffn: 4,
            seed: 9,
            ..Default::default()
        };
        Model::new(cfg, HeadInit::Random).unwrap()
    }

    #[test]
    fn round_trip_with_and_without_optimizer() {
        let m = tiny();
        let n = m.n_params();
        for opt in [
            None,
            Some(OptimizerState {
                step: 5,
                m: vec![0.5; n],
                v: vec![0.25; n],
            }),
        ] {
            let ck = Checkpoint::from_model(&m, 17, opt);
            let bytes = encode_checkpoint(&ck).unwrap();
            assert_eq!(&bytes[..4], b"SPFN");
            assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&Checkpoint::from_model(&tiny(), 0, None)).unwrap();
        let mut bad = bytes.clone();
        bad[70] ^= 1;
        assert!(decode_checkpoint(&bad)
            .unwrap_err()
            .to_string()
            .contains("checksum"));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(decode_checkpoint(&magic)
            .unwrap_err()
            .to_string()
            .contains("magic"));
    }
}
