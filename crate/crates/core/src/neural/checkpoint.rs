//! Flat binary network checkpoints.
//!
//! Layout, all integers and floats little-endian:
//! `b"MFGQNET1"`, flags `u32`, tau `f64`, horizon `u32`, states `u32`,
//! layer count `u32`, one `u32` per layer size, then every parameter as
//! `f64` in the network's flat order (row-major weights, then biases, per
//! layer).

use crate::error::{Error, Result};
use crate::neural::mlp::Mlp;
use crate::neural::InputEncoding;

pub const MAGIC: &[u8; 8] = b"MFGQNET1";

const FLAG_POPULATION: u32 = 1;
const FLAG_NOISE: u32 = 2;
const MAX_LAYERS: usize = 64;
const MAX_WIDTH: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: Mlp,
    pub tau: f64,
    pub encoding: InputEncoding,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let sizes = self.net.sizes();
        let mut out = Vec::with_capacity(32 + 4 * sizes.len() + 8 * self.net.num_params());
        out.extend_from_slice(MAGIC);
        let mut flags = 0;
        if self.encoding.population {
            flags |= FLAG_POPULATION;
        }
        if self.encoding.noise {
            flags |= FLAG_NOISE;
        }
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&self.tau.to_le_bytes());
        out.extend_from_slice(&(self.encoding.horizon as u32).to_le_bytes());
        out.extend_from_slice(&(self.encoding.num_states as u32).to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for &s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for p in self.net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let flags = r.u32()?;
        if flags & !(FLAG_POPULATION | FLAG_NOISE) != 0 {
            return Err(Error::Checkpoint(format!("unknown flag bits {flags:#x}")));
        }
        let tau = r.f64()?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Checkpoint(format!("temperature {tau} is not positive")));
        }
        let horizon = r.u32()? as usize;
        let num_states = r.u32()? as usize;
        let count = r.u32()? as usize;
        if !(2..=MAX_LAYERS).contains(&count) {
            return Err(Error::Checkpoint(format!("{count} layers")));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            let s = r.u32()? as usize;
            if s == 0 || s > MAX_WIDTH {
                return Err(Error::Checkpoint(format!("layer width {s}")));
            }
            sizes.push(s);
        }
        let mut expected: usize = 0;
        for w in sizes.windows(2) {
            expected = w[0]
                .checked_mul(w[1])
                .and_then(|m| m.checked_add(w[1]))
                .and_then(|m| m.checked_add(expected))
                .ok_or_else(|| Error::Checkpoint("parameter count overflows".into()))?;
        }
        let remaining = bytes.len() - r.pos;
        if expected.checked_mul(8) != Some(remaining) {
            return Err(Error::Checkpoint(format!(
                "{remaining} parameter bytes for {expected} parameters"
            )));
        }
        let mut params = Vec::with_capacity(expected);
        for i in 0..expected {
            let p = r.f64()?;
            if !p.is_finite() {
                return Err(Error::Checkpoint(format!("parameter {i} is not finite")));
            }
            params.push(p);
        }
        let encoding = InputEncoding {
            horizon,
            num_states,
            population: flags & FLAG_POPULATION != 0,
            noise: flags & FLAG_NOISE != 0,
        };
        if encoding.len() != sizes[0] {
            return Err(Error::Checkpoint(format!(
                "input width {} does not match the encoding length {}",
                sizes[0],
                encoding.len()
            )));
        }
        let net = Mlp::from_params(&sizes, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint { net, tau, encoding })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
