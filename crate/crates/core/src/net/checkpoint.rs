//! `WRN1` checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "WRN1" | u16 version | u32 len | topology text (len bytes, key=value lines)
//! per unit: kernels, bias[, bn scale, shift, running_mean, running_var]
//!   each array: u32 count | count x f64
//! u32 CRC32 of every preceding byte
//! ```

use std::path::Path;

use super::layers::{BatchNormLayer, ConvLayer};
use super::model::{NetworkParams, Topology, Unit};
use crate::config::Config;
use crate::error::{Error, Result};

fn format(offset: usize, message: impl Into<String>) -> Error {
    Error::format(offset as u64, message)
}

pub const MAGIC: &[u8; 4] = b"WRN1";
pub const VERSION: u16 = 1;

fn put_array(out: &mut Vec<u8>, a: &[f64]) {
    out.extend_from_slice(&(a.len() as u32).to_le_bytes());
    for v in a {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = params.topology.to_config().to_string();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for u in &params.units {
        put_array(&mut out, &u.conv.kernels);
        put_array(&mut out, &u.conv.bias);
        if let Some(bn) = &u.bn {
            put_array(&mut out, &bn.scale);
            put_array(&mut out, &bn.shift);
            put_array(&mut out, &bn.running_mean);
            put_array(&mut out, &bn.running_var);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format(self.buf.len(), format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn array(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        if n != expected {
            return Err(format(at, format!("{what} holds {n} values, topology needs {expected}")));
        }
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| format(at, "size overflow"))?, what)?;
        let v: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(format(at + 4 + 8 * i, format!("non-finite value in {what}")));
        }
        Ok(v)
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<NetworkParams> {
    if buf.len() < 4 {
        return Err(format(buf.len(), "truncated magic"));
    }
    if &buf[..4] != MAGIC {
        return Err(format(0, "not a WRN1 checkpoint"));
    }
    if buf.len() < 10 {
        return Err(format(buf.len(), "truncated header"));
    }
    let body = &buf[..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(format(
            buf.len() - 4,
            format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}"),
        ));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(format(4, format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("topology length")? as usize;
    let text_at = r.pos;
    let text = std::str::from_utf8(r.take(len, "topology block")?)
        .map_err(|_| format(text_at, "topology block is not UTF-8"))?;
    let topology = Topology::from_config(&Config::parse(text)?)?;
    let mut units = Vec::with_capacity(topology.conv_count());
    for (i, (cin, cout, has_bn)) in topology.layer_shapes().into_iter().enumerate() {
        let mut conv = ConvLayer::zeros(cin, cout);
        conv.kernels = r.array(cin * cout * 9, &format!("layer {i} kernels"))?;
        conv.bias = r.array(cout, &format!("layer {i} bias"))?;
        let bn = if has_bn {
            let mut bn = BatchNormLayer::new(cout);
            bn.scale = r.array(cout, &format!("layer {i} scale"))?;
            bn.shift = r.array(cout, &format!("layer {i} shift"))?;
            bn.running_mean = r.array(cout, &format!("layer {i} running mean"))?;
            let at = r.pos;
            bn.running_var = r.array(cout, &format!("layer {i} running variance"))?;
            if bn.running_var.iter().any(|&v| v < 0.0) {
                return Err(format(at, format!("layer {i} has a negative running variance")));
            }
            Some(bn)
        } else {
            None
        };
        units.push(Unit { conv, bn });
    }
    if r.pos != body.len() {
        return Err(format(r.pos, format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(NetworkParams { topology, units })
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &NetworkParams) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}

/// Rejects a checkpoint whose topology differs from the configured one.
pub fn check_topology(params: &NetworkParams, expected: &Topology) -> Result<()> {
    if &params.topology != expected {
        return Err(Error::Config(format!(
            "checkpoint topology {:?} does not match configuration {:?}",
            params.topology, expected
        )));
    }
    Ok(())
}
