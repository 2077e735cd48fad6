//! Checkpoint container: `MASN` magic, a format version, the canonical
//! spec text and every tensor in declaration order as
//! `(name_len u32, name, rank u32, dims u32 x rank, f32 LE payload)`.
//! No compression; a byte-identical file is produced for equal networks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, LayerKind, LayerSpec, Network, NetworkSpec};

const MAGIC: &[u8; 4] = b"MASN";
const VERSION: u32 = 1;

/// Canonical, newline-terminated textual form of a spec. Parsing this text
/// and re-rendering it is the identity, which keeps checkpoints re-savable
/// byte-for-byte.
pub(crate) fn spec_to_text(spec: &NetworkSpec) -> String {
    let mut out = String::new();
    out.push_str("masnet-spec v1\n");
    out.push_str(&format!("name {}\n", spec.name));
    for l in &spec.layers {
        out.push_str(&format!(
            "layer {} in={} out={} kernel={}x{} dilation={}x{} batchnorm={} activation={}\n",
            l.kind.as_str(),
            l.in_channels,
            l.out_channels,
            l.kernel_t,
            l.kernel_f,
            l.dilation_t,
            l.dilation_f,
            l.has_batchnorm,
            l.activation.as_str(),
        ));
    }
    out
}

pub(crate) fn spec_from_text(text: &str) -> Result<NetworkSpec> {
    let bad = |msg: &str| Error::InvalidArgument(format!("spec text: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some("masnet-spec v1") {
        return Err(bad("missing header"));
    }
    let name = lines
        .next()
        .and_then(|l| l.strip_prefix("name "))
        .ok_or_else(|| bad("missing name"))?
        .to_string();
    let mut layers = Vec::new();
    for line in lines {
        let body = line
            .strip_prefix("layer ")
            .ok_or_else(|| bad("expected layer line"))?;
        let mut fields = body.split(' ');
        let kind = LayerKind::parse(fields.next().unwrap_or(""))
            .map_err(|e| bad(&e.to_string()))?;
        let mut parsed = LayerSpec {
            kind,
            in_channels: 0,
            out_channels: 0,
            kernel_t: 0,
            kernel_f: 0,
            dilation_t: 0,
            dilation_f: 0,
            has_batchnorm: false,
            activation: Activation::Linear,
        };
        for field in fields {
            let (key, value) = field.split_once('=').ok_or_else(|| bad("malformed field"))?;
            match key {
                "in" => parsed.in_channels = parse_num(value)?,
                "out" => parsed.out_channels = parse_num(value)?,
                "kernel" => (parsed.kernel_t, parsed.kernel_f) = parse_pair(value)?,
                "dilation" => (parsed.dilation_t, parsed.dilation_f) = parse_pair(value)?,
                "batchnorm" => parsed.has_batchnorm = parse_bool(value)?,
                "activation" => {
                    parsed.activation =
                        Activation::parse(value).map_err(|e| bad(&e.to_string()))?
                }
                _ => return Err(bad(&format!("unknown field {key:?}"))),
            }
        }
        layers.push(parsed);
    }
    let spec = NetworkSpec { name, layers };
    spec.validate()
        .map_err(|e| Error::InvalidArgument(format!("invalid spec: {e}")))?;
    Ok(spec)
}

fn parse_num(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::InvalidArgument(format!("bad number {s:?} in spec text")))
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| Error::InvalidArgument(format!("bad pair {s:?} in spec text")))?;
    Ok((parse_num(a)?, parse_num(b)?))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("bad bool {s:?} in spec text"))),
    }
}

/// Serialize a network to `path`.
pub fn save_checkpoint(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    let spec_text = spec_to_text(&net.spec);
    bytes.extend_from_slice(&(spec_text.len() as u32).to_le_bytes());
    bytes.extend_from_slice(spec_text.as_bytes());
    net.visit_tensors(|name, dims, data| {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            bytes.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    });
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Load a network saved by [`save_checkpoint`]. The loaded network is in
/// eval mode.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let spec_len = cur.u32("spec length")? as usize;
    let spec_text = std::str::from_utf8(cur.take(spec_len, "spec text")?)
        .map_err(|_| Error::CorruptCheckpoint("spec text is not UTF-8".into()))?;
    let spec = spec_from_text(spec_text)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

    let mut net = Network::<f32>::zeros(spec)?;
    net.visit_tensors_mut(|name, dims, data| {
        let name_len = cur.u32("tensor name length")? as usize;
        let got_name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        if got_name != name {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor order mismatch: expected {name}, found {got_name}"
            )));
        }
        let rank = cur.u32("tensor rank")? as usize;
        if rank != dims.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{name}: rank {rank} does not match expected {}",
                dims.len()
            )));
        }
        for (i, &expected) in dims.iter().enumerate() {
            let d = cur.u32("tensor dim")? as usize;
            if d != expected {
                return Err(Error::CorruptCheckpoint(format!(
                    "{name}: dim {i} is {d}, expected {expected}"
                )));
            }
        }
        let payload = cur.take(data.len() * 4, "tensor payload")?;
        for (slot, chunk) in data.iter_mut().zip(payload.chunks_exact(4)) {
            *slot = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        Ok(())
    })?;
    if cur.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - cur.pos
        )));
    }
    let mut stats_ok = true;
    net.visit_tensors(|name, _, data| {
        if name.ends_with("running_var") && data.iter().any(|v| *v < 0.0 || v.is_nan()) {
            stats_ok = false;
        }
    });
    if !stats_ok {
        return Err(Error::CorruptCheckpoint(
            "negative batchnorm running variance".into(),
        ));
    }
    Ok(net)
}
