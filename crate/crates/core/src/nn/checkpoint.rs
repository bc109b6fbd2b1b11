//! Binary checkpoint: `DMCN`, format version (u16 LE), u32 length-prefixed
//! JSON network spec, then for each layer record a u32 value count followed
//! by that many f32 LE values (parameters, then running statistics).

use std::path::Path;

use super::network::Network;
use super::spec::NetworkSpec;
use super::{NnError, Real};

pub const MAGIC: &[u8; 4] = b"DMCN";
pub const VERSION: u16 = 1;

fn layer_values<T: Real>(net: &mut Network<T>, i: usize) -> Vec<f32> {
    let mut v: Vec<f32> = net
        .layer_params_mut(i)
        .iter()
        .flat_map(|t| t.data.iter().map(|x| x.f64() as f32))
        .collect();
    v.extend(
        net.layer_buffers_mut(i)
            .iter()
            .flat_map(|t| t.data.iter().map(|x| x.f64() as f32)),
    );
    v
}

/// Serialise a network. Values are stored as f32, so only `f32` networks round-trip bit-exactly.
pub fn save_checkpoint<T: Real>(net: &mut Network<T>) -> Vec<u8> {
    let spec = serde_json::to_vec(net.spec()).expect("spec serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    for i in 0..net.layer_count() {
        let values = layer_values(net, i);
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn load_checkpoint<T: Real>(bytes: &[u8]) -> Result<Network<T>, NnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let len = r.u32()? as usize;
    let spec: NetworkSpec = serde_json::from_slice(r.take(len)?)
        .map_err(|e| NnError::Checkpoint(format!("spec: {e}")))?;
    let mut net = Network::<T>::new(spec, 0)?;
    for i in 0..net.layer_count() {
        let count = r.u32()? as usize;
        let expected = layer_values(&mut net, i).len();
        if count != expected {
            return Err(NnError::Checkpoint(format!(
                "layer {i} declares {count} values, spec needs {expected}"
            )));
        }
        let raw = r.take(count * 4)?;
        let mut vals = raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64));
        for t in net.layer_params_mut(i) {
            t.data
                .iter_mut()
                .for_each(|v| *v = vals.next().expect("count checked"));
        }
        for t in net.layer_buffers_mut(i) {
            t.data
                .iter_mut()
                .for_each(|v| *v = vals.next().expect("count checked"));
        }
    }
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(net)
}

pub fn write_checkpoint<T: Real>(path: &Path, net: &mut Network<T>) -> Result<(), NnError> {
    std::fs::write(path, save_checkpoint(net)).map_err(NnError::Io)
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Network<T>, NnError> {
    load_checkpoint(&std::fs::read(path).map_err(NnError::Io)?)
}
