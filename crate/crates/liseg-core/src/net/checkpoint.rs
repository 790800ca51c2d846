//! Checkpoint serialization.
//!
//! Network file layout (all integers and floats little-endian):
//! header {format version u32, config name (u32 length + UTF-8 bytes),
//! depths 6 x u32, widths 6 x u32, num_classes u32, in_channels u32,
//! seed u64}, then for each parameter in name order {name u32 length +
//! bytes, rank u32, dims rank x u64, values numel x f64}. A JSON manifest of
//! the header metadata is written alongside as `<file>.json`.
//!
//! Optimizer sidecars hold {version u32, lr/beta1/beta2/eps f64, t u64} and
//! per-parameter first/second moment buffers in the same name order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::param_specs;
use super::config::ModelScaleConfig;
use super::model::NetworkParams;
use crate::error::{Error, Result};
use crate::tensor::{AdamState, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: ModelScaleConfig,
    pub seed: u64,
    pub param_count: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn corrupt(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(corrupt(
                self.path,
                format!("truncated at byte {} (wanted {n} more)", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(corrupt(self.path, format!("implausible string length {len}")));
        }
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| corrupt(self.path, "non-UTF-8 string"))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn save_network(path: &Path, net: &NetworkParams, seed: u64) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let c = &net.config;
    (|| -> std::io::Result<()> {
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_string(&mut w, &c.name)?;
        for d in c.depths {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for width in c.widths {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        w.write_all(&(c.num_classes as u32).to_le_bytes())?;
        w.write_all(&(c.in_channels as u32).to_le_bytes())?;
        w.write_all(&seed.to_le_bytes())?;
        for (name, tensor) in &net.params {
            write_string(&mut w, name)?;
            w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
            for &dim in tensor.shape() {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
            write_f64s(&mut w, tensor.values())?;
        }
        w.flush()
    })()
    .map_err(io_err(path))?;

    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        config: c.clone(),
        seed,
        param_count: net.total_parameters(),
    };
    let json_path = manifest_path(path);
    std::fs::write(&json_path, serde_json::to_string_pretty(&meta)?)
        .map_err(io_err(&json_path))?;
    Ok(())
}

/// Path of the JSON manifest written alongside a checkpoint.
pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

pub fn load_network(path: &Path) -> Result<(NetworkParams, u64)> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(io_err(path))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(path, format!("unsupported format version {version}")));
    }
    let name = r.string()?;
    let mut depths = [0usize; 6];
    for d in &mut depths {
        *d = r.u32()? as usize;
    }
    let mut widths = [0usize; 6];
    for w in &mut widths {
        *w = r.u32()? as usize;
    }
    let config = ModelScaleConfig {
        name,
        depths,
        widths,
        num_classes: r.u32()? as usize,
        in_channels: r.u32()? as usize,
    };
    let seed = r.u64()?;

    let mut params = BTreeMap::new();
    while !r.done() {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(corrupt(path, format!("{name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let values = r.f64_vec(numel)?;
        if params.insert(name.clone(), Tensor::new(shape, values)?).is_some() {
            return Err(corrupt(path, format!("duplicate parameter {name}")));
        }
    }

    // The stored parameter set must be exactly what the config implies.
    let specs = param_specs(&config)?;
    if specs.len() != params.len() {
        return Err(corrupt(
            path,
            format!(
                "expected {} parameters for config {}, found {}",
                specs.len(),
                config.name,
                params.len()
            ),
        ));
    }
    for spec in &specs {
        match params.get(&spec.name) {
            Some(t) if t.shape() == spec.shape.as_slice() => {}
            Some(t) => {
                return Err(corrupt(
                    path,
                    format!(
                        "{}: shape {:?} does not match config ({:?})",
                        spec.name,
                        t.shape(),
                        spec.shape
                    ),
                ))
            }
            None => return Err(corrupt(path, format!("missing parameter {}", spec.name))),
        }
    }
    Ok((NetworkParams { config, params }, seed))
}

pub fn save_adam(path: &Path, state: &AdamState) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [state.lr, state.beta1, state.beta2, state.eps] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&state.t.to_le_bytes())?;
        for (name, m) in &state.m {
            let v = &state.v[name];
            write_string(&mut w, name)?;
            w.write_all(&(m.len() as u64).to_le_bytes())?;
            write_f64s(&mut w, m)?;
            write_f64s(&mut w, v)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn load_adam(path: &Path) -> Result<AdamState> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(io_err(path))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(path, format!("unsupported format version {version}")));
    }
    let mut state = AdamState::new(r.f64()?);
    state.beta1 = r.f64()?;
    state.beta2 = r.f64()?;
    state.eps = r.f64()?;
    state.t = r.u64()?;
    while !r.done() {
        let name = r.string()?;
        let len = r.u64()? as usize;
        let m = r.f64_vec(len)?;
        let v = r.f64_vec(len)?;
        state.m.insert(name.clone(), m);
        state.v.insert(name, v);
    }
    Ok(state)
}
