//! Binary checkpoint container.
//!
//! Layout, all integers u32 little-endian:
//!
//! ```text
//! magic "DSFNCKPT" | version | config length | config text (key = value)
//! tensor count | per tensor: name length, name, rank, extents…, f32 LE data
//! ```

use std::path::Path;

use super::{params::param_specs, FusionNetConfig, ModelParams, NamedTensor, CONFIG_KEYS};
use crate::config::KvDoc;
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSFNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: FusionNetConfig,
    /// Extra provenance entries (seed, command, …) stored beside the config.
    pub meta: KvDoc,
    pub params: ModelParams<f32>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated { path: self.path.to_path_buf(), offset: self.pos as u64 });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(n)?.to_vec();
        String::from_utf8(bytes).map_err(|_| Error::format(self.path, format!("invalid UTF-8 at byte {at}")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint field fits in u32").to_le_bytes());
}

impl Checkpoint {
    pub fn new(config: FusionNetConfig, params: ModelParams<f32>) -> Result<Self> {
        params.validate(&config)?;
        Ok(Self { config, meta: KvDoc::new(), params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut doc = KvDoc::new();
        self.config.to_kv(&mut doc);
        for (k, v) in self.meta.entries() {
            doc.set(k, v);
        }
        let text = doc.render();

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, text.len());
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, self.params.tensors.len());
        for t in &self.params.tensors {
            put_u32(&mut out, t.name.len());
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.tensor.rank());
            for &d in t.tensor.shape() {
                put_u32(&mut out, d);
            }
            for v in t.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint; `path` is only used in error messages.
    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { buf, pos: 0, path };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let doc = KvDoc::parse(&r.string()?)?;
        let config = FusionNetConfig::from_kv(&doc)?;
        let mut meta = KvDoc::new();
        for (k, v) in doc.entries().iter().filter(|(k, _)| !CONFIG_KEYS.contains(&k.as_str())) {
            meta.set(k, v);
        }

        let specs = param_specs(&config);
        let count = r.u32()? as usize;
        if count != specs.len() {
            return Err(Error::format(path, format!("config expects {} tensors, file has {count}", specs.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for spec in &specs {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if name != spec.name || shape != spec.shape {
                return Err(Error::format(
                    path,
                    format!("tensor {name} {shape:?} does not match expected {} {:?}", spec.name, spec.shape),
                ));
            }
            let bytes = r.take(numel(&shape) * 4)?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let tensor = Tensor::new(&shape, data)?.with_grad();
            tensors.push(NamedTensor { name, tensor, decay: spec.decay });
        }
        if r.pos != buf.len() {
            return Err(Error::format(path, format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let params = ModelParams { tensors };
        params.validate(&config)?;
        Ok(Self { config, meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf, path)
    }
}
