use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{AdamState, MomentState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"V3DA";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

/// One stored tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Binary model snapshot, all integers and floats little-endian:
///
/// ```text
/// "V3DA" u32:version u32:len config-json
/// u32:count { u32:len name u8:dtype u32:rank u32*rank:dims f32*:payload }*
/// u8:has_optim [ u32:count { u32:len name u64:step u32:n
///                            { u32:len name u32:len f32*:m f32*:v }* }* ]
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub entries: Vec<Entry>,
    pub optimizers: Option<Vec<(String, AdamState<f32>)>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }
    fn floats(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated {
            what,
            expected: self.pos.saturating_add(n),
            actual: self.buf.len(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn string(&mut self, what: &'static str) -> Result<String> {
        let n = self.u32(what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|e| Error::Checkpoint(format!("{what}: {e}")))
    }
    fn floats(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Checkpoint(format!("{what}: length overflow")))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, optimizers: Option<Vec<(String, AdamState<f32>)>>) -> Self {
        let entries = model
            .state()
            .iter()
            .map(|p| Entry {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
                data: p.tensor().to_vec(),
            })
            .collect();
        Checkpoint {
            config: model.config().clone(),
            entries,
            optimizers,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION as usize);
        w.bytes(serde_json::to_string(&self.config)?.as_bytes());
        w.u32(self.entries.len());
        for e in &self.entries {
            w.bytes(e.name.as_bytes());
            w.u8(DTYPE_F32);
            w.u32(e.shape.len());
            e.shape.iter().for_each(|&d| w.u32(d));
            w.floats(&e.data);
        }
        match &self.optimizers {
            None => w.u8(0),
            Some(opts) => {
                w.u8(1);
                w.u32(opts.len());
                for (name, state) in opts {
                    w.bytes(name.as_bytes());
                    w.u64(state.step);
                    w.u32(state.moments.len());
                    for m in &state.moments {
                        w.bytes(m.name.as_bytes());
                        w.u32(m.m.len());
                        w.floats(&m.m);
                        w.floats(&m.v);
                    }
                }
            }
        }
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config: ModelConfig = serde_json::from_str(&r.string("config")?)?;
        let count = r.u32("entry count")?;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string("entry name")?;
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(Error::Checkpoint(format!("`{name}` has unknown dtype {dtype}")));
            }
            let rank = r.u32("rank")?;
            let shape = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
            let data = r.floats(shape.iter().product(), "payload")?;
            entries.push(Entry { name, shape, data });
        }
        let optimizers = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let n = r.u32("optimizer count")?;
                let mut opts = Vec::new();
                for _ in 0..n {
                    let name = r.string("optimizer name")?;
                    let step = r.u64("optimizer step")?;
                    let np = r.u32("moment count")?;
                    let mut moments = Vec::new();
                    for _ in 0..np {
                        let pname = r.string("moment name")?;
                        let len = r.u32("moment length")?;
                        let m = r.floats(len, "first moment")?;
                        let v = r.floats(len, "second moment")?;
                        moments.push(MomentState { name: pname, m, v });
                    }
                    opts.push((name, AdamState { step, moments }));
                }
                Some(opts)
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            entries,
            optimizers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Copies every stored tensor into `model`, which must have exactly the
    /// same named state.
    pub fn apply_to(&self, model: &Model<f32>) -> Result<()> {
        let state = model.state();
        if state.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} tensors, checkpoint has {}",
                state.len(),
                self.entries.len()
            )));
        }
        for p in &state {
            let e = self
                .entries
                .iter()
                .find(|e| e.name == p.name())
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks `{}`", p.name())))?;
            if e.shape != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{}` has shape {:?} in the checkpoint, {:?} in the model",
                    e.name,
                    e.shape,
                    p.shape()
                )));
            }
            p.tensor().set_data(e.data.clone())?;
        }
        Ok(())
    }

    /// Builds the model described by the stored config and loads its state.
    pub fn restore(&self) -> Result<Model<f32>> {
        let model = Model::new(self.config.clone())?;
        self.apply_to(&model)?;
        Ok(model)
    }

    pub fn optimizer(&self, name: &str) -> Option<&AdamState<f32>> {
        self.optimizers.as_ref()?.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}
