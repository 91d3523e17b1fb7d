//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "MTPUCKPT"
//! version      u32      1
//! kind         u8       0 = single network, 1 = multi-task, 2 = one network per period
//! seed         u64
//! epsilon      f64
//! min_count    u32      vocabulary threshold the model was trained with
//! periods      u32      0 for a single network
//! networks     single: 1 block; multi-task: trunk + `periods` heads;
//!              per-period: `periods` blocks
//!
//! network block:
//!   n_dims     u32
//!   dims       n_dims x u32
//!   relu_out   u8
//!   per layer: weights (out x in, row-major) then biases, as f32
//! ```
//!
//! Parameters are stored as `f32`, so a checkpoint read and re-written
//! reproduces the same bytes.

use std::fs;
use std::path::Path;

use crate::corpus::SparseVec;
use crate::multitask::MtpuModel;
use crate::net::{Layer, Mlp};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MTPUCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epsilon: f64,
    pub min_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// One network over all periods (pooled baseline).
    Single(Mlp),
    Multitask(MtpuModel),
    /// Independent network per period.
    PerPeriod(Vec<Mlp>),
}

impl Model {
    fn kind(&self) -> u8 {
        match self {
            Model::Single(_) => 0,
            Model::Multitask(_) => 1,
            Model::PerPeriod(_) => 2,
        }
    }

    /// Number of periods covered; `None` for a pooled model.
    pub fn num_periods(&self) -> Option<usize> {
        match self {
            Model::Single(_) => None,
            Model::Multitask(m) => Some(m.num_periods()),
            Model::PerPeriod(nets) => Some(nets.len()),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Single(net) => net.input_dim(),
            Model::Multitask(m) => m.input_dim(),
            Model::PerPeriod(nets) => nets[0].input_dim(),
        }
    }

    /// Scores `x` with the model responsible for `period`.
    pub fn score(&self, period: usize, x: &SparseVec) -> Result<f64> {
        match self {
            Model::Single(net) => net.score(x),
            Model::Multitask(m) => m.score(period, x),
            Model::PerPeriod(nets) => match period.checked_sub(1).and_then(|i| nets.get(i)) {
                Some(net) => net.score(x),
                None => Err(Error::PeriodOutOfRange {
                    period,
                    periods: nets.len(),
                }),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} exceeds u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }

    fn net(&mut self, net: &Mlp) -> Result<()> {
        let dims = net.dims();
        self.u32(dims.len())?;
        for d in dims {
            self.u32(d)?;
        }
        self.u8(net.relu_output() as u8);
        for layer in net.layers() {
            for &w in layer.weights.iter().chain(&layer.bias) {
                self.f32(w);
            }
        }
        Ok(())
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
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn net(&mut self) -> Result<Mlp> {
        let n = self.u32()?;
        if n < 2 {
            return Err(Error::Checkpoint(format!("network with {n} widths")));
        }
        let dims = (0..n).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let relu_output = match self.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad output flag {b}"))),
        };
        let layers = dims
            .windows(2)
            .map(|w| {
                let weights = self.f32s(w[0] * w[1])?;
                let bias = self.f32s(w[1])?;
                Ok(Layer {
                    in_dim: w[0],
                    out_dim: w[1],
                    weights,
                    bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers, relu_output)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize)?;
        w.u8(self.model.kind());
        w.u64(self.meta.seed);
        w.f64(self.meta.epsilon);
        w.u32(self.meta.min_count as usize)?;
        w.u32(self.model.num_periods().unwrap_or(0))?;
        match &self.model {
            Model::Single(net) => w.net(net)?,
            Model::Multitask(m) => {
                w.net(&m.trunk)?;
                for h in &m.heads {
                    w.net(h)?;
                }
            }
            Model::PerPeriod(nets) => {
                for n in nets {
                    w.net(n)?;
                }
            }
        }
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = r.u8()?;
        let meta = CheckpointMeta {
            seed: r.u64()?,
            epsilon: r.f64()?,
            min_count: r.u32()? as u32,
        };
        let periods = r.u32()?;
        let model = match kind {
            0 => Model::Single(r.net()?),
            1 => {
                let trunk = r.net()?;
                let heads = (0..periods).map(|_| r.net()).collect::<Result<Vec<_>>>()?;
                Model::Multitask(MtpuModel::new(trunk, heads)?)
            }
            2 => {
                if periods == 0 {
                    return Err(Error::Checkpoint("per-period checkpoint without periods".into()));
                }
                Model::PerPeriod((0..periods).map(|_| r.net()).collect::<Result<Vec<_>>>()?)
            }
            k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { meta, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
