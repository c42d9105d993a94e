//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic, `u32` version, config text, step,
//! parameters (name, shape, values), Adam moments, interval accumulators,
//! best-dev marker and collapse-monitor state.

use std::fs;
use std::path::Path;

use super::config::RunConfig;
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::numcore::ParamStore;

const MAGIC: &[u8; 8] = b"FLOWNMT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training-interval sums behind the next metrics record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntervalStats {
    pub count: usize,
    pub loss: f64,
    pub recon_nll: f64,
    pub kl_est: f64,
    pub beta_effective: f64,
    pub mean_gate: f64,
}

/// Everything needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: usize,
    pub params: ParamStore,
    pub adam: Adam,
    pub interval: IntervalStats,
    /// Best dev score so far and its step.
    pub best: Option<(f64, usize)>,
    /// Consecutive low-KL evals and whether collapse was declared.
    pub collapse_run: usize,
    pub collapsed: bool,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let out = &self.data[self.at..end];
        self.at = end;
        Ok(out)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.bytes(self.config.to_text().as_bytes());
        w.u64(self.step as u64);
        w.u64(self.params.len() as u64);
        for i in 0..self.params.len() {
            w.bytes(self.params.name(i).as_bytes());
            let shape = self.params.shape(i);
            w.u64(shape.len() as u64);
            for &d in shape {
                w.u64(d as u64);
            }
            w.floats(self.params.values(i));
        }
        w.u64(self.adam.t);
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            w.floats(m);
            w.floats(v);
        }
        let s = &self.interval;
        w.u64(s.count as u64);
        for v in [s.loss, s.recon_nll, s.kl_est, s.beta_effective, s.mean_gate] {
            w.f64(v);
        }
        match self.best {
            Some((score, step)) => {
                w.u64(1);
                w.f64(score);
                w.u64(step as u64);
            }
            None => w.u64(0),
        }
        w.u64(self.collapse_run as u64);
        w.u64(u64::from(self.collapsed));
        w.0
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let config = RunConfig::from_text(&r.string()?, Path::new("<checkpoint>"))?;
        let step = r.usize()?;
        let n = r.usize()?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.usize()?;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let values = r.floats()?;
            if values.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!("{name}: {} values for shape {shape:?}", values.len())));
            }
            params.add(name, &shape, values);
        }
        let mut adam = Adam::new(&params, config.learning_rate);
        adam.t = r.u64()?;
        for i in 0..n {
            adam.m[i] = r.floats()?;
            adam.v[i] = r.floats()?;
            if adam.m[i].len() != params.values(i).len() || adam.v[i].len() != params.values(i).len() {
                return Err(Error::Checkpoint(format!("optimizer state size mismatch for {}", params.name(i))));
            }
        }
        let interval = IntervalStats {
            count: r.usize()?,
            loss: r.f64()?,
            recon_nll: r.f64()?,
            kl_est: r.f64()?,
            beta_effective: r.f64()?,
            mean_gate: r.f64()?,
        };
        let best = match r.u64()? {
            0 => None,
            _ => Some((r.f64()?, r.usize()?)),
        };
        let collapse_run = r.usize()?;
        let collapsed = r.u64()? != 0;
        if r.at != data.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", data.len() - r.at)));
        }
        Ok(Self {
            config,
            step,
            params,
            adam,
            interval,
            best,
            collapse_run,
            collapsed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
