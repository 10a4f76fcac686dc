//! `.jckpt` checkpoints.
//!
//! Layout (little-endian): `"JCK1"`, `u32` version, `u64` step, `u32` store
//! count, then per store its name and parameter list (name, trainable flag,
//! four `u32` dims, `f32` payload); `u32` optimizer count, then per optimizer
//! its name, hyperparameters, step and `f32` moment buffers; finally a UTF-8
//! configuration snapshot.

use super::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"JCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub stores: Vec<(String, ParamStore)>,
    pub optimizers: Vec<(String, AdamState)>,
    pub config: String,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        for d in t.shape() {
            self.u32(d as u32);
        }
        self.payload(t);
    }
    fn payload(&mut self, t: &Tensor) {
        for &v in t.data() {
            self.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
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
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
    fn shape(&mut self) -> Result<[usize; 4]> {
        let mut s = [0usize; 4];
        for d in &mut s {
            *d = self.u32()? as usize;
        }
        Ok(s)
    }
    fn payload(&mut self, shape: [usize; 4]) -> Result<Tensor> {
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        let data = self
            .take(n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Tensor::from_vec(shape, data)
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let shape = self.shape()?;
        self.payload(shape)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u64(self.step);
        w.u32(self.stores.len() as u32);
        for (name, store) in &self.stores {
            w.str(name);
            w.u32(store.len() as u32);
            for (_, p) in store.iter() {
                w.str(&p.name);
                w.u8(p.trainable as u8);
                w.tensor(&p.value);
            }
        }
        w.u32(self.optimizers.len() as u32);
        for (name, adam) in &self.optimizers {
            let c = &adam.config;
            w.str(name);
            for v in [c.lr, c.beta1, c.beta2, c.eps] {
                w.f64(v);
            }
            w.u64(c.decay_every);
            w.f64(c.decay_factor);
            w.u64(adam.step);
            w.u8(adam.store_f32 as u8);
            w.u32(adam.m.len() as u32);
            for (m, v) in adam.m.iter().zip(&adam.v) {
                w.tensor(m);
                w.payload(v);
            }
        }
        w.str(&self.config);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a JCK1 checkpoint".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let step = r.u64()?;
        let mut stores = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let mut store = ParamStore::new();
            for _ in 0..r.u32()? {
                let pname = r.str()?;
                let trainable = r.u8()? != 0;
                let t = r.tensor()?;
                if store.find(&pname).is_some() {
                    return Err(Error::Format(format!("duplicate parameter {pname}")));
                }
                store.add(pname, t, trainable);
            }
            stores.push((name, store));
        }
        let mut optimizers = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let config = AdamConfig {
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
                decay_every: r.u64()?,
                decay_factor: r.f64()?,
            };
            let step = r.u64()?;
            let store_f32 = r.u8()? != 0;
            let count = r.u32()? as usize;
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for _ in 0..count {
                let mt = r.tensor()?;
                let vt = r.payload(mt.shape())?;
                m.push(mt);
                v.push(vt);
            }
            optimizers.push((
                name,
                AdamState {
                    config,
                    step,
                    m,
                    v,
                    store_f32,
                },
            ));
        }
        let config = r.str()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            step,
            stores,
            optimizers,
            config,
        })
    }

    pub fn store(&self, name: &str) -> Result<&ParamStore> {
        self.stores
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Format(format!("checkpoint has no store {name:?}")))
    }

    pub fn optimizer(&self, name: &str) -> Result<&AdamState> {
        self.optimizers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Format(format!("checkpoint has no optimizer {name:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut store = ParamStore::new();
        let a = store.add("conv.w", Tensor::from_vec([1, 1, 2, 3], vec![0.1, -0.2, 0.3, 1e-7, 5.0, -6.5]).unwrap(), true);
        store.add("bn.mean", Tensor::zeros([1, 1, 1, 3]), false);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store, &[(a, Tensor::filled([1, 1, 2, 3], 0.25))]).unwrap();
        Checkpoint {
            step: 42,
            stores: vec![("policy".into(), store)],
            optimizers: vec![("policy".into(), adam)],
            config: "seed=1\n".into(),
        }
    }

    #[test]
    fn bit_exact_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch { expected: 1, found: 9 })
        ));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = sample().to_bytes();
        for cut in [3, 20, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
