//! Binary tensor container.
//!
//! Layout (all integers little-endian u32 unless noted):
//!
//! ```text
//! "MVPC" | version | entry count
//! per entry: name length | UTF-8 name | dtype tag (u8: 0 = f32, 1 = f64)
//!            | rank | dims... | raw little-endian values
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::adam::{AdamSlot, AdamState};
use crate::nn::params::ParamSet;
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"MVPC";
pub const VERSION: u32 = 1;

const ADAM_STEP: &str = "adam.step";

/// A stored tensor of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => StoredTensor::F32(t.cast()),
            DType::F64 => StoredTensor::F64(t.cast()),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    /// Exact when `T` matches the stored dtype.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<(String, StoredTensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.push((name.into(), StoredTensor::from_tensor(t)));
    }

    /// Every parameter and running statistic, then the optimizer buffers.
    pub fn capture<T: Real>(params: &ParamSet<T>, adam: Option<&AdamState<T>>) -> Self {
        let mut ck = Checkpoint::default();
        for (_, p) in params.iter() {
            ck.push(p.name.clone(), &p.value);
        }
        if let Some(adam) = adam {
            ck.push(ADAM_STEP, &Tensor::<f64>::scalar(adam.step as f64));
            for slot in &adam.slots {
                let name = &params.get(slot.param).name;
                ck.push(format!("adam.m.{name}"), &slot.first);
                ck.push(format!("adam.v.{name}"), &slot.second);
            }
        }
        ck
    }

    /// Overwrites every parameter of `params` from the stored entries.
    pub fn restore_params<T: Real>(&self, params: &mut ParamSet<T>) -> Result<()> {
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let name = params.get(id).name.clone();
            let stored = self
                .get(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint has no entry {name:?}")))?;
            params.set(id, stored.to_tensor())?;
        }
        Ok(())
    }

    /// Optimizer state for `params`, if the checkpoint carries one.
    pub fn restore_adam<T: Real>(&self, params: &ParamSet<T>, adam: &mut AdamState<T>) -> Result<bool> {
        let Some(step) = self.get(ADAM_STEP) else {
            return Ok(false);
        };
        let mut slots = Vec::with_capacity(adam.slots.len());
        for slot in &adam.slots {
            let name = &params.get(slot.param).name;
            let fetch = |prefix: &str| -> Result<Tensor<T>> {
                let key = format!("{prefix}.{name}");
                let t = self
                    .get(&key)
                    .ok_or_else(|| Error::Config(format!("checkpoint has no entry {key:?}")))?;
                if t.shape() != slot.first.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "restore_adam",
                        left: t.shape().to_vec(),
                        right: slot.first.shape().to_vec(),
                    });
                }
                Ok(t.to_tensor())
            };
            slots.push(AdamSlot {
                param: slot.param,
                first: fetch("adam.m")?,
                second: fetch("adam.v")?,
            });
        }
        adam.slots = slots;
        adam.step = step.to_tensor::<f64>().item() as u64;
        Ok(true)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype().tag());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match t {
                StoredTensor::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                StoredTensor::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                line: 1,
                detail: "missing MVPC magic".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                line: 1,
                detail: format!("unsupported checkpoint version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Format {
                line: 1,
                detail: format!("entry name is not UTF-8: {e}"),
            })?;
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format {
                line: 1,
                detail: format!("unknown dtype tag {tag} for {name}"),
            })?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let raw = r.take(len * dtype.size())?;
            let t = match dtype {
                DType::F32 => StoredTensor::F32(Tensor::new(dims, raw.chunks_exact(4).map(f32::read_le).collect())?),
                DType::F64 => StoredTensor::F64(Tensor::new(dims, raw.chunks_exact(8).map(f64::read_le).collect())?),
            };
            entries.push((name, t));
        }
        if r.at != bytes.len() {
            return Err(Error::Format {
                line: 1,
                detail: format!("{} trailing bytes", bytes.len() - r.at),
            });
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            what: "bytes",
            expected: self.at.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::adam::AdamConfig;
    use crate::nn::params::ParamKind;
    use proptest::prelude::*;

    fn params() -> ParamSet<f32> {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::from_fn([2, 3], |i| i as f32 * 0.25 - 1.0), ParamKind::Trainable);
        ps.add("stat", Tensor::full([3], 0.5f32), ParamKind::Buffer);
        ps
    }

    #[test]
    fn params_and_optimizer_round_trip() {
        let mut ps = params();
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        let g = vec![Some(Tensor::full([2, 3], 0.3f32)), None];
        adam.step(&mut ps, &g).unwrap();
        let ck = Checkpoint::capture(&ps, Some(&adam));
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);

        let mut fresh = params();
        let mut fresh_adam = AdamState::new(&fresh, AdamConfig::default());
        back.restore_params(&mut fresh).unwrap();
        assert!(back.restore_adam(&fresh, &mut fresh_adam).unwrap());
        assert_eq!(fresh, ps);
        assert_eq!(fresh_adam, adam);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::decode(b"NOPE").is_err());
        let ck = Checkpoint::capture(&params(), None);
        let bytes = ck.encode();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
    }

    #[test]
    fn missing_entry_is_reported() {
        let ck = Checkpoint::default();
        let mut ps = params();
        assert!(matches!(ck.restore_params(&mut ps), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(
            vals in prop::collection::vec(-1e6f64..1e6, 1..40),
            name in "[a-z.]{1,12}",
        ) {
            let mut ck = Checkpoint::default();
            let n = vals.len();
            ck.push(name.clone(), &Tensor::new([n], vals.clone()).unwrap());
            ck.push(format!("{name}.f32"), &Tensor::new([1, n], vals.iter().map(|&v| v as f32).collect()).unwrap());
            prop_assert_eq!(Checkpoint::decode(&ck.encode()).unwrap(), ck);
        }
    }
}
