//! Versioned little-endian binary checkpoints.
//!
//! ```text
//! magic        8 bytes  "CWGRPOCK"
//! version      u32      1
//! feature_map  u8       0 = onehot, 1 = tuple, 2 = hybrid
//! vocab_size   u32
//! context_len  u32
//! step         u64      completed training steps
//! n_weights    u64
//! weights      n_weights x f64
//! optimizer    u8       0 = SGD, 1 = Adam
//!   Adam only: beta1 f64, beta2 f64, eps f64, t u64,
//!              m n_weights x f64, v n_weights x f64
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so `load(save(c)) == c` bitwise.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::policy::{FeatureMap, PolicyParams};

pub const MAGIC: &[u8; 8] = b"CWGRPOCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub params: PolicyParams,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(64 + p.weights.len() * 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match p.feature_map {
            FeatureMap::OneHotLastK => 0,
            FeatureMap::TupleLastK => 1,
            FeatureMap::Hybrid => 2,
        });
        out.extend_from_slice(&(p.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&(p.context_len as u32).to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(p.weights.len() as u64).to_le_bytes());
        put_f64s(&mut out, &p.weights);
        match &self.optimizer {
            OptimizerState::Sgd => out.push(0),
            OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                out.push(1);
                put_f64s(&mut out, &[*beta1, *beta2, *eps]);
                out.extend_from_slice(&t.to_le_bytes());
                put_f64s(&mut out, m);
                put_f64s(&mut out, v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let feature_map = match r.u8()? {
            0 => FeatureMap::OneHotLastK,
            1 => FeatureMap::TupleLastK,
            2 => FeatureMap::Hybrid,
            x => return Err(Error::Checkpoint(format!("unknown feature map tag {x}"))),
        };
        let vocab_size = r.u32()? as usize;
        let context_len = r.u32()? as usize;
        let step = r.u64()?;
        let n = r.u64()? as usize;
        let mut params = PolicyParams::zeros(vocab_size, context_len, feature_map)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if params.weights.len() != n {
            return Err(Error::Checkpoint(format!(
                "expected {} weights for this shape, header says {n}",
                params.weights.len()
            )));
        }
        params.weights = r.f64s(n)?;
        let optimizer = match r.u8()? {
            0 => OptimizerState::Sgd,
            1 => {
                let beta1 = r.f64()?;
                let beta2 = r.f64()?;
                let eps = r.f64()?;
                let t = r.u64()?;
                OptimizerState::Adam {
                    beta1,
                    beta2,
                    eps,
                    t,
                    m: r.f64s(n)?,
                    v: r.f64s(n)?,
                }
            }
            x => return Err(Error::Checkpoint(format!("unknown optimizer tag {x}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { step, params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_bits().to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
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
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bitwise(seed in any::<u64>(), step in any::<u64>(), adam in any::<bool>(), fm_tag in 0u8..3) {
            let fm = [FeatureMap::OneHotLastK, FeatureMap::TupleLastK, FeatureMap::Hybrid][fm_tag as usize % 3];
            let params = PolicyParams::init(5, 2, fm, 3.0, seed).unwrap();
            let kind = if adam { OptimizerKind::ADAM } else { OptimizerKind::Sgd };
            let mut optimizer = OptimizerState::new(kind, params.weights.len());
            if let OptimizerState::Adam { m, v, t, .. } = &mut optimizer {
                m.iter_mut().zip(&params.weights).for_each(|(m, w)| *m = w * 0.5);
                v.iter_mut().zip(&params.weights).for_each(|(v, w)| *v = w * w);
                *t = step % 1000;
            }
            let c = Checkpoint { step, params, optimizer };
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let c = Checkpoint {
            step: 1,
            params: PolicyParams::zeros(4, 1, FeatureMap::OneHotLastK).unwrap(),
            optimizer: OptimizerState::Sgd,
        };
        let bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
    }
}
