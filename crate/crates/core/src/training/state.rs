use super::{AdamState, EpochRecord, TrainError};

const STATE_VERSION: u32 = 1;

/// Everything besides the parameters needed to continue a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainState {
    pub adam: AdamState,
    pub best_val_recall1: Option<f64>,
    /// 1-based.
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochRecord>,
}

impl TrainState {
    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn epochs_completed(&self) -> usize {
        self.log.len()
    }

    /// Opaque little-endian encoding stored in checkpoints.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out.extend_from_slice(&(self.adam.first.len() as u32).to_le_bytes());
        for (m, v) in self.adam.first.iter().zip(&self.adam.second) {
            out.extend_from_slice(&(m.len() as u32).to_le_bytes());
            for x in m.iter().chain(v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        match (self.best_val_recall1, self.best_epoch) {
            (Some(r), Some(e)) => {
                out.push(1);
                out.extend_from_slice(&r.to_le_bytes());
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            _ => out.push(0),
        }
        out.extend_from_slice(&(self.log.len() as u32).to_le_bytes());
        for r in &self.log {
            out.extend_from_slice(&(r.epoch as u32).to_le_bytes());
            for x in [
                r.mean_loss,
                r.lr_end,
                r.val_recall1,
                r.val_recall5,
                r.val_recall10,
                r.val_median_rank,
            ] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Bytes { bytes, pos: 0 };
        let version = r.u32()?;
        if version != STATE_VERSION {
            return Err(TrainError::State(format!(
                "unsupported training state version {version}"
            )));
        }
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let len = r.u32()? as usize;
            first.push(r.f32s(len)?);
            second.push(r.f32s(len)?);
        }
        let (best_val_recall1, best_epoch) = match r.take(1)?[0] {
            0 => (None, None),
            1 => (Some(r.f64()?), Some(r.u32()? as usize)),
            other => return Err(TrainError::State(format!("bad best-epoch flag {other}"))),
        };
        let n_log = r.u32()? as usize;
        let mut log = Vec::new();
        for _ in 0..n_log {
            let epoch = r.u32()? as usize;
            let mut f = [0.0; 6];
            for x in &mut f {
                *x = r.f64()?;
            }
            log.push(EpochRecord {
                epoch,
                mean_loss: f[0],
                lr_end: f[1],
                val_recall1: f[2],
                val_recall5: f[3],
                val_recall10: f[4],
                val_median_rank: f[5],
            });
        }
        if r.pos != bytes.len() {
            return Err(TrainError::State("trailing bytes in training state".into()));
        }
        Ok(TrainState {
            adam: AdamState { step, first, second },
            best_val_recall1,
            best_epoch,
            log,
        })
    }
}

struct Bytes<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Bytes<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let s = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| TrainError::State("truncated training state".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, TrainError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, TrainError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| TrainError::State("overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}
