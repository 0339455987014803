//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "CMRL" | u32 version | u64 step_count
//! rng:        [u8; 32] seed | u64 stream | u128 word_pos
//! u32 complement capacity | u32 complement length
//! policy, then each complement member:
//!     action net, value net, each as
//!     u32 n_sizes | u32 sizes.. | u8 activation tag per layer
//!     per layer: u64 len | f64 weights.. | u64 len | f64 bias..
//! ```

use std::path::Path;

use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::nn::{Activation, NetSpec};
use crate::{Complement, NetParams, PolicyParams, SimRng};

pub const MAGIC: &[u8; 4] = b"CMRL";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &SimRng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> SimRng {
        let mut rng = SimRng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub step_count: u64,
    pub rng: RngState,
    pub policy: PolicyParams,
    pub complement: Complement,
}

impl Checkpoint {
    pub fn new(policy: PolicyParams, rng: &SimRng, step_count: u64, complement_capacity: usize) -> Self {
        Self {
            step_count,
            rng: RngState::capture(rng),
            policy,
            complement: Complement::empty(complement_capacity),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step_count.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.complement.capacity() as u32).to_le_bytes());
        out.extend_from_slice(&(self.complement.len() as u32).to_le_bytes());
        write_policy(&mut out, &self.policy);
        for m in self.complement.members() {
            write_policy(&mut out, m);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let step_count = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes taken");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes taken"));
        let capacity = r.u32()? as usize;
        let len = r.u32()? as usize;
        let policy = read_policy(&mut r)?;
        let members = (0..len).map(|_| read_policy(&mut r)).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if members.len() > capacity {
            return Err(Error::Checkpoint("complement larger than its capacity".into()));
        }
        Ok(Self {
            step_count,
            rng: RngState { seed, stream, word_pos },
            policy,
            complement: Complement::from_members(capacity, members),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_policy(out: &mut Vec<u8>, p: &PolicyParams) {
    write_net(out, &p.action_net);
    write_net(out, &p.value_net);
}

fn write_net(out: &mut Vec<u8>, net: &NetParams) {
    let spec = net.spec();
    out.extend_from_slice(&(spec.layer_sizes().len() as u32).to_le_bytes());
    for &s in spec.layer_sizes() {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend(spec.activations().iter().map(|a| a.tag()));
    for layer in net.layers() {
        for xs in [&layer.weights, &layer.bias] {
            out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
            for x in xs.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("array too long".into()))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too long".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn read_policy(r: &mut Reader<'_>) -> Result<PolicyParams> {
    let action_net = read_net(r)?;
    let value_net = read_net(r)?;
    Ok(PolicyParams { action_net, value_net })
}

fn read_net(r: &mut Reader<'_>) -> Result<NetParams> {
    let n_sizes = r.u32()? as usize;
    if n_sizes < 2 || n_sizes > 1024 {
        return Err(Error::Checkpoint(format!("implausible layer count {n_sizes}")));
    }
    let sizes = (0..n_sizes).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
    let acts = r
        .take(n_sizes - 1)?
        .iter()
        .map(|&t| Activation::from_tag(t).ok_or_else(|| Error::Checkpoint(format!("unknown activation tag {t}"))))
        .collect::<Result<Vec<_>>>()?;
    let spec = NetSpec::new(sizes, acts).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let raw = (0..spec.num_layers())
        .map(|_| Ok((r.f64s()?, r.f64s()?)))
        .collect::<Result<Vec<_>>>()?;
    NetParams::from_layers(&spec, raw).map_err(|e| Error::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn bytes_round_trip_and_rng_resumes() {
        let mut rng = SimRng::seed_from_u64(9);
        rng.next_u64();
        let mut ck = Checkpoint::new(PolicyParams::new(&[5, 4], 1), &rng, 1234, 3);
        ck.complement = Complement::from_members(
            3,
            vec![PolicyParams::new(&[5, 4], 2), PolicyParams::new(&[5, 4], 3)],
        );
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.step_count, 1234);
        assert!(back.policy.bit_identical(&ck.policy));
        assert_eq!(back.complement.len(), 2);
        assert_eq!(back.rng.restore().next_u64(), rng.next_u64());
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint::new(PolicyParams::new(&[3], 1), &SimRng::seed_from_u64(0), 0, 3);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
