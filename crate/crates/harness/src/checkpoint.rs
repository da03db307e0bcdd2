//! Binary policy checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "MARL"  u32 version  u32 real_bits(=64)
//! u32 len, config JSON
//! u64 episode
//! rng: [u8; 32] seed, u64 stream, u128 word position
//! u32 n_params, then per param: u32 name_len, name, u32 rows, u32 cols, rows*cols f64
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use marl_core::agents::{Learner, Policy};
use marl_core::autograd::Matrix;
use rand_chacha::ChaCha8Rng;

use crate::config::RunSpec;

pub const MAGIC: &[u8; 4] = b"MARL";
pub const VERSION: u32 = 1;
const REAL_BITS: u32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("unsupported real width {0}")]
    RealWidth(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("parameter {0} missing from checkpoint")]
    MissingParam(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ParamShape { name: String, expected: (usize, usize), found: (usize, usize) },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] marl_core::Error),
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: RunSpec,
    pub episode: u64,
    pub rng: RngState,
    /// Parameters in a fixed order, by name.
    pub params: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn from_policy(spec: &RunSpec, policy: &Policy, episode: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            spec: spec.clone(),
            episode,
            rng: RngState::capture(rng),
            params: policy.params().into_iter().map(|p| (p.name().to_string(), p.value().clone())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&REAL_BITS.to_le_bytes());
        let json = serde_json::to_vec(&self.spec)?;
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.episode.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, m) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        read(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32_le(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let bits = u32_le(&mut r)?;
        if bits != REAL_BITS {
            return Err(CheckpointError::RealWidth(bits));
        }
        let json_len = u32_le(&mut r)? as usize;
        let mut json = vec![0u8; json_len];
        read(&mut r, &mut json)?;
        let spec: RunSpec = serde_json::from_slice(&json)?;
        let mut word = [0u8; 8];
        read(&mut r, &mut word)?;
        let episode = u64::from_le_bytes(word);
        let mut seed = [0u8; 32];
        read(&mut r, &mut seed)?;
        read(&mut r, &mut word)?;
        let stream = u64::from_le_bytes(word);
        let mut wide = [0u8; 16];
        read(&mut r, &mut wide)?;
        let word_pos = u128::from_le_bytes(wide);
        let n = u32_le(&mut r)? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let len = u32_le(&mut r)? as usize;
            let mut name = vec![0u8; len];
            read(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| CheckpointError::Truncated)?;
            let rows = u32_le(&mut r)? as usize;
            let cols = u32_le(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                read(&mut r, &mut word)?;
                data.push(f64::from_le_bytes(word));
            }
            params.push((name, Matrix::from_vec(rows, cols, data)));
        }
        Ok(Self { spec, episode, rng: RngState { seed, stream, word_pos }, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Rebuilds the policy described by the stored config and fills in the
    /// stored parameter values.
    pub fn policy(&self) -> Result<Policy, CheckpointError> {
        let env = self.spec.env.build().map_err(|e| CheckpointError::Io(std::io::Error::other(e.to_string())))?;
        let shape = marl_core::agents::team_shape(&env)?;
        let mut policy = Learner::new(&self.spec.train, shape)?.policy;
        let stored: BTreeMap<&str, &Matrix> = self.params.iter().map(|(n, m)| (n.as_str(), m)).collect();
        for p in policy.params_mut() {
            let m = stored.get(p.name()).ok_or_else(|| CheckpointError::MissingParam(p.name().into()))?;
            if m.shape() != p.shape() {
                return Err(CheckpointError::ParamShape { name: p.name().into(), expected: p.shape(), found: m.shape() });
            }
            p.assign(m)?;
        }
        Ok(policy)
    }
}

fn read(r: &mut Cursor<&[u8]>, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|_| CheckpointError::Truncated)
}

fn u32_le(r: &mut Cursor<&[u8]>) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{preset, Scale};
    use marl_core::agents::Variant;
    use marl_core::envs::Task;
    use marl_core::seed;
    use rand::RngCore;

    fn small(variant: Variant) -> RunSpec {
        let mut s = preset(Task::Spread, variant, Scale::Desk, 3);
        s.train.hidden_dims = vec![8, 8];
        s.train.mask_repeats = 2;
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for v in [Variant::TeamReg, Variant::CoachReg, Variant::Sharing] {
            let spec = small(v);
            let env = spec.env.build().unwrap();
            let mut policy = Learner::new(&spec.train, marl_core::agents::team_shape(&env).unwrap()).unwrap().policy;
            // awkward values survive
            policy.params_mut()[0].value_mut().set(0, 0, -0.0);
            policy.params_mut()[1].value_mut().set(0, 0, 1e-310);
            let mut rng = seed::stream(3, seed::labels::EVAL);
            rng.next_u64();
            let ck = Checkpoint::from_policy(&spec, &policy, 42, &rng);
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            assert_eq!(back, ck);
            let restored = back.policy().unwrap();
            for (a, b) in restored.params().iter().zip(policy.params()) {
                let bits = |m: &Matrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a.value()), bits(b.value()));
            }
            let mut resumed = back.rng.restore();
            assert_eq!(resumed.next_u64(), rng.next_u64());
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let spec = small(Variant::Maddpg);
        let env = spec.env.build().unwrap();
        let policy = Learner::new(&spec.train, marl_core::agents::team_shape(&env).unwrap()).unwrap().policy;
        let bytes = Checkpoint::from_policy(&spec, &policy, 0, &seed::stream(0, "x")).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
        let mut wrong = Checkpoint::from_bytes(&bytes).unwrap();
        wrong.params.pop();
        assert!(matches!(wrong.policy(), Err(CheckpointError::MissingParam(_))));
    }
}
