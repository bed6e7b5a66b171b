//! Checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "SO2C"
//! version      u32      1
//! fingerprint  u32 length + UTF-8 bytes
//! policy       f64 log_std_min, f64 log_std_max, u32 action_dim, <mlp>
//! ensemble     u32 members, u32 state_dim, u32 action_dim,
//!              members x <mlp> (online), members x <mlp> (target)
//! entropy      u8 mode; mode 0: f64 beta
//!                       mode 1: f64 log_beta, f64 target_entropy, <adam>
//! actor adam   <adam>
//! critic adams u32 count, count x <adam>
//!
//! <mlp>   u32 layers, per layer: u32 in, u32 out, u8 activation
//!         (0 relu, 1 tanh, 2 identity), out*in f64 weights (row-major),
//!         out f64 biases
//! <adam>  f64 lr, f64 beta1, f64 beta2, f64 eps, u64 t, u32 blocks,
//!         per block: u64 len, len f64 first moments, len f64 second moments
//! ```

use std::path::Path;

use crate::actor_critic::{EntropyCoefficient, QEnsemble, SquashedGaussianPolicy, Which};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SO2C";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything trainable, plus the fingerprint of the config that shaped it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub policy: SquashedGaussianPolicy,
    pub ensemble: QEnsemble,
    pub entropy: EntropyCoefficient,
    pub actor_optimizer: AdamState,
    pub critic_optimizers: Vec<AdamState>,
}

/// Canonical text describing network shapes; two checkpoints with equal
/// fingerprints can be loaded into the same training configuration.
pub fn network_fingerprint(
    state_dim: usize,
    action_dim: usize,
    hidden: &[usize],
    members: usize,
) -> String {
    let hidden: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
    format!(
        "state_dim={state_dim};action_dim={action_dim};hidden={};ensemble={members}",
        hidden.join("x")
    )
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.fingerprint);

        let (lo, hi) = self.policy.log_std_range();
        w.f64(lo);
        w.f64(hi);
        w.u32(self.policy.action_dim() as u32);
        w.mlp(self.policy.trunk());

        w.u32(self.ensemble.len() as u32);
        w.u32(self.ensemble.state_dim() as u32);
        w.u32(self.ensemble.action_dim() as u32);
        for which in [Which::Online, Which::Target] {
            for m in self.ensemble.members(which) {
                w.mlp(m);
            }
        }

        match &self.entropy {
            EntropyCoefficient::Fixed { beta } => {
                w.u8(0);
                w.f64(*beta);
            }
            EntropyCoefficient::Auto {
                log_beta,
                target_entropy,
                optimizer,
            } => {
                w.u8(1);
                w.f64(*log_beta);
                w.f64(*target_entropy);
                w.adam(optimizer);
            }
        }

        w.adam(&self.actor_optimizer);
        w.u32(self.critic_optimizers.len() as u32);
        for opt in &self.critic_optimizers {
            w.adam(opt);
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(data, path);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.malformed("bad magic, not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.malformed(format!("unsupported checkpoint version {version}")));
        }
        let fingerprint = r.str()?;

        let lo = r.f64()?;
        let hi = r.f64()?;
        let action_dim = r.u32()? as usize;
        let policy = SquashedGaussianPolicy::from_trunk(r.mlp()?, action_dim, lo, hi)?;

        let members = r.u32()? as usize;
        let state_dim = r.u32()? as usize;
        let critic_action_dim = r.u32()? as usize;
        let online = (0..members).map(|_| r.mlp()).collect::<Result<Vec<_>>>()?;
        let target = (0..members).map(|_| r.mlp()).collect::<Result<Vec<_>>>()?;
        let ensemble = QEnsemble::from_members(online, target, state_dim, critic_action_dim)?;

        let entropy = match r.u8()? {
            0 => EntropyCoefficient::Fixed { beta: r.f64()? },
            1 => EntropyCoefficient::Auto {
                log_beta: r.f64()?,
                target_entropy: r.f64()?,
                optimizer: r.adam()?,
            },
            other => return Err(r.malformed(format!("unknown entropy mode {other}"))),
        };

        let actor_optimizer = r.adam()?;
        let n_opts = r.u32()? as usize;
        let critic_optimizers = (0..n_opts).map(|_| r.adam()).collect::<Result<Vec<_>>>()?;
        if r.remaining() != 0 {
            return Err(r.malformed(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            fingerprint,
            policy,
            ensemble,
            entropy,
            actor_optimizer,
            critic_optimizers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data, path)
    }

    /// Refuses to reinterpret a checkpoint under a different network shape.
    pub fn expect_fingerprint(&self, expected: &str) -> Result<()> {
        if self.fingerprint != expected {
            return Err(Error::Fingerprint {
                expected: expected.to_string(),
                found: self.fingerprint.clone(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = SquashedGaussianPolicy::new(3, 1, &[4], &mut rng).unwrap();
        let ensemble = QEnsemble::new(3, 1, &[4], 2, &mut rng).unwrap();
        let mut entropy = EntropyCoefficient::auto(1.0, None, 1, 3e-4).unwrap();
        entropy.update(&[0.3, -0.2]).unwrap();
        Checkpoint {
            fingerprint: network_fingerprint(3, 1, &[4], 2),
            actor_optimizer: AdamState::new(policy.trunk(), AdamConfig::default()),
            critic_optimizers: ensemble
                .members(Which::Online)
                .iter()
                .map(|m| AdamState::new(m, AdamConfig::default()))
                .collect(),
            policy,
            ensemble,
            entropy,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_and_bad_magic_detected() {
        let bytes = sample().to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = Checkpoint::from_bytes(&bad, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }));
    }

    #[test]
    fn fingerprint_mismatch() {
        let ck = sample();
        assert!(ck.expect_fingerprint(&network_fingerprint(3, 1, &[4], 2)).is_ok());
        let err = ck
            .expect_fingerprint(&network_fingerprint(3, 1, &[4], 5))
            .unwrap_err();
        assert_eq!(err.category(), "fingerprint");
    }
}
