use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};

/// Entropy temperature `beta`, either held fixed or tuned toward a target entropy.
#[derive(Debug, Clone, PartialEq)]
pub enum EntropyCoefficient {
    Fixed {
        beta: f64,
    },
    Auto {
        log_beta: f64,
        target_entropy: f64,
        optimizer: AdamState,
    },
}

impl EntropyCoefficient {
    pub fn fixed(beta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!("fixed beta must be >= 0, got {beta}")));
        }
        Ok(EntropyCoefficient::Fixed { beta })
    }

    /// Auto-tuned temperature. `target_entropy` defaults to `-action_dim`.
    pub fn auto(initial_beta: f64, target_entropy: Option<f64>, action_dim: usize, lr: f64) -> Result<Self> {
        if !(initial_beta > 0.0) || !initial_beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "initial beta must be > 0, got {initial_beta}"
            )));
        }
        Ok(EntropyCoefficient::Auto {
            log_beta: initial_beta.ln(),
            target_entropy: target_entropy.unwrap_or(-(action_dim as f64)),
            optimizer: AdamState::for_block_lens(&[1], AdamConfig::with_lr(lr)),
        })
    }

    pub fn beta(&self) -> f64 {
        match self {
            EntropyCoefficient::Fixed { beta } => *beta,
            EntropyCoefficient::Auto { log_beta, .. } => log_beta.exp(),
        }
    }

    /// One descent step on `log_beta * mean(-log_pi - target_entropy)`.
    /// No-op in fixed mode.
    pub fn update(&mut self, batch_log_probs: &[f64]) -> Result<()> {
        let EntropyCoefficient::Auto {
            log_beta,
            target_entropy,
            optimizer,
        } = self
        else {
            return Ok(());
        };
        if batch_log_probs.is_empty() {
            return Ok(());
        }
        let mean_entropy =
            -batch_log_probs.iter().sum::<f64>() / batch_log_probs.len() as f64;
        let grad = mean_entropy - *target_entropy;
        let mut value = [*log_beta];
        optimizer.step_blocks(vec![&mut value[..]], &[&[grad][..]], |_| "log_beta".into())?;
        *log_beta = value[0];
        Ok(())
    }
}
