use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Online,
    Target,
}

/// `N` online critics over `concat(state, action)` and their Polyak-averaged targets.
#[derive(Debug, Clone, PartialEq)]
pub struct QEnsemble {
    online: Vec<Mlp>,
    target: Vec<Mlp>,
    state_dim: usize,
    action_dim: usize,
}

/// Row-wise `concat(state, action)` for a batch.
pub fn concat_rows(states: &[f64], actions: &[f64], state_dim: usize, action_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(states.len() + actions.len());
    for (s, a) in states
        .chunks_exact(state_dim)
        .zip(actions.chunks_exact(action_dim))
    {
        out.extend_from_slice(s);
        out.extend_from_slice(a);
    }
    out
}

impl QEnsemble {
    /// Fresh ensemble; targets start as exact copies of the online members.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        members: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if members == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let online = (0..members)
            .map(|_| Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let target = online.clone();
        Self::from_members(online, target, state_dim, action_dim)
    }

    pub fn from_members(
        online: Vec<Mlp>,
        target: Vec<Mlp>,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        if online.is_empty() || online.len() != target.len() {
            return Err(Error::Dimension {
                what: "target ensemble size".into(),
                expected: online.len(),
                got: target.len(),
            });
        }
        for (i, (o, t)) in online.iter().zip(&target).enumerate() {
            if o.input_dim() != state_dim + action_dim || o.output_dim() != 1 {
                return Err(Error::Dimension {
                    what: format!("critic {i} input"),
                    expected: state_dim + action_dim,
                    got: o.input_dim(),
                });
            }
            if o.shape_signature() != t.shape_signature() {
                return Err(Error::InvalidArgument(format!(
                    "target critic {i} shape differs from its online network"
                )));
            }
        }
        Ok(Self {
            online,
            target,
            state_dim,
            action_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.online.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn members(&self, which: Which) -> &[Mlp] {
        match which {
            Which::Online => &self.online,
            Which::Target => &self.target,
        }
    }

    pub fn online_mut(&mut self) -> &mut [Mlp] {
        &mut self.online
    }

    fn input(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::Dimension {
                what: "critic state".into(),
                expected: self.state_dim,
                got: state.len(),
            });
        }
        if action.len() != self.action_dim {
            return Err(Error::Dimension {
                what: "critic action".into(),
                expected: self.action_dim,
                got: action.len(),
            });
        }
        Ok(concat_rows(state, action, self.state_dim, self.action_dim))
    }

    /// Member `i`'s value at `(state, action)`, in member order.
    pub fn q_values(&self, which: Which, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let x = self.input(state, action)?;
        self.members(which)
            .iter()
            .map(|m| Ok(m.forward(&x)?[0]))
            .collect()
    }

    pub fn q_min(&self, which: Which, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self
            .q_values(which, state, action)?
            .into_iter()
            .fold(f64::INFINITY, f64::min))
    }

    /// Per-member outputs for a batch: `result[i][n]`.
    pub fn q_values_batch(
        &self,
        which: Which,
        states: &[f64],
        actions: &[f64],
        batch: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let x = concat_rows(states, actions, self.state_dim, self.action_dim);
        self.members(which)
            .iter()
            .map(|m| Ok(m.forward_batch(&x, batch)?.output().to_vec()))
            .collect()
    }

    /// `target <- rho * target + (1 - rho) * online`, elementwise.
    pub fn polyak_update(&mut self, rho: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!(
                "Polyak coefficient {rho} outside [0, 1]"
            )));
        }
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            for (tb, ob) in t.blocks_mut().into_iter().zip(o.blocks()) {
                for (tv, ov) in tb.iter_mut().zip(ob) {
                    *tv = rho * *tv + (1.0 - rho) * ov;
                }
            }
        }
        Ok(())
    }
}
