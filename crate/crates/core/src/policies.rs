//! Channel-access policies: the two hand-coded expert protocols, the uniform
//! random policy, and the [`Controller`] trait every evaluated solution
//! implements.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, DataAction, DownlinkMsg, Observation, Signal};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Probability vector over the six joint actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDistribution(pub [f64; Action::COUNT]);

impl PolicyDistribution {
    pub fn one_hot(action: Action) -> Self {
        let mut p = [0.0; Action::COUNT];
        p[action.index()] = 1.0;
        PolicyDistribution(p)
    }

    pub fn uniform() -> Self {
        PolicyDistribution([1.0 / Action::COUNT as f64; Action::COUNT])
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        let arr: [f64; Action::COUNT] = p
            .try_into()
            .map_err(|_| Error::contract(format!("distribution has {} entries", p.len())))?;
        let d = PolicyDistribution(arr);
        d.check()?;
        Ok(d)
    }

    pub fn check(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("not a distribution: {:?}", self.0)));
        }
        Ok(())
    }

    pub fn probs(&self) -> &[f64; Action::COUNT] {
        &self.0
    }

    /// Most likely action, ties towards the lowest index.
    pub fn argmax(&self) -> Action {
        Action::from_index(argmax(&self.0)).unwrap()
    }

    pub fn is_one_hot(&self) -> bool {
        self.0.iter().filter(|&&x| x == 1.0).count() == 1
            && self.0.iter().filter(|&&x| x == 0.0).count() == Action::COUNT - 1
    }

    pub fn sample(&self, rng: &mut SimRng) -> Action {
        Action::from_index(sample_index(&self.0, rng)).unwrap()
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a discrete distribution.
pub fn sample_index(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// A stateless map from observations to action distributions.
pub trait Policy {
    fn act(&self, obs: &Observation) -> PolicyDistribution;
}

/// Anything that can drive a UE during evaluation.
pub trait Controller: Sync {
    fn select_action(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action>;
}

/// Request access, transmit only on grant, delete only on ACK.
#[derive(Debug, Clone, Copy, Default)]
pub struct GrantBasedExpert;

impl Policy for GrantBasedExpert {
    fn act(&self, obs: &Observation) -> PolicyDistribution {
        let a = if obs.buf_now == 0 {
            Action::IDLE
        } else {
            match obs.last().dl_msg {
                DownlinkMsg::Ack => Action::new(DataAction::Delete, Signal::Silent),
                DownlinkMsg::Grant => Action::new(DataAction::Transmit, Signal::Silent),
                DownlinkMsg::NoGrant => Action::new(DataAction::NoOp, Signal::AccessRequest),
            }
        };
        PolicyDistribution::one_hot(a)
    }
}

/// Transmit as soon as a dPDU is available, delete right after transmitting
/// without waiting for the ACK.
#[derive(Debug, Clone, Copy, Default)]
pub struct GrantFreeExpert;

impl Policy for GrantFreeExpert {
    fn act(&self, obs: &Observation) -> PolicyDistribution {
        let a = if obs.buf_now == 0 {
            Action::IDLE
        } else if obs.last().action.data == DataAction::Transmit {
            Action::new(DataAction::Delete, Signal::Silent)
        } else {
            Action::new(DataAction::Transmit, Signal::Silent)
        };
        PolicyDistribution::one_hot(a)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, _obs: &Observation) -> PolicyDistribution {
        PolicyDistribution::uniform()
    }
}

/// Named expert protocols, as referenced from configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpertKind {
    GrantBased,
    GrantFree,
}

impl ExpertKind {
    pub fn name(self) -> &'static str {
        match self {
            ExpertKind::GrantBased => "grant-based",
            ExpertKind::GrantFree => "grant-free",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grant-based" => Some(ExpertKind::GrantBased),
            "grant-free" => Some(ExpertKind::GrantFree),
            _ => None,
        }
    }
}

impl Policy for ExpertKind {
    fn act(&self, obs: &Observation) -> PolicyDistribution {
        match self {
            ExpertKind::GrantBased => GrantBasedExpert.act(obs),
            ExpertKind::GrantFree => GrantFreeExpert.act(obs),
        }
    }
}

/// Samples from any [`Policy`].
#[derive(Debug, Clone, Copy)]
pub struct Sampled<P>(pub P);

impl<P: Policy + Sync> Controller for Sampled<P> {
    fn select_action(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        Ok(self.0.act(obs).sample(rng))
    }
}
