//! Finite observation space for buffer capacity `Q` and memory `M`.
//!
//! Observations are ordered lexicographically over
//! `(buf_now, h0.buf, h0.action, h0.dl, h1.buf, ...)`, which makes the index a
//! mixed-radix number with `buf_now` as the most significant digit.

use crate::env::{Action, DownlinkMsg, HistoryEntry, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObservationSpace {
    pub q: usize,
    pub m: usize,
}

impl ObservationSpace {
    pub fn new(q: usize, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::contract("memory length must be at least 1"));
        }
        Ok(ObservationSpace { q, m })
    }

    fn levels(&self) -> usize {
        self.q + 1
    }

    fn entry_radix(&self) -> usize {
        self.levels() * Action::COUNT * DownlinkMsg::COUNT
    }

    /// `(Q+1) * ((Q+1) * 6 * 3)^M`.
    pub fn len(&self) -> usize {
        self.levels() * self.entry_radix().pow(self.m as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, obs: &Observation) -> Result<usize> {
        if obs.history.len() != self.m {
            return Err(Error::contract(format!(
                "observation has {} history entries, expected {}",
                obs.history.len(),
                self.m
            )));
        }
        let check = |b: usize| {
            if b > self.q {
                Err(Error::contract(format!("buffer level {b} exceeds Q={}", self.q)))
            } else {
                Ok(b)
            }
        };
        let mut idx = check(obs.buf_now)?;
        for h in &obs.history {
            idx = idx * self.levels() + check(h.buf)?;
            idx = idx * Action::COUNT + h.action.index();
            idx = idx * DownlinkMsg::COUNT + h.dl_msg.index();
        }
        Ok(idx)
    }

    pub fn observation_at(&self, idx: usize) -> Result<Observation> {
        if idx >= self.len() {
            return Err(Error::contract(format!(
                "observation index {idx} out of range (len {})",
                self.len()
            )));
        }
        let mut rest = idx;
        let mut history = Vec::with_capacity(self.m);
        for _ in 0..self.m {
            let dl = rest % DownlinkMsg::COUNT;
            rest /= DownlinkMsg::COUNT;
            let a = rest % Action::COUNT;
            rest /= Action::COUNT;
            let b = rest % self.levels();
            rest /= self.levels();
            history.push(HistoryEntry {
                buf: b,
                action: Action::from_index(a)?,
                dl_msg: DownlinkMsg::from_index(dl)?,
            });
        }
        history.reverse();
        Ok(Observation {
            buf_now: rest,
            history,
        })
    }

    /// All observations in canonical order.
    pub fn enumerate(&self) -> Vec<Observation> {
        (0..self.len())
            .map(|i| self.observation_at(i).unwrap())
            .collect()
    }

    /// Width of the one-hot encoding: `(Q+1) + M * ((Q+1) + 6 + 3)`.
    pub fn onehot_dim(&self) -> usize {
        self.levels() + self.m * (self.levels() + Action::COUNT + DownlinkMsg::COUNT)
    }

    /// Positions of the `1 + 3M` ones of the one-hot encoding.
    pub fn onehot_positions(&self, obs: &Observation) -> Vec<usize> {
        let mut pos = Vec::with_capacity(1 + 3 * self.m);
        pos.push(obs.buf_now.min(self.q));
        let mut base = self.levels();
        for h in &obs.history {
            pos.push(base + h.buf.min(self.q));
            base += self.levels();
            pos.push(base + h.action.index());
            base += Action::COUNT;
            pos.push(base + h.dl_msg.index());
            base += DownlinkMsg::COUNT;
        }
        pos
    }

    pub fn encode_onehot(&self, obs: &Observation) -> Vec<f64> {
        let mut v = vec![0.0; self.onehot_dim()];
        for p in self.onehot_positions(obs) {
            v[p] = 1.0;
        }
        v
    }
}

pub fn enumerate_observations(q: usize, m: usize) -> Result<Vec<Observation>> {
    Ok(ObservationSpace::new(q, m)?.enumerate())
}

pub fn observation_index(obs: &Observation, q: usize, m: usize) -> Result<usize> {
    ObservationSpace::new(q, m)?.index_of(obs)
}
