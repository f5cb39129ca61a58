//! Uplink TDMA MAC environment.
//!
//! `N` user equipments (UEs) share one uplink data slot per time step and each
//! owns a dedicated, error-free control channel towards the base station (BS).
//! The BS runs a fixed expert protocol: it acknowledges a lone successful
//! transmission and grants the next data slot to one of the UEs that asked for
//! it. All agents receive the same global reward.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};

/// Data-plane part of an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DataAction {
    NoOp = 0,
    /// Transmit the head-of-buffer dPDU.
    Transmit = 1,
    /// Drop the head-of-buffer dPDU.
    Delete = 2,
}

/// Control-plane part of an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Signal {
    Silent = 0,
    AccessRequest = 1,
}

/// Joint (data, signalling) action. Encoded as `2 * data + signal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    pub data: DataAction,
    pub signal: Signal,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const IDLE: Action = Action::new(DataAction::NoOp, Signal::Silent);

    pub const fn new(data: DataAction, signal: Signal) -> Self {
        Action { data, signal }
    }

    pub fn index(self) -> usize {
        2 * self.data as usize + self.signal as usize
    }

    pub fn from_index(idx: usize) -> Result<Self> {
        let data = match idx / 2 {
            0 => DataAction::NoOp,
            1 => DataAction::Transmit,
            2 => DataAction::Delete,
            _ => return Err(Error::contract(format!("action index {idx} out of range"))),
        };
        let signal = if idx % 2 == 0 {
            Signal::Silent
        } else {
            Signal::AccessRequest
        };
        Ok(Action { data, signal })
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..Self::COUNT).map(|i| Action::from_index(i).unwrap())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.data {
            DataAction::NoOp => "noop",
            DataAction::Transmit => "tx",
            DataAction::Delete => "del",
        };
        let s = match self.signal {
            Signal::Silent => "",
            Signal::AccessRequest => "+req",
        };
        write!(f, "{d}{s}")
    }
}

/// Downlink control message from the BS to one UE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DownlinkMsg {
    NoGrant = 0,
    Grant = 1,
    Ack = 2,
}

impl DownlinkMsg {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Result<Self> {
        match idx {
            0 => Ok(DownlinkMsg::NoGrant),
            1 => Ok(DownlinkMsg::Grant),
            2 => Ok(DownlinkMsg::Ack),
            _ => Err(Error::contract(format!("downlink index {idx} out of range"))),
        }
    }
}

/// One remembered slot: buffer level at its start, the action taken and the
/// BS answer to that action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HistoryEntry {
    pub buf: usize,
    pub action: Action,
    pub dl_msg: DownlinkMsg,
}

/// Local view of one UE: current buffer plus `M` history entries, most recent
/// first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub buf_now: usize,
    pub history: Vec<HistoryEntry>,
}

impl Observation {
    /// Observation before any slot has elapsed.
    pub fn initial(buf: usize, memory_len: usize) -> Self {
        Observation {
            buf_now: buf,
            history: vec![
                HistoryEntry {
                    buf,
                    action: Action::IDLE,
                    dl_msg: DownlinkMsg::NoGrant,
                };
                memory_len
            ],
        }
    }

    /// Most recent history entry.
    pub fn last(&self) -> &HistoryEntry {
        &self.history[0]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Number of UEs `N`.
    pub n_ues: usize,
    /// dPDUs each UE must deliver, `P`.
    pub p_pdus: usize,
    /// Buffer capacity `Q`.
    pub buffer_capacity: usize,
    /// Transport block error rate of the data channel.
    pub tbler: f64,
    /// History depth `M`.
    pub memory_len: usize,
    pub t_max: usize,
    pub reward_rho: f64,
    pub rng_seed: u64,
    /// Poisson UE arrival rate per slot; `None` puts every UE in the cell at t = 0.
    pub arrival_rate: Option<f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_ues: 2,
            p_pdus: 2,
            buffer_capacity: 10,
            tbler: 1e-4,
            memory_len: 1,
            t_max: 300,
            reward_rho: 3.0,
            rng_seed: 0,
            arrival_rate: None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ues == 0 {
            return Err(Error::config("n_ues must be at least 1"));
        }
        if self.p_pdus > self.buffer_capacity {
            return Err(Error::config(format!(
                "p_pdus ({}) exceeds buffer_capacity ({})",
                self.p_pdus, self.buffer_capacity
            )));
        }
        if !(0.0..=1.0).contains(&self.tbler) {
            return Err(Error::config(format!("tbler {} outside [0, 1]", self.tbler)));
        }
        if self.t_max == 0 {
            return Err(Error::config("t_max must be at least 1"));
        }
        if self.memory_len == 0 {
            return Err(Error::config("memory_len must be at least 1"));
        }
        if !(self.reward_rho > 0.0) || !self.reward_rho.is_finite() {
            return Err(Error::config("reward_rho must be positive and finite"));
        }
        if let Some(rate) = self.arrival_rate {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(Error::config("arrival_rate must be positive and finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UeState {
    pub buffer: usize,
    /// Whether the head-of-buffer dPDU has reached the BS at least once.
    pub head_delivered: bool,
    pub active: bool,
    /// Count of deletes of dPDUs the BS had received.
    pub delivered_total: usize,
    pub arrival_slot: usize,
    history: Vec<HistoryEntry>,
}

/// Per-UE diagnostics for one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UeStepInfo {
    /// Whether the UE took part in this slot.
    pub active: bool,
    pub collision: bool,
    pub tx_success: bool,
    /// First reception of the current head-of-buffer dPDU.
    pub first_success: bool,
    pub bad_delete: bool,
    pub good_delete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub reward: f64,
    pub done: bool,
    pub info: Vec<UeStepInfo>,
    /// Downlink messages issued in answer to this slot's actions.
    pub dl_msgs: Vec<DownlinkMsg>,
}

/// Downlink answer of the BS expert for one slot.
///
/// The UE whose lone transmission got through receives `Ack`, even if it also
/// asked for access. Among the remaining requesters one, drawn uniformly from
/// `rng`, receives `Grant`.
pub fn bs_expert_step(
    n_ues: usize,
    tx_success: Option<usize>,
    requests: &[usize],
    rng: &mut SimRng,
) -> Vec<DownlinkMsg> {
    let mut msgs = vec![DownlinkMsg::NoGrant; n_ues];
    if let Some(i) = tx_success {
        msgs[i] = DownlinkMsg::Ack;
    }
    let candidates: Vec<usize> = requests
        .iter()
        .copied()
        .filter(|&i| Some(i) != tx_success)
        .collect();
    if !candidates.is_empty() {
        let pick = candidates[rng.random_range(0..candidates.len())];
        msgs[pick] = DownlinkMsg::Grant;
    }
    msgs
}

/// Simulator state. Owns its random stream, so two environments built from the
/// same configuration evolve identically under identical actions.
#[derive(Debug, Clone)]
pub struct TdmaEnv {
    config: EnvConfig,
    t: usize,
    ues: Vec<UeState>,
    last_actions: Vec<Action>,
    last_dl: Vec<DownlinkMsg>,
    pending_requests: Vec<usize>,
    rng: SimRng,
}

impl TdmaEnv {
    /// Builds and resets an environment. Returns the initial observations.
    pub fn reset(config: EnvConfig) -> Result<(Self, Vec<Observation>)> {
        config.validate()?;
        let mut rng = rng_from_seed(config.rng_seed);
        let arrivals = sample_arrivals(config.n_ues, config.arrival_rate, &mut rng);
        let ues = arrivals
            .into_iter()
            .map(|arrival_slot| UeState {
                buffer: config.p_pdus,
                head_delivered: false,
                active: arrival_slot == 0,
                delivered_total: 0,
                arrival_slot,
                history: Observation::initial(config.p_pdus, config.memory_len).history,
            })
            .collect();
        let n = config.n_ues;
        let env = TdmaEnv {
            config,
            t: 0,
            ues,
            last_actions: vec![Action::IDLE; n],
            last_dl: vec![DownlinkMsg::NoGrant; n],
            pending_requests: Vec::new(),
            rng,
        };
        let obs = env.observations();
        Ok((env, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn ues(&self) -> &[UeState] {
        &self.ues
    }

    pub fn last_actions(&self) -> &[Action] {
        &self.last_actions
    }

    pub fn last_dl(&self) -> &[DownlinkMsg] {
        &self.last_dl
    }

    /// UEs whose access requests were answered by the last downlink.
    pub fn pending_requests(&self) -> &[usize] {
        &self.pending_requests
    }

    pub fn delivered_total(&self) -> usize {
        self.ues.iter().map(|u| u.delivered_total).sum()
    }

    fn arrivals_pending(&self) -> bool {
        self.ues.iter().any(|u| !u.active && u.arrival_slot > self.t)
    }

    /// True when nothing is left to do or the slot budget is exhausted.
    pub fn is_done(&self) -> bool {
        let drained = self
            .ues
            .iter()
            .all(|u| !u.active || u.buffer == 0)
            && !self.arrivals_pending();
        drained || self.t >= self.config.t_max
    }

    pub fn observation_of(&self, ue: usize) -> Result<Observation> {
        let u = self
            .ues
            .get(ue)
            .ok_or_else(|| Error::contract(format!("UE index {ue} out of range")))?;
        Ok(Observation {
            buf_now: u.buffer,
            history: u.history.clone(),
        })
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.ues.len())
            .map(|i| self.observation_of(i).unwrap())
            .collect()
    }

    /// Advances one slot. Inactive UEs are forced to idle regardless of the
    /// action supplied for them.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        let n = self.config.n_ues;
        if actions.len() != n {
            return Err(Error::contract(format!(
                "expected {n} actions, got {}",
                actions.len()
            )));
        }
        let actions: Vec<Action> = actions
            .iter()
            .zip(&self.ues)
            .map(|(&a, u)| if u.active { a } else { Action::IDLE })
            .collect();
        let mut info = vec![UeStepInfo::default(); n];
        for (inf, u) in info.iter_mut().zip(&self.ues) {
            inf.active = u.active;
        }
        let buf_before: Vec<usize> = self.ues.iter().map(|u| u.buffer).collect();

        // Data plane: a lone transmitter gets through unless the channel erases it.
        let transmitters: Vec<usize> = (0..n)
            .filter(|&i| actions[i].data == DataAction::Transmit && self.ues[i].buffer > 0)
            .collect();
        let mut tx_success = None;
        match transmitters.as_slice() {
            [] => {}
            [i] => {
                let erased = self.rng.random::<f64>() < self.config.tbler;
                if !erased {
                    tx_success = Some(*i);
                    info[*i].tx_success = true;
                    if !self.ues[*i].head_delivered {
                        self.ues[*i].head_delivered = true;
                        info[*i].first_success = true;
                    }
                }
            }
            many => {
                for &i in many {
                    info[i].collision = true;
                }
            }
        }

        for i in 0..n {
            let u = &mut self.ues[i];
            if actions[i].data == DataAction::Delete && u.buffer > 0 {
                if u.head_delivered {
                    info[i].good_delete = true;
                    u.delivered_total += 1;
                } else {
                    info[i].bad_delete = true;
                }
                u.buffer -= 1;
                u.head_delivered = false;
            }
        }

        let rho = self.config.reward_rho;
        let reward = if info.iter().any(|x| x.bad_delete) {
            -rho
        } else if info.iter().any(|x| x.good_delete || x.first_success) {
            rho
        } else {
            -1.0
        };

        let requests: Vec<usize> = (0..n)
            .filter(|&i| actions[i].signal == Signal::AccessRequest)
            .collect();
        let dl = bs_expert_step(n, tx_success, &requests, &mut self.rng);

        for i in 0..n {
            if !self.ues[i].active {
                continue;
            }
            let h = &mut self.ues[i].history;
            h.pop();
            h.insert(
                0,
                HistoryEntry {
                    buf: buf_before[i],
                    action: actions[i],
                    dl_msg: dl[i],
                },
            );
        }
        self.last_actions = actions;
        self.last_dl = dl.clone();
        self.pending_requests = requests;
        self.t += 1;
        let t = self.t;
        for u in self.ues.iter_mut() {
            if !u.active && u.arrival_slot <= t {
                u.active = true;
            }
        }

        Ok(StepResult {
            observations: self.observations(),
            reward,
            done: self.is_done(),
            info,
            dl_msgs: dl,
        })
    }
}

/// Arrival slot of every UE. The first UE opens the episode at slot 0; the
/// others follow after exponential inter-arrival gaps, rounded to slots.
fn sample_arrivals(n: usize, rate: Option<f64>, rng: &mut SimRng) -> Vec<usize> {
    let Some(rate) = rate else {
        return vec![0; n];
    };
    let exp = Exp::new(rate).expect("validated positive rate");
    let mut clock = 0.0f64;
    (0..n)
        .map(|i| {
            if i > 0 {
                clock += exp.sample(rng);
            }
            clock.round() as usize
        })
        .collect()
}

/// Writes one trace line per slot:
/// `slot<TAB>b,a,m;b,a,m...<TAB>reward<TAB>done`, where `b` is the buffer after
/// the slot, `a` the joint action index and `m` the downlink message index.
pub fn write_trace_line<W: Write>(
    out: &mut W,
    slot: usize,
    env: &TdmaEnv,
    result: &StepResult,
) -> std::io::Result<()> {
    let ues: Vec<String> = env
        .ues()
        .iter()
        .zip(env.last_actions())
        .zip(&result.dl_msgs)
        .map(|((u, a), m)| format!("{},{},{}", u.buffer, a.index(), m.index()))
        .collect();
    writeln!(
        out,
        "{slot}\t{}\t{}\t{}",
        ues.join(";"),
        result.reward,
        u8::from(result.done)
    )
}
