//! Hand-written transition table for N=2, P=1, Q=1, M=1, tbler=0, t_max=3,
//! and an exhaustive comparison of the environment against it.

use macproto::env::{Action, DownlinkMsg, EnvConfig, Observation, TdmaEnv};

/// Local UE state: buffered dPDUs and whether the BS already holds the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ue {
    Empty,
    Pending,
    Received,
}

/// What happened to one UE in a slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Event {
    delivered_first: bool,
    good_delete: bool,
    bad_delete: bool,
}

const NONE: Event = Event {
    delivered_first: false,
    good_delete: false,
    bad_delete: false,
};
const FIRST: Event = Event {
    delivered_first: true,
    ..NONE
};
const GOOD: Event = Event {
    good_delete: true,
    ..NONE
};
const BAD: Event = Event {
    bad_delete: true,
    ..NONE
};

/// (state, data action 0/1/2, transmits alone) -> (next state, event, acked).
/// `alone` only matters for a UE that actually transmits.
#[rustfmt::skip]
const TABLE: &[(Ue, usize, bool, Ue, Event, bool)] = &[
    (Ue::Empty,    0, false, Ue::Empty,    NONE,  false),
    (Ue::Empty,    0, true,  Ue::Empty,    NONE,  false),
    (Ue::Empty,    1, false, Ue::Empty,    NONE,  false),
    (Ue::Empty,    1, true,  Ue::Empty,    NONE,  false),
    (Ue::Empty,    2, false, Ue::Empty,    NONE,  false),
    (Ue::Empty,    2, true,  Ue::Empty,    NONE,  false),
    (Ue::Pending,  0, false, Ue::Pending,  NONE,  false),
    (Ue::Pending,  0, true,  Ue::Pending,  NONE,  false),
    (Ue::Pending,  1, false, Ue::Pending,  NONE,  false),
    (Ue::Pending,  1, true,  Ue::Received, FIRST, true),
    (Ue::Pending,  2, false, Ue::Empty,    BAD,   false),
    (Ue::Pending,  2, true,  Ue::Empty,    BAD,   false),
    (Ue::Received, 0, false, Ue::Received, NONE,  false),
    (Ue::Received, 0, true,  Ue::Received, NONE,  false),
    (Ue::Received, 1, false, Ue::Received, NONE,  false),
    (Ue::Received, 1, true,  Ue::Received, NONE,  true),
    (Ue::Received, 2, false, Ue::Empty,    GOOD,  false),
    (Ue::Received, 2, true,  Ue::Empty,    GOOD,  false),
];

fn lookup(s: Ue, data: usize, alone: bool) -> (Ue, Event, bool) {
    let row = TABLE
        .iter()
        .find(|r| r.0 == s && r.1 == data && r.2 == alone)
        .expect("table is total");
    (row.3, row.4, row.5)
}

fn buf(s: Ue) -> usize {
    if s == Ue::Empty {
        0
    } else {
        1
    }
}

fn reward(events: &[Event]) -> f64 {
    if events.iter().any(|e| e.bad_delete) {
        -3.0
    } else if events.iter().any(|e| e.good_delete || e.delivered_first) {
        3.0
    } else {
        -1.0
    }
}

/// Replays all 6^6 joint-action sequences; panics on the first mismatch.
/// Returns the number of slots compared.
pub fn verify_all_sequences() -> usize {
    let config = EnvConfig {
        n_ues: 2,
        p_pdus: 1,
        buffer_capacity: 1,
        tbler: 0.0,
        memory_len: 1,
        t_max: 3,
        ..EnvConfig::default()
    };
    let mut checked_steps = 0usize;
    let mut grant_ties = 0usize;
    for code in 0..6usize.pow(6) {
        let mut digits = code;
        let mut seq = [[0usize; 2]; 3];
        for slot in &mut seq {
            for a in slot.iter_mut() {
                *a = digits % 6;
                digits /= 6;
            }
        }
        let (mut env, obs) = TdmaEnv::reset(EnvConfig {
            rng_seed: code as u64,
            ..config.clone()
        })
        .unwrap();
        let mut state = [Ue::Pending; 2];
        assert_eq!(obs[0], Observation::initial(1, 1));
        for (t, joint) in seq.iter().enumerate() {
            let actions = [Action::from_index(joint[0]).unwrap(), Action::from_index(joint[1]).unwrap()];
            let data = [joint[0] / 2, joint[1] / 2];
            let txs = (0..2).filter(|&i| data[i] == 1 && state[i] != Ue::Empty).count();
            let mut next = state;
            let mut events = [NONE; 2];
            let mut acked = [false; 2];
            for i in 0..2 {
                let (n, e, a) = lookup(state[i], data[i], txs == 1);
                next[i] = n;
                events[i] = e;
                acked[i] = a;
            }
            let res = env.step(&actions).unwrap();
            checked_steps += 1;
            assert_eq!(res.reward, reward(&events), "seq {seq:?} slot {t}");
            for i in 0..2 {
                assert_eq!(env.ues()[i].buffer, buf(next[i]), "seq {seq:?} slot {t} ue {i}");
                assert_eq!(env.ues()[i].head_delivered, next[i] == Ue::Received);
                assert_eq!(res.info[i].good_delete, events[i].good_delete);
                assert_eq!(res.info[i].bad_delete, events[i].bad_delete);
                assert_eq!(res.info[i].first_success, events[i].delivered_first);
            }

            // Downlink: Ack for the lone receiver, Grant to one other requester.
            let requesters: Vec<usize> = (0..2).filter(|&i| joint[i] % 2 == 1 && !acked[i]).collect();
            for i in 0..2 {
                let want = if acked[i] {
                    DownlinkMsg::Ack
                } else if requesters == [i] {
                    DownlinkMsg::Grant
                } else if requesters.len() == 2 {
                    res.dl_msgs[i]
                } else {
                    DownlinkMsg::NoGrant
                };
                assert_eq!(res.dl_msgs[i], want, "seq {seq:?} slot {t} ue {i}");
            }
            if requesters.len() == 2 {
                grant_ties += 1;
                let grants = res.dl_msgs.iter().filter(|&&m| m == DownlinkMsg::Grant).count();
                assert_eq!(grants, 1);
                assert!(!res.dl_msgs.contains(&DownlinkMsg::Ack));
            }

            for i in 0..2 {
                let o = &res.observations[i];
                assert_eq!(o.buf_now, buf(next[i]));
                assert_eq!(o.history.len(), 1);
                assert_eq!(o.last().buf, buf(state[i]));
                assert_eq!(o.last().action, actions[i]);
                assert_eq!(o.last().dl_msg, res.dl_msgs[i]);
            }

            state = next;
            let drained = state.iter().all(|&s| s == Ue::Empty);
            assert_eq!(res.done, drained || t + 1 == 3, "seq {seq:?} slot {t}");
            if res.done {
                break;
            }
        }
    }
    assert!(checked_steps > 6usize.pow(6));
    assert!(grant_ties > 0);
    checked_steps
}
