use crate::netmodel::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalDecision {
    /// Keep the active phase (minimum green not served, or before desired).
    Hold,
    /// Switch before the desired green: protected traffic is gone and
    /// opposing traffic is about to arrive.
    EarlySwitch,
    /// Switch at (or after) the desired green.
    AdvanceAtDesired,
    /// Keep serving protected traffic past the desired green.
    Extend,
    /// Maximum green reached; switch unconditionally.
    MaxOut,
}

impl SignalDecision {
    pub fn switches(self) -> bool {
        matches!(self, SignalDecision::EarlySwitch | SignalDecision::AdvanceAtDesired | SignalDecision::MaxOut)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalRuntime {
    pub active_phase: usize,
    pub phase_elapsed: f64,
}

/// For every movement at the signal, the earliest time (s from now) at which
/// some connected vehicle on that approach can reach the stop line. `None`
/// means no connected vehicle is approaching. Non-connected vehicles are
/// never included.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observations {
    pub earliest_crossing: Vec<(u32, Option<f64>)>,
}

impl Observations {
    fn any_within(&self, movements: impl Fn(u32) -> bool, horizon: f64) -> bool {
        self.earliest_crossing
            .iter()
            .any(|&(m, t)| movements(m) && t.is_some_and(|t| t <= horizon))
    }
}

/// Phase logic for connected (actuated-like) signals; non-connected signals
/// run fixed-time at the desired green.
///
/// Rules, in order:
/// * at maximum green, switch;
/// * before minimum green, hold;
/// * switch early when no protected vehicle can cross within `t_green` and
///   some opposing vehicle can cross within `t_red`;
/// * before desired green, hold;
/// * past desired green, extend while protected vehicles arrive within
///   `t_green` and no other movement does; otherwise advance.
pub fn signal_decide(signal: &Signal, runtime: &SignalRuntime, obs: &Observations) -> SignalDecision {
    let phase = &signal.phases[runtime.active_phase];
    let elapsed = runtime.phase_elapsed;
    if !signal.connected {
        return if elapsed >= phase.desired_green {
            SignalDecision::AdvanceAtDesired
        } else {
            SignalDecision::Hold
        };
    }
    if elapsed >= phase.max_green {
        return SignalDecision::MaxOut;
    }
    if elapsed < phase.min_green {
        return SignalDecision::Hold;
    }
    let protected = |m: u32| phase.movements.contains(&m);
    let other = |m: u32| !phase.movements.contains(&m);
    let protected_can_cross = obs.any_within(protected, signal.t_green);
    let opposing_can_cross = obs.any_within(other, signal.t_red);
    if !protected_can_cross && opposing_can_cross {
        return SignalDecision::EarlySwitch;
    }
    if elapsed < phase.desired_green {
        return SignalDecision::Hold;
    }
    let other_incoming = obs.any_within(other, signal.t_green);
    if protected_can_cross && !other_incoming {
        SignalDecision::Extend
    } else {
        SignalDecision::AdvanceAtDesired
    }
}
