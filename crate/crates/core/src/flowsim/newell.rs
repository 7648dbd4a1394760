/// One Newell car-following update in Lagrangian coordinates:
/// `x(t+dt) = min(x(t) + v_f dt, x_leader(t+dt-tau) - d)`.
///
/// `leader_lagged` is the leader's position at `t + dt - tau` in the same
/// link coordinates; `None` means the vehicle is first on its link and only
/// the free-flow term applies, bounded by `end` (the stop line). Positions
/// never decrease.
pub fn newell_advance(
    x: f64,
    free_flow_speed: f64,
    dt: f64,
    leader_lagged: Option<f64>,
    jam_spacing: f64,
    end: f64,
) -> f64 {
    let free = x + free_flow_speed * dt;
    let bound = match leader_lagged {
        Some(xl) => xl - jam_spacing,
        None => end,
    };
    free.min(bound).min(end).max(x)
}

/// Sample a trajectory stored newest-first at step resolution `dt` at
/// `lag` seconds before the newest sample, interpolating linearly. Lags
/// past the stored history return the oldest sample.
pub fn sample_lagged(history: &std::collections::VecDeque<f64>, lag: f64, dt: f64) -> f64 {
    debug_assert!(!history.is_empty());
    let steps = (lag / dt).max(0.0);
    let i = steps.floor() as usize;
    if i + 1 >= history.len() {
        return *history.back().unwrap();
    }
    let frac = steps - i as f64;
    history[i] + (history[i + 1] - history[i]) * frac
}
