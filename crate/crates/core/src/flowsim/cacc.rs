use crate::netmodel::Link;

pub const DEFAULT_ALPHA: f64 = 0.9;

/// CACC-adjusted per-lane capacity and backward wave speed for a link whose
/// current vehicles are a share `p` CACC-equipped.
///
/// Capacity grows quadratically, `q' = q_max (1 + alpha p^2)`; the wave
/// speed is recomputed on the triangular diagram with `k_j` and `v_f` held
/// fixed and never drops below the link's base `w` (clamped to 0.99 v_f).
pub fn cacc_adjust(link: &Link, p: f64, alpha: f64) -> (f64, f64) {
    let p = p.clamp(0.0, 1.0);
    if p == 0.0 {
        return (link.capacity, link.wave_speed);
    }
    let vf = link.free_flow_speed;
    let cap = link.capacity * (1.0 + alpha * p * p);
    let denom = link.jam_density * vf - cap;
    let w = if denom > 0.0 { cap * vf / denom } else { f64::INFINITY };
    (cap, w.max(link.wave_speed).min(vf * 0.99))
}
