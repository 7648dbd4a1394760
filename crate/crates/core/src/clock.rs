//! Simulation clock conventions. Times are seconds after midnight of the
//! simulated day; the modeled horizon runs from 04:00 to 28:00 (04:00 of the
//! following morning).

pub const HOUR: f64 = 3600.0;
pub const MINUTE: f64 = 60.0;

pub const HORIZON_START: f64 = 4.0 * HOUR;
pub const HORIZON_END: f64 = 28.0 * HOUR;

/// Length of a router travel-time period.
pub const PERIOD: f64 = 900.0;
pub const NUM_PERIODS: usize = ((HORIZON_END - HORIZON_START) / PERIOD) as usize;

/// Number of whole hours covered by the horizon (hourly headways and tolls).
pub const NUM_HOURS: usize = ((HORIZON_END - HORIZON_START) / HOUR) as usize;

/// Overnight delivery window, 19:00 to 06:00 of the next day.
pub const OVERNIGHT_START: f64 = 19.0 * HOUR;
pub const OVERNIGHT_END: f64 = 30.0 * HOUR;

pub const AM_PEAK: (f64, f64) = (7.0 * HOUR, 9.0 * HOUR);
pub const PM_PEAK: (f64, f64) = (16.0 * HOUR, 18.0 * HOUR);

/// Index of the 15-minute period containing `t`, or `None` outside the horizon.
pub fn period_of(t: f64) -> Option<usize> {
    if !(HORIZON_START..HORIZON_END).contains(&t) {
        return None;
    }
    Some(((t - HORIZON_START) / PERIOD) as usize)
}

/// Hour index (0 = 04:00-05:00) clamped into the horizon.
pub fn hour_index(t: f64) -> usize {
    let h = ((t - HORIZON_START) / HOUR).floor();
    h.clamp(0.0, (NUM_HOURS - 1) as f64) as usize
}

pub fn in_window(t: f64, window: (f64, f64)) -> bool {
    t >= window.0 && t < window.1
}

pub fn is_overnight(t: f64) -> bool {
    in_window(t, (OVERNIGHT_START, OVERNIGHT_END))
}

pub fn is_peak(t: f64) -> bool {
    in_window(t, AM_PEAK) || in_window(t, PM_PEAK)
}
