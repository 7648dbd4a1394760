use std::io::{Read, Write};
use std::sync::atomic::{AtomicBool, Ordering};

use crate::clock;
use crate::netmodel::Network;

/// Historical mean link travel times per 15-minute period.
#[derive(Debug)]
pub struct TravelTimeTable {
    pub period: f64,
    /// Number of updates folded in so far.
    pub iteration: u32,
    free_flow: Vec<f64>,
    /// Row-major by link, `clock::NUM_PERIODS` entries per link.
    times: Vec<f64>,
    clamp_logged: AtomicBool,
}

impl Clone for TravelTimeTable {
    fn clone(&self) -> Self {
        TravelTimeTable {
            period: self.period,
            iteration: self.iteration,
            free_flow: self.free_flow.clone(),
            times: self.times.clone(),
            clamp_logged: AtomicBool::new(false),
        }
    }
}

impl PartialEq for TravelTimeTable {
    fn eq(&self, other: &Self) -> bool {
        self.iteration == other.iteration && self.free_flow == other.free_flow && self.times == other.times
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("travel-time table line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl TravelTimeTable {
    /// Table initialized to free-flow times.
    pub fn free_flow(net: &Network) -> Self {
        let free_flow: Vec<f64> = net.links.iter().map(|l| l.free_flow_time()).collect();
        let times = free_flow.iter().flat_map(|&t| std::iter::repeat_n(t, clock::NUM_PERIODS)).collect();
        TravelTimeTable { period: clock::PERIOD, iteration: 0, free_flow, times, clamp_logged: AtomicBool::new(false) }
    }

    pub fn num_links(&self) -> usize {
        self.free_flow.len()
    }

    pub fn free_flow_time(&self, link: usize) -> f64 {
        self.free_flow[link]
    }

    /// Period index for clock time `t`, clamped into the horizon.
    pub fn period_index(&self, t: f64) -> usize {
        match clock::period_of(t) {
            Some(p) => p,
            None => {
                if !self.clamp_logged.swap(true, Ordering::Relaxed) {
                    log::warn!("travel-time lookup at t={t} outside the horizon; clamping");
                }
                if t < clock::HORIZON_START {
                    0
                } else {
                    clock::NUM_PERIODS - 1
                }
            }
        }
    }

    pub fn get(&self, link: usize, period: usize) -> f64 {
        self.times[link * clock::NUM_PERIODS + period]
    }

    pub fn at(&self, link: usize, t: f64) -> f64 {
        self.get(link, self.period_index(t))
    }

    /// Set a cell; values below free flow are raised to free flow.
    pub fn set(&mut self, link: usize, period: usize, seconds: f64) {
        self.times[link * clock::NUM_PERIODS + period] = seconds.max(self.free_flow[link]);
    }

    /// Fold one iteration of measurements in by successive averages.
    /// Unmeasured cells relax toward free flow at the same rate.
    pub fn update_historical(&mut self, measured: &[Vec<Option<f64>>], iteration: u32) {
        let step = 1.0 / (iteration as f64 + 1.0);
        for (link, row) in measured.iter().enumerate() {
            let ff = self.free_flow[link];
            for p in 0..clock::NUM_PERIODS {
                let old = self.get(link, p);
                let target = row.get(p).copied().flatten().unwrap_or(ff).max(ff);
                self.set(link, p, old + (target - old) * step);
            }
        }
        self.iteration = iteration + 1;
    }

    /// Write `link_id,period_idx,seconds` rows.
    pub fn write_csv<W: Write>(&self, net: &Network, w: W) -> Result<(), TableError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["link_id", "period_idx", "seconds"])?;
        for (li, link) in net.links.iter().enumerate() {
            for p in 0..clock::NUM_PERIODS {
                wr.write_record([link.id.to_string(), p.to_string(), self.get(li, p).to_string()])?;
            }
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Read a table written by [`write_csv`](Self::write_csv). Missing cells
    /// stay at free flow.
    pub fn read_csv<R: Read>(net: &Network, r: R) -> Result<Self, TableError> {
        let mut table = TravelTimeTable::free_flow(net);
        let mut rd = csv::Reader::from_reader(r);
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |msg: &str| TableError::Invalid { line, msg: msg.to_string() };
            let field = |k: usize| rec.get(k).ok_or_else(|| bad("missing field"));
            let id: u32 = field(0)?.trim().parse().map_err(|_| bad("link_id"))?;
            let p: usize = field(1)?.trim().parse().map_err(|_| bad("period_idx"))?;
            let s: f64 = field(2)?.trim().parse().map_err(|_| bad("seconds"))?;
            let li = net.link_idx(id).ok_or_else(|| bad("unknown link_id"))?;
            if p >= clock::NUM_PERIODS {
                return Err(bad("period_idx out of range"));
            }
            if !s.is_finite() || s < 0.0 {
                return Err(bad("seconds"));
            }
            table.set(li, p, s);
        }
        Ok(table)
    }
}
