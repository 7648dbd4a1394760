use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Activity, ActivityPlan, ActivityType, Person};
use crate::router::Mode;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
}

pub fn write_persons<W: Write>(persons: &[Person], w: W) -> Result<(), DumpError> {
    let mut wr = csv::Writer::from_writer(w);
    for p in persons {
        wr.serialize(p)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_persons<R: Read>(r: R) -> Result<Vec<Person>, DumpError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.deserialize().enumerate() {
        let p: Person = rec?;
        if p.telecommuter_today && !p.worker {
            return Err(DumpError::Invalid { line: i + 2, msg: "telecommuter must be a worker".into() });
        }
        if !(1..=5).contains(&p.income_quintile) {
            return Err(DumpError::Invalid { line: i + 2, msg: "quintile outside 1-5".into() });
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct PlanRow {
    person: u32,
    seq: u32,
    kind: ActivityType,
    zone: usize,
    start: f64,
    duration: f64,
    mode: Option<Mode>,
    depart: Option<f64>,
    flexible: bool,
}

/// One row per activity.
pub fn write_plans<W: Write>(plans: &[ActivityPlan], w: W) -> Result<(), DumpError> {
    let mut wr = csv::Writer::from_writer(w);
    for plan in plans {
        for (seq, a) in plan.activities.iter().enumerate() {
            wr.serialize(PlanRow {
                person: plan.person,
                seq: seq as u32,
                kind: a.kind,
                zone: a.zone,
                start: a.start,
                duration: a.duration,
                mode: a.mode,
                depart: a.depart,
                flexible: a.flexible,
            })?;
        }
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_plans<R: Read>(r: R) -> Result<Vec<ActivityPlan>, DumpError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out: Vec<ActivityPlan> = Vec::new();
    for (i, rec) in rd.deserialize().enumerate() {
        let row: PlanRow = rec?;
        let line = i + 2;
        let a = Activity {
            kind: row.kind,
            zone: row.zone,
            start: row.start,
            duration: row.duration,
            mode: row.mode,
            depart: row.depart,
            flexible: row.flexible,
        };
        match out.last_mut() {
            Some(plan) if plan.person == row.person => {
                if row.seq as usize != plan.activities.len() {
                    return Err(DumpError::Invalid { line, msg: format!("activity seq {} out of order", row.seq) });
                }
                plan.activities.push(a);
            }
            _ => {
                if row.seq != 0 {
                    return Err(DumpError::Invalid { line, msg: "plan must start at seq 0".into() });
                }
                out.push(ActivityPlan { person: row.person, activities: vec![a] });
            }
        }
    }
    for plan in &out {
        let (first, last) = (plan.activities.first().unwrap(), plan.activities.last().unwrap());
        if first.kind != ActivityType::Home || last.kind != ActivityType::Home {
            return Err(DumpError::Invalid { line: 0, msg: format!("plan of person {} must start and end at home", plan.person) });
        }
    }
    Ok(out)
}
