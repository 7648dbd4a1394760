//! Desk-scale agent-based mesoscopic transportation scenario simulator.
//!
//! A synthetic city is described by delimited tables ([`netmodel`]), its
//! residents plan daily activities ([`demand`]), and their trips are loaded
//! onto a discrete-vehicle link-transmission model ([`flowsim`]) using a
//! time-dependent router with iterative travel-time learning ([`router`]).
//! Ride-hailing and freight operators ([`fleets`]) share the same network,
//! vehicle energy and emissions come from surrogate lookup tables
//! ([`energy`]), and [`scenarios`] combines supply and demand levers in a
//! full-factorial design. [`analytics`] fits interaction regressions over the
//! batch output and searches for the best lever combination.

pub mod analytics;
pub mod clock;
pub mod demand;
pub mod energy;
pub mod fleets;
pub mod flowsim;
pub mod netmodel;
pub mod par;
pub mod router;
pub mod scenarios;
pub mod seed;
pub mod toy;
