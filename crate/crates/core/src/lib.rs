//! Simulation and estimation toolkit for the supercritical contact process on `Z^d`.
//!
//! The crate is organised bottom-up:
//!
//! * [`field`] realises the Harris space-time random field (rate-`lambda_max` edge
//!   clocks carrying uniform marks, rate-1 recovery clocks) as a pure function of a
//!   seed, together with thinning and the time/space translation operators.
//! * [`sim`] replays the graphical construction on a finite window, for any number of
//!   coupled lanes (several infection rates, initial sets or start times sharing one
//!   clock replay).
//! * [`hitting`] computes essential hitting times through the alternating `u`/`v`
//!   stopping-time recursion and checks the good-event mechanism used for
//!   left-continuity.
//! * [`estimators`] turns replicas into survival-conditioned estimates of the time
//!   constant, asymptotic shape radii, continuity scans and good-growth
//!   probabilities.
//! * [`oracle`] computes exact transient laws on tiny lattices by uniformization and
//!   compares them with the simulator.

pub mod error;
pub mod estimators;
pub mod field;
pub mod hitting;
pub mod lattice;
pub mod oracle;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use field::{ArrivalSequence, HarrisField};
pub use hitting::{HittingRecord, HittingStatus, SurvivalPolicy};
pub use lattice::{BoundaryPolicy, ClockKey, KeyKind, Site, Window};
pub use sim::{Lifetime, SurvivalOutcome, Trajectory};
