//! Contact-process trajectories built from the Harris field on a finite window.

mod replay;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use replay::{AppliedEvent, EventKind, Lane, LaneOutcome, Replay, ReplayOptions, StopRule};

use crate::error::{Error, Result};
use crate::field::HarrisField;
use crate::hitting::SurvivalPolicy;
use crate::lattice::{BoundaryPolicy, Site, Window};

/// Extra sites added around growth-sized windows.
pub const WINDOW_MARGIN: i64 = 2;

/// One simulated run of `xi^{lambda, A}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub lambda: f64,
    pub initial: BTreeSet<Site>,
    pub window: Window,
    /// Time at which the run starts (0 unless it is a progeny run).
    pub start: f64,
    /// Last time covered by the replay: the requested horizon, or earlier when a stop
    /// rule ended the run.
    pub horizon: f64,
    /// Applied state changes; empty unless requested.
    pub events: Vec<AppliedEvent>,
    pub events_recorded: bool,
    pub first_hit: BTreeMap<Site, f64>,
    pub final_config: BTreeSet<Site>,
    pub extinction_time: Option<f64>,
    pub boundary_hit: bool,
    pub boundary_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "time")]
pub enum Lifetime {
    Extinct(f64),
    AliveAtHorizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "time")]
pub enum SurvivalOutcome {
    Survives,
    /// Absolute extinction time of the progeny.
    Dies(f64),
}

impl SurvivalOutcome {
    pub fn survives(&self) -> bool {
        matches!(self, SurvivalOutcome::Survives)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub record_events: bool,
    pub stop: StopRule,
    pub start: f64,
}

impl Trajectory {
    fn from_outcome(
        lane: &Lane,
        window: &Window,
        horizon: f64,
        events_recorded: bool,
        outcome: LaneOutcome,
    ) -> Self {
        Trajectory {
            lambda: lane.lambda,
            initial: lane.initial.iter().cloned().collect(),
            window: window.clone(),
            start: lane.start,
            horizon,
            events: outcome.events,
            events_recorded,
            first_hit: outcome.first_hit.into_iter().collect(),
            final_config: outcome.final_config.into_iter().collect(),
            extinction_time: outcome.extinction_time,
            boundary_hit: outcome.boundary_time.is_some(),
            boundary_time: outcome.boundary_time,
        }
    }

    /// First infection time of `x`, if it happened within the run.
    pub fn hitting_time(&self, x: &Site) -> Result<Option<f64>> {
        if !self.window.contains(x) {
            return Err(Error::SiteOutsideWindow(x.clone()));
        }
        Ok(self.first_hit.get(x).copied())
    }

    /// `H_t`: the sites infected at some time in `[start, t]`.
    pub fn infected_region(&self, t: f64) -> Result<BTreeSet<Site>> {
        if !(t >= self.start && t <= self.horizon) {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        Ok(self.first_hit.iter().filter(|(_, &h)| h <= t).map(|(s, _)| s.clone()).collect())
    }

    pub fn lifetime(&self) -> Lifetime {
        match self.extinction_time {
            Some(t) if t <= self.horizon => Lifetime::Extinct(t),
            _ => Lifetime::AliveAtHorizon,
        }
    }

    pub fn is_alive_at(&self, t: f64) -> bool {
        self.extinction_time.is_none_or(|e| e > t)
    }

    /// Configuration at time `t`, replayed from the event log.
    pub fn configuration_at(&self, t: f64) -> Result<BTreeSet<Site>> {
        if !(t >= self.start && t <= self.horizon) {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        if !self.events_recorded {
            return Err(Error::InvalidParameter("trajectory was simulated without an event log".into()));
        }
        let mut config = self.initial.clone();
        for ev in self.events.iter().take_while(|e| e.time <= t) {
            match ev.kind {
                EventKind::Infection => config.insert(ev.site.clone()),
                EventKind::Recovery => config.remove(&ev.site),
            };
        }
        Ok(config)
    }
}

/// Replays the graphical construction for a single rate and initial set.
pub fn simulate(
    field: &HarrisField,
    lambda: f64,
    initial: &[Site],
    window: &Window,
    horizon: f64,
) -> Result<Trajectory> {
    simulate_with(field, lambda, initial, window, horizon, &SimOptions::default())
}

pub fn simulate_with(
    field: &HarrisField,
    lambda: f64,
    initial: &[Site],
    window: &Window,
    horizon: f64,
    options: &SimOptions,
) -> Result<Trajectory> {
    let mut runs = simulate_coupled_with(field, &[lambda], initial, window, horizon, options)?;
    Ok(runs.remove(0))
}

/// One clock replay shared by every rate in `lambdas`; returns one trajectory per
/// rate, in input order.
pub fn simulate_coupled(
    field: &HarrisField,
    lambdas: &[f64],
    initial: &[Site],
    window: &Window,
    horizon: f64,
) -> Result<Vec<Trajectory>> {
    simulate_coupled_with(field, lambdas, initial, window, horizon, &SimOptions::default())
}

pub fn simulate_coupled_with(
    field: &HarrisField,
    lambdas: &[f64],
    initial: &[Site],
    window: &Window,
    horizon: f64,
    options: &SimOptions,
) -> Result<Vec<Trajectory>> {
    let lanes: Vec<Lane> = lambdas
        .iter()
        .map(|&l| Lane::starting_at(l, initial.to_vec(), options.start))
        .collect();
    simulate_lanes(field, &lanes, window, options.start + horizon, options)
}

/// Replays arbitrary lanes; `horizon` is absolute.
pub fn simulate_lanes(
    field: &HarrisField,
    lanes: &[Lane],
    window: &Window,
    horizon: f64,
    options: &SimOptions,
) -> Result<Vec<Trajectory>> {
    let replay_opts = ReplayOptions {
        record_events: options.record_events,
        track_first_hit: true,
        stop: options.stop.clone(),
    };
    let replay = Replay::new(field, lanes.to_vec(), window.clone(), horizon, replay_opts)?;
    let stopped = replay_end(replay);
    Ok(lanes
        .iter()
        .zip(stopped.1)
        .map(|(lane, outcome)| {
            Trajectory::from_outcome(lane, window, stopped.0, options.record_events, outcome)
        })
        .collect())
}

fn replay_end(mut replay: Replay<'_>) -> (f64, Vec<LaneOutcome>) {
    replay.run();
    let all_dead = (0..replay.lane_count()).all(|k| replay.extinction_time(k).is_some());
    let end = if all_dead { replay.horizon() } else { replay.now() };
    (end, replay.finish())
}

/// `hitting_time` as a free function.
pub fn hitting_time(traj: &Trajectory, x: &Site) -> Result<Option<f64>> {
    traj.hitting_time(x)
}

pub fn infected_region(traj: &Trajectory, t: f64) -> Result<BTreeSet<Site>> {
    traj.infected_region(t)
}

pub fn lifetime(traj: &Trajectory) -> Lifetime {
    traj.lifetime()
}

/// Window used for progeny runs under `policy`, centred at `x`.
pub fn progeny_window(x: &Site, policy: &SurvivalPolicy) -> Window {
    let radius = (policy.window_factor * policy.t_surv).ceil() as i64 + WINDOW_MARGIN;
    Window::centered(x.clone(), radius, BoundaryPolicy::Flag)
}

/// The progeny of the space-time point `(x, t0)` at rate `lambda`, followed for
/// `policy.t_surv` time units. Equivalent to running `xi^{0, lambda}` on the view
/// `T_x o theta_t0`, but expressed in the coordinates of `field`.
pub fn progeny(
    field: &HarrisField,
    lambda: f64,
    x: &Site,
    t0: f64,
    policy: &SurvivalPolicy,
) -> Result<Trajectory> {
    x.check_dim(field.dimension())?;
    let window = progeny_window(x, policy);
    let options = SimOptions { start: t0, ..SimOptions::default() };
    simulate_with(field, lambda, std::slice::from_ref(x), &window, policy.t_surv, &options)
}

/// Finite-horizon stand-in for "the progeny of `(x, t0)` lives forever": alive after
/// `policy.t_surv` time units.
pub fn survival_proxy(
    field: &HarrisField,
    lambda: f64,
    x: &Site,
    t0: f64,
    policy: &SurvivalPolicy,
) -> Result<SurvivalOutcome> {
    let run = progeny(field, lambda, x, t0, policy)?;
    Ok(match run.extinction_time {
        Some(t) => SurvivalOutcome::Dies(t),
        None => SurvivalOutcome::Survives,
    })
}
