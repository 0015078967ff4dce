//! Event-driven replay of the graphical construction for a bundle of coupled lanes.
//!
//! A lane is one process `xi^{lambda, A}` started at some time `start`. All lanes read
//! the same clocks; an edge arrival with mark `u` acts in every lane whose rate
//! satisfies `u <= lambda / lambda_max`, a recovery acts in every lane. Per site the
//! infected lanes form a bitset, so coupling hundreds of initial conditions costs one
//! replay.
//!
//! Only clocks next to a site infected in some lane are kept in the queue. A recovery
//! clock falls asleep when its site is healthy in every lane, an edge clock when both
//! endpoints are; waking a clock seeks the field to its first arrival after the
//! current time. Sleeping clocks only skip arrivals that could not change any lane.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::field::{Block, HarrisField};
use crate::lattice::{BoundaryPolicy, KeyKind, Site, Window};

/// One coupled process of a replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub lambda: f64,
    pub initial: Vec<Site>,
    /// Start time; clock arrivals at or before it are not seen by the lane.
    pub start: f64,
}

impl Lane {
    pub fn new(lambda: f64, initial: Vec<Site>) -> Self {
        Lane { lambda, initial, start: 0.0 }
    }

    pub fn starting_at(lambda: f64, initial: Vec<Site>, start: f64) -> Self {
        Lane { lambda, initial, start }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Recovery,
    Infection,
}

/// A state change applied to one lane.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AppliedEvent {
    pub time: f64,
    pub kind: EventKind,
    pub site: Site,
    /// Infecting neighbour, for infections.
    pub source: Option<Site>,
}

/// When a replay may stop before its horizon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StopRule {
    /// Never stop before this time (unless every lane is extinct).
    pub min_time: f64,
    /// A lane is settled once it has infected this site; without a target only
    /// extinction settles a lane.
    pub target: Option<Site>,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    pub record_events: bool,
    pub track_first_hit: bool,
    pub stop: StopRule,
}

/// Everything a replay knows about one lane once it has finished.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneOutcome {
    pub extinction_time: Option<f64>,
    pub boundary_time: Option<f64>,
    /// Coordinate-wise bounds of every site ever infected by the lane.
    pub ever_min: Vec<i64>,
    pub ever_max: Vec<i64>,
    pub final_config: Vec<Site>,
    pub first_hit: Vec<(Site, f64)>,
    pub events: Vec<AppliedEvent>,
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, PartialEq)]
struct Pending {
    time: f64,
    kind: u8,
    windex: u64,
    axis: u8,
    clock: u32,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we want the earliest event on top.
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.cmp(&self.kind))
            .then(other.windex.cmp(&self.windex))
            .then(other.axis.cmp(&self.axis))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Clock {
    hash: u64,
    block: u64,
    buf: Block,
    pos: usize,
    primed: bool,
    scheduled: bool,
}

struct LaneState {
    lambda: f64,
    start: f64,
    initial: Vec<Site>,
    started: bool,
    alive: usize,
    extinction: Option<f64>,
    boundary: Option<f64>,
    hit_target: bool,
    ever_min: Vec<i64>,
    ever_max: Vec<i64>,
    events: Vec<AppliedEvent>,
}

pub struct Replay<'f> {
    field: &'f HarrisField,
    window: Window,
    dim: usize,
    words: usize,
    horizon: f64,
    options: ReplayOptions,
    /// `(threshold, lane mask)` sorted by threshold; a mark `u` is accepted by the lanes
    /// of the first entry with `u <= threshold`.
    accept: Vec<(f64, Vec<u64>)>,
    lanes: Vec<LaneState>,
    pending_starts: Vec<usize>,
    slot_of: FxHashMap<u64, u32>,
    coords: Vec<i64>,
    windex: Vec<u64>,
    neighbours: Vec<u32>,
    infected: Vec<u64>,
    first_hit: Vec<f64>,
    clocks: Vec<Clock>,
    heap: BinaryHeap<Pending>,
    now: f64,
    target_slot: Option<u32>,
    settled: usize,
    finished: bool,
    scratch: Vec<u64>,
}

impl<'f> Replay<'f> {
    pub fn new(
        field: &'f HarrisField,
        lanes: Vec<Lane>,
        window: Window,
        horizon: f64,
        options: ReplayOptions,
    ) -> Result<Self> {
        let dim = field.dimension();
        window.center.check_dim(dim)?;
        if window.radius < 0 {
            return Err(Error::InvalidParameter("window radius must be nonnegative".into()));
        }
        if horizon.is_nan() || horizon < 0.0 {
            return Err(Error::NegativeTime(horizon));
        }
        for lane in &lanes {
            field.check_rate(lane.lambda)?;
            if lane.start.is_nan() || lane.start < 0.0 {
                return Err(Error::NegativeTime(lane.start));
            }
            for site in &lane.initial {
                site.check_dim(dim)?;
                if !window.contains(site) {
                    return Err(Error::SiteOutsideWindow(site.clone()));
                }
            }
        }
        if let Some(target) = &options.stop.target {
            target.check_dim(dim)?;
        }
        let words = lanes.len().div_ceil(64).max(1);

        let mut rates: Vec<f64> = lanes.iter().map(|l| l.lambda).collect();
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        let accept = rates
            .iter()
            .map(|&r| {
                let mut mask = vec![0u64; words];
                for (k, lane) in lanes.iter().enumerate() {
                    if lane.lambda >= r {
                        mask[k / 64] |= 1 << (k % 64);
                    }
                }
                (r / field.lambda_max(), mask)
            })
            .collect();

        let mut pending_starts: Vec<usize> = (0..lanes.len()).collect();
        // Popped from the back: latest start first in the vector.
        pending_starts.sort_by(|&a, &b| lanes[b].start.total_cmp(&lanes[a].start).then(b.cmp(&a)));

        let lane_states = lanes
            .into_iter()
            .map(|l| LaneState {
                lambda: l.lambda,
                start: l.start,
                initial: l.initial,
                started: false,
                alive: 0,
                extinction: None,
                boundary: None,
                hit_target: false,
                ever_min: vec![i64::MAX; dim],
                ever_max: vec![i64::MIN; dim],
                events: Vec::new(),
            })
            .collect();

        let mut replay = Replay {
            field,
            window,
            dim,
            words,
            horizon,
            options,
            accept,
            lanes: lane_states,
            pending_starts,
            slot_of: FxHashMap::default(),
            coords: Vec::new(),
            windex: Vec::new(),
            neighbours: Vec::new(),
            infected: Vec::new(),
            first_hit: Vec::new(),
            clocks: Vec::new(),
            heap: BinaryHeap::new(),
            now: 0.0,
            target_slot: None,
            settled: 0,
            finished: false,
            scratch: Vec::new(),
        };
        if let Some(target) = replay.options.stop.target.clone() {
            if replay.window.contains(&target) {
                replay.target_slot = Some(replay.slot(&target.0));
            }
        }
        Ok(replay)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn extinction_time(&self, lane: usize) -> Option<f64> {
        self.lanes[lane].extinction
    }

    pub fn boundary_time(&self, lane: usize) -> Option<f64> {
        self.lanes[lane].boundary
    }

    pub fn alive_count(&self, lane: usize) -> usize {
        self.lanes[lane].alive
    }

    pub fn is_infected(&self, lane: usize, site: &Site) -> bool {
        if !self.window.contains(site) {
            return false;
        }
        match self.slot_of.get(&self.window_index(&site.0)) {
            Some(&s) => self.bit(s, lane),
            None => false,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn bit(&self, slot: u32, lane: usize) -> bool {
        self.infected[slot as usize * self.words + lane / 64] >> (lane % 64) & 1 == 1
    }

    fn window_index(&self, coords: &[i64]) -> u64 {
        let side = self.window.side();
        coords
            .iter()
            .zip(&self.window.center.0)
            .fold(0u64, |acc, (c, o)| acc * side + (c - o + self.window.radius) as u64)
    }

    fn slot(&mut self, coords: &[i64]) -> u32 {
        let windex = self.window_index(coords);
        if let Some(&s) = self.slot_of.get(&windex) {
            return s;
        }
        let s = self.windex.len() as u32;
        self.slot_of.insert(windex, s);
        self.windex.push(windex);
        self.coords.extend_from_slice(coords);
        self.neighbours.extend(std::iter::repeat_n(NONE, 2 * self.dim));
        self.infected.extend(std::iter::repeat_n(0, self.words));
        if self.options.track_first_hit {
            self.first_hit.extend(std::iter::repeat_n(f64::NAN, self.lanes.len()));
        }
        let site_hash = self.field.view_key_hash(KeyKind::Site, coords, 0);
        self.clocks.push(Clock::new(site_hash));
        for axis in 0..self.dim {
            let hash = self.field.view_key_hash(KeyKind::Edge, coords, axis);
            self.clocks.push(Clock::new(hash));
        }
        s
    }

    fn site_coords(&self, slot: u32) -> &[i64] {
        let d = self.dim;
        &self.coords[slot as usize * d..(slot as usize + 1) * d]
    }

    /// Neighbour `slot ± e_axis`, if inside the window.
    fn neighbour(&mut self, slot: u32, axis: usize, up: bool) -> Option<u32> {
        let idx = slot as usize * 2 * self.dim + 2 * axis + usize::from(up);
        let cached = self.neighbours[idx];
        if cached != NONE {
            return Some(cached);
        }
        let mut c = self.site_coords(slot).to_vec();
        c[axis] += if up { 1 } else { -1 };
        if (c[axis] - self.window.center.0[axis]).abs() > self.window.radius {
            return None;
        }
        let n = self.slot(&c);
        self.neighbours[idx] = n;
        let back = n as usize * 2 * self.dim + 2 * axis + usize::from(!up);
        self.neighbours[back] = slot;
        Some(n)
    }

    fn clock_id(&self, slot: u32, kind: KeyKind, axis: usize) -> usize {
        let base = slot as usize * (1 + self.dim);
        match kind {
            KeyKind::Site => base,
            KeyKind::Edge => base + 1 + axis,
        }
    }

    /// Puts a sleeping clock back into the queue at its first arrival after `now`.
    fn wake(&mut self, slot: u32, kind: KeyKind, axis: usize) {
        let id = self.clock_id(slot, kind, axis);
        if self.clocks[id].scheduled {
            return;
        }
        let offset = self.field.time_offset();
        if !self.clocks[id].primed {
            let block = self.field.block_of(kind, self.now + offset).saturating_sub(1);
            let clock = &mut self.clocks[id];
            clock.block = block;
            clock.primed = true;
            self.field.block_arrivals(kind, clock.hash, block, &mut clock.buf);
            clock.pos = 0;
        }
        self.schedule(id, slot, kind, axis);
    }

    fn schedule(&mut self, id: usize, slot: u32, kind: KeyKind, axis: usize) {
        let offset = self.field.time_offset();
        let now = self.now;
        let field = self.field;
        let clock = &mut self.clocks[id];
        // At most one pending entry per clock.
        if clock.scheduled {
            return;
        }
        loop {
            while clock.pos < clock.buf.len() {
                let t = clock.buf[clock.pos].base_time - offset;
                if t > now {
                    clock.scheduled = true;
                    let kind_code = match kind {
                        KeyKind::Site => 0,
                        KeyKind::Edge => 1,
                    };
                    self.heap.push(Pending {
                        time: t,
                        kind: kind_code,
                        windex: self.windex[slot as usize],
                        axis: axis as u8,
                        clock: id as u32,
                    });
                    return;
                }
                clock.pos += 1;
            }
            clock.block += 1;
            field.block_arrivals(kind, clock.hash, clock.block, &mut clock.buf);
            clock.pos = 0;
        }
    }

    /// Wakes every clock touching `slot`.
    fn activate(&mut self, slot: u32) {
        self.wake(slot, KeyKind::Site, 0);
        for axis in 0..self.dim {
            if self.neighbour(slot, axis, true).is_some() {
                self.wake(slot, KeyKind::Edge, axis);
            }
            if let Some(lower) = self.neighbour(slot, axis, false) {
                self.wake(lower, KeyKind::Edge, axis);
            }
        }
    }

    fn slot_is_healthy(&self, slot: u32) -> bool {
        let w = self.words;
        self.infected[slot as usize * w..(slot as usize + 1) * w].iter().all(|&m| m == 0)
    }

    fn infect(&mut self, lane: usize, slot: u32, source: Option<u32>) {
        let w = self.words;
        let d = self.dim;
        self.infected[slot as usize * w + lane / 64] |= 1 << (lane % 64);
        let time = self.now;
        if self.options.track_first_hit {
            let fh = &mut self.first_hit[slot as usize * self.lanes.len() + lane];
            if fh.is_nan() {
                *fh = time;
            }
        }
        let coords = &self.coords[slot as usize * d..(slot as usize + 1) * d];
        let boundary = source.is_some()
            && self.window.boundary_policy == BoundaryPolicy::Flag
            && coords
                .iter()
                .zip(&self.window.center.0)
                .any(|(c, o)| (c - o).abs() == self.window.radius);
        let state = &mut self.lanes[lane];
        state.alive += 1;
        for (axis, &c) in coords.iter().enumerate() {
            state.ever_min[axis] = state.ever_min[axis].min(c);
            state.ever_max[axis] = state.ever_max[axis].max(c);
        }
        if boundary && state.boundary.is_none() {
            state.boundary = Some(time);
        }
        if let (true, Some(src)) = (self.options.record_events, source) {
            let source_site = Site(self.coords[src as usize * d..(src as usize + 1) * d].to_vec());
            state.events.push(AppliedEvent {
                time,
                kind: EventKind::Infection,
                site: Site(coords.to_vec()),
                source: Some(source_site),
            });
        }
        if self.target_slot == Some(slot) && !state.hit_target {
            state.hit_target = true;
            if state.extinction.is_none() {
                self.settled += 1;
            }
        }
    }

    fn heal(&mut self, lane: usize, slot: u32) {
        let time = self.now;
        let record = self.options.record_events;
        let site = record.then(|| Site(self.site_coords(slot).to_vec()));
        let state = &mut self.lanes[lane];
        state.alive -= 1;
        if let Some(site) = site {
            state.events.push(AppliedEvent { time, kind: EventKind::Recovery, site, source: None });
        }
        if state.alive == 0 {
            state.extinction = Some(time);
            if !state.hit_target {
                self.settled += 1;
            }
        }
    }

    fn start_lane(&mut self, lane: usize) {
        self.now = self.now.max(self.lanes[lane].start);
        self.lanes[lane].started = true;
        let initial = std::mem::take(&mut self.lanes[lane].initial);
        for site in &initial {
            let slot = self.slot(&site.0);
            if self.bit(slot, lane) {
                continue;
            }
            let was_healthy = self.slot_is_healthy(slot);
            self.infect(lane, slot, None);
            if was_healthy {
                self.activate(slot);
            }
        }
        if self.lanes[lane].alive == 0 {
            let time = self.now;
            let state = &mut self.lanes[lane];
            state.extinction = Some(time);
            if !state.hit_target {
                self.settled += 1;
            }
        }
        self.lanes[lane].initial = initial;
    }

    fn all_settled(&self) -> bool {
        self.settled == self.lanes.len() && self.pending_starts.is_empty()
    }

    fn all_extinct(&self) -> bool {
        self.pending_starts.is_empty() && self.lanes.iter().all(|l| l.extinction.is_some())
    }

    /// Processes the next lane start or clock event. Returns `false` once the replay is
    /// over (horizon passed, every lane extinct, or the stop rule satisfied).
    pub fn step(&mut self) -> bool {
        if self.finished {
            return false;
        }
        let next_event = self.heap.peek().map(|p| p.time).unwrap_or(f64::INFINITY);
        if let Some(&lane) = self.pending_starts.last() {
            let start = self.lanes[lane].start;
            if start <= self.horizon && start < next_event {
                self.pending_starts.pop();
                self.start_lane(lane);
                return true;
            }
        }
        if self.all_extinct() {
            self.finished = true;
            return false;
        }
        if self.options.stop.target.is_some()
            && self.now >= self.options.stop.min_time
            && self.all_settled()
        {
            self.finished = true;
            return false;
        }
        let Some(pending) = self.heap.peek().copied() else {
            self.finished = true;
            return false;
        };
        if pending.time > self.horizon {
            self.now = self.now.max(self.horizon);
            self.finished = true;
            return false;
        }
        self.heap.pop();
        self.now = pending.time;
        let id = pending.clock as usize;
        let slot = (id / (1 + self.dim)) as u32;
        let sub = id % (1 + self.dim);
        self.clocks[id].scheduled = false;
        self.clocks[id].pos += 1;
        if sub == 0 {
            self.apply_recovery(slot);
        } else {
            self.apply_edge(id, slot, sub - 1);
        }
        true
    }

    fn apply_recovery(&mut self, slot: u32) {
        if self.slot_is_healthy(slot) {
            return;
        }
        let w = self.words;
        for word in 0..w {
            let mut m = self.infected[slot as usize * w + word];
            self.infected[slot as usize * w + word] = 0;
            while m != 0 {
                let bit = m.trailing_zeros() as usize;
                m &= m - 1;
                self.heal(word * 64 + bit, slot);
            }
        }
    }

    fn apply_edge(&mut self, id: usize, lower: u32, axis: usize) {
        let Some(upper) = self.neighbour(lower, axis, true) else {
            return;
        };
        let lower_healthy = self.slot_is_healthy(lower);
        let upper_healthy = self.slot_is_healthy(upper);
        if lower_healthy && upper_healthy {
            return;
        }
        let mark = self.clocks[id].buf[self.clocks[id].pos - 1].mark;
        let accepted = self.accept.iter().position(|(threshold, _)| mark <= *threshold);
        if let Some(entry) = accepted {
            let w = self.words;
            self.scratch.clear();
            for word in 0..w {
                let a = self.accept[entry].1[word];
                let ml = self.infected[lower as usize * w + word];
                let mu = self.infected[upper as usize * w + word];
                self.scratch.push(ml & a & !mu);
                self.scratch.push(mu & a & !ml);
            }
            let mut changed_upper = false;
            let mut changed_lower = false;
            for word in 0..w {
                let mut up = self.scratch[2 * word];
                let mut down = self.scratch[2 * word + 1];
                changed_upper |= up != 0;
                changed_lower |= down != 0;
                while up != 0 {
                    let bit = up.trailing_zeros() as usize;
                    up &= up - 1;
                    self.infect(word * 64 + bit, upper, Some(lower));
                }
                while down != 0 {
                    let bit = down.trailing_zeros() as usize;
                    down &= down - 1;
                    self.infect(word * 64 + bit, lower, Some(upper));
                }
            }
            if changed_upper && upper_healthy {
                self.activate(upper);
            }
            if changed_lower && lower_healthy {
                self.activate(lower);
            }
        }
        self.schedule(id, lower, KeyKind::Edge, axis);
    }

    /// Runs every event with time `<= t` (bounded by the horizon).
    pub fn advance_to(&mut self, t: f64) {
        loop {
            if self.finished {
                return;
            }
            let next_event = self.heap.peek().map(|p| p.time).unwrap_or(f64::INFINITY);
            let next_start = self
                .pending_starts
                .last()
                .map(|&l| self.lanes[l].start)
                .unwrap_or(f64::INFINITY);
            if next_event.min(next_start) > t {
                if t <= self.horizon {
                    self.now = self.now.max(t);
                }
                return;
            }
            if !self.step() {
                return;
            }
        }
    }

    /// Steps until `site` becomes infected in `lane`, returning the infection time, or
    /// `None` if the lane dies or the horizon passes first.
    pub fn run_until_infected(&mut self, lane: usize, site: &Site) -> Option<f64> {
        if self.is_infected(lane, site) {
            return Some(self.now);
        }
        while self.step() {
            if self.is_infected(lane, site) {
                return Some(self.now);
            }
            if self.lanes[lane].extinction.is_some() && self.lanes[lane].started {
                return None;
            }
        }
        None
    }

    pub fn run(&mut self) {
        while self.step() {}
    }

    /// Runs to completion and extracts every lane's outcome.
    pub fn finish(mut self) -> Vec<LaneOutcome> {
        self.run();
        let k = self.lanes.len();
        let mut finals: Vec<Vec<Site>> = vec![Vec::new(); k];
        let mut hits: Vec<Vec<(Site, f64)>> = vec![Vec::new(); k];
        let mut order: Vec<u32> = (0..self.windex.len() as u32).collect();
        order.sort_by_key(|&s| self.windex[s as usize]);
        for &slot in &order {
            let w = self.words;
            let site = Site(self.site_coords(slot).to_vec());
            for word in 0..w {
                let mut m = self.infected[slot as usize * w + word];
                while m != 0 {
                    let bit = m.trailing_zeros() as usize;
                    m &= m - 1;
                    finals[word * 64 + bit].push(site.clone());
                }
            }
            if self.options.track_first_hit {
                for (lane, hit) in hits.iter_mut().enumerate() {
                    let t = self.first_hit[slot as usize * k + lane];
                    if !t.is_nan() {
                        hit.push((site.clone(), t));
                    }
                }
            }
        }
        self.lanes
            .into_iter()
            .zip(finals)
            .zip(hits)
            .map(|((lane, final_config), first_hit)| LaneOutcome {
                extinction_time: lane.extinction,
                boundary_time: lane.boundary,
                ever_min: lane.ever_min,
                ever_max: lane.ever_max,
                final_config,
                first_hit,
                events: lane.events,
            })
            .collect()
    }

    pub fn lane_lambda(&self, lane: usize) -> f64 {
        self.lanes[lane].lambda
    }
}

impl Clock {
    fn new(hash: u64) -> Self {
        Clock { hash, block: 0, buf: Block::new(), pos: 0, primed: false, scheduled: false }
    }
}
