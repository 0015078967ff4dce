//! Exact transient laws on tiny lattices, and the simulator-vs-exact comparison.
//!
//! Configurations are bitmasks over the lattice's site list: bit `i` set means
//! `sites[i]` is infected.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{replica_seed, HarrisField};
use crate::lattice::{BoundaryPolicy, Site, Window};
use crate::sim::simulate;
use crate::stats::chi_square_gof;

pub const MAX_SITES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyLattice {
    pub sites: Vec<Site>,
    pub edges: Vec<(usize, usize)>,
}

impl TinyLattice {
    pub fn new(sites: Vec<Site>, edges: Vec<(usize, usize)>) -> Result<Self> {
        if sites.len() > MAX_SITES {
            return Err(Error::OversizedLattice(sites.len()));
        }
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= sites.len() || b >= sites.len() || a == b) {
            return Err(Error::InvalidParameter(format!("edge ({a}, {b}) does not join two listed sites")));
        }
        Ok(TinyLattice { sites, edges })
    }

    /// Sites `0..n` of `Z` with nearest-neighbour edges.
    pub fn path(n: usize) -> Result<Self> {
        let sites = (0..n as i64).map(|i| Site::new([i])).collect();
        let edges = (1..n).map(|i| (i - 1, i)).collect();
        TinyLattice::new(sites, edges)
    }

    /// Every site of `window` with every nearest-neighbour edge inside it.
    pub fn from_window(window: &Window) -> Result<Self> {
        let count = window.site_count();
        if count > MAX_SITES as u64 {
            return Err(Error::OversizedLattice(count as usize));
        }
        let sites = window.sites();
        let edges = nearest_neighbour_pairs(&sites);
        TinyLattice::new(sites, edges)
    }

    pub fn state_count(&self) -> usize {
        1 << self.sites.len()
    }

    pub fn encode(&self, infected: &[Site]) -> Result<usize> {
        infected.iter().try_fold(0usize, |acc, s| {
            let i = self
                .sites
                .iter()
                .position(|t| t == s)
                .ok_or_else(|| Error::SiteOutsideWindow(s.clone()))?;
            Ok(acc | (1 << i))
        })
    }

    pub fn decode(&self, state: usize) -> Vec<Site> {
        (0..self.sites.len()).filter(|i| state >> i & 1 == 1).map(|i| self.sites[i].clone()).collect()
    }

    /// The simulator window whose sites and edges are exactly this lattice.
    pub fn embedding(&self) -> Result<Window> {
        let Some(first) = self.sites.first() else {
            return Err(Error::NonEmbeddable("empty lattice".into()));
        };
        let d = first.dim();
        if self.sites.iter().any(|s| s.dim() != d) {
            return Err(Error::NonEmbeddable("mixed dimensions".into()));
        }
        let lo: Vec<i64> = (0..d).map(|a| self.sites.iter().map(|s| s.0[a]).min().unwrap()).collect();
        let hi: Vec<i64> = (0..d).map(|a| self.sites.iter().map(|s| s.0[a]).max().unwrap()).collect();
        let spans: Vec<i64> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
        if spans.iter().any(|&s| s != spans[0] || s % 2 != 0) {
            return Err(Error::NonEmbeddable("site set is not a centred cube".into()));
        }
        let center = Site(lo.iter().zip(&hi).map(|(l, h)| (l + h) / 2).collect());
        let window = Window::centered(center, spans[0] / 2, BoundaryPolicy::Cutoff);
        let mut ours = self.sites.clone();
        ours.sort();
        ours.dedup();
        if ours.len() != self.sites.len() || ours != window.sites() {
            return Err(Error::NonEmbeddable("site set is not a full box".into()));
        }
        let mut ours_edges: Vec<(Site, Site)> =
            self.edges.iter().map(|&(a, b)| ordered(&self.sites[a], &self.sites[b])).collect();
        ours_edges.sort();
        ours_edges.dedup();
        let mut box_edges: Vec<(Site, Site)> = nearest_neighbour_pairs(&window.sites())
            .into_iter()
            .map(|(a, b)| ordered(&window.sites()[a], &window.sites()[b]))
            .collect();
        box_edges.sort();
        if ours_edges.len() != self.edges.len() || ours_edges != box_edges {
            return Err(Error::NonEmbeddable("edge set differs from the box's nearest-neighbour edges".into()));
        }
        Ok(window)
    }
}

fn ordered(a: &Site, b: &Site) -> (Site, Site) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

fn nearest_neighbour_pairs(sites: &[Site]) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            if sites[i].sub(&sites[j]).l1_norm() == 1 {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Dense CTMC generator, row-major: `entries[i * dimension + j]` is the rate `i -> j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    pub dimension: usize,
    pub entries: Vec<f64>,
}

impl RateMatrix {
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.dimension + to]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dimension..(i + 1) * self.dimension]
    }
}

pub fn build_generator(lattice: &TinyLattice, lambda: f64) -> Result<RateMatrix> {
    if lattice.sites.len() > MAX_SITES {
        return Err(Error::OversizedLattice(lattice.sites.len()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("rate must be positive, got {lambda}")));
    }
    let n = lattice.sites.len();
    let dim = lattice.state_count();
    let mut neighbours = vec![Vec::new(); n];
    for &(a, b) in &lattice.edges {
        neighbours[a].push(b);
        neighbours[b].push(a);
    }
    let mut entries = vec![0.0; dim * dim];
    for state in 0..dim {
        let mut out = 0.0;
        for i in 0..n {
            if state >> i & 1 == 1 {
                entries[state * dim + (state & !(1 << i))] += 1.0;
                out += 1.0;
            } else {
                let infected = neighbours[i].iter().filter(|&&j| state >> j & 1 == 1).count();
                if infected > 0 {
                    let r = lambda * infected as f64;
                    entries[state * dim + (state | (1 << i))] += r;
                    out += r;
                }
            }
        }
        entries[state * dim + state] = -out;
    }
    Ok(RateMatrix { dimension: dim, entries })
}

/// Law at time `t` started from `init`, by uniformization; the dropped Poisson tail
/// is below `tol`.
pub fn transient_distribution(q: &RateMatrix, init: usize, t: f64, tol: f64) -> Result<Vec<f64>> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidTolerance(tol));
    }
    if t.is_nan() || t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    let dim = q.dimension;
    if init >= dim {
        return Err(Error::InvalidParameter(format!("state {init} out of range")));
    }
    let mut p = vec![0.0; dim];
    p[init] = 1.0;
    let rate = (0..dim).map(|i| -q.rate(i, i)).fold(0.0, f64::max);
    if t == 0.0 || rate == 0.0 {
        return Ok(p);
    }
    let lt = rate * t;
    let mut result = vec![0.0; dim];
    let mut log_w = -lt;
    let mut covered = 0.0;
    let mut next = vec![0.0; dim];
    let mut k = 0usize;
    loop {
        let w = log_w.exp();
        covered += w;
        for (r, &x) in result.iter_mut().zip(&p) {
            *r += w * x;
        }
        if 1.0 - covered < tol && k as f64 >= lt {
            break;
        }
        // p <- p (I + Q / rate)
        next.copy_from_slice(&p);
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (j, &qij) in q.row(i).iter().enumerate() {
                if qij != 0.0 {
                    next[j] += pi * qij / rate;
                }
            }
        }
        std::mem::swap(&mut p, &mut next);
        k += 1;
        log_w += lt.ln() - (k as f64).ln();
    }
    Ok(result)
}

/// Exact probability that `target` is infected at some time in `[0, t]`, from the
/// generator with every configuration containing `target` made absorbing.
pub fn hitting_probability(
    lattice: &TinyLattice,
    lambda: f64,
    initial: &[Site],
    target: &Site,
    t: f64,
    tol: f64,
) -> Result<f64> {
    let bit = lattice.encode(std::slice::from_ref(target))?;
    let init = lattice.encode(initial)?;
    let mut q = build_generator(lattice, lambda)?;
    let dim = q.dimension;
    for state in (0..dim).filter(|s| s & bit != 0) {
        q.entries[state * dim..(state + 1) * dim].fill(0.0);
    }
    let law = transient_distribution(&q, init, t, tol)?;
    Ok((0..dim).filter(|s| s & bit != 0).map(|s| law[s]).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    /// Rate used by the simulator.
    pub lambda: f64,
    /// Rate used by the exact computation; equal to `lambda` except in power checks.
    pub oracle_lambda: f64,
    pub t: f64,
    pub replicas: usize,
    pub alpha_level: f64,
    pub base_seed: u64,
    pub lambda_max: f64,
    /// Indices of initially infected sites; the middle site when absent.
    pub initial: Option<Vec<usize>>,
    pub tol: f64,
}

impl OracleCheck {
    pub fn new(lambda: f64, t: f64, replicas: usize) -> Self {
        OracleCheck {
            lambda,
            oracle_lambda: lambda,
            t,
            replicas,
            alpha_level: 1e-3,
            base_seed: 0,
            lambda_max: lambda.max(3.0),
            initial: None,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub lambda: f64,
    pub oracle_lambda: f64,
    pub t: f64,
    pub replicas: usize,
    pub states: usize,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub alpha_level: f64,
    pub pass: bool,
    /// False for degenerate inputs (no replicas); such reports never pass.
    pub valid: bool,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
}

/// Tallies simulated configurations at time `t` and runs a chi-square test against
/// the exact law.
pub fn mc_vs_oracle(lattice: &TinyLattice, check: &OracleCheck) -> Result<OracleReport> {
    let window = lattice.embedding()?;
    let init_idx = match &check.initial {
        Some(idx) => idx.clone(),
        None => vec![lattice.sites.len() / 2],
    };
    if init_idx.iter().any(|&i| i >= lattice.sites.len()) {
        return Err(Error::InvalidParameter("initial site index out of range".into()));
    }
    let initial: Vec<Site> = init_idx.iter().map(|&i| lattice.sites[i].clone()).collect();
    let init_state = lattice.encode(&initial)?;
    let q = build_generator(lattice, check.oracle_lambda)?;
    let law = transient_distribution(&q, init_state, check.t, check.tol)?;
    let mut report = OracleReport {
        lambda: check.lambda,
        oracle_lambda: check.oracle_lambda,
        t: check.t,
        replicas: check.replicas,
        states: law.len(),
        statistic: f64::NAN,
        dof: 0,
        p_value: f64::NAN,
        alpha_level: check.alpha_level,
        pass: false,
        valid: false,
        observed: vec![0; law.len()],
        expected: law.iter().map(|p| p * check.replicas as f64).collect(),
    };
    if check.replicas == 0 {
        return Ok(report);
    }
    let states: Vec<usize> = (0..check.replicas as u64)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let field = HarrisField::new(replica_seed(check.base_seed, i), window.dim(), check.lambda_max)?;
            let run = simulate(&field, check.lambda, &initial, &window, check.t)?;
            let finals: Vec<Site> = run.final_config.into_iter().collect();
            lattice.encode(&finals)
        })
        .collect::<Result<_>>()?;
    for s in states {
        report.observed[s] += 1;
    }
    let observed: Vec<f64> = report.observed.iter().map(|&c| c as f64).collect();
    let gof = chi_square_gof(&observed, &report.expected);
    report.statistic = gof.statistic;
    report.dof = gof.dof;
    report.p_value = gof.p_value;
    report.valid = true;
    report.pass = gof.p_value > check.alpha_level;
    Ok(report)
}
