//! Directional radii of the rescaled infected region and Hausdorff distances between
//! the reconstructed shapes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{McParams, PROXY_CAVEAT};
use crate::error::{Error, Result};
use crate::lattice::{BoundaryPolicy, Site, Window};
use crate::sim::{progeny_window, Lane, Replay, ReplayOptions, WINDOW_MARGIN};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub mc: McParams,
    pub t: f64,
    /// Unit-l1 directions; [`default_directions`] when absent.
    pub directions: Option<Vec<Vec<f64>>>,
    pub growth_constant: f64,
    pub max_retries: usize,
    pub occupancy: bool,
}

impl ShapeParams {
    pub fn new(mc: McParams, t: f64) -> Self {
        ShapeParams { mc, t, directions: None, growth_constant: 4.0, max_retries: 4, occupancy: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub lambda: f64,
    pub t: f64,
    pub directions: Vec<Vec<f64>>,
    /// Mean over accepted runs of `sup { r : r dir in H~_t / t }`.
    pub radii: Vec<f64>,
    pub stderr: Vec<f64>,
    pub replicas: usize,
    pub accepted: usize,
    /// Runs re-simulated on a larger window after reaching the boundary.
    pub retries: usize,
    /// Fraction of accepted runs whose `H_t` contains each site.
    pub occupancy: Option<Vec<(Site, f64)>>,
    pub flags: Vec<String>,
}

/// `+-e_i` for every axis.
pub fn axis_directions(dimension: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * dimension);
    for axis in 0..dimension {
        for sign in [1.0, -1.0] {
            let mut v = vec![0.0; dimension];
            v[axis] = sign;
            out.push(v);
        }
    }
    out
}

/// Axis directions, plus the four diagonals in the plane.
pub fn default_directions(dimension: usize) -> Vec<Vec<f64>> {
    let mut out = axis_directions(dimension);
    if dimension == 2 {
        for (a, b) in [(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)] {
            out.push(vec![a, b]);
        }
    }
    out
}

/// Largest `s >= 0` with `s * dir` in the union of cells `site + [-1/2, 1/2]^d`.
fn ray_reach<'a>(sites: impl Iterator<Item = &'a Site>, dir: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    'sites: for site in sites {
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        for (&c, &v) in site.coords().iter().zip(dir) {
            let c = c as f64;
            if v == 0.0 {
                if c.abs() > 0.5 {
                    continue 'sites;
                }
            } else {
                let (a, b) = ((c - 0.5) / v, (c + 0.5) / v);
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
        }
        if lo <= hi && hi.is_finite() {
            best = best.max(hi);
        }
    }
    best
}

struct ShapeRun {
    radii: Vec<f64>,
    region: Vec<Site>,
    retries: usize,
}

fn run_replica(lambda: f64, params: &ShapeParams, dirs: &[Vec<f64>], replica: usize) -> Result<Option<ShapeRun>> {
    let mc = &params.mc;
    let field = mc.field(replica)?;
    let origin = Site::origin(mc.dimension);
    let t_surv = mc.policy.t_surv;
    let horizon = params.t.max(t_surv);
    let mut radius = ((params.growth_constant * params.t).ceil() as i64 + WINDOW_MARGIN)
        .max(progeny_window(&origin, &mc.policy).radius)
        .max(mc.window_radius.unwrap_or(0));
    for retries in 0..=params.max_retries {
        let window = Window::new(mc.dimension, radius, BoundaryPolicy::Flag);
        let options = ReplayOptions { track_first_hit: true, ..ReplayOptions::default() };
        let replay = Replay::new(&field, vec![Lane::new(lambda, vec![origin.clone()])], window, horizon, options)?;
        let out = replay.finish().remove(0);
        // Only a boundary hit by time t can bias the region; later hits merely
        // truncate the survival run, as for any progeny window.
        if out.boundary_time.is_some_and(|b| b <= params.t) {
            radius *= 2;
            continue;
        }
        if !out.extinction_time.is_none_or(|e| e > t_surv) {
            return Ok(None);
        }
        let region: Vec<Site> =
            out.first_hit.into_iter().filter(|&(_, h)| h <= params.t).map(|(s, _)| s).collect();
        let radii = dirs.iter().map(|d| ray_reach(region.iter(), d) / params.t).collect();
        return Ok(Some(ShapeRun { radii, region, retries }));
    }
    Err(Error::BoundaryRetriesExhausted { retries: params.max_retries })
}

/// Directional radii of `H~_t / t` averaged over runs accepted by the survival proxy.
pub fn shape_estimate(lambda: f64, params: &ShapeParams) -> Result<ShapeEstimate> {
    let mc = &params.mc;
    mc.validate()?;
    if !(lambda > 0.0 && lambda <= mc.lambda_max) {
        return Err(Error::RateOutOfRange { lambda, lambda_max: mc.lambda_max });
    }
    if params.t.is_nan() || params.t <= 0.0 {
        return Err(Error::NegativeTime(params.t));
    }
    let dirs = params.directions.clone().unwrap_or_else(|| default_directions(mc.dimension));
    if dirs.iter().any(|d| d.len() != mc.dimension) {
        return Err(Error::DimensionMismatch {
            expected: mc.dimension,
            found: dirs.iter().map(Vec::len).find(|&l| l != mc.dimension).unwrap_or(0),
        });
    }
    let runs: Vec<Option<ShapeRun>> = (0..mc.replicas)
        .into_par_iter()
        .map(|i| run_replica(lambda, params, &dirs, i))
        .collect::<Result<_>>()?;
    let accepted: Vec<&ShapeRun> = runs.iter().flatten().collect();
    if accepted.is_empty() {
        return Err(Error::NoEstimate { replicas: mc.replicas });
    }
    let mut radii = Vec::with_capacity(dirs.len());
    let mut stderr = Vec::with_capacity(dirs.len());
    for k in 0..dirs.len() {
        let column: Vec<f64> = accepted.iter().map(|r| r.radii[k]).collect();
        radii.push(stats::mean(&column));
        stderr.push(stats::stderr(&column));
    }
    let occupancy = params.occupancy.then(|| {
        let mut counts: BTreeMap<Site, usize> = BTreeMap::new();
        for run in &accepted {
            for s in &run.region {
                *counts.entry(s.clone()).or_default() += 1;
            }
        }
        counts.into_iter().map(|(s, c)| (s, c as f64 / accepted.len() as f64)).collect()
    });
    let retries = accepted.iter().map(|r| r.retries).sum();
    let mut flags = vec![PROXY_CAVEAT.to_string()];
    if accepted.len() < mc.min_accepted {
        flags.push("low_acceptance".into());
    }
    Ok(ShapeEstimate {
        lambda,
        t: params.t,
        directions: dirs,
        radii,
        stderr,
        replicas: mc.replicas,
        accepted: accepted.len(),
        retries,
        occupancy,
        flags,
    })
}

/// A compact convex set in dimension 1 or 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConvexSet {
    Interval(f64, f64),
    /// Hull vertices in counter-clockwise order; one vertex is a point, two a segment.
    Polygon(Vec<[f64; 2]>),
}

impl ConvexSet {
    pub fn hull(points: &[[f64; 2]]) -> Self {
        ConvexSet::Polygon(convex_hull(points))
    }

    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match self {
            ConvexSet::Interval(lo, hi) => vec![vec![*lo], vec![*hi]],
            ConvexSet::Polygon(v) => v.iter().map(|p| p.to_vec()).collect(),
        }
    }
}

impl ShapeEstimate {
    /// Convex hull of the points `radius * direction`.
    pub fn to_set(&self) -> Result<ConvexSet> {
        match self.directions.first().map(Vec::len) {
            Some(1) => {
                let hi = self.radii_where(|d| d[0] > 0.0).fold(0.0, f64::max);
                let lo = self.radii_where(|d| d[0] < 0.0).fold(0.0, f64::max);
                Ok(ConvexSet::Interval(-lo, hi))
            }
            Some(2) => {
                let pts: Vec<[f64; 2]> = self
                    .directions
                    .iter()
                    .zip(&self.radii)
                    .map(|(d, r)| [d[0] * r, d[1] * r])
                    .collect();
                Ok(ConvexSet::hull(&pts))
            }
            Some(d) => Err(Error::UnsupportedDimension(d)),
            None => Err(Error::InvalidParameter("shape without directions".into())),
        }
    }

    fn radii_where<'a>(&'a self, pred: impl Fn(&[f64]) -> bool + 'a) -> impl Iterator<Item = f64> + 'a {
        self.directions.iter().zip(&self.radii).filter(move |(d, _)| pred(d)).map(|(_, &r)| r)
    }
}

/// Sup-norm Hausdorff distance between the reconstructed shapes.
pub fn hausdorff_distance(a: &ShapeEstimate, b: &ShapeEstimate) -> Result<f64> {
    if a.directions != b.directions {
        return Err(Error::DirectionMismatch);
    }
    hausdorff_sets(&a.to_set()?, &b.to_set()?)
}

/// Sup-norm Hausdorff distance between two convex sets of the same dimension.
pub fn hausdorff_sets(a: &ConvexSet, b: &ConvexSet) -> Result<f64> {
    match (a, b) {
        (ConvexSet::Interval(l1, h1), ConvexSet::Interval(l2, h2)) => {
            Ok((l1 - l2).abs().max((h1 - h2).abs()))
        }
        (ConvexSet::Polygon(p), ConvexSet::Polygon(q)) => {
            if p.is_empty() || q.is_empty() {
                return Err(Error::InvalidParameter("empty set".into()));
            }
            // Distance to a convex set is convex, so its maximum over a polygon sits at a vertex.
            let one_way = |from: &[[f64; 2]], to: &[[f64; 2]]| {
                from.iter().map(|v| point_to_polygon(*v, to)).fold(0.0, f64::max)
            };
            Ok(one_way(p, q).max(one_way(q, p)))
        }
        _ => Err(Error::DimensionMismatch { expected: 1, found: 2 }),
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone-chain hull, counter-clockwise, collinear points dropped.
fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn sup_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
}

/// Sup-norm distance from `p` to the segment `[a, b]`.
fn point_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    // f(s) = max(|al0 + be0 s|, |al1 + be1 s|) is convex piecewise linear on [0, 1];
    // its minimum sits at an endpoint, a zero of one term, or a crossing of two terms.
    let al = [a[0] - p[0], a[1] - p[1]];
    let be = [b[0] - a[0], b[1] - a[1]];
    let f = |s: f64| (al[0] + be[0] * s).abs().max((al[1] + be[1] * s).abs());
    let mut candidates = vec![0.0, 1.0];
    for i in 0..2 {
        if be[i] != 0.0 {
            candidates.push(-al[i] / be[i]);
        }
    }
    for sign in [1.0, -1.0] {
        let denom = be[0] - sign * be[1];
        if denom != 0.0 {
            candidates.push((sign * al[1] - al[0]) / denom);
        }
    }
    candidates.into_iter().map(|s| f(s.clamp(0.0, 1.0))).fold(f64::INFINITY, f64::min)
}

fn point_to_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    match poly.len() {
        1 => sup_dist(p, poly[0]),
        2 => point_to_segment(p, poly[0], poly[1]),
        n => {
            let inside = (0..n).all(|i| cross(poly[i], poly[(i + 1) % n], p) >= -1e-12);
            if inside {
                return 0.0;
            }
            (0..n)
                .map(|i| point_to_segment(p, poly[i], poly[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min)
        }
    }
}
