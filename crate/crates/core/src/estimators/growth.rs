//! Probability of the good-growth event on the space-time box `[-N, N]^d x [0, 2N]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConvexSet, Estimate, ShapeEstimate};
use crate::error::{Error, Result};
use crate::field::{replica_seed, HarrisField};
use crate::lattice::{BoundaryPolicy, Site, Window};
use crate::sim::{Lane, Replay, ReplayOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodGrowthParams {
    pub dimension: usize,
    pub lambda_max: f64,
    pub base_seed: u64,
    pub replicas: usize,
    pub alpha: f64,
    pub l: i64,
    pub n: i64,
    pub epsilon: f64,
    /// Spacing of the start-time subgrid on `[0, 2N]`.
    pub t0_step: f64,
    /// Reference shapes with fewer directions are rejected.
    pub min_directions: usize,
    pub ci_level: f64,
}

impl GoodGrowthParams {
    pub fn new(dimension: usize, n: i64, replicas: usize) -> Self {
        GoodGrowthParams {
            dimension,
            lambda_max: 3.0,
            base_seed: 0,
            replicas,
            alpha: 0.5,
            l: 8,
            n,
            epsilon: 0.5,
            t0_step: 0.5,
            min_directions: 2 * dimension,
            ci_level: 0.95,
        }
    }

    /// `alpha L N`, the time at which descendants are inspected.
    pub fn horizon(&self) -> f64 {
        self.alpha * (self.l * self.n) as f64
    }

    /// Edges that can influence the event: those touching the `LN` box.
    pub fn determining_edges(&self) -> usize {
        Window::new(self.dimension, self.l * self.n, BoundaryPolicy::Cutoff).touching_edges().len()
    }

    /// Start points `(x0, t0)` of the subgrid, with `t0 < alpha L N`.
    pub fn start_points(&self) -> Vec<(Site, f64)> {
        let horizon = self.horizon();
        let steps = (2.0 * self.n as f64 / self.t0_step).floor() as usize;
        let times: Vec<f64> =
            (0..=steps).map(|k| k as f64 * self.t0_step).filter(|&t| t < horizon).collect();
        let sites = Window::new(self.dimension, self.n, BoundaryPolicy::Cutoff).sites();
        sites.iter().flat_map(|x| times.iter().map(move |&t| (x.clone(), t))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodGrowthReport {
    pub estimate: Estimate,
    pub lambda: f64,
    pub lambda0: f64,
    pub start_points: usize,
    pub determining_edges: usize,
    pub horizon: f64,
    /// Replicas failing only the shape conjunct, only the confinement conjunct, or both.
    pub shape_failures: usize,
    pub confinement_failures: usize,
}

fn contains_scaled(set: &ConvexSet, scale: f64, p: &[f64]) -> bool {
    const SLACK: f64 = 1e-9;
    match set {
        ConvexSet::Interval(lo, hi) => p[0] >= lo * scale - SLACK && p[0] <= hi * scale + SLACK,
        ConvexSet::Polygon(v) => {
            let n = v.len();
            let q = [p[0], p[1]];
            let sv: Vec<[f64; 2]> = v.iter().map(|a| [a[0] * scale, a[1] * scale]).collect();
            match n {
                0 => false,
                1 => (sv[0][0] - q[0]).abs() <= SLACK && (sv[0][1] - q[1]).abs() <= SLACK,
                _ => (0..n).all(|i| {
                    let (a, b) = (sv[i], sv[(i + 1) % n]);
                    (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]) >= -SLACK
                }),
            }
        }
    }
}

/// Empirical probability that, for every start point of the subgrid, the descendants
/// stay inside the open box `(-LN, LN)^d` up to `alpha L N` and sit inside
/// `x0 + (1 + epsilon)(alpha L N - t0) B` at that time, `B` being the reference shape.
pub fn good_growth_probability(
    lambda: f64,
    lambda0: f64,
    reference: &ShapeEstimate,
    params: &GoodGrowthParams,
) -> Result<GoodGrowthReport> {
    if lambda < lambda0 {
        return Err(Error::RateOrder { lambda, lambda_prime: lambda0 });
    }
    if reference.directions.len() < params.min_directions {
        return Err(Error::ShapeTooCoarse {
            found: reference.directions.len(),
            required: params.min_directions,
        });
    }
    if reference.directions.iter().any(|d| d.len() != params.dimension) {
        return Err(Error::DimensionMismatch {
            expected: params.dimension,
            found: reference.directions[0].len(),
        });
    }
    if params.n < 1 || params.l < 1 || !(params.alpha > 0.0 && params.alpha < 1.0) || params.t0_step <= 0.0 {
        return Err(Error::InvalidParameter("need N, L >= 1, alpha in (0, 1) and t0_step > 0".into()));
    }
    if params.replicas == 0 {
        return Err(Error::InvalidParameter("replicas must be at least 1".into()));
    }
    let shape = reference.to_set()?;
    let horizon = params.horizon();
    let starts = params.start_points();
    let lanes: Vec<Lane> =
        starts.iter().map(|(x, t0)| Lane::starting_at(lambda, vec![x.clone()], *t0)).collect();
    let window = Window::new(params.dimension, params.l * params.n, BoundaryPolicy::Flag);
    let outcomes: Vec<(bool, bool)> = (0..params.replicas as u64)
        .into_par_iter()
        .map(|i| -> Result<(bool, bool)> {
            let field = HarrisField::new(replica_seed(params.base_seed, i), params.dimension, params.lambda_max)?;
            let replay = Replay::new(&field, lanes.clone(), window.clone(), horizon, ReplayOptions::default())?;
            let outs = replay.finish();
            let confined = outs.iter().all(|o| o.boundary_time.is_none());
            let shaped = outs.iter().zip(&starts).all(|(o, (x0, t0))| {
                let scale = (1.0 + params.epsilon) * (horizon - t0);
                o.final_config.iter().all(|y| {
                    let rel: Vec<f64> = y.sub(x0).coords().iter().map(|&c| c as f64).collect();
                    contains_scaled(&shape, scale, &rel)
                })
            });
            Ok((shaped, confined))
        })
        .collect::<Result<_>>()?;
    let successes = outcomes.iter().filter(|&&(s, c)| s && c).count();
    let mut estimate = Estimate::proportion(successes, outcomes.len(), params.ci_level);
    if (reference.lambda - lambda0).abs() > 1e-12 {
        estimate.flags.push("reference_rate_differs".into());
    }
    Ok(GoodGrowthReport {
        estimate,
        lambda,
        lambda0,
        start_points: starts.len(),
        determining_edges: params.determining_edges(),
        horizon,
        shape_failures: outcomes.iter().filter(|&&(s, _)| !s).count(),
        confinement_failures: outcomes.iter().filter(|&&(_, c)| !c).count(),
    })
}
