//! Survival-conditioned Monte Carlo estimators.
//!
//! Replica `i` always uses the field seeded by `replica_seed(base_seed, i)`, so runs at
//! different rates are matched seed by seed and share the coupling.

mod growth;
mod scan;
mod shape;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub use growth::{good_growth_probability, GoodGrowthParams, GoodGrowthReport};
pub use scan::{continuity_scan, PairDiff, ScanDiagnostics, ScanParams, ScanRow, ScanTable};
pub use shape::{
    axis_directions, default_directions, hausdorff_distance, hausdorff_sets, shape_estimate,
    ConvexSet, ShapeEstimate, ShapeParams,
};

use crate::error::{Error, Result};
use crate::field::{idem_holds, replica_seed, HarrisField};
use crate::hitting::{essential_hitting, HittingStatus, SurvivalPolicy};
use crate::lattice::{BoundaryPolicy, ClockKey, Site, Window};
use crate::sim::{progeny_window, survival_proxy, Lane, Replay, ReplayOptions, StopRule, WINDOW_MARGIN};
use crate::stats;

/// Flag attached to every survival-conditioned estimate.
pub const PROXY_CAVEAT: &str = "survival_proxy_conditioning";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub accepted: usize,
    pub ci_level: f64,
    pub flags: Vec<String>,
}

impl Estimate {
    /// Mean and standard error of `samples`, drawn from `accepted` of `replicas` runs.
    pub fn from_samples(samples: &[f64], replicas: usize, accepted: usize, ci_level: f64) -> Self {
        Estimate {
            value: stats::mean(samples),
            stderr: stats::stderr(samples),
            replicas,
            accepted,
            ci_level,
            flags: Vec::new(),
        }
    }

    pub fn proportion(successes: usize, trials: usize, ci_level: f64) -> Self {
        let p = if trials == 0 { f64::NAN } else { successes as f64 / trials as f64 };
        Estimate {
            value: p,
            stderr: stats::binomial_stderr(p, trials),
            replicas: trials,
            accepted: trials,
            ci_level,
            flags: Vec::new(),
        }
    }

    /// Half-width of the normal confidence interval at `ci_level`.
    pub fn half_width(&self) -> f64 {
        let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + self.ci_level / 2.0);
        z * self.stderr
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    fn flag(&mut self, flag: impl Into<String>) {
        let flag = flag.into();
        if !self.has_flag(&flag) {
            self.flags.push(flag);
        }
    }
}

/// Stand-ins for the existential constants of the growth estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryConstants {
    /// Subadditivity correction added to `E sigma(nx)`.
    pub m1: f64,
    /// Linear growth bound `C`: infected regions stay inside `[-C t, C t]^d`.
    pub growth_constant: f64,
    /// Survival probabilities below this raise a `low_survival` flag.
    pub rho: f64,
}

impl Default for TheoryConstants {
    fn default() -> Self {
        TheoryConstants { m1: 10.0, growth_constant: 4.0, rho: 0.05 }
    }
}

/// Shared Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub dimension: usize,
    pub lambda_max: f64,
    pub base_seed: u64,
    pub replicas: usize,
    pub policy: SurvivalPolicy,
    /// Horizon of base runs; derived from the target distance when absent.
    pub horizon: Option<f64>,
    /// Radius of base-run windows; derived from the survival policy when absent.
    pub window_radius: Option<i64>,
    /// Estimates with fewer accepted runs are flagged.
    pub min_accepted: usize,
    pub ci_level: f64,
}

impl Default for McParams {
    fn default() -> Self {
        McParams {
            dimension: 1,
            lambda_max: 3.0,
            base_seed: 0,
            replicas: 1000,
            policy: SurvivalPolicy::default(),
            horizon: None,
            window_radius: None,
            min_accepted: 30,
            ci_level: 0.95,
        }
    }
}

impl McParams {
    pub fn field(&self, replica: usize) -> Result<HarrisField> {
        HarrisField::new(replica_seed(self.base_seed, replica as u64), self.dimension, self.lambda_max)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.replicas == 0 {
            return Err(Error::InvalidParameter("replicas must be at least 1".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidParameter(format!("ci_level must lie in (0, 1), got {}", self.ci_level)));
        }
        Ok(())
    }

    /// Base-run horizon for reaching `target`: never shorter than the survival horizon.
    pub fn horizon_for(&self, target: &Site) -> f64 {
        let auto = 10.0 * target.l1_norm() as f64 + 50.0;
        self.horizon.unwrap_or(auto).max(self.policy.t_surv)
    }

    /// Origin-centred window holding the origin's progeny window and `target`.
    pub fn window_for(&self, target: &Site) -> Window {
        let progeny = progeny_window(&Site::origin(self.dimension), &self.policy).radius;
        let radius = self
            .window_radius
            .unwrap_or(progeny)
            .max(target.sup_norm() + WINDOW_MARGIN);
        Window::new(self.dimension, radius, BoundaryPolicy::Flag)
    }

    fn check_rates(&self, lambdas: &[f64]) -> Result<()> {
        lambdas.iter().try_for_each(|&l| {
            if l > 0.0 && l <= self.lambda_max {
                Ok(())
            } else {
                Err(Error::RateOutOfRange { lambda: l, lambda_max: self.lambda_max })
            }
        })
    }
}

fn finish_conditioned(mut est: Estimate, params: &McParams) -> Estimate {
    est.flag(PROXY_CAVEAT);
    if est.accepted < params.min_accepted {
        est.flag("low_acceptance");
    }
    est
}

/// Fraction of replicas whose origin progeny survives the proxy.
pub fn estimate_survival(lambda: f64, params: &McParams) -> Result<Estimate> {
    params.validate()?;
    params.check_rates(&[lambda])?;
    let flags = survival_flags(lambda, params)?;
    let survivors = flags.iter().filter(|&&s| s).count();
    let mut est = Estimate::proportion(survivors, flags.len(), params.ci_level);
    est.flag(PROXY_CAVEAT);
    Ok(est)
}

/// Per-replica survival decisions of the origin progeny.
pub fn survival_flags(lambda: f64, params: &McParams) -> Result<Vec<bool>> {
    let origin = Site::origin(params.dimension);
    (0..params.replicas)
        .into_par_iter()
        .map(|i| Ok(survival_proxy(&params.field(i)?, lambda, &origin, 0.0, &params.policy)?.survives()))
        .collect()
}

/// Survival of the origin progeny and first passage time to a target, for one lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassageSample {
    pub survives: bool,
    pub hit: Option<f64>,
    pub boundary: bool,
}

/// One coupled replay per field: the origin run at every rate in `lambdas`, followed
/// until it is past the survival horizon and has reached `target` (or died).
pub fn coupled_passage(
    field: &HarrisField,
    lambdas: &[f64],
    target: &Site,
    params: &McParams,
) -> Result<Vec<PassageSample>> {
    let origin = Site::origin(params.dimension);
    let lanes: Vec<Lane> = lambdas.iter().map(|&l| Lane::new(l, vec![origin.clone()])).collect();
    let options = ReplayOptions {
        record_events: false,
        track_first_hit: false,
        stop: StopRule { min_time: params.policy.t_surv, target: Some(target.clone()) },
    };
    let window = params.window_for(target);
    let mut replay = Replay::new(field, lanes, window, params.horizon_for(target), options)?;
    let mut hits = vec![None; lambdas.len()];
    if target.is_origin() {
        hits.iter_mut().for_each(|h| *h = Some(0.0));
    }
    while replay.step() {
        for (lane, hit) in hits.iter_mut().enumerate() {
            if hit.is_none() && replay.is_infected(lane, target) {
                *hit = Some(replay.now());
            }
        }
    }
    let t_surv = params.policy.t_surv;
    Ok((0..lambdas.len())
        .map(|lane| PassageSample {
            survives: replay.extinction_time(lane).is_none_or(|e| e > t_surv),
            hit: hits[lane],
            boundary: replay.boundary_time(lane).is_some(),
        })
        .collect())
}

/// Aggregates `t(nx) / n` over accepted lanes.
fn direct_estimate(samples: &[PassageSample], n: usize, params: &McParams) -> Result<Estimate> {
    let accepted: Vec<&PassageSample> = samples.iter().filter(|s| s.survives).collect();
    let values: Vec<f64> = accepted.iter().filter_map(|s| s.hit).map(|t| t / n as f64).collect();
    if values.is_empty() {
        return Err(Error::NoEstimate { replicas: samples.len() });
    }
    let mut est = Estimate::from_samples(&values, samples.len(), accepted.len(), params.ci_level);
    let missed = accepted.len() - values.len();
    if missed > 0 {
        est.flag(format!("horizon_exhausted:{missed}"));
    }
    let boundary = accepted.iter().filter(|s| s.boundary).count();
    if boundary > 0 {
        est.flag(format!("boundary_hit:{boundary}"));
    }
    Ok(finish_conditioned(est, params))
}

/// `mu_lambda(x)` estimated by `t(nx) / n` on runs accepted by the survival proxy.
pub fn estimate_mu_direct(lambda: f64, x: &Site, n: usize, params: &McParams) -> Result<Estimate> {
    Ok(estimate_mu_direct_coupled(&[lambda], x, n, params)?.remove(0))
}

/// As [`estimate_mu_direct`] for several rates on matched seeds; one estimate per rate.
pub fn estimate_mu_direct_coupled(
    lambdas: &[f64],
    x: &Site,
    n: usize,
    params: &McParams,
) -> Result<Vec<Estimate>> {
    let samples = passage_samples(lambdas, x, n, params)?;
    (0..lambdas.len())
        .map(|lane| {
            let column: Vec<PassageSample> = samples.iter().map(|row| row[lane]).collect();
            direct_estimate(&column, n, params)
        })
        .collect()
}

/// Raw per-replica samples behind [`estimate_mu_direct_coupled`], indexed
/// `[replica][rate]`.
pub fn passage_samples(
    lambdas: &[f64],
    x: &Site,
    n: usize,
    params: &McParams,
) -> Result<Vec<Vec<PassageSample>>> {
    params.validate()?;
    params.check_rates(lambdas)?;
    x.check_dim(params.dimension)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let target = x.scale(n as i64);
    (0..params.replicas)
        .into_par_iter()
        .map(|i| coupled_passage(&params.field(i)?, lambdas, &target, params))
        .collect()
}

/// One term `(M1 + E sigma(nx)) / n` of the subadditive representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubadditiveTerm {
    pub n: usize,
    pub mean_sigma: f64,
    pub value: f64,
    pub stderr: f64,
    pub regenerated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubadditiveEstimate {
    pub estimate: Estimate,
    pub best_n: usize,
    pub terms: Vec<SubadditiveTerm>,
}

/// `min_n (M1 + mean sigma(nx)) / n` over `n = 1..=n_max`, on accepted runs.
pub fn estimate_mu_subadditive(
    lambda: f64,
    x: &Site,
    n_max: usize,
    constants: &TheoryConstants,
    params: &McParams,
) -> Result<SubadditiveEstimate> {
    params.validate()?;
    params.check_rates(&[lambda])?;
    x.check_dim(params.dimension)?;
    if n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    let far = x.scale(n_max as i64);
    let horizon = params.horizon_for(&far);
    let window = params.window_for(&far);
    let origin = Site::origin(params.dimension);
    // Per replica: None when rejected, else per-n (sigma, status).
    type Row = Option<Vec<(Option<f64>, HittingStatus)>>;
    let rows: Vec<Row> = (0..params.replicas)
        .into_par_iter()
        .map(|i| -> Result<Row> {
            let field = params.field(i)?;
            if !survival_proxy(&field, lambda, &origin, 0.0, &params.policy)?.survives() {
                return Ok(None);
            }
            (1..=n_max)
                .map(|n| {
                    let rec =
                        essential_hitting(&field, lambda, &x.scale(n as i64), &window, horizon, &params.policy)?;
                    Ok((rec.sigma, rec.status))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        })
        .collect::<Result<_>>()?;
    let accepted: Vec<&Vec<(Option<f64>, HittingStatus)>> = rows.iter().flatten().collect();
    let mut terms = Vec::with_capacity(n_max);
    let mut unregenerated = 0;
    for n in 1..=n_max {
        let sigmas: Vec<f64> = accepted.iter().filter_map(|r| r[n - 1].0).collect();
        unregenerated += accepted.len() - sigmas.len();
        if sigmas.is_empty() {
            continue;
        }
        let mean_sigma = stats::mean(&sigmas);
        terms.push(SubadditiveTerm {
            n,
            mean_sigma,
            value: (constants.m1 + mean_sigma) / n as f64,
            stderr: stats::stderr(&sigmas) / n as f64,
            regenerated: sigmas.len(),
        });
    }
    let best = terms
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value).then(b.n.cmp(&a.n)))
        .ok_or(Error::NoEstimate { replicas: params.replicas })?
        .clone();
    let mut estimate = Estimate {
        value: best.value,
        stderr: best.stderr,
        replicas: params.replicas,
        accepted: accepted.len(),
        ci_level: params.ci_level,
        flags: Vec::new(),
    };
    if unregenerated > 0 {
        estimate.flag(format!("not_regenerated:{unregenerated}"));
    }
    Ok(SubadditiveEstimate { estimate: finish_conditioned(estimate, params), best_n: best.n, terms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdemReport {
    pub estimate: Estimate,
    pub edges: usize,
    pub t: f64,
    pub lambda: f64,
    pub lambda_prime: f64,
    /// `1 - |S| t |lambda - lambda'|`.
    pub analytic_bound: f64,
    /// `exp(-|S| t |lambda - lambda'|)`.
    pub exact: f64,
}

/// Empirical probability of `Idem(S, t, lambda, lambda')`.
pub fn idem_probability(
    edges: &[ClockKey],
    t: f64,
    lambda: f64,
    lambda_prime: f64,
    params: &McParams,
) -> Result<IdemReport> {
    params.validate()?;
    let held: Vec<bool> = (0..params.replicas)
        .into_par_iter()
        .map(|i| idem_holds(&params.field(i)?, edges, t, lambda, lambda_prime))
        .collect::<Result<_>>()?;
    let successes = held.iter().filter(|&&h| h).count();
    let exposure = edges.len() as f64 * t * (lambda - lambda_prime).abs();
    Ok(IdemReport {
        estimate: Estimate::proportion(successes, held.len(), params.ci_level),
        edges: edges.len(),
        t,
        lambda,
        lambda_prime,
        analytic_bound: 1.0 - exposure,
        exact: (-exposure).exp(),
    })
}
