//! Essential hitting times and the good-event check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{idem_holds, HarrisField};
use crate::lattice::{BoundaryPolicy, Site, Window};
use crate::sim::{
    simulate, simulate_with, survival_proxy, Lane, Replay, ReplayOptions, SimOptions,
    SurvivalOutcome,
};

/// How "the progeny lives forever" is decided at finite horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurvivalPolicy {
    pub t_surv: f64,
    /// Progeny window radius is `ceil(window_factor * t_surv)` plus a margin.
    pub window_factor: f64,
    pub max_steps: usize,
}

impl Default for SurvivalPolicy {
    fn default() -> Self {
        SurvivalPolicy { t_surv: 150.0, window_factor: 4.0, max_steps: 100 }
    }
}

impl SurvivalPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_surv > 0.0 && self.t_surv.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_surv must be positive, got {}", self.t_surv)));
        }
        if !(self.window_factor > 0.0 && self.window_factor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "window_factor must be positive, got {}",
                self.window_factor
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HittingStatus {
    Regenerated,
    /// The base run died before `x` was (re)infected.
    InitialDied,
    /// The base run reached its horizon before `x` was (re)infected.
    HorizonExhausted,
    StepCapped,
}

/// Outcome of the `u`/`v` recursion for one site.
///
/// `u[k]` and `v[k]` hold `u_k`, `v_k`; `v` has one entry fewer than `u` once a
/// progeny is declared surviving, because `v_K` is infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingRecord {
    pub x: Site,
    pub lambda: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub k: usize,
    /// `u_K`; present only when regenerated.
    pub sigma: Option<f64>,
    pub status: HittingStatus,
    /// The base run touched its window boundary.
    pub boundary_hit: bool,
}

impl HittingRecord {
    /// First hitting time `u_1`, if reached.
    pub fn hitting_time(&self) -> Option<f64> {
        self.u.get(1).copied()
    }

    pub fn is_regenerated(&self) -> bool {
        self.status == HittingStatus::Regenerated
    }

    /// `u_0 = v_0 = 0 <= u_1 <= v_1 <= u_2 <= ...` and `sigma = u_K`.
    pub fn interlacing_holds(&self) -> bool {
        if self.u.first() != Some(&0.0) || self.v.first() != Some(&0.0) {
            return false;
        }
        let mut seq = Vec::with_capacity(self.u.len() + self.v.len());
        for i in 0..self.u.len().max(self.v.len()) {
            if let Some(&u) = self.u.get(i) {
                seq.push(u);
            }
            if let Some(&v) = self.v.get(i) {
                seq.push(v);
            }
        }
        if !seq.windows(2).all(|w| w[0] <= w[1]) {
            return false;
        }
        match self.status {
            HittingStatus::Regenerated => {
                self.sigma == self.u.get(self.k).copied()
                    && self.u.len() == self.k + 1
                    && self.v.len() == self.k
            }
            _ => self.sigma.is_none(),
        }
    }
}

/// Computes `sigma_lambda(x)` for the process started from the origin at time 0.
///
/// The base run lives in `window` up to `horizon`; progeny lifetimes come from
/// [`survival_proxy`] on the same field.
pub fn essential_hitting(
    field: &HarrisField,
    lambda: f64,
    x: &Site,
    window: &Window,
    horizon: f64,
    policy: &SurvivalPolicy,
) -> Result<HittingRecord> {
    policy.validate()?;
    x.check_dim(field.dimension())?;
    if !window.contains(x) {
        return Err(Error::SiteOutsideWindow(x.clone()));
    }
    let origin = Site::origin(field.dimension());
    let lane = Lane::new(lambda, vec![origin]);
    let mut base =
        Replay::new(field, vec![lane], window.clone(), horizon, ReplayOptions::default())?;
    let mut record = HittingRecord {
        x: x.clone(),
        lambda,
        u: vec![0.0],
        v: vec![0.0],
        k: 0,
        sigma: None,
        status: HittingStatus::StepCapped,
        boundary_hit: false,
    };
    loop {
        let v_k = *record.v.last().expect("v is never empty");
        if record.k >= policy.max_steps {
            record.status = HittingStatus::StepCapped;
            break;
        }
        if v_k > horizon {
            record.status = HittingStatus::HorizonExhausted;
            break;
        }
        base.advance_to(v_k);
        let next = if base.is_infected(0, x) {
            Some(v_k)
        } else {
            base.run_until_infected(0, x)
        };
        let Some(u_next) = next else {
            record.status = if base.extinction_time(0).is_some() {
                HittingStatus::InitialDied
            } else {
                HittingStatus::HorizonExhausted
            };
            break;
        };
        record.u.push(u_next);
        record.k += 1;
        match survival_proxy(field, lambda, x, u_next, policy)? {
            SurvivalOutcome::Survives => {
                record.sigma = Some(u_next);
                record.status = HittingStatus::Regenerated;
                break;
            }
            SurvivalOutcome::Dies(t) => record.v.push(t),
        }
    }
    record.boundary_hit = base.boundary_time(0).is_some();
    Ok(record)
}

/// The regeneration shift `T_x o theta_sigma` as a field view.
pub fn regeneration_view(field: &HarrisField, record: &HittingRecord) -> Result<HarrisField> {
    let sigma = match (record.status, record.sigma) {
        (HittingStatus::Regenerated, Some(s)) => s,
        _ => return Err(Error::NotRegenerated(record.x.clone())),
    };
    field.shift_time(sigma)?.shift_space(&record.x)
}

/// Parameters of the good event `G(lambda')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GEventParams {
    /// Space and time bound of `A_M`.
    pub m: i64,
    /// Time span of `B_L`.
    pub l: f64,
    /// Growth constant `C` of the `B_L` box.
    pub growth_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GEventResult {
    pub sigma: Option<f64>,
    pub a_m: bool,
    pub b_l: bool,
    pub idem: bool,
    pub g_holds: bool,
    /// Origin progeny at `lambda` survives under the proxy.
    pub survives: bool,
    pub sigma_prime: Option<f64>,
    /// `sigma_{lambda'} = sigma_lambda`; computed only when `g_holds && survives`.
    pub sigma_equal: Option<bool>,
    /// Number of edges in the `Idem` region.
    pub idem_edges: usize,
}

/// Evaluates `A_M`, the shifted `B_L(lambda')` and `Idem` on the box of radius
/// `M + C L` over `[0, M + L]`.
pub fn g_event_check(
    field: &HarrisField,
    lambda: f64,
    lambda_prime: f64,
    x: &Site,
    params: &GEventParams,
    policy: &SurvivalPolicy,
) -> Result<GEventResult> {
    if lambda_prime > lambda {
        return Err(Error::RateOrder { lambda, lambda_prime });
    }
    field.check_rate(lambda)?;
    field.check_rate(lambda_prime)?;
    let d = field.dimension();
    x.check_dim(d)?;
    let m = params.m;
    let cl = (params.growth_constant * params.l).floor() as i64;
    let horizon = m as f64;
    // One layer past the M-box: reaching it is exactly the failure of H_sigma in the box.
    let base_window = Window::new(d, m + 1, BoundaryPolicy::Flag);

    let idem_region = Window::new(d, m + cl, BoundaryPolicy::Cutoff).touching_edges();
    let idem = idem_holds(field, &idem_region, m as f64 + params.l, lambda, lambda_prime)?;
    let origin = Site::origin(d);
    let survives = survival_proxy(field, lambda, &origin, 0.0, policy)?.survives();

    let mut result = GEventResult {
        sigma: None,
        a_m: false,
        b_l: false,
        idem,
        g_holds: false,
        survives,
        sigma_prime: None,
        sigma_equal: None,
        idem_edges: idem_region.len(),
    };
    if !base_window.contains(x) || x.sup_norm() > m {
        return Ok(result);
    }
    let record = essential_hitting(field, lambda, x, &base_window, horizon, policy)?;
    let Some(sigma) = record.sigma.filter(|&s| s <= horizon) else {
        return Ok(result);
    };
    result.sigma = Some(sigma);
    let base = simulate(field, lambda, std::slice::from_ref(&origin), &base_window, sigma)?;
    result.a_m = base.first_hit.keys().all(|s| s.sup_norm() <= m);

    let local_window = Window::centered(x.clone(), cl + 1, BoundaryPolicy::Flag);
    let opts = SimOptions { start: sigma, ..SimOptions::default() };
    let local =
        simulate_with(field, lambda_prime, std::slice::from_ref(x), &local_window, params.l, &opts)?;
    let confined = local.first_hit.keys().all(|s| s.sub(x).sup_norm() <= cl);
    let doomed = local.extinction_time.is_none()
        && !survival_proxy(field, lambda_prime, x, sigma, policy)?.survives();
    result.b_l = confined && !doomed;
    result.g_holds = result.a_m && result.b_l && result.idem;

    if result.g_holds && survives {
        let prime = essential_hitting(field, lambda_prime, x, &base_window, horizon, policy)?;
        result.sigma_prime = prime.sigma;
        result.sigma_equal = Some(prime.sigma == Some(sigma));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::replica_seed;

    fn policy() -> SurvivalPolicy {
        SurvivalPolicy { t_surv: 40.0, window_factor: 2.0, max_steps: 100 }
    }

    #[test]
    fn origin_regenerates_immediately_when_it_survives() {
        let pol = policy();
        let w = Window::new(1, 100, BoundaryPolicy::Flag);
        let mut seen = 0;
        for i in 0..60 {
            let f = HarrisField::new(replica_seed(1, i), 1, 3.0).unwrap();
            let rec = essential_hitting(&f, 2.0, &Site::origin(1), &w, 60.0, &pol).unwrap();
            let survives = survival_proxy(&f, 2.0, &Site::origin(1), 0.0, &pol).unwrap().survives();
            if survives {
                seen += 1;
                assert_eq!(rec.sigma, Some(0.0));
                assert_eq!(rec.k, 1);
                assert_eq!(rec.u, vec![0.0, 0.0]);
            }
            assert!(rec.interlacing_holds());
        }
        assert!(seen > 10);
    }

    #[test]
    fn records_are_interlaced_and_sigma_dominates_hitting_time() {
        let pol = policy();
        let w = Window::new(1, 100, BoundaryPolicy::Flag);
        let x = Site::new([5]);
        for i in 0..80 {
            let f = HarrisField::new(replica_seed(2, i), 1, 3.0).unwrap();
            let rec = essential_hitting(&f, 2.0, &x, &w, 80.0, &pol).unwrap();
            assert!(rec.interlacing_holds(), "{rec:?}");
            if let Some(sigma) = rec.sigma {
                let base = simulate(&f, 2.0, &[Site::origin(1)], &w, 80.0).unwrap();
                assert_eq!(rec.hitting_time(), base.hitting_time(&x).unwrap());
                assert!(sigma >= rec.hitting_time().unwrap());
            }
        }
    }

    #[test]
    fn regeneration_view_errors_and_identity() {
        let f = HarrisField::new(4, 1, 3.0).unwrap();
        let rec = HittingRecord {
            x: Site::origin(1),
            lambda: 2.0,
            u: vec![0.0, 0.0],
            v: vec![0.0],
            k: 1,
            sigma: Some(0.0),
            status: HittingStatus::Regenerated,
            boundary_hit: false,
        };
        assert_eq!(regeneration_view(&f, &rec).unwrap(), f);
        let failed = HittingRecord { status: HittingStatus::InitialDied, sigma: None, ..rec };
        assert!(matches!(regeneration_view(&f, &failed), Err(Error::NotRegenerated(_))));
    }

    #[test]
    fn g_event_rejects_wrong_order() {
        let f = HarrisField::new(4, 1, 3.0).unwrap();
        let p = GEventParams { m: 10, l: 10.0, growth_constant: 4.0 };
        assert!(matches!(
            g_event_check(&f, 2.0, 2.1, &Site::new([1]), &p, &policy()),
            Err(Error::RateOrder { .. })
        ));
    }

    #[test]
    fn equal_rates_make_idem_trivial_and_sigma_equal() {
        let p = GEventParams { m: 10, l: 10.0, growth_constant: 4.0 };
        for i in 0..40 {
            let f = HarrisField::new(replica_seed(6, i), 1, 3.0).unwrap();
            let r = g_event_check(&f, 2.0, 2.0, &Site::new([1]), &p, &policy()).unwrap();
            assert!(r.idem);
            assert_eq!(r.g_holds, r.a_m && r.b_l);
            if let Some(eq) = r.sigma_equal {
                assert!(eq);
            }
        }
    }
}
