//! Matched-seed scans of the time constant over a grid of rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{coupled_passage, direct_estimate, Estimate, McParams, PassageSample};
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::stats::combined_stderr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub mc: McParams,
    /// Stop adding replicas once every rate has this many accepted samples.
    pub target_accepted: usize,
    /// Hard cap on replicas per direction; `mc.replicas` is ignored.
    pub max_replicas: usize,
    pub batch: usize,
}

impl ScanParams {
    pub fn new(mc: McParams, target_accepted: usize) -> Self {
        let max_replicas = (mc.replicas).max(20 * target_accepted);
        ScanParams { mc, target_accepted, max_replicas, batch: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub lambda: f64,
    pub direction: Site,
    /// `mu_hat` for this rate and direction; value NaN with a `no_estimate` flag when
    /// no replica was accepted.
    pub estimate: Estimate,
}

/// Difference `mu(lambda_low) - mu(lambda_high)` for a pair of grid rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiff {
    pub direction: Site,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub diff: f64,
    pub combined_stderr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanDiagnostics {
    /// Replicas in which a larger rate reached the target later than a smaller one.
    pub per_seed_violations: usize,
    /// Pairs with `mu(lambda_low) < mu(lambda_high) - 3 * combined stderr`.
    pub monotonicity_violations: Vec<PairDiff>,
    /// Per direction, the adjacent pair with the largest `|diff|`.
    pub max_jumps: Vec<PairDiff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    /// Sorted by rate, then by direction order.
    pub rows: Vec<ScanRow>,
    pub diagnostics: ScanDiagnostics,
}

impl ScanTable {
    /// Builds the table and its estimate-level diagnostics.
    pub fn from_rows(rows: Vec<ScanRow>, per_seed_violations: usize) -> Self {
        let mut directions: Vec<Site> = Vec::new();
        for r in &rows {
            if !directions.contains(&r.direction) {
                directions.push(r.direction.clone());
            }
        }
        let mut diagnostics = ScanDiagnostics { per_seed_violations, ..ScanDiagnostics::default() };
        for dir in &directions {
            let series: Vec<&ScanRow> =
                rows.iter().filter(|r| &r.direction == dir && r.estimate.value.is_finite()).collect();
            let pair = |a: &ScanRow, b: &ScanRow| PairDiff {
                direction: dir.clone(),
                lambda_low: a.lambda,
                lambda_high: b.lambda,
                diff: a.estimate.value - b.estimate.value,
                combined_stderr: combined_stderr(a.estimate.stderr, b.estimate.stderr),
            };
            for i in 0..series.len() {
                for j in i + 1..series.len() {
                    let p = pair(series[i], series[j]);
                    if p.diff < -3.0 * p.combined_stderr {
                        diagnostics.monotonicity_violations.push(p);
                    }
                }
            }
            if let Some(jump) = series
                .windows(2)
                .map(|w| pair(w[0], w[1]))
                .max_by(|a, b| a.diff.abs().total_cmp(&b.diff.abs()))
            {
                diagnostics.max_jumps.push(jump);
            }
        }
        ScanTable { rows, diagnostics }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if out.last() != Some(&r.lambda) {
                out.push(r.lambda);
            }
        }
        out
    }

    /// The sub-table on the rates of `grid`, with diagnostics recomputed.
    pub fn restrict(&self, grid: &[f64]) -> ScanTable {
        let rows = self.rows.iter().filter(|r| grid.contains(&r.lambda)).cloned().collect();
        ScanTable::from_rows(rows, self.diagnostics.per_seed_violations)
    }

    pub fn max_jump(&self, direction: &Site) -> Option<&PairDiff> {
        self.diagnostics.max_jumps.iter().find(|p| &p.direction == direction)
    }
}

fn per_seed_violation(row: &[PassageSample]) -> bool {
    row.windows(2).any(|p| {
        let later = match (p[0].hit, p[1].hit) {
            (Some(low), Some(high)) => high > low,
            (Some(_), None) => true,
            _ => false,
        };
        later || (p[0].survives && !p[1].survives)
    })
}

/// Time-constant estimates at every grid rate and direction from coupled runs: each
/// replica drives all rates through a single replay.
pub fn continuity_scan(
    lambda_grid: &[f64],
    directions: &[Site],
    n: usize,
    params: &ScanParams,
) -> Result<ScanTable> {
    let mc = &params.mc;
    mc.policy.validate()?;
    if lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("rate grid must be strictly increasing".into()));
    }
    mc.check_rates(lambda_grid)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if params.batch == 0 || params.max_replicas == 0 {
        return Err(Error::InvalidParameter("batch and max_replicas must be positive".into()));
    }
    let mut rows = Vec::with_capacity(lambda_grid.len() * directions.len());
    let mut violations = 0;
    let mut per_direction = Vec::with_capacity(directions.len());
    for dir in directions {
        dir.check_dim(mc.dimension)?;
        let target = dir.scale(n as i64);
        let mut samples: Vec<Vec<PassageSample>> = Vec::new();
        let mut counts = vec![0usize; lambda_grid.len()];
        let enough = |c: &[usize]| c.iter().all(|&k| k >= params.target_accepted);
        while samples.len() < params.max_replicas && !enough(&counts) {
            let start = samples.len();
            let end = (start + params.batch).min(params.max_replicas);
            let batch: Vec<Vec<PassageSample>> = (start..end)
                .into_par_iter()
                .map(|i| coupled_passage(&mc.field(i)?, lambda_grid, &target, mc))
                .collect::<Result<_>>()?;
            // Keep the shortest prefix that meets the target so results do not depend on
            // batch size.
            for row in batch {
                if enough(&counts) {
                    break;
                }
                for (c, s) in counts.iter_mut().zip(&row) {
                    *c += usize::from(s.survives && s.hit.is_some());
                }
                samples.push(row);
            }
        }
        violations += samples.iter().filter(|row| per_seed_violation(row)).count();
        per_direction.push(samples);
    }
    for (lane, &lambda) in lambda_grid.iter().enumerate() {
        for (dir, samples) in directions.iter().zip(&per_direction) {
            let column: Vec<PassageSample> = samples.iter().map(|row| row[lane]).collect();
            let estimate = match direct_estimate(&column, n, mc) {
                Ok(est) => est,
                Err(Error::NoEstimate { replicas }) => Estimate {
                    value: f64::NAN,
                    stderr: f64::NAN,
                    replicas,
                    accepted: 0,
                    ci_level: mc.ci_level,
                    flags: vec!["no_estimate".into()],
                },
                Err(e) => return Err(e),
            };
            rows.push(ScanRow { lambda, direction: dir.clone(), estimate });
        }
    }
    Ok(ScanTable::from_rows(rows, violations))
}
