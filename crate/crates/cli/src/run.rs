//! Command dispatch: compute in memory, then write every file and the manifest.

use std::path::Path;

use contact_shape::estimators::{
    continuity_scan, estimate_mu_direct_coupled, estimate_mu_subadditive, good_growth_probability,
    idem_probability, shape_estimate, Estimate, GoodGrowthParams, GoodGrowthReport, ScanParams,
    ShapeEstimate, ShapeParams, SubadditiveEstimate, PROXY_CAVEAT,
};
use contact_shape::oracle::{mc_vs_oracle, OracleCheck, TinyLattice};
use contact_shape::sim::{simulate_coupled, WINDOW_MARGIN};
use contact_shape::{BoundaryPolicy, Site, Window};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Command, Format, MuMethod, RunConfig};
use crate::emit::{self, format_direction, format_flags, Table};
use crate::error::{CliError, CliResult};
use crate::manifest::{now_ms, RunManifest, RunStatus, MANIFEST_FILE};

/// One output file, held in memory until the command finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// In-memory result of a command.
#[derive(Debug, Default)]
pub struct Outputs {
    pub artifacts: Vec<Artifact>,
    pub caveats: Vec<String>,
    /// Set when a retry cap stopped the command early.
    pub failure: Option<CliError>,
}

impl Outputs {
    fn wants(config: &RunConfig, format: Format) -> bool {
        config.formats.contains(&format)
    }

    fn table<T: Table>(&mut self, config: &RunConfig, rows: &[T]) -> CliResult<()> {
        if Self::wants(config, Format::Csv) {
            self.push(format!("{}.csv", T::NAME), emit::to_csv(rows)?);
        }
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, config: &RunConfig, stem: &str, value: &T) -> CliResult<()> {
        if Self::wants(config, Format::Json) {
            self.push(format!("{stem}.json"), emit::to_json(value)?);
        }
        Ok(())
    }

    fn push(&mut self, name: String, bytes: Vec<u8>) {
        self.artifacts.push(Artifact { name, bytes });
    }

    fn note_estimate(&mut self, label: &str, est: &Estimate) {
        for f in est.flags.iter().filter(|f| f.as_str() != PROXY_CAVEAT) {
            self.caveats.push(format!("{label}: {f}"));
        }
        if est.has_flag(PROXY_CAVEAT) {
            self.proxy_note();
        }
    }

    fn proxy_note(&mut self) {
        let note = "survival is decided by the finite-horizon proxy; misclassification decays exponentially in t_surv";
        if !self.caveats.iter().any(|c| c == note) {
            self.caveats.push(note.into());
        }
    }
}

/// Validates `config` and computes the outputs of `command` without touching disk.
pub fn execute(command: Command, config: &RunConfig) -> CliResult<Outputs> {
    config.validate(command)?;
    let mut out = Outputs::default();
    match command {
        Command::Simulate => simulate(config, &mut out)?,
        Command::Mu => mu(config, &mut out)?,
        Command::Shape => shape(config, &mut out)?,
        Command::Scan => scan(config, &mut out)?,
        Command::Idem => idem(config, &mut out)?,
        Command::Goodgrowth => goodgrowth(config, &mut out)?,
        Command::OracleCheck => oracle_check(config, &mut out)?,
    }
    Ok(out)
}

/// Runs `command`, writes its files and `manifest.json` into `out_dir`.
///
/// A run stopped by a retry cap still writes what it has, marks the manifest partial
/// and returns the exhaustion error.
pub fn run(command: Command, config: &RunConfig, out_dir: &Path) -> CliResult<RunManifest> {
    let started = now_ms();
    let outputs = execute(command, config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    for a in &outputs.artifacts {
        let path = out_dir.join(&a.name);
        std::fs::write(&path, &a.bytes).map_err(|e| CliError::io(&path, e))?;
    }
    let mut caveats = outputs.caveats;
    if let Some(f) = &outputs.failure {
        caveats.push(format!("partial results: {f}"));
    }
    let manifest = RunManifest {
        command,
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        outputs: outputs.artifacts.iter().map(|a| a.name.clone()).collect(),
        caveats,
        status: if outputs.failure.is_some() { RunStatus::Partial } else { RunStatus::Complete },
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, emit::to_json(&manifest)?).map_err(|e| CliError::io(&path, e))?;
    match outputs.failure {
        Some(f) => Err(f),
        None => Ok(manifest),
    }
}

/// Re-executes the command and configuration recorded in a manifest.
pub fn rerun(manifest_path: &Path, out_dir: &Path) -> CliResult<RunManifest> {
    let m = RunManifest::load(manifest_path)?;
    run(m.command, &m.config, out_dir)
}

fn simulate(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let rates = config.rates();
    let mc = config.mc_params();
    let horizon = config.time(Command::Simulate);
    let initial = config.initial_sites();
    let reach = initial.iter().map(Site::sup_norm).max().unwrap_or(0);
    let radius = config
        .window_radius
        .fixed()
        .unwrap_or((config.theory.growth_constant * horizon).ceil() as i64 + reach + WINDOW_MARGIN);
    let window = Window::new(config.dimension, radius, BoundaryPolicy::Flag);
    let per_replica: Vec<Vec<emit::SimulateCsvRow>> = (0..config.replicas)
        .into_par_iter()
        .map(|i| -> CliResult<_> {
            let runs = simulate_coupled(&mc.field(i)?, &rates, &initial, &window, horizon)?;
            Ok(runs
                .iter()
                .map(|tr| emit::SimulateCsvRow {
                    replica: i,
                    lambda: tr.lambda,
                    extinction_time: tr.extinction_time,
                    final_size: tr.final_config.len(),
                    sites_ever_infected: tr.first_hit.len(),
                    max_distance: tr.first_hit.keys().map(Site::sup_norm).max().unwrap_or(0),
                    boundary_hit: tr.boundary_hit,
                })
                .collect())
        })
        .collect::<CliResult<_>>()?;
    let rows: Vec<_> = per_replica.into_iter().flatten().collect();
    let boundary = rows.iter().filter(|r| r.boundary_hit).count();
    if boundary > 0 {
        out.caveats.push(format!("{boundary} runs reached the window boundary"));
    }
    out.table(config, &rows)?;
    out.json(config, "simulate", &rows)
}

#[derive(Serialize)]
struct MuRecord<'a> {
    lambda: f64,
    direction: &'a Site,
    n: usize,
    estimate: &'a Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    subadditive: Option<&'a SubadditiveEstimate>,
}

fn mu(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let rates = config.rates();
    let mc = config.mc_params();
    let directions = config.lattice_directions()?;
    let mut rows = Vec::new();
    let mut subs: Vec<(f64, Site, SubadditiveEstimate)> = Vec::new();
    let mut direct: Vec<(f64, Site, Estimate)> = Vec::new();
    for dir in &directions {
        match config.method {
            MuMethod::Direct => {
                let ests = estimate_mu_direct_coupled(&rates, dir, config.n, &mc)?;
                direct.extend(rates.iter().zip(ests).map(|(&l, e)| (l, dir.clone(), e)));
            }
            MuMethod::Subadditive => {
                let n_max = config.n_max.unwrap_or(config.n);
                for &l in &rates {
                    let e = estimate_mu_subadditive(l, dir, n_max, &config.theory, &mc)?;
                    subs.push((l, dir.clone(), e));
                }
            }
        }
    }
    let (n, method) = match config.method {
        MuMethod::Direct => (config.n, "direct"),
        MuMethod::Subadditive => (config.n_max.unwrap_or(config.n), "subadditive"),
    };
    let mut records = Vec::new();
    let all = direct
        .iter()
        .map(|(l, d, e)| (*l, d, e, None))
        .chain(subs.iter().map(|(l, d, s)| (*l, d, &s.estimate, Some(s))));
    for (lambda, dir, est, sub) in all {
        out.note_estimate(&format!("mu lambda={lambda} direction={dir}"), est);
        rows.push(emit::MuCsvRow {
            lambda,
            direction: format_direction(dir.coords()),
            n,
            method: method.into(),
            mu_hat: est.value,
            stderr: est.stderr,
            accepted: est.accepted,
            replicas: est.replicas,
            flags: format_flags(&est.flags),
        });
        records.push(MuRecord { lambda, direction: dir, n, estimate: est, subadditive: sub });
    }
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    out.table(config, &rows)?;
    out.json(config, "mu", &records)
}

pub(crate) fn shape_rows(est: &ShapeEstimate) -> Vec<emit::ShapeCsvRow> {
    est.directions
        .iter()
        .zip(est.radii.iter().zip(&est.stderr))
        .map(|(dir, (&radius, &stderr))| emit::ShapeCsvRow {
            lambda: est.lambda,
            t: est.t,
            direction: format_direction(dir),
            radius,
            stderr,
        })
        .collect()
}

fn shape_params(config: &RunConfig, t: f64) -> ShapeParams {
    ShapeParams {
        directions: config.directions.clone(),
        growth_constant: config.theory.growth_constant,
        ..ShapeParams::new(config.mc_params(), t)
    }
}

fn shape(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let params = shape_params(config, config.time(Command::Shape));
    let mut estimates = Vec::new();
    for lambda in config.rates() {
        match shape_estimate(lambda, &params) {
            Ok(est) => {
                if est.retries > 0 {
                    out.caveats.push(format!("shape lambda={lambda}: {} boundary retries", est.retries));
                }
                for f in &est.flags {
                    if f != PROXY_CAVEAT {
                        out.caveats.push(format!("shape lambda={lambda}: {f}"));
                    }
                }
                out.proxy_note();
                estimates.push(est);
            }
            Err(e) => {
                let e = CliError::from(e);
                if !matches!(e, CliError::Exhausted(_)) {
                    return Err(e);
                }
                out.failure = Some(e);
                break;
            }
        }
    }
    let rows: Vec<_> = estimates.iter().flat_map(shape_rows).collect();
    out.table(config, &rows)?;
    out.json(config, "shape", &estimates)?;
    if Outputs::wants(config, Format::Svg) {
        out.push("shape.svg".into(), emit::shape_svg(&rows)?.into_bytes());
    }
    Ok(())
}

fn scan(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let mut params = ScanParams::new(config.mc_params(), config.target_accepted);
    params.max_replicas = params.max_replicas.max(config.replicas);
    let directions = config.lattice_directions()?;
    let table = continuity_scan(&config.rates(), &directions, config.n, &params)?;
    let rows: Vec<emit::ScanCsvRow> = table
        .rows
        .iter()
        .map(|r| emit::ScanCsvRow {
            lambda: r.lambda,
            direction: format_direction(r.direction.coords()),
            mu_hat: r.estimate.value,
            stderr: r.estimate.stderr,
            accepted: r.estimate.accepted,
            replicas: r.estimate.replicas,
            flags: format_flags(&r.estimate.flags),
        })
        .collect();
    for r in &table.rows {
        out.note_estimate(&format!("scan lambda={} direction={}", r.lambda, r.direction), &r.estimate);
    }
    let d = &table.diagnostics;
    if d.per_seed_violations > 0 {
        out.caveats.push(format!("{} replicas violate per-seed monotonicity", d.per_seed_violations));
    }
    if !d.monotonicity_violations.is_empty() {
        out.caveats.push(format!(
            "{} rate pairs violate monotonicity beyond 3 combined stderr",
            d.monotonicity_violations.len()
        ));
    }
    out.table(config, &rows)?;
    out.json(config, "scan", &table)?;
    if Outputs::wants(config, Format::Svg) {
        out.push("scan.svg".into(), emit::scan_svg(&rows).into_bytes());
    }
    Ok(())
}

fn idem(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let edges = Window::new(config.dimension, config.s_radius, BoundaryPolicy::Cutoff).edges();
    let t = config.time(Command::Idem);
    let lambda_prime = config.lambda_prime();
    let mc = config.mc_params();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for lambda in config.rates() {
        let r = idem_probability(&edges, t, lambda, lambda_prime, &mc)?;
        rows.push(emit::IdemCsvRow {
            lambda,
            lambda_prime,
            s_size: r.edges,
            t,
            p_hat: r.estimate.value,
            stderr: r.estimate.stderr,
            analytic_bound: r.analytic_bound,
        });
        reports.push(r);
    }
    out.table(config, &rows)?;
    out.json(config, "idem", &reports)
}

#[derive(Serialize)]
struct GoodGrowthOutput {
    reference: ShapeEstimate,
    reports: Vec<GoodGrowthReport>,
}

fn goodgrowth(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let rates = config.rates();
    let lambda0 = config.lambda0.unwrap_or(rates[0]);
    let reference = shape_estimate(lambda0, &shape_params(config, config.time(Command::Goodgrowth)))?;
    out.proxy_note();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &n in &config.big_n {
        let params = GoodGrowthParams {
            lambda_max: config.lambda_max,
            base_seed: config.base_seed,
            alpha: config.alpha,
            l: config.l,
            epsilon: config.epsilon,
            t0_step: config.t0_step,
            ci_level: config.ci_level,
            ..GoodGrowthParams::new(config.dimension, n, config.replicas)
        };
        for &lambda in &rates {
            let r = good_growth_probability(lambda, lambda0, &reference, &params)?;
            rows.push(emit::GoodGrowthCsvRow {
                lambda,
                lambda0,
                n,
                alpha: config.alpha,
                l: config.l,
                epsilon: config.epsilon,
                p_hat: r.estimate.value,
                stderr: r.estimate.stderr,
                replicas: r.estimate.replicas,
                start_points: r.start_points,
                determining_edges: r.determining_edges,
                horizon: r.horizon,
                shape_failures: r.shape_failures,
                confinement_failures: r.confinement_failures,
            });
            reports.push(r);
        }
    }
    out.table(config, &rows)?;
    out.json(config, "goodgrowth", &GoodGrowthOutput { reference, reports })
}

fn oracle_check(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let lattice = TinyLattice::path(config.oracle_sites)?;
    let lambda = config.rates()[0];
    let check = OracleCheck {
        oracle_lambda: config.oracle_lambda.unwrap_or(lambda),
        alpha_level: config.alpha_level,
        base_seed: config.base_seed,
        lambda_max: config.lambda_max,
        ..OracleCheck::new(lambda, config.time(Command::OracleCheck), config.replicas)
    };
    let report = mc_vs_oracle(&lattice, &check)?;
    let rows: Vec<emit::OracleCsvRow> = report
        .observed
        .iter()
        .zip(&report.expected)
        .enumerate()
        .map(|(state, (&observed, &expected))| emit::OracleCsvRow {
            state,
            infected: lattice.decode(state).iter().map(|s| s.coords()[0].to_string()).collect::<Vec<_>>().join(";"),
            observed,
            expected,
        })
        .collect();
    out.caveats.push(format!(
        "oracle check {}: chi-square p = {} at level {}",
        if report.pass { "passed" } else { "failed" },
        report.p_value,
        report.alpha_level
    ));
    out.table(config, &rows)?;
    out.json(config, "oracle", &report)
}
