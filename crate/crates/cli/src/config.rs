//! Run configuration: a JSON document with defaults, overridable from the command line.

use std::path::Path;

use clap::{Args, ValueEnum};
use contact_shape::estimators::{McParams, TheoryConstants};
use contact_shape::{Site, SurvivalPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Mu,
    Shape,
    Scan,
    Idem,
    Goodgrowth,
    OracleCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Mu => "mu",
            Command::Shape => "shape",
            Command::Scan => "scan",
            Command::Idem => "idem",
            Command::Goodgrowth => "goodgrowth",
            Command::OracleCheck => "oracle-check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MuMethod {
    Direct,
    Subadditive,
}

/// `"auto"` or an explicit radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowRadius {
    Fixed(i64),
    Keyword(Auto),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

impl WindowRadius {
    pub fn fixed(self) -> Option<i64> {
        match self {
            WindowRadius::Fixed(r) => Some(r),
            WindowRadius::Keyword(Auto::Auto) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub lambda: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub lambda_max: f64,
    pub base_seed: u64,
    pub replicas: usize,
    pub horizon: Option<f64>,
    pub window_radius: WindowRadius,
    pub survival: SurvivalPolicy,
    pub theory: TheoryConstants,
    pub ci_level: f64,
    pub min_accepted: usize,
    pub formats: Vec<Format>,

    /// Distance multiplier for `mu` and `scan`.
    pub n: usize,
    /// Largest scale of the subadditive minimisation; `n` when absent.
    pub n_max: Option<usize>,
    pub method: MuMethod,
    /// Integer directions for `mu`/`scan`, real directions for `shape`.
    pub directions: Option<Vec<Vec<f64>>>,
    /// Initial infected sites for `simulate`; the origin when absent.
    pub initial: Option<Vec<Vec<i64>>>,
    pub target_accepted: usize,
    /// Command-specific time: shape time, `Idem` time, oracle time, reference shape time.
    pub t: Option<f64>,
    pub lambda_prime: Option<f64>,
    /// `Idem` uses the edges with both endpoints in `[-s_radius, s_radius]^d`.
    pub s_radius: i64,
    pub lambda0: Option<f64>,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub l: i64,
    #[serde(rename = "N")]
    pub big_n: Vec<i64>,
    pub epsilon: f64,
    pub t0_step: f64,
    pub oracle_sites: usize,
    pub oracle_lambda: Option<f64>,
    pub alpha_level: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dimension: 1,
            lambda: None,
            lambda_grid: None,
            lambda_max: 3.0,
            base_seed: 0,
            replicas: 200,
            horizon: None,
            window_radius: WindowRadius::Keyword(Auto::Auto),
            survival: SurvivalPolicy::default(),
            theory: TheoryConstants::default(),
            ci_level: 0.95,
            min_accepted: 30,
            formats: vec![Format::Csv, Format::Json],
            n: 20,
            n_max: None,
            method: MuMethod::Direct,
            directions: None,
            initial: None,
            target_accepted: 500,
            t: None,
            lambda_prime: None,
            s_radius: 3,
            lambda0: None,
            alpha: 0.5,
            l: 8,
            big_n: vec![5, 10, 20],
            epsilon: 0.5,
            t0_step: 0.5,
            oracle_sites: 5,
            oracle_lambda: None,
            alpha_level: 1e-3,
        }
    }
}

const DEFAULT_LAMBDA: f64 = 2.0;

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| schema(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// The rates of the run: `lambda_grid`, else `[lambda]`.
    pub fn rates(&self) -> Vec<f64> {
        match (&self.lambda_grid, self.lambda) {
            (Some(grid), _) => grid.clone(),
            (None, Some(l)) => vec![l],
            (None, None) => vec![DEFAULT_LAMBDA],
        }
    }

    /// Time parameter with a per-command fallback.
    pub fn time(&self, command: Command) -> f64 {
        self.t.unwrap_or(match command {
            Command::Simulate => self.horizon.unwrap_or(10.0),
            Command::Idem => 5.0,
            Command::OracleCheck => 1.0,
            _ => 20.0,
        })
    }

    pub fn mc_params(&self) -> McParams {
        McParams {
            dimension: self.dimension,
            lambda_max: self.lambda_max,
            base_seed: self.base_seed,
            replicas: self.replicas,
            policy: self.survival,
            horizon: self.horizon,
            window_radius: self.window_radius.fixed(),
            min_accepted: self.min_accepted,
            ci_level: self.ci_level,
        }
    }

    /// Directions as lattice sites; the first axis when none are given.
    pub fn lattice_directions(&self) -> CliResult<Vec<Site>> {
        match &self.directions {
            None => Ok(vec![Site::axis(self.dimension, 0, 1)]),
            Some(dirs) => dirs
                .iter()
                .map(|d| {
                    if d.iter().any(|c| c.fract() != 0.0 || !c.is_finite()) {
                        return Err(schema(format!("direction {d:?} must have integer coordinates")));
                    }
                    Ok(Site::new(d.iter().map(|&c| c as i64).collect::<Vec<_>>()))
                })
                .collect(),
        }
    }

    pub fn initial_sites(&self) -> Vec<Site> {
        match &self.initial {
            None => vec![Site::origin(self.dimension)],
            Some(sites) => sites.iter().map(|s| Site::new(s.clone())).collect(),
        }
    }

    pub fn lambda_prime(&self) -> f64 {
        self.lambda_prime.unwrap_or(self.rates()[0] - 0.01)
    }

    /// Checks every constraint of `command` before any simulation starts.
    pub fn validate(&self, command: Command) -> CliResult<()> {
        if self.dimension == 0 {
            return Err(schema("dimension must be at least 1"));
        }
        if !(self.lambda_max > 0.0 && self.lambda_max.is_finite()) {
            return Err(schema(format!("lambda_max must be positive, got {}", self.lambda_max)));
        }
        if self.replicas == 0 {
            return Err(schema("replicas must be at least 1"));
        }
        if self.lambda.is_some() && self.lambda_grid.is_some() {
            return Err(schema("give either lambda or lambda_grid, not both"));
        }
        let rates = self.rates();
        if rates.is_empty() {
            return Err(schema("lambda_grid is empty"));
        }
        if rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(schema("lambda_grid must be strictly increasing"));
        }
        for &l in &rates {
            self.check_rate("lambda", l)?;
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(schema("ci_level must lie in (0, 1)"));
        }
        self.survival.validate().map_err(|e| schema(e.to_string()))?;
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(schema("horizon must be positive"));
            }
        }
        if let Some(r) = self.window_radius.fixed() {
            if r < 1 {
                return Err(schema("window_radius must be at least 1"));
            }
        }
        let t = self.time(command);
        if !(t > 0.0 && t.is_finite()) {
            return Err(schema(format!("t must be positive, got {t}")));
        }
        if let Some(dirs) = &self.directions {
            if dirs.is_empty() {
                return Err(schema("directions is empty"));
            }
            for d in dirs {
                if d.len() != self.dimension {
                    return Err(schema(format!("direction {d:?} does not have dimension {}", self.dimension)));
                }
                if d.iter().all(|&c| c == 0.0) {
                    return Err(schema("directions must be nonzero"));
                }
            }
        }
        self.check_formats(command)?;
        match command {
            Command::Simulate => {
                for s in self.initial_sites() {
                    if s.dim() != self.dimension {
                        return Err(schema(format!("initial site {s} does not have dimension {}", self.dimension)));
                    }
                }
            }
            Command::Mu | Command::Scan => {
                self.lattice_directions()?;
                if self.n == 0 {
                    return Err(schema("n must be at least 1"));
                }
                if self.n_max == Some(0) {
                    return Err(schema("n_max must be at least 1"));
                }
                if command == Command::Scan && self.target_accepted == 0 {
                    return Err(schema("target_accepted must be at least 1"));
                }
            }
            Command::Shape => {}
            Command::Idem => {
                if self.s_radius < 0 {
                    return Err(schema("s_radius must be nonnegative"));
                }
                let lp = self.lambda_prime();
                self.check_rate("lambda_prime", lp)?;
                if rates.iter().any(|&l| lp > l) {
                    return Err(schema("lambda_prime must not exceed lambda"));
                }
            }
            Command::Goodgrowth => {
                let l0 = self.lambda0.unwrap_or(rates[0]);
                self.check_rate("lambda0", l0)?;
                if rates.iter().any(|&l| l < l0) {
                    return Err(schema("every lambda must be at least lambda0"));
                }
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return Err(schema("alpha must lie in (0, 1)"));
                }
                if self.l < 1 || self.big_n.is_empty() || self.big_n.iter().any(|&n| n < 1) {
                    return Err(schema("L and every N must be at least 1"));
                }
                if self.epsilon.is_nan() || self.epsilon <= 0.0 || self.t0_step.is_nan() || self.t0_step <= 0.0 {
                    return Err(schema("epsilon and t0_step must be positive"));
                }
            }
            Command::OracleCheck => {
                if self.dimension != 1 {
                    return Err(schema("oracle-check runs on a one-dimensional path"));
                }
                if self.oracle_sites.is_multiple_of(2) || self.oracle_sites > contact_shape::oracle::MAX_SITES {
                    return Err(schema(format!(
                        "oracle_sites must be odd and at most {}",
                        contact_shape::oracle::MAX_SITES
                    )));
                }
                if let Some(l) = self.oracle_lambda {
                    if !(l > 0.0 && l.is_finite()) {
                        return Err(schema("oracle_lambda must be positive"));
                    }
                }
                if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
                    return Err(schema("alpha_level must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }

    fn check_rate(&self, name: &str, l: f64) -> CliResult<()> {
        if l > 0.0 && l <= self.lambda_max {
            Ok(())
        } else {
            Err(schema(format!("{name} = {l} outside (0, lambda_max = {}]", self.lambda_max)))
        }
    }

    fn check_formats(&self, command: Command) -> CliResult<()> {
        if self.formats.is_empty() {
            return Err(schema("formats is empty"));
        }
        if self.formats.contains(&Format::Svg) {
            let ok = match command {
                Command::Scan => true,
                Command::Shape => self.dimension == 2,
                _ => false,
            };
            if !ok {
                return Err(schema(format!(
                    "svg output is only available for scan and two-dimensional shape, not {}",
                    command.name()
                )));
            }
        }
        Ok(())
    }
}

/// Command-line overrides of scalar configuration fields.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub dimension: Option<usize>,
    /// Single rate; replaces any grid from the config file.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated rates; replaces any single rate from the config file.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long = "seed")]
    pub base_seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub window_radius: Option<i64>,
    #[arg(long)]
    pub t_surv: Option<f64>,
    #[arg(long)]
    pub window_factor: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub m1: Option<f64>,
    #[arg(long)]
    pub growth_constant: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MuMethod>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub lambda_prime: Option<f64>,
    #[arg(long)]
    pub s_radius: Option<i64>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "L")]
    pub l: Option<i64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub target_accepted: Option<usize>,
    #[arg(long)]
    pub oracle_sites: Option<usize>,
    #[arg(long)]
    pub oracle_lambda: Option<f64>,
    /// Output formats, comma-separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub formats: Option<Vec<Format>>,
}

impl Overrides {
    pub fn apply(&self, c: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        fn set_opt<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                *slot = v.clone();
            }
        }
        set(&mut c.dimension, &self.dimension);
        if self.lambda.is_some() {
            c.lambda = self.lambda;
            c.lambda_grid = None;
        }
        if self.lambda_grid.is_some() {
            c.lambda_grid = self.lambda_grid.clone();
            c.lambda = None;
        }
        set(&mut c.lambda_max, &self.lambda_max);
        set(&mut c.base_seed, &self.base_seed);
        set(&mut c.replicas, &self.replicas);
        set_opt(&mut c.horizon, &self.horizon);
        if let Some(r) = self.window_radius {
            c.window_radius = WindowRadius::Fixed(r);
        }
        set(&mut c.survival.t_surv, &self.t_surv);
        set(&mut c.survival.window_factor, &self.window_factor);
        set(&mut c.survival.max_steps, &self.max_steps);
        set(&mut c.theory.m1, &self.m1);
        set(&mut c.theory.growth_constant, &self.growth_constant);
        set(&mut c.n, &self.n);
        set_opt(&mut c.n_max, &self.n_max);
        set(&mut c.method, &self.method);
        set_opt(&mut c.t, &self.t);
        set_opt(&mut c.lambda_prime, &self.lambda_prime);
        set(&mut c.s_radius, &self.s_radius);
        set_opt(&mut c.lambda0, &self.lambda0);
        set(&mut c.alpha, &self.alpha);
        set(&mut c.l, &self.l);
        set(&mut c.epsilon, &self.epsilon);
        set(&mut c.target_accepted, &self.target_accepted);
        set(&mut c.oracle_sites, &self.oracle_sites);
        set_opt(&mut c.oracle_lambda, &self.oracle_lambda);
        set(&mut c.formats, &self.formats);
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> CliResult<RunConfig> {
    let mut config = match file {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut config);
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_json(r#"{"lambda": 2.5, "survival": {"t_surv": 40}, "N": [3]}"#).unwrap();
        assert_eq!(c.rates(), vec![2.5]);
        assert_eq!(c.survival.t_surv, 40.0);
        assert_eq!(c.survival.window_factor, SurvivalPolicy::default().window_factor);
        assert_eq!(c.big_n, vec![3]);
        assert_eq!(c.window_radius.fixed(), None);
    }

    #[test]
    fn window_radius_accepts_auto_or_integer() {
        assert_eq!(RunConfig::from_json(r#"{"window_radius": 12}"#).unwrap().window_radius.fixed(), Some(12));
        assert_eq!(RunConfig::from_json(r#"{"window_radius": "auto"}"#).unwrap().window_radius.fixed(), None);
        assert!(RunConfig::from_json(r#"{"window_radius": "big"}"#).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"lamda": 2}"#), Err(CliError::Schema(_))));
    }

    #[test]
    fn rate_above_cap_is_rejected() {
        let c = RunConfig { lambda: Some(3.5), ..RunConfig::default() };
        assert!(matches!(c.validate(Command::Scan), Err(CliError::Schema(_))));
        let c = RunConfig { lambda_grid: Some(vec![2.0, 2.0]), ..RunConfig::default() };
        assert!(c.validate(Command::Scan).is_err());
        let c = RunConfig { replicas: 0, ..RunConfig::default() };
        assert!(c.validate(Command::Simulate).is_err());
    }

    #[test]
    fn svg_pairing_is_checked() {
        let c = RunConfig { formats: vec![Format::Svg], ..RunConfig::default() };
        assert!(c.validate(Command::Scan).is_ok());
        assert!(c.validate(Command::Idem).is_err());
        assert!(c.validate(Command::Shape).is_err());
        let c2 = RunConfig { dimension: 2, ..c };
        assert!(c2.validate(Command::Shape).is_ok());
    }

    #[test]
    fn flags_take_precedence() {
        let mut c = RunConfig { lambda_grid: Some(vec![1.0, 2.0]), replicas: 7, ..RunConfig::default() };
        let o = Overrides { lambda: Some(2.2), t_surv: Some(9.0), ..Overrides::default() };
        o.apply(&mut c);
        assert_eq!(c.rates(), vec![2.2]);
        assert_eq!(c.replicas, 7);
        assert_eq!(c.survival.t_surv, 9.0);
    }

    #[test]
    fn integer_directions_required_for_lattice_targets() {
        let c = RunConfig { directions: Some(vec![vec![0.5]]), ..RunConfig::default() };
        assert!(c.validate(Command::Scan).is_err());
        assert!(c.validate(Command::Shape).is_ok());
    }
}
