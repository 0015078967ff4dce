//! Stable CSV tables and static SVG plots of them.
//!
//! Every table type fixes its header. Floats are written in shortest round-trip form,
//! so parsing a table and writing it again reproduces the input byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// A CSV table with a fixed column list.
pub trait Table: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
    const NAME: &'static str;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCsvRow {
    pub lambda: f64,
    pub direction: String,
    pub mu_hat: f64,
    pub stderr: f64,
    pub accepted: usize,
    pub replicas: usize,
    pub flags: String,
}

impl Table for ScanCsvRow {
    const HEADER: &'static [&'static str] =
        &["lambda", "direction", "mu_hat", "stderr", "accepted", "replicas", "flags"];
    const NAME: &'static str = "scan";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCsvRow {
    pub lambda: f64,
    pub t: f64,
    pub direction: String,
    pub radius: f64,
    pub stderr: f64,
}

impl Table for ShapeCsvRow {
    const HEADER: &'static [&'static str] = &["lambda", "t", "direction", "radius", "stderr"];
    const NAME: &'static str = "shape";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdemCsvRow {
    pub lambda: f64,
    pub lambda_prime: f64,
    #[serde(rename = "S_size")]
    pub s_size: usize,
    pub t: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub analytic_bound: f64,
}

impl Table for IdemCsvRow {
    const HEADER: &'static [&'static str] =
        &["lambda", "lambda_prime", "S_size", "t", "p_hat", "stderr", "analytic_bound"];
    const NAME: &'static str = "idem";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuCsvRow {
    pub lambda: f64,
    pub direction: String,
    pub n: usize,
    pub method: String,
    pub mu_hat: f64,
    pub stderr: f64,
    pub accepted: usize,
    pub replicas: usize,
    pub flags: String,
}

impl Table for MuCsvRow {
    const HEADER: &'static [&'static str] =
        &["lambda", "direction", "n", "method", "mu_hat", "stderr", "accepted", "replicas", "flags"];
    const NAME: &'static str = "mu";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateCsvRow {
    pub replica: usize,
    pub lambda: f64,
    /// Empty when the run is alive at the horizon.
    pub extinction_time: Option<f64>,
    pub final_size: usize,
    pub sites_ever_infected: usize,
    pub max_distance: i64,
    pub boundary_hit: bool,
}

impl Table for SimulateCsvRow {
    const HEADER: &'static [&'static str] = &[
        "replica",
        "lambda",
        "extinction_time",
        "final_size",
        "sites_ever_infected",
        "max_distance",
        "boundary_hit",
    ];
    const NAME: &'static str = "simulate";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodGrowthCsvRow {
    pub lambda: f64,
    pub lambda0: f64,
    #[serde(rename = "N")]
    pub n: i64,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub l: i64,
    pub epsilon: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub start_points: usize,
    pub determining_edges: usize,
    pub horizon: f64,
    pub shape_failures: usize,
    pub confinement_failures: usize,
}

impl Table for GoodGrowthCsvRow {
    const HEADER: &'static [&'static str] = &[
        "lambda",
        "lambda0",
        "N",
        "alpha",
        "L",
        "epsilon",
        "p_hat",
        "stderr",
        "replicas",
        "start_points",
        "determining_edges",
        "horizon",
        "shape_failures",
        "confinement_failures",
    ];
    const NAME: &'static str = "goodgrowth";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCsvRow {
    pub state: usize,
    pub infected: String,
    pub observed: u64,
    pub expected: f64,
}

impl Table for OracleCsvRow {
    const HEADER: &'static [&'static str] = &["state", "infected", "observed", "expected"];
    const NAME: &'static str = "oracle";
}

/// Coordinates joined by `;`, e.g. `1;0`.
pub fn format_direction<T: ToString>(coords: &[T]) -> String {
    coords.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

pub fn parse_direction(s: &str) -> CliResult<Vec<f64>> {
    s.split(';')
        .map(|c| {
            c.parse::<f64>()
                .map_err(|e| CliError::Parse { what: "direction".into(), message: format!("{s:?}: {e}") })
        })
        .collect()
}

pub fn format_flags(flags: &[String]) -> String {
    flags.join("|")
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::Parse { what: "csv".into(), message: e.to_string() }
}

/// Header line, then one line per row; an empty table is the header alone.
pub fn to_csv<T: Table>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(T::HEADER).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

pub fn from_csv<T: Table>(bytes: &[u8]) -> CliResult<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(T::HEADER.iter().copied()) {
        return Err(CliError::Parse {
            what: format!("{} csv", T::NAME),
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Parse { what: "json".into(), message: e.to_string() })?;
    out.push(b'\n');
    Ok(out)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>, square: bool) -> Frame {
        let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        for (px, py) in points {
            x = (x.0.min(px), x.1.max(px));
            y = (y.0.min(py), y.1.max(py));
        }
        if !x.0.is_finite() {
            x = (0.0, 1.0);
            y = (0.0, 1.0);
        }
        let widen = |r: (f64, f64)| if r.1 - r.0 > 1e-12 { r } else { (r.0 - 0.5, r.1 + 0.5) };
        let (mut x, mut y) = (widen(x), widen(y));
        if square {
            let m = x.0.abs().max(x.1.abs()).max(y.0.abs()).max(y.1.abs());
            x = (-m, m);
            y = (-m, m);
        }
        Frame { x, y }
    }

    fn map(&self, (px, py): (f64, f64)) -> (f64, f64) {
        let sx = PAD + (px - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * PAD);
        let sy = HEIGHT - PAD - (py - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * PAD);
        (sx, sy)
    }
}

fn svg_open(title: &str, frame: &Frame, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{title}</text>"#, WIDTH / 2.0);
    let (x0, y0) = (PAD, HEIGHT - PAD);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {PAD} L{x0} {y0} L{} {y0}" stroke="black" fill="none"/>"#,
        WIDTH - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{x0}" y="{}" font-size="11">{:.3}</text><text x="{}" y="{}" font-size="11" text-anchor="end">{:.3}</text>"#,
        y0 + 16.0,
        frame.x.0,
        WIDTH - PAD,
        y0 + 16.0,
        frame.x.1
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{y0}" font-size="11" text-anchor="end">{:.3}</text><text x="{}" y="{}" font-size="11" text-anchor="end">{:.3}</text>"#,
        x0 - 4.0,
        frame.y.0,
        x0 - 4.0,
        PAD + 4.0,
        frame.y.1
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{x_label}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    s
}

fn polyline(points: &[(f64, f64)], colour: &str, label: &str) -> String {
    let coords: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!(
        "<polyline points=\"{}\" stroke=\"{colour}\" fill=\"none\" stroke-width=\"1.5\"><title>{label}</title></polyline>\n",
        coords.join(" ")
    )
}

/// `mu_hat` against `lambda`, one curve per direction; rows without an estimate are skipped.
pub fn scan_svg(rows: &[ScanCsvRow]) -> String {
    let mut curves: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.mu_hat.is_finite()) {
        curves.entry(r.direction.as_str()).or_default().push((r.lambda, r.mu_hat));
    }
    let frame = Frame::fit(curves.values().flatten().copied(), false);
    let mut s = svg_open("time constant scan", &frame, "lambda", "mu_hat");
    for (i, (dir, pts)) in curves.iter().enumerate() {
        let mapped: Vec<(f64, f64)> = pts.iter().map(|&p| frame.map(p)).collect();
        s.push_str(&polyline(&mapped, PALETTE[i % PALETTE.len()], &format!("direction {dir}")));
    }
    s.push_str("</svg>\n");
    s
}

/// Outline of the radii table in the plane: one closed polyline per rate, vertices
/// `radius * direction` in angular order.
pub fn shape_svg(rows: &[ShapeCsvRow]) -> CliResult<String> {
    let mut outlines: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        let dir = parse_direction(&r.direction)?;
        if dir.len() != 2 {
            return Err(CliError::Schema("shape svg requires two-dimensional directions".into()));
        }
        let p = (r.radius * dir[0], r.radius * dir[1]);
        match outlines.iter_mut().find(|(l, _)| *l == r.lambda) {
            Some((_, pts)) => pts.push(p),
            None => outlines.push((r.lambda, vec![p])),
        }
    }
    for (_, pts) in &mut outlines {
        pts.sort_by(|a, b| a.1.atan2(a.0).total_cmp(&b.1.atan2(b.0)));
        if let Some(&first) = pts.first() {
            pts.push(first);
        }
    }
    let frame = Frame::fit(outlines.iter().flat_map(|(_, p)| p.iter().copied()), true);
    let mut s = svg_open("asymptotic shape radii", &frame, "x1", "x2");
    for (i, (lambda, pts)) in outlines.iter().enumerate() {
        let mapped: Vec<(f64, f64)> = pts.iter().map(|&p| frame.map(p)).collect();
        s.push_str(&polyline(&mapped, PALETTE[i % PALETTE.len()], &format!("lambda {lambda}")));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
