//! Lattice points, clock keys and finite simulation windows.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of `Z^d`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        Site(coords.into())
    }

    pub fn origin(dimension: usize) -> Self {
        Site(vec![0; dimension])
    }

    /// `scale * e_axis`.
    pub fn axis(dimension: usize, axis: usize, scale: i64) -> Self {
        let mut coords = vec![0; dimension];
        coords[axis] = scale;
        Site(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn add(&self, other: &Site) -> Site {
        Site(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Site) -> Site {
        Site(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn neg(&self) -> Site {
        Site(self.0.iter().map(|c| -c).collect())
    }

    pub fn scale(&self, n: i64) -> Site {
        Site(self.0.iter().map(|c| c * n).collect())
    }

    pub fn sup_norm(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn l1_norm(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).sum()
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch { expected, found: self.dim() });
        }
        Ok(())
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyKind {
    Site,
    Edge,
}

/// Identifies one clock of the Harris field.
///
/// Site keys carry the rate-1 recovery clock of `site`. Edge keys carry the clock
/// of the undirected edge `{site, site + e_axis}`; the lexicographically smaller
/// endpoint is always the stored one, so every edge has a single key.
///
/// The derived ordering (kind, then site, then axis) is the tie-break order used by
/// the simulator for simultaneous event times.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClockKey {
    pub kind: KeyKind,
    pub site: Site,
    pub axis: Option<usize>,
}

impl ClockKey {
    pub fn site(site: Site) -> Self {
        ClockKey { kind: KeyKind::Site, site, axis: None }
    }

    /// Edge `{lower, lower + e_axis}`.
    pub fn edge(lower: Site, axis: usize) -> Self {
        ClockKey { kind: KeyKind::Edge, site: lower, axis: Some(axis) }
    }

    /// Canonical key of the edge joining two nearest neighbours, if they are.
    pub fn edge_between(a: &Site, b: &Site) -> Option<Self> {
        if a.dim() != b.dim() {
            return None;
        }
        let diff = b.sub(a);
        if diff.l1_norm() != 1 {
            return None;
        }
        let axis = diff.0.iter().position(|&c| c != 0)?;
        let lower = if diff.0[axis] > 0 { a.clone() } else { b.clone() };
        Some(ClockKey::edge(lower, axis))
    }

    pub fn is_edge(&self) -> bool {
        self.kind == KeyKind::Edge
    }

    pub fn dim(&self) -> usize {
        self.site.dim()
    }

    /// Both endpoints of an edge key; a site key yields its site twice.
    pub fn endpoints(&self) -> (Site, Site) {
        match self.axis {
            Some(axis) => {
                let mut upper = self.site.clone();
                upper.0[axis] += 1;
                (self.site.clone(), upper)
            }
            None => (self.site.clone(), self.site.clone()),
        }
    }

    pub fn translate(&self, by: &Site) -> ClockKey {
        ClockKey { kind: self.kind, site: self.site.add(by), axis: self.axis }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryPolicy {
    /// Edges leaving the window do not exist.
    Cutoff,
    /// As `Cutoff`, and any infection of a boundary site raises `boundary_hit`.
    #[default]
    Flag,
}

/// Sup-norm box `center + [-radius, radius]^d`. No edge crosses its boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub radius: i64,
    pub boundary_policy: BoundaryPolicy,
    pub center: Site,
}

impl Window {
    pub fn new(dimension: usize, radius: i64, boundary_policy: BoundaryPolicy) -> Self {
        Window { radius, boundary_policy, center: Site::origin(dimension) }
    }

    pub fn centered(center: Site, radius: i64, boundary_policy: BoundaryPolicy) -> Self {
        Window { radius, boundary_policy, center }
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn contains(&self, site: &Site) -> bool {
        site.dim() == self.dim()
            && site.0.iter().zip(&self.center.0).all(|(s, c)| (s - c).abs() <= self.radius)
    }

    pub fn on_boundary(&self, site: &Site) -> bool {
        self.contains(site)
            && site.0.iter().zip(&self.center.0).any(|(s, c)| (s - c).abs() == self.radius)
    }

    pub fn side(&self) -> u64 {
        (2 * self.radius + 1) as u64
    }

    pub fn site_count(&self) -> u64 {
        self.side().pow(self.dim() as u32)
    }

    /// All window sites in lexicographic order.
    pub fn sites(&self) -> Vec<Site> {
        let d = self.dim();
        let side = self.side();
        (0..self.site_count())
            .map(|mut idx| {
                let mut coords = vec![0i64; d];
                for axis in (0..d).rev() {
                    coords[axis] = (idx % side) as i64 - self.radius + self.center.0[axis];
                    idx /= side;
                }
                Site(coords)
            })
            .collect()
    }

    /// All edges with both endpoints in the window.
    pub fn edges(&self) -> Vec<ClockKey> {
        let mut out = Vec::new();
        for site in self.sites() {
            for axis in 0..self.dim() {
                if site.0[axis] - self.center.0[axis] < self.radius {
                    out.push(ClockKey::edge(site.clone(), axis));
                }
            }
        }
        out
    }

    /// Edges with at least one endpoint in the window, including those that cross its
    /// boundary.
    pub fn touching_edges(&self) -> Vec<ClockKey> {
        let mut out = Vec::new();
        for site in self.sites() {
            for axis in 0..self.dim() {
                out.push(ClockKey::edge(site.clone(), axis));
                if site.0[axis] - self.center.0[axis] == -self.radius {
                    let mut below = site.clone();
                    below.0[axis] -= 1;
                    out.push(ClockKey::edge(below, axis));
                }
            }
        }
        out.sort();
        out
    }
}
