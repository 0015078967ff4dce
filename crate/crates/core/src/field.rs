//! The Harris space-time random field.
//!
//! Every edge of `Z^d` carries a rate-`lambda_max` Poisson clock whose arrivals hold
//! independent uniform marks on `(0, 1)`; every site carries a rate-1 recovery clock.
//! Nothing is stored: the arrivals of a clock are a pure function of
//! `(seed, key, time block)`. Time is cut into fixed blocks per clock; inside a block
//! the arrivals are built from exponential gaps restarted at the block start, which
//! by memorylessness is again a Poisson process. Each block draws from its own
//! ChaCha8 stream, selected by a hash of the key and block index, so extending a
//! horizon never resamples anything already drawn.
//!
//! Translations are views: [`HarrisField::shift_time`] moves the time origin and
//! [`HarrisField::shift_space`] relabels keys. A mark stays attached to the arrival
//! that drew it, so the `i`-th arrival of a time-shifted view carries mark
//! `i + N_base([0, t])` of the base clock and thinning commutes with shifting.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::lattice::{ClockKey, KeyKind, Site};

/// Expected number of arrivals per generated time block.
const ARRIVALS_PER_BLOCK: f64 = 4.0;

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn combine(h: u64, v: u64) -> u64 {
    mix64(h ^ mix64(v.wrapping_add(0x9e37_79b9_7f4a_7c15)).wrapping_add(h.rotate_left(17)))
}

/// Seed of replica `index` under `base_seed`.
pub fn replica_seed(base_seed: u64, index: u64) -> u64 {
    combine(mix64(base_seed ^ 0x5eed_5eed_5eed_5eed), index)
}

pub(crate) fn key_hash(kind: KeyKind, coords: impl Iterator<Item = i64>, axis: usize) -> u64 {
    let mut h = match kind {
        KeyKind::Site => 0x51_7e,
        KeyKind::Edge => 0xed_9e,
    };
    for c in coords {
        h = combine(h, c as u64);
    }
    combine(h, axis as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Arrival {
    /// Absolute time in the base (unshifted) field.
    pub base_time: f64,
    /// Uniform on (0, 1); zero for recovery clocks.
    pub mark: f64,
}

pub(crate) type Block = SmallVec<[Arrival; 8]>;

/// A deterministic, seed-keyed realization of the Harris construction, possibly seen
/// through time and space translations.
#[derive(Debug, Clone, PartialEq)]
pub struct HarrisField {
    seed: u64,
    dimension: usize,
    lambda_max: f64,
    time_offset: f64,
    space_offset: Site,
    chacha_key: [u8; 32],
}

impl HarrisField {
    pub fn new(seed: u64, dimension: usize, lambda_max: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if !(lambda_max > 0.0 && lambda_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda_max must be positive, got {lambda_max}")));
        }
        let mut chacha_key = [0u8; 32];
        for (i, chunk) in chacha_key.chunks_mut(8).enumerate() {
            chunk.copy_from_slice(&combine(seed, i as u64).to_le_bytes());
        }
        Ok(HarrisField {
            seed,
            dimension,
            lambda_max,
            time_offset: 0.0,
            space_offset: Site::origin(dimension),
            chacha_key,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn time_offset(&self) -> f64 {
        self.time_offset
    }

    pub fn space_offset(&self) -> &Site {
        &self.space_offset
    }

    /// View of the field seen from time `t` onwards (the operator `theta_t`).
    pub fn shift_time(&self, t: f64) -> Result<HarrisField> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let mut out = self.clone();
        out.time_offset += t;
        Ok(out)
    }

    /// View of the field seen from site `x` (the operator `T_x`): the clock at key `k`
    /// of the view is the clock at `k + x` of `self`.
    pub fn shift_space(&self, x: &Site) -> Result<HarrisField> {
        x.check_dim(self.dimension)?;
        let mut out = self.clone();
        out.space_offset = out.space_offset.add(x);
        Ok(out)
    }

    pub(crate) fn check_rate(&self, lambda: f64) -> Result<()> {
        if !(lambda > 0.0 && lambda <= self.lambda_max) {
            return Err(Error::RateOutOfRange { lambda, lambda_max: self.lambda_max });
        }
        Ok(())
    }

    pub(crate) fn rate(&self, kind: KeyKind) -> f64 {
        match kind {
            KeyKind::Site => 1.0,
            KeyKind::Edge => self.lambda_max,
        }
    }

    pub(crate) fn block_len(&self, kind: KeyKind) -> f64 {
        ARRIVALS_PER_BLOCK / self.rate(kind)
    }

    /// Hash of the base key corresponding to a view-coordinate key.
    pub(crate) fn view_key_hash(&self, kind: KeyKind, view_coords: &[i64], axis: usize) -> u64 {
        key_hash(
            kind,
            view_coords.iter().zip(&self.space_offset.0).map(|(c, o)| c + o),
            axis,
        )
    }

    /// Arrivals of one clock inside base-time block `block`, in increasing order.
    pub(crate) fn block_arrivals(&self, kind: KeyKind, hash: u64, block: u64, out: &mut Block) {
        out.clear();
        let rate = self.rate(kind);
        let len = self.block_len(kind);
        let start = block as f64 * len;
        let end = start + len;
        let mut rng = ChaCha8Rng::from_seed(self.chacha_key);
        rng.set_stream(combine(hash, block));
        let mut t = start;
        loop {
            let u: f64 = rng.sample(Open01);
            t += -u.ln() / rate;
            if t >= end {
                break;
            }
            let mark = match kind {
                KeyKind::Edge => rng.sample(Open01),
                KeyKind::Site => 0.0,
            };
            out.push(Arrival { base_time: t, mark });
        }
    }

    /// Block containing base time `t`.
    pub(crate) fn block_of(&self, kind: KeyKind, base_time: f64) -> u64 {
        (base_time / self.block_len(kind)).floor().max(0.0) as u64
    }

    /// Realization of the clock at `key` on the view-time interval `(0, horizon]`.
    pub fn arrivals(&self, key: &ClockKey, horizon: f64) -> Result<ArrivalSequence> {
        if horizon.is_nan() || horizon < 0.0 {
            return Err(Error::NegativeTime(horizon));
        }
        key.site.check_dim(self.dimension)?;
        let axis = match (key.kind, key.axis) {
            (KeyKind::Edge, Some(a)) if a < self.dimension => a,
            (KeyKind::Edge, _) => {
                return Err(Error::InvalidParameter("edge key needs an axis below the dimension".into()))
            }
            (KeyKind::Site, None) => 0,
            (KeyKind::Site, Some(_)) => {
                return Err(Error::InvalidParameter("site keys carry no axis".into()))
            }
        };
        let hash = self.view_key_hash(key.kind, &key.site.0, axis);
        let first = self.block_of(key.kind, self.time_offset);
        let last = self.block_of(key.kind, self.time_offset + horizon);
        let mut times = Vec::new();
        let mut marks = Vec::new();
        let mut block = Block::new();
        for b in first..=last {
            self.block_arrivals(key.kind, hash, b, &mut block);
            for a in &block {
                let t = a.base_time - self.time_offset;
                if t > 0.0 && t <= horizon {
                    times.push(t);
                    if key.is_edge() {
                        marks.push(a.mark);
                    }
                }
            }
        }
        Ok(ArrivalSequence { key: key.clone(), horizon, times, marks })
    }
}

/// The arrivals of one clock on `(0, horizon]`, with marks for edge clocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalSequence {
    pub key: ClockKey,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub marks: Vec<f64>,
}

impl ArrivalSequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Keeps the arrivals whose mark is at most `lambda / lambda_max`.
    pub fn thin(&self, lambda: f64, lambda_max: f64) -> Result<ArrivalSequence> {
        if !self.key.is_edge() {
            return Err(Error::SiteKeyNotThinnable);
        }
        if !(lambda >= 0.0 && lambda <= lambda_max) {
            return Err(Error::RateOutOfRange { lambda, lambda_max });
        }
        let threshold = lambda / lambda_max;
        let (times, marks) = self
            .times
            .iter()
            .zip(&self.marks)
            .filter(|(_, &m)| m <= threshold)
            .map(|(&t, &m)| (t, m))
            .unzip();
        Ok(ArrivalSequence { key: self.key.clone(), horizon: self.horizon, times, marks })
    }
}

/// `seq` thinned to rate `lambda`.
pub fn thin(seq: &ArrivalSequence, lambda: f64, lambda_max: f64) -> Result<ArrivalSequence> {
    seq.thin(lambda, lambda_max)
}

/// Whether the rate-`lambda` and rate-`lambda_prime` infection clocks agree on every
/// edge of `edges` over `[0, t]`: no arrival up to `t` has a mark in
/// `(min/lambda_max, max/lambda_max]`.
pub fn idem_holds(
    field: &HarrisField,
    edges: &[ClockKey],
    t: f64,
    lambda: f64,
    lambda_prime: f64,
) -> Result<bool> {
    field.check_rate(lambda)?;
    field.check_rate(lambda_prime)?;
    if t.is_nan() || t <= 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if lambda == lambda_prime {
        return Ok(true);
    }
    let lo = lambda.min(lambda_prime) / field.lambda_max();
    let hi = lambda.max(lambda_prime) / field.lambda_max();
    for key in edges {
        if !key.is_edge() {
            return Err(Error::InvalidParameter("idem sets contain edges only".into()));
        }
        let seq = field.arrivals(key, t)?;
        if seq.marks.iter().any(|&m| m > lo && m <= hi) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn edge0() -> ClockKey {
        ClockKey::edge(Site::origin(1), 0)
    }

    #[test]
    fn deterministic_and_prefix_consistent() {
        let f = HarrisField::new(7, 2, 3.0).unwrap();
        let key = ClockKey::edge(Site::new([2, -1]), 1);
        let a = f.arrivals(&key, 10.0).unwrap();
        let b = f.arrivals(&key, 10.0).unwrap();
        assert_eq!(a, b);
        let long = f.arrivals(&key, 25.0).unwrap();
        assert_eq!(&long.times[..a.len()], &a.times[..]);
        assert_eq!(&long.marks[..a.len()], &a.marks[..]);
        assert!(long.times[a.len()..].iter().all(|&t| t > 10.0));
        assert!(a.times.windows(2).all(|w| w[0] < w[1]));
        assert!(a.times.iter().all(|&t| t > 0.0 && t <= 10.0));
        assert!(a.marks.iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn site_keys_have_no_marks() {
        let f = HarrisField::new(1, 1, 2.0).unwrap();
        let seq = f.arrivals(&ClockKey::site(Site::new([3])), 50.0).unwrap();
        assert!(!seq.times.is_empty());
        assert!(seq.marks.is_empty());
        assert_eq!(seq.thin(1.0, 2.0), Err(Error::SiteKeyNotThinnable));
    }

    #[test]
    fn argument_errors() {
        let f = HarrisField::new(1, 2, 2.0).unwrap();
        assert!(matches!(f.arrivals(&edge0(), 1.0), Err(Error::DimensionMismatch { .. })));
        let k = ClockKey::site(Site::origin(2));
        assert!(matches!(f.arrivals(&k, -1.0), Err(Error::NegativeTime(_))));
        assert!(f.shift_time(-0.5).is_err());
        assert!(f.shift_space(&Site::origin(1)).is_err());
        let seq = f.arrivals(&ClockKey::edge(Site::origin(2), 0), 5.0).unwrap();
        assert!(matches!(seq.thin(2.5, 2.0), Err(Error::RateOutOfRange { .. })));
    }

    #[test]
    fn thinning_extremes() {
        let f = HarrisField::new(3, 1, 3.0).unwrap();
        let seq = f.arrivals(&edge0(), 40.0).unwrap();
        assert_eq!(seq.thin(3.0, 3.0).unwrap(), seq);
        assert!(seq.thin(0.0, 3.0).unwrap().is_empty());
    }

    #[test]
    fn time_shift_replays_base() {
        let f = HarrisField::new(11, 1, 3.0).unwrap();
        let key = ClockKey::edge(Site::new([4]), 0);
        let base = f.arrivals(&key, 20.0).unwrap();
        let t = 6.3;
        let view = f.shift_time(t).unwrap().arrivals(&key, 8.0).unwrap();
        let skipped = base.times.iter().filter(|&&s| s <= t).count();
        let expected: Vec<f64> =
            base.times.iter().filter(|&&s| s > t && s <= t + 8.0).map(|s| s - t).collect();
        assert_eq!(view.times.len(), expected.len());
        for (a, b) in view.times.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        for (i, m) in view.marks.iter().enumerate() {
            assert_eq!(*m, base.marks[i + skipped]);
        }
        assert_eq!(f.shift_time(0.0).unwrap().arrivals(&key, 20.0).unwrap(), base);
    }

    #[test]
    fn time_shift_semigroup() {
        let f = HarrisField::new(5, 2, 2.0).unwrap();
        let two = f.shift_time(1.25).unwrap().shift_time(3.5).unwrap();
        let one = f.shift_time(1.25 + 3.5).unwrap();
        for key in [ClockKey::site(Site::new([1, 1])), ClockKey::edge(Site::new([0, -2]), 0)] {
            assert_eq!(two.arrivals(&key, 12.0).unwrap(), one.arrivals(&key, 12.0).unwrap());
        }
    }

    #[test]
    fn space_shift_relabels_and_inverts() {
        let f = HarrisField::new(9, 2, 2.0).unwrap();
        let x = Site::new([3, -2]);
        let view = f.shift_space(&x).unwrap();
        let key = ClockKey::edge(Site::new([1, 1]), 1);
        assert_eq!(
            view.arrivals(&key, 10.0).unwrap().times,
            f.arrivals(&key.translate(&x), 10.0).unwrap().times
        );
        assert_eq!(view.shift_space(&x.neg()).unwrap(), f);
        assert_eq!(f.shift_space(&Site::origin(2)).unwrap(), f);
    }

    #[test]
    fn idem_single_edge_matches_exact_rate() {
        // Disagreement arrivals form a Poisson process of rate |lambda - lambda'|.
        let n = 10_000;
        let failures = (0..n)
            .filter(|&i| {
                let f = HarrisField::new(replica_seed(42, i), 1, 3.0).unwrap();
                !idem_holds(&f, &[edge0()], 1.0, 2.0, 2.3).unwrap()
            })
            .count();
        let p = 1.0 - (-0.3f64).exp();
        let p_hat = failures as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((p_hat - p).abs() <= 3.0 * sigma, "p_hat={p_hat} p={p}");
    }

    #[test]
    fn idem_trivial_cases() {
        let f = HarrisField::new(1, 1, 3.0).unwrap();
        assert!(idem_holds(&f, &[edge0()], 5.0, 2.0, 2.0).unwrap());
        assert!(idem_holds(&f, &[], 5.0, 1.0, 3.0).unwrap());
        assert!(idem_holds(&f, &[edge0()], 5.0, 0.0, 1.0).is_err());
        assert!(idem_holds(&f, &[edge0()], 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn edge_counts_have_poisson_mean() {
        let f = HarrisField::new(2024, 1, 3.0).unwrap();
        let n = 10_000;
        let counts: Vec<f64> = (0..n)
            .map(|i| f.arrivals(&ClockKey::edge(Site::new([i]), 0), 10.0).unwrap().len() as f64)
            .collect();
        let mean = stats::mean(&counts);
        assert!((mean - 30.0).abs() <= 3.0 * (30.0f64 / n as f64).sqrt(), "mean={mean}");
    }
}
