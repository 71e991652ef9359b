//! Random recall matrices: fixed-margin shuffles of observed data and
//! parametric synthetic classrooms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::recall::{ChildId, RecallMatrix};

/// Largest report a generated classroom may contain.
pub const MAX_REPORT_SIZE: usize = 20;

/// Trades per child used when the caller does not choose.
pub const DEFAULT_TRADES_PER_CHILD: usize = 5;

/// Bounds on the Beta skew parameter searched during calibration.
const SKEW_SEARCH: f64 = 8.0;
const CALIBRATION_STEPS: usize = 40;

/// Fixed randomness behind the salience weights and member selection, so that
/// membership is a deterministic function of the salience shape.
struct SalienceDraws {
    /// Quantile levels of each child's weight.
    levels: Vec<f64>,
    /// `ln(U)` per report and child; a report keeps the children with the
    /// largest `ln(U) / w`, which samples without replacement in proportion to `w`.
    log_uniforms: Vec<f64>,
    m: usize,
}

impl SalienceDraws {
    fn new<R: Rng>(rng: &mut R, n: usize, m: usize) -> Self {
        let open = |rng: &mut R| loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                return u;
            }
        };
        let levels = (0..n).map(|_| open(rng)).collect();
        let log_uniforms = (0..n * m).map(|_| open(rng).ln()).collect();
        SalienceDraws {
            levels,
            log_uniforms,
            m,
        }
    }

    fn weights(&self, skew: f64) -> Result<Vec<f64>> {
        let mean = mean_for_skew(skew, SALIENCE_CONCENTRATION);
        let dist = Beta::new(mean * SALIENCE_CONCENTRATION, (1.0 - mean) * SALIENCE_CONCENTRATION)
            .map_err(|e| Error::InfeasibleProfile(format!("salience distribution: {e}")))?;
        Ok(self
            .levels
            .iter()
            .map(|&u| dist.inverse_cdf(u).max(MIN_WEIGHT))
            .collect())
    }

    fn members(&self, weights: &[f64], sizes: &[usize]) -> Vec<Vec<usize>> {
        let n = weights.len();
        let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(n);
        sizes
            .iter()
            .enumerate()
            .map(|(j, &size)| {
                keyed.clear();
                keyed.extend((0..n).map(|i| (self.log_uniforms[i * self.m + j] / weights[i], i)));
                if size < n {
                    keyed.select_nth_unstable_by(size, |a, b| b.0.total_cmp(&a.0));
                }
                let mut picked: Vec<usize> = keyed[..size].iter().map(|&(_, i)| i).collect();
                picked.sort_unstable();
                picked
            })
            .collect()
    }
}

fn row_sum_skew(n: usize, members: &[Vec<usize>]) -> Option<f64> {
    let mut rows = vec![0.0; n];
    for report in members {
        for &i in report {
            rows[i] += 1.0;
        }
    }
    skewness(&rows).ok()
}

/// Finds the salience skew whose realized row-sum skew lands closest to
/// `target`, bisecting on the shared draws, and returns that membership.
fn calibrate_salience(draws: &SalienceDraws, sizes: &[usize], target: f64) -> Result<Vec<Vec<usize>>> {
    let n = draws.levels.len();
    let eval = |skew: f64| -> Result<(Vec<Vec<usize>>, Option<f64>)> {
        let members = draws.members(&draws.weights(skew)?, sizes);
        let realized = row_sum_skew(n, &members);
        Ok((members, realized))
    };
    let gap = |r: Option<f64>| r.map_or(f64::INFINITY, |v| (v - target).abs());
    let mut best = eval(target)?;
    let consider = |cand: (Vec<Vec<usize>>, Option<f64>), best: &mut (Vec<Vec<usize>>, Option<f64>)| {
        if gap(cand.1) < gap(best.1) {
            *best = cand;
        }
    };
    let (mut lo, mut hi) = (-SKEW_SEARCH, SKEW_SEARCH);
    for _ in 0..CALIBRATION_STEPS {
        if gap(best.1) < 1e-3 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let cand = eval(mid)?;
        match cand.1 {
            Some(v) if v < target => lo = mid,
            Some(_) => hi = mid,
            None => break,
        }
        consider(cand, &mut best);
    }
    Ok(best.0)
}

/// Deterministic generator for a single seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of trial `index` under a master seed.
#[inline]
pub fn trial_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(index)
}

pub fn default_trades(r: &RecallMatrix) -> usize {
    DEFAULT_TRADES_PER_CHILD * r.n_children()
}

/// Curveball shuffle. Each trade picks two children and redistributes the
/// reports that name exactly one of them, keeping how many each holds, so both
/// margins are preserved exactly.
pub fn curveball_randomize(r: &RecallMatrix, n_trades: usize, seed: u64) -> RecallMatrix {
    let n = r.n_children();
    let m = r.n_reports();
    if n < 2 || n_trades == 0 {
        return r.clone();
    }
    let mut rng = rng_from_seed(seed);
    let mut cells = r.cells().to_vec();
    let mut diff = Vec::with_capacity(m);
    for _ in 0..n_trades {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        diff.clear();
        let mut a_only = 0;
        for j in 0..m {
            let (x, y) = (cells[a * m + j], cells[b * m + j]);
            if x != y {
                diff.push(j);
                a_only += x as usize;
            }
        }
        if diff.is_empty() {
            continue;
        }
        diff.shuffle(&mut rng);
        for (k, &j) in diff.iter().enumerate() {
            let to_a = u8::from(k < a_only);
            cells[a * m + j] = to_a;
            cells[b * m + j] = 1 - to_a;
        }
    }
    RecallMatrix::from_cells(r.children().to_vec(), m, cells).expect("curveball trades keep every column non-empty")
}

/// Adjusted Fisher-Pearson sample skewness (G1).
pub fn skewness(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "skewness needs at least 3 values, got {n}"
        )));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::Degenerate("skewness of a constant vector".into()));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    let g1 = m3 / m2.powf(1.5);
    Ok(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0))
}

/// The five generator settings for one synthetic classroom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassroomProfile {
    pub n_children: usize,
    pub n_reports: usize,
    /// Expected fraction of the classroom named per report.
    pub nomination_probability: f64,
    /// Target skewness of how often children are named.
    pub nomination_skew: f64,
    /// Target skewness of report sizes.
    pub group_size_skew: f64,
}

impl ClassroomProfile {
    pub fn validate(&self) -> Result<()> {
        if self.n_children < 2 {
            return Err(Error::InfeasibleProfile("need at least 2 children".into()));
        }
        if self.n_reports < 3 {
            return Err(Error::InfeasibleProfile(
                "need at least 3 reports to measure size skew".into(),
            ));
        }
        if !(self.nomination_probability > 0.0 && self.nomination_probability < 1.0) {
            return Err(Error::InfeasibleProfile(format!(
                "nomination probability {} is outside (0, 1)",
                self.nomination_probability
            )));
        }
        if !self.nomination_skew.is_finite() || !self.group_size_skew.is_finite() {
            return Err(Error::InfeasibleProfile("skew targets must be finite".into()));
        }
        Ok(())
    }
}

/// Closed interval bounds for each profile setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRanges {
    pub n_children: (usize, usize),
    pub n_reports: (usize, usize),
    pub nomination_probability: (f64, f64),
    pub nomination_skew: (f64, f64),
    pub group_size_skew: (f64, f64),
}

impl Default for ProfileRanges {
    /// Classroom sizes, densities and skews typical of elementary classrooms.
    fn default() -> Self {
        ProfileRanges {
            n_children: (15, 40),
            n_reports: (15, 200),
            nomination_probability: (0.10, 0.45),
            nomination_skew: (-1.77, 1.99),
            group_size_skew: (-0.52, 2.37),
        }
    }
}

impl ProfileRanges {
    pub fn point(p: ClassroomProfile) -> Self {
        ProfileRanges {
            n_children: (p.n_children, p.n_children),
            n_reports: (p.n_reports, p.n_reports),
            nomination_probability: (p.nomination_probability, p.nomination_probability),
            nomination_skew: (p.nomination_skew, p.nomination_skew),
            group_size_skew: (p.group_size_skew, p.group_size_skew),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n_children.0 <= self.n_children.1
            && self.n_reports.0 <= self.n_reports.1
            && self.nomination_probability.0 <= self.nomination_probability.1
            && self.nomination_skew.0 <= self.nomination_skew.1
            && self.group_size_skew.0 <= self.group_size_skew.1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("profile range has min > max".into()))
        }
    }

    /// Uniform draw inside the ranges.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> ClassroomProfile {
        fn real<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        }
        ClassroomProfile {
            n_children: rng.random_range(self.n_children.0..=self.n_children.1),
            n_reports: rng.random_range(self.n_reports.0..=self.n_reports.1),
            nomination_probability: real(rng, self.nomination_probability),
            nomination_skew: real(rng, self.nomination_skew),
            group_size_skew: real(rng, self.group_size_skew),
        }
    }
}

/// Classroom characteristics measured on generated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizedCharacteristics {
    pub n_children: usize,
    pub n_reports: usize,
    /// Mean report size over classroom size.
    pub nomination_probability: f64,
    /// Skewness of row sums.
    pub nomination_skew: f64,
    /// Skewness of column sums.
    pub group_size_skew: f64,
}

impl RealizedCharacteristics {
    pub fn measure(r: &RecallMatrix) -> Result<Self> {
        let mg = r.margins();
        let rows: Vec<f64> = mg.row_sums.iter().map(|&v| v as f64).collect();
        let cols: Vec<f64> = mg.col_sums.iter().map(|&v| v as f64).collect();
        Ok(RealizedCharacteristics {
            n_children: r.n_children(),
            n_reports: r.n_reports(),
            nomination_probability: cols.iter().sum::<f64>() / cols.len() as f64 / r.n_children() as f64,
            nomination_skew: skewness(&rows)?,
            group_size_skew: skewness(&cols)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedClassroom {
    pub matrix: RecallMatrix,
    pub realized: RealizedCharacteristics,
}

fn beta_skew(mean: f64, concentration: f64) -> f64 {
    let (a, b) = (mean * concentration, (1.0 - mean) * concentration);
    2.0 * (b - a) * (a + b + 1.0).sqrt() / ((a + b + 2.0) * (a * b).sqrt())
}

const MIN_CONCENTRATION: f64 = 0.05;
const MAX_CONCENTRATION: f64 = 50.0;

/// Concentration `a + b` of a Beta with the given mean whose skewness is as
/// close to `target` as that mean allows. A Beta's skew has the sign of
/// `1 - 2 * mean`, so a target of the other sign yields the most symmetric
/// shape on offer.
fn concentration_for_skew(mean: f64, target: f64) -> f64 {
    let sign = 1.0 - 2.0 * mean;
    if target == 0.0 || sign == 0.0 || target.signum() != sign.signum() {
        return MAX_CONCENTRATION;
    }
    let goal = target.abs();
    if beta_skew(mean, MIN_CONCENTRATION).abs() <= goal {
        return MIN_CONCENTRATION;
    }
    // |skew| falls as concentration grows; bisect in log space
    let (mut lo, mut hi) = (MIN_CONCENTRATION.ln(), MAX_CONCENTRATION.ln());
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if beta_skew(mean, mid.exp()).abs() > goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Mean of a Beta with `a + b = concentration` whose skewness equals `target`.
fn mean_for_skew(target: f64, concentration: f64) -> f64 {
    // skew = c (1 - 2m) / sqrt(m (1 - m)) with c = 2 sqrt(k + 1) / (k + 2)
    let c = 2.0 * (concentration + 1.0).sqrt() / (concentration + 2.0);
    let t = target / c;
    (0.5 * (1.0 - t / (4.0 + t * t).sqrt())).clamp(1e-6, 1.0 - 1e-6)
}

/// At zero skew the extreme weights of 26 children differ about fivefold.
const SALIENCE_CONCENTRATION: f64 = 6.0;
const MIN_WEIGHT: f64 = 1e-9;

/// Report sizes `1 + round(X (upper - 1))` with `X` the Beta quantile at each
/// level. Only the rounding boundaries need the CDF.
fn sizes_at(levels: &[f64], upper: usize, unit_mean: f64, skew: f64) -> Result<Vec<usize>> {
    let k = concentration_for_skew(unit_mean, skew);
    let dist = Beta::new(unit_mean * k, (1.0 - unit_mean) * k)
        .map_err(|e| Error::InfeasibleProfile(format!("report size distribution: {e}")))?;
    let span = (upper - 1) as f64;
    let edges: Vec<f64> = (1..upper).map(|s| dist.cdf((s as f64 - 0.5) / span)).collect();
    Ok(levels
        .iter()
        .map(|&u| 1 + edges.iter().filter(|&&e| u >= e).count())
        .collect())
}

fn mean_of(v: &[usize]) -> f64 {
    v.iter().sum::<usize>() as f64 / v.len() as f64
}

/// Sizes whose sample mean is as close as possible to `target_mean`, with the
/// Beta's skew parameter fixed.
fn sizes_with_mean(levels: &[f64], upper: usize, target_mean: f64, skew: f64) -> Result<Vec<usize>> {
    let (mut lo, mut hi) = (1e-6, 1.0 - 1e-6);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        let sizes = sizes_at(levels, upper, mid, skew)?;
        let mean = mean_of(&sizes);
        if mean < target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
        let gap = (mean - target_mean).abs();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, sizes));
        }
    }
    Ok(best.expect("at least one calibration step").1)
}

/// Sizes whose sample mean and skewness are as close as the support allows to
/// `target_mean` and `target_skew`.
fn calibrate_sizes(levels: &[f64], upper: usize, target_mean: f64, target_skew: f64) -> Result<Vec<usize>> {
    if upper < 2 || target_mean <= 1.0 || target_mean >= upper as f64 {
        return Ok(vec![target_mean.round() as usize; levels.len()]);
    }
    let score = |sizes: &[usize]| -> (f64, Option<f64>) {
        let xs: Vec<f64> = sizes.iter().map(|&v| v as f64).collect();
        let skew = skewness(&xs).ok();
        let gap = (mean_of(sizes) - target_mean).abs() + skew.map_or(f64::INFINITY, |g| (g - target_skew).abs());
        (gap, skew)
    };
    let (mut lo, mut hi) = (-SKEW_SEARCH, SKEW_SEARCH);
    let mut best = sizes_with_mean(levels, upper, target_mean, target_skew)?;
    let mut best_gap = score(&best).0;
    for _ in 0..CALIBRATION_STEPS {
        if best_gap < 1e-3 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let sizes = sizes_with_mean(levels, upper, target_mean, mid)?;
        let (gap, skew) = score(&sizes);
        if skew.unwrap_or(0.0) < target_skew {
            lo = mid;
        } else {
            hi = mid;
        }
        if gap < best_gap {
            best = sizes;
            best_gap = gap;
        }
    }
    Ok(best)
}

/// Draws a synthetic classroom.
///
/// Report sizes are `1 + round(X (u - 1))` with `u = min(20, n_children)` and
/// `X` a Beta quantile at a uniform level per report. The Beta's mean and
/// skew parameter are calibrated on those levels so that the sample mean of
/// the sizes is `p n` (clamped to the support) and their sample skewness is
/// as close to the size skew target as the support allows. Each child gets a salience
/// weight from a Beta with `a + b = 6`, and each report draws its members
/// without replacement in proportion to those weights. The Beta's skewness is
/// calibrated on the drawn randomness so that the skewness of the realized
/// row sums is as close as possible to the nomination skew target.
///
/// Fails when the profile is invalid or the draw has constant margins, whose
/// skewness is undefined.
pub fn generate_classroom(profile: &ClassroomProfile, seed: u64) -> Result<GeneratedClassroom> {
    profile.validate()?;
    let n = profile.n_children;
    let m = profile.n_reports;
    let mut rng = rng_from_seed(seed);

    let upper = MAX_REPORT_SIZE.min(n);
    let target_mean = (profile.nomination_probability * n as f64).clamp(1.0, upper as f64);
    let size_levels: Vec<f64> = (0..m).map(|_| rng.random()).collect();
    let sizes = calibrate_sizes(&size_levels, upper, target_mean, profile.group_size_skew)?;

    let draws = SalienceDraws::new(&mut rng, n, m);
    let members = calibrate_salience(&draws, &sizes, profile.nomination_skew)?;
    let mut cells = vec![0u8; n * m];
    for (j, report) in members.iter().enumerate() {
        for &i in report {
            cells[i * m + j] = 1;
        }
    }
    let children = (0..n)
        .map(|i| ChildId::new(format!("c{:02}", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let matrix = RecallMatrix::from_cells(children, m, cells)?;
    let realized = RealizedCharacteristics::measure(&matrix)
        .map_err(|e| Error::InfeasibleProfile(format!("generated margins: {e}")))?;
    Ok(GeneratedClassroom { matrix, realized })
}
