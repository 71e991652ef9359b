//! Benchmark runs, Monte Carlo false-positive audits and their summaries.
//!
//! Audit trials run in parallel and are merged in trial order, so results
//! never depend on the thread count.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::{run_becd, BecdConfig};
use crate::error::{Error, Result};
use crate::network::GroupAssignment;
use crate::null_models::{
    curveball_randomize, default_trades, generate_classroom, rng_from_seed, trial_seed, ClassroomProfile,
    GeneratedClassroom, ProfileRanges, RealizedCharacteristics,
};
use crate::recall::RecallMatrix;
use crate::scm::{run_scm, GroupRule, ScmConfig};
use crate::SCHEMA_VERSION;

/// Consecutive infeasible draws tolerated before a profile audit gives up.
pub const MAX_RESAMPLES: usize = 1000;
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ScmFifty,
    ScmProfile,
    ScmComponents,
    Becd,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::ScmFifty,
        Method::ScmProfile,
        Method::ScmComponents,
        Method::Becd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ScmFifty => "scm-fifty",
            Method::ScmProfile => "scm-profile",
            Method::ScmComponents => "scm-components",
            Method::Becd => "becd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// Settings for both pipelines; the method picks which one runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scm: ScmConfig,
    pub becd: BecdConfig,
}

/// Runs one pipeline end to end, returning its groups and P.
pub fn run_method(r: &RecallMatrix, method: Method, cfg: &PipelineConfig) -> Result<(GroupAssignment, f64)> {
    let rule = match method {
        Method::ScmFifty => GroupRule::Fifty,
        Method::ScmProfile => GroupRule::Profile,
        Method::ScmComponents => GroupRule::Components,
        Method::Becd => {
            let out = run_becd(r, &cfg.becd)?;
            return Ok((out.groups, out.p));
        }
    };
    let out = run_scm(r, &ScmConfig { rule, ..cfg.scm })?;
    Ok((out.groups, out.p))
}

pub fn run_benchmark_study(r: &RecallMatrix, method: Method, cfg: &PipelineConfig) -> Result<(GroupAssignment, f64)> {
    run_method(r, method, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrialSource {
    Benchmark,
    Shuffle,
    Generated(ClassroomProfile),
}

impl TrialSource {
    fn label(&self) -> &'static str {
        match self {
            TrialSource::Benchmark => "benchmark",
            TrialSource::Shuffle => "shuffle",
            TrialSource::Generated(_) => "generated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trial: usize,
    pub method: Method,
    pub source: TrialSource,
    /// Measured on the matrix the pipeline saw; absent when a margin is constant.
    pub realized: Option<RealizedCharacteristics>,
    /// Infeasible draws discarded before this trial's classroom.
    pub resamples: usize,
    pub p: f64,
}

/// Flat CSV row for a [`RunRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub schema_version: u32,
    pub trial: usize,
    pub method: String,
    pub source: String,
    pub target_n_children: Option<usize>,
    pub target_n_reports: Option<usize>,
    pub target_nomination_probability: Option<f64>,
    pub target_nomination_skew: Option<f64>,
    pub target_group_size_skew: Option<f64>,
    pub n_children: Option<usize>,
    pub n_reports: Option<usize>,
    pub nomination_probability: Option<f64>,
    pub nomination_skew: Option<f64>,
    pub group_size_skew: Option<f64>,
    pub resamples: usize,
    #[serde(rename = "P")]
    pub p: f64,
}

impl From<&RunRecord> for RecordRow {
    fn from(r: &RunRecord) -> Self {
        let target = match r.source {
            TrialSource::Generated(p) => Some(p),
            _ => None,
        };
        RecordRow {
            schema_version: SCHEMA_VERSION,
            trial: r.trial,
            method: r.method.to_string(),
            source: r.source.label().to_string(),
            target_n_children: target.map(|t| t.n_children),
            target_n_reports: target.map(|t| t.n_reports),
            target_nomination_probability: target.map(|t| t.nomination_probability),
            target_nomination_skew: target.map(|t| t.nomination_skew),
            target_group_size_skew: target.map(|t| t.group_size_skew),
            n_children: r.realized.map(|c| c.n_children),
            n_reports: r.realized.map(|c| c.n_reports),
            nomination_probability: r.realized.map(|c| c.nomination_probability),
            nomination_skew: r.realized.map(|c| c.nomination_skew),
            group_size_skew: r.realized.map(|c| c.group_size_skew),
            resamples: r.resamples,
            p: r.p,
        }
    }
}

pub fn records_to_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(RecordRow::from(r))
            .map_err(|e| Error::InvalidParameter(format!("record serialization: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidParameter(format!("record serialization: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn records_from_csv(text: &str) -> Result<Vec<RecordRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<RecordRow>, _>>()
        .map_err(|e| Error::MalformedMatrix(format!("records: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub n_trials: usize,
    #[serde(rename = "frac_P_positive")]
    pub frac_p_positive: f64,
    #[serde(rename = "mean_P")]
    pub mean_p: f64,
    #[serde(rename = "sd_P")]
    pub sd_p: f64,
    #[serde(rename = "min_P")]
    pub min_p: f64,
    #[serde(rename = "max_P")]
    pub max_p: f64,
}

/// Summary statistics of P with the sample standard deviation.
pub fn summarize(records: &[RunRecord]) -> Result<AuditSummary> {
    summarize_values(&records.iter().map(|r| r.p).collect::<Vec<_>>())
}

pub fn summarize_values(values: &[f64]) -> Result<AuditSummary> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("cannot summarize zero records".into()));
    }
    // sorted so that sums do not depend on record order
    let mut ps = values.to_vec();
    ps.sort_by(f64::total_cmp);
    let n = ps.len() as f64;
    let mean = (ps.iter().sum::<f64>() / n).clamp(ps[0], ps[ps.len() - 1]);
    let sd = if ps.len() > 1 {
        (ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(AuditSummary {
        n_trials: ps.len(),
        frac_p_positive: ps.iter().filter(|&&p| p > 0.0).count() as f64 / n,
        mean_p: mean,
        sd_p: sd,
        min_p: ps[0],
        max_p: ps[ps.len() - 1],
    })
}

/// Counts of P per bin of width 0.05 over [0, 1]; the last bin includes 1.
pub fn histogram(records: &[RunRecord]) -> Vec<usize> {
    let bins = (1.0 / HISTOGRAM_BIN_WIDTH).round() as usize;
    let mut counts = vec![0; bins];
    for r in records {
        // P is a ratio of small integers, so nudge values sitting on an edge
        let k = ((r.p / HISTOGRAM_BIN_WIDTH) + 1e-9).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    counts
}

pub fn histogram_csv(counts: &[usize]) -> String {
    let mut out = String::from("bin_lower,bin_upper,count\n");
    for (k, c) in counts.iter().enumerate() {
        let lo = k as f64 * HISTOGRAM_BIN_WIDTH;
        out.push_str(&format!("{:.2},{:.2},{}\n", lo, lo + HISTOGRAM_BIN_WIDTH, c));
    }
    out
}

/// Curveball-shuffles `r` once per trial and runs the pipeline on each copy.
pub fn run_shuffle_audit(
    r: &RecallMatrix,
    method: Method,
    n_trials: usize,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<(Vec<RunRecord>, AuditSummary)> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("n_trials must be at least 1".into()));
    }
    let trades = default_trades(r);
    let records = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t as u64);
            let shuffled = curveball_randomize(r, trades, s);
            let (_, p) = run_method(&shuffled, method, &trial_config(cfg, s))?;
            Ok(RunRecord {
                trial: t,
                method,
                source: TrialSource::Shuffle,
                realized: RealizedCharacteristics::measure(&shuffled).ok(),
                resamples: 0,
                p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records)?;
    Ok((records, summary))
}

/// One generated classroom from a trial seed: the profile is drawn uniformly
/// within `ranges` and redrawn while infeasible. Also returns the number of
/// discarded draws.
pub fn draw_classroom(ranges: &ProfileRanges, seed: u64) -> Result<(ClassroomProfile, GeneratedClassroom, usize)> {
    let mut rng = rng_from_seed(seed);
    let mut resamples = 0;
    loop {
        let profile = ranges.sample(&mut rng);
        match generate_classroom(&profile, rng.random()) {
            Ok(c) => return Ok((profile, c, resamples)),
            Err(Error::InfeasibleProfile(msg)) => {
                resamples += 1;
                if resamples >= MAX_RESAMPLES {
                    return Err(Error::InfeasibleProfile(format!(
                        "{resamples} infeasible draws in a row, last: {msg}"
                    )));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Draws a profile uniformly within `ranges` per trial, generates a classroom and runs the pipeline.
pub fn run_profile_audit(
    ranges: &ProfileRanges,
    method: Method,
    n_trials: usize,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<(Vec<RunRecord>, AuditSummary)> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("n_trials must be at least 1".into()));
    }
    ranges.validate()?;
    let records = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t as u64);
            let (profile, classroom, resamples) = draw_classroom(ranges, s).map_err(|e| match e {
                Error::InfeasibleProfile(msg) => Error::InfeasibleProfile(format!("trial {t}: {msg}")),
                e => e,
            })?;
            let (_, p) = run_method(&classroom.matrix, method, &trial_config(cfg, s))?;
            Ok(RunRecord {
                trial: t,
                method,
                source: TrialSource::Generated(profile),
                realized: Some(classroom.realized),
                resamples,
                p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records)?;
    Ok((records, summary))
}

fn trial_config(cfg: &PipelineConfig, seed: u64) -> PipelineConfig {
    let mut c = *cfg;
    c.becd.optimizer.seed = seed;
    c
}

pub const PREDICTORS: [&str; 5] = [
    "n_children",
    "n_reports",
    "nomination_probability_pct",
    "nomination_skew",
    "group_size_skew",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub b: f64,
    pub se: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub schema_version: u32,
    pub n: usize,
    pub intercept: f64,
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    /// Where the predictor values come from.
    pub predictors_source: String,
}

/// Regresses P on the realized classroom characteristics, with the nomination
/// probability expressed in percent.
pub fn ols_regression(records: &[RunRecord]) -> Result<RegressionResult> {
    let mut x = Vec::with_capacity(records.len());
    let mut y = Vec::with_capacity(records.len());
    for r in records {
        let c = r
            .realized
            .ok_or_else(|| Error::InvalidParameter(format!("trial {} has no measured characteristics", r.trial)))?;
        x.push(vec![
            c.n_children as f64,
            c.n_reports as f64,
            100.0 * c.nomination_probability,
            c.nomination_skew,
            c.group_size_skew,
        ]);
        y.push(r.p);
    }
    let names: Vec<String> = PREDICTORS.iter().map(|s| s.to_string()).collect();
    let mut res = ols(&x, &y, &names)?;
    res.predictors_source = "realized".into();
    Ok(res)
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Least squares with an intercept, solved through the normal equations.
pub fn ols(x: &[Vec<f64>], y: &[f64], names: &[String]) -> Result<RegressionResult> {
    let n = y.len();
    let k = names.len();
    if n < 10 {
        return Err(Error::InvalidParameter(format!(
            "regression needs at least 10 records, got {n}"
        )));
    }
    if x.len() != n || x.iter().any(|row| row.len() != k) {
        return Err(Error::InvalidParameter("design matrix shape mismatch".into()));
    }
    if n <= k + 1 {
        return Err(Error::RankDeficient(format!(
            "{n} observations for {} parameters",
            k + 1
        )));
    }
    let design = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let sv = design.singular_values();
    let smax = sv.max();
    if sv.iter().any(|&s| s <= smax * 1e-10) {
        return Err(Error::RankDeficient("predictors are collinear or constant".into()));
    }
    let yv = DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let inv = xtx
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("normal equations are singular".into()))?;
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let constant_y = y.iter().all(|&v| v == y[0]);
    let coef = if constant_y {
        let mut c = DVector::zeros(k + 1);
        c[0] = y[0];
        c
    } else {
        xtx.cholesky()
            .ok_or_else(|| Error::RankDeficient("normal equations are not positive definite".into()))?
            .solve(&(design.transpose() * &yv))
    };
    let resid = &yv - &design * &coef;
    let rss = resid.norm_squared();
    let tss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let sigma2 = rss / (n - k - 1) as f64;
    let sd_y = sample_sd(y);
    let coefficients = (0..k)
        .map(|j| {
            let col: Vec<f64> = x.iter().map(|row| row[j]).collect();
            let b = coef[j + 1];
            Coefficient {
                name: names[j].clone(),
                b,
                se: (sigma2 * inv[(j + 1, j + 1)]).sqrt(),
                beta: if sd_y > 0.0 { b * sample_sd(&col) / sd_y } else { 0.0 },
            }
        })
        .collect();
    let r_squared = if tss > 0.0 {
        (1.0 - rss / tss).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(RegressionResult {
        schema_version: SCHEMA_VERSION,
        n,
        intercept: coef[0],
        coefficients,
        r_squared,
        predictors_source: "supplied".into(),
    })
}

/// Fraction of child pairs on which two groupings agree about sharing a group.
/// `found` counts a pair as together when they share any group.
pub fn pair_agreement(n_children: usize, found: &GroupAssignment, planted: &[Vec<usize>]) -> f64 {
    if n_children < 2 {
        return 1.0;
    }
    let mut planted_of = vec![usize::MAX; n_children];
    for (b, block) in planted.iter().enumerate() {
        for &c in block {
            planted_of[c] = b;
        }
    }
    let memberships: Vec<Vec<usize>> = (0..n_children).map(|c| found.membership(c)).collect();
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..n_children {
        for j in i + 1..n_children {
            let same_planted = planted_of[i] != usize::MAX && planted_of[i] == planted_of[j];
            let same_found = memberships[i].iter().any(|g| memberships[j].contains(g));
            agree += usize::from(same_planted == same_found);
            total += 1;
        }
    }
    agree as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Study {
    #[serde(rename = "1")]
    Benchmark,
    #[serde(rename = "2")]
    Shuffle,
    #[serde(rename = "3")]
    Profiles,
    #[serde(rename = "4a")]
    BecdBenchmark,
    #[serde(rename = "4b")]
    BecdShuffle,
    #[serde(rename = "4c")]
    BecdProfiles,
}

impl Study {
    pub fn as_str(self) -> &'static str {
        match self {
            Study::Benchmark => "1",
            Study::Shuffle => "2",
            Study::Profiles => "3",
            Study::BecdBenchmark => "4a",
            Study::BecdShuffle => "4b",
            Study::BecdProfiles => "4c",
        }
    }

    pub fn default_method(self) -> Method {
        match self {
            Study::Benchmark | Study::Shuffle | Study::Profiles => Method::ScmFifty,
            _ => Method::Becd,
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Study {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Study::Benchmark,
            Study::Shuffle,
            Study::Profiles,
            Study::BecdBenchmark,
            Study::BecdShuffle,
            Study::BecdProfiles,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown study {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub records: Vec<RunRecord>,
    pub summary: AuditSummary,
    pub histogram: Vec<usize>,
    pub regression: Option<RegressionResult>,
}

/// Runs one study. Benchmark studies ignore `n_trials` and produce a single record.
pub fn run_study(
    study: Study,
    method: Method,
    benchmark: &RecallMatrix,
    ranges: &ProfileRanges,
    n_trials: usize,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<StudyOutput> {
    let (records, summary) = match study {
        Study::Benchmark | Study::BecdBenchmark => {
            let (_, p) = run_benchmark_study(benchmark, method, &trial_config(cfg, seed))?;
            let records = vec![RunRecord {
                trial: 0,
                method,
                source: TrialSource::Benchmark,
                realized: RealizedCharacteristics::measure(benchmark).ok(),
                resamples: 0,
                p,
            }];
            let summary = summarize(&records)?;
            (records, summary)
        }
        Study::Shuffle | Study::BecdShuffle => run_shuffle_audit(benchmark, method, n_trials, seed, cfg)?,
        Study::Profiles | Study::BecdProfiles => run_profile_audit(ranges, method, n_trials, seed, cfg)?,
    };
    let regression = if study == Study::Profiles {
        Some(ols_regression(&records)?)
    } else {
        None
    };
    let histogram = histogram(&records);
    Ok(StudyOutput {
        records,
        summary,
        histogram,
        regression,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{planted_classroom, surrogate_blocks, surrogate_classroom};
    use crate::recall::ChildId;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(trial: usize, p: f64) -> RunRecord {
        RunRecord {
            trial,
            method: Method::ScmFifty,
            source: TrialSource::Shuffle,
            realized: None,
            resamples: 0,
            p,
        }
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[rec(0, 0.0), rec(1, 0.5), rec(2, 1.0)]).unwrap();
        assert_eq!(s.mean_p, 0.5);
        assert!((s.frac_p_positive - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.sd_p, 0.5);
        assert_eq!((s.min_p, s.max_p), (0.0, 1.0));
        let s = summarize(&[rec(0, 0.0)]).unwrap();
        assert_eq!(s.frac_p_positive, 0.0);
        assert_eq!(s.sd_p, 0.0);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn histogram_edges() {
        let recs: Vec<RunRecord> = [0.0, 0.04999, 0.05, 0.15, 3.0 / 20.0, 0.999, 1.0]
            .iter()
            .enumerate()
            .map(|(t, &p)| rec(t, p))
            .collect();
        let h = histogram(&recs);
        assert_eq!(h.len(), 20);
        assert_eq!(h[0], 2);
        assert_eq!(h[1], 1);
        assert_eq!(h[3], 2);
        assert_eq!(h[19], 2);
        let csv = histogram_csv(&h);
        assert!(csv.starts_with("bin_lower,bin_upper,count\n0.00,0.05,2\n"));
        assert!(csv.ends_with("0.95,1.00,2\n"));
    }

    #[test]
    fn method_and_study_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        for s in ["1", "2", "3", "4a", "4b", "4c"] {
            assert_eq!(s.parse::<Study>().unwrap().as_str(), s);
        }
        assert!("5".parse::<Study>().is_err());
        assert!("scm".parse::<Method>().is_err());
    }

    fn design(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect()
    }

    fn names() -> Vec<String> {
        (0..5).map(|k| format!("x{k}")).collect()
    }

    #[test]
    fn ols_recovers_exact_linear_rule() {
        let x = design(40, 1);
        let y: Vec<f64> = x.iter().map(|r| 0.2 + 0.01 * r[0]).collect();
        let res = ols(&x, &y, &names()).unwrap();
        assert!((res.coefficients[0].b - 0.01).abs() < 1e-9);
        assert!((res.intercept - 0.2).abs() < 1e-9);
        for c in &res.coefficients[1..] {
            assert!(c.b.abs() < 1e-9);
        }
        assert!((res.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_constant_outcome() {
        let x = design(30, 2);
        let res = ols(&x, &[0.3; 30], &names()).unwrap();
        assert!(res.coefficients.iter().all(|c| c.b == 0.0 && c.beta == 0.0));
        assert_eq!(res.r_squared, 0.0);
        assert_eq!(res.intercept, 0.3);
    }

    #[test]
    fn ols_rejects_collinear_design() {
        let mut x = design(30, 3);
        for r in x.iter_mut() {
            r[4] = 2.0 * r[1] - r[0];
        }
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        assert!(matches!(ols(&x, &y, &names()), Err(Error::RankDeficient(_))));
        assert!(ols(&x[..5], &y[..5], &names()).is_err());
    }

    // textbook two-predictor fit solved by Cramer's rule on centered data
    #[test]
    fn ols_matches_closed_form() {
        let mut rng = rng_from_seed(8);
        let n = 50;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(0.0..10.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 1.0 + 0.5 * r[0] - 2.0 * r[1] + rng.random_range(-0.5..0.5))
            .collect();
        let mean = |v: &dyn Fn(usize) -> f64| (0..n).map(v).sum::<f64>() / n as f64;
        let (m1, m2, my) = (mean(&|i| x[i][0]), mean(&|i| x[i][1]), mean(&|i| y[i]));
        let s = |a: &dyn Fn(usize) -> f64, b: &dyn Fn(usize) -> f64| (0..n).map(|i| a(i) * b(i)).sum::<f64>();
        let d1 = |i: usize| x[i][0] - m1;
        let d2 = |i: usize| x[i][1] - m2;
        let dy = |i: usize| y[i] - my;
        let (s11, s22, s12, s1y, s2y) = (s(&d1, &d1), s(&d2, &d2), s(&d1, &d2), s(&d1, &dy), s(&d2, &dy));
        let det = s11 * s22 - s12 * s12;
        let b1 = (s1y * s22 - s2y * s12) / det;
        let b2 = (s2y * s11 - s1y * s12) / det;
        let res = ols(&x, &y, &["a".into(), "b".into()]).unwrap();
        assert!((res.coefficients[0].b - b1).abs() < 1e-10);
        assert!((res.coefficients[1].b - b2).abs() < 1e-10);
        assert_eq!(res.coefficients[0].beta.signum(), res.coefficients[0].b.signum());
    }

    #[test]
    fn z_scored_inputs_give_equal_b_and_beta() {
        let zscore = |v: Vec<f64>| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = sample_sd(&v);
            v.into_iter().map(|a| (a - m) / sd).collect::<Vec<_>>()
        };
        let raw = design(60, 4);
        let cols: Vec<Vec<f64>> = (0..5).map(|j| zscore(raw.iter().map(|r| r[j]).collect())).collect();
        let x: Vec<Vec<f64>> = (0..60).map(|i| (0..5).map(|j| cols[j][i]).collect()).collect();
        let mut rng = rng_from_seed(5);
        let y = zscore(
            x.iter()
                .map(|r| r[0] - 0.5 * r[3] + rng.random_range(-1.0..1.0))
                .collect(),
        );
        let res = ols(&x, &y, &names()).unwrap();
        for c in &res.coefficients {
            assert!((c.b - c.beta).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_agreement_examples() {
        let planted = vec![vec![0, 1, 2], vec![3, 4]];
        let exact = GroupAssignment::new(5, planted.clone());
        assert_eq!(pair_agreement(5, &exact, &planted), 1.0);
        let merged = GroupAssignment::new(5, vec![vec![0, 1, 2, 3, 4]]);
        assert_eq!(pair_agreement(5, &merged, &planted), 4.0 / 10.0);
        let none = GroupAssignment::new(5, vec![]);
        assert_eq!(pair_agreement(5, &none, &planted), 6.0 / 10.0);
    }

    #[test]
    fn surrogate_benchmark_runs() {
        let r = surrogate_classroom().unwrap();
        let cfg = PipelineConfig::default();
        let (groups, p) = run_benchmark_study(&r, Method::ScmFifty, &cfg).unwrap();
        assert_eq!(p, 1.0);
        assert!(pair_agreement(26, &groups, &surrogate_blocks(&r)) >= 0.95);
        let (_, p) = run_benchmark_study(&r, Method::Becd, &cfg).unwrap();
        assert!(p >= 24.0 / 26.0);
    }

    #[test]
    fn single_report_classroom() {
        // a fifth, never-named child keeps the co-occurrence columns from being constant
        let children: Vec<ChildId> = ["a", "b", "c", "d", "e"]
            .iter()
            .map(|c| ChildId::new(*c).unwrap())
            .collect();
        let r = RecallMatrix::from_rows(children, vec![vec![1], vec![1], vec![1], vec![1], vec![0]]).unwrap();
        let (groups, p) = run_benchmark_study(&r, Method::ScmFifty, &PipelineConfig::default()).unwrap();
        assert_eq!(groups.groups(), &[vec![0, 1, 2, 3]]);
        assert_eq!(p, 4.0 / 5.0);
        let (_, p) = run_benchmark_study(&r, Method::Becd, &PipelineConfig::default()).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn planted_three_blocks_recovered_by_becd() {
        let (r, blocks) = planted_classroom(&[6, 7, 5], 12, 3, 21).unwrap();
        let (groups, p) = run_benchmark_study(&r, Method::Becd, &PipelineConfig::default()).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(groups.groups(), blocks.as_slice());
    }

    #[test]
    fn one_trial_summary_is_the_record() {
        let r = surrogate_classroom().unwrap();
        let (recs, s) = run_shuffle_audit(&r, Method::ScmFifty, 1, 9, &PipelineConfig::default()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(
            (s.mean_p, s.min_p, s.max_p, s.sd_p),
            (recs[0].p, recs[0].p, recs[0].p, 0.0)
        );
        assert!(run_shuffle_audit(&r, Method::ScmFifty, 0, 9, &PipelineConfig::default()).is_err());
    }

    #[test]
    fn point_ranges_repeat_one_profile() {
        let profile = ClassroomProfile {
            n_children: 20,
            n_reports: 40,
            nomination_probability: 0.2,
            nomination_skew: 0.5,
            group_size_skew: 0.5,
        };
        let (recs, _) = run_profile_audit(
            &ProfileRanges::point(profile),
            Method::ScmFifty,
            5,
            3,
            &PipelineConfig::default(),
        )
        .unwrap();
        assert!(recs.iter().all(|r| r.source == TrialSource::Generated(profile)));
    }

    #[test]
    fn records_csv_recomputes_summary() {
        let (recs, summary) = run_profile_audit(
            &ProfileRanges::default(),
            Method::ScmFifty,
            12,
            4,
            &PipelineConfig::default(),
        )
        .unwrap();
        let text = records_to_csv(&recs).unwrap();
        let rows = records_from_csv(&text).unwrap();
        assert_eq!(rows.len(), 12);
        let ps: Vec<f64> = rows.iter().map(|r| r.p).collect();
        assert_eq!(summarize_values(&ps).unwrap(), summary);
        assert_eq!(rows[3], RecordRow::from(&recs[3]));
    }

    proptest! {
        #[test]
        fn summary_is_order_invariant(ps in prop::collection::vec(0.0f64..=1.0, 1..50), seed in any::<u64>()) {
            let recs: Vec<RunRecord> = ps.iter().enumerate().map(|(t, &p)| rec(t, p)).collect();
            let mut shuffled = recs.clone();
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng_from_seed(seed));
            let a = summarize(&recs).unwrap();
            prop_assert_eq!(a, summarize(&shuffled).unwrap());
            prop_assert!(a.min_p <= a.mean_p && a.mean_p <= a.max_p);
            prop_assert!((0.0..=1.0).contains(&a.frac_p_positive));
        }
    }
}
